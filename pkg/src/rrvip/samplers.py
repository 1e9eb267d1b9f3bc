"""Index streams for epoch-based stochastic solvers.

Two chains running at step sizes gamma and 2*gamma must consume the *same*
per-epoch permutation, so every stream here is a pure function of
(seed, stream id, epoch counter): replaying a plan, or building a second plan
with the same key, reproduces the identical index sequence.  The generator is
counter-based (Philox keyed through SeedSequence), so independent streams and
epochs never overlap and runs parallelize safely.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError

RESHUFFLE = "reshuffle"
WITH_REPLACEMENT = "withrep"
FIXED_ORDER = "fixed"  # debug: identity order every epoch

# Stream ids keep logically distinct random consumers apart.
PERM_STREAM = 1
DECOUPLED_PERM_STREAM = 2
NOISE_STREAM_A = 3
NOISE_STREAM_B = 4
BATCH_STREAM = 5
INIT_STREAM = 6

_U64 = (1 << 64) - 1


def rng_for(seed: int, stream: int, counter: int) -> np.random.Generator:
    """Deterministic generator keyed by (seed, stream, counter)."""
    entropy = [int(seed) & _U64, int(stream) & _U64, int(counter) & _U64]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def permutation_at(seed: int, stream: int, epoch: int, n: int) -> np.ndarray:
    """Uniform permutation of {0..n-1}; pure in all arguments."""
    if n <= 0:
        raise ParameterError("permutation needs n >= 1")
    return rng_for(seed, stream, epoch).permutation(n)


@dataclass
class SamplingPlan:
    """A seeded per-epoch index stream.

    mode "reshuffle" emits one uniform permutation per epoch; "withrep" emits
    uniform indices one at a time (n per epoch); "fixed" is the identity-order
    debug stream.
    """

    mode: str = RESHUFFLE
    seed: int = 0
    epoch_counter: int = 0
    stream: int = PERM_STREAM
    _buffer: list = field(default_factory=list, repr=False)

    def clone(self) -> "SamplingPlan":
        return SamplingPlan(self.mode, self.seed, self.epoch_counter, self.stream)


@dataclass
class CoupledPlans:
    """Plans for the gamma and 2*gamma chains of one extrapolated run."""

    plan_gamma: SamplingPlan
    plan_two_gamma: SamplingPlan


def next_permutation(plan: SamplingPlan, n: int) -> np.ndarray:
    """Emit the epoch's permutation and advance the epoch counter."""
    if n <= 0:
        raise ParameterError("permutation needs n >= 1")
    if plan.mode == FIXED_ORDER:
        plan.epoch_counter += 1
        return np.arange(n)
    if plan.mode != RESHUFFLE:
        raise ParameterError(f"plan mode {plan.mode!r} does not emit permutations")
    perm = permutation_at(plan.seed, plan.stream, plan.epoch_counter, n)
    plan.epoch_counter += 1
    return perm


def next_with_replacement(plan: SamplingPlan, n: int) -> int:
    """Emit one uniform index in {0..n-1}; n draws consume one epoch key."""
    if n <= 0:
        raise ParameterError("index draw needs n >= 1")
    if plan.mode != WITH_REPLACEMENT:
        raise ParameterError(f"plan mode {plan.mode!r} does not emit with-replacement draws")
    if not plan._buffer:
        rng = rng_for(plan.seed, plan.stream, plan.epoch_counter)
        plan._buffer = list(rng.integers(0, n, size=n))[::-1]
        plan.epoch_counter += 1
    return int(plan._buffer.pop())


def make_coupled(seed: int, independent: bool = False, mode: str = RESHUFFLE) -> CoupledPlans:
    """Two plans whose epoch-k index streams coincide (unless independent)."""
    a = SamplingPlan(mode=mode, seed=seed, stream=PERM_STREAM)
    b_stream = DECOUPLED_PERM_STREAM if independent else PERM_STREAM
    b = SamplingPlan(mode=mode, seed=seed, stream=b_stream)
    return CoupledPlans(plan_gamma=a, plan_two_gamma=b)
