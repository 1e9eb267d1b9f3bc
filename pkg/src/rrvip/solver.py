"""Epoch maps, variants, perturbation, and extrapolation combiners.

The epoch map H(x, omega) is one reshuffled pass of n inner steps; the four
variants are plain with-replacement SGD(A), reshuffled epochs (optionally
perturbed), extrapolation over two plain chains, and extrapolation over two
coupled reshuffled chains that share each epoch's permutation (the combined
method).  Base inner steps: sgda, seg (extragradient half/full step on the
same component), omd (optimistic step reusing the previous operator value).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DivergenceError, ParameterError
from .problems import FiniteSumProblem, exact_solution, problem_constants
from .samplers import (
    NOISE_STREAM_A,
    NOISE_STREAM_B,
    RESHUFFLE,
    WITH_REPLACEMENT,
    CoupledPlans,
    SamplingPlan,
    make_coupled,
    next_permutation,
    next_with_replacement,
    rng_for,
)

DIVERGENCE_NORM = 1e12

PLAIN = "plain"
RRRESH = "rrresh"
RRROM = "rrrom"
RRROM_RRRESH = "rrrom-rrresh"
VARIANTS = (PLAIN, RRRESH, RRROM, RRROM_RRRESH)

SGDA = "sgda"
SEG = "seg"
OMD = "omd"
BASE_METHODS = (SGDA, SEG, OMD)


@dataclass
class RunConfig:
    gamma: float
    epochs: int
    perturb: bool = True
    noise_scale: float = 1.0
    base_method: str = SGDA
    variant: str = RRRESH
    record_inner: bool = False
    x0: Optional[np.ndarray] = None
    seed: int = 0
    sigma_star_sq: Optional[float] = None  # override when x* is unknown
    inner_noise: bool = False              # literal per-step noise placement
    burn_in: int = 0                       # epochs skipped by the averaged combiner

    def validate(self) -> None:
        if self.gamma <= 0:
            raise ParameterError("gamma must be positive")
        if self.epochs < 0:
            raise ParameterError("epochs must be nonnegative")
        if self.noise_scale < 0:
            raise ParameterError("noise_scale must be nonnegative")
        if self.variant not in VARIANTS:
            raise ParameterError(f"unknown variant {self.variant!r}")
        if self.base_method not in BASE_METHODS:
            raise ParameterError(f"unknown base method {self.base_method!r}")


@dataclass
class Trajectory:
    epoch_iterates: np.ndarray                    # (K+1, d)
    inner_iterates: Optional[list] = None         # per epoch: (n, d)
    per_epoch_error: Optional[np.ndarray] = None  # ||x_k - x*||^2
    wall_time: float = 0.0
    gamma: float = 0.0
    diverged_at: Optional[int] = None             # epoch index if aborted

    @property
    def final(self) -> np.ndarray:
        return self.epoch_iterates[-1]


class _Stepper:
    """One inner update of the configured base method."""

    def __init__(self, method: str, d: int):
        if method not in BASE_METHODS:
            raise ParameterError(f"unknown base method {method!r}")
        self.method = method
        self.prev_value = np.zeros(d)  # omd memory

    def step(self, problem: FiniteSumProblem, i: int, x: np.ndarray, gamma: float,
             noise: Optional[np.ndarray] = None) -> np.ndarray:
        if self.method == SGDA:
            g = problem.component(i, x)
        elif self.method == SEG:
            half = x - gamma * problem.component(i, x)
            g = problem.component(i, half)
        else:  # OMD: optimistic step with the previous operator value
            value = problem.component(i, x)
            g = 2.0 * value - self.prev_value
            self.prev_value = value
        if noise is not None:
            g = g + noise
        return x - gamma * g


def _check_finite(x: np.ndarray, last_finite: np.ndarray) -> None:
    if not np.all(np.isfinite(x)) or float(np.dot(x, x)) > DIVERGENCE_NORM ** 2:
        raise DivergenceError("iterates diverged", last_iterate=last_finite.copy())


def epoch_pass(problem: FiniteSumProblem, x: np.ndarray, gamma: float,
               perm: np.ndarray, base_method: str = SGDA,
               stepper: Optional[_Stepper] = None):
    """One pass over the components in permutation order.

    Returns (endpoint, inner) where inner lists the n post-step iterates
    x^1 .. x^n; for sgda the endpoint equals x - gamma * sum_j F_{perm[j]}(x^j).
    """
    perm = np.asarray(perm)
    if sorted(perm.tolist()) != list(range(problem.n)):
        raise ParameterError("perm must be a bijection on the components")
    if stepper is None:
        stepper = _Stepper(base_method, problem.d)
    cur = np.asarray(x, dtype=float)
    inner = []
    for i in perm:
        nxt = stepper.step(problem, int(i), cur, gamma)
        _check_finite(nxt, cur)
        inner.append(nxt)
        cur = nxt
    return cur, inner


def perturb(x: np.ndarray, gamma: float, n: int, sigma_star_sq: float,
            noise_scale: float, rng: np.random.Generator) -> np.ndarray:
    """Add the calibrated Gaussian smoothing noise U.

    U ~ N(0, noise_scale * (gamma^2 n^2 sigma*^2 / d) I), so
    E||U||^2 = noise_scale * gamma^2 n^2 sigma*^2.  With sigma*^2 = 0 the
    noise degenerates and x is returned unchanged.
    """
    if sigma_star_sq < 0:
        raise ParameterError("sigma_star_sq must be nonnegative")
    x = np.asarray(x, dtype=float)
    if sigma_star_sq == 0.0 or noise_scale == 0.0:
        return x
    d = x.size
    std = math.sqrt(noise_scale * gamma * gamma * n * n * sigma_star_sq / d)
    return x + std * rng.standard_normal(d)


def epoch_noise_std(gamma: float, n: int, d: int, sigma_star_sq: float,
                    noise_scale: float) -> float:
    """Per-coordinate std of the epoch-level injected noise gamma * U."""
    if sigma_star_sq <= 0.0 or noise_scale <= 0.0:
        return 0.0
    return gamma * math.sqrt(noise_scale * gamma * gamma * n * n * sigma_star_sq / d)


def extrapolate_last(x_g: np.ndarray, x_2g: np.ndarray) -> np.ndarray:
    """2 x_gamma - x_{2 gamma}: cancels the leading step-size bias."""
    x_g = np.asarray(x_g, dtype=float)
    x_2g = np.asarray(x_2g, dtype=float)
    if x_g.shape != x_2g.shape:
        raise ParameterError("extrapolation needs same-shape iterates")
    return 2.0 * x_g - x_2g


def extrapolate_average(prefix_sums_g: np.ndarray, prefix_sums_2g: np.ndarray,
                        k: int) -> np.ndarray:
    """(2 S_k^{[gamma]} - S_k^{[2 gamma]}) / k over running endpoint sums."""
    if k < 1:
        raise ParameterError("averaged extrapolation needs k >= 1")
    return (2.0 * np.asarray(prefix_sums_g, dtype=float)
            - np.asarray(prefix_sums_2g, dtype=float)) / k


def _resolve_sigma(problem: FiniteSumProblem, config: RunConfig) -> float:
    if config.sigma_star_sq is not None:
        return config.sigma_star_sq
    if problem.is_affine:
        return problem_constants(problem).sigma_star_sq
    raise ParameterError("perturbation needs sigma_star_sq for non-affine problems "
                         "(pass RunConfig.sigma_star_sq)")


class _ChainState:
    """One chain of a run: stepper, noise stream, recording buffers."""

    def __init__(self, problem, eta, config, noise_stream, record_inner):
        self.eta = eta
        self.x = (np.zeros(problem.d) if config.x0 is None
                  else np.asarray(config.x0, dtype=float).copy())
        self.stepper = _Stepper(config.base_method, problem.d)
        self.noise_stream = noise_stream
        self.iterates = [self.x.copy()]
        self.inner = [] if record_inner else None


def run_variant(problem: FiniteSumProblem, config: RunConfig,
                plan: Optional[SamplingPlan | CoupledPlans] = None):
    """Run one algorithmic variant for config.epochs epochs.

    Returns (trajectory, companion) where companion is the 2*gamma chain for
    the extrapolated variants and None otherwise.  Coupled chains consume the
    identical permutation each epoch; this is asserted per epoch.
    """
    config.validate()
    t0 = time.perf_counter()
    n, d = problem.n, problem.d

    extrapolated = config.variant in (RRROM, RRROM_RRRESH)
    reshuffled = config.variant in (RRRESH, RRROM_RRRESH)
    mode = RESHUFFLE if reshuffled else WITH_REPLACEMENT

    if plan is None:
        plan = (make_coupled(config.seed, mode=mode) if extrapolated
                else SamplingPlan(mode=mode, seed=config.seed))
    if extrapolated and not isinstance(plan, CoupledPlans):
        raise ParameterError(f"variant {config.variant!r} needs a CoupledPlans")
    if not extrapolated and isinstance(plan, CoupledPlans):
        raise ParameterError(f"variant {config.variant!r} takes a single SamplingPlan")
    if isinstance(plan, CoupledPlans):
        for p in (plan.plan_gamma, plan.plan_two_gamma):
            if p.mode != mode:
                raise ParameterError(f"plan mode {p.mode!r} does not match variant {config.variant!r}")
    elif plan.mode != mode:
        raise ParameterError(f"plan mode {plan.mode!r} does not match variant {config.variant!r}")

    perturbed = config.perturb and reshuffled
    sigma_sq = _resolve_sigma(problem, config) if perturbed else 0.0

    chains = [_ChainState(problem, config.gamma, config, NOISE_STREAM_A, config.record_inner)]
    if extrapolated:
        chains.append(_ChainState(problem, 2.0 * config.gamma, config, NOISE_STREAM_B, False))

    x_star = None
    if problem.is_affine:
        try:
            x_star = exact_solution(problem)
        except Exception:
            x_star = None

    diverged_at = None
    for k in range(config.epochs):
        if reshuffled:
            if extrapolated:
                perm_a = next_permutation(plan.plan_gamma, n)
                perm_b = next_permutation(plan.plan_two_gamma, n)
                if plan.plan_gamma.stream == plan.plan_two_gamma.stream:
                    assert np.array_equal(perm_a, perm_b), "coupled chains lost permutation sync"
                perms = [perm_a, perm_b]
            else:
                perms = [next_permutation(plan, n)]
        else:
            perms = None

        try:
            for ci, chain in enumerate(chains):
                if reshuffled:
                    perm = perms[min(ci, len(perms) - 1)]
                    if config.inner_noise and perturbed and sigma_sq > 0:
                        rng = rng_for(config.seed, chain.noise_stream, k)
                        step_std = math.sqrt(config.noise_scale * chain.eta ** 2 * n * sigma_sq / d)
                        cur = chain.x
                        inner = []
                        for i in perm:
                            nxt = chain.stepper.step(problem, int(i), cur, chain.eta,
                                                     noise=step_std * rng.standard_normal(d))
                            _check_finite(nxt, cur)
                            inner.append(nxt)
                            cur = nxt
                        endpoint = cur
                    else:
                        endpoint, inner = epoch_pass(problem, chain.x, chain.eta, perm,
                                                     stepper=chain.stepper)
                        if perturbed and sigma_sq > 0:
                            rng = rng_for(config.seed, chain.noise_stream, k)
                            std = epoch_noise_std(chain.eta, n, d, sigma_sq, config.noise_scale)
                            endpoint = endpoint + std * rng.standard_normal(d)
                    if chain.inner is not None:
                        chain.inner.append(np.asarray(inner))
                else:
                    cur = chain.x
                    inner = []
                    for _ in range(n):
                        if extrapolated:
                            src = plan.plan_gamma if ci == 0 else plan.plan_two_gamma
                        else:
                            src = plan
                        i = next_with_replacement(src, n)
                        nxt = chain.stepper.step(problem, i, cur, chain.eta)
                        _check_finite(nxt, cur)
                        inner.append(nxt)
                        cur = nxt
                    endpoint = cur
                    if chain.inner is not None:
                        chain.inner.append(np.asarray(inner))
                chain.x = endpoint
                chain.iterates.append(endpoint.copy())
        except DivergenceError:
            diverged_at = k
            break

    def build(chain):
        iters = np.asarray(chain.iterates)
        err = None
        if x_star is not None:
            dev = iters - x_star
            err = np.einsum("ij,ij->i", dev, dev)
        return Trajectory(epoch_iterates=iters, inner_iterates=chain.inner,
                          per_epoch_error=err, wall_time=time.perf_counter() - t0,
                          gamma=chain.eta, diverged_at=diverged_at)

    main = build(chains[0])
    companion = build(chains[1]) if extrapolated else None
    return main, companion


def extrapolated_series(traj: Trajectory, companion: Trajectory, burn_in: int = 0):
    """Per-epoch last-iterate and averaged extrapolations of a coupled run.

    Row k of `last` is 2 x_k^{[gamma]} - x_k^{[2 gamma]}; row k of `avg`
    averages epochs burn_in+1 .. k (rows at or before burn_in hold NaN).
    """
    xg = traj.epoch_iterates
    x2g = companion.epoch_iterates
    if xg.shape != x2g.shape:
        raise ParameterError("coupled trajectories have mismatched shapes")
    last = 2.0 * xg - x2g
    avg = np.full_like(xg, np.nan)
    run_g = np.zeros(xg.shape[1])
    run_2g = np.zeros(xg.shape[1])
    for k in range(burn_in + 1, xg.shape[0]):
        run_g += xg[k]
        run_2g += x2g[k]
        avg[k] = extrapolate_average(run_g, run_2g, k - burn_in)
    return last, avg


def run_lockstep_chains(problem: FiniteSumProblem, etas: np.ndarray, epochs: int,
                        seed: int = 0, x0: Optional[np.ndarray] = None,
                        perturb_sigma_sq: float = 0.0, noise_scale: float = 1.0,
                        sampling: str = RESHUFFLE) -> np.ndarray:
    """Advance len(etas) coupled chains in lockstep through fused array ops.

    All chains share each epoch's index order, so one pass serves every step
    size simultaneously; this is the concurrent execution mode used on
    single-CPU hosts (and the timing baseline runs it at width 1).  Affine
    problems only.  Returns the stacked endpoints, shape (len(etas), d).
    """
    if not problem.is_affine:
        raise ParameterError("lockstep execution needs affine components")
    etas = np.asarray(etas, dtype=float)
    n, d = problem.n, problem.d
    MT = np.ascontiguousarray(problem.matrices.transpose(0, 2, 1))
    q = problem.offsets
    X = np.zeros((etas.size, d)) if x0 is None else np.tile(np.asarray(x0, float), (etas.size, 1))
    cols = etas[:, None]
    stds = np.array([epoch_noise_std(e, n, d, perturb_sigma_sq, noise_scale) for e in etas])
    for k in range(epochs):
        rng = rng_for(seed, NOISE_STREAM_A, k)
        if sampling == RESHUFFLE:
            order = rng_for(seed, 1, k).permutation(n)
        else:
            order = rng_for(seed, 1, k).integers(0, n, size=n)
        for i in order:
            X = X - cols * (X @ MT[i] + q[i])
        if not np.all(np.isfinite(X)):
            raise DivergenceError("lockstep chains diverged", last_iterate=X)
        if stds.any():
            X = X + stds[:, None] * rng.standard_normal(X.shape)
    return X
