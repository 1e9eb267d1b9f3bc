"""Vectorized execution of many independent solver replicas.

Monte Carlo estimators (plateaus, CLT histograms, drift checks) need hundreds
to thousands of independent chains; running them one by one in Python is the
bottleneck, so replicas advance together through fused array operations.
Shared-basis quadratic games additionally decouple into coordinate pairs in
the rotated basis, which cuts each inner step to elementwise work.

Replica r's permutation stream is column r of an argsort over uniforms drawn
from a (seed, stream, epoch)-keyed generator, so runs are replayable and two
engines built with the same key stay permutation-coupled epoch by epoch.
"""

from __future__ import annotations

import numpy as np

from .errors import DivergenceError, ParameterError
from .problems import FiniteSumProblem, exact_solution, problem_constants
from .samplers import BATCH_STREAM, NOISE_STREAM_A, RESHUFFLE, WITH_REPLACEMENT, rng_for
from .solver import epoch_noise_std


class _ReplicaChainBase:
    def __init__(self, problem: FiniteSumProblem, gamma: float, replicas: int,
                 seed: int, sampling: str = RESHUFFLE, perturb: bool = True,
                 noise_scale: float = 1.0, x0=None, sigma_star_sq=None,
                 perm_stream: int = BATCH_STREAM, noise_stream: int = NOISE_STREAM_A,
                 permutations=None):
        if replicas < 1:
            raise ParameterError("need at least one replica")
        if sampling not in (RESHUFFLE, WITH_REPLACEMENT):
            raise ParameterError(f"unknown sampling mode {sampling!r}")
        self.problem = problem
        self.gamma = float(gamma)
        self.R = int(replicas)
        self.seed = int(seed)
        self.sampling = sampling
        self.perm_stream = perm_stream
        self.noise_stream = noise_stream
        self.epoch = 0
        self._injected = permutations
        self.x_star = exact_solution(problem)
        if perturb and sigma_star_sq is None:
            sigma_star_sq = problem_constants(problem).sigma_star_sq
        self.noise_std = (epoch_noise_std(self.gamma, problem.n, problem.d,
                                          sigma_star_sq, noise_scale)
                          if perturb and sigma_star_sq else 0.0)
        self._x0 = np.zeros(problem.d) if x0 is None else np.asarray(x0, dtype=float)

    def _epoch_indices(self) -> np.ndarray:
        """(R, n) component order for this epoch, one row per replica."""
        if self._injected is not None:
            idx = np.asarray(self._injected[self.epoch])
            if idx.shape != (self.R, self.problem.n):
                raise ParameterError("injected permutations have wrong shape")
            return idx
        rng = rng_for(self.seed, self.perm_stream, self.epoch)
        n = self.problem.n
        if self.sampling == RESHUFFLE:
            return np.argsort(rng.random((self.R, n)), axis=1)
        return rng.integers(0, n, size=(self.R, n))

    def run(self, epochs: int) -> None:
        for _ in range(epochs):
            self._advance_one_epoch()

    def _advance_one_epoch(self):
        raise NotImplementedError


class GameReplicaChain(_ReplicaChainBase):
    """Replicated SGDA chains on a shared-basis quadratic game.

    States live in the rotated basis where every component is pair-diagonal;
    norms and the game value are rotation-invariant, so observables agree
    with the ambient chain.
    """

    def __init__(self, problem, gamma, replicas, seed, **kwargs):
        if problem.structure is None:
            raise ParameterError("GameReplicaChain needs a shared-basis quadratic game")
        super().__init__(problem, gamma, replicas, seed, **kwargs)
        s = problem.structure
        self.da, self.db, self.dc = s.da, s.db, s.dc
        self.qa, self.qc = s.qa, s.qc
        self.P = s.P
        h = s.d_half
        self.u = np.tile(self._x0[:h] @ self.P, (self.R, 1))
        self.v = np.tile(self._x0[h:] @ self.P, (self.R, 1))
        self.ustar = self.x_star[:h] @ self.P
        self.vstar = self.x_star[h:] @ self.P
        # averaged diagonals for the batched game-value observable
        self.da_bar = s.da.mean(axis=0)
        self.db_bar = s.db.mean(axis=0)
        self.dc_bar = s.dc.mean(axis=0)
        self.qa_bar = s.qa.mean(axis=0)
        self.qc_bar = s.qc.mean(axis=0)

    def _advance_one_epoch(self):
        idx = self._epoch_indices()
        g = self.gamma
        u, v = self.u, self.v
        da, db, dc, qa, qc = self.da, self.db, self.dc, self.qa, self.qc
        for j in range(self.problem.n):
            sel = idx[:, j]
            a = da[sel]
            b = db[sel]
            c = dc[sel]
            fu = a * u + b * v + qa[sel]
            fv = c * v - b * u - qc[sel]
            u = u - g * fu
            v = v - g * fv
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise DivergenceError("replica chains diverged")
        if self.noise_std > 0.0:
            rng = rng_for(self.seed, self.noise_stream, self.epoch)
            noise = self.noise_std * rng.standard_normal((self.R, 2 * u.shape[1]))
            u = u + noise[:, : u.shape[1]]
            v = v + noise[:, u.shape[1]:]
        self.u, self.v = u, v
        self.epoch += 1

    def error_sq(self) -> np.ndarray:
        du = self.u - self.ustar
        dv = self.v - self.vstar
        return np.einsum("ij,ij->i", du, du) + np.einsum("ij,ij->i", dv, dv)

    def game_value(self) -> np.ndarray:
        # rotated offsets store (qa, -qc) = (q1, q2) rotated, so -q2 . x2 = +qc . v
        u, v = self.u, self.v
        quad = (0.5 * (u * u) @ self.da_bar + (u * v) @ self.db_bar
                - 0.5 * (v * v) @ self.dc_bar)
        return quad + u @ self.qa_bar + v @ self.qc_bar

    def coord0(self) -> np.ndarray:
        """First ambient coordinate of the min-player (linear observable)."""
        return self.u @ self.P[0]

    def states(self) -> np.ndarray:
        """Ambient-coordinate states, shape (R, d)."""
        return np.concatenate([self.u @ self.P.T, self.v @ self.P.T], axis=1)


class GenericReplicaChain(_ReplicaChainBase):
    """Replicated SGDA chains on any affine problem (gathered batched matvec)."""

    def __init__(self, problem, gamma, replicas, seed, **kwargs):
        if not problem.is_affine:
            raise ParameterError("replica chains need affine components")
        super().__init__(problem, gamma, replicas, seed, **kwargs)
        self.MT = np.ascontiguousarray(problem.matrices.transpose(0, 2, 1))
        self.q = problem.offsets
        self.X = np.tile(self._x0, (self.R, 1))

    def _advance_one_epoch(self):
        idx = self._epoch_indices()
        g = self.gamma
        X = self.X
        for j in range(self.problem.n):
            sel = idx[:, j]
            F = np.einsum("rd,rde->re", X, self.MT[sel]) + self.q[sel]
            X = X - g * F
        if not np.all(np.isfinite(X)):
            raise DivergenceError("replica chains diverged")
        if self.noise_std > 0.0:
            rng = rng_for(self.seed, self.noise_stream, self.epoch)
            X = X + self.noise_std * rng.standard_normal(X.shape)
        self.X = X
        self.epoch += 1

    def error_sq(self) -> np.ndarray:
        dev = self.X - self.x_star
        return np.einsum("ij,ij->i", dev, dev)

    def game_value(self) -> np.ndarray:
        return np.array([self.problem.game_value(x) for x in self.X])

    def coord0(self) -> np.ndarray:
        return self.X[:, 0].copy()

    def states(self) -> np.ndarray:
        return self.X.copy()


def replica_chain(problem: FiniteSumProblem, gamma: float, replicas: int, seed: int,
                  **kwargs) -> _ReplicaChainBase:
    """Pick the fastest engine the problem structure allows."""
    if problem.structure is not None:
        return GameReplicaChain(problem, gamma, replicas, seed, **kwargs)
    return GenericReplicaChain(problem, gamma, replicas, seed, **kwargs)
