"""Finite-sum variational-inequality problem instances.

A problem is F(x) = (1/n) sum_i F_i(x) on R^d with each component either an
affine map F_i(x) = M_i x + q_i (stored densely) or a user-supplied callable.
Built-in generators cover the strongly monotone quadratic min-max game, the
toy WGAN (learning a Gaussian mean), and generic random affine instances.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DegenerateProblemError, ParameterError, UnsupportedProblemError
from .samplers import rng_for

QUADRATIC_GAME = "QuadraticGame"
TOY_WGAN = "ToyWGAN"
GENERIC_AFFINE = "GenericAffine"
CUSTOM = "Custom"

_GEN_STREAM = 11  # rng stream id for problem generators

COND_LIMIT = 1e12


@dataclass
class PairStructure:
    """Rotated block-diagonal form of a shared-basis quadratic game.

    With one orthogonal P for all blocks, coordinates (u, v) = (P^T x1, P^T x2)
    decouple into d independent pairs; component i acts on pair l as
    [[da[i,l], db[i,l]], [-db[i,l], dc[i,l]]] with offset (qa[i,l], -qc[i,l]).
    The batched Monte Carlo engine runs on this representation.
    """

    P: np.ndarray     # (d_half, d_half) orthogonal
    da: np.ndarray    # (n, d_half) diagonal of A_i in the P basis
    db: np.ndarray    # (n, d_half)
    dc: np.ndarray    # (n, d_half)
    qa: np.ndarray    # (n, d_half) rotated a_i
    qc: np.ndarray    # (n, d_half) rotated c_i

    @property
    def d_half(self) -> int:
        return self.P.shape[0]


@dataclass
class FiniteSumProblem:
    kind: str
    n: int
    d: int  # ambient dimension (2 * d_half for the saddle problems)
    matrices: Optional[np.ndarray] = None   # (n, d, d) for affine kinds
    offsets: Optional[np.ndarray] = None    # (n, d)
    components: Optional[Sequence[Callable[[np.ndarray], np.ndarray]]] = None
    component_jacobians: Optional[Sequence[Callable[[np.ndarray], np.ndarray]]] = None
    seed: Optional[int] = None
    spec_fields: dict = field(default_factory=dict)
    structure: Optional[PairStructure] = None

    def __post_init__(self):
        if self.is_affine:
            self.matrices = np.asarray(self.matrices, dtype=float)
            self.offsets = np.asarray(self.offsets, dtype=float)
            if self.matrices.shape != (self.n, self.d, self.d):
                raise ParameterError("matrices must have shape (n, d, d)")
            if self.offsets.shape != (self.n, self.d):
                raise ParameterError("offsets must have shape (n, d)")
            if not (np.isfinite(self.matrices).all() and np.isfinite(self.offsets).all()):
                raise ParameterError("affine components must be finite")
        self._cache = {}  # problems are immutable after construction

    @property
    def is_affine(self) -> bool:
        return self.kind != CUSTOM

    def component(self, i: int, x: np.ndarray) -> np.ndarray:
        """F_i(x)."""
        if self.is_affine:
            return self.matrices[i] @ x + self.offsets[i]
        return np.asarray(self.components[i](x), dtype=float)

    def operator(self, x: np.ndarray) -> np.ndarray:
        """F(x) = (1/n) sum_i F_i(x)."""
        if self.is_affine:
            return self.mean_matrix() @ x + self.mean_offset()
        acc = np.zeros(self.d)
        for f in self.components:
            acc += np.asarray(f(x), dtype=float)
        return acc / self.n

    def mean_matrix(self) -> np.ndarray:
        if not self.is_affine:
            raise UnsupportedProblemError("mean matrix needs affine components")
        return self.matrices.mean(axis=0)

    def mean_offset(self) -> np.ndarray:
        if not self.is_affine:
            raise UnsupportedProblemError("mean offset needs affine components")
        return self.offsets.mean(axis=0)

    def game_value(self, x: np.ndarray) -> float:
        """Average saddle objective f(x1, x2) for game-shaped problems."""
        if self.kind not in (QUADRATIC_GAME, TOY_WGAN):
            raise UnsupportedProblemError("game value is defined for saddle problems")
        h = self.d // 2
        x1, x2 = x[:h], x[h:]
        A = self.matrices[:, :h, :h].mean(axis=0)
        B = self.matrices[:, :h, h:].mean(axis=0)
        C = self.matrices[:, h:, h:].mean(axis=0)
        q1 = self.offsets[:, :h].mean(axis=0)
        q2 = self.offsets[:, h:].mean(axis=0)
        # the f whose saddle map (grad_1 f, -grad_2 f) is the stored operator
        return float(0.5 * x1 @ A @ x1 + x1 @ B @ x2 - 0.5 * x2 @ C @ x2 + q1 @ x1 - q2 @ x2)


@dataclass
class ProblemConstants:
    L_i: np.ndarray
    L_max: float
    mu: float
    lam: float
    sigma_star_sq: float
    sigma_star_4: float
    x_star: np.ndarray
    R: float


@dataclass(frozen=True)
class QuadraticGameSpec:
    """Sampling recipe for the strongly monotone quadratic min-max game."""

    n: int
    d: int  # per-player dimension; the joint variable lives in R^{2d}
    mu: float
    L: float
    coupling_max: float = 0.1
    seed: int = 0
    zero_offsets: bool = False
    resample_basis_per_component: bool = False

    def validate(self) -> None:
        if self.n <= 0 or self.d <= 0:
            raise ParameterError("n and d must be positive")
        if not (0 < self.mu <= self.L):
            raise ParameterError("need 0 < mu <= L")
        if self.coupling_max < 0:
            raise ParameterError("coupling_max must be nonnegative")


def _orthogonal(rng: np.random.Generator, d: int) -> np.ndarray:
    """QR of a standard Gaussian matrix, with a canonical sign convention."""
    Q, R = np.linalg.qr(rng.standard_normal((d, d)))
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return Q * signs


def generate_quadratic_game(spec: QuadraticGameSpec) -> FiniteSumProblem:
    """Sample the n-component quadratic saddle game over R^{2d}.

    Blocks are A_i = P D_i^A P^T and C_i = P D_i^C P^T with diagonals uniform
    in [mu, L], and B_i = P D_i^B P^T with diagonal in [0, coupling_max]; one
    P is drawn per problem and shared by every block family.  The component
    operator is the saddle map

        F_i(x1, x2) = (A_i x1 + B_i x2 + a_i,  -B_i^T x1 + C_i x2 - c_i),

    whose joint mean matrix has positive-definite symmetric part diag(A, C).
    """
    spec.validate()
    rng = rng_for(spec.seed, _GEN_STREAM, 0)
    n, d = spec.n, spec.d

    P = _orthogonal(rng, d)
    da = rng.uniform(spec.mu, spec.L, size=(n, d))
    db = rng.uniform(0.0, spec.coupling_max, size=(n, d))
    dc = rng.uniform(spec.mu, spec.L, size=(n, d))
    a = np.zeros((n, d)) if spec.zero_offsets else rng.standard_normal((n, d))
    c = np.zeros((n, d)) if spec.zero_offsets else rng.standard_normal((n, d))

    D = 2 * d
    M = np.empty((n, D, D))
    q = np.empty((n, D))
    structure = None
    if spec.resample_basis_per_component:
        for i in range(n):
            Pa, Pb, Pc = (_orthogonal(rng, d) for _ in range(3))
            Ai = Pa @ np.diag(da[i]) @ Pa.T
            Bi = Pb @ np.diag(db[i]) @ Pb.T
            Ci = Pc @ np.diag(dc[i]) @ Pc.T
            M[i, :d, :d], M[i, :d, d:] = Ai, Bi
            M[i, d:, :d], M[i, d:, d:] = -Bi.T, Ci
            q[i, :d], q[i, d:] = a[i], -c[i]
    else:
        for i in range(n):
            Ai = P @ (da[i][:, None] * P.T)
            Bi = P @ (db[i][:, None] * P.T)
            Ci = P @ (dc[i][:, None] * P.T)
            M[i, :d, :d], M[i, :d, d:] = Ai, Bi
            M[i, d:, :d], M[i, d:, d:] = -Bi.T, Ci
            q[i, :d], q[i, d:] = a[i], -c[i]
        structure = PairStructure(P=P, da=da, db=db, dc=dc, qa=a @ P, qc=c @ P)

    return FiniteSumProblem(
        kind=QUADRATIC_GAME,
        n=n,
        d=D,
        matrices=M,
        offsets=q,
        seed=spec.seed,
        spec_fields={
            "n": n, "d": d, "mu": spec.mu, "L": spec.L,
            "coupling_max": spec.coupling_max, "seed": spec.seed,
            "zero_offsets": spec.zero_offsets,
            "resample_basis_per_component": spec.resample_basis_per_component,
        },
        structure=structure,
    )


def wgan_problem_from_data(xs: np.ndarray, zs: np.ndarray, seed: Optional[int] = None,
                           spec_fields: Optional[dict] = None) -> FiniteSumProblem:
    """Bilinear WGAN operator built from given data/noise samples.

    Sample j contributes F_j(theta, w) = (-w, theta - (x_j - z_j)); the joint
    operator is monotone (skew linear part) and its root is theta* equal to
    the empirical mean of x_j - z_j, with w* = 0.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    zs = np.atleast_2d(np.asarray(zs, dtype=float))
    if xs.shape != zs.shape:
        raise ParameterError("data and noise samples must have matching shapes")
    m, d = xs.shape
    D = 2 * d
    M = np.zeros((m, D, D))
    q = np.zeros((m, D))
    eye = np.eye(d)
    for j in range(m):
        M[j, :d, d:] = -eye
        M[j, d:, :d] = eye
        q[j, d:] = -(xs[j] - zs[j])
    fields = {"m_samples": m, "d": d}
    if spec_fields:
        fields.update(spec_fields)
    return FiniteSumProblem(kind=TOY_WGAN, n=m, d=D, matrices=M, offsets=q,
                            seed=seed, spec_fields=fields)


def make_wgan_problem(target_mean: np.ndarray, cov_scale: float, m_samples: int,
                      seed: int = 0) -> FiniteSumProblem:
    """Toy WGAN: learn the mean of N(target_mean, cov_scale * I)."""
    if cov_scale <= 0:
        raise ParameterError("cov_scale must be positive")
    if m_samples < 1:
        raise ParameterError("m_samples must be >= 1")
    target_mean = np.asarray(target_mean, dtype=float)
    d = target_mean.size
    rng = rng_for(seed, _GEN_STREAM, 1)
    xs = target_mean + math.sqrt(cov_scale) * rng.standard_normal((m_samples, d))
    zs = rng.standard_normal((m_samples, d))
    return wgan_problem_from_data(
        xs, zs, seed=seed,
        spec_fields={"target_mean": target_mean.tolist(), "cov_scale": cov_scale,
                     "m_samples": m_samples, "seed": seed},
    )


def generate_generic_affine(n: int, d: int, mu: float = 1.0, L: float = 2.0,
                            skew_scale: float = 0.5, offset_scale: float = 1.0,
                            seed: int = 0) -> FiniteSumProblem:
    """Random heterogeneous affine problem with a strongly monotone mean.

    Each M_i = Q_i D_i Q_i^T + skew part, with its own basis Q_i, so the
    components do not commute and the reshuffling chain has a nonzero mean
    bias for generic offsets.
    """
    if n <= 0 or d <= 0:
        raise ParameterError("n and d must be positive")
    if not (0 < mu <= L):
        raise ParameterError("need 0 < mu <= L")
    rng = rng_for(seed, _GEN_STREAM, 2)
    M = np.empty((n, d, d))
    q = offset_scale * rng.standard_normal((n, d))
    for i in range(n):
        Q = _orthogonal(rng, d)
        diag = rng.uniform(mu, L, size=d)
        S = Q @ (diag[:, None] * Q.T)
        K = rng.standard_normal((d, d))
        K = 0.5 * (K - K.T) * skew_scale
        M[i] = S + K
    return FiniteSumProblem(
        kind=GENERIC_AFFINE, n=n, d=d, matrices=M, offsets=q, seed=seed,
        spec_fields={"n": n, "d": d, "mu": mu, "L": L, "skew_scale": skew_scale,
                     "offset_scale": offset_scale, "seed": seed},
    )


def exact_solution(problem: FiniteSumProblem) -> np.ndarray:
    """Root of the mean operator, x* = -Mbar^{-1} qbar, by dense solve."""
    if not problem.is_affine:
        raise UnsupportedProblemError("exact_solution needs affine components")
    if "x_star" in problem._cache:
        return problem._cache["x_star"]
    Mbar = problem.mean_matrix()
    qbar = problem.mean_offset()
    cond = np.linalg.cond(Mbar)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise DegenerateProblemError(f"mean matrix condition estimate {cond:.3e} exceeds {COND_LIMIT:.0e}")
    x_star = np.linalg.solve(Mbar, -qbar)
    residual = np.linalg.norm(Mbar @ x_star + qbar)
    if residual > 1e-10 * (1.0 + np.linalg.norm(qbar)):
        raise DegenerateProblemError(f"linear solve residual {residual:.3e} too large")
    problem._cache["x_star"] = x_star
    return x_star


def spectral_norm(M: np.ndarray, rel_tol: float = 1e-9, max_iter: int = 100_000) -> float:
    """Largest singular value via power iteration on the Gram matrix M^T M."""
    M = np.asarray(M, dtype=float)
    G = M.T @ M
    d = G.shape[0]
    v = rng_for(0, _GEN_STREAM, 3).standard_normal(d)
    v /= np.linalg.norm(v)
    prev = 0.0
    for _ in range(max_iter):
        w = G @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        if abs(norm - prev) <= rel_tol * norm:
            return math.sqrt(norm)
        prev = norm
    warnings.warn("power iteration hit the iteration cap; returning last estimate")
    return math.sqrt(prev)


def problem_constants(problem: FiniteSumProblem,
                      x_star: Optional[np.ndarray] = None) -> ProblemConstants:
    """Structural constants: per-component Lipschitz, mu, moments at x*."""
    if not problem.is_affine:
        raise UnsupportedProblemError("constants for custom operators must be user-supplied")
    if x_star is None:
        if "constants" in problem._cache:
            return problem._cache["constants"]
        cache_key = "constants"
        x_star = exact_solution(problem)
    else:
        cache_key = None
    x_star = np.asarray(x_star, dtype=float)

    L_i = np.array([spectral_norm(problem.matrices[i]) for i in range(problem.n)])
    sym = 0.5 * (problem.mean_matrix() + problem.mean_matrix().T)
    mu = float(np.linalg.eigvalsh(sym)[0])

    values = problem.matrices @ x_star + problem.offsets      # (n, d)
    norms_sq = np.einsum("ij,ij->i", values, values)
    sigma_sq = float(norms_sq.mean())
    sigma_4 = float((norms_sq ** 2).mean())
    consts = ProblemConstants(
        L_i=L_i,
        L_max=float(L_i.max()),
        mu=mu,
        lam=0.0,
        sigma_star_sq=sigma_sq,
        sigma_star_4=sigma_4,
        x_star=x_star,
        R=float(np.linalg.norm(x_star)),
    )
    if cache_key is not None:
        problem._cache[cache_key] = consts
    return consts


def gamma_max(n: int, mu: float, L_max: float) -> float:
    """Largest admissible constant step size for the reshuffled chain."""
    if n < 1 or mu <= 0 or L_max <= 0:
        raise ParameterError("gamma_max needs n >= 1, mu > 0, L_max > 0")
    first = 1.0 / (3.0 * n * L_max)
    second = (math.sqrt(1.0 + 6.0 * mu * mu * L_max * L_max) - 1.0) / (12.0 * n * L_max * L_max)
    return min(first, second)


def gamma_max_bias_suite(n: int, mu: float, L_max: float) -> float:
    """Admissibility for the bias suite: min over every stated branch.

    The bias expansion's statement carries extra branches (mu/(3 n L^2) and
    mu^{3/5} / (8 n L^{3/5})) on top of the rate bound's pair; the sweep uses
    the min of all of them.
    """
    base = gamma_max(n, mu, L_max)
    third = mu / (3.0 * n * L_max * L_max)
    fourth = mu ** 0.6 / (8.0 * n * L_max ** 0.6)
    return min(base, third, fourth)


def gamma_max_branches(n: int, mu: float, L_max: float) -> dict:
    """Named values of each admissibility branch (for error messages)."""
    return {
        "1/(3 n L_max)": 1.0 / (3.0 * n * L_max),
        "(sqrt(1 + 6 mu^2 L_max^2) - 1)/(12 n L_max^2)":
            (math.sqrt(1.0 + 6.0 * mu * mu * L_max * L_max) - 1.0) / (12.0 * n * L_max * L_max),
    }


# ---------------------------------------------------------------------------
# serialization

def problem_to_json(problem: FiniteSumProblem) -> str:
    if not problem.is_affine:
        raise UnsupportedProblemError("custom problems do not serialize")
    doc = {
        "kind": problem.kind,
        "n": problem.n,
        "d": problem.d,
        "seed": problem.seed,
        "spec": problem.spec_fields,
        "matrices": problem.matrices.reshape(-1).tolist(),  # row-major
        "offsets": problem.offsets.reshape(-1).tolist(),
    }
    return json.dumps(doc)


def problem_from_json(text: str) -> FiniteSumProblem:
    doc = json.loads(text)
    n, d = int(doc["n"]), int(doc["d"])
    M = np.array(doc["matrices"], dtype=float).reshape(n, d, d)
    q = np.array(doc["offsets"], dtype=float).reshape(n, d)
    problem = FiniteSumProblem(kind=doc["kind"], n=n, d=d, matrices=M, offsets=q,
                               seed=doc.get("seed"), spec_fields=doc.get("spec", {}))
    if problem.kind == QUADRATIC_GAME:
        spec = problem.spec_fields
        try:
            regenerated = generate_quadratic_game(QuadraticGameSpec(
                n=spec["n"], d=spec["d"], mu=spec["mu"], L=spec["L"],
                coupling_max=spec.get("coupling_max", 0.1), seed=spec["seed"],
                zero_offsets=spec.get("zero_offsets", False),
                resample_basis_per_component=spec.get("resample_basis_per_component", False),
            ))
        except (KeyError, ParameterError):
            regenerated = None
        # Reattach the rotated-basis structure only if the stored matrices are
        # exactly the generator's output (file was not hand-edited).
        if (regenerated is not None and regenerated.structure is not None
                and np.array_equal(regenerated.matrices, M)
                and np.array_equal(regenerated.offsets, q)):
            problem.structure = regenerated.structure
    return problem
