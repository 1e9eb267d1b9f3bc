"""Oracles and statistical estimators for the convergence/bias claims.

The combinatorial fourth-moment operations come in three routes that must
agree: a closed-form identity, an upper bound, and exhaustive enumeration.
Stationary means of affine reshuffling chains are computed exactly by
enumerating all n! epoch maps; long-run quantities (plateaus, CLT samples,
decay curves) are estimated by batched Monte Carlo with replayable streams.

Note on the fourth-moment identity: the closed form here is the full
Hoeffding enumeration of position patterns for sampling without replacement
from a centered population (the 3- and 4-distinct-unit patterns do not
vanish because sum_i r_i = 0 couples the units).  It matches exhaustive
enumeration to machine precision; see the bound for the simpler majorant.
"""

from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .batch import replica_chain
from .errors import (
    DegenerateProblemError,
    EnumerationGuardError,
    NonContractiveError,
    NotConvergedError,
    ParameterError,
    UnsupportedProblemError,
)
from .problems import (
    FiniteSumProblem,
    exact_solution,
    gamma_max_bias_suite,
    problem_constants,
)
from .samplers import RESHUFFLE, WITH_REPLACEMENT, rng_for
from .solver import PLAIN, RRRESH, RunConfig, epoch_pass

_ENUM_LIMIT = int(1e6)


# ---------------------------------------------------------------------------
# fourth moments of without-replacement sample means

@dataclass
class MomentReport:
    exact: float
    bound: Optional[float] = None
    brute: Optional[float] = None
    S4: float = 0.0
    U2: float = 0.0
    T2: float = 0.0
    trace_sigma_hat: float = 0.0

    def to_json(self) -> str:
        return json.dumps(self.__dict__)


def _population_sums(vectors: Sequence[np.ndarray]):
    X = np.asarray(vectors, dtype=float)
    if X.ndim != 2:
        raise ParameterError("vectors must form an (n, d) array")
    r = X - X.mean(axis=0)
    norms_sq = np.einsum("ij,ij->i", r, r)
    S4 = float(np.sum(norms_sq ** 2))
    total = float(np.sum(norms_sq))            # n * tr(Sigma_hat)
    G = r @ r.T
    T2 = float(np.sum(G * G) - np.sum(np.diag(G) ** 2))
    U2 = total ** 2 - S4
    return S4, U2, T2, total


def _check_nk(n: int, k: int) -> None:
    if k < 1 or k > n:
        raise ParameterError(f"need 1 <= k <= n, got k={k}, n={n}")


def fourth_moment_exact(vectors: Sequence[np.ndarray], k: int) -> MomentReport:
    """E||Xbar_omega - Xbar||^4 for a uniform k-subset, in closed form.

    Grouping the quartic sum over positions by how many distinct units they
    touch, with falling-factorial inclusion probabilities and sum_i r_i = 0:

        m=1:  S4
        m=2:  U2 + 2 T2 - 4 S4
        m=3:  8 S4 - 2 (tr-sum)^2 - 4 T2
        m=4:  (tr-sum)^2 + 2 T2 - 4 S4

    each weighted by (k)_m / (n)_m, all divided by k^4.
    """
    n = len(vectors)
    _check_nk(n, k)
    S4, U2, T2, total = _population_sums(vectors)

    def falling(m: int, j: int) -> float:
        out = 1.0
        for t in range(j):
            out *= m - t
        return out

    value = (k / n) * S4
    if n >= 2:
        value += falling(k, 2) / falling(n, 2) * (U2 + 2.0 * T2 - 4.0 * S4)
    if n >= 3:
        value += falling(k, 3) / falling(n, 3) * (8.0 * S4 - 2.0 * total ** 2 - 4.0 * T2)
    if n >= 4:
        value += falling(k, 4) / falling(n, 4) * (total ** 2 + 2.0 * T2 - 4.0 * S4)
    return MomentReport(exact=value / k ** 4, S4=S4, U2=U2, T2=T2,
                        trace_sigma_hat=total / n)


def fourth_moment_bound(vectors: Sequence[np.ndarray], k: int) -> float:
    """Upper bound (k/n) S4 + (9 k(k-1))/(n(n-1)) (n^2 tr(Sigma)^2 - S4), over k^4."""
    n = len(vectors)
    _check_nk(n, k)
    S4, _, _, total = _population_sums(vectors)
    value = (k / n) * S4
    if n >= 2:
        tr = total / n
        value += (9.0 * k * (k - 1)) / (n * (n - 1)) * (n * n * tr * tr - S4)
    return value / k ** 4


def fourth_moment_bruteforce(vectors: Sequence[np.ndarray], k: int) -> float:
    """Average ||Xbar_S - Xbar||^4 over every k-subset, exhaustively."""
    n = len(vectors)
    _check_nk(n, k)
    if math.comb(n, k) > _ENUM_LIMIT:
        raise EnumerationGuardError(f"C({n},{k}) exceeds the enumeration guard")
    X = np.asarray(vectors, dtype=float)
    xbar = X.mean(axis=0)
    acc = 0.0
    for subset in itertools.combinations(range(n), k):
        dev = X[list(subset)].mean(axis=0) - xbar
        acc += float(dev @ dev) ** 2
    return acc / math.comb(n, k)


def full_moment_report(vectors: Sequence[np.ndarray], k: int) -> MomentReport:
    """Exact identity, paper bound, and enumeration in one report."""
    report = fourth_moment_exact(vectors, k)
    report.bound = fourth_moment_bound(vectors, k)
    report.brute = fourth_moment_bruteforce(vectors, k)
    return report


# ---------------------------------------------------------------------------
# epoch-map algebra and Jacobians

def epoch_affine_map(problem: FiniteSumProblem, gamma: float, perm) -> tuple:
    """Compose one reshuffled pass into (A, b) with H(x, omega) = A x + b."""
    if not problem.is_affine:
        raise UnsupportedProblemError("epoch map composition needs affine components")
    d = problem.d
    A = np.eye(d)
    b = np.zeros(d)
    for i in perm:
        Mi = problem.matrices[int(i)]
        qi = problem.offsets[int(i)]
        step = np.eye(d) - gamma * Mi
        A = step @ A
        b = step @ b - gamma * qi
    return A, b


def _component_gradients(problem: FiniteSumProblem, at: np.ndarray) -> np.ndarray:
    if problem.is_affine:
        return problem.matrices
    if problem.component_jacobians is not None:
        return np.asarray([jac(at) for jac in problem.component_jacobians], dtype=float)
    # central finite differences per component
    d = problem.d
    h = 1e-6 * (1.0 + float(np.linalg.norm(at)))
    grads = np.empty((problem.n, d, d))
    for i in range(problem.n):
        for c in range(d):
            e = np.zeros(d)
            e[c] = h
            grads[i][:, c] = (problem.component(i, at + e) - problem.component(i, at - e)) / (2 * h)
    return grads


def full_pass_jacobian(problem: FiniteSumProblem, gamma: float, perm,
                       at: np.ndarray) -> np.ndarray:
    """Jacobian of x -> H(x, omega); the ordered product of (I - gamma M_i)."""
    if problem.is_affine:
        A, _ = epoch_affine_map(problem, gamma, perm)
        return A
    d = problem.d
    at = np.asarray(at, dtype=float)
    h = 1e-6 * (1.0 + float(np.linalg.norm(at)))
    J = np.empty((d, d))
    for c in range(d):
        e = np.zeros(d)
        e[c] = h
        plus, _ = epoch_pass(problem, at + e, gamma, perm)
        minus, _ = epoch_pass(problem, at - e, gamma, perm)
        J[:, c] = (plus - minus) / (2 * h)
    if not np.all(np.isfinite(J)):
        raise ParameterError("non-finite entries in the finite-difference Jacobian")
    return J


def one_pass_operator_jacobian(problem: FiniteSumProblem, gamma: float, perm,
                               at: np.ndarray) -> np.ndarray:
    """The one-pass operator's Jacobian in the suffix-product convention.

    I - sum_{i=1}^{n} prod_{j=1}^{i} (-gamma grad F_{omega[n-j]}(at)); for
    n = 1 this is I + gamma grad F, whose norm attains the stated bound
    1 + sum_i (gamma L_max)^i with equality.
    """
    grads = _component_gradients(problem, np.asarray(at, dtype=float))
    perm = list(perm)
    n = len(perm)
    d = problem.d
    acc = np.eye(d)
    total = np.zeros((d, d))
    for i in range(1, n + 1):
        acc = acc @ (-gamma * grads[perm[n - i]])
        total += acc
    return np.eye(d) - total


def jacobian_bound_check(problem: FiniteSumProblem, gamma: float, samples: int,
                         seed: int = 0, at: Optional[np.ndarray] = None) -> dict:
    """Check ||I - grad phi^(n)(x*)||_op <= 1 + sum_{i=1}^n (gamma L_max)^i.

    Runs `samples` random permutations; reports every norm, the bound, and
    whether all samples respect it.
    """
    if at is None:
        at = exact_solution(problem)
    consts = problem_constants(problem, at)
    n = problem.n
    bound = 1.0 + sum((gamma * consts.L_max) ** i for i in range(1, n + 1))
    rng = rng_for(seed, 21, 0)
    norms = []
    for _ in range(samples):
        perm = rng.permutation(n)
        op = one_pass_operator_jacobian(problem, gamma, perm, at)
        norms.append(float(np.linalg.norm(op, 2)))
    norms = np.array(norms)
    return {
        "bound": bound,
        "norms": norms,
        "max_norm": float(norms.max()),
        "holds": bool(np.all(norms <= bound + 1e-12)),
        "gamma": gamma,
        "L_max": consts.L_max,
    }


# ---------------------------------------------------------------------------
# exact stationary means and bias curves

def stationary_mean_exact(problem: FiniteSumProblem, gamma: float,
                          perturbed: bool = False) -> np.ndarray:
    """Stationary mean of the reshuffled epoch chain by n! enumeration.

    The epoch chain is x_{k+1} = A(omega) x_k + b(omega) (+ zero-mean noise),
    so the stationary mean solves (I - E A) m = E b.  The perturbation cannot
    shift the mean; `perturbed` only triggers a reminder.
    """
    if not problem.is_affine:
        raise UnsupportedProblemError("stationary enumeration needs affine components")
    if problem.n > 8:
        raise EnumerationGuardError("n! enumeration is guarded at n <= 8")
    if perturbed:
        warnings.warn("zero-mean perturbation does not shift the stationary mean")
    d = problem.d
    A_sum = np.zeros((d, d))
    b_sum = np.zeros(d)
    count = 0
    for perm in itertools.permutations(range(problem.n)):
        A, b = epoch_affine_map(problem, gamma, perm)
        A_sum += A
        b_sum += b
        count += 1
    A_bar = A_sum / count
    b_bar = b_sum / count
    radius = float(np.max(np.abs(np.linalg.eigvals(A_bar))))
    if radius >= 1.0:
        raise NonContractiveError(f"mean epoch map has spectral radius {radius:.6f} >= 1")
    m = np.linalg.solve(np.eye(d) - A_bar, b_bar)
    residual = float(np.linalg.norm((np.eye(d) - A_bar) @ m - b_bar))
    if residual > 1e-10 * (1.0 + float(np.linalg.norm(b_bar))):
        raise DegenerateProblemError(f"stationary solve residual {residual:.3e}")
    return m


SLOPE_FLOOR = 1e-13


def fit_loglog_slope(points: Sequence[tuple]) -> float:
    """Least-squares slope of log y against log x."""
    if len(points) < 2:
        raise ParameterError("slope fit needs at least two points")
    xs = np.array([p[0] for p in points], dtype=float)
    ys = np.array([p[1] for p in points], dtype=float)
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise ParameterError("slope fit needs strictly positive coordinates")
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


@dataclass
class BiasCurve:
    gammas: list
    bias_plain: list
    bias_extrap: list
    slope_plain: Optional[float]
    slope_extrap: Optional[float]
    estimator: str = "exact-enum"
    se_plain: Optional[list] = None
    se_extrap: Optional[list] = None

    def to_json(self) -> str:
        return json.dumps({k: v for k, v in self.__dict__.items()})


def _fit_or_none(gammas, biases):
    pts = [(g, b) for g, b in zip(gammas, biases) if b > SLOPE_FLOOR]
    if len(pts) < 2:
        return None
    return fit_loglog_slope(pts)


def _mc_stationary_mean(problem, gamma, seeds, seed, mu):
    """Tail-averaged mean state across replicas; returns (mean, per-replica means).

    All replicas share the transient from x0, which the cross-replica spread
    cannot see, so the burn-in runs 15 time constants (e^-15 residual) to keep
    that shared contamination far below any O(gamma) bias being measured.
    """
    burn = int(math.ceil(15.0 / (gamma * problem.n * mu)))
    tail = burn
    chain = replica_chain(problem, gamma, replicas=seeds, seed=seed, perturb=False)
    chain.run(burn)
    acc = np.zeros((seeds, problem.d))
    for _ in range(tail):
        chain.run(1)
        acc += chain.states()
    per_replica = acc / tail
    return per_replica.mean(axis=0), per_replica


def bias_curve(problem: FiniteSumProblem, gammas: Sequence[float],
               estimator: str = "exact-enum", seeds: int = 24,
               seed: int = 0) -> BiasCurve:
    """Plain and extrapolated stationary bias over a step-size grid.

    exact-enum uses the n! stationary mean at gamma and 2*gamma; monte-carlo
    tail-averages independent reshuffled runs.  Slopes are least-squares in
    log-log space, skipping points at or below the numerical floor.
    """
    gammas = [float(g) for g in gammas]
    if not gammas:
        raise ParameterError("empty gamma list")
    if sorted(gammas) != gammas:
        raise ParameterError("gammas must be sorted ascending")
    consts = problem_constants(problem)
    limit = gamma_max_bias_suite(problem.n, consts.mu, consts.L_max) / 2.0
    for g in gammas:
        if g > limit:
            raise ParameterError(
                f"gamma {g} inadmissible for the bias suite: needs gamma <= gamma_max/2 = {limit:.3e} "
                "(min over every stated step-size branch, halved so 2*gamma stays admissible)")
    x_star = consts.x_star

    bias_plain, bias_extrap = [], []
    se_plain, se_extrap = [], []
    if estimator == "exact-enum":
        for g in gammas:
            m_g = stationary_mean_exact(problem, g)
            m_2g = stationary_mean_exact(problem, 2.0 * g)
            bias_plain.append(float(np.linalg.norm(m_g - x_star)))
            bias_extrap.append(float(np.linalg.norm(2.0 * m_g - m_2g - x_star)))
        se_plain = se_extrap = None
    elif estimator == "monte-carlo":
        for j, g in enumerate(gammas):
            m_g, reps_g = _mc_stationary_mean(problem, g, seeds, seed + 1000 * j, consts.mu)
            m_2g, reps_2g = _mc_stationary_mean(problem, 2.0 * g, seeds, seed + 1000 * j + 500,
                                                consts.mu)
            dev = m_g - x_star
            bias_plain.append(float(np.linalg.norm(dev)))
            u = dev / np.linalg.norm(dev) if np.linalg.norm(dev) > 0 else np.ones_like(dev)
            se_plain.append(float(np.std((reps_g - x_star) @ u, ddof=1) / math.sqrt(seeds)))
            dev_e = 2.0 * m_g - m_2g - x_star
            bias_extrap.append(float(np.linalg.norm(dev_e)))
            ue = dev_e / np.linalg.norm(dev_e) if np.linalg.norm(dev_e) > 0 else u
            comb = (2.0 * reps_g - reps_2g - x_star) @ ue
            se_extrap.append(float(np.std(comb, ddof=1) / math.sqrt(seeds)))
    else:
        raise ParameterError(f"unknown estimator {estimator!r}")

    return BiasCurve(
        gammas=gammas,
        bias_plain=bias_plain,
        bias_extrap=bias_extrap,
        slope_plain=_fit_or_none(gammas, bias_plain),
        slope_extrap=_fit_or_none(gammas, bias_extrap),
        estimator=estimator,
        se_plain=se_plain,
        se_extrap=se_extrap,
    )


# ---------------------------------------------------------------------------
# long-run Monte Carlo estimators

def _plateau_one(problem, config: RunConfig, gamma: float, power: float,
                 seeds: int, mu: float, max_extensions: int = 8) -> float:
    """Tail average of ||x_k - x*||^power once the geometric term has died.

    The initial burn-in is 5/(gamma n mu) epochs; the averaging window (the
    last 50% of the run) is accepted only when its two halves agree within 5%
    or within paired Monte Carlo noise, otherwise the window is folded into
    the burn-in and a fresh one is run, so the run length adapts until the
    geometric term is negligible against the plateau.
    """
    burn = max(10, int(math.ceil(5.0 / (gamma * problem.n * mu))))
    window = burn
    sampling = WITH_REPLACEMENT if config.variant == PLAIN else RESHUFFLE
    chain = replica_chain(problem, gamma, replicas=seeds, seed=config.seed,
                          sampling=sampling,
                          perturb=config.perturb and config.variant != PLAIN,
                          noise_scale=config.noise_scale, x0=config.x0)
    chain.run(burn)
    half = window // 2
    for _ in range(max_extensions):
        acc_first = np.zeros(seeds)
        acc_second = np.zeros(seeds)
        for t in range(window):
            chain.run(1)
            vals = chain.error_sq() ** (power / 2.0)
            if t < half:
                acc_first += vals
            else:
                acc_second += vals
        mean_first = float(acc_first.mean() / half)
        mean_second = float(acc_second.mean() / (window - half))
        total = float((acc_first.sum() + acc_second.sum()) / (window * seeds))
        if total <= (1e-11) ** power:
            # fully decayed (sigma*^2 = 0 case): no noise floor exists
            return total
        paired = acc_second / (window - half) - acc_first / half
        se_diff = float(paired.std(ddof=1) / math.sqrt(seeds)) if seeds > 1 else 0.0
        drift = abs(mean_second - mean_first)
        if drift <= 0.05 * total or drift <= 3.0 * se_diff:
            return total
        # still trending: this window becomes extra burn-in
    raise NotConvergedError(
        f"plateau tail still trending at gamma={gamma}: halves {mean_first:.3e} vs {mean_second:.3e}")


def mse_plateau(problem: FiniteSumProblem, config: RunConfig,
                gammas: Sequence[float], seeds: int = 20) -> list:
    """Tail-averaged ||x_k - x*||^2 per step size, across `seeds` replicas."""
    mu = problem_constants(problem).mu
    return [_plateau_one(problem, config, float(g), 2.0, seeds, mu) for g in gammas]


def fourth_plateau(problem: FiniteSumProblem, config: RunConfig,
                   gammas: Sequence[float], seeds: int = 20) -> list:
    """Tail-averaged ||x_k - x*||^4 per step size."""
    mu = problem_constants(problem).mu
    return [_plateau_one(problem, config, float(g), 4.0, seeds, mu) for g in gammas]


def moment_plateau(problem: FiniteSumProblem, config: RunConfig,
                   gammas: Sequence[float], power: float, seeds: int = 20) -> list:
    """Tail-averaged ||x_k - x*||^power (power = 3 targets the n^{3/2} gamma^3 law)."""
    mu = problem_constants(problem).mu
    return [_plateau_one(problem, config, float(g), power, seeds, mu) for g in gammas]


OBSERVABLES = {
    "value": ("quadratic", lambda chain: chain.game_value()),
    "coord0": ("linear", lambda chain: chain.coord0()),
    "sqdist": ("quadratic", lambda chain: chain.error_sq()),
    "dist": ("linear", lambda chain: np.sqrt(chain.error_sq())),
}


def _resolve_observable(test_fn):
    if callable(test_fn):
        return test_fn
    try:
        return OBSERVABLES[test_fn][1]
    except KeyError:
        raise ParameterError(f"unknown observable {test_fn!r}; built-ins: {sorted(OBSERVABLES)}")


@dataclass
class CltSample:
    T: int
    trials: int
    normalized_sums: np.ndarray   # (trials,)
    pooled_mean: float = 0.0
    gamma: float = 0.0

    @property
    def averages(self) -> np.ndarray:
        """Per-trial T-averaged observable values."""
        return self.pooled_mean + self.normalized_sums / math.sqrt(self.T)

    def to_json(self) -> str:
        return json.dumps({"T": self.T, "trials": self.trials, "gamma": self.gamma,
                           "pooled_mean": self.pooled_mean,
                           "normalized_sums": self.normalized_sums.tolist()})


def clt_harness(problem: FiniteSumProblem, config: RunConfig, test_fn, T: int,
                trials: int) -> CltSample:
    """Normalized sums T^{-1/2} sum_t (l(x_t) - pooled mean) over `trials` chains.

    Chains start at x* as the stationarity proxy and discard an extra 10% of
    T as burn-in; the centering constant is the mean pooled over all trials
    and recorded epochs.
    """
    if T < 10:
        raise ParameterError("clt harness needs T >= 10")
    if trials < 1:
        raise ParameterError("clt harness needs trials >= 1")
    observe = _resolve_observable(test_fn)
    x_star = exact_solution(problem)
    chain = replica_chain(problem, config.gamma, replicas=trials, seed=config.seed,
                          sampling=RESHUFFLE, perturb=config.perturb,
                          noise_scale=config.noise_scale, x0=x_star)
    chain.run(int(math.ceil(0.1 * T)))
    sums = np.zeros(trials)
    for _ in range(T):
        chain.run(1)
        sums += observe(chain)
    pooled = float(sums.mean() / T)
    normalized = (sums - T * pooled) / math.sqrt(T)
    return CltSample(T=T, trials=trials, normalized_sums=normalized,
                     pooled_mean=pooled, gamma=config.gamma)


@dataclass
class ErgodicDecayReport:
    deltas: np.ndarray        # |E l(x_k) - pi-mean| per epoch
    marginal_se: np.ndarray
    rate: Optional[float]     # fitted per-epoch decay factor
    rate_se: Optional[float]
    pi_mean: float

    def to_json(self) -> str:
        return json.dumps({"deltas": self.deltas.tolist(), "rate": self.rate,
                           "rate_se": self.rate_se, "pi_mean": self.pi_mean})


def ergodic_decay(problem: FiniteSumProblem, config: RunConfig, test_fn, K: int,
                  trials: int) -> ErgodicDecayReport:
    """Decay of |E l(x_k) - E_pi l| from a fixed start, with a geometric fit.

    The stationary mean is pooled from an extended tail of the same replica
    set (2 K extra epochs after the K recorded ones).
    """
    if trials < 100:
        raise ParameterError("ergodic decay needs trials >= 100")
    observe = _resolve_observable(test_fn)
    chain = replica_chain(problem, config.gamma, replicas=trials, seed=config.seed,
                          sampling=RESHUFFLE, perturb=config.perturb,
                          noise_scale=config.noise_scale, x0=config.x0)
    means = np.empty(K)
    ses = np.empty(K)
    for k in range(K):
        chain.run(1)
        vals = observe(chain)
        means[k] = float(vals.mean())
        ses[k] = float(vals.std(ddof=1) / math.sqrt(trials))
    tail_epochs = max(2 * K, 100)
    tail_acc = 0.0
    for _ in range(tail_epochs):
        chain.run(1)
        tail_acc += float(observe(chain).mean())
    pi_mean = tail_acc / tail_epochs
    deltas = np.abs(means - pi_mean)

    usable = np.where(deltas > 3.0 * ses)[0]
    rate = rate_se = None
    if usable.size >= 3:
        ks = usable.astype(float)
        logs = np.log(deltas[usable])
        coeffs, cov = np.polyfit(ks, logs, 1, cov=True)
        rate = float(math.exp(coeffs[0]))
        rate_se = float(rate * math.sqrt(cov[0, 0]))  # delta method on exp
    return ErgodicDecayReport(deltas=deltas, marginal_se=ses, rate=rate,
                              rate_se=rate_se, pi_mean=pi_mean)


def drift_energies(problem: FiniteSumProblem, x: np.ndarray, gamma: float,
                   samples: int, seed: int = 0, noise_scale: float = 1.0) -> np.ndarray:
    """One-epoch energies ||x_+ - x*||^2 + 1 over fresh (permutation, noise) draws."""
    chain = replica_chain(problem, gamma, replicas=samples, seed=seed,
                          sampling=RESHUFFLE, perturb=True,
                          noise_scale=noise_scale, x0=np.asarray(x, dtype=float))
    chain.run(1)
    return chain.error_sq() + 1.0
