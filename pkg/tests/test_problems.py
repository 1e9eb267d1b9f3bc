import json
import math

import numpy as np
import pytest

from rrvip import (
    DegenerateProblemError,
    FiniteSumProblem,
    ParameterError,
    QuadraticGameSpec,
    exact_solution,
    gamma_max,
    generate_generic_affine,
    generate_quadratic_game,
    make_wgan_problem,
    problem_constants,
    problem_from_json,
    problem_to_json,
    spectral_norm,
    wgan_problem_from_data,
)
from rrvip.samplers import rng_for


def scalar_two_component():
    # F1(x) = x - 1, F2(x) = x + 1
    return FiniteSumProblem(kind="GenericAffine", n=2, d=1,
                            matrices=np.array([[[1.0]], [[1.0]]]),
                            offsets=np.array([[-1.0], [1.0]]))


def test_quadratic_game_kappa_one_blocks_are_identity():
    p = generate_quadratic_game(QuadraticGameSpec(n=100, d=100, mu=1, L=1, seed=7))
    assert p.n == 100 and p.d == 200
    A0 = p.matrices[0][:100, :100]
    C5 = p.matrices[5][100:, 100:]
    np.testing.assert_allclose(A0, np.eye(100), atol=1e-12)
    np.testing.assert_allclose(C5, np.eye(100), atol=1e-12)


def test_quadratic_game_deterministic_bit_identical():
    spec = QuadraticGameSpec(n=8, d=4, mu=1, L=3, seed=42)
    a = generate_quadratic_game(spec)
    b = generate_quadratic_game(spec)
    assert np.array_equal(a.matrices, b.matrices)
    assert np.array_equal(a.offsets, b.offsets)


def test_quadratic_game_decoupled_scaled_identity():
    spec = QuadraticGameSpec(n=1, d=1, mu=2, L=2, coupling_max=0.0, seed=0,
                             zero_offsets=True)
    p = generate_quadratic_game(spec)
    np.testing.assert_allclose(p.matrices[0], 2 * np.eye(2), atol=1e-14)
    np.testing.assert_allclose(exact_solution(p), np.zeros(2), atol=1e-14)


def test_quadratic_game_residual_at_solution():
    p = generate_quadratic_game(QuadraticGameSpec(n=4, d=2, mu=1, L=5, seed=3))
    x = exact_solution(p)
    q = p.mean_offset()
    assert np.linalg.norm(p.operator(x)) <= 1e-8 * (1 + np.linalg.norm(q))


def test_quadratic_game_invalid_spec():
    with pytest.raises(ParameterError):
        generate_quadratic_game(QuadraticGameSpec(n=4, d=2, mu=0.0, L=1, seed=0))
    with pytest.raises(ParameterError):
        generate_quadratic_game(QuadraticGameSpec(n=4, d=2, mu=2.0, L=1.0, seed=0))
    with pytest.raises(ParameterError):
        generate_quadratic_game(QuadraticGameSpec(n=0, d=2, mu=1, L=1, seed=0))


def test_operator_is_component_average():
    p = generate_generic_affine(6, 4, seed=9)
    rng = rng_for(1, 1, 1)
    for _ in range(20):
        x = rng.standard_normal(4)
        avg = np.mean([p.component(i, x) for i in range(p.n)], axis=0)
        np.testing.assert_allclose(p.operator(x), avg, rtol=1e-13, atol=1e-13)


def test_exact_solution_trivials():
    p = FiniteSumProblem(kind="GenericAffine", n=1, d=3,
                         matrices=np.eye(3)[None], offsets=np.zeros((1, 3)))
    np.testing.assert_allclose(exact_solution(p), np.zeros(3), atol=1e-14)

    p2 = FiniteSumProblem(kind="GenericAffine", n=1, d=3,
                          matrices=2 * np.eye(3)[None],
                          offsets=np.full((1, 3), -2.0))
    np.testing.assert_allclose(exact_solution(p2), np.ones(3), atol=1e-14)


def test_exact_solution_matches_damped_iteration():
    p = generate_generic_affine(6, 4, seed=123)
    x_star = exact_solution(p)
    # independent oracle: damped full-batch fixed-point iteration
    x = np.zeros(4)
    eta = 0.2
    for _ in range(200000):
        step = eta * p.operator(x)
        x = x - step
        if np.linalg.norm(step) < 1e-14:
            break
    np.testing.assert_allclose(x, x_star, atol=1e-8)


def test_exact_solution_singular_mean():
    p = FiniteSumProblem(kind="GenericAffine", n=1, d=2,
                         matrices=np.array([[[1.0, 0.0], [0.0, 0.0]]]),
                         offsets=np.zeros((1, 2)))
    with pytest.raises(DegenerateProblemError):
        exact_solution(p)


def test_wgan_solution_is_empirical_mean():
    p = make_wgan_problem(np.array([3.0, 4.0]), 0.1, 50, seed=11)
    x = exact_solution(p)
    theta, w = x[:2], x[2:]
    # recover the data difference from the stored offsets
    diffs = -p.offsets[:, 2:]
    np.testing.assert_allclose(theta, diffs.mean(axis=0), atol=1e-12)
    np.testing.assert_allclose(w, np.zeros(2), atol=1e-12)


def test_wgan_single_noiseless_sample():
    p = wgan_problem_from_data(np.array([[1.0, 0.0]]), np.zeros((1, 2)))
    x = exact_solution(p)
    np.testing.assert_allclose(x[:2], [1.0, 0.0], atol=1e-14)


def test_wgan_rejects_bad_scale():
    with pytest.raises(ParameterError):
        make_wgan_problem(np.array([0.0]), 0.0, 3)
    with pytest.raises(ParameterError):
        make_wgan_problem(np.array([0.0]), 1.0, 0)


def test_constants_kappa_one_zero_offsets():
    p = generate_quadratic_game(QuadraticGameSpec(n=10, d=5, mu=1, L=1,
                                                  coupling_max=0.0, seed=2,
                                                  zero_offsets=True))
    c = problem_constants(p)
    assert abs(c.L_max - 1.0) < 1e-9
    assert abs(c.mu - 1.0) < 1e-9
    assert c.sigma_star_sq == 0.0
    assert c.lam == 0.0


def test_constants_symmetric_offsets():
    c = problem_constants(scalar_two_component())
    np.testing.assert_allclose(c.x_star, [0.0], atol=1e-14)
    assert abs(c.sigma_star_sq - 1.0) < 1e-14
    assert abs(c.sigma_star_4 - 1.0) < 1e-14
    assert abs(c.mu - 1.0) < 1e-12


def test_constants_power_mean_inequality():
    p = generate_generic_affine(5, 3, seed=77)
    c = problem_constants(p)
    assert c.sigma_star_4 >= c.sigma_star_sq ** 2 - 1e-12
    assert c.sigma_star_sq >= 0
    assert c.L_max == c.L_i.max()


def test_spectral_norm_against_numpy():
    rng = rng_for(5, 1, 0)
    for _ in range(10):
        M = rng.standard_normal((6, 6))
        assert abs(spectral_norm(M) - np.linalg.norm(M, 2)) < 1e-7 * np.linalg.norm(M, 2)
    assert spectral_norm(np.zeros((4, 4))) == 0.0


def test_gamma_max_frozen_values():
    # direct evaluation of the two closed-form branches
    assert gamma_max(100, 1, 1) == pytest.approx(0.0013714594258871589, rel=1e-14)
    assert gamma_max(1, 1, 1) == pytest.approx(0.1371459425887159, rel=1e-14)
    assert gamma_max(100, 1, 1) == min(1 / 300, (math.sqrt(7) - 1) / 1200)


def test_gamma_max_monotone_in_mu():
    values = [gamma_max(100, mu, 1.0) for mu in np.linspace(0.1, 1.0, 10)]
    assert all(b >= a for a, b in zip(values, values[1:]))


def test_gamma_max_rejects_bad_inputs():
    for bad in [(0, 1, 1), (10, 0.0, 1), (10, 1, 0.0), (10, -1, 1)]:
        with pytest.raises(ParameterError):
            gamma_max(*bad)


def test_quasi_strong_monotonicity_invariant():
    for problem in (generate_quadratic_game(QuadraticGameSpec(n=20, d=6, mu=1, L=4, seed=5)),
                    generate_generic_affine(7, 5, seed=8)):
        c = problem_constants(problem)
        rng = rng_for(3, 1, 2)
        for _ in range(1000):
            x = c.x_star + rng.standard_normal(problem.d) * rng.uniform(0.1, 10)
            dev = x - c.x_star
            lhs = float(problem.operator(x) @ dev)
            assert lhs >= c.mu * float(dev @ dev) - 1e-9 * (1 + float(dev @ dev))


def test_component_moment_bounds_hold():
    # second- and fourth-moment bounds on component deviations from the mean
    problem = generate_quadratic_game(QuadraticGameSpec(n=15, d=4, mu=1, L=3, seed=6))
    c = problem_constants(problem)
    L2 = c.L_i ** 2
    rng = rng_for(4, 1, 3)
    for _ in range(1000):
        x = c.x_star + rng.standard_normal(problem.d) * rng.uniform(0.05, 8)
        values = problem.matrices @ x + problem.offsets
        dev = values - values.mean(axis=0)
        dist_sq = float(np.sum((x - c.x_star) ** 2))
        norms_sq = np.einsum("ij,ij->i", dev, dev)
        assert norms_sq.mean() <= 2 * L2.mean() * dist_sq + 2 * c.sigma_star_sq + 1e-10
        assert (norms_sq ** 2).mean() <= (128 * (L2 ** 2).mean() * dist_sq ** 2
                                          + 128 * c.sigma_star_4 + 1e-10)


def test_serialization_round_trip():
    p = generate_quadratic_game(QuadraticGameSpec(n=6, d=3, mu=1, L=2, seed=13))
    doc = problem_to_json(p)
    q = problem_from_json(doc)
    assert q.kind == p.kind and q.n == p.n and q.d == p.d and q.seed == p.seed
    assert np.array_equal(q.matrices, p.matrices)
    assert np.array_equal(q.offsets, p.offsets)
    assert q.spec_fields == p.spec_fields
    assert q.structure is not None  # regenerated from the spec fields
    # hand-edited matrices should drop the structure but keep the data
    doc2 = json.loads(doc)
    doc2["matrices"][0] += 0.5
    q2 = problem_from_json(json.dumps(doc2))
    assert q2.structure is None
    assert q2.matrices[0, 0, 0] == p.matrices[0, 0, 0] + 0.5


def test_game_value_at_solution_is_stationary():
    p = generate_quadratic_game(QuadraticGameSpec(n=12, d=4, mu=1, L=2, seed=19))
    x = exact_solution(p)
    v0 = p.game_value(x)
    rng = rng_for(9, 1, 4)
    h = p.d // 2
    for _ in range(10):
        e = 1e-6 * rng.standard_normal(p.d)
        v = p.game_value(x + e)
        assert abs(v - v0) < 1e-9  # gradient vanishes at the saddle
