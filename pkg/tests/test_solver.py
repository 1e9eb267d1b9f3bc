import numpy as np
import pytest

from rrvip import (
    DivergenceError,
    FiniteSumProblem,
    ParameterError,
    QuadraticGameSpec,
    RunConfig,
    SamplingPlan,
    epoch_pass,
    extrapolate_average,
    extrapolate_last,
    extrapolated_series,
    generate_generic_affine,
    generate_quadratic_game,
    make_coupled,
    make_wgan_problem,
    perturb,
    epoch_affine_map,
    run_lockstep_chains,
    run_variant,
)
from rrvip.samplers import rng_for
from rrvip.solver import PLAIN, RRRESH, RRROM, RRROM_RRRESH


def scalar_problem():
    # F1(x) = x - 1, F2(x) = x + 1; x* = 0
    return FiniteSumProblem(kind="GenericAffine", n=2, d=1,
                            matrices=np.array([[[1.0]], [[1.0]]]),
                            offsets=np.array([[-1.0], [1.0]]))


def zero_offset_game(n=10, d=4, seed=1):
    return generate_quadratic_game(QuadraticGameSpec(n=n, d=d, mu=1, L=2, seed=seed,
                                                     zero_offsets=True))


def test_epoch_pass_hand_recursion():
    end, inner = epoch_pass(scalar_problem(), np.array([0.0]), 0.1, [0, 1])
    assert inner[0][0] == pytest.approx(0.1, abs=1e-15)
    assert end[0] == pytest.approx(-0.01, abs=1e-15)
    assert len(inner) == 2


def test_epoch_pass_fixed_point():
    p = FiniteSumProblem(kind="GenericAffine", n=1, d=2,
                         matrices=np.array([[[2.0, 0.0], [0.0, 3.0]]]),
                         offsets=np.array([[-2.0, -3.0]]))
    x_star = np.array([1.0, 1.0])
    end, _ = epoch_pass(p, x_star, 0.05, [0])
    np.testing.assert_allclose(end, x_star, atol=1e-15)


def test_epoch_pass_matches_affine_composition():
    p = generate_generic_affine(6, 4, seed=21)
    rng = rng_for(2, 1, 0)
    for _ in range(10):
        x = rng.standard_normal(4)
        perm = rng.permutation(6)
        end, _ = epoch_pass(p, x, 0.02, perm)
        A, b = epoch_affine_map(p, 0.02, perm)
        np.testing.assert_allclose(end, A @ x + b, rtol=1e-12, atol=1e-13)


def test_epoch_pass_bitwise_deterministic():
    p = generate_generic_affine(5, 3, seed=4)
    x = np.ones(3)
    perm = [4, 2, 0, 1, 3]
    a, _ = epoch_pass(p, x, 0.01, perm)
    b, _ = epoch_pass(p, x, 0.01, perm)
    assert np.array_equal(a, b)


def test_epoch_pass_rejects_non_bijection():
    with pytest.raises(ParameterError):
        epoch_pass(scalar_problem(), np.zeros(1), 0.1, [0, 0])


def test_perturb_noise_scale_zero_is_identity():
    x = np.arange(5.0)
    out = perturb(x, 0.1, 10, 3.0, 0.0, rng_for(0, 1, 0))
    assert np.array_equal(out, x)
    out = perturb(x, 0.1, 10, 0.0, 1.0, rng_for(0, 1, 0))
    assert np.array_equal(out, x)


def test_perturb_second_moment():
    # E||U||^2 = gamma^2 n^2 sigma*^2 = 4.0 for these parameters
    rng = rng_for(0, 3, 0)
    total = 0.0
    draws = 20000
    for _ in range(draws):
        u = perturb(np.zeros(50), 0.01, 100, 4.0, 1.0, rng)
        total += float(u @ u)
    assert total / draws == pytest.approx(4.0, rel=0.03)


def test_perturb_reproducible_stream():
    a = perturb(np.zeros(3), 0.1, 5, 2.0, 1.0, rng_for(7, 3, 1))
    b = perturb(np.zeros(3), 0.1, 5, 2.0, 1.0, rng_for(7, 3, 1))
    assert np.array_equal(a, b)


def test_run_variant_zero_offsets_geometric_decay():
    p = zero_offset_game()
    x0 = rng_for(1, 1, 1).standard_normal(p.d)
    for variant in (PLAIN, RRRESH, RRROM, RRROM_RRRESH):
        cfg = RunConfig(gamma=5e-3, epochs=600, variant=variant, x0=x0, seed=3)
        traj, companion = run_variant(p, cfg)
        assert traj.per_epoch_error[-1] < 1e-10
        if companion is not None:
            assert companion.per_epoch_error[-1] < 1e-10


def test_run_variant_matches_scripted_recursion():
    p = scalar_problem()
    cfg = RunConfig(gamma=0.1, epochs=5, variant=RRRESH, perturb=False,
                    x0=np.array([0.0]), seed=11)
    plan = SamplingPlan(seed=11)
    traj, _ = run_variant(p, cfg, plan)
    # hand-rolled recursion with the same permutation stream
    x = 0.0
    replay = SamplingPlan(seed=11)
    from rrvip.samplers import next_permutation
    for _ in range(5):
        for i in next_permutation(replay, 2):
            x = x - 0.1 * (x + (1.0 if i == 1 else -1.0))
    assert traj.epoch_iterates[-1][0] == pytest.approx(x, abs=1e-12)


def test_run_variant_trajectory_shape_and_inner():
    p = zero_offset_game(n=4, d=2)
    cfg = RunConfig(gamma=1e-2, epochs=7, variant=RRRESH, record_inner=True, seed=0)
    traj, _ = run_variant(p, cfg)
    assert traj.epoch_iterates.shape == (8, p.d)
    assert len(traj.inner_iterates) == 7
    assert traj.inner_iterates[0].shape == (4, p.d)


def test_run_variant_coupled_chains_share_permutations():
    # with coupled plans, the gamma and 2 gamma chains see the same epoch maps;
    # on a zero-offset problem the 2 gamma chain is then a deterministic
    # function of the shared permutations, reproducible chain by chain
    p = zero_offset_game(n=6, d=3, seed=9)
    cfg = RunConfig(gamma=1e-3, epochs=20, variant=RRROM_RRRESH, perturb=False,
                    x0=np.ones(p.d), seed=5)
    traj, companion = run_variant(p, cfg)
    cfg2 = RunConfig(gamma=2e-3, epochs=20, variant=RRRESH, perturb=False,
                     x0=np.ones(p.d), seed=5)
    solo, _ = run_variant(p, cfg2, SamplingPlan(seed=5))
    np.testing.assert_allclose(companion.epoch_iterates, solo.epoch_iterates,
                               rtol=1e-12, atol=1e-14)


def test_run_variant_independent_perms_differ():
    p = zero_offset_game(n=6, d=3, seed=9)
    cfg = RunConfig(gamma=1e-3, epochs=20, variant=RRROM_RRRESH, perturb=False,
                    x0=np.ones(p.d), seed=5)
    coupled, comp_coupled = run_variant(p, cfg, make_coupled(5))
    decoupled, comp_dec = run_variant(p, cfg, make_coupled(5, independent=True))
    np.testing.assert_allclose(coupled.epoch_iterates, decoupled.epoch_iterates,
                               rtol=1e-12, atol=1e-14)
    # different permutation streams shift the companion endpoints (order
    # effects are O(gamma^2), so compare exactly, not with tolerances)
    assert not np.array_equal(comp_coupled.epoch_iterates, comp_dec.epoch_iterates)


def test_run_variant_plan_mismatch():
    p = zero_offset_game(n=4, d=2)
    cfg = RunConfig(gamma=1e-2, epochs=2, variant=RRROM_RRRESH)
    with pytest.raises(ParameterError):
        run_variant(p, cfg, SamplingPlan(seed=0))
    cfg2 = RunConfig(gamma=1e-2, epochs=2, variant=RRRESH)
    with pytest.raises(ParameterError):
        run_variant(p, cfg2, make_coupled(0))


def test_plain_sgda_diverges_on_bilinear():
    p = make_wgan_problem(np.array([3.0, 4.0]), 0.1, 8, seed=2)
    cfg = RunConfig(gamma=1.0, epochs=500, variant=PLAIN, perturb=False,
                    x0=np.ones(p.d), seed=1)
    traj, _ = run_variant(p, cfg)
    assert traj.diverged_at is not None


def test_epoch_pass_divergence_carries_last_iterate():
    p = FiniteSumProblem(kind="GenericAffine", n=1, d=1,
                         matrices=np.array([[[-5.0]]]), offsets=np.zeros((1, 1)))
    x = np.array([1.0])
    with pytest.raises(DivergenceError) as info:
        for _ in range(100):
            x, _ = epoch_pass(p, x, 1.0, [0])
    assert info.value.last_iterate is not None
    assert np.isfinite(info.value.last_iterate).all()


def test_seg_converges_on_bilinear_wgan():
    # plain SGDA spirals out on this operator (see the divergence test);
    # the extragradient and optimistic steps settle near the target mean
    p = make_wgan_problem(np.array([3.0, 4.0]), 0.1, 30, seed=6)
    x_star = np.concatenate([-p.offsets[:, 2:].mean(axis=0), np.zeros(2)])
    for method in ("seg", "omd"):
        cfg = RunConfig(gamma=0.05, epochs=2000, variant=RRRESH, perturb=False,
                        base_method=method, x0=np.zeros(p.d), seed=4)
        traj, _ = run_variant(p, cfg)
        err = float(np.sum((traj.final - x_star) ** 2))
        assert err < 0.5, (method, err)
        theta = traj.final[:2]
        assert np.linalg.norm(theta - np.array([3.0, 4.0])) < 0.8


def test_wgan_all_variants_near_target_mean():
    # "any variant" on the toy WGAN, with the extragradient base step
    p = make_wgan_problem(np.array([3.0, 4.0]), 0.1, 30, seed=6)
    target = np.array([3.0, 4.0])
    for variant in (PLAIN, RRRESH, RRROM, RRROM_RRRESH):
        cfg = RunConfig(gamma=0.05, epochs=1500, variant=variant, perturb=False,
                        base_method="seg", x0=np.zeros(p.d), seed=14)
        traj, companion = run_variant(p, cfg)
        final = traj.final
        if companion is not None:
            final = extrapolate_last(traj.final, companion.final)
        assert np.linalg.norm(final[:2] - target) < 1.0, (variant, final[:2])


def test_seg_step_composition():
    # one SEG step: x - gamma F(x - gamma F(x)) on a single component
    p = FiniteSumProblem(kind="GenericAffine", n=1, d=1,
                         matrices=np.array([[[2.0]]]), offsets=np.array([[1.0]]))
    cfg_x = np.array([1.0])
    end, _ = epoch_pass(p, cfg_x, 0.1, [0], base_method="seg")
    half = 1.0 - 0.1 * (2 * 1.0 + 1)
    expected = 1.0 - 0.1 * (2 * half + 1)
    assert end[0] == pytest.approx(expected, abs=1e-15)


def test_extrapolate_last_identities():
    v = np.array([1.0, -2.0, 3.0])
    np.testing.assert_allclose(extrapolate_last(v, v), v)
    x_star = np.array([0.5, 0.5])
    A = np.array([2.0, -1.0])
    g = 1e-3
    out = extrapolate_last(x_star + g * A, x_star + 2 * g * A)
    np.testing.assert_allclose(out, x_star, atol=1e-15)
    a = np.array([1.0, 2.0])
    b = np.array([3.0, -4.0])
    np.testing.assert_allclose(extrapolate_last(a, b), 2 * a - b)
    with pytest.raises(ParameterError):
        extrapolate_last(np.zeros(2), np.zeros(3))


def test_extrapolate_average_against_direct():
    rng = rng_for(3, 1, 5)
    xs_g = rng.standard_normal((5, 3))
    xs_2g = rng.standard_normal((5, 3))
    s_g = np.zeros(3)
    s_2g = np.zeros(3)
    for k in range(1, 6):
        s_g += xs_g[k - 1]
        s_2g += xs_2g[k - 1]
        got = extrapolate_average(s_g, s_2g, k)
        direct = np.mean([extrapolate_last(xs_g[m], xs_2g[m]) for m in range(k)], axis=0)
        np.testing.assert_allclose(got, direct, rtol=1e-12, atol=1e-14)
    with pytest.raises(ParameterError):
        extrapolate_average(s_g, s_2g, 0)


def test_extrapolate_average_constant_chains():
    a = np.array([1.0, 2.0])
    b = np.array([0.5, -1.0])
    for k in (1, 3, 7):
        np.testing.assert_allclose(extrapolate_average(k * a, k * b, k), 2 * a - b)


def test_extrapolated_series_first_epoch_matches_last():
    p = zero_offset_game(n=5, d=2, seed=3)
    cfg = RunConfig(gamma=1e-3, epochs=6, variant=RRROM_RRRESH, perturb=False,
                    x0=np.ones(p.d), seed=8)
    traj, companion = run_variant(p, cfg)
    last, avg = extrapolated_series(traj, companion)
    np.testing.assert_allclose(avg[1], last[1], rtol=1e-13)
    assert np.isnan(avg[0]).all()
    np.testing.assert_allclose(
        avg[3], np.mean(last[1:4], axis=0), rtol=1e-12, atol=1e-14)


def test_lockstep_matches_epoch_pass():
    p = generate_quadratic_game(QuadraticGameSpec(n=7, d=3, mu=1, L=2, seed=12))
    etas = np.array([1e-3, 2e-3])
    out = run_lockstep_chains(p, etas, epochs=4, seed=9)
    # replay with the generic single-chain path and the same permutation keys
    for row, eta in enumerate(etas):
        x = np.zeros(p.d)
        for k in range(4):
            perm = rng_for(9, 1, k).permutation(p.n)
            x, _ = epoch_pass(p, x, eta, perm)
        np.testing.assert_allclose(out[row], x, rtol=1e-12, atol=1e-14)


def test_run_config_validation():
    for bad in (RunConfig(gamma=0.0, epochs=1), RunConfig(gamma=1e-3, epochs=-1),
                RunConfig(gamma=1e-3, epochs=1, variant="nope"),
                RunConfig(gamma=1e-3, epochs=1, base_method="nope")):
        with pytest.raises(ParameterError):
            bad.validate()


def test_gamma_zero_rejected():
    with pytest.raises(ParameterError):
        run_variant(zero_offset_game(n=3, d=2), RunConfig(gamma=0.0, epochs=1))
