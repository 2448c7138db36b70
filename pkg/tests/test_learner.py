import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from dhs_rl.errors import (
    DestabilizingUpdate,
    IterationCapExceeded,
    NotContractive,
    NotStabilizable,
    RankDeficient,
    SingularBlock,
    ZeroReference,
)
from dhs_rl.learner import (
    DataBatch,
    ProbingNoiseConfig,
    QMatrix,
    check_pe,
    collect_batch,
    estimate_theta,
    estimate_transition,
    gain_distance,
    improve_policy,
    initial_controller,
    minimum_sinusoids,
    probing_noise,
    required_samples,
    run_policy_iteration,
    scalar_regression,
)
from dhs_rl.numerics import (
    hankel,
    matrix_rank,
    solve_discrete_lyapunov,
    solve_lqr,
    spectral_radius,
)


def optimal(aug):
    return solve_lqr(aug.A_eps, aug.B_eps, aug.Q_eps, aug.N_eps, aug.R_eps)


def desk_noise(aug, **kw):
    return ProbingNoiseConfig.for_system(aug.n, aug.m, seed=3, **kw)


def perturbed_stabilizing(aug, K, rng, scale=0.1):
    while True:
        K2 = K + scale * rng.normal(size=K.shape)
        if spectral_radius(aug.closed_loop(K2)) < 0.98:
            return K2


# --- probing noise ----------------------------------------------------------------

def test_noise_single_sinusoid_value():
    cfg = ProbingNoiseConfig(1, 1, amplitude=1.0, decay=1.0, freq_low=math.pi / 4,
                             freq_high=math.pi / 4, random_phases=False)
    assert probing_noise(cfg, 2)[0] == pytest.approx(1.0, abs=1e-15)


def test_noise_zero_amplitude_and_decay():
    cfg = ProbingNoiseConfig(3, 2, amplitude=0.0)
    assert not probing_noise(cfg, 17).any()
    assert not cfg.disabled().amplitude
    live = ProbingNoiseConfig(2, 2, amplitude=1.0, decay=0.5, seed=1)
    base = np.sin(live.frequencies * 3 + live.phases).sum(axis=1)
    np.testing.assert_allclose(probing_noise(live, 3), 0.125 * base, rtol=1e-15)


def test_noise_deterministic_and_distinct_frequencies():
    a = ProbingNoiseConfig(3, 4, seed=5)
    b = ProbingNoiseConfig(3, 4, seed=5)
    np.testing.assert_array_equal(a.phases, b.phases)
    assert len(np.unique(a.frequencies)) == 12
    assert not np.array_equal(a.phases, ProbingNoiseConfig(3, 4, seed=6).phases)


def test_noise_config_validation():
    with pytest.raises(ValueError):
        ProbingNoiseConfig(0, 1)
    with pytest.raises(ValueError):
        ProbingNoiseConfig(1, 1, decay=1.5)
    with pytest.raises(ValueError):
        ProbingNoiseConfig(1, 1, amplitude=-1.0)


@pytest.mark.parametrize("n, m", [(2, 1), (6, 3), (8, 4)])
def test_noise_sequence_exciting_of_order_n_plus_one(n, m):
    cfg = ProbingNoiseConfig.for_system(n, m, seed=2)
    assert cfg.num_sinusoids == minimum_sinusoids(n)
    N = required_samples(n, m)
    u = np.array([probing_noise(cfg, k) for k in range(1, N + 1)])
    H = hankel(u, n + 1)
    assert H.shape == (m * (n + 1), N - n)
    assert matrix_rank(H) == m * (n + 1)


def test_required_samples():
    assert required_samples(22, 11) == 275
    assert required_samples(2, 1) == 5
    assert required_samples(6, 3) == 27
    with pytest.raises(ValueError):
        required_samples(0, 1)


# --- batches and rank -------------------------------------------------------------

def test_zero_noise_from_rest_is_rank_deficient(desk_aug, linear_handle):
    _, K = optimal(desk_aug)
    plant = linear_handle(desk_aug, np.zeros(desk_aug.n))
    batch = collect_batch(plant, K, desk_noise(desk_aug).disabled(), 27)
    with pytest.raises(RankDeficient) as info:
        check_pe(batch)
    assert info.value.rank == 0 and info.value.required == 9


def test_excited_batch_has_full_rank_and_duplicates_do_not_help(desk_aug, linear_handle):
    _, K = optimal(desk_aug)
    plant = linear_handle(desk_aug, np.zeros(desk_aug.n))
    noise = desk_noise(desk_aug)
    plant.advance(np.zeros(desk_aug.m))
    batch = collect_batch(plant, K, noise, 27)
    rep = check_pe(batch)
    assert rep.ok and rep.rank == 9
    short = DataBatch(batch.Z[:, :4], batch.Zeta[:, :4], K)
    doubled = DataBatch(np.hstack([short.Z] * 3), np.hstack([short.Zeta] * 3), K)
    assert matrix_rank(doubled.Z) == matrix_rank(short.Z) == 4


def test_successor_columns_follow_policy_transition(desk_aug, linear_handle):
    _, K = optimal(desk_aug)
    plant = linear_handle(desk_aug, np.ones(desk_aug.n))
    batch = collect_batch(plant, K, desk_noise(desk_aug), 27)
    np.testing.assert_allclose(batch.Zeta, desk_aug.phi(K) @ batch.Z, atol=1e-12)
    np.testing.assert_allclose(estimate_transition(batch), desk_aug.phi(K), atol=1e-9)


def test_batch_extend_requires_same_gain():
    K = np.zeros((1, 2))
    a = DataBatch(np.ones((3, 2)), np.ones((3, 2)), K, start=4)
    merged = a.extend(DataBatch(np.zeros((3, 1)), np.zeros((3, 1)), K))
    assert merged.size == 3 and merged.start == 4
    with pytest.raises(ValueError):
        a.extend(DataBatch(np.zeros((3, 1)), np.zeros((3, 1)), K + 1))
    both = DataBatch.concatenate([a, DataBatch(np.zeros((3, 1)), np.zeros((3, 1)), K + 1)])
    assert both.size == 3 and np.array_equal(both.K, K + 1)


# --- estimation -------------------------------------------------------------------

def test_theta_matches_model_for_random_stabilizing_gains(desk_aug, linear_handle):
    rng = np.random.default_rng(0)
    _, K_opt = optimal(desk_aug)
    noise = desk_noise(desk_aug)
    for _ in range(10):
        K = perturbed_stabilizing(desk_aug, K_opt, rng)
        plant = linear_handle(desk_aug, rng.normal(size=desk_aug.n))
        batch = collect_batch(plant, K, noise, 27)
        theta = estimate_theta(batch, desk_aug.Qbar)
        model = desk_aug.q_matrix(K)
        assert np.linalg.norm(theta.Theta - model) <= 1e-8 * np.linalg.norm(model)
        np.testing.assert_array_equal(theta.Theta, theta.Theta.T)
        assert np.linalg.eigvalsh(theta.Theta).min() > 0
        assert np.linalg.eigvalsh(theta.Theta_uu).min() > 0


def test_estimated_transition_spectrum(desk_aug, linear_handle):
    """eig(phi) = eig(A - B K) together with m zeros."""
    _, K_opt = optimal(desk_aug)
    K = perturbed_stabilizing(desk_aug, K_opt, np.random.default_rng(8))
    plant = linear_handle(desk_aug, np.ones(desk_aug.n))
    phi = estimate_transition(collect_batch(plant, K, desk_noise(desk_aug), 27))
    got = np.sort_complex(np.linalg.eigvals(phi))
    want = np.sort_complex(np.concatenate([np.linalg.eigvals(desk_aug.closed_loop(K)),
                                           np.zeros(desk_aug.m)]))
    # zero eigenvalues of a defective block are only recovered to sqrt precision
    np.testing.assert_allclose(np.abs(got), np.abs(want), atol=1e-6)
    nonzero = np.abs(want) > 1e-3
    np.testing.assert_allclose(np.sort(np.abs(got))[-nonzero.sum():],
                               np.sort(np.abs(want[nonzero])), atol=1e-8)


def test_scalar_ls_agrees_with_matrix_method(desk_aug, linear_handle):
    _, K_opt = optimal(desk_aug)
    K = perturbed_stabilizing(desk_aug, K_opt, np.random.default_rng(1))
    d = desk_aug.n + desk_aug.m
    plant = linear_handle(desk_aug, np.ones(desk_aug.n))
    # the symmetric regression needs d (d + 1) / 2 informative samples
    batch = collect_batch(plant, K, desk_noise(desk_aug, amplitude=0.5), 2 * d * (d + 1))
    a = estimate_theta(batch, desk_aug.Qbar, method="matrix").Theta
    b = estimate_theta(batch, desk_aug.Qbar, method="scalar-ls").Theta
    assert np.linalg.norm(a - b) <= 1e-8 * np.linalg.norm(a)
    Phi, c = scalar_regression(batch, desk_aug.Qbar)
    assert Phi.shape == (batch.size, d * (d + 1) // 2) and c.shape == (batch.size,)


def test_scalar_ls_with_minimal_batch_is_rank_deficient(desk_aug, linear_handle):
    _, K = optimal(desk_aug)
    plant = linear_handle(desk_aug, np.ones(desk_aug.n))
    batch = collect_batch(plant, K, desk_noise(desk_aug), 27)
    with pytest.raises(RankDeficient):
        estimate_theta(batch, desk_aug.Qbar, method="scalar-ls")
    with pytest.raises(ValueError):
        estimate_theta(batch, desk_aug.Qbar, method="bogus")


def test_unstable_policy_data_is_not_contractive(desk_aug, linear_handle):
    K = np.zeros((desk_aug.m, desk_aug.n))  # A_eps has eigenvalues at 1
    plant = linear_handle(desk_aug, np.ones(desk_aug.n))
    batch = collect_batch(plant, K, desk_noise(desk_aug, amplitude=1.0), 27)
    with pytest.raises(NotContractive):
        estimate_theta(batch, desk_aug.Qbar)


# --- improvement ------------------------------------------------------------------

def test_improve_policy_examples():
    theta = QMatrix(np.diag([2.0, 3.0, 4.0]), 2)
    assert not improve_policy(theta).any()
    hand = QMatrix(np.array([[5.0, 1.0, 2.0], [1.0, 3.0, -1.0], [2.0, -1.0, 4.0]]), 2)
    np.testing.assert_allclose(improve_policy(hand), [[0.5, -0.25]])
    with pytest.raises(SingularBlock):
        improve_policy(QMatrix(np.diag([1.0, 1.0, 0.0]), 2))
    with pytest.raises(TypeError):
        improve_policy(np.eye(3))


def test_improve_policy_rejects_destabilizing_gain():
    # scalar plant x+ = 2 x + u; K = 0.5 leaves the pole at 1.5
    theta = QMatrix(np.array([[1.0, 0.5], [0.5, 1.0]]), 1)
    with pytest.raises(DestabilizingUpdate):
        improve_policy(theta, model=(np.array([[2.0]]), np.array([[1.0]])))


def test_optimal_q_matrix_is_a_fixed_point(desk_aug, linear_handle):
    P, K = optimal(desk_aug)
    theta_star = desk_aug.theta_from_value(P)
    np.testing.assert_allclose(improve_policy(QMatrix(theta_star, desk_aug.n)), K, atol=1e-12)
    plant = linear_handle(desk_aug, np.ones(desk_aug.n))
    batch = collect_batch(plant, K, desk_noise(desk_aug), 27)
    K_next = improve_policy(estimate_theta(batch, desk_aug.Qbar))
    assert gain_distance(K_next, K) < 1e-9


# --- policy iteration -------------------------------------------------------------

def test_policy_iteration_converges_to_riccati_gain(desk_aug, linear_handle):
    _, K_star = optimal(desk_aug)
    K0 = perturbed_stabilizing(desk_aug, K_star, np.random.default_rng(4), 0.3)
    plant = linear_handle(desk_aug, np.ones(desk_aug.n))
    model = (desk_aug.A_eps, desk_aug.B_eps)
    res = run_policy_iteration(plant, K0, desk_aug.Qbar, desk_noise(desk_aug), eps=1e-12,
                               K_ref=K_star, model=model)
    assert res.converged
    np.testing.assert_allclose(res.K, K_star, atol=1e-10)
    assert res.iterations <= 10
    assert len(res.batches) == res.iterations
    for rec in res.records:
        assert rec.spectral_radius < 1
        assert rec.samples == 27
    values = [r.value for r in res.records]
    for a, b in zip(values, values[1:]):
        assert np.linalg.eigvalsh(a - b).min() >= -1e-8


def test_policy_iteration_from_optimum_takes_one_step(desk_aug, linear_handle):
    _, K_star = optimal(desk_aug)
    plant = linear_handle(desk_aug, np.ones(desk_aug.n))
    res = run_policy_iteration(plant, K_star, desk_aug.Qbar, desk_noise(desk_aug))
    assert res.iterations == 1 and res.converged


def test_policy_iteration_refuses_unstable_seed(desk_aug, linear_handle):
    plant = linear_handle(desk_aug, np.ones(desk_aug.n))
    K = np.zeros((desk_aug.m, desk_aug.n))
    with pytest.raises(NotStabilizable):
        run_policy_iteration(plant, K, desk_aug.Qbar, desk_noise(desk_aug),
                             model=(desk_aug.A_eps, desk_aug.B_eps))
    assert plant.k == 0


def test_policy_iteration_cap_carries_partial_result(desk_aug, linear_handle):
    _, K_star = optimal(desk_aug)
    K0 = perturbed_stabilizing(desk_aug, K_star, np.random.default_rng(2), 0.3)
    plant = linear_handle(desk_aug, np.ones(desk_aug.n))
    with pytest.raises(IterationCapExceeded) as info:
        run_policy_iteration(plant, K0, desk_aug.Qbar, desk_noise(desk_aug), eps=0.0,
                             max_iter=2)
    assert len(info.value.result.records) == 2
    assert not info.value.result.converged


def test_policy_iteration_extends_weak_batches(desk_aug, linear_handle):
    _, K_star = optimal(desk_aug)
    plant = linear_handle(desk_aug, np.ones(desk_aug.n))
    res = run_policy_iteration(plant, K_star, desk_aug.Qbar,
                               desk_noise(desk_aug, amplitude=0.5), method="scalar-ls",
                               max_chunks=20)
    assert res.records[0].samples > 27
    assert res.records[0].samples % 27 == 0


def test_initial_controller_is_nominal_lqr(desk_aug):
    np.testing.assert_allclose(initial_controller(desk_aug), optimal(desk_aug)[1])


def test_gain_distance():
    K = np.array([[1.0, -2.0], [0.5, 3.0]])
    assert gain_distance(K, K) == 0.0
    assert gain_distance(2 * K, K) == pytest.approx(1.0)
    with pytest.raises(ZeroReference):
        gain_distance(K, np.zeros_like(K))


@settings(max_examples=25, deadline=None,
          suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(seed=st.integers(0, 10_000))
def test_estimated_theta_property(linear_handle, seed):
    """Random small plants: data-based Theta equals the Lyapunov solution."""
    rng = np.random.default_rng(seed)
    n, m = 3, 2
    A = rng.normal(size=(n, n)) * 0.5
    B = rng.normal(size=(n, m))
    H = rng.normal(size=(n + m, n + m))
    Qbar = H @ H.T + np.eye(n + m)
    _, K = solve_lqr(A, B, Qbar[:n, :n], Qbar[:n, n:], Qbar[n:, n:])

    class Aug:
        def step(self, eps, du, w=0.0):
            return A @ eps + B @ du

    plant = linear_handle(Aug(), rng.normal(size=n))
    noise = ProbingNoiseConfig.for_system(n, m, seed=seed, amplitude=0.3)
    batch = collect_batch(plant, K, noise, required_samples(n, m))
    theta = estimate_theta(batch, Qbar).Theta
    top = np.hstack([A, B])
    phi = np.vstack([top, -K @ top])
    model = solve_discrete_lyapunov(phi, Qbar)
    assert np.linalg.norm(theta - model) <= 1e-8 * np.linalg.norm(model)
