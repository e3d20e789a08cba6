import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crac.penalty import PHR, phr_derivative
from crac.scheduler import (
    Accumulated,
    BatchStats,
    DivergenceError,
    SchedulerState,
    ToyProblem,
    accumulate_validation,
    batch_statistics,
    kkt_toy,
    outer_step,
    solve_toy,
    update_multipliers,
    update_rho,
    violation_measure,
)


def stream_for(z_batches, regions_batches, state):
    """Batch stats for logits = prior - z so that tau - l equals z."""
    out = []
    for z, regions in zip(z_batches, regions_batches):
        prior = np.zeros_like(z)
        out.append(batch_statistics(prior - z, prior, regions, state))
    return out


def random_regions(rng, n=3, h=6, w=6):
    r = rng.integers(0, 2, (n, h, w)).astype(np.uint8)
    r[0, 0, 0], r[0, 0, 1] = 0, 1  # both regions present
    return r


# --- multiplier dynamics ----------------------------------------------------------


def test_positive_violations_raise_every_multiplier():
    rng = np.random.default_rng(0)
    state = SchedulerState.initial((4, 2), lam0=0.5, rho0=2.0)
    regions = [random_regions(rng) for _ in range(3)]
    z = [rng.uniform(0.01, 3, (3, 4, 6, 6)) for _ in range(3)]
    new = update_multipliers(state, accumulate_validation(state, stream_for(z, regions, state)))
    assert np.all(new.lam > state.lam)


def test_fully_satisfied_constraints_drop_multipliers_to_floor():
    rng = np.random.default_rng(1)
    state = SchedulerState.initial((4, 2), lam0=0.5, rho0=2.0)
    regions = [random_regions(rng) for _ in range(2)]
    # lam + rho z < 0  <=>  z < -0.25
    z = [rng.uniform(-5, -0.3, (3, 4, 6, 6)) for _ in range(2)]
    new = update_multipliers(state, accumulate_validation(state, stream_for(z, regions, state)))
    assert np.all(new.lam == state.lam_min)


def test_zero_violation_keeps_multipliers():
    rng = np.random.default_rng(2)
    state = SchedulerState.initial((4, 2), lam0=0.37, rho0=3.0)
    state = SchedulerState(rng.uniform(0.1, 5, (4, 2)), state.rho, state.prev_violation)
    regions = [random_regions(rng) for _ in range(2)]
    z = [np.zeros((3, 4, 6, 6)) for _ in range(2)]
    new = update_multipliers(state, accumulate_validation(state, stream_for(z, regions, state)))
    assert np.array_equal(new.lam, state.lam)
    assert new.epoch == state.epoch + 1


def test_multipliers_are_clamped_and_empty_cells_carry_over():
    state = SchedulerState.initial((2, 2), lam_max=5.0)
    acc = Accumulated(np.array([[100.0, np.nan], [0.0, 1.0]]), np.zeros((2, 2)), np.array([[4, 0], [4, 4]]))
    new = update_multipliers(state, acc)
    np.testing.assert_array_equal(new.lam, [[5.0, 0.1], [1e-6, 1.0]])
    with pytest.raises(FloatingPointError):
        update_multipliers(state, Accumulated(np.full((2, 2), np.inf), np.zeros((2, 2)), np.ones((2, 2), int)))


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 10), st.floats(0.01, 10), st.floats(1e-3, 5), st.floats(1e-3, 5))
def test_update_is_order_preserving_in_lambda(lam_a, lam_b, rho, z):
    lo, hi = sorted((lam_a, lam_b))
    d_lo = float(PHR.derivative(z, rho, lo))
    d_hi = float(PHR.derivative(z, rho, hi))
    assert d_lo <= d_hi


# --- accumulation -------------------------------------------------------------------


def test_weighted_mean_of_two_batches():
    state = SchedulerState.initial((1, 1))
    s1 = BatchStats(np.array([[1.0]]), np.array([[2.0]]), np.array([[10]]))
    s2 = BatchStats(np.array([[3.0]]), np.array([[4.0]]), np.array([[30]]))
    acc = accumulate_validation(state, [s1, s2])
    assert acc.mean_derivative[0, 0] == 2.5 and acc.mean_violation[0, 0] == 3.5
    same = accumulate_validation(state, [s1, s1])
    assert same.mean_derivative[0, 0] == 1.0


def test_empty_stream_gives_nan_and_zero_counts():
    state = SchedulerState.initial((3, 2))
    acc = accumulate_validation(state, [])
    assert np.isnan(acc.mean_derivative).all() and (acc.count == 0).all()
    assert np.array_equal(update_multipliers(state, acc).lam, state.lam)


@pytest.mark.parametrize("seed", range(5))
def test_stream_matches_flat_single_pass(seed):
    rng = np.random.default_rng(seed)
    k = 3
    state = SchedulerState(rng.uniform(0.1, 2, (k, 2)), rng.uniform(0.1, 2, (k, 2)), np.full((k, 2), np.nan))
    logits = rng.normal(scale=3, size=(7, k, 5, 5))
    prior = rng.integers(0, 10, (7, k, 5, 5)).astype(float)
    regions = rng.integers(0, 2, (7, 5, 5)).astype(np.uint8)
    cuts = [0, 2, 3, 7]
    stream = [batch_statistics(logits[a:b], prior[a:b], regions[a:b], state) for a, b in zip(cuts, cuts[1:])]
    acc = accumulate_validation(state, stream)
    for c in range(k):
        for r in range(2):
            mask = regions == r
            z = (prior[:, c] - logits[:, c])[mask]
            assert acc.count[c, r] == mask.sum()
            assert acc.mean_derivative[c, r] == pytest.approx(phr_derivative(z, state.rho[c, r], state.lam[c, r]).mean(), abs=1e-12)
            assert acc.mean_violation[c, r] == pytest.approx(np.abs(z).mean(), abs=1e-12)
    # order-insensitive merge
    rev = accumulate_validation(state, stream[::-1])
    np.testing.assert_allclose(rev.mean_derivative, acc.mean_derivative, rtol=0, atol=1e-12)


def test_violation_measures():
    z = np.array([-2.0, 0.0, 3.0])
    np.testing.assert_array_equal(violation_measure(z, z, "positive"), [0.0, 0.0, 3.0])
    np.testing.assert_array_equal(violation_measure(z, z, "absolute"), [2.0, 0.0, 3.0])
    with pytest.raises(ValueError):
        violation_measure(z, z, "squared")


def test_positive_measure_matches_loop():
    rng = np.random.default_rng(11)
    state = SchedulerState.initial((2, 2))
    logits = rng.normal(size=(2, 2, 4, 4))
    prior = rng.integers(0, 10, (2, 2, 4, 4)).astype(float)
    regions = rng.integers(0, 2, (2, 4, 4)).astype(np.uint8)
    acc = accumulate_validation(state, [batch_statistics(logits, prior, regions, state, measure="positive")])
    for c in range(2):
        for r in range(2):
            z = (prior[:, c] - logits[:, c])[regions == r]
            assert acc.mean_violation[c, r] == pytest.approx(np.maximum(z, 0).mean(), abs=1e-12)


# --- penalty parameters ---------------------------------------------------------------


def acc_with(violation):
    v = np.asarray(violation, float)
    return Accumulated(np.ones_like(v), v, np.ones(v.shape, int))


def test_rho_grows_exactly_by_gamma_on_insufficient_decrease():
    s = SchedulerState.initial((1, 3), rho0=1.5, gamma=1.2, mu=0.9)
    s = update_rho(s, acc_with([[1.0, 1.0, 1.0]]))  # first epoch: no previous value
    assert np.array_equal(s.rho, np.full((1, 3), 1.5))
    s2 = update_rho(s, acc_with([[1.0, 0.5, 0.9]]))
    assert s2.rho[0, 0] == 1.2 * 1.5
    assert s2.rho[0, 1] == 1.5 and s2.rho[0, 2] == 1.5  # 0.9 is not > 0.9
    np.testing.assert_array_equal(s2.prev_violation, [[1.0, 0.5, 0.9]])


def test_unit_gamma_freezes_rho():
    s = SchedulerState.initial((2, 2), gamma=1.0)
    for v in ([[1, 2], [3, 4]], [[5, 6], [7, 8]], [[9, 9], [9, 9]]):
        s = update_rho(s, acc_with(v))
    assert np.array_equal(s.rho, np.ones((2, 2)))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.lists(st.floats(0, 10), min_size=4, max_size=4), min_size=1, max_size=15))
def test_rho_trajectory_is_monotone_and_exact(history):
    s = SchedulerState.initial((2, 2))
    prev = None
    for v in history:
        v = np.array(v).reshape(2, 2)
        new = outer_step(s, acc_with(v))
        assert np.all(new.rho >= s.rho)
        if prev is not None:
            grow = v > s.mu * prev
            np.testing.assert_array_equal(new.rho, np.where(grow, s.gamma * s.rho, s.rho))
        s, prev = new, v


def test_state_validation_and_serialisation():
    with pytest.raises(ValueError):
        SchedulerState.initial(gamma=0.5)
    with pytest.raises(ValueError):
        SchedulerState.initial(mu=0.0)
    with pytest.raises(ValueError):
        SchedulerState.initial(rho0=0.0)
    s = outer_step(SchedulerState.initial((3, 2)), acc_with(np.arange(6.0).reshape(3, 2)))
    back = SchedulerState.from_tensors(s.to_tensors())
    for a in ("lam", "rho", "prev_violation"):
        np.testing.assert_array_equal(getattr(back, a), getattr(s, a))
    assert back.epoch == 1 and back.gamma == s.gamma


def test_replay_determinism():
    rng = np.random.default_rng(9)
    accs = [Accumulated(rng.uniform(0, 3, (2, 2)), rng.uniform(0, 3, (2, 2)), np.ones((2, 2), int)) for _ in range(10)]

    def run():
        s = SchedulerState.initial((2, 2))
        for a in accs:
            s = outer_step(s, a)
        return s

    a, b = run(), run()
    assert a.lam.tobytes() == b.lam.tobytes() and a.rho.tobytes() == b.rho.tobytes()


# --- toy problems --------------------------------------------------------------------


def test_active_constraint_reaches_kkt_point():
    res = solve_toy(kkt_toy(1.0, 2.0), [0.0])
    assert abs(res.x[0] - 1.0) <= 1e-3
    assert abs(res.lam[0] - 2.0) <= 0.1
    assert res.max_violation(kkt_toy(1.0, 2.0)) <= 1e-3


def test_inactive_constraint_multiplier_hits_floor():
    res = solve_toy(kkt_toy(3.0, 2.0), [0.0])
    assert abs(res.x[0] - 2.0) <= 1e-3
    assert res.lam[0] == res.state.lam_min


def test_boundary_optimum_with_zero_multiplier():
    prob = ToyProblem(lambda x: float(x[0] ** 2), lambda x: 2 * x, [lambda x: x[0]], [lambda x: np.array([1.0])])
    res = solve_toy(prob, [1.0])
    assert abs(res.x[0]) <= 1e-3
    assert res.lam[0] <= 1e-3


def test_two_constraints():
    # min (x-2)^2 + (y-2)^2 s.t. x <= 1, y <= 0.5 -> lambdas 2 and 3
    prob = ToyProblem(
        lambda x: float(np.sum((x - 2) ** 2)),
        lambda x: 2 * (x - 2),
        [lambda x: x[0] - 1, lambda x: x[1] - 0.5],
        [lambda x: np.array([1.0, 0.0]), lambda x: np.array([0.0, 1.0])],
    )
    res = solve_toy(prob, [0.0, 0.0])
    np.testing.assert_allclose(res.x, [1.0, 0.5], atol=1e-3)
    np.testing.assert_allclose(res.lam, [2.0, 3.0], atol=0.1)


def test_divergence_is_reported():
    prob = ToyProblem(lambda x: float(-(x[0] ** 4)), lambda x: -4 * x**3, [lambda x: x[0] - 100], [lambda x: np.array([1.0])])
    with pytest.raises(DivergenceError), np.errstate(over="ignore", invalid="ignore"):
        solve_toy(prob, [3.0], inner_steps=200, outer_iters=2)
