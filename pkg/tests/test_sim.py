import pytest
import numpy as np
from scipy import stats

from src.logic.model import LpvDelaySystem, JumpKernel, DelayLaw, InitialHistory
from src.logic.polymat import PolyMatrix
from src.logic import sim
from src.logic.sim import (
    SimConfig, HistoryBuffer, make_rng, sample_jump_time, sample_post_jump_param, integrate,
    trajectory_frame, mc_mean_square, mean_square_frame, common_grid, empirical_l2_gain,
)
from src.utils.errors import UsageError, ModelViolationError
from src.utils.expression import parse_expression


def _decaying(box, h=0.2):
    return LpvDelaySystem.from_constant(box, h, A=[[-1.0]])


def test_rng_streams_are_reproducible():
    a = make_rng(7, 3).random(5)
    b = make_rng(7, 3).random(5)
    c = make_rng(7, 4).random(5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_jump_times_are_exponential(box):
    kernel = JumpKernel.constant(2.0, box)
    rng = make_rng(1, 0)
    samples = np.array([sample_jump_time(0.3, kernel, rng) for _ in range(5000)])
    assert stats.kstest(samples, "expon", args=(0.0, 0.5)).pvalue > 0.01


def test_no_jumps_without_intensity(box, zero_kernel):
    assert sample_jump_time(0.5, zero_kernel, make_rng(0, 0)) == np.inf
    with pytest.raises(ModelViolationError):
        sample_post_jump_param(0.5, zero_kernel, make_rng(0, 0))


def test_post_jump_parameter_follows_kernel(box):
    # плотность θ равна 2θ на [0, 1], функция распределения θ²
    kernel = JumpKernel(PolyMatrix({(1, 0): [[2.0]]}), box)
    rng = make_rng(2, 0)
    samples = np.array([sample_post_jump_param(0.5, kernel, rng) for _ in range(3000)])
    assert samples.min() >= 0.0 and samples.max() <= 1.0
    assert stats.kstest(samples, lambda x: np.clip(x, 0.0, 1.0) ** 2).pvalue > 0.01


def test_history_buffer_interpolates():
    buf = HistoryBuffer(InitialHistory.constant([1.0]), h=1.0)
    np.testing.assert_allclose(buf.query(-0.5, 0.0, np.array([1.0])), [1.0])
    buf.append(1.0, np.array([2.0]))
    np.testing.assert_allclose(buf.query(0.5, 1.0, np.array([2.0])), [1.5])
    # за последним отсчётом интерполяция идёт к состоянию текущей стадии
    np.testing.assert_allclose(buf.query(1.5, 2.0, np.array([4.0])), [3.0])
    with pytest.raises(ModelViolationError):
        buf.query(-1.5, 1.0, np.array([2.0]))
    with pytest.raises(UsageError):
        buf.append(0.5, np.array([0.0]))


def test_history_buffer_trims_old_samples():
    buf = HistoryBuffer(InitialHistory.constant([0.0]), h=1.0, trim_every=2)
    for t in range(1, 6):
        buf.append(float(t), np.array([float(t)]))
    # окно длины h после отбрасывания сохраняется
    assert buf.span >= buf.h
    np.testing.assert_allclose(buf.query(4.5, 5.0, np.array([5.0])), [4.5])
    with pytest.raises(ModelViolationError):
        buf.query(0.5, 5.0, np.array([5.0]))


def test_integrator_matches_method_of_steps(box, zero_kernel):
    # ẋ = −x(t − 1), φ ≡ 1: x(1) = 0, x(2) = −1/2
    sys = LpvDelaySystem.from_constant(box, 1.0, A=[[0.0]], A_d=[[-1.0]])
    cfg = SimConfig(dt=0.01, horizon=2.0)
    traj = integrate(sys, DelayLaw.constant(1.0, 1.0), InitialHistory.constant([1.0]), zero_kernel, cfg)
    assert len(traj.times) == 201
    assert traj.states[100, 0] == pytest.approx(0.0, abs=1e-9)
    assert traj.states[-1, 0] == pytest.approx(-0.5, abs=1e-9)
    assert not traj.jumps


def test_state_is_continuous_across_jumps(box):
    sys = LpvDelaySystem.from_constant(box, 0.2, A=[[0.0]])
    cfg = SimConfig(dt=0.01, horizon=5.0, seed=3, rho0=0.5)
    traj = integrate(sys, DelayLaw.constant(0.1, 0.2), InitialHistory.constant([1.0]),
                     JumpKernel.constant(5.0, box), cfg)
    assert traj.jumps
    assert traj.jump_flags.sum() == len(traj.jumps)
    np.testing.assert_array_equal(traj.states[:, 0], 1.0)
    np.testing.assert_allclose(traj.times[~traj.jump_flags], common_grid(cfg))
    assert traj.params[0] == 0.5


def test_same_seed_same_trajectory(box):
    sys = _decaying(box)
    cfg = SimConfig(dt=0.01, horizon=3.0, seed=11)
    kernel = JumpKernel.constant(3.0, box)
    args = (sys, DelayLaw.constant(0.1, 0.2), InitialHistory.constant([1.0]), kernel, cfg)
    first, second = integrate(*args, run=2), integrate(*args, run=2)
    np.testing.assert_array_equal(first.states, second.states)
    np.testing.assert_array_equal(first.params, second.params)
    assert first.jumps != integrate(*args, run=3).jumps


def test_divergence_stops_the_run(box, zero_kernel):
    sys = LpvDelaySystem.from_constant(box, 0.5, A=[[5.0]])
    cfg = SimConfig(dt=0.01, horizon=20.0)
    traj = integrate(sys, DelayLaw.constant(0.0, 0.5), InitialHistory.constant([1.0]), zero_kernel, cfg)
    assert traj.diverged
    assert traj.times[-1] < 20.0


def test_step_guard(box, zero_kernel):
    cfg = SimConfig(dt=0.05, horizon=1.0)
    with pytest.raises(UsageError):
        integrate(_decaying(box), DelayLaw.constant(0.1, 0.2), InitialHistory.constant([1.0]), zero_kernel, cfg)


def test_delay_outside_bound_is_a_model_violation(box, zero_kernel):
    cfg = SimConfig(dt=0.01, horizon=1.0)
    with pytest.raises(ModelViolationError):
        integrate(_decaying(box), DelayLaw.constant(0.5, 0.2), InitialHistory.constant([1.0]), zero_kernel, cfg)


def test_trajectory_frame_columns(box, zero_kernel):
    sys = LpvDelaySystem.from_constant(box, 0.2, A=-np.eye(2), C=[[1.0, 1.0]])
    cfg = SimConfig(dt=0.01, horizon=0.05)
    traj = integrate(sys, DelayLaw.constant(0.1, 0.2), InitialHistory.constant([1.0, 0.0]), zero_kernel, cfg)
    frame = trajectory_frame(traj)
    assert list(frame.columns) == ["t", "x1", "x2", "rho", "tau", "z1", "jump"]
    assert len(frame) == 6


def test_mean_square_decays_and_ignores_worker_count(box):
    kernel = JumpKernel.constant(1.0, box)
    args = (_decaying(box), DelayLaw.constant(0.1, 0.2), InitialHistory.constant([1.0]), kernel)
    serial = mc_mean_square(*args, SimConfig(dt=0.01, horizon=12.0, seed=5, runs=4))
    pooled = mc_mean_square(*args, SimConfig(dt=0.01, horizon=12.0, seed=5, runs=4, workers=2))
    assert serial.decayed
    assert serial.initial == pytest.approx(1.0)
    np.testing.assert_array_equal(serial.mean_square, pooled.mean_square)
    assert list(mean_square_frame(serial).columns) == ["t", "mean_sq"]


def test_diverged_runs_count_as_infinite(box, zero_kernel):
    sys = LpvDelaySystem.from_constant(box, 0.5, A=[[5.0]])
    cfg = SimConfig(dt=0.01, horizon=10.0, runs=2)
    result = mc_mean_square(sys, DelayLaw.constant(0.0, 0.5), InitialHistory.constant([1.0]), zero_kernel, cfg)
    assert result.diverged_runs == 2
    assert np.isinf(result.final)
    assert not result.decayed


def test_l2_gain_of_direct_feedthrough(box, zero_kernel):
    # z = w, усиление ровно 1
    sys = LpvDelaySystem.from_constant(box, 0.2, A=[[-1.0]], E=[[1.0]], C=[[0.0]], F=[[1.0]])
    cfg = SimConfig(dt=0.01, horizon=4.0, runs=2, w_signal=parse_expression("H(t)-H(t-2)", ("t",)))
    gain = empirical_l2_gain(sys, DelayLaw.constant(0.1, 0.2), zero_kernel, cfg)
    assert gain == pytest.approx(1.0, abs=1e-9)


def test_l2_gain_needs_input_energy(box, zero_kernel):
    cfg = SimConfig(dt=0.01, horizon=1.0)
    with pytest.raises(UsageError):
        empirical_l2_gain(_decaying(box), DelayLaw.constant(0.1, 0.2), zero_kernel, cfg)


def test_jump_next_to_grid_point_merges_with_it(box, monkeypatch):
    gaps = iter([0.05 - 5e-13, np.inf])
    monkeypatch.setattr(sim, "sample_jump_time", lambda rho, kernel, rng: next(gaps))
    cfg = SimConfig(dt=0.01, horizon=0.1, rho0=0.5)
    traj = integrate(_decaying(box), DelayLaw.constant(0.1, 0.2), InitialHistory.constant([1.0]),
                     JumpKernel.constant(1.0, box), cfg)
    assert np.all(np.diff(traj.times) >= 0.0)
    assert len(traj.times) == cfg.steps + 1
    assert traj.jumps == [pytest.approx(0.05)]
    assert traj.jump_flags.sum() == 1
    assert traj.jump_flags[5]


def test_frozen_matrices_cache_is_bounded(box):
    flow = sim._Flow(_decaying(box), DelayLaw.constant(0.1, 0.2), lambda t: np.zeros(1))
    first = flow.at(0.5)
    assert flow.at(0.5) is first
    for rho in np.linspace(0.0, 1.0, 200):
        flow.at(float(rho))
    assert flow.at.cache_info().currsize <= sim._FLOW_CACHE_SIZE


def test_l2_gain_with_input_per_channel(box, zero_kernel):
    # z = w₁: по первому каналу усиление 1, при одинаковом сигнале в обоих каналах 1/√2
    sys = LpvDelaySystem.from_constant(box, 0.2, A=[[-1.0]], E=[[1.0, 1.0]], C=[[0.0]], F=[[1.0, 0.0]])
    pulse = parse_expression("H(t)-H(t-2)", ("t",))
    delay = DelayLaw.constant(0.1, 0.2)
    per_channel = SimConfig(dt=0.01, horizon=4.0, w_signal=(pulse, parse_expression("0", ("t",))))
    assert empirical_l2_gain(sys, delay, zero_kernel, per_channel) == pytest.approx(1.0, abs=1e-9)
    shared = SimConfig(dt=0.01, horizon=4.0, w_signal=pulse)
    assert empirical_l2_gain(sys, delay, zero_kernel, shared) == pytest.approx(np.sqrt(0.5), abs=1e-9)


def test_input_channel_count_must_match(box, zero_kernel):
    cfg = SimConfig(dt=0.01, horizon=1.0, w_signal=(parse_expression("H(t)", ("t",)),) * 3)
    sys = LpvDelaySystem.from_constant(box, 0.2, A=[[-1.0]], E=[[1.0, 1.0]])
    with pytest.raises(UsageError):
        integrate(sys, DelayLaw.constant(0.1, 0.2), InitialHistory.constant([1.0]), zero_kernel, cfg)
