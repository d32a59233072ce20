"""
Сквозные прогоны численных примеров на пресете fast. Медленные:
    pytest -m slow
"""
import logging

import pytest
import numpy as np

from src.commands.sweep import run_sweep
from src.commands.synthesize import recertify
from src.logic.analysis import build_thm1, build_thm2, min_gamma, check_feasible
from src.logic.data_loader import SystemLoader
from src.logic.model import JumpKernel, LpvDelaySystem
from src.logic.sdp import OPTIMAL
from src.logic.sim import SimConfig, mc_mean_square, empirical_l2_gain
from src.logic.synthesis import (
    build_thm3, build_prop1, build_prop2, solve_synthesis, recover_controller, close_loop,
)
from src.utils import experiments
from src.utils.constants import SYSTEMS_DIR
from src.utils.helpers import Settings

pytestmark = pytest.mark.slow


def _settings() -> Settings:
    return Settings.from_preset("fast").update(workers=1, use_cache=False)


@pytest.fixture(scope="module")
def synthesis_sweep():
    desc = SystemLoader(SYSTEMS_DIR / "example_synthesis.yaml").load()
    return run_sweep(desc, "lambda0", np.arange(1.0, 31.0), [3, 4], _settings())


@pytest.fixture(scope="module")
def closed_loop():
    settings = _settings()
    desc = SystemLoader(SYSTEMS_DIR / "example_synthesis.yaml").load()
    sys, kernel = desc.system, desc.kernel
    cert, _ = solve_synthesis(build_thm3(sys, kernel, sys.h, settings), settings)
    assert cert is not None
    return desc, settings, cert, recover_controller(cert, settings.cond_cap)


def test_thm1_less_conservative_along_h(analysis_desc, fast_settings):
    frame = run_sweep(analysis_desc.with_lambda0(10.0), "h", np.linspace(0.01, 0.25, 10), [1, 2], fast_settings)
    both = frame[(frame["feasible_thm1"] == 1) & (frame["feasible_thm2"] == 1)]
    assert len(both) > 0
    assert (both["gamma_thm1"] <= both["gamma_thm2"] + 1e-6).all()
    for col in ("gamma_thm1", "gamma_thm2"):
        gammas = frame[col].dropna().to_numpy()
        assert np.all(np.diff(gammas) >= -1e-6)


def test_gamma_nondecreasing_in_lambda0(analysis_desc, fast_settings):
    frame = run_sweep(analysis_desc.with_h(0.15), "lambda0", np.linspace(1.0, 30.0, 8), [1, 2], fast_settings)
    for thm in ("thm1", "thm2"):
        assert (frame[f"status_{thm}"] != "numerical-failure").all()
        gammas = frame[f"gamma_{thm}"].dropna().to_numpy()
        assert len(gammas) > 0
        assert np.all(np.diff(gammas) >= -1e-6)
    both = frame[(frame["feasible_thm1"] == 1) & (frame["feasible_thm2"] == 1)]
    assert (both["gamma_thm1"] <= both["gamma_thm2"] + 1e-6).all()


def test_thm4_feasibility_boundary(synthesis_sweep):
    assert (synthesis_sweep["status_thm4"] != "numerical-failure").all()
    feasible = synthesis_sweep["feasible_thm4"].to_numpy()
    # допустимые точки идут сплошным отрезком с начала перебора
    assert np.all(np.diff(feasible) <= 0)
    largest = synthesis_sweep["lambda0"][feasible == 1].max()
    assert 14 <= largest <= 20


def test_thm3_dominates_thm4(synthesis_sweep):
    assert synthesis_sweep["feasible_thm3"].iloc[-1] == 1
    both = synthesis_sweep[(synthesis_sweep["feasible_thm3"] == 1) & (synthesis_sweep["feasible_thm4"] == 1)]
    assert (both["gamma_thm3"] <= both["gamma_thm4"] + 1e-6).all()


def test_closed_loop_is_certified_and_decays(closed_loop):
    desc, settings, cert, ctrl = closed_loop
    sys, kernel = desc.system, desc.kernel
    analysis = recertify(close_loop(sys, ctrl), kernel, settings, None)
    assert analysis is not None
    assert analysis.gamma <= 1.10 * cert.gamma

    cfg = SimConfig(dt=sys.h / 20, horizon=20.0, seed=7, runs=100, w_signal=desc.w_signal)
    closed = mc_mean_square(sys, desc.delay, desc.initial, kernel, cfg, ctrl)
    assert closed.diverged_runs == 0
    assert closed.final < 1e-3 * closed.initial

    opened = mc_mean_square(sys, desc.delay, desc.initial, kernel, cfg)
    assert opened.diverged_runs >= 90


def test_empirical_gain_below_certificate(closed_loop):
    desc, _, cert, ctrl = closed_loop
    sys = desc.system
    cfg = SimConfig(dt=sys.h / 20, horizon=20.0, seed=11, runs=200, w_signal=desc.w_signal)
    assert empirical_l2_gain(sys, desc.delay, desc.kernel, cfg, ctrl) <= cert.gamma


SLACK_CASES = [(build_prop1, build_thm1, None), (build_prop2, build_thm2, 1.5)]


@pytest.mark.parametrize("slack, direct, lambda_hat", SLACK_CASES)
def test_slack_form_implies_direct_form(box, fast_settings, slack, direct, lambda_hat):
    rng = np.random.default_rng(17)
    kernel = JumpKernel.constant(1.0, box)
    extra = () if lambda_hat is None else (lambda_hat,)
    checked = 0
    for _ in range(20):
        A = rng.uniform(-2.0, 2.0, (2, 2))
        # сдвиг спектра влево делает задачу допустимой
        A -= (np.max(np.linalg.eigvals(A).real) + 2.0) * np.eye(2)
        sys = LpvDelaySystem.from_constant(box, 0.05, A=A, A_d=rng.uniform(-0.2, 0.2, (2, 2)),
                                           E=[[1.0], [0.0]], C=[[1.0, 0.0]])
        cert0, _ = min_gamma(slack(sys, kernel, sys.h, *extra, fast_settings), fast_settings)
        if cert0 is None:
            continue
        checked += 1
        prog = direct(sys, kernel, sys.h, *extra, fast_settings)
        assert check_feasible(prog, cert0.gamma * (1 + 1e-6), fast_settings).status == OPTIMAL
    assert checked > 0


def test_experiment_runner(tmp_path, caplog):
    with caplog.at_level(logging.INFO):
        code = experiments.main(["openloop", "--preset", "fast", "--workers", "1", "--out", str(tmp_path)])
    assert code == 0
    assert (tmp_path / "openloop_mean_square.csv").exists()
    assert (tmp_path / "openloop_trajectory.csv").exists()
    messages = [r.getMessage() for r in caplog.records if r.name == experiments.__name__]
    assert any(m.startswith("[DONE] open loop") for m in messages)
    # уровень печатает форматтер, в самом сообщении его нет
    assert not any(m.startswith(("[INFO]", "[ERROR]")) for m in messages)
