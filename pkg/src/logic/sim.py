import bisect
import logging
import functools
import numpy as np
import pandas as pd
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Sequence, Tuple
from scipy.integrate import trapezoid

from src.logic.model import LpvDelaySystem, JumpKernel, DelayLaw, InitialHistory
from src.logic.synthesis import Controller, close_loop
from src.utils.constants import ENVELOPE_FACTOR, MAX_REJECTIONS, DIVERGENCE_NORM
from src.utils.errors import ModelViolationError, EnvelopeError, UsageError
from src.utils.expression import Expression
from src.utils.helpers import validate_sim_settings

logger = logging.getLogger(__name__)

_BATCH = 64
_TIME_EPS = 1e-12
_FLOW_CACHE_SIZE = 32


@dataclass(frozen=True)
class SimConfig:
    """
    Параметры моделирования. rho0 = None означает равномерный выбор начального
    параметра на 𝓑 из потока данного прогона. w_signal: одно выражение от t
    (одинаково во всех каналах w) или по выражению на каждый канал.
    """
    dt: float
    horizon: float
    seed: int = 0
    runs: int = 1
    w_signal: Expression | Tuple[Expression, ...] | None = None
    rho0: float | None = None
    workers: int = 1

    def check(self, h: float) -> None:
        errors = validate_sim_settings(self.dt, self.horizon, self.runs, h)
        if errors:
            raise UsageError("; ".join(errors))

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.dt))


def make_rng(seed: int, run: int) -> np.random.Generator:
    """Счётный генератор Philox; поток прогона выводится из пары (seed, run)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(run)])))


# ------------------------------------------------------------------ jumps

def sample_jump_time(rho: float, kernel: JumpKernel, rng: np.random.Generator) -> float:
    """Время до следующего скачка ~ Exp(λ̄(ρ)); +∞ при нулевой интенсивности."""
    rate = kernel.intensity(rho)
    if rate < 0:
        raise ModelViolationError(f"negative jump intensity {rate:.6g} at rho={rho:.6g}")
    if rate == 0:
        return np.inf
    return float(rng.exponential(1.0 / rate))


def sample_post_jump_param(rho: float, kernel: JumpKernel, rng: np.random.Generator) -> float:
    """
    Новое значение θ с плотностью λ(θ, ρ)/λ̄(ρ): отбор с равномерным
    предложением на 𝓑 и огибающей lambda_max·ENVELOPE_FACTOR.
    """
    rate = kernel.intensity(rho)
    if rate <= 0:
        raise ModelViolationError(f"no jumps possible from rho={rho:.6g} (intensity {rate:.6g})")
    envelope = ENVELOPE_FACTOR * kernel.lambda_max
    lo, hi = kernel.box.lo, kernel.box.hi
    rejected = 0
    while rejected < MAX_REJECTIONS:
        theta = rng.uniform(lo, hi, _BATCH)
        u = rng.uniform(0.0, envelope, _BATCH)
        density = kernel.lam.eval_grid(theta=theta, rho=np.full(_BATCH, rho))[:, 0, 0]
        accepted = np.flatnonzero(u <= density)
        if accepted.size:
            return float(theta[accepted[0]])
        rejected += _BATCH
    raise EnvelopeError(f"more than {MAX_REJECTIONS} consecutive rejections at rho={rho:.6g}")


# ---------------------------------------------------------------- history

class HistoryBuffer:
    """
    Отсчёты (t, x) для t > 0 плюс начальная функция φ на [−h, 0].
    Хранит не меньше чем окно длины h; старые отсчёты отбрасываются пачками.
    """

    def __init__(self, phi: InitialHistory, h: float, trim_every: int = 4096) -> None:
        self.phi = phi
        self.h = h
        self.trim_every = trim_every
        self._t: List[float] = [0.0]
        self._x: List[np.ndarray] = [phi(0.0)]

    @property
    def span(self) -> float:
        return self._t[-1] - self._t[0]

    @property
    def last(self) -> Tuple[float, np.ndarray]:
        return self._t[-1], self._x[-1]

    def append(self, t: float, x: np.ndarray) -> None:
        if t < self._t[-1]:
            raise UsageError(f"history times must be monotone: {t} after {self._t[-1]}")
        self._t.append(t)
        self._x.append(x)
        if len(self._t) > 2 * self.trim_every:
            cut = bisect.bisect_left(self._t, t - self.h) - 1
            if cut > self.trim_every:
                del self._t[:cut]
                del self._x[:cut]

    def query(self, t: float, t_stage: float, x_stage: np.ndarray) -> np.ndarray:
        """
        x(t) по линейной интерполяции. Запрос за последним отсчётом
        интерполируется к текущему состоянию стадии (t_stage, x_stage).
        """
        if t < -self.h - _TIME_EPS:
            raise ModelViolationError(f"delayed argument {t:.6g} precedes the history start {-self.h:.6g}")
        if t <= 0.0 and (len(self._t) == 1 or t < self._t[0]):
            return self.phi(min(t, 0.0))
        if t < self._t[0]:
            raise ModelViolationError(f"delayed argument {t:.6g} was trimmed from the history")
        t_last, x_last = self._t[-1], self._x[-1]
        if t >= t_last:
            if t_stage <= t_last:
                return x_last
            w = (t - t_last) / (t_stage - t_last)
            return x_last + w * (x_stage - x_last)
        i = bisect.bisect_right(self._t, t)
        t0, t1 = self._t[i - 1], self._t[i]
        w = (t - t0) / (t1 - t0)
        return self._x[i - 1] + w * (self._x[i] - self._x[i - 1])


# -------------------------------------------------------------- trajectory

@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    params: np.ndarray
    delays: np.ndarray
    outputs: np.ndarray
    inputs: np.ndarray
    jump_flags: np.ndarray
    jumps: List[float] = field(default_factory=list)
    diverged: bool = False
    run: int = 0

    @property
    def square_norm(self) -> np.ndarray:
        return np.einsum("ij,ij->i", self.states, self.states)


def trajectory_frame(traj: Trajectory) -> pd.DataFrame:
    data: Dict[str, np.ndarray] = {"t": traj.times}
    for i in range(traj.states.shape[1]):
        data[f"x{i + 1}"] = traj.states[:, i]
    data["rho"] = traj.params
    data["tau"] = traj.delays
    for i in range(traj.outputs.shape[1]):
        data[f"z{i + 1}"] = traj.outputs[:, i]
    data["jump"] = traj.jump_flags.astype(int)
    return pd.DataFrame(data)


class _Flow:
    """Замороженные матрицы при текущем ρ и правая часть уравнения."""

    def __init__(self, sys: LpvDelaySystem, delay: DelayLaw, w: Callable[[float], np.ndarray]) -> None:
        self.sys = sys
        self.delay = delay
        self.w = w
        # ρ постоянен между скачками: хватает нескольких последних значений
        self.at = functools.lru_cache(maxsize=_FLOW_CACHE_SIZE)(self._frozen)

    def _frozen(self, rho: float) -> Tuple[Dict[str, np.ndarray], float]:
        tau = self.delay.tau(rho)
        if not 0.0 <= tau <= self.sys.h + _TIME_EPS:
            raise ModelViolationError(f"tau({rho:.6g}) = {tau:.6g} leaves [0, {self.sys.h:g}]")
        return self.sys.at(rho), tau

    @staticmethod
    def rhs(m: Dict[str, np.ndarray], x: np.ndarray, xd: np.ndarray, w: np.ndarray) -> np.ndarray:
        return m["A"] @ x + m["A_d"] @ xd + m["E"] @ w

    @staticmethod
    def output(m: Dict[str, np.ndarray], x: np.ndarray, xd: np.ndarray, w: np.ndarray) -> np.ndarray:
        return m["C"] @ x + m["C_d"] @ xd + m["F"] @ w


def _input(cfg: SimConfig, n_w: int) -> Callable[[float], np.ndarray]:
    if cfg.w_signal is None:
        zero = np.zeros(n_w)
        return lambda t: zero
    if isinstance(cfg.w_signal, Sequence):
        channels = tuple(cfg.w_signal)
        if len(channels) != n_w:
            raise UsageError(f"input signal has {len(channels)} channels, system has n_w={n_w}")
        return lambda t: np.array([float(s(t=t)) for s in channels])
    signal = cfg.w_signal
    return lambda t: np.full(n_w, float(signal(t=t)))


def integrate(sys: LpvDelaySystem,
              delay: DelayLaw,
              phi: InitialHistory,
              kernel: JumpKernel,
              cfg: SimConfig,
              ctrl: Controller | None = None,
              run: int = 0,
              ) -> Trajectory:
    """
    RK4 с постоянным шагом для уравнения с запаздыванием; скачки ρ
    обрабатываются точным шагом до момента скачка, состояние непрерывно.
    """
    cfg.check(sys.h)
    if ctrl is not None:
        sys = close_loop(sys, ctrl)
    if phi.n != sys.n:
        raise UsageError(f"initial history has {phi.n} components, system has {sys.n} states")

    rng = make_rng(cfg.seed, run)
    flow = _Flow(sys, delay, _input(cfg, sys.n_w))
    history = HistoryBuffer(phi, sys.h)

    rho = float(cfg.rho0) if cfg.rho0 is not None else float(rng.uniform(sys.box.lo, sys.box.hi))
    next_jump = sample_jump_time(rho, kernel, rng)

    t, x = 0.0, history.last[1]
    rows_t, rows_x, rows_rho, rows_tau, rows_z, rows_w, flags = [], [], [], [], [], [], []
    jumps: List[float] = []

    def record(t_now: float, x_now: np.ndarray, jumped: bool) -> None:
        m, tau = flow.at(rho)
        w_now = flow.w(t_now)
        xd = history.query(t_now - tau, t_now, x_now)
        rows_t.append(t_now)
        rows_x.append(x_now)
        rows_rho.append(rho)
        rows_tau.append(tau)
        rows_z.append(flow.output(m, x_now, xd, w_now))
        rows_w.append(w_now)
        flags.append(jumped)

    def rk4(t0: float, x0: np.ndarray, s: float) -> np.ndarray:
        m, tau = flow.at(rho)

        def f(tt: float, xx: np.ndarray) -> np.ndarray:
            return flow.rhs(m, xx, history.query(tt - tau, tt, xx), flow.w(tt))

        k1 = f(t0, x0)
        k2 = f(t0 + s / 2, x0 + s / 2 * k1)
        k3 = f(t0 + s / 2, x0 + s / 2 * k2)
        k4 = f(t0 + s, x0 + s * k3)
        return x0 + s / 6 * (k1 + 2 * k2 + 2 * k3 + k4)

    record(t, x, False)
    diverged = False
    k = 0
    while k < cfg.steps:
        t_grid = min((k + 1) * cfg.dt, cfg.horizon)
        if next_jump < t_grid - _TIME_EPS:
            t_new, x_new = next_jump, rk4(t, x, next_jump - t)
            jumped = True
        else:
            t_new, x_new = t_grid, rk4(t, x, t_grid - t)
            k += 1
            # скачок в пределах _TIME_EPS от узла сливается с ним
            jumped = next_jump <= t_grid + _TIME_EPS
        if t_new > t:
            history.append(t_new, x_new)
        t, x = t_new, x_new
        if jumped:
            rho = sample_post_jump_param(rho, kernel, rng)
            jumps.append(t)
            next_jump = t + sample_jump_time(rho, kernel, rng)
        record(t, x, jumped)
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > DIVERGENCE_NORM:
            diverged = True
            logger.debug("run %d diverged at t=%.4g", run, t)
            break

    return Trajectory(
        times=np.asarray(rows_t),
        states=np.vstack(rows_x),
        params=np.asarray(rows_rho),
        delays=np.asarray(rows_tau),
        outputs=np.vstack(rows_z),
        inputs=np.vstack(rows_w),
        jump_flags=np.asarray(flags, dtype=bool),
        jumps=jumps,
        diverged=diverged,
        run=run,
    )


# ------------------------------------------------------------- Monte Carlo

def _one_run(args: tuple) -> Trajectory:
    sys, delay, phi, kernel, cfg, ctrl, run = args
    return integrate(sys, delay, phi, kernel, cfg, ctrl, run)


def run_many(sys: LpvDelaySystem,
             delay: DelayLaw,
             phi: InitialHistory,
             kernel: JumpKernel,
             cfg: SimConfig,
             ctrl: Controller | None = None,
             ) -> List[Trajectory]:
    """Независимые прогоны 0..runs−1; результат упорядочен по номеру прогона."""
    cfg.check(sys.h)
    tasks = [(sys, delay, phi, kernel, cfg, ctrl, run) for run in range(cfg.runs)]
    if cfg.workers <= 1 or cfg.runs == 1:
        return [_one_run(task) for task in tasks]
    with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
        return list(pool.map(_one_run, tasks))


@dataclass
class MeanSquareResult:
    times: np.ndarray
    mean_square: np.ndarray
    runs: int
    diverged_runs: int

    @property
    def initial(self) -> float:
        return float(self.mean_square[0])

    @property
    def final(self) -> float:
        return float(self.mean_square[-1])

    @property
    def decayed(self) -> bool:
        return bool(np.isfinite(self.final) and self.final < 1e-4 * self.initial)


def common_grid(cfg: SimConfig) -> np.ndarray:
    return np.arange(cfg.steps + 1) * cfg.dt


def mc_mean_square(sys: LpvDelaySystem,
                   delay: DelayLaw,
                   phi: InitialHistory,
                   kernel: JumpKernel,
                   cfg: SimConfig,
                   ctrl: Controller | None = None,
                   ) -> MeanSquareResult:
    """
    Оценка E‖x(t)‖² усреднением по прогонам на общей сетке. Прогон,
    оборванный по расходимости, после обрыва считается бесконечным.
    """
    if cfg.runs < 30:
        logger.warning("mean-square estimate from %d runs is statistically weak", cfg.runs)
    grid = common_grid(cfg)
    total = np.zeros_like(grid)
    diverged = 0
    for traj in run_many(sys, delay, phi, kernel, cfg, ctrl):
        values = np.interp(grid, traj.times, traj.square_norm)
        if traj.diverged:
            diverged += 1
            values[grid > traj.times[-1]] = np.inf
        total += values
    if diverged:
        logger.warning("%d of %d runs diverged", diverged, cfg.runs)
    return MeanSquareResult(grid, total / cfg.runs, cfg.runs, diverged)


def mean_square_frame(result: MeanSquareResult) -> pd.DataFrame:
    return pd.DataFrame({"t": result.times, "mean_sq": result.mean_square})


def empirical_l2_gain(sys: LpvDelaySystem,
                      delay: DelayLaw,
                      kernel: JumpKernel,
                      cfg: SimConfig,
                      ctrl: Controller | None = None,
                      ) -> float:
    """
    (Σ ∫‖z‖² dt / Σ ∫‖w‖² dt)^½ по прогонам с нулевой начальной функцией.

    Скалярный cfg.w_signal подаётся одинаково во все каналы w, и при n_w > 1
    оценка относится только к направлению (1, …, 1)/√n_w. Для других
    направлений нужен w_signal с выражением на каждый канал.
    """
    n = sys.n
    phi = InitialHistory.zeros(n)
    z_energy = w_energy = 0.0
    for traj in run_many(sys, delay, phi, kernel, cfg, ctrl):
        if traj.diverged:
            return np.inf
        z_energy += trapezoid(np.einsum("ij,ij->i", traj.outputs, traj.outputs), traj.times)
        w_energy += trapezoid(np.einsum("ij,ij->i", traj.inputs, traj.inputs), traj.times)
    if w_energy <= 0:
        raise UsageError("input signal has zero energy on the horizon")
    return float(np.sqrt(z_energy / w_energy))
