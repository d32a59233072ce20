import numpy as np
from dataclasses import dataclass, field, replace
from typing import Dict, List, Tuple, Sequence

from src.logic.polymat import PolyMatrix, ParamBox, THETA, RHO
from src.utils.constants import VALIDATION_POINTS
from src.utils.errors import ValidationError, UsageError
from src.utils.expression import Expression, constant_expression

MATRIX_NAMES: Tuple[str, ...] = ("A", "A_d", "B", "E", "C", "C_d", "D", "F")
Issue = Tuple[str, str]


@dataclass(frozen=True)
class LpvDelaySystem:
    """
    ẋ = A(ρ)x + A_d(ρ)x(t−τ(ρ)) + B(ρ)u + E(ρ)w,
    z = C(ρ)x + C_d(ρ)x(t−τ(ρ)) + D(ρ)u + F(ρ)w.
    """
    n: int
    n_w: int
    n_u: int
    n_z: int
    A: PolyMatrix
    A_d: PolyMatrix
    B: PolyMatrix
    E: PolyMatrix
    C: PolyMatrix
    C_d: PolyMatrix
    D: PolyMatrix
    F: PolyMatrix
    box: ParamBox
    h: float
    name: str = "system"

    def expected_shapes(self) -> Dict[str, Tuple[int, int]]:
        n, n_w, n_u, n_z = self.n, self.n_w, self.n_u, self.n_z
        return {
            "A": (n, n), "A_d": (n, n), "B": (n, n_u), "E": (n, n_w),
            "C": (n_z, n), "C_d": (n_z, n), "D": (n_z, n_u), "F": (n_z, n_w),
        }

    def matrices(self) -> Dict[str, PolyMatrix]:
        return {name: getattr(self, name) for name in MATRIX_NAMES}

    def max_degree(self) -> int:
        return max(m.degree(RHO) for m in self.matrices().values())

    def with_h(self, h: float) -> "LpvDelaySystem":
        return replace(self, h=float(h))

    def at(self, rho: float) -> Dict[str, np.ndarray]:
        """Замороженные матрицы при данном ρ."""
        point = {RHO: rho}
        return {name: m.eval(point) for name, m in self.matrices().items()}

    @classmethod
    def from_constant(cls, box: ParamBox, h: float, name: str = "system", **mats) -> "LpvDelaySystem":
        """
        Удобный конструктор для тестов: недостающие матрицы заполняются нулями
        подходящей размерности, размерности выводятся из A, E, C, B.
        """
        A = np.atleast_2d(np.asarray(mats["A"], dtype=float))
        n = A.shape[0]
        E = np.atleast_2d(np.asarray(mats.get("E", np.zeros((n, 1))), dtype=float))
        C = np.atleast_2d(np.asarray(mats.get("C", np.zeros((1, n))), dtype=float))
        B = np.asarray(mats.get("B", np.zeros((n, 0))), dtype=float)
        B = B.reshape(n, B.size // n if B.size else 0)
        n_w, n_z, n_u = E.shape[1], C.shape[0], B.shape[1]
        defaults = {
            "A": A, "A_d": np.zeros((n, n)), "B": B, "E": E, "C": C,
            "C_d": np.zeros((n_z, n)), "D": np.zeros((n_z, n_u)), "F": np.zeros((n_z, n_w)),
        }
        polys = {}
        for key, default in defaults.items():
            value = mats.get(key, default)
            if isinstance(value, PolyMatrix):
                polys[key] = value
            else:
                polys[key] = PolyMatrix.constant(np.asarray(value, dtype=float).reshape(default.shape))
        return cls(n=n, n_w=n_w, n_u=n_u, n_z=n_z, box=box, h=float(h), name=name, **polys)


@dataclass(frozen=True)
class JumpKernel:
    """
    Плотность интенсивностей переходов λ(θ, ρ) ρ → θ и производные величины:
    λ̄(ρ) = ∫_𝓑 λ(θ, ρ) dθ, μ(𝓑) и sup λ на проверочной сетке.
    """
    lam: PolyMatrix
    box: ParamBox
    lambda_bar: PolyMatrix = field(init=False)
    mu_B: float = field(init=False)
    lambda_max: float = field(init=False)

    def __post_init__(self) -> None:
        if self.lam.shape != (1, 1):
            raise UsageError(f"kernel must be 1x1, got {self.lam.shape}")
        lam = PolyMatrix(self.lam.terms, shape=(1, 1), variables=(THETA, RHO))
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "lambda_bar", lam.integrate_theta(self.box))
        object.__setattr__(self, "mu_B", self.box.measure)
        object.__setattr__(self, "lambda_max", float(max(self.grid_values().max(), 0.0)))

    @classmethod
    def constant(cls, value: float, box: ParamBox) -> "JumpKernel":
        return cls(PolyMatrix.constant([[float(value)]]), box)

    def grid_values(self, points: int = VALIDATION_POINTS) -> np.ndarray:
        grid = self.box.linspace(points)
        th, rh = np.meshgrid(grid, grid, indexing="ij")
        return self.lam.eval_grid(theta=th.ravel(), rho=rh.ravel())[:, 0, 0]

    def density(self, theta: float, rho: float) -> float:
        return self.lam.scalar({THETA: theta, RHO: rho})

    def intensity(self, rho: float) -> float:
        return self.lambda_bar.scalar({RHO: rho})

    def lambda_bar_sup(self, points: int = VALIDATION_POINTS) -> float:
        return float(self.lambda_bar.eval_grid(rho=self.box.linspace(points))[:, 0, 0].max())

    @property
    def is_constant(self) -> bool:
        return self.lam.is_constant

    def scaled_to(self, lambda0: float) -> "JumpKernel":
        return JumpKernel.constant(lambda0, self.box)


@dataclass(frozen=True)
class DelayLaw:
    """Задержка τ(ρ) ∈ [0, h]; выражение в переменной r."""
    expr: Expression
    h: float

    def tau(self, rho):
        value = self.expr(r=rho)
        return float(value) if np.ndim(value) == 0 else np.asarray(value, dtype=float)

    @classmethod
    def constant(cls, tau: float, h: float) -> "DelayLaw":
        return cls(constant_expression(tau), h)


@dataclass(frozen=True)
class InitialHistory:
    """Начальная функция φ на [−h, 0]; по одному выражению от t на компоненту."""
    phi: Tuple[Expression, ...]

    @property
    def n(self) -> int:
        return len(self.phi)

    def __call__(self, t: float) -> np.ndarray:
        return np.array([float(p(t=t)) for p in self.phi])

    def sample(self, times: np.ndarray) -> np.ndarray:
        out = np.empty((len(times), self.n))
        for i, p in enumerate(self.phi):
            out[:, i] = np.broadcast_to(np.asarray(p(t=times), dtype=float), times.shape)
        return out

    @classmethod
    def constant(cls, x0: Sequence[float]) -> "InitialHistory":
        return cls(tuple(constant_expression(v) for v in x0))

    @classmethod
    def zeros(cls, n: int) -> "InitialHistory":
        return cls.constant([0.0] * n)


@dataclass
class ValidationReport:
    issues: List[Issue]
    delta: PolyMatrix | None
    lambda_bar_sup: float | None

    @property
    def ok(self) -> bool:
        return not self.issues

    def raise_if_failed(self) -> "ValidationReport":
        if self.issues:
            raise ValidationError(self.issues)
        return self


def delta(kernel: JumpKernel, h: float) -> PolyMatrix:
    """δ(ρ) = 1 + 2 λ̄(ρ) h."""
    return PolyMatrix.constant([[1.0]]) + kernel.lambda_bar.scale(2.0 * h)


def epsilon(h: float, lambda_hat: float) -> float:
    """ε = h² + λ̂ h³ / 2."""
    return h ** 2 + lambda_hat * h ** 3 / 2.0


def validate_dimensions(sys: LpvDelaySystem) -> List[Issue]:
    issues: List[Issue] = []
    for dim in ("n", "n_w", "n_u", "n_z"):
        if getattr(sys, dim) < 0:
            issues.append((dim, "dimension must be nonnegative"))
    if sys.n < 1:
        issues.append(("n", "state dimension must be at least 1"))
    for name, expected in sys.expected_shapes().items():
        actual = getattr(sys, name).shape
        if actual != expected:
            issues.append((name, f"shape {actual} does not match expected {expected}"))
        if THETA in getattr(sys, name).vars:
            issues.append((name, "system matrices may depend on rho only"))
    if sys.h < 0:
        issues.append(("h", f"delay bound must be nonnegative, got {sys.h}"))
    return issues


def validate_kernel(kernel: JumpKernel) -> List[Issue]:
    issues: List[Issue] = []
    values = kernel.grid_values()
    if values.min() < 0:
        issues.append(("kernel", f"lambda(theta, rho) is negative on the grid (min {values.min():.6g})"))
    if kernel.lambda_max < values.max():
        issues.append(("kernel", "lambda_max is below the grid supremum"))
    if kernel.lambda_bar_sup() < 0:
        issues.append(("kernel", "intensity lambda_bar(rho) is negative"))
    return issues


def validate_delay(delay: DelayLaw, box: ParamBox, h: float) -> List[Issue]:
    issues: List[Issue] = []
    if "t" in delay.expr.variables:
        issues.append(("delay", "delay law may depend on r only"))
        return issues
    grid = box.linspace(VALIDATION_POINTS)
    tau = np.broadcast_to(np.asarray(delay.tau(grid), dtype=float), grid.shape)
    if not np.all(np.isfinite(tau)):
        issues.append(("delay", "tau(rho) is not finite on the grid"))
    elif tau.min() < 0 or tau.max() > h:
        issues.append(("delay", f"tau(rho) leaves [0, h={h:g}]: range [{tau.min():.6g}, {tau.max():.6g}]"))
    return issues


def validate_history(phi: InitialHistory, n: int, h: float) -> List[Issue]:
    """
    Проверка непрерывности по выборке: у разрыва максимальный скачок между
    соседними точками не уменьшается при удвоении разрешения.
    """
    issues: List[Issue] = []
    if phi.n != n:
        issues.append(("initial", f"history has {phi.n} components, expected {n}"))
        return issues
    if h == 0:
        return issues
    coarse = phi.sample(np.linspace(-h, 0.0, VALIDATION_POINTS))
    fine = phi.sample(np.linspace(-h, 0.0, 2 * VALIDATION_POINTS - 1))
    if not (np.all(np.isfinite(coarse)) and np.all(np.isfinite(fine))):
        issues.append(("initial", "history is not finite on [-h, 0]"))
        return issues
    jump_coarse = np.abs(np.diff(coarse, axis=0)).max()
    jump_fine = np.abs(np.diff(fine, axis=0)).max()
    if jump_coarse > 1e-9 and jump_fine > 0.75 * jump_coarse:
        issues.append(("initial", "history looks discontinuous on [-h, 0]"))
    return issues


def validate(sys: LpvDelaySystem,
             kernel: JumpKernel,
             delay: DelayLaw | None = None,
             phi: InitialHistory | None = None,
             ) -> ValidationReport:
    """
    Запускает все проверки: размерности, неотрицательность ядра, диапазон
    задержки, начальную функцию. Чистая функция.
    """
    issues: List[Issue] = []
    issues += validate_dimensions(sys)
    if kernel.box != sys.box:
        issues.append(("kernel", "kernel box differs from the system box"))
    issues += validate_kernel(kernel)
    if delay is not None:
        issues += validate_delay(delay, sys.box, sys.h)
    if phi is not None:
        issues += validate_history(phi, sys.n, sys.h)

    if issues:
        return ValidationReport(issues, None, None)
    return ValidationReport([], delta(kernel, sys.h), kernel.lambda_bar_sup())
