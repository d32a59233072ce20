import numpy as np
from dataclasses import dataclass
from typing import Dict, Mapping, Tuple, Iterable, Iterator, FrozenSet

from src.utils.errors import UsageError

# Порядок переменных в кортеже показателей: (θ, ρ)
VARIABLES: Tuple[str, str] = ("theta", "rho")
THETA, RHO = VARIABLES
Exponent = Tuple[int, int]


@dataclass(frozen=True)
class ParamBox:
    """Отрезок 𝓑 = [lo, hi] значений скалярного параметра."""
    lo: float
    hi: float

    def __post_init__(self) -> None:
        if not self.lo < self.hi:
            raise UsageError(f"ParamBox requires lo < hi, got [{self.lo}, {self.hi}]")

    @property
    def measure(self) -> float:
        return float(self.hi - self.lo)

    def monomial_integral(self, k: int) -> float:
        """∫_𝓑 θ^k dθ = (hi^{k+1} − lo^{k+1}) / (k+1)."""
        return (self.hi ** (k + 1) - self.lo ** (k + 1)) / (k + 1)

    def linspace(self, count: int) -> np.ndarray:
        return np.linspace(self.lo, self.hi, count)


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.setflags(write=False)
    return out


class PolyMatrix:
    """
    Матрица из многочленов от θ и ρ, в мономиальном базисе.

    Хранится как словарь {(a, b): C_ab} с C_ab ∈ R^{rows×cols}, что означает
    Σ C_ab θ^a ρ^b. Значения неизменяемы; все операции возвращают новые объекты.
    """

    __slots__ = ("rows", "cols", "vars", "terms", "symmetric")

    def __init__(self,
                 terms: Mapping[Exponent, np.ndarray],
                 shape: Tuple[int, int] | None = None,
                 variables: Iterable[str] | None = None,
                 symmetric: bool = False,
                 ) -> None:
        clean: Dict[Exponent, np.ndarray] = {}
        for exp, coeff in terms.items():
            exp = (int(exp[0]), int(exp[1]))
            if exp[0] < 0 or exp[1] < 0:
                raise UsageError(f"negative exponent {exp}")
            c = np.atleast_2d(np.asarray(coeff, dtype=float))
            if exp in clean:
                c = clean[exp] + c
            clean[exp] = c

        if shape is None:
            if not clean:
                raise UsageError("shape is required for an empty PolyMatrix")
            shape = next(iter(clean.values())).shape
        rows, cols = int(shape[0]), int(shape[1])
        for exp, c in clean.items():
            if c.shape != (rows, cols):
                raise UsageError(f"coefficient {exp} has shape {c.shape}, expected {(rows, cols)}")

        used = {THETA for e in clean if e[0] > 0} | {RHO for e in clean if e[1] > 0}
        declared = frozenset(variables) if variables is not None else frozenset(used)
        unknown = declared - set(VARIABLES)
        if unknown:
            raise UsageError(f"unknown variables {sorted(unknown)}")
        if not used <= declared:
            raise UsageError(f"exponents use {sorted(used - declared)} outside declared variables")

        if symmetric:
            if rows != cols:
                raise UsageError("symmetric PolyMatrix must be square")
            for exp, c in clean.items():
                if not np.array_equal(c, c.T):
                    raise UsageError(f"coefficient {exp} is not symmetric")

        self.rows = rows
        self.cols = cols
        self.vars: FrozenSet[str] = declared
        self.terms: Dict[Exponent, np.ndarray] = {e: _frozen(c) for e, c in sorted(clean.items())}
        self.symmetric = symmetric

    # ------------------------------------------------------------------ build

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "PolyMatrix":
        return cls({}, shape=(rows, cols), variables=())

    @classmethod
    def constant(cls, matrix, symmetric: bool = False) -> "PolyMatrix":
        m = np.atleast_2d(np.asarray(matrix, dtype=float))
        return cls({(0, 0): m}, shape=m.shape, variables=(), symmetric=symmetric)

    @classmethod
    def identity(cls, n: int) -> "PolyMatrix":
        return cls.constant(np.eye(n), symmetric=True)

    @classmethod
    def monomial(cls, exp: Exponent, matrix=1.0) -> "PolyMatrix":
        return cls({exp: np.atleast_2d(np.asarray(matrix, dtype=float))})

    @classmethod
    def from_rho_coeffs(cls, coeffs: Mapping[int, np.ndarray], shape: Tuple[int, int]) -> "PolyMatrix":
        """Многочлен только от ρ: {степень: коэффициент}."""
        return cls({(0, int(k)): v for k, v in coeffs.items()}, shape=shape, variables=(RHO,))

    # ------------------------------------------------------------ properties

    @property
    def shape(self) -> Tuple[int, int]:
        return self.rows, self.cols

    def degree(self, var: str) -> int:
        idx = VARIABLES.index(var)
        return max((e[idx] for e in self.terms), default=0)

    @property
    def is_constant(self) -> bool:
        return all(e == (0, 0) for e in self.terms)

    def coeff(self, exp: Exponent) -> np.ndarray:
        return self.terms.get(exp, np.zeros(self.shape))

    def __iter__(self) -> Iterator[Tuple[Exponent, np.ndarray]]:
        return iter(self.terms.items())

    def __repr__(self) -> str:
        return f"PolyMatrix({self.rows}x{self.cols}, vars={sorted(self.vars)}, terms={len(self.terms)})"

    # ------------------------------------------------------------ evaluation

    def eval(self, point: Mapping[str, float]) -> np.ndarray:
        """Значение Σ C_ab θ^a ρ^b в точке; каждая переменная из vars должна быть задана."""
        missing = self.vars - set(point)
        if missing:
            raise UsageError(f"missing assignment for {sorted(missing)}")
        th = float(point.get(THETA, 0.0))
        rh = float(point.get(RHO, 0.0))
        out = np.zeros(self.shape)
        for (a, b), c in self.terms.items():
            out = out + c * ((th ** a) * (rh ** b))
        return out

    def eval_grid(self, theta: np.ndarray | None = None, rho: np.ndarray | None = None) -> np.ndarray:
        """Векторная оценка на массиве точек: возвращает массив (N, rows, cols)."""
        if THETA in self.vars and theta is None or RHO in self.vars and rho is None:
            raise UsageError(f"missing assignment for {sorted(self.vars)}")
        n = len(theta) if theta is not None else len(rho) if rho is not None else 1
        th = np.zeros(n) if theta is None else np.asarray(theta, dtype=float)
        rh = np.zeros(n) if rho is None else np.asarray(rho, dtype=float)
        out = np.zeros((n, self.rows, self.cols))
        for (a, b), c in self.terms.items():
            out += ((th ** a) * (rh ** b))[:, None, None] * c[None, :, :]
        return out

    def scalar(self, point: Mapping[str, float]) -> float:
        if self.shape != (1, 1):
            raise UsageError(f"scalar() needs a 1x1 PolyMatrix, got {self.shape}")
        return float(self.eval(point)[0, 0])

    # --------------------------------------------------------------- algebra

    def _check_same_shape(self, other: "PolyMatrix") -> None:
        if self.shape != other.shape:
            raise UsageError(f"dimension mismatch {self.shape} vs {other.shape}")

    def __add__(self, other: "PolyMatrix") -> "PolyMatrix":
        if _foreign(other):
            return NotImplemented
        other = _coerce(other, self.shape)
        self._check_same_shape(other)
        terms = dict(self.terms)
        for e, c in other.terms.items():
            terms[e] = terms[e] + c if e in terms else c
        return PolyMatrix(terms, shape=self.shape, variables=self.vars | other.vars,
                          symmetric=self.symmetric and other.symmetric)

    __radd__ = __add__

    def __neg__(self) -> "PolyMatrix":
        return self.scale(-1.0)

    def __sub__(self, other: "PolyMatrix") -> "PolyMatrix":
        if _foreign(other):
            return NotImplemented
        return self + (-_coerce(other, self.shape))

    def __rsub__(self, other) -> "PolyMatrix":
        if _foreign(other):
            return NotImplemented
        return _coerce(other, self.shape) - self

    def scale(self, alpha: float) -> "PolyMatrix":
        return PolyMatrix({e: alpha * c for e, c in self.terms.items()}, shape=self.shape,
                          variables=self.vars, symmetric=self.symmetric)

    def __mul__(self, other) -> "PolyMatrix":
        if _foreign(other):
            return NotImplemented
        if isinstance(other, PolyMatrix):
            if other.shape == (1, 1):
                return self._times_scalar_poly(other)
            if self.shape == (1, 1):
                return other._times_scalar_poly(self)
            raise UsageError("elementwise product is only defined with a 1x1 PolyMatrix; use @")
        return self.scale(float(other))

    __rmul__ = __mul__

    def _times_scalar_poly(self, s: "PolyMatrix") -> "PolyMatrix":
        terms: Dict[Exponent, np.ndarray] = {}
        for (a1, b1), c1 in self.terms.items():
            for (a2, b2), c2 in s.terms.items():
                key = (a1 + a2, b1 + b2)
                val = c1 * c2[0, 0]
                terms[key] = terms[key] + val if key in terms else val
        return PolyMatrix(terms, shape=self.shape, variables=self.vars | s.vars,
                          symmetric=self.symmetric)

    def __matmul__(self, other: "PolyMatrix") -> "PolyMatrix":
        if _foreign(other):
            return NotImplemented
        other = _coerce(other, None)
        if self.cols != other.rows:
            raise UsageError(f"matmul dimension mismatch {self.shape} @ {other.shape}")
        terms: Dict[Exponent, np.ndarray] = {}
        for (a1, b1), c1 in self.terms.items():
            for (a2, b2), c2 in other.terms.items():
                key = (a1 + a2, b1 + b2)
                val = c1 @ c2
                terms[key] = terms[key] + val if key in terms else val
        return PolyMatrix(terms, shape=(self.rows, other.cols), variables=self.vars | other.vars)

    def __rmatmul__(self, other) -> "PolyMatrix":
        if _foreign(other):
            return NotImplemented
        return _coerce(other, None) @ self

    @property
    def T(self) -> "PolyMatrix":
        return self.transpose()

    def transpose(self) -> "PolyMatrix":
        return PolyMatrix({e: c.T for e, c in self.terms.items()}, shape=(self.cols, self.rows),
                          variables=self.vars, symmetric=self.symmetric)

    def sym(self) -> "PolyMatrix":
        """Sym[M] = M + Mᵀ; результат симметричен структурно (c + cᵀ точно равно своему транспонированию)."""
        if self.rows != self.cols:
            raise UsageError(f"sym() needs a square matrix, got {self.shape}")
        return PolyMatrix({e: c + c.T for e, c in self.terms.items()}, shape=self.shape,
                          variables=self.vars, symmetric=True)

    # ----------------------------------------------------------- θ-calculus

    def integrate_theta(self, box: ParamBox) -> "PolyMatrix":
        """Точный ∫_𝓑 M(θ, ρ) dθ: многочлен от ρ той же размерности."""
        if THETA not in self.vars:
            raise UsageError("integrate_theta requires theta among the variables")
        terms: Dict[Exponent, np.ndarray] = {}
        for (a, b), c in self.terms.items():
            val = c * box.monomial_integral(a)
            key = (0, b)
            terms[key] = terms[key] + val if key in terms else val
        return PolyMatrix(terms, shape=self.shape, variables=self.vars - {THETA},
                          symmetric=self.symmetric)

    def substitute(self, source: str, target: str) -> "PolyMatrix":
        """Переименование переменной: P(ρ) → P(θ) и наоборот."""
        if source == target or source not in self.vars:
            return self
        if target in self.vars:
            raise UsageError(f"cannot rename {source} to {target}: both present")
        si, ti = VARIABLES.index(source), VARIABLES.index(target)
        terms: Dict[Exponent, np.ndarray] = {}
        for e, c in self.terms.items():
            new = [0, 0]
            new[ti] = e[si]
            terms[(new[0], new[1])] = c
        variables = (self.vars - {source}) | {target}
        return PolyMatrix(terms, shape=self.shape, variables=variables, symmetric=self.symmetric)

    # ------------------------------------------------------------ utilities

    def max_abs_coeff(self) -> float:
        return max((float(np.abs(c).max()) for c in self.terms.values() if c.size), default=0.0)

    def to_dict(self) -> Dict[str, list]:
        """Для YAML: ключ "a,b" → вложенный список коэффициентов."""
        return {f"{a},{b}": c.tolist() for (a, b), c in self.terms.items()}

    @classmethod
    def from_dict(cls, data: Mapping[str, list], shape: Tuple[int, int] | None = None,
                  variables: Iterable[str] | None = None) -> "PolyMatrix":
        terms = {}
        for key, value in data.items():
            a, b = (int(s) for s in str(key).split(","))
            terms[(a, b)] = np.atleast_2d(np.asarray(value, dtype=float))
        return cls(terms, shape=shape, variables=variables)


def _foreign(value) -> bool:
    return not isinstance(value, (PolyMatrix, np.ndarray, np.number, int, float, list, tuple))


def _coerce(value, shape: Tuple[int, int] | None) -> PolyMatrix:
    if isinstance(value, PolyMatrix):
        return value
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0 and shape is not None:
        return PolyMatrix.constant(np.full(shape, float(arr)))
    return PolyMatrix.constant(arr)
