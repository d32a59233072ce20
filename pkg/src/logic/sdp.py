import time
import logging
import itertools
import numpy as np
import scipy.sparse as sp
import clarabel
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Tuple, Sequence

from src.logic.polymat import PolyMatrix, ParamBox, THETA, RHO, VARIABLES, Exponent
from src.utils.errors import UsageError
from src.utils.helpers import Settings

logger = logging.getLogger(__name__)

PSD = ">="
NSD = "<="
_SIGNS = {PSD: 1.0, NSD: -1.0, "⪰": 1.0, "⪯": -1.0}
_CHUNK = 256


# --------------------------------------------------------------------- grids

def grid(box: ParamBox, count: int) -> np.ndarray:
    """Равномерная сетка на 𝓑 с обоими концами."""
    if count < 2:
        raise UsageError(f"grid needs at least 2 points, got {count}")
    return box.linspace(count)


@dataclass(frozen=True)
class Grid:
    """
    Сетка по свободным параметрам ограничения. Нулевое число точек означает,
    что переменная отсутствует; сетка без переменных состоит из одной точки.
    Для пары (θ, ρ) берётся декартово произведение.
    """
    box: ParamBox
    theta: int = 0
    rho: int = 0

    def __post_init__(self) -> None:
        for name in VARIABLES:
            count = getattr(self, name)
            if count != 0 and count < 2:
                raise UsageError(f"grid needs at least 2 points, got {name}={count}")

    @classmethod
    def over_rho(cls, box: ParamBox, count: int) -> "Grid":
        return cls(box, rho=count)

    @classmethod
    def over_both(cls, box: ParamBox, theta: int, rho: int) -> "Grid":
        return cls(box, theta=theta, rho=rho)

    @property
    def vars(self) -> frozenset:
        return frozenset(name for name in VARIABLES if getattr(self, name))

    def __len__(self) -> int:
        return max(self.theta, 1) * max(self.rho, 1)

    def points(self) -> Dict[str, np.ndarray]:
        axes = {name: grid(self.box, getattr(self, name)) for name in VARIABLES if getattr(self, name)}
        if not axes:
            return {}
        mesh = np.meshgrid(*axes.values(), indexing="ij")
        return {name: m.ravel() for name, m in zip(axes, mesh)}

    def refined(self, factor: int) -> "Grid":
        """Сетка с factor-кратной плотностью; содержит исходные точки."""
        def scale(c: int) -> int:
            return (c - 1) * factor + 1 if c else 0
        return Grid(self.box, theta=scale(self.theta), rho=scale(self.rho))


def _eval(poly: PolyMatrix, pts: Mapping[str, np.ndarray], count: int) -> np.ndarray:
    if not pts:
        return poly.eval_grid(theta=np.zeros(count))
    return poly.eval_grid(theta=pts.get(THETA), rho=pts.get(RHO))


def _slice(pts: Mapping[str, np.ndarray], start: int, stop: int) -> Dict[str, np.ndarray]:
    return {k: v[start:stop] for k, v in pts.items()}


# ----------------------------------------------------------------- variables

class MatVar:
    """
    Матричная переменная V(θ, ρ) = Σ V_ab θ^a ρ^b с неизвестными коэффициентами.
    У симметричной переменной свободны только элементы нижнего треугольника.
    """

    def __init__(self,
                 name: str,
                 shape: Tuple[int, int] | int,
                 degrees: Mapping[str, int] | None = None,
                 symmetric: bool = True,
                 ) -> None:
        if isinstance(shape, int):
            shape = (shape, shape)
        degrees = {k: int(v) for k, v in (degrees or {}).items()}
        if set(degrees) - set(VARIABLES):
            raise UsageError(f"unknown variables {sorted(set(degrees) - set(VARIABLES))}")
        if any(d < 0 for d in degrees.values()):
            raise UsageError(f"{name}: degrees must be nonnegative")
        if symmetric and shape[0] != shape[1]:
            raise UsageError(f"{name}: symmetric variable must be square")
        self.name = name
        self.shape = (int(shape[0]), int(shape[1]))
        self.degrees = degrees
        self.vars = frozenset(degrees)
        self.symmetric = symmetric
        self.offset = -1

        d_theta, d_rho = degrees.get(THETA, 0), degrees.get(RHO, 0)
        self.monomials: List[Exponent] = list(itertools.product(range(d_theta + 1), range(d_rho + 1)))

        rows, cols = self.shape
        if symmetric:
            ii, jj = np.tril_indices(rows)
        else:
            ii, jj = (a.ravel() for a in np.indices(self.shape))
        self.entries = (ii, jj)
        basis = np.zeros((len(ii), rows, cols))
        basis[np.arange(len(ii)), ii, jj] = 1.0
        if symmetric:
            basis[np.arange(len(ii)), jj, ii] = 1.0
        self.basis = basis

    def __repr__(self) -> str:
        return f"MatVar({self.name}, {self.shape}, degrees={self.degrees})"

    @property
    def entry_count(self) -> int:
        return len(self.entries[0])

    @property
    def size(self) -> int:
        return len(self.monomials) * self.entry_count

    def indices(self, mono_index: int) -> np.ndarray:
        if self.offset < 0:
            raise UsageError(f"variable {self.name} is not registered in a program")
        start = self.offset + mono_index * self.entry_count
        return np.arange(start, start + self.entry_count)

    def value(self, x: np.ndarray) -> PolyMatrix:
        """Значение переменной по вектору решения."""
        terms: Dict[Exponent, np.ndarray] = {}
        ii, jj = self.entries
        for k, exp in enumerate(self.monomials):
            c = np.zeros(self.shape)
            c[ii, jj] = x[self.indices(k)]
            if self.symmetric:
                c[jj, ii] = x[self.indices(k)]
            terms[exp] = c
        return PolyMatrix(terms, shape=self.shape, variables=self.vars, symmetric=self.symmetric)

    # ------------------------------------------------------------- references

    def _monomial_weights(self, rename: Tuple[str, str] | None = None) -> Dict[Exponent, PolyMatrix]:
        weights = {}
        for exp in self.monomials:
            w = PolyMatrix.monomial(exp, 1.0)
            w = PolyMatrix(w.terms, shape=(1, 1), variables=self.vars)
            if rename is not None:
                w = w.substitute(*rename)
            weights[exp] = w
        return weights

    def ref(self) -> "Affine":
        return Affine.of(Term(self, self._monomial_weights()))

    def at(self, source: str, target: str) -> "Affine":
        """V с переименованной переменной, например P(θ) из P(ρ)."""
        if target in self.vars and source in self.vars:
            raise UsageError(f"{self.name}: cannot rename {source} to {target}")
        return Affine.of(Term(self, self._monomial_weights((source, target))))

    def integral_against(self, kernel: PolyMatrix, box: ParamBox) -> "Affine":
        """
        ∫_𝓑 λ(θ, ρ) V(θ) dθ для переменной от ρ: коэффициенты V переиндексируются
        по θ, интеграл мономов против ядра берётся точно.
        """
        if THETA in self.vars:
            raise UsageError(f"{self.name}: integral_against expects a variable of rho only")
        weights = {}
        for exp, w in self._monomial_weights((RHO, THETA)).items():
            integrand = kernel * PolyMatrix(w.terms, shape=(1, 1), variables=w.vars | {THETA})
            weights[exp] = integrand.integrate_theta(box)
        return Affine.of(Term(self, weights))


class ScalarVar(MatVar):
    """Скалярная переменная (g = γ²) с необязательной нижней границей."""

    def __init__(self, name: str, lower: float | None = None) -> None:
        super().__init__(name, (1, 1), symmetric=True)
        self.lower = lower

    def times(self, matrix: PolyMatrix | np.ndarray) -> "Affine":
        """g·M для известной матрицы M."""
        outer = matrix if isinstance(matrix, PolyMatrix) else PolyMatrix.constant(matrix)
        return Affine.of(Term(self, self._monomial_weights(), outer=outer))


# --------------------------------------------------------------- expressions

@dataclass(frozen=True)
class Term:
    """
    Слагаемое Σ_m w_m · L V_m R (или Σ_m w_m · v_m · M для скаляра),
    где w_m: скалярные многочлены при коэффициентах переменной.
    """
    var: MatVar
    weights: Mapping[Exponent, PolyMatrix]
    left: PolyMatrix | None = None
    right: PolyMatrix | None = None
    transposed: bool = False
    outer: PolyMatrix | None = None

    @property
    def shape(self) -> Tuple[int, int]:
        if self.outer is not None:
            return self.outer.shape
        rows, cols = self.var.shape[::-1] if self.transposed else self.var.shape
        if self.left is not None:
            rows = self.left.rows
        if self.right is not None:
            cols = self.right.cols
        return rows, cols

    def degree(self, var: str) -> int:
        parts = [max((w.degree(var) for w in self.weights.values()), default=0)]
        for m in (self.left, self.right, self.outer):
            parts.append(m.degree(var) if m is not None else 0)
        return sum(parts)

    def free_vars(self) -> frozenset:
        out = frozenset().union(*(w.vars for w in self.weights.values()))
        for m in (self.left, self.right, self.outer):
            if m is not None:
                out |= m.vars
        return out

    def with_factors(self, left: PolyMatrix | None = None, right: PolyMatrix | None = None) -> "Term":
        if self.outer is not None:
            outer = self.outer
            if left is not None:
                outer = left @ outer
            if right is not None:
                outer = outer @ right
            return Term(self.var, self.weights, outer=outer)
        new_left = self.left if left is None else (left if self.left is None else left @ self.left)
        new_right = self.right if right is None else (right if self.right is None else self.right @ right)
        return Term(self.var, self.weights, new_left, new_right, self.transposed)

    def scaled(self, alpha: float | PolyMatrix) -> "Term":
        if isinstance(alpha, PolyMatrix):
            weights = {e: w * alpha for e, w in self.weights.items()}
        else:
            weights = {e: w.scale(float(alpha)) for e, w in self.weights.items()}
        return Term(self.var, weights, self.left, self.right, self.transposed, self.outer)

    def transpose(self) -> "Term":
        if self.outer is not None:
            return Term(self.var, self.weights, outer=self.outer.T)
        left = self.right.T if self.right is not None else None
        right = self.left.T if self.left is not None else None
        transposed = self.transposed if self.var.symmetric else not self.transposed
        return Term(self.var, self.weights, left, right, transposed)

    def value(self, coeffs: PolyMatrix) -> PolyMatrix:
        out = PolyMatrix.zeros(*self.shape)
        for exp, w in self.weights.items():
            c = PolyMatrix.constant(coeffs.coeff(exp))
            if self.outer is not None:
                piece = self.outer * (c * w)
            else:
                piece = c.T if self.transposed else c
                if self.left is not None:
                    piece = self.left @ piece
                if self.right is not None:
                    piece = piece @ self.right
                piece = piece * w
            out = out + piece
        return out

    def linearize(self, pts: Mapping[str, np.ndarray], count: int) -> Tuple[np.ndarray, np.ndarray]:
        """Возвращает индексы решений и матрицы (N, k, rows, cols) их коэффициентов."""
        rows, cols = self.shape
        idx_parts, blocks = [], []
        outer = _eval(self.outer, pts, count) if self.outer is not None else None
        left = _eval(self.left, pts, count) if self.left is not None else None
        right = _eval(self.right, pts, count) if self.right is not None else None
        basis = self.var.basis.transpose(0, 2, 1) if self.transposed else self.var.basis
        for k, exp in enumerate(self.var.monomials):
            if exp not in self.weights:
                continue
            w = _eval(self.weights[exp], pts, count)[:, 0, 0]
            if outer is not None:
                block = (w[:, None, None] * outer)[:, None, :, :]
            else:
                block = np.broadcast_to(basis, (count,) + basis.shape)
                if left is not None:
                    block = np.einsum("nij,nkjl->nkil", left, block, optimize=True)
                if right is not None:
                    block = np.einsum("nkij,njl->nkil", block, right, optimize=True)
                block = w[:, None, None, None] * block
            idx_parts.append(self.var.indices(k))
            blocks.append(block.reshape(count, -1, rows, cols))
        return np.concatenate(idx_parts), np.concatenate(blocks, axis=1)


@dataclass(frozen=True)
class Affine:
    """Аффинное матричное выражение: известная часть плюс линейные слагаемые."""
    const: PolyMatrix
    terms: Tuple[Term, ...] = ()

    @classmethod
    def of(cls, term: Term) -> "Affine":
        return cls(PolyMatrix.zeros(*term.shape), (term,))

    @classmethod
    def known(cls, matrix: PolyMatrix | np.ndarray) -> "Affine":
        m = matrix if isinstance(matrix, PolyMatrix) else PolyMatrix.constant(matrix)
        return cls(m)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.const.shape

    def __add__(self, other) -> "Affine":
        other = _affine(other)
        if other.shape != self.shape:
            raise UsageError(f"dimension mismatch {self.shape} vs {other.shape}")
        return Affine(self.const + other.const, self.terms + other.terms)

    __radd__ = __add__

    def __neg__(self) -> "Affine":
        return self.scale(-1.0)

    def __sub__(self, other) -> "Affine":
        return self + (-_affine(other))

    def __rsub__(self, other) -> "Affine":
        return _affine(other) - self

    def scale(self, alpha: float | PolyMatrix) -> "Affine":
        """Умножение на число или на скалярный многочлен 1×1."""
        const = self.const * alpha if isinstance(alpha, PolyMatrix) else self.const.scale(float(alpha))
        return Affine(const, tuple(t.scaled(alpha) for t in self.terms))

    def __mul__(self, alpha) -> "Affine":
        return self.scale(alpha)

    __rmul__ = __mul__

    def __matmul__(self, right) -> "Affine":
        right = _poly(right)
        if right.rows != self.shape[1]:
            raise UsageError(f"matmul dimension mismatch {self.shape} @ {right.shape}")
        return Affine(self.const @ right, tuple(t.with_factors(right=right) for t in self.terms))

    def __rmatmul__(self, left) -> "Affine":
        left = _poly(left)
        if left.cols != self.shape[0]:
            raise UsageError(f"matmul dimension mismatch {left.shape} @ {self.shape}")
        return Affine(left @ self.const, tuple(t.with_factors(left=left) for t in self.terms))

    @property
    def T(self) -> "Affine":
        return Affine(self.const.T, tuple(t.transpose() for t in self.terms))

    def sym(self) -> "Affine":
        return self + self.T

    def degree(self, var: str) -> int:
        return max([self.const.degree(var)] + [t.degree(var) for t in self.terms])

    def free_vars(self) -> frozenset:
        out = frozenset(self.const.vars)
        for t in self.terms:
            out |= t.free_vars()
        return out

    def value(self, values: Mapping[str, PolyMatrix]) -> PolyMatrix:
        out = self.const
        for t in self.terms:
            out = out + t.value(values[t.var.name])
        return out


def _poly(value) -> PolyMatrix:
    return value if isinstance(value, PolyMatrix) else PolyMatrix.constant(value)


def _affine(value) -> Affine:
    if isinstance(value, Affine):
        return value
    return Affine.known(_poly(value))


class AffineBlockExpr:
    """
    Симметричная блочная матрица, задаваемая верхним треугольником.
    Нижний треугольник заполняется транспонированием; пустые блоки нулевые.
    """

    def __init__(self, sizes: Sequence[int]) -> None:
        self.sizes = [int(s) for s in sizes]
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)]).astype(int)
        self.entries: Dict[Tuple[int, int], Affine] = {}

    @property
    def dim(self) -> int:
        return int(self.offsets[-1])

    def __setitem__(self, key: Tuple[int, int], value) -> None:
        i, j = key
        if i > j:
            raise UsageError(f"block ({i},{j}) is below the diagonal; set ({j},{i}) instead")
        value = _affine(value)
        expected = (self.sizes[i], self.sizes[j])
        if value.shape != expected:
            raise UsageError(f"block ({i},{j}) has shape {value.shape}, expected {expected}")
        self.entries[(i, j)] = value

    def __getitem__(self, key: Tuple[int, int]) -> Affine:
        return self.entries[key]

    def degree(self, var: str) -> int:
        return max((e.degree(var) for e in self.entries.values()), default=0)

    def free_vars(self) -> frozenset:
        return frozenset().union(*(e.free_vars() for e in self.entries.values()))

    def variables(self) -> List[MatVar]:
        seen: Dict[str, MatVar] = {}
        for e in self.entries.values():
            for t in e.terms:
                seen.setdefault(t.var.name, t.var)
        return list(seen.values())

    def linearize(self, pts: Mapping[str, np.ndarray], count: int, nx: int) -> Tuple[np.ndarray, np.ndarray]:
        """M(p) = C(p) + Σ_j x_j F_j(p): возвращает C (N, D, D) и F (N, nx, D, D)."""
        D = self.dim
        C = np.zeros((count, D, D))
        F = np.zeros((count, nx, D, D))
        for (i, j), entry in self.entries.items():
            r0, r1 = self.offsets[i], self.offsets[i + 1]
            c0, c1 = self.offsets[j], self.offsets[j + 1]
            const = _eval(entry.const, pts, count)
            C[:, r0:r1, c0:c1] += const
            if i != j:
                C[:, c0:c1, r0:r1] += const.transpose(0, 2, 1)
            for term in entry.terms:
                idx, block = term.linearize(pts, count)
                np.add.at(F, (slice(None), idx, slice(r0, r1), slice(c0, c1)), block)
                if i != j:
                    np.add.at(F, (slice(None), idx, slice(c0, c1), slice(r0, r1)), block.transpose(0, 1, 3, 2))
        return C, F

    def value(self, values: Mapping[str, PolyMatrix]) -> PolyMatrix:
        """Блочная матрица целиком как PolyMatrix при известных значениях переменных."""
        D = self.dim
        terms: Dict[Exponent, np.ndarray] = {}
        variables: set = set()
        for (i, j), entry in self.entries.items():
            block = entry.value(values)
            variables |= block.vars
            r0, c0 = self.offsets[i], self.offsets[j]
            for exp, c in block.terms.items():
                full = terms.setdefault(exp, np.zeros((D, D)))
                full[r0:r0 + c.shape[0], c0:c0 + c.shape[1]] += c
                if i != j:
                    full[c0:c0 + c.shape[1], r0:r0 + c.shape[0]] += c.T
        return PolyMatrix(terms, shape=(D, D), variables=variables)


# ------------------------------------------------------------------- program

@dataclass
class PsdConstraint:
    expr: AffineBlockExpr
    sign: float
    grid: Grid
    margin: float
    label: str


@dataclass
class Equality:
    coeffs: Dict[int, float]
    rhs: float = 0.0


class LmiProgram:
    """
    Конечная полуопределённая программа: переменные, PSD-ограничения на сетках,
    линейные равенства на коэффициентах и линейная цель (минимизация).
    """

    def __init__(self, box: ParamBox, max_degree: int = 4, name: str = "lmi") -> None:
        self.box = box
        self.max_degree = max_degree
        self.name = name
        self.variables: Dict[str, MatVar] = {}
        self.constraints: List[PsdConstraint] = []
        self.equalities: List[Equality] = []
        self.objective: Dict[int, float] = {}
        self.nx = 0
        self.meta: Dict[str, object] = {}

    def _register(self, var: MatVar) -> MatVar:
        if var.name in self.variables:
            raise UsageError(f"variable {var.name!r} already exists")
        var.offset = self.nx
        self.nx += var.size
        self.variables[var.name] = var
        return var

    def matvar(self, name: str, shape, degrees: Mapping[str, int] | None = None,
               symmetric: bool = True) -> MatVar:
        return self._register(MatVar(name, shape, degrees, symmetric))

    def scalar(self, name: str, lower: float | None = None) -> ScalarVar:
        return self._register(ScalarVar(name, lower))  # type: ignore[return-value]

    def scalars(self) -> List[ScalarVar]:
        return [v for v in self.variables.values() if isinstance(v, ScalarVar)]

    def _check_var(self, var: MatVar) -> None:
        if self.variables.get(var.name) is not var:
            raise UsageError(f"variable {var.name!r} does not belong to program {self.name!r}")

    def add_psd_on_grid(self, expr: AffineBlockExpr, sign: str, grid: Grid,
                        margin: float = 0.0, label: str = "") -> None:
        if sign not in _SIGNS:
            raise UsageError(f"sign must be one of {sorted(_SIGNS)}, got {sign!r}")
        if grid.box != self.box:
            raise UsageError("constraint grid box differs from the program box")
        missing = expr.free_vars() - grid.vars
        if missing:
            raise UsageError(f"grid does not cover {sorted(missing)} in constraint {label!r}")
        for var in VARIABLES:
            if expr.degree(var) > self.max_degree:
                raise UsageError(
                    f"constraint {label!r} has degree {expr.degree(var)} in {var}, "
                    f"max_degree is {self.max_degree}"
                )
        for v in expr.variables():
            self._check_var(v)
        self.constraints.append(PsdConstraint(expr, _SIGNS[sign], grid, float(margin), label))

    def add_integral_zero(self, Z: MatVar, box: ParamBox | None = None) -> int:
        """
        ∫_𝓑 Z(θ, ρ) dθ ≡ 0 как равенства на коэффициентах: для каждого ρ-монома
        и каждого свободного элемента Σ_a c_a z_ab = 0, c_a = ∫ θ^a dθ.
        Возвращает число добавленных равенств.
        """
        self._check_var(Z)
        if THETA not in Z.vars:
            raise UsageError(f"{Z.name}: integral constraint needs theta among the variables")
        box = box or self.box
        added = 0
        rho_degrees = sorted({b for _, b in Z.monomials})
        for b in rho_degrees:
            for e in range(Z.entry_count):
                coeffs = {}
                for k, (a, bb) in enumerate(Z.monomials):
                    if bb == b:
                        coeffs[int(Z.indices(k)[e])] = box.monomial_integral(a)
                self.equalities.append(Equality(coeffs, 0.0))
                added += 1
        return added

    def add_equality(self, coeffs: Mapping[int, float], rhs: float = 0.0) -> None:
        for j in coeffs:
            if not 0 <= j < self.nx:
                raise UsageError(f"equality references unknown coefficient {j}")
        self.equalities.append(Equality(dict(coeffs), float(rhs)))

    def fix_scalar(self, name: str, value: float) -> None:
        var = self.variables.get(name)
        if not isinstance(var, ScalarVar):
            raise UsageError(f"{name!r} is not a scalar variable")
        self.add_equality({var.offset: 1.0}, float(value))

    def minimize(self, var: ScalarVar, weight: float = 1.0) -> None:
        self._check_var(var)
        self.objective[var.offset] = self.objective.get(var.offset, 0.0) + weight


# ------------------------------------------------------------------ lowering

@dataclass(frozen=True)
class LoweredProblem:
    """Стандартная коническая форма: min qᵀx, Ax + s = b, s ∈ K."""
    q: np.ndarray
    A: sp.csc_matrix
    b: np.ndarray
    zero: int
    nonneg: int
    psd: Tuple[int, ...]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.A.shape


def svec_indices(dim: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Индексы и масштабы svec: верхний треугольник по столбцам (он же нижний по
    строкам), внедиагональные элементы умножены на √2.
    """
    ii, jj = np.tril_indices(dim)
    scale = np.where(ii == jj, 1.0, np.sqrt(2.0))
    return ii, jj, scale


def lower(prog: LmiProgram) -> LoweredProblem:
    nx = prog.nx
    rows_zero: List[sp.spmatrix] = []
    b_zero: List[float] = []
    for eq in prog.equalities:
        cols = np.fromiter(eq.coeffs.keys(), dtype=int)
        vals = np.fromiter(eq.coeffs.values(), dtype=float)
        rows_zero.append(sp.csr_matrix((vals, (np.zeros_like(cols), cols)), shape=(1, nx)))
        b_zero.append(eq.rhs)

    rows_nonneg: List[sp.spmatrix] = []
    b_nonneg: List[float] = []
    for var in prog.scalars():
        if var.lower is not None:
            rows_nonneg.append(sp.csr_matrix(([-1.0], ([0], [var.offset])), shape=(1, nx)))
            b_nonneg.append(-float(var.lower))

    rows_psd: List[sp.spmatrix] = []
    b_psd: List[np.ndarray] = []
    psd_sizes: List[int] = []
    for con in prog.constraints:
        D = con.expr.dim
        ii, jj, scale = svec_indices(D)
        pts = con.grid.points()
        total = len(con.grid)
        for start in range(0, total, _CHUNK):
            stop = min(start + _CHUNK, total)
            C, F = con.expr.linearize(_slice(pts, start, stop), stop - start, nx)
            _check_symmetric(C, F, con.label)
            C = con.sign * C - con.margin * np.eye(D)
            F = con.sign * F
            # Ax + s = b, s = svec(C + Σ x_j F_j)
            b_psd.append((C[:, ii, jj] * scale).reshape(-1))
            blk = -(F[:, :, ii, jj] * scale).transpose(0, 2, 1).reshape(-1, nx)
            rows_psd.append(sp.csr_matrix(blk))
            psd_sizes.extend([D] * (stop - start))

    blocks = rows_zero + rows_nonneg + rows_psd
    A = sp.vstack(blocks, format="csc") if blocks else sp.csc_matrix((0, nx))
    b = np.concatenate([np.asarray(b_zero, dtype=float), np.asarray(b_nonneg, dtype=float)] + b_psd)
    q = np.zeros(nx)
    for j, w in prog.objective.items():
        q[j] += w
    return LoweredProblem(q, A, b, len(rows_zero), len(rows_nonneg), tuple(psd_sizes))


def _check_symmetric(C: np.ndarray, F: np.ndarray, label: str) -> None:
    tol = 1e-9 * max(1.0, float(np.abs(C).max(initial=0.0)), float(np.abs(F).max(initial=0.0)))
    if (np.abs(C - C.transpose(0, 2, 1)).max(initial=0.0) > tol
            or np.abs(F - F.transpose(0, 1, 3, 2)).max(initial=0.0) > tol):
        raise UsageError(f"constraint {label!r}: block expression is not symmetric")


def dump_triplets(lowered: LoweredProblem, path: str | Path) -> None:
    """
    Текстовый дамп для сверки с внешними решателями:
        zero <k> nonneg <l> psd <m1,m2,...>
        rows <R> cols <C>
        A <i> <j> <v>   ...
        b <i> <v>       ...
        c <j> <v>       ...
    """
    A = lowered.A.tocoo()
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(f"zero {lowered.zero} nonneg {lowered.nonneg} psd {','.join(map(str, lowered.psd))}\n")
        f.write(f"rows {lowered.shape[0]} cols {lowered.shape[1]}\n")
        for i, j, v in zip(A.row, A.col, A.data):
            f.write(f"A {i} {j} {v:.17g}\n")
        for i, v in enumerate(lowered.b):
            if v != 0.0:
                f.write(f"b {i} {v:.17g}\n")
        for j, v in enumerate(lowered.q):
            if v != 0.0:
                f.write(f"c {j} {v:.17g}\n")


# ------------------------------------------------------------------- solving

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
NUMERICAL_FAILURE = "numerical-failure"


@dataclass
class SolveReport:
    status: str
    objective: float | None = None
    values: Dict[str, PolyMatrix | float] = field(default_factory=dict)
    residual: float | None = None
    verify_residual: float | None = None
    iterations: int = 0
    solve_time: float = 0.0
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL

    def poly(self, name: str) -> PolyMatrix:
        value = self.values[name]
        return value if isinstance(value, PolyMatrix) else PolyMatrix.constant([[value]])


def _classify(status) -> str:
    S = clarabel.SolverStatus
    if status == S.Solved or status == S.AlmostSolved:
        return OPTIMAL
    infeasible = [S.PrimalInfeasible, getattr(S, "AlmostPrimalInfeasible", None)]
    if any(s is not None and status == s for s in infeasible):
        return INFEASIBLE
    return NUMERICAL_FAILURE


def _solver_settings(settings: Settings) -> "clarabel.DefaultSettings":
    opts = clarabel.DefaultSettings()
    opts.verbose = False
    opts.max_iter = int(settings.max_iter)
    opts.tol_gap_abs = float(settings.solver_tol)
    opts.tol_gap_rel = float(settings.solver_tol)
    opts.tol_feas = float(settings.solver_tol)
    return opts


def constraint_residual(con: PsdConstraint, values: Mapping[str, PolyMatrix], grid: Grid) -> float:
    """
    Наибольшее нарушение на сетке: λ_max(M) для M ⪯ 0 и −λ_min(M) для M ⪰ 0.
    Отрицательное значение означает строгое выполнение.
    """
    block = con.expr.value(values)
    pts = grid.points()
    total = len(grid)
    worst = -np.inf
    for start in range(0, total, 4 * _CHUNK):
        stop = min(start + 4 * _CHUNK, total)
        M = con.sign * _eval(block, _slice(pts, start, stop), stop - start)
        M = 0.5 * (M + M.transpose(0, 2, 1))
        worst = max(worst, float(-np.linalg.eigvalsh(M)[:, 0].min()))
    return worst


def residuals(prog: LmiProgram, values: Mapping[str, PolyMatrix], factor: int = 1) -> List[Tuple[str, float]]:
    return [(con.label, constraint_residual(con, values, con.grid.refined(factor) if factor > 1 else con.grid))
            for con in prog.constraints]


def solve_lowered(prog: LmiProgram, lowered: LoweredProblem, settings: Settings) -> SolveReport:
    cones = []
    if lowered.zero:
        cones.append(clarabel.ZeroConeT(lowered.zero))
    if lowered.nonneg:
        cones.append(clarabel.NonnegativeConeT(lowered.nonneg))
    cones.extend(clarabel.PSDTriangleConeT(d) for d in lowered.psd)

    P = sp.csc_matrix((prog.nx, prog.nx))
    started = time.perf_counter()
    solver = clarabel.DefaultSolver(P, lowered.q, lowered.A, lowered.b, cones, _solver_settings(settings))
    sol = solver.solve()
    elapsed = time.perf_counter() - started
    status = _classify(sol.status)
    logger.debug("%s: solver status %s after %s iterations (%.2fs)", prog.name, sol.status, sol.iterations, elapsed)

    if status != OPTIMAL:
        return SolveReport(status, iterations=int(sol.iterations), solve_time=elapsed,
                           message=f"solver returned {sol.status}")

    x = np.asarray(sol.x, dtype=float)
    polys = {name: var.value(x) for name, var in prog.variables.items()}
    values: Dict[str, PolyMatrix | float] = {
        name: (float(p.coeff((0, 0))[0, 0]) if isinstance(prog.variables[name], ScalarVar) else p)
        for name, p in polys.items()
    }
    objective = float(lowered.q @ x)

    train = max((r for _, r in residuals(prog, polys)), default=-np.inf)
    verify_list = residuals(prog, polys, settings.verify_factor)
    verify = max((r for _, r in verify_list), default=-np.inf)
    report = SolveReport(OPTIMAL, objective, values, train, verify, int(sol.iterations), elapsed)

    if train > settings.residual_tol:
        report.status = NUMERICAL_FAILURE
        report.message = f"training-grid residual {train:.3g} exceeds {settings.residual_tol:.3g}"
        logger.warning("%s: %s", prog.name, report.message)
    elif verify > settings.residual_tol:
        worst = max(verify_list, key=lambda item: item[1])
        report.message = f"constraint {worst[0]!r} violated between grid points by {worst[1]:.3g}"
        logger.warning("%s: %s", prog.name, report.message)
    return report


def lower_and_solve(prog: LmiProgram, settings: Settings, dump: str | Path | None = None) -> SolveReport:
    """
    Понижает программу к конической форме, решает её Clarabel и перепроверяет
    ограничения на сетке в verify_factor раз плотнее обучающей.
    """
    lowered = lower(prog)
    logger.info("%s: %d variables, %d rows, %d PSD cones", prog.name, prog.nx, lowered.shape[0], len(lowered.psd))
    if dump is not None:
        dump_triplets(lowered, dump)
        logger.info("Conic problem written to %s", dump)
    return solve_lowered(prog, lowered, settings)


def add_psd_on_grid(prog: LmiProgram, expr: AffineBlockExpr, sign: str, grid: Grid, margin: float = 0.0) -> None:
    prog.add_psd_on_grid(expr, sign, grid, margin)


def add_integral_zero(prog: LmiProgram, Z: MatVar, box: ParamBox | None = None) -> int:
    return prog.add_integral_zero(Z, box)


def single_block(entry) -> AffineBlockExpr:
    """Блочное выражение из одного диагонального блока."""
    value = _affine(entry)
    expr = AffineBlockExpr([value.shape[0]])
    expr[0, 0] = value
    return expr
