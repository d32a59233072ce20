import json
import yaml
import numpy as np
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Any, Mapping, Tuple

from src.logic.model import (
    LpvDelaySystem, JumpKernel, DelayLaw, InitialHistory, MATRIX_NAMES, validate,
)
from src.logic.polymat import PolyMatrix, ParamBox, RHO, THETA
from src.utils.errors import DescriptionError, ExpressionSyntaxError
from src.utils.expression import Expression, parse_expression, constant_expression


@dataclass(frozen=True)
class SystemDescription:
    """Содержимое файла описания: система, ядро, задержка, необязательные сигналы."""
    system: LpvDelaySystem
    kernel: JumpKernel
    delay: DelayLaw
    initial: InitialHistory | None
    w_signal: Expression | Tuple[Expression, ...] | None
    controller: str | None
    source: str
    path: Path

    def with_h(self, h: float) -> "SystemDescription":
        """Новая граница задержки; закон τ ≡ h (по умолчанию) следует за ней."""
        h = float(h)
        if self.delay_is_bound:
            delay = DelayLaw.constant(h, h)
        else:
            delay = DelayLaw(self.delay.expr, h)
        return _replace(self, system=self.system.with_h(h), delay=delay)

    @property
    def delay_is_bound(self) -> bool:
        return not self.delay.expr.variables and float(self.delay.tau(0.0)) == self.system.h

    def with_lambda0(self, lambda0: float) -> "SystemDescription":
        return _replace(self, kernel=self.kernel.scaled_to(lambda0))


def _replace(desc: SystemDescription, **changes) -> SystemDescription:
    data = {f: getattr(desc, f) for f in desc.__dataclass_fields__}
    data.update(changes)
    return SystemDescription(**data)


class SystemLoader:
    """
    Загружает описание системы из YAML или JSON.
    Формат выбирается по расширению файла:
      • .yaml / .yml: основной формат, им записаны примеры в systems/;
      • .json: та же структура.

    Ключи: name, dims {n, n_w, n_u, n_z}, box [lo, hi], h,
    matrices {A: {степень ρ: матрица}}, kernel (число или {"a,b": коэффициент}),
    delay (выражение от r), initial (список выражений от t), input (выражение от t),
    controller (путь к файлу регулятора).
    """

    def __init__(self, path: str | Path) -> None:
        self.file = Path(path)

    def load(self, check: bool = True) -> SystemDescription:
        if not self.file.exists():
            raise DescriptionError(f"description file not found: {self.file}")
        text = self.file.read_text(encoding="utf-8")
        data = self._parse(text)
        desc = self._build(data, text)
        if check:
            validate(desc.system, desc.kernel, desc.delay, desc.initial).raise_if_failed()
        return desc

    def _parse(self, text: str) -> Dict[str, Any]:
        try:
            if self.file.suffix.lower() == ".json":
                data = json.loads(text)
            else:
                data = yaml.safe_load(text)
        except (json.JSONDecodeError, yaml.YAMLError) as exc:
            raise DescriptionError(f"{self.file.name}: cannot parse: {exc}") from exc
        if not isinstance(data, dict):
            raise DescriptionError(f"{self.file.name}: top level must be a mapping")
        return data

    def _build(self, data: Mapping[str, Any], text: str) -> SystemDescription:
        dims = _require(data, "dims")
        try:
            n, n_w, n_u, n_z = (int(dims.get(k, 0)) for k in ("n", "n_w", "n_u", "n_z"))
            lo, hi = (float(v) for v in _require(data, "box"))
            h = float(_require(data, "h"))
        except (TypeError, ValueError, AttributeError) as exc:
            raise DescriptionError(f"dims/box/h: {exc}") from exc
        box = ParamBox(lo, hi)

        shapes = {
            "A": (n, n), "A_d": (n, n), "B": (n, n_u), "E": (n, n_w),
            "C": (n_z, n), "C_d": (n_z, n), "D": (n_z, n_u), "F": (n_z, n_w),
        }
        matrices = data.get("matrices") or {}
        unknown = set(matrices) - set(MATRIX_NAMES)
        if unknown:
            raise DescriptionError(f"matrices: unknown names {sorted(unknown)}")
        polys = {name: _matrix(name, matrices.get(name), shapes[name]) for name in MATRIX_NAMES}

        system = LpvDelaySystem(n=n, n_w=n_w, n_u=n_u, n_z=n_z, box=box, h=h,
                                name=str(data.get("name", self.file.stem)), **polys)
        kernel = JumpKernel(_kernel(data.get("kernel", 0.0)), box)
        delay = DelayLaw(_expression("delay", data.get("delay", h), ("r",)), h)

        initial = None
        if data.get("initial") is not None:
            items = data["initial"]
            if not isinstance(items, list):
                raise DescriptionError("initial: expected a list with one entry per state")
            initial = InitialHistory(tuple(_expression("initial", v, ("t",)) for v in items))
        w_signal = None
        if isinstance(data.get("input"), list):
            if len(data["input"]) != n_w:
                raise DescriptionError(f"input: expected {n_w} entries, one per disturbance channel")
            w_signal = tuple(_expression("input", v, ("t",)) for v in data["input"])
        elif data.get("input") is not None:
            w_signal = _expression("input", data["input"], ("t",))

        return SystemDescription(system, kernel, delay, initial, w_signal,
                                 data.get("controller"), text, self.file)


def _require(data: Mapping[str, Any], key: str) -> Any:
    if key not in data:
        raise DescriptionError(f"missing required key '{key}'")
    return data[key]


def _matrix(name: str, blocks: Any, shape) -> PolyMatrix:
    """{степень ρ: вложенный список} или одна постоянная матрица."""
    if blocks is None:
        return PolyMatrix.zeros(*shape)
    if not isinstance(blocks, dict):
        blocks = {0: blocks}
    coeffs: Dict[int, np.ndarray] = {}
    for degree, value in blocks.items():
        try:
            arr = np.asarray(value, dtype=float).reshape(shape)
            coeffs[int(degree)] = arr
        except (TypeError, ValueError) as exc:
            raise DescriptionError(f"matrices.{name}[{degree}]: expected shape {shape}: {exc}") from exc
    return PolyMatrix.from_rho_coeffs(coeffs, shape)


def _kernel(spec: Any) -> PolyMatrix:
    if isinstance(spec, (int, float)):
        return PolyMatrix.constant([[float(spec)]])
    if not isinstance(spec, dict):
        raise DescriptionError("kernel: expected a number or a mapping 'a,b' -> coefficient")
    terms = {}
    for key, value in spec.items():
        try:
            a, b = (int(s) for s in str(key).split(","))
            terms[(a, b)] = [[float(value)]]
        except ValueError as exc:
            raise DescriptionError(f"kernel: bad monomial key {key!r}") from exc
    return PolyMatrix(terms, shape=(1, 1), variables=(THETA, RHO))


def _expression(field: str, value: Any, allowed) -> Expression:
    if isinstance(value, (int, float)):
        return constant_expression(float(value))
    try:
        return parse_expression(str(value), allowed)
    except ExpressionSyntaxError as exc:
        raise DescriptionError(f"{field}: {exc}") from exc
