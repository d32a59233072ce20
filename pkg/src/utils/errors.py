from typing import List, Tuple


class LpvJumpError(Exception):
    """Базовое исключение пакета."""


class UsageError(LpvJumpError, ValueError):
    """Неверные аргументы: размерности, отсутствующие переменные, пустые сетки."""


class DescriptionError(LpvJumpError):
    """Файл описания системы не удалось разобрать."""


class ValidationError(LpvJumpError):
    """
    Нарушены допущения модели. Хранит список пар (поле, сообщение),
    чтобы CLI мог показать все проблемы сразу, а не только первую.
    """

    def __init__(self, issues: List[Tuple[str, str]]) -> None:
        self.issues = list(issues)
        text = "; ".join(f"{field}: {msg}" for field, msg in self.issues)
        super().__init__(text or "validation failed")

    @property
    def fields(self) -> List[str]:
        return [field for field, _ in self.issues]


class ExpressionSyntaxError(LpvJumpError):
    def __init__(self, message: str, offset: int, expected: set[str]) -> None:
        self.offset = offset
        self.expected = set(expected)
        hint = ", ".join(sorted(self.expected))
        super().__init__(f"{message} at offset {offset} (expected one of: {hint})")


class ExpressionEvalError(LpvJumpError):
    pass


class ModelViolationError(LpvJumpError):
    """Траектория вышла за допущения модели: λ̄ < 0, τ ∉ [0, h] и т.п."""


class EnvelopeError(LpvJumpError):
    pass


class RecoveryError(LpvJumpError):
    """X̃ вырожден или плохо обусловлен, регулятор не восстанавливается."""
