import re
import numpy as np
from dataclasses import dataclass
from typing import Mapping, Tuple, Union, Iterable, FrozenSet

from src.utils.errors import ExpressionSyntaxError, ExpressionEvalError

Number = Union[float, np.ndarray]

FUNCTIONS = {"sin": 1, "cos": 1, "H": 1, "min": 2, "max": 2}
VARIABLES = ("r", "t")

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/(),]))"
)


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    args: Tuple["Node", ...]


Node = Union[Num, Var, Neg, BinOp, Call]


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    offset: int


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            start = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ExpressionSyntaxError(
                f"unexpected character {text[start]!r}", _byte_offset(text, start),
                {"number", "r", "t", "(", "-", *FUNCTIONS},
            )
        kind = m.lastgroup or "op"
        tokens.append(_Token(kind, m.group(kind), _byte_offset(text, m.start(kind))))
        pos = m.end()
    tokens.append(_Token("end", "", _byte_offset(text, len(text))))
    return tokens


def _byte_offset(text: str, index: int) -> int:
    return len(text[:index].encode("utf-8"))


class _Parser:
    """
    Рекурсивный спуск:
        expr  := term (('+' | '-') term)*
        term  := unary (('*' | '/') unary)*
        unary := '-' unary | primary
        primary := number | r | t | func '(' expr [',' expr] ')' | '(' expr ')'
    """

    _PRIMARY_START = {"number", "r", "t", "(", "-", *FUNCTIONS}

    def __init__(self, text: str, allowed: FrozenSet[str]) -> None:
        self.tokens = _tokenize(text)
        self.pos = 0
        self.allowed = allowed

    @property
    def tok(self) -> _Token:
        return self.tokens[self.pos]

    def _advance(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def _expect(self, text: str) -> None:
        if self.tok.text != text or self.tok.kind == "end":
            raise ExpressionSyntaxError(f"expected {text!r}", self.tok.offset, {text})
        self._advance()

    def parse(self) -> Node:
        node = self._expr()
        if self.tok.kind != "end":
            raise ExpressionSyntaxError(
                f"unexpected token {self.tok.text!r}", self.tok.offset, {"+", "-", "*", "/", "end"}
            )
        return node

    def _expr(self) -> Node:
        node = self._term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self._advance().text
            node = BinOp(op, node, self._term())
        return node

    def _term(self) -> Node:
        node = self._unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self._advance().text
            node = BinOp(op, node, self._unary())
        return node

    def _unary(self) -> Node:
        if self.tok.kind == "op" and self.tok.text == "-":
            self._advance()
            return Neg(self._unary())
        return self._primary()

    def _primary(self) -> Node:
        tok = self.tok
        if tok.kind == "num":
            self._advance()
            return Num(float(tok.text))
        if tok.kind == "name":
            self._advance()
            if tok.text in FUNCTIONS:
                return self._call(tok)
            if tok.text in VARIABLES:
                if tok.text not in self.allowed:
                    raise ExpressionSyntaxError(
                        f"variable {tok.text!r} is not allowed here", tok.offset, set(self.allowed)
                    )
                return Var(tok.text)
            raise ExpressionSyntaxError(f"unknown name {tok.text!r}", tok.offset, self._PRIMARY_START)
        if tok.kind == "op" and tok.text == "(":
            self._advance()
            node = self._expr()
            self._expect(")")
            return node
        raise ExpressionSyntaxError(
            f"unexpected {'end of input' if tok.kind == 'end' else repr(tok.text)}",
            tok.offset, self._PRIMARY_START,
        )

    def _call(self, name_tok: _Token) -> Node:
        self._expect("(")
        args = [self._expr()]
        while self.tok.kind == "op" and self.tok.text == ",":
            self._advance()
            args.append(self._expr())
        self._expect(")")
        arity = FUNCTIONS[name_tok.text]
        if len(args) != arity:
            raise ExpressionSyntaxError(
                f"{name_tok.text}() takes {arity} argument(s), got {len(args)}", name_tok.offset, {"("}
            )
        return Call(name_tok.text, tuple(args))


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _precedence(node: Node) -> int:
    if isinstance(node, BinOp):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return 3
    return 4


def to_text(node: Node) -> str:
    """Печатает дерево с минимумом скобок, сохраняя его структуру при повторном разборе."""
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        inner = to_text(node.operand)
        return f"-({inner})" if _precedence(node.operand) < 3 else f"-{inner}"
    if isinstance(node, Call):
        return f"{node.func}({', '.join(to_text(a) for a in node.args)})"
    prec = _PREC[node.op]
    left = to_text(node.left)
    right = to_text(node.right)
    if _precedence(node.left) < prec:
        left = f"({left})"
    if _precedence(node.right) <= prec:
        right = f"({right})"
    return f"{left} {node.op} {right}"


def evaluate(node: Node, env: Mapping[str, Number]) -> Number:
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        if node.name not in env:
            raise ExpressionEvalError(f"no value for variable {node.name!r}")
        return env[node.name]
    if isinstance(node, Neg):
        return -evaluate(node.operand, env)
    if isinstance(node, Call):
        args = [evaluate(a, env) for a in node.args]
        if node.func == "sin":
            return np.sin(args[0])
        if node.func == "cos":
            return np.cos(args[0])
        if node.func == "H":
            return np.where(np.asarray(args[0]) >= 0.0, 1.0, 0.0) * 1.0
        if node.func == "min":
            return np.minimum(args[0], args[1])
        return np.maximum(args[0], args[1])
    left = evaluate(node.left, env)
    right = evaluate(node.right, env)
    if node.op == "+":
        return left + right
    if node.op == "-":
        return left - right
    if node.op == "*":
        return left * right
    if np.any(np.asarray(right) == 0.0):
        raise ExpressionEvalError("division by zero")
    return left / right


def _free_variables(node: Node) -> set[str]:
    if isinstance(node, Var):
        return {node.name}
    if isinstance(node, Neg):
        return _free_variables(node.operand)
    if isinstance(node, BinOp):
        return _free_variables(node.left) | _free_variables(node.right)
    if isinstance(node, Call):
        out: set[str] = set()
        for a in node.args:
            out |= _free_variables(a)
        return out
    return set()


@dataclass(frozen=True)
class Expression:
    """
    Разобранное выражение: задержка τ(r) или входной сигнал w(t).
    Неизменяемо и переживает pickle в рабочие процессы.
    """
    source: str
    tree: Node

    @property
    def variables(self) -> FrozenSet[str]:
        return frozenset(_free_variables(self.tree))

    def __call__(self, **env: Number) -> Number:
        return evaluate(self.tree, env)

    def __str__(self) -> str:
        return to_text(self.tree)


def parse_expression(text: str, allowed: Iterable[str] = VARIABLES) -> Expression:
    if not text or not text.strip():
        raise ExpressionSyntaxError("empty expression", 0, {"number", "r", "t", "("})
    tree = _Parser(text, frozenset(allowed)).parse()
    return Expression(text, tree)


def constant_expression(value: float) -> Expression:
    return Expression(repr(float(value)), Num(float(value)))
