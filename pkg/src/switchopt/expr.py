"""Tiny arithmetic expression language with exact gradients.

Grammar (also documented in the README):

    expr    = term { ("+" | "-") term }
    term    = factor { ("*" | "/") factor }
    factor  = ("+" | "-") factor | power
    power   = atom [ "^" factor ]          (right associative)
    atom    = NUMBER | VARIABLE | FUNC "(" expr ")" | "(" expr ")"
    FUNC    = "sin" | "cos" | "exp" | "abs"

Variables are x1 .. xn.  Gradients come from forward-mode accumulation over
the parse tree; ``abs`` uses sign(z) with value 0 at the kink.

A problem file is line oriented: ``n``, ``objective``, repeated ``ineq`` /
``eq`` / ``pair G | H`` / ``start`` directives, plus optional ``name``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import EvaluationFailure, ParseError
from .problem import Array, MpscProblem, finite_difference_gradient

__all__ = ["Expression", "parse_expression", "load_problem_text",
           "load_problem_file", "ProblemFile"]


# ---------------------------------------------------------------------------
# tokens
# ---------------------------------------------------------------------------

_FUNCTIONS = ("sin", "cos", "exp", "abs")


@dataclass(frozen=True)
class _Token:
    kind: str  # num | var | func | op | lparen | rparen | end
    text: str
    line: int
    column: int
    value: float = 0.0
    index: int = -1


def _tokenize(text: str, line: int = 1) -> List[_Token]:
    tokens: List[_Token] = []
    i = 0
    col = 1
    while i < len(text):
        ch = text[i]
        if ch in " \t":
            i += 1
            col += 1
            continue
        if ch in "+-*/^":
            tokens.append(_Token("op", ch, line, col))
            i += 1
            col += 1
            continue
        if ch == "(":
            tokens.append(_Token("lparen", ch, line, col))
            i += 1
            col += 1
            continue
        if ch == ")":
            tokens.append(_Token("rparen", ch, line, col))
            i += 1
            col += 1
            continue
        if ch.isdigit() or ch == ".":
            j = i
            seen_e = False
            while j < len(text):
                c = text[j]
                if c.isdigit() or c == ".":
                    j += 1
                elif c in "eE" and not seen_e:
                    seen_e = True
                    j += 1
                    if j < len(text) and text[j] in "+-":
                        j += 1
                else:
                    break
            lit = text[i:j]
            try:
                value = float(lit)
            except ValueError:
                raise ParseError(f"bad numeric literal '{lit}'", line, col)
            tokens.append(_Token("num", lit, line, col, value=value))
            col += j - i
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < len(text) and (text[j].isalnum() or text[j] == "_"):
                j += 1
            word = text[i:j]
            if word in _FUNCTIONS:
                tokens.append(_Token("func", word, line, col))
            elif word.startswith("x") and word[1:].isdigit() and int(word[1:]) >= 1:
                tokens.append(_Token("var", word, line, col, index=int(word[1:]) - 1))
            else:
                raise ParseError(f"unknown identifier '{word}'", line, col)
            col += j - i
            i = j
            continue
        raise ParseError(f"unexpected character '{ch}'", line, col)
    tokens.append(_Token("end", "", line, col))
    return tokens


# ---------------------------------------------------------------------------
# AST with forward-mode values
# ---------------------------------------------------------------------------

class _Node:
    def value_grad(self, x: Array) -> Tuple[float, Array]:
        raise NotImplementedError

    def max_var(self) -> int:
        raise NotImplementedError


class _Num(_Node):
    def __init__(self, value: float):
        self.value = value

    def value_grad(self, x):
        return self.value, np.zeros(x.size)

    def max_var(self):
        return 0


class _Var(_Node):
    def __init__(self, index: int):
        self.index = index

    def value_grad(self, x):
        g = np.zeros(x.size)
        g[self.index] = 1.0
        return float(x[self.index]), g

    def max_var(self):
        return self.index + 1


class _Binary(_Node):
    def __init__(self, op: str, left: _Node, right: _Node):
        self.op = op
        self.left = left
        self.right = right

    def value_grad(self, x):
        a, da = self.left.value_grad(x)
        b, db = self.right.value_grad(x)
        if self.op == "+":
            return a + b, da + db
        if self.op == "-":
            return a - b, da - db
        if self.op == "*":
            return a * b, b * da + a * db
        if self.op == "/":
            return a / b, (da * b - a * db) / (b * b)
        # power
        if isinstance(self.right, _Num):
            c = self.right.value
            v = a ** c
            return v, c * a ** (c - 1.0) * da if c != 0 else np.zeros(x.size)
        v = a ** b
        return v, v * (db * math.log(a) + b / a * da)

    def max_var(self):
        return max(self.left.max_var(), self.right.max_var())


class _Neg(_Node):
    def __init__(self, child: _Node):
        self.child = child

    def value_grad(self, x):
        v, g = self.child.value_grad(x)
        return -v, -g

    def max_var(self):
        return self.child.max_var()


class _Func(_Node):
    def __init__(self, name: str, child: _Node):
        self.name = name
        self.child = child

    def value_grad(self, x):
        v, g = self.child.value_grad(x)
        if self.name == "sin":
            return math.sin(v), math.cos(v) * g
        if self.name == "cos":
            return math.cos(v), -math.sin(v) * g
        if self.name == "exp":
            e = math.exp(v)
            return e, e * g
        # abs: subgradient sign(v), zero at the kink
        return abs(v), (math.copysign(1.0, v) if v != 0 else 0.0) * g

    def max_var(self):
        return self.child.max_var()


class _Parser:
    def __init__(self, tokens: List[_Token]):
        self.tokens = tokens
        self.pos = 0

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind: str, text: Optional[str] = None) -> _Token:
        tok = self.peek()
        if tok.kind != kind or (text is not None and tok.text != text):
            want = text or kind
            raise ParseError(f"expected {want}, found '{tok.text or 'end of input'}'",
                             tok.line, tok.column)
        return self.advance()

    def parse(self) -> _Node:
        node = self.expr()
        tok = self.peek()
        if tok.kind != "end":
            raise ParseError(f"unexpected trailing input '{tok.text}'",
                             tok.line, tok.column)
        return node

    def expr(self) -> _Node:
        node = self.term()
        while self.peek().kind == "op" and self.peek().text in "+-":
            op = self.advance().text
            node = _Binary(op, node, self.term())
        return node

    def term(self) -> _Node:
        node = self.factor()
        while self.peek().kind == "op" and self.peek().text in "*/":
            op = self.advance().text
            node = _Binary(op, node, self.factor())
        return node

    def factor(self) -> _Node:
        tok = self.peek()
        if tok.kind == "op" and tok.text in "+-":
            self.advance()
            child = self.factor()
            return child if tok.text == "+" else _Neg(child)
        return self.power()

    def power(self) -> _Node:
        base = self.atom()
        if self.peek().kind == "op" and self.peek().text == "^":
            self.advance()
            return _Binary("^", base, self.factor())
        return base

    def atom(self) -> _Node:
        tok = self.advance()
        if tok.kind == "num":
            return _Num(tok.value)
        if tok.kind == "var":
            return _Var(tok.index)
        if tok.kind == "func":
            self.expect("lparen")
            inner = self.expr()
            closing = self.peek()
            if closing.kind != "rparen":
                raise ParseError("missing ')'", closing.line, closing.column)
            self.advance()
            return _Func(tok.text, inner)
        if tok.kind == "lparen":
            inner = self.expr()
            closing = self.peek()
            if closing.kind != "rparen":
                raise ParseError("missing ')'", closing.line, closing.column)
            self.advance()
            return inner
        raise ParseError(f"unexpected token '{tok.text or 'end of input'}'",
                         tok.line, tok.column)


@dataclass
class Expression:
    """A parsed expression with value and gradient evaluation."""

    source: str
    root: _Node

    def __call__(self, x) -> float:
        v, _ = self.value_grad(x)
        return v

    def value_grad(self, x) -> Tuple[float, Array]:
        x = np.asarray(x, dtype=float)
        try:
            v, g = self.root.value_grad(x)
        except (ZeroDivisionError, ValueError, OverflowError) as exc:
            raise EvaluationFailure(
                f"expression '{self.source}' failed at {x.tolist()}: {exc}"
            ) from exc
        if not (np.isfinite(v) and np.all(np.isfinite(g))):
            raise EvaluationFailure(f"expression '{self.source}' produced a "
                                    f"non-finite value at {x.tolist()}")
        return float(v), g

    def gradient(self, x) -> Array:
        return self.value_grad(x)[1]

    @property
    def n_vars(self) -> int:
        return self.root.max_var()


def parse_expression(text: str, line: int = 1) -> Expression:
    """Parse one expression; raises ParseError with line/column on failure."""
    tokens = _tokenize(text, line=line)
    return Expression(source=text.strip(), root=_Parser(tokens).parse())


# ---------------------------------------------------------------------------
# problem files
# ---------------------------------------------------------------------------

@dataclass
class ProblemFile:
    """Parsed problem description plus its optional starting points."""

    problem: MpscProblem
    starts: List[Array]


def _vector_eval(exprs: Sequence[Expression]):
    def values(x):
        return np.array([e(x) for e in exprs]) if exprs else np.zeros(0)

    def jacobian(x):
        x = np.asarray(x, dtype=float)
        if not exprs:
            return np.zeros((0, x.size))
        return np.vstack([e.gradient(x) for e in exprs])

    return values, jacobian


def load_problem_text(text: str, name: str = "problem",
                      validate: bool = True) -> ProblemFile:
    """Parse a line-oriented problem description.

    Directives: ``n <int>``, ``objective <expr>``, ``ineq <expr>``,
    ``eq <expr>``, ``pair <exprG> | <exprH>``, ``start <v1, v2, ...>``,
    ``name <label>``.  ``#`` starts a comment.  When ``validate`` is set the
    loaded gradients are checked against central finite differences at the
    start points (or a default probe point).
    """
    n: Optional[int] = None
    objective: Optional[Expression] = None
    ineqs: List[Expression] = []
    eqs: List[Expression] = []
    pairs: List[Tuple[Expression, Expression]] = []
    starts: List[Array] = []
    label = name

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, _, rest = line.partition(" ")
        rest = rest.strip()
        offset = raw.index(head) + len(head) + 2
        if head == "n":
            try:
                n = int(rest)
            except ValueError:
                raise ParseError(f"bad dimension '{rest}'", lineno, offset)
            if n <= 0:
                raise ParseError("dimension must be positive", lineno, offset)
        elif head == "name":
            if not rest:
                raise ParseError("empty name", lineno, offset)
            label = rest
        elif head == "objective":
            objective = parse_expression(rest, line=lineno)
        elif head == "ineq":
            ineqs.append(parse_expression(rest, line=lineno))
        elif head == "eq":
            eqs.append(parse_expression(rest, line=lineno))
        elif head == "pair":
            if "|" not in rest:
                raise ParseError("pair directive needs 'G | H'", lineno, offset)
            left, right = rest.split("|", 1)
            pairs.append((parse_expression(left, line=lineno),
                          parse_expression(right, line=lineno)))
        elif head == "start":
            try:
                vec = np.array([float(v) for v in rest.replace(",", " ").split()])
            except ValueError:
                raise ParseError(f"bad start vector '{rest}'", lineno, offset)
            starts.append(vec)
        else:
            raise ParseError(f"unknown directive '{head}'", lineno, 1)

    if objective is None:
        raise ParseError("missing objective", 1, 1)
    used = max([objective.n_vars] + [e.n_vars for e in ineqs] + [e.n_vars for e in eqs]
               + [e.n_vars for g, h in pairs for e in (g, h)])
    if n is None:
        n = used
    if used > n:
        raise ParseError(f"expression uses x{used} but n = {n}", 1, 1)
    for s in starts:
        if s.size != n:
            raise ParseError(f"start vector has {s.size} entries, expected {n}", 1, 1)

    g_fun, g_jac = _vector_eval(ineqs)
    h_fun, h_jac = _vector_eval(eqs)
    G_fun, G_jac = _vector_eval([g for g, _ in pairs])
    H_fun, H_jac = _vector_eval([h for _, h in pairs])

    problem = MpscProblem(
        n=n, m=len(ineqs), p=len(eqs), q=len(pairs),
        f=lambda x: objective(x), grad_f=lambda x: objective.gradient(x),
        g=g_fun, jac_g=g_jac, h=h_fun, jac_h=h_jac,
        G=G_fun, jac_G=G_jac, H=H_fun, jac_H=H_jac, name=label,
    )

    if validate:
        probes = starts if starts else [np.full(n, 0.5) + 0.01 * np.arange(n)]
        all_exprs = [objective] + ineqs + eqs + [e for g, h in pairs for e in (g, h)]
        for probe in probes:
            for e in all_exprs:
                analytic = e.gradient(probe)
                fd = finite_difference_gradient(lambda z: e(z), probe, step=1e-6)
                denom = max(1.0, float(np.max(np.abs(analytic))))
                if float(np.max(np.abs(analytic - fd))) / denom > 1e-5:
                    raise ParseError(
                        f"gradient of '{e.source}' fails the finite-difference "
                        f"check at {probe.tolist()}", 1, 1,
                    )
    return ProblemFile(problem=problem, starts=starts)


def load_problem_file(path, validate: bool = True) -> ProblemFile:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    import os
    return load_problem_text(text, name=os.path.splitext(os.path.basename(path))[0],
                             validate=validate)
