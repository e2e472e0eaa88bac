"""Small arithmetic expression language for scenario configs.

Metrics, coefficients and initial data are declared as closed-form
expressions over the variables x1, x2, xi, t (plus the constant pi) and
evaluated once per grid node at setup time.  The evaluator accepts both
scalars and numpy arrays in the bindings, so whole fields are produced in
a single AST walk.

Grammar (highest binding first):
    ^ (right-assoc)  >  unary -  >  * /  >  + -
Functions: sin, cos, exp, sqrt, abs, min, max.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FUNCTIONS = {
    "sin": (1, np.sin),
    "cos": (1, np.cos),
    "exp": (1, np.exp),
    "sqrt": (1, None),  # guarded in eval
    "abs": (1, np.abs),
    "min": (2, np.minimum),
    "max": (2, np.maximum),
}

KNOWN_VARIABLES = ("x1", "x2", "xi", "t", "pi")


class ExprError(Exception):
    """Base class for parse- and eval-time failures; carries a byte offset."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class ParseError(ExprError):
    pass


class EvalError(ExprError):
    pass


# --- AST -------------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float
    offset: int = 0


@dataclass(frozen=True)
class Var:
    name: str
    offset: int = 0


@dataclass(frozen=True)
class Neg:
    child: object
    offset: int = 0


@dataclass(frozen=True)
class Bin:
    op: str
    left: object
    right: object
    offset: int = 0


@dataclass(frozen=True)
class Call:
    fn: str
    args: tuple
    offset: int = 0


def same_shape(a, b):
    """Structural equality ignoring source offsets."""
    if type(a) is not type(b):
        return False
    if isinstance(a, Num):
        return a.value == b.value
    if isinstance(a, Var):
        return a.name == b.name
    if isinstance(a, Neg):
        return same_shape(a.child, b.child)
    if isinstance(a, Bin):
        return a.op == b.op and same_shape(a.left, b.left) and same_shape(a.right, b.right)
    if isinstance(a, Call):
        return (a.fn == b.fn and len(a.args) == len(b.args)
                and all(same_shape(x, y) for x, y in zip(a.args, b.args)))
    return False


# --- Tokenizer -------------------------------------------------------------

_OPS = set("+-*/^(),")


def _tokenize(source):
    tokens = []
    i, n = 0, len(source)
    while i < n:
        c = source[i]
        if c.isspace():
            i += 1
            continue
        if c in _OPS:
            tokens.append((c, c, i))
            i += 1
            continue
        if c.isdigit() or (c == "." and i + 1 < n and source[i + 1].isdigit()):
            j = i
            while j < n and (source[j].isdigit() or source[j] == "."):
                j += 1
            if j < n and source[j] in "eE":
                k = j + 1
                if k < n and source[k] in "+-":
                    k += 1
                if k < n and source[k].isdigit():
                    j = k
                    while j < n and source[j].isdigit():
                        j += 1
            text = source[i:j]
            try:
                value = float(text)
            except ValueError:
                raise ParseError(f"malformed number {text!r}", i)
            tokens.append(("num", value, i))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            tokens.append(("name", source[i:j], i))
            i = j
            continue
        raise ParseError(f"unexpected character {c!r}", i)
    tokens.append(("end", None, n))
    return tokens


# --- Pratt parser -----------------------------------------------------------

_LBP = {"+": 10, "-": 10, "*": 20, "/": 20, "^": 40}
_UNARY_BP = 30  # binds tighter than * / but looser than ^


class _Parser:
    def __init__(self, source):
        self.tokens = _tokenize(source)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind):
        tok = self.advance()
        if tok[0] != kind:
            raise ParseError(f"expected {kind!r}, found {tok[0]!r}", tok[2])
        return tok

    def expression(self, rbp=0):
        kind, value, offset = self.advance()
        if kind == "num":
            left = Num(value, offset)
        elif kind == "name":
            if self.peek()[0] == "(":
                left = self.call(value, offset)
            elif value in FUNCTIONS:
                raise ParseError(f"function {value!r} requires arguments", offset)
            else:
                left = Var(value, offset)
        elif kind == "-":
            left = Neg(self.expression(_UNARY_BP), offset)
        elif kind == "(":
            left = self.expression(0)
            self.expect(")")
        else:
            raise ParseError(f"expected a value, found {kind!r}", offset)

        while True:
            kind, _, offset = self.peek()
            bp = _LBP.get(kind, 0)
            if bp <= rbp:
                return left
            self.advance()
            # '^' is right-associative: recurse with slightly lower threshold
            right = self.expression(bp - 1 if kind == "^" else bp)
            left = Bin(kind, left, right, offset)

    def call(self, name, offset):
        if name not in FUNCTIONS:
            raise ParseError(f"unknown function {name!r}", offset)
        arity = FUNCTIONS[name][0]
        self.expect("(")
        args = [self.expression(0)]
        while self.peek()[0] == ",":
            self.advance()
            args.append(self.expression(0))
        self.expect(")")
        if len(args) != arity:
            raise ParseError(
                f"function {name!r} takes {arity} argument(s), got {len(args)}", offset)
        return Call(name, tuple(args), offset)


def parse(source):
    """Parse UTF-8 text into an expression AST."""
    parser = _Parser(source)
    ast = parser.expression(0)
    kind, _, offset = parser.peek()
    if kind != "end":
        raise ParseError(f"trailing input starting with {kind!r}", offset)
    return ast


# --- Evaluation -------------------------------------------------------------

class EvalContext:
    """Name -> value bindings.  pi is always bound; values may be arrays."""

    def __init__(self, bindings=None):
        self.bindings = {"pi": np.pi}
        if bindings:
            self.bindings.update(bindings)

    def lookup(self, name, offset):
        try:
            return self.bindings[name]
        except KeyError:
            raise EvalError(f"unbound variable {name!r}", offset) from None


def evaluate(ast, ctx):
    """Evaluate an AST under a context; deterministic IEEE double arithmetic."""
    if isinstance(ctx, dict):
        ctx = EvalContext(ctx)
    return _eval(ast, ctx)


def _eval(node, ctx):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return ctx.lookup(node.name, node.offset)
    if isinstance(node, Neg):
        return -_eval(node.child, ctx)
    if isinstance(node, Bin):
        a = _eval(node.left, ctx)
        b = _eval(node.right, ctx)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if node.op == "/":
            if np.any(b == 0):
                raise EvalError("division by zero", node.offset)
            return a / b
        if node.op == "^":
            # negative base with non-integer exponent has no real value
            if np.any((np.asarray(a) < 0) & (np.asarray(b) != np.floor(b))):
                raise EvalError("negative base with non-integer exponent", node.offset)
            return a ** b
        raise EvalError(f"unknown operator {node.op!r}", node.offset)
    if isinstance(node, Call):
        args = [_eval(arg, ctx) for arg in node.args]
        if node.fn == "sqrt":
            if np.any(np.asarray(args[0]) < 0):
                raise EvalError("sqrt of negative value", node.offset)
            return np.sqrt(args[0])
        return FUNCTIONS[node.fn][1](*args)
    raise EvalError(f"unknown node {type(node).__name__}", getattr(node, "offset", 0))


# --- Pretty printer ---------------------------------------------------------

def _prec(node):
    if isinstance(node, Bin):
        return _LBP[node.op]
    if isinstance(node, Neg):
        return _UNARY_BP
    return 100


def to_source(node):
    """Render an AST back to parseable text (minimal parentheses)."""
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        inner = to_source(node.child)
        if _prec(node.child) <= _UNARY_BP and not isinstance(node.child, Neg):
            # operand binds no tighter than unary minus: parenthesize
            inner = f"({inner})"
        elif isinstance(node.child, Neg):
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(node, Bin):
        bp = _LBP[node.op]
        left = to_source(node.left)
        right = to_source(node.right)
        if node.op == "^":
            # right-assoc: parenthesize left at equal precedence
            if _prec(node.left) <= bp:
                left = f"({left})"
            if _prec(node.right) < bp:
                right = f"({right})"
        else:
            if _prec(node.left) < bp:
                left = f"({left})"
            if _prec(node.right) <= bp:
                right = f"({right})"
        return f"{left} {node.op} {right}"
    if isinstance(node, Call):
        return f"{node.fn}({', '.join(to_source(a) for a in node.args)})"
    raise TypeError(f"not an AST node: {node!r}")


def compile_expr(source_or_ast):
    """Accept text, AST, numbers or callables; return an evaluation callable.

    The callable takes keyword bindings and returns the evaluated value.
    """
    if isinstance(source_or_ast, (int, float)):
        value = float(source_or_ast)
        return lambda **kw: value
    if callable(source_or_ast) and not isinstance(source_or_ast, (Num, Var, Neg, Bin, Call)):
        import inspect

        params = inspect.signature(source_or_ast).parameters
        if any(p.kind is inspect.Parameter.VAR_KEYWORD for p in params.values()):
            return lambda **kw: source_or_ast(**kw)
        names = set(params)
        return lambda **kw: source_or_ast(**{k: v for k, v in kw.items() if k in names})
    ast = parse(source_or_ast) if isinstance(source_or_ast, str) else source_or_ast
    return lambda **kw: evaluate(ast, EvalContext(kw))
