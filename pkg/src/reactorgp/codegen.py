"""Canonical policy text and structured-text (SCL-flavored) controller emission.

Canonical grammar::

    expr := number | "(var" NAME LAG ")" | "(" OP expr expr ")"

with OP one of ``+ - * /`` and LAG in {0, -10, ..., -50} seconds.
"""
from __future__ import annotations

import csv
import io
import math
import re
from dataclasses import dataclass, field
from typing import List, Tuple

from .expr import LAGS, OPS, PROTECT_EPS, VARIABLES, Binary, Const, Expr, Var, variables
from .data import TEMPERATURE_CHANNELS, NormalizationStats
from .reactor import T_HAT_RANGE


class PolicySyntaxError(ValueError):
    def __init__(self, msg, line, column):
        super().__init__(f"{msg} at line {line}, column {column}")
        self.line = line
        self.column = column


def format_number(v: float) -> str:
    return format(float(v), ".17g")


def print_policy(e: Expr) -> str:
    if isinstance(e, Const):
        return format_number(e.value)
    if isinstance(e, Var):
        return f"(var {e.name} {-e.lag if e.lag else 0})"
    return f"({e.op} {print_policy(e.left)} {print_policy(e.right)})"


_TOKEN = re.compile(r"\s*(?:(\()|(\))|([^\s()]+))")
_NUMBER = re.compile(r"^[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?$")


def _tokenize(text: str):
    tokens = []
    pos = 0
    line, line_start = 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            break
        for i in range(pos, m.end()):
            if text[i] == "\n":
                line, line_start = line + 1, i + 1
        start = m.start(m.lastindex)
        tokens.append((m.group(m.lastindex), line, start - line_start + 1))
        pos = m.end()
    # trailing whitespace only
    return tokens, (line, len(text) - line_start + 1)


def parse_policy(text: str) -> Expr:
    """Parse canonical policy text; errors carry line/column."""
    tokens, end = _tokenize(text)
    pos = 0

    def peek():
        return tokens[pos] if pos < len(tokens) else (None, *end)

    def take():
        nonlocal pos
        tok = peek()
        if tok[0] is None:
            raise PolicySyntaxError("unexpected end of input", tok[1], tok[2])
        pos += 1
        return tok

    def expect_close():
        tok = take()
        if tok[0] != ")":
            raise PolicySyntaxError(f"expected ')' but found {tok[0]!r}", tok[1], tok[2])

    def parse():
        tok, line, col = take()
        if tok == ")":
            raise PolicySyntaxError("unexpected ')'", line, col)
        if tok != "(":
            if not _NUMBER.match(tok):
                raise PolicySyntaxError(f"invalid number {tok!r}", line, col)
            v = float(tok)
            if not math.isfinite(v):
                raise PolicySyntaxError(f"non-finite constant {tok!r}", line, col)
            return Const(v)
        head, hl, hc = take()
        if head == "var":
            name, nl, nc = take()
            if name not in VARIABLES:
                raise PolicySyntaxError(f"unknown variable {name}", nl, nc)
            lag_tok, ll, lc = take()
            try:
                lag = -int(lag_tok)
            except ValueError:
                raise PolicySyntaxError(f"illegal lag {lag_tok}", ll, lc) from None
            if lag not in LAGS or (lag_tok.startswith("+")) or (lag and not lag_tok.startswith("-")):
                raise PolicySyntaxError(f"illegal lag {lag_tok}", ll, lc)
            expect_close()
            return Var(name, lag)
        if head in OPS:
            left = parse()
            right = parse()
            expect_close()
            return Binary(head, left, right)
        raise PolicySyntaxError(f"unknown operator {head!r}", hl, hc)

    e = parse()
    if pos != len(tokens):
        tok, line, col = tokens[pos]
        raise PolicySyntaxError(f"trailing input {tok!r}", line, col)
    return e


# ---------------------------------------------------------------------------
# structured text

@dataclass
class StructuredTextArtifact:
    source: str
    taps: List[Tuple[str, int]] = field(default_factory=list)  # (variable, delay seconds)

    def taps_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["variable", "delay_s"])
        for name, delay in self.taps:
            w.writerow([name, delay])
        return buf.getvalue()


def st_real(v: float) -> str:
    """IEC REAL literal (always with a decimal point)."""
    s = format(float(v), ".17g")
    mant, _, exp = s.partition("e")
    if "." not in mant:
        mant += ".0"
    if exp:
        return f"{mant}E{int(exp)}"
    return mant


def _tap_name(name, lag):
    return name if lag == 0 else f"{name}_{lag}"


def _stat_key(channel):
    return "TEMP" if channel in TEMPERATURE_CHANNELS else channel.upper()


def emit_structured_text(e: Expr, stats: NormalizationStats,
                         block_name: str = "FB_SetpointPolicy") -> StructuredTextArtifact:
    """Function block computing the reactor temperature setpoint from tapped inputs."""
    taps = sorted(variables(e), key=lambda t: (VARIABLES.index(t[0]), t[1]))
    channels = sorted({_stat_key(n) for n, _ in taps} | {"TEMP"},
                      key=lambda k: (k != "TEMP", k))
    stat_of = {}
    for name, _ in taps:
        stat_of[_stat_key(name)] = name
    stat_of.setdefault("TEMP", "T")

    statements: List[str] = []
    temps: List[str] = []

    def emit(node) -> str:
        if isinstance(node, Const):
            lit = st_real(node.value)
            return f"({lit})" if node.value < 0 or lit.startswith("-") else lit
        if isinstance(node, Var):
            return f"n_{_tap_name(node.name, node.lag)}"
        a = emit(node.left)
        b = emit(node.right)
        if node.op != "/":
            return f"({a} {node.op} {b})"
        k = len(temps) // 2 + 1
        den, quo = f"den_{k}", f"quo_{k}"
        temps.extend([den, quo])
        statements.append(f"{den} := {b};")
        statements.append(f"IF ABS({den}) < DIV_EPS THEN")
        statements.append(f"    {quo} := 1.0;")
        statements.append("ELSE")
        statements.append(f"    {quo} := {a} / {den};")
        statements.append("END_IF;")
        return quo

    body = emit(e)

    out = [f"FUNCTION_BLOCK {block_name}", "VAR_INPUT"]
    for name, lag in taps:
        note = "current value" if lag == 0 else f"dead time {lag} s"
        out.append(f"    {_tap_name(name, lag)} : REAL;  // {name}, {note}")
    out += ["END_VAR", "VAR_OUTPUT", "    That : REAL;  // reactor temperature setpoint [K]",
            "END_VAR", "VAR CONSTANT"]
    for key in channels:
        ch = stat_of[key]
        out.append(f"    MEAN_{key} : REAL := {st_real(stats.mean[ch])};")
        out.append(f"    STD_{key} : REAL := {st_real(stats.std[ch])};")
    out += [f"    THAT_MIN : REAL := {st_real(T_HAT_RANGE[0])};",
            f"    THAT_MAX : REAL := {st_real(T_HAT_RANGE[1])};",
            f"    DIV_EPS : REAL := {st_real(PROTECT_EPS)};",
            "END_VAR", "VAR"]
    for name, lag in taps:
        out.append(f"    n_{_tap_name(name, lag)} : REAL;")
    for t in temps:
        out.append(f"    {t} : REAL;")
    out += ["    y : REAL;", "END_VAR", ""]
    for name, lag in taps:
        key = _stat_key(name)
        tn = _tap_name(name, lag)
        out.append(f"n_{tn} := ({tn} - MEAN_{key}) / STD_{key};")
    out += statements
    out.append(f"y := {body};")
    out.append("That := LIMIT(MN := THAT_MIN, IN := y * STD_TEMP + MEAN_TEMP, MX := THAT_MAX);")
    out.append("END_FUNCTION_BLOCK")
    return StructuredTextArtifact("\n".join(out) + "\n", [(n, lag) for n, lag in taps])
