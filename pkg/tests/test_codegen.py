import re

import numpy as np
import pytest

from reactorgp.codegen import (PolicySyntaxError, emit_structured_text, parse_policy,
                               print_policy)
from reactorgp.expr import Binary, Const, Var, complexity, eval_expr, random_tree

REF_POLICY = Binary("-", Binary("+", Var("T", 30),
                                  Binary("*", Const(2.0), Binary("-", Var("S"), Var("T")))),
                      Const(1.0))


def test_print_examples():
    assert print_policy(Const(1.0)) == "1"
    assert print_policy(Var("T", 30)) == "(var T -30)"
    assert print_policy(Var("S")) == "(var S 0)"
    assert print_policy(REF_POLICY) == "(- (+ (var T -30) (* 2 (- (var S 0) (var T 0)))) 1)"
    assert complexity(parse_policy(print_policy(REF_POLICY))) == 9


def test_parse_examples():
    assert parse_policy("(+ 1 2)") == Binary("+", Const(1.0), Const(2.0))
    assert parse_policy("  (var That -50)\n") == Var("That", 50)
    assert parse_policy("-2.5e-3") == Const(-0.0025)


@pytest.mark.parametrize("text,msg,line,col", [
    ("(var X 0)", "unknown variable X", 1, 6),
    ("(var T -15)", "illegal lag -15", 1, 8),
    ("(var T 30)", "illegal lag 30", 1, 8),
    ("(^ 1 2)", "unknown operator", 1, 2),
    ("(+ 1\n  2", "unexpected end of input", 2, 4),
    ("(+ 1 2) 3", "trailing input", 1, 9),
    ("(+ 1 abc)", "invalid number", 1, 6),
    ("(+ 1\n 2 3)", "expected ')'", 2, 4),
    (")", "unexpected ')'", 1, 1),
    ("", "unexpected end of input", 1, 1),
    ("inf", "invalid number", 1, 1),
])
def test_parse_errors_carry_position(text, msg, line, col):
    with pytest.raises(PolicySyntaxError, match=re.escape(msg)) as ei:
        parse_policy(text)
    assert (ei.value.line, ei.value.column) == (line, col)


def test_round_trip_random_trees():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        e = random_tree(rng)
        assert parse_policy(print_policy(e)) == e


def test_constants_round_trip_bitwise():
    for v in (0.1, -1 / 3, 1e-300, 2.0 ** 0.5, 123456789.123):
        assert parse_policy(print_policy(Const(v))).value == v


# -- structured text ----------------------------------------------------------

def run_st(source, inputs):
    """Tiny interpreter for the emitted subset: constants, assignments, IF/ELSE, LIMIT."""
    lines = source.splitlines()
    env = {}
    consts = re.findall(r"^\s+(\w+) : REAL := ([^;]+);", source, re.M)
    for name, lit in consts:
        env[name] = float(lit)
    env.update(inputs)
    body = lines[lines.index("") + 1:lines.index("END_FUNCTION_BLOCK")]
    py, indent = [], 0
    for ln in body:
        s = ln.strip()
        if s.startswith("IF "):
            py.append("    " * indent + "if " + s[3:-5].replace("ABS", "abs") + ":")
            indent += 1
        elif s == "ELSE":
            py.append("    " * (indent - 1) + "else:")
        elif s == "END_IF;":
            indent -= 1
        else:
            target, expr = s.rstrip(";").split(" := ", 1)
            expr = re.sub(r"LIMIT\(MN := (.+), IN := (.+), MX := (.+)\)",
                          r"min(max(\2, \1), \3)", expr)
            py.append("    " * indent + f"{target} = {expr}")
    exec("\n".join(py), {}, env)
    return env["That"]


def test_reference_policy_taps_and_body(ref_stats):
    art = emit_structured_text(REF_POLICY, ref_stats)
    assert set(art.taps) == {("T", 0), ("T", 30), ("S", 0)}
    assert len(art.taps) == 3
    assert art.taps_csv().splitlines() == ["variable,delay_s", "S,0", "T,0", "T,30"]
    assert "T_30 : REAL;  // T, dead time 30 s" in art.source
    assert "MEAN_TEMP : REAL := 359.12;" in art.source
    assert "y := (((n_T_30 + (2.0 * (n_S - n_T))) - 1.0));" not in art.source
    assert "y := ((n_T_30 + (2.0 * (n_S - n_T))) - 1.0);" in art.source


def test_emitted_code_matches_eval(ref_stats):
    """Executing the emitted block equals the binding semantics."""
    rng = np.random.default_rng(3)
    for _ in range(200):
        e = random_tree(rng, 2, 5)
        art = emit_structured_text(e, ref_stats)
        raw = {}
        for name, lag in art.taps:
            raw[(name, lag)] = float(rng.uniform(0.0, 2.0) if name not in ("S", "T", "That")
                                     else rng.uniform(350, 366))
        inputs = {(name if lag == 0 else f"{name}_{lag}"): v for (name, lag), v in raw.items()}
        z = eval_expr(e, {k: ref_stats.normalize(v, k[0]) for k, v in raw.items()})
        if not np.isfinite(z):
            continue
        want = float(np.clip(ref_stats.denormalize(z, "That"), 352.0, 365.0))
        assert run_st(art.source, inputs) == pytest.approx(want, rel=1e-12, abs=1e-9)


def test_protected_division_emitted(ref_stats):
    e = Binary("/", Var("S"), Binary("-", Var("T"), Var("T")))
    art = emit_structured_text(e, ref_stats)
    assert "IF ABS(den_1) < DIV_EPS THEN" in art.source
    # quotient forced to 1.0: denormalized 365.59 clips to 365
    assert run_st(art.source, {"S": 360.0, "T": 355.0}) == 365.0
    e = Binary("/", Binary("-", Var("T"), Var("S")), Const(4.0))
    want = ref_stats.denormalize((355.0 - 360.0) / 6.47 / 4.0, "That")
    assert run_st(emit_structured_text(e, ref_stats).source,
                  {"S": 360.0, "T": 355.0}) == pytest.approx(want, abs=1e-12)


def test_const_policy_has_no_taps(ref_stats):
    art = emit_structured_text(Const(10.0), ref_stats)
    assert art.taps == [] and art.taps_csv() == "variable,delay_s\n"
    assert "VAR_INPUT\nEND_VAR" in art.source
    assert run_st(art.source, {}) == 365.0


def test_tap_completeness(ref_stats):
    rng = np.random.default_rng(8)
    from reactorgp.expr import variables
    for _ in range(100):
        e = random_tree(rng)
        art = emit_structured_text(e, ref_stats)
        assert sorted(art.taps) == sorted(set(variables(e)))


def test_emission_is_byte_stable(ref_stats):
    a = emit_structured_text(REF_POLICY, ref_stats).source
    b = emit_structured_text(parse_policy(print_policy(REF_POLICY)), ref_stats).source
    assert a.encode() == b.encode()
