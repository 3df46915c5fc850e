import json
from fractions import Fraction

import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from qrfsim import algebra as alg
from qrfsim.model import build_constraints

HBAR_I = alg.scalar(hbar=1).scale((0, 1))
X_M = alg.linear((("x", "M"), 1))

POLY_SYMBOLS = [("x", "1"), ("p", "1"), ("x", "2"), ("p", "2"), ("x0", "2"), ("p0", "2"), ("T", "2"), ("H", "2")]
# symbols that never occur as arguments of dressing functions in the frame generators
CLOCK_SYMBOLS = [("x0", "1"), ("p0", "1"), ("x0", "2"), ("p0", "2"), ("T", "1"), ("H", "1"), ("T", "2"), ("H", "2"),
                 ("x0", "M"), ("p0", "M")]


def polynomials(symbols, max_terms=3, max_degree=2):
    term = st.tuples(st.integers(-3, 3), st.lists(st.sampled_from(symbols), max_size=max_degree))

    def build(terms):
        out = alg.const(0)
        for coeff, factors in terms:
            t = alg.const(coeff)
            for s in factors:
                t = t * alg.sym(*s)
            out = out + t
        return out
    return st.lists(term, min_size=1, max_size=max_terms).map(build)


def test_canonical_pairs():
    assert alg.commutator(alg.sym("x", "1"), alg.sym("p", "1")) == HBAR_I
    assert alg.commutator(alg.sym("x0", "2"), alg.sym("p0", "2")) == HBAR_I
    assert alg.commutator(alg.sym("T", "2"), alg.sym("H", "2")) == HBAR_I
    assert alg.commutator(alg.sym("x", "1"), alg.sym("p", "2")).is_zero()
    assert alg.commutator(alg.sym("T", "1"), alg.sym("H", "2")).is_zero()
    assert alg.commutator(alg.sym("x0", "1"), alg.sym("p", "1")).is_zero()


def test_function_commutator_uses_derivative():
    # [p, Phi(x - x_M)] = -i hbar Phi'(x - x_M)
    arg = alg.linear((("x", "1"), 1), (("x", "M"), -1))
    got = alg.commutator(alg.sym("p", "1"), alg.phi(arg))
    assert got == alg.phi(arg, 1) * HBAR_I.scale(-1)


def test_truncation_rule():
    rule = alg.DEFAULT_RULE
    assert rule.keep(0, 4) and rule.keep(1, 0) and rule.keep(1, 1)
    assert not rule.keep(1, 2) and not rule.keep(2, 0) and not rule.keep(0, 6)
    p = alg.sym("p", "1")
    expr = alg.phi(X_M) * p * p + p ** 4 + alg.phi(X_M)
    kept = alg.truncate(expr)
    assert kept == p ** 4 + alg.phi(X_M)
    assert alg.truncate(kept) == kept


def test_flow_translation():
    G = (alg.sym("p", "1")).scale((0, 1), (("hbar", -1),))
    assert alg.conjugate_by_flow(G, alg.sym("x", "1")) == alg.sym("x", "1") + alg.const(1)


def test_frame_generator_examples():
    g_dil, g_space, _ = alg.frame_generators("1", ("1", "2"))
    assert alg.conjugate_by_flow(g_space, alg.sym("x", "2")) == alg.sym("x", "2") + alg.sym("x", "1")
    want = alg.expand_dressing(alg.sqrt_g00(X_M) * alg.sym("p0", "2"))
    assert alg.conjugate_by_flow(g_dil, alg.sym("p0", "2")) == want


def test_non_terminating_series_is_an_error():
    G = (alg.sym("x", "1") * alg.sym("p", "1")).scale((0, 1), (("hbar", -1),))
    with pytest.raises(alg.NonTerminatingSeries):
        alg.conjugate_by_flow(G, alg.sym("x", "1"))


@pytest.mark.parametrize("regime", ["galilean", "sr", "newtonian", "full"])
def test_constraints_are_first_class(regime):
    rep = build_constraints(regime).first_class_report()
    assert rep["failures"] == 0
    pairs = {p["pair"]: p for p in rep["pairs"]}
    for name in ("[C1, f1]", "[C2, f1]", "[f0, f1]", "[C1, C2]"):
        assert pairs[name]["exact_zero"], name
    for name in ("[C1, f0]", "[C2, f0]"):
        # every residual term is of order eps_g * eps_p^2 or beyond
        assert all(g >= 1 and p >= 2 for g, p, _ in pairs[name]["residual_gradings"])


def test_loosened_rule_exposes_residual():
    cs = build_constraints("full")
    rep = alg.verify_first_class(cs.expanded, alg.GradingRule(mixed_p_cutoff=None))
    assert rep["failures"] > 0


def test_measurement_constraint_contains_kick():
    cs = build_constraints("full", measurement="2")
    assert cs.formal["f0"].has_functions(["kick"])
    assert cs.first_class_report()["failures"] == 0


def test_galilean_constraints_drop_rest_energy():
    cs = build_constraints("galilean")
    p = alg.sym("p", "1")
    want = alg.sym("p0", "1") - (p * p).scale(Fraction(1, 2), (("c", -1), ("m1", -1)))
    assert (cs.expanded["C1"] - want).is_zero()
    assert "C1" in cs.rest_energy_offsets
    f0 = alg.sym("p0", "1") + alg.sym("p0", "2") \
        + alg.sym("H", "1").scale(1, (("c", -1),)) + alg.sym("H", "2").scale(1, (("c", -1),))
    assert (cs.expanded["f0"] - f0).is_zero()


def test_full_constraints_truncate_to_galilean():
    full = build_constraints("full", quantum_M=False)
    gal = build_constraints("galilean")
    rule = gal.rule
    for name in ("f0", "f1"):
        assert (alg.expand_dressing(full.formal[name], rule) - gal.expanded[name]).is_zero()
    for name in ("C1", "C2"):
        # the only difference is the rest-energy constant removed in the galilean limit
        diff = alg.expand_dressing(full.formal[name], rule) - gal.expanded[name]
        assert (diff - gal.rest_energy_offsets[name]).is_zero()


@pytest.mark.parametrize("which", ["T1", "T2", "T12"])
def test_conjugation_tables(which):
    rep = alg.verify_table(which)
    assert rep["failures"] == 0
    assert len(rep["lines"]) >= 10
    json.dumps(rep)


def test_table_lines_named_in_examples():
    t1 = {l["line"]: l["pass"] for l in alg.verify_table("T1")["lines"]}
    assert t1["T1: x_1"] and t1["T1: x_2"] and t1["T1: p0_2"]
    t12 = {l["line"]: l["pass"] for l in alg.verify_table("T12")["lines"]}
    assert t12["T12: q_2"]


def test_relabel_swaps_masses_and_symbols():
    e = alg.sym("p", "1").scale(1, (("m1", -1),)) * alg.sym("x", "2")
    swapped = alg.relabel(e, {"1": "2", "2": "1"})
    assert swapped == alg.sym("x", "1") * alg.sym("p", "2").scale(1, (("m2", -1),))


FAST = settings(max_examples=100, deadline=None, suppress_health_check=[HealthCheck.too_slow])


@FAST
@given(polynomials(POLY_SYMBOLS), polynomials(POLY_SYMBOLS))
def test_antisymmetry(a, b):
    assert alg.commutator(a, b) == -alg.commutator(b, a)


@FAST
@given(polynomials(POLY_SYMBOLS), polynomials(POLY_SYMBOLS), polynomials(POLY_SYMBOLS), st.integers(-4, 4))
def test_bilinearity(a, b, c, n):
    assert alg.commutator(a + c.scale(n), b) == alg.commutator(a, b) + alg.commutator(c, b).scale(n)


@FAST
@given(polynomials(POLY_SYMBOLS), polynomials(POLY_SYMBOLS), polynomials(POLY_SYMBOLS))
def test_jacobi(a, b, c):
    C = alg.commutator
    assert (C(a, C(b, c)) + C(b, C(c, a)) + C(c, C(a, b))).is_zero()


@FAST
@given(polynomials(POLY_SYMBOLS, max_terms=4, max_degree=3))
def test_truncate_idempotent(a):
    t = alg.truncate(alg.phi(X_M) * a + a)
    assert alg.truncate(t) == t


def _homomorphism(G, a, b):
    lhs = alg.conjugate_by_flow(G, alg.commutator(a, b))
    rhs = alg.expand_dressing(alg.commutator(alg.conjugate_by_flow(G, a), alg.conjugate_by_flow(G, b)))
    return (lhs - rhs).is_zero()


@FAST
@given(polynomials(POLY_SYMBOLS), polynomials(POLY_SYMBOLS), st.sampled_from([0, 1]))
def test_conjugation_homomorphism_dilation_and_space(a, b, which):
    G = alg.frame_generators("1", ("1", "2"))[which]
    assert _homomorphism(G, a, b)


@FAST
@given(polynomials(CLOCK_SYMBOLS), polynomials(CLOCK_SYMBOLS))
def test_conjugation_homomorphism_time_flow(a, b):
    G = alg.frame_generators("1", ("1", "2"))[2]
    assert _homomorphism(G, a, b)


def test_swap_round_trip_is_identity():
    labels = ("1", "2", "3")
    t12 = alg.table_map("T12", labels)
    t21 = alg.table_map("T21", labels)
    for s in alg.all_symbols(labels):
        back = alg.apply_map(t21, alg.apply_map(t12, alg.sym(*s)))
        assert back == alg.sym(*s), s
