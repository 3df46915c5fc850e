"""Graded symbolic algebra of canonical operators.

Expressions are finite sums of normal-ordered terms.  A term is

    scalar * coefficient(positions) * monomial(momenta)

with all position-like factors (spacetime positions, internal clock times and
formal functions of spatial positions) to the left of all momentum-like factors
(spacetime momenta, internal energies and formal functions of spatial momenta).
Exact rational complex coefficients are used throughout, and the physical
constants (hbar, c, masses) are kept as symbolic Laurent monomials, so equality
of two expressions is equality of their normal forms.

Canonical pairs: (x0_I, p0_I), (x_I, p_I), (T_I, H_I) with [X, P] = i hbar.

Perturbative grading is a property of the normal form:

* ``eps_g``  number of potential factors Phi (each carries Phi/c^2),
* ``eps_p``  power of spatial momenta, plus one per derivative taken on a
  potential factor (hbar d/dx is a momentum scale),
* ``eps_d``  total derivative order landing on formal dressing functions.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

__all__ = [
    "Expr", "GradingRule", "NonTerminatingSeries", "UnregisteredFunction",
    "sym", "const", "scalar", "phi", "sqrt_g00", "sqrt_g00_inv", "gamma_inv", "gamma_fn",
    "omega_fn", "kick_fn", "linear", "commutator", "truncate", "expand_dressing", "conjugate_by_flow",
    "substitute", "bch_series", "relabel", "frame_generators", "frame_map",
    "inverse_frame_map", "compose_maps", "apply_map", "verify_table", "verify_first_class",
    "table_entries", "grading", "DEFAULT_RULE", "EXACT_HBAR",
]

POSITION_KINDS = ("x0", "x", "T")
MOMENTUM_KINDS = ("p0", "p", "H")
CONJUGATE = {"x0": "p0", "x": "p", "T": "H", "p0": "x0", "p": "x", "H": "T"}
_KIND_ORDER = {k: i for i, k in enumerate(POSITION_KINDS + MOMENTUM_KINDS)}

# Formal functions with registered derivative rules.  All except the kick are
# even functions of their (linear) argument, which fixes the sign normalization
# below; the kick is only ever built with a positively oriented clock argument.
POSITION_FUNCS = ("Phi", "sg", "sgi", "kick")
MOMENTUM_FUNCS = ("ginv", "gam", "omega")
_FUNC_ORDER = {n: i for i, n in enumerate(POSITION_FUNCS + MOMENTUM_FUNCS)}

EXACT_HBAR = "hbar"

Symbol = Tuple[str, str]                  # (kind, label)
Linear = Tuple[Tuple[Symbol, Fraction], ...]
ScalarMono = Tuple[Tuple[str, int], ...]
CQ = Tuple[Fraction, Fraction]            # exact complex rational


class NonTerminatingSeries(RuntimeError):
    """A conjugation series failed to terminate within the depth cap."""


class UnregisteredFunction(KeyError):
    """A formal function without a registered derivative rule was differentiated."""


def _label_key(label: str):
    return (label == "M", len(label), label)


def _sym_key(s: Symbol):
    return (_KIND_ORDER[s[0]], _label_key(s[1]))


def _is_position(s: Symbol) -> bool:
    return s[0] in POSITION_KINDS


# ---------------------------------------------------------------- exact scalars

_ZERO: CQ = (Fraction(0), Fraction(0))
_ONE: CQ = (Fraction(1), Fraction(0))
_I: CQ = (Fraction(0), Fraction(1))


def _cmul(a: CQ, b: CQ) -> CQ:
    return (a[0] * b[0] - a[1] * b[1], a[0] * b[1] + a[1] * b[0])


def _cadd(a: CQ, b: CQ) -> CQ:
    return (a[0] + b[0], a[1] + b[1])


def _cq(v) -> CQ:
    if isinstance(v, tuple):
        return (Fraction(v[0]), Fraction(v[1]))
    if isinstance(v, complex):
        return (Fraction(v.real).limit_denominator(10**12), Fraction(v.imag).limit_denominator(10**12))
    return (Fraction(v), Fraction(0))


def _smul(a: ScalarMono, b: ScalarMono) -> ScalarMono:
    d: Dict[str, int] = dict(a)
    for k, v in b:
        d[k] = d.get(k, 0) + v
    return tuple(sorted((k, v) for k, v in d.items() if v != 0))


def _spow(a: ScalarMono, n: int) -> ScalarMono:
    return tuple((k, v * n) for k, v in a) if n else ()


# ---------------------------------------------------------------- linear forms

def linear(*pairs) -> Linear:
    """Build a linear form from (symbol, coefficient) pairs, merging repeats."""
    d: Dict[Symbol, Fraction] = {}
    for s, c in pairs:
        d[s] = d.get(s, Fraction(0)) + Fraction(c)
    return tuple(sorted(((s, c) for s, c in d.items() if c != 0), key=lambda t: _sym_key(t[0])))


def _normalize_arg(L: Linear, order: int, name: str = "") -> Tuple[Linear, int]:
    """Even-function normalization: first coefficient positive; returns sign."""
    if name != "kick" and L and L[0][1] < 0:
        return tuple((s, -c) for s, c in L), (-1) ** order
    return L, 1


# Function factor: (name, param, deriv_order, arg)
Func = Tuple[str, str, int, Linear]


def _func_key(f: Func):
    return (_FUNC_ORDER[f[0]], f[1], f[2], tuple((_sym_key(s), c) for s, c in f[3]))


@dataclass(frozen=True)
class _Side:
    funcs: Tuple[Func, ...] = ()
    pows: Tuple[Tuple[Symbol, int], ...] = ()

    def merge(self, other: "_Side") -> "_Side":
        funcs = tuple(sorted(self.funcs + other.funcs, key=_func_key))
        d: Dict[Symbol, int] = dict(self.pows)
        for s, n in other.pows:
            d[s] = d.get(s, 0) + n
        pows = tuple(sorted(((s, n) for s, n in d.items() if n), key=lambda t: _sym_key(t[0])))
        return _Side(funcs, pows)

    def depends_on(self, s: Symbol) -> bool:
        if any(t == s for t, _ in self.pows):
            return True
        return any(any(t == s for t, _ in f[3]) for f in self.funcs)

    def derivative(self, s: Symbol) -> List[Tuple[Fraction, int, "_Side"]]:
        """d/ds as a list of (coefficient, formal_order_added, side)."""
        out = []
        for i, (t, n) in enumerate(self.pows):
            if t == s:
                pows = list(self.pows)
                if n == 1:
                    pows.pop(i)
                else:
                    pows[i] = (t, n - 1)
                out.append((Fraction(n), 0, _Side(self.funcs, tuple(pows))))
        for i, f in enumerate(self.funcs):
            coeff = dict(f[3]).get(s)
            if coeff is None:
                continue
            name, param, order, arg = f
            if name not in _FUNC_ORDER:
                raise UnregisteredFunction(name)
            new_arg, sign = _normalize_arg(arg, order + 1, name)
            nf = (name, param, order + 1, new_arg)
            funcs = tuple(sorted(self.funcs[:i] + (nf,) + self.funcs[i + 1:], key=_func_key))
            out.append((coeff * sign, 1, _Side(funcs, self.pows)))
        return out


OpKey = Tuple[_Side, _Side]
TermKey = Tuple[ScalarMono, _Side, _Side]


def grading(key: TermKey) -> Tuple[int, int, int]:
    """(eps_g, eps_p, eps_d) multidegree of a normal-ordered term."""
    _, X, P = key
    g = sum(1 for f in X.funcs if f[0] == "Phi")
    dphi = sum(f[2] for f in X.funcs if f[0] == "Phi")
    p = sum(n for s, n in P.pows if s[0] == "p") + dphi
    d = sum(f[2] for f in X.funcs) + sum(f[2] for f in P.funcs)
    return g, p, d


# ---------------------------------------------------------------- expressions

class Expr:
    """Immutable sum of normal-ordered terms."""

    __slots__ = ("terms",)

    def __init__(self, terms: Optional[Mapping[TermKey, CQ]] = None):
        self.terms: Dict[TermKey, CQ] = {k: v for k, v in (terms or {}).items() if v != _ZERO}

    # construction helpers
    @staticmethod
    def _single(key: TermKey, c: CQ = _ONE) -> "Expr":
        return Expr({key: c})

    def is_zero(self) -> bool:
        return not self.terms

    def __eq__(self, other) -> bool:
        if not isinstance(other, Expr):
            other = const(other)
        return (self - other).is_zero()

    def __hash__(self):
        return hash(frozenset(self.terms.items()))

    def __add__(self, other) -> "Expr":
        if not isinstance(other, Expr):
            other = const(other)
        d = dict(self.terms)
        for k, v in other.terms.items():
            d[k] = _cadd(d.get(k, _ZERO), v)
        return Expr(d)

    __radd__ = __add__

    def __neg__(self) -> "Expr":
        return Expr({k: (-v[0], -v[1]) for k, v in self.terms.items()})

    def __sub__(self, other) -> "Expr":
        if not isinstance(other, Expr):
            other = const(other)
        return self + (-other)

    def __rsub__(self, other) -> "Expr":
        return const(other) - self

    def __mul__(self, other) -> "Expr":
        if not isinstance(other, Expr):
            other = const(other)
        return multiply(self, other)

    def __rmul__(self, other) -> "Expr":
        return const(other) * self

    def __pow__(self, n: int) -> "Expr":
        out = const(1)
        for _ in range(n):
            out = out * self
        return out

    def scale(self, c, mono: ScalarMono = ()) -> "Expr":
        cq = _cq(c)
        return Expr({(_smul(k[0], mono), k[1], k[2]): _cmul(v, cq) for k, v in self.terms.items()})

    def symbols(self) -> set:
        out = set()
        for _, X, P in self.terms:
            for side in (X, P):
                out.update(s for s, _ in side.pows)
                for f in side.funcs:
                    out.update(s for s, _ in f[3])
        return out

    def has_functions(self, names: Optional[Iterable[str]] = None) -> bool:
        names = set(names) if names is not None else set(_FUNC_ORDER)
        return any(f[0] in names for _, X, P in self.terms for f in X.funcs + P.funcs)

    def gradings(self) -> List[Tuple[int, int, int]]:
        return sorted({grading(k) for k in self.terms})

    def __repr__(self) -> str:
        if not self.terms:
            return "0"
        return " + ".join(_term_str(k, v) for k, v in sorted(self.terms.items(), key=lambda kv: _term_sort(kv[0])))

    def to_json(self) -> list:
        return [{"term": _term_str(k, v), "grading": dict(zip(("eps_g", "eps_p", "eps_d"), grading(k)))}
                for k, v in sorted(self.terms.items(), key=lambda kv: _term_sort(kv[0]))]


def _term_sort(k: TermKey):
    s, X, P = k
    return (grading(k), str(s), [(_sym_key(a), n) for a, n in X.pows], [_func_key(f) for f in X.funcs],
            [(_sym_key(a), n) for a, n in P.pows], [_func_key(f) for f in P.funcs])


def _sym_str(s: Symbol) -> str:
    return f"{s[0]}_{s[1]}"


def _lin_str(L: Linear) -> str:
    parts = []
    for s, c in L:
        parts.append(("" if c == 1 else "-" if c == -1 else f"{c}*") + _sym_str(s))
    return " + ".join(parts).replace("+ -", "- ")


def _func_str(f: Func) -> str:
    name, param, order, arg = f
    tag = name + (f"[{param}]" if param else "") + ("'" * order if order < 4 else f"^({order})")
    return f"{tag}({_lin_str(arg)})"


def _term_str(k: TermKey, v: CQ) -> str:
    s, X, P = k
    re, im = v
    if im == 0:
        c = str(re)
    elif re == 0:
        c = f"{im}i"
    else:
        c = f"({re}{'+' if im > 0 else '-'}{abs(im)}i)"
    factors = [c] + [f"{n}^{p}" if p != 1 else n for n, p in s]
    factors += [_func_str(f) for f in X.funcs] + [_sym_str(a) + (f"^{n}" if n > 1 else "") for a, n in X.pows]
    factors += [_sym_str(a) + (f"^{n}" if n > 1 else "") for a, n in P.pows] + [_func_str(f) for f in P.funcs]
    return "*".join(factors)


# ---------------------------------------------------------------- constructors

def sym(kind: str, label) -> Expr:
    s = (kind, str(label))
    side = _Side((), ((s, 1),))
    return Expr._single(((), side, _Side()) if _is_position(s) else ((), _Side(), side))


def scalar(**powers) -> Expr:
    """Scalar monomial, e.g. scalar(c=-2, m1=-1)."""
    mono = tuple(sorted((k, int(v)) for k, v in powers.items() if v))
    return Expr._single((mono, _Side(), _Side()))


def const(c) -> Expr:
    return Expr._single(((), _Side(), _Side()), _cq(c))


def _func_expr(name: str, param: str, arg: Linear, order: int = 0) -> Expr:
    arg, sign = _normalize_arg(arg, order, name)
    f = (name, param, order, arg)
    if name in POSITION_FUNCS:
        if not all(_is_position(s) for s, _ in arg):
            raise ValueError(f"{name} takes a position argument")
        key = ((), _Side((f,), ()), _Side())
    else:
        if not all(not _is_position(s) for s, _ in arg):
            raise ValueError(f"{name} takes a momentum argument")
        key = ((), _Side(), _Side((f,), ()))
    return Expr._single(key, _cq(sign))


def _lin(arg) -> Linear:
    if isinstance(arg, tuple) and arg and isinstance(arg[0], tuple) and isinstance(arg[0][0], tuple):
        return linear(*arg)
    raise TypeError("argument must be a linear form")


def phi(arg: Linear, order: int = 0) -> Expr:
    """Newtonian potential Phi (or its derivative) of a linear position form."""
    return _func_expr("Phi", "", arg, order)


def sqrt_g00(arg: Linear) -> Expr:
    return _func_expr("sg", "", arg)


def sqrt_g00_inv(arg: Linear) -> Expr:
    return _func_expr("sgi", "", arg)


def kick_fn(arg: Linear, tau: str = "tau") -> Expr:
    """Formal measurement delta(arg - tau) of a clock-time argument."""
    return _func_expr("kick", tau, arg)


def gamma_inv(arg: Linear, mass: str) -> Expr:
    return _func_expr("ginv", mass, arg)


def gamma_fn(arg: Linear, mass: str) -> Expr:
    return _func_expr("gam", mass, arg)


def omega_fn(arg: Linear, mass: str) -> Expr:
    """omega = m c sqrt(1 + L^2/(m c)^2), momentum units."""
    return _func_expr("omega", mass, arg)


# ---------------------------------------------------------------- multiplication

def _reorder(P: _Side, X: _Side, dmax: Optional[int]) -> List[Tuple[CQ, int, _Side, _Side]]:
    """Rewrite P(p) X(x) = sum (-i hbar)^k/beta! d_x^beta X d_p^beta P.

    Returns (coefficient, hbar_power, X', P') tuples.  ``dmax`` caps the total
    derivative order applied to formal functions; ``None`` means exact, which
    raises when both sides are formal in the same canonical pair.
    """
    pairs = [s for s in _momentum_symbols(P) if X.depends_on((CONJUGATE[s[0]], s[1]))]
    states = [(_ONE, 0, 0, X, P)]
    for ps in pairs:
        xs = (CONJUGATE[ps[0]], ps[1])
        new_states = []
        for coef, hp, formal, X0, P0 in states:
            layer = [(Fraction(1), 0, X0, P0)]
            k = 0
            while layer:
                for c, fo, Xk, Pk in layer:
                    tot = formal + fo
                    if dmax is not None and tot > dmax:
                        continue
                    # (-i)^k / k!
                    phase = [(_ONE), (Fraction(0), Fraction(-1)), (Fraction(-1), Fraction(0)), (Fraction(0), Fraction(1))][k % 4]
                    cc = _cmul(coef, _cmul(phase, (c / math.factorial(k), Fraction(0))))
                    new_states.append((cc, hp + k, tot, Xk, Pk))
                k += 1
                nxt: Dict[Tuple[int, _Side, _Side], Fraction] = {}
                for c, fo, Xk, Pk in layer:
                    for cx, fx, Xd in Xk.derivative(xs):
                        for cp, fp, Pd in Pk.derivative(ps):
                            tot = formal + fo + fx + fp
                            if dmax is not None and tot > dmax:
                                continue
                            key = (fo + fx + fp, Xd, Pd)
                            nxt[key] = nxt.get(key, Fraction(0)) + c * cx * cp
                layer = [(c, fo, Xd, Pd) for (fo, Xd, Pd), c in nxt.items() if c != 0]
                if dmax is None and k > 64:
                    raise NonTerminatingSeries(
                        f"reordering {_sym_str(ps)} past {_sym_str(xs)} does not terminate; "
                        "both factors are formal functions of the same canonical pair")
        states = new_states
    return [(c, hp, Xk, Pk) for c, hp, _, Xk, Pk in states]


def _momentum_symbols(P: _Side) -> List[Symbol]:
    out = {s for s, _ in P.pows}
    for f in P.funcs:
        out.update(s for s, _ in f[3])
    return sorted(out, key=_sym_key)


def multiply(A: Expr, B: Expr, dmax: Optional[int] = None) -> Expr:
    out: Dict[TermKey, CQ] = {}
    for (sa, Xa, Pa), ca in A.terms.items():
        for (sb, Xb, Pb), cb in B.terms.items():
            base = _cmul(ca, cb)
            smono = _smul(sa, sb)
            for c, hp, Xd, Pd in _reorder(Pa, Xb, dmax):
                key = (_smul(smono, ((EXACT_HBAR, hp),)) if hp else smono, Xa.merge(Xd), Pd.merge(Pb))
                out[key] = _cadd(out.get(key, _ZERO), _cmul(base, c))
    return Expr(out)


# ---------------------------------------------------------------- grading rules

@dataclass(frozen=True)
class GradingRule:
    """Predicate on (eps_g, eps_p, eps_d) multidegrees.

    Default: keep eps_p up to 4 and eps_g up to 1, and drop every mixed term of
    order eps_g * eps_p^2 or higher.  ``max_p_internal`` caps eps_p in terms
    carrying an internal energy H.  ``freeze_dressing`` makes conjugation flows
    treat dressing factors as commuting with the conjugated variables: any
    derivative landing on a formal dressing function inside a flow is dropped.
    """

    max_g: int = 1
    max_p: int = 4
    mixed_p_cutoff: Optional[int] = 2
    max_p_internal: Optional[int] = None
    freeze_dressing: bool = True

    def keep(self, g: int, p: int, d: int = 0, internal: bool = False) -> bool:
        if g > self.max_g or p > self.max_p:
            return False
        if self.mixed_p_cutoff is not None and g >= 1 and p >= self.mixed_p_cutoff:
            return False
        if internal and self.max_p_internal is not None and p > self.max_p_internal:
            return False
        return True

    def keeps_term(self, key: TermKey) -> bool:
        internal = any(s[0] == "H" for s, _ in key[2].pows)
        return self.keep(*grading(key), internal=internal)

    def to_dict(self) -> dict:
        return {"max_g": self.max_g, "max_p": self.max_p, "mixed_p_cutoff": self.mixed_p_cutoff,
                "max_p_internal": self.max_p_internal, "freeze_dressing": self.freeze_dressing}


DEFAULT_RULE = GradingRule()


def truncate(A: Expr, rule: GradingRule = DEFAULT_RULE) -> Expr:
    return Expr({k: v for k, v in A.terms.items() if rule.keeps_term(k)})


def _truncate_g(A: Expr, max_g: int) -> Expr:
    # eps_g never decreases under products, so this cut is safe mid-computation.
    return Expr({k: v for k, v in A.terms.items() if grading(k)[0] <= max_g})


def commutator(A: Expr, B: Expr, rule: Optional[GradingRule] = None, dmax: Optional[int] = None) -> Expr:
    """[A, B] exactly (rule=None) or truncated by ``rule``."""
    out = multiply(A, B, dmax) - multiply(B, A, dmax)
    return truncate(out, rule) if rule is not None else out


# ---------------------------------------------------------------- series expansion

def _lin_expr(L: Linear) -> Expr:
    out = const(0)
    for s, c in L:
        out = out + sym(*s).scale(c)
    return out


def _mass_scalar(mass: str, mpow: int, cpow: int) -> ScalarMono:
    return tuple(sorted(((f"m{mass}", mpow), ("c", cpow))))


def _expand_func(f: Func, side_position: bool) -> Expr:
    name, param, order, arg = f
    if name == "Phi":
        return _func_expr(name, param, arg, order)
    if order:
        raise NonTerminatingSeries(f"cannot expand derivative {_func_str(f)} of a dressing function")
    if name == "kick":
        return _func_expr(name, param, arg, 0)
    if name in ("sg", "sgi"):
        sign = 1 if name == "sg" else -1
        return const(1) + phi(arg).scale(sign, (("c", -2),))
    L2 = _lin_expr(arg) * _lin_expr(arg)
    L4 = L2 * L2
    if name == "ginv":
        return const(1) + L2.scale(Fraction(-1, 2), _mass_scalar(param, -2, -2)) \
            + L4.scale(Fraction(3, 8), _mass_scalar(param, -4, -4))
    if name == "gam":
        return const(1) + L2.scale(Fraction(1, 2), _mass_scalar(param, -2, -2)) \
            + L4.scale(Fraction(-1, 8), _mass_scalar(param, -4, -4))
    if name == "omega":
        return _expand_func(("gam", param, 0, arg), False).scale(1, _mass_scalar(param, 1, 1))
    raise UnregisteredFunction(name)


def expand_dressing(A: Expr, rule: GradingRule = DEFAULT_RULE) -> Expr:
    """Replace formal dressing functions by their truncated series and apply ``rule``."""
    out = const(0)
    for (s, X, P), c in A.terms.items():
        term = Expr._single((s, _Side((), X.pows), _Side()), c)
        for f in X.funcs:
            term = _truncate_g(term * _expand_func(f, True), rule.max_g)
        mom = Expr._single(((), _Side(), _Side((), P.pows)))
        for f in P.funcs:
            mom = _expand_func(f, False) * mom
        out = out + truncate(term * mom, rule)
    return truncate(out, rule)


# ---------------------------------------------------------------- flows

def bch_series(G: Expr, A: Expr, rule: GradingRule = DEFAULT_RULE, depth: int = 12) -> Expr:
    """e^G A e^-G = A + [G,A] + [G,[G,A]]/2! + ..., terminating or failing loudly."""
    dmax = 0 if rule.freeze_dressing else None
    total = A
    term = A
    for n in range(1, depth + 1):
        term = _truncate_g(commutator(G, term, dmax=dmax), rule.max_g).scale(Fraction(1, n))
        if term.is_zero():
            return total
        total = total + term
    raise NonTerminatingSeries(
        f"conjugation series not terminated after depth {depth}; residual gradings {term.gradings()}")


def _image_linear(images: Mapping[Symbol, Expr], L: Linear, position: bool) -> Linear:
    pairs = []
    for s, c in L:
        img = images.get(s)
        if img is None:
            pairs.append((s, c))
            continue
        for (smono, X, P), v in img.terms.items():
            side = X if position else P
            other = P if position else X
            if smono or v[1] != 0 or side.funcs or other.pows or other.funcs or len(side.pows) != 1 \
                    or side.pows[0][1] != 1:
                raise NonTerminatingSeries(
                    f"image of {_sym_str(s)} is not a linear form; formal functions cannot be transported")
            pairs.append((side.pows[0][0], c * v[0]))
    return linear(*pairs)


def substitute(A: Expr, images: Mapping[Symbol, Expr], dmax: Optional[int] = None) -> Expr:
    """Apply the algebra automorphism fixed by the images of basic symbols."""
    out = const(0)
    for (s, X, P), c in A.terms.items():
        term = Expr._single((s, _Side(), _Side()), c)
        for f in X.funcs:
            term = multiply(term, _func_expr(f[0], f[1], _image_linear(images, f[3], True), f[2]), dmax)
        for a, n in X.pows:
            img = images.get(a, sym(*a))
            for _ in range(n):
                term = multiply(term, img, dmax)
        for a, n in P.pows:
            img = images.get(a, sym(*a))
            for _ in range(n):
                term = multiply(term, img, dmax)
        for f in P.funcs:
            term = multiply(term, _func_expr(f[0], f[1], _image_linear(images, f[3], False), f[2]), dmax)
        out = out + term
    return out


def _flow_images(G: Expr, symbols: Iterable[Symbol], rule: GradingRule, depth: int) -> Dict[Symbol, Expr]:
    return {s: bch_series(G, sym(*s), rule, depth) for s in symbols}


def conjugate_by_flow(G: Expr, A: Expr, rule: GradingRule = DEFAULT_RULE, depth: int = 12,
                      expand: bool = True) -> Expr:
    """e^G A e^-G, truncated by ``rule``.

    Conjugation is an algebra automorphism, so it is evaluated on basic symbols
    by the BCH series and transported to products and formal functions by
    substitution.
    """
    syms = A.symbols()
    syms |= {(CONJUGATE[s[0]], s[1]) for s in syms}
    syms |= G.symbols()
    images = _flow_images(G, syms, rule, depth)
    out = substitute(A, images, 0 if rule.freeze_dressing else None)
    out = _truncate_g(out, rule.max_g)
    return expand_dressing(out, rule) if expand else out


# ---------------------------------------------------------------- relabeling

def relabel(A: Expr, mapping: Mapping[str, str]) -> Expr:
    """Rename particle labels (e.g. swap '1' and '2'), including mass scalars."""
    def rs(s: Symbol) -> Symbol:
        return (s[0], mapping.get(s[1], s[1]))

    def rl(L: Linear) -> Linear:
        return linear(*((rs(s), c) for s, c in L))

    def rside(side: _Side) -> _Side:
        funcs = []
        sign = 1
        for name, param, order, arg in side.funcs:
            arg2, sg = _normalize_arg(rl(arg), order)
            sign *= sg
            funcs.append((name, mapping.get(param, param), order, arg2))
        return _Side((), ()).merge(_Side(tuple(funcs), tuple((rs(s), n) for s, n in side.pows))), sign

    out: Dict[TermKey, CQ] = {}
    for (s, X, P), c in A.terms.items():
        smono = tuple(sorted(((f"m{mapping.get(k[1:], k[1:])}" if k.startswith("m") else k), v) for k, v in s))
        X2, s1 = rside(X)
        P2, s2 = rside(P)
        key = (smono, X2, P2)
        out[key] = _cadd(out.get(key, _ZERO), _cmul(c, _cq(s1 * s2)))
    return Expr(out)


# ---------------------------------------------------------------- frame transformations

def _i_over_hbar(A: Expr, sign: int = 1) -> Expr:
    return A.scale((0, sign), ((EXACT_HBAR, -1),))


def worldline_factor(label: str, frame_arg: Optional[Linear] = None, mom_arg: Optional[Linear] = None) -> Expr:
    """Formal Delta(x_I - x_M, p_I) = sqrt(g00) * gamma^-1."""
    xa = frame_arg if frame_arg is not None else linear((("x", label), 1), (("x", "M"), -1))
    pa = mom_arg if mom_arg is not None else linear((("p", label), 1))
    return sqrt_g00(xa) * gamma_inv(pa, label)


def frame_generators(frame: str, labels: Sequence[str]) -> List[Expr]:
    """Generators [G_dilation, G_space, G_time] of the frame map, applied right to left.

    The map is T = e^{G_dilation} e^{G_space} e^{G_time}.  The dilation factor
    uses log sqrt(g^00(x_M)) so that time components are rescaled into the
    locally inertial frame, sqrt(g00(q_M)) k0 for the momenta.
    """
    others = [l for l in labels if l != frame]
    xM = linear((("x", "M"), 1))
    # G_time: (i/hbar) x0_f (f0 - p0_f)
    F = sym("p0", "M")
    for l in labels:
        if l != frame:
            F = F + sym("p0", l)
        F = F + worldline_factor(l) * sym("H", l).scale(1, (("c", -1),))
    g_time = _i_over_hbar(sym("x0", frame) * F)
    # G_space: (i/hbar) x_f (f1 - p_f)
    P = sym("p", "M")
    for l in others:
        P = P + sym("p", l)
    g_space = _i_over_hbar(sym("x", frame) * P)
    # G_dilation: -(i/hbar) log sqrt(g00(x_M)) / 2 * sum (x0 p0 + p0 x0), log sqrt(g00) ~ Phi/c^2
    S = const(0)
    for l in labels:
        S = S + sym("x0", l) * sym("p0", l) + sym("p0", l) * sym("x0", l)
    g_dil = _i_over_hbar(phi(xM).scale(Fraction(1, 2), (("c", -2),)) * S, sign=-1)
    return [g_dil, g_space, g_time]


def all_symbols(labels: Sequence[str]) -> List[Symbol]:
    out = []
    for l in list(labels) + ["M"]:
        kinds = ("x0", "x", "p0", "p") + (("T", "H") if l != "M" else ())
        out.extend((k, l) for k in kinds)
    return out


def frame_map(frame: str, labels: Sequence[str], rule: GradingRule = DEFAULT_RULE) -> Dict[Symbol, Expr]:
    """Images T A T^dagger of every basic symbol under the frame map of ``frame``."""
    g_dil, g_space, g_time = frame_generators(frame, labels)
    syms = all_symbols(labels)
    images = {s: sym(*s) for s in syms}
    dmax = 0 if rule.freeze_dressing else None
    # T A T^dagger = D (S (R A R^dag) S^dag) D^dag: innermost flow first.
    for G in (g_time, g_space, g_dil):
        step = _flow_images(G, syms, rule, 12)
        images = {s: _truncate_g(substitute(img, step, dmax), rule.max_g) for s, img in images.items()}
    return images


def inverse_frame_map(frame: str, labels: Sequence[str], rule: GradingRule = DEFAULT_RULE) -> Dict[Symbol, Expr]:
    """Images T^dagger A T (flows with negated generators in reverse order)."""
    g_dil, g_space, g_time = frame_generators(frame, labels)
    syms = all_symbols(labels)
    images = {s: sym(*s) for s in syms}
    dmax = 0 if rule.freeze_dressing else None
    for G in (-g_dil, -g_space, -g_time):
        step = _flow_images(G, syms, rule, 12)
        images = {s: _truncate_g(substitute(img, step, dmax), rule.max_g) for s, img in images.items()}
    return images


def compose_maps(first: Mapping[Symbol, Expr], second: Mapping[Symbol, Expr], rule: GradingRule = DEFAULT_RULE
                 ) -> Dict[Symbol, Expr]:
    """Automorphism 'apply first, then second' on basic symbols."""
    dmax = 0 if rule.freeze_dressing else None
    return {s: _truncate_g(substitute(img, second, dmax), rule.max_g) for s, img in first.items()}


def apply_map(images: Mapping[Symbol, Expr], A: Expr, rule: GradingRule = DEFAULT_RULE) -> Expr:
    dmax = 0 if rule.freeze_dressing else None
    return expand_dressing(_truncate_g(substitute(A, images, dmax), rule.max_g), rule)


# ---------------------------------------------------------------- tables

def _x(k, l):
    return sym(k, l)


def _sum(items: Iterable[Expr]) -> Expr:
    out = const(0)
    for e in items:
        out = out + e
    return out


def table_entries(which: str, labels: Sequence[str] = ("1", "2", "3")) -> List[Tuple[str, Expr, Expr]]:
    """(name, left-hand side, right-hand side) of every line of a conjugation table.

    Symbols are shared between frames: after a frame map, x/p stand for the
    relational variables of that frame (q/k for frame 1, r/u for frame 2).
    """
    labels = list(labels)
    if which in ("T1", "T2"):
        f = "1" if which == "T1" else "2"
        return _frame_table(f, labels)
    if which == "T12":
        return _swap_table(labels)
    raise ValueError(f"unknown table {which!r}")


def _frame_table(f: str, labels: List[str]) -> List[Tuple[str, Expr, Expr]]:
    others = [l for l in labels if l != f]
    xM = linear((("x", "M"), 1))
    sgM, sgiM = sqrt_g00(xM), sqrt_g00_inv(xM)
    inv_c = lambda e: e.scale(1, (("c", -1),))
    rows = [
        (f"x0_{f}", _x("x0", f), sgiM * _x("x0", f)),
        (f"x_{f}", _x("x", f), _x("x", f)),
    ]
    for i in others:
        rows.append((f"x0_{i}", _x("x0", i), sgiM * (_x("x0", i) + _x("x0", f))))
        rows.append((f"x_{i}", _x("x", i), _x("x", i) + _x("x", f)))
    rows.append(("x0_M", _x("x0", "M"), _x("x0", "M") + sgiM * _x("x0", f)))
    rows.append(("x_M", _x("x", "M"), _x("x", "M") + _x("x", f)))
    pf_shift = linear((("p", f), 1), *((("p", i), -1) for i in others), (("p", "M"), -1))
    rhs_p0f = sgM * (_x("p0", f) - _sum(_x("p0", i) for i in others)) \
        - _sum(worldline_factor(i) * inv_c(_x("H", i)) for i in others) - _x("p0", "M") \
        - worldline_factor(f, frame_arg=xM, mom_arg=pf_shift) * inv_c(_x("H", f))
    rows.append((f"p0_{f}", _x("p0", f), rhs_p0f))
    rows.append((f"p_{f}", _x("p", f), _lin_expr(pf_shift)))
    for i in others:
        rows.append((f"p0_{i}", _x("p0", i), sgM * _x("p0", i)))
        rows.append((f"p_{i}", _x("p", i), _x("p", i)))
    rows.append(("p0_M", _x("p0", "M"), _x("p0", "M")))
    rows.append(("p_M", _x("p", "M"), _x("p", "M")))
    return rows


def _swap_table(labels: List[str]) -> List[Tuple[str, Expr, Expr]]:
    rest = [l for l in labels if l not in ("1", "2")]
    j_others = [l for l in labels if l != "2"]
    r1M = linear((("x", "1"), 1), (("x", "M"), -1))
    rM = linear((("x", "M"), 1))
    ratio = sqrt_g00(r1M) * sqrt_g00_inv(rM)          # sqrt(g00(r1-rM)/g00(rM))
    inv_ratio = sqrt_g00_inv(r1M) * sqrt_g00(rM)      # sqrt(g^00(r1-rM)/g^00(rM)) = 1/ratio
    inv_c = lambda e: e.scale(1, (("c", -1),))
    u2_shift = linear((("p", "2"), 1), *((("p", j), -1) for j in j_others), (("p", "M"), -1))
    rows = [
        ("q0_1", _x("x0", "1"), ratio * (_x("x0", "1") + _x("x0", "2"))),
        ("q_1", _x("x", "1"), _x("x", "1") + _x("x", "2")),
        ("q0_2", _x("x0", "2"), -(ratio * _x("x0", "1"))),
        ("q_2", _x("x", "2"), -_x("x", "1")),
    ]
    for l in rest:
        rows.append((f"q0_{l}", _x("x0", l), ratio * (_x("x0", l) - _x("x0", "1"))))
        rows.append((f"q_{l}", _x("x", l), _x("x", l) - _x("x", "1")))
    rows.append(("q0_M", _x("x0", "M"), _x("x0", "M") - sqrt_g00_inv(rM) * _x("x0", "1")))
    rows.append(("q_M", _x("x", "M"), _x("x", "M") - _x("x", "1")))
    rows.append(("k0_1", _x("p0", "1"), sqrt_g00_inv(r1M) * sqrt_g00(rM) * _x("p0", "2")))
    rows.append(("k_1", _x("p", "1"), _x("p", "2")))
    rhs_k02 = inv_ratio * (_x("p0", "2") - _sum(_x("p0", j) for j in j_others)) \
        - sqrt_g00_inv(r1M) * (_sum(worldline_factor(j) * inv_c(_x("H", j)) for j in j_others)
                               + _x("p0", "M")
                               + worldline_factor("2", frame_arg=rM, mom_arg=u2_shift) * inv_c(_x("H", "2")))
    rows.append(("k0_2", _x("p0", "2"), rhs_k02))
    rows.append(("k_2", _x("p", "2"), _lin_expr(u2_shift)))
    for l in rest:
        rows.append((f"k0_{l}", _x("p0", l), inv_ratio * _x("p0", l)))
        rows.append((f"k_{l}", _x("p", l), _x("p", l)))
    rows.append(("k0_M", _x("p0", "M"), _x("p0", "M")))
    rows.append(("k_M", _x("p", "M"), _x("p", "M")))
    return rows


def table_map(which: str, labels: Sequence[str], rule: GradingRule = DEFAULT_RULE) -> Dict[Symbol, Expr]:
    if which == "T1":
        return frame_map("1", labels, rule)
    if which == "T2":
        return frame_map("2", labels, rule)
    if which == "T12":
        # T12 A T12^dag = T2 (T1^dag A T1) T2^dag
        return compose_maps(inverse_frame_map("1", labels, rule), frame_map("2", labels, rule), rule)
    if which == "T21":
        return compose_maps(inverse_frame_map("2", labels, rule), frame_map("1", labels, rule), rule)
    raise ValueError(which)


def verify_table(which: str, rule: GradingRule = DEFAULT_RULE, labels: Sequence[str] = ("1", "2", "3")) -> dict:
    """Check every line of a conjugation table; failures are report content."""
    images = table_map(which, labels, rule)
    lines = []
    for name, lhs, rhs in table_entries(which, labels):
        got = apply_map(images, lhs, rule)
        want = expand_dressing(rhs, rule)
        residual = got - want
        lines.append({"line": f"{which}: {name}", "pass": residual.is_zero(),
                      "residual": residual.to_json(), "residual_gradings": residual.gradings()})
    return {"table": which, "rule": rule.to_dict(), "labels": list(labels), "lines": lines,
            "failures": sum(not l["pass"] for l in lines)}


def verify_first_class(constraints: Mapping[str, Expr], rule: GradingRule = DEFAULT_RULE) -> dict:
    """All pairwise commutators; exact zeros flagged, residual gradings reported."""
    names = list(constraints)
    pairs = []
    for a, b in itertools.combinations(names, 2):
        exact = commutator(constraints[a], constraints[b])
        trunc = truncate(exact, rule)
        pairs.append({"pair": f"[{a}, {b}]", "exact_zero": exact.is_zero(), "truncated_zero": trunc.is_zero(),
                      "residual_gradings": exact.gradings(), "residual_terms": len(exact.terms),
                      "truncated_residual": trunc.to_json()})
    return {"rule": rule.to_dict(), "pairs": pairs, "failures": sum(not p["truncated_zero"] for p in pairs)}


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True, default=str)
