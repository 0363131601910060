"""Exact word-algebra engine for polynomial test functions of unitary processes.

Letters, words and noncommutative polynomials over the alphabet

    x(j)            self-adjoint indeterminates (no time),
    xl(i, j, t)     self-adjoint liberated indeterminates,
    u(i, t)         the unitary process, with adjoint flag,
    ut(i, t)        the auxiliary free-unitary-Brownian-motion process,
    v(i, t)         the auxiliary unitaries of the liberation alphabet,

together with the derivations and substitution homomorphisms acting on them.
The only rewriting performed on words is the unitarity reduction
``u(i,t) u(i,t)* -> 1`` (same letter kind, same index, same time) plus the
convention that ``ut``/``v`` letters at time zero are the unit.  Times are
held as integer counts of a fixed tick so that all time comparisons made by
the derivations are exact.

All values are immutable after construction and every operation is pure.
"""

from __future__ import annotations

import math

__all__ = [
    "TICK",
    "ticks",
    "tick_seconds",
    "Letter",
    "Word",
    "x",
    "xl",
    "u",
    "ut",
    "v",
    "letter_adjoint",
    "reduce_word",
    "word_adjoint",
    "NCPoly",
    "TensorNCPoly",
    "adjoint",
    "multiply",
    "theta",
    "sharp_apply",
    "delta_u",
    "d_u",
    "d_u_word_formula",
    "pi_t",
    "delta_lib",
    "d_lib",
    "lift_u",
    "liberated_x_index",
    "y_coord",
    "y_inv",
    "poly_isclose",
    "AlphabetError",
]

# One tick is 1e-6 seconds of process time; letters store integer tick counts.
TICK = 1e-6


class AlphabetError(ValueError):
    """A letter of the wrong alphabet reached a derivation or homomorphism."""


def ticks(t: float) -> int:
    """Convert a time in seconds to an exact tick count (t >= 0 required)."""
    if t < 0:
        raise ValueError(f"negative time: {t}")
    k = int(round(t / TICK))
    if abs(k * TICK - t) > TICK * 1e-3:
        raise ValueError(f"time {t} is not representable on the {TICK} tick grid")
    return k


def tick_seconds(k: int) -> float:
    return k * TICK


# A letter is a plain tuple (kind, i, j, t_ticks, star).  Unused slots are 0.
Letter = tuple
Word = tuple

_UNITARY_KINDS = ("u", "ut", "v")


def x(j: int) -> Letter:
    if j < 1:
        raise ValueError("family index must be >= 1")
    return ("x", 0, j, 0, False)


def xl(i: int, j: int, t: float) -> Letter:
    if i < 1 or j < 1:
        raise ValueError("indices must be >= 1")
    return ("xl", i, j, ticks(t), False)


def u(i: int, t: float, star: bool = False) -> Letter:
    if i < 1:
        raise ValueError("group index must be >= 1")
    return ("u", i, 0, ticks(t), star)


def ut(i: int, t: float, star: bool = False) -> Letter:
    if i < 1:
        raise ValueError("group index must be >= 1")
    return ("ut", i, 0, ticks(t), star)


def v(i: int, t: float, star: bool = False) -> Letter:
    if i < 1:
        raise ValueError("group index must be >= 1")
    return ("v", i, 0, ticks(t), star)


def letter_adjoint(l: Letter) -> Letter:
    kind, i, j, t, star = l
    if kind in _UNITARY_KINDS:
        return (kind, i, j, t, not star)
    return l  # x and xl are self-adjoint


def _cancels(a: Letter, b: Letter) -> bool:
    return (
        a[0] in _UNITARY_KINDS
        and a[0] == b[0]
        and a[1] == b[1]
        and a[3] == b[3]
        and a[4] != b[4]
    )


def reduce_word(letters) -> Word:
    """Canonical form: drop ut/v letters at time 0, cancel adjacent unitary pairs."""
    stack: list = []
    for l in letters:
        if l[0] in ("ut", "v") and l[3] == 0:
            continue
        if stack and _cancels(stack[-1], l):
            stack.pop()
        else:
            stack.append(l)
    return tuple(stack)


def word_adjoint(w: Word) -> Word:
    return tuple(letter_adjoint(l) for l in reversed(w))


class NCPoly:
    """Complex-weighted formal words; the free *-algebra element.

    Stored as a map from canonical words to nonzero complex coefficients.
    Supports +, -, scalar and polynomial multiplication, and the adjoint.
    """

    __slots__ = ("_terms",)

    def __init__(self, terms=None):
        clean = {}
        if terms:
            for w, c in terms.items():
                c = complex(c)
                if c != 0:
                    clean[w] = clean.get(w, 0) + c
                    if clean[w] == 0:
                        del clean[w]
        self._terms = clean

    # -- constructors -------------------------------------------------------

    @staticmethod
    def zero() -> "NCPoly":
        return NCPoly()

    @staticmethod
    def one() -> "NCPoly":
        return NCPoly({(): 1.0})

    @staticmethod
    def from_word(w, coeff=1.0) -> "NCPoly":
        return NCPoly({reduce_word(w): coeff})

    @staticmethod
    def from_letter(l: Letter, coeff=1.0) -> "NCPoly":
        return NCPoly.from_word((l,), coeff)

    # -- views ---------------------------------------------------------------

    def terms(self):
        return self._terms.items()

    def words(self):
        return self._terms.keys()

    def coeff(self, w) -> complex:
        return self._terms.get(tuple(w), 0j)

    def letters(self):
        for w in self._terms:
            yield from w

    def degree(self) -> int:
        return max((len(w) for w in self._terms), default=0)

    def max_abs_coeff(self) -> float:
        return max((abs(c) for c in self._terms.values()), default=0.0)

    def is_zero(self) -> bool:
        return not self._terms

    # -- algebra -------------------------------------------------------------

    def __add__(self, other):
        if not isinstance(other, NCPoly):
            return NotImplemented
        out = dict(self._terms)
        for w, c in other._terms.items():
            s = out.get(w, 0) + c
            if s == 0:
                out.pop(w, None)
            else:
                out[w] = s
        res = NCPoly.__new__(NCPoly)
        res._terms = out
        return res

    def __neg__(self):
        res = NCPoly.__new__(NCPoly)
        res._terms = {w: -c for w, c in self._terms.items()}
        return res

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, other):
        if isinstance(other, NCPoly):
            out: dict = {}
            for w1, c1 in self._terms.items():
                for w2, c2 in other._terms.items():
                    w = reduce_word(w1 + w2)
                    c = c1 * c2
                    s = out.get(w, 0) + c
                    if s == 0:
                        out.pop(w, None)
                    else:
                        out[w] = s
            res = NCPoly.__new__(NCPoly)
            res._terms = out
            return res
        if isinstance(other, (int, float, complex)):
            return self._scale(other)
        return NotImplemented

    def __rmul__(self, scalar):
        return self._scale(scalar)

    def _scale(self, scalar):
        scalar = complex(scalar)
        res = NCPoly.__new__(NCPoly)
        if scalar == 0:
            res._terms = {}
        else:
            res._terms = {w: c * scalar for w, c in self._terms.items()}
        return res

    def adjoint(self) -> "NCPoly":
        res = NCPoly.__new__(NCPoly)
        res._terms = {word_adjoint(w): c.conjugate() for w, c in self._terms.items()}
        return res

    def __eq__(self, other):
        return isinstance(other, NCPoly) and self._terms == other._terms

    def __hash__(self):
        return hash(frozenset(self._terms.items()))

    def __repr__(self):
        if not self._terms:
            return "NCPoly(0)"
        bits = []
        for w, c in sorted(self._terms.items()):
            bits.append(f"({c:.6g})*{_word_str(w)}")
        return "NCPoly(" + " + ".join(bits) + ")"


def _letter_str(l: Letter) -> str:
    kind, i, j, t, star = l
    s = "*" if star else ""
    if kind == "x":
        return f"x({j})"
    if kind == "xl":
        return f"xl({i},{j},{tick_seconds(t):g})"
    return f"{kind}{s}({i},{tick_seconds(t):g})"


def _word_str(w: Word) -> str:
    return "1" if not w else ".".join(_letter_str(l) for l in w)


def poly_isclose(p: NCPoly, q: NCPoly, tol: float = 1e-12) -> bool:
    """Coefficient-wise comparison with tolerance relative to the larger poly."""
    scale = max(1.0, p.max_abs_coeff(), q.max_abs_coeff())
    for w in set(p.words()) | set(q.words()):
        if abs(p.coeff(w) - q.coeff(w)) > tol * scale:
            return False
    return True


class TensorNCPoly:
    """Element of the algebraic tensor square, map (word, word) -> coefficient.

    Multiplication is slot-wise: (a (x) b)(c (x) d) = ac (x) bd.
    """

    __slots__ = ("_terms",)

    def __init__(self, terms=None):
        clean = {}
        if terms:
            for k, c in terms.items():
                c = complex(c)
                if c != 0:
                    clean[k] = clean.get(k, 0) + c
                    if clean[k] == 0:
                        del clean[k]
        self._terms = clean

    @staticmethod
    def zero() -> "TensorNCPoly":
        return TensorNCPoly()

    @staticmethod
    def from_pair(w1, w2, coeff=1.0) -> "TensorNCPoly":
        return TensorNCPoly({(reduce_word(w1), reduce_word(w2)): coeff})

    def terms(self):
        return self._terms.items()

    def is_zero(self) -> bool:
        return not self._terms

    def max_abs_coeff(self) -> float:
        return max((abs(c) for c in self._terms.values()), default=0.0)

    def __add__(self, other):
        out = dict(self._terms)
        for k, c in other._terms.items():
            s = out.get(k, 0) + c
            if s == 0:
                out.pop(k, None)
            else:
                out[k] = s
        res = TensorNCPoly.__new__(TensorNCPoly)
        res._terms = out
        return res

    def __neg__(self):
        res = TensorNCPoly.__new__(TensorNCPoly)
        res._terms = {k: -c for k, c in self._terms.items()}
        return res

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, other):
        if isinstance(other, TensorNCPoly):
            out: dict = {}
            for (a1, b1), c1 in self._terms.items():
                for (a2, b2), c2 in other._terms.items():
                    k = (reduce_word(a1 + a2), reduce_word(b1 + b2))
                    s = out.get(k, 0) + c1 * c2
                    if s == 0:
                        out.pop(k, None)
                    else:
                        out[k] = s
            res = TensorNCPoly.__new__(TensorNCPoly)
            res._terms = out
            return res
        scalar = complex(other)
        res = TensorNCPoly.__new__(TensorNCPoly)
        res._terms = {} if scalar == 0 else {k: c * scalar for k, c in self._terms.items()}
        return res

    def __rmul__(self, scalar):
        return self * scalar

    def __eq__(self, other):
        return isinstance(other, TensorNCPoly) and self._terms == other._terms

    def __hash__(self):
        return hash(frozenset(self._terms.items()))

    def __repr__(self):
        if not self._terms:
            return "TensorNCPoly(0)"
        bits = [
            f"({c:.6g})*{_word_str(a)}(x){_word_str(b)}"
            for (a, b), c in sorted(self._terms.items())
        ]
        return "TensorNCPoly(" + " + ".join(bits) + ")"


def tensor_isclose(p: TensorNCPoly, q: TensorNCPoly, tol: float = 1e-12) -> bool:
    scale = max(1.0, p.max_abs_coeff(), q.max_abs_coeff())
    keys = set(p._terms) | set(q._terms)
    return all(abs(p._terms.get(k, 0) - q._terms.get(k, 0)) <= tol * scale for k in keys)


# ---------------------------------------------------------------------------
# basic operations
# ---------------------------------------------------------------------------


def adjoint(p: NCPoly) -> NCPoly:
    return p.adjoint()


def multiply(p: NCPoly, q: NCPoly) -> NCPoly:
    return p * q


def theta(T: TensorNCPoly) -> NCPoly:
    """Flip-multiplication, sending a (x) b to ba, extended linearly."""
    out: dict = {}
    for (a, b), c in T.terms():
        w = reduce_word(b + a)
        s = out.get(w, 0) + c
        if s == 0:
            out.pop(w, None)
        else:
            out[w] = s
    return NCPoly(out)


def sharp_apply(T: TensorNCPoly, xi: NCPoly) -> NCPoly:
    """Bimodule action sending a (x) b applied to xi to a*xi*b."""
    out = NCPoly.zero()
    for (a, b), c in T.terms():
        out = out + c * (NCPoly.from_word(a) * xi * NCPoly.from_word(b))
    return out


# ---------------------------------------------------------------------------
# derivations
# ---------------------------------------------------------------------------


def _check_alphabet(p: NCPoly, allowed, what: str):
    for l in p.letters():
        if l[0] not in allowed:
            raise AlphabetError(f"{what} cannot act on letter kind {l[0]!r}")


def delta_u(t: float, i: int, p: NCPoly) -> TensorNCPoly:
    """The time-t, component-i derivation on polynomials in x and u.

    Generator values (sqrt(-1) written as 1j):

        x(j)        -> 0
        u(i, t')    -> 1j * u(i,t')u(i,t)^* (x) u(i,t)       for t <= t'
        u(i, t')^*  -> -1j * u(i,t)^* (x) u(i,t)u(i,t')^*    for t <= t'

    and 0 whenever the component index differs or t > t'; extended by the
    Leibniz rule d(ab) = d(a)(1 (x) b) + (a (x) 1)d(b).
    """
    _check_alphabet(p, ("x", "u"), "delta_u")
    tk = ticks(t)
    ut_letter = ("u", i, 0, tk, False)
    ut_star = ("u", i, 0, tk, True)
    out: dict = {}
    for w, c in p.terms():
        for pos, l in enumerate(w):
            kind, li, _lj, lt, star = l
            if kind != "u" or li != i or tk > lt:
                continue
            prefix, suffix = w[:pos], w[pos + 1 :]
            if not star:
                # prefix . u(t') u(t)^* (x) u(t) . suffix
                k = (
                    reduce_word(prefix + (l, ut_star)),
                    reduce_word((ut_letter,) + suffix),
                )
                coeff = 1j * c
            else:
                # prefix . u(t)^* (x) u(t) u(t')^* . suffix
                k = (
                    reduce_word(prefix + (ut_star,)),
                    reduce_word((ut_letter, l) + suffix),
                )
                coeff = -1j * c
            s = out.get(k, 0) + coeff
            if s == 0:
                out.pop(k, None)
            else:
                out[k] = s
    return TensorNCPoly(out)


def d_u(t: float, i: int, p: NCPoly) -> NCPoly:
    """theta composed with delta_u; the cyclic-gradient style derivative."""
    return theta(delta_u(t, i, p))


def d_u_word_formula(t: float, i: int, p: NCPoly) -> NCPoly:
    """Independent two-sum evaluation of d_u, used to cross-check theta o delta_u.

    For a word w this is 1j * ( sum over splittings w = w1 u_i(t') w2 with
    t <= t' of u_i(t) w2 w1 u_i(t') u_i(t)^*  minus  sum over splittings
    w = w1 u_i(t')^* w2 with t <= t' of u_i(t) u_i(t')^* w2 w1 u_i(t)^* ).
    """
    _check_alphabet(p, ("x", "u"), "d_u")
    tk = ticks(t)
    u_t = ("u", i, 0, tk, False)
    u_t_star = ("u", i, 0, tk, True)
    out = NCPoly.zero()
    for w, c in p.terms():
        for pos, l in enumerate(w):
            kind, li, _lj, lt, star = l
            if kind != "u" or li != i or tk > lt:
                continue
            w1, w2 = w[:pos], w[pos + 1 :]
            if not star:
                word = (u_t,) + w2 + w1 + (l, u_t_star)
                out = out + NCPoly.from_word(word, 1j * c)
            else:
                word = (u_t, l) + w2 + w1 + (u_t_star,)
                out = out + NCPoly.from_word(word, -1j * c)
    return out


def pi_t(t: float, p: NCPoly, n_lib: int | None = None) -> NCPoly:
    """The time-shift substitution homomorphism.

    u(i,t') goes to ut(i,(t'-t) v 0) u(i, t ^ t'), xl(i,j,t') goes to
    v(i,(t'-t) v 0) xl(i,j,t ^ t') v(i,(t'-t) v 0)^*; x, ut and v letters are
    fixed.  Star letters receive the adjoint of the substituted word.

    ``n_lib`` names the static liberation family: xl letters with group
    index n_lib + 1 have the unit auxiliary unitary, so they are only
    time-clipped (required whenever the alphabet uses the extra family).
    """
    tk = ticks(t)
    out: dict = {}
    for w, c in p.terms():
        sub: list = []
        for l in w:
            kind, i, j, lt, star = l
            if kind == "u":
                off = max(lt - tk, 0)
                base = (("ut", i, 0, off, False), ("u", i, 0, min(tk, lt), False))
                sub.extend(word_adjoint(base) if star else base)
            elif kind == "xl":
                off = max(lt - tk, 0)
                clipped = ("xl", i, j, min(tk, lt), False)
                if n_lib is not None and i == n_lib + 1:
                    sub.append(clipped)
                else:
                    sub.extend(
                        (("v", i, 0, off, False), clipped, ("v", i, 0, off, True))
                    )
            else:
                sub.append(l)
        word = reduce_word(sub)
        s = out.get(word, 0) + c
        if s == 0:
            out.pop(word, None)
        else:
            out[word] = s
    return NCPoly(out)


def delta_lib(t: float, i: int, p: NCPoly) -> TensorNCPoly:
    """The liberation derivation on polynomials in xl (v letters pass through).

    Generator value for xl(i,j,t') with t <= t', writing w = v(i,t'-t):

        xl(i,j,t') -> xl(i,j,t') w (x) w^*  -  w (x) w^* xl(i,j,t')

    and 0 otherwise.  The printed source formula carries the second tensor
    leg as w xl(i,j,t'); that variant breaks the lift intertwining identity
    and theta of it does not vanish on single letters, so the starred leg is
    used (both identities then hold exactly; see the test suite).
    """
    _check_alphabet(p, ("xl", "v"), "delta_lib")
    tk = ticks(t)
    out: dict = {}
    for w, c in p.terms():
        for pos, l in enumerate(w):
            kind, li, lj, lt, _star = l
            if kind != "xl" or li != i or tk > lt:
                continue
            prefix, suffix = w[:pos], w[pos + 1 :]
            off = lt - tk
            vv = ("v", i, 0, off, False)
            vv_star = ("v", i, 0, off, True)
            for k, coeff in (
                ((reduce_word(prefix + (l, vv)), reduce_word((vv_star,) + suffix)), c),
                ((reduce_word(prefix + (vv,)), reduce_word((vv_star, l) + suffix)), -c),
            ):
                s = out.get(k, 0) + coeff
                if s == 0:
                    out.pop(k, None)
                else:
                    out[k] = s
    return TensorNCPoly(out)


def d_lib(t: float, i: int, p: NCPoly) -> NCPoly:
    return theta(delta_lib(t, i, p))


def liberated_x_index(i: int, j: int) -> int:
    """Collision-free family index for the lifted letter of xl(i, j, .)."""
    return (i + j) * (i + j + 1) // 2 + j


def lift_u(p: NCPoly, n: int) -> NCPoly:
    """Unital *-homomorphism from the liberation alphabet into x,u words.

    xl(i,j,t) maps to u(i,t) x(k) u(i,t)^* with k = liberated_x_index(i,j)
    for i <= n, and to the bare x(k) for i = n+1 (whose unitary is the
    identity); v(i,t) maps to ut(i,t).
    """
    _check_alphabet(p, ("xl", "v"), "lift_u")
    out: dict = {}
    for w, c in p.terms():
        sub: list = []
        for l in w:
            kind, i, j, lt, star = l
            if kind == "xl":
                if i > n + 1:
                    raise AlphabetError(f"group index {i} exceeds n+1 = {n + 1}")
                xk = ("x", 0, liberated_x_index(i, j), 0, False)
                if i == n + 1:
                    sub.append(xk)
                else:
                    sub.extend((("u", i, 0, lt, False), xk, ("u", i, 0, lt, True)))
            else:  # v letter
                sub.append(("ut", i, 0, lt, star))
        word = reduce_word(sub)
        s = out.get(word, 0) + c
        if s == 0:
            out.pop(word, None)
        else:
            out[word] = s
    return NCPoly(out)


def y_coord(i: int, t: float) -> NCPoly:
    """The exponentially rescaled coordinate e^{t/2} u(i,t)."""
    return NCPoly.from_letter(("u", i, 0, ticks(t), False), math.exp(t / 2.0))


def y_inv(i: int, t: float) -> NCPoly:
    """Inverse of y_coord: e^{-t/2} u(i,t)^*."""
    return NCPoly.from_letter(("u", i, 0, ticks(t), True), math.exp(-t / 2.0))
