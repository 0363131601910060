"""Trace polynomials: sums of scalar x (product of trace symbols) x word.

The closed class in which projected gradients and drift coefficients live.
A term is ``coeff * Tr(w_1) ... Tr(w_k) * carrier`` where the ``w_m`` and the
carrier are canonical words.  Trace symbols are stored in a fixed canonical
cyclic rotation, so structural equality respects the trace property.
"""

from __future__ import annotations

from .algebra import (
    NCPoly,
    Word,
    reduce_word,
    word_adjoint,
    _word_str,
)

__all__ = ["TracePoly", "canonical_rotation", "trace_poly_isclose"]


def canonical_rotation(w: Word) -> Word:
    """Lexicographically least cyclic rotation of a word."""
    if len(w) <= 1:
        return w
    return min(w[k:] + w[:k] for k in range(len(w)))


class TracePoly:
    """Finite sum of (complex scalar, trace-symbol multiset, carrier word) terms."""

    __slots__ = ("_terms",)

    def __init__(self, terms=None):
        clean = {}
        if terms:
            for (syms, w), c in terms.items():
                c = complex(c)
                if c != 0:
                    key = (tuple(sorted(syms)), w)
                    clean[key] = clean.get(key, 0) + c
                    if clean[key] == 0:
                        del clean[key]
        self._terms = clean

    # -- constructors --------------------------------------------------------

    @staticmethod
    def zero() -> "TracePoly":
        return TracePoly()

    @staticmethod
    def from_ncpoly(p: NCPoly) -> "TracePoly":
        return TracePoly({((), w): c for w, c in p.terms()})

    @staticmethod
    def from_term(coeff, sym_words=(), carrier=()) -> "TracePoly":
        syms = tuple(sorted(canonical_rotation(reduce_word(w)) for w in sym_words))
        return TracePoly({(syms, reduce_word(carrier)): coeff})

    # -- views ----------------------------------------------------------------

    def terms(self):
        return self._terms.items()

    def is_zero(self) -> bool:
        return not self._terms

    def max_abs_coeff(self) -> float:
        return max((abs(c) for c in self._terms.values()), default=0.0)

    def carrier_poly(self) -> NCPoly:
        """Drop trace symbols; only valid when no term carries any."""
        if any(syms for (syms, _w) in self._terms):
            raise ValueError("trace polynomial has nonscalar trace symbols")
        return NCPoly({w: c for (_s, w), c in self._terms.items()})

    def words(self):
        """All words appearing as either a trace symbol or a carrier."""
        seen = set()
        for (syms, w) in self._terms:
            for s in syms:
                seen.add(s)
            seen.add(w)
        return seen

    # -- algebra ---------------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, NCPoly):
            other = TracePoly.from_ncpoly(other)
        out = dict(self._terms)
        for k, c in other._terms.items():
            s = out.get(k, 0) + c
            if s == 0:
                out.pop(k, None)
            else:
                out[k] = s
        res = TracePoly.__new__(TracePoly)
        res._terms = out
        return res

    def __neg__(self):
        res = TracePoly.__new__(TracePoly)
        res._terms = {k: -c for k, c in self._terms.items()}
        return res

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, other):
        if isinstance(other, NCPoly):
            other = TracePoly.from_ncpoly(other)
        if isinstance(other, TracePoly):
            out: dict = {}
            for (s1, w1), c1 in self._terms.items():
                for (s2, w2), c2 in other._terms.items():
                    key = (tuple(sorted(s1 + s2)), reduce_word(w1 + w2))
                    s = out.get(key, 0) + c1 * c2
                    if s == 0:
                        out.pop(key, None)
                    else:
                        out[key] = s
            res = TracePoly.__new__(TracePoly)
            res._terms = out
            return res
        scalar = complex(other)
        res = TracePoly.__new__(TracePoly)
        res._terms = {} if scalar == 0 else {k: c * scalar for k, c in self._terms.items()}
        return res

    def __rmul__(self, other):
        if isinstance(other, NCPoly):
            return TracePoly.from_ncpoly(other) * self
        return self * other

    def adjoint(self) -> "TracePoly":
        out: dict = {}
        for (syms, w), c in self._terms.items():
            key = (
                tuple(sorted(canonical_rotation(word_adjoint(s)) for s in syms)),
                word_adjoint(w),
            )
            s = out.get(key, 0) + c.conjugate()
            if s == 0:
                out.pop(key, None)
            else:
                out[key] = s
        res = TracePoly.__new__(TracePoly)
        res._terms = out
        return res

    def eval(self, trace) -> complex:
        """Scalar value under a tracial functional ``trace: word -> complex``."""
        total = 0j
        for (syms, w), c in self._terms.items():
            val = c
            for s in syms:
                val *= trace(s)
            val *= trace(w)
            total += val
        return total

    def __eq__(self, other):
        return isinstance(other, TracePoly) and self._terms == other._terms

    def __repr__(self):
        if not self._terms:
            return "TracePoly(0)"
        bits = []
        for (syms, w), c in sorted(self._terms.items()):
            pre = "".join(f"Tr[{_word_str(s)}]." for s in syms)
            bits.append(f"({c:.6g})*{pre}{_word_str(w)}")
        return "TracePoly(" + " + ".join(bits) + ")"


def trace_poly_isclose(p: TracePoly, q: TracePoly, tol: float = 1e-12) -> bool:
    scale = max(1.0, p.max_abs_coeff(), q.max_abs_coeff())
    keys = set(p._terms) | set(q._terms)
    return all(abs(p._terms.get(k, 0) - q._terms.get(k, 0)) <= tol * scale for k in keys)
