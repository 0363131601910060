"""Trace-preserving conditional expectation onto the past algebra.

Projects polynomials containing auxiliary free-unitary-Brownian letters (ut
in the unitary world, v in the liberation world) onto the algebra generated
by the remaining letters, using free independence.  The result is a trace
polynomial: the auxiliary letters are consumed into numeric moments and
trace symbols over past words.

The projection is realized through the moment engine with a formal slot
letter: the defining property trace(E(p) b) = trace(p b) for past b is read
off from the symbolic trace expression of p times the slot.
"""

from __future__ import annotations

import numpy as np

from .algebra import (
    AlphabetError,
    NCPoly,
    Word,
    d_lib,
    d_u,
    pi_t,
    ticks,
)
from .freeness import SLOT, MomentEngine, fubm_mixed_moment, fubm_single_index_moment
from .trace_poly import TracePoly

__all__ = [
    "DegreeCapError",
    "DEGREE_CAP",
    "detect_world",
    "ubm_word_moment",
    "cond_expect_past",
    "projected_gradient",
    "DriftSpec",
    "mc_cond_expect",
]

# The centering recursion is total but exponential in block count.
DEGREE_CAP = 12


class DegreeCapError(ValueError):
    """Input word degree exceeds the supported cap."""


_PAST_KINDS = {"u": ("x", "u", "#"), "lib": ("xl", "#")}
_FREE_KIND = {"u": "ut", "lib": "v"}


def detect_world(p: NCPoly) -> str:
    """Classify a polynomial as unitary-world ('u') or liberation-world ('lib')."""
    kinds = {l[0] for l in p.letters()}
    if kinds & {"xl", "v"}:
        if kinds & {"x", "u"}:
            raise AlphabetError(f"mixed alphabets in one polynomial: {sorted(kinds)}")
        return "lib"
    return "u"


def _make_engine(world: str) -> MomentEngine:
    past = _PAST_KINDS[world]
    free = _FREE_KIND[world]

    def component_of(l):
        kind = l[0]
        if kind in past:
            return "P"
        if kind == free:
            return ("f", l[1])
        raise AlphabetError(f"letter kind {kind!r} is foreign to the {world!r} world")

    def numeric_moment(comp, w):
        if comp == "P":
            return None
        return fubm_single_index_moment(tuple((l[3], l[4]) for l in w))

    return MomentEngine(component_of, numeric_moment)


_ENGINES = {"u": _make_engine("u"), "lib": _make_engine("lib")}


def ubm_word_moment(block) -> float:
    """Trace of a word of solely ut (or solely v) letters.

    Distinct component indices are freely independent; within an index the
    multi-time moments reduce through the left-increment decomposition.
    """
    return fubm_mixed_moment(tuple(block))


def cond_expect_past(p: NCPoly, t: float, world: str | None = None) -> TracePoly:
    """Project p onto the algebra of letters with times at most t.

    Every non-auxiliary letter of p must have time <= t (auxiliary ut/v
    letters may carry any time; they are integrated out).  The output
    contains no auxiliary letters and satisfies E(p q) = E(p) q for past q.
    """
    if world is None:
        world = detect_world(p)
    engine = _ENGINES[world]
    free = _FREE_KIND[world]
    tk = ticks(t)
    out: dict = {}
    for w, c in p.terms():
        if len(w) > DEGREE_CAP:
            raise DegreeCapError(f"word degree {len(w)} exceeds cap {DEGREE_CAP}")
        for l in w:
            if l[0] != free and l[0] != "x" and l[3] > tk:
                raise ValueError(
                    f"past letter {l} has time beyond the projection time {t}"
                )
        expr = engine.tau(w + (SLOT,))
        for syms, coeff in expr.items():
            carrier = None
            rest = []
            for s in syms:
                idx = next((k for k, l in enumerate(s) if l[0] == "#"), None)
                if idx is None:
                    rest.append(s)
                else:
                    carrier = s[idx + 1 :] + s[:idx]
            key = (tuple(sorted(rest)), carrier)
            val = out.get(key, 0) + c * coeff
            if val == 0:
                out.pop(key, None)
            else:
                out[key] = val
    return TracePoly(out)


def projected_gradient(
    a: NCPoly, i: int, t: float, world: str | None = None, n_lib: int | None = None
) -> TracePoly:
    """Past projection of the derivation of a: E(pi_t(D_{t,i} a)) at time t.

    Uses the unitary derivation for x,u polynomials and the liberation
    derivation for xl polynomials; ``n_lib`` marks the static liberation
    family for the time shift (see pi_t).
    """
    if world is None:
        world = detect_world(a)
    g = d_u(t, i, a) if world == "u" else d_lib(t, i, a)
    return cond_expect_past(pi_t(t, g, n_lib=n_lib), t, world=world)


class DriftSpec:
    """Self-adjoint potential c with its cached projected-gradient drift.

    xi(i, t) is the trace polynomial E(pi_t(D_{t,i} c)) supported on the
    past alphabet; it vanishes for t beyond the largest letter time of c.
    """

    def __init__(self, c: NCPoly, n: int, world: str | None = None):
        if not _poly_selfadjoint(c):
            raise ValueError("drift potential must be self-adjoint")
        self.c = c
        self.n = n
        self.world = world if world is not None else detect_world(c)
        self.max_tick = max((l[3] for l in c.letters()), default=0)
        self.letter_ticks = tuple(sorted({l[3] for l in c.letters() if l[0] in ("u", "xl")}))
        self._cache: dict = {}

    def xi(self, i: int, t: float) -> TracePoly:
        key = (i, ticks(t))
        hit = self._cache.get(key)
        if hit is None:
            if key[1] > self.max_tick:
                hit = TracePoly.zero()
            else:
                hit = projected_gradient(self.c, i, t, world=self.world)
            self._cache[key] = hit
        return hit

    def coefficient_bound(self, R: float) -> float:
        """Uniform bound on |phi(c-word stuff)| used by the exponent bound."""
        return _poly_bound(self.c, R)


def _poly_selfadjoint(p: NCPoly, tol: float = 1e-12) -> bool:
    q = p.adjoint()
    scale = max(1.0, p.max_abs_coeff())
    return all(
        abs(p.coeff(w) - q.coeff(w)) <= tol * scale
        for w in set(p.words()) | set(q.words())
    )


def _word_bound(w: Word, R: float) -> float:
    b = 1.0
    for l in w:
        if l[0] in ("x", "xl"):
            b *= R
    return b


def _poly_bound(p: NCPoly, R: float) -> float:
    return sum(abs(c) * _word_bound(w, R) for w, c in p.terms())


def trace_poly_bound(tp: TracePoly, R: float) -> float:
    """Sum of |coeff| times the alphabet norm bound of symbols and carrier."""
    total = 0.0
    for (syms, w), c in tp.terms():
        b = abs(c) * _word_bound(w, R)
        for s in syms:
            b *= _word_bound(s, R)
        total += b
    return total


def mc_cond_expect(p: NCPoly, t: float, sample, M: int) -> np.ndarray:
    """Monte Carlo conditional expectation at finite N on one path sample.

    Averages the matrix evaluation of pi_t(p) over M fresh inner unitary
    Brownian motion paths grafted at time t, the inner paths consuming
    dedicated RNG substreams keyed by (outer sample, t, replica).  The inner
    stepping reuses the outer step size.
    """
    from . import sim  # deferred: sim imports this module for drift support

    if M < 1:
        raise ValueError("inner sample count must be >= 1")
    world = detect_world(p)
    if world != "u":
        raise AlphabetError("inner-path conditional expectation acts on x,u words")
    tk = ticks(t)
    shifted = pi_t(t, p)
    offsets = sorted({l[3] for l in shifted.letters() if l[0] == "ut"})
    for l in shifted.letters():
        if l[0] == "u" and l[3] not in sample.snap_ticks and l[3] != tk:
            raise ValueError(f"snapshot grid is missing time {l[3] * 1e-6}")
    if not offsets:
        return sample.eval_poly_matrix(shifted)

    inner = sim.simulate_inner_paths(
        N=sample.N,
        n=sample.n,
        offsets_ticks=offsets,
        dt=sample.dt,
        replicas=M,
        key=(sample.seed, sample.index, tk),
    )
    total = np.zeros((sample.N, sample.N), dtype=complex)
    for w, c in shifted.terms():
        mats = np.broadcast_to(np.eye(sample.N, dtype=complex), (M, sample.N, sample.N))
        for l in w:
            if l[0] == "ut":
                m = inner[(l[1], l[3])]
                m = m.conj().transpose(0, 2, 1) if l[4] else m
            else:
                m = sample.letter_matrix(l)[None, :, :]
            mats = mats @ m
        total += c * mats.mean(axis=0)
    return total
