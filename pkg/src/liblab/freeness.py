"""Moment engine for free families: alternating-centered recursion with memo.

Computes the trace of a word whose letters fall into mutually free
components.  Components with a known distribution report numeric block
moments; one distinguished component may report symbolic moments, in which
case the result is a linear combination of products of trace symbols (used
to realize the trace-preserving conditional expectation onto that component).

The recursion implements exactly the freeness axiom: alternating products of
centered elements from free subalgebras have zero trace.  Blocks are expanded
into scalar + centered parts; fully centered alternating states vanish;
scalar collapses merge neighbouring blocks (with unitarity reduction), which
strictly decreases the block count, so the recursion terminates.

The free unitary Brownian motion block moments are evaluated through the
left-increment decomposition: u(t_k) = w_k w_{k-1} ... w_1 with mutually free
increments w_m distributed as the single-time process at t_m - t_{m-1}.
"""

from __future__ import annotations

from functools import lru_cache

from .algebra import Word, reduce_word, tick_seconds
from .moments import ubm_moment
from .trace_poly import canonical_rotation

__all__ = ["MomentEngine", "SLOT", "fubm_single_index_moment", "fubm_mixed_moment"]

# Formal marker letter used for conditional-expectation extraction; it belongs
# to the symbolic component and never takes part in unitarity reduction.
SLOT = ("#", 0, 0, 0, False)

_ZERO: dict = {}
_ONE = {(): 1.0 + 0j}


def _expr_add(a: dict, b: dict) -> dict:
    if not a:
        return b
    if not b:
        return a
    out = dict(a)
    for k, c in b.items():
        s = out.get(k, 0) + c
        if s == 0:
            out.pop(k, None)
        else:
            out[k] = s
    return out


def _expr_mul(a: dict, b: dict) -> dict:
    if not a or not b:
        return _ZERO
    out: dict = {}
    for k1, c1 in a.items():
        for k2, c2 in b.items():
            k = tuple(sorted(k1 + k2))
            s = out.get(k, 0) + c1 * c2
            if s == 0:
                out.pop(k, None)
            else:
                out[k] = s
    return out


def _expr_scale(a: dict, z: complex) -> dict:
    if z == 0:
        return _ZERO
    return {k: c * z for k, c in a.items()}


class MomentEngine:
    """Tracial moment evaluation over a family of free components.

    Parameters
    ----------
    component_of : callable(letter) -> hashable
        Assigns every letter to its free component.
    numeric_moment : callable(component, word) -> complex or None
        Trace of a single-component word; None marks the component whose
        moments stay symbolic (the conditional-expectation target).
    """

    def __init__(self, component_of, numeric_moment):
        self._component_of = component_of
        self._numeric_moment = numeric_moment
        self._memo: dict = {}

    def tau(self, word: Word) -> dict:
        """Trace of the word as {trace-symbol tuple: coefficient}."""
        blocks = self._split(word)
        return self._eval(tuple((c, w, False) for c, w in blocks))

    def tau_value(self, word: Word) -> complex:
        """Trace of the word when every component is numeric."""
        expr = self.tau(word)
        if not expr:
            return 0j
        if set(expr) != {()}:
            raise ValueError("word has symbolic moments; use tau()")
        return expr[()]

    # -- internals -----------------------------------------------------------

    def _split(self, word: Word):
        blocks: list = []
        for l in word:
            c = self._component_of(l)
            if blocks and blocks[-1][0] == c:
                blocks[-1][1].append(l)
            else:
                blocks.append([c, [l]])
        return [(c, tuple(ls)) for c, ls in blocks]

    def _moment(self, comp, w: Word) -> dict:
        m = self._numeric_moment(comp, w)
        if m is None:
            return {(canonical_rotation(w),): 1.0 + 0j}
        return {(): complex(m)} if m != 0 else _ZERO

    def _eval(self, state) -> dict:
        hit = self._memo.get(state)
        if hit is not None:
            return hit
        result = self._eval_inner(state)
        self._memo[state] = result
        return result

    def _replace_pair(self, state, idx, blk):
        """Replace blocks idx, idx+1 by blk (or drop them when blk is None)."""
        rest = state[:idx] + state[idx + 2 :]
        if blk is None:
            return rest
        return state[:idx] + (blk,) + state[idx + 2 :]

    def _merged(self, comp, wa, wb):
        w = reduce_word(wa + wb)
        return None if not w else (comp, w, False)

    def _eval_inner(self, state) -> dict:
        # merge adjacent same-component blocks first
        for idx in range(len(state) - 1):
            comp, wa, fa = state[idx]
            comp2, wb, fb = state[idx + 1]
            if comp != comp2:
                continue
            merged = self._eval(self._replace_pair(state, idx, self._merged(comp, wa, wb)))
            if not fa and not fb:
                return merged
            if fa and not fb:
                drop_a = self._eval(self._replace_pair(state, idx, (comp, wb, False)))
                return _expr_add(merged, _expr_scale(_expr_mul(self._moment(comp, wa), drop_a), -1))
            if fb and not fa:
                drop_b = self._eval(self._replace_pair(state, idx, (comp, wa, False)))
                return _expr_add(merged, _expr_scale(_expr_mul(self._moment(comp, wb), drop_b), -1))
            # both centered
            ma, mb = self._moment(comp, wa), self._moment(comp, wb)
            drop_a = self._eval(self._replace_pair(state, idx, (comp, wb, False)))
            drop_b = self._eval(self._replace_pair(state, idx, (comp, wa, False)))
            drop_both = self._eval(self._replace_pair(state, idx, None))
            out = _expr_add(merged, _expr_scale(_expr_mul(ma, drop_a), -1))
            out = _expr_add(out, _expr_scale(_expr_mul(mb, drop_b), -1))
            return _expr_add(out, _expr_mul(_expr_mul(ma, mb), drop_both))

        # alternating
        if not state:
            return _ONE
        if len(state) == 1:
            comp, w, flagged = state[0]
            return _ZERO if flagged else self._moment(comp, w)
        if all(flagged for (_c, _w, flagged) in state):
            return _ZERO  # alternating product of centered free elements
        idx, (comp, w, _f) = next(
            (k, blk) for k, blk in enumerate(state) if not blk[2]
        )
        removed = self._eval(state[:idx] + state[idx + 1 :])
        centered = self._eval(state[:idx] + ((comp, w, True),) + state[idx + 1 :])
        return _expr_add(_expr_mul(self._moment(comp, w), removed), centered)


# ---------------------------------------------------------------------------
# free unitary Brownian motion joint moments via left increments
# ---------------------------------------------------------------------------


@lru_cache(maxsize=65536)
def fubm_single_index_moment(seq: tuple) -> float:
    """Trace of a one-index word ((t_ticks, star), ...) of a free unitary BM.

    Letters are rewritten as ordered products of left increments over the
    sorted time set, the increments being mutually free with single-time
    moments from the hierarchy integrator.
    """
    if not seq:
        return 1.0
    times = sorted({t for t, _ in seq})
    rank = {t: k for k, t in enumerate(times)}
    deltas = [times[0]] + [times[k] - times[k - 1] for k in range(1, len(times))]
    expansion: list = []
    for t, star in seq:
        k = rank[t]
        if star:
            expansion.extend((m, True) for m in range(0, k + 1))
        else:
            expansion.extend((m, False) for m in range(k, -1, -1))
    # unitarity reduction over the increment alphabet
    stack: list = []
    for item in expansion:
        if stack and stack[-1][0] == item[0] and stack[-1][1] != item[1]:
            stack.pop()
        else:
            stack.append(item)
    if not stack:
        return 1.0

    def block_moment(comp, w):
        power = sum(1 if not s else -1 for (_k, s) in w)
        if power == 0:
            return 1.0
        return ubm_moment(abs(power), tick_seconds(deltas[comp]))

    engine = MomentEngine(lambda l: l[0], block_moment)
    val = engine.tau_value(tuple(stack))
    return float(val.real)


def fubm_mixed_moment(letters) -> float:
    """Trace of a word of UT (or V) letters, indices freely independent.

    ``letters`` are algebra letters (kind, i, 0, t_ticks, star); the kinds
    must all agree.
    """
    letters = tuple(letters)
    if not letters:
        return 1.0
    kinds = {l[0] for l in letters}
    if len(kinds) > 1 or kinds - {"ut", "v"}:
        raise ValueError(f"expected a pure ut or v word, got kinds {sorted(kinds)}")

    def block_moment(_comp, w):
        return fubm_single_index_moment(tuple((l[3], l[4]) for l in w))

    engine = MomentEngine(lambda l: l[1], block_moment)
    return float(engine.tau_value(letters).real)
