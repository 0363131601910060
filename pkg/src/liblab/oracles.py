"""Tracial-state oracles: word -> complex, with the trace property.

Three realizations: empirical (path ensembles), the free-product reference
state (x family with prescribed joint moments, freely independent of the
n-tuple of free unitary Brownian motions), and fixed tables.  The liberation
reference state is the pull-back of the free-product state through the
unitary lift.
"""

from __future__ import annotations

import threading

import numpy as np

from .algebra import NCPoly, Word, lift_u
from .freeness import MomentEngine, fubm_single_index_moment
from .sim import TraceEstimate, UnitaryPathEnsemble
from .trace_poly import TracePoly

__all__ = [
    "EmpiricalOracle",
    "Sigma0FrBMOracle",
    "Sigma0LibOracle",
    "TableOracle",
    "x_moments_from_matrices",
    "eval_state",
]


def eval_state(oracle, obj) -> complex:
    """Value of a word, polynomial or trace polynomial under a word oracle."""
    if isinstance(obj, tuple):
        return complex(oracle(obj))
    if isinstance(obj, NCPoly):
        return sum((c * complex(oracle(w)) for w, c in obj.terms()), 0j)
    if isinstance(obj, TracePoly):
        return obj.eval(lambda w: complex(oracle(w)))
    raise TypeError(f"cannot evaluate {type(obj).__name__} under an oracle")


class EmpiricalOracle:
    """Ensemble-mean empirical trace; caches per-word sample values."""

    def __init__(self, ensemble: UnitaryPathEnsemble):
        self.ensemble = ensemble

    def __call__(self, w: Word) -> complex:
        return self.ensemble.mean_trace(tuple(w))

    def estimate(self, w: Word) -> TraceEstimate:
        return self.ensemble.trace_estimate(tuple(w))


def x_moments_from_matrices(X) -> "callable":
    """Joint x-moment function from a mapping j -> Hermitian matrix."""

    cache: dict = {}
    lock = threading.Lock()

    def moment(word: Word) -> complex:
        key = tuple(word)
        with lock:
            if key in cache:
                return cache[key]
        mats = [np.asarray(X[l[2]]) for l in word]
        out = mats[0]
        for m in mats[1:]:
            out = out @ m
        val = complex(np.trace(out) / out.shape[0])
        with lock:
            cache[key] = val
        return val

    return moment


class Sigma0FrBMOracle:
    """Reference state: x family with given joint moments, free from the
    unitary Brownian motions (u and ut letters both evaluate as the free
    unitary Brownian motion, each component its own free factor)."""

    def __init__(self, x_moment):
        self._x_moment = x_moment

        def component_of(l):
            kind = l[0]
            if kind == "x":
                return "X"
            if kind in ("u", "ut"):
                return (kind, l[1])
            raise ValueError(f"letter kind {kind!r} is foreign to the reference state")

        def numeric_moment(comp, w):
            if comp == "X":
                return x_moment(w)
            return fubm_single_index_moment(tuple((l[3], l[4]) for l in w))

        self._engine = MomentEngine(component_of, numeric_moment)

    def __call__(self, w: Word) -> complex:
        return self._engine.tau_value(tuple(w))


class Sigma0LibOracle:
    """Reference state of the liberation process: pull-back of the
    free-product state through the lift xl(i,j,t) -> u_i(t) x u_i(t)^*."""

    def __init__(self, x_moment, n: int):
        self.n = n
        self._base = Sigma0FrBMOracle(x_moment)

    def __call__(self, w: Word) -> complex:
        lifted = lift_u(NCPoly.from_word(tuple(w)), self.n)
        return sum((c * self._base(word) for word, c in lifted.terms()), 0j)


class TableOracle:
    """Fixed word -> value table (canonical words), zero off the table."""

    def __init__(self, table: dict, strict: bool = False):
        self._table = {tuple(w): complex(c) for w, c in table.items()}
        self._strict = strict

    def __call__(self, w: Word) -> complex:
        w = tuple(w)
        if not w:
            return 1.0 + 0j
        if w in self._table:
            return self._table[w]
        if self._strict:
            raise KeyError(f"no table entry for word {w}")
        return 0j
