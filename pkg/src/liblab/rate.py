"""Rate functional, Girsanov exponent and the truncated tracial-state metric.

The rate term of a self-adjoint test polynomial a over a horizon T is

    value_T(a) - reference(a) - (1/2) integral_0^T sum_i |g_i(a, t)|^2 dt

where g_i(a, t) is the projected gradient of a at time t and |.|^2 is the
L2 norm under the evaluating state, realized as the state value of
g g^*.  For a drifted state generated by a potential c the rate collapses to
(1/2) integral of the squared gradient of c itself.

Time integrals use the composite trapezoid rule on grids refined by the
letter times of the polynomial (the integrand is only piecewise continuous
across them, with jumps exactly at letter times).
"""

from __future__ import annotations

import math

import numpy as np

from .algebra import NCPoly, pi_t, ticks
from .cond_expect import DriftSpec, cond_expect_past, detect_world, projected_gradient
from .cond_expect import trace_poly_bound
from .oracles import eval_state
from .sim import PathSample, eval_trace_poly
from .trace_poly import TracePoly

__all__ = [
    "DriftSpec",
    "refine_grid",
    "state_value_at",
    "gradient_norm_sq",
    "rate_term",
    "rate_of_potential",
    "girsanov_exponent",
    "DistanceCorpus",
    "tracial_distance",
]


def refine_grid(grid, breakpoints, lo: float, hi: float):
    """Sorted grid on [lo, hi] including all interior breakpoints."""
    pts = {float(t) for t in grid if lo <= t <= hi}
    pts |= {float(b) for b in breakpoints if lo < b < hi}
    pts |= {lo, hi}
    return sorted(pts)


def _trapezoid(values, grid) -> float:
    total = 0.0
    for k in range(len(grid) - 1):
        total += 0.5 * (values[k] + values[k + 1]) * (grid[k + 1] - grid[k])
    return total


def _letter_times(p: NCPoly):
    from .algebra import tick_seconds

    return sorted({tick_seconds(l[3]) for l in p.letters() if l[0] in ("u", "xl")})


def state_value_at(oracle, a: NCPoly, T: float, world: str | None = None) -> complex:
    """Value of a under the time-T shifted state: the oracle applied to the
    past projection of the shifted polynomial."""
    if world is None:
        world = detect_world(a)
    tp = cond_expect_past(pi_t(T, a), T, world=world)
    return eval_state(oracle, tp)


def gradient_norm_sq(oracle, a: NCPoly, i: int, t: float, world: str | None = None) -> float:
    """Squared L2 norm of the projected gradient under the oracle state."""
    g = projected_gradient(a, i, t, world=world)
    return float(eval_state(oracle, g * g.adjoint()).real)


def rate_term(oracle, reference, a: NCPoly, T: float, grid, n: int) -> float:
    """The rate functional evaluated at one test polynomial and horizon.

    ``oracle`` evaluates the state under test, ``reference`` the free-product
    reference state; the gradient integral runs on ``grid`` refined by the
    letter times of a.
    """
    if not _selfadjoint(a):
        raise ValueError("test polynomial must be self-adjoint")
    world = detect_world(a)
    lead = state_value_at(oracle, a, T, world=world).real
    ref = eval_state(reference, a).real
    pts = refine_grid(grid, _letter_times(a), 0.0, T)
    vals = [
        sum(gradient_norm_sq(oracle, a, i, t, world=world) for i in range(1, n + 1))
        for t in pts
    ]
    return lead - ref - 0.5 * _trapezoid(vals, pts)


def rate_of_potential(oracle, c: NCPoly, grid, n: int) -> float:
    """Rate of the drifted state generated by c: half the time integral of
    the squared projected gradient of c under the given oracle.  The
    integrand vanishes beyond the largest letter time of c."""
    if not _selfadjoint(c):
        raise ValueError("potential must be self-adjoint")
    world = detect_world(c)
    times = _letter_times(c)
    if not times:
        return 0.0
    hi = max(times)
    pts = refine_grid(grid, times, 0.0, hi)
    vals = [
        sum(gradient_norm_sq(oracle, c, i, t, world=world) for i in range(1, n + 1))
        for t in pts
    ]
    return 0.5 * _trapezoid(vals, pts)


def _selfadjoint(p: NCPoly, tol: float = 1e-12) -> bool:
    q = p.adjoint()
    scale = max(1.0, p.max_abs_coeff())
    return all(
        abs(p.coeff(w) - q.coeff(w)) <= tol * scale
        for w in set(p.words()) | set(q.words())
    )


def girsanov_exponent(
    sample: PathSample, spec: DriftSpec, grid, R: float | None = None
) -> np.ndarray:
    """The change-of-measure exponent along one path, at each grid time.

    I(t) = tr E[pi(c)|F_t] - tr E[pi(c)] - (1/2) int_0^t sum_i tr(xi_i(s)^2) ds,
    conditional expectations through the symbolic drift polynomials.  The
    exponent is asserted against its a-priori coefficient bound.
    """
    c, n = spec.c, spec.n
    grid = sorted(float(t) for t in grid)
    if grid[0] != 0.0:
        grid = [0.0] + grid
    lead = []
    for t in grid:
        tp = cond_expect_past(pi_t(t, c), t, world=spec.world)
        lead.append(eval_trace_poly(tp, sample, scalar=True).real)
    qv = []
    for t in grid:
        total = 0.0
        for i in range(1, n + 1):
            xi = spec.xi(i, t)
            if xi.is_zero():
                continue
            mat = eval_trace_poly(xi, sample)
            mat = 0.5 * (mat + mat.conj().T)
            total += float(np.trace(mat @ mat).real) / sample.N
        qv.append(total)
    out = np.empty(len(grid))
    acc = 0.0
    for k, t in enumerate(grid):
        if k > 0:
            acc += 0.5 * (qv[k - 1] + qv[k]) * (grid[k] - grid[k - 1])
        out[k] = lead[k] - lead[0] - 0.5 * acc
    if R is not None:
        bound = _exponent_bound(spec, grid[-1], R)
        top = float(np.abs(out).max())
        if top > bound + 1e-9:
            raise AssertionError(
                f"exponent {top:.6g} exceeds its a-priori bound {bound:.6g}"
            )
    return out


def _exponent_bound(spec: DriftSpec, T: float, R: float) -> float:
    peak = 0.0
    from .algebra import tick_seconds

    probe = sorted({tick_seconds(tk) for tk in spec.letter_ticks} | {0.0})
    for t in probe:
        s = sum(trace_poly_bound(spec.xi(i, t), R) ** 2 for i in range(1, spec.n + 1))
        peak = max(peak, s)
    cbound = sum(
        abs(coeff) * R ** sum(1 for l in w if l[0] in ("x", "xl"))
        for w, coeff in spec.c.terms()
    )
    return 2.0 * cbound + 0.5 * T * peak


class DistanceCorpus:
    """Truncation parameters for the tracial-state metric.

    Words of length at most m_max over x families 1..j_max and unitary
    letters of components 1..n, with letter times drawn from the grid
    restricted to [0, ell] for each outer weight index ell <= ell_max.
    """

    def __init__(self, ell_max=2, m_max=3, times=(0.5, 1.0), j_max=1, n=1, R=1.0):
        self.ell_max = ell_max
        self.m_max = m_max
        self.times = tuple(sorted(float(t) for t in times))
        self.j_max = j_max
        self.n = n
        self.R = R

    def patterns(self, m: int):
        """All letter patterns of length m; time slots marked by None."""
        atoms = [("x", j) for j in range(1, self.j_max + 1)]
        atoms += [("u", i, star) for i in range(1, self.n + 1) for star in (False, True)]
        out = [()]
        for _ in range(m):
            out = [p + (a,) for p in out for a in atoms]
        return out

    def words(self, m: int, ell: int):
        """Concrete words for every pattern and admissible time assignment."""
        times = [t for t in self.times if t <= ell]
        if not times:
            return
        for pat in self.patterns(m):
            slots = [k for k, a in enumerate(pat) if a[0] == "u"]
            assignments = [()]
            for _ in slots:
                assignments = [asg + (t,) for asg in assignments for t in times]
            for asg in assignments:
                letters = []
                it = iter(asg)
                for a in pat:
                    if a[0] == "x":
                        letters.append(("x", 0, a[1], 0, False))
                    else:
                        letters.append(("u", a[1], 0, ticks(next(it)), a[2]))
                yield tuple(letters)


def tracial_distance(oracle1, oracle2, corpus: DistanceCorpus, with_band: bool = False):
    """Truncated metric: sum over (ell, m) of the weighted worst word gap.

    Weight 1 / (2^ell (2R)^m); the inner sup runs over all corpus words of
    length <= m with times in the grid capped at ell.  When ``with_band`` is
    set, also returns a 3-standard-error band propagated from the attaining
    words (zero for deterministic oracles).
    """
    total = 0.0
    band = 0.0
    gap_cache: dict = {}
    for ell in range(1, corpus.ell_max + 1):
        for m in range(1, corpus.m_max + 1):
            worst = 0.0
            worst_se = 0.0
            for mm in range(1, m + 1):
                for w in corpus.words(mm, ell):
                    hit = gap_cache.get(w)
                    if hit is None:
                        v1, v2 = oracle1(w), oracle2(w)
                        se = 0.0
                        if with_band:
                            for o in (oracle1, oracle2):
                                est = getattr(o, "estimate", None)
                                if est is not None:
                                    se += est(w).stderr ** 2
                            se = math.sqrt(se)
                        hit = (abs(v1 - v2), se)
                        gap_cache[w] = hit
                    if hit[0] > worst:
                        worst, worst_se = hit
            weight = 1.0 / (2.0**ell * (2.0 * corpus.R) ** m)
            total += weight * worst
            band += weight * 3.0 * worst_se
    return (total, band) if with_band else total
