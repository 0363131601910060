"""Free unitary Brownian motion moments and the time-t semicircle transform.

The moments m_n(t) of the free unitary Brownian motion solve the coupled
hierarchy

    dm_n/dt = -(n/2) m_n - (n/2) * sum_{k=1}^{n-1} m_k m_{n-k},   m_n(0) = 1,

obtained from the drift-free free stochastic differential equation of the
process.  The n = 1, 2 values have the closed forms e^{-t/2} and
e^{-t}(1 - t), which the test suite pins against the integrator.

The semicircle family enters through the Cauchy transform

    G(t, z) = (z - sqrt(z^2 - 4t)) / (2t)

of the centered semicircle of radius 2 sqrt(t), its Stieltjes inversion, and
the characteristic identity G(t, z + t/z) = 1/z of the underlying inviscid
Burgers flow.
"""

from __future__ import annotations

import cmath
import math
import threading

import numpy as np
from scipy.integrate import solve_ivp

__all__ = [
    "MomentTable",
    "ubm_moment",
    "semicircle_cauchy",
    "semicircle_density",
    "burgers_residual",
    "semicircle_moment",
]

_ODE_RTOL = 1e-12
_ODE_ATOL = 1e-13


def _hierarchy_rhs(_t, m):
    n = len(m)
    out = np.empty(n)
    for k in range(1, n + 1):
        conv = sum(m[j - 1] * m[k - j - 1] for j in range(1, k))
        out[k - 1] = -0.5 * k * (m[k - 1] + conv)
    return out


class MomentTable:
    """Cached free unitary Brownian motion moments m_n(t) = trace of u(t)^n.

    Thread safe; memoization never changes values (the hierarchy for
    m_1..m_n is integrated in one shot per requested (n, t) and cached).
    """

    def __init__(self):
        self._cache: dict[tuple[int, float], float] = {}
        self._lock = threading.Lock()

    def moment(self, n: int, t: float) -> float:
        if n < 0:
            raise ValueError("moment order must be >= 0")
        if t < 0:
            raise ValueError("time must be >= 0")
        if n == 0:
            return 1.0
        if t == 0.0:
            return 1.0
        key = (n, float(t))
        with self._lock:
            if key in self._cache:
                return self._cache[key]
        sol = solve_ivp(
            _hierarchy_rhs,
            (0.0, float(t)),
            np.ones(n),
            method="DOP853",
            rtol=_ODE_RTOL,
            atol=_ODE_ATOL,
        )
        if not sol.success:
            raise RuntimeError(f"moment hierarchy integration failed: {sol.message}")
        vals = sol.y[:, -1]
        with self._lock:
            for k in range(1, n + 1):
                self._cache[(k, float(t))] = float(vals[k - 1])
        return float(vals[n - 1])


_TABLE = MomentTable()


def ubm_moment(n: int, t: float) -> float:
    """n-th moment of the free unitary Brownian motion at time t."""
    return _TABLE.moment(n, t)


def semicircle_cauchy(t: float, z: complex) -> complex:
    """Cauchy transform of the centered semicircle of radius 2 sqrt(t).

    The square root of z^2 - 4t is evaluated as sqrt(z - 2 sqrt(t)) *
    sqrt(z + 2 sqrt(t)) with principal square roots, which selects the branch
    with G(t, z) -> 1/z at infinity on the whole cut plane:

        z - 2rt | z + 2rt | principal product      (rt = 2 sqrt(t))
        --------+---------+---------------------------------------
        Im > 0  | Im > 0  | upper half plane, agrees with sqrt(z^2-4t)
        Im < 0  | Im < 0  | lower half plane, conjugate branch
        real >0 | real >0 | positive real axis (|z| > 2 sqrt(t))
        real <0 | real <0 | negative real root, sign flipped vs principal
    """
    if t <= 0:
        raise ValueError("time must be positive")
    r = 2.0 * math.sqrt(t)
    z = complex(z)
    w = cmath.sqrt(z - r) * cmath.sqrt(z + r)
    return (z - w) / (2.0 * t)


def semicircle_density(t: float, x: float) -> float:
    """Density sqrt(4t - x^2) / (2 pi t) on [-2 sqrt(t), 2 sqrt(t)]."""
    if t <= 0:
        raise ValueError("time must be positive")
    s = 4.0 * t - x * x
    if s <= 0.0:
        return 0.0
    return math.sqrt(s) / (2.0 * math.pi * t)


def burgers_residual(t: float, z: complex) -> float:
    """|G(t, z + t/z) - 1/z|, the characteristic-line residual of the flow."""
    if t <= 0:
        raise ValueError("time must be positive")
    z = complex(z)
    if z.imag <= 0:
        raise ValueError("z must lie in the upper half plane")
    if abs(z) <= math.sqrt(t):
        raise ValueError("characteristic leaves the domain: need |z| > sqrt(t)")
    return abs(semicircle_cauchy(t, z + t / z) - 1.0 / z)


def semicircle_moment(k: int, t: float) -> float:
    """Moments of the radius-2 sqrt(t) semicircle: Catalan(k/2) t^(k/2), 0 for odd k."""
    if k < 0:
        raise ValueError("moment order must be >= 0")
    if k % 2 == 1:
        return 0.0
    m = k // 2
    catalan = math.comb(2 * m, m) // (m + 1)
    return catalan * t**m
