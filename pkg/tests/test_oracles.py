"""Tracial oracles: trace property, freeness factorization, estimates."""

import math

import numpy as np
import pytest

from liblab.algebra import NCPoly, adjoint, lift_u, u, ut, x, xl
from liblab.moments import ubm_moment
from liblab.oracles import (
    EmpiricalOracle,
    Sigma0FrBMOracle,
    Sigma0LibOracle,
    TableOracle,
    eval_state,
    x_moments_from_matrices,
)
from liblab.sim import SimConfig, simulate_paths
from liblab.trace_poly import TracePoly


def _x_moments(seed=0, dim=8):
    rng = np.random.default_rng(seed)
    mats = {}

    def moment(word):
        out = None
        for l in word:
            j = l[2]
            if j not in mats:
                m = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
                m = (m + m.conj().T) / 2
                m /= max(1.0, float(np.abs(np.linalg.eigvalsh(m)).max()))
                mats[j] = m
            out = mats[j] if out is None else out @ mats[j]
        return complex(np.trace(out) / dim)

    return moment


def _random_xu_word(rng, max_len=5):
    letters = []
    for _ in range(int(rng.integers(1, max_len + 1))):
        k = int(rng.integers(0, 2))
        if k == 0:
            letters.append(x(int(rng.integers(1, 3))))
        else:
            letters.append(
                u(int(rng.integers(1, 3)), float(rng.choice([0.2, 0.5, 1.0])),
                  star=bool(rng.integers(0, 2)))
            )
    return tuple(letters)


def test_reference_state_trace_property():
    oracle = Sigma0FrBMOracle(_x_moments())
    rng = np.random.default_rng(1)
    assert oracle(()) == 1.0
    for _ in range(60):
        w = _random_xu_word(rng)
        v = _random_xu_word(rng)
        assert oracle(w + v) == pytest.approx(oracle(v + w), abs=1e-11)
        from liblab.algebra import word_adjoint

        assert oracle(word_adjoint(w)) == pytest.approx(
            complex(np.conj(oracle(w))), abs=1e-11
        )


def test_reference_state_freeness_factorization():
    oracle = Sigma0FrBMOracle(_x_moments())
    xm = _x_moments()
    # x free from u: mixed first moments factor
    w = (x(1), u(1, 0.5))
    assert oracle(w) == pytest.approx(xm((x(1),)) * ubm_moment(1, 0.5), abs=1e-12)
    # u components mutually free
    w = (u(1, 0.5), u(2, 0.5))
    assert oracle(w) == pytest.approx(ubm_moment(1, 0.5) ** 2, abs=1e-12)
    # unitary BM law on one component
    w = (u(1, 1.0), u(1, 1.0))
    assert oracle(w) == pytest.approx(ubm_moment(2, 1.0), abs=1e-12)
    # ut letters are accepted and follow the same law
    assert oracle((ut(1, 0.5),)) == pytest.approx(ubm_moment(1, 0.5), abs=1e-12)


def test_liberation_reference_is_lift_pullback():
    xm = _x_moments()
    lib = Sigma0LibOracle(xm, 2)
    base = Sigma0FrBMOracle(xm)
    rng = np.random.default_rng(2)
    for _ in range(40):
        letters = tuple(
            xl(int(rng.integers(1, 4)), int(rng.integers(1, 3)),
               float(rng.choice([0.0, 0.3, 0.8])))
            for _ in range(int(rng.integers(1, 5)))
        )
        want = eval_state(base, lift_u(NCPoly.from_word(letters), 2))
        assert lib(letters) == pytest.approx(want, abs=1e-12)
    # spectrum is conserved: pure powers of one letter are time independent
    for k in (1, 2, 3):
        a = lib((xl(1, 1, 0.7),) * k)
        b = lib((xl(1, 1, 0.0),) * k)
        assert a == pytest.approx(b, abs=1e-11)


def test_empirical_oracle(tmp_path):
    cfg = SimConfig(N=16, n=1, T=0.4, dt=5e-3, snapshot_times=(0.2, 0.4), samples=12, seed=3)
    ens = simulate_paths(cfg)
    oracle = EmpiricalOracle(ens)
    assert oracle(()) == 1.0
    w = (u(1, 0.2), x(1))
    v_ = (x(1), u(1, 0.2))
    assert oracle(w) == pytest.approx(oracle(v_), abs=1e-12)  # trace property
    est = oracle.estimate(w)
    assert est.samples == 12 and est.stderr >= 0
    # eval_state handles words, polynomials and trace polynomials
    p = 2.0 * NCPoly.from_word(w)
    assert eval_state(oracle, p) == pytest.approx(2 * oracle(w))
    tp = TracePoly.from_term(1.0, [w], ())
    assert eval_state(oracle, tp) == pytest.approx(oracle(w))


def test_table_oracle():
    t = TableOracle({(x(1),): 0.5})
    assert t((x(1),)) == 0.5
    assert t(()) == 1.0
    assert t((x(2),)) == 0.0
    strict = TableOracle({}, strict=True)
    with pytest.raises(KeyError):
        strict((x(1),))


def test_x_moments_from_matrices():
    rng = np.random.default_rng(4)
    m1 = rng.normal(size=(6, 6)); m1 = (m1 + m1.T) / 2
    m2 = rng.normal(size=(6, 6)); m2 = (m2 + m2.T) / 2
    fn = x_moments_from_matrices({1: m1, 2: m2})
    want = np.trace(m1 @ m2 @ m1) / 6
    assert fn((x(1), x(2), x(1))) == pytest.approx(want)
