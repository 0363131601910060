"""Trace polynomial container: canonical symbols, algebra, evaluation."""

import numpy as np

from liblab.algebra import NCPoly, u, x
from liblab.trace_poly import TracePoly, canonical_rotation, trace_poly_isclose


def test_canonical_rotation_is_cyclic_invariant():
    w = (x(1), u(1, 0.5), x(2))
    rots = [w[k:] + w[:k] for k in range(3)]
    assert len({canonical_rotation(r) for r in rots}) == 1


def test_symbols_merge_under_rotation():
    a = TracePoly.from_term(1.0, [(x(1), x(2))], (u(1, 0.5),))
    b = TracePoly.from_term(1.0, [(x(2), x(1))], (u(1, 0.5),))
    assert a == b
    assert (a - b).is_zero()


def test_product_concatenates_symbols_and_carriers():
    a = TracePoly.from_term(2.0, [(x(1),)], (u(1, 0.5),))
    b = TracePoly.from_term(3.0, [(x(2),)], (u(1, 0.5, star=True),))
    ab = a * b
    ((key, coeff),) = tuple(ab.terms())
    assert coeff == 6.0
    assert key[1] == ()  # u u* cancels in the carrier
    assert set(key[0]) == {(x(1),), (x(2),)}


def test_adjoint_conjugates_symbols_and_coefficients():
    a = TracePoly.from_term(1j, [(x(1), u(1, 0.5))], (u(1, 1.0),))
    aa = a.adjoint()
    ((key, coeff),) = tuple(aa.terms())
    assert coeff == -1j
    assert key[1] == (u(1, 1.0, star=True),)
    assert key[0] == (canonical_rotation((u(1, 0.5, star=True), x(1))),)
    assert a.adjoint().adjoint() == a


def test_eval_under_trace_functional():
    table = {(): 1.0, (x(1),): 0.25, (u(1, 0.5),): 0.5}

    def tr(w):
        return table[w]

    tp = TracePoly.from_term(2.0, [(x(1),)], (u(1, 0.5),)) + TracePoly.from_ncpoly(
        NCPoly.one()
    )
    assert abs(tp.eval(tr) - (2.0 * 0.25 * 0.5 + 1.0)) < 1e-15


def test_mixed_products_with_ncpoly():
    p = NCPoly.from_word((x(1),))
    tp = TracePoly.from_term(1.0, [(x(2),)], (u(1, 0.5),))
    left = p * tp
    right = tp * p
    ((lk, _),) = tuple(left.terms())
    ((rk, _),) = tuple(right.terms())
    assert lk[1] == (x(1), u(1, 0.5))
    assert rk[1] == (u(1, 0.5), x(1))


def test_linearity_random():
    rng = np.random.default_rng(0)
    for _ in range(50):
        c1, c2 = complex(rng.normal(), rng.normal()), complex(rng.normal(), rng.normal())
        t1 = TracePoly.from_term(c1, [(x(1),)], (u(1, 0.5),))
        t2 = TracePoly.from_term(c2, [], (x(2),))
        s = t1 + t2

        def tr(w, _d={(x(1),): 0.3, (u(1, 0.5),): 0.7, (x(2),): -0.2, (): 1.0}):
            return _d[w]

        assert abs(s.eval(tr) - (t1.eval(tr) + t2.eval(tr))) < 1e-14


def test_isclose_tolerance():
    a = TracePoly.from_term(1.0, [], (x(1),))
    b = TracePoly.from_term(1.0 + 1e-14, [], (x(1),))
    assert trace_poly_isclose(a, b)
    c = TracePoly.from_term(1.0 + 1e-9, [], (x(1),))
    assert not trace_poly_isclose(a, c)
