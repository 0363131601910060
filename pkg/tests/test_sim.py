"""Finite-N simulation: increments, the unitary step, ensembles, b integral."""

import math

import numpy as np
import pytest

from liblab.algebra import NCPoly, ticks, u, ut, x, xl
from liblab.cond_expect import DriftSpec, mc_cond_expect
from liblab.moments import semicircle_cauchy, ubm_moment
from liblab.sim import (
    DriftConfig,
    GridError,
    SimConfig,
    XSpec,
    eval_trace_estimate,
    eval_trace_poly,
    eval_word_trace,
    girsanov_path_values,
    liberation_snapshot,
    load_ensemble,
    resolvent_trace,
    sample_hermitian_increment,
    save_ensemble,
    simulate_paths,
    step_ubm,
    stochastic_integral_b,
)
from liblab.trace_poly import TracePoly


@pytest.fixture(scope="module")
def small_ensemble():
    cfg = SimConfig(
        N=24,
        n=2,
        T=0.5,
        dt=2e-3,
        snapshot_times=(0.1, 0.25, 0.5),
        b_grid=(0.25, 0.5),
        b_components=(1,),
        samples=32,
        seed=101,
    )
    return simulate_paths(cfg)


# -- increments ----------------------------------------------------------------


def test_increment_is_hermitian_and_scaled():
    rng = np.random.default_rng(0)
    H = sample_hermitian_increment(32, 1e-3, rng)
    assert np.linalg.norm(H - H.conj().T) == 0.0
    # normalization: E tr(dH^2) = N dt, Monte Carlo oracle
    vals = [
        np.linalg.norm(sample_hermitian_increment(32, 1e-3, rng), "fro") ** 2 / 32e-3
        for _ in range(400)
    ]
    mean, se = np.mean(vals), np.std(vals) / 20.0
    assert abs(mean - 1.0) <= max(0.02, 3 * se)
    # mean entry vanishes
    acc = np.mean([sample_hermitian_increment(8, 1e-2, rng) for _ in range(500)], axis=0)
    assert np.abs(acc).max() <= 3 * math.sqrt(1e-2 / 8 / 500) * 4
    with pytest.raises(ValueError):
        sample_hermitian_increment(8, 0.0, rng)


# -- the unitary step --------------------------------------------------------------


def test_step_unitarity_and_zero_noise():
    rng = np.random.default_rng(1)
    U = np.linalg.qr(rng.normal(size=(16, 16)) + 1j * rng.normal(size=(16, 16)))[0]
    U2 = step_ubm(U, sample_hermitian_increment(16, 1e-3, rng), 1e-3)
    assert np.linalg.norm(U2.conj().T @ U2 - np.eye(16)) <= 1e-12
    assert np.allclose(step_ubm(U, np.zeros((16, 16)), 1e-3), U)


def test_step_one_step_mean():
    # E tr U' = (1 - dt/2) tr U, Ito expansion oracle
    rng = np.random.default_rng(2)
    N, dt, reps = 16, 1e-3, 3000
    U = np.linalg.qr(rng.normal(size=(N, N)) + 1j * rng.normal(size=(N, N)))[0]
    vals = np.array(
        [np.trace(step_ubm(U, sample_hermitian_increment(N, dt, rng), dt)) / N
         for _ in range(reps)]
    )
    want = (1 - dt / 2) * np.trace(U) / N
    se = np.std(vals) / math.sqrt(reps)
    assert abs(vals.mean() - want) <= 3 * se + 1e-6


def test_step_rejects_non_hermitian_drift():
    rng = np.random.default_rng(3)
    U = np.eye(8, dtype=complex)
    bad = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
    with pytest.raises(ValueError):
        step_ubm(U, np.zeros((8, 8)), 1e-3, drift_matrix=bad)


# -- config validation ----------------------------------------------------------------


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(N=8, n=1, T=1.0, dt=3e-4, snapshot_times=(0.5,), samples=1, seed=0)
    with pytest.raises(ValueError):
        SimConfig(N=8, n=1, T=1.0, dt=1e-3, snapshot_times=(0.7771,), samples=1, seed=0)
    with pytest.raises(ValueError):
        SimConfig(N=8, n=1, T=1.0, dt=1e-3, snapshot_times=(2.0,), samples=1, seed=0)
    with pytest.raises(ValueError):
        SimConfig(N=8, n=1, T=1.0, dt=1e-3, snapshot_times=(), samples=1, seed=0,
                  b_grid=(0.5,), b_components=(2,))


def test_memory_cap():
    cfg = SimConfig(
        N=64, n=1, T=0.5, dt=1e-3,
        snapshot_times=tuple(round(k * 1e-3, 10) for k in range(1, 501)),
        samples=64, seed=0, max_bytes=10**6,
    )
    with pytest.raises(MemoryError):
        simulate_paths(cfg)


# -- ensembles --------------------------------------------------------------------------


def test_snapshot_unitarity_and_initial_condition(small_ensemble):
    snaps = small_ensemble.snaps
    eye = np.eye(small_ensemble.config.N)
    dev = np.abs(
        np.einsum("snkij,snkil->snkjl", snaps.conj(), snaps) - eye
    ).max()
    assert dev <= 1e-10
    assert np.abs(snaps[:, :, 0] - eye).max() == 0.0  # U(0) = I


def test_seed_determinism_and_thread_independence(small_ensemble):
    cfg = small_ensemble.config
    again = simulate_paths(cfg)
    assert np.array_equal(again.snaps, small_ensemble.snaps)
    threaded = simulate_paths(
        SimConfig(
            N=cfg.N, n=cfg.n, T=cfg.T, dt=cfg.dt, snapshot_times=cfg.snapshot_times,
            b_grid=cfg.b_grid, b_components=cfg.b_components, samples=cfg.samples,
            seed=cfg.seed, threads=2,
        )
    )
    assert np.array_equal(threaded.snaps, small_ensemble.snaps)
    assert np.array_equal(threaded.b[1], small_ensemble.b[1])


def test_first_moments_against_closed_forms(small_ensemble):
    est = small_ensemble.trace_estimate((u(1, 0.5),))
    assert abs(est.mean - ubm_moment(1, 0.5)) <= max(0.02, 3 * est.stderr)
    est2 = small_ensemble.trace_estimate((u(1, 0.5), u(1, 0.5)))
    assert abs(est2.mean - ubm_moment(2, 0.5)) <= max(0.02, 3 * est2.stderr)


def test_third_moment_against_hierarchy():
    # Monte Carlo oracle for the ODE route at n = 3
    cfg = SimConfig(N=96, n=1, T=0.5, dt=2e-3, snapshot_times=(0.5,), samples=48, seed=77)
    ens = simulate_paths(cfg)
    est = ens.trace_estimate((u(1, 0.5),) * 3)
    assert abs(est.mean - ubm_moment(3, 0.5)) <= 3 * est.stderr + 2e-3


# -- evaluation ---------------------------------------------------------------------------


def test_eval_word_trace_basics(small_ensemble):
    s = small_ensemble.sample(0)
    assert eval_word_trace((), s) == 1.0
    assert eval_word_trace((u(1, 0.0),), s) == 1.0
    w = (u(1, 0.25), x(1))
    assert eval_word_trace(tuple(reversed([(l[0], l[1], l[2], l[3], not l[4]) if l[0] == "u" else l for l in w])), s) == pytest.approx(
        complex(np.conj(eval_word_trace(w, s))), abs=1e-14
    )
    with pytest.raises(GridError):
        eval_word_trace((u(1, 0.33),), s)
    with pytest.raises(GridError):
        eval_word_trace((ut(1, 0.25),), s)


def test_eval_trace_estimate_matches_samples(small_ensemble):
    w = (u(1, 0.25),)
    est = eval_trace_estimate(w, small_ensemble)
    per = [eval_word_trace(w, small_ensemble.sample(k)) for k in range(4)]
    assert est.samples == small_ensemble.config.samples
    assert est.stderr >= 0
    assert np.allclose(per, small_ensemble.word_values(w)[:4])


def test_eval_trace_poly_modes(small_ensemble):
    s = small_ensemble.sample(1)
    tp = TracePoly.from_term(2.0, [(u(1, 0.25),)], (x(1),))
    mat = eval_trace_poly(tp, s)
    want = 2.0 * s.eval_word_trace((u(1, 0.25),)) * s.X(1)
    assert np.allclose(mat, want)
    scal = eval_trace_poly(tp, s, scalar=True)
    assert scal == pytest.approx(2.0 * s.eval_word_trace((u(1, 0.25),)) * np.trace(s.X(1)) / s.N)
    # identity trace poly evaluates to the word matrix
    tp2 = TracePoly.from_ncpoly(NCPoly.from_word((x(1),)))
    assert np.allclose(eval_trace_poly(tp2, s), s.X(1))
    # Tr(w) 1 evaluates to the scalar times identity
    tp3 = TracePoly.from_term(1.0, [(x(1),)], ())
    assert np.allclose(eval_trace_poly(tp3, s), np.trace(s.X(1)) / s.N * np.eye(s.N))


def test_eval_trace_poly_linearity(small_ensemble):
    rng = np.random.default_rng(4)
    s = small_ensemble.sample(2)
    for _ in range(50):
        c1 = complex(rng.normal(), rng.normal())
        c2 = complex(rng.normal(), rng.normal())
        t1 = TracePoly.from_term(c1, [(x(1),)], (u(1, 0.25),))
        t2 = TracePoly.from_term(c2, [], (u(2, 0.5), x(1)))
        lhs = eval_trace_poly(t1 + t2, s)
        rhs = eval_trace_poly(t1, s) + eval_trace_poly(t2, s)
        assert np.allclose(lhs, rhs)


# -- liberation ----------------------------------------------------------------------------


def test_liberation_snapshot(small_ensemble):
    s = small_ensemble.sample(0)
    X = liberation_snapshot(s, 0.0, 1, 1)
    assert np.array_equal(X, s.X(int((1 + 1) * (1 + 1 + 1) / 2 + 1)))
    lib = liberation_snapshot(s, 0.25, 1, 1)
    assert np.linalg.norm(lib - lib.conj().T) <= 1e-12
    ev_lib = np.sort(np.linalg.eigvalsh(lib))
    ev_x = np.sort(np.linalg.eigvalsh(X))
    assert np.abs(ev_lib - ev_x).max() <= 1e-10
    # the static family never moves
    static = liberation_snapshot(s, 0.25, small_ensemble.config.n + 1, 1)
    assert np.array_equal(static, s.X(int((3 + 1) * (3 + 1 + 1) / 2 + 1)))
    with pytest.raises(IndexError):
        liberation_snapshot(s, 0.25, small_ensemble.config.n + 2, 1)


def test_xl_word_evaluation_matches_lift(small_ensemble):
    from liblab.algebra import lift_u

    p = NCPoly.from_word((xl(1, 1, 0.25), xl(2, 1, 0.5), xl(3, 2, 0.25)))
    lifted = lift_u(p, small_ensemble.config.n)
    s = small_ensemble.sample(5)
    ((w, _),) = tuple(p.terms())
    ((wl, _),) = tuple(lifted.terms())
    assert eval_word_trace(w, s) == pytest.approx(eval_word_trace(wl, s), abs=1e-13)


# -- stochastic integral --------------------------------------------------------------------


def test_b_starts_at_zero_and_isometry(small_ensemble):
    b = small_ensemble.b[1]
    assert np.abs(b[:, 0]).max() == 0.0
    D = b[:, 2] - b[:, 1]
    vals = np.einsum("skl,slk->s", D, D).real / small_ensemble.config.N
    se = np.std(vals) / math.sqrt(len(vals))
    assert abs(vals.mean() - 0.25) <= max(0.05 * 0.25, 3 * se)


def test_offline_b_consistent_with_martingale_structure(small_ensemble):
    s = small_ensemble.sample(0)
    grid = [0, ticks(0.1), ticks(0.25), ticks(0.5)]
    path = stochastic_integral_b(s, 1, grid)
    assert np.abs(path[0]).max() == 0.0
    # one-step reconstruction: i db Y = dZ on the same grid
    for t0, t1 in zip(grid[:-1], grid[1:]):
        Y0 = math.exp(t0 * 1e-6 / 2) * s.U(1, t0)
        Y1 = math.exp(t1 * 1e-6 / 2) * s.U(1, t1)
        lhs = 1j * (path[t1] - path[t0]) @ Y0
        assert np.allclose(lhs, Y1 - Y0, atol=1e-12)


# -- resolvent ---------------------------------------------------------------------------------


def test_resolvent_trace_cases():
    assert resolvent_trace(np.zeros((4, 4)), 1j) == pytest.approx(-1j)
    A = np.diag([1.0, -1.0])
    assert resolvent_trace(A, 2.0) == pytest.approx(2.0 / 3.0)


def test_resolvent_matches_semicircle():
    cfg = SimConfig(
        N=96, n=1, T=1.0, dt=2e-3, snapshot_times=(1.0,), b_grid=(1.0,), samples=24,
        seed=13,
    )
    ens = simulate_paths(cfg)
    b = ens.b[1][:, 1]
    herm = 0.5 * (b + b.conj().transpose(0, 2, 1))
    vals = [resolvent_trace(m, 3j) for m in herm]
    got = np.mean(vals)
    assert abs(got - semicircle_cauchy(1.0, 3j)) <= 0.02


# -- path store -------------------------------------------------------------------------------


def test_pathstore_roundtrip(tmp_path, small_ensemble):
    path = str(tmp_path / "ens.bin")
    save_ensemble(small_ensemble, path)
    back = load_ensemble(path)
    assert np.array_equal(back.snaps, small_ensemble.snaps)
    assert back.config.N == small_ensemble.config.N
    assert back.config.samples == small_ensemble.config.samples
    assert back.snap_ticks == small_ensemble.snap_ticks
    assert back.stored_hash == small_ensemble.config.config_hash()
    # evaluation works on the loaded ensemble
    assert back.mean_trace((u(1, 0.25),)) == small_ensemble.mean_trace((u(1, 0.25),))


def test_pathstore_rejects_bad_magic(tmp_path):
    path = str(tmp_path / "junk.bin")
    with open(path, "wb") as fh:
        fh.write(b"NOTLIBL" + b"\x00" * 64)
    with pytest.raises(ValueError):
        load_ensemble(path)


# -- grafted conditional expectation -----------------------------------------------------------


def test_mc_cond_expect_no_future_letters_is_exact(small_ensemble):
    s = small_ensemble.sample(0)
    p = NCPoly.from_word((x(1), u(1, 0.25))) + 0.5 * NCPoly.one()
    for M in (1, 4):
        got = mc_cond_expect(p, 0.25, s, M)
        assert np.allclose(got, s.eval_poly_matrix(p), atol=1e-12)


def test_mc_cond_expect_matches_first_moment(small_ensemble):
    s = small_ensemble.sample(1)
    got = mc_cond_expect(NCPoly.from_letter(u(1, 0.5)), 0.25, s, M=96)
    want = math.exp(-0.125) * s.U(1, ticks(0.25))
    rel = np.linalg.norm(got - want) / np.linalg.norm(want)
    # entrywise MC error ~ 1/sqrt(M N); allow a generous multiple
    assert rel <= 0.12


def test_mc_cond_expect_hermitian_source(small_ensemble):
    s = small_ensemble.sample(2)
    base = NCPoly.from_word((x(1), u(1, 0.5)))
    p = base + base.adjoint()
    got = mc_cond_expect(p, 0.25, s, M=64)
    assert np.linalg.norm(got - got.conj().T) / np.linalg.norm(got) <= 0.15


# -- drifted dynamics ---------------------------------------------------------------------------


def test_drifted_simulation_consistency():
    base = NCPoly.from_word((x(1), u(1, 0.25)))
    c = 0.1 * (base + base.adjoint())
    common = dict(N=16, n=1, T=0.4, dt=1e-2, snapshot_times=(0.25, 0.4), samples=6, seed=5)
    sym = simulate_paths(SimConfig(**common, drift=DriftConfig(potential=c)))
    mc = simulate_paths(
        SimConfig(**common, drift=DriftConfig(potential=c, mode="mc", inner_samples=48))
    )
    # identical driving noise, drift estimates differ only by inner MC error
    rel = np.linalg.norm(mc.snaps - sym.snaps) / np.linalg.norm(sym.snaps)
    assert 0 < rel < 0.02
    W = sym.snaps[:, 0, -1]
    assert np.abs(W.conj().transpose(0, 2, 1) @ W - np.eye(16)).max() <= 1e-10


def test_clark_ocone_increment_consistency():
    # drifted run: the realized increment mean of the shifted conditional
    # value of a test polynomial matches the gradient-drift pairing
    from liblab.algebra import pi_t
    from liblab.cond_expect import cond_expect_past, projected_gradient
    from liblab.oracles import EmpiricalOracle, eval_state

    base = NCPoly.from_word((x(1), u(1, 0.2)))
    c = 0.2 * (base + base.adjoint())
    spec = DriftSpec(c, 1)
    t0, t1 = 0.1, 0.15
    cfg = SimConfig(
        N=32, n=1, T=0.2, dt=5e-3, snapshot_times=(0.05, 0.1, 0.15, 0.2),
        samples=192, seed=31, drift=DriftConfig(potential=c),
    )
    ens = simulate_paths(cfg)
    a = NCPoly.from_word((u(1, 0.2),)) + NCPoly.from_word((u(1, 0.2, star=True),))
    tp0 = cond_expect_past(pi_t(t0, a), t0)
    tp1 = cond_expect_past(pi_t(t1, a), t1)
    inc = np.array(
        [
            (eval_trace_poly(tp1, ens.sample(k), scalar=True)
             - eval_trace_poly(tp0, ens.sample(k), scalar=True)).real
            for k in range(cfg.samples)
        ]
    )
    got = float(inc.mean())
    se = float(inc.std() / math.sqrt(len(inc)))
    oracle = EmpiricalOracle(ens)
    g = projected_gradient(a, 1, t0)
    xi = spec.xi(1, t0)
    want = eval_state(oracle, g * xi).real * (t1 - t0)
    assert abs(got - want) <= max(3 * se, 0.01)
