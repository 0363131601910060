"""Finite-N realization: Brownian motion on the unitary group and friends.

Hermitian Brownian increments, an exactly-unitary multiplicative integrator
for the unitary stochastic differential equation (with optional Girsanov
drift), liberation conjugation, word-trace evaluation over path ensembles,
the discretized stochastic integral recovering the free Brownian motion, and
a binary path-store container.

The integrator computes U' = exp(i(dH + D dt)) U through the diagonal Pade
family with the standard degree-by-norm table (the same scaling-and-squaring
scheme scipy's expm uses), batched over the sample axis.  The exponential of
an anti-Hermitian argument is unitary in exact arithmetic, so unitarity
holds to roundoff at every step, and the Ito expectation of the exponential
supplies the -U dt/2 drift term of the equation.

Sample s draws from a dedicated counter-based Philox stream derived from
(seed, s); ensembles are therefore bitwise reproducible for a fixed config,
independent of how samples are chunked over worker threads.  Reductions use
numpy's pairwise summation over the fixed sample order.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import struct
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm as _scipy_expm

from .algebra import NCPoly, Word, liberated_x_index, tick_seconds, ticks
from .cond_expect import DriftSpec
from .trace_poly import TracePoly

__all__ = [
    "TraceEstimate",
    "XSpec",
    "DriftConfig",
    "SimConfig",
    "UnitaryPathEnsemble",
    "PathSample",
    "sample_hermitian_increment",
    "step_ubm",
    "simulate_paths",
    "simulate_inner_paths",
    "liberation_snapshot",
    "eval_word_trace",
    "eval_trace_estimate",
    "eval_trace_poly",
    "stochastic_integral_b",
    "resolvent_trace",
    "save_ensemble",
    "load_ensemble",
    "GridError",
]

PATHSTORE_MAGIC = b"LIBLAB1"


class GridError(ValueError):
    """A requested time is missing from the snapshot grid."""


@dataclass(frozen=True)
class TraceEstimate:
    """Empirical trace of a word: complex mean, standard error, sample count."""

    mean: complex
    stderr: float
    samples: int


@dataclass(frozen=True)
class XSpec:
    """Recipe for the deterministic matrices: diagonal grid, zero, or file.

    ``diagonal`` places linspace(-R, R, N) on the diagonal, cyclically rolled
    per family index so distinct families do not commute trivially with the
    same pattern; ``file`` loads an .npz mapping str(j) to an (N, N) array.
    """

    kind: str = "diagonal"
    path: str | None = None

    def __post_init__(self):
        if self.kind not in ("diagonal", "zero", "file"):
            raise ValueError(f"unknown x_spec kind {self.kind!r}")
        if self.kind == "file" and not self.path:
            raise ValueError("x_spec kind 'file' requires a path")


@dataclass(frozen=True)
class DriftConfig:
    potential: NCPoly
    mode: str = "symbolic"
    inner_samples: int = 8

    def __post_init__(self):
        if self.mode not in ("symbolic", "mc"):
            raise ValueError(f"unknown drift mode {self.mode!r}")
        if self.inner_samples < 1:
            raise ValueError("inner_samples must be >= 1")


@dataclass(frozen=True)
class SimConfig:
    N: int
    n: int
    T: float
    dt: float
    snapshot_times: tuple
    samples: int
    seed: int
    R: float = 1.0
    x_spec: XSpec = field(default_factory=XSpec)
    drift: DriftConfig | None = None
    b_grid: tuple = ()
    b_components: tuple = (1,)
    threads: int | None = None
    max_bytes: int = 6 * 1024**3

    def __post_init__(self):
        if self.N < 1 or self.n < 1 or self.samples < 1:
            raise ValueError("N, n and samples must be positive")
        if self.dt <= 0 or self.T <= 0:
            raise ValueError("dt and T must be positive")
        dtk = ticks(self.dt)
        if ticks(self.T) % dtk:
            raise ValueError("T must be a multiple of dt")
        for t in tuple(self.snapshot_times) + tuple(self.b_grid):
            tk = ticks(t)
            if tk % dtk:
                raise ValueError(f"snapshot time {t} is not a multiple of dt")
            if tk > ticks(self.T):
                raise ValueError(f"snapshot time {t} exceeds the horizon {self.T}")
        for i in self.b_components:
            if not 1 <= i <= self.n:
                raise ValueError(f"b component {i} out of range 1..{self.n}")
        object.__setattr__(self, "snapshot_times", tuple(self.snapshot_times))
        object.__setattr__(self, "b_grid", tuple(self.b_grid))
        object.__setattr__(self, "b_components", tuple(self.b_components))

    def snap_ticks(self) -> tuple:
        return tuple(sorted({0} | {ticks(t) for t in self.snapshot_times}))

    def b_ticks(self) -> tuple:
        if not self.b_grid:
            return ()
        return tuple(sorted({0} | {ticks(t) for t in self.b_grid}))

    def thread_count(self) -> int:
        if self.threads:
            return max(1, self.threads)
        env = os.environ.get("LIBLAB_THREADS")
        if env:
            return max(1, int(env))
        return 1

    def config_hash(self) -> bytes:
        doc = {
            "N": self.N,
            "n": self.n,
            "T": self.T,
            "dt": self.dt,
            "snapshot_times": list(self.snapshot_times),
            "samples": self.samples,
            "seed": self.seed,
            "R": self.R,
            "x_spec": [self.x_spec.kind, self.x_spec.path],
            "drift": _drift_key(self.drift),
            "b_grid": list(self.b_grid),
            "b_components": list(self.b_components),
        }
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).digest()


def _drift_key(drift: DriftConfig | None):
    if drift is None:
        return None
    terms = sorted(
        (list(map(list, w)), c.real, c.imag) for w, c in drift.potential.terms()
    )
    return [terms, drift.mode, drift.inner_samples]


# ---------------------------------------------------------------------------
# increments and the exponential step
# ---------------------------------------------------------------------------


def sample_hermitian_increment(N: int, dt: float, rng: np.random.Generator) -> np.ndarray:
    """One Hermitian Brownian increment: diagonal N(0, dt/N) real,
    off-diagonal complex with independent N(0, dt/2N) parts."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    z = rng.standard_normal((2, N, N))
    m = z[0] + 1j * z[1]
    return (m + m.conj().T) * (0.5 * math.sqrt(dt / N))


def _gue_stack(gens, n: int, N: int, dt: float) -> np.ndarray:
    """Per-sample increments, shape (len(gens), n, N, N); one draw per sample."""
    scale = 0.5 * math.sqrt(dt / N)
    out = np.empty((len(gens), n, N, N), dtype=complex)
    for s, g in enumerate(gens):
        z = g.standard_normal((2, n, N, N))
        m = z[0] + 1j * z[1]
        out[s] = (m + m.conj().transpose(0, 2, 1)) * scale
    return out


# Higham's degree-by-norm table for the diagonal Pade approximants of exp.
_PADE_THETA = (
    (3, 1.495585217958292e-2),
    (5, 2.539398330063230e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068e0),
    (13, 5.371920351148152e0),
)
_PADE_B = {
    3: (120.0, 60.0, 12.0, 1.0),
    5: (30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0),
    7: (17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0),
    9: (
        17643225600.0,
        8821612800.0,
        2075673600.0,
        302702400.0,
        30270240.0,
        2162160.0,
        110880.0,
        3960.0,
        90.0,
        1.0,
    ),
    13: (
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ),
}


def _pade_uv(A: np.ndarray, m: int):
    b = _PADE_B[m]
    I = np.broadcast_to(np.eye(A.shape[-1], dtype=A.dtype), A.shape)
    A2 = A @ A
    if m == 3:
        U = A @ (b[3] * A2 + b[1] * I)
        V = b[2] * A2 + b[0] * I
        return U, V
    A4 = A2 @ A2
    if m == 5:
        U = A @ (b[5] * A4 + b[3] * A2 + b[1] * I)
        V = b[4] * A4 + b[2] * A2 + b[0] * I
        return U, V
    A6 = A4 @ A2
    if m == 7:
        U = A @ (b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * I)
        V = b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * I
        return U, V
    if m == 9:
        A8 = A6 @ A2
        U = A @ (b[9] * A8 + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * I)
        V = b[8] * A8 + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * I
        return U, V
    U = A @ (
        A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2)
        + b[7] * A6
        + b[5] * A4
        + b[3] * A2
        + b[1] * I
    )
    V = (
        A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2)
        + b[6] * A6
        + b[4] * A4
        + b[2] * A2
        + b[0] * I
    )
    return U, V


def _expm_apply_uniform(A: np.ndarray, B: np.ndarray, m: int, squarings: int) -> np.ndarray:
    if squarings == 0:
        U, V = _pade_uv(A, m)
        return np.linalg.solve(V - U, (V + U) @ B)
    U, V = _pade_uv(A / (2.0**squarings), m)
    E = np.linalg.solve(V - U, V + U)
    for _ in range(squarings):
        E = E @ E
    return E @ B


def _pade_choice(norm: float):
    for m, theta in _PADE_THETA:
        if norm <= theta:
            return m, 0
    s = max(0, int(math.ceil(math.log2(norm / _PADE_THETA[-1][1]))))
    return 13, s


def _expm_apply(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """exp(A) @ B for a stack of matrices, diagonal Pade with the standard
    degree-by-norm table.  The degree is chosen per slice so that a sample's
    result never depends on which other samples share its batch."""
    norms = np.abs(A).sum(axis=-2).max(axis=-1)
    choices = [_pade_choice(float(v)) for v in norms]
    first = choices[0]
    if all(c == first for c in choices):
        return _expm_apply_uniform(A, B, *first)
    out = np.empty(np.broadcast_shapes(A.shape, B.shape), dtype=complex)
    by_choice: dict = {}
    for k, c in enumerate(choices):
        by_choice.setdefault(c, []).append(k)
    for c, idx in by_choice.items():
        out[idx] = _expm_apply_uniform(A[idx], B[idx] if B.shape[0] > 1 else B, *c)
    return out


def step_ubm(U: np.ndarray, dH: np.ndarray, dt: float, drift_matrix=None) -> np.ndarray:
    """One multiplicative step U' = exp(i (dH + drift dt)) U.

    Exactly unitary; the expansion of the exponential reproduces the Ito
    drift -U dt/2 in expectation to O(dt^2).  The drift matrix must be
    Hermitian up to 1e-8; it is replaced by its Hermitian part.
    """
    A = np.asarray(dH, dtype=complex)
    if drift_matrix is not None:
        D = np.asarray(drift_matrix, dtype=complex)
        dev = np.linalg.norm(D - D.conj().T)
        if dev > 1e-8 * max(1.0, np.linalg.norm(D)):
            raise ValueError(f"drift matrix is not Hermitian (deviation {dev:.3g})")
        A = A + 0.5 * (D + D.conj().T) * dt
    return _expm_apply((1j * A)[None], np.asarray(U, dtype=complex)[None])[0]


def _euler_step(U, dH, dt, drift_matrix=None):
    """Explicit Euler variant, kept behind a flag for cross-checks only."""
    D = 0 if drift_matrix is None else drift_matrix
    return U + 1j * (dH + D * dt) @ U - 0.5 * dt * U


# ---------------------------------------------------------------------------
# ensembles
# ---------------------------------------------------------------------------


class UnitaryPathEnsemble:
    """Monte Carlo snapshots U_{s,i}(t_k) plus the deterministic X matrices.

    ``snaps`` has shape (samples, n, len(snap_ticks), N, N); ``b`` maps a
    component index to the discretized free-Brownian integral at the b grid,
    shape (samples, len(b_ticks), N, N).
    """

    def __init__(self, config: SimConfig, snaps: np.ndarray, b: dict | None = None):
        self.config = config
        self.snaps = snaps
        self.snap_ticks = config.snap_ticks()
        self._snap_index = {tk: k for k, tk in enumerate(self.snap_ticks)}
        self.b = b or {}
        self.b_ticks = config.b_ticks()
        self._b_index = {tk: k for k, tk in enumerate(self.b_ticks)}
        self._x: dict[int, np.ndarray] = {}
        self._x_lock = threading.Lock()
        self._word_cache: dict[Word, np.ndarray] = {}
        self._cache_lock = threading.Lock()

    # -- deterministic matrices ----------------------------------------------

    def X(self, j: int) -> np.ndarray:
        with self._x_lock:
            if j not in self._x:
                self._x[j] = _build_x(self.config, j)
            return self._x[j]

    # -- snapshots -------------------------------------------------------------

    def U_stack(self, i: int, tk: int) -> np.ndarray:
        if not 1 <= i <= self.config.n:
            raise GridError(f"component {i} out of range 1..{self.config.n}")
        idx = self._snap_index.get(tk)
        if idx is None:
            raise GridError(f"time {tick_seconds(tk)} missing from snapshot grid")
        return self.snaps[:, i - 1, idx]

    def b_stack(self, i: int, tk: int) -> np.ndarray:
        if i not in self.b:
            raise GridError(f"no stochastic integral recorded for component {i}")
        idx = self._b_index.get(tk)
        if idx is None:
            raise GridError(f"time {tick_seconds(tk)} missing from b grid")
        return self.b[i][:, idx]

    def sample(self, k: int) -> "PathSample":
        return PathSample(self, k)

    # -- evaluation --------------------------------------------------------------

    def _letter_stack(self, l) -> np.ndarray:
        kind, i, j, tk, star = l
        if kind == "x":
            return self.X(j)[None]
        if kind == "u":
            m = self.U_stack(i, tk)
            return m.conj().transpose(0, 2, 1) if star else m
        if kind == "xl":
            xmat = self.X(liberated_x_index(i, j))[None]
            if i == self.config.n + 1:
                return xmat
            um = self.U_stack(i, tk)
            return um @ xmat @ um.conj().transpose(0, 2, 1)
        raise GridError(f"letter kind {kind!r} has no matrix realization")

    def word_values(self, w: Word) -> np.ndarray:
        """Normalized traces of the word, one value per sample."""
        w = tuple(w)
        with self._cache_lock:
            hit = self._word_cache.get(w)
        if hit is not None:
            return hit
        S, N = self.config.samples, self.config.N
        if not w:
            vals = np.ones(S, dtype=complex)
        else:
            mats = self._letter_stack(w[0])
            for l in w[1:]:
                mats = mats @ self._letter_stack(l)
            if mats.shape[0] == 1:
                vals = np.full(S, np.trace(mats[0]) / N)
            else:
                vals = np.trace(mats, axis1=1, axis2=2) / N
        with self._cache_lock:
            self._word_cache[w] = vals
        return vals

    def trace_estimate(self, w: Word) -> TraceEstimate:
        vals = self.word_values(w)
        return _estimate(vals)

    def mean_trace(self, w: Word) -> complex:
        return complex(self.word_values(w).mean())

    def save(self, path: str):
        save_ensemble(self, path)


def _estimate(vals: np.ndarray) -> TraceEstimate:
    S = len(vals)
    mean = complex(vals.mean())
    if S > 1:
        var = float((np.abs(vals - mean) ** 2).sum()) / (S - 1)
        stderr = math.sqrt(var / S)
    else:
        stderr = 0.0
    return TraceEstimate(mean, stderr, S)


def _build_x(config: SimConfig, j: int) -> np.ndarray:
    N, R = config.N, config.R
    kind = config.x_spec.kind
    if kind == "zero":
        return np.zeros((N, N), dtype=complex)
    if kind == "diagonal":
        grid = np.linspace(-R, R, N)
        mat = np.diag(np.roll(grid, (j - 1) * (N // 3 + 1))).astype(complex)
    else:
        with np.load(config.x_spec.path) as data:
            if str(j) not in data:
                raise GridError(f"x_spec file has no matrix for family {j}")
            mat = np.asarray(data[str(j)], dtype=complex)
        if mat.shape != (N, N):
            raise ValueError(f"X_{j} has shape {mat.shape}, expected {(N, N)}")
        dev = np.linalg.norm(mat - mat.conj().T)
        if dev > 1e-10:
            raise ValueError(f"X_{j} is not Hermitian (deviation {dev:.3g})")
    top = float(np.abs(np.linalg.eigvalsh(mat)).max()) if N else 0.0
    if top > R + 1e-12:
        raise ValueError(f"operator norm of X_{j} is {top:.6g} > R = {R}")
    return mat


class PathSample:
    """View of one sample of an ensemble; input to per-path operations."""

    def __init__(self, ensemble: UnitaryPathEnsemble, index: int):
        if not 0 <= index < ensemble.config.samples:
            raise IndexError(f"sample index {index} out of range")
        self.ensemble = ensemble
        self.index = index
        self.N = ensemble.config.N
        self.n = ensemble.config.n
        self.dt = ensemble.config.dt
        self.seed = ensemble.config.seed
        self.snap_ticks = ensemble.snap_ticks

    def U(self, i: int, tk: int) -> np.ndarray:
        return self.ensemble.U_stack(i, tk)[self.index]

    def X(self, j: int) -> np.ndarray:
        return self.ensemble.X(j)

    def b(self, i: int, tk: int) -> np.ndarray:
        return self.ensemble.b_stack(i, tk)[self.index]

    def letter_matrix(self, l) -> np.ndarray:
        stack = self.ensemble._letter_stack(l)
        return stack[0] if stack.shape[0] == 1 else stack[self.index]

    def eval_word_matrix(self, w: Word) -> np.ndarray:
        out = np.eye(self.N, dtype=complex)
        for l in w:
            out = out @ self.letter_matrix(l)
        return out

    def eval_word_trace(self, w: Word) -> complex:
        return complex(np.trace(self.eval_word_matrix(w)) / self.N)

    def eval_poly_matrix(self, p: NCPoly) -> np.ndarray:
        out = np.zeros((self.N, self.N), dtype=complex)
        for w, c in p.terms():
            out += c * self.eval_word_matrix(w)
        return out


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------


def _sample_generator(seed: int, sample_index: int) -> np.random.Generator:
    ss = np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, 1, sample_index])
    return np.random.Generator(np.random.Philox(ss))


def simulate_paths(config: SimConfig) -> UnitaryPathEnsemble:
    """Run the ensemble and return snapshots (and b integrals if requested).

    Deterministic for a fixed config: each sample owns the Philox stream
    keyed by (seed, sample index), so results do not depend on the thread
    count used to chunk the ensemble.
    """
    S, n, N = config.samples, config.n, config.N
    snap_ticks = config.snap_ticks()
    b_ticks = config.b_ticks()
    need = S * n * len(snap_ticks) * N * N * 16
    need += S * len(b_ticks) * len(config.b_components) * N * N * 16
    if need > config.max_bytes:
        raise MemoryError(
            f"ensemble storage {need / 2**20:.0f} MiB exceeds the"
            f" {config.max_bytes / 2**20:.0f} MiB cap; thin the snapshot grid"
        )

    harness = None
    retain_ticks: tuple = ()
    if config.drift is not None:
        spec = DriftSpec(config.drift.potential, n)
        if spec.world != "u":
            raise ValueError("drifted simulation expects an x,u potential")
        harness = spec
        retain_ticks = spec.letter_ticks

    snaps = np.empty((S, n, len(snap_ticks), N, N), dtype=complex)
    b_arrays = {
        i: np.empty((S, len(b_ticks), N, N), dtype=complex)
        for i in (config.b_components if b_ticks else ())
    }

    workers = config.thread_count()
    bounds = np.linspace(0, S, min(workers, S) + 1).astype(int)
    chunks = [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]

    ensemble = UnitaryPathEnsemble(config, snaps, b_arrays)

    def run(chunk):
        _run_chunk(config, ensemble, harness, retain_ticks, chunk, snaps, b_arrays)

    if len(chunks) == 1:
        run(chunks[0])
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            list(pool.map(run, chunks))
    return ensemble


def _run_chunk(config, ensemble, harness, retain_ticks, chunk, snaps, b_arrays):
    s0, s1 = chunk
    cs = s1 - s0
    N, n = config.N, config.n
    dtk = ticks(config.dt)
    steps = ticks(config.T) // dtk
    snap_ticks = set(config.snap_ticks())
    b_ticks = set(config.b_ticks())
    gens = [_sample_generator(config.seed, s) for s in range(s0, s1)]

    eye = np.eye(N, dtype=complex)
    U = [np.tile(eye, (cs, 1, 1)) for _ in range(n)]
    b = {i: np.zeros((cs, N, N), dtype=complex) for i in b_arrays}
    retained: dict = {}
    mc_ctx = None
    if config.drift is not None and config.drift.mode == "mc":
        mc_ctx = {"M": config.drift.inner_samples}

    def record(tk):
        if tk in snap_ticks:
            idx = ensemble._snap_index[tk]
            for i in range(n):
                snaps[s0:s1, i, idx] = U[i]
        if tk in b_ticks:
            idx = ensemble._b_index[tk]
            for i in b:
                b_arrays[i][s0:s1, idx] = b[i]

    record(0)
    exp_half = math.exp(config.dt / 2.0)
    for k in range(steps):
        t_tick = k * dtk
        drift_mats = None
        if harness is not None and t_tick <= harness.max_tick:
            drift_mats = _drift_stack(
                ensemble, harness, U, retained, t_tick, cs, mc_ctx, s0
            )
        dH = _gue_stack(gens, n, N, config.dt)
        new_tick = (k + 1) * dtk
        for i in range(n):
            A = dH[:, i]
            if drift_mats is not None and drift_mats[i] is not None:
                A = A + drift_mats[i] * config.dt
            U_new = _expm_apply(1j * A, U[i])
            if (i + 1) in b:
                db = -1j * (
                    exp_half * (U_new @ U[i].conj().transpose(0, 2, 1))
                    - eye[None]
                )
                b[i + 1] += db
            U[i] = U_new
        if new_tick in retain_ticks:
            for i in range(n):
                retained[(i + 1, new_tick)] = U[i].copy()
        record(new_tick)


def _batch_letter_stack(x_of, U, retained, t_tick, cs, N):
    """Letter evaluation over the in-flight chunk state, (cs, N, N) stacks."""

    def letter_stack(l):
        kind, i, j, tk, star = l
        if kind == "x":
            return x_of(j)[None]
        if kind == "u":
            if tk == t_tick:
                m = U[i - 1]
            elif tk == 0:
                m = np.broadcast_to(np.eye(N, dtype=complex), (cs, N, N))
            else:
                m = retained.get((i, tk))
                if m is None:
                    raise GridError(
                        f"drift evaluation needs a retained snapshot at {tick_seconds(tk)}"
                    )
            return m.conj().transpose(0, 2, 1) if star else m
        raise GridError(f"unsupported drift letter {l}")

    return letter_stack


def _drift_stack(ensemble, harness, U, retained, t_tick, cs, mc_ctx, s0):
    """Hermitian drift matrices E[pi_N(D_{t,i} c)|F_t] per component, batched."""
    config = ensemble.config
    N, n = config.N, config.n
    t = tick_seconds(t_tick)
    letter_stack = _batch_letter_stack(ensemble.X, U, retained, t_tick, cs, N)
    out = []
    for i in range(1, n + 1):
        if mc_ctx is not None:
            out.append(
                _drift_mc(ensemble, harness, U, retained, t_tick, cs, mc_ctx, s0, i)
            )
            continue
        tp = harness.xi(i, t)
        if tp.is_zero():
            out.append(None)
            continue
        total = np.zeros((cs, N, N), dtype=complex)
        for (syms, w), c in tp.terms():
            factor = np.full(cs, c, dtype=complex)
            for s in syms:
                factor = factor * _word_trace_on(letter_stack, s, cs, N)
            total += factor[:, None, None] * _word_mat_on(letter_stack, w, cs, N)
        out.append(0.5 * (total + total.conj().transpose(0, 2, 1)))
    return out


def _word_mat_on(letter_stack, w, cs, N) -> np.ndarray:
    out = np.broadcast_to(np.eye(N, dtype=complex), (cs, N, N))
    for l in w:
        out = out @ letter_stack(l)
    return out


def _word_trace_on(letter_stack, w, cs, N) -> np.ndarray:
    m = _word_mat_on(letter_stack, w, cs, N)
    return np.trace(m, axis1=-2, axis2=-1) / N


def _drift_mc(ensemble, harness, U, retained, t_tick, cs, mc_ctx, s0, i):
    """Inner Monte Carlo drift (remark-style oracle mode): per-sample graft."""
    from .algebra import d_u
    from .cond_expect import mc_cond_expect

    config = ensemble.config
    t = tick_seconds(t_tick)
    g = d_u(t, i, harness.c)
    out = np.empty((cs, config.N, config.N), dtype=complex)
    for local in range(cs):
        view = _LiveSample(ensemble, U, retained, t_tick, local, s0 + local)
        mat = mc_cond_expect(g, t, view, mc_ctx["M"])
        out[local] = 0.5 * (mat + mat.conj().T)
    return out


class _LiveSample:
    """Minimal PathSample stand-in over the in-flight chunk state."""

    def __init__(self, ensemble, U, retained, t_tick, local, index):
        config = ensemble.config
        self.ensemble = ensemble
        self.N = config.N
        self.n = config.n
        self.dt = config.dt
        self.seed = config.seed
        self.index = index
        self._U = U
        self._retained = retained
        self._t_tick = t_tick
        self._local = local
        self.snap_ticks = tuple(
            sorted({0, t_tick} | {tk for (_i, tk) in retained})
        )

    def letter_matrix(self, l):
        kind, i, j, tk, star = l
        if kind == "x":
            return self.ensemble.X(j)
        if kind == "u":
            if tk == self._t_tick:
                m = self._U[i - 1][self._local]
            elif tk == 0:
                m = np.eye(self.N, dtype=complex)
            else:
                m = self._retained[(i, tk)][self._local]
            return m.conj().T if star else m
        raise GridError(f"unsupported letter {l}")

    def eval_poly_matrix(self, p: NCPoly):
        out = np.zeros((self.N, self.N), dtype=complex)
        for w, c in p.terms():
            m = np.eye(self.N, dtype=complex)
            for l in w:
                m = m @ self.letter_matrix(l)
            out += c * m
        return out


def _batch_tp_values(tp: TracePoly, letter_stack, cs, N, scalar=False):
    if scalar:
        total = np.zeros(cs, dtype=complex)
    else:
        total = np.zeros((cs, N, N), dtype=complex)
    for (syms, w), c in tp.terms():
        factor = np.full(cs, c, dtype=complex)
        for s in syms:
            factor = factor * _word_trace_on(letter_stack, s, cs, N)
        if scalar:
            total += factor * _word_trace_on(letter_stack, w, cs, N)
        else:
            total += factor[:, None, None] * _word_mat_on(letter_stack, w, cs, N)
    return total


def girsanov_path_values(config: SimConfig, spec: DriftSpec, T: float) -> np.ndarray:
    """Change-of-measure exponent I(T) per sample, computed streaming along
    driftless paths (no snapshot storage).

    I(t) is the conditional mean of the potential minus its time-0 value
    minus half the accumulated squared drift, all through the symbolic
    conditional expectations; the trapezoid rule runs on the step grid.
    """
    from .cond_expect import cond_expect_past
    from .algebra import pi_t as _pi_t

    if config.drift is not None:
        raise ValueError("the exponent is accumulated along driftless paths")
    S, n, N = config.samples, config.n, config.N
    dtk = ticks(config.dt)
    steps = ticks(T) // dtk
    if ticks(T) % dtk:
        raise ValueError("T must be a multiple of dt")
    lead_cache: dict = {}

    def lead_poly(tk):
        if tk not in lead_cache:
            t = tick_seconds(tk)
            lead_cache[tk] = cond_expect_past(_pi_t(t, spec.c), t, world="u")
        return lead_cache[tk]

    gens = [_sample_generator(config.seed, s) for s in range(S)]
    eye = np.eye(N, dtype=complex)
    U = [np.tile(eye, (S, 1, 1)) for _ in range(n)]
    retained: dict = {}
    X_cache: dict = {}

    def x_of(j):
        if j not in X_cache:
            X_cache[j] = _build_x(config, j)
        return X_cache[j]

    lead0 = None
    lead_T = None
    qv_acc = np.zeros(S)
    prev_qv = None
    for k in range(steps + 1):
        t_tick = k * dtk
        ls = _batch_letter_stack(x_of, U, retained, t_tick, S, N)
        lead = _batch_tp_values(lead_poly(t_tick), ls, S, N, scalar=True).real
        if k == 0:
            lead0 = lead
        qv = np.zeros(S)
        if t_tick <= spec.max_tick:
            for i in range(1, n + 1):
                xi = spec.xi(i, tick_seconds(t_tick))
                if xi.is_zero():
                    continue
                mat = _batch_tp_values(xi, ls, S, N)
                mat = 0.5 * (mat + mat.conj().transpose(0, 2, 1))
                qv += np.einsum("skl,slk->s", mat, mat).real / N
        if prev_qv is not None:
            qv_acc += 0.5 * (prev_qv + qv) * config.dt
        prev_qv = qv
        if k == steps:
            lead_T = lead
            break
        dH = _gue_stack(gens, n, N, config.dt)
        for i in range(n):
            U_new = _expm_apply(1j * dH[:, i], U[i])
            U[i] = U_new
        new_tick = (k + 1) * dtk
        if new_tick in spec.letter_ticks:
            for i in range(n):
                retained[(i + 1, new_tick)] = U[i].copy()
    return lead_T - lead0 - 0.5 * qv_acc


def simulate_inner_paths(N, n, offsets_ticks, dt, replicas, key) -> dict:
    """Fresh unitary BM paths for grafting: (component, offset) -> (M, N, N)."""
    dtk = ticks(dt)
    offsets = sorted(offsets_ticks)
    for off in offsets:
        if off % dtk:
            raise GridError(f"graft offset {tick_seconds(off)} not a multiple of dt")
    gens = [
        np.random.Generator(
            np.random.Philox(
                np.random.SeedSequence(
                    [key[0] & 0xFFFFFFFFFFFFFFFF, 2, *key[1:], m]
                )
            )
        )
        for m in range(replicas)
    ]
    eye = np.eye(N, dtype=complex)
    V = [np.tile(eye, (replicas, 1, 1)) for _ in range(n)]
    out: dict = {}
    steps = offsets[-1] // dtk
    grid = set(offsets)
    for i in range(1, n + 1):
        if 0 in grid:
            out[(i, 0)] = np.tile(eye, (replicas, 1, 1))
    for k in range(steps):
        dH = _gue_stack(gens, n, N, dt)
        tk = (k + 1) * dtk
        for i in range(n):
            V[i] = _expm_apply(1j * dH[:, i], V[i])
            if tk in grid:
                out[(i + 1, tk)] = V[i].copy()
    return out


# ---------------------------------------------------------------------------
# per-path operations
# ---------------------------------------------------------------------------


def liberation_snapshot(sample: PathSample, t: float, i: int, j: int) -> np.ndarray:
    """Conjugated matrix U_i(t) X_(i,j) U_i(t)^*; the identity acts for i = n+1."""
    if not 1 <= i <= sample.n + 1:
        raise IndexError(f"group index {i} out of range 1..{sample.n + 1}")
    X = sample.X(liberated_x_index(i, j))
    if i == sample.n + 1:
        return X.copy()
    U = sample.U(i, ticks(t))
    return U @ X @ U.conj().T


def eval_word_trace(w: Word, sample: PathSample) -> complex:
    """Normalized trace of the word evaluated on one path sample."""
    for l in w:
        if l[0] in ("ut", "v"):
            raise GridError("auxiliary letters have no path realization")
    return sample.eval_word_trace(tuple(w))


def eval_trace_estimate(w: Word, ensemble: UnitaryPathEnsemble) -> TraceEstimate:
    for l in w:
        if l[0] in ("ut", "v"):
            raise GridError("auxiliary letters have no path realization")
    return ensemble.trace_estimate(tuple(w))


def eval_trace_poly(tp: TracePoly, sample: PathSample, scalar: bool = False):
    """Evaluate a trace polynomial on a sample: trace symbols become
    normalized traces, the carrier a matrix product; scalar mode traces the
    carrier as well."""
    N = sample.N
    total = 0j if scalar else np.zeros((N, N), dtype=complex)
    for (syms, w), c in tp.terms():
        val = c
        for s in syms:
            val *= sample.eval_word_trace(s)
        if scalar:
            total += val * sample.eval_word_trace(w)
        else:
            total += val * sample.eval_word_matrix(w)
    return total


def stochastic_integral_b(
    sample: PathSample, i: int, grid_ticks, drift_spec: DriftSpec | None = None
) -> dict:
    """Discretized stochastic integral recovering the free Brownian motion.

    Over the grid s_0 < s_1 < ... the increments are
    b(s_k) - b(s_{k-1}) = -i (Z(s_k) - Z(s_{k-1})) Y(s_{k-1})^{-1} with
    Y(t) = e^{t/2} U_i(t), Z the compensated martingale (Z = Y when the
    drift vanishes) and Y^{-1} = e^{-t/2} U_i(t)^*.
    """
    grid = sorted(grid_ticks)
    if not grid:
        return {}
    if grid[0] != 0:
        grid = [0] + grid
    Y = {}
    for tk in grid:
        Y[tk] = math.exp(tick_seconds(tk) / 2.0) * sample.U(i, tk)
    xiY = {}
    if drift_spec is not None:
        for tk in grid[:-1]:
            tp = drift_spec.xi(i, tick_seconds(tk))
            xiY[tk] = eval_trace_poly(tp, sample) @ Y[tk]
    N = sample.N
    out = {grid[0]: np.zeros((N, N), dtype=complex)}
    acc = out[grid[0]]
    for prev, tk in zip(grid[:-1], grid[1:]):
        dZ = Y[tk] - Y[prev]
        if drift_spec is not None:
            dZ = dZ - 1j * xiY[prev] * (tick_seconds(tk) - tick_seconds(prev))
        y_inv = math.exp(-tick_seconds(prev) / 2.0) * sample.U(i, prev).conj().T
        acc = acc - 1j * (dZ @ y_inv)
        out[tk] = acc
    return out


def resolvent_trace(A: np.ndarray, z: complex) -> complex:
    """Normalized trace of (z - A)^{-1} via a direct linear solve."""
    A = np.asarray(A)
    N = A.shape[0]
    M = z * np.eye(N, dtype=complex) - A
    inv = np.linalg.solve(M, np.eye(N, dtype=complex))
    return complex(np.trace(inv) / N)


# ---------------------------------------------------------------------------
# path store
# ---------------------------------------------------------------------------


def save_ensemble(ensemble: UnitaryPathEnsemble, path: str):
    """Binary container: header (magic, N, n, grid, seed, config hash, recipe)
    followed by row-major complex-double matrices per (sample, i, t_k)."""
    cfg = ensemble.config
    meta = json.dumps(
        {
            "T": cfg.T,
            "dt": cfg.dt,
            "R": cfg.R,
            "samples": cfg.samples,
            "x_spec": [cfg.x_spec.kind, cfg.x_spec.path],
        },
        sort_keys=True,
    ).encode()
    ticks_arr = np.asarray(ensemble.snap_ticks, dtype="<i8")
    with open(path, "wb") as fh:
        fh.write(PATHSTORE_MAGIC)
        fh.write(struct.pack("<BIIIIq", 1, cfg.N, cfg.n, len(ticks_arr), cfg.samples, cfg.seed))
        fh.write(ticks_arr.tobytes())
        fh.write(cfg.config_hash())
        fh.write(struct.pack("<I", len(meta)))
        fh.write(meta)
        fh.write(np.ascontiguousarray(ensemble.snaps, dtype="<c16").tobytes())


def load_ensemble(path: str) -> UnitaryPathEnsemble:
    with open(path, "rb") as fh:
        magic = fh.read(len(PATHSTORE_MAGIC))
        if magic != PATHSTORE_MAGIC:
            raise ValueError(f"not a path store: bad magic {magic!r}")
        ver, N, n, K, S, seed = struct.unpack("<BIIIIq", fh.read(25))
        if ver != 1:
            raise ValueError(f"unsupported path store version {ver}")
        snap_ticks = np.frombuffer(fh.read(8 * K), dtype="<i8")
        stored_hash = fh.read(32)
        (meta_len,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(meta_len).decode())
        data = np.frombuffer(fh.read(S * n * K * N * N * 16), dtype="<c16")
    config = SimConfig(
        N=N,
        n=n,
        T=meta["T"],
        dt=meta["dt"],
        snapshot_times=tuple(tick_seconds(int(tk)) for tk in snap_ticks if tk),
        samples=S,
        seed=seed,
        R=meta["R"],
        x_spec=XSpec(kind=meta["x_spec"][0], path=meta["x_spec"][1]),
    )
    snaps = data.reshape(S, n, K, N, N).copy()
    ens = UnitaryPathEnsemble(config, snaps)
    ens.stored_hash = stored_hash
    return ens
