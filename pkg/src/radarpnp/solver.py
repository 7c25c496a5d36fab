"""Constrained ADMM reconstruction: CG image update, data-ball projection, magnitude prox.

One outer iteration performs, in order:

1. image update ``s`` by a few CG steps on ``(A^H A + kappa I) s = A^H (v1 + d1) + kappa (v2 + d2)``,
2. ``u = A s - d1`` followed by projection of ``u`` onto the epsilon-ball around ``y``,
3. complex magnitude prox of ``s - d2`` with strength ``alpha`` (the plug-and-play slot),
4. dual updates for both splittings.

The loop stops when the relative change of the magnitude image drops below
``rel_change_tol`` or after ``max_iters`` iterations.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .core import ComplexVolume, MeasurementSet, NumericalError, SolverConfig
from .denoise import DenoiserHandle, complex_magnitude_prox

_CG_EXIT_REL = 1e-12


@dataclass
class TraceRecord:
    iter: int
    residual: float
    rel_change: float
    slack: float
    ms: float


@dataclass
class IterationTrace:
    """Per-iteration scalar diagnostics of one reconstruction."""

    records: list[TraceRecord] = field(default_factory=list)

    def append(self, **kw):
        self.records.append(TraceRecord(**kw))

    def __len__(self):
        return len(self.records)

    def rows(self) -> list[dict]:
        return [vars(r).copy() for r in self.records]

    @property
    def residuals(self) -> np.ndarray:
        return np.array([r.residual for r in self.records])

    @property
    def rel_changes(self) -> np.ndarray:
        return np.array([r.rel_change for r in self.records])


def save_trace(path, trace: IterationTrace) -> None:
    """Write a trace as line-delimited JSON records."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in trace.rows():
            fh.write(json.dumps(row) + "\n")


@dataclass
class SolverState:
    """Snapshot handed to reconstruction observers after each iteration.

    ``s``, ``v1``, ``v2`` are the values just produced by the iteration;
    ``d1``, ``d2`` are the dual values the iteration consumed (the duals are
    advanced immediately after the snapshot), so ``v2`` is exactly the
    magnitude prox of ``s - d2``.
    """

    s: ComplexVolume
    v1: np.ndarray
    v2: ComplexVolume
    d1: np.ndarray
    d2: ComplexVolume
    iter: int
    rel_change: float


def default_epsilon(sigma_w: float, m: int) -> float:
    """Data-ball radius matched to the expected noise norm, sqrt(M * sigma_w^2)."""
    if sigma_w < 0:
        raise ValueError("sigma_w must be >= 0")
    return math.sqrt(m * sigma_w * sigma_w)


def experimental_epsilon(y) -> float:
    """Heuristic radius ||y||_2 / sqrt(10) for data with unknown noise level."""
    values = y.values if isinstance(y, MeasurementSet) else np.asarray(y)
    if values.size == 0:
        raise ValueError("empty measurement vector")
    return float(np.linalg.norm(values)) / math.sqrt(10.0)


def project_epsilon_ball(u: np.ndarray, y: np.ndarray, epsilon: float) -> np.ndarray:
    """Closest point to ``u`` within the epsilon-ball centered at ``y``."""
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    u = np.asarray(u, dtype=np.complex128)
    y = np.asarray(y, dtype=np.complex128)
    diff = u - y
    dist = float(np.linalg.norm(diff))
    if dist <= epsilon:
        return u.copy()
    out = y + (epsilon / dist) * diff
    back = out - y
    d = float(np.linalg.norm(back))
    if d <= epsilon * (1.0 + 1e-12):
        return out
    # Adding a tiny step to y absorbs its low bits, so for epsilon << ||y||
    # the re-measured distance can overshoot the radius by ~ulp(||y||), which
    # is unreachable by rescaling to the boundary; aim strictly inside instead.
    margin = 8.0 * np.finfo(np.float64).eps * float(np.linalg.norm(y))
    target = max(epsilon - margin, 0.0)
    return y + (target / d) * back


def cg_normal_solve(op, kappa: float, rhs: ComplexVolume,
                    x0: ComplexVolume | None = None, iters: int = 5) -> ComplexVolume:
    """Run exactly ``iters`` CG steps on ``(A^H A + kappa I) x = rhs``.

    The system is Hermitian positive definite for any ``kappa > 0``. Exits
    early once the residual falls below 1e-12 * ||rhs||.
    """
    if kappa <= 0:
        raise ValueError("kappa must be > 0 (positive definite system)")
    if iters < 1:
        raise ValueError("iters must be >= 1")
    x0_cols = np.zeros((rhs.data.size, 1), dtype=np.complex128) if x0 is None else x0.data[:, None]
    x, _ = _cg_normal(op, kappa, rhs.data[:, None], x0_cols, iters)
    return rhs.with_data(x[:, 0])


def _cg_normal(op, kappa, rhs, x0, iters, ax0=None):
    """Columnwise CG on the normal system; tracks A x alongside x.

    All columns share the operator but run independent CG recurrences.
    Returns ``(x, ax)`` with ``ax = A x`` (maintained through the updates, so
    no extra operator application is needed afterwards).
    """
    x = x0.astype(np.complex128, copy=True)
    ax = op.apply_cols(x) if ax0 is None else ax0.astype(np.complex128, copy=True)
    r = rhs - (op.adjoint_cols(ax) + kappa * x)
    p = r.copy()
    rs = _col_norm2(r)
    stop = (_CG_EXIT_REL ** 2) * _col_norm2(rhs)
    active = rs > stop
    for _ in range(iters):
        if not active.any():
            break
        ap = op.apply_cols(p)
        q = op.adjoint_cols(ap) + kappa * p
        pq = np.real(np.einsum("ij,ij->j", np.conj(p), q))
        alpha = np.where(active & (pq > 0), rs / np.where(pq > 0, pq, 1.0), 0.0)
        x += alpha * p
        ax += alpha * ap
        r -= alpha * q
        rs_new = _col_norm2(r)
        beta = np.where(active, rs_new / np.where(rs > 0, rs, 1.0), 0.0)
        p = r + beta * p
        rs = rs_new
        active = rs > stop
    return x, ax


def reconstruct(y: MeasurementSet, op, denoiser: DenoiserHandle, cfg: SolverConfig,
                observer=None) -> tuple[ComplexVolume, IterationTrace]:
    """Reconstruct one complex volume from one measurement set.

    Initialization: ``s0 = A^H y / max|A^H y|``, ``v1 = A s0``, ``v2 = s0``,
    zero duals. Raises NumericalError when ``A^H y`` vanishes (nothing to
    normalize) and aborts with the partial trace attached if the denoiser
    fails mid-run.

    Parameters
    ----------
    observer : callable, optional
        Called with a :class:`SolverState` snapshot after every iteration;
        intended for diagnostics and invariant checks.
    """
    _check_digest(y, op)
    volumes, traces = _admm_engine(
        op, y.values[:, None],
        denoiser=denoiser,
        kappa=cfg.kappa,
        alphas=np.array([cfg.alpha]),
        epsilons=np.array([cfg.epsilon]),
        cg_iters=cfg.cg_iters,
        rel_tol=cfg.rel_change_tol,
        max_iters=cfg.max_iters,
        observer=observer,
    )
    return volumes[0], traces[0]


def reconstruct_batch(measurements, op, denoiser: DenoiserHandle, cfg: SolverConfig,
                      alphas=None, epsilons=None):
    """Reconstruct several independent measurement sets against one operator.

    Semantically equivalent to calling :func:`reconstruct` per element (each
    column keeps its own CG recurrence, projection, prox and stopping test);
    batching only shares the operator applications, which is substantially
    faster for dense-cached operators. ``alphas``/``epsilons`` may override
    the config per measurement set.

    Returns ``(volumes, traces)`` lists in input order.
    """
    measurements = list(measurements)
    if not measurements:
        raise ValueError("no measurement sets given")
    for y in measurements:
        _check_digest(y, op)
    y_cols = np.stack([y.values for y in measurements], axis=1)
    k = len(measurements)
    alphas = np.full(k, cfg.alpha) if alphas is None else np.asarray(alphas, dtype=float)
    epsilons = np.full(k, cfg.epsilon) if epsilons is None else np.asarray(epsilons, dtype=float)
    if alphas.shape != (k,) or epsilons.shape != (k,):
        raise ValueError("alphas/epsilons must have one entry per measurement set")
    return _admm_engine(op, y_cols, denoiser=denoiser, kappa=cfg.kappa, alphas=alphas,
                        epsilons=epsilons, cg_iters=cfg.cg_iters,
                        rel_tol=cfg.rel_change_tol, max_iters=cfg.max_iters)


def _admm_engine(op, y_cols, *, denoiser, kappa, alphas, epsilons, cg_iters,
                 rel_tol, max_iters, observer=None):
    grid = op.geometry.grid
    n, k = grid.n_voxels, y_cols.shape[1]

    aty = op.adjoint_cols(y_cols)
    peaks = np.abs(aty).max(axis=0)
    if np.any(peaks == 0):
        bad = int(np.flatnonzero(peaks == 0)[0])
        raise NumericalError(f"A^H y is identically zero for measurement set {bad}; "
                             "cannot normalize the initial image")
    s = aty / peaks
    a_s = op.apply_cols(s)
    v1 = a_s.copy()
    v2 = s.copy()
    d1 = np.zeros_like(v1)
    d2 = np.zeros_like(s)

    final = np.empty((n, k), dtype=np.complex128)
    traces = [IterationTrace() for _ in range(k)]
    cols = np.arange(k)  # engine column -> original index

    for it in range(1, max_iters + 1):
        t0 = time.perf_counter()
        rhs = op.adjoint_cols(v1 + d1) + kappa * (v2 + d2)
        s_new, a_s_new = _cg_normal(op, kappa, rhs, s, cg_iters, ax0=a_s)

        u = a_s_new - d1
        v1 = _project_cols(u, y_cols, epsilons)

        p = s_new - d2
        for j in range(p.shape[1]):
            pv = ComplexVolume(grid.dims, p[:, j], grid.voxel_size, grid.origin)
            try:
                v2[:, j] = complex_magnitude_prox(pv, denoiser, float(alphas[j])).data
            except Exception as exc:
                # Surface the failure with whatever diagnostics were gathered.
                exc.partial_trace = traces[cols[j]]
                exc.partial_traces = traces
                raise

        old_norm = np.sqrt(_col_norm2(s))
        rel = np.sqrt(_col_norm2_real(np.abs(s_new) - np.abs(s))) / old_norm
        residual = np.sqrt(_col_norm2(y_cols - a_s_new))
        ms = (time.perf_counter() - t0) * 1e3

        if observer is not None:
            for j in range(p.shape[1]):
                observer(SolverState(
                    s=ComplexVolume(grid.dims, s_new[:, j], grid.voxel_size, grid.origin),
                    v1=v1[:, j].copy(),
                    v2=ComplexVolume(grid.dims, v2[:, j], grid.voxel_size, grid.origin),
                    d1=d1[:, j].copy(),
                    d2=ComplexVolume(grid.dims, d2[:, j], grid.voxel_size, grid.origin),
                    iter=it,
                    rel_change=float(rel[j]),
                ))

        d1 = d1 - (a_s_new - v1)
        d2 = d2 - (s_new - v2)
        s, a_s = s_new, a_s_new

        for j, orig in enumerate(cols):
            traces[orig].append(iter=it, residual=float(residual[j]), rel_change=float(rel[j]),
                                slack=float(max(residual[j] - epsilons[j], 0.0)), ms=ms)

        # The splitting is initialized self-consistently (v1 = A s0, v2 = s0),
        # which makes the first image update an exact fixed point; the
        # relative-change stop is therefore only armed from iteration 2 on.
        finished = ((rel < rel_tol) & (it >= 2)) | (it == max_iters)
        if finished.any():
            for j in np.flatnonzero(finished):
                final[:, cols[j]] = s[:, j]
            keep = ~finished
            if not keep.any():
                break
            cols = cols[keep]
            y_cols, epsilons, alphas = y_cols[:, keep], epsilons[keep], alphas[keep]
            s, a_s, v1, v2, d1, d2 = (arr[:, keep] for arr in (s, a_s, v1, v2, d1, d2))

    volumes = [ComplexVolume(grid.dims, final[:, j], grid.voxel_size, grid.origin) for j in range(k)]
    return volumes, traces


def _project_cols(u, y, epsilons):
    diff = u - y
    dist = np.sqrt(_col_norm2(diff))
    shrink = np.where(dist > epsilons, np.divide(epsilons, dist, out=np.ones_like(dist),
                                                 where=dist > 0), 1.0)
    out = y + shrink * diff
    back = out - y
    d = np.sqrt(_col_norm2(back))
    bad = d > epsilons * (1.0 + 1e-12)
    if bad.any():
        # same float-absorption fallback as project_epsilon_ball
        margin = 8.0 * np.finfo(np.float64).eps * np.sqrt(_col_norm2(y))
        target = np.maximum(epsilons - margin, 0.0)
        out = np.where(bad, y + (target / np.where(d > 0, d, 1.0)) * back, out)
    return out


def _check_digest(y: MeasurementSet, op):
    if y.geometry_digest != op.geometry.digest():
        raise ValueError("measurement set was recorded for a different geometry (digest mismatch)")
    if y.n_channels != op.geometry.n_channels:
        raise ValueError("measurement length does not match geometry channel count")


def _col_norm2(arr):
    return np.einsum("ij,ij->j", np.conj(arr), arr).real


def _col_norm2_real(arr):
    return np.einsum("ij,ij->j", arr, arr)
