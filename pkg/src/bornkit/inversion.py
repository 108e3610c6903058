"""Back-propagation initializer, Born iterative method and its variational form.

The stacked data operator maps a contrast (variation) ``v`` to the scattered
fields it produces with a frozen total field::

    A v = vec([G_S diag(E^t_1) v, ..., G_S diag(E^t_Ni) v])

``vec`` stacks the columns of an ``(N_r, N_i)`` matrix, i.e. incidence-major
order, so entry ``q + p * N_r`` belongs to receiver ``q`` and incidence ``p``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, aslinearoperator

from .exceptions import ConvergenceError, InversionAborted, NumericalError
from .forward import scattered_field, solve_total_field
from .greens import GreensSurface, GreensVolume, gd_apply

DEFAULT_LAMBDA = 5e-4


def vec(mat) -> np.ndarray:
    return np.asarray(mat).ravel(order="F")


def devec(y, n_rx: int, n_inc: int) -> np.ndarray:
    return np.asarray(y).reshape((n_rx, n_inc), order="F")


def clamp_contrast(chi, lossy: bool = True) -> np.ndarray:
    """Zero out negative real/imaginary parts; lossless maps drop the imaginary part."""
    chi = np.asarray(chi, dtype=complex)
    re = np.maximum(chi.real, 0.0)
    im = np.maximum(chi.imag, 0.0) if lossy else np.zeros_like(re)
    return re + 1j * im


class StackedOperator(LinearOperator):
    """``A`` for a frozen total field ``etot`` of shape ``(M^2, N_i)``."""

    def __init__(self, etot, gs: GreensSurface):
        etot = np.asarray(etot, dtype=complex)
        if etot.ndim != 2 or etot.shape[0] != gs.dense.shape[1]:
            raise ValueError(f"total field shape {etot.shape} does not match G_S {gs.dense.shape}")
        self.etot = etot
        self.gs = gs
        n_rx = gs.dense.shape[0]
        super().__init__(dtype=complex, shape=(n_rx * etot.shape[1], etot.shape[0]))

    @property
    def n_rx(self) -> int:
        return self.gs.dense.shape[0]

    @property
    def n_inc(self) -> int:
        return self.etot.shape[1]

    def _matvec(self, v):
        v = np.asarray(v).ravel()
        return vec(self.gs.dense @ (self.etot * v[:, None]))

    def _rmatvec(self, w):
        w = devec(np.asarray(w).ravel(), self.n_rx, self.n_inc)
        return np.sum(self.etot.conj() * (self.gs.dense.conj().T @ w), axis=1)

    def to_dense(self) -> np.ndarray:
        return np.vstack([self.gs.dense * self.etot[:, p][None, :] for p in range(self.n_inc)])


def stack_operator(etot, gs: GreensSurface) -> StackedOperator:
    return StackedOperator(etot, gs)


@dataclass
class RegularizedLsProblem:
    """``min ||b - A x||^2 + lam ||x||^2``; ``real`` restricts ``x`` to real values."""

    operator: object
    rhs: np.ndarray
    lam: float = DEFAULT_LAMBDA
    real: bool = False

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")


def tikhonov_solve(problem: RegularizedLsProblem, tol: float = 1e-8, max_iter: int = 500) -> np.ndarray:
    """Conjugate gradients on ``(A^H A + lam I) x = A^H b``.

    Stops when ``||A^H b - (A^H A + lam I) x|| <= tol * ||A^H b||``.

    Raises
    ------
    ConvergenceError
        If ``max_iter`` iterations pass without meeting ``tol``.
    """
    op = aslinearoperator(problem.operator)
    lam = problem.lam

    def normal(v):
        out = op.rmatvec(op.matvec(v))
        if problem.real:
            out = out.real
        return out + lam * v

    rhs = op.rmatvec(np.asarray(problem.rhs))
    if problem.real:
        rhs = rhs.real
    x = np.zeros_like(rhs)
    rhs_norm = np.linalg.norm(rhs)
    if rhs_norm == 0:
        return x
    r = rhs.copy()
    p = r.copy()
    rs = np.vdot(r, r).real
    for it in range(1, max_iter + 1):
        ap = normal(p)
        alpha = rs / np.vdot(p, ap).real
        x += alpha * p
        r -= alpha * ap
        rs_new = np.vdot(r, r).real
        if np.sqrt(rs_new) <= tol * rhs_norm:
            return x
        p = r + (rs_new / rs) * p
        rs = rs_new
    raise ConvergenceError("CG on the normal equations did not converge", np.sqrt(rs) / rhs_norm, max_iter)


def data_residual(es, chi, etot, gs: GreensSurface) -> float:
    """``||E^s - G_S diag(chi) E^t||_F / ||E^s||_F``.

    For all-zero measurements the absolute misfit is returned instead, so
    the value stays finite.
    """
    es = np.asarray(es)
    misfit = float(np.linalg.norm(es - scattered_field(chi, etot, gs)))
    scale = float(np.linalg.norm(es))
    return misfit / scale if scale > 0 else misfit


@dataclass
class TraceEntry:
    contrast: np.ndarray  # (M, M)
    data_residual: float
    wall_ms: float


@dataclass
class IterateTrace:
    """Per-iteration history of an inversion run."""

    method: str
    params: dict = field(default_factory=dict)
    entries: list[TraceEntry] = field(default_factory=list)
    etot: np.ndarray | None = None
    aborted_at: int | None = None
    error: str | None = None
    stopped_early: bool = False
    states: list = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    @property
    def contrast(self) -> np.ndarray:
        return self.entries[-1].contrast

    @property
    def residuals(self) -> list[float]:
        return [e.data_residual for e in self.entries]

    def append(self, chi, residual, wall_ms):
        self.entries.append(TraceEntry(np.array(chi, dtype=complex), float(residual), float(wall_ms)))



def bps(es, einc, gd: GreensVolume, gs: GreensSurface, lossy: bool = False):
    """Back-propagation estimate; returns ``(chi (M, M), etot (M^2, N_i))``.

    Per incidence the current is ``gamma_p G_S^H E^s_p`` with ``gamma_p`` the
    scalar least-squares fit of ``G_S G_S^H E^s_p`` to ``E^s_p`` (zero when
    that product vanishes); the contrast is the per-cell least-squares ratio
    of current to total field over all incidences.
    """
    es = np.asarray(es, dtype=complex)
    einc = np.asarray(einc, dtype=complex)
    back = gs.dense.conj().T @ es
    fwd = gs.dense @ back
    denom = np.sum(np.abs(fwd) ** 2, axis=0)
    num = np.sum(es * fwd.conj(), axis=0)
    gamma = np.divide(num, denom, out=np.zeros_like(num), where=denom > 0)
    current = gamma[None, :] * back
    etot = einc + gd_apply(gd, current)
    chi = np.sum(current * etot.conj(), axis=1) / np.sum(np.abs(etot) ** 2, axis=1)
    m = gd.grid
    return clamp_contrast(chi, lossy).reshape(m, m), etot


def bps_gamma(es_p, gs: GreensSurface) -> complex:
    """The scalar ``gamma_p`` for a single incidence."""
    fwd = gs.dense @ (gs.dense.conj().T @ es_p)
    denom = np.vdot(fwd, fwd).real
    return complex(np.vdot(fwd, es_p) / denom) if denom > 0 else 0j


def _run(kind, es, einc, gd, gs, lam, iters, init, lossy, stop_tol, solve_method, cg_tol, cg_max_iter):
    if iters < 1:
        raise ValueError("iters must be at least 1")
    es = np.asarray(es, dtype=complex)
    einc = np.asarray(einc, dtype=complex)
    m = gd.grid
    if init is None:
        chi, _ = bps(es, einc, gd, gs, lossy)
        init_name = "bps"
    else:
        chi = clamp_contrast(np.asarray(init).reshape(m, m), lossy)
        init_name = "given"
    trace = IterateTrace(
        kind,
        dict(lam=lam, iters=iters, init=init_name, lossy=lossy, stop_tol=stop_tol),
    )
    y_full = vec(es)
    k = 0
    try:
        etot = solve_total_field(chi, einc, gd, method=solve_method)
        for k in range(1, iters + 1):
            t0 = time.perf_counter()
            op = StackedOperator(etot, gs)
            if kind == "bim":
                x = tikhonov_solve(RegularizedLsProblem(op, y_full, lam, real=not lossy), cg_tol, cg_max_iter)
                chi = clamp_contrast(x.reshape(m, m), lossy)
            else:
                y = y_full - op.matvec(chi.ravel())
                dchi = tikhonov_solve(RegularizedLsProblem(op, y, lam, real=not lossy), cg_tol, cg_max_iter)
                chi = clamp_contrast(chi + dchi.reshape(m, m), lossy)
            etot = solve_total_field(chi, einc, gd, method=solve_method)
            res = data_residual(es, chi, etot, gs)
            trace.append(chi, res, 1e3 * (time.perf_counter() - t0))
            trace.etot = etot
            if stop_tol is not None and k > 1:
                prev = trace.entries[-2].data_residual
                if prev > 0 and abs(prev - res) / prev < stop_tol:
                    trace.stopped_early = True
                    break
    except NumericalError as exc:
        trace.aborted_at = k
        trace.error = str(exc)
        raise InversionAborted(trace, k, exc) from exc
    return trace


def bim(
    es,
    einc,
    gd: GreensVolume,
    gs: GreensSurface,
    lam: float = DEFAULT_LAMBDA,
    iters: int = 20,
    init=None,
    lossy: bool = False,
    stop_tol: float | None = None,
    solve_method: str = "auto",
    cg_tol: float = 1e-8,
    cg_max_iter: int = 500,
) -> IterateTrace:
    """Born iterative method.

    Each iteration solves the state equation for the current contrast, then
    re-estimates the whole contrast by Tikhonov-regularized least squares
    against the measured data with that total field frozen.  ``init=None``
    starts from the back-propagation estimate.  The residual recorded for
    iteration k is the exact data misfit of ``chi_k`` (its own forward solve).
    ``stop_tol`` enables an early stop on small relative residual change.
    """
    return _run("bim", es, einc, gd, gs, lam, iters, init, lossy, stop_tol, solve_method, cg_tol, cg_max_iter)


def vbim(
    es,
    einc,
    gd: GreensVolume,
    gs: GreensSurface,
    lam: float = DEFAULT_LAMBDA,
    iters: int = 20,
    init=None,
    lossy: bool = False,
    stop_tol: float | None = None,
    solve_method: str = "auto",
    cg_tol: float = 1e-8,
    cg_max_iter: int = 500,
) -> IterateTrace:
    """Variational Born iterative method.

    Same loop as :func:`bim`, but the regularized solve targets the contrast
    variation that explains the scattered-field residual
    ``E^s - G_S diag(chi_{k-1}) E^t_k``; the variation is added to the
    previous contrast and clamped.
    """
    return _run("vbim", es, einc, gd, gs, lam, iters, init, lossy, stop_tol, solve_method, cg_tol, cg_max_iter)


def bps_trace(es, einc, gd, gs, lossy: bool = False, solve_method: str = "auto") -> IterateTrace:
    """Run BPS as a one-entry trace; ``etot`` is the exact field of the estimate."""
    t0 = time.perf_counter()
    chi, _ = bps(es, einc, gd, gs, lossy)
    trace = IterateTrace("bps", dict(lossy=lossy))
    try:
        etot = solve_total_field(chi, einc, gd, method=solve_method)
    except NumericalError as exc:
        trace.aborted_at = 1
        trace.error = str(exc)
        raise InversionAborted(trace, 1, exc) from exc
    trace.append(chi, data_residual(es, chi, etot, gs), 1e3 * (time.perf_counter() - t0))
    trace.etot = etot
    return trace


def operator_norm_sq(op, iters: int = 50, seed: int = 0) -> float:
    """Largest eigenvalue of ``A^H A`` by power iteration (deterministic start)."""
    op = aslinearoperator(op)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(op.shape[1]) + 1j * rng.standard_normal(op.shape[1])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        w = op.rmatvec(op.matvec(v))
        est = float(np.linalg.norm(w))
        if est == 0:
            return 0.0
        v = w / est
    return est
