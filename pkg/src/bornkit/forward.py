"""Forward scattering: incident fields, state-equation solves, scattered fields, noise.

Field sets are plain complex arrays with one column per incidence:
``(M^2, N_i)`` for incident and total fields on the grid, ``(N_r, N_i)``
for scattered fields at the receivers.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse.linalg as spla

from .exceptions import ConvergenceError, NumericalError
from .greens import GreensSurface, GreensVolume, gd_apply
from .scene import SceneConfig, antenna_positions, cell_centers
from .special import hankel1

log = logging.getLogger(__name__)

DENSE_SOLVE_MAX_GRID = 32
_RESTARTS = 4


@dataclass(frozen=True)
class NoiseSpec:
    level: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.level < 0:
            raise ValueError("noise level must be nonnegative")


def as_contrast_vector(chi) -> np.ndarray:
    """Flatten an ``(M, M)`` map (or pass through an ``(M^2,)`` vector)."""
    chi = np.asarray(chi, dtype=complex)
    return chi.ravel()


def incident_fields(config: SceneConfig, grid: int, transmitters=None) -> np.ndarray:
    """Line-source incident fields ``(j/4) H0(k0 |r_n - r_p|)``, shape ``(M^2, N_i)``."""
    if transmitters is None:
        transmitters = antenna_positions(config.antenna_radius_m, config.n_tx)
    transmitters = np.asarray(transmitters, dtype=float)
    half = config.doi_side_m / 2
    if np.any((np.abs(transmitters[:, 0]) <= half) & (np.abs(transmitters[:, 1]) <= half)):
        raise ValueError("a transmitter lies inside the DOI")
    centers = cell_centers(config.doi_side_m, grid)
    dist = np.hypot(
        centers[:, 0, None] - transmitters[None, :, 0],
        centers[:, 1, None] - transmitters[None, :, 1],
    )
    return 0.25j * hankel1(0, config.wavenumber * dist)


def state_residual(chi, etot, einc, gd: GreensVolume) -> np.ndarray:
    """``E^i - (I - G_D diag(chi)) E^t`` evaluated with the FFT path."""
    chi = as_contrast_vector(chi)
    etot = np.asarray(etot)
    weight = chi if etot.ndim == 1 else chi[:, None]
    return einc - etot + gd_apply(gd, weight * etot)


def solve_total_field(
    chi,
    einc,
    gd: GreensVolume,
    method: str = "auto",
    tol: float = 1e-10,
    max_iter: int = 2000,
) -> np.ndarray:
    """Solve ``(I - G_D diag(chi)) E^t = E^i`` for every incidence.

    ``method`` is ``"dense_lu"`` (factorize once, reuse across columns),
    ``"iterative"`` (BiCGSTAB with FFT matvecs) or ``"auto"``, which picks
    the dense path for grids up to 32.

    Raises
    ------
    ConvergenceError
        BiCGSTAB did not reach ``tol`` within ``max_iter`` iterations.
    NumericalError
        The system is singular or the solution is not finite.
    """
    chi = as_contrast_vector(chi)
    einc = np.asarray(einc, dtype=complex)
    if chi.shape[0] != gd.size or einc.shape[0] != gd.size:
        raise ValueError(
            f"shape mismatch: chi {chi.shape}, einc {einc.shape}, grid {gd.grid}"
        )
    if not np.any(chi):
        return einc.copy()
    if method == "auto":
        method = "dense_lu" if gd.grid <= DENSE_SOLVE_MAX_GRID else "iterative"
    if method == "dense_lu":
        etot = _solve_dense(chi, einc, gd)
    elif method == "iterative":
        etot = _solve_iterative(chi, einc, gd, tol, max_iter)
    else:
        raise ValueError(f"unknown solve method {method!r}")
    if not np.all(np.isfinite(etot)):
        raise NumericalError("total-field solve produced non-finite values")
    return etot


def _solve_dense(chi, einc, gd):
    system = np.eye(gd.size, dtype=complex) - gd.dense * chi[None, :]
    try:
        with np.errstate(all="raise"):
            lu = scipy.linalg.lu_factor(system, check_finite=False)
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        raise NumericalError(f"state equation is singular: {exc}") from exc
    pivots = np.abs(np.diag(lu[0]))
    if pivots.min() <= np.finfo(float).eps * pivots.max() * gd.size:
        raise NumericalError("state equation is numerically singular (resonant contrast?)")
    return scipy.linalg.lu_solve(lu, einc, check_finite=False)


def _solve_iterative(chi, einc, gd, tol, max_iter):
    n = gd.size
    op = spla.LinearOperator(
        (n, n), matvec=lambda v: v - gd_apply(gd, chi * v.ravel()), dtype=complex
    )
    out = np.empty_like(einc)
    cols = einc if einc.ndim == 2 else einc[:, None]
    out2 = out if einc.ndim == 2 else out[:, None]
    for p in range(cols.shape[1]):
        b = cols[:, p]
        bnorm = np.linalg.norm(b)
        x = b.copy()
        # restart while the recursive residual converged but the true one did not
        for _ in range(_RESTARTS):
            x, info = spla.bicgstab(op, b, x0=x, rtol=tol, atol=0.0, maxiter=max_iter)
            res = np.linalg.norm(b - op.matvec(x)) / bnorm
            if res <= tol or info != 0:
                break
        if not res <= tol:
            raise ConvergenceError(f"BiCGSTAB did not converge for incidence {p}", res, max_iter)
        out2[:, p] = x
    return out


def scattered_field(chi, etot, gs: GreensSurface) -> np.ndarray:
    """``G_S diag(chi) E^t`` column by column."""
    chi = as_contrast_vector(chi)
    etot = np.asarray(etot)
    if etot.shape[0] != chi.shape[0] or gs.dense.shape[1] != chi.shape[0]:
        raise ValueError(f"shape mismatch: chi {chi.shape}, etot {etot.shape}, G_S {gs.dense.shape}")
    weight = chi if etot.ndim == 1 else chi[:, None]
    return gs.dense @ (weight * etot)


def add_noise(es, spec: NoiseSpec) -> np.ndarray:
    """Add circular complex Gaussian noise scaled so ``||N||_F / ||E^s||_F == level``."""
    es = np.asarray(es, dtype=complex)
    if spec.level == 0:
        return es.copy()
    signal = np.linalg.norm(es)
    if signal == 0:
        raise ValueError("cannot set a relative noise level on an all-zero field")
    rng = np.random.default_rng(spec.seed)
    noise = rng.standard_normal(es.shape) + 1j * rng.standard_normal(es.shape)
    noise *= spec.level * signal / np.linalg.norm(noise)
    return es + noise


def measured_noise_level(clean, noisy) -> float:
    clean = np.asarray(clean)
    return float(np.linalg.norm(np.asarray(noisy) - clean) / np.linalg.norm(clean))


def simulate(chi, config: SceneConfig, grid: int, method: str = "auto"):
    """Convenience wrapper: ``(einc, etot, es)`` for a contrast map on ``grid``."""
    from .greens import assemble_gd, assemble_gs

    gd = assemble_gd(config, grid)
    gs = assemble_gs(config, grid)
    einc = incident_fields(config, grid)
    etot = solve_total_field(chi, einc, gd, method=method)
    return einc, etot, scattered_field(chi, etot, gs)
