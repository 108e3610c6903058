"""Discrete 2-D TM Green's operators for square cells approximated by equal-area disks.

``GreensVolume`` maps contrast sources in the DOI back onto the DOI; it is a
two-level Toeplitz matrix, applied either densely or by circulant embedding
and FFT.  ``GreensSurface`` maps contrast sources to the receiver ring.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.fft

from .scene import SceneConfig, antenna_positions, cell_centers
from .special import bessel_j, hankel1

DENSE_MAX_GRID = 64


def _cell_geometry(config: SceneConfig, grid: int):
    h = config.doi_side_m / grid
    area = h * h
    return h, area, math.sqrt(area / math.pi)


@dataclass(eq=False)
class GreensVolume:
    grid: int
    cell_size_m: float
    cell_area_m2: float
    equiv_radius_m: float
    wavenumber: float
    kernel: np.ndarray  # (2M-1, 2M-1), entry [dr+M-1, dc+M-1]; zero at the center
    diagonal: complex
    kernel_fft: np.ndarray = field(repr=False)
    _dense: np.ndarray | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.grid * self.grid

    @property
    def has_dense(self) -> bool:
        return self.grid <= DENSE_MAX_GRID

    @property
    def dense(self) -> np.ndarray:
        """Dense ``M^2 x M^2`` matrix, built on first access (``M <= 64`` only)."""
        if not self.has_dense:
            raise ValueError(f"dense G_D is not available for grid {self.grid} > {DENSE_MAX_GRID}")
        if self._dense is None:
            m = self.grid
            idx = np.arange(m * m)
            rows, cols = idx // m, idx % m
            dr = rows[:, None] - rows[None, :] + m - 1
            dc = cols[:, None] - cols[None, :] + m - 1
            mat = self.kernel[dr, dc]
            mat[idx, idx] = self.diagonal
            self._dense = mat
        return self._dense


@dataclass(eq=False)
class GreensSurface:
    grid: int
    receiver_positions: np.ndarray
    dense: np.ndarray  # (N_r, M^2)

    @property
    def n_rx(self) -> int:
        return self.dense.shape[0]


def assemble_gd(config: SceneConfig, grid: int) -> GreensVolume:
    """Assemble the DOI-to-DOI operator for an ``grid x grid`` discretization.

    Off-diagonal entries are ``(j k0 pi a / 2) J1(k0 a) H0(k0 |r_n - r_n'|)``
    and the self term is ``(j k0 pi a / 2) H1(k0 a) - 1``.
    """
    if grid < 2:
        raise ValueError("grid must be at least 2")
    k0 = config.wavenumber
    h, area, a = _cell_geometry(config, grid)
    coef = 1j * k0 * math.pi * a / 2.0
    offs = np.arange(-(grid - 1), grid)
    dist = h * np.hypot(offs[:, None], offs[None, :])
    dist[grid - 1, grid - 1] = 1.0  # placeholder, zeroed below
    kernel = coef * bessel_j(1, k0 * a) * hankel1(0, k0 * dist)
    kernel[grid - 1, grid - 1] = 0.0
    diagonal = complex(coef * hankel1(1, k0 * a) - 1.0)

    circ = np.zeros((2 * grid, 2 * grid), dtype=complex)
    circ[np.ix_(offs % (2 * grid), offs % (2 * grid))] = kernel
    return GreensVolume(
        grid=grid,
        cell_size_m=h,
        cell_area_m2=area,
        equiv_radius_m=a,
        wavenumber=k0,
        kernel=kernel,
        diagonal=diagonal,
        kernel_fft=scipy.fft.fft2(circ),
    )


def assemble_gs(config: SceneConfig, grid: int, receivers: np.ndarray | None = None) -> GreensSurface:
    """Assemble the DOI-to-receiver operator.

    Receivers default to ``config.n_rx`` points on the antenna circle.

    Raises
    ------
    ValueError
        If a receiver lies inside or on the boundary of the DOI.
    """
    if receivers is None:
        receivers = antenna_positions(config.antenna_radius_m, config.n_rx)
    receivers = np.asarray(receivers, dtype=float)
    half = config.doi_side_m / 2
    inside = (np.abs(receivers[:, 0]) <= half) & (np.abs(receivers[:, 1]) <= half)
    if np.any(inside):
        raise ValueError(f"receivers {np.flatnonzero(inside).tolist()} lie inside the DOI")
    k0 = config.wavenumber
    _, _, a = _cell_geometry(config, grid)
    centers = cell_centers(config.doi_side_m, grid)
    dist = np.hypot(
        receivers[:, 0, None] - centers[None, :, 0],
        receivers[:, 1, None] - centers[None, :, 1],
    )
    coef = 1j * k0 * math.pi * a / 2.0
    dense = coef * bessel_j(1, k0 * a) * hankel1(0, k0 * dist)
    return GreensSurface(grid=grid, receiver_positions=receivers, dense=dense)


def _check_len(v, n, what):
    if v.shape[0] != n:
        raise ValueError(f"{what}: expected leading dimension {n}, got shape {v.shape}")


def gd_apply(op: GreensVolume, v, path: str = "fft") -> np.ndarray:
    """Return ``G_D @ v`` for a vector ``(M^2,)`` or a batch ``(M^2, k)``.

    ``path="fft"`` embeds the Toeplitz stencil in a ``2M x 2M`` circulant;
    ``path="dense"`` multiplies by the assembled matrix.
    """
    v = np.asarray(v)
    _check_len(v, op.size, "gd_apply")
    if path == "dense":
        return op.dense @ v
    if path != "fft":
        raise ValueError(f"unknown path {path!r}")
    m = op.grid
    cube = v.reshape((m, m) + v.shape[1:])
    spec = scipy.fft.fft2(cube, s=(2 * m, 2 * m), axes=(0, 1))
    kfft = op.kernel_fft.reshape(op.kernel_fft.shape + (1,) * (v.ndim - 1))
    conv = scipy.fft.ifft2(spec * kfft, axes=(0, 1))[:m, :m]
    return conv.reshape(v.shape) + op.diagonal * v


def gs_apply(op: GreensSurface, v) -> np.ndarray:
    v = np.asarray(v)
    _check_len(v, op.dense.shape[1], "gs_apply")
    return op.dense @ v


def gs_adjoint_apply(op: GreensSurface, w) -> np.ndarray:
    w = np.asarray(w)
    _check_len(w, op.dense.shape[0], "gs_adjoint_apply")
    return op.dense.conj().T @ w
