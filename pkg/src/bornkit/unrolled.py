"""Analytic data flow of the unrolled variational Born network, with pluggable refiners.

Each layer ``k`` performs::

    dEi   = E^i - (I - G_D diag(chi_{k-1})) E^t_{k-1}
    dEt   = field_refine(dEi (+) E^t_{k-1})
    E^t_k = E^t_{k-1} + dEt
    dEs   = E^s - G_S diag(chi_{k-1}) E^t_k
    y     = vec(dEs),  A = stacked G_S diag(E^t_k,p)
    dchi~ = gamma A^H y,  gamma = argmin_g ||y - g A A^H y||
    dchi  = contrast_refine(dchi~ (+) chi_{k-1})
    chi_k = clamp(chi_{k-1} + dchi)

Refiners see real channel tensors, the layout a convolutional network would
consume.  Fields ``(M^2, N_i)`` become ``(2 N_i, M, M)``: real parts of all
incidences first, then imaginary parts, each column reshaped row-major.
Contrast maps become ``(C, M, M)`` with ``C = 1`` (real part) for lossless
scenes and ``C = 2`` (real, imaginary) for lossy ones.  The concatenated
refiner inputs are therefore ``(4 N_i, M, M)`` and ``(2 C, M, M)``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import RefinerShapeError
from .forward import as_contrast_vector, scattered_field, state_residual
from .greens import GreensSurface, GreensVolume
from .inversion import (
    IterateTrace,
    RegularizedLsProblem,
    StackedOperator,
    bps,
    clamp_contrast,
    data_residual,
    stack_operator,
    tikhonov_solve,
    vec,
)

__all__ = [
    "IdentityRefiner",
    "LayerInputs",
    "LayerState",
    "PipelineConfig",
    "RecordingRefiner",
    "Refiner",
    "TabulatedRefiner",
    "incident_residual",
    "layer_step",
    "ls_dchi",
    "matched_filter_dchi",
    "pack_contrast",
    "pack_field",
    "predict_current",
    "predict_scattered",
    "run_pipeline",
    "scattered_residual",
    "stack_operator",
    "unpack_contrast",
    "unpack_field",
]


def pack_field(f, grid: int) -> np.ndarray:
    f = np.asarray(f)
    n_inc = f.shape[1]
    planes = f.T.reshape(n_inc, grid, grid)
    return np.concatenate([planes.real, planes.imag])


def unpack_field(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    n_inc = t.shape[0] // 2
    planes = t[:n_inc] + 1j * t[n_inc:]
    return planes.reshape(n_inc, -1).T


def pack_contrast(chi, channels: int) -> np.ndarray:
    chi = np.asarray(chi)
    if channels == 1:
        return chi.real[None].astype(float)
    return np.stack([chi.real, chi.imag]).astype(float)


def unpack_contrast(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if t.shape[0] == 1:
        return t[0].astype(complex)
    return t[0] + 1j * t[1]


class Refiner:
    """Base refiner: two pure mappings on channel tensors.

    Subclasses override :meth:`field_refine` (``(4 N_i, M, M) -> (2 N_i, M, M)``)
    and :meth:`contrast_refine` (``(2 C, M, M) -> (C, M, M)``).  ``layer`` is
    the 1-based layer index, so per-layer parameters can be selected.
    """

    name = "base"

    def field_refine(self, layer: int, inputs: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def contrast_refine(self, layer: int, inputs: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class IdentityRefiner(Refiner):
    """Passes the analytic estimates through unchanged.

    The field update becomes one stationary fixed-point step (``dEt = dEi``)
    and the contrast update is the matched-filter estimate itself.
    """

    name = "identity"

    def field_refine(self, layer, inputs):
        return inputs[: inputs.shape[0] // 2].copy()

    def contrast_refine(self, layer, inputs):
        return inputs[: inputs.shape[0] // 2].copy()


class RecordingRefiner(Refiner):
    """Wraps another refiner and records every input/output pair."""

    name = "recording"

    def __init__(self, inner: Refiner):
        self.inner = inner
        self.table: dict[str, np.ndarray] = {}

    def field_refine(self, layer, inputs):
        out = self.inner.field_refine(layer, inputs)
        self.table[f"field/{layer}/in"] = np.array(inputs)
        self.table[f"field/{layer}/out"] = np.array(out)
        return out

    def contrast_refine(self, layer, inputs):
        out = self.inner.contrast_refine(layer, inputs)
        self.table[f"contrast/{layer}/in"] = np.array(inputs)
        self.table[f"contrast/{layer}/out"] = np.array(out)
        return out

    def save(self, path) -> None:
        np.savez(path, **self.table)


class TabulatedRefiner(Refiner):
    """Replays input/output pairs stored by :class:`RecordingRefiner`.

    Each lookup checks that the incoming tensor matches the stored input
    (``rtol``/``atol``), so a replay also serves as a regression test.
    """

    name = "tabulated"

    def __init__(self, table: dict, rtol: float = 1e-9, atol: float = 1e-12):
        self.table = dict(table)
        self.rtol = rtol
        self.atol = atol

    @classmethod
    def load(cls, path, **kwargs) -> TabulatedRefiner:
        with np.load(path) as data:
            return cls({k: data[k] for k in data.files}, **kwargs)

    def _lookup(self, kind, layer, inputs):
        key = f"{kind}/{layer}"
        if f"{key}/in" not in self.table:
            raise KeyError(f"tabulated refiner has no entry for {kind}_refine at layer {layer}")
        stored = self.table[f"{key}/in"]
        if stored.shape != inputs.shape or not np.allclose(inputs, stored, rtol=self.rtol, atol=self.atol):
            raise ValueError(f"{kind}_refine input at layer {layer} does not match the tabulated one")
        return self.table[f"{key}/out"].copy()

    def field_refine(self, layer, inputs):
        return self._lookup("field", layer, inputs)

    def contrast_refine(self, layer, inputs):
        return self._lookup("contrast", layer, inputs)


@dataclass
class PipelineConfig:
    n_layers: int = 7
    refiner: Refiner = field(default_factory=IdentityRefiner)
    clamp: bool = True
    lossy: bool = False

    def __post_init__(self):
        if self.n_layers < 1:
            raise ValueError("n_layers must be at least 1")


@dataclass(frozen=True)
class LayerInputs:
    einc: np.ndarray
    es_meas: np.ndarray
    gd: GreensVolume
    gs: GreensSurface


@dataclass
class LayerState:
    k: int
    chi: np.ndarray  # (M, M)
    etot: np.ndarray  # (M^2, N_i)
    einc_residual: np.ndarray | None = None
    es_residual: np.ndarray | None = None
    approx_dchi: np.ndarray | None = None  # (M, M)
    gamma: complex = 0j
    data_residual: float = float("nan")


def incident_residual(chi, etot, einc, gd: GreensVolume) -> np.ndarray:
    """``E^i - (I - G_D diag(chi)) E^t``; zero when ``E^t`` solves the state equation."""
    return state_residual(chi, etot, einc, gd)


def scattered_residual(es_meas, chi, etot, gs: GreensSurface) -> np.ndarray:
    """``E^s - G_S diag(chi) E^t``."""
    return np.asarray(es_meas) - scattered_field(chi, etot, gs)


def matched_filter_dchi(op, y):
    """Matched-filter contrast variation ``(gamma A^H y, gamma)``.

    ``gamma`` is the complex scalar minimizing ``||y - gamma A A^H y||``.
    ``A^H y`` is computed once and reused.  Returns zeros when ``y`` or
    ``A A^H y`` vanishes.
    """
    y = np.asarray(y)
    back = op.rmatvec(y)
    if not np.any(y):
        return np.zeros_like(back), 0j
    w = op.matvec(back)
    ww = np.vdot(w, w).real
    if ww == 0:
        return np.zeros_like(back), 0j
    gamma = complex(np.vdot(w, y) / ww)
    return gamma * back, gamma


def ls_dchi(op, y, lam: float = 0.0, tol: float = 1e-8, max_iter: int = 500) -> np.ndarray:
    """Regularized least-squares contrast variation via CG on the normal equations."""
    return tikhonov_solve(RegularizedLsProblem(op, np.asarray(y), lam), tol, max_iter)


def _checked(out, shape, mapping):
    out = np.asarray(out)
    if out.shape != shape:
        raise RefinerShapeError(f"{mapping} returned shape {out.shape}, expected {shape}")
    if not np.all(np.isfinite(out)):
        raise RefinerShapeError(f"{mapping} returned non-finite values")
    return out


def layer_step(
    state: LayerState,
    inputs: LayerInputs,
    refiner: Refiner,
    clamp: bool = True,
    lossy: bool = False,
) -> LayerState:
    """Advance one layer; the returned state records every intermediate."""
    m = inputs.gd.grid
    k = state.k + 1
    chi_prev = np.asarray(state.chi).reshape(m, m)
    etot_prev = state.etot
    n_inc = etot_prev.shape[1]
    channels = 2 if lossy else 1

    d_einc = incident_residual(chi_prev, etot_prev, inputs.einc, inputs.gd)
    field_in = np.concatenate([pack_field(d_einc, m), pack_field(etot_prev, m)])
    d_etot = _checked(refiner.field_refine(k, field_in), (2 * n_inc, m, m), "field_refine")
    etot = etot_prev + unpack_field(d_etot)

    d_es = scattered_residual(inputs.es_meas, chi_prev, etot, inputs.gs)
    op = StackedOperator(etot, inputs.gs)
    approx, gamma = matched_filter_dchi(op, vec(d_es))
    approx = approx.reshape(m, m)

    contrast_in = np.concatenate([pack_contrast(approx, channels), pack_contrast(chi_prev, channels)])
    d_chi = _checked(refiner.contrast_refine(k, contrast_in), (channels, m, m), "contrast_refine")
    chi = chi_prev + unpack_contrast(d_chi)
    if clamp:
        chi = clamp_contrast(chi, lossy)

    return LayerState(
        k=k,
        chi=chi,
        etot=etot,
        einc_residual=d_einc,
        es_residual=d_es,
        approx_dchi=approx,
        gamma=gamma,
        data_residual=data_residual(inputs.es_meas, chi, etot, inputs.gs),
    )


def run_pipeline(
    config: PipelineConfig,
    es_meas,
    einc,
    gd: GreensVolume,
    gs: GreensSurface,
    chi0=None,
) -> IterateTrace:
    """Run ``config.n_layers`` layer steps from ``chi0`` (BPS when omitted) and ``E^t = E^i``.

    ``trace.states`` holds the initial state followed by one state per layer;
    ``trace.etot`` is the last layer's total-field estimate.
    """
    es_meas = np.asarray(es_meas, dtype=complex)
    einc = np.asarray(einc, dtype=complex)
    m = gd.grid
    if chi0 is None:
        chi0, _ = bps(es_meas, einc, gd, gs, config.lossy)
        init_name = "bps"
    else:
        init_name = "given"
    chi0 = np.asarray(chi0, dtype=complex).reshape(m, m)
    inputs = LayerInputs(einc, es_meas, gd, gs)
    state = LayerState(k=0, chi=chi0, etot=einc.copy())
    state = replace(state, data_residual=data_residual(es_meas, chi0, einc, gs))
    trace = IterateTrace(
        "unrolled",
        dict(
            layers=config.n_layers,
            refiner=config.refiner.name,
            clamp=config.clamp,
            lossy=config.lossy,
            init=init_name,
        ),
    )
    trace.states = [state]
    for _ in range(config.n_layers):
        t0 = time.perf_counter()
        state = layer_step(state, inputs, config.refiner, config.clamp, config.lossy)
        trace.append(state.chi, state.data_residual, 1e3 * (time.perf_counter() - t0))
        trace.states.append(state)
    trace.etot = state.etot
    return trace


def predict_scattered(chi, etot, gs: GreensSurface) -> np.ndarray:
    """Predicted measurements ``G_S diag(chi) E^t`` of a reconstruction."""
    return scattered_field(chi, etot, gs)


def predict_current(chi, etot) -> np.ndarray:
    """Predicted contrast source ``diag(chi) E^t_p`` for every incidence."""
    return as_contrast_vector(chi)[:, None] * np.asarray(etot)
