"""Acceptance suite: one check per criterion, each printed as a PASS/FAIL line.

Run under pytest (lines appear in the terminal summary) or directly with
``python tests/test_acceptance.py``.  Tolerances are pinned constants below;
nothing here is tuned to make a criterion pass.
"""

import csv
import time
from pathlib import Path

import numpy as np
import pytest

from bornkit import io as dumps
from bornkit.cli import main
from bornkit.forward import (
    NoiseSpec,
    add_noise,
    incident_fields,
    measured_noise_level,
    scattered_field,
    solve_total_field,
)
from bornkit.greens import assemble_gd, assemble_gs, gd_apply
from bornkit.harness import EVAL_COLUMNS, read_manifest
from bornkit.inversion import bim, bps, bps_gamma, stack_operator, vbim
from bornkit.metrics import LossParams, layer_weights, nmse, snr_weight, ssim, total_loss, tv_seminorm
from bornkit.scene import SceneConfig, disk, rasterize
from bornkit.unrolled import (
    IdentityRefiner,
    LayerInputs,
    LayerState,
    PipelineConfig,
    layer_step,
    ls_dchi,
    matched_filter_dchi,
    run_pipeline,
)

# pinned tolerances
ZERO_SCATTER_TOL = 1e-12
TOEPLITZ_TOL = 1e-10
BORN_TOL = 0.05
BORN_RATIO = (0.35, 0.65)
PERTURB = (1.01, 0.99, np.exp(0.01j), np.exp(-0.01j))
LS_TOL = 1e-6
VBIM_MIN_WINS = 4
FIXED_POINT_TOL = 1e-8
DESCENT_SLACK = 1e-6
WEIGHTS_C08 = [0.262144, 0.32768, 0.4096, 0.512, 0.64, 0.8, 1.0]
NOISE_TOL = 1e-12
SSIM_TOL = 1e-12
TV_TOL = 1e-12

CFG = SceneConfig()  # 0.2 m DOI, 3 GHz, 16 Tx / 32 Rx, forward 100 / inversion 64
RESULTS = {}


def crand(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def _ops(config, grid):
    return assemble_gd(config, grid), assemble_gs(config, grid), incident_fields(config, grid)


def _weak_disk_data(contrast, noise=0.0, seed=0, radius=0.03):
    """Data from the 100-grid, operators on the 64-grid (no inverse crime)."""
    chi_fwd = rasterize([disk((0.0, 0.0), radius, contrast)], CFG, CFG.forward_grid)
    gd_f, gs_f, einc_f = _ops(CFG, CFG.forward_grid)
    es = scattered_field(chi_fwd, solve_total_field(chi_fwd, einc_f, gd_f), gs_f)
    if noise:
        es = add_noise(es, NoiseSpec(noise, seed))
    gd, gs, einc = _ops(CFG, CFG.inversion_grid)
    truth = rasterize([disk((0.0, 0.0), radius, contrast)], CFG, CFG.inversion_grid)
    return dict(es=es, gd=gd, gs=gs, einc=einc, truth=truth)


def criterion_1():
    worst = 0.0
    for grid in (32, 64, 100):
        gd, gs, einc = _ops(CFG, grid)
        chi = np.zeros((grid, grid))
        es = scattered_field(chi, solve_total_field(chi, einc, gd), gs)
        worst = max(worst, np.linalg.norm(es) / np.linalg.norm(einc))
    return worst <= ZERO_SCATTER_TOL, f"max ||E^s||/||E^i|| = {worst:.3e} (tol {ZERO_SCATTER_TOL:g})"


def criterion_2():
    gd = assemble_gd(CFG, 32)
    dense = gd.dense
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        v = crand(rng, 32 * 32)
        ref = dense @ v
        worst = max(worst, np.linalg.norm(gd_apply(gd, v) - ref) / np.linalg.norm(ref))
    return worst <= TOEPLITZ_TOL, f"max rel error {worst:.3e} over 100 vectors (tol {TOEPLITZ_TOL:g})"


def criterion_3():
    gd, gs, einc = _ops(CFG, CFG.inversion_grid)
    errors = []
    for contrast in (0.005, 0.0025):
        chi = rasterize([disk((0.0, 0.0), 0.02, contrast)], CFG, CFG.inversion_grid)
        full = scattered_field(chi, solve_total_field(chi, einc, gd), gs)
        born = scattered_field(chi, einc, gs)
        errors.append(np.linalg.norm(full - born) / np.linalg.norm(full))
    ratio = errors[1] / errors[0]
    ok = errors[0] <= BORN_TOL and BORN_RATIO[0] <= ratio <= BORN_RATIO[1]
    return ok, f"Born error {errors[0]:.4f} (tol {BORN_TOL}), halving ratio {ratio:.4f} (band {BORN_RATIO})"


def criterion_4():
    cfg = SceneConfig(forward_grid=12, inversion_grid=8)
    gs, einc = assemble_gs(cfg, 8), incident_fields(cfg, 8)
    rng = np.random.default_rng(4)
    failures = 0
    for _ in range(50):
        etot = einc * (1 + 0.3 * crand(rng, *einc.shape))
        op = stack_operator(etot, gs)
        y = crand(rng, op.shape[0])
        w = op.matvec(op.rmatvec(y))
        _, g = matched_filter_dchi(op, y)
        base = np.linalg.norm(y - g * w)
        failures += sum(not np.linalg.norm(y - g * f * w) > base for f in PERTURB)
    return failures == 0, f"{failures} non-increasing perturbations out of {50 * len(PERTURB)}"


def criterion_5():
    cfg = SceneConfig(forward_grid=12, inversion_grid=8, n_tx=16, n_rx=32)
    gd, gs, einc = _ops(cfg, 8)
    rng = np.random.default_rng(5)
    chi = np.full((8, 8), 0.2)
    etot = solve_total_field(chi, einc, gd)
    op = stack_operator(etot, gs)
    planted = 1e-2 * crand(rng, 64)
    got = ls_dchi(op, op.matvec(planted), lam=0.0, tol=1e-12, max_iter=5000)
    err = np.linalg.norm(got - planted) / np.linalg.norm(planted)
    return err <= LS_TOL, f"relative recovery error {err:.3e} (tol {LS_TOL:g})"


def criterion_6():
    wins, lines = 0, []
    for seed in range(5):
        d = _weak_disk_data(0.5, noise=0.10, seed=seed)
        kw = dict(iters=10, stop_tol=None)
        rb = bim(d["es"], d["einc"], d["gd"], d["gs"], **kw).residuals[-1]
        rv = vbim(d["es"], d["einc"], d["gd"], d["gs"], **kw).residuals[-1]
        wins += rv <= rb
        lines.append(f"s{seed}: bim {rb:.4f} vbim {rv:.4f}")
    return wins >= VBIM_MIN_WINS, f"VBIM <= BIM in {wins}/5 seeds ({'; '.join(lines)})"


def criterion_7():
    cfg = SceneConfig(forward_grid=24, inversion_grid=16)
    gd, gs, einc = _ops(cfg, 16)
    chi = rasterize([disk((0.0, 0.0), 0.03, 0.6)], cfg, 16)
    etot = solve_total_field(chi, einc, gd)
    es = scattered_field(chi, etot, gs)
    out = layer_step(LayerState(0, chi, etot), LayerInputs(einc, es, gd, gs), IdentityRefiner())
    rel = np.linalg.norm(out.chi - chi) / np.linalg.norm(chi)
    return rel <= FIXED_POINT_TOL, f"relative contrast change {rel:.3e} (tol {FIXED_POINT_TOL:g})"


def criterion_8():
    d = _weak_disk_data(0.3)
    tr = run_pipeline(PipelineConfig(n_layers=7), d["es"], d["einc"], d["gd"], d["gs"])
    r = [s.data_residual for s in tr.states]
    rises = [b - a for a, b in zip(r, r[1:])]
    ok = max(rises) <= DESCENT_SLACK
    return ok, "residuals " + ", ".join(f"{v:.5f}" for v in r) + f" (max rise {max(rises):.2e})"


def criterion_9():
    rng = np.random.default_rng(9)
    per_layer = rng.uniform(0, 1, 7)
    c0 = total_loss(per_layer, LossParams(c=0.0, K=7)) == per_layer[-1]
    w = layer_weights(LossParams(c=0.8, K=7))
    weights_ok = np.allclose(w, WEIGHTS_C08, rtol=1e-12, atol=0)
    snr = snr_weight(0.2, LossParams(gamma_loss=0.04))
    ok = c0 and weights_ok and snr == 1.0
    return ok, f"c=0 exact: {c0}; weights {np.round(w, 6).tolist()}; SNR weight at 0.2 = {snr!r}"


def criterion_10():
    rng = np.random.default_rng(10)
    es = crand(rng, 32, 16)
    worst = 0.0
    for level in (0.05, 0.10, 0.20, 0.30, 0.35):
        for seed in range(5):
            got = measured_noise_level(es, add_noise(es, NoiseSpec(level, seed)))
            worst = max(worst, abs(got - level))
    return worst <= NOISE_TOL, f"max |measured - requested| = {worst:.2e} (tol {NOISE_TOL:g})"


def criterion_11():
    rng = np.random.default_rng(11)
    chi = rng.uniform(0, 1, (32, 32))
    checks = {
        "nmse(x,x)=0": nmse(chi, chi) == 0,
        "nmse(0,x)=1": nmse(np.zeros_like(chi), chi) == 1,
        "ssim(x,x)=1": abs(ssim(chi, chi) - 1) <= SSIM_TOL,
        "TV(const)=0": tv_seminorm(np.full((32, 32), 0.7)) == 0,
    }
    a = 3.7
    tv = tv_seminorm(chi)
    checks["TV homogeneity"] = abs(tv_seminorm(a * chi) - a * tv) <= TV_TOL * a * tv
    failed = [k for k, v in checks.items() if not v]
    return not failed, "all metric identities hold" if not failed else f"failed: {failed}"


def criterion_12():
    d = _weak_disk_data(0.3)
    chi, _ = bps(d["es"], d["einc"], d["gd"], d["gs"])
    err = nmse(chi, d["truth"])
    gs = d["gs"]
    bad = 0
    for p in range(d["es"].shape[1]):
        es_p = d["es"][:, p]
        back = gs.dense.conj().T @ es_p
        g = bps_gamma(es_p, gs)
        base = np.linalg.norm(es_p - gs.dense @ (g * back))
        bad += any(not np.linalg.norm(es_p - gs.dense @ (g * f * back)) > base for f in PERTURB)
    return err < 1 and bad == 0, f"BPS NMSE {err:.4f} (< 1); gamma_p optimality failures {bad}/16"


def _valid_outputs(sim, inv, csv_path):
    for f in ("es.cfld", "es_clean.cfld", "einc.cfld"):
        assert np.all(np.isfinite(dumps.read_field(sim / f)))
    assert dumps.read_contrast(sim / "chi_inv.cmap").shape == (64, 64)
    assert dumps.read_contrast(inv / "chi.cmap").shape == (64, 64)
    assert dumps.read_pgm(inv / "chi.pgm").shape == (64, 64)
    assert dumps.read_pgm(sim / "chi_fwd.pgm").shape == (100, 100)
    with open(csv_path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == EVAL_COLUMNS and len(rows) == 2
    return dict(zip(rows[0], rows[1]))


def _same_tree(a: Path, b: Path):
    names = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file() and p.name != "manifest.json")
    assert names == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file() and p.name != "manifest.json")
    return [str(n) for n in names if (a / n).read_bytes() != (b / n).read_bytes()]


def criterion_13(tmp: Path):
    sim, inv, csv_path = tmp / "sim", tmp / "inv", tmp / "metrics.csv"
    codes = [
        main(["simulate", "--profile", "austria", "--contrast", "1.0", "--noise", "0.10", "--seed", "0",
              "--grid", "100", "--inv-grid", "64", "--out", str(sim)]),
        main(["invert", "--sim", str(sim), "--method", "vbim", "--out", str(inv)]),
        main(["eval", "--run", str(inv), "--csv", str(csv_path)]),
    ]
    if codes != [0, 0, 0]:
        return False, f"exit codes {codes}"
    row = _valid_outputs(sim, inv, csv_path)
    sim2, inv2 = tmp / "sim_replay", tmp / "inv_replay"
    codes = [main(["replay", str(sim / "manifest.json"), "--out", str(sim2)]),
             main(["replay", str(inv / "manifest.json"), "--out", str(inv2)])]
    if codes != [0, 0]:
        return False, f"replay exit codes {codes}"
    differ = _same_tree(sim, sim2) + _same_tree(inv, inv2)
    steps = read_manifest(inv)["iterations"]
    return not differ, (f"nmse {float(row['nmse']):.4f} ssim {float(row['ssim']):.4f} after {steps} steps; "
                        f"replay differs in {differ or 'no files'}")


CRITERIA = {
    1: ("zero-scatterer forward", criterion_1),
    2: ("Toeplitz-FFT vs dense G_D", criterion_2),
    3: ("Born-regime consistency", criterion_3),
    4: ("matched-filter optimality", criterion_4),
    5: ("LS exact recovery", criterion_5),
    6: ("VBIM vs BIM", criterion_6),
    7: ("fixed-point property", criterion_7),
    8: ("unrolled descent", criterion_8),
    9: ("loss machinery", criterion_9),
    10: ("noise exactness", criterion_10),
    11: ("metric unit suite", criterion_11),
    12: ("BPS sanity", criterion_12),
    13: ("end-to-end reproducibility", criterion_13),
}


def run_criterion(number, tmp=None):
    name, fn = CRITERIA[number]
    t0 = time.perf_counter()
    try:
        ok, detail = fn(tmp) if number == 13 else fn()
    except Exception as exc:  # a crash is a FAIL, reported rather than hidden
        ok, detail = False, f"{type(exc).__name__}: {exc}"
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d} [{name}] {detail} ({time.perf_counter() - t0:.1f} s)"
    return ok, line


@pytest.fixture(scope="module", autouse=True)
def report(request):
    yield
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")
    lines = [RESULTS[k] for k in sorted(RESULTS)]
    if reporter is not None:
        reporter.write_sep("=", "acceptance criteria")
        for line in lines:
            reporter.write_line(line)
    else:
        print("\n".join(lines))


@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number, tmp_path):
    ok, line = run_criterion(number, tmp_path)
    RESULTS[number] = line
    print(line)
    assert ok, line


if __name__ == "__main__":
    import tempfile

    with tempfile.TemporaryDirectory() as tmp:
        outcome = [run_criterion(n, Path(tmp)) for n in sorted(CRITERIA)]
    for _, line in outcome:
        print(line)
    raise SystemExit(0 if all(ok for ok, _ in outcome) else 1)
