"""``bornkit`` command line: simulate, invert, eval, sweep, replay.

Exit codes: 0 success, 1 usage or input error, 2 numerical failure.
"""

from __future__ import annotations

import logging
import sys
import uuid
import warnings
from pathlib import Path

import click

from . import harness
from .exceptions import NumericalError
from .inversion import DEFAULT_LAMBDA

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2


def _out_dir(out, command):
    return Path(out) if out else harness.default_output_dir(command, uuid.uuid4().hex)


def _floats(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise click.BadParameter(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise click.BadParameter(f"expected comma-separated integers, got {text!r}") from exc


def scene_options(fn):
    opts = [
        click.option("--scene", type=click.Path(exists=True, dir_okay=False), help="Scene JSON file."),
        click.option("--profile", type=click.Choice(harness.PROFILES), default="austria", show_default=True,
                     help="Built-in scene when --scene is not given."),
        click.option("--contrast", type=float, default=1.0, show_default=True, help="Profile contrast."),
        click.option("--grid", type=int, default=100, show_default=True, help="Forward grid cells per side."),
        click.option("--inv-grid", type=int, default=64, show_default=True, help="Inversion grid cells per side."),
        click.option("--freq-ghz", type=float, default=3.0, show_default=True),
        click.option("--ni", type=int, default=16, show_default=True, help="Number of transmitters."),
        click.option("--nr", type=int, default=32, show_default=True, help="Number of receivers."),
        click.option("--ring-m", type=float, default=1.67, show_default=True, help="Antenna ring radius."),
        click.option("--doi-m", type=float, default=0.2, show_default=True, help="DOI side length."),
        click.option("--lossy", is_flag=True, help="Complex contrast with a nonnegative imaginary part."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _config(grid, inv_grid, freq_ghz, ni, nr, ring_m, doi_m, lossy):
    return dict(doi_side_m=doi_m, antenna_radius_m=ring_m, freq_hz=freq_ghz * 1e9, n_tx=ni, n_rx=nr,
                forward_grid=grid, inversion_grid=inv_grid, lossy=lossy)


def invert_options(fn):
    opts = [
        click.option("--iters", type=int, default=20, show_default=True),
        click.option("--lambda", "lam", type=float, default=DEFAULT_LAMBDA, show_default=True,
                     help="Tikhonov weight."),
        click.option("--lambda-mode", type=click.Choice(["absolute", "relative"]), default="absolute",
                     show_default=True, help="'relative' scales lambda by the largest eigenvalue of A^H A."),
        click.option("--layers", type=int, default=7, show_default=True, help="Unrolled layers K."),
        click.option("--refiner", type=click.Choice(["identity", "tabulated"]), default="identity",
                     show_default=True),
        click.option("--refiner-file", type=click.Path(exists=True, dir_okay=False),
                     help="Lookup table (.npz) for --refiner tabulated."),
        click.option("--record-refiner", help="Save refiner inputs/outputs to this .npz in the output dir."),
        click.option("--init", type=click.Choice(["bps", "zero"]), default="bps", show_default=True),
        click.option("--stop-tol", type=float, default=1e-4, show_default=True,
                     help="Stop when the relative residual change drops below this (0 disables)."),
        click.option("--no-clamp", is_flag=True, help="Skip the nonnegativity clamp in unrolled layers."),
        click.option("--solve-method", type=click.Choice(["auto", "dense_lu", "iterative"]), default="auto",
                     show_default=True),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _invert_args(iters, lam, lambda_mode, layers, refiner, refiner_file, record_refiner, init, stop_tol,
                 no_clamp, solve_method):
    return dict(iters=iters, lam=lam, lambda_mode=lambda_mode, layers=layers, refiner=refiner,
                refiner_file=refiner_file, record_refiner=record_refiner, init=init,
                stop_tol=stop_tol if stop_tol and stop_tol > 0 else None, clamp=not no_clamp,
                solve_method=solve_method)


@click.group()
@click.option("-v", "--verbose", count=True, help="More logging (repeatable).")
def cli(verbose):
    """Microwave inverse-scattering experiments on a 2-D TM imaging setup."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@cli.command()
@scene_options
@click.option("--noise", type=float, default=0.0, show_default=True, help="Relative noise level ||N||/||E^s||.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--solve-method", type=click.Choice(["auto", "dense_lu", "iterative"]), default="auto",
              show_default=True)
@click.option("--out", type=click.Path(file_okay=False), help="Output directory.")
def simulate(scene, profile, contrast, grid, inv_grid, freq_ghz, ni, nr, ring_m, doi_m, lossy, noise, seed,
             solve_method, out):
    """Simulate measurements for a scene."""
    out = _out_dir(out, "simulate")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", harness.InverseCrimeWarning)
        man = harness.simulate(
            out, config=_config(grid, inv_grid, freq_ghz, ni, nr, ring_m, doi_m, lossy), scene=scene,
            profile=profile, contrast=contrast, noise=noise, seed=seed, solve_method=solve_method,
        )
    for w in caught:
        click.echo(f"warning: {w.message}", err=True)
    click.echo(f"simulate {man['run_id']} -> {out}")


@cli.command()
@click.option("--sim", "sim_dir", required=True, type=click.Path(exists=True, file_okay=False),
              help="Output directory of a simulate run.")
@click.option("--method", type=click.Choice(harness.METHODS), default="vbim", show_default=True)
@invert_options
@click.option("--out", type=click.Path(file_okay=False), help="Output directory.")
def invert(sim_dir, method, out, **kwargs):
    """Reconstruct the contrast from simulated measurements."""
    out = _out_dir(out, "invert")
    man = harness.invert(sim_dir, out, method=method, **_invert_args(**kwargs))
    click.echo(f"invert {man['run_id']} ({method}, {man['iterations']} steps, "
               f"residual {man['final_residual']:.4g}) -> {out}")


@cli.command("eval")
@click.option("--run", "run_dir", type=click.Path(exists=True, file_okay=False),
              help="Output directory of an invert run.")
@click.option("--pred", type=click.Path(exists=True, dir_okay=False), help="Predicted contrast dump.")
@click.option("--truth", type=click.Path(exists=True, dir_okay=False), help="Ground-truth contrast dump.")
@click.option("--csv", "csv_path", required=True, type=click.Path(dir_okay=False), help="CSV to append to.")
@click.option("--no-es-residual", is_flag=True, help="Skip the predicted scattered-field residual.")
def eval_cmd(run_dir, pred, truth, csv_path, no_es_residual):
    """Append NMSE/SSIM (and the data residual) for a run to a CSV."""
    if run_dir and (pred or truth):
        raise click.UsageError("use either --run or --pred/--truth")
    if run_dir:
        row = harness.eval_run(run_dir, csv_path, es_residual=not no_es_residual)
    elif pred and truth:
        row = harness.eval_files(pred, truth, csv_path)
    else:
        raise click.UsageError("need --run, or both --pred and --truth")
    click.echo(f"nmse {row['nmse']:.6g}  ssim {row['ssim']:.6g} -> {csv_path}")


@cli.command()
@scene_options
@click.option("--noises", default="0.1,0.2,0.3", show_default=True, help="Comma-separated noise levels.")
@click.option("--contrasts", default="1.0", show_default=True, help="Comma-separated profile contrasts.")
@click.option("--methods", default="vbim", show_default=True, help="Comma-separated methods.")
@click.option("--seeds", default="0", show_default=True, help="Comma-separated seeds.")
@click.option("--jobs", type=int, default=1, show_default=True, help="Parallel cells.")
@invert_options
@click.option("--out", type=click.Path(file_okay=False), help="Output directory.")
def sweep(scene, profile, contrast, grid, inv_grid, freq_ghz, ni, nr, ring_m, doi_m, lossy, noises, contrasts,
          methods, seeds, jobs, out, **kwargs):
    """Run a noise x contrast x method x seed grid and aggregate the metrics."""
    out = _out_dir(out, "sweep")
    method_list = [m.strip() for m in methods.split(",") if m.strip()]
    bad = [m for m in method_list if m not in harness.METHODS]
    if bad:
        raise click.BadParameter(f"unknown methods {bad}", param_hint="--methods")
    man = harness.sweep(
        out, noises=_floats(noises), contrasts=_floats(contrasts), methods=method_list, seeds=_ints(seeds),
        config=_config(grid, inv_grid, freq_ghz, ni, nr, ring_m, doi_m, lossy), scene=scene, profile=profile,
        invert_args=_invert_args(**kwargs), jobs=jobs,
    )
    click.echo(f"sweep {man['run_id']}: {man['n_cells']} cells, {man['n_failed']} failed -> {out}")


@cli.command()
@click.argument("manifest", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Output directory.")
def replay(manifest, out):
    """Re-run a recorded command from its manifest."""
    man = harness.replay(manifest, out)
    click.echo(f"replayed {man['command']} as {man['run_id']} -> {out}")


def main(argv=None) -> int:
    """Run the CLI and return an exit code instead of exiting."""
    try:
        cli.main(args=argv, prog_name="bornkit", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except click.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except NumericalError as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        return EXIT_NUMERICAL
    except (ValueError, OSError, KeyError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_USAGE
    return EXIT_OK


def run():
    sys.exit(main())


if __name__ == "__main__":
    run()
