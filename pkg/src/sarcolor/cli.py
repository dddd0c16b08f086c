"""Command-line interface.

Subcommands mirror the pipeline: ``synth-data`` builds the bundled procedural
dataset, ``synth-gt`` fuses references, ``fit``/``train`` produce models,
``colorize`` applies them, ``eval`` scores prediction directories, ``report``
runs the whole benchmark, ``sweep`` runs ablation grids, and ``gradcheck``
verifies the differentiation engine.  Any stage failure exits nonzero.
"""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path

import click

from . import autodiff, bench, models, regress
from .dataio import load_manifest, iterate_samples, write_patch, write_preview
from .metrics import evaluate_method, format_table


def _parse_int_list(text: str) -> tuple:
    return tuple(int(tok) for tok in text.replace(" ", "").split(",") if tok)


@click.group()
@click.option("--seed", type=int, default=0, show_default=True,
              help="Global seed for anything stochastic.")
@click.pass_context
def main(ctx, seed):
    """SAR colorization toolkit: reference synthesis, baselines, cGAN, benchmark."""
    ctx.ensure_object(dict)
    ctx.obj["seed"] = seed


def _fail(exc: Exception):
    raise click.ClickException(str(exc))


@main.command("synth-data")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--train", "n_train", type=int, default=50, show_default=True)
@click.option("--test", "n_test", type=int, default=10, show_default=True)
@click.option("--size", type=int, default=64, show_default=True)
@click.option("--bit-depth", type=int, default=12, show_default=True)
@click.option("--speckle", type=float, default=0.5, show_default=True)
@click.pass_context
def synth_data(ctx, out_dir, n_train, n_test, size, bit_depth, speckle):
    """Generate the procedural desk dataset (train/ and test/ manifests)."""
    try:
        train_m, test_m = bench.generate_desk_dataset(
            out_dir, n_train=n_train, n_test=n_test, size=size,
            seed=ctx.obj["seed"], bit_depth=bit_depth, speckle=speckle)
    except Exception as exc:
        _fail(exc)
    click.echo(f"wrote {train_m}")
    click.echo(f"wrote {test_m}")


@main.command("synth-gt")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
def synth_gt(manifest_path, out_dir):
    """Fuse a ground-truth reference for every sample in a manifest."""
    try:
        manifest = load_manifest(manifest_path)
        new_manifest = bench.synthesize_gt_dir(manifest, out_dir)
    except Exception as exc:
        _fail(exc)
    click.echo(f"wrote {len(new_manifest)} references to {out_dir}")


@main.command("fit")
@click.option("--method", type=click.Choice(["nocol", "lr", "nl"]), required=True)
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--no-bias", is_flag=True, help="Pin the linear intercepts at zero.")
@click.option("--hidden", default="2", show_default=True,
              help="Hidden layer sizes for nl, e.g. 2 or 1,3,1.")
@click.option("--patches", type=int, default=bench.DESK_FIT_PATCHES, show_default=True,
              help="Number of manifest patches flattened into the fit.")
@click.pass_context
def fit(ctx, method, manifest_path, out_path, no_bias, hidden, patches):
    """Fit a spectral baseline on flattened (SAR, reference) pixels."""
    try:
        manifest = load_manifest(manifest_path)
        options = bench.BenchOptions(lr_with_bias=not no_bias,
                                     nl_hidden=_parse_int_list(hidden),
                                     fit_patches=patches)
        _, model = bench.fit_method(method, manifest, options, ctx.obj["seed"])
        regress.save_model(model, out_path, seed=ctx.obj["seed"])
    except Exception as exc:
        _fail(exc)
    click.echo(f"wrote {out_path}")


@main.command("train")
@click.option("--method", type=click.Choice(["cnn", "cgan"]), required=True)
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True),
              help="JSON file mirroring TrainConfig; defaults to the desk budget.")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.pass_context
def train(ctx, method, manifest_path, config_path, out_path):
    """Train a convolutional colorizer and write a checkpoint."""
    try:
        manifest = load_manifest(manifest_path)
        if config_path:
            config = models.TrainConfig.from_json_file(config_path)
            if config.method != method:
                raise ValueError(f"config method {config.method!r} != --method {method!r}")
        else:
            opts = bench.desk_options(ctx.obj["seed"])
            config = opts.cnn if method == "cnn" else opts.cgan
        trainer = models.train_cnn if method == "cnn" else models.train_cgan
        ckpt = trainer(config, manifest)
        ckpt.save(out_path)
    except Exception as exc:
        _fail(exc)
    click.echo(f"wrote {out_path}")


@main.command("colorize")
@click.option("--ckpt", "ckpt_path", required=True, type=click.Path(exists=True),
              help="A .sck checkpoint or a .scm baseline model.")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--preview", is_flag=True, help="Also write clamped 8-bit PNG previews.")
def colorize_cmd(ckpt_path, manifest_path, out_dir, preview):
    """Colorize every SAR patch in a manifest."""
    try:
        manifest = load_manifest(manifest_path)
        out_dir = Path(out_dir)
        with open(ckpt_path, "rb") as fh:
            is_ckpt = fh.read(4) == models.CKPT_MAGIC
        if is_ckpt:
            ckpt = models.ModelCheckpoint.load(ckpt_path)
            predict = lambda sar: models.colorize(ckpt, sar)
        else:
            model = regress.load_model(ckpt_path)
            predict = lambda sar: regress.apply_model(model, sar)
        count = 0
        for sample in iterate_samples(manifest):
            pred = predict(sample.sar)
            write_patch(pred, out_dir / f"{sample.id}.scp")
            if preview:
                write_preview(pred, out_dir / f"{sample.id}.png")
            count += 1
    except Exception as exc:
        _fail(exc)
    click.echo(f"colorized {count} patches into {out_dir}")


@main.command("eval")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--pred", "pred_dir", required=True, type=click.Path(exists=True))
@click.option("--method", required=True, help="Method name recorded in the report.")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--q4-block", type=int, default=32, show_default=True)
def eval_cmd(manifest_path, pred_dir, method, out_path, q4_block):
    """Score a directory of predictions (<id>.scp) against manifest references."""
    try:
        manifest = load_manifest(manifest_path)
        report = evaluate_method(manifest, pred_dir, method, q4_block=q4_block)
        report.save(out_path)
    except Exception as exc:
        _fail(exc)
    agg = report.aggregate
    click.echo(f"{method}: Q4 {agg['q4']['mean']:.4f}  NRMSE {agg['nrmse']['mean']:.4f}  "
               f"SAM {agg['sam_deg']['mean']:.4f}")
    click.echo(f"wrote {out_path}")


def _desk_options_with_overrides(seed, fit_patches, cnn_steps, cgan_steps,
                                 cgan_depth, batch, q4_block):
    opts = bench.desk_options(seed)
    opts.fit_patches = fit_patches
    opts.q4_block = q4_block
    opts.cnn = replace(opts.cnn, max_steps=cnn_steps, batch=batch, seed=seed)
    opts.cgan = replace(opts.cgan, max_steps=cgan_steps, batch=batch,
                        gan_depth=cgan_depth, seed=seed)
    return opts


@main.command("report")
@click.option("--train-manifest", required=True, type=click.Path(exists=True))
@click.option("--test-manifest", required=True, type=click.Path(exists=True))
@click.option("--methods", default="nocol,lr,nl,cnn,cgan", show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--fit-patches", type=int, default=bench.DESK_FIT_PATCHES, show_default=True)
@click.option("--cnn-steps", type=int, default=bench.DESK_CNN["max_steps"], show_default=True)
@click.option("--cgan-steps", type=int, default=bench.DESK_CGAN["max_steps"], show_default=True)
@click.option("--cgan-depth", type=int, default=bench.DESK_CGAN["gan_depth"], show_default=True)
@click.option("--batch", type=int, default=bench.DESK_CNN["batch"], show_default=True)
@click.option("--q4-block", type=int, default=32, show_default=True)
@click.pass_context
def report(ctx, train_manifest, test_manifest, methods, out_dir, fit_patches,
           cnn_steps, cgan_steps, cgan_depth, batch, q4_block):
    """Run the full benchmark and emit per-method reports plus a summary table."""
    try:
        method_list = [m.strip() for m in methods.split(",") if m.strip()]
        opts = _desk_options_with_overrides(ctx.obj["seed"], fit_patches, cnn_steps,
                                            cgan_steps, cgan_depth, batch, q4_block)
        run = bench.run_benchmark(train_manifest, test_manifest, method_list,
                                  out_dir, seed=ctx.obj["seed"], options=opts)
    except Exception as exc:
        _fail(exc)
    click.echo(format_table([run.reports[m] for m in run.methods]))
    click.echo(f"wrote {Path(out_dir) / 'run.json'}")


def _parse_grid(axis: str, text: str):
    if axis == "alpha":
        return [float(tok) for tok in text.split(",") if tok]
    if axis == "depth":
        return [int(tok) for tok in text.split(",") if tok]
    if axis == "loss-terms":
        return [tok.strip() for tok in text.split(",") if tok.strip()]
    if axis in ("hidden", "kernel"):
        return [_parse_int_list(group) for group in text.split(";") if group]
    if axis == "bias":
        return [tok.strip().lower() in ("on", "true", "1", "yes")
                for tok in text.split(",") if tok.strip()]
    raise ValueError(f"unknown sweep axis {axis!r}")


@main.command("sweep")
@click.option("--axis", type=click.Choice(sorted(bench.SWEEP_AXES)), required=True)
@click.option("--grid", required=True,
              help="Comma-separated values; semicolon-separated int lists for hidden/kernel.")
@click.option("--train-manifest", required=True, type=click.Path(exists=True))
@click.option("--test-manifest", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--fit-patches", type=int, default=bench.DESK_FIT_PATCHES, show_default=True)
@click.option("--cnn-steps", type=int, default=bench.DESK_CNN["max_steps"], show_default=True)
@click.option("--cgan-steps", type=int, default=bench.DESK_CGAN["max_steps"], show_default=True)
@click.option("--cgan-depth", type=int, default=bench.DESK_CGAN["gan_depth"], show_default=True)
@click.option("--batch", type=int, default=bench.DESK_CNN["batch"], show_default=True)
@click.option("--q4-block", type=int, default=32, show_default=True)
@click.pass_context
def sweep_cmd(ctx, axis, grid, train_manifest, test_manifest, out_dir, fit_patches,
              cnn_steps, cgan_steps, cgan_depth, batch, q4_block):
    """Run an ablation grid (one benchmark per value, shared data and seed)."""
    try:
        values = _parse_grid(axis, grid)
        opts = _desk_options_with_overrides(ctx.obj["seed"], fit_patches, cnn_steps,
                                            cgan_steps, cgan_depth, batch, q4_block)
        runs = bench.sweep(axis, values, train_manifest, test_manifest, out_dir,
                           seed=ctx.obj["seed"], options=opts)
    except Exception as exc:
        _fail(exc)
    click.echo(f"swept {axis} over {len(runs)} points; wrote {Path(out_dir) / 'sweep.json'}")


@main.command("gradcheck")
@click.option("--seeds", "n_seeds", type=int, default=3, show_default=True,
              help="Number of random seeds per operator.")
@click.pass_context
def gradcheck_cmd(ctx, n_seeds):
    """Finite-difference check of every differentiation-engine operator."""
    base = ctx.obj["seed"]
    failed = False
    for s in range(base, base + n_seeds):
        for name, excess in autodiff.run_gradcheck_suite(seed=s):
            status = "ok" if excess <= 0.0 else f"FAIL (excess {excess:.3e})"
            click.echo(f"seed {s}  {name:<24} {status}")
            failed = failed or excess > 0.0
    if failed:
        raise click.ClickException("gradient check failed")
    click.echo("all operators passed")


if __name__ == "__main__":
    main()
