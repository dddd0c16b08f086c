"""End-to-end benchmark orchestration: reference synthesis, method training,
colorization, evaluation, scatter/residual exports, and ablation sweeps.

A run is deterministic given (manifests, configs, seed): training is seeded,
evaluation order follows the manifest, and serialized reports contain no
wall-clock state.  Train/test splits are explicit manifest files, never drawn
at run time.

The bundled procedural dataset keeps the whole suite self-contained: smooth
latent fields drive three correlated optical bands, and the SAR band shares
the structural latent under multiplicative speckle, so spatial context
genuinely helps the convolutional methods.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import metrics, protocol
from .dataio import (Manifest, ManifestEntry, PairedSample, RasterPatch,
                     adjust_sar, iterate_samples, load_manifest, load_sample,
                     save_manifest, write_patch)
from .metrics import MetricReport, Q4_BLOCK_DEFAULT, evaluate_method, format_table
from .models import ModelCheckpoint, TrainConfig, colorize, train_cgan, train_cnn
from .regress import apply_model, fit_lr, fit_nl, nocol, save_model

METHOD_KEYS = ("nocol", "lr", "nl", "cnn", "cgan")
METHOD_LABELS = {
    "nocol": "NoColSAR",
    "lr": "LR4ColSAR",
    "nl": "NL4ColSAR",
    "cnn": "CNN4ColSAR",
    "cgan": "cGAN4ColSAR",
}
SWEEP_AXES = {
    "alpha": "cgan",
    "depth": "cgan",
    "loss-terms": "cgan",
    "hidden": "nl",
    "kernel": "cnn",
    "bias": "lr",
}

# Desk-scale training budgets: small enough for a laptop core, large enough
# that the learned methods separate cleanly on the bundled dataset.
DESK_FIT_PATCHES = 20
DESK_CNN = dict(batch=2, lr=1e-3, max_steps=1500, epochs=10 ** 9, loss="l1",
                adam_beta1=0.9)
DESK_CGAN = dict(batch=2, lr=2e-4, max_steps=2000, epochs=10 ** 9,
                 alpha=210.0, beta=0.5, gan_depth=6,
                 gan_base_channels=32, gan_max_channels=256)
DESK_NL_HIDDEN = (2,)


class BenchStageError(RuntimeError):
    """A benchmark stage failed; the message names the stage."""


@dataclass
class BenchOptions:
    """Per-method knobs for one benchmark run."""

    cnn: TrainConfig = None
    cgan: TrainConfig = None
    lr_with_bias: bool = True
    nl_hidden: tuple = DESK_NL_HIDDEN
    fit_patches: int = DESK_FIT_PATCHES
    q4_block: int = Q4_BLOCK_DEFAULT


def desk_options(seed: int = 0, bit_depth: int = 12, **overrides) -> BenchOptions:
    """Documented desk budgets for every learned method."""
    opts = BenchOptions(
        cnn=TrainConfig(method="cnn", seed=seed, bit_depth=bit_depth, **DESK_CNN),
        cgan=TrainConfig(method="cgan", seed=seed, bit_depth=bit_depth, **DESK_CGAN),
    )
    for key, value in overrides.items():
        setattr(opts, key, value)
    return opts


@dataclass
class BenchRun:
    """One benchmark over a fixed train/test split."""

    run_id: str
    seed: int
    methods: list[str]
    reports: dict = field(default_factory=dict)   # method key -> MetricReport
    env: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "run_id": self.run_id,
            "seed": self.seed,
            "methods": self.methods,
            "env": self.env,
            "aggregates": {m: self.reports[m].aggregate for m in self.methods},
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True, indent=2)

    def save(self, out_dir):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "run.json").write_text(self.to_json() + "\n", encoding="utf-8")
        table = format_table([self.reports[m] for m in self.methods])
        (out_dir / "table.txt").write_text(table, encoding="utf-8")
        for m in self.methods:
            self.reports[m].save(out_dir / "reports" / f"{m}.json")


# --- procedural desk dataset -----------------------------------------------------

def _smooth_field(rng, size: int, length: float) -> np.ndarray:
    """Zero-mean, unit-std Gaussian field with correlation length ``length`` pixels."""
    noise = rng.standard_normal((size, size))
    fy = np.fft.fftfreq(size)[:, None]
    fx = np.fft.rfftfreq(size)[None, :]
    gain = np.exp(-2.0 * np.pi ** 2 * length ** 2 * (fx ** 2 + fy ** 2))
    fielded = np.fft.irfft2(np.fft.rfft2(noise) * gain, s=(size, size))
    fielded -= fielded.mean()
    sd = fielded.std()
    return fielded / sd if sd > 0 else fielded


def synth_scene(rng, size: int = 64, bit_depth: int = 12,
                speckle: float = 0.32) -> tuple[RasterPatch, RasterPatch]:
    """One synthetic (SAR, MS) pair sharing a structural latent.

    Each optical band responds to the structural latent through its own
    saturating nonlinearity, and the SAR backscatter follows a matched curve of
    the same latent under multiplicative speckle.  Per-pixel regressions see
    the band responses smeared by speckle; neighborhood denoising recovers
    them, which is what separates the convolutional colorizers.  Small
    independent hue fields keep a floor of genuinely unpredictable color.
    """
    base = _smooth_field(rng, size, size / 6)
    material = np.tanh(3.0 * _smooth_field(rng, size, size / 4))
    hue_a = _smooth_field(rng, size, size / 3)
    hue_b = _smooth_field(rng, size, size / 3)
    texture = _smooth_field(rng, size, size / 32)

    # color depends on the material zones; the radar LEVEL does not (only its
    # roughness does), so the material signal is invisible to per-pixel maps
    r = 0.46 + 0.13 * np.tanh(2.0 * base) + 0.10 * material + 0.03 * hue_a
    g = 0.42 + 0.12 * np.tanh(2.0 * base - 0.4) - 0.02 * material + 0.03 * hue_b
    b = 0.38 + 0.10 * np.tanh(2.0 * base + 0.5) - 0.10 * material - 0.02 * hue_a
    ms = np.clip(np.stack([r, g, b]), 0.02, 0.98) * float(2 ** bit_depth)

    roughness = 0.25 + 0.55 * (material + 1.0) / 2.0
    radar = np.exp(1.1 * np.tanh(2.0 * base) + roughness * texture)
    radar = radar * np.exp(speckle * rng.standard_normal((size, size)))
    sar = adjust_sar(RasterPatch(radar[None].astype(np.float32), bit_depth=bit_depth),
                     p=bit_depth)
    return sar, RasterPatch(ms.astype(np.float32), bit_depth=bit_depth)


def generate_desk_dataset(out_dir, n_train: int = 50, n_test: int = 10,
                          size: int = 64, seed: int = 0, bit_depth: int = 12,
                          speckle: float = 0.5) -> tuple[Path, Path]:
    """Write train/ and test/ manifests of procedural (SAR, MS) pairs."""
    out_dir = Path(out_dir)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    paths = []
    for split, count in (("train", n_train), ("test", n_test)):
        split_dir = out_dir / split
        split_dir.mkdir(parents=True, exist_ok=True)
        entries = []
        for i in range(count):
            sid = f"{split}_{i:04d}"
            sar, ms = synth_scene(rng, size=size, bit_depth=bit_depth, speckle=speckle)
            write_patch(sar, split_dir / f"{sid}_sar.scp")
            write_patch(ms, split_dir / f"{sid}_ms.scp")
            entries.append(ManifestEntry(sid, f"{sid}_sar.scp", f"{sid}_ms.scp"))
        manifest = Manifest(root=split_dir, entries=entries)
        manifest_path = split_dir / "manifest.jsonl"
        save_manifest(manifest, manifest_path)
        paths.append(manifest_path)
    return paths[0], paths[1]


# --- protocol stage ----------------------------------------------------------------

def synthesize_gt_dir(manifest: Manifest, out_dir) -> Manifest:
    """Fuse a reference for every sample; write patches plus an updated manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for entry in manifest.entries:
        sample = load_sample(manifest, entry)
        product = protocol.synthesize_gt(PairedSample(sample.id, sample.sar, sample.ms))
        write_patch(product.gt, out_dir / f"{entry.id}_gt.scp")
        entries.append(ManifestEntry(
            id=entry.id,
            sar=os.path.relpath(manifest.resolve(entry.sar), out_dir),
            ms=os.path.relpath(manifest.resolve(entry.ms), out_dir),
            gt=f"{entry.id}_gt.scp",
        ))
    new_manifest = Manifest(root=out_dir, entries=entries)
    save_manifest(new_manifest, out_dir / "manifest.jsonl")
    return new_manifest


def ensure_gt(manifest: Manifest, out_dir) -> Manifest:
    """Return a manifest where every sample has gt, synthesizing missing ones."""
    if all(e.gt is not None for e in manifest.entries):
        return manifest
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for entry in manifest.entries:
        if entry.gt is not None:
            new_gt = os.path.relpath(manifest.resolve(entry.gt), out_dir)
        else:
            sample = load_sample(manifest, entry)
            product = protocol.synthesize_gt(sample)
            write_patch(product.gt, out_dir / f"{entry.id}_gt.scp")
            new_gt = f"{entry.id}_gt.scp"
        entries.append(ManifestEntry(
            id=entry.id,
            sar=os.path.relpath(manifest.resolve(entry.sar), out_dir),
            ms=os.path.relpath(manifest.resolve(entry.ms), out_dir),
            gt=new_gt,
        ))
    new_manifest = Manifest(root=out_dir, entries=entries)
    save_manifest(new_manifest, out_dir / "manifest.jsonl")
    return new_manifest


# --- training / prediction -----------------------------------------------------------

def _flatten_training_data(manifest: Manifest, n_patches: int):
    if n_patches < 1:
        raise ValueError(f"fit_patches must be >= 1, got {n_patches}")
    xs, ys = [], []
    for sample in iterate_samples(manifest):
        if sample.gt is None:
            raise ValueError(f"sample {sample.id}: fitting requires ground truth")
        xs.append(sample.sar.data.astype(np.float64).ravel())
        ys.append(sample.gt.data.astype(np.float64).reshape(3, -1).T)
        if len(xs) >= n_patches:
            break
    if not xs:
        raise ValueError("empty manifest: nothing to fit")
    return np.concatenate(xs), np.concatenate(ys, axis=0)


def fit_method(method: str, manifest: Manifest, options: BenchOptions, seed: int):
    """Train/fit one method; returns ('model', obj) or ('ckpt', ModelCheckpoint)."""
    if method == "nocol":
        return "model", "nocol"
    if method in ("lr", "nl"):
        x, y = _flatten_training_data(manifest, options.fit_patches)
        if method == "lr":
            return "model", fit_lr(x, y, with_bias=options.lr_with_bias)
        return "model", fit_nl(x, y, options.nl_hidden, seed=seed)
    if method == "cnn":
        return "ckpt", train_cnn(options.cnn, manifest)
    if method == "cgan":
        return "ckpt", train_cgan(options.cgan, manifest)
    raise ValueError(f"unknown method {method!r}")


def predict_with(kind: str, model, sar: RasterPatch) -> RasterPatch:
    if kind == "model":
        return apply_model(model, sar)
    return colorize(model, sar)


# --- scatter / residual exports -------------------------------------------------------

@dataclass
class ScatterExport:
    """Flattened (gt, prediction) pairs and per-case regression lines."""

    method: str
    cases: list[dict] = field(default_factory=list)  # id, slope, intercept, r2, n
    pairs: dict = field(default_factory=dict)        # id -> (gt values, pred values)

    def save(self, out_dir):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / f"{self.method}_scatter.csv", "w", encoding="utf-8") as fh:
            fh.write("id,gt,pred\n")
            for case in self.cases:
                g, p = self.pairs[case["id"]]
                for gv, pv in zip(g, p):
                    fh.write(f"{case['id']},{gv!r},{pv!r}\n")
        meta = {"method": self.method, "cases": self.cases}
        (out_dir / f"{self.method}_scatter.json").write_text(
            json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def export_scatter(cases: list[tuple[str, RasterPatch, RasterPatch]],
                   method: str) -> ScatterExport:
    """Build scatter data for (id, gt, prediction) triples."""
    if not cases:
        raise ValueError("export_scatter: empty input")
    out = ScatterExport(method=method)
    for sid, gt, pred in cases:
        g = gt.data.astype(np.float64).ravel()
        p = pred.data.astype(np.float64).ravel()
        slope, intercept = metrics._ols(g, p)
        out.cases.append({
            "id": sid,
            "slope": slope,
            "intercept": intercept,
            "r2": metrics.r2(g, p),
            "n": int(g.size),
        })
        out.pairs[sid] = (g, p)
    return out


def residual_vs_nocol(pred: RasterPatch, sar: RasterPatch) -> RasterPatch:
    """Signed residual between a colorization and the replicated SAR band."""
    base = nocol(sar)
    if pred.data.shape != base.data.shape:
        raise ValueError(f"shape mismatch: {pred.data.shape} vs {base.data.shape}")
    return RasterPatch(pred.data.astype(np.float64) - base.data.astype(np.float64),
                       bit_depth=pred.bit_depth)


# --- benchmark driver -------------------------------------------------------------------

def _as_manifest(m) -> Manifest:
    return m if isinstance(m, Manifest) else load_manifest(m)


def run_benchmark(train_manifest, test_manifest, methods, out_dir,
                  seed: int = 0, options: BenchOptions = None,
                  write_scatter: bool = True) -> BenchRun:
    """Full pipeline over an explicit train/test split; NoColSAR always included."""
    out_dir = Path(out_dir)
    options = options or desk_options(seed)
    methods = list(methods)
    if "nocol" not in methods:
        methods = ["nocol"] + methods
    for m in methods:
        if m not in METHOD_KEYS:
            raise ValueError(f"unknown method {m!r}; choose from {METHOD_KEYS}")

    try:
        train_m = ensure_gt(_as_manifest(train_manifest), out_dir / "gt_train")
        test_m = ensure_gt(_as_manifest(test_manifest), out_dir / "gt_test")
    except Exception as exc:
        raise BenchStageError(f"stage PROTOCOL failed: {exc}") from exc

    fitted = {}
    for m in methods:
        try:
            kind, model = fit_method(m, train_m, options, seed)
        except Exception as exc:
            raise BenchStageError(f"stage TRAINING failed for {m}: {exc}") from exc
        fitted[m] = (kind, model)
        model_path = out_dir / "models" / (f"{m}.sck" if kind == "ckpt" else f"{m}.scm")
        if kind == "ckpt":
            model.save(model_path)
        else:
            save_model(model, model_path, seed=seed)

    run = BenchRun(
        run_id=f"bench-seed{seed}-" + "-".join(methods),
        seed=seed,
        methods=methods,
        env={
            "seed": seed,
            "q4_block": options.q4_block,
            "std_convention": "population",
            "sam_zero_norm_policy": "exclude",
            "cnn_loss": options.cnn.loss if options.cnn else None,
            "fit_patches": options.fit_patches,
            "lr_with_bias": options.lr_with_bias,
            "nl_hidden": list(options.nl_hidden),
            "train_size": len(train_m),
            "test_size": len(test_m),
        },
    )
    for m in methods:
        kind, model = fitted[m]
        pred_dir = out_dir / "pred" / m
        try:
            cases = []
            for sample in iterate_samples(test_m):
                pred = predict_with(kind, model, sample.sar)
                write_patch(pred, pred_dir / f"{sample.id}.scp")
                cases.append((sample.id, sample.gt, pred))
            report = evaluate_method(test_m, pred_dir, METHOD_LABELS[m],
                                     q4_block=options.q4_block)
        except Exception as exc:
            raise BenchStageError(f"stage TESTING failed for {m}: {exc}") from exc
        run.reports[m] = report
        if write_scatter:
            export_scatter(cases, m).save(out_dir / "scatter")
    run.save(out_dir)
    return run


# --- ablation sweeps -----------------------------------------------------------------------

def _sweep_point_options(axis: str, value, base: BenchOptions, seed: int) -> BenchOptions:
    opts = replace(base)
    if axis == "alpha":
        opts.cgan = replace(base.cgan, alpha=float(value))
    elif axis == "depth":
        opts.cgan = replace(base.cgan, gan_depth=int(value))
    elif axis == "loss-terms":
        if value == "l1":
            opts.cgan = replace(base.cgan, use_gan=False)
        elif value == "gan":
            opts.cgan = replace(base.cgan, alpha=0.0)
        elif value == "both":
            opts.cgan = replace(base.cgan)
        else:
            raise ValueError(f"loss-terms grid values must be l1|gan|both, got {value!r}")
    elif axis == "hidden":
        opts.nl_hidden = tuple(int(v) for v in value)
    elif axis == "kernel":
        kernels = tuple(int(v) for v in value)
        filters = {3: (64, 32, 3), 4: (64, 32, 32, 3)}.get(len(kernels))
        if filters is None:
            raise ValueError("kernel grids support 3- or 4-layer stacks")
        opts.cnn = replace(base.cnn, cnn_kernels=kernels, cnn_filters=filters)
    elif axis == "bias":
        opts.lr_with_bias = bool(value)
    else:
        raise ValueError(f"unknown sweep axis {axis!r}; choose from {sorted(SWEEP_AXES)}")
    return opts


def sweep(axis: str, grid, train_manifest, test_manifest, out_dir,
          seed: int = 0, options: BenchOptions = None) -> list[BenchRun]:
    """One benchmark run per grid value, shared data and seed, plus a merged report."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; choose from {sorted(SWEEP_AXES)}")
    grid = list(grid)
    if not grid:
        raise ValueError("empty sweep grid")
    method = SWEEP_AXES[axis]
    out_dir = Path(out_dir)
    base = options or desk_options(seed)
    runs = []
    points = []
    for i, value in enumerate(grid):
        opts = _sweep_point_options(axis, value, base, seed)
        run = run_benchmark(train_manifest, test_manifest, [method],
                            out_dir / f"point_{i:02d}", seed=seed, options=opts,
                            write_scatter=False)
        runs.append(run)
        points.append({
            "value": value if not isinstance(value, tuple) else list(value),
            "aggregate": run.reports[method].aggregate,
        })
    merged = {
        "axis": axis,
        "method": method,
        "seed": seed,
        "grid": [p["value"] for p in points],
        "points": points,
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "sweep.json").write_text(
        json.dumps(merged, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return runs
