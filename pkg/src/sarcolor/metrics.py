"""Reference-based quality metrics and per-method report assembly.

Conventions fixed here and recorded in every report:
  - std is population std (divide by n) everywhere;
  - the quaternion quality index runs on 32x32 blocks with stride 32 by
    default, zero-denominator blocks excluded;
  - spectral-angle pixels where either vector has zero norm are excluded
    from the average and counted.

All metric arithmetic is float64 regardless of raster storage dtype.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataio import Manifest, RasterPatch, load_sample, read_patch

Q4_BLOCK_DEFAULT = 32
METRIC_KEYS = ("q4", "nrmse", "sam_deg", "r2")


def _as3(patch_or_array) -> np.ndarray:
    data = patch_or_array.data if isinstance(patch_or_array, RasterPatch) else np.asarray(patch_or_array)
    if data.ndim != 3 or data.shape[0] != 3:
        raise ValueError(f"expected a 3-band raster, got shape {data.shape}")
    return data.astype(np.float64)


def _check_same_shape(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")


def nrmse(gt, pred) -> float:
    """Mean over bands of RMSE divided by the reference band mean. Ideal 0."""
    g = _as3(gt)
    p = _as3(pred)
    _check_same_shape(g, p)
    mu = g.reshape(3, -1).mean(axis=1)
    if np.any(mu == 0.0):
        raise ValueError("zero-mean reference band")
    rmse = np.sqrt(((p - g) ** 2).reshape(3, -1).mean(axis=1))
    return float((rmse / mu).mean())


def sam_details(gt, pred) -> tuple[float, int]:
    """Mean per-pixel spectral angle in degrees plus the count of excluded pixels.

    The angle is evaluated as atan2(|x cross y|, x dot y), which is equivalent to
    the arccos of the normalized dot product but exact at zero angle.  Pixels
    where either spectral vector has zero norm are excluded.
    """
    g = _as3(gt)
    p = _as3(pred)
    _check_same_shape(g, p)
    x = g.reshape(3, -1).T
    y = p.reshape(3, -1).T
    nx = np.einsum("ij,ij->i", x, x)
    ny = np.einsum("ij,ij->i", y, y)
    keep = (nx > 0.0) & (ny > 0.0)
    excluded = int(np.size(keep) - np.count_nonzero(keep))
    if not np.any(keep):
        raise ValueError("all pixels have zero spectral norm")
    x = x[keep]
    y = y[keep]
    dot = np.einsum("ij,ij->i", x, y)
    cross = np.cross(x, y)
    cross_norm = np.sqrt(np.einsum("ij,ij->i", cross, cross))
    ang = np.arctan2(cross_norm, dot)
    return float(np.degrees(ang.mean())), excluded


def sam(gt, pred) -> float:
    """Spectral angle mapper, degrees. Ideal 0."""
    return sam_details(gt, pred)[0]


def _quat_conj_product_mean(d1: np.ndarray, d2: np.ndarray) -> np.ndarray:
    """Mean of d1 * conj(d2) over pixels for quaternion arrays (..., npix, 4)."""
    w1, x1, y1, z1 = d1[..., 0], d1[..., 1], d1[..., 2], d1[..., 3]
    w2, x2, y2, z2 = d2[..., 0], d2[..., 1], d2[..., 2], d2[..., 3]
    pw = w1 * w2 + x1 * x2 + y1 * y2 + z1 * z2
    px = -w1 * x2 + x1 * w2 - y1 * z2 + z1 * y2
    py = -w1 * y2 + x1 * z2 + y1 * w2 - z1 * x2
    pz = -w1 * z2 - x1 * y2 + y1 * x2 + z1 * w2
    return np.stack([pw, px, py, pz], axis=-1).mean(axis=-2)


def _blocks(data: np.ndarray, block: int) -> np.ndarray:
    """Cut (4, h, w) into full blocks -> (nblocks, block*block, 4)."""
    _, h, w = data.shape
    bh, bw = h // block, w // block
    crop = data[:, : bh * block, : bw * block]
    tiles = crop.reshape(4, bh, block, bw, block)
    tiles = tiles.transpose(1, 3, 2, 4, 0).reshape(bh * bw, block * block, 4)
    return tiles


def q4(gt, pred, block: int = Q4_BLOCK_DEFAULT) -> float:
    """Quaternion extension of the universal image quality index. Ideal 1.

    The two 3-band inputs are zero-padded with a fourth all-zero band and
    treated as quaternion-valued images; the index is computed per block
    (``block`` x ``block``, stride ``block``) and averaged over blocks with a
    nonzero denominator.
    """
    g = _as3(gt)
    p = _as3(pred)
    _check_same_shape(g, p)
    h, w = g.shape[1], g.shape[2]
    if h < block or w < block:
        raise ValueError(f"patch too small for Q4 block size {block}: {h}x{w}")
    zeros = np.zeros((1, h, w))
    z1 = _blocks(np.concatenate([g, zeros], axis=0), block)
    z2 = _blocks(np.concatenate([p, zeros], axis=0), block)

    mu1 = z1.mean(axis=1)
    mu2 = z2.mean(axis=1)
    d1 = z1 - mu1[:, None, :]
    d2 = z2 - mu2[:, None, :]
    var1 = np.einsum("bpq,bpq->b", d1, d1) / d1.shape[1]
    var2 = np.einsum("bpq,bpq->b", d2, d2) / d2.shape[1]
    cov = _quat_conj_product_mean(d1, d2)
    cov_mod = np.sqrt(np.einsum("bq,bq->b", cov, cov))
    mu1_sq = np.einsum("bq,bq->b", mu1, mu1)
    mu2_sq = np.einsum("bq,bq->b", mu2, mu2)
    denom = (var1 + var2) * (mu1_sq + mu2_sq)
    valid = denom > 0.0
    if not np.any(valid):
        raise ValueError("all Q4 blocks degenerate (zero denominator)")
    num = 4.0 * cov_mod * np.sqrt(mu1_sq * mu2_sq)
    return float((num[valid] / denom[valid]).mean())


def _ols(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Least-squares line y ~ slope*x + intercept (population moments)."""
    mx, my = x.mean(), y.mean()
    vx = ((x - mx) ** 2).mean()
    if vx == 0.0:
        raise ValueError("degenerate abscissa: var(x) == 0")
    cov = ((x - mx) * (y - my)).mean()
    slope = cov / vx
    return float(slope), float(my - slope * mx)


def r2(x, y) -> float:
    """Coefficient of determination of the least-squares line through (x, y)."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size:
        raise ValueError("r2: length mismatch")
    if x.size < 2:
        raise ValueError("r2: need at least 2 samples")
    slope, intercept = _ols(x, y)
    resid = y - (slope * x + intercept)
    ss_res = float((resid ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot == 0.0:
        return 1.0
    return 1.0 - ss_res / ss_tot


def mean_std(values) -> dict[str, float]:
    arr = np.asarray(values, dtype=np.float64)
    return {"mean": float(arr.mean()), "std": float(arr.std())}


@dataclass
class MetricReport:
    """Per-patch and aggregated metrics for one method."""

    method: str
    per_patch: list[dict] = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)
    decisions: dict = field(default_factory=dict)

    def recompute_aggregate(self):
        self.aggregate = {
            key: mean_std([row[key] for row in self.per_patch]) for key in METRIC_KEYS
        }

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "per_patch": self.per_patch,
            "aggregate": self.aggregate,
            "decisions": self.decisions,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(method=d["method"], per_patch=list(d["per_patch"]),
                   aggregate=dict(d["aggregate"]), decisions=dict(d.get("decisions", {})))

    @classmethod
    def load(cls, path) -> "MetricReport":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def patch_metrics(gt: RasterPatch, pred: RasterPatch, q4_block: int = Q4_BLOCK_DEFAULT) -> dict:
    sam_deg, excluded = sam_details(gt, pred)
    return {
        "q4": q4(gt, pred, block=q4_block),
        "nrmse": nrmse(gt, pred),
        "sam_deg": sam_deg,
        "sam_excluded": excluded,
        "r2": r2(gt.data, pred.data),
    }


def evaluate_method(manifest: Manifest, pred_dir, method: str,
                    q4_block: int = Q4_BLOCK_DEFAULT) -> MetricReport:
    """Score predictions in ``pred_dir`` (one ``<id>.scp`` per sample) against manifest gt."""
    pred_dir = Path(pred_dir)
    report = MetricReport(method=method, decisions={
        "q4_block": q4_block,
        "std_convention": "population",
        "sam_zero_norm_policy": "exclude",
    })
    for entry in manifest.entries:
        if entry.gt is None:
            raise ValueError(f"sample {entry.id}: no ground truth in manifest")
        sample = load_sample(manifest, entry)
        pred_path = pred_dir / f"{entry.id}.scp"
        if not pred_path.exists():
            raise FileNotFoundError(f"missing prediction for id {entry.id}: {pred_path}")
        pred = read_patch(pred_path)
        row = {"id": entry.id}
        row.update(patch_metrics(sample.gt, pred, q4_block=q4_block))
        report.per_patch.append(row)
    if not report.per_patch:
        raise ValueError("empty manifest: nothing to evaluate")
    report.recompute_aggregate()
    return report


def format_table(reports: list[MetricReport]) -> str:
    """Aligned mean±std table over Q4 / NRMSE / SAM, one row per method."""
    headers = ("Method", "Q4", "NRMSE", "SAM")
    rows = []
    for rep in reports:
        agg = rep.aggregate
        rows.append((
            rep.method,
            f"{agg['q4']['mean']:.4f}±{agg['q4']['std']:.4f}",
            f"{agg['nrmse']['mean']:.4f}±{agg['nrmse']['std']:.4f}",
            f"{agg['sam_deg']['mean']:.4f}±{agg['sam_deg']['std']:.4f}",
        ))
    rows.append(("ideal value", "1", "0", "0"))
    widths = [max(len(headers[i]), *(len(r[i]) for r in rows)) for i in range(4)]
    lines = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(headers))]
    lines.append("  ".join("-" * w for w in widths))
    for r in rows:
        lines.append("  ".join(r[i].ljust(widths[i]) for i in range(4)))
    return "\n".join(lines) + "\n"
