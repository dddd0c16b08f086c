"""Reference colorized-SAR synthesis by fast-IHS component substitution.

The intensity of the MS image (band mean) is swapped for a two-moment
histogram-matched SAR band; the resulting detail plane is added back to every
MS band.  Output references may overshoot [0, 2**p]; they are kept unclamped so
downstream metrics see the exact fusion result.

Statistics are per patch over all pixels, population (1/n) normalization, and
all arithmetic here runs in float64 so the component-substitution identities
hold to well below raster quantization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import PairedSample, RasterPatch


@dataclass
class FusionProduct:
    """Intermediate planes and the fused reference for one sample."""

    intensity: RasterPatch
    matched_sar: RasterPatch
    detail: RasterPatch
    gt: RasterPatch


def intensity(ms: RasterPatch) -> RasterPatch:
    """Spectral mean of a 3-band patch (the IHS intensity component)."""
    if ms.channels != 3:
        raise ValueError(f"intensity expects 3 channels, got {ms.channels}")
    mean = ms.data.astype(np.float64).mean(axis=0, keepdims=True)
    return RasterPatch(mean, bit_depth=ms.bit_depth)


def histogram_match(sar: RasterPatch, intensity_patch: RasterPatch) -> RasterPatch:
    """Two-moment matching: affinely rescale sar so its mean/std equal the target's."""
    if sar.channels != 1 or intensity_patch.channels != 1:
        raise ValueError("histogram_match expects two 1-channel patches")
    if (sar.height, sar.width) != (intensity_patch.height, intensity_patch.width):
        raise ValueError("histogram_match: dimension mismatch")
    s = sar.data.astype(np.float64)
    t = intensity_patch.data.astype(np.float64)
    mu_s, sigma_s = s.mean(), s.std()
    mu_t, sigma_t = t.mean(), t.std()
    if sigma_s == 0.0:
        raise ValueError("degenerate SAR distribution: zero standard deviation")
    out = (s - mu_s) * (sigma_t / sigma_s) + mu_t
    return RasterPatch(out, bit_depth=intensity_patch.bit_depth)


def synthesize_gt(sample: PairedSample) -> FusionProduct:
    """Build the fused reference for one sample: gt = ms + (matched_sar - intensity)."""
    inten = intensity(sample.ms)
    matched = histogram_match(sample.sar, inten)
    detail = RasterPatch(matched.data - inten.data, bit_depth=inten.bit_depth)
    gt = RasterPatch(sample.ms.data.astype(np.float64) + detail.data,
                     bit_depth=sample.ms.bit_depth)
    return FusionProduct(intensity=inten, matched_sar=matched, detail=detail, gt=gt)
