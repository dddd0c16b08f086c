"""Independent brute-force reference implementations used only by tests.

Everything here is deliberately written as plain Python loops over float64
values, with no shared code or vectorized shortcuts from the package, so the
production implementations are checked against a genuinely separate path.
The loops are flat for speed but remain elementwise arithmetic.
"""

import math


def band_values(patch):
    """RasterPatch (or (c,h,w) array) -> (bands as flat float lists, h, w)."""
    data = getattr(patch, "data", patch)
    c, h, w = data.shape
    bands = [[float(v) for v in data[b].ravel()] for b in range(c)]
    return bands, h, w


def nrmse_oracle(gt, pred):
    g, h, w = band_values(gt)
    p, _, _ = band_values(pred)
    n = h * w
    total = 0.0
    for b in range(len(g)):
        gb, pb = g[b], p[b]
        se = 0.0
        mu = 0.0
        for i in range(n):
            d = pb[i] - gb[i]
            se += d * d
            mu += gb[i]
        total += math.sqrt(se / n) / (mu / n)
    return total / len(g)


def sam_oracle(gt, pred):
    g, h, w = band_values(gt)
    p, _, _ = band_values(pred)
    g0, g1, g2 = g
    p0, p1, p2 = p
    total = 0.0
    count = 0
    for i in range(h * w):
        x0, x1, x2 = g0[i], g1[i], g2[i]
        y0, y1, y2 = p0[i], p1[i], p2[i]
        nx = math.sqrt(x0 * x0 + x1 * x1 + x2 * x2)
        ny = math.sqrt(y0 * y0 + y1 * y1 + y2 * y2)
        if nx == 0.0 or ny == 0.0:
            continue
        cosang = (x0 * y0 + x1 * y1 + x2 * y2) / (nx * ny)
        cosang = max(-1.0, min(1.0, cosang))
        total += math.acos(cosang)
        count += 1
    return math.degrees(total / count)


def q4_oracle(gt, pred, block=32):
    g, h, w = band_values(gt)
    p, _, _ = band_values(pred)
    if h < block or w < block:
        raise ValueError("patch too small")
    g0, g1, g2 = g
    p0, p1, p2 = p
    values = []
    n = block * block
    for bi in range(h // block):
        for bj in range(w // block):
            idx = [(bi * block + i) * w + (bj * block + j)
                   for i in range(block) for j in range(block)]
            # quaternion components: (band1, band2, band3, 0)
            a0 = [g0[t] for t in idx]
            a1 = [g1[t] for t in idx]
            a2 = [g2[t] for t in idx]
            b0 = [p0[t] for t in idx]
            b1 = [p1[t] for t in idx]
            b2 = [p2[t] for t in idx]
            m10, m11, m12 = sum(a0) / n, sum(a1) / n, sum(a2) / n
            m20, m21, m22 = sum(b0) / n, sum(b1) / n, sum(b2) / n
            var1 = var2 = 0.0
            c0 = c1 = c2 = c3 = 0.0
            for t in range(n):
                w1 = a0[t] - m10
                x1 = a1[t] - m11
                y1 = a2[t] - m12
                w2 = b0[t] - m20
                x2 = -(b1[t] - m21)   # conjugate of the second quaternion
                y2 = -(b2[t] - m22)
                var1 += w1 * w1 + x1 * x1 + y1 * y1
                var2 += w2 * w2 + x2 * x2 + y2 * y2
                # (w1 + i x1 + j y1 + k 0) * (w2 + i x2 + j y2 + k 0)
                c0 += w1 * w2 - x1 * x2 - y1 * y2
                c1 += w1 * x2 + x1 * w2
                c2 += w1 * y2 + y1 * w2
                c3 += x1 * y2 - y1 * x2
            var1 /= n
            var2 /= n
            cov_mod = math.sqrt(c0 * c0 + c1 * c1 + c2 * c2 + c3 * c3) / n
            mu1_sq = m10 * m10 + m11 * m11 + m12 * m12
            mu2_sq = m20 * m20 + m21 * m21 + m22 * m22
            denom = (var1 + var2) * (mu1_sq + mu2_sq)
            if denom == 0.0:
                continue
            values.append(4.0 * cov_mod * math.sqrt(mu1_sq * mu2_sq) / denom)
    if not values:
        raise ValueError("all blocks degenerate")
    return sum(values) / len(values)


def ols_oracle(x, y):
    """Slope and intercept of the least-squares line through (x, y)."""
    xs = [float(v) for v in x]
    ys = [float(v) for v in y]
    n = len(xs)
    mx = sum(xs) / n
    my = sum(ys) / n
    sxx = 0.0
    sxy = 0.0
    for a, b in zip(xs, ys):
        da = a - mx
        sxx += da * da
        sxy += da * (b - my)
    slope = sxy / sxx
    return slope, my - slope * mx


def r2_oracle(x, y):
    xs = [float(v) for v in x]
    ys = [float(v) for v in y]
    slope, intercept = ols_oracle(xs, ys)
    my = sum(ys) / len(ys)
    ss_res = 0.0
    ss_tot = 0.0
    for a, b in zip(xs, ys):
        r = b - (slope * a + intercept)
        ss_res += r * r
        d = b - my
        ss_tot += d * d
    if ss_tot == 0.0:
        return 1.0
    return 1.0 - ss_res / ss_tot


def lr_no_bias_oracle(x, ys_band):
    """Closed-form slope through the origin for one band."""
    num = sum(a * b for a, b in zip(x, ys_band))
    den = sum(a * a for a in x)
    return num / den
