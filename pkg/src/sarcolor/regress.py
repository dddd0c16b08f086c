"""Spectral baselines: band replication, per-band linear regression, and a
small tansig MLP fitted with a damped Gauss-Newton (Levenberg-Marquardt) loop.

All fitting runs in float64 on flattened pixel vectors.  The MLP standardizes
inputs and targets internally for conditioning; models de-standardize on
application, so callers only ever see raw pixel units.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataio import RasterPatch

LM_LAMBDA_INIT = 1e-2
LM_LAMBDA_MIN = 1e-12
LM_LAMBDA_MAX = 1e12
LM_MAX_ITER = 200
LM_REL_TOL = 1e-7
LM_STALL_WINDOW = 5
_JACOBIAN_CHUNK = 16384


def nocol(sar: RasterPatch) -> RasterPatch:
    """Replicate the single SAR band across three channels."""
    if sar.channels != 1:
        raise ValueError(f"nocol expects 1 channel, got {sar.channels}")
    return RasterPatch(np.repeat(sar.data, 3, axis=0), bit_depth=sar.bit_depth)


@dataclass
class LinearModel:
    """Per-band affine map band_i = w[i] * x + b[i]."""

    weights: np.ndarray  # (3,)
    biases: np.ndarray   # (3,)
    with_bias: bool = True

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(3)
        self.biases = np.asarray(self.biases, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.biases))):
            raise ValueError("non-finite linear model coefficients")


def fit_lr(x, y, with_bias: bool = True) -> LinearModel:
    """Closed-form least squares per band.

    x: flattened SAR samples (n,); y: targets (n, 3).  With ``with_bias=False``
    the intercepts are pinned at zero and the slope is sum(xy)/sum(x^2).
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).reshape(x.size, 3)
    if x.size < 2:
        raise ValueError("fit_lr: need at least 2 samples")
    if with_bias:
        mx = x.mean()
        vx = ((x - mx) ** 2).mean()
        if vx == 0.0:
            raise ValueError("degenerate x: zero variance")
        w = ((x - mx)[:, None] * (y - y.mean(axis=0))).mean(axis=0) / vx
        b = y.mean(axis=0) - w * mx
    else:
        sxx = float((x ** 2).sum())
        if sxx == 0.0:
            raise ValueError("degenerate x: all zeros")
        w = (x[:, None] * y).sum(axis=0) / sxx
        b = np.zeros(3)
    return LinearModel(weights=w, biases=b, with_bias=with_bias)


def lr_loss(model: LinearModel, x, y) -> float:
    """Mean squared error of the model over all bands."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).reshape(x.size, 3)
    pred = x[:, None] * model.weights + model.biases
    return float(((pred - y) ** 2).mean())


def apply_lr(model: LinearModel, sar: RasterPatch) -> RasterPatch:
    if sar.channels != 1:
        raise ValueError("apply_lr expects a 1-channel patch")
    band = sar.data[0].astype(np.float64)
    out = model.weights[:, None, None] * band[None] + model.biases[:, None, None]
    return RasterPatch(out, bit_depth=sar.bit_depth)


def tansig(x):
    """Scaled logistic transfer 2/(1+exp(-2x)) - 1, evaluated as tanh(x).

    tanh is the same function and keeps odd symmetry exact in floating point.
    """
    return np.tanh(x)


def _tansig_deriv(a):
    # derivative in terms of the activation value: 1 - tansig(x)^2
    return 1.0 - a * a


@dataclass
class LmState:
    """Damping and loss trace of one Levenberg-Marquardt run."""

    damping: float = LM_LAMBDA_INIT
    loss_history: list[float] = field(default_factory=list)

    def clamp(self):
        self.damping = float(min(max(self.damping, LM_LAMBDA_MIN), LM_LAMBDA_MAX))


@dataclass
class MlpModel:
    """1 -> hidden -> 3 MLP with tansig hidden units and identity output."""

    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    x_stats: tuple[float, float] = (0.0, 1.0)       # input mean, std
    y_stats: tuple[np.ndarray, np.ndarray] = None   # target means, stds (3,)
    seed: int = 0
    lm: LmState = field(default_factory=LmState)

    def __post_init__(self):
        if self.layer_sizes[0] != 1 or self.layer_sizes[-1] != 3:
            raise ValueError("layer_sizes must run from 1 input to 3 outputs")
        n_hidden = len(self.layer_sizes) - 2
        if not (1 <= n_hidden <= 3):
            raise ValueError(f"hidden layer count must be 1..3, got {n_hidden}")
        if any(s < 1 for s in self.layer_sizes):
            raise ValueError("layer sizes must be >= 1")
        if self.y_stats is None:
            self.y_stats = (np.zeros(3), np.ones(3))

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def forward_std(self, xs: np.ndarray) -> np.ndarray:
        """Forward pass on standardized inputs (n,) -> standardized outputs (n, 3)."""
        a = xs[:, None]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w.T + b
            a = z if i == last else tansig(z)
        return a

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Raw-unit prediction for raw-unit inputs (n,) -> (n, 3)."""
        xm, xs = self.x_stats
        ym, ys = self.y_stats
        out = self.forward_std((np.asarray(x, dtype=np.float64).ravel() - xm) / xs)
        return out * ys + ym


def _init_mlp(layer_sizes, rng) -> tuple[list[np.ndarray], list[np.ndarray]]:
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        weights.append(rng.uniform(-0.5, 0.5, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-0.5, 0.5, size=fan_out))
    return weights, biases


def _pack(weights, biases) -> np.ndarray:
    return np.concatenate([a.ravel() for pair in zip(weights, biases) for a in pair])


def _unpack(theta, layer_sizes):
    weights, biases = [], []
    off = 0
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        weights.append(theta[off:off + fan_out * fan_in].reshape(fan_out, fan_in))
        off += fan_out * fan_in
        biases.append(theta[off:off + fan_out])
        off += fan_out
    return weights, biases


def _forward_all(xs, weights, biases):
    """Forward pass keeping every activation; returns list [a0, a1, ..., aL]."""
    acts = [xs[:, None]]
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        z = acts[-1] @ w.T + b
        acts.append(z if i == last else tansig(z))
    return acts


def _jacobian_blocks(acts, weights):
    """Jacobian of the 3 outputs w.r.t. all parameters for one chunk.

    Returns (n_chunk, 3, P): backpropagates one unit per output channel.
    """
    n = acts[0].shape[0]
    L = len(weights)
    cols = []
    for k in range(3):
        g = np.zeros((n, weights[-1].shape[0]))
        g[:, k] = 1.0
        grads = []
        for layer in range(L - 1, -1, -1):
            a_prev = acts[layer]
            gw = g[:, :, None] * a_prev[:, None, :]       # (n, out, in)
            gb = g
            grads.append((gw.reshape(n, -1), gb))
            if layer > 0:
                g = (g @ weights[layer]) * _tansig_deriv(acts[layer])
        grads.reverse()
        cols.append(np.concatenate([np.concatenate(pair, axis=1) for pair in grads], axis=1))
    return np.stack(cols, axis=1)


def _normal_equations(xs, ys, weights, biases):
    """Accumulate J^T J, J^T r, and the loss over chunks."""
    n = xs.size
    p = sum(w.size + b.size for w, b in zip(weights, biases))
    jtj = np.zeros((p, p))
    jtr = np.zeros(p)
    sq_sum = 0.0
    for start in range(0, n, _JACOBIAN_CHUNK):
        xs_c = xs[start:start + _JACOBIAN_CHUNK]
        ys_c = ys[start:start + _JACOBIAN_CHUNK]
        acts = _forward_all(xs_c, weights, biases)
        resid = acts[-1] - ys_c                        # (nc, 3)
        jac = _jacobian_blocks(acts, weights)          # (nc, 3, P)
        jf = jac.reshape(-1, p)
        rf = resid.reshape(-1)
        jtj += jf.T @ jf
        jtr += jf.T @ rf
        sq_sum += float(rf @ rf)
    return jtj, jtr, sq_sum / (3 * n)


def _mse(xs, ys, weights, biases) -> float:
    acts = _forward_all(xs, weights, biases)
    return float(((acts[-1] - ys) ** 2).mean())


def fit_nl(x, y, hidden_sizes, seed: int = 0,
           max_iter: int = LM_MAX_ITER) -> MlpModel:
    """Fit the MLP by Levenberg-Marquardt on mean squared error.

    Additive damping lambda*diag(J^T J); lambda /10 on an accepted step and
    *10 on a rejected one.  Accepted steps never increase the loss.  Stops
    when the relative improvement over 5 iterations drops below 1e-7, after
    ``max_iter`` iterations, or when damping saturates.
    """
    hidden_sizes = [int(h) for h in hidden_sizes]
    if not (1 <= len(hidden_sizes) <= 3):
        raise ValueError(f"hidden layer count must be 1..3, got {len(hidden_sizes)}")
    if any(h < 1 for h in hidden_sizes):
        raise ValueError("hidden layer sizes must be >= 1")
    layer_sizes = [1] + hidden_sizes + [3]
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).reshape(x.size, 3)

    rng = np.random.default_rng(seed)
    weights, biases = _init_mlp(layer_sizes, rng)
    n_params = sum(w.size + b.size for w, b in zip(weights, biases))
    if x.size < n_params:
        raise ValueError(f"need at least {n_params} samples, got {x.size}")

    xm, xstd = float(x.mean()), float(x.std())
    if xstd == 0.0:
        raise ValueError("degenerate x: zero variance")
    ym = y.mean(axis=0)
    ystd = y.std(axis=0)
    ystd[ystd == 0.0] = 1.0
    xs = (x - xm) / xstd
    ys = (y - ym) / ystd

    theta = _pack(weights, biases)
    state = LmState()
    loss = _mse(xs, ys, weights, biases)
    if not np.isfinite(loss):
        raise ValueError("non-finite loss at initialization")
    state.loss_history.append(loss)

    for _ in range(max_iter):
        jtj, jtr, loss = _normal_equations(xs, ys, weights, biases)
        diag = np.diag(jtj).copy()
        diag[diag == 0.0] = 1e-12  # rank collapse: keep damping effective
        accepted = False
        for _try in range(60):
            a = jtj + state.damping * np.diag(diag)
            try:
                step = np.linalg.solve(a, -jtr)
            except np.linalg.LinAlgError:
                step = None
            if step is not None and np.all(np.isfinite(step)):
                w_new, b_new = _unpack(theta + step, layer_sizes)
                new_loss = _mse(xs, ys, w_new, b_new)
                if np.isfinite(new_loss) and new_loss < loss:
                    theta = theta + step
                    weights, biases = w_new, b_new
                    state.damping /= 10.0
                    state.clamp()
                    state.loss_history.append(new_loss)
                    accepted = True
                    break
            if state.damping >= LM_LAMBDA_MAX:
                break
            state.damping *= 10.0
            state.clamp()
        if not accepted:
            break
        hist = state.loss_history
        if len(hist) > LM_STALL_WINDOW:
            prev = hist[-1 - LM_STALL_WINDOW]
            if prev - hist[-1] < LM_REL_TOL * max(prev, 1e-30):
                break

    return MlpModel(layer_sizes=layer_sizes, weights=weights, biases=biases,
                    x_stats=(xm, xstd), y_stats=(ym, ystd), seed=seed, lm=state)


def apply_nl(model: MlpModel, sar: RasterPatch) -> RasterPatch:
    if sar.channels != 1:
        raise ValueError("apply_nl expects a 1-channel patch")
    flat = sar.data[0].astype(np.float64).ravel()
    out = model.predict(flat).T.reshape(3, sar.height, sar.width)
    if not np.all(np.isfinite(out)):
        raise ValueError("non-finite MLP output")
    return RasterPatch(out, bit_depth=sar.bit_depth)


# --- model files (.scm): JSON header line + named little-endian float64 payload

def save_model(model, path, seed: int = 0):
    """Serialize a nocol marker, LinearModel, or MlpModel."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays: list[tuple[str, np.ndarray]] = []
    if model is None or model == "nocol":
        header = {"kind": "nocol", "seed": seed}
    elif isinstance(model, LinearModel):
        header = {"kind": "lr", "with_bias": model.with_bias, "seed": seed}
        arrays = [("weights", model.weights), ("biases", model.biases)]
    elif isinstance(model, MlpModel):
        header = {"kind": "nl", "layer_sizes": model.layer_sizes, "seed": model.seed,
                  "x_stats": list(model.x_stats)}
        arrays = [("y_mean", model.y_stats[0]), ("y_std", model.y_stats[1])]
        for i, (w, b) in enumerate(zip(model.weights, model.biases)):
            arrays.append((f"w{i}", w))
            arrays.append((f"b{i}", b))
    else:
        raise TypeError(f"cannot serialize model of type {type(model)!r}")
    header["arrays"] = [{"name": n, "shape": list(a.shape)} for n, a in arrays]
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_model(path):
    path = Path(path)
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        arrays = {}
        for meta in header["arrays"]:
            count = int(np.prod(meta["shape"])) if meta["shape"] else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise ValueError(f"truncated model payload in {path}")
            arrays[meta["name"]] = np.frombuffer(buf, dtype="<f8").reshape(meta["shape"]).copy()
    kind = header["kind"]
    if kind == "nocol":
        return "nocol"
    if kind == "lr":
        return LinearModel(weights=arrays["weights"], biases=arrays["biases"],
                           with_bias=bool(header["with_bias"]))
    if kind == "nl":
        sizes = [int(s) for s in header["layer_sizes"]]
        n_layers = len(sizes) - 1
        return MlpModel(
            layer_sizes=sizes,
            weights=[arrays[f"w{i}"] for i in range(n_layers)],
            biases=[arrays[f"b{i}"] for i in range(n_layers)],
            x_stats=tuple(header["x_stats"]),
            y_stats=(arrays["y_mean"], arrays["y_std"]),
            seed=int(header["seed"]),
        )
    raise ValueError(f"unknown model kind {kind!r} in {path}")


def apply_model(model, sar: RasterPatch) -> RasterPatch:
    """Apply any spectral baseline model to a SAR patch."""
    if model == "nocol":
        return nocol(sar)
    if isinstance(model, LinearModel):
        return apply_lr(model, sar)
    if isinstance(model, MlpModel):
        return apply_nl(model, sar)
    raise TypeError(f"unknown model type {type(model)!r}")
