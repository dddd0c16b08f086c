"""Minimal reverse-mode differentiation over 4-D (batch, channel, height, width)
tensors, with exactly the operator set the convolutional colorizers need, plus
Adam and a finite-difference gradient checker.

Forward passes record parent links and backward closures on the output tensor;
``backward`` topologically sorts that implicit graph from the loss and walks it
once in reverse, accumulating gradients with ``+=`` so tensors used several
times receive the sum of their contributions.  Convolutions are im2col matmuls;
the transposed convolution forward is exactly the conv2d backward-data scatter,
which makes the adjoint identity hold to rounding.

Everything is single-threaded-deterministic.  Float32 is the working precision;
pass float64 arrays (as gradcheck does) for strict finite-difference testing.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_grad_enabled = True


@contextmanager
def no_grad():
    """Run forward passes without recording the graph."""
    global _grad_enabled
    saved = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = saved


class Tensor4:
    """A 4-D tensor with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_done")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.ndim != 4:
            raise ValueError(f"Tensor4 requires 4-D data, got shape {arr.shape}")
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._done = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor4":
        return Tensor4(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError("item() on non-scalar tensor")
        return float(self.data.reshape(()))

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, c):
        return scale(self, c)

    __rmul__ = __mul__

    def __repr__(self):
        return f"Tensor4(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def _make(out_data, parents, backward_fn) -> Tensor4:
    out = Tensor4(out_data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _accum(tensor: Tensor4, grad: np.ndarray):
    if tensor.grad is None:
        # backward closures hand over fresh arrays (or dead-buffer views), so
        # adopting them without a copy is safe; only fix a dtype mismatch
        tensor.grad = grad if grad.dtype == tensor.dtype else grad.astype(tensor.dtype)
    else:
        tensor.grad += grad


def backward(loss: Tensor4):
    """Reverse-mode sweep from a scalar loss; fills .grad on tracked tensors."""
    if loss.data.size != 1:
        raise ValueError("backward requires a scalar loss")
    if loss._done:
        raise RuntimeError("backward already ran on this graph; rebuild the forward pass")
    loss._done = True
    if not loss.requires_grad:
        return
    topo: list[Tensor4] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    _accum(loss, np.ones_like(loss.data))
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# --- raw correlation helpers shared by conv2d and conv_transpose2d ------------

def _pad_hw(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def _out_size(size: int, k: int, stride: int, pad: int) -> int:
    span = size + 2 * pad - k
    if span < 0 or span % stride != 0:
        raise ValueError(
            f"non-integral output size: (({size} + 2*{pad} - {k}) / {stride}) + 1")
    return span // stride + 1


# Above this size the materialized im2col matrix thrashes cache; accumulating
# one kernel offset at a time is faster despite the extra dispatch overhead.
_COL_BYTES_LIMIT = 24 * 2 ** 20


def _use_offsets(n, c, k, oh, ow, itemsize) -> bool:
    return n * oh * ow * c * k * k * itemsize > _COL_BYTES_LIMIT


def _corr(x: np.ndarray, kernels: np.ndarray, stride: int, pad: int) -> np.ndarray:
    """Strided cross-correlation: (n,c,h,w) x (o,c,k,k) -> (n,o,oh,ow)."""
    n, c, h, w = x.shape
    o, c2, k, _ = kernels.shape
    if c != c2:
        raise ValueError(f"channel mismatch: input has {c}, kernels expect {c2}")
    oh = _out_size(h, k, stride, pad)
    ow = _out_size(w, k, stride, pad)
    xp = _pad_hw(x, pad)
    if _use_offsets(n, c, k, oh, ow, x.itemsize):
        acc = np.zeros((n, o, oh, ow), dtype=x.dtype)
        for i in range(k):
            for j in range(k):
                xv = xp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride]
                acc += np.einsum("oc,nchw->nohw", kernels[:, :, i, j], xv, optimize=True)
        return acc
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    col = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * k * k)
    out = col @ kernels.reshape(o, -1).T
    return out.reshape(n, oh, ow, o).transpose(0, 3, 1, 2)


def _corr_input_grad(g: np.ndarray, kernels: np.ndarray, stride: int, pad: int,
                     hw: tuple[int, int]) -> np.ndarray:
    """Adjoint of _corr in its input: scatter (n,o,oh,ow) back to (n,c,h,w)."""
    n, o, oh, ow = g.shape
    o2, c, k, _ = kernels.shape
    if o != o2:
        raise ValueError(f"channel mismatch: input has {o}, kernels expect {o2}")
    h, w = hw
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=g.dtype)
    if _use_offsets(n, c, k, oh, ow, g.itemsize):
        for i in range(k):
            for j in range(k):
                contrib = np.einsum("nohw,oc->nchw", g, kernels[:, :, i, j], optimize=True)
                out[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += contrib
    else:
        gcol = g.transpose(0, 2, 3, 1).reshape(n * oh * ow, o) @ kernels.reshape(o, -1)
        gcol = gcol.reshape(n, oh, ow, c, k, k).transpose(0, 3, 4, 5, 1, 2)
        for i in range(k):
            for j in range(k):
                out[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += gcol[:, :, i, j]
    if pad:
        out = out[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(out)


def _corr_kernel_grad(x: np.ndarray, g: np.ndarray, stride: int, pad: int,
                      k: int) -> np.ndarray:
    """Kernel gradient of _corr: (n,c,h,w), (n,o,oh,ow) -> (o,c,k,k)."""
    n, c, h, w = x.shape
    _, o, oh, ow = g.shape
    xp = _pad_hw(x, pad)
    if _use_offsets(n, c, k, oh, ow, x.itemsize):
        gk = np.empty((o, c, k, k), dtype=x.dtype)
        for i in range(k):
            for j in range(k):
                xv = xp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride]
                gk[:, :, i, j] = np.einsum("nohw,nchw->oc", g, xv, optimize=True)
        return gk
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    col = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * k * k)
    gk = g.transpose(1, 0, 2, 3).reshape(o, n * oh * ow) @ col
    return gk.reshape(o, c, k, k)


def _check_bias(bias, channels: int):
    if bias is not None and bias.shape != (1, channels, 1, 1):
        raise ValueError(f"bias must have shape (1, {channels}, 1, 1), got {bias.shape}")


def conv2d(x: Tensor4, kernels: Tensor4, bias: Tensor4 = None,
           stride: int = 1, pad: int = 0) -> Tensor4:
    """Strided 2-D correlation with (out_c, in_c, k, k) kernels."""
    out = _corr(x.data, kernels.data, stride, pad)
    _check_bias(bias, kernels.data.shape[0])
    if bias is not None:
        out = out + bias.data
    k = kernels.data.shape[2]
    hw = (x.data.shape[2], x.data.shape[3])
    parents = (x, kernels) if bias is None else (x, kernels, bias)

    def bwd(g):
        if x.requires_grad:
            _accum(x, _corr_input_grad(g, kernels.data, stride, pad, hw))
        if kernels.requires_grad:
            _accum(kernels, _corr_kernel_grad(x.data, g, stride, pad, k))
        if bias is not None and bias.requires_grad:
            _accum(bias, g.sum(axis=(0, 2, 3)).reshape(1, -1, 1, 1))

    return _make(out, parents, bwd)


def conv_transpose2d(x: Tensor4, kernels: Tensor4, bias: Tensor4 = None,
                     stride: int = 1, pad: int = 0) -> Tensor4:
    """Transposed convolution with (in_c, out_c, k, k) kernels.

    Its linear part is the exact adjoint of conv2d with the same kernels:
    out h = (h - 1) * stride - 2 * pad + k.
    """
    n, a, h, w = x.data.shape
    a2, b, k, _ = kernels.data.shape
    if a != a2:
        raise ValueError(f"channel mismatch: input has {a}, kernels expect {a2}")
    oh = (h - 1) * stride - 2 * pad + k
    ow = (w - 1) * stride - 2 * pad + k
    if oh < 1 or ow < 1:
        raise ValueError(f"non-positive output size {oh}x{ow}")
    # consistency: scattering x back through a conv of this geometry must be exact
    _out_size(oh, k, stride, pad)
    out = _corr_input_grad(x.data, kernels.data, stride, pad, (oh, ow))
    _check_bias(bias, b)
    if bias is not None:
        out = out + bias.data
    parents = (x, kernels) if bias is None else (x, kernels, bias)

    def bwd(g):
        if x.requires_grad:
            _accum(x, _corr(g, kernels.data, stride, pad))
        if kernels.requires_grad:
            _accum(kernels, _corr_kernel_grad(g, x.data, stride, pad, k))
        if bias is not None and bias.requires_grad:
            _accum(bias, g.sum(axis=(0, 2, 3)).reshape(1, -1, 1, 1))

    return _make(out, parents, bwd)


def batchnorm2d(x: Tensor4, gamma: Tensor4, beta: Tensor4,
                running_mean: np.ndarray, running_var: np.ndarray,
                training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor4:
    """Per-channel batch normalization.

    Train mode normalizes by batch statistics (population variance) and updates
    the running buffers in place; eval mode is a pure affine map using them.
    """
    n, c, h, w = x.data.shape
    if gamma.data.shape != (1, c, 1, 1) or beta.data.shape != (1, c, 1, 1):
        raise ValueError("gamma/beta must have shape (1, c, 1, 1)")
    if training:
        m = n * h * w
        if m == 1:
            raise ValueError("degenerate batchnorm statistics: one value per channel")
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mean = running_mean.astype(x.dtype)
        var = running_var.astype(x.dtype)
        m = None
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean.reshape(1, c, 1, 1)) * inv_std.reshape(1, c, 1, 1)
    out = gamma.data * xhat + beta.data

    def bwd(g):
        if gamma.requires_grad:
            _accum(gamma, (g * xhat).sum(axis=(0, 2, 3)).reshape(1, c, 1, 1))
        if beta.requires_grad:
            _accum(beta, g.sum(axis=(0, 2, 3)).reshape(1, c, 1, 1))
        if x.requires_grad:
            gx_hat = g * gamma.data
            if training:
                s1 = gx_hat.sum(axis=(0, 2, 3)).reshape(1, c, 1, 1)
                s2 = (gx_hat * xhat).sum(axis=(0, 2, 3)).reshape(1, c, 1, 1)
                gx = (gx_hat - s1 / m - xhat * s2 / m) * inv_std.reshape(1, c, 1, 1)
            else:
                gx = gx_hat * inv_std.reshape(1, c, 1, 1)
            _accum(x, gx)

    return _make(out, (x, gamma, beta), bwd)


def relu(x: Tensor4) -> Tensor4:
    mask = x.data > 0

    def bwd(g):
        if x.requires_grad:
            _accum(x, g * mask)

    return _make(np.where(mask, x.data, 0), (x,), bwd)


def leaky_relu(x: Tensor4, slope: float = 0.2) -> Tensor4:
    mask = x.data > 0

    def bwd(g):
        if x.requires_grad:
            _accum(x, g * np.where(mask, 1.0, slope).astype(x.dtype))

    return _make(np.where(mask, x.data, x.data * slope), (x,), bwd)


def tanh(x: Tensor4) -> Tensor4:
    out_data = np.tanh(x.data)

    def bwd(g):
        if x.requires_grad:
            _accum(x, g * (1.0 - out_data * out_data))

    return _make(out_data, (x,), bwd)


def sigmoid(x: Tensor4) -> Tensor4:
    out_data = _sigmoid_raw(x.data)

    def bwd(g):
        if x.requires_grad:
            _accum(x, g * out_data * (1.0 - out_data))

    return _make(out_data, (x,), bwd)


def _sigmoid_raw(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def concat_channels(a: Tensor4, b: Tensor4) -> Tensor4:
    if a.data.shape[0] != b.data.shape[0] or a.data.shape[2:] != b.data.shape[2:]:
        raise ValueError(f"concat shape mismatch: {a.shape} vs {b.shape}")
    ca = a.data.shape[1]

    def bwd(g):
        if a.requires_grad:
            _accum(a, g[:, :ca])
        if b.requires_grad:
            _accum(b, g[:, ca:])

    return _make(np.concatenate([a.data, b.data], axis=1), (a, b), bwd)


def add(a: Tensor4, b: Tensor4) -> Tensor4:
    if a.data.shape != b.data.shape:
        raise ValueError(f"add shape mismatch: {a.shape} vs {b.shape}")

    def bwd(g):
        if a.requires_grad:
            _accum(a, g)
        if b.requires_grad:
            _accum(b, g.copy())  # never hand the same buffer to two parents

    return _make(a.data + b.data, (a, b), bwd)


def scale(a: Tensor4, c: float) -> Tensor4:
    c = float(c)

    def bwd(g):
        if a.requires_grad:
            _accum(a, g * c)

    return _make(a.data * c, (a,), bwd)


def _scalar(value, like: np.ndarray) -> np.ndarray:
    return np.full((1, 1, 1, 1), value, dtype=like.dtype)


def l1_loss(pred: Tensor4, target: Tensor4) -> Tensor4:
    """Mean absolute difference; subgradient 0 where pred == target."""
    if pred.data.shape != target.data.shape:
        raise ValueError(f"l1_loss shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    count = diff.size

    def bwd(g):
        s = np.sign(diff) * (g.reshape(()) / count)
        if pred.requires_grad:
            _accum(pred, s)
        if target.requires_grad:
            _accum(target, -s)

    return _make(_scalar(np.abs(diff).mean(), pred.data), (pred, target), bwd)


def mse_loss(pred: Tensor4, target: Tensor4) -> Tensor4:
    """Mean squared difference."""
    if pred.data.shape != target.data.shape:
        raise ValueError(f"mse_loss shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    count = diff.size

    def bwd(g):
        s = diff * (2.0 * g.reshape(()) / count)
        if pred.requires_grad:
            _accum(pred, s)
        if target.requires_grad:
            _accum(target, -s)

    return _make(_scalar((diff * diff).mean(), pred.data), (pred, target), bwd)


def bce_with_logits(logits: Tensor4, label: float) -> Tensor4:
    """Mean binary cross-entropy against a constant 0/1 label, stable at large |logit|."""
    if label not in (0, 1, 0.0, 1.0):
        raise ValueError(f"label must be 0 or 1, got {label}")
    y = float(label)
    z = logits.data
    # max(z,0) - z*y + log(1+exp(-|z|))
    per_elem = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    count = z.size

    def bwd(g):
        if logits.requires_grad:
            _accum(logits, (_sigmoid_raw(z) - y) * (g.reshape(()) / count))

    return _make(_scalar(per_elem.mean(), z), (logits,), bwd)


def weighted_sum(x: Tensor4, weights: np.ndarray) -> Tensor4:
    """Scalar reduction sum(x * weights) against a constant weight array.

    Mainly a harness for gradient checking: it turns any op output into a
    scalar with informative, kink-free gradients.
    """
    w = np.asarray(weights)
    if w.shape != x.data.shape:
        raise ValueError(f"weighted_sum shape mismatch: {x.shape} vs {w.shape}")

    def bwd(g):
        if x.requires_grad:
            _accum(x, g.reshape(()) * w)

    return _make(_scalar((x.data * w).sum(), x.data), (x,), bwd)


# --- optimizer ----------------------------------------------------------------

@dataclass
class AdamState:
    """Per-parameter moment buffers plus the shared step counter."""

    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: list[Tensor4], state: AdamState):
    """One bias-corrected Adam update in place; missing gradients count as zero.

    Works through a single scratch buffer per parameter: these updates are
    memory-bandwidth bound at network scale.
    """
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for i, p in enumerate(params):
        g = p.grad
        m = state.m.get(i)
        if m is None:
            m = state.m[i] = np.zeros_like(p.data)
            state.v[i] = np.zeros_like(p.data)
        v = state.v[i]
        if g is None:
            m *= state.beta1
            v *= state.beta2
        else:
            buf = g * (1.0 - state.beta1)
            m *= state.beta1
            m += buf
            np.multiply(g, g, out=buf)
            buf *= 1.0 - state.beta2
            v *= state.beta2
            v += buf
        buf = v / c2
        np.sqrt(buf, out=buf)
        buf += state.eps
        np.divide(m, buf, out=buf)
        buf *= state.lr / c1
        p.data -= buf


class Adam:
    """Convenience wrapper binding a parameter list to an AdamState."""

    def __init__(self, params: list[Tensor4], lr: float = 1e-4,
                 beta1: float = 0.5, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def step(self):
        adam_step(self.params, self.state)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


# --- finite-difference gradient checking --------------------------------------

def gradcheck(fn, inputs: list[Tensor4], h: float = 1e-4,
              rtol: float = 1e-4, atol: float = 1e-6) -> float:
    """Compare analytic gradients of a scalar-valued fn against central differences.

    Inputs should be float64 tensors with requires_grad=True.  Returns the worst
    elementwise error max(|a - n| - atol - rtol*|n|, 0) over all inputs; 0 means
    every element passed.
    """
    for t in inputs:
        t.zero_grad()
    out = fn(*inputs)
    backward(out)
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
                for t in inputs]

    worst = 0.0
    for t, a in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        num = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            with no_grad():
                up = fn(*inputs).item()
            flat[i] = orig - h
            with no_grad():
                down = fn(*inputs).item()
            flat[i] = orig
            num[i] = (up - down) / (2.0 * h)
        num = num.reshape(t.data.shape)
        err = np.abs(a - num) - atol - rtol * np.abs(num)
        worst = max(worst, float(err.max()))
    return worst


def _rand(rng, shape, keep_off_kinks: bool = False) -> Tensor4:
    data = rng.standard_normal(shape)
    if keep_off_kinks:
        # finite differences near activation kinks are meaningless
        small = np.abs(data) < 0.2
        data = data + np.where(small, np.sign(data) * 0.25 + (data == 0) * 0.25, 0.0)
    return Tensor4(data, requires_grad=True)


def op_gradcheck_cases(seed: int = 0):
    """Named scalar-valued closures over random small tensors, one per operator."""
    rng = np.random.default_rng(seed)
    w = lambda shape: rng.standard_normal(shape)

    cases = []

    x = _rand(rng, (2, 3, 6, 6))
    k = _rand(rng, (4, 3, 4, 4))
    b = _rand(rng, (1, 4, 1, 1))
    cases.append(("conv2d_s2p1",
                  lambda x, k, b, wo=w((2, 4, 3, 3)):
                      weighted_sum(conv2d(x, k, b, 2, 1), wo),
                  [x, k, b]))

    x = _rand(rng, (2, 2, 5, 5))
    k = _rand(rng, (3, 2, 3, 3))
    b = _rand(rng, (1, 3, 1, 1))
    cases.append(("conv2d_s1p0",
                  lambda x, k, b, wo=w((2, 3, 3, 3)):
                      weighted_sum(conv2d(x, k, b, 1, 0), wo),
                  [x, k, b]))

    x = _rand(rng, (2, 4, 3, 3))
    k = _rand(rng, (4, 3, 4, 4))
    b = _rand(rng, (1, 3, 1, 1))
    cases.append(("conv_transpose2d_s2p1",
                  lambda x, k, b, wo=w((2, 3, 6, 6)):
                      weighted_sum(conv_transpose2d(x, k, b, 2, 1), wo),
                  [x, k, b]))

    x = _rand(rng, (3, 2, 4, 4))
    gm = _rand(rng, (1, 2, 1, 1))
    bt = _rand(rng, (1, 2, 1, 1))
    rm = np.zeros(2)
    rv = np.ones(2)
    cases.append(("batchnorm2d_train",
                  lambda x, gm, bt, wo=w((3, 2, 4, 4)):
                      weighted_sum(batchnorm2d(x, gm, bt, rm.copy(), rv.copy(), True), wo),
                  [x, gm, bt]))
    x = _rand(rng, (3, 2, 4, 4))
    gm = _rand(rng, (1, 2, 1, 1))
    bt = _rand(rng, (1, 2, 1, 1))
    rm_e = rng.standard_normal(2) * 0.1
    rv_e = np.abs(rng.standard_normal(2)) + 0.5
    cases.append(("batchnorm2d_eval",
                  lambda x, gm, bt, wo=w((3, 2, 4, 4)):
                      weighted_sum(batchnorm2d(x, gm, bt, rm_e, rv_e, False), wo),
                  [x, gm, bt]))

    x = _rand(rng, (2, 2, 4, 4), keep_off_kinks=True)
    cases.append(("relu",
                  lambda x, wo=w((2, 2, 4, 4)): weighted_sum(relu(x), wo), [x]))
    x = _rand(rng, (2, 2, 4, 4), keep_off_kinks=True)
    cases.append(("leaky_relu",
                  lambda x, wo=w((2, 2, 4, 4)): weighted_sum(leaky_relu(x, 0.2), wo), [x]))
    x = _rand(rng, (2, 2, 4, 4))
    cases.append(("tanh",
                  lambda x, wo=w((2, 2, 4, 4)): weighted_sum(tanh(x), wo), [x]))
    x = _rand(rng, (2, 2, 4, 4))
    cases.append(("sigmoid",
                  lambda x, wo=w((2, 2, 4, 4)): weighted_sum(sigmoid(x), wo), [x]))

    a = _rand(rng, (2, 2, 3, 3))
    b2 = _rand(rng, (2, 3, 3, 3))
    cases.append(("concat_channels",
                  lambda a, b2, wo=w((2, 5, 3, 3)):
                      weighted_sum(concat_channels(a, b2), wo),
                  [a, b2]))

    a = _rand(rng, (2, 3, 4, 4))
    b2 = _rand(rng, (2, 3, 4, 4))
    cases.append(("add",
                  lambda a, b2, wo=w((2, 3, 4, 4)): weighted_sum(add(a, b2), wo), [a, b2]))
    a = _rand(rng, (2, 3, 4, 4))
    cases.append(("scale",
                  lambda a, wo=w((2, 3, 4, 4)): weighted_sum(scale(a, -1.7), wo), [a]))

    p = _rand(rng, (2, 3, 4, 4))
    t1 = Tensor4(rng.standard_normal((2, 3, 4, 4)) + 3.0)  # keep |diff| off zero
    cases.append(("l1_loss", lambda p, t=t1: l1_loss(p, t), [p]))
    p = _rand(rng, (2, 3, 4, 4))
    t2 = Tensor4(rng.standard_normal((2, 3, 4, 4)))
    cases.append(("mse_loss", lambda p, t=t2: mse_loss(p, t), [p]))

    z = _rand(rng, (2, 1, 5, 5))
    cases.append(("bce_with_logits_0", lambda z: bce_with_logits(z, 0), [z]))
    z = _rand(rng, (2, 1, 5, 5))
    cases.append(("bce_with_logits_1", lambda z: bce_with_logits(z, 1), [z]))

    return cases


def run_gradcheck_suite(seed: int = 0, h: float = 1e-4,
                        rtol: float = 1e-4, atol: float = 1e-6) -> list[tuple[str, float]]:
    """Gradcheck every operator on random small shapes; returns (name, excess error)."""
    results = []
    for name, fn, inputs in op_gradcheck_cases(seed):
        results.append((name, gradcheck(fn, inputs, h=h, rtol=rtol, atol=atol)))
    return results
