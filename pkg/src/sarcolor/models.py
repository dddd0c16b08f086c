"""Convolutional colorizers: a plain CNN trained on a pixel loss and a U-Net
conditional GAN with a patch-logit discriminator, plus checkpointing.

Architecture conventions (recorded in every checkpoint):
  - encoder blocks are conv(k4, s2, p1) -> leaky ReLU(0.2) -> batchnorm, with a
    bare conv for the first block and no batchnorm at the bottleneck;
  - decoder blocks are ReLU -> deconv(k4, s2, p1) -> batchnorm, the final block
    swapping batchnorm for tanh; skip connections concatenate the encoder block
    of matching spatial size ahead of every decoder block after the first;
  - the discriminator stacks five k4 convs (strides 2,2,2,1,1; channels
    64,128,256,512,1); the first block has no normalization, the last is a bare
    conv emitting logits;
  - no dropout anywhere; weights are N(0, 0.02), batchnorm gains N(1, 0.02).

Training is deterministic given the config seed, single threaded, float32.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor4
from .dataio import Manifest, RasterPatch, iterate_samples

LEAKY_SLOPE = 0.2
INIT_STD = 0.02
DIVERGENCE_LIMIT = 1e3
GAN_DEPTHS = (6, 7, 8)


# --- specs and config ----------------------------------------------------------

@dataclass
class CnnSpec:
    """Same-padding conv stack; ReLU between layers, nothing after the last."""

    kernel_sizes: tuple = (9, 5, 1, 5)
    filters: tuple = (64, 32, 32, 3)

    def __post_init__(self):
        self.kernel_sizes = tuple(int(k) for k in self.kernel_sizes)
        self.filters = tuple(int(f) for f in self.filters)
        if len(self.kernel_sizes) != len(self.filters):
            raise ValueError("kernel_sizes and filters must have equal length")
        if not self.kernel_sizes:
            raise ValueError("spec needs at least one layer")
        if self.filters[-1] != 3:
            raise ValueError(f"last filter count must be 3, got {self.filters[-1]}")
        if any(k < 1 or k % 2 == 0 for k in self.kernel_sizes):
            raise ValueError("kernel sizes must be odd (same padding)")
        if any(f < 1 for f in self.filters):
            raise ValueError("filter counts must be >= 1")


@dataclass
class GanSpec:
    """U-Net generator geometry; channels double from base, capped at max."""

    depth: int = 8
    base_channels: int = 64
    max_channels: int = 512

    def __post_init__(self):
        if self.depth < 2:
            raise ValueError(f"generator depth must be >= 2, got {self.depth}")

    def encoder_channels(self) -> list[int]:
        return [min(self.base_channels * 2 ** i, self.max_channels) for i in range(self.depth)]


DISC_CHANNELS = (64, 128, 256, 512, 1)
DISC_STRIDES = (2, 2, 2, 1, 1)


@dataclass
class TrainConfig:
    """All optimization hyperparameters for the learned colorizers."""

    method: str = "cgan"          # cnn | cgan
    batch: int = 8
    lr: float = 1e-4
    epochs: int = 300
    max_steps: int = 0            # 0: run epochs to completion
    alpha: float = 210.0          # pixel-loss weight
    beta: float = 0.5             # discriminator loss weight
    seed: int = 0
    bit_depth: int = 12
    loss: str = "l1"              # cnn pixel loss: l1 | l2
    use_gan: bool = True          # False: generator trained on pixel loss only
    cnn_kernels: tuple = (9, 5, 1, 5)
    cnn_filters: tuple = (64, 32, 32, 3)
    gan_depth: int = 8
    gan_base_channels: int = 64
    gan_max_channels: int = 512
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999

    def __post_init__(self):
        self.cnn_kernels = tuple(int(k) for k in self.cnn_kernels)
        self.cnn_filters = tuple(int(f) for f in self.cnn_filters)
        if self.method not in ("cnn", "cgan"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be >= 0")
        if self.loss not in ("l1", "l2"):
            raise ValueError(f"cnn loss must be l1 or l2, got {self.loss!r}")
        if self.method == "cgan" and self.gan_depth not in GAN_DEPTHS:
            raise ValueError(f"generator depth must be one of {GAN_DEPTHS}, got {self.gan_depth}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)

    @classmethod
    def from_json_file(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# --- normalization between raster units and network units ----------------------

def normalize_array(arr: np.ndarray, p: int) -> np.ndarray:
    """[0, 2**p] -> [-1, 1] (float32)."""
    half = float(2 ** (p - 1))
    return (arr.astype(np.float32) / half) - np.float32(1.0)


def denormalize_array(arr: np.ndarray, p: int) -> np.ndarray:
    half = float(2 ** (p - 1))
    return (arr.astype(np.float32) + np.float32(1.0)) * half


def normalize_in(sar: RasterPatch, p: int) -> Tensor4:
    """One patch to a (1, c, h, w) network tensor in [-1, 1]."""
    return Tensor4(normalize_array(sar.data, p)[None])


def denormalize_out(t: Tensor4, p: int) -> RasterPatch:
    """Network output back to raster units; inverse of normalize_in."""
    if t.shape[0] != 1:
        raise ValueError("denormalize_out expects a single-sample tensor")
    return RasterPatch(denormalize_array(t.data[0], p), bit_depth=p)


# --- parameter blocks -----------------------------------------------------------

def _gauss(rng, shape, mean=0.0, std=INIT_STD) -> np.ndarray:
    out = rng.standard_normal(shape, dtype=np.float32)
    out *= std
    if mean:
        out += mean
    return out


def _bn_params(rng, c: int) -> dict:
    return {
        "gamma": Tensor4(_gauss(rng, (1, c, 1, 1), mean=1.0), requires_grad=True),
        "beta": Tensor4(np.zeros((1, c, 1, 1), dtype=np.float32), requires_grad=True),
        "rmean": np.zeros(c, dtype=np.float32),
        "rvar": np.ones(c, dtype=np.float32),
    }


def _conv_block(rng, in_c, out_c, k, bn: bool):
    return {
        "kernels": Tensor4(_gauss(rng, (out_c, in_c, k, k)), requires_grad=True),
        "bias": Tensor4(np.zeros((1, out_c, 1, 1), dtype=np.float32), requires_grad=True),
        "bn": _bn_params(rng, out_c) if bn else None,
    }


def _deconv_block(rng, in_c, out_c, k, bn: bool):
    return {
        "kernels": Tensor4(_gauss(rng, (in_c, out_c, k, k)), requires_grad=True),
        "bias": Tensor4(np.zeros((1, out_c, 1, 1), dtype=np.float32), requires_grad=True),
        "bn": _bn_params(rng, out_c) if bn else None,
    }


def _block_params(block) -> list[Tensor4]:
    out = [block["kernels"], block["bias"]]
    if block["bn"] is not None:
        out += [block["bn"]["gamma"], block["bn"]["beta"]]
    return out


def _apply_bn(block, x: Tensor4, training: bool) -> Tensor4:
    bn = block["bn"]
    return ad.batchnorm2d(x, bn["gamma"], bn["beta"], bn["rmean"], bn["rvar"], training)


# --- CNN colorizer ---------------------------------------------------------------

def build_cnn(spec: CnnSpec, seed=0) -> dict:
    # He-scaled init: without normalization layers the 0.02-std convention
    # of the adversarial nets starves this ReLU stack of gradient signal
    rng = np.random.default_rng(seed)
    layers = []
    in_c = 1
    for k, f in zip(spec.kernel_sizes, spec.filters):
        block = _conv_block(rng, in_c, f, k, bn=False)
        fan_in = in_c * k * k
        block["kernels"].data *= np.float32(np.sqrt(2.0 / fan_in) / INIT_STD)
        layers.append(block)
        in_c = f
    return {"kind": "cnn", "spec": spec, "layers": layers}


def cnn_forward(params: dict, x: Tensor4) -> Tensor4:
    spec: CnnSpec = params["spec"]
    h = x
    last = len(params["layers"]) - 1
    for i, (block, k) in enumerate(zip(params["layers"], spec.kernel_sizes)):
        h = ad.conv2d(h, block["kernels"], block["bias"], stride=1, pad=k // 2)
        if i != last:
            h = ad.relu(h)
    return h


def cnn_params(params: dict) -> list[Tensor4]:
    return [t for block in params["layers"] for t in _block_params(block)]


# --- U-Net generator --------------------------------------------------------------

def build_generator(spec: GanSpec, seed=0, in_channels: int = 1, out_channels: int = 3) -> dict:
    rng = np.random.default_rng(seed)
    chans = spec.encoder_channels()
    d = spec.depth
    enc = []
    prev = in_channels
    for i, c in enumerate(chans):
        enc.append(_conv_block(rng, prev, c, 4, bn=(0 < i < d - 1)))
        prev = c
    dec = []
    for j in range(1, d + 1):
        in_c = chans[d - 1] if j == 1 else 2 * chans[d - j]
        out_c = out_channels if j == d else chans[d - j - 1]
        dec.append(_deconv_block(rng, in_c, out_c, 4, bn=(j < d)))
    return {"kind": "generator", "spec": spec, "enc": enc, "dec": dec}


def generator_forward(params: dict, x: Tensor4, mode: str = "train",
                      features_out: list = None) -> Tensor4:
    """U-Net forward pass; ``mode`` selects batch vs running normalization stats.

    ``features_out``, when given, collects the encoder block outputs (the last
    entry is the bottleneck).
    """
    training = _training(mode)
    spec: GanSpec = params["spec"]
    d = spec.depth
    h, w = x.shape[2], x.shape[3]
    if h % (2 ** d) or w % (2 ** d):
        raise ValueError(f"input size {h}x{w} not divisible by 2^{d}")
    feats = []
    t = x
    for i, block in enumerate(params["enc"]):
        t = ad.conv2d(t, block["kernels"], block["bias"], stride=2, pad=1)
        if i > 0:
            t = ad.leaky_relu(t, LEAKY_SLOPE)
        if block["bn"] is not None:
            t = _apply_bn(block, t, training)
        feats.append(t)
    if features_out is not None:
        features_out.extend(feats)
    for j, block in enumerate(params["dec"], start=1):
        src = t if j == 1 else ad.concat_channels(t, feats[d - j])
        t = ad.conv_transpose2d(ad.relu(src), block["kernels"], block["bias"], stride=2, pad=1)
        if block["bn"] is not None:
            t = _apply_bn(block, t, training)
        elif j == d:
            t = ad.tanh(t)
    return t


def generator_params(params: dict) -> list[Tensor4]:
    return [t for block in params["enc"] + params["dec"] for t in _block_params(block)]


def generator_shape_ladder(depth: int, size: int) -> list[tuple[int, int]]:
    """Spatial sizes down the encoder; raises if any level is fractional or empty."""
    if size % (2 ** depth):
        raise ValueError(f"input size {size} not divisible by 2^{depth}")
    sizes = []
    s = size
    for _ in range(depth):
        s //= 2
        if s < 1:
            raise ValueError(f"input size {size} too small for depth {depth}")
        sizes.append((s, s))
    return sizes


# --- discriminator ---------------------------------------------------------------

def build_discriminator(seed=0, condition_channels: int = 1, color_channels: int = 3) -> dict:
    rng = np.random.default_rng(seed)
    layers = []
    prev = condition_channels + color_channels
    for i, (c, s) in enumerate(zip(DISC_CHANNELS, DISC_STRIDES)):
        bn = 0 < i < len(DISC_CHANNELS) - 1
        layers.append(_conv_block(rng, prev, c, 4, bn=bn))
        prev = c
    return {"kind": "discriminator", "layers": layers}


def discriminator_forward(params: dict, sar: Tensor4, color: Tensor4,
                          mode: str = "train") -> Tensor4:
    """Patch-logit map for a (condition, color) pair; no terminal sigmoid."""
    training = _training(mode)
    if sar.shape[2:] != color.shape[2:] or sar.shape[0] != color.shape[0]:
        raise ValueError(f"shape mismatch: sar {sar.shape} vs color {color.shape}")
    t = ad.concat_channels(sar, color)
    last = len(params["layers"]) - 1
    for i, (block, s) in enumerate(zip(params["layers"], DISC_STRIDES)):
        t = ad.conv2d(t, block["kernels"], block["bias"], stride=s, pad=1)
        if block["bn"] is not None:
            t = _apply_bn(block, t, training)
        if i != last:
            t = ad.leaky_relu(t, LEAKY_SLOPE)
    return t


def discriminator_params(params: dict) -> list[Tensor4]:
    return [t for block in params["layers"] for t in _block_params(block)]


def _training(mode: str) -> bool:
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    return mode == "train"


def set_requires_grad(tensors: list[Tensor4], flag: bool):
    for t in tensors:
        t.requires_grad = flag


# --- losses ----------------------------------------------------------------------

def loss_g(logits_fake: Tensor4, pred: Tensor4, gt: Tensor4, alpha: float) -> Tensor4:
    """Generator objective: fool-the-discriminator term plus alpha * L1."""
    return ad.add(ad.bce_with_logits(logits_fake, 1),
                  ad.scale(ad.l1_loss(pred, gt), alpha))


def loss_d(logits_fake: Tensor4, logits_real: Tensor4, beta: float) -> Tensor4:
    """Discriminator objective: score fakes 0 and references 1, weighted by beta."""
    return ad.scale(ad.add(ad.bce_with_logits(logits_fake, 0),
                           ad.bce_with_logits(logits_real, 1)), beta)


# --- checkpoints -------------------------------------------------------------------

CKPT_MAGIC = b"SCK1"


@dataclass
class ModelCheckpoint:
    """Everything needed to reproduce inference bit-exactly."""

    method: str
    config: TrainConfig
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    losses: dict[str, list] = field(default_factory=dict)

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        names = sorted(self.tensors)
        header = {
            "method": self.method,
            "config": self.config.to_dict(),
            "losses": self.losses,
            "tensors": [{"name": n, "dtype": str(self.tensors[n].dtype),
                         "shape": list(self.tensors[n].shape)} for n in names],
        }
        with open(path, "wb") as fh:
            fh.write(CKPT_MAGIC)
            fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
            for n in names:
                fh.write(np.ascontiguousarray(self.tensors[n]).tobytes())

    @classmethod
    def load(cls, path) -> "ModelCheckpoint":
        path = Path(path)
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != CKPT_MAGIC:
                raise ValueError(f"bad checkpoint magic in {path}: {magic!r}")
            header = json.loads(fh.readline().decode("utf-8"))
            tensors = {}
            for meta in header["tensors"]:
                dtype = np.dtype(meta["dtype"])
                count = int(np.prod(meta["shape"])) if meta["shape"] else 1
                buf = fh.read(count * dtype.itemsize)
                if len(buf) != count * dtype.itemsize:
                    raise ValueError(f"truncated checkpoint payload in {path}")
                tensors[meta["name"]] = np.frombuffer(buf, dtype=dtype).reshape(meta["shape"]).copy()
        return cls(method=header["method"], config=TrainConfig.from_dict(header["config"]),
                   tensors=tensors, losses=header["losses"])


def _store_block(tensors: dict, prefix: str, block: dict):
    tensors[f"{prefix}.kernels"] = block["kernels"].data
    tensors[f"{prefix}.bias"] = block["bias"].data
    if block["bn"] is not None:
        tensors[f"{prefix}.gamma"] = block["bn"]["gamma"].data
        tensors[f"{prefix}.beta"] = block["bn"]["beta"].data
        tensors[f"{prefix}.rmean"] = block["bn"]["rmean"]
        tensors[f"{prefix}.rvar"] = block["bn"]["rvar"]


def _load_block(tensors: dict, prefix: str, requires_grad: bool) -> dict:
    block = {
        "kernels": Tensor4(tensors[f"{prefix}.kernels"], requires_grad=requires_grad),
        "bias": Tensor4(tensors[f"{prefix}.bias"], requires_grad=requires_grad),
        "bn": None,
    }
    if f"{prefix}.gamma" in tensors:
        block["bn"] = {
            "gamma": Tensor4(tensors[f"{prefix}.gamma"], requires_grad=requires_grad),
            "beta": Tensor4(tensors[f"{prefix}.beta"], requires_grad=requires_grad),
            "rmean": tensors[f"{prefix}.rmean"].copy(),
            "rvar": tensors[f"{prefix}.rvar"].copy(),
        }
    return block


def checkpoint_from_params(method: str, config: TrainConfig, nets: dict,
                           losses: dict) -> ModelCheckpoint:
    tensors: dict[str, np.ndarray] = {}
    for net_name, net in nets.items():
        blocks = net["layers"] if "layers" in net else net["enc"] + net["dec"]
        if "layers" in net:
            for i, block in enumerate(blocks):
                _store_block(tensors, f"{net_name}.l{i}", block)
        else:
            for i, block in enumerate(net["enc"]):
                _store_block(tensors, f"{net_name}.enc{i}", block)
            for i, block in enumerate(net["dec"]):
                _store_block(tensors, f"{net_name}.dec{i}", block)
    return ModelCheckpoint(method=method, config=config, tensors=tensors, losses=losses)


def params_from_checkpoint(ckpt: ModelCheckpoint, requires_grad: bool = False) -> dict:
    """Rebuild network parameter structures from a checkpoint."""
    cfg = ckpt.config
    nets: dict[str, dict] = {}
    if ckpt.method == "cnn":
        spec = CnnSpec(cfg.cnn_kernels, cfg.cnn_filters)
        layers = [_load_block(ckpt.tensors, f"cnn.l{i}", requires_grad)
                  for i in range(len(spec.kernel_sizes))]
        nets["cnn"] = {"kind": "cnn", "spec": spec, "layers": layers}
    elif ckpt.method == "cgan":
        spec = GanSpec(depth=cfg.gan_depth, base_channels=cfg.gan_base_channels,
                       max_channels=cfg.gan_max_channels)
        enc = [_load_block(ckpt.tensors, f"gen.enc{i}", requires_grad) for i in range(spec.depth)]
        dec = [_load_block(ckpt.tensors, f"gen.dec{i}", requires_grad) for i in range(spec.depth)]
        nets["gen"] = {"kind": "generator", "spec": spec, "enc": enc, "dec": dec}
        if any(name.startswith("disc.") for name in ckpt.tensors):
            layers = [_load_block(ckpt.tensors, f"disc.l{i}", requires_grad)
                      for i in range(len(DISC_CHANNELS))]
            nets["disc"] = {"kind": "discriminator", "layers": layers}
    else:
        raise ValueError(f"unknown checkpoint method {ckpt.method!r}")
    return nets


# --- training loops -----------------------------------------------------------------

def _load_training_arrays(manifest: Manifest, p: int):
    xs, ys, sizes = [], [], set()
    for sample in iterate_samples(manifest):
        if sample.gt is None:
            raise ValueError(f"sample {sample.id}: training requires ground truth")
        sizes.add((sample.sar.height, sample.sar.width))
        xs.append(normalize_array(sample.sar.data, p))
        ys.append(normalize_array(sample.gt.data, p))
    if not xs:
        raise ValueError("empty manifest: nothing to train on")
    if len(sizes) != 1:
        raise ValueError(f"training patches must share one size, got {sorted(sizes)}")
    return np.stack(xs), np.stack(ys)


def _batches(n: int, batch: int, rng) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i:i + batch] for i in range(0, n, batch)]


def train_cnn(config: TrainConfig, manifest: Manifest) -> ModelCheckpoint:
    """Pixel-loss training of the plain CNN; loss trace recorded per step and epoch."""
    if config.method != "cnn":
        raise ValueError("config.method must be 'cnn'")
    x_all, y_all = _load_training_arrays(manifest, config.bit_depth)
    spec = CnnSpec(config.cnn_kernels, config.cnn_filters)
    seeds = np.random.SeedSequence(config.seed).spawn(2)
    params = build_cnn(spec, np.random.default_rng(seeds[0]))
    shuffle_rng = np.random.default_rng(seeds[1])
    opt = ad.Adam(cnn_params(params), lr=config.lr,
                  beta1=config.adam_beta1, beta2=config.adam_beta2)
    loss_fn = ad.l1_loss if config.loss == "l1" else ad.mse_loss

    step_losses: list[float] = []
    epoch_losses: list[float] = []
    steps = 0
    done = False
    for _epoch in range(config.epochs):
        epoch_vals = []
        for idx in _batches(x_all.shape[0], config.batch, shuffle_rng):
            pred = cnn_forward(params, Tensor4(x_all[idx]))
            loss = loss_fn(pred, Tensor4(y_all[idx]))
            value = loss.item()
            if not np.isfinite(value):
                raise RuntimeError(f"non-finite training loss at step {steps}")
            ad.backward(loss)
            opt.step()
            opt.zero_grad()
            step_losses.append(value)
            epoch_vals.append(value)
            steps += 1
            if config.max_steps and steps >= config.max_steps:
                done = True
                break
        if epoch_vals:
            epoch_losses.append(float(np.mean(epoch_vals)))
        if done:
            break
    losses = {"step_loss": step_losses, "epoch_loss": epoch_losses}
    return checkpoint_from_params("cnn", config, {"cnn": params}, losses)


def train_cgan(config: TrainConfig, manifest: Manifest) -> ModelCheckpoint:
    """Alternating discriminator/generator training (one update each per step).

    During the generator step the discriminator parameters are flagged
    untracked, so they receive no gradient; the discriminator step sees a
    detached colorization, so the generator receives none there.  With
    ``use_gan=False`` the discriminator is skipped entirely and the generator
    trains on the weighted pixel loss alone.
    """
    if config.method != "cgan":
        raise ValueError("config.method must be 'cgan'")
    x_all, y_all = _load_training_arrays(manifest, config.bit_depth)
    seeds = np.random.SeedSequence(config.seed).spawn(3)
    spec = GanSpec(depth=config.gan_depth, base_channels=config.gan_base_channels,
                   max_channels=config.gan_max_channels)
    gen = build_generator(spec, np.random.default_rng(seeds[0]))
    g_params = generator_params(gen)
    opt_g = ad.Adam(g_params, lr=config.lr, beta1=config.adam_beta1, beta2=config.adam_beta2)
    disc = None
    d_params: list[Tensor4] = []
    if config.use_gan:
        disc = build_discriminator(np.random.default_rng(seeds[1]))
        d_params = discriminator_params(disc)
        opt_d = ad.Adam(d_params, lr=config.lr, beta1=config.adam_beta1, beta2=config.adam_beta2)
    shuffle_rng = np.random.default_rng(seeds[2])

    trace = {"loss_g": [], "loss_d": [], "l1": []}
    steps = 0
    done = False
    for _epoch in range(config.epochs):
        for idx in _batches(x_all.shape[0], config.batch, shuffle_rng):
            xb = Tensor4(x_all[idx])
            yb = Tensor4(y_all[idx])
            fake = generator_forward(gen, xb, "train")

            if config.use_gan:
                logits_fake = discriminator_forward(disc, xb, fake.detach(), "train")
                logits_real = discriminator_forward(disc, xb, yb, "train")
                ld = loss_d(logits_fake, logits_real, config.beta)
                ad.backward(ld)
                opt_d.step()
                opt_d.zero_grad()

                set_requires_grad(d_params, False)
                logits_fake2 = discriminator_forward(disc, xb, fake, "train")
                lg = loss_g(logits_fake2, fake, yb, config.alpha)
                ad.backward(lg)
                set_requires_grad(d_params, True)
                ld_value = ld.item()
            else:
                lg = ad.scale(ad.l1_loss(fake, yb), config.alpha)
                ad.backward(lg)
                ld_value = 0.0
            opt_g.step()
            opt_g.zero_grad()

            with ad.no_grad():
                l1_value = ad.l1_loss(fake.detach(), yb).item()
            lg_value = lg.item()
            if not (np.isfinite(lg_value) and np.isfinite(ld_value)):
                raise RuntimeError(f"non-finite training loss at step {steps}")
            if lg_value > DIVERGENCE_LIMIT:
                raise RuntimeError(
                    f"divergence detected at step {steps}: generator loss {lg_value:.3g}")
            trace["loss_g"].append(lg_value)
            trace["loss_d"].append(ld_value)
            trace["l1"].append(l1_value)
            steps += 1
            if config.max_steps and steps >= config.max_steps:
                done = True
                break
        if done:
            break
    nets = {"gen": gen}
    if disc is not None:
        nets["disc"] = disc
    return checkpoint_from_params("cgan", config, nets, trace)


def colorize(ckpt: ModelCheckpoint, sar: RasterPatch) -> RasterPatch:
    """Eval-mode colorization of one SAR patch, back in raster units."""
    if sar.channels != 1:
        raise ValueError("colorize expects a 1-channel SAR patch")
    p = ckpt.config.bit_depth
    nets = params_from_checkpoint(ckpt, requires_grad=False)
    x = normalize_in(sar, p)
    with ad.no_grad():
        if ckpt.method == "cnn":
            out = cnn_forward(nets["cnn"], x)
        else:
            out = generator_forward(nets["gen"], x, "eval")
    return denormalize_out(out, p)
