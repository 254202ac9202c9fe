"""Losses, ADAM with per-group learning rates, and the patch training loop."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .data import degrade, load_luminance_dir, make_patchset, synthetic_corpus
from .errors import ConfigurationError, NumericalError, ShapeError, TapeStateError
from .layers import ALPHA_MAX, ALPHA_MIN
from .metrics import psnr
from .models import Model, forward, save_model
from .tensor import Tape, Tensor, emit

log = logging.getLogger(__name__)


def loss(pred: Tensor, target: Tensor, kind: str = "l2") -> Tensor:
    """Mean squared (``l2``) or mean absolute (``l1``) error against a constant target."""
    if pred.shape != target.shape:
        raise ShapeError(f"pred {pred.shape} vs target {target.shape}")
    diff = pred.data - target.data
    n = diff.size
    if kind == "l2":
        with np.errstate(over="ignore", invalid="ignore"):
            value = (diff * diff).sum() / n
        grad = lambda g: (g.item() * 2.0 / n * diff, None)
    elif kind == "l1":
        value = np.abs(diff).sum() / n
        grad = lambda g: (g.item() / n * np.sign(diff), None)
    else:
        raise ConfigurationError(f"unknown loss {kind!r}")
    return emit(f"loss_{kind}", (pred, target), np.array(value).reshape(1, 1, 1, 1), grad)


@dataclass
class ParamGroup:
    params: list[Tensor]
    lr: float
    name: str = ""
    adaptive: bool = False


@dataclass
class OptimizerState:
    groups: list[ParamGroup]
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


class Adam:
    """Bias-corrected ADAM.

    ``clamp`` tensors (the power exponents) are projected back onto
    [0.1, 4.0] after every step. Groups flagged ``adaptive`` rescale their
    gradient to norm ``eta * sqrt(numel)`` before the moment update.
    """

    def __init__(self, groups, beta1=0.9, beta2=0.999, eps=1e-8, clamp=(), grad_clip=None,
                 eta=0.2):
        self.state = OptimizerState(list(groups), beta1, beta2, eps)
        self.clamp = list(clamp)
        self.grad_clip = grad_clip
        self.eta = eta

    @property
    def params(self):
        return [p for g in self.state.groups for p in g.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def set_lr(self, factor: float):
        for g in self.state.groups:
            g.lr *= factor

    def step(self):
        st = self.state
        for p in self.params:
            if p.grad is None:
                raise TapeStateError(f"missing gradient for {p.name or 'parameter'}")
        grads = {id(p): p.grad for p in self.params}
        for g in st.groups:
            if g.adaptive:
                for p in g.params:
                    if p.data.ndim == 4 and p.name and p.name.endswith("weight"):
                        norm = np.linalg.norm(grads[id(p)])
                        grads[id(p)] = grads[id(p)] / max(norm, 1e-12) * self.eta * math.sqrt(p.size)
        if self.grad_clip is not None:
            total = math.sqrt(sum(float((gr * gr).sum()) for gr in grads.values()))
            if total > self.grad_clip:
                factor = self.grad_clip / total
                grads = {k: gr * factor for k, gr in grads.items()}

        st.step += 1
        b1, b2 = st.beta1, st.beta2
        c1 = 1.0 - b1 ** st.step
        c2 = 1.0 - b2 ** st.step
        for g in st.groups:
            for p in g.params:
                gr = grads[id(p)]
                key = id(p)
                m = st.m.get(key)
                if m is None:
                    m = st.m[key] = np.zeros_like(p.data)
                    st.v[key] = np.zeros_like(p.data)
                v = st.v[key]
                m *= b1
                m += (1.0 - b1) * gr
                v *= b2
                v += (1.0 - b2) * gr * gr
                p.data -= g.lr * (m / c1) / (np.sqrt(v / c2) + st.eps)
        for t in self.clamp:
            np.clip(t.data, ALPHA_MIN, ALPHA_MAX, out=t.data)


def param_groups(model: Model, lr_conv: float, lr_adder: float, adaptive: bool = False):
    conv, adder = [], []
    for layer in model.layers:
        (adder if layer.spec.is_adder else conv).extend(layer.parameters())
    groups = [ParamGroup(conv, lr_conv, "conv")]
    if adder:
        groups.append(ParamGroup(adder, lr_adder, "adder", adaptive=adaptive))
    return groups


def make_optimizer(model: Model, cfg: "TrainConfig") -> Adam:
    alphas = [a.alpha for a in model.power_params() if a.alpha.requires_grad]
    return Adam(param_groups(model, cfg.lr_conv, cfg.lr_adder, cfg.adaptive_lr),
                cfg.beta1, cfg.beta2, cfg.eps, clamp=alphas, grad_clip=cfg.grad_clip)


@dataclass
class TrainConfig:
    variant: str = "adder"
    depth: int = 8
    width: int = 16
    shortcut: bool = True
    power: bool = True
    shortcut_gamma: float = 0.1
    scale: int = 2
    lr_conv: float = 3e-4
    lr_adder: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 16
    patch_size: int = 32
    stride: int = 16
    augment: bool = False
    epochs: int = 20
    seed: int = 0
    loss: str = "l2"
    grad_clip: float | None = None
    adaptive_lr: bool = False
    lr_decay_every: int = 0
    lr_decay_factor: float = 0.5
    train_images: int = 16
    val_images: int = 4
    image_size: int = 64
    data_dir: str | None = None
    val_dir: str | None = None
    output_dir: str = "runs/default"

    def __post_init__(self):
        if self.loss not in ("l1", "l2"):
            raise ConfigurationError(f"loss must be l1 or l2, got {self.loss!r}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigurationError("batch_size must be >= 1 and epochs >= 0")
        if self.patch_size % self.scale:
            raise ConfigurationError("patch_size must be a multiple of scale")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def long_run(cls, **overrides) -> "TrainConfig":
        """Long-run preset: depth-20 width-64 with step decay."""
        base = dict(depth=20, width=64, patch_size=42 if overrides.get("scale", 2) == 3 else 40,
                    epochs=80, lr_decay_every=20, lr_decay_factor=0.1)
        base.update(overrides)
        return cls(**base)


@dataclass
class History:
    epoch: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    val_psnr: list[float] = field(default_factory=list)
    step_loss: list[float] = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_psnr"])
            for row in zip(self.epoch, self.train_loss, self.val_psnr):
                w.writerow([row[0], repr(row[1]), repr(row[2])])


@dataclass
class TrainResult:
    model: Model
    history: History
    checkpoint: Path | None = None


def _first_bad_layer(model: Model, x: Tensor) -> str:
    trace = []
    try:
        forward(model, x, training=False, trace=trace)
    except Exception:
        pass
    for layer in model.layers:
        for t in layer.parameters():
            if not np.all(np.isfinite(t.data)):
                return f"{layer.name} (parameter {t.name})"
    for name, out in trace:
        if not np.all(np.isfinite(out.data)):
            return name
    return "loss"


def train_step(model: Model, opt: Adam, lr: np.ndarray, hr: np.ndarray, kind: str) -> float:
    x = Tensor(lr)
    with Tape() as tape:
        pred = forward(model, x, training=True)
        value = loss(pred, Tensor(hr), kind)
    v = value.item()
    if not math.isfinite(v):
        bad = _first_bad_layer(model, x)
        raise NumericalError(f"loss became {v}; first non-finite layer: {bad}", layer=bad)
    opt.zero_grad()
    tape.backward(value)
    opt.step()
    return v


def evaluate_psnr(model: Model, pairs, crop: int) -> float:
    """Mean PSNR (peak 1.0) over (lr_up, hr) 2-D arrays."""
    scores = []
    for lr, hr in pairs:
        out = forward(model, Tensor(lr[None, None]), training=False).data[0, 0]
        scores.append(psnr(np.clip(out, 0.0, 1.0), hr, peak=1.0, crop=crop))
    return float(np.mean(scores))


def train(model: Model, dataset, cfg: TrainConfig, val_pairs=None, checkpoint_path=None,
          progress: bool = False) -> TrainResult:
    """Train ``model`` on a PatchSet; deterministic for a fixed ``cfg.seed``."""
    if len(dataset) == 0:
        raise ConfigurationError("empty dataset")
    opt = make_optimizer(model, cfg)
    rng = np.random.default_rng(cfg.seed)
    hist = History()
    n = len(dataset)
    bs = min(cfg.batch_size, n)
    for epoch in range(1, cfg.epochs + 1):
        if cfg.lr_decay_every and epoch > 1 and (epoch - 1) % cfg.lr_decay_every == 0:
            opt.set_lr(cfg.lr_decay_factor)
        order = rng.permutation(n)
        losses = []
        for start in range(0, n - bs + 1, bs):
            idx = order[start:start + bs]
            v = train_step(model, opt, dataset.lr[idx], dataset.hr[idx], cfg.loss)
            losses.append(v)
            hist.step_loss.append(v)
        val = evaluate_psnr(model, val_pairs, cfg.scale) if val_pairs else float("nan")
        hist.epoch.append(epoch)
        hist.train_loss.append(float(np.mean(losses)))
        hist.val_psnr.append(val)
        if progress:
            log.info("epoch %d loss %.6g val_psnr %.4f", epoch, hist.train_loss[-1], val)
    path = None
    if checkpoint_path is not None:
        path = Path(checkpoint_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        save_model(model, path)
    return TrainResult(model, hist, path)


def build_dataset(cfg: TrainConfig):
    """Training PatchSet and full-image validation pairs for ``cfg``.

    Uses PNM directories when configured, otherwise seeded synthetic textures
    (training and validation drawn from disjoint seed streams).
    """
    if cfg.data_dir:
        train_imgs = load_luminance_dir(cfg.data_dir, cfg.scale)
    else:
        train_imgs = synthetic_corpus(cfg.train_images, cfg.image_size, cfg.seed)
    if cfg.val_dir:
        val_imgs = load_luminance_dir(cfg.val_dir, cfg.scale)
    else:
        val_imgs = synthetic_corpus(cfg.val_images, cfg.image_size, cfg.seed + 10_007)
    patches = make_patchset(train_imgs, cfg.scale, cfg.patch_size, cfg.stride, cfg.augment)
    val_pairs = [(degrade(h, cfg.scale), h) for h in val_imgs]
    return patches, val_pairs
