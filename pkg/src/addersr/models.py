"""Declarative layer specs and tiny VDSR-style models in conv and adder form."""
from __future__ import annotations

import io
from dataclasses import asdict, dataclass, field

import numpy as np

from . import checkpoint
from .errors import ConfigurationError, FormatError, ShapeError
from .layers import AdderLayerParams, PowerActParams, adder_block, conv2d, relu_power
from .tensor import Tensor, add, relu

CONV_KINDS = ("conv", "conv_plain_act")
ADDER_KINDS = ("adder_block", "adder_plain")
KINDS = CONV_KINDS + ADDER_KINDS
ACTIVATIONS = ("relu", "power_relu", "none")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    c_in: int
    c_out: int
    k: int = 3
    activation: str = "relu"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        if self.c_in < 1 or self.c_out < 1:
            raise ConfigurationError("channel counts must be positive")
        if self.k < 1 or self.k % 2 == 0:
            raise ConfigurationError(f"kernel size must be odd and positive, got {self.k}")
        if self.kind == "adder_block" and self.c_in != self.c_out:
            raise ConfigurationError("adder_block needs c_in == c_out for its shortcut")

    @property
    def is_adder(self) -> bool:
        return self.kind in ADDER_KINDS

    @property
    def has_shortcut(self) -> bool:
        return self.kind == "adder_block"


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple[LayerSpec, ...]
    global_residual: bool = True
    scale: int = 2

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise ConfigurationError("network has no layers")
        if self.scale not in (2, 3, 4):
            raise ConfigurationError(f"scale must be 2, 3 or 4, got {self.scale}")
        if self.layers[0].kind not in CONV_KINDS or self.layers[-1].kind not in CONV_KINDS:
            raise ConfigurationError("first and last layers must be convolutional")
        for prev, cur in zip(self.layers, self.layers[1:]):
            if prev.c_out != cur.c_in:
                raise ConfigurationError(f"channel mismatch: {prev.c_out} -> {cur.c_in}")
        if self.global_residual and self.layers[0].c_in != self.layers[-1].c_out:
            raise ConfigurationError("global residual needs matching input/output channels")

    def to_dict(self) -> dict:
        return {"layers": [asdict(l) for l in self.layers],
                "global_residual": self.global_residual, "scale": self.scale}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(tuple(LayerSpec(**l) for l in d["layers"]),
                   global_residual=bool(d.get("global_residual", True)),
                   scale=int(d.get("scale", 2)))


def parse_spec(text: str) -> NetworkSpec:
    """Parse the line format ``kind c_in c_out k activation``.

    Blank lines and ``#`` comments are ignored. Optional directive lines
    ``scale N`` and ``residual yes|no`` set the network-level fields.
    """
    layers = []
    scale, residual = 2, True
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "scale" and len(parts) == 2:
            scale = int(parts[1])
            continue
        if parts[0] == "residual" and len(parts) == 2:
            residual = parts[1].lower() in ("yes", "true", "1", "on")
            continue
        if len(parts) != 5:
            raise FormatError(f"line {lineno}: expected 'kind c_in c_out k activation', got {raw!r}")
        kind, c_in, c_out, k, act = parts
        try:
            layers.append(LayerSpec(kind, int(c_in), int(c_out), int(k), act))
        except ValueError as exc:
            raise FormatError(f"line {lineno}: {exc}") from None
    return NetworkSpec(tuple(layers), global_residual=residual, scale=scale)


def format_spec(spec: NetworkSpec) -> str:
    buf = io.StringIO()
    buf.write(f"scale {spec.scale}\nresidual {'yes' if spec.global_residual else 'no'}\n")
    for l in spec.layers:
        buf.write(f"{l.kind} {l.c_in} {l.c_out} {l.k} {l.activation}\n")
    return buf.getvalue()


def vdsr_spec(variant: str = "conv", depth: int = 20, width: int = 64, scale: int = 2,
              k: int = 3, shortcut: bool = True, power: bool = True) -> NetworkSpec:
    """VDSR topology; the adder variant swaps every interior layer for an adder layer."""
    if depth < 3:
        raise ConfigurationError(f"depth must be at least 3, got {depth}")
    if width < 1:
        raise ConfigurationError(f"width must be positive, got {width}")
    if variant == "conv":
        inner = LayerSpec("conv", width, width, k, "relu")
    elif variant == "adder":
        inner = LayerSpec("adder_block" if shortcut else "adder_plain", width, width, k,
                          "power_relu" if power else "relu")
    else:
        raise ConfigurationError(f"unknown variant {variant!r}")
    layers = [LayerSpec("conv", 1, width, k, "relu")]
    layers += [inner] * (depth - 2)
    layers.append(LayerSpec("conv", width, 1, k, "none"))
    return NetworkSpec(tuple(layers), global_residual=True, scale=scale)


@dataclass
class Layer:
    name: str
    spec: LayerSpec
    params: AdderLayerParams
    act: PowerActParams | None = None

    def parameters(self) -> list[Tensor]:
        out = self.params.parameters()
        if self.act is not None and self.act.alpha.requires_grad:
            out.append(self.act.alpha)
        return out


@dataclass
class Model:
    spec: NetworkSpec
    layers: list[Layer] = field(default_factory=list)

    def parameters(self) -> list[Tensor]:
        return [t for layer in self.layers for t in layer.parameters()]

    def parameter_count(self) -> int:
        return sum(t.size for t in self.parameters())

    def power_params(self) -> list[PowerActParams]:
        return [l.act for l in self.layers if l.act is not None]

    def clone(self) -> "Model":
        header, arrays = to_checkpoint(self)
        return from_checkpoint(header, arrays)


# Nonzero so the rectified residual branch gets gradient from the first step;
# the zeroed final conv alone keeps a fresh model an exact identity.
DEFAULT_SHORTCUT_GAMMA = 0.1


def materialize(spec: NetworkSpec, seed: int = 0, shortcut_gamma: float = DEFAULT_SHORTCUT_GAMMA,
                zero_last: bool = True) -> Model:
    """Allocate parameters for ``spec``.

    Shortcut blocks start with BN gamma = ``shortcut_gamma``; plain adder
    layers start with gamma = 1. The final conv is zeroed when ``zero_last``
    so a global-residual model starts as the identity.
    """
    layers = []
    last = len(spec.layers) - 1
    for i, ls in enumerate(spec.layers):
        name = f"layer{i}"
        layer_seed = np.random.SeedSequence([seed, i]).generate_state(1)[0]
        gamma = shortcut_gamma if ls.has_shortcut else 1.0
        params = AdderLayerParams.create(ls.c_in, ls.c_out, ls.k, layer_seed,
                                         batch_norm=ls.is_adder, gamma_init=gamma, name=name)
        if i == last and zero_last:
            params.weight.data[...] = 0.0
        act = None
        if ls.activation == "power_relu":
            act = PowerActParams()
            act.alpha.name = f"{name}.alpha"
        layers.append(Layer(name, ls, params, act))
    return Model(spec, layers)


def build_tiny_vdsr(variant: str = "adder", depth: int = 8, width: int = 16, scale: int = 2,
                    seed: int = 0, shortcut: bool = True, power: bool = True,
                    shortcut_gamma: float = DEFAULT_SHORTCUT_GAMMA) -> Model:
    spec = vdsr_spec(variant, depth, width, scale, shortcut=shortcut, power=power)
    return materialize(spec, seed, shortcut_gamma=shortcut_gamma)


def _activate(h: Tensor, layer: Layer) -> Tensor:
    act = layer.spec.activation
    if act == "relu":
        return relu(h)
    if act == "power_relu":
        return relu_power(h, layer.act)
    return h


def forward(model: Model, x: Tensor, training: bool = False, trace: list | None = None) -> Tensor:
    """Run the network; with a global residual the body output is added to ``x``.

    ``trace`` (if a list) receives ``(layer_name, output)`` for each layer.
    """
    if x.shape[1] != model.spec.layers[0].c_in:
        raise ShapeError(f"input has {x.shape[1]} channels, model expects {model.spec.layers[0].c_in}")
    h = x
    for layer in model.layers:
        ls = layer.spec
        if ls.is_adder:
            h = adder_block(h, layer.params, layer.act if ls.activation == "power_relu" else None,
                            training, shortcut=ls.has_shortcut)
        else:
            h = _activate(conv2d(h, layer.params), layer)
        if trace is not None:
            trace.append((layer.name, h))
    if model.spec.global_residual:
        h = add(x, h)
    return h


def to_checkpoint(model: Model) -> tuple[dict, dict[str, np.ndarray]]:
    arrays = {}
    layer_meta = []
    for layer in model.layers:
        p = layer.params
        arrays[f"{layer.name}.weight"] = p.weight.data
        meta = {"name": layer.name, "stride": p.stride, "padding": p.padding}
        if p.has_bn:
            arrays[f"{layer.name}.bn_gamma"] = p.bn_gamma.data
            arrays[f"{layer.name}.bn_beta"] = p.bn_beta.data
            meta["bn_running_mean"] = p.bn_running_mean.tolist()
            meta["bn_running_var"] = p.bn_running_var.tolist()
        if layer.act is not None:
            meta["alpha"] = layer.act.value
        layer_meta.append(meta)
    return {"spec": model.spec.to_dict(), "layers": layer_meta}, arrays


def from_checkpoint(header: dict, arrays: dict[str, np.ndarray]) -> Model:
    spec = NetworkSpec.from_dict(header["spec"])
    model = materialize(spec, seed=0, zero_last=False)
    for layer, meta in zip(model.layers, header["layers"]):
        p = layer.params
        w = arrays[f"{layer.name}.weight"]
        if w.shape != p.weight.shape:
            raise ShapeError(f"{layer.name}.weight: checkpoint shape {w.shape} != {p.weight.shape}")
        p.weight.data[...] = w
        p.stride, p.padding = meta["stride"], meta["padding"]
        if p.has_bn:
            p.bn_gamma.data[...] = arrays[f"{layer.name}.bn_gamma"]
            p.bn_beta.data[...] = arrays[f"{layer.name}.bn_beta"]
            p.bn_running_mean[...] = meta["bn_running_mean"]
            p.bn_running_var[...] = meta["bn_running_var"]
        if layer.act is not None:
            layer.act.alpha.data[...] = meta["alpha"]
    return model


def save_model(model: Model, path, extra: dict | None = None) -> None:
    header, arrays = to_checkpoint(model)
    if extra:
        header["extra"] = extra
    checkpoint.save(path, header, arrays)


def load_model(path) -> Model:
    header, arrays = checkpoint.load(path)
    return from_checkpoint(header, arrays)
