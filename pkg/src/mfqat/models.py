"""Layer-graph models: the 32-channel thin U-Net, a small encoder-decoder
for the synthetic task, and a tiny classifier.

A model is an explicit DAG of named layers executed in listed (topological)
order. Convolution / dense layers may carry a quantizer attachment: the
weight is quantized on every forward pass and the activation is quantized by
a dedicated node placed after the layer's ReLU. The raw network input and
the final logits are never quantized.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import ops
from .autograd.engine import Parameter, Tape, Tensor
from .formats import MinifloatFormat, parse_format
from .quantizer import QuantizerState

QUANT_ACTIVE = "active"
QUANT_BYPASS = "bypass"
QUANT_CALIBRATE = "calibrate"


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str                    # input conv3x3 conv1x1 dense batchnorm relu
    inputs: tuple[str, ...]      # maxpool2 upsample2 concat act_quant
    out_channels: int = 0
    bias: bool = False
    quant_ref: str = ""          # act_quant: conv layer owning the attachment


@dataclass
class QuantAttachment:
    """Per-layer quantizers; weight and activation biases are independent."""

    weight_q: QuantizerState
    activation_q: QuantizerState | None
    enabled: bool = True


@dataclass(frozen=True)
class QuantSpec:
    """Template used by builders to instantiate per-layer attachments."""

    weight_format: MinifloatFormat
    activation_format: MinifloatFormat


class ModelGraph:
    def __init__(self, arch: str, input_shape: tuple[int, int, int], spec: dict,
                 spatial_divisor: int = 1, ste_clip_zero: bool = False):
        self.arch = arch
        self.input_shape = input_shape
        self.spec = spec
        self.spatial_divisor = spatial_divisor
        self.ste_clip_zero = ste_clip_zero
        self.layers: list[LayerSpec] = []
        self.params: dict[str, Parameter] = {}
        self.bn_buffers: dict[str, dict[str, np.ndarray]] = {}
        self.attachments: dict[str, QuantAttachment] = {}
        self.last_signals: dict[str, Tensor] = {}

    # -- construction --------------------------------------------------------

    def add_layer(self, layer: LayerSpec) -> None:
        names = {l.name for l in self.layers}
        if layer.name in names:
            raise ValueError(f"duplicate layer name {layer.name!r}")
        for src in layer.inputs:
            if src not in names:
                raise ValueError(f"layer {layer.name!r} wired to unknown input {src!r}")
        self.layers.append(layer)

    def add_param(self, name: str, data: np.ndarray) -> Parameter:
        p = Parameter(data, name=name)
        self.params[name] = p
        return p

    # -- inspection ----------------------------------------------------------

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def quant_states(self) -> list[tuple[str, QuantizerState]]:
        out = []
        for name, att in self.attachments.items():
            out.append((f"{name}:w", att.weight_q))
            if att.activation_q is not None:
                out.append((f"{name}:a", att.activation_q))
        return out

    def conv_layers(self) -> list[LayerSpec]:
        return [l for l in self.layers if l.kind in ("conv3x3", "conv1x1", "dense")]

    # -- execution -----------------------------------------------------------

    def _weight_for(self, layer: LayerSpec, tape, quant: str) -> Tensor:
        w = self.params[f"{layer.name}.w"]
        att = self.attachments.get(layer.name)
        if att is None or not att.enabled:
            return w
        if quant == QUANT_CALIBRATE:
            att.weight_q.observe(w.data)
            return w
        if quant == QUANT_ACTIVE:
            return ops.quantize_ste(tape, w, att.weight_q, self.ste_clip_zero)
        return w

    def _act_quant(self, layer: LayerSpec, x: Tensor, tape, quant: str) -> Tensor:
        att = self.attachments.get(layer.quant_ref)
        if att is None or not att.enabled or att.activation_q is None:
            return x
        if quant == QUANT_CALIBRATE:
            att.activation_q.observe(x.data)
            return x
        if quant == QUANT_ACTIVE:
            return ops.quantize_ste(tape, x, att.activation_q, self.ste_clip_zero)
        return x

    def forward(self, x, tape: Tape | None = None, training: bool = False,
                quant: str = QUANT_ACTIVE) -> Tensor:
        if quant not in (QUANT_ACTIVE, QUANT_BYPASS, QUANT_CALIBRATE):
            raise ValueError(f"unknown quant mode {quant!r}")
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 4:
            raise ValueError(f"expected (N, C, H, W) input, got shape {x.shape}")
        c, h, w = self.input_shape
        if x.shape[1] != c:
            raise ValueError(f"expected {c} input channels, got {x.shape[1]}")
        d = self.spatial_divisor
        if x.shape[2] % d or x.shape[3] % d:
            raise ValueError(
                f"{self.arch} needs spatial dims divisible by {d}, got "
                f"{x.shape[2]}x{x.shape[3]}"
            )
        signals: dict[str, Tensor] = {self.layers[0].name: Tensor(x)}
        for layer in self.layers[1:]:
            ins = [signals[s] for s in layer.inputs]
            if layer.kind == "conv3x3":
                out = ops.conv3x3(tape, ins[0], self._weight_for(layer, tape, quant))
            elif layer.kind == "conv1x1":
                b = self.params.get(f"{layer.name}.b") if layer.bias else None
                out = ops.conv1x1(tape, ins[0], self._weight_for(layer, tape, quant), b)
            elif layer.kind == "dense":
                b = self.params.get(f"{layer.name}.b") if layer.bias else None
                out = ops.dense(tape, ins[0], self._weight_for(layer, tape, quant), b)
            elif layer.kind == "batchnorm":
                buf = self.bn_buffers[layer.name]
                out = ops.batchnorm(
                    tape, ins[0],
                    self.params[f"{layer.name}.gamma"],
                    self.params[f"{layer.name}.beta"],
                    buf["running_mean"], buf["running_var"],
                    training=training,
                )
            elif layer.kind == "relu":
                out = ops.relu(tape, ins[0])
            elif layer.kind == "maxpool2":
                out = ops.maxpool2x2(tape, ins[0])
            elif layer.kind == "upsample2":
                out = ops.upsample2x_bilinear(tape, ins[0])
            elif layer.kind == "concat":
                out = ops.concat_channels(tape, ins)
            elif layer.kind == "act_quant":
                out = self._act_quant(layer, ins[0], tape, quant)
            else:
                raise ValueError(f"unknown layer kind {layer.kind!r}")
            signals[layer.name] = out
        self.last_signals = signals
        return signals[self.layers[-1].name]

    # -- serialization support ------------------------------------------------

    def tensor_entries(self) -> dict[str, np.ndarray]:
        """All stateful arrays (masters plus BN running buffers), named."""
        out: dict[str, np.ndarray] = {}
        for name, p in self.params.items():
            out[name] = p.data
        for name, buf in self.bn_buffers.items():
            out[f"{name}.running_mean"] = buf["running_mean"]
            out[f"{name}.running_var"] = buf["running_var"]
        return out

    def load_tensor_entries(self, entries: dict[str, np.ndarray]) -> None:
        for name, arr in self.tensor_entries().items():
            src = entries[name]
            if src.shape != arr.shape:
                raise ValueError(f"tensor {name!r} shape {src.shape} != {arr.shape}")
            arr[...] = src


class _Builder:
    def __init__(self, arch: str, input_shape, spec: dict, quant: QuantSpec | None,
                 seed: int, spatial_divisor: int, ste_clip_zero: bool = False):
        self.g = ModelGraph(arch, input_shape, spec, spatial_divisor, ste_clip_zero)
        self.quant = quant
        self.rng = np.random.default_rng(seed)
        self.g.add_layer(LayerSpec("input", "input", ()))

    def _kaiming(self, shape, fan_in: int) -> np.ndarray:
        return self.rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)

    def _attach(self, name: str, with_activation: bool) -> None:
        if self.quant is None:
            return
        act = QuantizerState(self.quant.activation_format) if with_activation else None
        self.g.attachments[name] = QuantAttachment(
            weight_q=QuantizerState(self.quant.weight_format), activation_q=act
        )

    def conv_bn_relu(self, name: str, src: str, in_ch: int, out_ch: int) -> str:
        g = self.g
        g.add_param(f"{name}.w", self._kaiming((out_ch, in_ch, 3, 3), in_ch * 9))
        g.add_layer(LayerSpec(name, "conv3x3", (src,), out_channels=out_ch))
        bn = f"{name}.bn"
        g.add_param(f"{bn}.gamma", np.ones(out_ch))
        g.add_param(f"{bn}.beta", np.zeros(out_ch))
        g.bn_buffers[bn] = {
            "running_mean": np.zeros(out_ch),
            "running_var": np.ones(out_ch),
        }
        g.add_layer(LayerSpec(bn, "batchnorm", (name,)))
        g.add_layer(LayerSpec(f"{name}.relu", "relu", (bn,)))
        last = f"{name}.relu"
        self._attach(name, with_activation=True)
        if self.quant is not None:
            g.add_layer(LayerSpec(f"{name}.q", "act_quant", (last,), quant_ref=name))
            last = f"{name}.q"
        return last

    def conv1x1(self, name: str, src: str, in_ch: int, out_ch: int, bias: bool = True) -> str:
        g = self.g
        g.add_param(f"{name}.w", self._kaiming((out_ch, in_ch, 1, 1), in_ch))
        if bias:
            g.add_param(f"{name}.b", np.zeros(out_ch))
        g.add_layer(LayerSpec(name, "conv1x1", (src,), out_channels=out_ch, bias=bias))
        self._attach(name, with_activation=False)
        return name

    def dense(self, name: str, src: str, in_features: int, out_features: int,
              bias: bool = True) -> str:
        g = self.g
        g.add_param(f"{name}.w", self._kaiming((out_features, in_features), in_features))
        if bias:
            g.add_param(f"{name}.b", np.zeros(out_features))
        g.add_layer(LayerSpec(name, "dense", (src,), out_channels=out_features, bias=bias))
        self._attach(name, with_activation=False)
        return name

    def maxpool(self, name: str, src: str) -> str:
        self.g.add_layer(LayerSpec(name, "maxpool2", (src,)))
        return name

    def upsample(self, name: str, src: str) -> str:
        self.g.add_layer(LayerSpec(name, "upsample2", (src,)))
        return name

    def concat(self, name: str, srcs: tuple[str, ...]) -> str:
        self.g.add_layer(LayerSpec(name, "concat", srcs))
        return name


def _quant_from_spec(spec: dict) -> QuantSpec | None:
    q = spec.get("quant")
    if not q:
        return None
    return QuantSpec(
        weight_format=parse_format(q["weight_format"]),
        activation_format=parse_format(q["activation_format"]),
    )


def build_thin_unet32(in_channels: int, quant: QuantSpec | None = None,
                      seed: int = 0, ste_clip_zero: bool = False) -> ModelGraph:
    """5-stage encoder / 5-stage decoder with 32-channel 3x3 convolutions.

    Stages 1..5 sit at resolutions 1, 1/2, 1/4, 1/8, 1/16 (four pools, four
    bilinear upsamples); decoder stage k mirrors encoder stage k at the same
    resolution and, for k <= 4, concatenates the encoder stage's output with
    the upsampled deeper features. A final 1x1 convolution produces one logit
    channel, so output spatial size equals input spatial size.
    """
    if in_channels < 1:
        raise ValueError(f"in_channels must be >= 1, got {in_channels}")
    ch = 32
    spec = {
        "arch": "thin-unet32",
        "in_channels": in_channels,
        "quant": _quant_as_dict(quant),
        "ste_clip_zero": ste_clip_zero,
    }
    b = _Builder("thin-unet32", (in_channels, -1, -1), spec, quant, seed,
                 spatial_divisor=16, ste_clip_zero=ste_clip_zero)
    # encoder
    enc_out = {}
    src = "input"
    width = in_channels
    for k in range(1, 6):
        src = b.conv_bn_relu(f"enc{k}a", src, width, ch)
        src = b.conv_bn_relu(f"enc{k}b", src, ch, ch)
        enc_out[k] = src
        width = ch
        if k < 5:
            src = b.maxpool(f"pool{k}", src)
    # decoder; stage 5 is the bottleneck pair at 1/16
    src = b.conv_bn_relu("dec5a", src, ch, ch)
    src = b.conv_bn_relu("dec5b", src, ch, ch)
    for k in range(4, 0, -1):
        up = b.upsample(f"up{k}", src)
        cat = b.concat(f"cat{k}", (enc_out[k], up))
        src = b.conv_bn_relu(f"dec{k}a", cat, 2 * ch, ch)
        src = b.conv_bn_relu(f"dec{k}b", src, ch, ch)
    b.conv1x1("head", src, ch, 1, bias=True)
    return b.g


def build_toy_segnet(in_channels: int = 1, quant: QuantSpec | None = None,
                     seed: int = 0, ste_clip_zero: bool = False,
                     channels: tuple[int, int] = (8, 16)) -> ModelGraph:
    """Two-scale encoder-decoder for the synthetic segmentation task."""
    if in_channels < 1:
        raise ValueError(f"in_channels must be >= 1, got {in_channels}")
    c1, c2 = channels
    spec = {
        "arch": "toy-segnet",
        "in_channels": in_channels,
        "quant": _quant_as_dict(quant),
        "ste_clip_zero": ste_clip_zero,
    }
    b = _Builder("toy-segnet", (in_channels, -1, -1), spec, quant, seed,
                 spatial_divisor=2, ste_clip_zero=ste_clip_zero)
    skip = b.conv_bn_relu("enc1a", "input", in_channels, c1)
    src = b.maxpool("pool1", skip)
    src = b.conv_bn_relu("enc2a", src, c1, c2)
    src = b.upsample("up1", src)
    src = b.concat("cat1", (skip, src))
    src = b.conv_bn_relu("dec1a", src, c1 + c2, c1)
    b.conv1x1("head", src, c1, 1, bias=True)
    return b.g


def build_tiny_classifier(in_channels: int = 1, n_classes: int = 10,
                          image_size: int = 16, quant: QuantSpec | None = None,
                          seed: int = 0, ste_clip_zero: bool = False) -> ModelGraph:
    """conv-pool-conv-pool-dense sanity classifier."""
    if in_channels < 1:
        raise ValueError(f"in_channels must be >= 1, got {in_channels}")
    if image_size % 4:
        raise ValueError(f"image_size must be divisible by 4, got {image_size}")
    spec = {
        "arch": "tiny-classifier",
        "in_channels": in_channels,
        "n_classes": n_classes,
        "image_size": image_size,
        "quant": _quant_as_dict(quant),
        "ste_clip_zero": ste_clip_zero,
    }
    b = _Builder("tiny-classifier", (in_channels, image_size, image_size), spec,
                 quant, seed, spatial_divisor=4, ste_clip_zero=ste_clip_zero)
    src = b.conv_bn_relu("c1", "input", in_channels, 8)
    src = b.maxpool("pool1", src)
    src = b.conv_bn_relu("c2", src, 8, 16)
    src = b.maxpool("pool2", src)
    b.dense("fc", src, 16 * (image_size // 4) ** 2, n_classes, bias=True)
    return b.g


def _quant_as_dict(quant: QuantSpec | None) -> dict | None:
    if quant is None:
        return None
    return {
        "weight_format": str(quant.weight_format),
        "activation_format": str(quant.activation_format),
    }


def build_model(spec: dict, seed: int = 0) -> ModelGraph:
    """Rebuild a model from its serialized spec dict."""
    arch = spec["arch"]
    quant = _quant_from_spec(spec)
    clip = bool(spec.get("ste_clip_zero", False))
    if arch == "thin-unet32":
        return build_thin_unet32(spec["in_channels"], quant, seed, clip)
    if arch == "toy-segnet":
        return build_toy_segnet(spec["in_channels"], quant, seed, clip)
    if arch == "tiny-classifier":
        return build_tiny_classifier(
            spec["in_channels"], spec.get("n_classes", 10),
            spec.get("image_size", 16), quant, seed, clip,
        )
    raise ValueError(f"unknown architecture {arch!r}")
