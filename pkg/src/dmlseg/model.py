"""Network assembly: shared low-level stack, a dilated segmentation head,
and per-level dense multi-label heads whose pooled scores are fused into
the final prediction by elementwise sum.

The segmentation head keeps the backbone resolution by trading stride for
dilation; each multi-label head applies the extra stride for real, pools
class scores over its window, and is upsampled back before fusion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
import numpy as np

from .errors import ConfigError, DataError
from .kv import parse_kv
from .ops import conv2d, elementwise_sum, maxpool2d, relu, shift, upsample_nearest
from .tensor import Parameter, Tensor, parameter_rng


@dataclass(frozen=True)
class ModelConfig:
    num_classes: int
    input_size: tuple[int, int]
    low_channels: tuple[tuple[int, int], ...]
    seg_channels: tuple[int, ...]
    dml_extra_stride: int = 2
    window_sizes: tuple[int, ...] = (11, 5, 3)
    lam: float = 1.0
    levels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "input_size", tuple(self.input_size))
        object.__setattr__(self, "low_channels",
                           tuple((int(w), int(s)) for w, s in self.low_channels))
        object.__setattr__(self, "seg_channels", tuple(int(w) for w in self.seg_channels))
        object.__setattr__(self, "window_sizes", tuple(int(w) for w in self.window_sizes))
        if self.num_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.num_classes}")
        if self.levels not in (0, 1, 2, 3):
            raise ConfigError(f"levels must be 0..3, got {self.levels}")
        if len(self.window_sizes) != self.levels:
            raise ConfigError(f"{self.levels} levels but {len(self.window_sizes)} window sizes")
        for w in self.window_sizes:
            if w < 1 or w % 2 == 0:
                raise ConfigError(f"window sizes must be odd and positive, got {w}")
        if any(a <= b for a, b in zip(self.window_sizes, self.window_sizes[1:])):
            raise ConfigError(f"window sizes must strictly decrease, got {self.window_sizes}")
        if self.lam < 0:
            raise ConfigError(f"lambda must be non-negative, got {self.lam}")
        if not self.low_channels or not self.seg_channels:
            raise ConfigError("low_channels and seg_channels must be non-empty")
        s = self.dml_extra_stride
        if s < 1 or s & (s - 1):
            raise ConfigError(f"dml_extra_stride must be a power of two, got {s}")
        if 2 ** len(self.seg_channels) < s:
            raise ConfigError(f"extra stride {self.dml_extra_stride} needs more than "
                              f"{len(self.seg_channels)} head stages")
        h, w = self.input_size
        if h % self.s_dml or w % self.s_dml:
            raise ConfigError(f"input {h}x{w} not divisible by total stride {self.s_dml}")

    @property
    def s_low(self) -> int:
        out = 1
        for _, s in self.low_channels:
            out *= s
        return out

    @property
    def s_dml(self) -> int:
        return self.s_low * self.dml_extra_stride

    @property
    def seg_grid(self) -> tuple[int, int]:
        return self.input_size[0] // self.s_low, self.input_size[1] // self.s_low

    @property
    def dml_grid(self) -> tuple[int, int]:
        return self.input_size[0] // self.s_dml, self.input_size[1] // self.s_dml

    def head_strides(self) -> tuple[int, ...]:
        """Per-stage stride plan of the multi-label heads: the extra stride
        as factors of two on the first stages, 1 afterwards."""
        remaining = self.dml_extra_stride
        factors = []
        for _ in self.seg_channels:
            if remaining > 1:
                factors.append(2)
                remaining //= 2
            else:
                factors.append(1)
        return tuple(factors)

    def seg_dilations(self) -> tuple[int, ...]:
        """Dilation schedule of the segmentation head: each withheld stride
        doubles the dilation of that stage and all later ones."""
        dils = []
        d = 1
        for f in self.head_strides():
            d *= f
            dils.append(d)
        return tuple(dils)

    def to_text(self) -> str:
        low = ",".join(f"{w}/{s}" for w, s in self.low_channels)
        return (f"num_classes = {self.num_classes}\n"
                f"input_size = {self.input_size[0]}x{self.input_size[1]}\n"
                f"low_channels = {low}\n"
                f"seg_channels = {','.join(str(w) for w in self.seg_channels)}\n"
                f"dml_extra_stride = {self.dml_extra_stride}\n"
                f"window_sizes = {','.join(str(w) for w in self.window_sizes)}\n"
                f"lambda = {self.lam!r}\n"
                f"levels = {self.levels}\n")

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        kv = parse_kv(text)
        return cls.from_kv(kv)

    @classmethod
    def from_kv(cls, kv: dict[str, str]) -> "ModelConfig":
        try:
            h, _, w = kv["input_size"].partition("x")
            low = tuple(tuple(int(v) for v in item.split("/"))
                        for item in kv["low_channels"].split(","))
            windows = tuple(int(v) for v in kv["window_sizes"].split(",")) \
                if kv.get("window_sizes") else ()
            return cls(
                num_classes=int(kv["num_classes"]),
                input_size=(int(h), int(w)),
                low_channels=low,
                seg_channels=tuple(int(v) for v in kv["seg_channels"].split(",")),
                dml_extra_stride=int(kv.get("dml_extra_stride", "2")),
                window_sizes=windows,
                lam=float(kv.get("lambda", "1.0")),
                levels=int(kv.get("levels", str(len(windows)))),
            )
        except (KeyError, ValueError) as exc:
            raise DataError(f"bad model config text: {exc}") from exc


class ConvLayer:
    __slots__ = ("weight", "bias", "stride", "dilation", "padding", "act")

    def __init__(self, weight: Parameter, bias: Parameter, stride: int = 1,
                 dilation: int = 1, padding: int = 0, act: bool = True):
        self.weight = weight
        self.bias = bias
        self.stride = stride
        self.dilation = dilation
        self.padding = padding
        self.act = act

    def __call__(self, x: Tensor) -> Tensor:
        out = conv2d(x, self.weight.tensor, self.bias.tensor, stride=self.stride,
                     dilation=self.dilation, padding=self.padding)
        return relu(out) if self.act else out


class DmlBlock:
    __slots__ = ("stage", "proj", "window", "adapt")

    def __init__(self, stage: list[ConvLayer], proj: ConvLayer, window: int,
                 adapt: ConvLayer):
        self.stage = stage
        self.proj = proj
        self.window = window
        self.adapt = adapt


@dataclass
class NetworkOutput:
    s: Tensor
    m: list[Tensor]
    m_up: list[Tensor]
    p: Tensor

    def fusion_gap(self) -> float:
        """Max |p - (s + sum of m_up)| with the same left-to-right sum."""
        expect = self.s.data.copy()
        for t in self.m_up:
            expect += t.data
        return float(np.abs(self.p.data - expect).max())


class Model:
    def __init__(self, config: ModelConfig, params: dict[str, Parameter],
                 low: list[ConvLayer], seg: list[ConvLayer], seg_proj: ConvLayer,
                 dml: list[DmlBlock]):
        self.config = config
        self.params = params
        self.low = low
        self.seg = seg
        self.seg_proj = seg_proj
        self.dml = dml

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())


def _conv_param(params: dict[str, Parameter], name: str, c_out: int, c_in: int,
                k: int, seed: int, zero: bool = False) -> tuple[Parameter, Parameter]:
    if f"{name}.weight" in params:
        raise ConfigError(f"duplicate parameter name {name}.weight")
    if zero:
        data = np.zeros((c_out, c_in, k, k))
    else:
        rng = parameter_rng(seed, f"{name}.weight")
        std = math.sqrt(2.0 / (c_in * k * k))
        data = rng.normal(0.0, std, size=(c_out, c_in, k, k))
    weight = Parameter(f"{name}.weight", data)
    bias = Parameter(f"{name}.bias", np.zeros((1, c_out, 1, 1)))
    params[weight.name] = weight
    params[bias.name] = bias
    return weight, bias


def build_model(config: ModelConfig, seed: int = 0) -> Model:
    """Instantiate all blocks with fan-in scaled Gaussian weights.

    Initialization is keyed per parameter name, so variants that share a
    sub-block (e.g. different level counts) start from identical weights
    there for the same seed.
    """
    params: dict[str, Parameter] = {}
    k_cls = config.num_classes

    low = []
    c_in = 3
    for i, (width, stride) in enumerate(config.low_channels):
        w, b = _conv_param(params, f"low.{i}", width, c_in, 3, seed)
        low.append(ConvLayer(w, b, stride=stride, padding=1))
        c_in = width
    trunk_ch = c_in

    seg = []
    c_in = trunk_ch
    for i, (width, dil) in enumerate(zip(config.seg_channels, config.seg_dilations())):
        w, b = _conv_param(params, f"seg.{i}", width, c_in, 3, seed)
        seg.append(ConvLayer(w, b, dilation=dil, padding=dil))
        c_in = width
    w, b = _conv_param(params, "seg.proj", k_cls, c_in, 1, seed)
    seg_proj = ConvLayer(w, b, act=False)

    dml = []
    strides = config.head_strides()
    for j in range(config.levels):
        tag = f"dml{j + 1}"
        stage = []
        c_in = trunk_ch
        for i, width in enumerate(config.seg_channels):
            w, b = _conv_param(params, f"{tag}.stage{i}", width, c_in, 3, seed)
            stage.append(ConvLayer(w, b, stride=strides[i], padding=1))
            c_in = width
        w, b = _conv_param(params, f"{tag}.proj", k_cls, c_in, 1, seed)
        proj = ConvLayer(w, b, act=False)
        # zero start: the fused prediction begins exactly at the plain
        # segmentation output and the pooled scores fade in as they train
        w, b = _conv_param(params, f"{tag}.adapt", k_cls, k_cls, 1, seed, zero=True)
        adapt = ConvLayer(w, b, act=False)
        dml.append(DmlBlock(stage, proj, config.window_sizes[j], adapt))

    return Model(config, params, low, seg, seg_proj, dml)


def forward(model: Model, image: Tensor, trace: dict | None = None) -> NetworkOutput:
    """Run the network; p is always the elementwise sum of the head outputs."""
    cfg = model.config
    n, c, h, w = image.shape
    if c != 3 or (h, w) != cfg.input_size:
        raise ConfigError(f"image shape {image.shape} does not match configured "
                          f"input (N, 3, {cfg.input_size[0]}, {cfg.input_size[1]})")

    x = shift(image, -0.5)  # center [0,1] inputs for first-layer conditioning
    for layer in model.low:
        x = layer(x)
    o = x

    s = o
    for layer in model.seg:
        s = layer(s)
    s = model.seg_proj(s)

    m_list: list[Tensor] = []
    m_up: list[Tensor] = []
    for j, block in enumerate(model.dml):
        t = o
        for layer in block.stage:
            t = layer(t)
        t = block.proj(t)
        if trace is not None:
            trace[f"prepool{j}"] = t
        t = maxpool2d(t, kernel=block.window, stride=1, padding=(block.window - 1) // 2)
        if trace is not None:
            trace[f"pooled{j}"] = t
        t = block.adapt(t)
        m_list.append(t)
        m_up.append(upsample_nearest(t, cfg.dml_extra_stride))

    p = elementwise_sum([s] + m_up)
    return NetworkOutput(s=s, m=m_list, m_up=m_up, p=p)


def predict_labels(p, full_size: tuple[int, int]) -> np.ndarray:
    """Per-pixel argmax (ties to the lowest class), replicated up to the
    requested resolution."""
    data = p.data if isinstance(p, Tensor) else np.asarray(p)
    labels = np.argmax(data, axis=1).astype(np.uint8)
    fh, fw = full_size
    n, h, w = labels.shape
    if fh % h or fw % w:
        raise ConfigError(f"full size {full_size} not a multiple of grid {h}x{w}")
    if fh // h > 1:
        labels = np.repeat(labels, fh // h, axis=1)
    if fw // w > 1:
        labels = np.repeat(labels, fw // w, axis=2)
    return labels


def describe(model: Model) -> str:
    """Plain-text layer inventory with shapes and strides, for golden-file
    comparison."""
    cfg = model.config
    h, w = cfg.input_size
    lines = [f"input 3x{h}x{w}", "center -0.5"]

    def emit(name: str, layer: ConvLayer, h: int, w: int) -> tuple[int, int]:
        cout, cin, k, _ = layer.weight.tensor.shape
        eff = (k - 1) * layer.dilation + 1
        h = (h + 2 * layer.padding - eff) // layer.stride + 1
        w = (w + 2 * layer.padding - eff) // layer.stride + 1
        lines.append(f"{name} conv {cin}->{cout} k{k} s{layer.stride} d{layer.dilation} "
                     f"p{layer.padding}{' relu' if layer.act else ''} -> {cout}x{h}x{w}")
        return h, w

    for i, layer in enumerate(model.low):
        h, w = emit(f"low.{i}", layer, h, w)
    sh, sw = h, w
    for i, layer in enumerate(model.seg):
        sh, sw = emit(f"seg.{i}", layer, sh, sw)
    sh, sw = emit("seg.proj", model.seg_proj, sh, sw)
    for j, block in enumerate(model.dml):
        bh, bw = h, w
        for i, layer in enumerate(block.stage):
            bh, bw = emit(f"dml{j + 1}.stage{i}", layer, bh, bw)
        bh, bw = emit(f"dml{j + 1}.proj", block.proj, bh, bw)
        lines.append(f"dml{j + 1}.pool max k{block.window} s1 p{(block.window - 1) // 2} "
                     f"-> {cfg.num_classes}x{bh}x{bw}")
        bh, bw = emit(f"dml{j + 1}.adapt", block.adapt, bh, bw)
        lines.append(f"dml{j + 1}.up x{cfg.dml_extra_stride} "
                     f"-> {cfg.num_classes}x{bh * cfg.dml_extra_stride}x{bw * cfg.dml_extra_stride}")
    lines.append(f"fuse sum -> {cfg.num_classes}x{sh}x{sw}")
    return "\n".join(lines) + "\n"
