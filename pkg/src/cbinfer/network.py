"""Layer graphs, per-frame execution and the memory accountant."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .baseline import (
    ConvGeometry,
    FilterMatrix,
    argmax_classify,
    conv_gemm,
    maxpool,
    pool_output_size,
    read_weights,
    relu,
    weight_count,
    write_weights,
)
from .cbconv import CBConvState, LayerStats, cbconv_forward
from .errors import GeometryError, LoadError, ShapeError
from .tensor import DTYPE, as_frame

CONV_KINDS = ("CBCONV", "CONV")
KINDS = ("CBCONV", "CONV", "RELU", "MAXPOOL", "CLASSIFY")
ENGINES = ("cbinfer", "baseline")

_GEOM_KEYS = {
    "inChannels": "in_channels", "outChannels": "out_channels",
    "kernelH": "kernel_h", "kernelW": "kernel_w",
    "strideH": "stride_h", "strideW": "stride_w",
    "padH": "pad_h", "padW": "pad_w",
}


@dataclass
class LayerSpec:
    kind: str
    geom: ConvGeometry | None = None
    window: int = 2
    stride: int = 2
    threshold: float = 0.0
    fuse_relu: bool = True
    weights_file: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind in CONV_KINDS and self.geom is None:
            raise ValueError(f"{self.kind} layer needs a geometry")

    def to_json(self) -> dict:
        d: dict = {"kind": self.kind}
        if self.kind in CONV_KINDS:
            d["geom"] = {k: getattr(self.geom, v) for k, v in _GEOM_KEYS.items()}
            d["weightsFile"] = self.weights_file
        if self.kind == "CBCONV":
            d["threshold"] = self.threshold
            d["fuseRelu"] = self.fuse_relu
        if self.kind == "MAXPOOL":
            d["window"] = self.window
            d["stride"] = self.stride
        return d

    @classmethod
    def from_json(cls, d: dict) -> LayerSpec:
        geom = None
        if "geom" in d:
            geom = ConvGeometry(**{v: int(d["geom"][k]) for k, v in _GEOM_KEYS.items()
                                   if k in d["geom"]})
        return cls(kind=d["kind"], geom=geom, window=int(d.get("window", 2)),
                   stride=int(d.get("stride", 2)),
                   threshold=float(d.get("threshold", 0.0)),
                   fuse_relu=bool(d.get("fuseRelu", True)),
                   weights_file=d.get("weightsFile"))


@dataclass
class NetworkSpec:
    input_channels: int
    height: int
    width: int
    layers: list[LayerSpec]
    num_classes: int

    def __post_init__(self):
        for n, layer in enumerate(self.layers, start=1):
            if layer.kind in CONV_KINDS and layer.weights_file is None:
                layer.weights_file = f"layer{n}.weights.f32le"

    @property
    def cb_layers(self) -> list[int]:
        return [n for n, layer in enumerate(self.layers) if layer.kind == "CBCONV"]

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return (self.input_channels, self.height, self.width)

    def shapes(self) -> list[tuple[tuple[int, int, int], tuple[int, int, int]]]:
        """Static (input shape, output shape) of every layer.

        Raises GeometryError if the chain is inconsistent.
        """
        if not self.layers:
            raise GeometryError("network has no layers")
        shape = self.input_shape
        out = []
        for n, layer in enumerate(self.layers):
            c, h, w = shape
            if layer.kind in CONV_KINDS:
                if layer.geom.in_channels != c:
                    raise GeometryError(
                        f"layer {n + 1} expects {layer.geom.in_channels} channels, gets {c}")
                new = (layer.geom.out_channels, *layer.geom.output_size(h, w))
            elif layer.kind == "MAXPOOL":
                new = (c, *pool_output_size(h, w, layer.window, layer.stride))
            elif layer.kind == "CLASSIFY":
                if n != len(self.layers) - 1:
                    raise GeometryError("CLASSIFY must be the last layer")
                new = (1, h, w)
            else:
                new = shape
            out.append((shape, new))
            shape = new
        final = out[-1][0] if self.layers[-1].kind == "CLASSIFY" else out[-1][1]
        if final[0] != self.num_classes:
            raise GeometryError(
                f"network ends with {final[0]} channels, expected {self.num_classes} classes")
        return out

    def full_macs(self) -> int:
        return sum(layer.geom.macs(*shape_in[1:])
                   for layer, (shape_in, _) in zip(self.layers, self.shapes())
                   if layer.kind in CONV_KINDS)

    def to_json(self) -> dict:
        return {"inputChannels": self.input_channels, "height": self.height,
                "width": self.width, "numClasses": self.num_classes,
                "layers": [layer.to_json() for layer in self.layers]}

    @classmethod
    def from_json(cls, d: dict) -> NetworkSpec:
        try:
            return cls(input_channels=int(d["inputChannels"]), height=int(d["height"]),
                       width=int(d["width"]), num_classes=int(d["numClasses"]),
                       layers=[LayerSpec.from_json(x) for x in d["layers"]])
        except (KeyError, TypeError) as exc:
            raise LoadError(f"malformed network spec: {exc}") from exc

    @classmethod
    def load(cls, path) -> NetworkSpec:
        try:
            return cls.from_json(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise LoadError(f"cannot read network spec {path}: {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")


class Network:
    """A loaded network with per-layer change-based state.

    ``engine="baseline"`` evaluates every layer on the full frame;
    ``engine="cbinfer"`` routes CBCONV layers through the change-based path.
    """

    def __init__(self, spec: NetworkSpec, filters: dict[int, FilterMatrix],
                 engine: str = "cbinfer", instrument: bool = True):
        if engine not in ENGINES:
            raise ValueError(f"unknown engine {engine!r}")
        self.spec = spec
        self.shapes = spec.shapes()
        self.filters = filters
        self.engine = engine
        self.states: dict[int, CBConvState] = {}
        for n, layer in enumerate(spec.layers):
            if layer.kind in CONV_KINDS:
                filters[n].check(layer.geom)
            if layer.kind == "CBCONV":
                self.states[n] = CBConvState(layer.geom, filters[n], layer.threshold,
                                             layer.fuse_relu, instrument)
        self.last_output: np.ndarray | None = None
        self.keep_activations = False
        self.activations: list[np.ndarray] = []

    @property
    def thresholds(self) -> list[float]:
        return [self.states[n].threshold for n in self.spec.cb_layers]

    def set_thresholds(self, values) -> None:
        values = [float(v) for v in values]
        if len(values) != len(self.states):
            raise ValueError(f"need {len(self.states)} thresholds, got {len(values)}")
        for n, tau in zip(self.spec.cb_layers, values):
            if tau < 0:
                raise ValueError(f"threshold must be >= 0, got {tau}")
            self.states[n].threshold = tau

    def reset(self) -> Network:
        for state in self.states.values():
            state.reset()
        return self

    def forward(self, frame: np.ndarray) -> tuple[np.ndarray, list[LayerStats]]:
        x = as_frame(frame, *self.spec.input_shape)
        all_stats = []
        self.activations = [x] if self.keep_activations else []
        for n, layer in enumerate(self.spec.layers):
            if layer.kind == "CLASSIFY":
                all_stats.append(LayerStats(kind="CLASSIFY"))
                continue
            if layer.kind == "CBCONV" and self.engine == "cbinfer":
                x, stats = cbconv_forward(self.states[n], x)
            else:
                x, stats = self._full_layer(n, layer, x)
            if x.shape != self.shapes[n][1]:
                raise ShapeError(f"layer {n + 1} produced {x.shape}, expected {self.shapes[n][1]}")
            stats.kind = layer.kind
            all_stats.append(stats)
            if self.keep_activations:
                self.activations.append(x)
        self.last_output = x
        return argmax_classify(x), all_stats

    def _full_layer(self, n: int, layer: LayerSpec, x: np.ndarray):
        stats = LayerStats()
        if layer.kind in CONV_KINDS:
            t0 = time.perf_counter_ns()
            y = conv_gemm(x, self.filters[n], layer.geom)
            if layer.kind == "CBCONV" and layer.fuse_relu:
                y = relu(y)
            pixels = y.shape[1] * y.shape[2]
            stats.changed_input_pixels = x.shape[1] * x.shape[2]
            stats.changed_output_pixels = pixels
            stats.output_pixels = pixels
            stats.gemm_macs = layer.geom.out_channels * layer.geom.patch_size * pixels
            stats.step_nanos["gemm"] = time.perf_counter_ns() - t0
            return y, stats
        if layer.kind == "RELU":
            return relu(x), stats
        return maxpool(x, layer.window, layer.stride), stats


def load_network(spec: NetworkSpec, weights_dir, engine: str = "cbinfer",
                 instrument: bool = True) -> Network:
    spec.shapes()
    filters = {}
    for n, layer in enumerate(spec.layers):
        if layer.kind in CONV_KINDS:
            try:
                filters[n] = read_weights(Path(weights_dir) / layer.weights_file, layer.geom)
            except LoadError as exc:
                raise LoadError(f"layer {n + 1}: {exc}") from exc
    return Network(spec, filters, engine, instrument)


def forward_frame(net: Network, frame: np.ndarray) -> tuple[np.ndarray, list[LayerStats]]:
    return net.forward(frame)


def reset_state(net: Network) -> Network:
    return net.reset()


def init_weights(spec: NetworkSpec, seed: int = 0) -> dict[int, FilterMatrix]:
    """Random He-scaled filters with small biases for every conv layer."""
    rng = np.random.default_rng(seed)
    filters = {}
    for n, layer in enumerate(spec.layers):
        if layer.kind in CONV_KINDS:
            g = layer.geom
            std = np.sqrt(2.0 / g.patch_size)
            w = rng.normal(0.0, std, size=(g.out_channels, g.patch_size))
            b = rng.normal(0.0, 0.01, size=g.out_channels)
            filters[n] = FilterMatrix(w.astype(DTYPE), b.astype(DTYPE))
    return filters


def save_weights(spec: NetworkSpec, filters: dict[int, FilterMatrix], weights_dir) -> None:
    weights_dir = Path(weights_dir)
    weights_dir.mkdir(parents=True, exist_ok=True)
    for n, layer in enumerate(spec.layers):
        if layer.kind in CONV_KINDS:
            write_weights(weights_dir / layer.weights_file, filters[n])


def fit_readout(features: np.ndarray, labels: np.ndarray, num_classes: int):
    """Nearest-centroid 1x1 classifier over a ``(C, H, W)`` feature tensor.

    Class ``k`` scores ``mu_k . f - |mu_k|^2 / 2``; classes absent from
    ``labels`` get a large negative bias.
    """
    c = features.shape[0]
    flat = features.reshape(c, -1).astype(np.float64)
    lab = np.asarray(labels).reshape(-1)
    weights = np.zeros((num_classes, c))
    bias = np.full(num_classes, -1e3)
    for k in range(num_classes):
        sel = lab == k
        if sel.any():
            mu = flat[:, sel].mean(axis=1)
            weights[k] = mu
            bias[k] = -0.5 * mu @ mu
    return FilterMatrix(weights.astype(DTYPE), bias.astype(DTYPE))


def resample_labels(labels: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbour resampling of a label map onto another grid."""
    h, w = labels.shape
    rows = ((np.arange(shape[0]) + 0.5) * h / shape[0]).astype(int)
    cols = ((np.arange(shape[1]) + 0.5) * w / shape[1]).astype(int)
    return labels[np.ix_(rows, cols)]


def fit_head(net: Network, frame: np.ndarray, labels: np.ndarray) -> Network:
    """Replace the final 1x1 conv of ``net`` by a readout fitted on one labelled frame.

    Stands in for training: random feature layers followed by a classifier
    that actually separates the labelled classes.
    """
    convs = [n for n, layer in enumerate(net.spec.layers) if layer.kind in CONV_KINDS]
    last = convs[-1]
    geom = net.spec.layers[last].geom
    if geom.kernel_h != 1 or geom.kernel_w != 1:
        raise ValueError("fit_head needs a 1x1 final conv layer")
    engine, net.engine = net.engine, "baseline"
    keep, net.keep_activations = net.keep_activations, True
    try:
        net.forward(frame)
        features = net.activations[last]
    finally:
        net.engine, net.keep_activations = engine, keep
        net.activations = []
    head = fit_readout(features, resample_labels(labels, features.shape[1:]),
                       geom.out_channels)
    net.filters[last] = head
    return net


def demo_spec(channels: int, height: int, width: int, widths=(8, 16), kernel: int = 7,
              pool: bool = False, num_classes: int = 2, thresholds=None) -> NetworkSpec:
    """CB feature layers of the given widths, then a 1x1 classifier."""
    thresholds = list(thresholds) if thresholds is not None else [0.0] * len(widths)
    layers = []
    cin = channels
    for n, (cout, tau) in enumerate(zip(widths, thresholds)):
        layers.append(LayerSpec("CBCONV", ConvGeometry.same(cin, cout, kernel), threshold=tau))
        if pool and n < len(widths) - 1:
            layers.append(LayerSpec("MAXPOOL", window=2, stride=2))
        cin = cout
    layers.append(LayerSpec("CONV", ConvGeometry.same(cin, num_classes, 1)))
    layers.append(LayerSpec("CLASSIFY"))
    return NetworkSpec(channels, height, width, layers, num_classes)


# -- memory accounting ------------------------------------------------------

class MemoryMode(str, Enum):
    BASELINE_NAIVE = "BASELINE_NAIVE"
    BASELINE_SHARED = "BASELINE_SHARED"
    CBINFER = "CBINFER"


@dataclass
class MemoryReport:
    intermediate_values: int
    patch_matrix_values: int
    parameter_values: int
    cb_extra_values: int = 0
    cb_breakdown: dict = field(default_factory=dict)

    @property
    def total_values(self) -> int:
        return (self.intermediate_values + self.patch_matrix_values
                + self.parameter_values + self.cb_extra_values)


def _size(shape) -> int:
    return int(np.prod(shape))


def memory_footprint(spec: NetworkSpec, mode) -> MemoryReport:
    """Values held in memory for one batch-1 forward pass.

    BASELINE_NAIVE gives every non-ReLU layer its own output buffer and every
    conv layer a private patch matrix. BASELINE_SHARED keeps two output
    buffers used alternately (sized by the largest pair of consecutive layer
    outputs) and one patch matrix sized for the largest conv. CBINFER adds,
    per CB layer, the stored previous input, the stored previous output and
    the freshly updated output, plus a change map, an index list and a
    result matrix shared across CB layers.
    """
    mode = MemoryMode(mode)
    shapes = spec.shapes()
    outputs = [_size(out) for layer, (_, out) in zip(spec.layers, shapes)
               if layer.kind != "RELU"]
    patch = [layer.geom.patch_size * out[1] * out[2]
             for layer, (_, out) in zip(spec.layers, shapes) if layer.kind in CONV_KINDS]
    params = sum(weight_count(layer.geom) for layer in spec.layers
                 if layer.kind in CONV_KINDS)

    if mode is MemoryMode.BASELINE_NAIVE:
        return MemoryReport(sum(outputs), sum(patch), params)

    pairs = [a + b for a, b in zip(outputs, outputs[1:])] or outputs
    report = MemoryReport(max(pairs), max(patch, default=0), params)
    if mode is MemoryMode.BASELINE_SHARED:
        return report

    cb = [(shape_in, shape_out) for layer, (shape_in, shape_out) in zip(spec.layers, shapes)
          if layer.kind == "CBCONV"]
    breakdown = {
        "prev_inputs": sum(_size(i) for i, _ in cb),
        "prev_outputs": sum(_size(o) for _, o in cb),
        "updated_outputs": sum(_size(o) for _, o in cb),
        "change_map": max((i[1] * i[2] for i, _ in cb), default=0),
        "index_list": max((o[1] * o[2] for _, o in cb), default=0),
        "y_matrix": max((_size(o) for _, o in cb), default=0),
    }
    report.cb_extra_values = sum(breakdown.values())
    report.cb_breakdown = breakdown
    return report


def scene_labeling_spec(height: int = 608, width: int = 776) -> NetworkSpec:
    """A 5-layer, 8-class scene-labeling network used as the memory reference.

    Three 7x7 feature layers (3->16->64->256, 2x2 pooling after the first
    two) and a 1x1 classifier head (256->64->8), about 873k parameters.
    The layer widths and default frame size are reconstructed from aggregate
    buffer sizes rather than known exactly.
    """
    def cb(cin, cout, tau):
        return LayerSpec("CBCONV", ConvGeometry.same(cin, cout, 7), threshold=tau)

    layers = [
        cb(3, 16, 0.04), LayerSpec("MAXPOOL", window=2, stride=2),
        cb(16, 64, 0.3), LayerSpec("MAXPOOL", window=2, stride=2),
        cb(64, 256, 1.0),
        LayerSpec("CONV", ConvGeometry.same(256, 64, 1)), LayerSpec("RELU"),
        LayerSpec("CONV", ConvGeometry.same(64, 8, 1)),
        LayerSpec("CLASSIFY"),
    ]
    return NetworkSpec(3, height, width, layers, 8)
