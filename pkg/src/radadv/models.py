"""Toy frame-sequence classifier architectures and checkpoint I/O.

Three families cover the design space the harness probes:

* ``A-mini`` -- a plain deep 3-D CNN: four conv/ELU/max-pool blocks with
  widths (8, 16, 32, 64), then two linear layers.
* ``R-mini`` -- a residual stem + two grouped-convolution bottleneck
  blocks with identity skips (cardinality 4), batch norm throughout,
  global average pooling.
* ``L-mini`` -- a shared per-frame 2-D convolutional extractor feeding a
  single LSTM over the frame axis.

All three consume a (B, T, H, W) batch of frame stacks and emit raw class
scores (no softmax).  Layer dimensions derive deterministically from the
input shape, so one architecture id plus an input shape pins every
parameter shape.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ops
from .ops import BatchNormState
from .rng import STREAM_INIT, rng_for
from .tensor import Tape, Tensor, backward

CHECKPOINT_VERSION = 1
NUM_CLASSES = 6


class CheckpointError(ValueError):
    pass


@dataclass
class ParameterSet:
    """Named trainable tensors plus batch-norm running state."""

    arch: str
    tensors: dict[str, Tensor] = field(default_factory=dict)
    bn_states: dict[str, BatchNormState] = field(default_factory=dict)

    def detached(self) -> "ParameterSet":
        ps = ParameterSet(self.arch)
        ps.tensors = {k: t.detached() for k, t in self.tensors.items()}
        ps.bn_states = self.bn_states
        return ps

    def copy(self) -> "ParameterSet":
        ps = ParameterSet(self.arch)
        for k, t in self.tensors.items():
            ps.tensors[k] = Tensor(t.data.copy(), requires_grad=t.requires_grad)
        for k, st in self.bn_states.items():
            new = BatchNormState(st.running_mean.shape[0], st.running_mean.dtype, st.momentum)
            new.running_mean = st.running_mean.copy()
            new.running_var = st.running_var.copy()
            ps.bn_states[k] = new
        return ps

    def zero_grads(self) -> None:
        for t in self.tensors.values():
            t.grad = None


def _uniform(rng, shape, fan_in, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def _pool_extent(e: int, w: int) -> int:
    return (e - w) // w + 1


class _ArchBase:
    arch_id = ""
    feature_layers: tuple[str, ...] = ()
    default_cam_layer = ""

    def __init__(self, input_shape, num_classes=NUM_CLASSES):
        self.input_shape = tuple(int(v) for v in input_shape)
        self.num_classes = int(num_classes)

    def param_shapes(self) -> dict[str, tuple]:
        raise NotImplementedError

    def bn_channels(self) -> dict[str, int]:
        return {}

    def init_params(self, seed: int, dtype=np.float32) -> ParameterSet:
        rng = rng_for(seed, STREAM_INIT)
        ps = ParameterSet(self.arch_id)
        for name, shape in self.param_shapes().items():
            ps.tensors[name] = Tensor(self._init_entry(rng, name, shape, dtype), requires_grad=True)
        for name, ch in self.bn_channels().items():
            ps.bn_states[name] = BatchNormState(ch, dtype)
        return ps

    def _init_entry(self, rng, name, shape, dtype):
        if name.endswith(".b") or name.endswith(".beta") or name.endswith(".b_hh"):
            return np.zeros(shape, dtype=dtype)
        if name.endswith(".gamma"):
            return np.ones(shape, dtype=dtype)
        if name.endswith(".b_ih"):
            # positive forget-gate bias helps early recurrent training
            b = np.zeros(shape, dtype=dtype)
            m = shape[0] // 4
            b[m:2 * m] = 1.0
            return b
        if name.endswith(".w_hh"):
            return _uniform(rng, shape, shape[1], dtype)
        fan_in = int(np.prod(shape[1:]))
        return _uniform(rng, shape, fan_in, dtype)

    def validate_params(self, ps: ParameterSet) -> None:
        expected = self.param_shapes()
        names = set(ps.tensors)
        if names != set(expected):
            missing = set(expected) - names
            extra = names - set(expected)
            raise CheckpointError(f"parameter names mismatch (missing={sorted(missing)}, extra={sorted(extra)})")
        for name, shape in expected.items():
            got = tuple(ps.tensors[name].shape)
            if got != tuple(shape):
                raise CheckpointError(f"parameter {name} has shape {got}, expected {tuple(shape)}")

    def forward(self, ps: ParameterSet, x: Tensor, train: bool = False,
                dropout_rate: float = 0.0, rng=None, capture: dict | None = None) -> Tensor:
        raise NotImplementedError


class AMini(_ArchBase):
    arch_id = "A-mini"
    widths = (8, 16, 32, 64)
    hidden = 128
    feature_layers = ("conv1", "conv2", "conv3", "conv4")
    default_cam_layer = "conv4"

    def __init__(self, input_shape, num_classes=NUM_CLASSES):
        super().__init__(input_shape, num_classes)
        t, h, w = self.input_shape
        self.pools = []
        self.block_shapes = []
        for b in range(4):
            # keep temporal extent after the second block so deep features
            # still resolve the frame axis
            wt = 2 if (b < 2 and t >= 2) else 1
            wh = 2 if h >= 2 else 1
            ww = 2 if w >= 2 else 1
            self.block_shapes.append((t, h, w))
            self.pools.append((wt, wh, ww))
            t, h, w = _pool_extent(t, wt), _pool_extent(h, wh), _pool_extent(w, ww)
        self.flat_dim = self.widths[-1] * t * h * w

    def param_shapes(self):
        shapes = {}
        cin = 1
        for i, cout in enumerate(self.widths, start=1):
            shapes[f"conv{i}.w"] = (cout, cin, 3, 3, 3)
            shapes[f"conv{i}.b"] = (cout,)
            cin = cout
        shapes["fc1.w"] = (self.hidden, self.flat_dim)
        shapes["fc1.b"] = (self.hidden,)
        shapes["fc2.w"] = (self.num_classes, self.hidden)
        shapes["fc2.b"] = (self.num_classes,)
        return shapes

    def forward(self, ps, x, train=False, dropout_rate=0.0, rng=None, capture=None):
        B = x.shape[0]
        h = ops.reshape(x, (B, 1) + self.input_shape)
        for i in range(1, 5):
            h = ops.conv3d(h, ps.tensors[f"conv{i}.w"], ps.tensors[f"conv{i}.b"], padding=(1, 1, 1))
            h = ops.elu(h)
            if capture is not None:
                capture[f"conv{i}"] = h
            if train and dropout_rate > 0.0:
                h = ops.dropout(h, dropout_rate, rng)
            h = ops.pool3d(h, "max", self.pools[i - 1])
        h = ops.reshape(h, (B, self.flat_dim))
        h = ops.elu(ops.linear(h, ps.tensors["fc1.w"], ps.tensors["fc1.b"]))
        if train and dropout_rate > 0.0:
            h = ops.dropout(h, dropout_rate, rng)
        return ops.linear(h, ps.tensors["fc2.w"], ps.tensors["fc2.b"])


class RMini(_ArchBase):
    arch_id = "R-mini"
    stem_channels = 32
    bottleneck_channels = 16
    cardinality = 4
    num_blocks = 2
    feature_layers = ("stem", "block1", "block2")
    default_cam_layer = "block2"

    def __init__(self, input_shape, num_classes=NUM_CLASSES):
        super().__init__(input_shape, num_classes)
        t, h, w = self.input_shape
        # stride-2 stem, like the full-size residual family
        self.stem_stride = tuple(2 if e >= 4 else 1 for e in (t, h, w))
        te, he, we = (((e + 2 - 3) // s) + 1 for e, s in zip((t, h, w), self.stem_stride))
        self.stem_pool = (2 if te >= 4 else 1, 2 if he >= 4 else 1, 2 if we >= 4 else 1)

    def param_shapes(self):
        s, bn, g = self.stem_channels, self.bottleneck_channels, self.cardinality
        shapes = {"stem.w": (s, 1, 3, 3, 3), "stem.b": (s,),
                  "stem_bn.gamma": (s,), "stem_bn.beta": (s,)}
        for i in range(1, self.num_blocks + 1):
            p = f"block{i}"
            shapes[f"{p}.reduce.w"] = (bn, s, 1, 1, 1)
            shapes[f"{p}.reduce.b"] = (bn,)
            shapes[f"{p}.bn1.gamma"] = (bn,)
            shapes[f"{p}.bn1.beta"] = (bn,)
            shapes[f"{p}.group.w"] = (bn, bn // g, 3, 3, 3)
            shapes[f"{p}.group.b"] = (bn,)
            shapes[f"{p}.bn2.gamma"] = (bn,)
            shapes[f"{p}.bn2.beta"] = (bn,)
            shapes[f"{p}.expand.w"] = (s, bn, 1, 1, 1)
            shapes[f"{p}.expand.b"] = (s,)
            shapes[f"{p}.bn3.gamma"] = (s,)
            shapes[f"{p}.bn3.beta"] = (s,)
        shapes["fc.w"] = (self.num_classes, s)
        shapes["fc.b"] = (self.num_classes,)
        return shapes

    def bn_channels(self):
        chans = {"stem_bn": self.stem_channels}
        for i in range(1, self.num_blocks + 1):
            chans[f"block{i}.bn1"] = self.bottleneck_channels
            chans[f"block{i}.bn2"] = self.bottleneck_channels
            chans[f"block{i}.bn3"] = self.stem_channels
        return chans

    def _bn(self, ps, name, h, mode):
        return ops.batchnorm(h, ps.tensors[f"{name}.gamma"], ps.tensors[f"{name}.beta"],
                             ps.bn_states[name], mode=mode)

    def forward(self, ps, x, train=False, dropout_rate=0.0, rng=None, capture=None):
        B = x.shape[0]
        mode = "train" if train else "infer"
        h = ops.reshape(x, (B, 1) + self.input_shape)
        h = ops.conv3d(h, ps.tensors["stem.w"], ps.tensors["stem.b"],
                       stride=self.stem_stride, padding=(1, 1, 1))
        h = ops.relu(self._bn(ps, "stem_bn", h, mode))
        if capture is not None:
            capture["stem"] = h
        h = ops.pool3d(h, "max", self.stem_pool)
        for i in range(1, self.num_blocks + 1):
            p = f"block{i}"
            skip = h
            h = ops.conv3d(h, ps.tensors[f"{p}.reduce.w"], ps.tensors[f"{p}.reduce.b"])
            h = ops.relu(self._bn(ps, f"{p}.bn1", h, mode))
            h = ops.conv3d(h, ps.tensors[f"{p}.group.w"], ps.tensors[f"{p}.group.b"],
                           padding=(1, 1, 1), groups=self.cardinality)
            h = ops.relu(self._bn(ps, f"{p}.bn2", h, mode))
            h = ops.conv3d(h, ps.tensors[f"{p}.expand.w"], ps.tensors[f"{p}.expand.b"])
            h = self._bn(ps, f"{p}.bn3", h, mode)
            h = ops.relu(ops.add(h, skip))
            if capture is not None:
                capture[p] = h
        if train and dropout_rate > 0.0:
            h = ops.dropout(h, dropout_rate, rng)
        h = ops.mean_axes(h, (2, 3, 4))
        return ops.linear(h, ps.tensors["fc.w"], ps.tensors["fc.b"])


class LMini(_ArchBase):
    arch_id = "L-mini"
    conv_channels = (16, 32)
    hidden = 48
    feature_layers = ("conv1", "conv2")
    default_cam_layer = "conv2"

    def param_shapes(self):
        c1, c2 = self.conv_channels
        m = self.hidden
        return {
            "conv1.w": (c1, 1, 1, 3, 3), "conv1.b": (c1,),
            "conv2.w": (c2, c1, 1, 3, 3), "conv2.b": (c2,),
            "lstm.w_ih": (4 * m, c2), "lstm.w_hh": (4 * m, m),
            "lstm.b_ih": (4 * m,), "lstm.b_hh": (4 * m,),
            "fc.w": (self.num_classes, m), "fc.b": (self.num_classes,),
        }

    def forward(self, ps, x, train=False, dropout_rate=0.0, rng=None, capture=None):
        B = x.shape[0]
        T = self.input_shape[0]
        h = ops.reshape(x, (B, 1) + self.input_shape)
        # (1, 3, 3) kernels never mix the frame axis: the extractor is a
        # 2-D conv shared across frames
        h = ops.relu(ops.conv3d(h, ps.tensors["conv1.w"], ps.tensors["conv1.b"], padding=(0, 1, 1)))
        if capture is not None:
            capture["conv1"] = h
        h = ops.pool3d(h, "max", (1, 2, 2))
        h = ops.relu(ops.conv3d(h, ps.tensors["conv2.w"], ps.tensors["conv2.b"], padding=(0, 1, 1)))
        if capture is not None:
            capture["conv2"] = h
        h = ops.pool3d(h, "max", (1, 2, 2))
        seq = ops.mean_axes(h, (3, 4))  # (B, C, T)
        C = seq.shape[1]
        dtype = x.dtype
        hh = Tensor(np.zeros((B, self.hidden), dtype=dtype))
        cc = Tensor(np.zeros((B, self.hidden), dtype=dtype))
        for t in range(T):
            xt = ops.reshape(ops.slice_axis(seq, 2, t, t + 1), (B, C))
            hh, cc = ops.lstm_step(xt, hh, cc, ps.tensors["lstm.w_ih"], ps.tensors["lstm.w_hh"],
                                   ps.tensors["lstm.b_ih"], ps.tensors["lstm.b_hh"])
        if train and dropout_rate > 0.0:
            hh = ops.dropout(hh, dropout_rate, rng)
        return ops.linear(hh, ps.tensors["fc.w"], ps.tensors["fc.b"])


ARCHITECTURES = {a.arch_id: a for a in (AMini, RMini, LMini)}


def build_arch(arch_id: str, input_shape, num_classes=NUM_CLASSES) -> _ArchBase:
    if arch_id not in ARCHITECTURES:
        raise ValueError(f"unknown architecture id {arch_id!r}; known: {sorted(ARCHITECTURES)}")
    return ARCHITECTURES[arch_id](input_shape, num_classes)


# ---------------------------------------------------------------------------
# classifier wrapper used by attacks and interpretability probes


class Classifier:
    """Inference and input-gradient surface over a frozen parameter set."""

    def __init__(self, arch: _ArchBase, params: ParameterSet, model_id: str = ""):
        self.arch = arch
        self.model_id = model_id or arch.arch_id
        self._params = params.detached()

    @property
    def num_classes(self) -> int:
        return self.arch.num_classes

    def _batchify(self, x: np.ndarray) -> tuple[np.ndarray, bool]:
        if x.ndim == 3:
            return x[None], True
        if x.ndim == 4:
            return x, False
        raise ops.ShapeError(f"classifier input must be (T,H,W) or (B,T,H,W), got {x.shape}")

    def logits(self, x: np.ndarray) -> np.ndarray:
        xb, single = self._batchify(np.asarray(x))
        out = self.arch.forward(self._params, Tensor(xb), train=False).data
        return out[0] if single else out

    def _grad(self, x: np.ndarray, seed_builder) -> tuple[np.ndarray, np.ndarray]:
        xb, single = self._batchify(np.asarray(x))
        xt = Tensor(xb, requires_grad=True)
        with Tape() as tape:
            lt = self.arch.forward(self._params, xt, train=False)
            seed = seed_builder(lt)
        backward(tape, seed)
        g = xt.grad if xt.grad is not None else np.zeros_like(xb)
        return (lt.data[0], g[0]) if single else (lt.data, g)

    def ce_grad(self, x: np.ndarray, classes) -> tuple[np.ndarray, np.ndarray]:
        """Logits plus gradient of the summed cross-entropy toward ``classes``."""
        cls = np.atleast_1d(np.asarray(classes, dtype=np.int64))
        return self._grad(x, lambda lt: ops.cross_entropy(lt, cls, reduction="sum"))

    def class_logit_grad(self, x: np.ndarray, classes) -> tuple[np.ndarray, np.ndarray]:
        """Logits plus gradient of the summed per-row class score."""
        cls = np.atleast_1d(np.asarray(classes, dtype=np.int64))
        return self._grad(x, lambda lt: ops.sum_all(ops.gather_rows(lt, cls)))

    def margin_loss_grad(self, x: np.ndarray, classes, kappa: float) -> tuple[np.ndarray, np.ndarray]:
        """Gradient of sum_rows max(best_other - target, -kappa).

        Rows already at the -kappa plateau contribute zero gradient.
        """
        cls = np.atleast_1d(np.asarray(classes, dtype=np.int64))

        def build(lt):
            ld = lt.data
            masked = ld.copy()
            masked[np.arange(ld.shape[0]), cls] = -np.inf
            best_other = masked.argmax(axis=1)
            margins = masked[np.arange(ld.shape[0]), best_other] - ld[np.arange(ld.shape[0]), cls]
            live = (margins > -kappa).astype(ld.dtype)
            diff = ops.sub(ops.gather_rows(lt, best_other), ops.gather_rows(lt, cls))
            return ops.sum_all(ops.scale_by(diff, live))

        return self._grad(x, build)

    def gradcam_parts(self, x: np.ndarray, cls: int, layer: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(logits, feature value, feature gradient) for one sample."""
        if layer not in self.arch.feature_layers:
            raise ValueError(f"layer {layer!r} is not a convolutional feature layer of "
                             f"{self.arch.arch_id}; options: {self.arch.feature_layers}")
        cap: dict = {}
        xt = Tensor(np.asarray(x)[None], requires_grad=True)
        with Tape() as tape:
            lt = self.arch.forward(self._params, xt, train=False, capture=cap)
            seed = ops.sum_all(ops.gather_rows(lt, np.array([cls], dtype=np.int64)))
        backward(tape, seed)
        feat = cap[layer]
        fgrad = feat.grad if feat.grad is not None else np.zeros_like(feat.data)
        return lt.data[0], feat.data[0], fgrad[0]


# ---------------------------------------------------------------------------
# trained model container and checkpoint format


@dataclass
class TrainedModel:
    arch_id: str
    input_shape: tuple
    num_classes: int
    split_id: str
    seed: int
    params: ParameterSet
    metrics: dict = field(default_factory=dict)
    precision: str = "float32"

    @property
    def model_id(self) -> str:
        return f"{self.arch_id}_{self.split_id}"

    def classifier(self) -> Classifier:
        arch = build_arch(self.arch_id, self.input_shape, self.num_classes)
        return Classifier(arch, self.params, self.model_id)


def _checkpoint_entries(params: ParameterSet):
    for name in params.tensors:
        yield name, "param", params.tensors[name].data
    for name in params.bn_states:
        yield f"{name}.mean", "buffer", params.bn_states[name].running_mean
        yield f"{name}.var", "buffer", params.bn_states[name].running_var


def save_model(model: TrainedModel, prefix: str | Path) -> None:
    """Write ``<prefix>.json`` (manifest) and ``<prefix>.bin`` (LE blob)."""
    prefix = Path(prefix)
    entries = []
    chunks = []
    offset = 0
    for name, kind, arr in _checkpoint_entries(model.params):
        raw = np.ascontiguousarray(arr)
        le = raw.astype(raw.dtype.newbyteorder("<"), copy=False)
        data = le.tobytes()
        entries.append({"name": name, "kind": kind, "shape": list(arr.shape),
                        "dtype": str(arr.dtype), "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "arch": model.arch_id,
        "input_shape": list(model.input_shape),
        "num_classes": model.num_classes,
        "split": model.split_id,
        "seed": model.seed,
        "precision": model.precision,
        "init": "fan_in_uniform",
        "byte_order": "little",
        "entries": entries,
        "metrics": model.metrics,
    }
    prefix.parent.mkdir(parents=True, exist_ok=True)
    prefix.with_suffix(".json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    prefix.with_suffix(".bin").write_bytes(b"".join(chunks))


def load_model(prefix: str | Path) -> TrainedModel:
    prefix = Path(prefix)
    mpath = prefix.with_suffix(".json")
    if not mpath.exists():
        raise CheckpointError(f"checkpoint manifest missing: {mpath}")
    manifest = json.loads(mpath.read_text())
    if manifest.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unknown checkpoint format version {manifest.get('format_version')!r}")
    blob = prefix.with_suffix(".bin").read_bytes()
    total = sum(e["nbytes"] for e in manifest["entries"])
    if len(blob) != total:
        raise CheckpointError(f"checkpoint blob is {len(blob)} bytes, manifest declares {total}")

    arch = build_arch(manifest["arch"], manifest["input_shape"], manifest["num_classes"])
    ps = ParameterSet(manifest["arch"])
    buffers = {}
    for e in manifest["entries"]:
        raw = blob[e["offset"]:e["offset"] + e["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(e["dtype"]).newbyteorder("<")).astype(e["dtype"])
        if arr.size != int(np.prod(e["shape"])):
            raise CheckpointError(f"entry {e['name']} byte length disagrees with shape {e['shape']}")
        arr = arr.reshape(e["shape"])
        if e["kind"] == "param":
            ps.tensors[e["name"]] = Tensor(arr, requires_grad=True)
        else:
            buffers[e["name"]] = arr
    for name, ch in arch.bn_channels().items():
        st = BatchNormState(ch, dtype=buffers[f"{name}.mean"].dtype)
        st.running_mean = buffers[f"{name}.mean"]
        st.running_var = buffers[f"{name}.var"]
        ps.bn_states[name] = st
    arch.validate_params(ps)
    return TrainedModel(
        arch_id=manifest["arch"], input_shape=tuple(manifest["input_shape"]),
        num_classes=manifest["num_classes"], split_id=manifest["split"],
        seed=manifest["seed"], params=ps, metrics=manifest.get("metrics", {}),
        precision=manifest.get("precision", "float32"),
    )
