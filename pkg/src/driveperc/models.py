"""Model factories and the binary checkpoint format.

Checkpoint layout (all integers unsigned 32-bit little-endian)::

    b"NNW1"  version  graph_len  graph_json[graph_len]
    tensor_count  { ndim  dims[ndim]  float64_le[prod(dims)] } * tensor_count

The graph is sorted-key JSON holding the layer specs, input shape and name.
Tensors are every layer parameter followed by every running statistic, in
layer order.
"""

import json
import struct

import numpy as np

from .errors import FormatError, UnsupportedVersionError
from .nn.layers import BatchNorm, ConcatMerge, Conv2D, Dense, Dropout, Flatten, MaxPool, Upsample
from .nn.model import Model

MAGIC = b"NNW1"
VERSION = 1


def _sign_trunk():
    specs = []
    for filters in (64, 128, 512):
        specs += [
            Conv2D(filters, 3, padding="same", activation="relu"),
            MaxPool(2),
            BatchNorm(),
            Dropout(0.3),
        ]
    return specs + [Flatten()]


def build_traffic_sign_cnn(seed=0, classes=43):
    """Three conv/pool/BN/dropout blocks and a 4000-4000-1000 dense head; 3x32x32 input."""
    specs = _sign_trunk() + [
        Dense(4000, activation="relu"),
        Dense(4000, activation="relu"),
        Dense(1000, activation="relu"),
        Dense(classes, activation="softmax"),
    ]
    return Model(specs, (3, 32, 32), seed=seed, name="traffic_sign_cnn")


def build_behavior_clone_cnn(seed=0):
    """Five ELU convolutions (strides 2,2,2,1,1) and a 100-50-10-1 head; 3x66x200 input."""
    specs = [
        Conv2D(24, 5, stride=2, activation="elu"),
        Conv2D(36, 5, stride=2, activation="elu"),
        Conv2D(48, 5, stride=2, activation="elu"),
        Conv2D(64, 3, activation="elu"),
        Conv2D(64, 3, activation="elu"),
        Dropout(0.5),
        Flatten(),
        Dense(100, activation="elu"),
        Dense(50, activation="elu"),
        Dense(10, activation="elu"),
        Dense(1),
    ]
    return Model(specs, (3, 66, 200), seed=seed, name="behavior_clone_cnn")


def build_mini_fcn_segmenter(seed=0, size=128):
    """Five-block encoder with pool3/pool4 skips fused into an x2, x2, x8 decoder."""
    specs = []
    for i, c in enumerate((16, 32, 64, 128, 128), start=1):
        specs += [
            Conv2D(c, 3, padding="same", activation="relu"),
            MaxPool(2, tap=f"pool{i}" if i >= 3 else None),
        ]
    specs += [
        Upsample(2),
        ConcatMerge("pool4"),
        Conv2D(64, 3, padding="same", activation="relu"),
        Upsample(2),
        ConcatMerge("pool3"),
        Conv2D(32, 3, padding="same", activation="relu"),
        Upsample(8),
        Conv2D(1, 1, activation="sigmoid"),
    ]
    return Model(specs, (3, size, size), seed=seed, name="mini_fcn_segmenter")


def build_binary_vehicle_cnn(seed=0):
    """The traffic-sign trunk with a single sigmoid unit."""
    return Model(_sign_trunk() + [Dense(1, activation="sigmoid")], (3, 32, 32), seed=seed, name="binary_vehicle_cnn")


FACTORIES = {
    "traffic_sign_cnn": build_traffic_sign_cnn,
    "behavior_clone_cnn": build_behavior_clone_cnn,
    "mini_fcn_segmenter": build_mini_fcn_segmenter,
    "binary_vehicle_cnn": build_binary_vehicle_cnn,
}


# ---------------------------------------------------------------------------
# checkpoints


def _graph(model):
    return {
        "name": model.name,
        "input_shape": list(model.input_shape),
        "layers": [s.to_dict() for s in model.specs],
    }


def checkpoint_bytes(model):
    graph = json.dumps(_graph(model), sort_keys=True, separators=(",", ":")).encode("utf-8")
    tensors = model.params() + model.buffers()
    parts = [MAGIC, struct.pack("<II", VERSION, len(graph)), graph, struct.pack("<I", len(tensors))]
    for t in tensors:
        parts.append(struct.pack(f"<I{t.ndim}I", t.ndim, *t.shape))
        parts.append(np.ascontiguousarray(t, dtype="<f8").tobytes())
    return b"".join(parts)


def save_checkpoint(model, path):
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(model))


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated checkpoint while reading {what}", len(self.data))
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]


def checkpoint_from_bytes(data):
    r = _Reader(bytes(data))
    if r.take(4, "magic") != MAGIC:
        raise FormatError("not a checkpoint (bad magic)", 0)
    version = r.u32("version")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported checkpoint version {version}", 4)
    start = r.pos
    raw = r.take(r.u32("graph length"), "graph")
    try:
        graph = json.loads(raw.decode("utf-8"))
        model = Model(graph["layers"], graph["input_shape"], name=graph["name"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"bad model graph: {exc}", start) from exc
    targets = model.params() + model.buffers()
    offset = r.pos
    count = r.u32("tensor count")
    if count != len(targets):
        raise FormatError(f"graph needs {len(targets)} tensors, file has {count}", offset)
    for i, t in enumerate(targets):
        offset = r.pos
        ndim = r.u32(f"tensor {i} rank")
        dims = struct.unpack(f"<{ndim}I", r.take(4 * ndim, f"tensor {i} shape"))
        if dims != t.shape:
            raise FormatError(f"tensor {i} has shape {dims}, graph expects {t.shape}", offset)
        t[...] = np.frombuffer(r.take(8 * t.size, f"tensor {i} data"), dtype="<f8").reshape(dims)
    if r.pos != len(r.data):
        raise FormatError("trailing bytes after last tensor", r.pos)
    return model


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return checkpoint_from_bytes(fh.read())
