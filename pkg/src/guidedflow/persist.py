"""Binary artifact formats. All numbers are little-endian; arrays are float64.

``PFDM`` demo set::

    b"PFDM" u32 version u32 count u32 horizon u32 dim
    count x (start[dim] goal[dim] waypoints[horizon * dim])
    4 normalization coefficients (sx, sy, ox, oy)

The maze a demo set was planned in is not part of the binary; it travels in
a JSON sidecar (``<file>.json``) together with the generating config.

``PFCK`` checkpoint::

    b"PFCK" u32 version u32 n_layers u32[n_layers] layer_dims
    u32 meta_len meta_json  u64 n_params f64[n_params]

``PFPF`` potential field::

    b"PFPF" u32 version u32 meta_len meta_json
    f64 bandwidth f64 threshold f64 quantile f64 alpha f64 cap
    u32 M u32 d f64[M * d] kde points  u32 K f64[K * d] anchors

Meta blocks are UTF-8 JSON holding tags, flags and the resolved config echo.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .density import KdeModel, log_density_many
from .errors import FormatError
from .mazeworld import DemoSet, Demonstration, Normalization, parse_maze
from .nnet import VectorFieldNet
from .potential import PotentialField, SafeSet

DEMO_MAGIC, DEMO_VERSION = b"PFDM", 1
CKPT_MAGIC, CKPT_VERSION = b"PFCK", 1
FIELD_MAGIC, FIELD_VERSION = b"PFPF", 1


class _Reader:
    def __init__(self, data, what):
        self.data = memoryview(data)
        self.pos = 0
        self.what = what

    def take(self, n):
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.what}: truncated at byte {self.pos} (needed {n} more)")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def u64(self):
        return struct.unpack("<Q", self.take(8))[0]

    def f64(self, count=None):
        if count is None:
            return struct.unpack("<d", self.take(8))[0]
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64)

    def json(self):
        n = self.u32()
        try:
            return json.loads(bytes(self.take(n)).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"{self.what}: corrupt metadata block ({exc})") from exc

    def header(self, magic, version):
        got = bytes(self.take(4))
        if got != magic:
            raise FormatError(f"{self.what}: bad magic {got!r}, expected {magic!r}")
        v = self.u32()
        if v != version:
            raise FormatError(f"{self.what}: unsupported version {v} (reader knows {version})")

    def finish(self):
        if self.pos != len(self.data):
            raise FormatError(f"{self.what}: {len(self.data) - self.pos} trailing bytes")


def _f64(a):
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def _json_block(obj):
    raw = json.dumps(obj, sort_keys=True).encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def _read(path, what):
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"{what}: cannot read {path}: {exc}") from exc


# -- demo sets ---------------------------------------------------------------

def demoset_bytes(ds):
    T, d = ds.horizon, ds.dim
    parts = [DEMO_MAGIC, struct.pack("<IIII", DEMO_VERSION, len(ds), T, d)]
    for demo in ds.demos:
        if demo.waypoints.shape != (T, d):
            raise FormatError("all demos must share one horizon and dimension")
        parts += [_f64(demo.start), _f64(demo.goal), _f64(demo.waypoints)]
    parts.append(_f64(ds.normalization.coefficients()))
    return b"".join(parts)


def demoset_from_bytes(data, maze):
    r = _Reader(data, "demo set")
    r.header(DEMO_MAGIC, DEMO_VERSION)
    count, T, d = r.u32(), r.u32(), r.u32()
    if count < 1 or T < 2 or d != 2:
        raise FormatError(f"demo set: implausible header count={count} horizon={T} dim={d}")
    demos = []
    for _ in range(count):
        start, goal = r.f64(d), r.f64(d)
        demos.append(Demonstration(start, goal, r.f64(T * d).reshape(T, d)))
    sx, sy, ox, oy = r.f64(4)
    r.finish()
    if sx <= 0 or sy <= 0:
        raise FormatError("demo set: normalization is not invertible")
    return DemoSet(demos, maze, Normalization((sx, sy), (ox, oy)))


def sidecar_path(path):
    return Path(str(path) + ".json")


def save_demoset(path, ds, config_echo=None):
    Path(path).write_bytes(demoset_bytes(ds))
    meta = {"maze_name": ds.maze.name, "maze_text": ds.maze.to_text(),
            "wall_inflation": ds.maze.wall_inflation, "config": config_echo or {}}
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_demoset(path, maze=None):
    """Read a ``PFDM`` file; the maze comes from the argument or the sidecar."""
    data = _read(path, "demo set")
    if maze is None:
        side = sidecar_path(path)
        try:
            meta = json.loads(side.read_text())
            maze = parse_maze(meta["maze_text"], meta.get("maze_name", "custom"),
                              meta.get("wall_inflation", 0.0))
        except (OSError, KeyError, ValueError) as exc:
            raise FormatError(f"demo set: cannot recover maze from {side}: {exc}") from exc
    return demoset_from_bytes(data, maze)


# -- checkpoints -------------------------------------------------------------

def checkpoint_bytes(net, config_echo=None, seed=0):
    meta = {"activation": net.activation, "time_features": net.time_features,
            "action_skip": net.skip is not None, "parameterization": net.parameterization,
            "endpoint_floor": net.endpoint_floor, "seed": int(seed), "config": config_echo or {}}
    flat = np.concatenate([p.ravel() for p in net.parameters()])
    dims = net.layer_dims
    return b"".join([CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(dims)),
                     struct.pack(f"<{len(dims)}I", *dims), _json_block(meta),
                     struct.pack("<Q", flat.size), _f64(flat)])


def checkpoint_from_bytes(data):
    """Returns ``(net, meta)``."""
    r = _Reader(data, "checkpoint")
    r.header(CKPT_MAGIC, CKPT_VERSION)
    L = r.u32()
    if not 2 <= L <= 64:
        raise FormatError(f"checkpoint: implausible layer count {L}")
    dims = [r.u32() for _ in range(L)]
    meta = r.json()
    try:
        template = VectorFieldNet.zeros(dims, meta["activation"], meta["time_features"],
                                        meta["action_skip"])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"checkpoint: bad metadata ({exc})") from exc
    n = r.u64()
    if n != template.n_params:
        raise FormatError(f"checkpoint: {n} parameters stored, layer dims need {template.n_params}")
    flat = r.f64(n)
    r.finish()
    params, k = [], 0
    for p in template.parameters():
        params.append(flat[k:k + p.size].reshape(p.shape))
        k += p.size
    net = template.with_parameters(params)
    try:
        net = VectorFieldNet(net.layer_dims, net.weights, net.biases, net.activation,
                             net.time_features, net.skip, meta["parameterization"],
                             meta["endpoint_floor"])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"checkpoint: bad metadata ({exc})") from exc
    return net, meta


def save_checkpoint(path, net, config_echo=None, seed=0):
    Path(path).write_bytes(checkpoint_bytes(net, config_echo, seed))


def load_checkpoint(path):
    return checkpoint_from_bytes(_read(path, "checkpoint"))


# -- potential fields --------------------------------------------------------

def field_bytes(field, config_echo=None):
    kde, safe = field.kde, field.safe
    meta = {"kernel": kde.kernel, "config": config_echo or {}}
    return b"".join([
        FIELD_MAGIC, struct.pack("<I", FIELD_VERSION), _json_block(meta),
        struct.pack("<5d", kde.bandwidth, safe.threshold, safe.quantile, field.alpha, field.cap),
        struct.pack("<II", kde.M, kde.d), _f64(kde.points),
        struct.pack("<I", safe.anchors.shape[0]), _f64(safe.anchors),
    ])


def field_from_bytes(data):
    """Returns ``(field, meta)``; the KDE, safe-set and field invariants are re-checked."""
    r = _Reader(data, "field file")
    r.header(FIELD_MAGIC, FIELD_VERSION)
    meta = r.json()
    h, thr, q, alpha, cap = (r.f64() for _ in range(5))
    M, d = r.u32(), r.u32()
    points = r.f64(M * d).reshape(M, d)
    K = r.u32()
    anchors = r.f64(K * d).reshape(K, d)
    r.finish()
    try:
        kde = KdeModel(points, h, meta.get("kernel", "gaussian"))
        if not 0.0 < q < 1.0:
            raise ValueError(f"quantile {q} outside (0, 1)")
        slack = 1e-9 * max(1.0, abs(thr))
        if np.any(log_density_many(kde, anchors) < thr - slack):
            raise ValueError("an anchor falls below the safe-set threshold")
        field = PotentialField(kde, SafeSet(anchors, thr, q), alpha, cap)
    except (ValueError, ArithmeticError) as exc:
        raise FormatError(f"field file: invariant violated ({exc})") from exc
    return field, meta


def save_field(path, field, config_echo=None):
    Path(path).write_bytes(field_bytes(field, config_echo))


def load_field(path):
    return field_from_bytes(_read(path, "field file"))
