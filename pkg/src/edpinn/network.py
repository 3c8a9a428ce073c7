"""Fully connected networks over flat parameter vectors.

Parameters live in one flat float64 vector laid out layer by layer as
``W`` (fan_in x fan_out, row-major) followed by ``b``.  :func:`apply`
accepts leading batch axes on the parameters, so many networks of the same
shape (ensemble members, meta-learning tasks, inverse instances) evaluate in
one pass.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import DifferentiableFunction

ACTIVATIONS = {"tanh": ad.tanh, "sin": ad.sin}
TRANSFORMS = ("none", "eikonal-time", "abs-offset")


@dataclass(frozen=True)
class MLPArchitecture:
    input_dim: int
    output_dim: int
    depth: int
    width: int
    activation: str = "tanh"
    transform: str = "none"
    anchor: tuple = ()
    offset: float = 0.0
    # inputs are mapped affinely from this box to [-1, 1] before the first layer
    input_box: tuple = field(default=())

    def __post_init__(self):
        if min(self.input_dim, self.output_dim, self.depth, self.width) < 1:
            raise ValueError("dimensions, depth and width must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.transform not in TRANSFORMS:
            raise ValueError(f"unknown output transform {self.transform!r}")
        if self.transform == "eikonal-time" and len(self.anchor) != self.input_dim:
            raise ValueError("eikonal-time transform needs an anchor of input_dim coordinates")
        if self.input_box and np.shape(self.input_box) != (self.input_dim, 2):
            raise ValueError("input_box must have one (low, high) pair per input")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim] + [self.width] * self.depth + [self.output_dim]

    @property
    def param_count(self) -> int:
        d, w, o = self.input_dim, self.width, self.output_dim
        return (d + 1) * w + (self.depth - 1) * (w + 1) * w + (w + 1) * o

    def layers(self):
        """Yields (w_slice, b_slice, fan_in, fan_out) per layer."""
        pos = 0
        sizes = self.layer_sizes
        for fi, fo in zip(sizes[:-1], sizes[1:]):
            yield slice(pos, pos + fi * fo), slice(pos + fi * fo, pos + fi * fo + fo), fi, fo
            pos += fi * fo + fo

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim, "output_dim": self.output_dim,
            "depth": self.depth, "width": self.width, "activation": self.activation,
            "transform": self.transform, "anchor": list(self.anchor),
            "offset": self.offset, "input_box": [list(r) for r in self.input_box],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MLPArchitecture":
        d = dict(d)
        d["anchor"] = tuple(float(a) for a in d.get("anchor", ()))
        d["input_box"] = tuple(tuple(float(v) for v in r) for r in d.get("input_box", ()))
        return cls(**d)


@dataclass(frozen=True, eq=False)
class ParamVector:
    values: np.ndarray
    arch: MLPArchitecture

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.shape[-1:] != (self.arch.param_count,):
            raise ValueError(f"expected {self.arch.param_count} parameters, got {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def unflatten(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return unflatten(self.arch, self.values)

    def __eq__(self, other):
        return (isinstance(other, ParamVector) and self.arch == other.arch
                and np.array_equal(self.values, other.values))


def unflatten(arch: MLPArchitecture, values: np.ndarray):
    lead = values.shape[:-1]
    return [(values[..., ws].reshape(lead + (fi, fo)), values[..., bs])
            for ws, bs, fi, fo in arch.layers()]


def flatten(arch: MLPArchitecture, layers) -> np.ndarray:
    parts = []
    for W, b in layers:
        lead = np.shape(b)[:-1]
        parts += [np.reshape(W, lead + (-1,)), np.asarray(b)]
    out = np.concatenate(parts, axis=-1)
    if out.shape[-1] != arch.param_count:
        raise ValueError("layer shapes do not match the architecture")
    return out


def init_params(arch: MLPArchitecture, seed) -> ParamVector:
    """Glorot-uniform weights and zero biases."""
    rng = np.random.default_rng(seed)
    values = np.zeros(arch.param_count)
    for ws, _, fi, fo in arch.layers():
        lim = np.sqrt(6.0 / (fi + fo))
        values[ws] = rng.uniform(-lim, lim, size=fi * fo)
    return ParamVector(values, arch)


def _normalize(arch: MLPArchitecture, x):
    if not arch.input_box:
        return x
    box = np.asarray(arch.input_box, dtype=np.float64)
    center = box.mean(axis=1)
    half = (box[:, 1] - box[:, 0]) / 2.0
    return ad.mul(ad.sub(x, center), 1.0 / half)


def apply(arch: MLPArchitecture, theta, x):
    """Network output for parameters ``theta`` (..., P) at points ``x`` (..., n, d).

    Returns an array-like of shape (..., n, output_dim).  Either argument may
    be a plain array, a tape node or a dual.
    """
    act = ACTIVATIONS[arch.activation]
    h = _normalize(arch, x)
    lead = ad.shape_of(theta)[:-1]
    nlayers = arch.depth + 1
    for li, (ws, bs, fi, fo) in enumerate(arch.layers()):
        W = ad.reshape(ad.getitem(theta, (Ellipsis, ws)), lead + (fi, fo))
        b = ad.reshape(ad.getitem(theta, (Ellipsis, bs)), lead + (1, fo))
        h = ad.add(ad.matmul(h, W), b)
        if li < nlayers - 1:
            h = act(h)
    if arch.transform == "eikonal-time":
        diff = ad.sub(x, np.asarray(arch.anchor, dtype=np.float64))
        h = ad.mul(h, ad.sqrt(ad.square_norm(diff, axis=-1, keepdims=True)))
    elif arch.transform == "abs-offset":
        h = ad.abs_plus(h, arch.offset)
    return h


def forward(params: ParamVector, x) -> np.ndarray:
    """Output vector at a single input point."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    if x.shape[1] != params.arch.input_dim:
        raise ValueError(f"expected {params.arch.input_dim} inputs")
    return np.asarray(ad.value_of(apply(params.arch, params.values, x)))[0]


def as_input_function(params: ParamVector) -> DifferentiableFunction:
    """x -> network output, with the parameters held fixed."""
    arch = params.arch

    def fn(x):
        return ad.reshape(apply(arch, params.values, ad.reshape(x, (1, arch.input_dim))),
                          (arch.output_dim,))

    return DifferentiableFunction(fn, arch.input_dim, arch.output_dim, "mlp(x)")


def as_param_function(arch: MLPArchitecture, x) -> DifferentiableFunction:
    """theta -> network outputs at the fixed points ``x`` (flattened)."""
    x = np.asarray(x, dtype=np.float64).reshape(-1, arch.input_dim)
    n_out = x.shape[0] * arch.output_dim

    def fn(theta):
        return ad.reshape(apply(arch, theta, x), (n_out,))

    return DifferentiableFunction(fn, arch.param_count, n_out, "mlp(theta)")


# ---------------------------------------------------------------------------
# binary blobs: magic, header length, JSON-free header of key=value pairs,
# then little-endian float64 values

_MAGIC = b"EDPV"


def to_blob(params: ParamVector) -> bytes:
    a = params.arch
    fields = [
        f"input_dim={a.input_dim}", f"output_dim={a.output_dim}", f"depth={a.depth}",
        f"width={a.width}", f"activation={a.activation}", f"transform={a.transform}",
        "anchor=" + ",".join(repr(float(v)) for v in a.anchor),
        f"offset={float(a.offset)!r}",
        "input_box=" + ";".join(",".join(repr(float(v)) for v in r) for r in a.input_box),
    ]
    header = "\n".join(fields).encode()
    values = np.ascontiguousarray(params.values, dtype="<f8")
    shape = values.shape
    head = struct.pack("<4sII", _MAGIC, len(header), len(shape))
    dims = struct.pack(f"<{len(shape)}I", *shape)
    return head + dims + header + values.tobytes()


def from_blob(blob: bytes) -> ParamVector:
    magic, hlen, ndim = struct.unpack_from("<4sII", blob, 0)
    if magic != _MAGIC:
        raise ValueError("not a parameter blob")
    off = struct.calcsize("<4sII")
    shape = struct.unpack_from(f"<{ndim}I", blob, off)
    off += 4 * ndim
    kv = dict(line.split("=", 1) for line in blob[off:off + hlen].decode().split("\n"))
    off += hlen
    arch = MLPArchitecture(
        input_dim=int(kv["input_dim"]), output_dim=int(kv["output_dim"]),
        depth=int(kv["depth"]), width=int(kv["width"]), activation=kv["activation"],
        transform=kv["transform"],
        anchor=tuple(float(v) for v in kv["anchor"].split(",") if v),
        offset=float(kv["offset"]),
        input_box=tuple(tuple(float(v) for v in r.split(",")) for r in kv["input_box"].split(";") if r),
    )
    values = np.frombuffer(blob, dtype="<f8", offset=off).reshape(shape)
    return ParamVector(values.astype(np.float64), arch)


def save(params: ParamVector, path) -> None:
    with open(path, "wb") as fh:
        fh.write(to_blob(params))


def load(path) -> ParamVector:
    with open(path, "rb") as fh:
        return from_blob(fh.read())
