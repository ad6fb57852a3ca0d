"""Network specs, parameter storage, forward/backward, SGD and checkpoints.

Two architectures are supported:

``fcn``
    ``depth`` stacked ``kernel x kernel`` convolutions of ``width`` filters with
    ReLU, then a 1x1 logistic-regression layer onto ``classes`` outputs.
``encdec``
    A stem convolution, ``stages`` levels of (stride-2 conv, conv), then per
    level nearest-neighbour upsampling + conv with an optional additive skip
    from the encoder feature of the same resolution, and the same 1x1 head.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from lcchange.errors import (
    BadMagicError,
    DataError,
    EmptyMaskError,
    InvalidSpecError,
    IoFailureError,
    NonFiniteValueError,
    ShapeMismatchError,
    TruncatedPayloadError,
    UnsupportedVersionError,
)
from lcchange.nn import ops

ARCHS = ("fcn", "encdec")


@dataclass(frozen=True)
class ConvNetSpec:
    arch: str = "fcn"
    in_channels: int = 4
    width: int = 64
    depth: int = 5
    kernel: int = 3
    classes: int = 15
    stages: int = 2
    decoder_widths: tuple[int, ...] | None = None
    skips: bool = True

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise InvalidSpecError(f"unknown architecture {self.arch!r}")
        for name in ("in_channels", "width", "kernel", "classes"):
            if getattr(self, name) < 1:
                raise InvalidSpecError(f"{name} must be >= 1")
        if self.kernel % 2 == 0:
            raise InvalidSpecError("kernel size must be odd")
        if self.arch == "fcn" and self.depth < 1:
            raise InvalidSpecError("fcn depth must be >= 1")
        if self.arch == "encdec":
            if self.stages < 1:
                raise InvalidSpecError("encdec needs at least one stage")
            dec = self.decoder_widths
            if dec is None:
                object.__setattr__(self, "decoder_widths", (self.width,) * self.stages)
            else:
                dec = tuple(int(d) for d in dec)
                object.__setattr__(self, "decoder_widths", dec)
                if len(dec) != self.stages or min(dec) < 1:
                    raise InvalidSpecError("decoder_widths needs one positive width per stage")
                if self.skips and any(d != self.width for d in dec):
                    raise InvalidSpecError("additive skips need decoder widths equal to the encoder width")

    @property
    def downsample(self) -> int:
        return 2 ** self.stages if self.arch == "encdec" else 1

    def receptive_field(self) -> int:
        """Side length of the input window that can influence one output pixel.

        Exact for ``fcn``; an upper bound for ``encdec``, whose true window
        depends on the pixel's phase relative to the stride-2 grid.
        """
        r = self.kernel // 2
        if self.arch == "fcn":
            return 2 * r * self.depth + 1
        # walk the layer list accumulating growth at each layer's input stride
        rf, jump = 1 + 2 * r, 1
        for _ in range(self.stages):
            rf += 2 * r * jump  # stride-2 conv
            jump *= 2
            rf += 2 * r * jump
        for _ in range(self.stages):
            jump //= 2
            rf += jump  # nearest upsample widens by one coarse cell
            rf += 2 * r * jump
        return rf


def layer_table(spec: ConvNetSpec) -> list[tuple[str, tuple[int, int, int, int]]]:
    """Ordered ``(name, weight shape)`` for every conv; biases are ``(Cout,)``."""
    k = spec.kernel
    w = spec.width
    if spec.arch == "fcn":
        layers = [("conv0", (k, k, spec.in_channels, w))]
        layers += [(f"conv{i}", (k, k, w, w)) for i in range(1, spec.depth)]
        layers.append(("head", (1, 1, w, spec.classes)))
        return layers
    layers = [("stem", (k, k, spec.in_channels, w))]
    for s in range(1, spec.stages + 1):
        layers.append((f"down{s}", (k, k, w, w)))
        layers.append((f"enc{s}", (k, k, w, w)))
    prev = w
    for s, d in zip(range(spec.stages, 0, -1), spec.decoder_widths):
        layers.append((f"dec{s}", (k, k, prev, d)))
        prev = d
    layers.append(("head", (1, 1, prev, spec.classes)))
    return layers


def param_names(spec: ConvNetSpec) -> list[str]:
    names = []
    for name, _ in layer_table(spec):
        names += [f"{name}.w", f"{name}.b"]
    return names


def param_count(spec: ConvNetSpec) -> int:
    return sum(int(np.prod(shape)) + shape[3] for _, shape in layer_table(spec))


def _program(spec: ConvNetSpec) -> list[tuple]:
    """Op list interpreted by the forward and backward passes."""
    if spec.arch == "fcn":
        prog = [("conv", f"conv{i}", 1, True) for i in range(spec.depth)]
        prog.append(("conv", "head", 1, False))
        return prog
    prog = [("conv", "stem", 1, True)]
    if spec.skips:
        prog.append(("save", 0))
    for s in range(1, spec.stages + 1):
        prog += [("conv", f"down{s}", 2, True), ("conv", f"enc{s}", 1, True)]
        if spec.skips and s < spec.stages:
            prog.append(("save", s))
    for s in range(spec.stages, 0, -1):
        prog += [("up",), ("conv", f"dec{s}", 1, True)]
        if spec.skips:
            prog.append(("add", s - 1))
    prog.append(("conv", "head", 1, False))
    return prog


@dataclass(eq=False)
class ConvNet:
    spec: ConvNetSpec
    params: dict[str, np.ndarray]
    seed: int = 0
    velocity: dict[str, np.ndarray] | None = field(default=None, repr=False)

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def astype(self, dtype) -> ConvNet:
        return ConvNet(self.spec, {k: v.astype(dtype) for k, v in self.params.items()}, self.seed)

    def copy(self) -> ConvNet:
        vel = None if self.velocity is None else {k: v.copy() for k, v in self.velocity.items()}
        return ConvNet(self.spec, {k: v.copy() for k, v in self.params.items()}, self.seed, vel)

    def num_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def same_params(self, other: ConvNet) -> bool:
        return self.spec == other.spec and all(
            self.params[k].tobytes() == other.params[k].tobytes() for k in self.params
        )


def init_net(spec: ConvNetSpec, seed: int = 0, init: str = "he", dtype=np.float32) -> ConvNet:
    """He-uniform weights drawn in declaration order, zero biases.

    ``init="zeros"`` gives an all-zero net, whose output is uniform.  The head
    uses a Glorot bound so initial predictions start close to uniform.
    """
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in layer_table(spec):
        fan_in = shape[0] * shape[1] * shape[2]
        if init == "zeros":
            w = np.zeros(shape)
        elif init == "he":
            bound = np.sqrt(6.0 / fan_in) if name != "head" else np.sqrt(6.0 / (fan_in + shape[3]))
            w = rng.uniform(-bound, bound, size=shape)
        else:
            raise InvalidSpecError(f"unknown init {init!r}")
        params[f"{name}.w"] = w.astype(dtype)
        params[f"{name}.b"] = np.zeros(shape[3], dtype=dtype)
    return ConvNet(spec, params, seed)


def _check_finite(a, where):
    if not np.isfinite(a).all():
        raise NonFiniteValueError(f"non-finite values after {where}")


def _check_input(net: ConvNet, x_nhwc):
    spec = net.spec
    if x_nhwc.ndim != 4 or x_nhwc.shape[3] != spec.in_channels:
        raise ShapeMismatchError(f"expected {spec.in_channels} input channels, got shape {x_nhwc.shape}")
    d = spec.downsample
    if x_nhwc.shape[1] % d or x_nhwc.shape[2] % d:
        raise ShapeMismatchError(f"encdec input height/width must be divisible by {d}")


def forward_nhwc(net: ConvNet, x, keep=False):
    """Channels-last forward pass; returns logits (and the tape if ``keep``)."""
    x = np.ascontiguousarray(x, dtype=net.dtype)
    _check_input(net, x)
    _check_finite(x, "input")
    prog = _program(net.spec)
    saved = {}
    tape = []
    h = x
    for op in prog:
        kind = op[0]
        if kind == "conv":
            _, name, stride, relu = op
            h, cache = ops.conv2d_forward(h, net.params[f"{name}.w"], net.params[f"{name}.b"], stride)
            if relu:
                ops.relu_forward(h)
            tape.append((cache, h if relu else None))
            _check_finite(h, name)
        elif kind == "up":
            h = ops.upsample2_forward(h)
            tape.append(None)
        elif kind == "save":
            saved[op[1]] = h
            tape.append(None)
        elif kind == "add":
            h = h + saved[op[1]]
            tape.append(None)
    if not keep:
        return h
    return h, tape


def backward_nhwc(net: ConvNet, dlogits, tape) -> dict[str, np.ndarray]:
    prog = _program(net.spec)
    grads = {}
    pending = {}
    dh = dlogits
    first_conv = next(i for i, op in enumerate(prog) if op[0] == "conv")
    for i in range(len(prog) - 1, -1, -1):
        op = prog[i]
        kind = op[0]
        if kind == "conv":
            _, name, _, relu = op
            cache, out = tape[i]
            if relu:
                dh = ops.relu_backward(dh, out)
            dh, dw, db = ops.conv2d_backward(dh, cache, need_dx=i != first_conv)
            grads[f"{name}.w"] = dw
            grads[f"{name}.b"] = db
        elif kind == "up":
            dh = ops.upsample2_backward(dh)
        elif kind == "add":
            pending[op[1]] = dh
        elif kind == "save":
            dh = dh + pending.pop(op[1])
    out = {k: grads[k] for k in net.params}
    for k, g in out.items():
        _check_finite(g, f"gradient of {k}")
    return out


def forward(net: ConvNet, x) -> np.ndarray:
    """Per-pixel logits, ``(batch, classes, height, width)`` for NCHW input."""
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeMismatchError(f"expected a 4-D (batch, channels, height, width) tensor, got {x.shape}")
    logits = forward_nhwc(net, x.transpose(0, 2, 3, 1))
    return np.ascontiguousarray(logits.transpose(0, 3, 1, 2))


def predict_proba(net: ConvNet, x) -> np.ndarray:
    return ops.softmax(forward(net, x), axis=1)


def loss_and_grad_nhwc(net: ConvNet, x, y, mask=None):
    if mask is None:
        mask = np.ones(y.shape, dtype=bool)
    if y.shape != x.shape[:3] or mask.shape != y.shape:
        raise ShapeMismatchError(f"labels {y.shape} / mask {mask.shape} do not match input {x.shape[:3]}")
    if not np.any(mask):
        raise EmptyMaskError("mask selects no pixels")
    if y.size and (y.min() < 0 or y.max() >= net.spec.classes):
        raise DataError(f"label ids must be in 0-{net.spec.classes - 1}")
    logits, tape = forward_nhwc(net, x, keep=True)
    loss, dlogits, _ = ops.masked_cross_entropy(logits, y, mask)
    _check_finite(np.float64(loss), "loss")
    return loss, backward_nhwc(net, dlogits, tape)


def loss_and_grad(net: ConvNet, x, y, mask=None):
    """Masked mean softmax cross-entropy and its gradient for every parameter.

    ``x`` is ``(batch, channels, height, width)``; ``y`` and ``mask`` are
    ``(batch, height, width)`` (or ``(height, width)`` for a single image).
    """
    x = np.asarray(x)
    y = np.asarray(y)
    if y.ndim == 2:
        y = y[None]
    if mask is not None:
        mask = np.asarray(mask)
        if mask.ndim == 2:
            mask = mask[None]
    return loss_and_grad_nhwc(net, x.transpose(0, 2, 3, 1), y, mask)


def sgd_step(net: ConvNet, grads: dict[str, np.ndarray], lr: float, momentum: float = 0.9) -> ConvNet:
    """Classic momentum: ``v = momentum * v + g``, ``w -= lr * v``.  Returns a new net."""
    params, vel = {}, {}
    for k, w in net.params.items():
        g = grads.get(k)
        if g is None or g.shape != w.shape:
            raise ShapeMismatchError(f"gradient for {k} missing or mis-shaped")
        v = g.astype(w.dtype, copy=True)
        if net.velocity is not None and momentum:
            v += w.dtype.type(momentum) * net.velocity[k]
        vel[k] = v
        params[k] = w - w.dtype.type(lr) * v
    return ConvNet(net.spec, params, net.seed, vel)


def adam_step(net: ConvNet, grads: dict[str, np.ndarray], lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> ConvNet:
    """Bias-corrected Adam update.  Moment estimates and step count ride in ``velocity``."""
    state = net.velocity or {}
    t = int(state.get("__t__", np.zeros(1))[0]) + 1
    params, new = {}, {"__t__": np.array([t])}
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for k, w in net.params.items():
        g = grads.get(k)
        if g is None or g.shape != w.shape:
            raise ShapeMismatchError(f"gradient for {k} missing or mis-shaped")
        g = g.astype(w.dtype, copy=False)
        m = state.get(k + ".m", np.zeros_like(w)) * w.dtype.type(beta1) + w.dtype.type(1 - beta1) * g
        v = state.get(k + ".v", np.zeros_like(w)) * w.dtype.type(beta2) + w.dtype.type(1 - beta2) * g * g
        new[k + ".m"] = m
        new[k + ".v"] = v
        step = (m / w.dtype.type(c1)) / (np.sqrt(v / w.dtype.type(c2)) + w.dtype.type(eps))
        params[k] = w - w.dtype.type(lr) * step
    return ConvNet(net.spec, params, net.seed, new)


# checkpoints -----------------------------------------------------------------

CKPT_MAGIC = b"LCNN"
CKPT_VERSION = 1
_CKPT_HEAD = struct.Struct("<4sHBHHHBHBBQ")


def encode_checkpoint(net: ConvNet) -> bytes:
    """``LCNN`` header + spec fields, then float32 LE parameters in declaration order."""
    s = net.spec
    dec = s.decoder_widths or ()
    head = _CKPT_HEAD.pack(
        CKPT_MAGIC, CKPT_VERSION, ARCHS.index(s.arch), s.in_channels, s.width, s.depth,
        s.kernel, s.classes, s.stages, int(s.skips), net.seed,
    )
    head += struct.pack(f"<H{len(dec)}H", len(dec), *dec)
    body = b"".join(np.ascontiguousarray(net.params[k], dtype="<f4").tobytes() for k in param_names(s))
    return head + body


def decode_checkpoint(buf: bytes) -> ConvNet:
    if len(buf) < _CKPT_HEAD.size + 2:
        raise TruncatedPayloadError("checkpoint header truncated")
    magic, version, arch, cin, width, depth, kernel, classes, stages, skips, seed = _CKPT_HEAD.unpack_from(buf)
    if magic != CKPT_MAGIC:
        raise BadMagicError(f"bad checkpoint magic {magic!r}")
    if version != CKPT_VERSION:
        raise UnsupportedVersionError(f"unsupported checkpoint version {version}")
    off = _CKPT_HEAD.size
    (ndec,) = struct.unpack_from("<H", buf, off)
    off += 2
    dec = struct.unpack_from(f"<{ndec}H", buf, off)
    off += 2 * ndec
    spec = ConvNetSpec(ARCHS[arch], cin, width, depth, kernel, classes, stages,
                       tuple(dec) if ARCHS[arch] == "encdec" else None, bool(skips))
    params = {}
    for name, shape in layer_table(spec):
        for key, shp in ((f"{name}.w", shape), (f"{name}.b", (shape[3],))):
            n = int(np.prod(shp))
            if off + 4 * n > len(buf):
                raise TruncatedPayloadError("checkpoint parameters truncated")
            params[key] = np.frombuffer(buf, dtype="<f4", count=n, offset=off).astype(np.float32).reshape(shp)
            off += 4 * n
    if off != len(buf):
        raise DataError("trailing bytes after checkpoint parameters")
    return ConvNet(spec, params, seed)


def save_checkpoint(net: ConvNet, path) -> None:
    try:
        Path(path).write_bytes(encode_checkpoint(net))
    except OSError as e:
        raise IoFailureError(str(e)) from e


def load_checkpoint(path) -> ConvNet:
    try:
        return decode_checkpoint(Path(path).read_bytes())
    except OSError as e:
        raise IoFailureError(str(e)) from e


def with_spec(spec: ConvNetSpec, **changes) -> ConvNetSpec:
    return replace(spec, **changes)
