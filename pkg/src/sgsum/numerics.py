"""Dense float64 tensors with reverse-mode differentiation, plus the rest
of the training-loop numerics: the adaptive-moments optimizer, global-norm
gradient clipping, inverted dropout, a deterministic derived-seed RNG, and
the binary tensor checkpoint format.

Everything runs in double precision. Every operation validates shapes and
checks its output for NaN/Inf, raising NumericsError instead of letting
bad values propagate into training.
"""

from __future__ import annotations

import hashlib
import math
import struct
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .ioutil import atomic_write_bytes


class NumericsError(ValueError):
    """Checked numeric failure: bad shapes, non-finite values, bad input."""


class ShapeError(NumericsError):
    """Operand shapes are incompatible."""


class CheckpointError(ValueError):
    """Checkpoint file is missing, malformed, or incompatible."""


def derive_rng(seed: int, *salts: int | str) -> np.random.Generator:
    """Deterministic generator for (seed, *salts), stable across runs.

    Salts are hashed with blake2s rather than Python's randomized hash()
    so the same names always produce the same stream.
    """
    key = repr((int(seed), *salts)).encode("utf-8")
    digest = hashlib.blake2s(key, digest_size=16).digest()
    return np.random.default_rng(int.from_bytes(digest, "little"))


class Tensor:
    """Row-major float64 array, optionally recorded on a tape."""

    __slots__ = ("data", "grad", "tape")

    def __init__(self, data, tape: "Tape | None" = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.tape = tape

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Tensor(shape={self.data.shape}, taped={self.tape is not None})"


class Tape:
    """Forward-ordered record of operations; backward() walks it in reverse.

    A tape is single-use: run one forward pass, then call backward() once.
    Leaves are the named differentiable inputs (the trainable parameters).
    """

    def __init__(self):
        self._ops: list[Callable[[], None]] = []
        self._leaves: dict[str, Tensor] = {}

    def leaf(self, name: str, array: np.ndarray) -> Tensor:
        """Named differentiable input; repeated calls return the same node,
        so gradients from every use site accumulate into one array."""
        node = self._leaves.get(name)
        if node is None:
            node = Tensor(array, self)
            self._leaves[name] = node
        return node

    def backward(self, loss: Tensor) -> dict[str, np.ndarray]:
        """Gradients of a scalar loss for every leaf; zeros where unreached."""
        if loss.tape is not self:
            raise NumericsError("loss was not computed on this tape")
        if loss.data.size != 1:
            raise NumericsError(f"loss must be a scalar, got shape {loss.data.shape}")
        loss.grad = np.ones_like(loss.data)
        for op in reversed(self._ops):
            op()
        return {
            name: node.grad if node.grad is not None else np.zeros_like(node.data)
            for name, node in self._leaves.items()
        }


def backward(loss: Tensor) -> dict[str, np.ndarray]:
    """Reverse-mode gradients of a scalar loss for every leaf of its tape."""
    if loss.tape is None:
        raise NumericsError("loss is not attached to a tape")
    return loss.tape.backward(loss)


def _tape_of(*tensors: Tensor) -> Tape | None:
    tape = None
    for t in tensors:
        if t.tape is not None:
            if tape is None:
                tape = t.tape
            elif tape is not t.tape:
                raise NumericsError("operands belong to different tapes")
    return tape


def _new(data: np.ndarray, tape: Tape | None, what: str) -> Tensor:
    # A non-finite entry makes the sum non-finite, so this one reduction
    # catches NaN/Inf without a full isfinite scan.
    if not math.isfinite(float(data.sum())):
        raise NumericsError(f"non-finite result in {what}")
    return Tensor(data, tape)


def _accum(t: Tensor, grad: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += grad


# ---------------------------------------------------------------------------
# elementwise and arithmetic ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add shapes differ: {a.data.shape} vs {b.data.shape}")
    tape = _tape_of(a, b)
    out = _new(a.data + b.data, tape, "add")
    if tape is not None:
        def bw():
            if out.grad is None:
                return
            _accum(a, out.grad)
            _accum(b, out.grad)
        tape._ops.append(bw)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"sub shapes differ: {a.data.shape} vs {b.data.shape}")
    tape = _tape_of(a, b)
    out = _new(a.data - b.data, tape, "sub")
    if tape is not None:
        def bw():
            if out.grad is None:
                return
            _accum(a, out.grad)
            _accum(b, -out.grad)
        tape._ops.append(bw)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul shapes differ: {a.data.shape} vs {b.data.shape}")
    tape = _tape_of(a, b)
    out = _new(a.data * b.data, tape, "mul")
    if tape is not None:
        def bw():
            if out.grad is None:
                return
            _accum(a, out.grad * b.data)
            _accum(b, out.grad * a.data)
        tape._ops.append(bw)
    return out


def scale(x: Tensor, c: float) -> Tensor:
    out = _new(x.data * c, x.tape, "scale")
    if x.tape is not None:
        def bw():
            if out.grad is None:
                return
            _accum(x, out.grad * c)
        x.tape._ops.append(bw)
    return out


def add_scalar(x: Tensor, c: float) -> Tensor:
    out = _new(x.data + c, x.tape, "add_scalar")
    if x.tape is not None:
        def bw():
            if out.grad is None:
                return
            _accum(x, out.grad)
        x.tape._ops.append(bw)
    return out


def relu(x: Tensor) -> Tensor:
    out = _new(np.maximum(x.data, 0.0), x.tape, "relu")
    if x.tape is not None:
        mask = x.data > 0.0
        def bw():
            if out.grad is None:
                return
            _accum(x, out.grad * mask)
        x.tape._ops.append(bw)
    return out


def sigmoid(x: Tensor) -> Tensor:
    e = np.exp(-np.abs(x.data))
    s = np.where(x.data >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))
    out = _new(s, x.tape, "sigmoid")
    if x.tape is not None:
        def bw():
            if out.grad is None:
                return
            _accum(x, out.grad * s * (1.0 - s))
        x.tape._ops.append(bw)
    return out


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0.0):
        raise NumericsError("log requires strictly positive input")
    out = _new(np.log(x.data), x.tape, "log")
    if x.tape is not None:
        def bw():
            if out.grad is None:
                return
            _accum(x, out.grad / x.data)
        x.tape._ops.append(bw)
    return out


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes through unclipped entries only."""
    if not lo < hi:
        raise NumericsError(f"clip bounds must satisfy lo < hi, got {lo}, {hi}")
    out = _new(np.clip(x.data, lo, hi), x.tape, "clip")
    if x.tape is not None:
        mask = (x.data >= lo) & (x.data <= hi)
        def bw():
            if out.grad is None:
                return
            _accum(x, out.grad * mask)
        x.tape._ops.append(bw)
    return out


# ---------------------------------------------------------------------------
# linear algebra and shape ops
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    tape = _tape_of(a, b)
    out = _new(a.data @ b.data, tape, "matmul")
    if tape is not None:
        def bw():
            if out.grad is None:
                return
            _accum(a, out.grad @ b.data.T)
            _accum(b, a.data.T @ out.grad)
        tape._ops.append(bw)
    return out


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"transpose needs a matrix, got shape {x.data.shape}")
    out = _new(np.ascontiguousarray(x.data.T), x.tape, "transpose")
    if x.tape is not None:
        def bw():
            if out.grad is None:
                return
            _accum(x, out.grad.T)
        x.tape._ops.append(bw)
    return out


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b with b broadcast over rows."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise ShapeError(f"affine shape mismatch: {x.data.shape} @ {w.data.shape}")
    if b.data.shape != (w.data.shape[1],):
        raise ShapeError(f"affine bias shape {b.data.shape} does not match weight columns {w.data.shape}")
    tape = _tape_of(x, w, b)
    out = _new(x.data @ w.data + b.data, tape, "affine")
    if tape is not None:
        def bw():
            if out.grad is None:
                return
            _accum(x, out.grad @ w.data.T)
            _accum(w, x.data.T @ out.grad)
            _accum(b, out.grad.sum(axis=0))
        tape._ops.append(bw)
    return out


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise ShapeError("concat of zero tensors")
    if axis not in (0, 1):
        raise ShapeError(f"concat supports axis 0 or 1, got {axis}")
    for p in parts:
        if p.data.ndim != 2:
            raise ShapeError(f"concat needs matrices, got shape {p.data.shape}")
    tape = _tape_of(*parts)
    out = _new(np.concatenate([p.data for p in parts], axis=axis), tape, "concat")
    if tape is not None:
        sizes = [p.data.shape[axis] for p in parts]
        def bw():
            if out.grad is None:
                return
            offset = 0
            for p, size in zip(parts, sizes):
                if axis == 0:
                    _accum(p, out.grad[offset:offset + size, :])
                else:
                    _accum(p, out.grad[:, offset:offset + size])
                offset += size
        tape._ops.append(bw)
    return out


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"slice_rows needs a matrix, got shape {x.data.shape}")
    if not 0 <= start < stop <= x.data.shape[0]:
        raise ShapeError(f"row slice [{start}:{stop}] out of range for {x.data.shape}")
    out = _new(x.data[start:stop].copy(), x.tape, "slice_rows")
    if x.tape is not None:
        def bw():
            if out.grad is None:
                return
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            x.grad[start:stop] += out.grad
        x.tape._ops.append(bw)
    return out


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"slice_cols needs a matrix, got shape {x.data.shape}")
    if not 0 <= start < stop <= x.data.shape[1]:
        raise ShapeError(f"column slice [{start}:{stop}] out of range for {x.data.shape}")
    out = _new(x.data[:, start:stop].copy(), x.tape, "slice_cols")
    if x.tape is not None:
        def bw():
            if out.grad is None:
                return
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            x.grad[:, start:stop] += out.grad
        x.tape._ops.append(bw)
    return out


def gather_rows(table: Tensor, indices: Sequence[int]) -> Tensor:
    """Select rows by index (duplicates allowed); the embedding lookup."""
    if table.data.ndim != 2:
        raise ShapeError(f"gather_rows needs a matrix, got shape {table.data.shape}")
    idx = np.asarray(list(indices), dtype=np.intp)
    if idx.size == 0:
        raise ShapeError("gather_rows with no indices")
    if idx.min() < 0 or idx.max() >= table.data.shape[0]:
        raise ShapeError(f"gather_rows index out of range for {table.data.shape[0]} rows")
    out = _new(table.data[idx], table.tape, "gather_rows")
    if table.tape is not None:
        def bw():
            if out.grad is None:
                return
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(table.grad, idx, out.grad)
        table.tape._ops.append(bw)
    return out


def stack_rows(rows: Sequence[Tensor]) -> Tensor:
    """Stack 1-D tensors of equal length into a matrix."""
    if not rows:
        raise ShapeError("stack_rows of zero tensors")
    width = rows[0].data.shape
    for r in rows:
        if r.data.ndim != 1 or r.data.shape != width:
            raise ShapeError(f"stack_rows needs equal-length vectors, got {r.data.shape} vs {width}")
    tape = _tape_of(*rows)
    out = _new(np.stack([r.data for r in rows]), tape, "stack_rows")
    if tape is not None:
        def bw():
            if out.grad is None:
                return
            for i, r in enumerate(rows):
                _accum(r, out.grad[i])
        tape._ops.append(bw)
    return out


def stack_scalars(scalars: Sequence[Tensor]) -> Tensor:
    """Stack scalar tensors into a 1-D vector."""
    if not scalars:
        raise ShapeError("stack_scalars of zero tensors")
    for s in scalars:
        if s.data.size != 1:
            raise ShapeError(f"stack_scalars needs scalars, got shape {s.data.shape}")
    tape = _tape_of(*scalars)
    out = _new(np.array([s.data.reshape(()) for s in scalars]), tape, "stack_scalars")
    if tape is not None:
        def bw():
            if out.grad is None:
                return
            for i, s in enumerate(scalars):
                _accum(s, out.grad[i].reshape(s.data.shape))
        tape._ops.append(bw)
    return out


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    if int(np.prod(shape, dtype=np.int64)) != x.data.size:
        raise ShapeError(f"cannot reshape {x.data.shape} to {shape}")
    out = _new(x.data.reshape(shape).copy(), x.tape, "reshape")
    if x.tape is not None:
        def bw():
            if out.grad is None:
                return
            _accum(x, out.grad.reshape(x.data.shape))
        x.tape._ops.append(bw)
    return out


def mean_rows(x: Tensor) -> Tensor:
    """Mean over rows of a matrix -> 1-D vector."""
    if x.data.ndim != 2 or x.data.shape[0] < 1:
        raise ShapeError(f"mean_rows needs a non-empty matrix, got shape {x.data.shape}")
    m = x.data.shape[0]
    out = _new(x.data.mean(axis=0), x.tape, "mean_rows")
    if x.tape is not None:
        def bw():
            if out.grad is None:
                return
            _accum(x, np.broadcast_to(out.grad / m, x.data.shape))
        x.tape._ops.append(bw)
    return out


def sum_all(x: Tensor) -> Tensor:
    out = _new(np.asarray(x.data.sum()), x.tape, "sum_all")
    if x.tape is not None:
        def bw():
            if out.grad is None:
                return
            _accum(x, np.broadcast_to(out.grad, x.data.shape))
        x.tape._ops.append(bw)
    return out


# ---------------------------------------------------------------------------
# normalization, attention pieces, similarity
# ---------------------------------------------------------------------------


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax with the row max subtracted before exponentiation."""
    if x.data.ndim != 2:
        raise ShapeError(f"softmax_rows needs a matrix, got shape {x.data.shape}")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)
    out = _new(s, x.tape, "softmax_rows")
    if x.tape is not None:
        def bw():
            if out.grad is None:
                return
            g = out.grad
            _accum(x, s * (g - (g * s).sum(axis=1, keepdims=True)))
        x.tape._ops.append(bw)
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """Per-row normalization followed by elementwise gain and bias."""
    if x.data.ndim != 2:
        raise ShapeError(f"layer_norm needs a matrix, got shape {x.data.shape}")
    d = x.data.shape[1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError(f"layer_norm gain/bias {gain.data.shape}/{bias.data.shape} do not match width {d}")
    mu = x.data.mean(axis=1, keepdims=True)
    centered = x.data - mu
    var = (centered ** 2).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    tape = _tape_of(x, gain, bias)
    out = _new(xhat * gain.data + bias.data, tape, "layer_norm")
    if tape is not None:
        def bw():
            if out.grad is None:
                return
            g = out.grad
            _accum(gain, (g * xhat).sum(axis=0))
            _accum(bias, g.sum(axis=0))
            gx = g * gain.data
            _accum(x, inv * (gx - gx.mean(axis=1, keepdims=True)
                             - xhat * (gx * xhat).mean(axis=1, keepdims=True)))
        tape._ops.append(bw)
    return out


def cosine_similarity(u: Tensor, v: Tensor) -> Tensor:
    """Cosine of two 1-D vectors as a scalar; zero vectors are a checked failure."""
    if u.data.ndim != 1 or v.data.ndim != 1 or u.data.shape != v.data.shape:
        raise ShapeError(f"cosine_similarity needs equal-length vectors, got {u.data.shape} vs {v.data.shape}")
    nu = float(np.linalg.norm(u.data))
    nv = float(np.linalg.norm(v.data))
    if nu == 0.0 or nv == 0.0:
        raise NumericsError("cosine_similarity of a zero vector")
    c = float(u.data @ v.data) / (nu * nv)
    tape = _tape_of(u, v)
    out = _new(np.asarray(c), tape, "cosine_similarity")
    if tape is not None:
        def bw():
            if out.grad is None:
                return
            g = float(out.grad)
            _accum(u, g * (v.data / (nu * nv) - c * u.data / (nu * nu)))
            _accum(v, g * (u.data / (nu * nv) - c * v.data / (nv * nv)))
        tape._ops.append(bw)
    return out


def dropout(x: Tensor, p: float, mode: str, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: zero with probability p, scale survivors by 1/(1-p).

    Identity in eval mode and at p=0. The caller owns mask reproducibility
    by passing a generator in a deterministic state.
    """
    if not 0.0 <= p < 1.0:
        raise NumericsError(f"dropout probability must be in [0, 1), got {p}")
    if mode not in ("train", "eval"):
        raise NumericsError(f"dropout mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval" or p == 0.0:
        return x
    if rng is None:
        raise NumericsError("train-mode dropout needs an RNG")
    mask = (rng.random(x.data.shape) >= p) / (1.0 - p)
    out = _new(x.data * mask, x.tape, "dropout")
    if x.tape is not None:
        def bw():
            if out.grad is None:
                return
            _accum(x, out.grad * mask)
        x.tape._ops.append(bw)
    return out


# ---------------------------------------------------------------------------
# parameters, optimizer, clipping
# ---------------------------------------------------------------------------


class ParamStore:
    """Named trainable parameters plus adaptive-moments optimizer state."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, array: np.ndarray) -> None:
        if name in self.params:
            raise ValueError(f"duplicate parameter {name!r}")
        arr = np.array(array, dtype=np.float64)
        self.params[name] = arr
        self.m[name] = np.zeros_like(arr)
        self.v[name] = np.zeros_like(arr)

    def names(self) -> list[str]:
        return sorted(self.params)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def copy(self) -> "ParamStore":
        dup = ParamStore()
        for name in self.names():
            dup.add(name, self.params[name])
            dup.m[name] = self.m[name].copy()
            dup.v[name] = self.v[name].copy()
        dup.step = self.step
        return dup


def clip_global_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    """Scale all gradients by max_norm/norm when the joint L2 norm exceeds it."""
    if max_norm <= 0.0:
        raise ValueError(f"max_norm must be > 0, got {max_norm}")
    total_sq = 0.0
    for name in sorted(grads):
        g = grads[name]
        total_sq += float(np.sum(g * g))
    total = float(np.sqrt(total_sq))
    if total <= max_norm:
        return dict(grads)
    factor = max_norm / total
    return {name: g * factor for name, g in grads.items()}


def adam_step(
    store: ParamStore,
    grads: Mapping[str, np.ndarray],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected adaptive-moments update, in place."""
    store.step += 1
    t = store.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name in store.names():
        p = store.params[name]
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name!r} has shape {g.shape}, parameter has {p.shape}")
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


# ---------------------------------------------------------------------------
# checkpoint format
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"SGS1"
CHECKPOINT_VERSION = 1


def save_tensors(path, tensors: Mapping[str, np.ndarray]) -> None:
    """Write named float64 arrays; entries are name-sorted so bytes are stable.

    Layout: magic "SGS1", version u32, entry count u32, then per entry:
    name length u32 + UTF-8 name, rank u32, dims u32 each, row-major
    little-endian float64 payload.
    """
    out = bytearray()
    out += CHECKPOINT_MAGIC
    out += struct.pack("<I", CHECKPOINT_VERSION)
    out += struct.pack("<I", len(tensors))
    for name in sorted(tensors):
        # asarray only: ascontiguousarray would promote rank-0 to rank-1,
        # and tobytes(order="C") copies non-contiguous data anyway
        arr = np.asarray(tensors[name], dtype=np.float64)
        encoded = name.encode("utf-8")
        out += struct.pack("<I", len(encoded))
        out += encoded
        out += struct.pack("<I", arr.ndim)
        for dim in arr.shape:
            out += struct.pack("<I", dim)
        out += arr.astype("<f8", copy=False).tobytes(order="C")
    atomic_write_bytes(path, bytes(out))


def load_tensors(path) -> dict[str, np.ndarray]:
    """Read a checkpoint written by save_tensors; payloads round-trip bit-exactly."""
    blob = Path(path).read_bytes()
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise CheckpointError(f"truncated checkpoint: unexpected end of file in {what}")
        chunk = blob[pos:pos + n]
        pos += n
        return chunk

    if take(4, "magic") != CHECKPOINT_MAGIC:
        raise CheckpointError("not an SGS1 checkpoint file (bad magic bytes)")
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})")
    (count,) = struct.unpack("<I", take(4, "entry count"))
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4, "name length"))
        name = take(name_len, "name").decode("utf-8")
        (rank,) = struct.unpack("<I", take(4, "rank"))
        shape = tuple(struct.unpack("<I", take(4, "dimension"))[0] for _ in range(rank))
        items = int(np.prod(shape, dtype=np.int64)) if shape else 1
        payload = take(8 * items, f"payload of {name!r}")
        if name in tensors:
            raise CheckpointError(f"duplicate tensor name {name!r}")
        tensors[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)
    if pos != len(blob):
        raise CheckpointError(f"trailing bytes after last entry ({len(blob) - pos})")
    return tensors
