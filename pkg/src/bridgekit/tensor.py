"""Dense tensors with a define-by-run reverse-mode gradient tape.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to parent gradients.  ``backward``
walks the recorded graph in reverse topological order and then drops the
closures, so a graph can be differentiated once.

Broadcasting is deliberately narrow: ``add`` accepts either equal shapes
or a right operand matching the trailing axes of the left one (bias
addition).  Everything else goes through ``expand``.
"""

from __future__ import annotations

import contextlib
import struct
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

# per thread, so concurrent no_grad blocks in worker threads cannot interleave
_local = threading.local()


def _grad_enabled() -> bool:
    return getattr(_local, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (for the calling thread)."""
    prev = _grad_enabled()
    _local.enabled = False
    try:
        yield
    finally:
        _local.enabled = prev


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def tape_id(self) -> int | None:
        return id(self) if self._backward is not None else None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"expected a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else add_scalar(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else add_scalar(self, -other)

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """A named trainable leaf tensor."""

    __slots__ = ("name", "trainable")

    def __init__(self, data, name: str, trainable: bool = True, dtype=None):
        super().__init__(data, requires_grad=trainable, dtype=dtype)
        self.name = name
        self.trainable = trainable

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


# ---------------------------------------------------------------- elementwise


def _sum_leading(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` over the axes in front of the trailing ``shape``."""
    size = int(np.prod(shape)) if shape else 1
    return np.ascontiguousarray(g).reshape(-1, size).sum(axis=0).reshape(shape)


def _last_mean(x: np.ndarray) -> np.ndarray:
    """Mean over the last axis with keepdims, as a matrix-vector product."""
    d = x.shape[-1]
    w = np.full(d, 1.0 / d, dtype=x.dtype)
    return (x @ w)[..., None]


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape == b.shape:
        return _make(a.data + b.data, (a, b), lambda g: (g, g))
    if b.ndim <= a.ndim and a.shape[a.ndim - b.ndim:] == b.shape:
        bshape = b.shape
        return _make(a.data + b.data, (a, b), lambda g: (g, _sum_leading(g, bshape)))
    raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"sub: incompatible shapes {a.shape} and {b.shape}")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g))


def add_scalar(a: Tensor, c: float) -> Tensor:
    return _make(a.data + a.data.dtype.type(c), (a,), lambda g: (g,))


def scale(a: Tensor, c: float) -> Tensor:
    c = a.data.dtype.type(c)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def mul_scalar_tensor(a: Tensor, s: Tensor) -> Tensor:
    """Multiply every entry of ``a`` by the single value held in ``s``."""
    if s.data.size != 1:
        raise ShapeError(f"mul_scalar_tensor: expected one-element scale, got {s.shape}")
    ad, sv = a.data, s.data.reshape(())

    def bw(g):
        return g * sv, np.asarray((g * ad).sum(), dtype=s.data.dtype).reshape(s.shape)

    return _make(ad * sv, (a, s), bw)


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    return _make(np.where(pos, a.data, 0).astype(a.data.dtype), (a,), lambda g: (g * pos,))


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-a.data))
    return _make(out, (a,), lambda g: (g * out * (1 - out),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1 - out * out),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _make(np.log(ad), (a,), lambda g: (g / ad,))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _make(ad * ad, (a,), lambda g: (2 * g * ad,))


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` where ``b`` is either a 2-D weight or shares ``a``'s leading axes."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    if b.ndim != 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    if b.ndim == 2:
        def bw(g):
            ga = g @ bd.T
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            return ga, gb
    else:
        def bw(g):
            return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return _make(ad @ bd, (a, b), bw)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    out = matmul(x, w)
    return add(out, b) if b is not None else out


# ---------------------------------------------------------------- shape ops


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def expand(a: Tensor, axis: int, size: int) -> Tensor:
    """Insert a new axis at ``axis`` and repeat ``size`` times along it."""
    axis = axis if axis >= 0 else a.ndim + 1 + axis
    shape = a.shape[:axis] + (size,) + a.shape[axis:]
    data = np.broadcast_to(np.expand_dims(a.data, axis), shape)  # read-only view
    return _make(data, (a,), lambda g: (g.sum(axis=axis),))


def pair_product(a: Tensor, b: Tensor) -> Tensor:
    """Symmetric pair tensor ``out[:, i, j] = a_i * b_j + a_j * b_i`` from (B, N, d) inputs."""
    if a.shape != b.shape or a.ndim != 3:
        raise ShapeError(f"pair_product: expected equal (B, N, d) shapes, got {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    one = ad[:, :, None, :] * bd[:, None, :, :]
    out = one + one.transpose(0, 2, 1, 3)

    def bw(g):
        gs = g + g.transpose(0, 2, 1, 3)
        ga = np.einsum("bijd,bjd->bid", gs, bd, optimize=True)
        gb = np.einsum("bijd,bid->bjd", gs, ad, optimize=True)
        return ga, gb

    return _make(out, (a, b), bw)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    ref = tensors[0].shape
    ax = axis if axis >= 0 else len(ref) + axis
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            i != ax and d != r for i, (d, r) in enumerate(zip(t.shape, ref))
        ):
            raise ShapeError(f"concat: incompatible shapes {ref} and {t.shape} along axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _make(
        np.concatenate([t.data for t in tensors], axis=ax),
        tuple(tensors),
        lambda g: tuple(np.split(g, splits, axis=ax)),
    )


def take(a: Tensor, index: int, axis: int) -> Tensor:
    """Select one slice along ``axis`` (the axis is dropped)."""
    ax = axis if axis >= 0 else a.ndim + axis
    src_shape, dtype = a.shape, a.data.dtype

    def bw(g):
        full = np.zeros(src_shape, dtype=dtype)
        sl = [slice(None)] * len(src_shape)
        sl[ax] = index
        full[tuple(sl)] = g
        return (full,)

    return _make(np.take(a.data, index, axis=ax), (a,), bw)


def _scatter_add(index: tuple[np.ndarray, ...], values: np.ndarray, shape: tuple[int, ...], dtype) -> np.ndarray:
    """Zero array of ``shape`` with ``values`` rows summed in at ``index`` (repeats accumulate)."""
    lead = shape[: len(index)]
    row = int(np.prod(shape[len(index):], dtype=np.int64))
    flat = np.ravel_multi_index(index, lead) if len(index[0]) else np.zeros(0, dtype=np.int64)
    cols = (flat[:, None] * row + np.arange(row)).ravel()
    out = np.bincount(cols, weights=np.asarray(values, dtype=np.float64).reshape(-1), minlength=int(np.prod(shape)))
    return out.astype(dtype).reshape(shape)


def gather_rows(a: Tensor, index: tuple[np.ndarray, ...]) -> Tensor:
    """``a.data[index]`` for integer index arrays over the leading axes (rows may repeat)."""
    index = tuple(np.asarray(i) for i in index)
    src_shape, dtype = a.shape, a.data.dtype

    return _make(a.data[index], (a,), lambda g: (_scatter_add(index, g, src_shape, dtype),))


def scatter_rows(src: Tensor, index: tuple[np.ndarray, ...], shape: Sequence[int]) -> Tensor:
    """Sum rows of ``src`` into a zero tensor of ``shape`` at ``index`` (inverse of ``gather_rows``)."""
    index = tuple(np.asarray(i) for i in index)
    out = _scatter_add(index, src.data, tuple(shape), src.data.dtype)
    return _make(out, (src,), lambda g: (g[index],))


def mask_fill(a: Tensor, keep: np.ndarray) -> Tensor:
    """Zero out entries where ``keep`` (same shape as ``a``) is false."""
    keep = np.broadcast_to(keep, a.shape)
    return _make(np.where(keep, a.data, 0).astype(a.data.dtype), (a,), lambda g: (g * keep,))


# ---------------------------------------------------------------- reductions


def _mask_array(a: Tensor, mask) -> np.ndarray | None:
    if mask is None:
        return None
    m = np.asarray(mask, dtype=a.data.dtype)
    if m.shape != a.shape[: m.ndim]:
        raise ShapeError(f"mask shape {m.shape} does not prefix tensor shape {a.shape}")
    return m.reshape(m.shape + (1,) * (a.ndim - m.ndim))


def reduce_sum(a: Tensor, axis=None, mask=None, keepdims: bool = False) -> Tensor:
    m = _mask_array(a, mask)
    src = a.data if m is None else a.data * m
    out = src.sum(axis=axis, keepdims=keepdims)
    shape = a.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        g = np.broadcast_to(g, shape)
        return (g * m if m is not None else np.array(g),)

    return _make(np.asarray(out, dtype=a.data.dtype), (a,), bw)


def reduce_mean(a: Tensor, axis=None, mask=None, keepdims: bool = False) -> Tensor:
    m = _mask_array(a, mask)
    total = reduce_sum(a, axis=axis, mask=mask, keepdims=keepdims)
    if m is None:
        count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
        return scale(total, 1.0 / count)
    counts = np.broadcast_to(m, a.shape).sum(axis=axis, keepdims=keepdims)
    if np.any(counts == 0):
        raise ValueError("reduce_mean: empty mask along reduced axes")
    inv = (1.0 / counts).astype(a.data.dtype)
    td = total.data * inv
    return _make(np.asarray(td, dtype=a.data.dtype), (total,), lambda g: (g * inv,))


# ---------------------------------------------------------------- normalizations


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), bw)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def bw(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _make(out, (a,), bw)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply an affine map."""
    xd = x.data
    xc = xd - _last_mean(xd)
    inv = 1.0 / np.sqrt(_last_mean(xc * xc) + xd.dtype.type(eps))
    xhat = xc * inv
    gd, d = gamma.data, xd.shape[-1]

    def bw(g):
        gx = g * gd
        dx = inv * (gx - _last_mean(gx) - xhat * _last_mean(gx * xhat))
        return dx, _sum_leading(g * xhat, (d,)), _sum_leading(g, (d,))

    return _make((xhat * gd + beta.data).astype(xd.dtype), (x, gamma, beta), bw)


def l2_normalize(a: Tensor, axis: int = -1, eps: float = 1e-8) -> Tensor:
    ad = a.data
    norm = np.sqrt((ad * ad).sum(axis=axis, keepdims=True))
    denom = norm + eps
    out = ad / denom

    def bw(g):
        # d/da [a / (|a| + eps)]
        dot = (g * ad).sum(axis=axis, keepdims=True)
        safe = np.where(norm > 0, norm, 1)
        return (g / denom - ad * dot / (denom * denom * safe),)

    return _make(out, (a,), bw)


def cosine_similarity(a: Tensor, b: Tensor, axis: int = -1, eps: float = 1e-8) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"cosine_similarity: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    na = np.sqrt((ad * ad).sum(axis=axis, keepdims=True))
    nb = np.sqrt((bd * bd).sum(axis=axis, keepdims=True))
    den = na * nb + eps
    dot = (ad * bd).sum(axis=axis, keepdims=True)
    out = dot / den
    sa = np.where(na > 0, na, 1)
    sb = np.where(nb > 0, nb, 1)

    def bw(g):
        g = np.expand_dims(g, axis)
        ga = g * (bd / den - dot * nb * ad / (sa * den * den))
        gb = g * (ad / den - dot * na * bd / (sb * den * den))
        return ga, gb

    return _make(np.squeeze(out, axis=axis), (a, b), bw)


# ---------------------------------------------------------------- backward


def backward(loss: Tensor) -> dict[str, np.ndarray]:
    """Accumulate gradients into every leaf reachable from ``loss``.

    Returns a map from parameter name to gradient.  The recorded graph is
    released afterwards.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    params: dict[str, np.ndarray] = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            if isinstance(node, Parameter):
                params[node.name] = node.grad
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=parent.data.dtype)
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg
        node._backward = None
        node._parents = ()
    return params


def zero_grad(params: Iterable[Parameter]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------- optimizer


class AdamW:
    """Decoupled-weight-decay Adam with the AMSGrad running max."""

    def __init__(self, params: Sequence[Parameter], lr=2e-4, weight_decay=1e-12,
                 betas=(0.9, 0.999), eps=1e-8, amsgrad=True):
        self.params = [p for p in params if p.trainable]
        self.lr, self.weight_decay, self.betas = lr, weight_decay, betas
        self.eps, self.amsgrad = eps, amsgrad
        self.step_count = 0
        self.state: dict[str, dict[str, np.ndarray]] = {}

    def step(self, grads: dict[str, np.ndarray] | None = None) -> None:
        if grads is None:
            grads = {p.name: p.grad for p in self.params if p.grad is not None}
        self.step_count += 1
        adamw_step(self.params, grads, self.lr, self.weight_decay, self.betas,
                   self.step_count, self.state, eps=self.eps, amsgrad=self.amsgrad)


def adamw_step(params, grads, lr, weight_decay, betas, step_count, state=None,
               eps=1e-8, amsgrad=True):
    """One AdamW update.  ``state`` holds the moment buffers and is updated in place."""
    state = {} if state is None else state
    b1, b2 = betas
    bc1 = 1 - b1 ** step_count
    bc2 = 1 - b2 ** step_count
    for p in params:
        if not p.trainable:
            continue
        g = grads.get(p.name)
        if g is None:
            continue
        st = state.get(p.name)
        if st is None:
            st = state[p.name] = {
                "m": np.zeros_like(p.data, dtype=np.float64),
                "v": np.zeros_like(p.data, dtype=np.float64),
                "vmax": np.zeros_like(p.data, dtype=np.float64),
            }
        g = g.astype(np.float64)
        w = p.data.astype(np.float64) * (1 - lr * weight_decay)
        st["m"] = b1 * st["m"] + (1 - b1) * g
        st["v"] = b2 * st["v"] + (1 - b2) * g * g
        if amsgrad:
            st["vmax"] = np.maximum(st["vmax"], st["v"])
            v = st["vmax"]
        else:
            v = st["v"]
        denom = np.sqrt(v) / np.sqrt(bc2) + eps
        w = w - lr * (st["m"] / bc1) / denom
        p.data = w.astype(p.data.dtype)
    return state


# ---------------------------------------------------------------- checkpoints

CHECKPOINT_MAGIC = b"BKPT1"


def save_checkpoint(path, params: Sequence[Parameter]) -> None:
    """Write parameters in the BKPT1 layout (little-endian float32)."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        for p in params:
            name = p.name.encode("utf-8")
            fh.write(struct.pack("<I", len(name)))
            fh.write(name)
            fh.write(struct.pack("<I", p.data.ndim))
            fh.write(struct.pack(f"<{p.data.ndim}I", *p.data.shape))
            fh.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not a BKPT1 checkpoint")
    pos = len(CHECKPOINT_MAGIC)
    out: dict[str, np.ndarray] = {}
    while pos < len(blob):
        (nlen,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        name = blob[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}I", blob, pos)
        pos += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=pos).reshape(dims)
        pos += 4 * count
        out[name] = arr.astype(np.float32)
    return out
