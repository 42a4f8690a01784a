"""Dense tensors with reverse-mode automatic differentiation.

Covers exactly the operations the registration model needs: matrix
products (2-D and batched), 2-D convolution, softmax, gather/scatter,
shape manipulation, and an elementwise suite.  Forward values are numpy
arrays in row-major order; backward rules are hand-written
vector-Jacobian products accumulated by a reverse-topological sweep.

Two precision modes exist: f32 (training default) and f64 (used by the
gradient verification suite, where finite-difference step sizes make
f32 meaningless).
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np


class DimensionError(ValueError):
    """Operand shapes violate an operation's contract."""


class GraphError(RuntimeError):
    """The gradient tape was used outside its contract."""


_DTYPES = {"f32": np.float32, "f64": np.float64}
_state = {"dtype": np.float32, "grad_enabled": True}


def set_default_dtype(mode: str) -> None:
    """Set the dtype used for tensors created from non-float data."""
    if mode not in _DTYPES:
        raise ValueError(f"unknown precision mode {mode!r}, expected 'f32' or 'f64'")
    _state["dtype"] = _DTYPES[mode]


def default_dtype() -> type:
    return _state["dtype"]


@contextmanager
def precision(mode: str):
    """Temporarily switch the default dtype ('f32' or 'f64')."""
    if mode not in _DTYPES:
        raise ValueError(f"unknown precision mode {mode!r}, expected 'f32' or 'f64'")
    old = _state["dtype"]
    _state["dtype"] = _DTYPES[mode]
    try:
        yield
    finally:
        _state["dtype"] = old


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference paths)."""
    old = _state["grad_enabled"]
    _state["grad_enabled"] = False
    try:
        yield
    finally:
        _state["grad_enabled"] = old


class Tensor:
    """A dense n-d float array, optionally recorded on the gradient tape.

    Leaves created with ``requires_grad=True`` receive additive gradient
    accumulation in ``.grad`` after ``backward``; callers must zero
    gradients between optimizer steps.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "_backward_ran")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(dtype, str):
            dtype = _DTYPES[dtype]
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype.type not in (np.float32, np.float64):
            arr = arr.astype(_state["dtype"])
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = None
        self._vjp = None
        self._backward_ran = False

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_err(self)

    def detach(self) -> "Tensor":
        """A view of the same data, cut off from the tape."""
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag})"

    # arithmetic sugar; scalars are allowed on either side
    def __add__(self, other):
        return add(self, _coerce(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _coerce(other, self))

    def __rsub__(self, other):
        return sub(_coerce(other, self), self)

    def __mul__(self, other):
        return mul(self, _coerce(other, self))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _coerce(other, self))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _scalar_err(t):
    raise GraphError(f"item() needs a single-element tensor, got shape {t.shape}")


def _coerce(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _make(out_data: np.ndarray, parents: tuple, vjp) -> Tensor:
    out = Tensor(out_data)
    if _state["grad_enabled"] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every requires-grad leaf.

    The root must be a scalar produced by a recorded forward graph.
    Running backward twice on the same root is an error; rebuild the
    graph (re-run the forward pass) to differentiate again.
    """
    if loss.data.size != 1:
        raise GraphError(f"backward root must be scalar, got shape {loss.shape}")
    if loss._backward_ran:
        raise GraphError("backward already ran on this graph; re-run the forward pass first")
    loss._backward_ran = True
    if not loss.requires_grad:
        return

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        if node._parents is not None:
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._parents is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def zero_grads(params) -> None:
    """Clear gradients on an iterable (or name->Tensor mapping) of leaves."""
    values = params.values() if hasattr(params, "values") else params
    for p in values:
        p.grad = None


def assert_finite(t: Tensor, where: str = "tensor") -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise GraphError(f"non-finite values in {where}")
    return t


# ---------------------------------------------------------------------------
# elementwise suite


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data + b.data
    except ValueError as e:
        raise DimensionError(f"add: cannot broadcast {a.shape} with {b.shape}") from e
    return _make(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data - b.data
    except ValueError as e:
        raise DimensionError(f"sub: cannot broadcast {a.shape} with {b.shape}") from e
    return _make(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data * b.data
    except ValueError as e:
        raise DimensionError(f"mul: cannot broadcast {a.shape} with {b.shape}") from e
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data / b.data
    except ValueError as e:
        raise DimensionError(f"div: cannot broadcast {a.shape} with {b.shape}") from e
    return _make(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data + c, (a,), lambda g: (g,))


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0)
    return _make(out, (a,), lambda g: (g * (a.data > 0),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g / (2.0 * out),))


def pow_const(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = a.data**c
    return _make(out, (a,), lambda g: (g * c * a.data ** (c - 1.0),))


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    out = np.clip(a.data, lo, hi)
    mask = (a.data >= lo) & (a.data <= hi)
    return _make(out, (a,), lambda g: (g * mask,))


def l2_normalize(a: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """Divide each slice along ``axis`` by max(L2 norm, eps)."""
    norm = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))
    n = np.maximum(norm, eps)
    out = a.data / n

    def vjp(g):
        dot = (g * a.data).sum(axis=axis, keepdims=True)
        return (g / n - np.where(norm > eps, a.data * dot / (n * n * n), 0.0),)

    return _make(out, (a,), vjp)


def instance_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each channel of [C,H,W] by its spatial mean and variance."""
    if x.ndim != 3:
        raise DimensionError(f"instance_norm expects [C,H,W], got {x.shape}")
    mu = x.data.mean(axis=(1, 2), keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=(1, 2), keepdims=True)
    s = np.sqrt(var + eps)
    y = xc / s
    out = y * gain.data + bias.data

    def vjp(g):
        gy = g * gain.data
        mean_gy = gy.mean(axis=(1, 2), keepdims=True)
        mean_gy_y = (gy * y).mean(axis=(1, 2), keepdims=True)
        gx = (gy - mean_gy - y * mean_gy_y) / s
        ggain = _unbroadcast(g * y, gain.shape)
        gbias = _unbroadcast(g, bias.shape)
        return gx, ggain, gbias

    return _make(out, (x, gain, bias), vjp)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean and unit variance per position."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    s = np.sqrt(var + eps)
    y = xc / s
    out = y * gain.data + bias.data

    def vjp(g):
        gy = g * gain.data
        mean_gy = gy.mean(axis=-1, keepdims=True)
        mean_gy_y = (gy * y).mean(axis=-1, keepdims=True)
        gx = (gy - mean_gy - y * mean_gy_y) / s
        return gx, _unbroadcast(g * y, gain.shape), _unbroadcast(g, bias.shape)

    return _make(out, (x, gain, bias), vjp)


# ---------------------------------------------------------------------------
# reductions


def _axis_tuple(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _axis_tuple(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes) if axes else g
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), vjp)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _axis_tuple(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; supports batched operands with numpy @ semantics."""
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dims disagree: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as e:
        raise DimensionError(f"matmul batch dims disagree: {a.shape} @ {b.shape}") from e
    need_a, need_b = a.requires_grad, b.requires_grad

    def vjp(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if need_a else None
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if need_b else None
        return ga, gb

    return _make(out, (a, b), vjp)


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def swap_last(a: Tensor) -> Tensor:
    """Swap the last two axes (matrix transpose of each batch item)."""
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, tuple(axes))


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


# ---------------------------------------------------------------------------
# shape manipulation


def concat(parts, axis: int = 0) -> Tensor:
    parts = list(parts)
    axis = axis % parts[0].ndim
    for p in parts[1:]:
        if p.ndim != parts[0].ndim or any(
            i != axis and p.shape[i] != parts[0].shape[i] for i in range(p.ndim)
        ):
            raise DimensionError(
                f"concat: shapes {[p.shape for p in parts]} disagree off axis {axis}"
            )
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(
            g[(slice(None),) * axis + (slice(bounds[i], bounds[i + 1]),)]
            for i in range(len(parts))
        )

    return _make(out, tuple(parts), vjp)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two feature tensors along their channel (last) axis."""
    return concat([a, b], axis=-1)


def slice_window(a: Tensor, starts, sizes) -> Tensor:
    """Extract a contiguous window ``a[starts : starts+sizes]`` over all dims."""
    if len(starts) != a.ndim or len(sizes) != a.ndim:
        raise DimensionError(f"slice_window: need {a.ndim} starts/sizes for shape {a.shape}")
    sl = tuple(slice(s, s + n) for s, n in zip(starts, sizes))
    for s, n, dim in zip(starts, sizes, a.shape):
        if s < 0 or n < 1 or s + n > dim:
            raise DimensionError(f"slice_window: window {starts}+{sizes} exceeds shape {a.shape}")
    out = a.data[sl]

    def vjp(g):
        full = np.zeros_like(a.data)
        full[sl] = g
        return (full,)

    return _make(out, (a,), vjp)


def take_flat(a: Tensor, idx) -> Tensor:
    """Gather elements by flat (row-major) index; scatter-add on backward."""
    idx = np.asarray(idx, dtype=np.intp)
    flat = a.data.reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= flat.size):
        raise DimensionError(f"take_flat: index out of range for {a.shape}")
    out = flat[idx]

    def vjp(g):
        full = np.zeros(flat.size, dtype=a.data.dtype)
        np.add.at(full, idx, g)
        return (full.reshape(a.shape),)

    return _make(out, (a,), vjp)


def take_rows(a: Tensor, idx) -> Tensor:
    """Gather rows of a 2-D tensor; ``idx`` may have any shape."""
    if a.ndim != 2:
        raise DimensionError(f"take_rows expects a 2-d tensor, got {a.shape}")
    idx = np.asarray(idx, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise DimensionError(f"take_rows: row index out of range for {a.shape}")
    out = a.data[idx]

    def vjp(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx.reshape(-1), g.reshape(-1, a.shape[1]))
        return (full,)

    return _make(out, (a,), vjp)


# ---------------------------------------------------------------------------
# softmax


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Softmax along ``axis``; subtracts the per-slice max before exp."""
    axis = axis % a.ndim
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _make(out, (a,), vjp)


# ---------------------------------------------------------------------------
# convolution and resampling


def conv2d(x: Tensor, k: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlate ``x`` [C_in,H,W] with kernels ``k`` [C_out,C_in,kh,kw].

    Output spatial size is floor((H + 2*pad - kh)/stride) + 1 per axis.
    """
    if x.ndim != 3 or k.ndim != 4:
        raise DimensionError(f"conv2d expects x[C,H,W], k[O,C,kh,kw]; got {x.shape}, {k.shape}")
    cin, h, w = x.shape
    cout, kcin, kh, kw = k.shape
    if kcin != cin:
        raise DimensionError(f"conv2d channel mismatch: input {cin}, kernel {kcin}")
    if stride < 1 or pad < 0:
        raise DimensionError(f"conv2d: bad stride={stride} pad={pad}")
    if kh > h + 2 * pad or kw > w + 2 * pad:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} exceeds padded input {h + 2 * pad}x{w + 2 * pad}")
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad))) if pad else x.data
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    windows = windows[:, ::stride, ::stride]  # [C, ho, wo, kh, kw]
    cols = windows.transpose(0, 3, 4, 1, 2).reshape(cin * kh * kw, ho * wo)
    kmat = k.data.reshape(cout, cin * kh * kw)
    out = (kmat @ cols).reshape(cout, ho, wo)

    need_x, need_k = x.requires_grad, k.requires_grad

    def vjp(g):
        g2 = g.reshape(cout, ho * wo)
        gk = (g2 @ cols.T).reshape(k.shape) if need_k else None
        if not need_x:
            return None, gk
        gcols = (kmat.T @ g2).reshape(cin, kh, kw, ho, wo)
        gxp = np.zeros_like(xp)
        for a in range(kh):
            for b in range(kw):
                gxp[:, a : a + stride * ho : stride, b : b + stride * wo : stride] += gcols[:, a, b]
        gx = gxp[:, pad : pad + h, pad : pad + w] if pad else gxp
        return gx, gk

    return _make(out, (x, k), vjp)


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    """Repeat each spatial cell of a [C,H,W] map ``factor`` times per axis."""
    if x.ndim != 3:
        raise DimensionError(f"upsample_nearest expects [C,H,W], got {x.shape}")
    c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=1), factor, axis=2)

    def vjp(g):
        return (g.reshape(c, h, factor, w, factor).sum(axis=(2, 4)),)

    return _make(out, (x, ), vjp)
