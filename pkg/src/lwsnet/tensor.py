"""Dense float tensors with reverse-mode automatic differentiation.

Everything the network needs runs on plain numpy arrays in CHW layout
(channels, height, width) for activations and OCHW for convolution
kernels.  Each operator records a backward closure on its output; calling
``backward()`` on a scalar walks the recorded trace in reverse
topological order and accumulates gradients into every leaf tensor that
requested them.

Arithmetic stays in the dtype of the inputs: float32 for normal use,
float64 when a caller wants tighter accumulation (gradient checking).
"""

from __future__ import annotations

import contextlib

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable trace recording inside the block (inference / evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_float_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    return arr


class Tensor:
    """A dense n-d float array plus an optional autodiff trace node.

    ``data`` is row-major; ``grad`` has the same shape and is accumulated
    additively (allocated as zeros on first use, so fresh gradients are
    all-zero).
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_float_array(data, dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Reverse-mode sweep from a scalar.

        Gradients land in ``.grad`` of every reachable leaf with
        ``requires_grad``; repeated calls keep accumulating there.
        """
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.data.shape}")

        order = _toposort(self)
        flowing = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = flowing.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in flowing:
                    flowing[key] = flowing[key] + pg
                else:
                    flowing[key] = pg

    # Small elementwise sugar, enough for losses and tests.
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)


def _toposort(root: Tensor):
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad:
                stack.append((p, False))
    return order


def _op(data: np.ndarray, parents, backward_fn) -> Tensor:
    """Wrap an operator result, recording the trace when grads are live."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _check_chw(x: Tensor, opname: str):
    if x.ndim != 3:
        raise ValueError(f"{opname}: expected a CxHxW tensor, got shape {x.shape}")


# ---------------------------------------------------------------------------
# im2col / col2im helpers (stride-1 and strided), shared by conv2d.

def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    c = xp.shape[0]
    cols = np.empty((c, kh, kw, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[:, i : i + stride * ho : stride, j : j + stride * wo : stride]
    return cols.reshape(c * kh * kw, ho * wo)


def _col2im(gcols: np.ndarray, xp_shape, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    c = xp_shape[0]
    g = gcols.reshape(c, kh, kw, ho, wo)
    buf = np.zeros(xp_shape, dtype=gcols.dtype)
    for i in range(kh):
        for j in range(kw):
            buf[:, i : i + stride * ho : stride, j : j + stride * wo : stride] += g[:, i, j]
    return buf


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-d cross-correlation of a CxHxW input with an OxCxKhxKw kernel.

    Zero padding, floor output sizing.  The backward pass reuses the
    unfolded input columns, so memory scales with kernel area.
    """
    _check_chw(x, "conv2d")
    if weight.ndim != 4:
        raise ValueError(f"conv2d: expected OxCxKhxKw weight, got shape {weight.shape}")
    c, h, w = x.shape
    o, cw, kh, kw = weight.shape
    if c != cw:
        raise ValueError(
            f"conv2d: input has {c} channels (shape {x.shape}) but weight expects {cw} (shape {weight.shape})"
        )
    if bias.shape != (o,):
        raise ValueError(f"conv2d: bias shape {bias.shape} does not match {o} output channels")
    if stride < 1:
        raise ValueError(f"conv2d: stride must be >= 1, got {stride}")
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise ValueError(
            f"conv2d: kernel {kh}x{kw} larger than padded input {h + 2 * padding}x{w + 2 * padding}"
        )
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1

    pointwise = kh == 1 and kw == 1 and stride == 1 and padding == 0
    if pointwise:
        cols = x.data.reshape(c, h * w)
    else:
        xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)))
        cols = _im2col(xp, kh, kw, stride, ho, wo)
    w2 = weight.data.reshape(o, -1)
    y = w2 @ cols
    y += bias.data[:, None]

    def backward(gy):
        gy2 = gy.reshape(o, -1)
        gw = (gy2 @ cols.T).reshape(weight.shape) if weight.requires_grad else None
        gb = gy2.sum(axis=1) if bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = w2.T @ gy2
            if pointwise:
                gx = gcols.reshape(c, h, w)
            else:
                buf = _col2im(gcols, (c, h + 2 * padding, w + 2 * padding), kh, kw, stride, ho, wo)
                gx = buf[:, padding : padding + h, padding : padding + w] if padding else buf
        return gx, gw, gb

    return _op(y.reshape(o, ho, wo), (x, weight, bias), backward)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """2x2 stride-2 transposed convolution: CxHxW -> Ox2Hx2W.

    The only transposed convolution the model needs; other kernel shapes
    are rejected.  Kernel and stride being equal means output pixels never
    overlap, so the op is a per-pixel stamp of the 2x2 kernel.
    """
    _check_chw(x, "conv_transpose2d")
    if weight.ndim != 4 or weight.shape[2:] != (2, 2):
        raise ValueError(f"conv_transpose2d: expected Cx0x2x2-shaped weight, got {weight.shape}")
    c, h, w = x.shape
    cw, o = weight.shape[:2]
    if c != cw:
        raise ValueError(
            f"conv_transpose2d: input has {c} channels (shape {x.shape}) but weight expects {cw} (shape {weight.shape})"
        )
    if bias.shape != (o,):
        raise ValueError(f"conv_transpose2d: bias shape {bias.shape} does not match {o} output channels")

    t = np.tensordot(weight.data, x.data, axes=([0], [0]))  # (O,2,2,H,W)
    y = np.ascontiguousarray(t.transpose(0, 3, 1, 4, 2)).reshape(o, 2 * h, 2 * w)
    y += bias.data[:, None, None]

    def backward(gy):
        v = gy.reshape(o, h, 2, w, 2)
        gx = np.tensordot(weight.data, v, axes=([1, 2, 3], [0, 2, 4])) if x.requires_grad else None
        gw = np.tensordot(x.data, v, axes=([1, 2], [1, 3])) if weight.requires_grad else None
        gb = gy.sum(axis=(1, 2)) if bias.requires_grad else None
        return gx, gw, gb

    return _op(y, (x, weight, bias), backward)


def _maxpool_eval_stride1(d: np.ndarray, kernel: int, padding: int) -> np.ndarray:
    """Stride-1 max over kxk windows without materializing padded copies.

    Separable: windowed max over columns, then over rows; cells outside
    the image are simply excluded from each window's max.
    """
    out = d
    for axis in (2, 1):
        acc = out.copy()
        n = out.shape[axis]
        for off in range(-padding, kernel - padding):
            if off == 0:
                continue
            lo, hi = max(0, -off), min(n, n - off)
            src = [slice(None)] * 3
            dst = [slice(None)] * 3
            dst[axis] = slice(lo, hi)
            src[axis] = slice(lo + off, hi + off)
            np.maximum(acc[tuple(dst)], out[tuple(src)], out=acc[tuple(dst)])
        out = acc
    return out


def maxpool2d(x: Tensor, kernel: int, stride: int, padding: int = 0) -> Tensor:
    """Max pooling with floor sizing; padded cells never win the max.

    Backward routes each output gradient to the first maximal cell of its
    window in row-major scan order, which keeps tie handling
    deterministic.
    """
    _check_chw(x, "maxpool2d")
    c, h, w = x.shape
    if h + 2 * padding < kernel or w + 2 * padding < kernel:
        raise ValueError(
            f"maxpool2d: kernel {kernel} larger than padded input {h + 2 * padding}x{w + 2 * padding}"
        )
    ho = (h + 2 * padding - kernel) // stride + 1
    wo = (w + 2 * padding - kernel) // stride + 1
    hp, wp = h + 2 * padding, w + 2 * padding

    needs_grad = _grad_enabled and x.requires_grad

    # Inference path: no gradient routing, so skip argmax bookkeeping.
    if not needs_grad and stride == 1 and ho == h and wo == w:
        return _op(_maxpool_eval_stride1(x.data, kernel, padding), (x,), None)

    # Non-overlapping windows: pure reshape, scatter is a plain assignment.
    if kernel == stride and padding == 0:
        win = x.data[:, : ho * stride, : wo * stride]
        win = win.reshape(c, ho, stride, wo, stride).transpose(0, 1, 3, 2, 4).reshape(c, ho, wo, -1)
        kidx = win.argmax(axis=3)
        best = np.take_along_axis(win, kidx[..., None], axis=3)[..., 0]

        def backward_disjoint(gy):
            buf4 = np.zeros((c, ho, wo, kernel * kernel), dtype=x.dtype)
            np.put_along_axis(buf4, kidx[..., None], gy[..., None], axis=3)
            buf = buf4.reshape(c, ho, wo, stride, stride).transpose(0, 1, 3, 2, 4)
            buf = buf.reshape(c, ho * stride, wo * stride)
            if ho * stride == h and wo * stride == w:
                return (np.ascontiguousarray(buf),)
            full = np.zeros((c, h, w), dtype=x.dtype)
            full[:, : ho * stride, : wo * stride] = buf
            return (full,)

        return _op(np.ascontiguousarray(best), (x,), backward_disjoint)

    # General path: row-major offset scan keeping first-encountered maxima.
    if padding:
        xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)), constant_values=-np.inf)
    else:
        xp = x.data
    base_lin = ((np.arange(ho, dtype=np.int32) * stride)[:, None] * wp
                + (np.arange(wo, dtype=np.int32) * stride)[None, :])
    best = None
    bidx = None
    for di in range(kernel):
        for dj in range(kernel):
            win = xp[:, di : di + stride * ho : stride, dj : dj + stride * wo : stride]
            lin = base_lin + np.int32(di * wp + dj)
            if best is None:
                best = win.copy()
                bidx = np.broadcast_to(lin, best.shape).copy()
            else:
                better = win > best
                np.copyto(best, win, where=better)
                np.copyto(bidx, lin, where=better)

    def backward(gy):
        base = (np.arange(c, dtype=np.int64) * (hp * wp))[:, None, None]
        flat = (bidx + base).ravel()
        buf = np.bincount(flat, weights=gy.ravel().astype(np.float64), minlength=c * hp * wp)
        buf = buf.astype(x.dtype).reshape(c, hp, wp)
        if padding:
            buf = buf[:, padding : padding + h, padding : padding + w]
        return (buf,)

    return _op(best, (x,), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """Per-channel spatial mean: CxHxW -> C."""
    _check_chw(x, "global_avg_pool")
    c, h, w = x.shape
    y = x.data.mean(axis=(1, 2))

    def backward(gy):
        return ((gy / (h * w))[:, None, None] * np.ones_like(x.data),)

    return _op(y, (x,), backward)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    mode: str = "train",
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization over the spatial axes.

    Train mode normalizes with the current statistics and folds them into
    the running estimates (unbiased variance, momentum update); eval mode
    normalizes with the running estimates.  Running statistics are plain
    arrays, not trainable parameters.
    """
    _check_chw(x, "batch_norm")
    c, h, w = x.shape
    for name, t in (("gamma", gamma), ("beta", beta)):
        if t.shape != (c,):
            raise ValueError(f"batch_norm: {name} shape {t.shape} does not match {c} channels")
    if mode not in ("train", "eval"):
        raise ValueError(f"batch_norm: mode must be 'train' or 'eval', got {mode!r}")

    n = h * w
    if mode == "train":
        mu = x.data.mean(axis=(1, 2))
        var = x.data.var(axis=(1, 2))
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mu[:, None, None]) * inv[:, None, None]
        unbiased = var * (n / (n - 1)) if n > 1 else var
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.astype(running_mean.dtype)
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased.astype(running_var.dtype)
    else:
        inv = (1.0 / np.sqrt(running_var + eps)).astype(x.dtype)
        xhat = (x.data - running_mean.astype(x.dtype)[:, None, None]) * inv[:, None, None]
    y = gamma.data[:, None, None] * xhat + beta.data[:, None, None]

    def backward(gy):
        dgamma = (gy * xhat).sum(axis=(1, 2)) if gamma.requires_grad else None
        dbeta = gy.sum(axis=(1, 2)) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            scale = (gamma.data * inv)[:, None, None]
            if mode == "train":
                gmean = gy.mean(axis=(1, 2))[:, None, None]
                gdot = (gy * xhat).mean(axis=(1, 2))[:, None, None]
                gx = scale * (gy - gmean - xhat * gdot)
            else:
                gx = scale * gy
        return gx, dgamma, dbeta

    return _op(y, (x, gamma, beta), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(gy):
        return (gy * mask,)

    return _op(np.where(mask, x.data, 0), (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    y = np.empty_like(d)
    pos = d >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    y[~pos] = ex / (1.0 + ex)

    def backward(gy):
        return (gy * y * (1.0 - y),)

    return _op(y, (x,), backward)


def softmax_channelwise(x: Tensor) -> Tensor:
    """Softmax over the channel axis, per spatial position; max-shifted."""
    _check_chw(x, "softmax_channelwise")
    z = x.data - x.data.max(axis=0, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=0, keepdims=True)

    def backward(gy):
        dot = (gy * y).sum(axis=0, keepdims=True)
        return (y * (gy - dot),)

    return _op(y, (x,), backward)


def concat_channels(*parts: Tensor) -> Tensor:
    """Stack CxHxW tensors along the channel axis; backward splits."""
    if len(parts) < 2:
        raise ValueError("concat_channels: need at least two tensors")
    hw = None
    for p in parts:
        _check_chw(p, "concat_channels")
        if hw is None:
            hw = p.shape[1:]
        elif p.shape[1:] != hw:
            raise ValueError(
                f"concat_channels: spatial mismatch, {parts[0].shape} vs {p.shape}"
            )
    y = np.concatenate([p.data for p in parts], axis=0)
    offsets = np.cumsum([0] + [p.shape[0] for p in parts])

    def backward(gy):
        return tuple(
            gy[offsets[i] : offsets[i + 1]] if p.requires_grad else None
            for i, p in enumerate(parts)
        )

    return _op(y, parts, backward)


def fully_connected(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map of a flat vector: y = W x + b."""
    if x.ndim != 1:
        raise ValueError(f"fully_connected: expected a flat vector, got shape {x.shape}")
    if weight.ndim != 2 or weight.shape[1] != x.shape[0]:
        raise ValueError(
            f"fully_connected: weight shape {weight.shape} does not accept input shape {x.shape}"
        )
    m = weight.shape[0]
    if bias.shape != (m,):
        raise ValueError(f"fully_connected: bias shape {bias.shape} does not match {m} outputs")
    y = weight.data @ x.data + bias.data

    def backward(gy):
        gw = np.outer(gy, x.data) if weight.requires_grad else None
        gx = weight.data.T @ gy if x.requires_grad else None
        gb = gy.copy() if bias.requires_grad else None
        return gx, gw, gb

    return _op(y, (x, weight, bias), backward)


def scale_channels(x: Tensor, s: Tensor) -> Tensor:
    """Multiply each channel of a CxHxW map by a per-channel gate value."""
    _check_chw(x, "scale_channels")
    if s.shape != (x.shape[0],):
        raise ValueError(f"scale_channels: gate shape {s.shape} does not match input {x.shape}")
    y = x.data * s.data[:, None, None]

    def backward(gy):
        gx = gy * s.data[:, None, None] if x.requires_grad else None
        gs = (gy * x.data).sum(axis=(1, 2)) if s.requires_grad else None
        return gx, gs

    return _op(y, (x, s), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")

    def backward(gy):
        return (gy if a.requires_grad else None, gy if b.requires_grad else None)

    return _op(a.data + b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"mul: shape mismatch {a.shape} vs {b.shape}")

    def backward(gy):
        ga = gy * b.data if a.requires_grad else None
        gb = gy * a.data if b.requires_grad else None
        return ga, gb

    return _op(a.data * b.data, (a, b), backward)


def tsum(x: Tensor) -> Tensor:
    """Sum all elements into a scalar."""

    def backward(gy):
        return (np.full_like(x.data, gy),)

    return _op(x.data.sum(), (x,), backward)
