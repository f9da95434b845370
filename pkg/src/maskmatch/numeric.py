"""Dense float64 tensors with a reverse-mode gradient tape.

Every differentiable operation the model uses lives here as a pure
function ``op(inputs..., tape=None)``.  Passing a :class:`Tape` records a
closure that, when the tape is replayed backward, reads the output's
accumulated gradient and adds each input's vector-Jacobian product to
that input's ``grad``.  With ``tape=None`` the same functions run as
plain forward arithmetic, which is the inference path.

Tensors are immutable values once built; a tape belongs to a single
training step and is replayed exactly once.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, ParameterError

_CHECKED = True

# cosine_sim calls that hit a zero-norm operand; see zero_norm_count()
_zero_norm_count = 0


def set_checked(flag: bool) -> None:
    """Enable or disable finiteness checks at tensor construction."""
    global _CHECKED
    _CHECKED = bool(flag)


def zero_norm_count() -> int:
    return _zero_norm_count


def reset_zero_norm_count() -> None:
    global _zero_norm_count
    _zero_norm_count = 0


class Tensor:
    """A contiguous row-major float64 array plus an accumulated gradient."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        if _CHECKED and not np.all(np.isfinite(arr)):
            raise ParameterError("tensor rejected: contains NaN or Inf entries")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _wrap(data) -> Tensor:
    return data if isinstance(data, Tensor) else Tensor(data)


def _result(arr: np.ndarray, requires_grad: bool) -> Tensor:
    # internal constructor for op outputs; skips the finiteness check
    out = Tensor.__new__(Tensor)
    out.data = arr
    out.grad = None
    out.requires_grad = requires_grad
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad = t.grad + g


class Tape:
    """Ordered record of recorded ops, replayed in exact reverse order."""

    def __init__(self):
        self._records = []

    def record(self, backward_fn) -> None:
        self._records.append(backward_fn)

    def __len__(self):
        return len(self._records)

    def backward(self, loss: Tensor, seed=None) -> None:
        """Seed ``loss.grad`` (ones by default) and replay backward."""
        if seed is None:
            seed = np.ones_like(loss.data)
        _accum(loss, np.asarray(seed, dtype=np.float64))
        for fn in reversed(self._records):
            fn()


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# primitive ops


def matmul(a, b, tape: Tape | None = None) -> Tensor:
    """Matrix product of two 2-D tensors."""
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul: incompatible shapes {a.data.shape} x {b.data.shape}"
        )
    out = _result(a.data @ b.data, a.requires_grad or b.requires_grad)
    if tape is not None and out.requires_grad:

        def backward():
            if out.grad is None:
                return
            if a.requires_grad:
                _accum(a, out.grad @ b.data.T)
            if b.requires_grad:
                _accum(b, a.data.T @ out.grad)

        tape.record(backward)
    return out


def transpose(a, tape: Tape | None = None) -> Tensor:
    a = _wrap(a)
    if a.data.ndim != 2:
        raise DimensionError(f"transpose: expected 2-D tensor, got shape {a.data.shape}")
    out = _result(np.ascontiguousarray(a.data.T), a.requires_grad)
    if tape is not None and out.requires_grad:

        def backward():
            if out.grad is not None:
                _accum(a, out.grad.T)

        tape.record(backward)
    return out


def add(a, b, tape: Tape | None = None) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.shape != b.data.shape:
        raise DimensionError(f"add: shape mismatch {a.data.shape} vs {b.data.shape}")
    out = _result(a.data + b.data, a.requires_grad or b.requires_grad)
    if tape is not None and out.requires_grad:

        def backward():
            if out.grad is None:
                return
            if a.requires_grad:
                _accum(a, out.grad)
            if b.requires_grad:
                _accum(b, out.grad)

        tape.record(backward)
    return out


def add_bias(x, b, tape: Tape | None = None) -> Tensor:
    """Add a length-n vector to every row of an m x n tensor."""
    x, b = _wrap(x), _wrap(b)
    if x.data.ndim != 2 or b.data.ndim != 1 or x.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"add_bias: incompatible shapes {x.data.shape} and {b.data.shape}"
        )
    out = _result(x.data + b.data[None, :], x.requires_grad or b.requires_grad)
    if tape is not None and out.requires_grad:

        def backward():
            if out.grad is None:
                return
            if x.requires_grad:
                _accum(x, out.grad)
            if b.requires_grad:
                _accum(b, out.grad.sum(axis=0))

        tape.record(backward)
    return out


def scale(a, c: float, tape: Tape | None = None) -> Tensor:
    a = _wrap(a)
    c = float(c)
    out = _result(a.data * c, a.requires_grad)
    if tape is not None and out.requires_grad:

        def backward():
            if out.grad is not None:
                _accum(a, out.grad * c)

        tape.record(backward)
    return out


def relu(a, tape: Tape | None = None) -> Tensor:
    a = _wrap(a)
    out = _result(np.maximum(a.data, 0.0), a.requires_grad)
    if tape is not None and out.requires_grad:
        mask = a.data > 0.0

        def backward():
            if out.grad is not None:
                _accum(a, out.grad * mask)

        tape.record(backward)
    return out


def softmax_rows(x, tape: Tape | None = None) -> Tensor:
    """Row-wise softmax of an m x n tensor, max-subtracted for stability."""
    x = _wrap(x)
    if x.data.ndim != 2 or x.data.shape[1] < 1:
        raise DimensionError(f"softmax_rows: expected m x n with n >= 1, got {x.data.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)
    out = _result(y, x.requires_grad)
    if tape is not None and out.requires_grad:

        def backward():
            if out.grad is None:
                return
            g = out.grad
            dot = (g * y).sum(axis=1, keepdims=True)
            _accum(x, y * (g - dot))

        tape.record(backward)
    return out


def layer_norm(x, gamma, beta, eps: float, tape: Tape | None = None) -> Tensor:
    """Per-row normalization: (x - mean) / sqrt(var + eps) * gamma + beta.

    ``var`` is the population variance of the row.
    """
    if eps <= 0.0:
        raise ParameterError(f"layer_norm: eps must be > 0, got {eps}")
    x, gamma, beta = _wrap(x), _wrap(gamma), _wrap(beta)
    n = x.data.shape[1] if x.data.ndim == 2 else 0
    if x.data.ndim != 2 or gamma.data.shape != (n,) or beta.data.shape != (n,):
        raise DimensionError(
            f"layer_norm: incompatible shapes x={x.data.shape} "
            f"gamma={gamma.data.shape} beta={beta.data.shape}"
        )
    mu = x.data.mean(axis=1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = _result(
        xhat * gamma.data[None, :] + beta.data[None, :],
        x.requires_grad or gamma.requires_grad or beta.requires_grad,
    )
    if tape is not None and out.requires_grad:

        def backward():
            if out.grad is None:
                return
            g = out.grad
            if gamma.requires_grad:
                _accum(gamma, (g * xhat).sum(axis=0))
            if beta.requires_grad:
                _accum(beta, g.sum(axis=0))
            if x.requires_grad:
                dxhat = g * gamma.data[None, :]
                term = (
                    n * dxhat
                    - dxhat.sum(axis=1, keepdims=True)
                    - xhat * (dxhat * xhat).sum(axis=1, keepdims=True)
                )
                _accum(x, term * inv_std / n)

        tape.record(backward)
    return out


def _upsample_axis(size: int, factor: int):
    # sample centers at (i + 0.5) / factor - 0.5, clamped to the border
    coords = (np.arange(size * factor, dtype=np.float64) + 0.5) / factor - 0.5
    coords = np.clip(coords, 0.0, size - 1.0)
    lo = np.floor(coords).astype(np.int64)
    hi = np.minimum(lo + 1, size - 1)
    frac = coords - lo
    return lo, hi, frac


def bilinear_upsample(x, factor: int, tape: Tape | None = None) -> Tensor:
    """Upsample an h x w x d tensor by an integer factor, bilinearly."""
    x = _wrap(x)
    if x.data.ndim != 3:
        raise DimensionError(f"bilinear_upsample: expected h x w x d, got {x.data.shape}")
    if int(factor) != factor or factor < 1:
        raise ParameterError(f"bilinear_upsample: factor must be an integer >= 1, got {factor}")
    factor = int(factor)
    h, w, _ = x.data.shape
    y0, y1, fy = _upsample_axis(h, factor)
    x0, x1, fx = _upsample_axis(w, factor)
    v = x.data
    wx0 = (1.0 - fx)[None, :, None]
    wx1 = fx[None, :, None]
    top = v[y0][:, x0] * wx0 + v[y0][:, x1] * wx1
    bot = v[y1][:, x0] * wx0 + v[y1][:, x1] * wx1
    outv = top * (1.0 - fy)[:, None, None] + bot * fy[:, None, None]
    out = _result(np.ascontiguousarray(outv), x.requires_grad)
    if tape is not None and out.requires_grad:

        def backward():
            if out.grad is None:
                return
            g = out.grad
            gx = np.zeros_like(v)
            wy0 = (1.0 - fy)[:, None, None]
            wy1 = fy[:, None, None]
            np.add.at(gx, (y0[:, None], x0[None, :]), g * wy0 * wx0)
            np.add.at(gx, (y0[:, None], x1[None, :]), g * wy0 * wx1)
            np.add.at(gx, (y1[:, None], x0[None, :]), g * wy1 * wx0)
            np.add.at(gx, (y1[:, None], x1[None, :]), g * wy1 * wx1)
            _accum(x, gx)

        tape.record(backward)
    return out


def concat_vec(parts, tape: Tape | None = None) -> Tensor:
    """Concatenate 1-D tensors in order."""
    parts = [_wrap(p) for p in parts]
    for p in parts:
        if p.data.ndim != 1:
            raise DimensionError(f"concat_vec: expected 1-D parts, got shape {p.data.shape}")
    out = _result(np.concatenate([p.data for p in parts]), any(p.requires_grad for p in parts))
    if tape is not None and out.requires_grad:
        sizes = [p.data.shape[0] for p in parts]

        def backward():
            if out.grad is None:
                return
            off = 0
            for p, size in zip(parts, sizes):
                if p.requires_grad:
                    _accum(p, out.grad[off : off + size])
                off += size

        tape.record(backward)
    return out


def row(x, i: int, tape: Tape | None = None) -> Tensor:
    x = _wrap(x)
    if x.data.ndim != 2:
        raise DimensionError(f"row: expected 2-D tensor, got {x.data.shape}")
    if not 0 <= i < x.data.shape[0]:
        raise ParameterError(f"row: index {i} out of range for {x.data.shape[0]} rows")
    out = _result(x.data[i].copy(), x.requires_grad)
    if tape is not None and out.requires_grad:

        def backward():
            if out.grad is None:
                return
            g = np.zeros_like(x.data)
            g[i] = out.grad
            _accum(x, g)

        tape.record(backward)
    return out


def rows(x, start: int, stop: int, tape: Tape | None = None) -> Tensor:
    """Contiguous row slice x[start:stop]."""
    x = _wrap(x)
    if x.data.ndim != 2:
        raise DimensionError(f"rows: expected 2-D tensor, got {x.data.shape}")
    if not (0 <= start <= stop <= x.data.shape[0]):
        raise ParameterError(f"rows: bad slice [{start}:{stop}] for {x.data.shape[0]} rows")
    out = _result(x.data[start:stop].copy(), x.requires_grad)
    if tape is not None and out.requires_grad:

        def backward():
            if out.grad is None:
                return
            g = np.zeros_like(x.data)
            g[start:stop] = out.grad
            _accum(x, g)

        tape.record(backward)
    return out


def stack_rows(vectors, tape: Tape | None = None) -> Tensor:
    """Stack equal-length 1-D tensors into a matrix, one per row."""
    vectors = [_wrap(v) for v in vectors]
    if not vectors:
        raise ParameterError("stack_rows: need at least one vector")
    n = vectors[0].data.shape[0]
    for v in vectors:
        if v.data.ndim != 1 or v.data.shape[0] != n:
            raise DimensionError("stack_rows: vectors must be 1-D with equal length")
    out = _result(np.stack([v.data for v in vectors]), any(v.requires_grad for v in vectors))
    if tape is not None and out.requires_grad:

        def backward():
            if out.grad is None:
                return
            for k, v in enumerate(vectors):
                if v.requires_grad:
                    _accum(v, out.grad[k])

        tape.record(backward)
    return out


def stack_scalars(scalars, tape: Tape | None = None) -> Tensor:
    """Gather 0-d tensors into a 1-D vector."""
    scalars = [_wrap(s) for s in scalars]
    for s in scalars:
        if s.data.ndim != 0:
            raise DimensionError(f"stack_scalars: expected 0-d parts, got {s.data.shape}")
    out = _result(
        np.array([s.data for s in scalars], dtype=np.float64),
        any(s.requires_grad for s in scalars),
    )
    if tape is not None and out.requires_grad:

        def backward():
            if out.grad is None:
                return
            for k, s in enumerate(scalars):
                if s.requires_grad:
                    _accum(s, np.asarray(out.grad[k]))

        tape.record(backward)
    return out


def reshape(x, shape, tape: Tape | None = None) -> Tensor:
    x = _wrap(x)
    out = _result(np.ascontiguousarray(x.data.reshape(shape)), x.requires_grad)
    if tape is not None and out.requires_grad:
        orig = x.data.shape

        def backward():
            if out.grad is not None:
                _accum(x, out.grad.reshape(orig))

        tape.record(backward)
    return out


def sum_all(x, tape: Tape | None = None) -> Tensor:
    x = _wrap(x)
    out = _result(np.asarray(x.data.sum()), x.requires_grad)
    if tape is not None and out.requires_grad:

        def backward():
            if out.grad is not None:
                _accum(x, np.full_like(x.data, float(out.grad)))

        tape.record(backward)
    return out


def cosine_sim(a, b, tape: Tape | None = None) -> Tensor:
    """Cosine similarity of two 1-D tensors, clamped to [-1, 1].

    A zero-norm operand yields similarity 0 (no gradient) and bumps the
    module's zero-norm counter so training can proceed while the event
    stays observable.
    """
    global _zero_norm_count
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 1 or b.data.ndim != 1 or a.data.shape != b.data.shape:
        raise DimensionError(
            f"cosine_sim: expected equal-length vectors, got {a.data.shape} and {b.data.shape}"
        )
    na = float(np.linalg.norm(a.data))
    nb = float(np.linalg.norm(b.data))
    if na == 0.0 or nb == 0.0:
        _zero_norm_count += 1
        return _result(np.asarray(0.0), False)
    raw = float(a.data @ b.data) / (na * nb)
    out = _result(np.asarray(min(1.0, max(-1.0, raw))), a.requires_grad or b.requires_grad)
    if tape is not None and out.requires_grad:

        def backward():
            if out.grad is None:
                return
            g = float(out.grad)
            if a.requires_grad:
                _accum(a, g * (b.data / (na * nb) - raw * a.data / (na * na)))
            if b.requires_grad:
                _accum(b, g * (a.data / (na * nb) - raw * b.data / (nb * nb)))

        tape.record(backward)
    return out


def cross_entropy_logits(logits, target: int, tape: Tape | None = None) -> Tensor:
    """logsumexp(logits) - logits[target], with softmax-minus-one-hot vjp."""
    logits = _wrap(logits)
    if logits.data.ndim != 1:
        raise DimensionError(f"cross_entropy_logits: expected 1-D logits, got {logits.data.shape}")
    if not 0 <= target < logits.data.shape[0]:
        raise ParameterError(
            f"cross_entropy_logits: target {target} out of range for {logits.data.shape[0]} logits"
        )
    m = logits.data.max()
    lse = m + np.log(np.exp(logits.data - m).sum())
    out = _result(np.asarray(lse - logits.data[target]), logits.requires_grad)
    if tape is not None and out.requires_grad:

        def backward():
            if out.grad is None:
                return
            p = np.exp(logits.data - lse)
            p[target] -= 1.0
            _accum(logits, float(out.grad) * p)

        tape.record(backward)
    return out
