"""Dense tensors with reverse-mode differentiation.

A Tensor wraps a numpy array (float32 by default; float64 graphs are allowed
and are used by the finite-difference checks). A Tape records every
differentiable op executed while it is the active context, in execution
order, which is already a topological order. backward() walks the records
once, in reverse.

Gradient buffers are plain numpy arrays. Each op contributes a list of
(input_tensor, vjp) pulls; a vjp maps the output gradient to an input
gradient and must return an array the engine may mutate in place (so vjps
that would return a view must copy).
"""

import threading

import numpy as np

from ..errors import ContractError, DimensionError, NumericError

_LOCAL = threading.local()


def _tape_stack():
    stack = getattr(_LOCAL, "stack", None)
    if stack is None:
        stack = []
        _LOCAL.stack = stack
    return stack


def active_tape():
    """The innermost open Tape on this thread, or None."""
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of executed differentiable operations.

    One tape is confined to one thread: enter it with `with Tape() as t:`,
    run the forward pass inside, then call backward(loss, t).
    """

    __slots__ = ("_records",)

    def __init__(self):
        self._records = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _tape_stack().pop()
        return False

    def __len__(self):
        return len(self._records)


class Tensor:
    """Shape + row-major float data + optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False, dtype=np.float32):
        arr = np.asarray(data)
        if arr.dtype != np.float32 and arr.dtype != np.float64:
            arr = arr.astype(dtype)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def _check_finite(arr, op_name):
    # float64 sum cannot overflow on float32 inputs, and any NaN/Inf in the
    # input poisons the sum, so this is a one-pass, allocation-free probe.
    if not np.isfinite(np.sum(arr, dtype=np.float64)):
        raise NumericError(f"{op_name} produced non-finite values")


def _same_dtype(op_name, *tensors):
    dt = tensors[0].data.dtype
    for t in tensors[1:]:
        if t.data.dtype != dt:
            raise ContractError(f"{op_name}: mixed dtypes {dt} and {t.data.dtype}")
    return dt


def make_result(op_name, data, pulls, check_finite=True):
    """Wrap op output, record on the active tape if any input needs grad.

    pulls: list of (Tensor, vjp) pairs. backward() skips pulls whose tensor
    does not require grad, so ops may list every input unconditionally.
    """
    if check_finite:
        _check_finite(data, op_name)
    needs = any(t.requires_grad for t, _ in pulls)
    out = Tensor(data, requires_grad=needs, dtype=data.dtype)
    if needs:
        tape = active_tape()
        if tape is not None:
            tape._records.append((out, pulls))
    return out


def backward(loss, tape):
    """Populate .grad on every requires_grad tensor reachable from loss.

    Gradients accumulate additively across fan-out within this call and
    overwrite any .grad left from a previous call.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")
    accum = {id(loss): np.ones_like(loss.data)}
    holders = {id(loss): loss}
    if loss.requires_grad:
        loss.grad = accum[id(loss)]
    for out, pulls in reversed(tape._records):
        g = accum.pop(id(out), None)
        holders.pop(id(out), None)
        if g is None:
            continue  # this record does not feed the loss
        if out.requires_grad:
            out.grad = g
        for t, vjp in pulls:
            if not t.requires_grad:
                continue  # dead branch: skip the (possibly expensive) vjp
            # asarray: 0-d arithmetic inside a vjp yields an immutable numpy
            # scalar, and += on one would silently rebind instead of updating
            # the stored gradient.
            contrib = np.asarray(vjp(g))
            prev = accum.get(id(t))
            if prev is None:
                accum[id(t)] = contrib
                holders[id(t)] = t
            else:
                prev += contrib
    for tid, t in holders.items():
        if t.requires_grad:
            t.grad = accum[tid]


def _as_tensor(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


# ---------------------------------------------------------------------------
# elementwise and shape ops


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two same-shape tensors."""
    _same_dtype("add", a, b)
    if a.shape != b.shape:
        raise DimensionError(f"add: shapes differ {a.shape} vs {b.shape}")
    data = a.data + b.data
    return make_result(
        "add",
        data,
        [(a, lambda g: g.copy()), (b, lambda g: g.copy())],
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    """a - b, elementwise."""
    return add(a, scale(b, -1.0))


def mul(a: Tensor, b) -> Tensor:
    """Elementwise product.

    b may be a Tensor of identical shape, or a constant array/scalar that
    broadcasts up to a's shape (the constant carries no gradient).
    """
    if isinstance(b, Tensor):
        _same_dtype("mul", a, b)
        if a.shape != b.shape:
            raise DimensionError(f"mul: shapes differ {a.shape} vs {b.shape}")
        ad, bd = a.data, b.data
        with np.errstate(over="ignore"):  # overflow surfaces as NumericError instead
            data = ad * bd
        return make_result(
            "mul",
            data,
            [(a, lambda g: g * bd), (b, lambda g: g * ad)],
        )
    const = np.asarray(b, dtype=a.data.dtype)
    data = a.data * const
    if data.shape != a.shape:
        raise DimensionError("mul: constant operand must broadcast up to the tensor shape")
    return make_result("mul", data, [(a, lambda g: g * const)])


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar."""
    c = a.data.dtype.type(c)
    return make_result("scale", a.data * c, [(a, lambda g: g * c)])


def add_const(a: Tensor, c) -> Tensor:
    """Add a gradient-free constant (scalar or broadcast-up array)."""
    const = np.asarray(c, dtype=a.data.dtype)
    data = a.data + const
    if data.shape != a.shape:
        raise DimensionError("add_const: constant must broadcast up to the tensor shape")
    return make_result("add_const", data, [(a, lambda g: g.copy())])


def relu(a: Tensor) -> Tensor:
    """max(x, 0), elementwise."""
    data = np.maximum(a.data, 0)
    return make_result("relu", data, [(a, lambda g: g * (data > 0))])


def exp(a: Tensor) -> Tensor:
    """Elementwise exponential (scalars are 0-d tensors)."""
    with np.errstate(over="ignore"):
        data = np.exp(a.data)
    return make_result("exp", data, [(a, lambda g: g * data)])


def log(a: Tensor) -> Tensor:
    """Elementwise natural log. Non-positive input surfaces as NumericError."""
    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.log(a.data)
    ad = a.data
    return make_result("log", data, [(a, lambda g: g / ad)])


def sum_axis(a: Tensor, axis: int, keepdims=False) -> Tensor:
    """Sum over one axis, accumulated at float64."""
    data = a.data.sum(axis=axis, keepdims=keepdims, dtype=np.float64).astype(a.data.dtype)
    ashape = a.shape

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, ashape).copy()

    return make_result("sum_axis", data, [(a, vjp)])


def mean(a: Tensor, axis: int, keepdims=False) -> Tensor:
    """Mean over one axis, accumulated at float64."""
    n = a.shape[axis]
    return scale(sum_axis(a, axis, keepdims=keepdims), 1.0 / n)


def mean_all(a: Tensor) -> Tensor:
    """Mean over every element, as a 0-d tensor."""
    n = a.data.size
    data = np.asarray(a.data.sum(dtype=np.float64) / n).astype(a.data.dtype)
    ashape, adt = a.shape, a.data.dtype

    def vjp(g):
        return np.full(ashape, g.reshape(()) / n, dtype=adt)

    return make_result("mean_all", data, [(a, vjp)])


def reshape(a: Tensor, shape) -> Tensor:
    """View-compatible reshape (size must be preserved)."""
    data = a.data.reshape(shape)
    ashape = a.shape
    return make_result("reshape", data, [(a, lambda g: g.reshape(ashape).copy())], check_finite=False)


def transpose(a: Tensor, axes) -> Tensor:
    """Permute axes. The result is materialized contiguous."""
    axes = tuple(axes)
    data = np.ascontiguousarray(a.data.transpose(axes))
    inv = tuple(np.argsort(axes))

    def vjp(g):
        back = np.ascontiguousarray(g.transpose(inv))
        return back.copy() if back is g else back  # identity permutation aliases

    return make_result("transpose", data, [(a, vjp)], check_finite=False)


def row(a: Tensor, i: int) -> Tensor:
    """Select row i of a 2-d tensor as a 1-d tensor."""
    if a.data.ndim != 2:
        raise DimensionError(f"row: need a 2-d tensor, got shape {a.shape}")
    data = a.data[i].copy()
    ashape, adt = a.shape, a.data.dtype

    def vjp(g):
        z = np.zeros(ashape, dtype=adt)
        z[i] = g
        return z

    return make_result("row", data, [(a, vjp)], check_finite=False)


def take_per_row(a: Tensor, idx) -> Tensor:
    """out[n] = a[n, idx[n]] for a 2-d tensor and integer index vector."""
    idx = np.asarray(idx)
    if a.data.ndim != 2 or idx.ndim != 1 or idx.shape[0] != a.shape[0]:
        raise DimensionError("take_per_row: need [N,D] tensor and length-N index vector")
    rows = np.arange(a.shape[0])
    data = a.data[rows, idx].copy()
    ashape, adt = a.shape, a.data.dtype

    def vjp(g):
        z = np.zeros(ashape, dtype=adt)
        z[rows, idx] = g
        return z

    return make_result("take_per_row", data, [(a, vjp)], check_finite=False)


def concat(a: Tensor, b: Tensor) -> Tensor:
    """Join two tensors along the last axis.

    1-d: [D1] + [D2] -> [D1+D2]. 2-d: [N,D1] + [N,D2] -> [N,D1+D2] with
    matching leading dimension. The gradient splits at the seam.
    """
    _same_dtype("concat", a, b)
    if a.data.ndim != b.data.ndim or a.data.ndim not in (1, 2):
        raise DimensionError(f"concat: need two 1-d or two 2-d tensors, got {a.shape} and {b.shape}")
    if a.data.ndim == 2 and a.shape[0] != b.shape[0]:
        raise DimensionError(f"concat: leading dimensions differ {a.shape[0]} vs {b.shape[0]}")
    d1 = a.shape[-1]
    data = np.concatenate([a.data, b.data], axis=-1)
    return make_result(
        "concat",
        data,
        [(a, lambda g: g[..., :d1].copy()), (b, lambda g: g[..., d1:].copy())],
        check_finite=False,
    )


def embedding(weight: Tensor, ids) -> Tensor:
    """Row lookup: weight [V,D], integer ids of any shape -> ids.shape + (D,).

    Gradient scatter-adds into the weight rows, so repeated ids accumulate.
    """
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise ContractError("embedding: ids must be integers")
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise ContractError("embedding: id out of range")
    data = weight.data[ids]
    wshape, wdt = weight.shape, weight.data.dtype

    def vjp(g):
        z = np.zeros(wshape, dtype=wdt)
        np.add.at(z, ids, g)
        return z

    return make_result("embedding", data, [(weight, vjp)], check_finite=False)
