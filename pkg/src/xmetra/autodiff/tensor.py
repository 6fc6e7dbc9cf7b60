"""Define-by-run reverse-mode differentiation over dense float64 arrays.

A :class:`Tape` is opened with ``with Tape() as tape:``; every primitive
evaluated while it is active and touching a tracked tensor is appended to
``tape.nodes`` together with its local gradient rule.  Outside a tape the
primitives simply compute values, which is how evaluation-mode forwards
avoid any bookkeeping.
"""

import itertools
import threading

import numpy as np

from xmetra.exceptions import ContractError, ShapeError, TapeUsageError

DTYPE = np.float64

_local = threading.local()
_tape_ids = itertools.count(1)


def _tape_stack():
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape():
    """Return the innermost active tape of this thread, or ``None``."""
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """Dense array node.

    Leaves created with ``requires_grad=True`` receive gradients; tensors
    produced by primitives on a tape carry that tape's ``tape_id``.  A
    tensor that is neither (a detached constant) is never written to by
    backward.
    """

    __slots__ = ("values", "grad", "requires_grad", "tape_id", "name", "_tape")
    __array_priority__ = 100

    def __init__(self, values, requires_grad=False, name=None):
        self.values = np.array(values, dtype=DTYPE)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.tape_id = None
        self.name = name
        self._tape = None

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    @property
    def size(self):
        return self.values.size

    @property
    def tracked(self):
        return self.requires_grad or self.tape_id is not None

    def item(self):
        return float(self.values.reshape(-1)[0]) if self.values.size == 1 else self.values

    def numpy(self):
        return self.values

    def detach(self, requires_grad=False):
        """Copy of the values with no link to any tape."""
        return Tensor(self.values.copy(), requires_grad=requires_grad, name=self.name)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("op", "inputs", "output", "rule")

    def __init__(self, op, inputs, output, rule):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.rule = rule


class Tape:
    """Ordered record of primitive evaluations.

    Nodes are appended in evaluation order, so inputs always precede the
    node that consumes them.  A tape supports exactly one backward pass.
    """

    def __init__(self):
        self.id = next(_tape_ids)
        self.nodes = []
        self._consumed = False

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def backward(self, loss, wrt=None):
        """Propagate d(loss) back to every reachable leaf.

        Leaves get their ``.grad`` overwritten.  When ``wrt`` (a mapping of
        names to leaf tensors) is given, a ``{name: ndarray}`` map is
        returned, with zeros for leaves the loss does not depend on.
        """
        if self._consumed:
            raise TapeUsageError(f"tape {self.id} was already differentiated; re-record the forward pass")
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss.tape_id != self.id:
            raise TapeUsageError("loss was not recorded on this tape")
        self._consumed = True

        grads = {id(loss): np.ones_like(loss.values)}
        leaves = {}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            local = node.rule(g)
            for inp, gi in zip(node.inputs, local):
                if gi is None or not inp.tracked:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                if inp.tape_id is None:
                    leaves[key] = inp
        for key, leaf in leaves.items():
            leaf.grad = grads[key]
        self.nodes = []

        if wrt is None:
            return {leaf.name if leaf.name is not None else key: leaf.grad for key, leaf in leaves.items()}
        out = {}
        for name, leaf in wrt.items():
            if id(leaf) in leaves:
                out[name] = leaf.grad
            else:
                leaf.grad = np.zeros_like(leaf.values)
                out[name] = leaf.grad
        return out


def backward(loss, wrt=None):
    """Differentiate ``loss`` on the tape that recorded it (see :meth:`Tape.backward`)."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        raise TapeUsageError("loss is not attached to a live tape")
    return tape.backward(loss, wrt)


def value_and_grad(fn, params):
    """Evaluate ``fn(params)`` on a fresh tape; return ``(loss_value, grads)``."""
    with Tape() as tape:
        loss = fn(params)
    if loss.tape_id is None:
        # loss does not depend on any parameter
        return float(loss.values), {k: np.zeros_like(p.values) for k, p in params.items()}
    grads = tape.backward(loss, wrt=params)
    return float(loss.values), grads


def record(op, inputs, values, rule):
    """Wrap ``values`` as the output of primitive ``op``.

    ``rule(g)`` must return one gradient (or ``None``) per input.  Nothing
    is recorded when no tape is active or no input is tracked.
    """
    out = Tensor.__new__(Tensor)
    out.values = values
    out.grad = None
    out.requires_grad = False
    out.tape_id = None
    out.name = None
    out._tape = None
    tape = active_tape()
    if tape is not None and any(t.tracked for t in inputs):
        out.tape_id = tape.id
        out._tape = tape
        tape.nodes.append(_Node(op, tuple(inputs), out, rule))
    return out


# ---------------------------------------------------------------- primitives


def _sum_to(g, shape):
    """Reduce a broadcast gradient back to a trailing-aligned ``shape``."""
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead))) if lead else g


def _check_broadcast(op, a, b):
    if a.shape == b.shape:
        return
    if b.ndim <= a.ndim and a.shape[a.ndim - b.ndim:] == b.shape:
        return
    raise ShapeError(f"{op}: cannot broadcast {b.shape} over leading dims of {a.shape}")


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape
    return record("add", (a, b), a.values + b.values, lambda g: (g, _sum_to(g, sb) if sb != sa else g))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    sb = b.shape
    return record("sub", (a, b), a.values - b.values, lambda g: (g, -_sum_to(g, sb)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    av, bv, sb = a.values, b.values, b.shape

    def rule(g):
        ga = g * bv if a.tracked else None
        gb = _sum_to(g * av, sb) if b.tracked else None
        return ga, gb

    return record("mul", (a, b), av * bv, rule)


def matmul(a, b):
    """``a[..., m, k] @ b[k, n]`` or batched ``a[..., m, k] @ b[..., k, n]``."""
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.values, b.values
    ok = av.ndim >= 2 and bv.ndim >= 2 and av.shape[-1] == bv.shape[-2]
    if ok and bv.ndim > 2:
        ok = av.shape[:-2] == bv.shape[:-2]
    if not ok:
        raise ShapeError(f"matmul: incompatible shapes {av.shape} and {bv.shape}")

    def rule(g):
        ga = g @ np.swapaxes(bv, -1, -2) if a.tracked else None
        gb = None
        if b.tracked:
            if bv.ndim == 2:
                gb = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(av, -1, -2) @ g
        return ga, gb

    return record("matmul", (a, b), av @ bv, rule)


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.values)
    return record("tanh", (x,), y, lambda g: (g * (1.0 - y * y),))


def relu(x):
    x = as_tensor(x)
    mask = x.values > 0
    return record("relu", (x,), np.where(mask, x.values, 0.0), lambda g: (g * mask,))


def _lse(v):
    m = np.max(v, axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return (m + np.log(np.sum(np.exp(v - m), axis=-1, keepdims=True)))


def logsumexp(x):
    """Log-sum-exp over the last axis."""
    x = as_tensor(x)
    if x.ndim == 0:
        raise ShapeError("logsumexp: needs at least one axis")
    lse = _lse(x.values)
    soft = np.exp(x.values - lse)
    return record("logsumexp", (x,), lse[..., 0], lambda g: (g[..., None] * soft,))


def log_softmax(x):
    """Log-softmax over the last axis."""
    x = as_tensor(x)
    if x.ndim == 0:
        raise ShapeError("log_softmax: needs at least one axis")
    y = x.values - _lse(x.values)
    soft = np.exp(y)
    return record("log_softmax", (x,), y, lambda g: (g - soft * g.sum(axis=-1, keepdims=True),))


def nll_pick(logp, targets):
    """``-logp[..., targets]``: the per-position negative log-likelihood."""
    logp = as_tensor(logp)
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != logp.shape[:-1]:
        raise ShapeError(f"nll_pick: targets {targets.shape} do not match logits {logp.shape}")
    k = logp.shape[-1]
    if targets.size and (targets.min() < 0 or targets.max() >= k):
        raise ShapeError(f"nll_pick: target outside [0, {k})")
    idx = targets[..., None]
    picked = -np.take_along_axis(logp.values, idx, axis=-1)[..., 0]

    def rule(g):
        out = np.zeros_like(logp.values)
        np.put_along_axis(out, idx, -g[..., None], axis=-1)
        return (out,)

    return record("nll_pick", (logp,), picked, rule)


def sum(x, axis=None):  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)
    shape = x.shape
    if axis is None:
        return record("sum", (x,), np.asarray(x.values.sum()), lambda g: (np.broadcast_to(g, shape).copy(),))
    ax = axis % x.ndim
    return record("sum", (x,), x.values.sum(axis=ax),
                  lambda g: (np.broadcast_to(np.expand_dims(g, ax), shape).copy(),))


def mean(x, axis=None):
    x = as_tensor(x)
    n = x.size if axis is None else x.shape[axis]
    return mul(sum(x, axis), 1.0 / n)


def concat(tensors):
    """Concatenate along the last axis."""
    tensors = [as_tensor(t) for t in tensors]
    lead = tensors[0].shape[:-1]
    for t in tensors[1:]:
        if t.shape[:-1] != lead:
            raise ShapeError(f"concat: leading shapes differ: {[t.shape for t in tensors]}")
    bounds = np.cumsum([0] + [t.shape[-1] for t in tensors])
    values = np.concatenate([t.values for t in tensors], axis=-1)

    def rule(g):
        return tuple(g[..., bounds[i]:bounds[i + 1]] for i in range(len(tensors)))

    return record("concat", tuple(tensors), values, rule)


def embedding(weight, ids):
    """Row lookup ``weight[ids]`` for an integer array ``ids``."""
    weight = as_tensor(weight)
    ids = np.asarray(ids, dtype=np.int64)
    if weight.ndim != 2:
        raise ShapeError(f"embedding: weight must be 2-D, got {weight.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise ShapeError(f"embedding: ids outside [0, {weight.shape[0]})")

    def rule(g):
        out = np.zeros_like(weight.values)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, weight.shape[1]))
        return (out,)

    return record("embedding", (weight,), weight.values[ids], rule)


def reshape(x, shape):
    x = as_tensor(x)
    old = x.shape
    try:
        values = x.values.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: {old} -> {shape}: {exc}") from None
    return record("reshape", (x,), values, lambda g: (g.reshape(old),))


def slice_axis(x, start, stop, axis):
    x = as_tensor(x)
    ax = axis % x.ndim
    index = [slice(None)] * x.ndim
    index[ax] = slice(start, stop)
    index = tuple(index)

    def rule(g):
        out = np.zeros_like(x.values)
        out[index] = g
        return (out,)

    return record("slice", (x,), x.values[index], rule)
