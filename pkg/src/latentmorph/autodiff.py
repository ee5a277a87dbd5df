"""Small reverse-mode automatic differentiation over float64 numpy arrays.

Operations executed while a :class:`Tape` is active, and that touch at least one
tracked tensor, are recorded in creation order.  Creation order is already a
topological order, so :func:`backward` simply walks the tape in reverse.

Example::

    with Tape() as tape:
        x = tape.watch(np.array([1.0, 2.0]))
        y = (x * x).sum()
    grads = backward(tape, y)
    grads[x]            # array([2., 4.])
"""

import threading

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ConfigError, DimensionError, DomainError, NumericError

_local = threading.local()


def _tape_stack():
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Node:
    __slots__ = ("op", "inputs", "output", "forward", "backward")

    def __init__(self, op, inputs, output, forward, backward):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.forward = forward
        self.backward = backward


class Tape:
    """Ordered record of primitive operations.

    A tape is single-writer: use one per thread.  Leaves are registered with
    :meth:`watch`; everything derived from them is recorded.
    """

    def __init__(self):
        self.nodes = []
        self.leaves = []

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

    def watch(self, value):
        t = Tensor(value)
        t.tracked = True
        self.leaves.append(t)
        return t

    def replay(self):
        """Re-run every recorded forward and check outputs are bit-identical."""
        for i, node in enumerate(self.nodes):
            out = node.forward(*(t.data for t in node.inputs))
            if not np.array_equal(out, node.output.data):
                raise NumericError(f"tape replay diverged at node {i} ({node.op})")
        return True


class Tensor:
    """Dense float64 array that may be tracked on the active tape."""

    __slots__ = ("data", "tracked", "__weakref__")
    __array_priority__ = 1000

    def __init__(self, data):
        self.data = np.asarray(data, dtype=np.float64)
        self.tracked = False

    def __repr__(self):
        return f"Tensor(shape={self.shape}, tracked={self.tracked})"

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
    def T(self):
        return transpose(self)

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def detach(x):
    return Tensor(as_tensor(x).data)


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _apply(op, inputs, forward, backward_fn):
    """Run ``forward`` on input arrays; record on the tape when needed.

    ``backward_fn(g, out, *arrays)`` returns one gradient (or None) per input.
    """
    arrays = [t.data for t in inputs]
    out = Tensor(forward(*arrays))
    tape = active_tape()
    if tape is not None and any(t.tracked for t in inputs):
        out.tracked = True

        def bw(g, _out=out.data, _arrays=arrays):
            return backward_fn(g, _out, *_arrays)

        tape.nodes.append(Node(op, tuple(inputs), out, forward, bw))
    return out


# -- elementwise ------------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _apply(
        "add",
        (a, b),
        np.add,
        lambda g, out, x, y: (_unbroadcast(g, x.shape), _unbroadcast(g, y.shape)),
    )


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _apply(
        "sub",
        (a, b),
        np.subtract,
        lambda g, out, x, y: (_unbroadcast(g, x.shape), _unbroadcast(-g, y.shape)),
    )


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _apply(
        "mul",
        (a, b),
        np.multiply,
        lambda g, out, x, y: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)),
    )


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if np.any(b.data == 0):
        raise DomainError("division by zero")
    return _apply(
        "div",
        (a, b),
        np.divide,
        lambda g, out, x, y: (
            _unbroadcast(g / y, x.shape),
            _unbroadcast(-g * out / y, y.shape),
        ),
    )


def neg(a):
    return _apply("neg", (as_tensor(a),), np.negative, lambda g, out, x: (-g,))


def power(a, p):
    p = float(p)
    return _apply(
        "pow",
        (as_tensor(a),),
        lambda x: np.power(x, p),
        lambda g, out, x: (g * p * np.power(x, p - 1.0),),
    )


def square(a):
    return _apply("square", (as_tensor(a),), np.square, lambda g, out, x: (2.0 * g * x,))


def exp(a):
    return _apply("exp", (as_tensor(a),), np.exp, lambda g, out, x: (g * out,))


def log(a):
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log of non-positive value")
    return _apply("log", (a,), np.log, lambda g, out, x: (g / x,))


def sqrt(a):
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("sqrt gradient undefined at non-positive value")
    return _apply("sqrt", (a,), np.sqrt, lambda g, out, x: (0.5 * g / out,))


def tanh(a):
    return _apply("tanh", (as_tensor(a),), np.tanh, lambda g, out, x: (g * (1.0 - out * out),))


def relu(a):
    return _apply(
        "relu",
        (as_tensor(a),),
        lambda x: np.maximum(x, 0.0),
        lambda g, out, x: (g * (x > 0),),
    )


# -- shape / reduction ------------------------------------------------------


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)

    def bw(g, out, x):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _apply("sum", (a,), lambda x: np.sum(x, axis=axis, keepdims=keepdims), bw)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return tsum(a, axis=axis, keepdims=keepdims) / float(n)


def reshape(a, shape):
    a = as_tensor(a)
    return _apply(
        "reshape",
        (a,),
        lambda x: np.reshape(x, shape),
        lambda g, out, x: (np.reshape(g, x.shape),),
    )


def transpose(a):
    return _apply("transpose", (as_tensor(a),), np.transpose, lambda g, out, x: (g.T,))


def getitem(a, idx):
    a = as_tensor(a)

    def bw(g, out, x):
        full = np.zeros_like(x)
        np.add.at(full, idx, g)
        return (full,)

    return _apply("getitem", (a,), lambda x: x[idx], bw)


def stack(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]

    def bw(g, out, *xs):
        return tuple(np.take(g, i, axis=axis) for i in range(len(xs)))

    return _apply("stack", tuple(tensors), lambda *xs: np.stack(xs, axis=axis), bw)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes {a.shape} and {b.shape} do not agree")
    return _apply(
        "matmul",
        (a, b),
        np.matmul,
        lambda g, out, x, y: (g @ y.T, x.T @ g),
    )


def sqdist(a, b):
    """Pairwise squared Euclidean distances between rows of ``a`` and ``b``.

    Differences are formed explicitly, so identical rows give exactly zero.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DimensionError(f"sqdist shapes {a.shape} and {b.shape} do not agree")

    def bw(g, out, x, y):
        gx = 2.0 * (x * g.sum(axis=1, keepdims=True) - g @ y)
        gy = 2.0 * (y * g.sum(axis=0)[:, None] - g.T @ x)
        return gx, gy

    return _apply("sqdist", (a, b), lambda x, y: cdist(x, y, "sqeuclidean"), bw)


def logsumexp(a, axis=-1, mask=None):
    """Max-shifted log-sum-exp along ``axis``.

    ``mask`` is a boolean array of the same shape; only True entries enter the
    sum.  Every slice must keep at least one entry.
    """
    a = as_tensor(a)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != a.shape:
            raise DimensionError(f"mask shape {mask.shape} does not match {a.shape}")
        if not np.all(mask.any(axis=axis)):
            raise NumericError("logsumexp over an empty masked slice")

    def fwd(x):
        xm = x if mask is None else np.where(mask, x, -np.inf)
        m = np.max(xm, axis=axis, keepdims=True)
        s = np.sum(np.exp(xm - m), axis=axis, keepdims=True)
        return np.squeeze(m + np.log(s), axis=axis)

    def bw(g, out, x):
        xm = x if mask is None else np.where(mask, x, -np.inf)
        w = np.exp(xm - np.expand_dims(out, axis))
        return (np.expand_dims(g, axis) * w,)

    return _apply("logsumexp", (a,), fwd, bw)


# -- layers ------------------------------------------------------------------

ACTIVATIONS = {"relu": relu, "tanh": tanh}


def linear(weight, bias, x):
    """Affine map ``x @ weight + bias`` for a batch ``x`` of shape [batch, in]."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise DimensionError(
            f"linear: input shape {x.shape} incompatible with weight shape {weight.shape}"
        )
    if bias.shape != (weight.shape[1],):
        raise DimensionError(
            f"linear: bias shape {bias.shape} incompatible with weight shape {weight.shape}"
        )
    return add(matmul(x, weight), bias)


def activation(kind, x):
    try:
        fn = ACTIVATIONS[kind]
    except KeyError:
        raise ConfigError(f"unknown activation {kind!r}; expected one of {sorted(ACTIVATIONS)}")
    return fn(x)


# -- differentiation ----------------------------------------------------------


def backward(tape, output, seed=None):
    """Reverse-accumulate gradients of ``output`` into every leaf on ``tape``.

    Returns a dict mapping each watched leaf tensor to its gradient array.
    Leaves the output does not depend on get zeros.
    """
    if seed is None:
        if output.size != 1:
            raise DimensionError(
                f"seed required for non-scalar output of shape {output.shape}"
            )
        seed = np.ones_like(output.data)
    seed = np.asarray(seed, dtype=np.float64)
    if seed.shape != output.shape:
        raise DimensionError(f"seed shape {seed.shape} does not match output shape {output.shape}")
    if not tape.nodes and not any(output is leaf for leaf in tape.leaves):
        raise DimensionError("backward on an empty tape")

    grads = {id(output): seed}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not inp.tracked:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    result = {}
    for leaf in tape.leaves:
        g = grads.get(id(leaf))
        result[leaf] = np.zeros_like(leaf.data) if g is None else np.asarray(g)
    return result


def _watch_tree(tape, tree):
    if isinstance(tree, (list, tuple)):
        return type(tree)(_watch_tree(tape, t) for t in tree)
    return tape.watch(tree)


def _flatten(tree):
    if isinstance(tree, (list, tuple)):
        out = []
        for t in tree:
            out.extend(_flatten(t))
        return out
    return [tree]


def _unflatten_like(tree, flat):
    it = iter(flat)

    def rebuild(t):
        if isinstance(t, (list, tuple)):
            return type(t)(rebuild(s) for s in t)
        return next(it)

    return rebuild(tree)


def value_and_grad(fn, *args):
    """Evaluate scalar ``fn(*args)`` and its gradient w.r.t. every array in ``args``.

    ``args`` may be arrays or nested lists/tuples of arrays; gradients come
    back with the same structure.
    """
    with Tape() as tape:
        watched = [_watch_tree(tape, a) for a in args]
        out = fn(*watched)
    grads = backward(tape, out)
    structured = [
        _unflatten_like(a, [grads[leaf] for leaf in _flatten(w)]) for a, w in zip(args, watched)
    ]
    return float(out.data), structured


def finite_diff(scalar_fn, point, h=1e-5):
    """Central-difference gradient of ``scalar_fn`` at ``point``."""
    if not h > 0:
        raise DomainError(f"finite-difference step must be positive, got {h}")
    x = np.array(point, dtype=np.float64)
    grad = np.empty_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(scalar_fn(x))
        flat[i] = orig - h
        fm = float(scalar_fn(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite function value at coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def rel_error(a, b, floor=1e-12):
    """Norm-wise relative error between two gradient arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / scale)
