"""
Reverse-mode automatic differentiation over dense numpy tensors.

Every primitive computes its forward value eagerly and, when at least one input lives on a
Tape, appends a record holding the input node ids and the local gradient rule. backward()
walks the records in exact reverse recording order.
"""

from dataclasses import dataclass, field

import numpy as np

from ..exceptions import DimensionMismatchError, DomainError, NonScalarLossError


@dataclass
class Record:
    output_id: int
    input_ids: list
    rule: object  # callable: upstream gradient -> tuple of input gradients (None = no gradient)


@dataclass
class Tape:
    """Ordered log of differentiable operations for one forward/backward pass"""

    records: list = field(default_factory=list)
    leaves: dict = field(default_factory=dict)  # node_id -> (name, shape)
    _next_id: int = 0

    def new_id(self):
        node_id = self._next_id
        self._next_id += 1
        return node_id

    def watch(self, data, name=None):
        """Register a leaf tensor (typically a parameter) whose gradient backward() reports"""
        tensor = Tensor(data)
        tensor.tape = self
        tensor.node_id = self.new_id()
        tensor.name = name if name is not None else f"leaf{tensor.node_id}"
        self.leaves[tensor.node_id] = (tensor.name, tensor.data.shape)
        return tensor

    def record(self, output_id, input_ids, rule):
        self.records.append(Record(output_id, input_ids, rule))

    def __len__(self):
        return len(self.records)


class Tensor:
    """Dense float64 array, optionally attached to a Tape"""

    __slots__ = ("data", "tape", "node_id", "name")
    __array_ufunc__ = None  # ndarray (op) Tensor defers to the Tensor operators

    def __init__(self, data, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.tape = None
        self.node_id = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def requires_grad(self):
        return self.node_id is not None

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def numpy(self):
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, node_id={self.node_id})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __neg__(self):
        return neg(self)

    @property
    def T(self):
        return transpose(self)


def as_tensor(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def _tape_of(tensors):
    tape = None
    for t in tensors:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise ValueError("Operands belong to different tapes")
            tape = t.tape
    return tape


def _result(data, inputs, rule):
    out = Tensor(data)
    tape = _tape_of(inputs)
    if tape is not None and any(t.node_id is not None for t in inputs):
        out.tape = tape
        out.node_id = tape.new_id()
        tape.record(out.node_id, [t.node_id for t in inputs], rule)
    return out


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to the operand's shape"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as e:
        raise DimensionMismatchError(f"Shapes {a.shape} and {b.shape} are not compatible") from e


# --- arithmetic -------------------------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    return _result(a.data + b.data, [a, b],
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    return _result(a.data - b.data, [a, b],
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def neg(a):
    a = as_tensor(a)
    return _result(-a.data, [a], lambda g: (-g,))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    return _result(a.data * b.data, [a, b],
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    if np.any(b.data == 0):
        raise DomainError("Division by zero")
    return _result(a.data / b.data, [a, b],
                   lambda g: (_unbroadcast(g / b.data, a.shape),
                              _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionMismatchError(f"Cannot matmul shapes {a.shape} and {b.shape}")
    return _result(a.data @ b.data, [a, b], lambda g: (g @ b.data.T, a.data.T @ g))


# --- shape ------------------------------------------------------------------------------------

def transpose(a):
    a = as_tensor(a)
    if a.ndim != 2:
        raise DimensionMismatchError(f"transpose expects a matrix, got shape {a.shape}")
    return _result(a.data.T.copy(), [a], lambda g: (g.T,))


def reshape(a, shape):
    a = as_tensor(a)
    try:
        data = a.data.reshape(shape)
    except ValueError as e:
        raise DimensionMismatchError(f"Cannot reshape {a.shape} into {shape}") from e
    return _result(data, [a], lambda g: (g.reshape(a.shape),))


def gather(a, index):
    """
    Select entries of the flattened tensor.

    The output has the shape of `index`; repeated indices accumulate gradient.
    """
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    flat = a.data.reshape(-1)
    if index.size and (index.min() < 0 or index.max() >= flat.size):
        raise DimensionMismatchError(f"gather index out of range for a tensor of size {flat.size}")

    def rule(g):
        grad = np.zeros(flat.size)
        np.add.at(grad, index.reshape(-1), g.reshape(-1))
        return (grad.reshape(a.shape),)

    return _result(flat[index], [a], rule)


def concat(tensors):
    """Concatenate the flattened tensors into one vector"""
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.size for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def rule(g):
        return tuple(g[offsets[k]:offsets[k + 1]].reshape(t.shape) for k, t in enumerate(tensors))

    return _result(np.concatenate([t.data.reshape(-1) for t in tensors]), tensors, rule)


# --- reductions -------------------------------------------------------------------------------

def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def rule(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(data, [a], rule)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    count = a.size if axis is None else a.shape[axis]
    return sum(a, axis=axis, keepdims=keepdims) / float(count)


# --- elementwise ------------------------------------------------------------------------------

def log(a):
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError(f"log of non-positive value (min {a.data.min():.3e})")
    return _result(np.log(a.data), [a], lambda g: (g / a.data,))


def exp(a):
    a = as_tensor(a)
    y = np.exp(a.data)
    return _result(y, [a], lambda g: (g * y,))


def tanh(a):
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _result(y, [a], lambda g: (g * (1.0 - y * y),))


def sigmoid(a):
    a = as_tensor(a)
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _result(y, [a], lambda g: (g * y * (1.0 - y),))


def abs(a):  # noqa: A001 - mirrors numpy naming
    # subgradient 0 at the origin
    a = as_tensor(a)
    return _result(np.abs(a.data), [a], lambda g: (g * np.sign(a.data),))


def sqrt(a):
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise DomainError("square root of a negative value")
    y = np.sqrt(a.data)
    return _result(y, [a], lambda g: (np.where(y > 0, g / (2.0 * np.where(y > 0, y, 1.0)), 0.0),))


def softmax(a):
    """Softmax over all entries of the tensor (flat index set), keeping the input shape"""
    a = as_tensor(a)
    shifted = np.exp(a.data - a.data.max())
    y = shifted / shifted.sum()
    return _result(y, [a], lambda g: (y * (g - np.sum(g * y)),))


def elementwise_even(f):
    """Wrap f into the even map x -> f(|x|)"""
    return lambda x: f(abs(x))


def elementwise_odd(g):
    """Wrap g into the odd map x -> x * g(|x|)"""
    return lambda x: mul(x, g(abs(x)))


def straight_through(hard, soft):
    """Forward value `hard`, gradient routed unchanged to `soft`"""
    soft = as_tensor(soft)
    hard = np.asarray(hard, dtype=np.float64)
    if hard.shape != soft.shape:
        raise DimensionMismatchError(f"hard shape {hard.shape} differs from soft shape {soft.shape}")
    return _result(hard.copy(), [soft], lambda g: (g,))


def stop_gradient(a):
    return Tensor(as_tensor(a).data.copy())


# --- backward ---------------------------------------------------------------------------------

def backward(tape, loss):
    """
    Reverse pass from a scalar loss.

    Args:
        tape (Tape): the tape the loss was recorded on
        loss (Tensor): scalar output node

    Returns:
        dict: leaf name -> gradient array (zeros for leaves the loss does not depend on)
    """
    if loss.size != 1:
        raise NonScalarLossError(f"Loss must be scalar, got shape {loss.shape}")
    grads = {}
    if loss.node_id is not None:
        if loss.tape is not tape:
            raise ValueError("Loss was not recorded on this tape")
        grads[loss.node_id] = np.ones_like(loss.data)
        for record in reversed(tape.records):
            upstream = grads.get(record.output_id)
            if upstream is None:
                continue
            del grads[record.output_id]
            for node_id, grad in zip(record.input_ids, record.rule(upstream)):
                if node_id is None or grad is None:
                    continue
                grads[node_id] = grads[node_id] + grad if node_id in grads else grad
    return {
        name: np.array(grads[node_id], dtype=np.float64).reshape(shape) if node_id in grads else np.zeros(shape)
        for node_id, (name, shape) in tape.leaves.items()
    }


def directional_derivative(function, params, direction, step=1e-5):
    """
    Central finite difference of `function` along `direction`.

    Args:
        function: callable taking a dict name -> array and returning a float
        params (dict): point of evaluation
        direction (dict): perturbation per parameter name
        step (float): finite-difference step

    Returns:
        float: (f(p + h v) - f(p - h v)) / 2h
    """
    plus = {name: value + step * direction[name] for name, value in params.items()}
    minus = {name: value - step * direction[name] for name, value in params.items()}
    return (function(plus) - function(minus)) / (2.0 * step)
