"""Reverse-mode automatic differentiation over float64 arrays.

A :class:`Tensor` wraps an ndarray and records the operations applied to it;
``backward()`` walks the recorded graph in reverse topological order and
accumulates gradients into every node it reaches.  The op set is exactly what
the coupling-flow likelihood needs: elementwise arithmetic, 2-D matmul,
transpose, exp/tanh/relu, reductions, matrix inverse and log-determinant.

The module-level helpers (``exp``, ``tanh``, ``row_sum``, ...) dispatch on
input type so the same model code runs on plain ndarrays (generation) and on
Tensors (training).
"""

import numpy as np

from .exceptions import SingularCovarianceError


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """Node in the computation graph; holds a value and, after backward, a grad."""

    # Keep numpy from consuming Tensor operands elementwise; arithmetic must
    # fall through to our reflected operators.
    __array_ufunc__ = None
    __slots__ = ("value", "grad", "_parents", "_backward")

    def __init__(self, value):
        self.value = np.asarray(value, dtype=float)
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.value.shape

    def _accum(self, grad):
        grad = _unbroadcast(grad, self.value.shape)
        self.grad = grad if self.grad is None else self.grad + grad

    def __add__(self, other):
        other = as_tensor(other)
        out = Tensor(self.value + other.value)
        out._parents = (self, other)

        def back():
            self._accum(out.grad)
            other._accum(out.grad)

        out._backward = back
        return out

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other)
        out = Tensor(self.value - other.value)
        out._parents = (self, other)

        def back():
            self._accum(out.grad)
            other._accum(-out.grad)

        out._backward = back
        return out

    def __rsub__(self, other):
        return as_tensor(other).__sub__(self)

    def __mul__(self, other):
        other = as_tensor(other)
        out = Tensor(self.value * other.value)
        out._parents = (self, other)

        def back():
            self._accum(out.grad * other.value)
            other._accum(out.grad * self.value)

        out._backward = back
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return self * (1.0 / np.asarray(other, dtype=float))

    def __neg__(self):
        out = Tensor(-self.value)
        out._parents = (self,)

        def back():
            self._accum(-out.grad)

        out._backward = back
        return out

    def __matmul__(self, other):
        other = as_tensor(other)
        if self.value.ndim != 2 or other.value.ndim != 2:
            raise ValueError("matmul supports 2-D operands only")
        out = Tensor(self.value @ other.value)
        out._parents = (self, other)

        def back():
            self._accum(out.grad @ other.value.T)
            other._accum(self.value.T @ out.grad)

        out._backward = back
        return out

    def __rmatmul__(self, other):
        return as_tensor(other).__matmul__(self)

    @property
    def T(self):
        out = Tensor(self.value.T)
        out._parents = (self,)

        def back():
            self._accum(out.grad.T)

        out._backward = back
        return out

    def exp(self):
        out = Tensor(np.exp(self.value))
        out._parents = (self,)

        def back():
            self._accum(out.grad * out.value)

        out._backward = back
        return out

    def tanh(self):
        out = Tensor(np.tanh(self.value))
        out._parents = (self,)

        def back():
            self._accum(out.grad * (1.0 - out.value ** 2))

        out._backward = back
        return out

    def relu(self):
        mask = self.value > 0.0
        out = Tensor(self.value * mask)
        out._parents = (self,)

        def back():
            self._accum(out.grad * mask)

        out._backward = back
        return out

    def sum(self, axis=None):
        out = Tensor(self.value.sum(axis=axis))
        out._parents = (self,)

        def back():
            g = out.grad
            if axis is not None:
                g = np.expand_dims(g, axis)
            self._accum(np.broadcast_to(g, self.value.shape).copy())

        out._backward = back
        return out

    def mean(self):
        out = Tensor(self.value.mean())
        out._parents = (self,)

        def back():
            self._accum(np.full(self.value.shape, out.grad / self.value.size))

        out._backward = back
        return out

    def backward(self):
        """Accumulate gradients of this (scalar) node into the whole graph."""
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                stack.append((parent, False))
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node._backward is not None:
                node._backward()

    def __repr__(self):
        return f"Tensor(shape={self.value.shape})"


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def value_of(x):
    """Underlying ndarray of a Tensor, or the input itself."""
    return x.value if isinstance(x, Tensor) else x


# ---------------------------------------------------------------------------
# type-dispatched functional surface shared by training and generation code

def exp(x):
    return x.exp() if isinstance(x, Tensor) else np.exp(x)


def tanh(x):
    return x.tanh() if isinstance(x, Tensor) else np.tanh(x)


def relu(x):
    return x.relu() if isinstance(x, Tensor) else np.maximum(x, 0.0)


def row_sum(x):
    """Sum a (B, k) array over its second axis: returns shape (B,)."""
    return x.sum(axis=1)


def mean_all(x):
    return x.mean()


def matinv(x):
    """Inverse of a square matrix; raises SingularCovarianceError when singular."""
    if not isinstance(x, Tensor):
        try:
            return np.linalg.inv(x)
        except np.linalg.LinAlgError as err:
            raise SingularCovarianceError(str(err)) from None
    try:
        y = np.linalg.inv(x.value)
    except np.linalg.LinAlgError as err:
        raise SingularCovarianceError(str(err)) from None
    out = Tensor(y)
    out._parents = (x,)

    def back():
        x._accum(-(y.T @ out.grad @ y.T))

    out._backward = back
    return out


def slogdet_pd(x):
    """Log-determinant of a positive-definite matrix.

    Raises SingularCovarianceError when the determinant is not positive.
    """
    val = value_of(x)
    sign, logdet = np.linalg.slogdet(val)
    if sign <= 0.0 or not np.isfinite(logdet):
        raise SingularCovarianceError("covariance is not positive definite")
    if not isinstance(x, Tensor):
        return float(logdet)
    inv_t = np.linalg.inv(val).T
    out = Tensor(logdet)
    out._parents = (x,)

    def back():
        x._accum(out.grad * inv_t)

    out._backward = back
    return out
