"""Dense float64 tensors with reverse-mode autodiff.

Tensors wrap a row-major numpy array of float64 values. Every operation
builds a node in a dynamically constructed computation graph; calling
``backward()`` on a result propagates gradients to every reachable tensor.
Gradients accumulate by addition when a tensor feeds several consumers,
which is what recurrent weight sharing relies on.

Matrix products go through ``np.einsum`` rather than BLAS gemm: einsum's
accumulation order for a given inner dimension is fixed, so each output
row is bit-identical regardless of how many rows are in the batch. BLAS
picks different kernels for different batch sizes and breaks that.
"""

import numpy as np

from .errors import DegenerateInputError, DimensionError, StateError


def _as_array(values):
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 0:
        return arr  # ascontiguousarray would promote scalars to shape (1,)
    return np.ascontiguousarray(arr)


def _matmul_raw(a, b):
    # optimize=False keeps einsum on its deterministic C loops (no BLAS).
    return np.einsum("ij,jk->ik", a, b, optimize=False)


class Tensor:
    """A float64 n-d array that records the graph of operations producing it."""

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, parents=(), backward=None):
        self.data = _as_array(data)
        self.grad = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    def _ensure_grad(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        return self.grad

    # ----- binary elementwise ops (with per-feature vector broadcast) -----

    @staticmethod
    def _check_broadcast(a, b):
        """Allow identical shapes or a 1-d per-feature vector against the
        trailing axis of the other operand."""
        if a.shape == b.shape:
            return
        if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
            return
        if a.ndim == 1 and b.ndim >= 1 and b.shape[-1] == a.shape[0]:
            return
        raise DimensionError(
            f"shapes {a.shape} and {b.shape} are neither identical nor a "
            "per-feature vector against the trailing axis"
        )

    @staticmethod
    def _reduce_to(grad, shape):
        """Sum a broadcast gradient back down to the operand's shape."""
        if grad.shape == shape:
            return grad
        # operand was a 1-d per-feature vector: sum over all leading axes
        axes = tuple(range(grad.ndim - 1))
        return grad.sum(axis=axes)

    def _binary(self, other, fwd, dself, dother):
        if not isinstance(other, Tensor):
            other_data = float(other)
            out = Tensor(fwd(self.data, other_data), parents=(self,))

            def backward_scalar(out=out, a=self, c=other_data):
                a._ensure_grad()
                a.grad += dself(out.grad, a.data, c)

            out._backward = backward_scalar
            return out
        self._check_broadcast(self.data, other.data)
        out = Tensor(fwd(self.data, other.data), parents=(self, other))

        def backward(out=out, a=self, b=other):
            a._ensure_grad()
            a.grad += Tensor._reduce_to(dself(out.grad, a.data, b.data), a.data.shape)
            b._ensure_grad()
            b.grad += Tensor._reduce_to(dother(out.grad, a.data, b.data), b.data.shape)

        out._backward = backward
        return out

    def __add__(self, other):
        return self._binary(
            other,
            lambda a, b: a + b,
            lambda g, a, b: g,
            lambda g, a, b: g,
        )

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(
            other,
            lambda a, b: a - b,
            lambda g, a, b: g,
            lambda g, a, b: -g,
        )

    def __mul__(self, other):
        return self._binary(
            other,
            lambda a, b: a * b,
            lambda g, a, b: g * b,
            lambda g, a, b: g * a,
        )

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    # ----- unary elementwise ops -----

    def _unary(self, fwd, grad_from_out):
        out = Tensor(fwd(self.data), parents=(self,))

        def backward(out=out, a=self):
            a._ensure_grad()
            a.grad += out.grad * grad_from_out(out.data, a.data)

        out._backward = backward
        return out

    def sigmoid(self):
        # stable piecewise form; derivative y(1-y)
        return self._unary(
            lambda x: np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                               np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x)))),
            lambda y, x: y * (1.0 - y),
        )

    def tanh(self):
        return self._unary(np.tanh, lambda y, x: 1.0 - y * y)

    def sqrt(self):
        return self._unary(np.sqrt, lambda y, x: 0.5 / y)

    def reciprocal(self):
        return self._unary(np.reciprocal, lambda y, x: -y * y)

    # ----- shape ops -----

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = Tensor(self.data.reshape(shape), parents=(self,))

        def backward(out=out, a=self):
            a._ensure_grad()
            a.grad += out.grad.reshape(a.data.shape)

        out._backward = backward
        return out

    def matmul(self, other):
        if not isinstance(other, Tensor):
            other = Tensor(other)
        if self.ndim != 2 or other.ndim != 2 or self.shape[1] != other.shape[0]:
            raise DimensionError(
                f"matmul needs [m,k] x [k,n]; got {self.shape} x {other.shape}"
            )
        out = Tensor(_matmul_raw(self.data, other.data), parents=(self, other))

        def backward(out=out, a=self, b=other):
            g = out.grad
            a._ensure_grad()
            a.grad += np.einsum("ik,jk->ij", g, b.data, optimize=False)
            b._ensure_grad()
            b.grad += np.einsum("ij,ik->jk", a.data, g, optimize=False)

        out._backward = backward
        return out

    __matmul__ = matmul

    # ----- reductions -----

    def _norm_axes(self, axes):
        if axes is None:
            return tuple(range(self.ndim))
        if isinstance(axes, int):
            axes = (axes,)
        axes = tuple(sorted(set(int(a) for a in axes)))
        for a in axes:
            if a < 0 or a >= self.ndim:
                raise DimensionError(f"axis {a} invalid for shape {self.shape}")
        return axes

    def _check_nonempty(self, axes):
        count = 1
        for a in axes:
            count *= self.data.shape[a]
        if count == 0:
            raise DegenerateInputError("reduction over zero elements")
        return count

    def sum(self, axes=None):
        axes = self._norm_axes(axes)
        self._check_nonempty(axes)
        out = Tensor(self.data.sum(axis=axes), parents=(self,))

        def backward(out=out, a=self, axes=axes):
            a._ensure_grad()
            g = np.expand_dims(out.grad, axes) if axes else out.grad
            a.grad += np.broadcast_to(g, a.data.shape)

        out._backward = backward
        return out

    def mean(self, axes=None):
        axes = self._norm_axes(axes)
        count = self._check_nonempty(axes)
        out = Tensor(self.data.mean(axis=axes), parents=(self,))

        def backward(out=out, a=self, axes=axes, count=count):
            a._ensure_grad()
            g = np.expand_dims(out.grad, axes) if axes else out.grad
            a.grad += np.broadcast_to(g, a.data.shape) / count

        out._backward = backward
        return out

    def max(self, axes=None):
        axes = self._norm_axes(axes)
        self._check_nonempty(axes)
        out = Tensor(self.data.max(axis=axes), parents=(self,))

        def backward(out=out, a=self, axes=axes):
            a._ensure_grad()
            expanded = np.expand_dims(out.data, axes) if axes else out.data
            hits = (a.data == expanded).astype(np.float64)
            hits /= np.maximum(hits.sum(axis=axes, keepdims=True), 1.0)
            g = np.expand_dims(out.grad, axes) if axes else out.grad
            a.grad += hits * g

        out._backward = backward
        return out

    # ----- backward pass -----

    def backward(self, seed=None):
        if seed is None:
            seed = np.ones_like(self.data)
        else:
            seed = _as_array(seed)
            if seed.shape != self.data.shape:
                raise DimensionError(
                    f"seed shape {seed.shape} != value shape {self.data.shape}"
                )
        if self._backward is None and not self._parents:
            raise StateError("backward called on a leaf with no recorded graph")
        order = self._toposort()
        self.grad = seed
        for node in order:
            if node._backward is not None and node.grad is not None:
                node._backward()

    def _toposort(self):
        """Reverse topological order, iterative (graphs exceed recursion depth)."""
        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        order.reverse()
        return order


def reduce(t, axes, op):
    """Spec-style reduction dispatch: op in {sum, mean, max}."""
    funcs = {"sum": Tensor.sum, "mean": Tensor.mean, "max": Tensor.max}
    if op not in funcs:
        raise ValueError(f"unknown reduction {op!r}")
    return funcs[op](t, axes)


def elementwise(op, *args):
    """Spec-style elementwise dispatch over named ops."""
    unary = {
        "sigmoid": Tensor.sigmoid,
        "tanh": Tensor.tanh,
        "sqrt": Tensor.sqrt,
        "reciprocal": Tensor.reciprocal,
    }
    binary = {
        "add": Tensor.__add__,
        "sub": Tensor.__sub__,
        "mul": Tensor.__mul__,
    }
    if op in unary:
        (a,) = args
        return unary[op](a)
    if op in binary:
        a, b = args
        return binary[op](a, b)
    raise ValueError(f"unknown elementwise op {op!r}")


def matmul(a, b):
    if not isinstance(a, Tensor):
        a = Tensor(a)
    return a.matmul(b)
