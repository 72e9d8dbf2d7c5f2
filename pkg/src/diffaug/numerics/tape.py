"""Reverse-mode automatic differentiation over Grids.

A Tape records primitive operations in execution order; because every node is
appended after its operands, walking the list backwards is a valid reverse
topological order and visits each node exactly once.

Only the primitives defined here may touch a Var. Anything else (numpy ufuncs,
unsupported powers, arrays coerced from a Var) raises UnsupportedOperationError
when the computation is built, not when it is differentiated.

Example:
    >>> tape = Tape()
    >>> x = tape.leaf(np.array([1.0, 2.0]))
    >>> loss = tape.mean(x * x)
    >>> tape.backward(loss)
    >>> x.grad
    array([1., 2.])
"""
from collections.abc import Callable, Sequence
from typing import Any

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit, log_softmax, softmax

from ..exceptions import ShapeError, UnsupportedOperationError
from .grid import Grid, LabelArray, check_finite, check_same_shape, mean64, sum64

Backward = Callable[[Grid], None]


class Var:
    """A value recorded on a Tape, with a gradient slot filled by backward()."""

    __slots__ = ("value", "grad", "tape", "requires_grad", "_backward")

    def __init__(self, value: Grid, tape: "Tape", requires_grad: bool = True):
        self.value = value
        self.grad: Grid | None = None
        self.tape = tape
        self.requires_grad = requires_grad
        self._backward: Backward | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.value.shape)

    def _accumulate(self, delta: Grid) -> None:
        if not self.requires_grad:
            return
        delta = np.asarray(delta, dtype=self.value.dtype)
        self.grad = delta.copy() if self.grad is None else self.grad + delta

    def _coerce(self, other: Any, op: str) -> "Var":
        if isinstance(other, Var):
            if other.tape is not self.tape:
                raise UnsupportedOperationError(f"'{op}' across different tapes")
            return other
        raise UnsupportedOperationError(
            f"'{op}' between a tape variable and {type(other).__name__}; use Tape.scale"
        )

    def __add__(self, other: Any) -> "Var":
        return self.tape.add(self, self._coerce(other, "+"))

    def __sub__(self, other: Any) -> "Var":
        return self.tape.sub(self, self._coerce(other, "-"))

    def __mul__(self, other: Any) -> "Var":
        if isinstance(other, int | float):
            return self.tape.scale(self, float(other))
        return self.tape.mul(self, self._coerce(other, "*"))

    def __rmul__(self, other: Any) -> "Var":
        return self.__mul__(other)

    def __truediv__(self, other: Any) -> "Var":
        if isinstance(other, int | float):
            return self.tape.scale(self, 1.0 / float(other))
        raise UnsupportedOperationError("division by a tape variable")

    def __neg__(self) -> "Var":
        return self.tape.scale(self, -1.0)

    def __pow__(self, exponent: Any) -> "Var":
        if exponent == 2:
            return self.tape.mul(self, self)
        raise UnsupportedOperationError(f"power {exponent!r}; only squaring is recorded")

    def __array__(self, *args: Any, **kwargs: Any) -> Any:
        raise UnsupportedOperationError("tape variables cannot be converted to arrays")

    def __array_ufunc__(self, ufunc: Any, method: str, *inputs: Any, **kwargs: Any) -> Any:
        raise UnsupportedOperationError(f"numpy ufunc '{ufunc.__name__}' is not a primitive")

    def __repr__(self) -> str:
        return f"Var(shape={self.shape}, dtype={self.value.dtype})"


class Tape:
    """Records primitive operations for one reverse pass.

    A tape is confined to the thread that created it. With record=False the
    same primitives evaluate without keeping backward closures, which is how
    models run inference.

    Args:
        record: Keep backward closures so backward() can run.
    """

    def __init__(self, record: bool = True):
        self.record = record
        self._nodes: list[Var] = []

    def __len__(self) -> int:
        return len(self._nodes)

    # -- graph construction --------------------------------------------------

    def leaf(self, value: Any) -> Var:
        """Register an input whose gradient is wanted."""
        array = np.asarray(value)
        if not np.issubdtype(array.dtype, np.floating):
            array = array.astype(np.float64)
        check_finite(array, "tape input")
        node = Var(array, self, requires_grad=True)
        self._nodes.append(node)
        return node

    def constant(self, value: Any) -> Var:
        """Register an input that receives no gradient."""
        array = np.asarray(value)
        if not np.issubdtype(array.dtype, np.floating):
            array = array.astype(np.float64)
        check_finite(array, "tape constant")
        node = Var(array, self, requires_grad=False)
        self._nodes.append(node)
        return node

    def _push(self, value: Grid, op: str, parents: Sequence[Var], backward: Backward) -> Var:
        for parent in parents:
            if parent.tape is not self:
                raise UnsupportedOperationError(f"'{op}' on a variable from another tape")
        check_finite(value, f"output of {op}")
        node = Var(value, self, requires_grad=any(p.requires_grad for p in parents))
        if self.record and node.requires_grad:
            node._backward = backward
        self._nodes.append(node)
        return node

    def backward(self, output: Var, seed: Grid | None = None) -> None:
        """Propagate gradients from output to every recorded node."""
        if not self.record:
            raise UnsupportedOperationError("backward() on a non-recording tape")
        if output.tape is not self:
            raise UnsupportedOperationError("backward() on a variable from another tape")
        for node in self._nodes:
            node.grad = None
        output.grad = (
            np.ones_like(output.value) if seed is None else np.asarray(seed, output.value.dtype)
        )
        for node in reversed(self._nodes):
            if node._backward is not None and node.grad is not None:
                check_finite(node.grad, "gradient")
                node._backward(node.grad)

    # -- elementwise ---------------------------------------------------------

    def add(self, a: Var, b: Var) -> Var:
        check_same_shape(a.value, b.value, "add")

        def backward(g: Grid) -> None:
            a._accumulate(g)
            b._accumulate(g)

        return self._push(a.value + b.value, "add", (a, b), backward)

    def sub(self, a: Var, b: Var) -> Var:
        check_same_shape(a.value, b.value, "sub")

        def backward(g: Grid) -> None:
            a._accumulate(g)
            b._accumulate(-g)

        return self._push(a.value - b.value, "sub", (a, b), backward)

    def mul(self, a: Var, b: Var) -> Var:
        check_same_shape(a.value, b.value, "mul")

        def backward(g: Grid) -> None:
            a._accumulate(g * b.value)
            b._accumulate(g * a.value)

        return self._push(a.value * b.value, "mul", (a, b), backward)

    def scale(self, a: Var, factor: float) -> Var:
        def backward(g: Grid) -> None:
            a._accumulate(g * factor)

        return self._push(a.value * np.asarray(factor, a.value.dtype), "scale", (a,), backward)

    def silu(self, a: Var) -> Var:
        s = expit(a.value)

        def backward(g: Grid) -> None:
            a._accumulate(g * s * (1.0 + a.value * (1.0 - s)))

        return self._push(a.value * s, "silu", (a,), backward)

    def tanh(self, a: Var) -> Var:
        y = np.tanh(a.value)

        def backward(g: Grid) -> None:
            a._accumulate(g * (1.0 - y * y))

        return self._push(y, "tanh", (a,), backward)

    def sin(self, a: Var) -> Var:
        def backward(g: Grid) -> None:
            a._accumulate(g * np.cos(a.value))

        return self._push(np.sin(a.value), "sin", (a,), backward)

    def cos(self, a: Var) -> Var:
        def backward(g: Grid) -> None:
            a._accumulate(-g * np.sin(a.value))

        return self._push(np.cos(a.value), "cos", (a,), backward)

    def concat(self, parts: Sequence[Var], axis: int) -> Var:
        if not parts:
            raise ShapeError("concat of nothing", (), ())
        sizes = [p.value.shape[axis] for p in parts]
        bounds = np.cumsum(sizes)[:-1]

        def backward(g: Grid) -> None:
            for part, piece in zip(parts, np.split(g, bounds, axis=axis), strict=True):
                part._accumulate(piece)

        return self._push(
            np.concatenate([p.value for p in parts], axis=axis), "concat", parts, backward
        )

    # -- reductions ----------------------------------------------------------

    def sum(self, a: Var) -> Var:
        def backward(g: Grid) -> None:
            a._accumulate(np.broadcast_to(g, a.value.shape))

        return self._push(sum64(a.value), "sum", (a,), backward)

    def mean(self, a: Var) -> Var:
        count = a.value.size

        def backward(g: Grid) -> None:
            a._accumulate(np.broadcast_to(g / count, a.value.shape))

        return self._push(mean64(a.value), "mean", (a,), backward)

    def global_avg_pool(self, x: Var) -> Var:
        """(N, C, H, W) -> (N, C) spatial mean."""
        self._expect_ndim(x, 4, "global_avg_pool")
        n, c, h, w = x.shape

        def backward(g: Grid) -> None:
            x._accumulate(np.broadcast_to(g[:, :, None, None] / (h * w), x.value.shape))

        return self._push(mean64(x.value, axis=(2, 3)), "global_avg_pool", (x,), backward)

    def mse(self, a: Var, b: Var) -> Var:
        """Mean of squared differences over all elements."""
        check_same_shape(a.value, b.value, "mse")
        diff = a.value - b.value

        def backward(g: Grid) -> None:
            delta = g * 2.0 * diff / diff.size
            a._accumulate(delta)
            b._accumulate(-delta)

        return self._push(mean64(diff * diff), "mse", (a, b), backward)

    def softmax_cross_entropy(
        self, logits: Var, targets: LabelArray, smoothing: float = 0.0
    ) -> Var:
        """Mean cross-entropy of (N, C) logits against integer targets.

        Targets are smoothed as (1 - smoothing) * onehot + smoothing / C.
        """
        self._expect_ndim(logits, 2, "softmax_cross_entropy")
        n, c = logits.shape
        targets = np.asarray(targets)
        if targets.shape != (n,):
            raise ShapeError("cross-entropy targets", tuple(targets.shape), (n,))
        soft = np.full((n, c), smoothing / c, dtype=logits.value.dtype)
        soft[np.arange(n), targets] += 1.0 - smoothing
        log_probs = log_softmax(logits.value, axis=1)

        def backward(g: Grid) -> None:
            logits._accumulate(g * (softmax(logits.value, axis=1) - soft) / n)

        loss = -mean64(sum64(soft * log_probs, axis=1))
        return self._push(np.asarray(loss), "softmax_cross_entropy", (logits,), backward)

    # -- affine and convolution ---------------------------------------------

    def linear(self, x: Var, weight: Var, bias: Var | None = None) -> Var:
        """(N, D) @ (D, O) + (O,)."""
        self._expect_ndim(x, 2, "linear")
        if x.shape[1] != weight.shape[0]:
            raise ShapeError("linear input/weight", x.shape, weight.shape)
        out = x.value @ weight.value
        parents: tuple[Var, ...] = (x, weight)
        if bias is not None:
            if bias.shape != (weight.shape[1],):
                raise ShapeError("linear bias", bias.shape, (weight.shape[1],))
            out = out + bias.value
            parents = (x, weight, bias)

        def backward(g: Grid) -> None:
            x._accumulate(g @ weight.value.T)
            weight._accumulate(x.value.T @ g)
            if bias is not None:
                bias._accumulate(sum64(g, axis=0))

        return self._push(out, "linear", parents, backward)

    def conv2d(self, x: Var, weight: Var, bias: Var | None = None) -> Var:
        """Stride-1 'same' convolution of (N, C, H, W) with (O, C, k, k), k odd."""
        self._expect_ndim(x, 4, "conv2d")
        out_channels, in_channels, kh, kw = weight.shape
        if x.shape[1] != in_channels:
            raise ShapeError("conv2d input channels", x.shape, weight.shape)
        if kh != kw or kh % 2 == 0:
            raise ShapeError("conv2d kernel must be square and odd", weight.shape, weight.shape)
        pad = (kh - 1) // 2
        windows = _windows(x.value, kh, pad)
        out = np.tensordot(windows, weight.value, axes=([1, 4, 5], [1, 2, 3]))
        out = out.transpose(0, 3, 1, 2)
        parents: tuple[Var, ...] = (x, weight)
        if bias is not None:
            out = out + bias.value[None, :, None, None]
            parents = (x, weight, bias)

        def backward(g: Grid) -> None:
            weight._accumulate(np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3])))
            if bias is not None:
                bias._accumulate(sum64(g, axis=(0, 2, 3)))
            if x.requires_grad:
                flipped = weight.value[:, :, ::-1, ::-1]
                grad_windows = _windows(g, kh, kh - 1 - pad)
                dx = np.tensordot(grad_windows, flipped, axes=([1, 4, 5], [0, 2, 3]))
                x._accumulate(dx.transpose(0, 3, 1, 2))

        return self._push(np.ascontiguousarray(out), "conv2d", parents, backward)

    def add_channel_bias(self, x: Var, bias: Var) -> Var:
        """Add a per-sample, per-channel (N, C) vector to (N, C, H, W) features."""
        self._expect_ndim(x, 4, "add_channel_bias")
        if bias.shape != x.shape[:2]:
            raise ShapeError("channel bias", bias.shape, x.shape[:2])

        def backward(g: Grid) -> None:
            x._accumulate(g)
            bias._accumulate(sum64(g, axis=(2, 3)))

        return self._push(
            x.value + bias.value[:, :, None, None], "add_channel_bias", (x, bias), backward
        )

    def take_rows(self, table: Var, indices: LabelArray) -> Var:
        """Gather rows of a (K, D) table, as an embedding lookup."""
        self._expect_ndim(table, 2, "take_rows")
        indices = np.asarray(indices)
        if np.any(indices < 0) or np.any(indices >= table.shape[0]):
            raise ShapeError("take_rows index out of range", tuple(indices.shape), table.shape)

        def backward(g: Grid) -> None:
            delta = np.zeros_like(table.value)
            np.add.at(delta, indices, g)
            table._accumulate(delta)

        return self._push(table.value[indices], "take_rows", (table,), backward)

    # -- resampling ----------------------------------------------------------

    def avg_pool2(self, x: Var) -> Var:
        """2x2 average pooling of (N, C, H, W) with even H and W."""
        self._expect_ndim(x, 4, "avg_pool2")
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            even = (n, c, h - h % 2, w - w % 2)
            raise ShapeError("avg_pool2 needs even spatial dims", x.shape, even)
        pooled = x.value.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

        def backward(g: Grid) -> None:
            x._accumulate(np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) / 4.0)

        return self._push(pooled.astype(x.value.dtype), "avg_pool2", (x,), backward)

    def upsample2(self, x: Var) -> Var:
        """Nearest-neighbour 2x upsampling of (N, C, H, W)."""
        self._expect_ndim(x, 4, "upsample2")
        n, c, h, w = x.shape

        def backward(g: Grid) -> None:
            x._accumulate(g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)))

        up = np.repeat(np.repeat(x.value, 2, axis=2), 2, axis=3)
        return self._push(up, "upsample2", (x,), backward)

    @staticmethod
    def _expect_ndim(x: Var, ndim: int, op: str) -> None:
        if x.value.ndim != ndim:
            raise ShapeError(f"{op} expects {ndim}-D input", x.shape, (-1,) * ndim)


def _windows(x: Grid, k: int, pad: int) -> Grid:
    padded = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    return sliding_window_view(padded, (k, k), axis=(2, 3))


def record_and_backward(
    f: Callable[..., Var], inputs: Sequence[Any]
) -> tuple[Grid, list[Grid]]:
    """Evaluate f on fresh leaves for inputs and return (value, gradients).

    f receives the tape followed by one Var per input and must return a Var
    built from tape primitives. Gradients of a non-scalar output are those of
    its sum.
    """
    tape = Tape()
    leaves = [tape.leaf(x) for x in inputs]
    out = f(tape, *leaves)
    if not isinstance(out, Var) or out.tape is not tape:
        raise UnsupportedOperationError(
            f"computation returned {type(out).__name__}, not a variable of its tape"
        )
    tape.backward(out)
    grads = [
        leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value) for leaf in leaves
    ]
    return out.value, grads
