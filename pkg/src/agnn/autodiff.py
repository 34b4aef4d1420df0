"""Reverse-mode differentiation on a linear tape.

A :class:`Tape` records every operation in execution order, so the node list
is already topologically sorted and the backward pass is a single reversed
sweep. Leaves are :class:`Variable` objects that outlive any tape (model
weights), which lets a tied weight appear in several places of one graph and
receive the summed gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from agnn import linalg
from agnn.errors import ContractError, DimensionError
from agnn.linalg import SparseMatrix, Tensor


class Variable:
    __slots__ = ("value", "grad", "trainable", "name", "requires_grad", "tape")

    def __init__(self, value, trainable: bool = False, name: str | None = None):
        self.value = linalg.as_tensor(value)
        self.grad: Tensor | None = None
        self.trainable = trainable
        self.name = name
        self.requires_grad = trainable
        self.tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def item(self) -> float:
        if self.value.shape != (1, 1):
            raise ContractError(f"item() needs a 1x1 value, got {self.value.shape}")
        return float(self.value[0, 0])

    def __repr__(self) -> str:
        tag = self.name or "var"
        return f"Variable({tag}, shape={self.shape}, trainable={self.trainable})"


@dataclass
class Node:
    out: Variable
    op: str
    inputs: tuple[Variable, ...]
    attrs: dict
    cache: dict = field(default_factory=dict)


# Each op: forward(values, attrs, cache) -> out; backward(g, values, out, attrs,
# cache, needs) -> tuple of input gradients (None where not needed).
_FORWARD: dict[str, Callable] = {}
_BACKWARD: dict[str, Callable] = {}


def _op(name: str):
    def register(pair):
        fwd, bwd = pair()
        _FORWARD[name] = fwd
        _BACKWARD[name] = bwd
        return pair

    return register


SUPPORTED_OPS = _FORWARD.keys()


@_op("matmul")
def _matmul():
    def fwd(v, attrs, cache):
        return linalg.matmul(v[0], v[1])

    def bwd(g, v, out, attrs, cache, needs):
        a, b = v
        return (g @ b.T if needs[0] else None, a.T @ g if needs[1] else None)

    return fwd, bwd


@_op("spmm")
def _spmm():
    # sparse operand is a constant carried in attrs
    def fwd(v, attrs, cache):
        return linalg.spmm(attrs["sparse"], v[0])

    def bwd(g, v, out, attrs, cache, needs):
        s: SparseMatrix = attrs["sparse"]
        return (linalg.spmm(s.T, g),)

    return fwd, bwd


@_op("transpose")
def _transpose():
    def fwd(v, attrs, cache):
        return np.ascontiguousarray(v[0].T)

    def bwd(g, v, out, attrs, cache, needs):
        return (np.ascontiguousarray(g.T),)

    return fwd, bwd


@_op("relu")
def _relu():
    def fwd(v, attrs, cache):
        return linalg.relu(v[0])

    def bwd(g, v, out, attrs, cache, needs):
        return (g * (v[0] > 0),)

    return fwd, bwd


@_op("sigmoid")
def _sigmoid():
    def fwd(v, attrs, cache):
        return linalg.sigmoid(v[0])

    def bwd(g, v, out, attrs, cache, needs):
        return (g * out * (1.0 - out),)

    return fwd, bwd


@_op("softplus")
def _softplus():
    def fwd(v, attrs, cache):
        return linalg.elementwise("softplus", v[0])

    def bwd(g, v, out, attrs, cache, needs):
        return (g * linalg.sigmoid(v[0]),)

    return fwd, bwd


@_op("add")
def _add():
    def fwd(v, attrs, cache):
        a, b = v
        if b.shape[0] == 1 and a.shape[0] != 1:
            return linalg.add_row_bias(a, b)
        return linalg.elementwise("add", a, b)

    def bwd(g, v, out, attrs, cache, needs):
        a, b = v
        gb = g
        if b.shape != g.shape:
            gb = g.sum(axis=0, keepdims=True)
        return (g, gb)

    return fwd, bwd


@_op("sub")
def _sub():
    def fwd(v, attrs, cache):
        return linalg.elementwise("sub", v[0], v[1])

    def bwd(g, v, out, attrs, cache, needs):
        return (g, -g)

    return fwd, bwd


@_op("hadamard")
def _hadamard():
    def fwd(v, attrs, cache):
        return linalg.elementwise("hadamard", v[0], v[1])

    def bwd(g, v, out, attrs, cache, needs):
        a, b = v
        return (g * b if needs[0] else None, g * a if needs[1] else None)

    return fwd, bwd


@_op("scale")
def _scale():
    def fwd(v, attrs, cache):
        return linalg.elementwise("scale", v[0], scale=attrs["factor"])

    def bwd(g, v, out, attrs, cache, needs):
        return (g * float(attrs["factor"]),)

    return fwd, bwd


@_op("maximum")
def _maximum():
    def fwd(v, attrs, cache):
        cache["first"] = v[0] >= v[1]
        return linalg.elementwise("maximum", v[0], v[1])

    def bwd(g, v, out, attrs, cache, needs):
        first = cache["first"]
        return (np.where(first, g, 0.0), np.where(first, 0.0, g))

    return fwd, bwd


def _restore_axis(g: Tensor, shape: tuple[int, int], axis) -> Tensor:
    if axis is None:
        return np.full(shape, g[0, 0])
    return np.broadcast_to(g, shape).copy()


@_op("sum")
def _sum():
    def fwd(v, attrs, cache):
        axis = attrs.get("axis")
        if axis is None:
            return np.array([[v[0].sum()]])
        return v[0].sum(axis=axis, keepdims=True)

    def bwd(g, v, out, attrs, cache, needs):
        return (_restore_axis(g, v[0].shape, attrs.get("axis")),)

    return fwd, bwd


@_op("mean")
def _mean():
    def fwd(v, attrs, cache):
        axis = attrs.get("axis")
        if axis is None:
            return np.array([[v[0].mean()]])
        return v[0].mean(axis=axis, keepdims=True)

    def bwd(g, v, out, attrs, cache, needs):
        axis = attrs.get("axis")
        count = v[0].size if axis is None else v[0].shape[axis]
        return (_restore_axis(g, v[0].shape, axis) / count,)

    return fwd, bwd


@_op("max")
def _max():
    # gradient goes to a single argmax entry; np.argmax picks the lowest index
    def fwd(v, attrs, cache):
        a = v[0]
        axis = attrs.get("axis")
        if axis is None:
            flat = int(np.argmax(a))
            cache["where"] = np.unravel_index(flat, a.shape)
            return np.array([[a.flat[flat]]])
        arg = np.argmax(a, axis=axis)
        cache["arg"] = arg
        return np.take_along_axis(a, np.expand_dims(arg, axis), axis=axis)

    def bwd(g, v, out, attrs, cache, needs):
        a = v[0]
        axis = attrs.get("axis")
        ga = np.zeros_like(a)
        if axis is None:
            ga[cache["where"]] = g[0, 0]
        else:
            np.put_along_axis(ga, np.expand_dims(cache["arg"], axis), g, axis=axis)
        return (ga,)

    return fwd, bwd


@_op("concat")
def _concat():
    def fwd(v, attrs, cache):
        axis = attrs.get("axis", 1)
        other = 1 - axis
        if len({x.shape[other] for x in v}) != 1:
            raise DimensionError(f"concat along {axis}: {[x.shape for x in v]}")
        return np.concatenate(v, axis=axis)

    def bwd(g, v, out, attrs, cache, needs):
        axis = attrs.get("axis", 1)
        bounds = np.cumsum([x.shape[axis] for x in v])[:-1]
        return tuple(np.split(g, bounds, axis=axis))

    return fwd, bwd


@_op("slice")
def _slice():
    # rows/cols: a python slice or an integer index array (repeats allowed)
    def fwd(v, attrs, cache):
        rows = attrs.get("rows", slice(None))
        cols = attrs.get("cols", slice(None))
        return np.ascontiguousarray(v[0][rows][:, cols])

    def bwd(g, v, out, attrs, cache, needs):
        rows = attrs.get("rows", slice(None))
        cols = attrs.get("cols", slice(None))
        ga = np.zeros_like(v[0])
        r = np.arange(v[0].shape[0])[rows]
        c = np.arange(v[0].shape[1])[cols]
        np.add.at(ga, (r[:, None], c[None, :]), g)
        return (ga,)

    return fwd, bwd


@_op("dropout")
def _dropout():
    # inverted dropout; the mask comes from the caller's generator
    def fwd(v, attrs, cache):
        rate = attrs["rate"]
        keep = attrs["rng"].random(v[0].shape) >= rate
        cache["mask"] = keep / (1.0 - rate)
        return v[0] * cache["mask"]

    def bwd(g, v, out, attrs, cache, needs):
        return (g * cache["mask"],)

    return fwd, bwd


@_op("softmax_cross_entropy")
def _softmax_ce():
    """Summed -log softmax(logits)[i, y_i] over the labeled rows."""

    def fwd(v, attrs, cache):
        logits = v[0]
        idx, y = attrs["index"], attrs["labels"]
        logp = linalg.log_softmax(logits[idx])
        cache["logp"] = logp
        return np.array([[-logp[np.arange(len(idx)), y].sum()]])

    def bwd(g, v, out, attrs, cache, needs):
        idx, y = attrs["index"], attrs["labels"]
        local = np.exp(cache["logp"])
        local[np.arange(len(idx)), y] -= 1.0
        ga = np.zeros_like(v[0])
        np.add.at(ga, idx, local * g[0, 0])
        return (ga,)

    return fwd, bwd


class Tape:
    """Ordered record of one forward computation."""

    def __init__(self):
        self.nodes: list[Node] = []

    def constant(self, value, name: str | None = None) -> Variable:
        return Variable(value, trainable=False, name=name)

    def record(self, op: str, *inputs: Variable, **attrs) -> Variable:
        if op not in _FORWARD:
            raise ContractError(f"unsupported op {op!r}")
        for x in inputs:
            if not isinstance(x, Variable):
                raise ContractError(f"{op}: inputs must be Variables, got {type(x).__name__}")
        node = Node(out=None, op=op, inputs=tuple(inputs), attrs=attrs)
        value = _FORWARD[op]([x.value for x in inputs], attrs, node.cache)
        out = Variable(linalg.check_finite(np.asarray(value, dtype=np.float64), op))
        out.requires_grad = any(x.requires_grad for x in inputs)
        out.tape = self
        node.out = out
        self.nodes.append(node)
        return out

    def backward(self, loss: Variable, wrt=None) -> dict[Variable, Tensor]:
        """Propagate d(loss)/d(.) to every trainable leaf.

        Gradients are recomputed from scratch on each call. Returns a map from
        trainable leaf to gradient; leaves listed in ``wrt`` that the loss
        does not reach get zeros.
        """
        if loss.shape != (1, 1):
            raise ContractError(f"loss must be 1x1, got {loss.shape}")
        grads: dict[int, Tensor] = {id(loss): np.ones((1, 1))}
        leaves: dict[int, Variable] = {}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            needs = tuple(x.requires_grad for x in node.inputs)
            if not any(needs):
                continue
            values = [x.value for x in node.inputs]
            local = _BACKWARD[node.op](g, values, node.out.value, node.attrs, node.cache, needs)
            for x, need, gx in zip(node.inputs, needs, local):
                if not need or gx is None:
                    continue
                key = id(x)
                if key in grads:
                    grads[key] = grads[key] + gx
                else:
                    grads[key] = gx
                if x.tape is not self and x.trainable:
                    leaves[key] = x
        result: dict[Variable, Tensor] = {}
        for key, x in leaves.items():
            x.grad = grads[key]
            result[x] = x.grad
        for x in wrt or ():
            if x not in result:
                x.grad = np.zeros_like(x.value)
                result[x] = x.grad
        return result


def numerical_gradient(loss_fn: Callable[[], float], param: Variable, h: float = 1e-5) -> Tensor:
    """Central finite differences of ``loss_fn`` w.r.t. every entry of ``param``."""
    out = np.zeros_like(param.value)
    it = np.nditer(param.value, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = param.value[i]
        param.value[i] = orig + h
        up = loss_fn()
        param.value[i] = orig - h
        down = loss_fn()
        param.value[i] = orig
        out[i] = (up - down) / (2.0 * h)
    return out


def relative_error(analytic: Tensor, numeric: Tensor, floor: float = 1e-6) -> Tensor:
    """Entrywise |a - n| / max(|a|, |n|, floor)."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom
