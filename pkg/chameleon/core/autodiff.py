from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Tuple, Union

import numpy as np

from chameleon.core.errors import ContractError, DimensionError

# =================================================================================================
# TOUR HEADER: Reverse-Mode Autodiff
# =================================================================================================
#
# JOB:
# The smallest differentiation engine that covers every layer of the model: matrix product,
# bias, ReLU, row softmax and cross-entropy, all over dense 2-D float64 grids.
#
# HOW IT WORKS:
# - Every op returns a new Tensor that remembers its parents and a closure that pushes the
#   upstream gradient back into them (the micrograd pattern, lifted from scalars to grids).
# - backward(loss) topologically sorts the recorded graph and runs the closures in reverse.
# - Only nodes that can reach a parameter carry gradients; constant inputs (task blocks) are
#   skipped entirely.
#
# KEY CONCEPTS:
# - ParamStore: named parameter grids. Gradients ACCUMULATE across backward calls until
#   zero_grad() is called, so a training loop must reset them explicitly.
# - Fused softmax cross-entropy: when the prediction fed to cross_entropy came straight out of
#   softmax_rows, the gradient (pred - target) / n is written to the logits directly.
#
# THREADING:
# A ParamStore and the graph built on it belong to one thread. Parallel episodes work on
# clone()d stores.
#
# =================================================================================================

GridLike = Union["Tensor", np.ndarray, list, float, int]


class Tensor:
    """A 2-D value grid that records how it was produced."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, parents: Tuple["Tensor", ...] = (), op: str = "", requires_grad: bool = False):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim == 0:
            data = data.reshape(1, 1)
        elif data.ndim == 1:
            data = data.reshape(1, -1)
        elif data.ndim != 2:
            raise DimensionError(f"Value grids are 2-D, got shape {data.shape}")
        self.data = data
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self.grad = np.zeros_like(data) if requires_grad else None
        self._parents = parents
        self._backward: Callable[[], None] = lambda: None
        self._op = op

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise ContractError(f"item() needs a 1x1 grid, got {self.data.shape}")
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op or 'leaf'})"


# The grid type of the model's data flow.
ValueGrid = Tensor


def as_tensor(x: GridLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        t.grad += g


# --- Operations ---

def matmul(a: GridLike, b: GridLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.cols != b.rows:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data, (a, b), "matmul")

    def _backward():
        if a.requires_grad:
            a.grad += out.grad @ b.data.T
        if b.requires_grad:
            b.grad += a.data.T @ out.grad
    out._backward = _backward
    return out


def transpose(a: GridLike) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.T, (a,), "transpose")

    def _backward():
        _accumulate(a, out.grad.T)
    out._backward = _backward
    return out


def add_bias(a: GridLike, bias: GridLike) -> Tensor:
    """Adds a 1 x cols bias row to every row of `a`."""
    a, bias = as_tensor(a), as_tensor(bias)
    if bias.shape != (1, a.cols):
        raise DimensionError(f"bias shape {bias.shape} does not match {a.shape}")
    out = Tensor(a.data + bias.data, (a, bias), "add_bias")

    def _backward():
        _accumulate(a, out.grad)
        _accumulate(bias, out.grad.sum(axis=0, keepdims=True))
    out._backward = _backward
    return out


def linear(x: GridLike, weight: Tensor, bias: Tensor) -> Tensor:
    """x @ weight.T + bias, with weight stored as (out, in)."""
    return add_bias(matmul(x, transpose(weight)), bias)


def relu(a: GridLike) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.maximum(a.data, 0.0), (a,), "relu")

    def _backward():
        _accumulate(a, out.grad * (a.data > 0))
    out._backward = _backward
    return out


def softmax_rows(a: GridLike) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)
    out = Tensor(p, (a,), "softmax")

    def _backward():
        if a.requires_grad:
            dot = (out.grad * p).sum(axis=1, keepdims=True)
            a.grad += p * (out.grad - dot)
    out._backward = _backward
    return out


def cross_entropy(pred: GridLike, target_onehot: GridLike) -> Tensor:
    """
    Mean over rows of -log(pred at the target index). Returns a 1x1 Tensor.

    `pred` rows must be probability vectors. If `pred` is the output of softmax_rows the
    gradient bypasses the softmax Jacobian and lands on the logits as (pred - target) / n.
    """
    pred = as_tensor(pred)
    target = np.asarray(target_onehot.data if isinstance(target_onehot, Tensor) else target_onehot,
                        dtype=np.float64)
    if target.ndim != 2 or pred.shape != target.shape:
        raise DimensionError(f"cross_entropy shape mismatch: {pred.shape} vs {target.shape}")
    n = pred.rows
    if n == 0:
        raise ContractError("cross_entropy of an empty block is undefined")

    picked = (pred.data * target).sum(axis=1)
    tiny = np.finfo(np.float64).tiny
    value = -np.log(np.maximum(picked, tiny)).mean()

    fused = pred._op == "softmax"
    logits = pred._parents[0] if fused else None
    parents = (logits,) if fused else (pred,)
    out = Tensor(value, parents, "cross_entropy")

    def _backward():
        upstream = out.grad[0, 0]
        if fused:
            _accumulate(logits, upstream * (pred.data - target) / n)
        elif pred.requires_grad:
            pred.grad += upstream * (-target / np.maximum(picked, tiny)[:, None]) / n
    out._backward = _backward
    return out


def _topological_order(root: Tensor) -> List[Tensor]:
    order, visited = [], set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulates d(loss)/d(param) into the .grad of every reachable parameter."""
    if loss.data.shape != (1, 1):
        raise ContractError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return
    order = _topological_order(loss)
    # Intermediate nodes start from zero on every pass; leaves keep accumulating.
    for node in order:
        if node._parents:
            node.grad = np.zeros_like(node.data)
    loss.grad = np.ones_like(loss.data) if loss._parents else loss.grad + 1.0
    for node in reversed(order):
        node._backward()


# --- Initialization ---

def glorot_init(rows: int, cols: int, rng: np.random.Generator) -> Tensor:
    """Uniform Glorot grid: entries in [-sqrt(6/(rows+cols)), +sqrt(6/(rows+cols))]."""
    if rows <= 0 or cols <= 0:
        raise DimensionError(f"glorot_init needs positive dimensions, got {rows}x{cols}")
    bound = np.sqrt(6.0 / (rows + cols))
    return Tensor(rng.uniform(-bound, bound, size=(rows, cols)), requires_grad=True)


# --- Parameters ---

class ParamStore:
    """Named parameter grids, each with a co-shaped gradient accumulator."""

    def __init__(self, params: Optional[Dict[str, GridLike]] = None):
        self._params: Dict[str, Tensor] = {}
        for name, value in (params or {}).items():
            self.add(name, value)

    def add(self, name: str, value: GridLike) -> Tensor:
        data = value.data if isinstance(value, Tensor) else value
        t = Tensor(np.array(data, dtype=np.float64, copy=True), requires_grad=True)
        self._params[name] = t
        return t

    def attach(self, name: str, tensor: Tensor) -> None:
        """Shares an existing parameter tensor (no copy)."""
        self._params[name] = tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> List[str]:
        return list(self._params)

    def items(self) -> Iterable[Tuple[str, Tensor]]:
        return self._params.items()

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = np.zeros_like(t.data)

    def scale_grad(self, factor: float) -> None:
        for t in self._params.values():
            t.grad *= factor

    def values(self) -> Dict[str, np.ndarray]:
        """Copies of the current parameter values."""
        return {name: t.data.copy() for name, t in self._params.items()}

    def grads(self) -> Dict[str, np.ndarray]:
        return {name: t.grad.copy() for name, t in self._params.items()}

    def load(self, values: Dict[str, np.ndarray]) -> None:
        for name, value in values.items():
            if self._params[name].shape != np.shape(value):
                raise DimensionError(f"{name}: expected {self._params[name].shape}, got {np.shape(value)}")
            self._params[name].data = np.array(value, dtype=np.float64, copy=True)

    def clone(self) -> "ParamStore":
        twin = self.__class__.__new__(self.__class__)
        twin.__dict__.update(self.__dict__)
        twin._params = {}
        for name, t in self._params.items():
            twin.add(name, t.data)
        return twin

    def is_finite(self) -> bool:
        return all(np.isfinite(t.data).all() for t in self._params.values())


def merge(*stores: Optional[ParamStore]) -> ParamStore:
    """One store sharing the tensors of several (None entries are skipped)."""
    merged = ParamStore()
    for store in stores:
        if store is None:
            continue
        for name, t in store.items():
            merged.attach(name, t)
    return merged


# --- Optimizers ---

@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: ParamStore, state: AdamState, lr: float, names: Optional[Iterable[str]] = None) -> None:
    """
    One bias-corrected Adam update on `names` (default: every parameter).
    Gradients are left untouched; the caller resets them.
    """
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name in (params.names() if names is None else names):
        t = params[name]
        g = t.grad
        if name not in state.m:
            state.m[name] = np.zeros_like(t.data)
            state.v[name] = np.zeros_like(t.data)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        t.data = t.data - lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def sgd_step(params: ParamStore, lr: float, names: Optional[Iterable[str]] = None) -> None:
    for name in (params.names() if names is None else names):
        t = params[name]
        t.data = t.data - lr * t.grad
