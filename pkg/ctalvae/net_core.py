"""
Net Core - differentiable building blocks

Parameter store, LSTM cell, affine layer, Adam optimizer and a
finite-difference gradient checker. Every forward op returns a cache and
has a backward companion that accumulates parameter gradients into the
store; arithmetic is float64 throughout.
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Tuple

import numpy as np

from .errors import DataValidationError, GradientCheckError, SchemaMismatchError

# Gate order inside the fused LSTM weight columns
GATES = ("input", "forget", "output", "candidate")


@dataclass(eq=False)
class Parameter:
    """One named array with its gradient and owning group"""
    name: str
    value: np.ndarray
    grad: np.ndarray
    group: str


class ParameterStore:
    """
    Named float64 arrays grouped for freeze control

    Insertion order is the canonical order used by the optimizer and by
    checkpoint serialization.
    """

    def __init__(self):
        self._params: Dict[str, Parameter] = {}
        self._trainable: Dict[str, bool] = {}

    def add(self, name: str, value: np.ndarray, group: str) -> np.ndarray:
        """
        Register a parameter

        Args:
            name: Unique dotted name
            value: Initial values (copied as float64)
            group: Freeze group; new groups start trainable

        Returns:
            The stored value array
        """
        if name in self._params:
            raise DataValidationError(f"parameter {name!r} already exists")
        value = np.array(value, dtype=np.float64)
        self._params[name] = Parameter(name, value, np.zeros_like(value), group)
        self._trainable.setdefault(group, True)
        return value

    def __getitem__(self, name: str) -> np.ndarray:
        return self._params[name].value

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def grad(self, name: str) -> np.ndarray:
        return self._params[name].grad

    def names(self, group: Optional[str] = None) -> List[str]:
        return [p.name for p in self._params.values() if group is None or p.group == group]

    def groups(self) -> List[str]:
        return list(self._trainable)

    def group_of(self, name: str) -> str:
        return self._params[name].group

    def is_trainable(self, group: str) -> bool:
        return self._trainable[group]

    def set_trainable(self, group: str, trainable: bool) -> None:
        if group not in self._trainable:
            raise DataValidationError(f"unknown parameter group {group!r}")
        self._trainable[group] = trainable

    def zero_grad(self) -> None:
        for param in self._params.values():
            param.grad.fill(0.0)

    def copy(self) -> 'ParameterStore':
        """Deep copy of values, gradients and flags"""
        clone = ParameterStore()
        for param in self._params.values():
            clone._params[param.name] = Parameter(param.name, param.value.copy(), param.grad.copy(), param.group)
        clone._trainable = dict(self._trainable)
        return clone

    def group_bytes(self, group: str) -> bytes:
        """Little-endian float32 bytes of one group, in store order"""
        return b"".join(
            p.value.astype('<f4').tobytes()
            for p in self._params.values() if p.group == group
        )


@dataclass(eq=False)
class LstmState:
    """Hidden and cell state, shape (H,) or (N, H)"""
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden: int, batch: Optional[int] = None) -> 'LstmState':
        shape = (hidden,) if batch is None else (batch, hidden)
        return cls(np.zeros(shape), np.zeros(shape))


@dataclass(eq=False)
class LstmCache:
    """Forward values needed by lstm_step_backward"""
    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    o: np.ndarray
    g: np.ndarray
    tanh_c: np.ndarray


def uniform_init(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    """Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]"""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_lstm(store: ParameterStore, prefix: str, input_size: int, hidden: int,
              rng: np.random.Generator, group: str) -> None:
    """Register fused LSTM weights {prefix}.W_x (D,4H), {prefix}.W_h (H,4H), {prefix}.b (4H)"""
    store.add(f"{prefix}.W_x", uniform_init(rng, (input_size, 4 * hidden), input_size), group)
    store.add(f"{prefix}.W_h", uniform_init(rng, (hidden, 4 * hidden), hidden), group)
    store.add(f"{prefix}.b", np.zeros(4 * hidden), group)


def init_affine(store: ParameterStore, prefix: str, in_dim: int, out_dim: int,
                rng: np.random.Generator, group: str, identity: bool = False) -> None:
    """Register {prefix}.W (out, in) and {prefix}.b (out)"""
    if identity:
        if in_dim != out_dim:
            raise DataValidationError(f"identity init needs a square map, got {in_dim}->{out_dim}")
        weight = np.eye(in_dim)
    else:
        weight = uniform_init(rng, (out_dim, in_dim), in_dim)
    store.add(f"{prefix}.W", weight, group)
    store.add(f"{prefix}.b", np.zeros(out_dim), group)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def lstm_step(store: ParameterStore, prefix: str, state: LstmState,
              x_t: np.ndarray) -> Tuple[LstmState, LstmCache]:
    """
    One LSTM cell step (sigmoid input/forget/output gates, tanh candidate)

    Args:
        store: Parameter store holding {prefix}.W_x, W_h, b
        prefix: Cell name
        state: Previous (h, c)
        x_t: Input, shape (D,) or (N, D)

    Returns:
        New state and the cache for the backward pass
    """
    w_x = store[f"{prefix}.W_x"]
    w_h = store[f"{prefix}.W_h"]
    hidden = w_h.shape[0]
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.shape[-1] != w_x.shape[0]:
        raise SchemaMismatchError(f"lstm {prefix} input size", w_x.shape[0], x_t.shape[-1])
    if state.h.shape[-1] != hidden:
        raise SchemaMismatchError(f"lstm {prefix} hidden size", hidden, state.h.shape[-1])

    a = x_t @ w_x + state.h @ w_h + store[f"{prefix}.b"]
    i = _sigmoid(a[..., :hidden])
    f = _sigmoid(a[..., hidden:2 * hidden])
    o = _sigmoid(a[..., 2 * hidden:3 * hidden])
    g = np.tanh(a[..., 3 * hidden:])

    c = f * state.c + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    return LstmState(h, c), LstmCache(x_t, state.h, state.c, i, f, o, g, tanh_c)


def lstm_step_backward(store: ParameterStore, prefix: str, cache: LstmCache,
                       dh: np.ndarray, dc: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Backward of lstm_step; accumulates into the store gradients

    Args:
        dh, dc: Upstream gradients w.r.t. the step's output h and c

    Returns:
        (dx, dh_prev, dc_prev)
    """
    do = dh * cache.tanh_c
    dc = dc + dh * cache.o * (1.0 - cache.tanh_c ** 2)
    di = dc * cache.g
    dg = dc * cache.i
    df = dc * cache.c_prev
    dc_prev = dc * cache.f

    da = np.concatenate([
        di * cache.i * (1.0 - cache.i),
        df * cache.f * (1.0 - cache.f),
        do * cache.o * (1.0 - cache.o),
        dg * (1.0 - cache.g ** 2),
    ], axis=-1)

    w_x = store[f"{prefix}.W_x"]
    w_h = store[f"{prefix}.W_h"]
    da2 = da.reshape(-1, da.shape[-1])
    store.grad(f"{prefix}.W_x")[...] += cache.x.reshape(-1, w_x.shape[0]).T @ da2
    store.grad(f"{prefix}.W_h")[...] += cache.h_prev.reshape(-1, w_h.shape[0]).T @ da2
    store.grad(f"{prefix}.b")[...] += da2.sum(axis=0)

    return da @ w_x.T, da @ w_h.T, dc_prev


def affine(store: ParameterStore, prefix: str, x: np.ndarray) -> np.ndarray:
    """
    Wx + b over the last axis

    Args:
        store: Parameter store holding {prefix}.W (out, in) and {prefix}.b
        x: Input, shape (..., in)

    Returns:
        Output, shape (..., out)
    """
    weight = store[f"{prefix}.W"]
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != weight.shape[1]:
        raise SchemaMismatchError(f"affine {prefix} input size", weight.shape[1], x.shape[-1])
    return x @ weight.T + store[f"{prefix}.b"]


def affine_backward(store: ParameterStore, prefix: str, x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Backward of affine; returns dx and accumulates dW, db"""
    weight = store[f"{prefix}.W"]
    dy2 = dy.reshape(-1, weight.shape[0])
    store.grad(f"{prefix}.W")[...] += dy2.T @ np.asarray(x).reshape(-1, weight.shape[1])
    store.grad(f"{prefix}.b")[...] += dy2.sum(axis=0)
    return dy @ weight


@dataclass
class OptimizerState:
    """Adam moments and hyper-parameters"""
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(opt: OptimizerState, store: ParameterStore) -> OptimizerState:
    """
    Bias-corrected Adam update of the trainable groups, then zero all gradients

    Frozen groups are left untouched (no arithmetic is applied to them).
    """
    opt.step += 1
    correction1 = 1.0 - opt.beta1 ** opt.step
    correction2 = 1.0 - opt.beta2 ** opt.step

    for param in store:
        if not store.is_trainable(param.group):
            continue
        m = opt.m.setdefault(param.name, np.zeros_like(param.value))
        v = opt.v.setdefault(param.name, np.zeros_like(param.value))
        m *= opt.beta1
        m += (1.0 - opt.beta1) * param.grad
        v *= opt.beta2
        v += (1.0 - opt.beta2) * param.grad ** 2
        param.value -= opt.lr * (m / correction1) / (np.sqrt(v / correction2) + opt.eps)

    store.zero_grad()
    return opt


def grad_check(
    fn: Callable[[ParameterStore], float],
    store: ParameterStore,
    samples: int = 100,
    h: float = 1e-5,
    seed: int = 0,
    floor: float = 1e-5,
    names: Optional[List[str]] = None
) -> float:
    """
    Compare analytic gradients with central differences

    Args:
        fn: Evaluates the loss and accumulates its gradient into the store
        store: Parameters to check (restored afterwards)
        samples: Number of random coordinates
        h: Finite-difference step
        seed: Coordinate sampling seed
        floor: Lower bound on the relative-error denominator
        names: Restrict the check to these parameters

    Returns:
        Worst |analytic - numeric| / max(|numeric|, floor)
    """
    names = names or store.names()
    store.zero_grad()
    base = fn(store)
    if not np.isfinite(base):
        raise GradientCheckError(f"non-finite loss {base!r} at the base point")
    analytic = {name: store.grad(name).copy() for name in names}
    store.zero_grad()

    sizes = np.array([store[name].size for name in names])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    flat = rng.choice(total, size=min(samples, total), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    worst = 0.0
    for k in np.sort(flat):
        idx = int(np.searchsorted(offsets, k, side='right') - 1)
        name, coord = names[idx], int(k - offsets[idx])
        values = store[name].reshape(-1)
        original = values[coord]

        values[coord] = original + h
        f_plus = fn(store)
        values[coord] = original - h
        f_minus = fn(store)
        values[coord] = original
        store.zero_grad()

        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise GradientCheckError(f"non-finite loss probing {name}[{coord}]")

        numeric = (f_plus - f_minus) / (2.0 * h)
        a = analytic[name].reshape(-1)[coord]
        worst = max(worst, abs(a - numeric) / max(abs(numeric), floor))

    return float(worst)
