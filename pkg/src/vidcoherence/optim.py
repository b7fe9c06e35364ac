"""Named parameter storage and the Adam optimizer with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor


@dataclass
class Param:
    tensor: Tensor
    trainable: bool = True


class ParamStore:
    """Named, namespaced parameter collection.

    Names are dotted, e.g. "encoder.conv1.weight"; the first segment is the
    namespace used for freezing and partial checkpoint loads.
    """

    def __init__(self):
        self._params: dict[str, Param] = {}

    def add(self, name: str, data: np.ndarray, trainable: bool = True) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(np.asarray(data), requires_grad=True)
        self._params[name] = Param(t, trainable)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name].tensor

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def namespaces(self) -> list[str]:
        return sorted({n.split(".", 1)[0] for n in self._params})

    def namespace_names(self, prefix: str) -> list[str]:
        pfx = prefix.rstrip(".") + "."
        return [n for n in self._params if n.startswith(pfx)]

    def set_trainable(self, prefix: str, trainable: bool) -> None:
        names = self.namespace_names(prefix)
        if not names:
            raise KeyError(f"no parameters under namespace {prefix!r}")
        for n in names:
            self._params[n].trainable = trainable

    def is_trainable(self, name: str) -> bool:
        return self._params[name].trainable

    def trainable_items(self):
        return [(n, p.tensor) for n, p in self._params.items() if p.trainable]

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.tensor.grad = None

    def num_values(self) -> int:
        return sum(p.tensor.data.size for p in self._params.values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {n: p.tensor.data for n, p in self._params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray], strict_shapes: bool = True) -> None:
        for n, arr in arrays.items():
            if n not in self._params:
                raise KeyError(f"unknown parameter {n!r}")
            cur = self._params[n].tensor
            if strict_shapes and cur.data.shape != arr.shape:
                raise ValueError(
                    f"shape mismatch for {n!r}: have {cur.data.shape}, got {arr.shape}")
            cur.data = np.asarray(arr, dtype=cur.data.dtype).reshape(cur.data.shape)

    def astype(self, dtype) -> "ParamStore":
        other = ParamStore()
        for n, p in self._params.items():
            other.add(n, p.tensor.data.astype(dtype), p.trainable)
        return other


# -- initializers ---------------------------------------------------------


def kaiming_uniform(rng: np.random.Generator, shape: tuple[int, ...],
                    fan_in: int, dtype=np.float32) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def normal_init(rng: np.random.Generator, shape: tuple[int, ...],
                std: float = 0.02, dtype=np.float32) -> np.ndarray:
    return (rng.standard_normal(shape) * std).astype(dtype)


# -- optimizer ------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


class Adam:
    """Adam with decoupled weight decay; frozen parameters are never touched."""

    def __init__(self, store: ParamStore, lr: float = 5e-4,
                 betas: tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 1e-4):
        self.store = store
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.state = AdamState()

    def zero_grad(self) -> None:
        self.store.zero_grad()

    def step(self) -> None:
        self.state.step += 1
        t = self.state.step
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** t
        bc2 = 1.0 - b2 ** t
        for name, tensor in self.store.trainable_items():
            g = tensor.grad
            if g is None:
                continue
            if g.shape != tensor.data.shape:
                raise ValueError(
                    f"grad shape {g.shape} != param shape {tensor.data.shape} for {name!r}")
            m = self.state.m.get(name)
            if m is None:
                m = np.zeros_like(tensor.data)
                self.state.m[name] = m
                self.state.v[name] = np.zeros_like(tensor.data)
            v = self.state.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                tensor.data = tensor.data - self.lr * (update + self.weight_decay * tensor.data)
            else:
                tensor.data = tensor.data - self.lr * update
