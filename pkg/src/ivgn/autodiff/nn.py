"""Parameter containers and the handful of layers the model is assembled from."""

from __future__ import annotations

from typing import Iterator, Optional

import numpy as np

from ivgn.autodiff import functional as F
from ivgn.autodiff.tensor import Tensor, get_default_dtype


def parameter(data) -> Tensor:
    return Tensor(np.asarray(data, dtype=get_default_dtype()), requires_grad=True)


def xavier(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> Tensor:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return parameter(rng.uniform(-bound, bound, size=shape or (fan_in, fan_out)))


class Module:
    """Attribute-walking container.

    Parameters are ``Tensor`` attributes with ``requires_grad``; buffers are
    numpy arrays named in ``_buffer_names``.  Iteration follows attribute
    insertion order, so names and ordering are deterministic.
    """

    _buffer_names: tuple = ()
    training: bool = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
            elif isinstance(value, dict):
                for key, item in value.items():
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{key}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple]:
        for name in self._buffer_names:
            yield f"{prefix}{name}", getattr(self, name)
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Module):
                yield from value.named_buffers(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{full}.{i}.")
            elif isinstance(value, dict):
                for key, item in value.items():
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{full}.{key}.")

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            items = value.values() if isinstance(value, dict) else (
                value if isinstance(value, (list, tuple)) else (value,)
            )
            for item in items:
                if isinstance(item, Module):
                    yield from item.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update({name: b for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict) -> None:
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        expected = set(params) | set(buffers)
        missing = expected - set(state)
        unexpected = set(state) - expected
        if missing or unexpected:
            raise KeyError(
                f"state mismatch: missing {sorted(missing)}, unexpected {sorted(unexpected)}"
            )
        for name, p in params.items():
            _assign(name, p.data, state[name])
        for name, b in buffers.items():
            _assign(name, b, state[name])


def _assign(name: str, target: np.ndarray, value: np.ndarray) -> None:
    value = np.asarray(value)
    if value.shape != target.shape:
        raise ValueError(f"{name}: shape {value.shape} does not match {target.shape}")
    target[...] = value


class Linear(Module):
    def __init__(self, rng: np.random.Generator, in_dim: int, out_dim: int, bias: bool = True):
        self.weight = xavier(rng, in_dim, out_dim)
        self.bias = parameter(np.zeros(out_dim)) if bias else None

    def __call__(self, x) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class BatchNorm(Module):
    """BN over one feature axis; ``axis`` picks the normalized feature dimension."""

    _buffer_names = ("running_mean", "running_var")

    def __init__(self, features: int, axis: int = 1, eps: float = 1e-5, momentum: float = F.BN_MOMENTUM):
        dtype = get_default_dtype()
        self.gamma = parameter(np.ones(features))
        self.beta = parameter(np.zeros(features))
        self.running_mean = np.zeros(features, dtype=dtype)
        self.running_var = np.ones(features, dtype=dtype)
        self.axis = axis
        self.eps = eps
        self.momentum = momentum
        self.features = features

    def __call__(self, x) -> Tensor:
        return F.batch_norm(
            x,
            self.gamma,
            self.beta,
            axis=self.axis,
            eps=self.eps,
            training=self.training,
            running_mean=self.running_mean,
            running_var=self.running_var,
            momentum=self.momentum,
        )


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = parameter(np.ones(dim))
        self.beta = parameter(np.zeros(dim))
        self.eps = eps

    def __call__(self, x) -> Tensor:
        return F.layer_norm(x, self.gamma, self.beta, self.eps)


class Embedding(Module):
    def __init__(self, rng: np.random.Generator, num: int, dim: int, scale: float = 0.1):
        self.weight = parameter(rng.uniform(-scale, scale, size=(num, dim)))

    def __call__(self, ids) -> Tensor:
        return F.embedding_lookup(self.weight, ids)


class Dropout(Module):
    def __init__(self, rate: float, rng: Optional[np.random.Generator] = None):
        self.rate = rate
        self.rng = rng or np.random.default_rng(0)

    def __call__(self, x) -> Tensor:
        return F.dropout(x, self.rate, self.rng, training=self.training)
