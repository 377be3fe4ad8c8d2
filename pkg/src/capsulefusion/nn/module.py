from __future__ import annotations

from typing import Iterator, Mapping

import numpy as np

from ..errors import ConfigMismatchError
from ..tensor import Tensor


class Module:
    """Container of named parameters, buffers and child modules."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._buffers: dict[str, np.ndarray] = {}
        self._children: dict[str, Module] = {}
        self.training = True
        self.frozen = False

    # --- registration ---
    def add_param(self, name: str, data: np.ndarray) -> Tensor:
        t = Tensor(data, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def add_buffer(self, name: str, data: np.ndarray) -> None:
        self._buffers[name] = data

    def add_child(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def buffer(self, name: str) -> np.ndarray:
        return self._buffers[name]

    def set_buffer(self, name: str, data: np.ndarray) -> None:
        self._buffers[name] = data

    # --- traversal ---
    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, "Module", str]]:
        for name in self._buffers:
            yield prefix + name, self, name
        for cname, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{cname}.")

    def modules(self) -> Iterator["Module"]:
        yield self
        for child in self._children.values():
            yield from child.modules()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    # --- state ---
    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        for name, owner, key in self.named_buffers():
            state[name] = owner._buffers[key]
        return state

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        expected = {name: p for name, p in self.named_parameters()}
        buffers = {name: (owner, key) for name, owner, key in self.named_buffers()}
        missing = sorted((set(expected) | set(buffers)) - set(state))
        unexpected = sorted(set(state) - set(expected) - set(buffers))
        if missing or unexpected:
            raise ConfigMismatchError(
                "state does not match model layout", missing=missing, unexpected=unexpected
            )
        for name, p in expected.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ConfigMismatchError(
                    f"{name}: stored shape {value.shape} != model shape {p.shape}", name=name
                )
            p.data = value.astype(p.dtype).copy()
        for name, (owner, key) in buffers.items():
            owner._buffers[key] = np.asarray(state[name]).astype(owner._buffers[key].dtype).copy()

    def astype(self, dtype) -> "Module":
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        for _, owner, key in self.named_buffers():
            owner._buffers[key] = owner._buffers[key].astype(dtype)
        return self

    # --- modes ---
    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode and not m.frozen
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def freeze(self, frozen: bool = True) -> "Module":
        """Stop gradient flow into this subtree and pin it to inference mode."""
        for m in self.modules():
            m.frozen = frozen
            for p in m._params.values():
                p.requires_grad = not frozen
            if frozen:
                m.training = False
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = np.zeros_like(p.data) if p.requires_grad else None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError
