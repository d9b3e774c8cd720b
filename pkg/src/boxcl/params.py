"""Named parameter collections.

A ParamStore maps string paths ("encoder.layer0.ffn.w1") to trainable
tensors. Iteration order is always lexicographic so that every consumer
(optimizer, Fisher estimation, region search, checkpointing) sees the
same deterministic ordering.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class ParamStore:
    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def replace(self, name: str, data: np.ndarray) -> Tensor:
        """Swap in a new array under an existing name (vocabulary extension)."""
        if name not in self._params:
            raise KeyError(name)
        t = Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self):
        for name in self.names():
            yield name, self._params[name]

    @property
    def total_count(self) -> int:
        """Total number of scalar parameters (M)."""
        return sum(t.data.size for t in self._params.values())

    def zero_grads(self) -> None:
        for t in self._params.values():
            t.grad = None

    def snapshot(self) -> dict[str, np.ndarray]:
        """Copy of all parameter values, usable as a frozen reference point."""
        return {name: t.data.copy() for name, t in self.items()}

    def load(self, state: dict[str, np.ndarray]) -> None:
        if sorted(state) != self.names():
            raise ValueError("parameter name mismatch on load")
        for name, arr in state.items():
            t = self._params[name]
            if t.data.shape != arr.shape:
                raise ValueError(f"shape mismatch for {name}: {t.data.shape} vs {arr.shape}")
            t.data = np.array(arr, dtype=np.float64)

    def copy(self) -> "ParamStore":
        other = ParamStore()
        for name, t in self.items():
            other.add(name, t.data.copy())
        return other
