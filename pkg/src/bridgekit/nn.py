"""Parameter containers built on the tape engine."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor


class Module:
    """Tracks named parameters; children register theirs under a dotted prefix."""

    def __init__(self, prefix: str, dtype=T.DEFAULT_DTYPE):
        self.prefix = prefix
        self.dtype = dtype
        self._params: list[Parameter] = []
        self._children: list[Module] = []

    def param(self, name: str, data) -> Parameter:
        p = Parameter(np.asarray(data, dtype=self.dtype), f"{self.prefix}.{name}", dtype=self.dtype)
        self._params.append(p)
        return p

    def child(self, module: "Module") -> "Module":
        self._children.append(module)
        return module

    def parameters(self) -> list[Parameter]:
        out = list(self._params)
        for c in self._children:
            out.extend(c.parameters())
        return out

    def load_state(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        for p in self.parameters():
            if p.name in state:
                arr = np.asarray(state[p.name], dtype=p.data.dtype)
                if arr.shape != p.shape:
                    raise ValueError(f"{p.name}: checkpoint shape {arr.shape} != {p.shape}")
                p.data = arr.copy()
            elif strict:
                raise KeyError(f"missing parameter {p.name}")


class Linear(Module):
    def __init__(self, prefix, d_in, d_out, rng, bias=True, zero=False, dtype=T.DEFAULT_DTYPE):
        super().__init__(prefix, dtype)
        if zero:
            w = np.zeros((d_in, d_out))
        else:
            w = rng.normal(0.0, 1.0 / np.sqrt(d_in), size=(d_in, d_out))
        self.w = self.param("w", w)
        self.b = self.param("b", np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.w, self.b)


class MLP(Module):
    """Two linear maps with a ReLU between them."""

    def __init__(self, prefix, d_in, d_hidden, d_out, rng, dtype=T.DEFAULT_DTYPE):
        super().__init__(prefix, dtype)
        self.fc1 = self.child(Linear(f"{prefix}.fc1", d_in, d_hidden, rng, dtype=dtype))
        self.fc2 = self.child(Linear(f"{prefix}.fc2", d_hidden, d_out, rng, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.relu(self.fc1(x)))


class LayerNorm(Module):
    def __init__(self, prefix, dim, dtype=T.DEFAULT_DTYPE):
        super().__init__(prefix, dtype)
        self.gamma = self.param("gamma", np.ones(dim))
        self.beta = self.param("beta", np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta)
