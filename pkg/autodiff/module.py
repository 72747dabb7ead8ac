"""Named parameter collections and the dense layer every network is built from."""

from typing import Dict, List, Mapping, Tuple

import numpy as np

from autodiff.tensor import Variable, VariableLike, as_variable, parameter
from utils.errors import CheckpointError


class Module:
    """Base class: parameters are discovered from public attributes.

    Attributes holding a Variable with ``requires_grad``, a Module, or a list of
    Modules are walked in definition order, which makes parameter names and
    their order stable across runs (checkpoints depend on it).
    """

    def named_parameters(self, prefix: str = "") -> List[Tuple[str, Variable]]:
        found: List[Tuple[str, Variable]] = []
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(value, Variable):
                if value.requires_grad:
                    found.append((name, value))
            elif isinstance(value, Module):
                found.extend(value.named_parameters(name + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        found.extend(item.named_parameters(f"{name}.{i}."))
        return found

    def parameters(self) -> List[Variable]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: Mapping[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        if strict:
            missing = sorted(set(own) - set(state))
            unexpected = sorted(set(state) - set(own))
            if missing or unexpected:
                raise CheckpointError(
                    f"parameter mismatch: missing={missing[:5]} unexpected={unexpected[:5]}"
                )
        for name, p in own.items():
            if name not in state:
                continue
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise CheckpointError(f"parameter {name}: shape {value.shape}, expected {p.shape}")
            p.value = np.array(value, dtype=np.float64, order="C")
            p.grad = None


class Linear(Module):
    """Dense layer ``x @ W + b`` on row batches.

    The bias is a (1, out) row tiled with a ones column so the op set stays
    within equal-shape broadcasting.
    """

    def __init__(self, in_dim: int, out_dim: int, rng, zero_init: bool = False, name: str = ""):
        self.in_dim = in_dim
        self.out_dim = out_dim
        if zero_init:
            w = np.zeros((in_dim, out_dim))
            b = np.zeros((1, out_dim))
        else:
            bound = 1.0 / np.sqrt(in_dim)
            w = rng.uniform(-bound, bound, size=(in_dim, out_dim))
            b = rng.uniform(-bound, bound, size=(1, out_dim))
        self.weight = parameter(w, name=f"{name}.weight" if name else "weight")
        self.bias = parameter(b, name=f"{name}.bias" if name else "bias")

    def __call__(self, x: VariableLike) -> Variable:
        x = as_variable(x)
        ones = np.ones((x.shape[0], 1))
        return x @ self.weight + ones @ self.bias


def tile_rows(row: VariableLike, n: int) -> Variable:
    """Repeat a (1, d) row n times: ``ones(n, 1) @ row``."""
    return np.ones((n, 1)) @ as_variable(row)
