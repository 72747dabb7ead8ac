"""Adam with bias correction, operating on named parameters."""

import logging
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

from autodiff.tensor import Variable
from utils.errors import CheckpointError

logger = logging.getLogger(__name__)


class Adam:
    def __init__(
        self,
        named_params: Sequence[Tuple[str, Variable]],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.params: List[Tuple[str, Variable]] = list(named_params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: Dict[str, np.ndarray] = {n: np.zeros_like(p.value) for n, p in self.params}
        self.v: Dict[str, np.ndarray] = {n: np.zeros_like(p.value) for n, p in self.params}

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None

    def grad_norm(self) -> float:
        total = 0.0
        for _, p in self.params:
            if p.grad is not None:
                total += float(np.sum(p.grad * p.grad))
        return float(np.sqrt(total))

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params:
            # parameters outside this step's graph (e.g. an unused head) keep their moments
            if p.grad is None:
                continue
            g = p.grad
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            update = self.lr * (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)
            p.value = p.value - update

    def state_dict(self) -> Dict[str, np.ndarray]:
        state: Dict[str, np.ndarray] = {"adam.t": np.array([float(self.t)])}
        for name, _ in self.params:
            state[f"adam.m.{name}"] = self.m[name].copy()
            state[f"adam.v.{name}"] = self.v[name].copy()
        return state

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        if "adam.t" not in state:
            raise CheckpointError("optimizer state lacks the step counter")
        self.t = int(np.asarray(state["adam.t"]).reshape(-1)[0])
        for name, p in self.params:
            for prefix, table in (("adam.m.", self.m), ("adam.v.", self.v)):
                key = prefix + name
                if key not in state:
                    raise CheckpointError(f"optimizer state missing {key}")
                value = np.asarray(state[key], dtype=np.float64)
                if value.shape != p.shape:
                    raise CheckpointError(f"{key}: shape {value.shape}, expected {p.shape}")
                table[name] = value.copy()
        logger.debug("Restored Adam state at step %d for %d tensors", self.t, len(self.params))
