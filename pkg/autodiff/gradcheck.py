"""Central finite-difference check of backward() gradients."""

import logging
from typing import Callable, Mapping, Sequence, Union

import numpy as np

from autodiff.tensor import Variable, no_grad
from utils.errors import GradientCheckError

logger = logging.getLogger(__name__)

Params = Union[Sequence[Variable], Mapping[str, Variable]]


def _scalar(out: Variable, where: str) -> float:
    value = out.item()
    if not np.isfinite(value):
        raise GradientCheckError(f"f is non-finite ({value}) {where}")
    return value


def check_gradients(f: Callable[[], Variable], params: Params, h: float = 1e-5) -> float:
    """Return max over elements of |g_ad - g_fd| / max(1, |g_fd|).

    ``f`` must rebuild its graph on every call and read the current
    ``.value`` of each parameter; it is evaluated 2 * size + 1 times.
    """
    if isinstance(params, Mapping):
        params = list(params.values())
    params = list(params)

    for p in params:
        p.grad = None
    out = f()
    _scalar(out, "at the base point")
    out.backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.value) for p in params]
    for p in params:
        p.grad = None

    worst = 0.0
    for p, g_ad in zip(params, analytic):
        base = p.value
        for i in range(base.size):
            shifted = base.copy()
            shifted.reshape(-1)[i] += h
            p.value = shifted
            with no_grad():
                f_plus = _scalar(f(), f"at +h on {p.name or 'param'}[{i}]")
            shifted = base.copy()
            shifted.reshape(-1)[i] -= h
            p.value = shifted
            with no_grad():
                f_minus = _scalar(f(), f"at -h on {p.name or 'param'}[{i}]")
            p.value = base

            g_fd = (f_plus - f_minus) / (2.0 * h)
            err = abs(g_ad.reshape(-1)[i] - g_fd) / max(1.0, abs(g_fd))
            worst = max(worst, err)

    logger.debug("gradient check over %d tensors: max relative error %.3e", len(params), worst)
    return worst
