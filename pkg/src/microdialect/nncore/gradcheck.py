from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Parameter, Tensor


class NonFiniteLoss(ArithmeticError):
    pass


def grad_check(params: Sequence[Parameter], loss_fn: Callable[[], Tensor], eps: float = 1e-5,
               max_coords: int | None = None, rng: np.random.Generator | None = None,
               floor: float = 1e-6) -> float:
    """Max relative error between tape gradients and central differences.

    ``loss_fn`` must be deterministic (dropout off) and evaluated in 64-bit.
    With ``max_coords`` set, a seeded sample of coordinates is checked,
    spread so that every parameter contributes at least one. Relative error
    is ``|a - n| / max(|a|, |n|, floor)``.
    """
    params = list(params)
    for p in params:
        if p.data.dtype != np.float64:
            raise TypeError("grad_check needs 64-bit parameters")
        p.grad = None
    loss = loss_fn()
    if not np.isfinite(loss.data).all():
        raise NonFiniteLoss(float(loss.data))
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    coords = _select(params, max_coords, rng)
    worst = 0.0
    for pi, flat in coords:
        p = params[pi]
        view = p.data.reshape(-1)
        orig = view[flat]
        view[flat] = orig + eps
        up = float(loss_fn().data)
        view[flat] = orig - eps
        down = float(loss_fn().data)
        view[flat] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NonFiniteLoss(p.name)
        numeric = (up - down) / (2.0 * eps)
        a = analytic[pi].reshape(-1)[flat]
        err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
        worst = max(worst, err)
    for p in params:
        p.grad = None
    return worst


def _select(params, max_coords, rng):
    sizes = [p.data.size for p in params]
    if max_coords is None or max_coords >= sum(sizes):
        return [(i, j) for i, n in enumerate(sizes) for j in range(n)]
    if rng is None:
        rng = np.random.default_rng(0)
    per = max(1, max_coords // len(params))
    out = []
    for i, n in enumerate(sizes):
        k = min(n, per)
        out.extend((i, int(j)) for j in rng.choice(n, size=k, replace=False))
    return out
