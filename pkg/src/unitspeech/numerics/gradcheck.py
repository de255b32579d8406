"""Finite-difference verification of tape gradients."""

import numpy as np

from ..exceptions import NonFiniteError
from .autodiff import Tape, Tensor


def _as_dict(params):
    if isinstance(params, dict):
        return {k: np.array(v, dtype=np.float64) for k, v in params.items()}, True
    return {"x": np.array(params, dtype=np.float64)}, False


def analytic_grads(fn, params):
    """Reverse-mode gradients of scalar ``fn`` at ``params`` (dict or array)."""
    values, is_dict = _as_dict(params)
    tensors = {k: Tensor(v, requires_grad=True) for k, v in values.items()}
    with Tape() as tape:
        loss = fn(tensors if is_dict else tensors["x"])
    if not np.isfinite(loss.data).all():
        raise NonFiniteError(f"function value is {loss.data}")
    tape.backward(loss)
    return {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in tensors.items()}


def grad_check(fn, params, step=1e-5, max_coords=None, seed=0, floor=1e-6):
    """Worst elementwise relative error between tape and central-difference gradients.

    ``fn`` maps a dict of :class:`Tensor` (or a single Tensor when ``params``
    is an array) to a scalar Tensor. The relative error of a coordinate is
    ``|a - n| / max(|a|, |n|, floor)``; the floor turns the test into an
    absolute one for gradients that are zero in exact arithmetic (e.g. a
    softmax shift direction), whose central differences are pure roundoff of
    order ``eps * |f| / step``. With ``max_coords`` set, that many
    coordinates per parameter are drawn at random; otherwise all are checked.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    values, is_dict = _as_dict(params)
    grads = analytic_grads(fn, params)
    rng = np.random.default_rng(seed)

    def evaluate():
        arg = {k: Tensor(v) for k, v in values.items()}
        out = fn(arg if is_dict else arg["x"])
        val = float(out.data)
        if not np.isfinite(val):
            raise NonFiniteError(f"function value is {val}")
        return val

    worst = 0.0
    for name, arr in values.items():
        flat = arr.reshape(-1)
        if max_coords is None or max_coords >= flat.size:
            coords = range(flat.size)
        else:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        ga = grads[name].reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + step
            up = evaluate()
            flat[i] = orig - step
            down = evaluate()
            flat[i] = orig
            num = (up - down) / (2 * step)
            a = ga[i]
            err = abs(a - num) / max(abs(a), abs(num), floor)
            worst = max(worst, err)
    return worst
