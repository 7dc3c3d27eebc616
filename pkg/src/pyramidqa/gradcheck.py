"""Finite-difference validation of recorded gradients.

The relative error metric is
``|analytic - numeric| / max(1, |analytic|, |numeric|)`` which behaves
like an absolute error near zero and a relative error for large
gradients.  Central differences use a default step of 1e-4; callers
working in float32 should move to float64 first, the probe is otherwise
drowned in rounding noise.

Piecewise ops (max pooling, hinges, ELU at the origin) have kinks where
finite differences disagree with one-sided subgradients.  The harnesses
here accept a resampling callback so callers can redraw inputs away from
ties instead of chasing phantom failures.
"""

from __future__ import annotations

from typing import Callable, Dict, Iterable, Optional

import numpy as np

from . import tensor as T
from .errors import ContractError
from .tensor import Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return np.abs(analytic - numeric) / denom


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-4) -> float:
    """Max relative error between recorded and central-difference grads of f at x."""
    probe = Tensor(x.data.astype(np.float64), requires_grad=True)
    tape = T.Tape()
    with T.record(tape):
        out = f(probe)
    if not isinstance(out, Tensor) or out.shape != ():
        raise ContractError("grad_check target must return a scalar tensor")
    T.backward(out, tape)
    analytic = probe.grad if probe.grad is not None else np.zeros_like(probe.data)

    flat = probe.data.reshape(-1)
    numeric = np.zeros_like(flat)
    with T.no_tape():
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            hi = f(probe).item()
            flat[i] = keep - step
            lo = f(probe).item()
            flat[i] = keep
            numeric[i] = (hi - lo) / (2 * step)
    return float(relative_error(analytic.reshape(-1), numeric).max())


def grad_check_resampled(f, make_input: Callable[[int], Tensor], step: float = 1e-4,
                         tolerance: float = 1e-4, attempts: int = 5) -> float:
    """Retry grad_check on fresh inputs, for targets with measure-zero kinks.

    Returns the first error below ``tolerance``; if every attempt fails the
    smallest observed error is returned so callers still see the magnitude.
    """
    best = np.inf
    for attempt in range(attempts):
        err = grad_check(f, make_input(attempt), step)
        best = min(best, err)
        if err < tolerance:
            return err
    return best


def grad_check_groups(loss_fn: Callable[[], Tensor], params: Dict[str, Tensor],
                      step: float = 1e-4,
                      group_filter: Optional[Iterable[str]] = None) -> Dict[str, float]:
    """Check every named parameter of a zero-argument loss closure.

    One recorded backward pass supplies analytic gradients for all
    groups; finite differences then probe each coordinate of each group.
    ``loss_fn`` must be pure given the current parameter values.
    """
    names = list(params) if group_filter is None else [n for n in params if n in set(group_filter)]
    tape = T.Tape()
    for p in params.values():
        p.zero_grad()
    with T.record(tape):
        loss = loss_fn()
    if loss.shape != ():
        raise ContractError("grad_check_groups loss must be scalar")
    T.backward(loss, tape)

    errors: Dict[str, float] = {}
    with T.no_tape():
        for name in names:
            p = params[name]
            analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
            flat = p.data.reshape(-1)
            numeric = np.zeros(flat.size, dtype=np.float64)
            for i in range(flat.size):
                keep = flat[i]
                flat[i] = keep + step
                hi = loss_fn().item()
                flat[i] = keep - step
                lo = loss_fn().item()
                flat[i] = keep
                numeric[i] = (hi - lo) / (2 * step)
            errors[name] = float(relative_error(analytic.reshape(-1).astype(np.float64),
                                                numeric).max()) if flat.size else 0.0
    return errors
