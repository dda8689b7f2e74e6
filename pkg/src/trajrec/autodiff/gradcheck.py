"""Finite-difference gradient verification.

Central differences are the reference: every analytic gradient in the
package is expected to agree with them to high relative precision.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..errors import ContractError, DomainError
from .tensor import Tensor


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor,
               h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    `f` must map `x` to a scalar tensor and be twice differentiable at `x`.
    Relative error per component is |analytic - numeric| / max(1, |analytic|).
    `x.data` is perturbed in place and restored; other tensors captured by
    `f` are left untouched.
    """
    if not (1e-7 <= h <= 1e-3):
        raise DomainError(f"step h={h} outside [1e-7, 1e-3]")
    if not x.requires_grad:
        raise ContractError("grad_check target must have requires_grad set")

    x.grad = None
    out = f(x)
    if out.data.size != 1:
        raise ContractError(f"f must return a scalar, got shape {out.shape}")
    out.backward()
    if x.grad is None:
        raise ContractError("f does not depend on x (no gradient reached it)")
    analytic = x.grad.copy()

    flat = x.data.reshape(-1)
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = float(f(x).data.reshape(-1)[0])
        flat[i] = orig - h
        lo = float(f(x).data.reshape(-1)[0])
        flat[i] = orig
        numeric[i] = (hi - lo) / (2.0 * h)
    numeric = numeric.reshape(x.shape)

    denom = np.maximum(1.0, np.abs(analytic))
    return float(np.max(np.abs(analytic - numeric) / denom))
