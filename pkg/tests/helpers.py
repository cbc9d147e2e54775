"""Shared test utilities: the central finite-difference gradient oracle."""
from __future__ import annotations

import numpy as np

from evlight import tensor as T


def fd_gradcheck(build, leaves, h: float = 1e-5, tol: float = 1e-5,
                 floor: float = 1e-6) -> float:
    """Compare analytic gradients against central finite differences.

    ``build(*leaves)`` must rebuild the graph from the given leaf tensors
    and return a scalar Tensor. Every leaf with requires_grad is checked;
    the reported error is max over leaves of
    max|analytic - numeric| / max(max|analytic|, max|numeric|, floor).
    """
    for leaf in leaves:
        leaf.grad = None
    loss = build(*leaves)
    T.backward(loss)
    worst = 0.0
    for leaf in leaves:
        if not leaf.requires_grad:
            continue
        assert leaf.grad is not None, "leaf got no gradient"
        analytic = leaf.grad.copy()
        numeric = np.zeros_like(leaf.data)
        flat = leaf.data.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = build(*leaves).item()
            flat[i] = orig - h
            dn = build(*leaves).item()
            flat[i] = orig
            nflat[i] = (up - dn) / (2.0 * h)
        denom = max(float(np.max(np.abs(analytic))),
                    float(np.max(np.abs(numeric))), floor)
        err = float(np.max(np.abs(analytic - numeric))) / denom
        worst = max(worst, err)
        assert err < tol, f"gradient mismatch {err:.3e} (tol {tol:.1e})"
    return worst


def rand_tensor(rng: np.random.Generator, shape, scale: float = 0.5,
                requires_grad: bool = True) -> T.Tensor:
    return T.Tensor(rng.standard_normal(shape) * scale, requires_grad=requires_grad)
