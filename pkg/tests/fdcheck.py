"""Finite-difference gradient checking used across the test suite."""

import numpy as np


def finite_diff(loss_fn, tensor, flat_index, step=1e-5):
    """Central-difference derivative of loss_fn() w.r.t. one tensor entry."""
    flat = tensor.data.reshape(-1)
    orig = flat[flat_index]
    flat[flat_index] = orig + step
    hi = loss_fn()
    flat[flat_index] = orig - step
    lo = loss_fn()
    flat[flat_index] = orig
    return (hi - lo) / (2.0 * step)


def rel_err(analytic, numeric):
    return abs(analytic - numeric) / max(1.0, abs(numeric))


def check_gradients(loss_builder, named_params, rng, probes=20, step=1e-5, tol=1e-4):
    """Probe random parameter entries: analytic backward vs central differences.

    ``loss_builder`` must rebuild the loss from scratch on every call (the
    parameters are perturbed in place between calls).
    """
    loss = loss_builder()
    for _, p in named_params:
        p.grad = None
    loss.backward()
    grads = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for name, p in named_params}
    worst = 0.0
    for _ in range(probes):
        name, p = named_params[rng.integers(len(named_params))]
        idx = int(rng.integers(p.data.size))
        numeric = finite_diff(lambda: loss_builder().item(), p, idx, step)
        analytic = grads[name].reshape(-1)[idx]
        worst = max(worst, rel_err(analytic, numeric))
    return worst
