"""Shared test helpers: finite-difference gradient checking and tiny configs."""

import numpy as np
import pytest

from vitforge import Tape, ViTConfig, backward


def finite_difference_grads(fn, tensors, h=1e-5):
    """Central finite differences of a scalar-valued fn over each tensor.

    `fn` recomputes the loss from the current tensor values; tensors are
    perturbed in place and restored.
    """
    out = []
    for t in tensors:
        fd = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        fd_flat = fd.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = fn().item()
            flat[i] = orig - h
            lm = fn().item()
            flat[i] = orig
            fd_flat[i] = (lp - lm) / (2.0 * h)
        out.append(fd)
    return out


def assert_grads_close(fn, tensors, h=1e-5, rel_tol=1e-4, abs_floor=1e-8):
    """Backward pass vs central finite differences, component by component.

    A component passes when the absolute error is below `abs_floor` or the
    relative error (against the larger magnitude) is below `rel_tol`.
    Returns the worst relative error among components over the floor.
    """
    tensors = list(tensors)
    with Tape() as tape:
        loss = fn()
    backward(tape, loss, params=tensors)
    analytic = [t.grad.copy() for t in tensors]
    numeric = finite_difference_grads(fn, tensors, h=h)
    worst = 0.0
    for t, g, fd in zip(tensors, analytic, numeric):
        err = np.abs(g - fd)
        denom = np.maximum(np.maximum(np.abs(g), np.abs(fd)), abs_floor)
        rel = err / denom
        bad = (err > abs_floor) & (rel >= rel_tol)
        assert not np.any(bad), (
            f"gradient mismatch: worst abs err {err.max():.3e}, "
            f"worst rel err {rel[err > abs_floor].max() if np.any(err > abs_floor) else 0:.3e}"
        )
        over_floor = err > abs_floor
        if np.any(over_floor):
            worst = max(worst, float(rel[over_floor].max()))
    return worst


@pytest.fixture
def tiny_cfg():
    """The desk-scale config used throughout: S=8, P=4, D=16, h=2, L=2, F=32."""
    return ViTConfig(image_size=8, patch_size=4, dim=16, depth=2, heads=2,
                     mlp_dim=32, num_classes=3)
