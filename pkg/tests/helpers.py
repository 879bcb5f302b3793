"""Shared test utilities: model factories, random batches, and an
independent central finite-difference oracle for gradient audits."""

from __future__ import annotations

import numpy as np
import torch

from collabadv.core import Architecture, Classifier, LabeledBatch

FD_H = 1e-5
FD_RTOL = 1e-4


def small_mlp(seed=0, d=3, classes=3, hidden=(8,)) -> Classifier:
    return Classifier(Architecture("mlp", (d,), classes, hidden), seed=seed)


def linear_model(weights, bias=None) -> Classifier:
    """A bare linear classifier with explicit parameter values."""
    weights = np.asarray(weights, dtype=np.float64)
    c, d = weights.shape
    model = Classifier(Architecture("mlp", (d,), c, ()), seed=0)
    model.load_state_arrays({
        "0.weight": weights,
        "0.bias": np.zeros(c) if bias is None else np.asarray(bias, dtype=np.float64),
    })
    return model


def random_batch(seed, batch=4, shape=(3,), classes=3, margin=0.0) -> LabeledBatch:
    """Inputs uniform in [margin, 1 - margin], random labels."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(margin, 1.0 - margin, size=(batch,) + tuple(shape))
    y = rng.integers(0, classes, size=batch)
    return LabeledBatch(x, y, classes)


def central_difference(f, tensor: torch.Tensor, index, h=FD_H) -> float:
    """(f(x+h) - f(x-h)) / 2h at one coordinate, restoring the tensor."""
    orig = tensor.data[index].item()
    try:
        with torch.no_grad():
            tensor.data[index] = orig + h
        plus = float(f().detach())
        with torch.no_grad():
            tensor.data[index] = orig - h
        minus = float(f().detach())
    finally:
        with torch.no_grad():
            tensor.data[index] = orig
    return (plus - minus) / (2.0 * h)


def random_index(rng: np.random.Generator, tensor: torch.Tensor):
    return tuple(int(rng.integers(0, s)) for s in tensor.shape)


def grad_matches_fd(analytic: float, fd: float, rtol=FD_RTOL) -> bool:
    scale = max(abs(analytic), abs(fd))
    if scale < 1e-6:
        # Both essentially zero: compare absolutely at FD noise level.
        return abs(analytic - fd) < 1e-7
    return abs(analytic - fd) / scale <= rtol


def audit_gradients(f, leaves, n_probes, seed, rtol=FD_RTOL):
    """Compare autograd against central differences on random coordinates.

    ``f`` rebuilds the scalar loss from scratch; ``leaves`` are the
    tensors (parameters or inputs) whose gradients are audited. Returns
    the number of probes checked; raises AssertionError on mismatch.
    """
    rng = np.random.default_rng(seed)
    value = f()
    grads = torch.autograd.grad(value, leaves, allow_unused=True)
    checked = 0
    probes_per_leaf = max(1, n_probes // len(leaves))
    for leaf, grad in zip(leaves, grads):
        for _ in range(probes_per_leaf):
            idx = random_index(rng, leaf)
            analytic = 0.0 if grad is None else float(grad[idx])
            fd = central_difference(f, leaf, idx)
            assert grad_matches_fd(analytic, fd, rtol), (
                f"gradient mismatch at {idx}: autograd {analytic!r} vs finite difference {fd!r}"
            )
            checked += 1
    return checked
