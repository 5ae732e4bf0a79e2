"""Finite-difference gradient checking against autograd.

The finite-difference side only ever calls the forward path, so it stays
an independent oracle for the backward implementation.
"""

from __future__ import annotations

import numpy as np
import torch

from fedstain.model import SmallConvNet, flatten_grads, load_params


def autograd_gradient(params, loss_builder):
    """Gradient of loss_builder(model) w.r.t. the flat parameter vector."""
    model = SmallConvNet(params.layout, dtype=torch.float64)
    load_params(model, params)
    model.zero_grad()
    loss = loss_builder(model)
    loss.backward()
    return float(loss.detach()), flatten_grads(model)


def loss_value(params, vector, loss_builder, model_cache={}):
    """Forward-only loss at an arbitrary parameter vector."""
    key = id(loss_builder), params.layout
    model = model_cache.get(key)
    if model is None:
        model = SmallConvNet(params.layout, dtype=torch.float64)
        model_cache[key] = model
    load_params(model, params.replace_vector(vector))
    with torch.no_grad():
        return float(loss_builder(model))


def finite_difference_gradient(params, loss_builder, h=1e-4, coords=None):
    """Central differences over the given coordinates (all by default)."""
    base = params.vector
    idx = np.arange(base.size) if coords is None else np.asarray(coords)
    grad = np.zeros(idx.size)
    for j, i in enumerate(idx):
        up = base.copy()
        up[i] += h
        down = base.copy()
        down[i] -= h
        grad[j] = (loss_value(params, up, loss_builder) - loss_value(params, down, loss_builder)) / (2 * h)
    return grad


def relative_errors(ad, fd, floor=1e-8):
    ad = np.asarray(ad)
    fd = np.asarray(fd)
    denom = np.maximum(np.maximum(np.abs(ad), np.abs(fd)), floor)
    return np.abs(ad - fd) / denom
