"""Independent oracles used to cross-check the library implementations."""

import numpy as np
import torch


def brute_force_macro_f1(y_true, y_pred, num_classes):
    """Reference macro F1 via an explicit confusion matrix (rows=true, cols=pred)."""
    cm = [[0] * num_classes for _ in range(num_classes)]
    for t, p in zip(y_true, y_pred):
        cm[int(t)][int(p)] += 1
    total = 0.0
    for c in range(num_classes):
        tp = cm[c][c]
        fp = sum(cm[r][c] for r in range(num_classes)) - tp
        fn = sum(cm[c][r] for r in range(num_classes)) - tp
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        total += 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return total / num_classes


def finite_difference_gradients(loss_fn, tensors, eps=1e-6):
    """Central-difference gradient of loss_fn() w.r.t. each tensor, coordinate by coordinate.

    loss_fn must be a pure function of the tensors' current values; tensors are
    perturbed in place and restored. Use float64 tensors.
    """
    grads = []
    with torch.no_grad():
        for t in tensors:
            g = torch.zeros_like(t)
            flat, gflat = t.view(-1), g.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                up = float(loss_fn())
                flat[i] = orig - eps
                down = float(loss_fn())
                flat[i] = orig
                gflat[i] = (up - down) / (2.0 * eps)
            grads.append(g)
    return grads


def max_gradient_error(analytic, numeric):
    """max_i |a_i - n_i| / max(1, |a_i|, |n_i|): relative above 1, absolute below."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = torch.clamp(torch.maximum(a.abs(), n.abs()), min=1.0)
        worst = max(worst, float(((a - n).abs() / denom).max()))
    return worst


def check_gradients(loss_fn, tensors, rtol=1e-4, eps=1e-6):
    """Assert autograd gradients of loss_fn() match central finite differences."""
    for t in tensors:
        t.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = [t.grad.clone() if t.grad is not None else torch.zeros_like(t)
                for t in tensors]
    numeric = finite_difference_gradients(loss_fn, tensors, eps=eps)
    err = max_gradient_error(analytic, numeric)
    assert err < rtol, f"gradient mismatch: max error {err:.3e} >= {rtol}"
    return err
