"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, Dict, Optional, Sequence

import numpy as np

from ivgn.autodiff.tensor import Tensor, no_grad


SCALE_FLOOR = 1e-10
# multiples of the finite-difference round-off bound below which a gradient is
# treated as zero; a tensor sitting exactly at the floor is then certified to a
# relative error of about 1 / ROUNDOFF_MARGIN
ROUNDOFF_MARGIN = 1e4


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = SCALE_FLOOR) -> float:
    """Max-norm error scaled by the larger of the two gradients' max-norms.

    Elementwise ratios explode on near-zero entries where finite differences
    only carry round-off, so the scale is taken per tensor.  The scale never
    drops below ``floor``: a gradient that is exactly zero in theory (a
    softmax-invariant bias, say) comes back as ~1e-17 noise, and dividing
    noise by noise says nothing about correctness.
    """
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def numeric_grad(
    fn: Callable[[], Tensor],
    target: Tensor,
    h: float = 1e-5,
    indices: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """d fn() / d target by central differences, perturbing ``target.data`` in place."""
    flat = target.data.reshape(-1)
    out = np.zeros_like(flat)
    picks = range(flat.size) if indices is None else indices
    with no_grad():
        for i in picks:
            orig = flat[i]
            flat[i] = orig + h
            plus = float(fn().data.sum())
            flat[i] = orig - h
            minus = float(fn().data.sum())
            flat[i] = orig
            out[i] = (plus - minus) / (2.0 * h)
    return out.reshape(target.shape)


def check_gradients(
    fn: Callable[[], Tensor],
    tensors: Dict[str, Tensor],
    h: float = 1e-5,
    max_coords: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> Dict[str, float]:
    """Relative error of ``backward()`` against central differences, per named tensor.

    ``fn`` must rebuild the graph on every call and be deterministic (no
    dropout, no running-stat dependence).  Non-scalar outputs are summed.  With
    ``max_coords`` only a random subset of coordinates per tensor is compared.

    The relative-error floor is ``ROUNDOFF_MARGIN * eps * max(1, |f|) / h``:
    a central difference cannot resolve derivatives below ``eps * |f| / h``,
    so tensors whose true gradient vanishes are judged on absolute error.
    """
    for t in tensors.values():
        t.grad = None
    out = fn()
    total = out if out.size == 1 else out.sum()
    eps = np.finfo(np.float64).eps
    floor = max(SCALE_FLOOR, ROUNDOFF_MARGIN * eps * max(1.0, abs(total.item())) / h)
    total.backward()
    analytic = {name: (t.grad if t.grad is not None else np.zeros_like(t.data)).copy()
                for name, t in tensors.items()}
    errors = {}
    for name, t in tensors.items():
        indices = None
        if max_coords is not None and t.size > max_coords:
            rng = rng or np.random.default_rng(0)
            indices = np.sort(rng.choice(t.size, size=max_coords, replace=False))
        num = numeric_grad(fn, t, h, indices)
        ana = analytic[name]
        if indices is not None:
            num = num.reshape(-1)[indices]
            ana = ana.reshape(-1)[indices]
        errors[name] = relative_error(ana, num, floor)
    return errors
