"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor

#: relative-error denominator floor, so exact zeros compare cleanly
_DENOM_FLOOR = 1e-12


def finite_diff_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor | np.ndarray,
    eps: float = 1e-5,
    samples: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``f`` must map a tensor to a scalar tensor and be deterministic.
    Coordinates are checked exhaustively unless ``samples`` limits them to a
    random subset. The relative error for each coordinate uses the
    denominator max(|analytic|, |numeric|, 1e-12).
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    base = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)

    leaf = Tensor(base.copy(), requires_grad=True)
    out = f(leaf)
    if out.data.size != 1:
        raise ValueError(f"f must be scalar-valued, got shape {out.data.shape}")
    out.backward()
    analytic = np.zeros_like(base) if leaf.grad is None else leaf.grad

    n = base.size
    if samples is not None and samples < n:
        rng = rng or np.random.default_rng(0)
        coords = rng.choice(n, size=samples, replace=False)
    else:
        coords = np.arange(n)

    flat = base.reshape(-1)
    worst = 0.0
    for idx in coords:
        saved = flat[idx]
        plus = base.copy()
        plus.reshape(-1)[idx] = saved + eps
        minus = base.copy()
        minus.reshape(-1)[idx] = saved - eps
        numeric = (f(Tensor(plus)).item() - f(Tensor(minus)).item()) / (2.0 * eps)
        ana = float(analytic.reshape(-1)[idx])
        denom = max(abs(ana), abs(numeric), _DENOM_FLOOR)
        worst = max(worst, abs(numeric - ana) / denom)
    return worst


def parameter_gradient_check(
    loss_fn: Callable[[], Tensor],
    params: Sequence[tuple[str, Tensor]],
    eps: float = 1e-5,
    samples: int = 200,
    rng: np.random.Generator | None = None,
) -> tuple[float, list[tuple[str, int, float]]]:
    """Check live model parameters by perturbing them in place.

    ``loss_fn`` must rebuild the forward graph on every call (the
    parameters feed it directly) and be deterministic. Returns the worst
    relative error plus one (name, flat index, error) record per sampled
    coordinate.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    params = list(params)
    rng = rng or np.random.default_rng(0)

    for _, p in params:
        p.grad = None
    loss = loss_fn()
    if loss.data.size != 1:
        raise ValueError(f"loss_fn must return a scalar, got shape {loss.data.shape}")
    loss.backward()

    sizes = np.array([p.data.size for _, p in params])
    total = int(sizes.sum())
    count = min(samples, total)
    chosen = rng.choice(total, size=count, replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    records: list[tuple[str, int, float]] = []
    worst = 0.0
    for flat in sorted(chosen):
        owner = int(np.searchsorted(offsets, flat, side="right") - 1)
        name, p = params[owner]
        idx = int(flat - offsets[owner])
        view = p.data.reshape(-1)
        saved = view[idx]
        view[idx] = saved + eps
        plus = loss_fn().item()
        view[idx] = saved - eps
        minus = loss_fn().item()
        view[idx] = saved
        numeric = (plus - minus) / (2.0 * eps)
        ana = 0.0 if p.grad is None else float(p.grad.reshape(-1)[idx])
        denom = max(abs(ana), abs(numeric), _DENOM_FLOOR)
        error = abs(numeric - ana) / denom
        records.append((name, idx, error))
        worst = max(worst, error)
    return worst, records
