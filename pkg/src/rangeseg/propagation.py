"""Per-class anisotropic scanline diffusion with learned three-way affinities.

One sweep propagates a hidden map scanline by scanline in one of four
directions; at each step a pixel blends its own input with the three
adjacent pixels of the previous scanline:

    h = (1 - sum(p)) * x + sum_j p_j * h_prev[offset_j]

Weights of neighbors outside the image are masked to zero, so with
nonnegative normalized affinities every output stays inside the convex
hull of the inputs. Classes never mix: each channel of the propagated map
diffuses independently under its own affinities.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .engine import Tensor, astensor, concat, maximum
from .engine.tensor import ShapeError, absolute, make_node, tensor_sum

#: neighbor offsets across the scan axis, in weight-channel order
OFFSETS = (-1, 0, 1)


class Direction(Enum):
    L2R = "left-to-right"
    R2L = "right-to-left"
    T2B = "top-to-bottom"
    B2T = "bottom-to-top"


DIRECTIONS = (Direction.L2R, Direction.R2L, Direction.T2B, Direction.B2T)


@dataclass
class AffinityField:
    """Neighbor weights of shape (..., 4, 3, C, H, W).

    Axis -5 indexes the four directions, axis -4 the three neighbor
    offsets. After normalization, |p| sums to at most 1 over the offset
    axis at every (direction, class, pixel).
    """

    weights: Tensor
    normalized: bool = False

    def __post_init__(self):
        shape = self.weights.shape
        if len(shape) < 5 or shape[-5] != len(DIRECTIONS) or shape[-4] != len(OFFSETS):
            raise ShapeError(
                f"affinity weights must be (..., 4, 3, C, H, W), got {shape}"
            )

    def direction_weights(self, direction: Direction) -> Tensor:
        index = DIRECTIONS.index(direction)
        return self.weights[..., index, :, :, :, :]


def normalize_affinities(raw: Tensor) -> AffinityField:
    """Scale weights so |p| sums to at most 1 over the offset axis.

    Each triple is divided by max(sum|raw|, 1), so already-stable triples
    pass through unchanged.
    """
    raw = astensor(raw)
    AffinityField(raw)  # shape validation
    denom = maximum(tensor_sum(absolute(raw), axis=-4, keepdims=True), 1.0)
    return AffinityField(raw / denom, normalized=True)


def _swap_hw(t: Tensor) -> Tensor:
    axes = list(range(t.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return t.transpose(*axes)


def _flip_w(t: Tensor) -> Tensor:
    return t[..., ::-1]


def _shift_down(a: np.ndarray) -> np.ndarray:
    """out[v] = a[v-1], zero at the first row (axis -1 of a column slice)."""
    out = np.zeros_like(a)
    out[..., 1:] = a[..., :-1]
    return out


def _shift_up(a: np.ndarray) -> np.ndarray:
    """out[v] = a[v+1], zero at the last row."""
    out = np.zeros_like(a)
    out[..., :-1] = a[..., 1:]
    return out


def _scan(x: Tensor, p: Tensor) -> Tensor:
    """Canonical left-to-right scan over the last axis, as one fused node.

    ``x`` is (..., C, H, W); ``p`` is (..., 3, C, H, W) with offsets taken
    across H. Weights whose neighbor falls outside the image are masked to
    zero before blending. The first scanline passes through unchanged.
    The recurrence is sequential, so forward and backward are hand-rolled
    loops rather than per-column graph nodes.
    """
    height, width = x.shape[-2], x.shape[-1]
    mask = np.ones((3, 1, height, 1), dtype=x.dtype)
    mask[0, :, 0, 0] = 0.0
    mask[2, :, height - 1, 0] = 0.0

    xd = x.data
    pm = p.data * mask
    w_minus, w_center, w_plus = pm[..., 0, :, :, :], pm[..., 1, :, :, :], pm[..., 2, :, :, :]
    passthrough = 1.0 - (w_minus + w_center + w_plus)

    out = np.empty_like(xd)
    out[..., 0] = xd[..., 0]
    for u in range(1, width):
        prev = out[..., u - 1]
        out[..., u] = (
            passthrough[..., u] * xd[..., u]
            + w_minus[..., u] * _shift_down(prev)
            + w_center[..., u] * prev
            + w_plus[..., u] * _shift_up(prev)
        )

    def backward(g):
        gx = np.zeros_like(xd)
        gpm = np.zeros_like(pm)
        carry = np.zeros_like(g[..., 0])
        for u in range(width - 1, 0, -1):
            total = g[..., u] + carry
            prev = out[..., u - 1]
            down = _shift_down(prev)
            up = _shift_up(prev)
            gx[..., u] = passthrough[..., u] * total
            gpm[..., 0, :, :, u] = total * (down - xd[..., u])
            gpm[..., 1, :, :, u] = total * (prev - xd[..., u])
            gpm[..., 2, :, :, u] = total * (up - xd[..., u])
            carry = (
                _shift_up(total * w_minus[..., u])
                + total * w_center[..., u]
                + _shift_down(total * w_plus[..., u])
            )
        gx[..., 0] = g[..., 0] + carry
        return gx, gpm * mask

    return make_node(out, (x, p), backward)


def propagate_direction(x: Tensor, field: AffinityField, direction: Direction) -> Tensor:
    """One full sweep of the recurrence along ``direction``."""
    if not field.normalized:
        raise ValueError("affinity field must be normalized before propagation")
    x = astensor(x)
    p = field.direction_weights(direction)
    if p.shape[-3:] != x.shape[-3:] or p.shape[:-4] != x.shape[:-3]:
        raise ShapeError(
            f"affinity slice {p.shape} does not match feature map {x.shape}"
        )
    if direction == Direction.L2R:
        return _scan(x, p)
    if direction == Direction.R2L:
        return _flip_w(_scan(_flip_w(x), _flip_w(p)))
    if direction == Direction.T2B:
        return _swap_hw(_scan(_swap_hw(x), _swap_hw(p)))
    return _swap_hw(_flip_w(_scan(_flip_w(_swap_hw(x)), _flip_w(_swap_hw(p)))))


def fuse_directions(
    h_l2r: Tensor, h_r2l: Tensor, h_t2b: Tensor, h_b2t: Tensor, mode: str = "max"
) -> Tensor:
    """Combine the four directional results elementwise (max or mean)."""
    maps = [astensor(t) for t in (h_l2r, h_r2l, h_t2b, h_b2t)]
    if any(t.shape != maps[0].shape for t in maps[1:]):
        raise ShapeError(f"fusion maps differ in shape: {[t.shape for t in maps]}")
    if mode == "max":
        return maximum(maximum(maps[0], maps[1]), maximum(maps[2], maps[3]))
    if mode == "mean":
        return (maps[0] + maps[1] + maps[2] + maps[3]) * 0.25
    raise ValueError(f"unknown fusion mode {mode!r}")


def refine(x: Tensor, field: AffinityField, sweeps: int = 1, fusion: str = "max") -> Tensor:
    """Propagate ``sweeps`` times along each direction, then fuse."""
    if sweeps < 1:
        raise ValueError(f"sweeps must be >= 1, got {sweeps}")
    results = []
    for direction in DIRECTIONS:
        h = x
        for _ in range(sweeps):
            h = propagate_direction(h, field, direction)
        results.append(h)
    return fuse_directions(*results, mode=fusion)
