"""Connectivity rules for harmonic-dense blocks and their pruned variant.

A full harmonic block links layer k back to k - 2**n whenever 2**n divides
k. The pruned ("lite") rule keeps one local link (k-2, falling back to the
block input) and adds sparse long links k - 5**j + 1 whenever 5**j divides
k, so the long-link in-degree equals the 5-adic valuation of the layer
index. Connection totals are compared against the L + (1/5) * L * log(L)
budget under both natural-log and log2 conventions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum


class Rule(str, Enum):
    HD = "hd"
    LITE = "lite"


def hd_predecessors(k: int) -> tuple[int, ...]:
    """Layers feeding layer ``k`` under the full harmonic rule.

    Includes k - 2**n for every non-negative n with 2**n dividing k and
    k - 2**n >= 0. Layer index 0 denotes the block input.
    """
    if k < 1:
        raise ValueError(f"layer index must be >= 1, got {k}")
    preds = set()
    step = 1
    while step <= k:
        if k % step == 0:
            preds.add(k - step)
        step *= 2
    return tuple(sorted(preds))


def lhd_predecessors(i: int) -> tuple[int, ...]:
    """Layers feeding layer ``i`` under the pruned rule.

    One local link (i-2, or the block input when i < 2) plus long links
    i - 5**j + 1 for every j >= 1 with 5**j dividing i. Never empty.
    """
    if i < 1:
        raise ValueError(f"layer index must be >= 1, got {i}")
    preds = {i - 2 if i >= 2 else 0}
    step = 5
    while step <= i:
        if i % step == 0 and i - step + 1 >= 0:
            preds.add(i - step + 1)
        step *= 5
    return tuple(sorted(preds))


def predecessors(i: int, rule: Rule) -> tuple[int, ...]:
    return hd_predecessors(i) if rule == Rule.HD else lhd_predecessors(i)


def long_link_order(i: int, rule: Rule) -> int:
    """Largest power (of 2 for HD, of 5 for lite) whose link arrives at ``i``.

    This is the p-adic valuation of the layer index; 0 when only the local
    link arrives.
    """
    if i < 1:
        raise ValueError(f"layer index must be >= 1, got {i}")
    base = 2 if rule == Rule.HD else 5
    order = 0
    step = base
    while step <= i:
        if i % step == 0:
            order += 1
        else:
            break
        step *= base
    return order


def layer_channels(i: int, growth: int, multiplier: float, rule: Rule = Rule.LITE) -> int:
    """Output width of layer ``i``: growth * multiplier**order, rounded to even."""
    if growth < 1:
        raise ValueError(f"growth must be >= 1, got {growth}")
    if multiplier <= 0:
        raise ValueError(f"multiplier must be positive, got {multiplier}")
    width = growth * multiplier ** long_link_order(i, rule)
    return max(2, int(round(width / 2.0)) * 2)


@dataclass(frozen=True)
class ConnectionReport:
    """Connection totals for an L-layer block plus budget verdicts."""

    rule: Rule
    layers: int
    total: int
    hd_total: int
    bound_natural: float
    bound_log2: float
    satisfies_natural: bool
    satisfies_log2: bool

    def to_dict(self) -> dict:
        return {
            "rule": self.rule.value,
            "layers": self.layers,
            "total_connections": self.total,
            "hd_total_connections": self.hd_total,
            "bound_natural_log": self.bound_natural,
            "bound_log2": self.bound_log2,
            "satisfies_natural_log": self.satisfies_natural,
            "satisfies_log2": self.satisfies_log2,
        }


def connection_bounds(layers: int) -> tuple[float, float]:
    """The L + (1/5) * L * log(L) budget under natural log and log2."""
    if layers == 1:
        return 1.0, 1.0
    return (
        layers + layers * math.log(layers) / 5.0,
        layers + layers * math.log2(layers) / 5.0,
    )


def connection_count(layers: int, rule: Rule) -> ConnectionReport:
    """Total in-edges across layers 1..L plus budget verdicts.

    The HD total is always reported alongside for comparison.
    """
    if layers < 1:
        raise ValueError(f"layer count must be >= 1, got {layers}")
    total = sum(len(predecessors(i, rule)) for i in range(1, layers + 1))
    hd_total = (
        total
        if rule == Rule.HD
        else sum(len(hd_predecessors(i)) for i in range(1, layers + 1))
    )
    bound_nat, bound_log2 = connection_bounds(layers)
    return ConnectionReport(
        rule=rule,
        layers=layers,
        total=total,
        hd_total=hd_total,
        bound_natural=bound_nat,
        bound_log2=bound_log2,
        satisfies_natural=total <= bound_nat,
        satisfies_log2=total <= bound_log2,
    )


def in_degree_profile(layers: int, rule: Rule) -> list[int]:
    """Per-layer in-degrees for 1..L; cumulative sums give totals for any prefix."""
    return [len(predecessors(i, rule)) for i in range(1, layers + 1)]


@dataclass(frozen=True)
class TopologyPlan:
    """Frozen layout of one block: per-layer predecessor sets and widths."""

    rule: Rule
    depth: int
    growth: int
    multiplier: float
    predecessors: tuple[tuple[int, ...], ...]
    channels: tuple[int, ...]

    @classmethod
    def build(
        cls, rule: Rule, depth: int, growth: int, multiplier: float
    ) -> "TopologyPlan":
        if depth < 1:
            raise ValueError(f"block depth must be >= 1, got {depth}")
        preds = tuple(predecessors(i, rule) for i in range(1, depth + 1))
        widths = tuple(
            layer_channels(i, growth, multiplier, rule) for i in range(1, depth + 1)
        )
        for i, pset in enumerate(preds, start=1):
            if any(p < 0 or p >= i for p in pset):
                raise ValueError(f"acyclicity violated at layer {i}: {pset}")
        return cls(rule, depth, growth, multiplier, preds, widths)

    def keep_layers(self) -> tuple[int, ...]:
        """Layers concatenated into the block output: even indices plus the last."""
        keep = {i for i in range(2, self.depth + 1, 2)}
        keep.add(self.depth)
        return tuple(sorted(keep))

    def layer_width(self, index: int) -> int:
        """Width of a layer index, where 0 is the block input (resolved by caller)."""
        return self.channels[index - 1]
