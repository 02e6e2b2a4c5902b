"""Uplink communication cost per method, counted in transmitted variables.

Simultaneous analog transmissions from several nodes count once.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class CostModel:
    n_in: int = 1
    N: int = 128
    M: int = 4
    T: int = 600
    T_multi: int = 3
    n_test: int = 10

    def __post_init__(self):
        for name in ("n_in", "N", "M", "T", "T_multi", "n_test"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


def uplink_cost(method: str, cost: CostModel) -> int:
    if method == "full-gpr":
        return (cost.n_in + 1) * cost.N
    per_round = cost.T * cost.T_multi + 2 * cost.n_test
    if method == "ideal-poe":
        return cost.M * per_round
    if method in ("aircomp-perfect", "aircomp-statistical"):
        return per_round
    if method == "pathloss":
        return 0
    raise ValueError(f"unknown method {method!r}")
