"""Exact solver for the balanced transportation problem.

Min-cost flow on the dense bipartite supply/demand graph via successive
shortest paths with node potentials (Dijkstra on reduced costs). Supplies
and demands are integers, so every augmentation moves at least one unit and
termination is guaranteed; the returned flow is optimal.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Sequence


@dataclass(frozen=True)
class TransportProblem:
    """Balanced instance: sum(supplies) == sum(demands), costs >= 0."""

    supplies: tuple[int, ...]
    demands: tuple[int, ...]
    costs: tuple[tuple[float, ...], ...]

    def __post_init__(self) -> None:
        if not self.supplies or not self.demands:
            raise ValueError("transport problem needs at least one supply and one demand")
        if any(s <= 0 for s in self.supplies):
            raise ValueError("supplies must be positive integers")
        if any(d <= 0 for d in self.demands):
            raise ValueError("demands must be positive integers")
        if sum(self.supplies) != sum(self.demands):
            raise ValueError(
                f"marginal mismatch: supplies total {sum(self.supplies)}, "
                f"demands total {sum(self.demands)}"
            )
        if len(self.costs) != len(self.supplies) or any(
            len(row) != len(self.demands) for row in self.costs
        ):
            raise ValueError("cost matrix shape must be |supplies| x |demands|")
        if any(c < 0 or not math.isfinite(c) for row in self.costs for c in row):
            raise ValueError("costs must be finite and nonnegative")


def solve_transport(problem: TransportProblem) -> tuple[float, list[list[int]]]:
    """Minimum-cost flow: returns (objective, flow matrix).

    flow[i][j] is the integer quantity shipped from supply i to demand j;
    objective is sum(flow * cost), optimal for the instance.

    Dual feasibility u[i] + v[j] <= c[i][j] is maintained throughout, with
    equality on arcs carrying flow, so Dijkstra runs on nonnegative reduced
    costs c[i][j] - u[i] - v[j].
    """
    m = len(problem.supplies)
    n = len(problem.demands)
    costs = problem.costs
    remaining_supply = list(problem.supplies)
    remaining_demand = list(problem.demands)
    flow = [[0] * n for _ in range(m)]
    u = [0.0] * m
    v = [0.0] * n

    outstanding = sum(problem.supplies)
    while outstanding > 0:
        # Multi-source Dijkstra from every supply with stock left. Forward
        # arcs i->j always exist; backward arcs j->i exist where flow > 0
        # and have reduced cost 0 up to float rounding (clamped).
        dist_s = [0.0 if remaining_supply[i] > 0 else math.inf for i in range(m)]
        dist_d = [math.inf] * n
        parent_d = [-1] * n  # supply that reached demand j
        parent_s = [-1] * m  # demand that reached supply i, -1 for origins
        done_s = [False] * m
        done_d = [False] * n
        heap: list[tuple[float, int, int]] = [
            (0.0, 0, i) for i in range(m) if remaining_supply[i] > 0
        ]
        heapq.heapify(heap)
        while heap:
            d, side, node = heapq.heappop(heap)
            if side == 0:
                if done_s[node] or d > dist_s[node]:
                    continue
                done_s[node] = True
                for j in range(n):
                    if done_d[j]:
                        continue
                    nd = d + (costs[node][j] - u[node] - v[j])
                    if nd < dist_d[j]:
                        dist_d[j] = nd
                        parent_d[j] = node
                        heapq.heappush(heap, (nd, 1, j))
            else:
                if done_d[node] or d > dist_d[node]:
                    continue
                done_d[node] = True
                for i in range(m):
                    if done_s[i] or flow[i][node] <= 0:
                        continue
                    nd = d + max(0.0, u[i] + v[node] - costs[i][node])
                    if nd < dist_s[i]:
                        dist_s[i] = nd
                        parent_s[i] = node
                        heapq.heappush(heap, (nd, 0, i))

        # Closest demand that still needs units.
        target = -1
        best = math.inf
        for j in range(n):
            if remaining_demand[j] > 0 and dist_d[j] < best:
                best = dist_d[j]
                target = j
        if target < 0:
            raise ValueError("no augmenting path; marginals are inconsistent")

        # Bottleneck along the alternating path: origin supply stock,
        # backward-arc flows, and the target's unmet demand.
        bottleneck = remaining_demand[target]
        j = target
        while True:
            i = parent_d[j]
            if parent_s[i] == -1:
                bottleneck = min(bottleneck, remaining_supply[i])
                break
            j = parent_s[i]
            bottleneck = min(bottleneck, flow[i][j])

        j = target
        while True:
            i = parent_d[j]
            flow[i][j] += bottleneck
            if parent_s[i] == -1:
                remaining_supply[i] -= bottleneck
                break
            j = parent_s[i]
            flow[i][j] -= bottleneck
        remaining_demand[target] -= bottleneck
        outstanding -= bottleneck

        # Potential update pi += min(dist, D) keeps reduced costs >= 0 and
        # zeroes them along the augmenting path.
        horizon = best
        for i in range(m):
            u[i] -= min(dist_s[i], horizon)
        for j in range(n):
            v[j] += min(dist_d[j], horizon)
    objective = math.fsum(
        flow[i][j] * costs[i][j] for i in range(m) for j in range(n) if flow[i][j]
    )
    return objective, flow


def transport_objective(
    supplies: Sequence[int], demands: Sequence[int], costs: Sequence[Sequence[float]]
) -> float:
    """Convenience wrapper building the problem and returning the objective."""
    problem = TransportProblem(
        supplies=tuple(supplies),
        demands=tuple(demands),
        costs=tuple(tuple(row) for row in costs),
    )
    return solve_transport(problem)[0]
