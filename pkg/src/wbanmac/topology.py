from __future__ import annotations

from dataclasses import dataclass


class RoutingError(ValueError):
    pass


@dataclass(frozen=True)
class Topology:
    """Linear chain ``n, n-1, ..., 1`` forwarding towards the sink."""

    n_nodes: int = 8
    sink: int = 0

    def __post_init__(self):
        if self.n_nodes < 1:
            raise ValueError("topology needs at least one sensor node")
        if self.sink != 0:
            raise ValueError("the chain layout places the sink at id 0")

    @property
    def sensors(self) -> tuple[int, ...]:
        return tuple(range(1, self.n_nodes + 1))

    @property
    def nodes(self) -> tuple[int, ...]:
        return (self.sink,) + self.sensors

    def next_hop(self, node: int) -> int:
        if node == self.sink:
            raise RoutingError("the sink has no next hop")
        if not 1 <= node <= self.n_nodes:
            raise RoutingError(f"unknown node {node}")
        return node - 1

    def upstream(self, node: int):
        """The neighbour that forwards into ``node``, if any."""
        return node + 1 if node + 1 <= self.n_nodes else None

    def hop_count(self, node: int) -> int:
        hops = 0
        while node != self.sink:
            node = self.next_hop(node)
            hops += 1
        return hops

    def neighbors(self) -> dict[int, tuple[int, ...]]:
        return {n: tuple(m for m in (n - 1, n + 1) if 0 <= m <= self.n_nodes)
                for n in self.nodes}
