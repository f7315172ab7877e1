"""Simulated network: graph, aggregation tree, scheduling, channels, ledger.

The engine is synchronous and deterministic: phases iterate over epoch sets
derived from the tree, and every transmitted byte is charged to exactly one
graph edge in the congestion ledger.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from . import crypto, wire
from .crypto import BS_ID, KeyStore, NodeId
from .errors import ConfigError, ProtocolViolation

Edge = tuple[NodeId, NodeId]


def edge_key(a: NodeId, b: NodeId) -> Edge:
    return (a, b) if a < b else (b, a)


class NetworkGraph:
    """Connectivity graph over the BS and sensor nodes."""

    def __init__(self, sensors: set[NodeId], edges: set[Edge], d_max: int):
        if BS_ID in sensors:
            raise ConfigError("BS id reserved; cannot be a sensor")
        self.sensors = set(sensors)
        self.edges = {edge_key(a, b) for a, b in edges}
        self.d_max = d_max
        self._adj: dict[NodeId, list[NodeId]] = {n: [] for n in sensors}
        self._adj[BS_ID] = []
        for a, b in self.edges:
            if a not in self._adj or b not in self._adj:
                raise ConfigError(f"edge ({a}, {b}) references unknown node")
            self._adj[a].append(b)
            self._adj[b].append(a)
        for n, nbrs in self._adj.items():
            nbrs.sort()
            if len(nbrs) > d_max:
                raise ConfigError(f"node {n} exceeds degree bound {d_max}")
        if not self._adj[BS_ID]:
            raise ConfigError("BS has no neighbors")
        if not self._connected():
            raise ConfigError("graph is not connected")

    def _connected(self) -> bool:
        seen = {BS_ID}
        q = deque([BS_ID])
        while q:
            u = q.popleft()
            for v in self._adj[u]:
                if v not in seen:
                    seen.add(v)
                    q.append(v)
        return len(seen) == len(self.sensors) + 1

    def neighbors(self, node: NodeId) -> list[NodeId]:
        return self._adj[node]

    def has_edge(self, a: NodeId, b: NodeId) -> bool:
        return edge_key(a, b) in self.edges

    @property
    def n(self) -> int:
        return len(self.sensors)

    def bfs_spanning_edges(self) -> list[Edge]:
        """Deterministic BFS spanning tree rooted at the BS (flood backbone)."""
        seen = {BS_ID}
        order = deque([BS_ID])
        out: list[Edge] = []
        while order:
            u = order.popleft()
            for v in self._adj[u]:
                if v not in seen:
                    seen.add(v)
                    out.append(edge_key(u, v))
                    order.append(v)
        return out


class AggregationTree:
    """Rooted tree over node ids; the BS always has exactly one child."""

    def __init__(self, parent: dict[NodeId, NodeId], session: int = 0):
        self.parent = dict(parent)
        self.session = session
        self.children: dict[NodeId, list[NodeId]] = {BS_ID: []}
        for c in self.parent:
            self.children.setdefault(c, [])
        for c, p in sorted(self.parent.items()):
            self.children.setdefault(p, []).append(c)
        for kids in self.children.values():
            kids.sort()
        if len(self.children[BS_ID]) != 1:
            raise ConfigError("BS must have exactly one child")
        # Reject cycles / orphans: every node must reach the BS.
        for c in self.parent:
            seen = set()
            cur = c
            while cur != BS_ID:
                if cur in seen or cur not in self.parent:
                    raise ConfigError(f"node {c} does not reach the BS")
                seen.add(cur)
                cur = self.parent[cur]
        self._depth: dict[NodeId, int] = {BS_ID: 0}
        stack = [BS_ID]
        while stack:
            u = stack.pop()
            for v in self.children.get(u, []):
                self._depth[v] = self._depth[u] + 1
                stack.append(v)

    @property
    def bs_child(self) -> NodeId:
        return self.children[BS_ID][0]

    @property
    def members(self) -> set[NodeId]:
        """Sensor nodes in the tree (BS excluded)."""
        return set(self.parent)

    def depth(self, node: NodeId) -> int:
        return self._depth[node]

    def is_leaf(self, node: NodeId) -> bool:
        return not self.children.get(node)

    def subtree(self, node: NodeId) -> list[NodeId]:
        out = []
        stack = [node]
        while stack:
            u = stack.pop()
            out.append(u)
            stack.extend(self.children.get(u, []))
        return out

    def height(self) -> int:
        """Longest root-to-leaf path, in edges."""
        return max(self._depth.values())

    def max_degree(self) -> int:
        """Max tree degree over non-root nodes (children + parent link)."""
        return max((len(self.children.get(c, [])) + 1 for c in self.parent), default=1)

    def metrics(self) -> tuple[int, int]:
        return self.height(), self.max_degree()


def schedule_epochs(tree: AggregationTree) -> list[list[NodeId]]:
    """Leaves-first epoch sets: every node acts after all its children.

    Grouping by depth (deepest first) satisfies the ordering because a
    child is always strictly deeper than its parent.
    """
    by_depth: dict[int, list[NodeId]] = {}
    for node in tree.parent:
        by_depth.setdefault(tree.depth(node), []).append(node)
    return [sorted(by_depth[d]) for d in sorted(by_depth, reverse=True)]


class CongestionLedger:
    """Per-edge byte counters for one session, with a per-phase breakdown."""

    def __init__(self) -> None:
        self.per_edge: dict[Edge, int] = {}
        self.per_phase: dict[str, int] = {}

    def charge(self, a: NodeId, b: NodeId, nbytes: int, phase: str) -> None:
        if nbytes < 0:
            raise ProtocolViolation("negative byte charge")
        e = edge_key(a, b)
        self.per_edge[e] = self.per_edge.get(e, 0) + nbytes
        self.per_phase[phase] = self.per_phase.get(phase, 0) + nbytes

    def max_congestion(self) -> int:
        return max(self.per_edge.values(), default=0)

    def total(self) -> int:
        return sum(self.per_edge.values())

    def reset(self) -> None:
        self.per_edge.clear()
        self.per_phase.clear()


@dataclass
class Network:
    """Channels plus accounting, shared by all protocol phases."""

    graph: NetworkGraph
    keys: KeyStore
    ledger: CongestionLedger = field(default_factory=CongestionLedger)
    phase: str = "idle"

    def __post_init__(self) -> None:
        self._flood_edges = self.graph.bfs_spanning_edges()

    def send_link(self, frm: NodeId, to: NodeId, payload: bytes) -> bytes | None:
        """Authenticated neighbor send; returns the payload the receiver accepts.

        The sender holds the link key, so envelopes from real endpoints always
        verify; the tamper-drop contract is exercised via send_link_raw.
        """
        env = crypto.auth_wrap(self.keys.link_key(frm, to), payload)
        return self._deliver(frm, to, env)

    def send_link_raw(self, frm: NodeId, to: NodeId, env: crypto.AuthEnvelope) -> bytes | None:
        """Deliver a caller-built envelope (lets tests model in-transit damage)."""
        return self._deliver(frm, to, env)

    def _deliver(self, frm: NodeId, to: NodeId, env: crypto.AuthEnvelope) -> bytes | None:
        if not self.graph.has_edge(frm, to):
            raise ConfigError(f"({frm}, {to}) is not a graph edge")
        # Transmitted bytes count whether or not the receiver keeps them.
        self.ledger.charge(frm, to, env.size, self.phase)
        if not crypto.auth_verify(self.keys.link_key(frm, to), env):
            return None
        return env.payload

    def bs_broadcast(self, sender: NodeId, payload: bytes) -> bytes:
        """Network-wide authenticated broadcast (ideal oracle, BS only).

        Cost model: a flood over the BFS spanning backbone, each node
        relaying the payload once.
        """
        if sender != BS_ID:
            raise ProtocolViolation("only the BS can issue authenticated broadcasts")
        for a, b in self._flood_edges:
            self.ledger.charge(a, b, len(payload), self.phase)
        return payload
