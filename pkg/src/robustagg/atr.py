"""Stage three: rebuilding the aggregation tree without blacklisted nodes.

Two variants: the basic flood-and-respond protocol, and a resilient one
that collects signed neighbor lists once up front and lets the BS compute
trees centrally.  Both end with the BS distributing the finished tree in a
single authenticated broadcast so every node's view matches the BS's.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import crypto, wire
from .crypto import BS_ID, NodeId, SignatureOracle
from .errors import FrameError
from .netmodel import AggregationTree, Network, NetworkGraph, edge_key


@dataclass
class AtrOutcome:
    tree: AggregationTree | None
    # What each sensor adopted from the distributed tree, for consistency
    # checks: node -> (parent, children tuple).  Parsed from the broadcast
    # payload, not copied from the BS structure.
    node_views: dict[NodeId, tuple[NodeId, tuple[NodeId, ...]]] = field(default_factory=dict)
    unreached: set[NodeId] = field(default_factory=set)


def build_initial_tree(graph: NetworkGraph, blacklist: frozenset[NodeId] = frozenset()) -> AggregationTree | None:
    """Deterministic BFS tree with a single BS child (lowest usable id)."""
    usable = [v for v in graph.neighbors(BS_ID) if v not in blacklist]
    if not usable:
        return None
    b = usable[0]
    parent: dict[NodeId, NodeId] = {b: BS_ID}
    frontier = [b]
    while frontier:
        nxt = []
        for u in frontier:
            for v in graph.neighbors(u):
                if v == BS_ID or v in blacklist or v in parent:
                    continue
                parent[v] = u
                nxt.append(v)
        frontier = nxt
    return AggregationTree(parent)


def _serialize_tree(nonce: bytes, parent: dict[NodeId, NodeId]) -> bytes:
    pairs = [wire.u16(c) + wire.u16(p) for c, p in sorted(parent.items())]
    return wire.frame(nonce, *pairs)


def _parse_tree(payload: bytes) -> dict[NodeId, NodeId]:
    fields = wire.unframe(payload)
    out = {}
    for pair in fields[1:]:
        out[wire.read_u16(pair[:2])] = wire.read_u16(pair[2:])
    return out


def _distribute(net: Network, nonce: bytes, tree: AggregationTree) -> AtrOutcome:
    payload = _serialize_tree(nonce, tree.parent)
    delivered = net.bs_broadcast(BS_ID, payload)
    adopted = _parse_tree(delivered)
    views: dict[NodeId, tuple[NodeId, tuple[NodeId, ...]]] = {}
    children: dict[NodeId, list[NodeId]] = {}
    for c, p in sorted(adopted.items()):
        children.setdefault(p, []).append(c)
    for node, p in adopted.items():
        views[node] = (p, tuple(children.get(node, [])))
    unreached = net.graph.sensors - set(adopted)
    return AtrOutcome(tree, views, unreached)


def atr_basic(
    net: Network, blacklist: frozenset[NodeId], nonce: bytes, adv
) -> AtrOutcome:
    """Flooded tree-establishment plus upward response collection."""
    net.phase = "atr"
    graph = net.graph
    te = wire.frame(nonce, *[wire.u16(x) for x in sorted(blacklist)], wire.u16(graph.n))
    te_size = len(te) + wire.framed_size(wire.ACK_LEN)  # hop-by-hop auth tag

    usable = [v for v in graph.neighbors(BS_ID) if v not in blacklist]
    if not usable:
        return AtrOutcome(None, {}, set(graph.sensors))
    b = usable[0]
    net.send_link(BS_ID, b, te)

    # Flood: each reached node rebroadcasts the TE once to all neighbors;
    # the first fresh sender becomes the parent, ties broken by id order.
    parent: dict[NodeId, NodeId] = {b: BS_ID}
    frontier = [b]
    while frontier:
        nxt = []
        for u in frontier:
            if adv.action(u, "atr", "te_suppress") is not None:
                adv.fire(u, "atr", "te_suppress")
                continue
            for w in graph.neighbors(u):
                if w == BS_ID:
                    continue
                net.ledger.charge(u, w, te_size, net.phase)
                if w in blacklist or w in parent:
                    continue
                parent[w] = u
                nxt.append(w)
        frontier = sorted(nxt)

    children: dict[NodeId, list[NodeId]] = {}
    for c, p in sorted(parent.items()):
        children.setdefault(p, []).append(c)
        if p != BS_ID:
            # childhood confirmation back to the chosen parent
            net.send_link(c, p, wire.frame(nonce, wire.u16(c)))

    # Upward response relay, deepest levels first, at most n forwarded per node.
    depth: dict[NodeId, int] = {b: 1}
    order = [b]
    for u in order:
        for c in children.get(u, []):
            depth[c] = depth[u] + 1
            order.append(c)
    relay_cap = graph.n
    upward: dict[NodeId, list[bytes]] = {u: [] for u in parent}
    for u in sorted(parent, key=lambda x: (-depth[x], x)):
        kid_ids = children.get(u, [])
        resp = crypto.auth_wrap(
            net.keys.bs_key(u),
            wire.frame(nonce, wire.u16(u), *[wire.u16(c) for c in kid_ids]),
        ).to_bytes()
        batch = [resp] + upward[u][:relay_cap]
        if adv.action(u, "atr", "response_drop") is not None:
            adv.fire(u, "atr", "response_drop")
            continue
        p = parent[u]
        for msg in batch:
            delivered = net.send_link(u, p, msg)
            if delivered is None:
                continue
            if p == BS_ID:
                upward.setdefault(BS_ID, []).append(delivered)
            else:
                upward[p].append(delivered)

    # BS assembly: first verified response per node wins.
    claims: dict[NodeId, list[NodeId]] = {}
    for raw in upward.get(BS_ID, []):
        try:
            env = crypto.AuthEnvelope.from_bytes(raw)
            fields = wire.unframe(env.payload)
            node = wire.read_u16(fields[1])
        except (FrameError, IndexError):
            continue
        if node in claims or node in blacklist or node not in graph.sensors:
            continue
        if not crypto.auth_verify(net.keys.bs_key(node), env) or fields[0] != nonce:
            continue
        claims[node] = [wire.read_u16(f) for f in fields[2:]]

    # b is always kept (the BS handed it the TE itself); below it, a node
    # joins only if its parent claimed it and its own response arrived.
    final_parent: dict[NodeId, NodeId] = {b: BS_ID}
    stack = [b]
    while stack:
        u = stack.pop()
        for c in claims.get(u, []):
            if c in claims and c not in final_parent and c not in blacklist:
                final_parent[c] = u
                stack.append(c)
    tree = AggregationTree(final_parent)
    return _distribute(net, nonce, tree)


def atr_resilient_init(
    net: Network, oracle: SignatureOracle, adv
) -> set[tuple[NodeId, NodeId]]:
    """One-time signed neighbor-list collection.

    Every node floods its signed list once; the BS keeps only edges both
    endpoints announced, plus its own observed edges, so no fabricated link
    survives.
    """
    net.phase = "nl"
    graph = net.graph
    flood_edges = graph.bfs_spanning_edges()
    announced: dict[NodeId, set[NodeId]] = {}
    for s in sorted(graph.sensors):
        nbrs = list(graph.neighbors(s))
        fake = adv.action(s, "nl", "nl_fake")
        if fake is not None:
            adv.fire(s, "nl", "nl_fake")
            nbrs = sorted(
                (set(nbrs) | set(fake.params.get("add", ())))
                - set(fake.params.get("remove", ()))
            )
        blob = oracle.sign(s, wire.frame(b"nl", *[wire.u16(v) for v in nbrs]))
        for a, c in flood_edges:
            net.ledger.charge(a, c, blob.size, net.phase)
        if oracle.verify(s, blob):
            fields = wire.unframe(blob.payload)
            announced[s] = {wire.read_u16(f) for f in fields[1:]}
    edges: set[tuple[NodeId, NodeId]] = set()
    bs_nbrs = set(graph.neighbors(BS_ID))
    for s, nbrs in announced.items():
        for t in nbrs:
            if t == BS_ID:
                if s in bs_nbrs:
                    edges.add(edge_key(s, BS_ID))
            elif t in announced and s in announced[t]:
                edges.add(edge_key(s, t))
    return edges


def atr_resilient_build(
    net: Network,
    edges: set[tuple[NodeId, NodeId]],
    blacklist: frozenset[NodeId],
    nonce: bytes,
) -> AtrOutcome:
    """Centralized BFS over the mutually-announced graph, then distribution."""
    net.phase = "atr"
    adj: dict[NodeId, list[NodeId]] = {}
    for a, c in edges:
        adj.setdefault(a, []).append(c)
        adj.setdefault(c, []).append(a)
    for nbrs in adj.values():
        nbrs.sort()
    usable = [v for v in adj.get(BS_ID, []) if v not in blacklist]
    if not usable:
        return AtrOutcome(None, {}, set(net.graph.sensors))
    b = usable[0]
    parent: dict[NodeId, NodeId] = {b: BS_ID}
    frontier = [b]
    while frontier:
        nxt = []
        for u in frontier:
            for v in adj.get(u, []):
                if v == BS_ID or v in blacklist or v in parent:
                    continue
                parent[v] = u
                nxt.append(v)
        frontier = sorted(nxt)
    tree = AggregationTree(parent)
    return _distribute(net, nonce, tree)
