"""Shared test machinery: tree enumeration, engine drivers, oracles."""

from __future__ import annotations

import hashlib
import struct
from itertools import product

from robustagg import als, shia
from robustagg.adversary import Adversary, ScriptEntry
from robustagg.crypto import BS_ID, KeyStore
from robustagg.netmodel import AggregationTree, Network, NetworkGraph, edge_key


def complete_net(n: int) -> Network:
    """Complete graph over n sensors plus the BS; hosts any tree shape."""
    sensors = set(range(1, n + 1))
    nodes = sensors | {BS_ID}
    edges = {edge_key(a, b) for a in nodes for b in nodes if a < b}
    graph = NetworkGraph(sensors, edges, d_max=n + 1)
    keys = KeyStore(b"test")
    for s in sorted(sensors):
        keys.register_node(s)
    for a, b in edges:
        keys.register_edge(a, b)
    return Network(graph, keys)


def net_for_tree(parent: dict[int, int]) -> tuple[Network, AggregationTree]:
    tree = AggregationTree(parent)
    n = len(tree.members)
    sensors = set(tree.members)
    edges = {edge_key(c, p) for c, p in parent.items()}
    graph = NetworkGraph(sensors, edges, d_max=n + 1)
    keys = KeyStore(b"test")
    for s in sorted(sensors):
        keys.register_node(s)
    for a, b in edges:
        keys.register_edge(a, b)
    return Network(graph, keys), tree


def prufer_trees(n: int):
    """All labeled trees on nodes 1..n, as edge lists (Prüfer decoding)."""
    nodes = list(range(1, n + 1))
    if n == 1:
        yield []
        return
    if n == 2:
        yield [(1, 2)]
        return
    for seq in product(nodes, repeat=n - 2):
        degree = {v: 1 for v in nodes}
        for v in seq:
            degree[v] += 1
        edges = []
        avail = sorted(v for v in nodes if degree[v] == 1)
        seq_list = list(seq)
        for v in seq_list:
            leaf = avail.pop(0)
            edges.append((leaf, v))
            degree[v] -= 1
            if degree[v] == 1:
                # re-insert keeping availability sorted
                import bisect

                bisect.insort(avail, v)
        edges.append((avail[0], avail[1]))
        yield edges


def all_rooted_trees(n: int):
    """All rooted trees on sensors 1..n with the BS above the root."""
    for edges in prufer_trees(n):
        adj: dict[int, list[int]] = {v: [] for v in range(1, n + 1)}
        for a, b in edges:
            adj[a].append(b)
            adj[b].append(a)
        for root in range(1, n + 1):
            parent = {root: BS_ID}
            stack = [root]
            seen = {root}
            while stack:
                u = stack.pop()
                for v in adj[u]:
                    if v not in seen:
                        seen.add(v)
                        parent[v] = u
                        stack.append(v)
            yield parent


def run_localization(net: Network, tree: AggregationTree, sres: shia.ShiaResult, adv, nonce: bytes):
    """The post-failure flow: confirmations, then ack reports if needed."""
    participates = {s: sres.released.get(s) is not None for s in tree.members}
    m_b = als.als1_collect(net, tree, participates, adv, nonce)
    marks = als.als1_process(net.keys, tree, m_b, nonce)
    als2_ran = False
    if not marks:
        als2_ran = True
        m_b2 = als.als2_collect(net, tree, sres.child_acks, adv, nonce)
        marks = als.als2_process(net.keys, tree, m_b2, sres.agg_ack, nonce)
    return marks, als2_ran


def run_session(net, tree, values, scripts, faulty, nonce=b"\x07" * 8, vrange=(0, 100)):
    """One SHIA session plus localization on failure; returns rich results."""
    adv = Adversary(faulty, scripts)
    adv.begin_session(0)
    net.ledger.reset()
    sres = shia.run_shia(net, tree, values, adv, nonce, vrange)
    marks, als2_ran = (None, False)
    if not sres.accepted:
        marks, als2_ran = run_localization(net, tree, sres, adv, nonce)
    return sres, marks, als2_ran, adv


def entry(node: int, kind: str, **params) -> ScriptEntry:
    return ScriptEntry(node=node, kind=kind, params=params)


# --- independent byte-layout oracle (deliberately avoids robustagg.wire) ---


def oracle_frame(*fields: bytes) -> bytes:
    return b"".join(struct.pack(">I", len(f)) + f for f in fields)


def oracle_leaf_bytes(node: int, value: int) -> bytes:
    return b"\x00" + oracle_frame(
        struct.pack(">H", 1), struct.pack(">q", value), struct.pack(">H", node)
    )


def oracle_internal_bytes(count: int, value: int, digest: bytes) -> bytes:
    return b"\x01" + oracle_frame(
        struct.pack(">H", count), struct.pack(">q", value), digest
    )


def oracle_combine(nonce: bytes, inputs: list[tuple[int, int, bytes]]):
    """(count, value, digest) for an internal label, recomputed from scratch.

    Each input is (count, value, serialized_bytes).
    """
    count = sum(c for c, _, _ in inputs)
    value = sum(v for _, v, _ in inputs)
    digest = hashlib.sha256(
        oracle_frame(
            nonce,
            struct.pack(">H", count),
            struct.pack(">q", value),
            *[b for _, _, b in inputs],
        )
    ).digest()
    return count, value, digest


def oracle_root(nonce: bytes, tree: AggregationTree, values: dict[int, int]):
    """Bottom-up recomputation of the root label, independent of shia.py."""

    def label_of(node: int) -> tuple[int, int, bytes]:
        kids = tree.children.get(node, [])
        own = (1, values[node], oracle_leaf_bytes(node, values[node]))
        if not kids:
            return own
        inputs = [label_of(c) for c in kids] + [own]
        c, v, d = oracle_combine(nonce, inputs)
        return c, v, oracle_internal_bytes(c, v, d)

    c, v, raw = label_of(tree.bs_child)
    return c, v, raw


def oracle_ack(key: bytes, nonce: bytes) -> bytes:
    return hashlib.blake2b(nonce + b"\x4f\x4b", key=key, digest_size=16).digest()


def oracle_xor(parts: list[bytes]) -> bytes:
    out = bytearray(16)
    for p in parts:
        for i, b in enumerate(p):
            out[i] ^= b
    return bytes(out)
