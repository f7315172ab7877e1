"""Stage two: localizing faulty nodes after a failed aggregation.

Phase I collects onion-authenticated confirmations from every node that
acknowledged the result and recursively checks them at the BS; phase II
collects the per-child acks nodes stored during result checking and hunts
for inconsistencies.  Both produce a set of marks, in (child, parent)
pairs except when the parent is the BS.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import crypto, wire
from .crypto import BS_ID, KeyStore, NodeId
from .errors import FrameError
from .netmodel import AggregationTree, Network, schedule_epochs

# Wire tags for confirmation slots.
NR = b"\x00"  # "no message received from this child"; always illegitimate
_ENV = b"\x01"


@dataclass(frozen=True)
class Mark:
    node: NodeId
    partner: NodeId | None  # the paired parent; None when the parent is the BS
    rule: str  # absent | structural | type_i | type_ii

    def pair(self) -> set[NodeId]:
        return {self.node} if self.partner is None else {self.node, self.partner}


@dataclass
class MarkSet:
    marks: list[Mark] = field(default_factory=list)

    def add(self, node: NodeId, parent: NodeId, rule: str) -> None:
        self.marks.append(Mark(node, None if parent == BS_ID else parent, rule))

    def nodes(self) -> set[NodeId]:
        out: set[NodeId] = set()
        for m in self.marks:
            out |= m.pair()
        return out

    def __bool__(self) -> bool:
        return bool(self.marks)


def _wrap(key: bytes, payload: bytes) -> bytes:
    return _ENV + wire.frame(payload, crypto.mac(key, payload))


def _open(key: bytes, data: bytes) -> bytes | None:
    """Envelope payload if the blob verifies under `key`, else None."""
    if not data or data[0:1] != _ENV:
        return None
    try:
        payload, tag = wire.unframe(data[1:])
    except (FrameError, ValueError):
        return None
    if tag != crypto.mac(key, payload):
        return None
    return payload


def _garble(data: bytes) -> bytes:
    return bytes([data[0] ^ 0x01]) + data[1:] if data else b"\xff"


def als1_collect(
    net: Network,
    tree: AggregationTree,
    participates: dict[NodeId, bool],
    adv,
    nonce: bytes,
) -> bytes | None:
    """Hierarchical confirmation collection; returns the blob the BS receives.

    `participates[s]` is whether s acknowledged in result checking; silent
    nodes send nothing and their parents substitute the NR placeholder.
    """
    net.phase = "als1"
    inbox: dict[NodeId, dict[NodeId, bytes]] = {n: {} for n in tree.members}
    inbox[BS_ID] = {}
    for epoch in schedule_epochs(tree):
        for node in epoch:
            if not participates.get(node, False):
                continue
            key = net.keys.bs_key(node)
            kids = tree.children.get(node, [])
            if not kids:
                msg = _wrap(key, wire.frame(nonce))
            else:
                slots = [inbox[node].get(c, NR) for c in kids]
                tamper = adv.action(node, "als1", "confirm_tamper")
                if tamper is not None:
                    idx = tamper.params.get("slot", len(slots) - 1) % len(slots)
                    slots[idx] = _garble(slots[idx])
                    adv.fire(node, "als1", "confirm_tamper")
                msg = _wrap(key, wire.frame(nonce, *slots))
            if adv.action(node, "als1", "confirm_drop") is not None:
                adv.fire(node, "als1", "confirm_drop")
                continue
            delivered = net.send_link(node, tree.parent[node], msg)
            if delivered is not None:
                inbox[tree.parent[node]][node] = delivered
    return inbox[BS_ID].get(tree.bs_child)


def _extract1(
    keys: KeyStore, tree: AggregationTree, node: NodeId, data: bytes | None, nonce: bytes
) -> list[bytes] | None:
    """Child slots of a legitimate confirmation, or None (incl. the NR case)."""
    if data is None or data[0:1] == NR:
        return None
    payload = _open(keys.bs_key(node), data)
    if payload is None:
        return None
    try:
        fields = wire.unframe(payload)
    except FrameError:
        return None
    kids = tree.children.get(node, [])
    if len(fields) != 1 + len(kids) or fields[0] != nonce:
        return None
    return fields[1:]


def als1_process(
    keys: KeyStore, tree: AggregationTree, m_b: bytes | None, nonce: bytes
) -> MarkSet:
    """BS-side recursive confirmation check."""
    marks = MarkSet()
    b = tree.bs_child
    if m_b is None:
        marks.add(b, BS_ID, "absent")
        return marks

    def walk(node: NodeId, parent: NodeId, data: bytes | None) -> None:
        slots = _extract1(keys, tree, node, data, nonce)
        if slots is None:
            marks.add(node, parent, "structural")
            return
        for child, slot in zip(tree.children.get(node, []), slots):
            walk(child, node, slot)

    walk(b, BS_ID, m_b)
    return marks


def expected_acks(keys: KeyStore, tree: AggregationTree, nonce: bytes) -> dict[NodeId, bytes]:
    """Per-node expected aggregated ack: XOR of acks over the node's subtree."""
    out: dict[NodeId, bytes] = {}
    for epoch in schedule_epochs(tree):
        for node in epoch:
            parts = [crypto.node_ack(keys.bs_key(node), nonce)]
            parts.extend(out[c] for c in tree.children.get(node, []))
            out[node] = crypto.xor_acks(parts)
    return out


def expected_ack(keys: KeyStore, tree: AggregationTree, node: NodeId, nonce: bytes) -> bytes:
    return crypto.xor_acks(
        [crypto.node_ack(keys.bs_key(u), nonce) for u in tree.subtree(node)]
    )


def als2_collect(
    net: Network,
    tree: AggregationTree,
    child_acks: dict[NodeId, dict[NodeId, bytes]],
    adv,
    nonce: bytes,
) -> bytes | None:
    """Hierarchical ack-report collection; leaves stay silent.

    A report carries nested reports for non-leaf children and the stored
    ack for every child (a never-received ack is reported as all zeros).
    """
    net.phase = "als2"
    inbox: dict[NodeId, dict[NodeId, bytes]] = {n: {} for n in tree.members}
    inbox[BS_ID] = {}
    for epoch in schedule_epochs(tree):
        for node in epoch:
            kids = tree.children.get(node, [])
            if not kids:
                continue
            reports = [inbox[node].get(c, NR) for c in kids if not tree.is_leaf(c)]
            acks = [child_acks.get(node, {}).get(c, crypto.ZERO_ACK) for c in kids]
            forge = adv.action(node, "als2", "ack_report_forge")
            if forge is not None:
                idx = forge.params.get("slot", 0) % len(acks)
                acks[idx] = _garble(acks[idx])
                adv.fire(node, "als2", "ack_report_forge")
            if adv.action(node, "als2", "report_drop") is not None:
                adv.fire(node, "als2", "report_drop")
                continue
            msg = _wrap(net.keys.bs_key(node), wire.frame(nonce, *reports, *acks))
            delivered = net.send_link(node, tree.parent[node], msg)
            if delivered is not None:
                inbox[tree.parent[node]][node] = delivered
    return inbox[BS_ID].get(tree.bs_child)


def _extract2(
    keys: KeyStore, tree: AggregationTree, node: NodeId, data: bytes | None, nonce: bytes
) -> tuple[dict[NodeId, bytes], dict[NodeId, bytes]] | None:
    """(nested reports by non-leaf child, reported acks by child), or None."""
    if data is None or data[0:1] == NR:
        return None
    payload = _open(keys.bs_key(node), data)
    if payload is None:
        return None
    try:
        fields = wire.unframe(payload)
    except FrameError:
        return None
    kids = tree.children.get(node, [])
    nonleaf = [c for c in kids if not tree.is_leaf(c)]
    if len(fields) != 1 + len(nonleaf) + len(kids) or fields[0] != nonce:
        return None
    ack_fields = fields[1 + len(nonleaf) :]
    if any(len(a) != wire.ACK_LEN for a in ack_fields):
        return None
    return (
        dict(zip(nonleaf, fields[1 : 1 + len(nonleaf)])),
        dict(zip(kids, ack_fields)),
    )


def als2_process(
    keys: KeyStore,
    tree: AggregationTree,
    m_b: bytes | None,
    agg_ack: bytes,
    nonce: bytes,
) -> MarkSet:
    """BS-side recursive ack analysis.

    `agg_ack` is the aggregated ack the BS received in stage one.  A child
    whose reported ack matches its expected value is not descended into;
    mismatches at a leaf (wrong individual ack) or at an internal node
    (report does not recombine to the claimed aggregate) mark the pair, and
    recursion continues where the structure allows.
    """
    marks = MarkSet()
    expect = expected_acks(keys, tree, nonce)

    def walk(node: NodeId, parent: NodeId, data: bytes | None, reported: bytes) -> None:
        if reported == expect[node]:
            return  # consistent subtree: not processed further
        if tree.is_leaf(node):
            if reported != crypto.node_ack(keys.bs_key(node), nonce):
                marks.add(node, parent, "type_i")
            return
        extracted = _extract2(keys, tree, node, data, nonce)
        if extracted is None:
            marks.add(node, parent, "structural")
            return
        reports, acks = extracted
        recombined = crypto.xor_acks(
            [crypto.node_ack(keys.bs_key(node), nonce)] + list(acks.values())
        )
        if reported != recombined:
            marks.add(node, parent, "type_ii")
        for child in tree.children.get(node, []):
            walk(child, node, reports.get(child), acks[child])

    walk(tree.bs_child, BS_ID, m_b, agg_ack)
    return marks
