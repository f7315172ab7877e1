"""Stage one: hash-committed in-network sum aggregation with ack checking.

Four phases per session: query broadcast, aggregate-commit (labels flow up
the tree), result checking (off-path labels flow down, nodes verify their
own value reached the root), and ack aggregation (per-node MACs XOR'ed
upward, compared by the BS against the expected combination).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import crypto, wire
from .crypto import BS_ID, NodeId
from .errors import FrameError
from .netmodel import AggregationTree, Network, schedule_epochs

_LEAF_TAG = b"\x00"
_INTERNAL_TAG = b"\x01"


@dataclass(frozen=True)
class Label:
    """The <count, value, commitment> tuple flowing up the tree.

    Leaf-format labels carry the node id in the commitment slot; internal
    labels carry a digest chaining the child labels.
    """

    count: int
    value: int
    commit: bytes
    leaf: bool

    def to_bytes(self) -> bytes:
        tag = _LEAF_TAG if self.leaf else _INTERNAL_TAG
        return tag + wire.frame(wire.u16(self.count), wire.i64(self.value), self.commit)

    @property
    def size(self) -> int:
        return 1 + wire.framed_size(wire.COUNT_LEN, wire.VALUE_LEN, len(self.commit))

    @classmethod
    def from_bytes(cls, data: bytes) -> "Label":
        if not data or data[0:1] not in (_LEAF_TAG, _INTERNAL_TAG):
            raise FrameError("bad label tag")
        count_b, value_b, commit = wire.unframe(data[1:])
        leaf = data[0:1] == _LEAF_TAG
        expect = wire.NODE_ID_LEN if leaf else wire.DIGEST_LEN
        if len(commit) != expect:
            raise FrameError("bad commitment length")
        return cls(wire.read_u16(count_b), wire.read_i64(value_b), commit, leaf)


def leaf_label(node: NodeId, value: int) -> Label:
    return Label(1, value, wire.u16(node), leaf=True)


def internal_label(nonce: bytes, inputs: list[Label]) -> Label:
    """Combine an ordered input list into the parent label.

    The commitment hashes the nonce, the summed count and value, then each
    input label's serialization in order; any reordering or field change
    yields a different digest.
    """
    count = sum(l.count for l in inputs)
    value = sum(l.value for l in inputs)
    digest = crypto.hash_bytes(
        wire.frame(nonce, wire.u16(count), wire.i64(value), *[l.to_bytes() for l in inputs])
    )
    return Label(count, value, digest, leaf=False)


def combine_labels(
    node: NodeId, child_labels: list[Label], own_value: int, nonce: bytes
) -> Label:
    """Parent label from child labels (ascending by child id) plus the node's
    own contribution, appended last in leaf format."""
    return internal_label(nonce, child_labels + [leaf_label(node, own_value)])


# Off-path data: one step per ancestor level, bottom-up.  `slot` is where the
# recomputing node's current label goes among the ancestor's inputs.
@dataclass(frozen=True)
class PathStep:
    slot: int
    others: tuple[Label, ...]


def offpath_to_bytes(steps: list[PathStep]) -> bytes:
    return wire.frame(
        *[wire.frame(wire.u16(s.slot), *[l.to_bytes() for l in s.others]) for s in steps]
    )


def offpath_from_bytes(data: bytes) -> list[PathStep]:
    steps = []
    for raw in wire.unframe(data):
        fields = wire.unframe(raw)
        if not fields:
            raise FrameError("empty off-path step")
        slot = wire.read_u16(fields[0])
        steps.append(PathStep(slot, tuple(Label.from_bytes(f) for f in fields[1:])))
    return steps


def recompute_root(own: Label, steps: list[PathStep], nonce: bytes) -> Label:
    cur = own
    for step in steps:
        inputs = list(step.others[: step.slot]) + [cur] + list(step.others[step.slot :])
        cur = internal_label(nonce, inputs)
    return cur


@dataclass
class ShiaResult:
    accepted: bool
    root_label: Label | None
    root_ok: bool
    agg_ack: bytes | None
    expected_ack: bytes
    # Per-node outcomes, all keyed by sensor NodeId.
    acked: dict[NodeId, bool] = field(default_factory=dict)
    released: dict[NodeId, bytes | None] = field(default_factory=dict)
    child_acks: dict[NodeId, dict[NodeId, bytes]] = field(default_factory=dict)
    sent_labels: dict[NodeId, Label | None] = field(default_factory=dict)

    @property
    def value(self) -> int | None:
        return self.root_label.value if self.root_label else None


def _garble(data: bytes) -> bytes:
    return bytes([data[0] ^ 0x01]) + data[1:]


def run_shia(
    net: Network,
    tree: AggregationTree,
    values: dict[NodeId, int],
    adv,
    nonce: bytes,
    value_range: tuple[int, int],
) -> ShiaResult:
    """Execute one full aggregation session over `tree`.

    `adv` supplies per-node deviations (see adversary.Adversary); passing a
    no-op adversary yields the honest run.
    """
    m_lo, m_hi = value_range
    epochs = schedule_epochs(tree)

    # --- query dissemination ---
    net.phase = "query"
    net.bs_broadcast(BS_ID, wire.frame(nonce))

    # --- aggregate-commit ---
    net.phase = "commit"
    inbox: dict[NodeId, dict[NodeId, Label]] = {n: {} for n in tree.members}
    inbox[BS_ID] = {}
    extra_inputs: dict[NodeId, list[Label]] = {n: [] for n in tree.members}
    inputs_used: dict[NodeId, list[Label]] = {}
    accepted_children: dict[NodeId, list[NodeId]] = {}
    sent_labels: dict[NodeId, Label | None] = {}

    for epoch in epochs:
        for node in epoch:
            own_val = values[node]
            forge_val = adv.action(node, "commit", "own_value_forge")
            if forge_val is not None:
                own_val = forge_val.params["value"]  # legal, never traced

            kept: list[NodeId] = []
            child_labels: list[Label] = []
            for child in tree.children.get(node, []):
                lab = inbox[node].get(child)
                if lab is None:
                    continue  # silent child: exclude its subtree
                if lab.count < 1 or not (m_lo * lab.count <= lab.value <= m_hi * lab.count):
                    continue  # implausible label: treat as silent
                kept.append(child)
                child_labels.append(lab)
            extras = extra_inputs[node]
            inputs = child_labels + extras + [leaf_label(node, own_val)]
            if len(inputs) == 1:
                label: Label | None = inputs[0]
            else:
                label = internal_label(nonce, inputs)
            inputs_used[node] = inputs
            accepted_children[node] = kept

            act = adv.action(node, "commit", "label_forge")
            if act is not None:
                p = act.params
                forged_value = p.get("value", label.value + p.get("value_add", 0))
                label = Label(
                    p.get("count", label.count),
                    forged_value,
                    p.get("commit", crypto.hash_bytes(b"forged" + nonce + wire.u16(node))),
                    leaf=False,
                )
                adv.fire(node, "commit", "label_forge")
            if adv.action(node, "commit", "label_drop") is not None:
                adv.fire(node, "commit", "label_drop")
                sent_labels[node] = None
                continue
            switch = adv.action(node, "commit", "parent_switch")
            if switch is not None:
                # Covert handoff between colluding faulty nodes; the real
                # parent sees silence, the target folds the label in.  If
                # the accomplice is no longer in the tree, the label is lost.
                target = switch.params["target"]
                if target in extra_inputs:
                    extra_inputs[target].append(label)
                adv.fire(node, "commit", "parent_switch")
                sent_labels[node] = label
                continue
            sent_labels[node] = label
            delivered = net.send_link(node, tree.parent[node], label.to_bytes())
            if delivered is not None:
                inbox[tree.parent[node]][node] = Label.from_bytes(delivered)

    b = tree.bs_child
    root_label = inbox[BS_ID].get(b)
    expected = crypto.xor_acks(
        [crypto.node_ack(net.keys.bs_key(s), nonce) for s in sorted(tree.members)]
    )

    if root_label is None:
        return ShiaResult(
            accepted=False,
            root_label=None,
            root_ok=False,
            agg_ack=None,
            expected_ack=expected,
            acked={n: False for n in tree.members},
            released={n: None for n in tree.members},
            child_acks={n: {} for n in tree.members},
            sent_labels=sent_labels,
        )

    # BS-side plausibility: the root count must cover the whole tree and the
    # root value must be achievable from in-range measurements.
    root_ok = root_label.count == len(tree.members) and (
        m_lo * root_label.count <= root_label.value <= m_hi * root_label.count
    )

    # --- result checking: off-path dissemination ---
    net.phase = "check"
    net.bs_broadcast(BS_ID, wire.frame(nonce, root_label.to_bytes()))
    offpath: dict[NodeId, list[PathStep] | None] = {n: None for n in tree.members}
    offpath[b] = []
    for epoch in reversed(epochs):
        for node in epoch:
            above = offpath[node]
            if above is None:
                continue  # node got nothing, so it has nothing to forward
            inputs = inputs_used.get(node, [])
            corrupt = adv.action(node, "offpath", "offpath_corrupt")
            for idx, child in enumerate(accepted_children.get(node, [])):
                others = tuple(inputs[:idx] + inputs[idx + 1 :])
                steps = [PathStep(idx, others)] + above
                msg = offpath_to_bytes(steps)
                if corrupt is not None:
                    msg = _garble(msg)
                    adv.fire(node, "offpath", "offpath_corrupt")
                delivered = net.send_link(node, child, msg)
                if delivered is not None:
                    try:
                        offpath[child] = offpath_from_bytes(delivered)
                    except FrameError:
                        offpath[child] = None

    # --- acknowledgement aggregation ---
    net.phase = "ack"
    acked: dict[NodeId, bool] = {}
    released: dict[NodeId, bytes | None] = {}
    ack_inbox: dict[NodeId, dict[NodeId, bytes]] = {n: {} for n in tree.members}
    ack_inbox[BS_ID] = {}
    for epoch in epochs:
        for node in epoch:
            own = sent_labels.get(node)
            steps = offpath[node]
            if own is None or steps is None:
                match = False
            else:
                match = recompute_root(own, steps, nonce) == root_label
            acked[node] = match

            out_ack: bytes | None = (
                crypto.node_ack(net.keys.bs_key(node), nonce) if match else None
            )
            if out_ack is not None and adv.action(node, "ack", "ack_drop") is not None:
                adv.fire(node, "ack", "ack_drop")
                out_ack = None
                acked[node] = False
            if out_ack is not None and adv.action(node, "ack", "ack_garble") is not None:
                adv.fire(node, "ack", "ack_garble")
                out_ack = _garble(out_ack)
            released[node] = out_ack

            parts = [ack_inbox[node][c] for c in sorted(ack_inbox[node])]
            if out_ack is not None:
                parts.append(out_ack)
            up = crypto.xor_acks(parts) if parts else None
            if adv.action(node, "ack", "agg_ack_garble") is not None:
                adv.fire(node, "ack", "agg_ack_garble")
                up = _garble(up) if up is not None else _garble(crypto.ZERO_ACK)
            if up is not None:
                delivered = net.send_link(node, tree.parent[node], up)
                if delivered is not None and len(delivered) == wire.ACK_LEN:
                    ack_inbox[tree.parent[node]][node] = delivered

    agg_ack = ack_inbox[BS_ID].get(b)
    accepted = root_ok and agg_ack == expected
    return ShiaResult(
        accepted=accepted,
        root_label=root_label,
        root_ok=root_ok,
        agg_ack=agg_ack,
        expected_ack=expected,
        acked=acked,
        released=released,
        child_acks={n: ack_inbox[n] for n in tree.members},
        sent_labels=sent_labels,
    )
