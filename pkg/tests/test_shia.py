import random

import pytest

from robustagg import crypto, shia, wire
from robustagg.crypto import BS_ID
from robustagg.errors import FrameError
from robustagg.netmodel import AggregationTree

from helpers import (
    entry,
    net_for_tree,
    oracle_combine,
    oracle_leaf_bytes,
    oracle_root,
    run_session,
)

NONCE = b"\x07" * 8

# BS - 1 - {2, 3}; 2 - {4, 5}; 3 - {6, 7}: a full binary tree of 7 sensors.
BINARY = {1: BS_ID, 2: 1, 3: 1, 4: 2, 5: 2, 6: 3, 7: 3}


def random_parent_map(rng: random.Random, n: int) -> dict[int, int]:
    parent = {1: BS_ID}
    for s in range(2, n + 1):
        parent[s] = rng.randint(1, s - 1)
    return parent


class TestLabels:
    def test_leaf_label_fields(self):
        lab = shia.leaf_label(7, 5)
        assert (lab.count, lab.value) == (1, 5)
        assert lab.commit == wire.u16(7)
        assert lab.leaf

    def test_leaf_bytes_match_oracle(self):
        assert shia.leaf_label(7, 5).to_bytes() == oracle_leaf_bytes(7, 5)

    def test_internal_label_matches_oracle(self):
        a, b = shia.leaf_label(1, 10), shia.leaf_label(2, 20)
        lab = shia.internal_label(NONCE, [a, b])
        c, v, digest = oracle_combine(
            NONCE, [(1, 10, a.to_bytes()), (1, 20, b.to_bytes())]
        )
        assert (lab.count, lab.value, lab.commit) == (c, v, digest)

    def test_input_order_changes_commitment(self):
        a, b = shia.leaf_label(1, 10), shia.leaf_label(2, 20)
        assert shia.internal_label(NONCE, [a, b]) != shia.internal_label(NONCE, [b, a])

    def test_nonce_changes_commitment(self):
        a = shia.leaf_label(1, 10)
        one = shia.internal_label(b"\x01" * 8, [a, a])
        two = shia.internal_label(b"\x02" * 8, [a, a])
        assert one.commit != two.commit

    def test_roundtrip(self):
        for lab in (shia.leaf_label(9, -3), shia.internal_label(NONCE, [shia.leaf_label(1, 1), shia.leaf_label(2, 2)])):
            back = shia.Label.from_bytes(lab.to_bytes())
            assert back == lab
            assert lab.size == len(lab.to_bytes())

    def test_bad_tag_and_commit_length_rejected(self):
        with pytest.raises(FrameError):
            shia.Label.from_bytes(b"\x05" + b"junk")
        good = shia.leaf_label(1, 1).to_bytes()
        with pytest.raises(FrameError):
            # leaf tag but digest-sized commitment
            shia.Label.from_bytes(b"\x00" + wire.frame(wire.u16(1), wire.i64(1), b"x" * 32))
        assert shia.Label.from_bytes(good)  # sanity: the original parses

    def test_recompute_root_walks_sibling_steps(self):
        a, b, c = shia.leaf_label(1, 1), shia.leaf_label(2, 2), shia.leaf_label(3, 3)
        mid = shia.internal_label(NONCE, [a, b])
        root = shia.internal_label(NONCE, [mid, c])
        steps = [shia.PathStep(0, (b,)), shia.PathStep(0, (c,))]
        assert shia.recompute_root(a, steps, NONCE) == root
        back = shia.offpath_from_bytes(shia.offpath_to_bytes(steps))
        assert back == steps


class TestHonestRuns:
    def test_binary_tree_root_matches_independent_recomputation(self):
        net, tree = net_for_tree(BINARY)
        values = {s: 10 * s for s in tree.members}
        sres, marks, _, _ = run_session(net, tree, values, [], frozenset())
        assert sres.accepted
        count, value, raw = oracle_root(NONCE, tree, values)
        assert sres.root_label == shia.Label.from_bytes(raw)
        assert (count, value) == (7, sum(values.values()))
        assert sres.value == sum(values.values())

    def test_everyone_acks_and_aggregate_matches_expectation(self):
        net, tree = net_for_tree(BINARY)
        values = {s: 5 for s in tree.members}
        sres, _, _, _ = run_session(net, tree, values, [], frozenset())
        assert all(sres.acked.values())
        assert sres.agg_ack == sres.expected_ack
        assert sres.agg_ack == crypto.xor_acks(
            [crypto.node_ack(net.keys.bs_key(s), NONCE) for s in tree.members]
        )

    def test_random_trees_always_accept_exact_sum(self):
        rng = random.Random(23)
        for _ in range(40):
            n = rng.randint(1, 25)
            parent = random_parent_map(rng, n)
            net, tree = net_for_tree(parent)
            values = {s: rng.randint(0, 100) for s in tree.members}
            sres, _, _, _ = run_session(net, tree, values, [], frozenset())
            assert sres.accepted, parent
            assert sres.value == sum(values.values())
            assert all(sres.acked.values())


class TestMisbehavior:
    def test_internal_forger_denied_by_its_own_children(self):
        # Node 2 forges its combined label; 4 and 5 cannot re-derive the root.
        net, tree = net_for_tree(BINARY)
        values = {s: 10 for s in tree.members}
        scripts = [entry(2, "label_forge", value=35)]
        sres, marks, als2_ran, adv = run_session(net, tree, values, scripts, frozenset({2}))
        assert not sres.accepted
        assert not sres.acked[4] and not sres.acked[5]
        assert sres.acked[2]  # the forger can still ack its own forgery
        assert not als2_ran
        assert marks is not None and marks.nodes() & adv.misbehaved(0)

    def test_out_of_range_label_excluded_by_parent(self):
        net, tree = net_for_tree(BINARY)
        values = {s: 10 for s in tree.members}
        scripts = [entry(4, "label_forge", value=10**6)]
        sres, marks, _, _ = run_session(net, tree, values, scripts, frozenset({4}))
        assert not sres.accepted
        assert not sres.root_ok
        assert sres.root_label.count == 6  # node 4's subtree dropped
        assert marks.nodes() == {4, 2}

    def test_label_drop_silences_whole_subtree(self):
        net, tree = net_for_tree(BINARY)
        values = {s: 10 for s in tree.members}
        scripts = [entry(2, "label_drop")]
        sres, marks, _, _ = run_session(net, tree, values, scripts, frozenset({2}))
        assert not sres.accepted
        assert sres.root_label.count == 4  # 1, 3, 6, 7 remain
        assert not sres.acked[2] and not sres.acked[4] and not sres.acked[5]
        assert marks.nodes() == {2, 1}

    def test_root_child_drop_leaves_bs_empty_handed(self):
        net, tree = net_for_tree(BINARY)
        values = {s: 10 for s in tree.members}
        sres, marks, _, _ = run_session(
            net, tree, values, [entry(1, "label_drop")], frozenset({1})
        )
        assert sres.root_label is None and not sres.accepted
        assert marks.nodes() == {1}

    def test_offpath_corruption_blocks_descendants_only(self):
        net, tree = net_for_tree(BINARY)
        values = {s: 10 for s in tree.members}
        scripts = [entry(3, "offpath_corrupt")]
        sres, marks, _, _ = run_session(net, tree, values, scripts, frozenset({3}))
        assert not sres.accepted
        assert not sres.acked[6] and not sres.acked[7]
        assert sres.acked[3] and sres.acked[1] and sres.acked[4]
        assert marks.nodes() == {6, 7, 3}

    def test_ack_drop_breaks_the_aggregate_only(self):
        net, tree = net_for_tree(BINARY)
        values = {s: 10 for s in tree.members}
        scripts = [entry(5, "ack_drop")]
        sres, marks, _, _ = run_session(net, tree, values, scripts, frozenset({5}))
        assert not sres.accepted
        assert sres.root_ok  # the aggregate itself was fine
        assert sres.agg_ack != sres.expected_ack
        assert marks.nodes() == {5, 2}

    def test_correct_edges_agree_on_ack_booleans(self):
        # Every behavior above: both-correct tree edges always agree.
        rng = random.Random(5)
        for kind, params in (
            ("label_forge", {"value": 35}),
            ("label_drop", {}),
            ("offpath_corrupt", {}),
            ("ack_drop", {}),
            ("ack_garble", {}),
            ("agg_ack_garble", {}),
        ):
            for _ in range(10):
                n = rng.randint(2, 15)
                parent = random_parent_map(rng, n)
                net, tree = net_for_tree(parent)
                f = rng.randint(1, n)
                values = {s: 10 for s in tree.members}
                sres, _, _, adv = run_session(
                    net, tree, values, [entry(f, kind, **params)], frozenset({f})
                )
                bad = adv.misbehaved(0)
                for c, p in parent.items():
                    if p == BS_ID or c in bad or p in bad:
                        continue
                    assert sres.acked[c] == sres.acked[p], (parent, f, kind)


def test_parent_switch_routes_label_through_accomplice():
    # 4 hands its label to faulty sibling 5 instead of parent 2.
    net, tree = net_for_tree(BINARY)
    values = {s: 10 for s in tree.members}
    scripts = [entry(4, "parent_switch", target=5)]
    sres, marks, _, _ = run_session(net, tree, values, scripts, frozenset({4, 5}))
    assert not sres.accepted
    # The value still arrives once (via 5), but 4 looks silent to 2.
    assert sres.root_label.count == 7
    assert sres.value == 70
    assert not sres.acked[4]
    assert marks.nodes() == {4, 2}
