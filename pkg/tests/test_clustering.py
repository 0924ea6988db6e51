import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import coinbase, components_bfs, spend, tx, txid
from poolscope.clustering import (
    Clusterer,
    DisjointSet,
    cluster_of,
    cluster_transactions,
    is_coinjoin,
    merge_partitions,
    read_partition,
    write_cluster_summary,
    write_partition,
)
from poolscope.errors import UnknownAddress


def test_disjoint_set_basics():
    ds = DisjointSet(5)
    ds.union(0, 1)
    ds.union(3, 4)
    ds.union(1, 4)
    assert ds.find(0) == ds.find(3) == ds.find(4)
    assert ds.find(2) == 2
    assert ds.find(ds.find(0)) == ds.find(0)
    assert ds.size[ds.find(0)] == 4
    assert ds.add() == 5 and len(ds) == 6


def test_coinjoin_rule():
    assert not is_coinjoin(spend(["A", "B"], [("X", 5000), ("Y", 7000)]))
    cj = spend([f"in{i}" for i in range(5)], [(f"o{i}", 10_000_000) for i in range(4)] + [("c", 12)],
               value=10_000_000)
    assert is_coinjoin(cj)
    one = tx([(txid("p"), 0, "A", 100), (txid("q"), 0, "A", 100)], [("X", 50), ("Y", 50), ("Z", 50)])
    assert not is_coinjoin(one)
    # three equal outputs but only two spenders
    assert not is_coinjoin(spend(["A", "B", "A"], [("X", 7), ("Y", 7), ("Z", 7)]))
    assert not is_coinjoin(coinbase([("a", 1), ("b", 1), ("c", 1)]))


def test_coinjoin_tolerance_and_threshold():
    t = spend(["A", "B", "C"], [("X", 1000), ("Y", 1002), ("Z", 999)])
    assert not is_coinjoin(t)
    assert is_coinjoin(t, tolerance=3)
    assert not is_coinjoin(t, tolerance=3, min_equal=4)


def test_abc_example():
    t1 = spend(["A", "B"], [("Q", 1)])
    t2 = spend(["B", "C"], [("R", 1)])
    p = cluster_transactions([t1, t2])
    assert cluster_of(p, "A") == cluster_of(p, "B") == cluster_of(p, "C")
    assert frozenset("ABC") in p.as_sets()
    assert p.cluster_size(p.cluster_of("A")) == 3
    assert p.cluster_of("Q") != p.cluster_of("A")


def test_no_transactions():
    p = cluster_transactions([])
    assert len(p) == 0 and p.n_clusters == 0
    # receive-only addresses are all singletons
    p = cluster_transactions([coinbase([("a", 1), ("b", 2)])])
    assert p.as_sets() == {frozenset({"a"}), frozenset({"b"})}
    assert p.cluster_received(p.cluster_of("b")) == 2


def test_unknown_address():
    p = cluster_transactions([spend(["A", "B"], [("C", 1)])])
    with pytest.raises(UnknownAddress):
        p.cluster_of("nope")
    assert p.get("nope") is None


def test_disjoint_addresses_stay_apart():
    p = cluster_transactions([spend(["A", "B"], [("C", 1)]), spend(["D"], [("E", 1)])])
    assert p.cluster_of("A") == p.cluster_of("B")
    assert p.cluster_of("D") != p.cluster_of("A")


def test_cluster_id_is_first_seen_member():
    p = cluster_transactions([spend(["X", "Y"], [("Z", 1)]), spend(["W", "Y"], [("V", 1)])])
    # outputs register before inputs
    assert p.addresses[:3] == ["Z", "X", "Y"]
    assert {p.cluster_of(a) for a in "XYW"} == {p.index["X"]}


def test_null_inputs_ignored():
    t = tx([(txid("n1"), 0, None, 5), (txid("n2"), 0, "A", 5), (txid("n3"), 0, None, 5)], [("B", 10)])
    p = cluster_transactions([t])
    assert p.as_sets() == {frozenset({"A"}), frozenset({"B"})}


def test_coinjoin_filter_toggle():
    cj = spend(["A", "B", "C"], [("X", 50), ("Y", 50), ("Z", 50)])
    filtered = cluster_transactions([cj])
    assert filtered.skipped_coinjoins == [cj.txid]
    assert len({filtered.cluster_of(a) for a in "ABC"}) == 3
    raw = cluster_transactions([cj], coinjoin_filter=False)
    assert len({raw.cluster_of(a) for a in "ABC"}) == 1


def random_txs(rng, n_tx, n_addr):
    txs = []
    for _ in range(n_tx):
        k = rng.choice([1, 1, 2, 2, 3, 4])
        ins = rng.sample(range(n_addr), k)
        txs.append(spend([f"a{i}" for i in ins], [(f"a{rng.randrange(n_addr)}", 1)]))
    return txs


def test_matches_bfs_oracle_small():
    rng = random.Random(11)
    txs = random_txs(rng, 1000, 500)
    p = cluster_transactions(txs)
    expected = components_bfs(p.addresses, (t.input_addresses() for t in txs))
    assert p.as_sets() == expected
    for t in txs[:50]:
        ids = {p.cluster_of(a) for a in t.input_addresses()}
        assert len(ids) == 1


@settings(max_examples=40, deadline=None)
@given(st.lists(st.lists(st.integers(0, 15), min_size=1, max_size=4), max_size=25), st.randoms())
def test_order_independence(groups, rnd):
    txs = [spend([f"a{i}" for i in g], [("out", 1)]) for g in groups]
    shuffled = list(txs)
    rnd.shuffle(shuffled)
    assert cluster_transactions(txs).as_sets() == cluster_transactions(shuffled).as_sets()


@settings(max_examples=40, deadline=None)
@given(st.lists(st.lists(st.integers(0, 15), min_size=1, max_size=4), min_size=1, max_size=25),
       st.integers(0, 24))
def test_removing_a_tx_never_merges(groups, drop):
    txs = [spend([f"a{i}" for i in g], [("out", 1)]) for g in groups]
    full = cluster_transactions(txs)
    fewer = cluster_transactions(txs[:drop % len(txs)] + txs[drop % len(txs) + 1:])
    for a in fewer.addresses:
        for b in fewer.members(fewer.cluster_of(a)):
            assert full.cluster_of(a) == full.cluster_of(b)


def test_batches_merge_to_sequential_result():
    rng = random.Random(5)
    txs = random_txs(rng, 600, 300)
    whole = cluster_transactions(txs)
    merged = merge_partitions(cluster_transactions(txs[:200]), cluster_transactions(txs[200:450]),
                              cluster_transactions(txs[450:]))
    assert merged.as_sets() == whole.as_sets()
    totals = {frozenset(whole.members(c)): whole.cluster_received(c) for c in whole.cluster_ids()}
    assert {frozenset(merged.members(c)): merged.cluster_received(c) for c in merged.cluster_ids()} == totals


def test_partition_csv_round_trip(tmp_path):
    txs = [spend(["A", "B"], [("C", 7)]), spend(["C", "D"], [("E", 3)])]
    p = cluster_transactions(txs)
    part_path, summ_path = tmp_path / "clusters.csv", tmp_path / "summary.csv"
    with open(part_path, "w", newline="") as fh:
        write_partition(p, fh)
    with open(summ_path, "w", newline="") as fh:
        write_cluster_summary(p, fh)
    assert part_path.read_text().splitlines()[0] == "address,cluster_id"
    assert summ_path.read_text().splitlines()[0] == "cluster_id,n_addresses,received_satoshi"
    back = read_partition(part_path, summ_path)
    assert back.as_sets() == p.as_sets()
    for c in p.cluster_ids():
        rep = p.members(c)[0]
        assert back.cluster_received(back.cluster_of(rep)) == p.cluster_received(c)


def test_incremental_builder():
    b = Clusterer()
    b.union_addresses(["p", "q"])
    b.add_transaction(spend(["q", "r"], [("s", 1)]))
    p = b.finalize()
    assert frozenset("pqr") in p.as_sets()
