"""Multiple-input address clustering.

Addresses spent together as inputs of one transaction are merged into one
cluster.  Transactions that look like CoinJoins are skipped first, since they
co-spend coins of unrelated owners.
"""

from __future__ import annotations

import csv
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable

from .chaindata import Transaction
from .errors import UnknownAddress, UnknownSchema

log = logging.getLogger(__name__)


class DisjointSet:
    """Union-find over dense integer ids, union by size with path compression."""

    __slots__ = ("parent", "size")

    def __init__(self, n: int = 0):
        self.parent = list(range(n))
        self.size = [1] * n

    def __len__(self):
        return len(self.parent)

    def add(self) -> int:
        i = len(self.parent)
        self.parent.append(i)
        self.size.append(1)
        return i

    def find(self, x: int) -> int:
        parent = self.parent
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    def union(self, a: int, b: int) -> int:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return ra
        size = self.size
        if size[ra] < size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        size[ra] += size[rb]
        return ra


def _max_equal_group(values: list[int], tolerance: int) -> int:
    if tolerance == 0:
        return max(Counter(values).values())
    values = sorted(values)
    best = lo = 0
    for hi, v in enumerate(values):
        while v - values[lo] > tolerance:
            lo += 1
        best = max(best, hi - lo + 1)
    return best


def is_coinjoin(tx: Transaction, min_equal: int = 3, tolerance: int = 0) -> bool:
    """Equal-output CoinJoin test.

    True when some ``k >= min_equal`` outputs carry the same value (within
    ``tolerance`` satoshi) and at least ``k`` distinct addresses fund the
    transaction.  A lone spender never qualifies.
    """
    if tx.is_coinbase or len(tx.outputs) < min_equal or len(tx.inputs) < min_equal:
        return False
    n_spenders = len({i.address for i in tx.inputs if i.address is not None})
    if n_spenders < min_equal:
        return False
    return _max_equal_group([o.value for o in tx.outputs], tolerance) >= min_equal


@dataclass
class ClusterPartition:
    """Immutable result of clustering.

    ``labels[i]`` is the cluster id of ``addresses[i]``: the smallest address
    index in that cluster, so ids are stable for a given input order.
    """

    addresses: list[str]
    index: dict[str, int]
    labels: list[int]
    received: list[int]
    skipped_coinjoins: list[str] = field(default_factory=list)
    _members: dict[int, list[int]] | None = field(default=None, repr=False, compare=False)

    def __len__(self):
        return len(self.addresses)

    def __contains__(self, address: str) -> bool:
        return address in self.index

    def cluster_of(self, address: str) -> int:
        try:
            return self.labels[self.index[address]]
        except KeyError:
            raise UnknownAddress(address) from None

    def get(self, address: str, default=None):
        i = self.index.get(address)
        return default if i is None else self.labels[i]

    def _member_map(self) -> dict[int, list[int]]:
        if self._members is None:
            members: dict[int, list[int]] = {}
            for i, c in enumerate(self.labels):
                members.setdefault(c, []).append(i)
            self._members = members
        return self._members

    def members(self, cluster_id: int) -> list[str]:
        return [self.addresses[i] for i in self._member_map().get(cluster_id, ())]

    def cluster_ids(self) -> list[int]:
        return sorted(self._member_map())

    @property
    def n_clusters(self) -> int:
        return len(self._member_map())

    def cluster_size(self, cluster_id: int) -> int:
        return len(self._member_map().get(cluster_id, ()))

    def cluster_received(self, cluster_id: int) -> int:
        return sum(self.received[i] for i in self._member_map().get(cluster_id, ()))

    def as_sets(self) -> set[frozenset[str]]:
        """The partition as a set of address sets, independent of ids."""
        addrs = self.addresses
        return {frozenset(addrs[i] for i in m) for m in self._member_map().values()}


class Clusterer:
    """Incremental builder; feed transactions, then call ``finalize``."""

    def __init__(self, coinjoin_filter: bool = True, min_equal: int = 3, tolerance: int = 0):
        self.coinjoin_filter = coinjoin_filter
        self.min_equal = min_equal
        self.tolerance = tolerance
        self.addresses: list[str] = []
        self.index: dict[str, int] = {}
        self.received: list[int] = []
        self.forest = DisjointSet()
        self.skipped: list[str] = []

    def register(self, address: str) -> int:
        i = self.index.get(address)
        if i is None:
            i = len(self.addresses)
            self.index[address] = i
            self.addresses.append(address)
            self.received.append(0)
            self.forest.add()
        return i

    def union_addresses(self, addresses: Iterable[str]) -> None:
        ids = [self.register(a) for a in addresses]
        if len(ids) > 1:
            first = ids[0]
            union = self.forest.union
            for j in ids[1:]:
                union(first, j)

    def add_transaction(self, tx: Transaction) -> None:
        register = self.register
        received = self.received
        for out in tx.outputs:
            if out.address is not None:
                received[register(out.address)] += out.value
        if tx.is_coinbase:
            return
        inputs = tx.inputs
        if len(inputs) == 1:
            if inputs[0].address is not None:
                register(inputs[0].address)
            return
        spenders = list(dict.fromkeys(i.address for i in inputs if i.address is not None))
        if len(spenders) < 2:
            for a in spenders:
                register(a)
            return
        if self.coinjoin_filter and is_coinjoin(tx, self.min_equal, self.tolerance):
            self.skipped.append(tx.txid)
            for a in spenders:
                register(a)
            return
        self.union_addresses(spenders)

    def finalize(self) -> ClusterPartition:
        n = len(self.addresses)
        find = self.forest.find
        rep = [-1] * n
        labels = [0] * n
        for i in range(n):
            r = find(i)
            if rep[r] < 0:
                rep[r] = i
            labels[i] = rep[r]
        return ClusterPartition(list(self.addresses), dict(self.index), labels,
                                list(self.received), list(self.skipped))


def cluster_transactions(txs: Iterable[Transaction], coinjoin_filter: bool = True,
                         min_equal: int = 3, tolerance: int = 0) -> ClusterPartition:
    builder = Clusterer(coinjoin_filter, min_equal, tolerance)
    add = builder.add_transaction
    for tx in txs:
        add(tx)
    partition = builder.finalize()
    log.info("clustered %d addresses into %d clusters (%d coinjoins skipped)",
             len(partition), partition.n_clusters, len(partition.skipped_coinjoins))
    return partition


def cluster_of(partition: ClusterPartition, address: str) -> int:
    return partition.cluster_of(address)


def merge_partitions(*partitions: ClusterPartition) -> ClusterPartition:
    """Combine partitions built from disjoint transaction batches."""
    builder = Clusterer()
    for p in partitions:
        for i, addr in enumerate(p.addresses):
            j = builder.register(addr)
            builder.received[j] += p.received[i]
            rep = p.addresses[p.labels[i]]
            if rep != addr:
                builder.forest.union(builder.register(rep), j)
        builder.skipped.extend(p.skipped_coinjoins)
    return builder.finalize()


# -- CSV --------------------------------------------------------------------

def write_partition(partition: ClusterPartition, fh: IO[str]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["address", "cluster_id"])
    for addr, label in zip(partition.addresses, partition.labels):
        w.writerow([addr, label])


def write_cluster_summary(partition: ClusterPartition, fh: IO[str]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["cluster_id", "n_addresses", "received_satoshi"])
    members = partition._member_map()
    for cid in sorted(members):
        idx = members[cid]
        w.writerow([cid, len(idx), sum(partition.received[i] for i in idx)])


def read_partition(path: str | Path, summary: str | Path | None = None) -> ClusterPartition:
    """Rebuild a partition from its ``address,cluster_id`` export.

    Per-address received amounts are not part of the export; they are zero
    unless ``summary`` is given, in which case each cluster's total is
    attributed to its representative address.
    """
    addresses: list[str] = []
    index: dict[str, int] = {}
    raw_labels: list[str] = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["address", "cluster_id"]:
            raise UnknownSchema(f"{path}: expected header address,cluster_id")
        for row in reader:
            if not row:
                continue
            index[row[0]] = len(addresses)
            addresses.append(row[0])
            raw_labels.append(row[1])
    first: dict[str, int] = {}
    labels = []
    for i, raw in enumerate(raw_labels):
        labels.append(first.setdefault(raw, i))
    received = [0] * len(addresses)
    if summary is not None:
        rep_of = {raw: first[raw] for raw in first}
        with open(summary, encoding="utf-8", newline="") as fh:
            for row in csv.DictReader(fh):
                i = rep_of.get(row["cluster_id"])
                if i is not None:
                    received[i] = int(row["received_satoshi"])
    return ClusterPartition(addresses, index, labels, received)
