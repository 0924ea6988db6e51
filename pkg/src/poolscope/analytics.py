"""Concentration and relationship statistics over attributed blocks and payouts."""

from __future__ import annotations

import csv
import itertools
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Mapping

import numpy as np

from .attribution import AttributionLedger
from .chaindata import ChainIndex, btc
from .clustering import ClusterPartition
from .errors import AllZero, EmptyInput, UnknownSchema, WindowTooSmall
from .payouts import PayoutSet

log = logging.getLogger(__name__)

OTHER = "Other"
UNKNOWN = "Unknown"
SERVICE_ORDER = ("W", "E", "P", "M")


def gini(values: Iterable[float]) -> float:
    """Population Gini coefficient, sum_ij |x_i - x_j| / (2 n sum_k x_k).

    Evaluated on the sorted values as sum_i (2i - n - 1) x_(i) / (n sum x),
    which is O(n log n).  The result lies in [0, 1 - 1/n].
    """
    x = np.asarray(list(values) if not isinstance(values, np.ndarray) else values, dtype=float)
    if x.size == 0:
        raise EmptyInput("gini of an empty sequence")
    if np.any(x < 0) or not np.all(np.isfinite(x)):
        raise ValueError("gini needs finite non-negative values")
    total = x.sum()
    if total == 0:
        raise AllZero("gini of all-zero values")
    n = x.size
    x = np.sort(x)
    coef = 2.0 * np.arange(1, n + 1) - n - 1
    g = float(np.dot(coef, x) / (n * total))
    return min(max(g, 0.0), 1.0 - 1.0 / n)


@dataclass
class EpochStats:
    epoch: int
    start_height: int
    end_height: int  # exclusive
    counts: dict[str, float]  # every known entity that mined in the bin
    shares: dict[str, float]  # entities above the threshold only
    other_share: float
    unknown_share: float
    gini: float

    def all_shares(self) -> dict[str, float]:
        out = dict(self.shares)
        out[OTHER] = self.other_share
        out[UNKNOWN] = self.unknown_share
        return out


def epoch_shares(ledger: AttributionLedger, bin_len: int = 2016, small_threshold: float = 0.04,
                 gini_include_unknown: bool = False) -> list[EpochStats]:
    """Market shares per ``bin_len`` blocks, starting at the ledger's first height.

    A conflicting block counts 1/k towards each of its k entities.  Entities
    whose share of the whole analysed window (full bins only) is below
    ``small_threshold`` are folded into Other in every bin.  The per-bin Gini
    is over the block counts of known entities; with ``gini_include_unknown``
    the unattributed blocks join as one pseudo-entity.  A bin without any
    input for the Gini reports NaN.
    """
    if bin_len < 1:
        raise ValueError("bin_len must be positive")
    n_bins = ledger.n_blocks // bin_len
    if n_bins == 0:
        raise WindowTooSmall(f"{ledger.n_blocks} blocks do not fill one bin of {bin_len}")
    start = ledger.start
    end = start + n_bins * bin_len

    bins: list[dict[str, float]] = [defaultdict(float) for _ in range(n_bins)]
    overall: dict[str, float] = defaultdict(float)
    for h, a in ledger.by_height.items():
        if not start <= h < end:
            continue
        w = 1.0 / len(a.attributions)
        b = bins[(h - start) // bin_len]
        for e in a.attributions:
            b[e] += w
            overall[e] += w
    window_blocks = n_bins * bin_len
    named = {e for e, c in overall.items() if c / window_blocks >= small_threshold}

    out = []
    for i, counts in enumerate(bins):
        lo = start + i * bin_len
        known = sum(counts.values())
        unknown = bin_len - known
        shares = {e: counts[e] / bin_len for e in sorted(named) if counts.get(e, 0) > 0}
        other = sum(c for e, c in counts.items() if e not in named) / bin_len
        g_input = [c for c in counts.values() if c > 0]
        if gini_include_unknown and unknown > 1e-9:
            g_input.append(unknown)
        g = gini(g_input) if g_input else float("nan")
        out.append(EpochStats(i, lo, lo + bin_len, dict(sorted(counts.items())), shares, other,
                              unknown / bin_len, g))
    return out


def ranked_amounts(amounts: Mapping) -> list[tuple[object, float]]:
    """Items sorted by amount descending, ties by key."""
    return sorted(amounts.items(), key=lambda kv: (-kv[1], str(kv[0])))


def cumulative_curve(cluster_amounts: Mapping) -> tuple[list[float], int]:
    """Cumulative share of the largest clusters and the count needed for half.

    Returns ``(fractions, k_half)`` where ``fractions[k-1]`` is the share held
    by the ``k`` largest clusters and ``k_half`` is the least ``k`` reaching 0.5.
    """
    if not cluster_amounts:
        raise EmptyInput("cumulative curve of an empty map")
    values = [v for _, v in ranked_amounts(cluster_amounts)]
    if any(v < 0 for v in values):
        raise ValueError("amounts must be non-negative")
    cum = list(itertools.accumulate(values))
    total = cum[-1]
    if total == 0:
        raise AllZero("all cluster amounts are zero")
    fractions = [c / total for c in cum]
    k_half = next(k for k, c in enumerate(cum, 1) if 2 * c >= total)
    return fractions, k_half


# -- cluster helpers --------------------------------------------------------

def cluster_key(partition: ClusterPartition, address: str) -> str:
    """Printable cluster id; addresses missing from the partition are singletons."""
    cid = partition.get(address)
    return str(cid) if cid is not None else f"addr:{address}"


def pool_cluster_amounts(payouts: PayoutSet, partition: ClusterPartition) -> dict[str, int]:
    """Satoshi each cluster received from one pool's member outputs."""
    out: dict[str, int] = defaultdict(int)
    for addr, sat in payouts.member_outputs.items():
        out[cluster_key(partition, addr)] += sat
    return dict(out)


def _frac(a: float, b: float) -> float:
    return a / b if b else 0.0


@dataclass(frozen=True)
class OverlapRow:
    pool1: str
    pool2: str
    common_addresses: int
    address_jaccard: float
    address_frac_pool1: float
    address_frac_pool2: float
    common_clusters: int
    cluster_jaccard: float
    cluster_frac_pool1: float
    cluster_frac_pool2: float
    satoshi_from_pool1: int
    paid_frac_pool1: float
    satoshi_from_pool2: int
    paid_frac_pool2: float
    cluster_satoshi_from_pool1: int
    cluster_satoshi_from_pool2: int


def cross_pool_overlap(payout_sets: Mapping[str, PayoutSet], partition: ClusterPartition) -> list[OverlapRow]:
    """Pairwise overlap of member addresses and clusters between pools.

    Satoshi columns are what the common addresses received from each pool,
    as a fraction of that pool's total paid; the ``cluster_satoshi`` columns
    repeat this for the common clusters.  Jaccard ratios are over the union
    of both pools' addresses (or clusters).
    """
    pools = list(payout_sets)
    if len(pools) < 2:
        raise ValueError("overlap needs at least two pools")
    addr = {p: set(payout_sets[p].member_outputs) for p in pools}
    clus = {p: pool_cluster_amounts(payout_sets[p], partition) for p in pools}
    rows = []
    for p1, p2 in itertools.combinations(pools, 2):
        s1, s2 = payout_sets[p1], payout_sets[p2]
        common_a = addr[p1] & addr[p2]
        common_c = clus[p1].keys() & clus[p2].keys()
        sat1 = sum(s1.member_outputs[a] for a in common_a)
        sat2 = sum(s2.member_outputs[a] for a in common_a)
        rows.append(OverlapRow(
            p1, p2,
            len(common_a), _frac(len(common_a), len(addr[p1] | addr[p2])),
            _frac(len(common_a), len(addr[p1])), _frac(len(common_a), len(addr[p2])),
            len(common_c), _frac(len(common_c), len(clus[p1].keys() | clus[p2].keys())),
            _frac(len(common_c), len(clus[p1])), _frac(len(common_c), len(clus[p2])),
            sat1, _frac(sat1, s1.paid_satoshi), sat2, _frac(sat2, s2.paid_satoshi),
            sum(clus[p1][c] for c in common_c), sum(clus[p2][c] for c in common_c),
        ))
    return rows


# -- tags and actors --------------------------------------------------------

def load_tags(path: str | Path | None) -> dict[str, tuple[str, str]]:
    """Read ``address,actor,service`` CSV tags."""
    if path is None:
        return {}
    tags = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"address", "actor"} <= set(reader.fieldnames):
            raise UnknownSchema(f"{path}: tag file needs address,actor[,service] columns")
        for row in reader:
            tags[row["address"]] = (row["actor"], (row.get("service") or "?").strip())
    return tags


def _merge_services(services: Iterable[str]) -> str:
    parts = {p for s in services for p in s.split("+") if p and p != "?"}
    if not parts:
        return "?"
    ordered = [p for p in SERVICE_ORDER if p in parts] + sorted(parts - set(SERVICE_ORDER))
    return "+".join(ordered)


@dataclass
class ClusterEntry:
    key: str
    label: str
    kind: str  # tagged | unknown | conflict
    service: str
    satoshi: dict[str, int]
    addresses: dict[str, int]  # member addresses per pool
    size: int  # addresses in the whole cluster

    @property
    def total(self) -> int:
        return sum(self.satoshi.values())


@dataclass
class ActorRow:
    name: str
    service: str
    satoshi: dict[str, int]
    share: dict[str, float]
    addresses: dict[str, int]
    n_clusters: int

    @property
    def total(self) -> int:
        return sum(self.satoshi.values())


@dataclass
class ActorTable:
    pools: list[str]
    paid: dict[str, int]
    rows: list[ActorRow]
    clusters: list[ClusterEntry] = field(default_factory=list)

    def row(self, name: str) -> ActorRow | None:
        return next((r for r in self.rows if r.name == name), None)


def enrich_with_tags(partition: ClusterPartition, payout_sets: Mapping[str, PayoutSet],
                     tags: Mapping[str, tuple[str, str]] | str | Path | None) -> ActorTable:
    """Name receiving clusters after the tagged addresses they contain.

    A cluster with one tagged actor takes its name; with several it becomes a
    ``TagConflict(a|b)`` row; without tags it is pooled into ``Unknown``.
    Rows are sorted by total satoshi descending.
    """
    if tags is None or isinstance(tags, (str, Path)):
        tags = load_tags(tags)
    pools = list(payout_sets)
    sat: dict[str, dict[str, int]] = defaultdict(lambda: defaultdict(int))
    naddr: dict[str, dict[str, int]] = defaultdict(lambda: defaultdict(int))
    for p in pools:
        for a, v in payout_sets[p].member_outputs.items():
            k = cluster_key(partition, a)
            sat[k][p] += v
            naddr[k][p] += 1
    # one representative address for singleton keys
    key_members: dict[str, list[str]] = {}
    for k in sat:
        key_members[k] = [k[5:]] if k.startswith("addr:") else partition.members(int(k))

    entries = []
    for k in sorted(sat, key=lambda k: (-sum(sat[k].values()), k)):
        members = key_members[k]
        found = [tags[a] for a in members if a in tags]
        actors = sorted({t[0] for t in found})
        service = _merge_services(t[1] for t in found)
        if not actors:
            label, kind = UNKNOWN, "unknown"
        elif len(actors) == 1:
            label, kind = actors[0], "tagged"
        else:
            label, kind = f"TagConflict({'|'.join(actors)})", "conflict"
        entries.append(ClusterEntry(k, label, kind, service, dict(sat[k]), dict(naddr[k]), len(members)))

    paid = {p: payout_sets[p].paid_satoshi for p in pools}
    grouped: dict[str, list[ClusterEntry]] = defaultdict(list)
    for e in entries:
        grouped[e.label].append(e)
    rows = []
    for label, es in grouped.items():
        s = {p: sum(e.satoshi.get(p, 0) for e in es) for p in pools}
        rows.append(ActorRow(
            label,
            "?" if label == UNKNOWN else _merge_services(e.service for e in es),
            s,
            {p: _frac(s[p], paid[p]) for p in pools},
            {p: sum(e.addresses.get(p, 0) for e in es) for p in pools},
            len(es),
        ))
    rows.sort(key=lambda r: (-r.total, r.name))
    return ActorTable(pools, paid, rows, entries)


@dataclass(frozen=True)
class UnknownClusterRow:
    cluster_id: str
    satoshi: dict[str, int]
    share: dict[str, float]
    mined_satoshi: int
    received_satoshi: int
    n_addresses: int


def top_unknown(table: ActorTable, partition: ClusterPartition, index: ChainIndex | None = None,
                n: int = 10) -> list[UnknownClusterRow]:
    """The ``n`` largest untagged clusters by satoshi received from the pools.

    Lifetime received satoshi comes from ``index`` when given, otherwise from
    the per-address totals stored in the partition.
    """
    unknown = [e for e in table.clusters if e.kind == "unknown"]
    unknown.sort(key=lambda e: (-e.total, e.key))
    rows = []
    for e in unknown[:n]:
        members = [e.key[5:]] if e.key.startswith("addr:") else partition.members(int(e.key))
        if index is not None:
            received = sum(index.received_total(a) for a in members)
        elif e.key.startswith("addr:"):
            received = 0
        else:
            received = partition.cluster_received(int(e.key))
        rows.append(UnknownClusterRow(
            e.key,
            {p: e.satoshi.get(p, 0) for p in table.pools},
            {p: _frac(e.satoshi.get(p, 0), table.paid[p]) for p in table.pools},
            e.total, received, len(members),
        ))
    return rows


@dataclass
class FlowGraph:
    pools: list[str]
    nodes: dict[str, str]  # name -> kind (pool | actor | unknown)
    edges: dict[tuple[str, str], int]
    n_unknown_clusters: int
    coverage: dict[str, float]

    def out_flow(self, pool: str) -> int:
        return sum(v for (s, _), v in self.edges.items() if s == pool)


def export_flow_graph(table: ActorTable, top_k: int = 400) -> FlowGraph:
    """Edges from each pool to its ``top_k`` receiving clusters.

    Tagged clusters are merged per actor name and every unknown cluster into a
    single Unknown node.  ``coverage`` is the share of each pool's payouts the
    selected clusters represent.
    """
    nodes: dict[str, str] = {p: "pool" for p in table.pools}
    edges: dict[tuple[str, str], int] = defaultdict(int)
    unknown_keys: set[str] = set()
    coverage = {}
    for p in table.pools:
        ranked = sorted((e for e in table.clusters if e.satoshi.get(p, 0) > 0),
                        key=lambda e: (-e.satoshi[p], e.key))[:top_k]
        for e in ranked:
            dst = UNKNOWN if e.kind == "unknown" else e.label
            if e.kind == "unknown":
                unknown_keys.add(e.key)
            nodes.setdefault(dst, "unknown" if e.kind == "unknown" else "actor")
            edges[(p, dst)] += e.satoshi[p]
        coverage[p] = _frac(sum(e.satoshi[p] for e in ranked), table.paid[p])
    return FlowGraph(list(table.pools), nodes, dict(edges), len(unknown_keys), coverage)


# -- CSV / DOT --------------------------------------------------------------

def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def write_epochs(epochs: Iterable[EpochStats], fh: IO[str]) -> None:
    w = _writer(fh)
    w.writerow(["epoch", "start_height", "entity", "share", "gini"])
    for ep in epochs:
        g = "" if ep.gini != ep.gini else f"{ep.gini:.6f}"
        for entity, share in ep.all_shares().items():
            w.writerow([ep.epoch, ep.start_height, entity, f"{share:.6f}", g])


def _pct(x: float) -> str:
    return f"{100 * x:.2f}"


def write_overlap(rows: Iterable[OverlapRow], fh: IO[str]) -> None:
    w = _writer(fh)
    w.writerow(["pool1", "pool2", "common_addresses", "common_addresses_pct", "common_clusters",
                "common_clusters_pct", "btc_from_pool1", "pct_pool1", "btc_from_pool2", "pct_pool2",
                "pct_addresses_pool1", "pct_addresses_pool2", "pct_clusters_pool1",
                "pct_clusters_pool2", "cluster_btc_from_pool1", "cluster_btc_from_pool2"])
    for r in rows:
        w.writerow([r.pool1, r.pool2, r.common_addresses, _pct(r.address_jaccard), r.common_clusters,
                    _pct(r.cluster_jaccard), btc(r.satoshi_from_pool1), _pct(r.paid_frac_pool1),
                    btc(r.satoshi_from_pool2), _pct(r.paid_frac_pool2), _pct(r.address_frac_pool1),
                    _pct(r.address_frac_pool2), _pct(r.cluster_frac_pool1), _pct(r.cluster_frac_pool2),
                    btc(r.cluster_satoshi_from_pool1), btc(r.cluster_satoshi_from_pool2)])


def write_actors(table: ActorTable, fh: IO[str]) -> None:
    w = _writer(fh)
    header = ["actor", "service"]
    for p in table.pools:
        header += [f"{p}_btc", f"{p}_pct", f"{p}_addresses"]
    w.writerow(header + ["total_btc", "n_clusters"])
    for r in table.rows:
        line = [r.name, r.service]
        for p in table.pools:
            line += [btc(r.satoshi[p]), _pct(r.share[p]), r.addresses[p]]
        w.writerow(line + [btc(r.total), r.n_clusters])


def write_top_unknown(rows: list[UnknownClusterRow], pools: list[str], fh: IO[str]) -> None:
    w = _writer(fh)
    header = ["cluster_id"]
    for p in pools:
        header += [f"{p}_btc", f"{p}_pct"]
    w.writerow(header + ["mined_btc", "total_btc_received", "n_addresses"])
    for r in rows:
        line = [r.cluster_id]
        for p in pools:
            line += [btc(r.satoshi[p]), _pct(r.share[p])]
        w.writerow(line + [btc(r.mined_satoshi), btc(r.received_satoshi), r.n_addresses])


def write_flow_csv(graph: FlowGraph, fh: IO[str]) -> None:
    w = _writer(fh)
    w.writerow(["src", "dst", "satoshi"])
    for (s, d), v in sorted(graph.edges.items(), key=lambda kv: (kv[0][0], -kv[1], kv[0][1])):
        w.writerow([s, d, v])


def _dot_id(name: str) -> str:
    return '"' + name.replace("\\", "\\\\").replace('"', '\\"') + '"'


def write_flow_dot(graph: FlowGraph, fh: IO[str]) -> None:
    style = {"pool": "shape=box", "actor": "color=black", "unknown": "color=gray"}
    fh.write("digraph flow {\n  rankdir=LR;\n")
    for name, kind in sorted(graph.nodes.items(), key=lambda kv: (kv[1] != "pool", kv[0])):
        label = f"{name} ({graph.n_unknown_clusters})" if kind == "unknown" else name
        fh.write(f"  {_dot_id(name)} [{style[kind]}, label={_dot_id(label)}];\n")
    for (s, d), v in sorted(graph.edges.items(), key=lambda kv: (kv[0][0], -kv[1], kv[0][1])):
        fh.write(f"  {_dot_id(s)} -> {_dot_id(d)} [weight={v}, label={_dot_id(btc(v))}];\n")
    fh.write("}\n")
