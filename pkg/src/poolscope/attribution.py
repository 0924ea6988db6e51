"""Block attribution to mining entities.

Mapping sources (pools.json-style files and height,entity block lists) are
merged into a single ``MappingDB`` under unified entity names.  Each block is
then attributed in three steps:

1. coinbase output addresses looked up among known and learned reward addresses;
2. only if step 1 found nothing, coinbase markers; a single-entity marker hit on a
   coinbase with exactly one output address teaches that address to later blocks;
3. precomputed external block lists for the height.

A block whose entities (across all steps that count) number two or more is a
conflict.  Conflicts are reported, never resolved.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Mapping

from .chaindata import Block
from .errors import AliasCycle, MismatchedRanges, UnknownSchema

log = logging.getLogger(__name__)

ADDRESS = "address"
MARKER = "marker"
EXTERNAL = "external"
LEARNED = "learned"


def resolve_aliases(raw: Mapping[str, str]) -> dict[str, str]:
    """Close an alias map under composition so that lookups are idempotent.

    ``{"BTC.COM": "BTCcom", "BTCcom": "BTC.com"}`` resolves both keys to
    ``"BTC.com"``.  A cycle (other than a name mapping to itself) raises
    AliasCycle.
    """
    resolved: dict[str, str] = {}
    for start in raw:
        path = [start]
        name = start
        while name in raw and raw[name] != name:
            name = raw[name]
            if name in path:
                raise AliasCycle(" -> ".join(path + [name]))
            path.append(name)
        resolved[start] = name
    return resolved


def load_aliases(path: str | Path | None) -> dict[str, str]:
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict) or not all(isinstance(v, str) for v in data.values()):
        raise UnknownSchema(f"{path}: alias file must be a JSON object of name -> name")
    return resolve_aliases(data)


@dataclass
class MappingDB:
    aliases: dict[str, str] = field(default_factory=dict)
    # pattern -> entity -> source labels
    markers: dict[bytes, dict[str, set[str]]] = field(default_factory=dict)
    payout_addresses: dict[str, dict[str, set[str]]] = field(default_factory=dict)
    external_block_map: dict[int, dict[str, set[str]]] = field(default_factory=dict)
    # address -> (entity, height it was learned at)
    learned_addresses: dict[str, tuple[str, int]] = field(default_factory=dict)
    sources: list[str] = field(default_factory=list)

    def canonical(self, name: str) -> str:
        return self.aliases.get(name, name)

    def add_marker(self, pattern: bytes, name: str, source: str) -> None:
        if not pattern:
            return
        self.markers.setdefault(pattern, {}).setdefault(self.canonical(name), set()).add(source)

    def add_address(self, address: str, name: str, source: str) -> None:
        self.payout_addresses.setdefault(address, {}).setdefault(self.canonical(name), set()).add(source)

    def add_external(self, height: int, name: str, source: str) -> None:
        self.external_block_map.setdefault(height, {}).setdefault(self.canonical(name), set()).add(source)

    def entities(self) -> set[str]:
        names: set[str] = set()
        for table in (self.markers, self.payout_addresses, self.external_block_map):
            for per_entity in table.values():
                names.update(per_entity)
        names.update(e for e, _ in self.learned_addresses.values())
        return names

    def with_learned(self, learned: Mapping[str, tuple[str, int]]) -> "MappingDB":
        """Copy of this db whose learned addresses include ``learned``."""
        merged = dict(self.learned_addresses)
        for addr, value in learned.items():
            merged.setdefault(addr, value)
        return MappingDB(self.aliases, self.markers, self.payout_addresses,
                         self.external_block_map, merged, list(self.sources))

    def to_json(self) -> dict:
        def table(t):
            return {str(k): {e: sorted(s) for e, s in sorted(v.items())} for k, v in sorted(t.items())}
        return {
            "sources": self.sources,
            "aliases": dict(sorted(self.aliases.items())),
            "markers": {k.decode("latin-1"): {e: sorted(s) for e, s in sorted(v.items())}
                        for k, v in sorted(self.markers.items())},
            "payout_addresses": table(self.payout_addresses),
            "external_block_map": {str(h): {e: sorted(s) for e, s in sorted(v.items())}
                                   for h, v in sorted(self.external_block_map.items())},
            "learned_addresses": {a: list(v) for a, v in sorted(self.learned_addresses.items())},
        }


def _name_of(entry, where: str) -> str:
    if isinstance(entry, str):
        return entry
    if isinstance(entry, dict) and isinstance(entry.get("name"), str):
        return entry["name"]
    raise UnknownSchema(f"{where}: entry without a name")


def _merge_pools_json(db: MappingDB, data: dict, label: str) -> None:
    if not ({"coinbase_tags", "payout_addresses"} & data.keys()):
        raise UnknownSchema(f"{label}: neither coinbase_tags nor payout_addresses present")
    for tag, entry in (data.get("coinbase_tags") or {}).items():
        db.add_marker(tag.encode("utf-8"), _name_of(entry, f"{label}:{tag}"), label)
    for addr, entry in (data.get("payout_addresses") or {}).items():
        db.add_address(addr, _name_of(entry, f"{label}:{addr}"), label)


def _merge_block_list(db: MappingDB, text: str, label: str) -> None:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None:
        return
    if [h.strip().lower() for h in header[:2]] != ["height", "entity"]:
        raise UnknownSchema(f"{label}: block list must start with a 'height,entity' header")
    for row in reader:
        if not row:
            continue
        try:
            height = int(row[0])
        except (ValueError, IndexError):
            raise UnknownSchema(f"{label}: bad block-list row {row!r}") from None
        if len(row) < 2 or not row[1]:
            continue
        db.add_external(height, row[1], label)


def _label_for(src, used: set[str]) -> tuple[str, object]:
    if isinstance(src, tuple):
        label, payload = src
    else:
        label, payload = Path(src).stem, src
    base, n = label, 1
    while label in used:
        n += 1
        label = f"{base}{n}"
    used.add(label)
    return label, payload


def merge_mappings(sources: Iterable, alias_file=None) -> MappingDB:
    """Merge mapping sources into one db under canonical entity names.

    Each source is a path (label = file stem) or a ``(label, payload)`` pair
    where payload is a path or an already-parsed pools.json dict.  ``*.csv``
    paths are read as height,entity block lists; anything else as pools.json.
    ``alias_file`` is a path or a raw alias dict.
    """
    aliases = resolve_aliases(alias_file) if isinstance(alias_file, Mapping) else load_aliases(alias_file)
    db = MappingDB(aliases=aliases)
    used: set[str] = set()
    for src in sources:
        label, payload = _label_for(src, used)
        db.sources.append(label)
        if isinstance(payload, Mapping):
            _merge_pools_json(db, dict(payload), label)
            continue
        path = Path(payload)
        text = path.read_text(encoding="utf-8")
        if path.suffix.lower() == ".csv":
            _merge_block_list(db, text, label)
            continue
        try:
            data = json.loads(text)
        except json.JSONDecodeError:
            raise UnknownSchema(f"{path}: not JSON and not a .csv block list") from None
        if not isinstance(data, dict):
            raise UnknownSchema(f"{path}: top level must be an object")
        _merge_pools_json(db, data, label)
    log.info("merged %d sources: %d markers, %d addresses, %d external heights",
             len(db.sources), len(db.markers), len(db.payout_addresses), len(db.external_block_map))
    return db


def extract_markers(coinbase_bytes: bytes, db: MappingDB) -> list[tuple[str, bytes]]:
    """Markers occurring as raw substrings of the coinbase field.

    One hit per entity (its lexicographically smallest matching pattern),
    ordered by pattern then entity.
    """
    if not coinbase_bytes:
        return []
    best: dict[str, bytes] = {}
    for pattern in sorted(db.markers):
        if pattern in coinbase_bytes:
            for entity in db.markers[pattern]:
                best.setdefault(entity, pattern)
    return sorted(((e, p) for e, p in best.items()), key=lambda ep: (ep[1], ep[0]))


@dataclass(frozen=True)
class BlockAttribution:
    height: int
    # entity -> source labels such as "btccom:address" or "learned:address"
    attributions: dict[str, frozenset[str]] = field(default_factory=dict)
    # marker hits that were outranked by an address hit
    marker_evidence: tuple[tuple[str, bytes], ...] = ()
    learned: tuple[str, str] | None = None

    @property
    def entities(self) -> tuple[str, ...]:
        return tuple(sorted(self.attributions))

    @property
    def unique(self) -> bool:
        return len(self.attributions) == 1

    @property
    def conflict(self) -> bool:
        return len(self.attributions) >= 2

    @property
    def unknown(self) -> bool:
        return not self.attributions


def _coinbase_addresses(block: Block) -> list[str]:
    return block.coinbase_tx.output_addresses()


def attribute_block(block: Block, db: MappingDB, learned: Mapping[str, tuple[str, int]] | None = None,
                    learn: bool = True) -> BlockAttribution:
    """Attribute one block; ``learned`` overrides ``db.learned_addresses``."""
    if learned is None:
        learned = db.learned_addresses
    hits: dict[str, set[str]] = defaultdict(set)
    addresses = _coinbase_addresses(block)

    for addr in addresses:
        for entity, srcs in db.payout_addresses.get(addr, {}).items():
            hits[entity].update(f"{s}:{ADDRESS}" for s in srcs)
        if addr in learned:
            hits[learned[addr][0]].add(f"{LEARNED}:{ADDRESS}")

    marker_hits = extract_markers(block.coinbase_bytes, db) if db.markers else []
    evidence: tuple = ()
    new_address = None
    if hits:
        evidence = tuple(marker_hits)
    elif marker_hits:
        for entity, pattern in marker_hits:
            hits[entity].update(f"{s}:{MARKER}" for s in db.markers[pattern][entity])
        if learn and len(marker_hits) == 1 and len(addresses) == 1:
            new_address = (addresses[0], marker_hits[0][0])

    for entity, srcs in db.external_block_map.get(block.height, {}).items():
        hits[entity].update(f"{s}:{EXTERNAL}" for s in srcs)

    return BlockAttribution(
        block.height,
        {e: frozenset(s) for e, s in hits.items()},
        evidence,
        new_address,
    )


@dataclass
class EntityTotal:
    blocks: int = 0
    satoshi: int = 0


@dataclass
class AttributionLedger:
    start: int
    end: int  # exclusive
    by_height: dict[int, BlockAttribution] = field(default_factory=dict)
    unknown_heights: set[int] = field(default_factory=set)
    coinbase_value: dict[int, int] = field(default_factory=dict)
    totals: dict[str, EntityTotal] = field(default_factory=dict)
    learned: dict[str, tuple[str, int]] = field(default_factory=dict)

    @property
    def n_blocks(self) -> int:
        return self.end - self.start

    @property
    def attributed_count(self) -> int:
        return len(self.by_height)

    @property
    def conflict_count(self) -> int:
        return sum(1 for a in self.by_height.values() if a.conflict)

    @property
    def conflict_rate(self) -> float:
        """Conflicting blocks as a fraction (not a percentage) of all blocks."""
        return self.conflict_count / self.n_blocks if self.n_blocks else 0.0

    def entities_at(self, height: int) -> tuple[str, ...]:
        a = self.by_height.get(height)
        return a.entities if a else ()

    def heights_of(self, entity: str, window=None) -> list[int]:
        lo, hi = window if window else (self.start, self.end)
        return sorted(h for h, a in self.by_height.items()
                      if lo <= h < hi and entity in a.attributions)

    def _add(self, attribution: BlockAttribution, value: int) -> None:
        h = attribution.height
        self.coinbase_value[h] = value
        if attribution.unknown:
            self.unknown_heights.add(h)
            return
        self.by_height[h] = attribution
        for entity in attribution.attributions:
            t = self.totals.setdefault(entity, EntityTotal())
            t.blocks += 1
            t.satoshi += value


def attribute_chain(blocks: Iterable[Block], db: MappingDB, learn: bool = True) -> AttributionLedger:
    """Single ascending pass; addresses learned at block N apply from N+1 on.

    ``db`` is not modified; the addresses learned during the pass are returned
    in ``ledger.learned`` and can be folded back with ``db.with_learned``.
    """
    learned = dict(db.learned_addresses)
    ledger: AttributionLedger | None = None
    for block in blocks:
        if ledger is None:
            ledger = AttributionLedger(block.height, block.height)
        a = attribute_block(block, db, learned, learn=learn)
        if a.learned is not None:
            addr, entity = a.learned
            learned[addr] = (entity, block.height)
            ledger.learned[addr] = (entity, block.height)
        ledger._add(a, block.coinbase_value)
        ledger.end = block.height + 1
    if ledger is None:
        ledger = AttributionLedger(0, 0)
    return ledger


@dataclass(frozen=True)
class ConflictRow:
    entities: tuple[str, ...]
    count: int
    example_heights: tuple[int, ...]


def conflict_report(ledger: AttributionLedger, n_examples: int = 3) -> list[ConflictRow]:
    groups: dict[tuple[str, ...], list[int]] = defaultdict(list)
    for h in sorted(ledger.by_height):
        a = ledger.by_height[h]
        if a.conflict:
            groups[a.entities].append(h)
    rows = [ConflictRow(k, len(v), tuple(v[:n_examples])) for k, v in groups.items()]
    rows.sort(key=lambda r: (-r.count, r.entities))
    return rows


@dataclass(frozen=True)
class SourceRow:
    source: str
    attributed: int
    conflicts: int


def source_comparison(ledger_variants: Mapping[str, AttributionLedger]) -> list[SourceRow]:
    """One row per configuration, in the mapping's iteration order."""
    ranges = {(l.start, l.end) for l in ledger_variants.values()}
    if len(ranges) > 1:
        raise MismatchedRanges(f"ledgers cover different ranges: {sorted(ranges)}")
    return [SourceRow(name, l.attributed_count, l.conflict_count) for name, l in ledger_variants.items()]


def attribution_variants(blocks: list[Block], sources: list, alias_file=None) -> dict[str, AttributionLedger]:
    """Ledgers for each source alone (direct use and with learning) plus all combined."""
    variants: dict[str, AttributionLedger] = {}
    used: set[str] = set()
    labelled = [_label_for(s, used) for s in sources]
    for label, payload in labelled:
        db = merge_mappings([(label, payload)], alias_file)
        variants[f"{label}/direct"] = attribute_chain(blocks, db, learn=False)
        variants[f"{label}/learned"] = attribute_chain(blocks, db, learn=True)
    combined = merge_mappings(labelled, alias_file)
    variants["combined/learned"] = attribute_chain(blocks, combined, learn=True)
    return variants


# -- CSV --------------------------------------------------------------------

ATTRIBUTION_HEADER = ["height", "status", "entities", "sources", "coinbase_satoshi", "learned_address"]


def _status(a: BlockAttribution | None) -> str:
    if a is None or a.unknown:
        return "unknown"
    return "conflict" if a.conflict else "unique"


def write_attributions(ledger: AttributionLedger, fh: IO[str]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(ATTRIBUTION_HEADER)
    for h in range(ledger.start, ledger.end):
        a = ledger.by_height.get(h)
        if a is None:
            w.writerow([h, "unknown", "", "", ledger.coinbase_value.get(h, 0), ""])
            continue
        sources = ";".join(f"{e}={'|'.join(sorted(a.attributions[e]))}" for e in a.entities)
        w.writerow([h, _status(a), ";".join(a.entities), sources, ledger.coinbase_value.get(h, 0),
                    a.learned[0] if a.learned else ""])


def read_attributions(path: str | Path) -> AttributionLedger:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(ATTRIBUTION_HEADER) - set(reader.fieldnames):
            raise UnknownSchema(f"{path}: expected header {','.join(ATTRIBUTION_HEADER)}")
        ledger: AttributionLedger | None = None
        for row in reader:
            h = int(row["height"])
            if ledger is None:
                ledger = AttributionLedger(h, h)
            elif h != ledger.end:
                raise UnknownSchema(f"{path}: heights not contiguous at {h}")
            attributions: dict[str, frozenset[str]] = {}
            if row["sources"]:
                for part in row["sources"].split(";"):
                    entity, _, srcs = part.partition("=")
                    attributions[entity] = frozenset(s for s in srcs.split("|") if s)
            learned = None
            if row["learned_address"]:
                learned = (row["learned_address"], next(iter(attributions)))
                ledger.learned[learned[0]] = (learned[1], h)
            ledger._add(BlockAttribution(h, attributions, (), learned), int(row["coinbase_satoshi"]))
            ledger.end = h + 1
    return ledger if ledger is not None else AttributionLedger(0, 0)


def write_conflicts(rows: Iterable[ConflictRow], fh: IO[str]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["entities", "count", "example_heights"])
    for r in rows:
        w.writerow([" & ".join(r.entities), r.count, " ".join(map(str, r.example_heights))])


def write_source_comparison(rows: Iterable[SourceRow], fh: IO[str]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["source", "attributed", "conflicts"])
    for r in rows:
        w.writerow([r.source, r.attributed, r.conflicts])


def write_learned(ledger: AttributionLedger, fh: IO[str]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["address", "entity", "learned_at_height"])
    for addr, (entity, h) in sorted(ledger.learned.items(), key=lambda kv: (kv[1][1], kv[0])):
        w.writerow([addr, entity, h])


def entity_block_counts(ledger: AttributionLedger) -> Counter:
    return Counter({e: t.blocks for e, t in ledger.totals.items()})
