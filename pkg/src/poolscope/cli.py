"""Command-line front end.

Every subcommand writes its reports into ``-o/--out`` and prints one summary
line per report.  Exit status is 0 on success, 1 on usage errors and 2 when
the input data is rejected.  Set POOLSCOPE_LOG=error|warn|info|debug for logs.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import analytics, attribution, chaindata, clustering, payouts, synthchain
from .errors import PoolscopeError

log = logging.getLogger("poolscope")

LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING,
              "info": logging.INFO, "debug": logging.DEBUG}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _existing_file(text: str) -> Path:
    p = Path(text)
    if not p.is_file():
        raise argparse.ArgumentTypeError(f"no such file: {text}")
    return p


def _height_range(text: str):
    try:
        return chaindata.parse_range(text)
    except (ValueError, PoolscopeError) as e:
        raise argparse.ArgumentTypeError(str(e)) from None


@dataclass
class RunConfig:
    command: str
    out: Path
    chain: Path | None = None
    height_range: tuple[int, int] | None = None
    mappings: list[Path] = field(default_factory=list)
    aliases: Path | None = None
    tags: Path | None = None
    params: Path | None = None
    attributions: Path | None = None
    clusters: Path | None = None
    payouts: Path | None = None
    options: dict = field(default_factory=dict)

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "RunConfig":
        known = {"command", "out", "chain", "range", "mappings", "aliases", "tags", "params",
                 "attributions", "clusters", "payouts"}
        return cls(
            command=args.command,
            out=Path(args.out),
            chain=getattr(args, "chain", None),
            height_range=getattr(args, "range", None),
            mappings=list(getattr(args, "mappings", None) or []),
            aliases=getattr(args, "aliases", None),
            tags=getattr(args, "tags", None),
            params=getattr(args, "params", None),
            attributions=getattr(args, "attributions", None),
            clusters=getattr(args, "clusters", None),
            payouts=getattr(args, "payouts", None),
            options={k: v for k, v in vars(args).items() if k not in known},
        )


class Session:
    """Lazily computed pipeline stages shared by one command."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self._chain = None
        self._ledger = None
        self._partition = None
        self._payouts = None

    def need(self, flag: str, value) -> None:
        if not value:
            raise UsageError(f"{self.cfg.command}: {flag} is required here")

    @property
    def has_chain(self) -> bool:
        return self.cfg.chain is not None

    def chain(self):
        if self._chain is None:
            self.need("--chain", self.cfg.chain)
            self._chain = chaindata.load_chain(self.cfg.chain, self.cfg.height_range)
        return self._chain

    def ledger(self) -> attribution.AttributionLedger:
        if self._ledger is None:
            if self.cfg.attributions is not None:
                self._ledger = attribution.read_attributions(self.cfg.attributions)
            else:
                self.need("--mappings (or --attributions)", self.cfg.mappings)
                blocks, _ = self.chain()
                db = attribution.merge_mappings(self.cfg.mappings, self.cfg.aliases)
                self._ledger = attribution.attribute_chain(blocks, db, learn=not self.cfg.options.get("no_learn"))
        return self._ledger

    def partition(self) -> clustering.ClusterPartition:
        if self._partition is None:
            if self.cfg.clusters is not None:
                self._partition = clustering.read_partition(self.cfg.clusters)
            else:
                blocks, _ = self.chain()
                self._partition = clustering.cluster_transactions(
                    (tx for b in blocks for tx in b.txs),
                    coinjoin_filter=not self.cfg.options.get("no_coinjoin_filter"),
                    min_equal=self.cfg.options.get("min_equal", 3),
                    tolerance=self.cfg.options.get("tolerance", 0))
        return self._partition

    def params(self) -> dict[str, payouts.DetectorParams]:
        self.need("--params", self.cfg.params)
        o = self.cfg.options
        return payouts.load_params(self.cfg.params, min_outputs=o.get("min_outputs"),
                                   max_chain_length=o.get("max_chain_length"),
                                   relaxed=True if o.get("relaxed") else None)

    def payout_sets(self) -> dict[str, payouts.PayoutSet]:
        if self._payouts is None:
            if self.cfg.payouts is not None:
                self._payouts = payouts.read_payouts(self.cfg.payouts)
            else:
                _, index = self.chain()
                self._payouts = {name: payouts.detect(index, p) for name, p in sorted(self.params().items())}
        return self._payouts


def _write(cfg: RunConfig, name: str, writer, *args, rows: int | None = None, what: str = "rows") -> Path:
    path = cfg.out / name
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer(*args, fh)
    count = f" ({rows} {what})" if rows is not None else ""
    print(f"wrote {path}{count}")
    return path


# -- subcommands ------------------------------------------------------------

def cmd_attribute(s: Session) -> None:
    cfg = s.cfg
    ledger = s.ledger()
    conflicts = attribution.conflict_report(ledger)
    _write(cfg, "attributions.csv", attribution.write_attributions, ledger, rows=ledger.n_blocks, what="blocks")
    _write(cfg, "conflicts.csv", attribution.write_conflicts, conflicts, rows=len(conflicts))
    _write(cfg, "learned.csv", attribution.write_learned, ledger, rows=len(ledger.learned), what="addresses")
    if cfg.options.get("compare"):
        blocks, _ = s.chain()
        variants = attribution.attribution_variants(blocks, cfg.mappings, cfg.aliases)
        rows = attribution.source_comparison(variants)
        _write(cfg, "sources.csv", attribution.write_source_comparison, rows, rows=len(rows))
    print(f"attributed {ledger.attributed_count}/{ledger.n_blocks} blocks, "
          f"{ledger.conflict_count} conflicts ({100 * ledger.conflict_rate:.4f}%)")


def cmd_conflicts(s: Session) -> None:
    ledger = s.ledger()
    rows = attribution.conflict_report(ledger, n_examples=s.cfg.options["examples"])
    _write(s.cfg, "conflicts.csv", attribution.write_conflicts, rows, rows=len(rows))


def cmd_shares(s: Session) -> None:
    o = s.cfg.options
    epochs = analytics.epoch_shares(s.ledger(), o["bin_len"], o["small_threshold"], o["gini_include_unknown"])
    _write(s.cfg, "epochs.csv", analytics.write_epochs, epochs, rows=len(epochs), what="epochs")


def cmd_cluster(s: Session) -> None:
    part = s.partition()
    _write(s.cfg, "clusters.csv", clustering.write_partition, part, rows=len(part), what="addresses")
    _write(s.cfg, "cluster_summary.csv", clustering.write_cluster_summary, part, rows=part.n_clusters,
           what="clusters")


def cmd_payouts(s: Session) -> None:
    # stats need mined totals, so fail on missing inputs before writing anything
    if s.cfg.payouts is None:
        s.need("--params", s.cfg.params)
    ledger = s.ledger()
    sets = s.payout_sets()
    n_out = sum(len(p.outputs) for p in sets.values())
    _write(s.cfg, "payouts.csv", payouts.write_payouts, sets.values(), rows=n_out, what="outputs")
    part = s.partition()
    stats = [payouts.payout_stats(p, ledger, part) for p in sets.values()]
    _write(s.cfg, "payout_stats.csv", payouts.write_stats, stats, rows=len(stats), what="pools")


def cmd_overlap(s: Session) -> None:
    rows = analytics.cross_pool_overlap(s.payout_sets(), s.partition())
    _write(s.cfg, "overlap.csv", analytics.write_overlap, rows, rows=len(rows), what="pairs")


def _actor_table(s: Session) -> analytics.ActorTable:
    return analytics.enrich_with_tags(s.partition(), s.payout_sets(), analytics.load_tags(s.cfg.tags))


def cmd_actors(s: Session) -> None:
    table = _actor_table(s)
    _write(s.cfg, "actors.csv", analytics.write_actors, table, rows=len(table.rows), what="actors")
    index = s.chain()[1] if s.has_chain else None
    top = analytics.top_unknown(table, s.partition(), index, n=s.cfg.options["top_n"])
    _write(s.cfg, "top_unknown.csv", analytics.write_top_unknown, top, table.pools, rows=len(top),
           what="clusters")


def cmd_flow(s: Session) -> None:
    graph = analytics.export_flow_graph(_actor_table(s), top_k=s.cfg.options["top_k"])
    _write(s.cfg, "flow.csv", analytics.write_flow_csv, graph, rows=len(graph.edges), what="edges")
    _write(s.cfg, "flow.dot", analytics.write_flow_dot, graph)


def cmd_simulate(s: Session) -> None:
    cfg = s.cfg
    sim = synthchain.load_config(cfg.options["config"])
    if cfg.options.get("seed") is not None:
        sim.seed = cfg.options["seed"]
    blocks, truth = synthchain.generate(sim)
    _write(cfg, "chain.jsonl", lambda b, fh: chaindata.write_chain(b, fh), blocks, rows=len(blocks),
           what="blocks")
    _write(cfg, "truth.json", synthchain.write_truth, truth)
    _write(cfg, "mappings.json", _dump_json, truth.mapping)
    _write(cfg, "params.json", _dump_json, truth.params)
    _write(cfg, "tags.csv", synthchain.write_tags, truth.tags, rows=len(truth.tags), what="tags")


def _dump_json(obj, fh) -> None:
    json.dump(obj, fh, indent=2, sort_keys=True)
    fh.write("\n")


COMMANDS = {
    "attribute": (cmd_attribute, "attribute blocks to pools"),
    "conflicts": (cmd_conflicts, "summarise conflicting attributions"),
    "shares": (cmd_shares, "per-epoch market shares and Gini"),
    "cluster": (cmd_cluster, "multiple-input address clustering"),
    "payouts": (cmd_payouts, "detect payout transactions and pool statistics"),
    "overlap": (cmd_overlap, "members shared between pools"),
    "actors": (cmd_actors, "receiving actors per pool from address tags"),
    "flow": (cmd_flow, "pool to actor flow graph (CSV and DOT)"),
    "simulate": (cmd_simulate, "generate a synthetic chain with ground truth"),
}


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="poolscope", description="Mining-pool forensics on chain dumps.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def add(name):
        p = sub.add_parser(name, help=COMMANDS[name][1])
        p.add_argument("-o", "--out", required=True, help="output directory")
        return p

    def chain_args(p, required=False):
        p.add_argument("--chain", type=_existing_file, required=required, help="JSONL chain dump")
        p.add_argument("--range", type=_height_range, help="height range start:end (end exclusive)")

    def attribution_args(p):
        p.add_argument("--mappings", type=_existing_file, nargs="+", help="pools.json files or height,entity CSVs")
        p.add_argument("--aliases", type=_existing_file, help="JSON alias map")
        p.add_argument("--attributions", type=_existing_file, help="attributions.csv from an earlier run")
        p.add_argument("--no-learn", action="store_true", help="do not learn addresses from markers")

    def cluster_args(p):
        p.add_argument("--clusters", type=_existing_file, help="clusters.csv from an earlier run")
        p.add_argument("--no-coinjoin-filter", action="store_true", help="cluster CoinJoin-like txs too")
        p.add_argument("--min-equal", type=int, default=3, help="CoinJoin equal-output threshold")
        p.add_argument("--tolerance", type=int, default=0, help="CoinJoin equality tolerance (satoshi)")

    def payout_args(p):
        p.add_argument("--params", type=_existing_file, help="detector parameters (TOML or JSON)")
        p.add_argument("--payouts", type=_existing_file, help="payouts.csv from an earlier run")
        p.add_argument("--min-outputs", type=int, help="override the payout output threshold")
        p.add_argument("--max-chain-length", type=int, help="AntPool: stop a change chain after this many hops")
        p.add_argument("--relaxed", action="store_true", help="AntPool: also follow >= min-outputs txs")

    p = add("attribute")
    chain_args(p, required=True)
    attribution_args(p)
    p.add_argument("--compare", action="store_true", help="also compare mapping sources")

    p = add("conflicts")
    chain_args(p)
    attribution_args(p)
    p.add_argument("--examples", type=int, default=3, help="example heights per conflict row")

    p = add("shares")
    chain_args(p)
    attribution_args(p)
    p.add_argument("--bin-len", type=int, default=2016, help="blocks per epoch")
    p.add_argument("--small-threshold", type=float, default=0.04,
                   help="window share below which an entity goes to Other")
    p.add_argument("--gini-include-unknown", action="store_true", help="count Unknown as an entity in the Gini")

    p = add("cluster")
    chain_args(p, required=True)
    cluster_args(p)

    p = add("payouts")
    chain_args(p)
    attribution_args(p)
    cluster_args(p)
    payout_args(p)

    p = add("overlap")
    chain_args(p)
    cluster_args(p)
    payout_args(p)

    for name in ("actors", "flow"):
        p = add(name)
        chain_args(p)
        cluster_args(p)
        payout_args(p)
        p.add_argument("--tags", type=_existing_file, help="address,actor,service CSV")
        if name == "actors":
            p.add_argument("--top-n", type=int, default=10, help="rows of the unknown-cluster report")
        else:
            p.add_argument("--top-k", type=int, default=400, help="receiving clusters kept per pool")

    p = add("simulate")
    p.add_argument("--config", type=_existing_file, required=True, help="generator config (TOML or JSON)")
    p.add_argument("--seed", type=int, help="override the config seed")
    return parser


def _setup_logging() -> None:
    level = LOG_LEVELS.get(os.environ.get("POOLSCOPE_LOG", "warn").lower(), logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 1
    _setup_logging()
    cfg = RunConfig.from_args(args)
    try:
        cfg.out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        print(f"poolscope: error: -o/--out: {e}", file=sys.stderr)
        return 1
    session = Session(cfg)
    try:
        COMMANDS[cfg.command][0](session)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"poolscope: error: {e}", file=sys.stderr)
        return 1
    except PoolscopeError as e:
        print(f"poolscope: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
