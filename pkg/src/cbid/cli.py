"""``cbid`` command line: digest, query, eval, inspect, synth."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from dataclasses import replace
from pathlib import Path

from . import __version__
from .archive import ArchiveError, read_archive, write_archive
from .digest import DigestConfig, OrderingError, digest_stream
from .evaluate import (
    EvalRun,
    InvariantViolation,
    Workload,
    bench,
    compare_modes,
    eval_fp_rate,
    format_ratio,
    histogram_report,
    mode_config,
    rows_to_csv,
    table_report,
    threshold_sweep,
)
from .ingest import ConfigError, SynthConfig, read_capture, read_corpus, synth_generate, write_corpus
from .partition import PartitionConfig
from .query import ExcerptQuery, investigate

EXIT_OK = 0
EXIT_INVARIANT = 2
EXIT_INPUT = 3

log = logging.getLogger("cbid")


def _packets(path: str):
    p = Path(path)
    if p.suffix == ".json":
        return synth_generate(SynthConfig.from_dict(json.loads(p.read_text())))
    with open(p, "rb") as fh:
        magic = fh.read(4)
    if magic == b"CBTR":
        return read_corpus(p)
    return read_capture(p)


def _emit(obj, fmt: str, out) -> None:
    if fmt == "csv":
        rows = obj if isinstance(obj, list) else [obj]
        out.write(rows_to_csv(rows))
    else:
        out.write(json.dumps(obj, indent=2, default=str) + "\n")


def cmd_digest(args) -> int:
    pc = PartitionConfig(args.window, args.overlap, args.qgram, args.threshold, args.seed)
    cfg = DigestConfig(
        partition=pc,
        sections_j=args.sections,
        hashes_k=args.hashes,
        target_dr=args.dr,
        rotation_fp=args.rotation_fp,
        interval_raw_budget=args.interval_bytes,
        layout=args.layout,
        index_table=not args.no_index,
        codec=args.codec,
        seed=args.seed,
    )
    segments = digest_stream(_packets(args.input), cfg)
    write_archive(segments, args.out)
    ok = read_archive(args.out) == segments
    raw = sum(s.counters.raw_bytes for s in segments)
    stored = sum(s.filter_nbytes + s.table_nbytes for s in segments)
    summary = {
        "archive": str(args.out),
        "segments": len(segments),
        "raw_bytes": raw,
        "stored_bytes": stored,
        "dr_overall": format_ratio(raw / stored) if stored else None,
        "round_trip_ok": ok,
    }
    _emit(summary, "json", sys.stdout)
    return EXIT_OK if ok else EXIT_INVARIANT


def _excerpt_bytes(value: str) -> bytes:
    try:
        return bytes.fromhex(value)
    except ValueError:
        pass
    p = Path(value)
    if not p.is_file():
        raise ValueError(f"--excerpt is neither hex nor a readable file: {value[:40]!r}")
    return p.read_bytes()


def cmd_query(args) -> int:
    segments = read_archive(args.archive)
    q = ExcerptQuery(_excerpt_bytes(args.excerpt), args.start, args.end)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        report = investigate(q, segments, prune=not args.no_prune)
    if args.json:
        print(report.to_json(indent=2))
    else:
        print(report.to_table())
    return EXIT_OK


def cmd_inspect(args) -> int:
    segments = read_archive(args.archive)
    rows = []
    for s in segments:
        c = s.counters
        row = {
            "segment": s.name,
            "start": s.interval[0],
            "end": s.interval[1],
            "layout": s.cfg.layout,
            "flows": len(s.flows),
            "packets": c.packets,
            "raw_bytes": c.raw_bytes,
            "blocks_total": c.blocks_total,
            "blocks_kept": c.blocks_kept,
            "filter_bytes": s.filter_nbytes,
            "table_bytes": s.table_nbytes,
            "dr": format_ratio(s.data_reduction),
            "expected_fp": s.filter.expected_fp(),
        }
        if args.tables and s.has_table:
            row["ones_fraction"] = s.table.ones_fraction()
        rows.append(row)
    _emit(rows, args.format, sys.stdout)
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = json.loads(Path(args.spec).read_text()) if args.spec else {}
    if args.seed is not None:
        spec["seed"] = args.seed
    n = write_corpus(synth_generate(SynthConfig.from_dict(spec)), args.out)
    _emit({"corpus": str(args.out), "packets": n}, "json", sys.stdout)
    return EXIT_OK


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def cmd_eval(args) -> int:
    run = EvalRun.load(args.spec) if args.spec else EvalRun()
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        if args.what == "fp":
            if args.compare:
                cmp = compare_modes(run, _int_list(args.seeds))
                _emit(cmp.to_dict(), "json", out)
                return EXIT_OK if cmp.separated else EXIT_INVARIANT
            res = eval_fp_rate(run)
            d = res.to_dict()
            if args.format == "csv":
                d = {k: v for k, v in d.items() if not isinstance(v, list)}
            _emit(d, args.format, out)
        elif args.what == "sweep":
            rows = threshold_sweep(run, _int_list(args.thresholds))
            rows = [{k: v for k, v in r.items() if k != "result"} for r in rows]
            _emit(rows, args.format, out)
        elif args.what == "tables":
            _emit(table_report(run, _int_list(args.sections)), args.format, out)
        elif args.what == "hist":
            rep = histogram_report(run)
            if args.format == "csv":
                rows = [{"kind": "block", "length": L, "count": n, "probes": "", "true_negatives": ""}
                        for L, n in rep["block_sizes"].items()]
                rows += [{"kind": "true_negative", "length": L, "count": "", "probes": n, "true_negatives": tn}
                         for L, (n, tn) in rep["true_negatives"].items()]
                rows += [{"kind": "flow_cdf", "length": size, "count": frac, "probes": "", "true_negatives": ""}
                         for size, frac in rep["flow_size_cdf"]]
                _emit(rows, "csv", out)
            else:
                _emit(rep, "json", out)
        elif args.what == "bench":
            wl = Workload.from_run(run)
            queries = [d for d, _ in wl.excerpts]
            rows = []
            for mode in ("cbid", "baseline"):
                cfg = mode_config(replace(run, mode=mode), wl)
                rows.append({"mode": mode, **bench(wl.packets, cfg, queries)})
            _emit(rows, args.format, out)
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cbid", description="Payload attribution over digested traffic.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    d = sub.add_parser("digest", help="digest a capture, CBTR corpus or synth spec into an archive")
    d.add_argument("--in", dest="input", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--dr", type=float, default=100.0)
    d.add_argument("--sections", type=int, default=2048)
    d.add_argument("--hashes", type=int, default=4)
    d.add_argument("--threshold", type=int, default=40)
    d.add_argument("--window", type=int, default=64)
    d.add_argument("--overlap", type=int, default=4)
    d.add_argument("--qgram", type=int, default=4)
    d.add_argument("--interval-bytes", type=int, default=256 * 2**20)
    d.add_argument("--rotation-fp", type=float, default=0.01)
    d.add_argument("--layout", choices=("msbf", "bloom"), default="msbf")
    d.add_argument("--no-index", action="store_true")
    d.add_argument("--codec", default="lzma2")
    d.add_argument("--seed", type=int, default=0)
    d.set_defaults(func=cmd_digest)

    q = sub.add_parser("query", help="investigate an excerpt")
    q.add_argument("--archive", required=True)
    q.add_argument("--excerpt", required=True, help="file path or hex string")
    q.add_argument("--from", dest="start", type=int)
    q.add_argument("--to", dest="end", type=int)
    q.add_argument("--no-prune", action="store_true")
    q.add_argument("--json", action="store_true")
    q.set_defaults(func=cmd_query)

    e = sub.add_parser("eval", help="run an experiment from an EvalRun spec")
    e.add_argument("what", choices=("fp", "sweep", "tables", "hist", "bench"))
    e.add_argument("--spec")
    e.add_argument("--format", choices=("json", "csv"), default="json")
    e.add_argument("--out")
    e.add_argument("--compare", action="store_true", help="fp: CBID vs matched baseline over --seeds")
    e.add_argument("--seeds", default="0,1,2")
    e.add_argument("--thresholds", default="0,10,20,30,40,50,60")
    e.add_argument("--sections", default="1024,2048,4096")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("inspect", help="summarize an archive")
    i.add_argument("--archive", required=True)
    i.add_argument("--format", choices=("json", "csv"), default="json")
    i.add_argument("--tables", action="store_true", help="decompress index tables for ones fractions")
    i.set_defaults(func=cmd_inspect)

    s = sub.add_parser("synth", help="write a synthetic CBTR corpus")
    s.add_argument("--spec")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InvariantViolation as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ArchiveError, ConfigError, OrderingError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
