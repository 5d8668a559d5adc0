"""Experiment harness: false-positive rates, threshold sweeps, table statistics.

An :class:`EvalRun` is a serializable recipe (corpus, digest config,
excerpt draw, mode) and every result can be regenerated from it.

Modes:

``cbid``
    the digest config as given (sections, index table, downsampling).
``baseline``
    conventional filter, no downsampling, no index table, exhaustive flow
    queries. The filter is resized so the archive's overall data reduction
    equals that of the matching ``cbid`` run.
``downsampling``
    conventional filter and no index table, but the configured threshold;
    the filter keeps the size implied by ``target_dr``.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .digest import ArchiveSegment, DigestConfig, digest_stream
from .flows import PacketRecord
from .hashing import TAG_TYPE1, hash_spans
from .index import TableStats, symbol_entropy
from .ingest import Corpus, SynthConfig, extract_unique_excerpts, read_capture, read_corpus, synth_generate
from .partition import PartitionConfig, partition_spans
from .query import _query, excerpt_blocks, investigate

MODES = ("cbid", "baseline", "downsampling")
HOLDOUT_SEED_OFFSET = 1_000_003


class InvariantViolation(RuntimeError):
    """A run broke a guarantee of the engine (e.g. a missed true carrier)."""


def dr_overall(raw_bytes: float, filter_bytes: float, table_bytes: float = 0) -> float:
    denom = filter_bytes + table_bytes
    if denom <= 0:
        raise ValueError("filter and table sizes sum to zero")
    return raw_bytes / denom


def format_ratio(ratio: float) -> str:
    return f"{ratio:.1f}:1"


@dataclass(frozen=True)
class ExcerptSpec:
    length: int = 200
    count: int = 100
    seed: int = 0


@dataclass(frozen=True)
class EvalRun:
    """Serializable experiment recipe.

    ``corpus`` is either ``{"synth": {...SynthConfig fields}}`` or
    ``{"path": "capture.pcap" | "corpus.cbtr"}``. When ``intervals`` is set,
    the raw byte budget per interval is chosen so the corpus splits into
    that many intervals. When ``overall_dr`` is set, a ``cbid`` run shrinks
    its filters so filters plus compressed tables reach that reduction.
    """

    corpus: dict = field(default_factory=lambda: {"synth": {}})
    digest: DigestConfig = field(default_factory=DigestConfig)
    excerpts: ExcerptSpec = field(default_factory=ExcerptSpec)
    mode: str = "cbid"
    intervals: Optional[int] = None
    overall_dr: Optional[float] = None

    def __post_init__(self):
        if isinstance(self.digest, dict):
            object.__setattr__(self, "digest", DigestConfig.from_dict(self.digest))
        if isinstance(self.excerpts, dict):
            object.__setattr__(self, "excerpts", ExcerptSpec(**self.excerpts))
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.overall_dr is not None and self.overall_dr <= 1:
            raise ValueError("overall_dr must be > 1")
        if not ({"synth"} == set(self.corpus) or {"path"} == set(self.corpus)):
            raise ValueError("corpus must be {'synth': {...}} or {'path': ...}")

    def to_dict(self) -> dict:
        return {
            "corpus": self.corpus,
            "digest": self.digest.to_dict(),
            "excerpts": asdict(self.excerpts),
            "mode": self.mode,
            "intervals": self.intervals,
            "overall_dr": self.overall_dr,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalRun":
        return cls(**d)

    @classmethod
    def load(cls, path) -> "EvalRun":
        return cls.from_dict(json.loads(Path(path).read_text()))


def load_packets(corpus: dict) -> list[PacketRecord]:
    if "synth" in corpus:
        return list(synth_generate(SynthConfig.from_dict(corpus["synth"])))
    path = Path(corpus["path"])
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == b"CBTR":
        return list(read_corpus(path))
    return list(read_capture(path))


class Workload:
    """Corpus packets plus the excerpts drawn from them, shared across runs."""

    def __init__(self, packets: Sequence[PacketRecord], spec: ExcerptSpec):
        self.corpus = Corpus(packets)
        self.spec = spec
        self.flow_count = len(self.corpus.flows)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            self.excerpts = extract_unique_excerpts(self.corpus, spec.length, spec.count, spec.seed)
        self.shortfall_warnings = [str(w.message) for w in caught]

    @classmethod
    def from_run(cls, run: EvalRun) -> "Workload":
        return cls(load_packets(run.corpus), run.excerpts)

    @property
    def packets(self) -> list[PacketRecord]:
        return self.corpus.packets

    @property
    def raw_bytes(self) -> int:
        return len(self.corpus.buf)


@dataclass
class EvalResult:
    mode: str
    fp_rate: float
    flow_count: int
    per_excerpt_fp: list[float]
    reported_flows: list[int]
    candidates: list[int]
    raw_bytes: int
    stored_bytes: int
    blocks_total: int
    blocks_kept: int
    segments: int
    digest_seconds: float
    query_seconds: float
    table_bytes: int = 0
    ci: Optional[tuple[float, float]] = None

    @property
    def dr_overall(self) -> float:
        return dr_overall(self.raw_bytes, self.stored_bytes)

    @property
    def d(self) -> float:
        return self.blocks_total / self.blocks_kept if self.blocks_kept else math.inf

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dr_overall"] = format_ratio(self.dr_overall)
        d["d"] = self.d
        return d


def per_excerpt_fp(reports: Sequence[set], carriers: Sequence, flow_count: int) -> list[float]:
    """False flows per excerpt over the corpus flow count; every carrier must be reported."""
    if flow_count <= 0:
        raise ValueError("flow_count must be positive")
    out = []
    for flows, carrier in zip(reports, carriers):
        if carrier not in flows:
            raise InvariantViolation(f"true carrier {carrier} missing from report")
        out.append((len(flows) - 1) / flow_count)
    return out


def mode_config(run: EvalRun, workload: Workload, matched_bytes: Optional[int] = None) -> DigestConfig:
    cfg = run.digest
    if run.intervals:
        cfg = replace(cfg, interval_raw_budget=max(1, -(-workload.raw_bytes // run.intervals)))
    if run.mode == "cbid":
        return _fit_overall_dr(cfg, run.overall_dr, workload) if run.overall_dr else cfg
    if run.mode == "downsampling":
        return replace(cfg, layout="bloom", index_table=False)
    pc = replace(cfg.partition, threshold_T=0)
    base = replace(cfg, layout="bloom", index_table=False, partition=pc)
    if matched_bytes is not None:
        base = replace(base, filter_bits=8 * matched_bytes)
    return base


def _fit_overall_dr(cfg: DigestConfig, target: float, workload: Workload) -> DigestConfig:
    """Filter size leaving room for the tables so the archive reaches ``target`` overall.

    Section assignment does not depend on the filter size, so one trial
    digest fixes the table bytes.
    """
    if not cfg.uses_index:
        return replace(cfg, target_dr=target)
    trial = digest_stream(workload.packets, cfg)
    if not trial:
        return cfg
    filter_bytes = workload.raw_bytes / target - _stored(trial)[1]
    if filter_bytes <= 0:
        raise ValueError(f"index tables alone exceed the budget for {target}:1 overall")
    section_bytes = max(8, round(filter_bytes / len(trial) / cfg.sections_j))
    return replace(cfg, filter_bits=8 * section_bytes * cfg.sections_j)


def _stored(segments: Sequence[ArchiveSegment]) -> tuple[int, int]:
    return sum(s.filter_nbytes for s in segments), sum(s.table_nbytes for s in segments)


def run_archive(run: EvalRun, workload: Workload, segments: Sequence[ArchiveSegment], digest_seconds: float = 0.0) -> EvalResult:
    """Investigate every excerpt of ``workload`` against ``segments``."""
    F = workload.flow_count
    reports, cands = [], []
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for data, _ in workload.excerpts:
            rep = investigate(data, segments, prune=run.mode == "cbid")
            reports.append(rep.flows)
            cands.append(rep.candidates)
    query_seconds = time.perf_counter() - t0
    per = per_excerpt_fp(reports, [c for _, c in workload.excerpts], F)
    reported = [len(r) for r in reports]
    fbytes, tbytes = _stored(segments)
    return EvalResult(
        mode=run.mode,
        fp_rate=float(np.mean(per)) if per else 0.0,
        flow_count=F,
        per_excerpt_fp=per,
        reported_flows=reported,
        candidates=cands,
        raw_bytes=sum(s.counters.raw_bytes for s in segments),
        stored_bytes=fbytes + tbytes,
        table_bytes=tbytes,
        blocks_total=sum(s.counters.blocks_total for s in segments),
        blocks_kept=sum(s.counters.blocks_kept for s in segments),
        segments=len(segments),
        digest_seconds=digest_seconds,
        query_seconds=query_seconds,
    )


def digest_workload(run: EvalRun, workload: Workload, cfg: DigestConfig) -> tuple[list[ArchiveSegment], float]:
    t0 = time.perf_counter()
    segs = digest_stream(workload.packets, cfg)
    return segs, time.perf_counter() - t0


def eval_fp_rate(run: EvalRun, workload: Optional[Workload] = None) -> EvalResult:
    """Mean over excerpts of falsely reported flows divided by the corpus flow count.

    Raises :class:`InvariantViolation` when a true carrier goes unreported.
    A ``baseline`` run first digests the ``cbid`` variant to find the
    overall data reduction it has to match.
    """
    workload = workload or Workload.from_run(run)
    matched = None
    if run.mode == "baseline":
        ref_cfg = mode_config(replace(run, mode="cbid"), workload)
        ref, _ = digest_workload(run, workload, ref_cfg)
        if ref:
            matched = math.ceil(sum(_stored(ref)) / len(ref))
    cfg = mode_config(run, workload, matched)
    segs, secs = digest_workload(run, workload, cfg)
    return run_archive(run, workload, segs, secs)


def bootstrap_ci(values: Sequence[float], confidence: float = 0.95, seed: int = 0, resamples: int = 2000) -> tuple[float, float]:
    """Percentile bootstrap interval for the mean."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return (math.nan, math.nan)
    if np.all(arr == arr[0]):
        return (float(arr[0]), float(arr[0]))
    res = stats.bootstrap(
        (arr,), np.mean, confidence_level=confidence, n_resamples=resamples,
        method="percentile", random_state=np.random.default_rng(seed),
    )
    return float(res.confidence_interval.low), float(res.confidence_interval.high)


@dataclass
class Comparison:
    cbid: list[EvalResult]
    baseline: list[EvalResult]
    cbid_ci: tuple[float, float]
    baseline_ci: tuple[float, float]

    @property
    def cbid_fp(self) -> float:
        return float(np.mean([v for r in self.cbid for v in r.per_excerpt_fp]))

    @property
    def baseline_fp(self) -> float:
        return float(np.mean([v for r in self.baseline for v in r.per_excerpt_fp]))

    @property
    def ratio(self) -> float:
        return self.baseline_fp / self.cbid_fp if self.cbid_fp else math.inf

    @property
    def separated(self) -> bool:
        return self.cbid_ci[1] < self.baseline_ci[0]

    def to_dict(self) -> dict:
        return {
            "cbid_fp": self.cbid_fp,
            "baseline_fp": self.baseline_fp,
            "ratio": self.ratio,
            "cbid_ci": list(self.cbid_ci),
            "baseline_ci": list(self.baseline_ci),
            "cbid_dr": [format_ratio(r.dr_overall) for r in self.cbid],
            "baseline_dr": [format_ratio(r.dr_overall) for r in self.baseline],
        }


def compare_modes(run: EvalRun, seeds: Sequence[int]) -> Comparison:
    """CBID vs matched baseline over several corpus/excerpt seeds."""
    cbid, base = [], []
    for s in seeds:
        r = _reseed(run, s)
        wl = Workload.from_run(r)
        cbid.append(eval_fp_rate(replace(r, mode="cbid"), wl))
        base.append(eval_fp_rate(replace(r, mode="baseline"), wl))
    pool_c = [v for r in cbid for v in r.per_excerpt_fp]
    pool_b = [v for r in base for v in r.per_excerpt_fp]
    return Comparison(cbid, base, bootstrap_ci(pool_c, seed=1), bootstrap_ci(pool_b, seed=2))


def _reseed(run: EvalRun, seed: int) -> EvalRun:
    corpus = run.corpus
    if "synth" in corpus:
        corpus = {"synth": {**corpus["synth"], "seed": seed}}
    return replace(run, corpus=corpus, excerpts=replace(run.excerpts, seed=seed))


def threshold_sweep(run: EvalRun, thresholds: Sequence[int], workload: Optional[Workload] = None) -> list[dict]:
    """One evaluation per threshold on the same corpus and excerpts."""
    workload = workload or Workload.from_run(run)
    pc = run.digest.partition
    rows = []
    for T in thresholds:
        if not 0 <= T <= pc.max_block:
            raise ValueError(f"threshold {T} outside [0, {pc.max_block}]")
        r = replace(run, digest=replace(run.digest, partition=replace(pc, threshold_T=T)))
        res = eval_fp_rate(r, workload)
        rows.append({"T": T, "fp_rate": res.fp_rate, "d": res.d, "dr_overall": res.dr_overall, "result": res})
    return rows


def table_report(
    run: EvalRun,
    sections: Sequence[int] = (1024, 2048, 4096),
    symbol_sizes: Sequence[int] = (8, 16, 32, 64),
    workload: Optional[Workload] = None,
) -> list[dict]:
    """Index-table statistics per section count, all intervals pooled."""
    workload = workload or Workload.from_run(run)
    rows = []
    for j in sections:
        r = replace(run, mode="cbid", digest=replace(run.digest, sections_j=j, index_table=True, layout="msbf"))
        segs, _ = digest_workload(r, workload, mode_config(r, workload))
        tables = [s.table for s in segs if s.table is not None]
        ones = sum(int(np.count_nonzero(t.bits)) for t in tables)
        cells = sum(t.rows * t.columns for t in tables)
        raw = sum(t.raw_nbytes for t in tables)
        fbytes, tbytes = _stored(segs)
        row = {
            "sections": j,
            "ones_pct": 100.0 * ones / cells if cells else 0.0,
            "raw_table_bytes": raw,
            "compressed_bytes": tbytes,
            "filter_bytes": fbytes,
            "raw_bytes": workload.raw_bytes,
            "dr_overall": format_ratio(dr_overall(workload.raw_bytes, fbytes, tbytes)),
        }
        packed = b"".join(t.pack() for t in tables)
        for size in symbol_sizes:
            if len(packed) >= size:
                st = table_stats_from_bytes(packed, size, ones / cells if cells else 0.0)
                row[f"entropy_{size * 8}bit"] = st.empirical_entropy_bits
                row[f"best_ratio_{size * 8}bit"] = st.best_theoretical_ratio
        rows.append(row)
    return rows


def table_stats_from_bytes(packed: bytes, symbol_size: int, ones: float):
    h = symbol_entropy(packed, symbol_size)
    return TableStats(ones, h, math.inf if h == 0 else 8 * symbol_size / h, symbol_size)


def block_histogram(packets: Sequence[PacketRecord], cfg: PartitionConfig) -> dict[int, int]:
    """Block count per length over ``[min_block, max_block]``."""
    c = Corpus(packets)
    spans = partition_spans(np.frombuffer(c.buf, dtype=np.uint8), c.offsets, c.lengths, cfg)
    counts = np.bincount(spans.lengths, minlength=cfg.max_block + 1)
    return {L: int(counts[L]) for L in range(cfg.min_block, cfg.max_block + 1)}


def flow_size_cdf(packets: Sequence[PacketRecord]) -> list[tuple[int, float]]:
    sizes: dict = {}
    for p in packets:
        sizes[p.flow] = sizes.get(p.flow, 0) + len(p.payload)
    arr = np.sort(np.fromiter(sizes.values(), dtype=np.int64, count=len(sizes)))
    if arr.size == 0:
        return []
    values, idx = np.unique(arr, return_index=True)
    last = np.append(idx[1:], arr.size)
    return [(int(v), float(e) / arr.size) for v, e in zip(values, last)]


def _draw_excerpts(corpus: Corpus, length: int, n: int, rng: np.random.Generator) -> list[bytes]:
    room = np.maximum(corpus.lengths - length + 1, 0)
    if room.sum() == 0:
        return []
    cum = np.cumsum(room)
    out = []
    for d in rng.integers(0, cum[-1], n).tolist():
        p = int(np.searchsorted(cum, d, side="right"))
        off = d - int(cum[p] - room[p])
        out.append(corpus.packets[p].payload[off : off + length])
    return out


def true_negative_profile(
    segments: Sequence[ArchiveSegment],
    workload: Workload,
    probes: int = 2000,
    seed: int = 0,
    holdout: Optional[Sequence[PacketRecord]] = None,
    substitutions: int = 3,
) -> dict[int, tuple[int, int]]:
    """Per block length: (blocks probed, blocks answered negative).

    Probes are excerpts that do not occur in the corpus. With ``holdout``
    traffic they are drawn from it and every block counts. Otherwise they
    are corpus excerpts with random byte substitutions, and only blocks
    covering a substituted byte count.
    """
    if not segments:
        return {}
    rng = np.random.default_rng(seed)
    cfg = segments[0].cfg.partition
    length = workload.spec.length
    if holdout is not None:
        drawn = _draw_excerpts(Corpus(holdout), length, probes, rng)
        seen = workload.corpus.occurrences(drawn, cap=1)
        pairs = [(ex, None) for ex, n in zip(drawn, seen) if n == 0]
    else:
        pairs = []
        for ex in _draw_excerpts(workload.corpus, length, probes, rng):
            buf = bytearray(ex)
            changed = rng.integers(0, len(buf), substitutions)
            for pos in changed.tolist():
                buf[pos] = (buf[pos] + int(rng.integers(1, 256))) % 256
            pairs.append((bytes(buf), changed))

    counts: dict[int, list[int]] = {}
    for data, changed in pairs:
        blocks = excerpt_blocks(data, cfg)
        if changed is not None:
            blocks = [b for b in blocks if ((changed >= b.start_offset) & (changed < b.start_offset + len(b))).any()]
        if not blocks:
            continue
        seg = segments[int(rng.integers(0, len(segments)))]
        h = hash_spans(data, [b.start_offset for b in blocks], [b.start_offset + len(b) for b in blocks],
                       seg.filter.element_seeds, tag=TAG_TYPE1)
        found, _ = _query(seg.filter, h)
        for b, f in zip(blocks, found.tolist()):
            c = counts.setdefault(len(b), [0, 0])
            c[0] += 1
            c[1] += not f
    return {L: (v[0], v[1]) for L, v in sorted(counts.items())}


def holdout_packets(corpus: dict, max_flows: int = 500) -> Optional[list[PacketRecord]]:
    """Fresh traffic from the same synthetic generator under another seed; None for captures."""
    if "synth" not in corpus:
        return None
    cfg = SynthConfig.from_dict(corpus["synth"])
    return list(synth_generate(replace(cfg, seed=cfg.seed + HOLDOUT_SEED_OFFSET, flow_count=min(cfg.flow_count, max_flows))))


def monotone_trend(profile: dict[int, tuple[int, int]], bins: int = 8) -> dict:
    """Spearman trend of the true-negative fraction over binned block lengths."""
    lengths = sorted(L for L, (n, _) in profile.items() if n > 0)
    if len(lengths) < bins:
        return {"bins": [], "rho": math.nan, "p_value": math.nan, "non_decreasing": False}
    edges = np.array_split(np.array(lengths), bins)
    fracs = []
    for grp in edges:
        n = sum(profile[L][0] for L in grp)
        tn = sum(profile[L][1] for L in grp)
        fracs.append(tn / n)
    rho, pv = stats.spearmanr(np.arange(bins), fracs)
    return {
        "bins": [(int(g[0]), int(g[-1]), f) for g, f in zip(edges, fracs)],
        "rho": float(rho),
        "p_value": float(pv),
        "non_decreasing": bool(np.all(np.diff(fracs) >= -0.02)),
    }


def histogram_report(run: EvalRun, workload: Optional[Workload] = None, probes: int = 2000) -> dict:
    workload = workload or Workload.from_run(run)
    pc = run.digest.partition
    blocks = block_histogram(workload.packets, pc)
    segs, _ = digest_workload(run, workload, mode_config(run, workload))
    tn = true_negative_profile(segs, workload, probes=probes, seed=run.excerpts.seed,
                               holdout=holdout_packets(run.corpus))
    return {
        "block_sizes": blocks,
        "true_negatives": tn,
        "true_negative_trend": monotone_trend(tn),
        "flow_size_cdf": flow_size_cdf(workload.packets),
    }


def bench(packets: Sequence[PacketRecord], cfg: DigestConfig, queries: Sequence[bytes] = ()) -> dict:
    """Digest throughput and mean query latency; no assertions on the numbers."""
    raw = sum(len(p.payload) for p in packets)
    t0 = time.perf_counter()
    segs = digest_stream(packets, cfg)
    secs = time.perf_counter() - t0
    q_ms = 0.0
    if queries and segs:
        t1 = time.perf_counter()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            for q in queries:
                investigate(q, segs)
        q_ms = 1000 * (time.perf_counter() - t1) / len(queries)
    return {
        "bytes": raw,
        "seconds": secs,
        "digest_mb_s": (raw / 1e6) / secs if raw and secs > 0 else 0.0,
        "mean_query_ms": q_ms,
        "segments": len(segs),
    }


def rows_to_csv(rows: Sequence[dict]) -> str:
    if not rows:
        return ""
    keys = [k for k in rows[0] if k != "result"]
    out = io.StringIO()
    w = csv.DictWriter(out, fieldnames=keys, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: r.get(k) for k in keys})
    return out.getvalue()
