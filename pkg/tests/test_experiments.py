"""Experiment-level trends on the desk corpus that sit outside the acceptance list."""

import warnings
from dataclasses import replace

import pytest

from cbid.digest import DigestConfig, digest_stream
from cbid.evaluate import (
    EvalRun,
    ExcerptSpec,
    Workload,
    bench,
    bootstrap_ci,
    eval_fp_rate,
    holdout_packets,
    mode_config,
    monotone_trend,
    true_negative_profile,
)
from cbid.partition import PartitionConfig

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def run():
    return EvalRun(
        corpus={"synth": {"flow_count": 1000, "seed": 0}},
        digest=DigestConfig(rotation_fp=0.99),
        excerpts=ExcerptSpec(length=200, count=100, seed=0),
        intervals=8,
    )


@pytest.fixture(scope="module")
def workload(run):
    return Workload.from_run(run)


def test_longer_blocks_are_rejected_more_often(run, workload):
    # every block inserted, so short blocks compete with real recurring content
    r = replace(run, mode="downsampling", digest=replace(run.digest, partition=PartitionConfig(threshold_T=0)))
    segs = digest_stream(workload.packets, mode_config(r, workload))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        profile = true_negative_profile(segs, workload, probes=10_000, holdout=holdout_packets(r.corpus))
    trend = monotone_trend(profile)
    fractions = [f for _, _, f in trend["bins"]]
    assert trend["non_decreasing"]
    assert fractions[-1] - fractions[0] > 0.02


def test_smaller_filter_never_lowers_fp(run, workload):
    results = [eval_fp_rate(replace(run, digest=replace(run.digest, target_dr=dr)), workload) for dr in (50, 100, 200)]
    fps = [r.fp_rate for r in results]
    cis = [bootstrap_ci(r.per_excerpt_fp) for r in results]
    assert fps[0] <= fps[1] <= fps[2]
    # a larger filter's interval never lies wholly above a smaller one's
    assert all(cis[i][0] <= cis[i + 1][1] for i in range(2))


def test_bench_modes_comparable_and_stable(run, workload):
    packets = workload.packets[: len(workload.packets) // 3]
    cbid_cfg = mode_config(run, workload)
    base_cfg = mode_config(replace(run, mode="baseline"), workload, matched_bytes=cbid_cfg.total_bits // 8)
    bench(packets[:200], cbid_cfg)  # compile and warm caches
    bench(packets[:200], base_cfg)
    first, second = bench(packets, cbid_cfg), bench(packets, cbid_cfg)
    base = bench(packets, base_cfg)
    a, b = first["digest_mb_s"], second["digest_mb_s"]
    assert abs(a - b) / max(a, b) < 0.5
    assert 0.5 < base["digest_mb_s"] / max(a, b) < 2.0
