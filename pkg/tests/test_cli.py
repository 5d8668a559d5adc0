import json

import pytest

from cbid.cli import EXIT_INPUT, EXIT_OK, main
from cbid.ingest import read_corpus


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    spec = d / "synth.json"
    spec.write_text(json.dumps({"flow_count": 40, "size_max": 100_000, "seed": 3}))
    out = d / "c.cbtr"
    assert main(["synth", "--spec", str(spec), "--out", str(out)]) == EXIT_OK
    return d, out


def test_digest_query_inspect(corpus, capsys):
    d, cbtr = corpus
    arch = d / "a.cbid"
    rc = main(["digest", "--in", str(cbtr), "--out", str(arch), "--sections", "64", "--interval-bytes", "200000"])
    assert rc == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary["round_trip_ok"] and summary["segments"] >= 1

    p = next(p for p in read_corpus(cbtr) if len(p.payload) >= 300)
    assert main(["query", "--archive", str(arch), "--excerpt", p.payload[:300].hex(), "--json"]) == EXIT_OK
    rep = json.loads(capsys.readouterr().out)
    assert any(f["flow"] == str(p.flow) for s in rep["segments"] for f in s["flows"])

    ex = d / "ex.bin"
    ex.write_bytes(p.payload[:300])
    assert main(["query", "--archive", str(arch), "--excerpt", str(ex)]) == EXIT_OK
    assert str(p.flow) in capsys.readouterr().out

    assert main(["inspect", "--archive", str(arch), "--format", "csv", "--tables"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("segment,") and "ones_fraction" in lines[0]


def test_digest_from_synth_spec(corpus, capsys):
    d, _ = corpus
    rc = main(["digest", "--in", str(d / "synth.json"), "--out", str(d / "s.cbid"), "--sections", "64",
               "--interval-bytes", "500000", "--threshold", "0"])
    assert rc == EXIT_OK


def test_corrupt_archive_fails(corpus, capsys):
    d, _ = corpus
    bad = d / "bad.cbid"
    bad.write_bytes(b"XXXX" + bytes(40))
    assert main(["inspect", "--archive", str(bad)]) == EXIT_INPUT
    assert "magic" in capsys.readouterr().err


def test_bad_excerpt(corpus, capsys):
    d, _ = corpus
    arch = d / "e.cbid"
    main(["digest", "--in", str(d / "c.cbtr"), "--out", str(arch), "--sections", "64", "--interval-bytes", "200000"])
    assert main(["query", "--archive", str(arch), "--excerpt", "not-hex-nor-file"]) == EXIT_INPUT


@pytest.mark.parametrize("what", ["fp", "sweep", "tables", "hist", "bench"])
def test_eval_subcommands(corpus, what, tmp_path, capsys):
    spec = tmp_path / "run.json"
    spec.write_text(json.dumps({
        "corpus": {"synth": {"flow_count": 60, "size_max": 200_000}},
        "excerpts": {"count": 10},
        "intervals": 2,
        "digest": {"sections_j": 64, "rotation_fp": 0.99},
    }))
    out = tmp_path / "out.csv"
    args = ["eval", what, "--spec", str(spec), "--format", "csv", "--out", str(out)]
    if what == "sweep":
        args += ["--thresholds", "0,40"]
    if what == "tables":
        args += ["--sections", "64,128"]
    assert main(args) == EXIT_OK
    assert out.read_text().count("\n") >= 2


def test_eval_compare_exit_code(tmp_path, capsys):
    spec = tmp_path / "run.json"
    spec.write_text(json.dumps({
        "corpus": {"synth": {"flow_count": 60, "size_max": 200_000}},
        "excerpts": {"count": 15},
        "intervals": 2,
        "digest": {"sections_j": 64, "rotation_fp": 0.99},
    }))
    rc = main(["eval", "fp", "--compare", "--seeds", "0,1", "--spec", str(spec)])
    d = json.loads(capsys.readouterr().out)
    assert rc == (EXIT_OK if d["cbid_ci"][1] < d["baseline_ci"][0] else 2)


def test_help_and_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
