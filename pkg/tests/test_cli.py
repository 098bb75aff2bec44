import json

import numpy as np
import pytest

from umr import __version__
from umr.cli import main
from umr.config import ConfigError, PipelineConfig
from umr.datamodel import Category, read_enhanced
from umr.embed import init_model, load_checkpoint
from umr.synth import MockServer, MockVlm


def tree(path):
    return {p.relative_to(path).as_posix(): p.read_bytes() for p in sorted(path.rglob("*")) if p.is_file()}


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def bench(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "bench"
    assert run("synth", "gen", "--seed", 7, "--n-entities", 24, "--out", out) == 0
    return out


@pytest.fixture(scope="module")
def enhanced(bench):
    out = bench.parent / "enh"
    assert run("enhance", "corpus", "--in", bench, "--out", out, "--mock-world", bench) == 0
    assert run("enhance", "queries", "--in", bench, "--out", out, "--mock-world", bench) == 0
    return out


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        run("--version")
    assert exc.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_synth_twice_identical(tmp_path, capsys):
    assert run("synth", "gen", "--seed", 7, "--n-entities", 20, "--out", tmp_path / "a") == 0
    assert capsys.readouterr().out.strip().endswith("manifest.json")
    first = tree(tmp_path / "a")
    assert run("synth", "gen", "--seed", 7, "--n-entities", 20, "--out", tmp_path / "a") == 0
    assert run("synth", "gen", "--seed", 7, "--n-entities", 20, "--out", tmp_path / "b") == 0
    assert tree(tmp_path / "a") == first == tree(tmp_path / "b")
    assert "config.lock.json" in first


def test_synth_missing_out_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        run("synth", "gen", "--seed", 1)
    assert exc.value.code != 0


def test_synth_invalid_config(tmp_path, capsys):
    assert run("synth", "gen", "--caption-noise", 2, "--out", tmp_path) != 0
    assert "caption_noise" in capsys.readouterr().err


def test_synth_default_counts(tmp_path):
    assert run("synth", "gen", "--out", tmp_path) == 0
    counts = json.loads((tmp_path / "manifest.json").read_text())["counts"]
    n, k = 200, 3
    assert counts["documents"] == {"text": n, "image": n * (1 + k), "imagetext": n}
    assert counts["queries"] == {"train": n // 2 * 5, "test": n // 2 * 5}


def test_enhance_mock_world_has_no_fallback(enhanced, capsys):
    recs = read_enhanced(enhanced / "enhanced_corpus.jsonl")
    assert recs and not any(r.fallback for r in recs)
    assert (enhanced / "config.lock.json").exists()


def test_enhance_warm_cache(bench, tmp_path, capsys):
    args = ("enhance", "queries", "--in", bench, "--mock-world", bench, "--cache-dir", tmp_path / "cache")
    assert run(*args, "--out", tmp_path / "a") == 0
    capsys.readouterr()
    assert run(*args, "--out", tmp_path / "b") == 0
    summary = dict(kv.split("=") for kv in capsys.readouterr().out.split())
    assert int(summary["cached"]) == int(summary["total"]) - int(summary["identity"])
    assert summary["calls"] == "0"
    assert (tmp_path / "a" / "enhanced_queries.jsonl").read_bytes() == \
        (tmp_path / "b" / "enhanced_queries.jsonl").read_bytes()


def test_enhance_text_only_corpus_is_identity(bench, tmp_path):
    src = bench / "corpus" / "text.jsonl"
    assert run("enhance", "corpus", "--in", src, "--out", tmp_path, "--endpoint", "http://127.0.0.1:9") == 0
    recs = read_enhanced(tmp_path / "enhanced_corpus.jsonl")
    originals = [json.loads(line)["txt"] for line in src.read_text(encoding="utf-8").splitlines()]
    assert [r.enhanced_text for r in recs] == originals
    assert all(r.category is Category.I for r in recs)


def _gateway_config(tmp_path, **gateway):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"gateway": {"max_retries": 0, "backoff_base": 0.0, "timeout": 5.0, **gateway}}))
    return path


def test_enhance_total_failure_exits_nonzero(bench, tmp_path, capsys):
    cfg = _gateway_config(tmp_path)
    code = run("--config", cfg, "enhance", "corpus", "--in", bench, "--out", tmp_path / "o",
               "--endpoint", "http://127.0.0.1:9/v1")
    assert code != 0
    assert "fallback=" in capsys.readouterr().out


def test_enhance_partial_failure_exits_zero(bench, tmp_path, capsys):
    cfg = _gateway_config(tmp_path, max_in_flight=1)
    with MockServer(MockVlm.from_benchmark(bench)) as srv:
        srv.fail_next(2)
        code = run("--config", cfg, "enhance", "corpus", "--in", bench, "--out", tmp_path / "o",
                   "--endpoint", srv.url)
    assert code == 0
    summary = dict(kv.split("=") for kv in capsys.readouterr().out.split())
    assert summary["fallback"] == "2"


def test_train_zero_lr_gives_init_checkpoint(bench, tmp_path):
    assert run("train", "--bench", bench, "--lr", 0, "--epochs", 1, "--out", tmp_path) == 0
    assert load_checkpoint(tmp_path / "checkpoint.json") == init_model()
    lock = json.loads((tmp_path / "config.lock.json").read_text())
    assert lock["train"]["learning_rate"] == 0.0


def test_train_without_enhanced_data_names_producer(bench, tmp_path, capsys):
    assert run("train", "--bench", bench, "--mode", "full", "--out", tmp_path) == 1
    assert "umr enhance" in capsys.readouterr().err


def test_missing_benchmark_names_producer(tmp_path, capsys):
    assert run("train", "--bench", tmp_path / "nothing", "--out", tmp_path / "o") == 1
    assert "umr synth gen" in capsys.readouterr().err


def test_missing_checkpoint_names_producer(bench, tmp_path, capsys):
    assert run("eval", "--bench", bench, "--checkpoint", tmp_path / "none", "--out", tmp_path) == 1
    assert "umr train" in capsys.readouterr().err


def test_eval_baseline_alias(bench, tmp_path):
    assert run("train", "--bench", bench, "--epochs", 1, "--out", tmp_path / "m") == 0
    assert run("eval", "--bench", bench, "--checkpoint", tmp_path / "m", "--out", tmp_path / "a") == 0
    assert run("eval", "--bench", bench, "--checkpoint", tmp_path / "m", "--mode", "baseline",
               "--out", tmp_path / "b") == 0
    assert (tmp_path / "a" / "baseline.csv").read_bytes() == (tmp_path / "b" / "baseline.csv").read_bytes()


def test_full_artifact_chain(bench, enhanced, tmp_path, capsys):
    m, e, i, r = (tmp_path / x for x in "meir")
    assert run("train", "--bench", bench, "--enhanced", enhanced, "--mode", "full", "--epochs", 2, "--out", m) == 0
    assert run("embed", "--bench", bench, "--checkpoint", m, "--enhanced", enhanced, "--mode", "full",
               "--out", e) == 0
    assert run("index", "--embeddings", e, "--out", i) == 0
    assert run("eval", "--bench", bench, "--checkpoint", m, "--enhanced", enhanced, "--mode", "full",
               "--index-dir", i, "--out", r / "with_index") == 0
    assert run("eval", "--bench", bench, "--checkpoint", m, "--enhanced", enhanced, "--mode", "full",
               "--out", r / "direct") == 0
    assert (r / "with_index" / "full.csv").read_bytes() == (r / "direct" / "full.csv").read_bytes()
    # an index built for enhanced corpora cannot serve a baseline run
    assert run("eval", "--bench", bench, "--checkpoint", m, "--mode", "baseline", "--index-dir", i,
               "--out", r / "x") == 1
    assert run("eval", "--bench", bench, "--checkpoint", m, "--mode", "baseline", "--out", r / "direct") == 0
    capsys.readouterr()
    assert run("report", r / "direct" / "full.json", r / "direct" / "baseline.json", "--baseline", "baseline",
               "--out", r / "rep") == 0
    out = capsys.readouterr().out
    assert "| Task | R@1 | R@5 | R@10 | R@50 |" in out
    names = set(tree(r / "rep"))
    assert {"full.csv", "full.md", "baseline.csv", "delta_full.csv", "tasks_r5.png", "config.lock.json"} <= names
    for d in (m, e, i, r / "direct"):
        assert (d / "config.lock.json").exists()


def test_missing_report_names_producer(tmp_path, capsys):
    assert run("report", tmp_path / "none.json", "--out", tmp_path / "o") == 1
    assert "umr eval" in capsys.readouterr().err


def test_no_command_mutates_inputs(bench, enhanced, tmp_path):
    before = tree(bench), tree(enhanced)
    run("train", "--bench", bench, "--enhanced", enhanced, "--mode", "c-only", "--epochs", 1, "--out", tmp_path)
    run("eval", "--bench", bench, "--checkpoint", tmp_path, "--enhanced", enhanced, "--mode", "c-only",
        "--out", tmp_path)
    assert (tree(bench), tree(enhanced)) == before


# config -----------------------------------------------------------------------------

def test_config_unknown_key_rejected(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"train": {"learning_rat": 0.1}}))
    assert run("--config", cfg, "synth", "gen", "--out", tmp_path / "o") == 1
    assert "learning_rat" in capsys.readouterr().err


def test_config_unknown_section_rejected():
    with pytest.raises(ConfigError, match="section"):
        PipelineConfig.from_json({"trainer": {}})


def test_config_precedence(tmp_path):
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text(json.dumps({"synth": {"n_entities": 12, "seed": 3}}))
    assert run("--config", cfg_path, "synth", "gen", "--seed", 9, "--out", tmp_path / "o") == 0
    lock = json.loads((tmp_path / "o" / "config.lock.json").read_text())
    assert lock["synth"]["n_entities"] == 12  # file beats default
    assert lock["synth"]["seed"] == 9  # flag beats file
    assert lock["train"]["epochs"] == PipelineConfig().train.epochs


def test_config_lock_round_trips():
    cfg = PipelineConfig().override("train", epochs=3).override("gateway", endpoint_url="http://x/v1")
    assert PipelineConfig.from_json(json.loads(json.dumps(cfg.to_json()))) == cfg


def test_config_missing_file(capsys, tmp_path):
    assert run("--config", tmp_path / "nope.json", "synth", "gen", "--out", tmp_path) == 1
    assert "does not exist" in capsys.readouterr().err


def test_pipeline_command(tmp_path, capsys):
    assert run("pipeline", "--out", tmp_path, "--seeds", 0, "--n-entities", 30, "--epochs", 2) == 0
    rows = (tmp_path / "summary_r5.csv").read_text().splitlines()
    assert rows[0] == "seed,baseline,q-only,c-only,full,inference-only"
    assert len(rows) == 2
    vals = np.array([float(x) for x in rows[1].split(",")[1:]])
    assert ((vals >= 0) & (vals <= 1)).all()
    assert (tmp_path / "figures" / "macro_r5.png").exists()
    # inference-only reuses the baseline checkpoint: four trainings, not five
    assert len(list((tmp_path / "seed-0" / "models").glob("*.json"))) == 4
