"""``umr`` command line: synth, enhance, train, embed, index, eval, report, pipeline."""
from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .config import ConfigError, PipelineConfig
from .datamodel import (Benchmark, DataError, enhanced_store, load_benchmark, load_corpus,
                        load_queries, load_tasks, read_enhanced, write_enhanced)
from .embed.model import embed_documents, init_model, load_checkpoint, save_checkpoint
from .enhance.cache import EnhancementCache
from .enhance.core import DispatchStats, dispatch_batch
from .enhance.gateway import HttpGateway
from .eval import figures
from .eval.metrics import RecallReport, compare_reports
from .eval.report import read_report, render_delta, render_report, write_report
from .eval.runner import AblationMode, MissingEnhancementError, RunConfig, run_eval
from .index import VectorIndex, load_index, save_index
from .pipeline import EnhancedStores, enhance_benchmark, train_for_mode
from .synth.mock_vlm import MockVlm
from .synth.world import emit_benchmark, generate_world

log = logging.getLogger("umr")

ENHANCED_FILES = {"corpus": "enhanced_corpus.jsonl", "queries": "enhanced_queries.jsonl"}
CHECKPOINT = "checkpoint.json"
MODES = [m.value for m in AblationMode]


class CliError(Exception):
    """Reported as ``error: ...`` with exit status 1."""


def _missing(what: str, path: Path, producer: str) -> CliError:
    return CliError(f"{what} not found at {path}; produce it with `umr {producer}`")


# --------------------------------------------------------------------------
# shared loaders

def _bench(path: str | None) -> Benchmark:
    if not path:
        raise CliError("no benchmark given; pass --bench or set data.benchmark in --config")
    p = Path(path)
    if not (p / "manifest.json").exists() and not (p.is_file() and p.name.endswith(".json")):
        raise _missing("benchmark manifest", p / "manifest.json", "synth gen --out <dir>")
    return load_benchmark(p)


def _stores(enhanced_dir: str | None, need_corpus: bool, need_queries: bool) -> EnhancedStores | None:
    if not (need_corpus or need_queries):
        return None
    if not enhanced_dir:
        raise CliError("this mode uses enhanced data; pass --enhanced <dir> written by `umr enhance`")
    stores = EnhancedStores({}, {})
    for side, need in (("corpus", need_corpus), ("queries", need_queries)):
        if not need:
            continue
        path = Path(enhanced_dir) / ENHANCED_FILES[side]
        if not path.exists():
            raise _missing(f"enhanced {side}", path, f"enhance {side} --out {enhanced_dir}")
        setattr(stores, side, enhanced_store(read_enhanced(path)))
    return stores


def _checkpoint(path: str):
    p = Path(path)
    if p.is_dir():
        p = p / CHECKPOINT
    if not p.exists():
        raise _missing("checkpoint", p, "train --out <dir>")
    return load_checkpoint(p)


def _gateway(args, cfg: PipelineConfig, image_root: Path | None):
    if getattr(args, "mock_world", None):
        return MockVlm.from_benchmark(args.mock_world)
    return HttpGateway(cfg.gateway, image_root=image_root)


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


# --------------------------------------------------------------------------
# commands

def cmd_synth(args, cfg: PipelineConfig) -> int:
    cfg = cfg.override("synth", seed=args.seed, n_entities=args.n_entities,
                       distractors_per_entity=args.distractors, caption_noise=args.caption_noise,
                       deixis_rate=args.deixis_rate)
    out = Path(args.out)
    emit_benchmark(generate_world(cfg.synth), out)
    cfg.write_lock(out)
    print(out / "manifest.json")
    return 0


def _enhance_input(args, side: str):
    src = Path(args.input)
    if src.is_dir() or src.name == "manifest.json":
        bench = _bench(str(src))
        items = bench.documents() if side == "corpus" else bench.all_queries()
        return items, bench.root
    if not src.exists():
        raise CliError(f"input {src} does not exist")
    root = Path(args.root) if args.root else src.parent
    if side == "corpus":
        return load_corpus(src, root), root
    if not args.tasks:
        raise CliError("a queries .jsonl file needs --tasks <tasks.json> (or pass a benchmark directory)")
    return load_queries(src, load_tasks(args.tasks), root), root


def cmd_enhance(args, cfg: PipelineConfig) -> int:
    cfg = cfg.override("gateway", endpoint_url=args.endpoint, model_id=args.model,
                       max_in_flight=args.max_in_flight)
    items, root = _enhance_input(args, args.side)
    gateway = _gateway(args, cfg, root)
    cache = EnhancementCache(args.cache_dir)
    stats = DispatchStats()
    try:
        records = dispatch_batch(items, gateway, cache, stats)
    finally:
        if hasattr(gateway, "close"):
            gateway.close()
    out = Path(args.out)
    write_enhanced(records, out / ENHANCED_FILES[args.side])
    cfg.write_lock(out)
    s = stats.summary()
    print(" ".join(f"{k}={s[k]}" for k in ("total", "identity", "enhanced", "cached", "fallback", "calls")))
    needed = s["total"] - s["identity"]
    if needed and s["fallback"] == needed:
        print("error: every gateway request failed", file=sys.stderr)
        return 3
    return 0


def _init(cfg: PipelineConfig):
    e = cfg.embedder
    return init_model(e.dim_in, e.dim_out, tau=cfg.train.tau, seed=e.init_seed,
                      hasher_seed=e.hasher_seed, noise=e.init_noise)


def cmd_train(args, cfg: PipelineConfig) -> int:
    cfg = cfg.override("train", learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch_size,
                       seed=args.seed, tau=args.tau, hard_negatives_per_query=args.hard_negatives,
                       optimizer=args.optimizer)
    cfg = cfg.override("eval", mode=args.mode)
    bench = _bench(args.bench or cfg.data.benchmark)
    mode = AblationMode(cfg.eval.mode)
    rc = RunConfig.for_mode(mode)
    stores = _stores(args.enhanced, rc.train_enhanced_corpus, rc.train_enhanced_queries)
    model = train_for_mode(bench, stores, mode, cfg.train, _init(cfg), split=cfg.data.train_split)
    out = Path(args.out)
    save_checkpoint(model, out / CHECKPOINT)
    cfg.write_lock(out)
    print(out / CHECKPOINT)
    return 0


def cmd_embed(args, cfg: PipelineConfig) -> int:
    cfg = cfg.override("eval", mode=args.mode)
    bench = _bench(args.bench or cfg.data.benchmark)
    rc = RunConfig.for_mode(cfg.eval.mode)
    model = _checkpoint(args.checkpoint)
    stores = _stores(args.enhanced, rc.eval_enhanced_corpus, False)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for pid, docs in bench.pools.items():
        Z = embed_documents(docs, model, store=stores.corpus if stores else None)
        np.savez(out / f"{pid}.npz", ids=np.array([d.did for d in docs]), matrix=Z)
    meta = {"enhanced_corpus": rc.eval_enhanced_corpus, "checkpoint": _model_digest(model),
            "pools": sorted(bench.pools)}
    (out / "embeddings.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    cfg.write_lock(out)
    print(out)
    return 0


def _model_digest(model) -> str:
    h = hashlib.sha256(model.W_q.tobytes())
    h.update(model.W_d.tobytes())
    return h.hexdigest()[:16]


def cmd_index(args, cfg: PipelineConfig) -> int:
    src = Path(args.embeddings)
    meta_path = src / "embeddings.json"
    if not meta_path.exists():
        raise _missing("embeddings", meta_path, "embed --out <dir>")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for pid in meta["pools"]:
        with np.load(src / f"{pid}.npz") as z:
            save_index(VectorIndex([str(i) for i in z["ids"]], z["matrix"]), out / f"{pid}.umri")
    (out / "index.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    cfg.write_lock(out)
    print(out)
    return 0


def _load_indexes(path: str, rc: RunConfig, model) -> dict[str, VectorIndex]:
    d = Path(path)
    meta_path = d / "index.json"
    if not meta_path.exists():
        raise _missing("index", meta_path, "index --out <dir>")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    if meta["enhanced_corpus"] != rc.eval_enhanced_corpus:
        raise CliError(f"index at {d} was built with enhanced_corpus={meta['enhanced_corpus']}, "
                       f"mode {rc.mode.value} needs {rc.eval_enhanced_corpus}")
    if meta["checkpoint"] != _model_digest(model):
        raise CliError(f"index at {d} was embedded with a different checkpoint")
    return {pid: load_index(d / f"{pid}.umri") for pid in meta["pools"]}


def cmd_eval(args, cfg: PipelineConfig) -> int:
    cfg = cfg.override("eval", mode=args.mode)
    bench = _bench(args.bench or cfg.data.benchmark)
    rc = RunConfig.for_mode(cfg.eval.mode, model_checkpoint=str(args.checkpoint), seed=cfg.train.seed)
    model = _checkpoint(args.checkpoint)
    stores = _stores(args.enhanced, rc.eval_enhanced_corpus, rc.eval_enhanced_queries)
    indexes = _load_indexes(args.index_dir, rc, model) if args.index_dir else None
    report = run_eval(bench.tasks, bench.pools, bench.queries[cfg.data.eval_split],
                      stores.corpus if stores else None, stores.queries if stores else None,
                      model, rc, workers=cfg.eval.workers, indexes=indexes)
    report.metadata["created"] = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    out = Path(args.out)
    paths = write_report(report, out, stem=args.stem or rc.mode.value)
    cfg.write_lock(out)
    sys.stdout.write(render_report(report, "markdown"))
    print(paths["csv"])
    return 0


def cmd_report(args, cfg: PipelineConfig) -> int:
    reports: dict[str, RecallReport] = {}
    for p in args.reports:
        path = Path(p)
        if not path.exists():
            raise _missing("report", path, "eval --out <dir>")
        rep = read_report(path)
        label = rep.metadata.get("mode") or path.stem
        if label in reports:
            label = path.stem
        reports[label] = rep
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    formats = ["csv", "markdown"] if args.format == "both" else [args.format]
    for label, rep in reports.items():
        for fmt in formats:
            ext = "csv" if fmt == "csv" else "md"
            (out / f"{label}.{ext}").write_text(render_report(rep, fmt), encoding="utf-8", newline="")
    if args.baseline:
        if args.baseline not in reports:
            raise CliError(f"--baseline {args.baseline!r} is not among the reports {sorted(reports)}")
        for label, rep in reports.items():
            if label != args.baseline:
                delta = compare_reports(reports[args.baseline], rep)
                for fmt in formats:
                    ext = "csv" if fmt == "csv" else "md"
                    (out / f"delta_{label}.{ext}").write_text(render_delta(delta, fmt), encoding="utf-8",
                                                              newline="")
    if args.figures and reports:
        cutoff = 5 if 5 in next(iter(reports.values())).cutoffs else next(iter(reports.values())).cutoffs[0]
        figures.plot_task_recall(reports, cutoff, out / f"tasks_r{cutoff}.png")
    cfg.write_lock(out)
    for label, rep in reports.items():
        sys.stdout.write(f"## {label}\n" + render_report(rep, "markdown"))
    return 0


def cmd_pipeline(args, cfg: PipelineConfig) -> int:
    """synth -> enhance -> train -> eval -> report for every seed, reusing shared checkpoints."""
    cfg = cfg.override("synth", n_entities=args.n_entities, distractors_per_entity=args.distractors,
                       caption_noise=args.caption_noise, deixis_rate=args.deixis_rate)
    cfg = cfg.override("train", learning_rate=args.lr, epochs=args.epochs,
                       hard_negatives_per_query=args.hard_negatives)
    out = Path(args.out)
    modes = [AblationMode(m) for m in (args.modes or MODES)]
    by_seed: dict[int, dict[str, RecallReport]] = {}
    for seed in args.seeds:
        run_cfg = cfg.override("synth", seed=seed).override("train", seed=seed)
        run_cfg = run_cfg.override("embedder", init_seed=seed, hasher_seed=seed)
        sdir = out / f"seed-{seed}"
        bench_dir = sdir / "bench"
        emit_benchmark(generate_world(run_cfg.synth), bench_dir)
        bench = load_benchmark(bench_dir)
        gateway = MockVlm.from_benchmark(bench_dir) if not args.endpoint else HttpGateway(
            run_cfg.override("gateway", endpoint_url=args.endpoint).gateway, image_root=bench_dir)
        cache = EnhancementCache(args.cache_dir)
        stores = enhance_benchmark(bench, gateway, cache)
        write_enhanced(stores.corpus.values(), sdir / "enhanced" / ENHANCED_FILES["corpus"])
        write_enhanced(stores.queries.values(), sdir / "enhanced" / ENHANCED_FILES["queries"])
        init = _init(run_cfg)
        trained = {}
        by_seed[seed] = {}
        for mode in modes:
            rc = RunConfig.for_mode(mode, seed=seed)
            flags = (rc.train_enhanced_queries, rc.train_enhanced_corpus)
            key = _digest({"train": run_cfg.to_json()["train"], "embedder": run_cfg.to_json()["embedder"],
                           "flags": flags})
            ckpt = sdir / "models" / f"{key}.json"
            if key not in trained:
                train_mode = AblationMode.BASELINE if mode is AblationMode.INFERENCE_ONLY else mode
                trained[key] = train_for_mode(bench, stores, train_mode, run_cfg.train, init)
                save_checkpoint(trained[key], ckpt)
            rc = RunConfig.for_mode(mode, model_checkpoint=str(ckpt.relative_to(out)), seed=seed)
            rep = run_eval(bench.tasks, bench.pools, bench.queries[run_cfg.data.eval_split],
                           stores.corpus, stores.queries, trained[key], rc)
            write_report(rep, sdir / "reports", stem=mode.value)
            by_seed[seed][mode.value] = rep
        figures.plot_task_recall(by_seed[seed], 5, sdir / "figures" / "tasks_r5.png")
        run_cfg.write_lock(sdir)
        print(f"seed {seed}: " + " ".join(f"{m}={r.macro_average()[5]:.4f}" for m, r in by_seed[seed].items()))
    summary = ["seed," + ",".join(m.value for m in modes)]
    for seed, reps in by_seed.items():
        summary.append(f"{seed}," + ",".join(repr(reps[m.value].macro_average()[5]) for m in modes))
    (out / "summary_r5.csv").write_text("\n".join(summary) + "\n", encoding="utf-8")
    if by_seed:
        figures.plot_macro_by_mode(by_seed, 5, out / "figures" / "macro_r5.png")
    cfg.write_lock(out)
    print(out / "summary_r5.csv")
    return 0


# --------------------------------------------------------------------------
# parser

def _add_synth_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n-entities", type=int)
    p.add_argument("--distractors", type=int, help="distractors per entity")
    p.add_argument("--caption-noise", type=float)
    p.add_argument("--deixis-rate", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="umr", description="Multimodal retrieval enhancement pipeline.")
    parser.add_argument("--version", action="version", version=f"umr {__version__}")
    parser.add_argument("--config", help="JSON config file (sections: data, gateway, embedder, train, eval, synth)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthetic benchmark")
    ssub = p.add_subparsers(dest="action", required=True)
    g = ssub.add_parser("gen", help="generate a world and write the benchmark")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    _add_synth_flags(g)
    g.set_defaults(func=cmd_synth)

    p = sub.add_parser("enhance", help="run the enhancer over corpus or queries")
    p.add_argument("side", choices=["corpus", "queries"])
    p.add_argument("--in", dest="input", required=True, help="benchmark directory or a .jsonl file")
    p.add_argument("--out", required=True)
    p.add_argument("--tasks", help="tasks.json (for a bare queries file)")
    p.add_argument("--root", help="directory that sidecar paths are relative to")
    p.add_argument("--endpoint", help="chat-completions base URL")
    p.add_argument("--model", help="model id sent to the endpoint")
    p.add_argument("--max-in-flight", type=int)
    p.add_argument("--cache-dir")
    p.add_argument("--mock-world", help="benchmark directory whose answer file drives the in-process mock")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("train", help="train the two-tower embedder")
    p.add_argument("--bench")
    p.add_argument("--enhanced", help="directory written by `umr enhance`")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--out", required=True)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--hard-negatives", type=int)
    p.add_argument("--optimizer", choices=["adam", "sgd"])
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("embed", help="embed every corpus pool")
    p.add_argument("--bench")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--enhanced")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("index", help="build search indexes from embeddings")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("eval", help="evaluate one ablation mode")
    p.add_argument("--bench")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--enhanced")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--index-dir")
    p.add_argument("--stem", help="report file name stem (default: the mode)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="render report JSON files as CSV / markdown and figures")
    p.add_argument("reports", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=["csv", "markdown", "both"], default="both")
    p.add_argument("--baseline", help="label of the report to diff the others against")
    p.add_argument("--no-figures", dest="figures", action="store_false")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("pipeline", help="synth + enhance + ablation grid over several seeds")
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--modes", nargs="+", choices=MODES)
    p.add_argument("--endpoint", help="use a real endpoint instead of the mock")
    p.add_argument("--cache-dir")
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--hard-negatives", type=int)
    _add_synth_flags(p)
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = PipelineConfig.load(args.config)
        return args.func(args, cfg)
    except (CliError, ConfigError, DataError, MissingEnhancementError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
