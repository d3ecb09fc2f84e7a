"""Command-line orchestration of the full pipeline.

Subcommands: ingest, train-tokenizer, build-data, pretrain, eval-ppl,
finetune, sweep, ablate, report. Configuration comes from an optional JSON
file (--config) with nested sections, overridden by repeatable
--set section.key=value flags; flags win over file values, file values win
over defaults. Every subcommand writes a run_<subcommand>.json provenance
record (resolved config, its hash, SHA-256 of each input file, output
list) as its final act, so a missing record marks an incomplete run.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numeric
failure. DEBATELM_THREADS caps BLAS/OpenMP thread counts; it must be
honored before numpy loads, which is why heavy imports happen inside the
command handlers.
"""

from __future__ import annotations

import argparse
import copy
import datetime
import hashlib
import json
import os
import sys
from pathlib import Path

from debatelm.errors import ConfigError, DataError, NumericError

DEFAULT_CONFIG = {
    "seed": 0,
    "mode": "scr",
    "casing": "uncased",
    "arch": "base",
    "model_name": "debatelm",
    "ingest": {"drop_patterns": []},
    "tokenizer": {"budget": 30522},
    "data": {
        "max_len_phase1": 128,
        "max_len_phase2": 512,
        "phase1_fraction": 0.8,
        "mask_prob": 0.15,
        "cache_steps": 8,
    },
    "pretrain": {
        "steps": 150000,
        "batch_size": 2048,
        "peak_lr": 1e-4,
        "warmup_steps": 10000,
        "weight_decay": 0.01,
        "beta1": 0.9,
        "beta2": 0.98,
        "eps": 1e-6,
        "grad_clip": 1.0,
        "eval_every": 0,
        "checkpoint_every": 0,
        "dtype": "float32",
        "dropout": None,
    },
    "eval": {"split": "holdout", "batch_size": 32},
    "finetune": {
        "task": {},
        "point": {
            "learning_rate": 2e-5,
            "weight_decay": 0.01,
            "batch_size": 8,
            "epochs": 2,
            "max_length": 128,
        },
        "grid": {
            "learning_rates": [2e-5, 3e-5, 5e-5],
            "weight_decays": [0.1, 0.01],
            "batch_sizes": [8, 16, 32],
            "epochs": [2, 3, 4],
            "max_lengths": [128, 256, 512],
        },
        "seeds": 5,
        "baselines": [],
    },
    "ablate": {
        "embedder": "hash",
        "dim": 256,
        "sample_n": 10000,
        "threshold": 0.2,
        "linkage": "average",
        "checkpoint": None,
        "vectors": None,
        "max_len": 64,
        "write_corpora": True,
    },
}


class CliParser(argparse.ArgumentParser):
    def error(self, message):  # route usage errors to exit code 1
        raise ConfigError(message)


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _apply_set(cfg: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"--set expects section.key=value, got {assignment!r}")
    dotted, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = cfg
    keys = dotted.split(".")
    for key in keys[:-1]:
        if key not in node or not isinstance(node[key], dict):
            node[key] = {}
        node = node[key]
    node[keys[-1]] = value


def resolve_config(args) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        with open(path, encoding="utf-8") as fh:
            try:
                file_cfg = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file {path}: {exc}") from exc
        cfg = _deep_merge(cfg, file_cfg)
    for assignment in getattr(args, "set", None) or []:
        _apply_set(cfg, assignment)
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    return cfg


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_run_record(out_dir: Path, name: str, cfg: dict, inputs, outputs) -> Path:
    canonical = json.dumps(cfg, sort_keys=True).encode("utf-8")
    record = {
        "subcommand": name,
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "seed": cfg.get("seed"),
        "config": cfg,
        "config_hash": hashlib.sha256(canonical).hexdigest(),
        "inputs": {str(p): _sha256_file(Path(p)) for p in inputs},
        "outputs": [str(p) for p in outputs],
    }
    path = out_dir / f"run_{name.replace('-', '_')}.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require(path_str: str | None, what: str) -> Path:
    if not path_str:
        raise ConfigError(f"missing required path: {what}")
    path = Path(path_str)
    if not path.exists():
        raise ConfigError(f"{what} not found: {path}")
    return path


def _packing(cfg: dict):
    from debatelm.masking import PackingConfig

    data = cfg["data"]
    packing = PackingConfig(
        max_len_phase1=int(data["max_len_phase1"]),
        max_len_phase2=int(data["max_len_phase2"]),
        phase1_fraction=float(data["phase1_fraction"]),
        mask_prob=float(data["mask_prob"]),
        seed=int(cfg["seed"]),
    )
    packing.validate()
    return packing


def _encoder_config(cfg: dict, vocab_size: int):
    from debatelm.model import preset_config

    max_position = max(int(cfg["data"]["max_len_phase1"]), int(cfg["data"]["max_len_phase2"]))
    return preset_config(cfg["arch"], vocab_size, max_position=max_position,
                         dropout=cfg["pretrain"].get("dropout"))


def _load_corpus_split(args, cfg, split_name: str | None = None):
    from debatelm.corpus import load_corpus_jsonl, load_splits, select_documents

    corpus_path = _require(args.corpus, "--corpus")
    corpus = load_corpus_jsonl(corpus_path)
    inputs = [corpus_path]
    docs = corpus.documents
    split = None
    if getattr(args, "splits", None):
        splits_path = _require(args.splits, "--splits")
        split = load_splits(splits_path)
        inputs.append(splits_path)
        if split_name:
            ids = {
                "train": split.train_ids,
                "test": split.test_ids,
                "holdout": split.ppl_holdout_ids,
            }[split_name]
            docs = select_documents(corpus, ids)
    return corpus, docs, split, inputs


# ---------------------------------------------------------------------------
# Subcommand handlers


def cmd_ingest(args, cfg) -> int:
    from debatelm.corpus import build_corpus, load_jsonl, load_txt_dir, save_corpus_jsonl, save_splits, split_corpus

    out = _out_dir(args)
    input_path = _require(args.input, "--input")
    if input_path.is_dir():
        records = load_txt_dir(input_path, source=args.source)
    else:
        records = load_jsonl(input_path)
    corpus = build_corpus(records, cfg["ingest"]["drop_patterns"])
    if len(corpus) == 0:
        raise DataError("every document was dropped during cleaning")
    split = split_corpus(corpus, int(cfg["seed"]))
    corpus_out = out / "corpus.jsonl"
    splits_out = out / "splits.json"
    save_corpus_jsonl(corpus, corpus_out)
    save_splits(split, splits_out)
    print(f"ingested {len(corpus)} documents from {len(corpus.source_manifest)} sources")
    for source in corpus.sources:
        dropped = corpus.dropped_empty.get(source, 0)
        note = f" ({dropped} dropped empty)" if dropped else ""
        print(f"  {source}: {corpus.source_manifest[source]}{note}")
    print(f"split: {len(split.train_ids)} train / {len(split.test_ids)} test / "
          f"{len(split.ppl_holdout_ids)} ppl-holdout")
    for warning in split.warnings:
        print(f"  warning: {warning}")
    write_run_record(out, "ingest", cfg, [input_path] if input_path.is_file() else [],
                     [corpus_out, splits_out])
    return 0


def cmd_train_tokenizer(args, cfg) -> int:
    from debatelm.wordpiece import save_vocab, train_vocabulary

    out = _out_dir(args)
    corpus, docs, split, inputs = _load_corpus_split(args, cfg, "train" if args.splits else None)
    if not docs:
        raise DataError("no training documents selected")
    vocab = train_vocabulary((d.text for d in docs), int(cfg["tokenizer"]["budget"]),
                             cfg["casing"])
    vocab_out = out / "vocab.txt"
    save_vocab(vocab, vocab_out)
    print(f"trained {cfg['casing']} vocabulary: {vocab.size} tokens "
          f"(budget {cfg['tokenizer']['budget']}) hash {vocab.content_hash()[:12]}")
    write_run_record(out, "train-tokenizer", cfg, inputs, [vocab_out])
    return 0


def cmd_build_data(args, cfg) -> int:
    import itertools

    from debatelm.masking import write_batch_cache
    from debatelm.training import pretrain_batches, tokenize_documents
    from debatelm.wordpiece import load_vocab

    out = _out_dir(args)
    corpus, docs, split, inputs = _load_corpus_split(args, cfg, "train" if args.splits else None)
    vocab_path = _require(args.vocab, "--vocab")
    vocab = load_vocab(vocab_path, cfg["casing"])
    inputs.append(vocab_path)
    token_ids = tokenize_documents([d.text for d in docs], vocab)
    packing = _packing(cfg)
    steps = int(cfg["data"]["cache_steps"])
    batch_size = int(cfg["pretrain"]["batch_size"])
    records = (
        (batch, (packing.seed, epoch, [int(r) for r in rows]))
        for step, max_len, epoch, rows, batch in itertools.islice(
            pretrain_batches(token_ids, packing, max(steps, 1), batch_size, vocab.size),
            steps,
        )
    )
    cache_out = out / "batches.jsonl"
    n = write_batch_cache(cache_out, records)
    print(f"cached {n} masked batches of size {batch_size} to {cache_out}")
    write_run_record(out, "build-data", cfg, inputs, [cache_out])
    return 0


def cmd_pretrain(args, cfg) -> int:
    from debatelm.training import PretrainConfig, pretrain, tokenize_documents
    from debatelm.wordpiece import load_vocab

    out = _out_dir(args)
    corpus, _, split, inputs = _load_corpus_split(args, cfg)
    if split is None:
        raise ConfigError("pretrain requires --splits")
    from debatelm.corpus import select_documents

    train_docs = select_documents(corpus, split.train_ids)
    holdout_docs = select_documents(corpus, split.ppl_holdout_ids) or None
    vocab_path = _require(args.vocab, "--vocab")
    vocab = load_vocab(vocab_path, cfg["casing"])
    inputs.append(vocab_path)

    packing = _packing(cfg)
    p = cfg["pretrain"]
    init_checkpoint = args.init_checkpoint or p.get("init_checkpoint")
    if cfg["mode"] == "cont":
        init_checkpoint = str(_require(init_checkpoint, "--init-checkpoint (cont mode)"))
        inputs.append(init_checkpoint)
    train_cfg = PretrainConfig(
        steps=int(p["steps"]),
        batch_size=int(p["batch_size"]),
        peak_lr=float(p["peak_lr"]),
        warmup_steps=int(p["warmup_steps"]),
        packing=packing,
        seed=int(cfg["seed"]),
        mode=cfg["mode"],
        init_checkpoint=init_checkpoint,
        weight_decay=float(p["weight_decay"]),
        beta1=float(p["beta1"]),
        beta2=float(p["beta2"]),
        eps=float(p["eps"]),
        grad_clip=None if p["grad_clip"] in (None, 0) else float(p["grad_clip"]),
        eval_every=int(p["eval_every"]),
        checkpoint_every=int(p["checkpoint_every"]),
        dtype=p["dtype"],
    )
    encoder_config = _encoder_config(cfg, vocab.size)
    train_ids = tokenize_documents([d.text for d in train_docs], vocab)
    holdout_ids = (tokenize_documents([d.text for d in holdout_docs], vocab)
                   if holdout_docs else None)
    result = pretrain(train_ids, encoder_config, train_cfg, vocab,
                      holdout_token_ids=holdout_ids, checkpoint_dir=out / "checkpoints")
    trace_out = out / "trace.jsonl"
    with open(trace_out, "w", encoding="utf-8") as fh:
        for row in result.step_trace:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
        for row in result.eval_trace:
            fh.write(json.dumps({"event": "eval", **row}, sort_keys=True) + "\n")
    final = out / "checkpoints" / "final.npz"
    if result.step_trace:
        last = result.step_trace[-1]
        print(f"pretrained {cfg['mode']} for {last['step']} steps; final loss {last['loss']:.4f}")
    else:
        print("pretrained for 0 steps; parameters equal initialization")
    print(f"checkpoint: {final}")
    write_run_record(out, "pretrain", cfg, inputs, [final, trace_out])
    return 0


def cmd_eval_ppl(args, cfg) -> int:
    from debatelm.training import evaluate_masked_ppl, load_checkpoint, tokenize_documents
    from debatelm.wordpiece import load_vocab

    out = _out_dir(args)
    split_name = cfg["eval"]["split"]
    corpus, docs, split, inputs = _load_corpus_split(args, cfg, split_name)
    if not docs:
        raise DataError(f"split {split_name!r} selected no documents")
    ckpt_path = _require(args.checkpoint, "--checkpoint")
    params, encoder_config, _, meta = load_checkpoint(ckpt_path)
    inputs.append(ckpt_path)
    vocab_path = _require(args.vocab, "--vocab")
    vocab = load_vocab(vocab_path, cfg["casing"])
    inputs.append(vocab_path)
    if meta.get("vocab_hash") and meta["vocab_hash"] != vocab.content_hash():
        raise ConfigError("checkpoint was trained with a different vocabulary")
    token_ids = tokenize_documents([d.text for d in docs], vocab)
    stats = evaluate_masked_ppl(params, encoder_config, token_ids, _packing(cfg),
                                batch_size=int(cfg["eval"]["batch_size"]))
    model = cfg["model_name"]
    print(f"{'model':<24} {'casing':<8} {'split':<8} {'PPL':>10}")
    print(f"{model:<24} {cfg['casing']:<8} {split_name:<8} {stats['ppl']:>10.3f}")
    ppl_out = out / "ppl.json"
    payload = {"model": model, "casing": cfg["casing"], "split": split_name, **stats}
    with open(ppl_out, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_run_record(out, "eval-ppl", cfg, inputs, [ppl_out])
    return 0


def _task_spec(cfg):
    from debatelm.tasks import TaskSpec

    task_cfg = cfg["finetune"]["task"]
    for key in ("name", "labels", "train_path", "dev_path", "test_path"):
        if key not in task_cfg:
            raise ConfigError(f"finetune.task.{key} is required")
    return TaskSpec(
        name=task_cfg["name"],
        labels=list(task_cfg["labels"]),
        train_path=task_cfg["train_path"],
        dev_path=task_cfg["dev_path"],
        test_path=task_cfg["test_path"],
        positive_label=task_cfg.get("positive_label"),
    )


def _load_finetune_inputs(args, cfg):
    from debatelm.tasks import load_task
    from debatelm.training import load_checkpoint
    from debatelm.wordpiece import load_vocab

    spec = _task_spec(cfg)
    data = load_task(spec)
    ckpt_path = _require(args.checkpoint, "--checkpoint")
    params, encoder_config, _, meta = load_checkpoint(ckpt_path)
    vocab_path = _require(args.vocab, "--vocab")
    vocab = load_vocab(vocab_path, cfg["casing"])
    if meta.get("vocab_hash") and meta["vocab_hash"] != vocab.content_hash():
        raise ConfigError("checkpoint was trained with a different vocabulary")
    inputs = [ckpt_path, vocab_path, spec.train_path, spec.dev_path, spec.test_path]
    return spec, data, params, encoder_config, vocab, inputs


def cmd_finetune(args, cfg) -> int:
    from debatelm.tasks import GridPoint, fine_tune

    out = _out_dir(args)
    spec, data, params, encoder_config, vocab, inputs = _load_finetune_inputs(args, cfg)
    pt = cfg["finetune"]["point"]
    point = GridPoint(
        learning_rate=float(pt["learning_rate"]),
        weight_decay=float(pt["weight_decay"]),
        batch_size=int(pt["batch_size"]),
        epochs=int(pt["epochs"]),
        max_length=int(pt["max_length"]),
    )
    result = fine_tune(params, encoder_config, vocab, spec, data, point, int(cfg["seed"]))
    result_out = out / "finetune_result.json"
    with open(result_out, "w", encoding="utf-8") as fh:
        json.dump(result.as_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"{spec.name} seed {result.seed}: dev {result.dev_metric:.4f} "
          f"test {result.test_metric:.4f} (best epoch {result.best_epoch})")
    write_run_record(out, "finetune", cfg, inputs, [result_out])
    return 0


def cmd_sweep(args, cfg) -> int:
    from debatelm.metrics import SeedScores, write_report
    from debatelm.tasks import HyperGrid, sweep

    out = _out_dir(args)
    spec, data, params, encoder_config, vocab, inputs = _load_finetune_inputs(args, cfg)
    g = cfg["finetune"]["grid"]
    grid = HyperGrid(
        learning_rates=tuple(g["learning_rates"]),
        weight_decays=tuple(g["weight_decays"]),
        batch_sizes=tuple(g["batch_sizes"]),
        epochs=tuple(g["epochs"]),
        max_lengths=tuple(g["max_lengths"]),
    )
    seeds_cfg = cfg["finetune"]["seeds"]
    seeds = list(range(int(seeds_cfg))) if isinstance(seeds_cfg, int) else [int(s) for s in seeds_cfg]
    baselines = []
    for base_path in cfg["finetune"]["baselines"]:
        base_path = _require(base_path, "baseline scores file")
        with open(base_path, encoding="utf-8") as fh:
            payload = json.load(fh)
        baselines.append(SeedScores(model=payload["model"], task=payload["task"],
                                    scores=[float(s) for s in payload["seeds"]]))
        inputs.append(base_path)
    report = sweep(params, encoder_config, vocab, spec, data, grid, seeds,
                   model_name=cfg["model_name"], baselines=baselines)
    report_out = out / "sweep_report.json"
    write_report(report, report_out)
    print(f"{report['model']} on {report['task']}: {report['mean']:.4f} +/- {report['std']:.4f} "
          f"over {len(report['seeds'])} seeds (selected {report['selected_point']})")
    for sig in report["significance"]:
        print(f"  vs {sig['baseline']}: t={sig['t']}, dof={sig['dof']}, p={sig['p']:.6g}")
    write_run_record(out, "sweep", cfg, inputs, [report_out])
    return 0


def cmd_ablate(args, cfg) -> int:
    from debatelm.ablation import (
        CheckpointEmbedder,
        HashingEmbedder,
        VectorFileEmbedder,
        agglomerative_cluster,
        cosine_distance_matrix,
        embed_source,
        leave_one_cluster_out,
        save_clusters,
    )
    from debatelm.corpus import save_corpus_jsonl

    out = _out_dir(args)
    corpus, _, _, inputs = _load_corpus_split(args, cfg)
    ab = cfg["ablate"]
    if ab["embedder"] == "hash":
        embedder = HashingEmbedder(dim=int(ab["dim"]))
    elif ab["embedder"] == "checkpoint":
        from debatelm.training import load_checkpoint
        from debatelm.wordpiece import load_vocab

        ckpt_path = _require(ab.get("checkpoint"), "ablate.checkpoint")
        vocab_path = _require(args.vocab, "--vocab")
        params, encoder_config, _, _ = load_checkpoint(ckpt_path)
        vocab = load_vocab(vocab_path, cfg["casing"])
        embedder = CheckpointEmbedder(params, encoder_config, vocab,
                                      max_len=int(ab["max_len"]))
        inputs.extend([ckpt_path, vocab_path])
    elif ab["embedder"] == "vectors":
        vec_path = _require(ab.get("vectors"), "ablate.vectors")
        embedder = VectorFileEmbedder(vec_path)
        inputs.append(vec_path)
    else:
        raise ConfigError(f"unknown embedder {ab['embedder']!r}")

    sources = corpus.sources
    embeddings = [
        embed_source(s, corpus.by_source(s), embedder,
                     sample_n=int(ab["sample_n"]), seed=int(cfg["seed"]))
        for s in sources
    ]
    for emb in embeddings:
        if emb.near_zero_norm:
            print(f"  warning: source {emb.source!r} has a near-zero-norm mean embedding")
    matrix = cosine_distance_matrix(embeddings)
    assignment = agglomerative_cluster(matrix, sources, threshold=float(ab["threshold"]),
                                       linkage=ab["linkage"])
    clusters_out = out / "clusters.json"
    save_clusters(assignment, matrix, sources, clusters_out)
    outputs = [clusters_out]
    print(f"{assignment.n_clusters} clusters at threshold {ab['threshold']} ({ab['linkage']} linkage)")
    for cid in range(assignment.n_clusters):
        print(f"  cluster {cid}: {', '.join(assignment.members(cid))}")
    if ab["write_corpora"]:
        manifests = []
        for cid in range(assignment.n_clusters):
            reduced, manifest = leave_one_cluster_out(corpus, assignment, cid)
            loco_out = out / f"corpus_without_cluster{cid}.jsonl"
            save_corpus_jsonl(reduced, loco_out)
            manifest["path"] = loco_out.name
            manifests.append(manifest)
            outputs.append(loco_out)
        manifest_out = out / "ablation_manifest.json"
        with open(manifest_out, "w", encoding="utf-8") as fh:
            json.dump(manifests, fh, indent=2, sort_keys=True)
            fh.write("\n")
        outputs.append(manifest_out)
    write_run_record(out, "ablate", cfg, inputs, outputs)
    return 0


def cmd_report(args, cfg) -> int:
    from debatelm.metrics import read_report, write_leaderboard_csv

    out = _out_dir(args)
    if not args.inputs:
        raise ConfigError("report needs at least one metrics report file")
    reports = []
    inputs = []
    for path in args.inputs:
        path = _require(path, "report input")
        reports.append(read_report(path))
        inputs.append(path)
    csv_out = out / "leaderboard.csv"
    write_leaderboard_csv(reports, csv_out)
    significance = [
        {"model": r["model"], "task": r["task"], "significance": r.get("significance", [])}
        for r in reports
    ]
    sig_out = out / "significance.json"
    with open(sig_out, "w", encoding="utf-8") as fh:
        json.dump(significance, fh, indent=2, sort_keys=True)
        fh.write("\n")
    from debatelm.metrics import leaderboard_rows

    header, rows = leaderboard_rows(reports)
    widths = [max(len(str(c)) for c in [header[i]] + [row[i] for row in rows])
              for i in range(len(header))]
    print("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    for row in rows:
        print("  ".join(str(c).ljust(w) for c, w in zip(row, widths)))
    write_run_record(out, "report", cfg, inputs, [csv_out, sig_out])
    return 0


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> CliParser:
    parser = CliParser(prog="debatelm", description=__doc__,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, corpus=False, splits=False, vocab=False, checkpoint=False):
        p.add_argument("--config", help="JSON config file with nested sections")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config value, e.g. --set pretrain.steps=200")
        p.add_argument("--seed", type=int, help="global seed (overrides config)")
        p.add_argument("--out", required=True, help="output directory")
        if corpus:
            p.add_argument("--corpus", required=True, help="cleaned corpus JSONL")
        if splits:
            p.add_argument("--splits", help="splits.json manifest")
        if vocab:
            p.add_argument("--vocab", help="vocab.txt (one token per line)")
        if checkpoint:
            p.add_argument("--checkpoint", help="model checkpoint (.npz)")

    p = sub.add_parser("ingest", help="clean raw documents and write splits")
    common(p)
    p.add_argument("--input", required=True, help="raw JSONL file or directory of .txt files")
    p.add_argument("--source", help="source label for .txt directories")
    p.set_defaults(handler=cmd_ingest)

    p = sub.add_parser("train-tokenizer", help="train a WordPiece vocabulary")
    common(p, corpus=True, splits=True)
    p.set_defaults(handler=cmd_train_tokenizer)

    p = sub.add_parser("build-data", help="cache masked training batches")
    common(p, corpus=True, splits=True, vocab=True)
    p.set_defaults(handler=cmd_build_data)

    p = sub.add_parser("pretrain", help="run MLM pretraining")
    common(p, corpus=True, splits=True, vocab=True)
    p.add_argument("--init-checkpoint", help="donor checkpoint for cont mode")
    p.set_defaults(handler=cmd_pretrain)

    p = sub.add_parser("eval-ppl", help="masked perplexity on a held-out split")
    common(p, corpus=True, splits=True, vocab=True, checkpoint=True)
    p.set_defaults(handler=cmd_eval_ppl)

    p = sub.add_parser("finetune", help="fine-tune one task at one grid point")
    common(p, vocab=True, checkpoint=True)
    p.set_defaults(handler=cmd_finetune)

    p = sub.add_parser("sweep", help="grid x seeds fine-tuning sweep")
    common(p, vocab=True, checkpoint=True)
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("ablate", help="cluster sources and build leave-one-cluster-out corpora")
    common(p, corpus=True, splits=True, vocab=True)
    p.set_defaults(handler=cmd_ablate)

    p = sub.add_parser("report", help="aggregate sweep reports into a leaderboard")
    common(p)
    p.add_argument("--inputs", nargs="+", help="metrics report JSON files")
    p.set_defaults(handler=cmd_report)

    return parser


def _configure_threads() -> None:
    threads = os.environ.get("DEBATELM_THREADS")
    if threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, threads)


def main(argv=None) -> int:
    _configure_threads()
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        cfg = resolve_config(args)
        return args.handler(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
