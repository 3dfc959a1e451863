"""Command-line interface.

    bcnp gen-data        --config FILE --out DIR [--verify]
    bcnp train           --config FILE --corpus DIR --out DIR [--resume]
    bcnp sample          --ckpt FILE (--data FILE.npy | --corpus DIR --index I)
                         [--samples S] --out DIR
    bcnp eval            --ckpt FILE --corpus DIR [--samples S] --out DIR
    bcnp oracle-compare  --ckpt FILE --config FILE [--num-test K] [--samples S]
                         [--out DIR]
    bcnp report          --metrics FILE.jsonl

Exit codes: 0 success, 2 validation error, 3 runtime or numeric error.
BCNP_NUM_THREADS caps torch CPU threads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import zlib
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from .config import ExperimentConfig, load_experiment_config
from .corpus import DirectoryCorpus, verify_corpus, write_corpus
from .datagen import GeneratorTag
from .errors import BcnpError, ValidationError
from .experiments import (
    aggregate_reports,
    evaluate_on_corpus,
    model_sampler,
    oracle_compare,
)
from .model import sample_dags
from .oracle import ConjugateLinearGaussianBcm
from .training import Checkpoint, load_checkpoint, save_checkpoint, train


def _load_config(args) -> ExperimentConfig:
    config = load_experiment_config(args.config)
    if getattr(args, "seed", None) is not None:
        config = replace(config, master_seed=args.seed,
                         train=replace(config.train, seed=args.seed))
    return config


def cmd_gen_data(args) -> int:
    config = _load_config(args)
    if args.verify:
        bad = verify_corpus(args.out)
        if bad:
            print(f"corrupt records: {bad}", file=sys.stderr)
            return 3
        print("corpus verified: all records match the manifest")
        return 0
    manifest = write_corpus(
        args.out, config.generator, config.corpus_count, config.master_seed,
        progress_fn=_gen_progress if not args.quiet else None,
    )
    print(
        f"corpus ready: {manifest.count} records, D={manifest.num_nodes}, "
        f"N={manifest.num_samples}, checksum {manifest.content_checksum}"
    )
    return 0


def _gen_progress(done: int, total: int) -> None:
    if done % 1000 == 0 or done == total:
        print(f"  generated {done}/{total}", flush=True)


def _latest_checkpoint(out_dir: Path) -> Path | None:
    candidates = sorted(out_dir.glob("step_*.bcnp")) + [out_dir / "final.bcnp"]
    existing = [p for p in candidates if p.exists()]
    return existing[-1] if existing else None


def cmd_train(args) -> int:
    config = _load_config(args)
    corpus = DirectoryCorpus(args.corpus)
    if config.generator.num_nodes != corpus.num_nodes:
        raise ValidationError(
            f"config D={config.generator.num_nodes} but corpus has D={corpus.num_nodes}"
        )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    resume_from = None
    if args.resume:
        latest = _latest_checkpoint(out_dir)
        if latest is not None:
            resume_from = load_checkpoint(latest)
            print(f"resuming from {latest} at step {resume_from.step}")

    log_path = out_dir / "train_log.jsonl"
    log_mode = "a" if resume_from is not None else "w"
    with open(log_path, log_mode, encoding="utf-8") as log_file:

        def log_fn(record: dict) -> None:
            log_file.write(json.dumps(record) + "\n")
            log_file.flush()
            if record["step"] % (config.train.log_every * 10) == 0:
                print(
                    f"  step {record['step']}: loss {record['loss']:.4f} "
                    f"mean_edges {record['mean_edges']:.2f}", flush=True,
                )

        def checkpoint_fn(ckpt: Checkpoint) -> None:
            save_checkpoint(ckpt, out_dir / f"step_{ckpt.step:08d}.bcnp")

        final = train(
            corpus, config.model, config.train, log_fn=log_fn,
            resume_from=resume_from,
            checkpoint_fn=checkpoint_fn if config.train.checkpoint_every else None,
        )
    save_checkpoint(final, out_dir / "final.bcnp")
    print(f"training complete at step {final.step}; checkpoint in {out_dir}")
    return 0


def _dataset_from_args(args) -> np.ndarray:
    if args.data is not None:
        data = np.load(args.data)
        if data.ndim != 2:
            raise ValidationError("dataset file must hold an N x D matrix")
        return np.asarray(data, dtype=np.float64)
    if args.corpus is None or args.index is None:
        raise ValidationError("provide either --data or --corpus with --index")
    corpus = DirectoryCorpus(args.corpus)
    dataset, _ = corpus.record(args.index)
    return np.asarray(dataset, dtype=np.float64)


def cmd_sample(args) -> int:
    checkpoint = load_checkpoint(args.ckpt)
    model = checkpoint.build_model()
    model.eval()
    dataset = _dataset_from_args(args)
    if dataset.shape[1] < 1:
        raise ValidationError("dataset must have at least one column")
    generator = torch.Generator().manual_seed(args.seed if args.seed is not None else 0)
    output = model.posterior_params(dataset)
    result = sample_dags(output, args.samples, model.config.gs, generator)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    stacked = np.stack([g.adjacency for g in result.graphs]).astype(np.uint8)
    samples_bytes = stacked.tobytes()
    marginals_bytes = result.marginals.astype("<f4").tobytes()
    (out_dir / "samples.bin").write_bytes(samples_bytes)
    (out_dir / "marginals.bin").write_bytes(marginals_bytes)
    meta = {
        "num_samples": args.samples,
        "num_nodes": int(dataset.shape[1]),
        "samples_crc32": zlib.crc32(samples_bytes) & 0xFFFFFFFF,
        "marginals_crc32": zlib.crc32(marginals_bytes) & 0xFFFFFFFF,
        "seed": args.seed if args.seed is not None else 0,
    }
    with open(out_dir / "samples_manifest.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh)
    print(f"wrote {args.samples} DAG samples and marginals to {out_dir}")
    return 0


def _write_metric_outputs(out_dir: Path, results, aggregate: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "metrics.jsonl", "w", encoding="utf-8") as fh:
        for r in results:
            fh.write(json.dumps({"dataset": r.index, **r.report}) + "\n")
    with open(out_dir / "metrics.txt", "w", encoding="utf-8") as fh:
        for r in results:
            fh.write(r.line() + "\n")
        for key, stats in aggregate.items():
            if stats["mean"] is None:
                fh.write(f"aggregate.{key}=NA\n")
            else:
                fh.write(
                    f"aggregate.{key}={stats['mean']:.6f}"
                    f"+-{stats['stderr']:.6f} (n={stats['count']})\n"
                )
    with open(out_dir / "aggregate.json", "w", encoding="utf-8") as fh:
        json.dump(aggregate, fh)


def cmd_eval(args) -> int:
    checkpoint = load_checkpoint(args.ckpt)
    model = checkpoint.build_model()
    model.eval()
    corpus = DirectoryCorpus(args.corpus)
    sampler = model_sampler(model)
    results = evaluate_on_corpus(
        sampler, corpus, args.samples, seed=args.seed if args.seed is not None else 0,
        limit=args.limit,
    )
    aggregate = aggregate_reports(results)
    _write_metric_outputs(Path(args.out), results, aggregate)
    for key, stats in aggregate.items():
        if stats["mean"] is not None:
            print(f"{key}: {stats['mean']:.4f} +- {stats['stderr']:.4f}")
    return 0


def cmd_oracle_compare(args) -> int:
    checkpoint = load_checkpoint(args.ckpt)
    model = checkpoint.build_model()
    model.eval()
    config = _load_config(args)
    generator = config.generator
    if generator.generator_tag is not GeneratorTag.CONJUGATE_LINEAR:
        raise ValidationError(
            "oracle-compare needs a conjugate_linear generator config"
        )
    bcm = ConjugateLinearGaussianBcm(
        num_nodes=generator.num_nodes,
        weight_prior_std=generator.bcm_weight_std,
        noise_std=generator.bcm_noise_std,
    )
    comparison = oracle_compare(
        model_sampler(model), bcm,
        num_test=args.num_test, num_posterior_samples=args.samples,
        num_data_samples=generator.num_samples,
        seed=config.eval.seed,
    )
    report = {
        "mean_tv": comparison.mean_tv,
        "max_tv": comparison.max_tv,
        "modal_agreement_rate": comparison.modal_agreement_rate,
        "num_test": args.num_test,
        "posterior_samples": args.samples,
    }
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "oracle_report.json", "w", encoding="utf-8") as fh:
            json.dump(report, fh)
    print(
        f"TV distance: mean {comparison.mean_tv:.4f}, max {comparison.max_tv:.4f}; "
        f"modal agreement {comparison.modal_agreement_rate:.2%}"
    )
    return 0


def cmd_report(args) -> int:
    results = []
    with open(args.metrics, "r", encoding="utf-8") as fh:
        for line in fh:
            record = json.loads(line)
            record.pop("dataset", None)
            results.append(record)
    if not results:
        raise ValidationError("metrics file is empty")
    keys = results[0].keys()
    for key in keys:
        values = [r[key] for r in results if r.get(key) is not None]
        if not values:
            print(f"{key}: NA")
            continue
        arr = np.asarray(values, dtype=np.float64)
        stderr = arr.std(ddof=1) / np.sqrt(arr.size) if arr.size > 1 else 0.0
        print(f"{key}: {arr.mean():.4f} +- {stderr:.4f} (n={arr.size})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bcnp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a corpus directory")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--verify", action="store_true")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a corpus")
    p.add_argument("--config", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--resume", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("sample", help="sample DAGs for one dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data")
    p.add_argument("--corpus")
    p.add_argument("--index", type=int)
    p.add_argument("--samples", type=int, default=500)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a test corpus")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--samples", type=int, default=500)
    p.add_argument("--seed", type=int)
    p.add_argument("--limit", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("oracle-compare", help="compare samples to the exact posterior")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--num-test", type=int, default=50)
    p.add_argument("--samples", type=int, default=500)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_oracle_compare)

    p = sub.add_parser("report", help="aggregate a metrics.jsonl file")
    p.add_argument("--metrics", required=True)
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv=None) -> int:
    threads = os.environ.get("BCNP_NUM_THREADS")
    if threads:
        torch.set_num_threads(int(threads))
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except BcnpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
