"""Command line interface.

Subcommands cover the pipeline stage by stage: ``binarize`` documents,
fit a ``codebook``, ``encode`` page descriptors, ``evaluate`` retrieval
metrics and ``sweep`` a parameter grid. ``init-weights`` writes a
seeded random encoder checkpoint so the pipeline can run end to end
without externally trained weights.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import container, pipeline, preproc
from .config import PipelineConfig, apply_overrides, load_config, preset
from .manifest import Manifest, ManifestEntry
from .vit import VitConfig, load_weights, random_weights, save_weights

RUN_DIR_ENV = "WRV_RUN_DIR"


class CommandError(Exception):
    """Fatal command failure with a user-facing message."""


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="key = value configuration file")
    p.add_argument("--preset", help="named parameter preset (baseline, best)")
    p.add_argument(
        "--set", dest="overrides", metavar="KEY=VALUE", action="append", default=[],
        help="override one configuration field (repeatable)",
    )


def _resolve_config(args: argparse.Namespace) -> PipelineConfig:
    cfg = preset(args.preset) if args.preset else PipelineConfig()
    if args.config:
        cfg = load_config(args.config, base=cfg)
    pairs = {}
    for item in args.overrides:
        if "=" not in item:
            raise CommandError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        pairs[key.strip()] = value.strip()
    try:
        return apply_overrides(cfg, pairs).validate()
    except ValueError as exc:
        raise CommandError(str(exc)) from exc


def _run_dir(args: argparse.Namespace) -> Path:
    if getattr(args, "run_dir", None):
        return Path(args.run_dir)
    env = os.environ.get(RUN_DIR_ENV)
    if env:
        return Path(env)
    raise CommandError(f"--run-dir not given and {RUN_DIR_ENV} is unset")


def _load_masks(
    entries: list[ManifestEntry],
    args: argparse.Namespace,
    config: PipelineConfig,
    jobs: int,
) -> list[np.ndarray]:
    def load(entry: ManifestEntry) -> np.ndarray:
        return pipeline.load_document(
            entry,
            binarize=getattr(args, "binarize_input", False),
            invert=getattr(args, "invert", False),
            config=config,
        )

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(load, entries))
    return [load(e) for e in entries]


def _entry_tokens(
    entries: list[ManifestEntry],
    args: argparse.Namespace,
    config: PipelineConfig,
    vit_cfg: VitConfig,
    weights,
    stride: int,
    run_dir: Path | None,
    weights_sha: str,
    jobs: int,
):
    masks = _load_masks(entries, args, config, jobs)

    def encode(pair):
        entry, mask = pair
        return pipeline.doc_tokens(
            mask, vit_cfg, weights, config, stride,
            run_dir=run_dir, doc_id=entry.doc_id, weights_sha=weights_sha,
        )

    items = list(zip(entries, masks))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(encode, items))
    return [encode(item) for item in items]


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_binarize(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    # per-file errors (missing paths included) are collected, not fatal
    manifest = Manifest.load(args.manifest, check_paths=False)
    out_dir = Path(args.out)
    failures: list[tuple[str, str]] = []
    new_entries: list[ManifestEntry] = []

    def work(entry: ManifestEntry):
        if args.already_binary:
            mask = preproc.load_mask(entry.path, inverted=args.invert)
        else:
            gray = preproc.load_gray(entry.path)
            mask = preproc.sauvola_binarize(
                gray, config.binarize_window, config.binarize_k, config.binarize_r
            )
            if args.invert:
                mask = preproc.invert(mask)
        dest = out_dir / f"{entry.doc_id}.pbm"
        preproc.save_pbm(dest, mask)
        return ManifestEntry(dest, entry.doc_id, entry.writer_id, entry.split)

    jobs = max(1, args.jobs)
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = {pool.submit(work, e): e for e in manifest.entries}
        for future, entry in futures.items():
            try:
                new_entries.append(future.result())
            except Exception as exc:  # per-file failure; keep going
                failures.append((entry.doc_id, str(exc)))

    new_entries.sort(key=lambda e: [x.doc_id for x in manifest.entries].index(e.doc_id))
    if new_entries:
        Manifest(new_entries).save(out_dir / "manifest.jsonl")
    for doc_id, msg in failures:
        print(f"error: {doc_id}: {msg}", file=sys.stderr)
    print(f"binarized {len(new_entries)}/{len(manifest)} documents -> {out_dir}")
    return 1 if failures else 0


def cmd_init_weights(args: argparse.Namespace) -> int:
    cfg = VitConfig(
        patch_size=args.patch_size,
        embed_dim=args.embed_dim,
        depth=args.depth,
        heads=args.heads,
        mlp_ratio=args.mlp_ratio,
        input_size=args.input_size,
    )
    save_weights(args.out, cfg, random_weights(cfg, seed=args.seed))
    print(f"wrote random weights (seed={args.seed}) -> {args.out}")
    return 0


def cmd_codebook(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    manifest = Manifest.load(args.manifest)
    train = manifest.split("train")
    if not train:
        raise CommandError("manifest has no train entries")
    vit_cfg, weights = load_weights(args.weights)
    weights_sha = pipeline.file_sha256(args.weights)
    run_dir = Path(args.run_dir) if args.run_dir else None

    toks = _entry_tokens(
        train, args, config, vit_cfg, weights,
        stride=config.codebook_stride, run_dir=run_dir,
        weights_sha=weights_sha, jobs=max(1, args.jobs),
    )
    fg = [t.foreground(config.t_fg) for t in toks]
    fg = [f for f in fg if f.shape[0]]
    if not fg:
        raise CommandError("no foreground tokens in the training split")
    tokens = np.concatenate(fg, axis=0)
    try:
        cb = pipeline.fit_codebook(
            tokens, config, manifest_sha=pipeline.file_sha256(args.manifest)
        )
    except ValueError as exc:
        raise CommandError(str(exc)) from exc
    pipeline.save_codebook(args.out, cb)
    if run_dir is not None:
        pipeline.update_run_record(run_dir, "codebook", {
            "config": pipeline.config_payload(config),
            "manifest_sha256": cb.meta["manifest_sha"],
            "weights_sha256": weights_sha,
            "tokens": int(tokens.shape[0]),
            "out": str(args.out),
        })
    print(f"fitted codebook C={config.centroids} on {tokens.shape[0]} tokens -> {args.out}")
    return 0


def _descriptor_for_entry(entry, toks, cb, pca_model, config, blank_policy):
    from .encoder import PageDescriptor, pca_transform

    try:
        vec = pipeline.page_vector(toks, cb, config, doc_id=entry.doc_id)
        return PageDescriptor(entry.doc_id, pca_transform(pca_model, vec))
    except ValueError as exc:
        if "no foreground tokens" in str(exc) and blank_policy == "zero":
            print(f"warning: {entry.doc_id}: blank document, using zero descriptor",
                  file=sys.stderr)
            return PageDescriptor(entry.doc_id, np.zeros(pca_model.dim))
        raise


def cmd_encode(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    manifest = Manifest.load(args.manifest)
    entries = manifest.split(args.split)
    if not entries:
        raise CommandError(f"manifest has no {args.split!r} entries")
    vit_cfg, weights = load_weights(args.weights)
    weights_sha = pipeline.file_sha256(args.weights)
    cb = pipeline.load_codebook(args.codebook) if config.encoding == "vlad" else None
    if config.encoding == "vlad" and args.codebook is None:
        raise CommandError("--codebook is required for vlad encoding")
    run_dir = _run_dir(args)
    jobs = max(1, args.jobs)

    if args.pca:
        pca_model = pipeline.load_pca(args.pca)
    else:
        train = manifest.split("train")
        if len(train) < 2:
            raise CommandError(
                "PCA fitting needs at least 2 train entries; "
                "pass --pca to reuse a fitted model"
            )
        train_toks = _entry_tokens(
            train, args, config, vit_cfg, weights,
            stride=config.codebook_stride, run_dir=run_dir,
            weights_sha=weights_sha, jobs=jobs,
        )
        try:
            vectors = np.stack([
                pipeline.page_vector(t, cb, config, doc_id=e.doc_id)
                for e, t in zip(train, train_toks)
            ])
            pca_model = pipeline.fit_pca_on_vectors(vectors, config)
        except ValueError as exc:
            raise CommandError(str(exc)) from exc
        pipeline.save_pca(run_dir / "pca.wrv", pca_model)

    toks = _entry_tokens(
        entries, args, config, vit_cfg, weights,
        stride=config.eval_stride, run_dir=run_dir,
        weights_sha=weights_sha, jobs=jobs,
    )
    try:
        descriptors = [
            _descriptor_for_entry(e, t, cb, pca_model, config, args.blank_policy)
            for e, t in zip(entries, toks)
        ]
    except ValueError as exc:
        raise CommandError(str(exc)) from exc

    out = run_dir / "descriptors" / f"{args.split}.wrv"
    pipeline.save_descriptors(out, descriptors)
    pipeline.update_run_record(run_dir, f"encode:{args.split}", {
        "config": pipeline.config_payload(config),
        "manifest_sha256": pipeline.file_sha256(args.manifest),
        "weights_sha256": weights_sha,
        "documents": len(descriptors),
        "out": str(out),
    })
    print(f"encoded {len(descriptors)} documents -> {out}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    if args.rerank:
        config = apply_overrides(config, {"rerank": args.rerank})
    if args.k is not None:
        config = apply_overrides(config, {"krnn_k": args.k})
    manifest = Manifest.load(args.manifest, check_paths=False)
    entries = manifest.split(args.split)
    if len(entries) < 2:
        raise CommandError("evaluation needs at least 2 documents")
    descriptors = pipeline.load_descriptors(args.descriptors)
    try:
        corpus = pipeline.corpus_from_descriptors(descriptors, entries)
        stages = pipeline.evaluate_corpus(
            corpus, config,
            allow_zero=args.allow_zero,
            skip_unmatched=not args.include_unmatched,
        )
    except ValueError as exc:
        raise CommandError(str(exc)) from exc

    if args.csv:
        container.write_bytes(
            Path(args.csv),
            pipeline.metrics_csv(stages, corpus.label_map()).encode(),
        )
    if len(stages) > 1:
        print(f"pre-rerank mAP={stages[0].map:.6f} top1={stages[0].top1:.6f}")
    final = stages[-1]
    print(f"mAP={final.map:.6f} top1={final.top1:.6f}")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    manifest = Manifest.load(args.manifest)
    train = manifest.split("train")
    test = manifest.split(args.split)
    if not train:
        raise CommandError("sweep needs train entries for codebook and PCA fitting")
    if len(test) < 2:
        raise CommandError("sweep needs at least 2 evaluation documents")
    try:
        values = [int(v) for v in args.values.split(",") if v.strip()]
    except ValueError as exc:
        raise CommandError(f"--values must be comma-separated integers: {exc}") from exc
    if not values:
        raise CommandError("--values is empty")

    vit_cfg, weights = load_weights(args.weights)
    weights_sha = pipeline.file_sha256(args.weights)
    run_dir = _run_dir(args)
    jobs = max(1, args.jobs)
    labels = manifest.labels()

    rows = ["parameter,value,map,top1,status"]
    token_cache: dict[int, list] = {}

    def tokens_at(entries, stride):
        key = (id(entries), stride)
        if key not in token_cache:
            token_cache[key] = _entry_tokens(
                entries, args, config, vit_cfg, weights,
                stride=stride, run_dir=run_dir,
                weights_sha=weights_sha, jobs=jobs,
            )
        return token_cache[key]

    for value in values:
        try:
            point = pipeline.sweep_config(config, args.param, value)
            train_toks = tokens_at(train, point.codebook_stride)
            fg = [t.foreground(point.t_fg) for t in train_toks]
            fg = [f for f in fg if f.shape[0]]
            if not fg:
                raise ValueError("no foreground tokens in the training split")
            cb = pipeline.fit_codebook(np.concatenate(fg, axis=0), point)
            vectors = np.stack([
                pipeline.page_vector(t, cb, point, doc_id=e.doc_id)
                for e, t in zip(train, train_toks)
            ])
            pca_model = pipeline.fit_pca_on_vectors(vectors, point)
            test_toks = tokens_at(test, point.eval_stride)
            from .encoder import pca_transform

            corpus = pipeline.corpus_from_descriptors(
                {
                    e.doc_id: pca_transform(
                        pca_model, pipeline.page_vector(t, cb, point, doc_id=e.doc_id)
                    )
                    for e, t in zip(test, test_toks)
                },
                test,
            )
            final = pipeline.evaluate_corpus(corpus, point)[-1]
            rows.append(f"{args.param},{value},{final.map:.6f},{final.top1:.6f},ok")
            print(f"{args.param}={value} mAP={final.map:.6f} top1={final.top1:.6f}")
        except ValueError as exc:
            rows.append(f'{args.param},{value},,,"error: {exc}"')
            print(f"{args.param}={value} error: {exc}", file=sys.stderr)

    container.write_bytes(Path(args.csv), ("\n".join(rows) + "\n").encode())
    pipeline.update_run_record(run_dir, f"sweep:{args.param}", {
        "config": pipeline.config_payload(config),
        "values": values,
        "csv": str(args.csv),
    })
    print(f"sweep results -> {args.csv}")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wrv",
        description="Writer retrieval pipeline: binarize, encode, retrieve.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("binarize", help="threshold manifest images to PBM masks")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--invert", action="store_true",
                   help="flip foreground/background polarity")
    p.add_argument("--already-binary", action="store_true",
                   help="inputs are masks already; skip thresholding")
    p.add_argument("--jobs", type=int, default=1)
    _add_config_flags(p)
    p.set_defaults(func=cmd_binarize)

    p = sub.add_parser("init-weights", help="write seeded random encoder weights")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--patch-size", type=int, default=16)
    p.add_argument("--embed-dim", type=int, default=384)
    p.add_argument("--depth", type=int, default=12)
    p.add_argument("--heads", type=int, default=6)
    p.add_argument("--mlp-ratio", type=int, default=4)
    p.add_argument("--input-size", type=int, default=224)
    p.set_defaults(func=cmd_init_weights)

    p = sub.add_parser("codebook", help="fit the cluster codebook on train tokens")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--weights", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--run-dir", type=Path, help="cache extracted tokens here")
    p.add_argument("--binarize-input", action="store_true",
                   help="inputs are grayscale; threshold on the fly")
    p.add_argument("--invert", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    _add_config_flags(p)
    p.set_defaults(func=cmd_codebook)

    p = sub.add_parser("encode", help="encode page descriptors for one split")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--weights", required=True, type=Path)
    p.add_argument("--codebook", type=Path)
    p.add_argument("--pca", type=Path, help="fitted projection; fitted on train when absent")
    p.add_argument("--run-dir", type=Path)
    p.add_argument("--split", default="test", choices=("train", "validation", "test"))
    p.add_argument("--blank-policy", default="error", choices=("error", "zero"))
    p.add_argument("--binarize-input", action="store_true")
    p.add_argument("--invert", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    _add_config_flags(p)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("evaluate", help="leave-one-out retrieval metrics")
    p.add_argument("--descriptors", required=True, type=Path)
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--split", default="test", choices=("train", "validation", "test"))
    p.add_argument("--csv", type=Path, help="write per-query AP rows here")
    p.add_argument("--rerank", choices=("none", "krnn", "graph"))
    p.add_argument("--k", type=int, help="reciprocal neighbor count for krnn")
    p.add_argument("--allow-zero", action="store_true",
                   help="rank zero descriptors at neutral distance instead of failing")
    p.add_argument("--include-unmatched", action="store_true",
                   help="count queries without relevant documents (AP 0)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="re-run encoding/evaluation over a parameter grid")
    p.add_argument("--param", required=True,
                   choices=("stride", "t_fg", "centroids", "pca_dim"))
    p.add_argument("--values", required=True, help="comma-separated integers")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--weights", required=True, type=Path)
    p.add_argument("--csv", required=True, type=Path)
    p.add_argument("--run-dir", type=Path)
    p.add_argument("--split", default="test", choices=("validation", "test"))
    p.add_argument("--binarize-input", action="store_true")
    p.add_argument("--invert", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    _add_config_flags(p)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
