"""``anonavila`` command line.

Exit codes: 0 success, 1 data/validation error, 2 usage error,
3 internal invariant violation. Every successful command writes a
``*.manifest.json`` next to its main output; wall-clock times live only
there, so the other outputs are byte-identical across repeated runs.
"""
from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import logging
import os
import re
import sys
import time
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .embedding_store import Label, align_text_embeddings, read_embedding_set
from .errors import InvariantViolation, NavilaError
from .evaluation import Metric, bootstrap_ci, format_table, labeled
from .mlp import init_model, load_model, save_model
from .scoring import Centroids, Combiner, compute_centroids, read_scores_csv, score_set, top_matching_terms, \
    write_scores_csv
from .synthetic import SynthConfig, generate
from .term_pool import Category, load_term_pool
from .trainer import TrainConfig, train
from .wsi import (
    build_heatmap,
    erode,
    group_by_slide,
    read_slide_scores_csv,
    slide_label,
    slide_score,
    write_heatmap_csv,
    write_pgm,
    write_slide_scores_csv,
    zscore_normalize,
)

log = logging.getLogger("anonavila")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, command: str, args: argparse.Namespace, inputs, seed, started: float, extra=None):
    config = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"}
    manifest = {
        "command": command,
        "config": config,
        "inputs": {str(p): _sha256(p) for p in inputs if p is not None},
        "seed": seed,
        "tool_version": __version__,
        "started_at": datetime.fromtimestamp(started, timezone.utc).isoformat(),
        "wall_clock_s": time.time() - started,
    }
    if extra:
        manifest.update(extra)
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _manifest_path(out) -> Path:
    out = Path(out)
    return out / "manifest.json" if out.is_dir() else out.with_name(out.name + ".manifest.json")


def _load_terms(args):
    pn = load_term_pool(args.terms_normal, Category.NORMAL)
    pa = load_term_pool(args.terms_abnormal, Category.ABNORMAL)
    nt = align_text_embeddings(pn, read_embedding_set(args.text_normal))
    at = align_text_embeddings(pa, read_embedding_set(args.text_abnormal))
    return pn, pa, nt, at


def _term_inputs(args):
    return [args.terms_normal, args.terms_abnormal, args.text_normal, args.text_abnormal]


def cmd_validate(args):
    eset = read_embedding_set(args.embeddings)
    print(f"ok: {len(eset)} records, dim {eset.dim}, kind {eset.kind.name.lower()}", file=sys.stderr)
    return 0


def cmd_train(args):
    started = time.time()
    config = TrainConfig(args.batch_size, args.accum, args.epochs, args.lr, args.seed)
    images = read_embedding_set(args.train)
    _, _, nt, at = _load_terms(args)
    model, report = train(init_model(args.seed), images, nt, at, config)
    save_model(model, args.out)
    report_path = args.report or f"{args.out}.report.json"
    Path(report_path).write_text(json.dumps(report.to_dict(timing=False), indent=2) + "\n")
    write_manifest(_manifest_path(args.out), "train", args, [args.train, *_term_inputs(args)], args.seed,
                   started, {"train_config": asdict(config), "train_duration_s": report.duration_s})
    log.info("trained %d updates, final mean loss %.6f", report.n_updates, report.final_epoch_mean_loss)
    return 0


def cmd_centroids(args):
    started = time.time()
    model = load_model(args.model)
    _, _, nt, at = _load_terms(args)
    cents = compute_centroids(model, read_embedding_set(args.val), nt, at)
    cents.save(args.out)
    write_manifest(_manifest_path(args.out), "centroids", args, [args.model, args.val, *_term_inputs(args)],
                   None, started)
    return 0


def cmd_score(args):
    started = time.time()
    model = load_model(args.model)
    cents = Centroids.load(args.centroids)
    _, _, nt, at = _load_terms(args)
    patches = score_set(model, read_embedding_set(args.images), nt, at, cents, Combiner(args.combine))
    write_scores_csv(patches, args.out)
    write_manifest(_manifest_path(args.out), "score", args,
                   [args.model, args.centroids, args.images, *_term_inputs(args)], None, started)
    return 0


def _safe_name(slide_id) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", slide_id or "slide")


def cmd_heatmap(args):
    started = time.time()
    patches = read_scores_csv(args.scores)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    groups = group_by_slide(patches)
    maps, slide_scores = [], []
    for sid, group in groups.items():
        hm = build_heatmap(group, sid)
        slide_scores.append(slide_score(hm, not args.no_erode, slide_label(group)))
        maps.append(hm if args.no_erode else erode(hm))
    normalized = False
    if args.zscore or args.zscore_reference:
        ref_patches = read_scores_csv(args.zscore_reference) if args.zscore_reference else patches
        ref = [p.score for p in ref_patches if p.label is Label.NORMAL]
        maps = zscore_normalize(maps, ref)
        normalized = True
    for hm in maps:
        stem = out_dir / f"heatmap_{_safe_name(hm.slide_id)}"
        write_heatmap_csv(hm, f"{stem}.csv")
        write_pgm(hm, f"{stem}.pgm", normalized)
    write_slide_scores_csv(slide_scores, out_dir / "slide_scores.csv")
    write_manifest(out_dir / "manifest.json", "heatmap", args, [args.scores, args.zscore_reference], None, started)
    return 0


def cmd_eval(args):
    started = time.time()
    if not (args.scores or args.slide_scores):
        raise NavilaError("eval needs --scores and/or --slide-scores")
    metrics = [Metric(m) for m in args.metric]
    results, table = [], {}
    subjects = []
    if args.scores:
        subjects.append(("patch", labeled(read_scores_csv(args.scores))))
    if args.slide_scores:
        slides = read_slide_scores_csv(args.slide_scores)
        subjects += [(a, labeled(slides, a)) for a in ("a_max", "a_top1")]
    for subject, (s, y) in subjects:
        for m in metrics:
            r = bootstrap_ci(s, y, m, args.bootstrap, args.level, args.seed)
            results.append({"subject": subject, **r.to_dict()})
            table[(subject, m)] = r
    Path(args.out).write_text(json.dumps(results, indent=2) + "\n")
    if args.table:
        Path(args.table).write_text(format_table({args.name: table}))
    write_manifest(_manifest_path(args.out), "eval", args, [args.scores, args.slide_scores], args.seed, started)
    return 0


def cmd_synth(args):
    started = time.time()
    cfg = SynthConfig(
        dim=args.dim, n_normal_terms=args.n_normal_terms, n_abnormal_terms=args.n_abnormal_terms,
        n_train=args.n_train, n_val=args.n_val, n_test_normal=args.n_test_normal,
        n_test_abnormal=args.n_test_abnormal, cluster_separation=args.separation,
        noise_sigma=args.noise_sigma, term_sigma=args.term_sigma, patches_per_slide=args.patches_per_slide,
        seed=args.seed)
    paths = generate(cfg).write(args.out_dir)
    write_manifest(Path(args.out_dir) / "manifest.json", "synth", args, [], args.seed, started,
                   {"outputs": paths})
    return 0


def cmd_explain(args):
    started = time.time()
    pn, pa, nt, at = _load_terms(args)
    images = read_embedding_set(args.images)
    wanted = set(args.ids) if args.ids else None
    out = []
    for rec in images.records:
        if wanted is not None and rec.id not in wanted:
            continue
        out.append({
            "patch_id": rec.id,
            "normal": [[t, w] for t, w in top_matching_terms(rec.vector, pn.terms, nt, args.k)],
            "abnormal": [[t, w] for t, w in top_matching_terms(rec.vector, pa.terms, at, args.k)],
        })
    Path(args.out).write_text(json.dumps(out, indent=2) + "\n")
    write_manifest(_manifest_path(args.out), "explain", args, [args.images, *_term_inputs(args)], None, started)
    return 0


def _add_terms(p):
    p.add_argument("--terms-normal", required=True, type=Path)
    p.add_argument("--terms-abnormal", required=True, type=Path)
    p.add_argument("--text-normal", required=True, type=Path)
    p.add_argument("--text-abnormal", required=True, type=Path)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="anonavila", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("--threads", type=int, default=None,
                    help="BLAS threads (default $NAVILA_THREADS; 1 = deterministic mode)")
    ap.add_argument("--error-json", action="store_true", help="report errors as JSON on stderr")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check an embedding file")
    p.add_argument("--embeddings", required=True, type=Path)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("train", help="train the MLP on normal patches")
    p.add_argument("--train", required=True, type=Path)
    _add_terms(p)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--report", type=Path)
    p.add_argument("--batch-size", type=int, default=100)
    p.add_argument("--accum", type=int, default=100)
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("centroids", help="fit centroids on normal validation patches")
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--val", required=True, type=Path)
    _add_terms(p)
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_centroids)

    p = sub.add_parser("score", help="patch anomaly scores")
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--centroids", required=True, type=Path)
    p.add_argument("--images", required=True, type=Path)
    _add_terms(p)
    p.add_argument("--combine", choices=[c.value for c in Combiner], default="sum")
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("heatmap", help="slide heatmaps and slide-level scores")
    p.add_argument("--scores", required=True, type=Path)
    p.add_argument("--out-dir", required=True, type=Path)
    p.add_argument("--no-erode", action="store_true")
    p.add_argument("--zscore", action="store_true",
                   help="z-score maps against the normal-labeled patches of --scores")
    p.add_argument("--zscore-reference", type=Path, help="scores CSV whose normal patches are the reference")
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("eval", help="AUROC/AUPR with bootstrap CIs")
    p.add_argument("--scores", type=Path, help="patch scores CSV")
    p.add_argument("--slide-scores", type=Path, help="slide_scores.csv from heatmap")
    p.add_argument("--metric", nargs="+", choices=[m.value for m in Metric], default=["auroc", "aupr"])
    p.add_argument("--bootstrap", type=int, default=2000)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--table", type=Path)
    p.add_argument("--name", default="anonavila", help="row label in the table")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic benchmark")
    d = SynthConfig()
    p.add_argument("--out-dir", required=True, type=Path)
    p.add_argument("--dim", type=int, default=d.dim)
    p.add_argument("--n-normal-terms", type=int, default=d.n_normal_terms)
    p.add_argument("--n-abnormal-terms", type=int, default=d.n_abnormal_terms)
    p.add_argument("--n-train", type=int, default=d.n_train)
    p.add_argument("--n-val", type=int, default=d.n_val)
    p.add_argument("--n-test-normal", type=int, default=d.n_test_normal)
    p.add_argument("--n-test-abnormal", type=int, default=d.n_test_abnormal)
    p.add_argument("--separation", type=float, default=d.cluster_separation)
    p.add_argument("--noise-sigma", type=float, default=d.noise_sigma)
    p.add_argument("--term-sigma", type=float, default=d.term_sigma)
    p.add_argument("--patches-per-slide", type=int, default=d.patches_per_slide)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("explain", help="top-matching terms per patch")
    p.add_argument("--images", required=True, type=Path)
    _add_terms(p)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--ids", nargs="*")
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_explain)
    return ap


def _thread_limit(threads):
    if threads is None:
        env = os.environ.get("NAVILA_THREADS")
        threads = int(env) if env else None
    if threads is None:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=threads)


def _report_error(args, exc, code):
    if getattr(args, "error_json", False):
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}), file=sys.stderr)
    else:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit(args.threads):
            return args.func(args)
    except InvariantViolation as exc:
        _report_error(args, exc, 3)
        return 3
    except NavilaError as exc:
        _report_error(args, exc, 1)
        return 1
    except Exception as exc:  # noqa: BLE001
        _report_error(args, exc, 3)
        return 3


if __name__ == "__main__":
    sys.exit(main())
