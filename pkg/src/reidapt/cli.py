"""Command line front end.

Subcommands cover the full pipeline: generate synthetic domains, merge
sources, train a source embedder, cluster a manifest, adapt to a target,
and evaluate a checkpoint.  All randomness flows from --seed, so a repeated
invocation with identical arguments produces byte-identical output files.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io as io_mod
from .adapt import (
    LinearEmbedder,
    MlpEmbedder,
    adapt as run_adapt,
    identity_clusters,
    load_checkpoint,
    save_checkpoint,
    train_embedder,
)
from .errors import (
    AdaptationError,
    BatchError,
    DomainError,
    EvaluationError,
    GenerationError,
    ManifestError,
    MergeError,
)
from .evaluate import build_ranking, classify_clusters, cmc, inter_intra_distances, mean_average_precision
from .graph import cluster
from .model import AdaptConfig, SOURCE_ITERATIONS, TrainConfig, default_kt
from .synth import MergePolicy, SyntheticSpec, generate_synthetic_domain, merge_domains


def _set_threads(n: int | None) -> None:
    if n is None:
        return
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        print("warning: threadpoolctl not installed, --threads ignored", file=sys.stderr)
        return
    threadpool_limits(limits=n)


def _add_train_flags(p: argparse.ArgumentParser, default_iterations: int) -> None:
    p.add_argument("--iterations", type=int, default=default_iterations)
    p.add_argument("--batch-p", type=int, default=8, help="clusters per batch")
    p.add_argument("--batch-k", type=int, default=4, help="frame samples per cluster")
    p.add_argument("--margin", default="soft", help="'soft' or a non-negative float")
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--lr-decay", type=float, default=0.9999)


def _add_cluster_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--K", type=int, default=None, help="rank threshold (default from camera count)")
    p.add_argument("--T", type=int, default=None, help="size threshold (default from camera count)")
    p.add_argument("--k1", type=int, default=None, help="graph out-degree (default K)")
    p.add_argument("--connectivity", choices=["weak", "strong"], default="weak")
    p.add_argument("--normalize", action="store_true", help="L2-normalize representations")


def _train_config(args, seed: int) -> TrainConfig:
    margin = args.margin if args.margin == "soft" else float(args.margin)
    return TrainConfig(
        iterations=args.iterations,
        batch_p=args.batch_p,
        batch_k=args.batch_k,
        margin=margin,
        learning_rate=args.lr,
        lr_decay=args.lr_decay,
        seed=seed,
    )


def _adapt_config(args, manifest, train: TrainConfig | None = None) -> AdaptConfig:
    K, T = (args.K, args.T)
    if K is None or T is None:
        dK, dT = default_kt(len(manifest.cameras))
        K = dK if K is None else K
        T = dT if T is None else T
    kwargs = dict(
        K=K,
        T=T,
        k1=args.k1,
        cluster_cap=getattr(args, "cluster_cap", 850),
        seed=args.seed,
        connectivity=args.connectivity,
        normalize=args.normalize,
    )
    if train is not None:
        kwargs["train"] = train
    if hasattr(args, "rounds"):
        kwargs["I"] = args.rounds
    return AdaptConfig(**kwargs)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="reidapt",
        description="Cross-camera tracklet clustering and unsupervised domain adaptation.",
    )
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=None, help="cap BLAS thread pools")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled domain")
    p.add_argument("--out", required=True)
    p.add_argument("--sidecar", default=None, help="write frames to a float32 sidecar")
    p.add_argument("--identities", type=int, default=50)
    p.add_argument("--cameras", type=int, default=4)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--frames", type=int, nargs=2, default=(3, 6), metavar=("LO", "HI"))
    p.add_argument("--tracklets", type=int, nargs=2, default=(1, 2), metavar=("LO", "HI"))
    p.add_argument("--separation", type=float, default=8.0)
    p.add_argument("--camera-shift", type=float, default=0.2)
    p.add_argument("--noise-sigma", type=float, default=0.5)

    p = sub.add_parser("cluster", help="cluster a manifest into person groups")
    p.add_argument("--manifest", required=True)
    p.add_argument("--sidecar", default=None)
    p.add_argument("--out", required=True, help="assignment TSV path")
    p.add_argument("--checkpoint", default=None, help="embedder checkpoint (default: raw features)")
    _add_cluster_flags(p)

    p = sub.add_parser("train-source", help="train an embedder on a labeled source domain")
    p.add_argument("--manifest", required=True)
    p.add_argument("--sidecar", default=None)
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--arch", choices=["linear", "mlp"], default="linear")
    p.add_argument("--embed-dim", type=int, default=None, help="output dim (default: input dim)")
    p.add_argument("--hidden-dim", type=int, default=64, help="hidden width for --arch mlp")
    p.add_argument("--init", choices=["identity", "random"], default="identity",
                   help="linear init; mlp is always random")
    _add_train_flags(p, SOURCE_ITERATIONS)

    p = sub.add_parser("adapt", help="adapt a source checkpoint to an unlabeled target")
    p.add_argument("--checkpoint", required=True, help="source embedder checkpoint")
    p.add_argument("--manifest", required=True, help="target manifest")
    p.add_argument("--sidecar", default=None)
    p.add_argument("--out", required=True, help="adapted checkpoint path")
    p.add_argument("--report", default=None, help="write a JSON adaptation report here")
    p.add_argument("--rounds", "-I", dest="rounds", type=int, default=2)
    p.add_argument("--cluster-cap", type=int, default=850)
    _add_cluster_flags(p)
    _add_train_flags(p, 25_000)

    p = sub.add_parser("merge", help="merge labeled source manifests into one domain")
    p.add_argument("--sources", nargs="+", required=True, help="manifest JSONL paths")
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None, help="write a JSON merge report here")
    p.add_argument("--min-identities", type=int, default=201)
    p.add_argument("--allow-single-camera", action="store_true",
                   help="keep identities seen by only one camera")
    p.add_argument("--exclude", action="append", default=[], metavar="NAME")
    p.add_argument("--no-namespace", action="store_true")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a labeled manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--sidecar", default=None)
    p.add_argument("--checkpoint", default=None, help="embedder checkpoint (default: raw features)")
    p.add_argument("--queries", default=None, help="file listing query tracklet ids, one per line")
    p.add_argument("--ranks", default="1,5,10,20", help="comma-separated CMC ranks")
    p.add_argument("--out-dir", default=None, help="write summary.json and CSV plot data here")
    _add_cluster_flags(p)

    return ap


def _load_embedder(path, dim: int):
    if path is None:
        return None
    return load_checkpoint(path).embedder


def _cmd_synth(args) -> int:
    spec = SyntheticSpec(
        identities=args.identities,
        cameras=args.cameras,
        dim=args.dim,
        frames_per_tracklet=tuple(args.frames),
        tracklets_per_identity_per_camera=tuple(args.tracklets),
        identity_separation=args.separation,
        camera_shift=args.camera_shift,
        noise_sigma=args.noise_sigma,
        seed=args.seed,
    )
    m = generate_synthetic_domain(spec)
    io_mod.write_manifest(m, args.out, sidecar=args.sidecar)
    print(f"wrote {len(m)} tracklets ({args.identities} identities, "
          f"{args.cameras} cameras) to {args.out}", file=sys.stderr)
    return 0


def _cmd_cluster(args) -> int:
    m = io_mod.read_manifest(args.manifest, sidecar=args.sidecar)
    cfg = _adapt_config(args, m)
    embedder = _load_embedder(args.checkpoint, m.dim)
    cs = cluster(m, cfg, embedder=embedder)
    io_mod.write_assignments(cs, args.out)
    print(
        f"{len(cs.clusters)} clusters covering {cs.clustered_fraction:.1%} of "
        f"{cs.n_tracklets} tracklets (K={cfg.K}, T={cfg.T}, k1={cfg.k1})",
        file=sys.stderr,
    )
    return 0


def _cmd_train_source(args) -> int:
    m = io_mod.read_manifest(args.manifest, sidecar=args.sidecar)
    dim = m.dim
    out_dim = args.embed_dim if args.embed_dim is not None else dim
    rng = np.random.default_rng(args.seed)
    if args.arch == "linear":
        if args.init == "identity" and out_dim == dim:
            emb = LinearEmbedder.identity(dim)
        else:
            emb = LinearEmbedder.random(dim, out_dim, rng)
    else:
        emb = MlpEmbedder.random(dim, args.hidden_dim, out_dim, rng)

    clusters = identity_clusters(m)
    cfg = _train_config(args, args.seed)
    losses: list[float] = []
    emb = train_embedder(m=m, embedder=emb, clusters=clusters, cfg=cfg,
                                   progress=lambda _s, l: losses.append(l))
    save_checkpoint(args.out, emb, seed=args.seed, round_index=0)
    first = losses[0] if losses else float("nan")
    last = losses[-1] if losses else float("nan")
    print(
        f"trained {args.arch} embedder on {len(clusters.clusters)} identities "
        f"for {cfg.iterations} steps (loss {first:.4f} -> {last:.4f}); wrote {args.out}",
        file=sys.stderr,
    )
    return 0


def _cmd_adapt(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    m = io_mod.read_manifest(args.manifest, sidecar=args.sidecar)
    cfg = _adapt_config(args, m, train=_train_config(args, args.seed))
    emb, report = run_adapt(ckpt.embedder, m, cfg)
    if report.rounds:
        out_seed, out_round = args.seed, ckpt.round_index + len(report.rounds)
    else:
        # nothing ran: keep provenance so the checkpoint is bit-identical
        out_seed, out_round = ckpt.seed, ckpt.round_index
    save_checkpoint(args.out, emb, seed=out_seed, round_index=out_round)
    if args.report is not None:
        io_mod.write_json(report.to_dict(), args.report)
    print(
        f"{len(report.rounds)} rounds, reason={report.reason}; wrote {args.out}",
        file=sys.stderr,
    )
    return 0


def _cmd_merge(args) -> int:
    sources = [io_mod.read_manifest(p) for p in args.sources]
    policy = MergePolicy(
        min_identities=args.min_identities,
        require_cross_camera=not args.allow_single_camera,
        exclusion_list=frozenset(args.exclude),
        namespace_ids=not args.no_namespace,
    )
    merged, report = merge_domains(sources, policy)
    io_mod.write_manifest(merged, args.out)
    if args.report is not None:
        io_mod.write_json(report.to_dict(), args.report)
    for s in report.sources:
        status = "included" if s.included else f"excluded ({s.reason})"
        print(
            f"{s.source}: {status}; ids={s.identities} images={s.images} cameras={s.cameras}",
            file=sys.stderr,
        )
    print(
        f"merged {report.tracklets} tracklets, {report.identities} identities, "
        f"{report.cameras} cameras -> {args.out}",
        file=sys.stderr,
    )
    return 0


def _cmd_eval(args) -> int:
    m = io_mod.read_manifest(args.manifest, sidecar=args.sidecar)
    embedder = _load_embedder(args.checkpoint, m.dim)
    ranks = [int(k) for k in str(args.ranks).split(",") if k]
    queries = None
    if args.queries is not None:
        queries = [
            line.strip()
            for line in Path(args.queries).read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]

    ranking = build_ranking(m, embedder=embedder, queries=queries, normalize=args.normalize)
    cmc_vals = cmc(ranking, ranks)
    map_val = mean_average_precision(ranking)

    cfg = _adapt_config(args, m)
    cs = cluster(m, cfg, embedder=embedder)
    quality = classify_clusters(cs, m) if cs.clusters else None
    if len(cs.clusters) >= 2:
        intra, inter = inter_intra_distances(cs, m, embedder=embedder)
    else:
        intra, inter = [], []

    rows = [(f"rank-{k}", f"{v:.4f}") for k, v in zip(ranks, cmc_vals)]
    rows.append(("mAP", f"{map_val:.4f}"))
    rows.append(("clusters", str(len(cs.clusters))))
    if quality is not None:
        for kind in ("GC", "MC", "DC", "MC+DC"):
            rows.append((f"clusters[{kind}]", str(quality.counts[kind])))
        rows.append(("purity", f"{quality.purity:.4f}"))
    if inter:
        rows.append(("mean-inter-dist", f"{float(np.mean(inter)):.4f}"))
    if intra:
        rows.append(("mean-intra-dist", f"{float(np.mean(intra)):.4f}"))
    width = max(len(k) for k, _ in rows)
    print(f"{'metric'.ljust(width)}  value")
    for k, v in rows:
        print(f"{k.ljust(width)}  {v}")

    if args.out_dir is not None:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        summary = {
            "cmc": {str(k): float(v) for k, v in zip(ranks, cmc_vals)},
            "map": map_val,
            "clusters": len(cs.clusters),
            "cluster_counts": quality.counts if quality else None,
            "purity": quality.purity if quality else None,
            "mean_inter_distance": float(np.mean(inter)) if inter else None,
            "mean_intra_distance": float(np.mean(intra)) if intra else None,
        }
        io_mod.write_json(summary, out / "summary.json")
        max_rank = max(ranks)
        curve = cmc(ranking, range(1, max_rank + 1))
        with open(out / "cmc_curve.csv", "w", encoding="utf-8") as fh:
            fh.write("rank,cmc\n")
            for k, v in enumerate(curve, 1):
                fh.write(f"{k},{v:.6f}\n")
        with open(out / "cluster_distances.csv", "w", encoding="utf-8") as fh:
            fh.write("kind,distance\n")
            for d in intra:
                fh.write(f"intra,{d:.6f}\n")
            for d in inter:
                fh.write(f"inter,{d:.6f}\n")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "cluster": _cmd_cluster,
    "train-source": _cmd_train_source,
    "adapt": _cmd_adapt,
    "merge": _cmd_merge,
    "eval": _cmd_eval,
}

_USER_ERRORS = (
    ManifestError,
    DomainError,
    BatchError,
    AdaptationError,
    MergeError,
    GenerationError,
    EvaluationError,
    ValueError,
    KeyError,
    OSError,
)


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _set_threads(args.threads)
    try:
        return _COMMANDS[args.command](args)
    except _USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
