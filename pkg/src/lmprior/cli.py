"""Command-line driver: ingest, build-prior, train, eval, sweep-rho, synth.

Every subcommand echoes its fully resolved configuration into the output
directory (config-<subcommand>.json) so runs are reproducible from disk.
The LMPRIOR_OUT environment variable overrides any --out flag. Exit codes:
0 success, 2 usage error, 3 data error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import corpus, evaluate, mf, prior, seq, synth
from .errors import DataError, LmPriorError, UsageError


def _resolve_out(args: argparse.Namespace) -> Path:
    out = os.environ.get("LMPRIOR_OUT") or args.out
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _echo_config(args: argparse.Namespace, out: Path) -> None:
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    cfg["out"] = str(out)
    path = out / f"config-{args.subcommand}.json"
    path.write_text(json.dumps(cfg, indent=2, sort_keys=True, default=str) + "\n")


def _parse_ks(text: str) -> list[int]:
    try:
        ks = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise UsageError(f"bad --ks list {text!r}") from None
    if not ks or any(k < 1 for k in ks):
        raise UsageError(f"--ks must be positive integers, got {text!r}")
    return ks


def _parse_grid(text: str) -> list[float]:
    try:
        grid = [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise UsageError(f"bad --grid list {text!r}") from None
    if not grid:
        raise UsageError("--grid must list at least one rho")
    if any(g < 0 for g in grid):
        raise UsageError("--grid values must be >= 0")
    if 0.0 not in grid:
        raise UsageError("--grid must include 0 (the baseline)")
    return grid


def _load_log(args: argparse.Namespace) -> corpus.InteractionLog:
    return corpus.load_interactions(args.interactions, header=args.header)


def _load_graph_for_training(
    args: argparse.Namespace, log: corpus.InteractionLog
) -> prior.SimilarityGraph | None:
    if args.prior != "graph":
        return None
    if not args.graph:
        raise UsageError("--prior graph requires --graph <file>")
    graph = prior.load_graph(args.graph)
    if graph.num_items != log.num_items:
        raise DataError(
            f"graph covers {graph.num_items} items but the log has {log.num_items}"
        )
    return graph


def _load_features(
    args: argparse.Namespace, log: corpus.InteractionLog
) -> np.ndarray:
    if not args.embeddings:
        raise UsageError("--encoder mlp requires --embeddings <file>")
    emb = corpus.load_embeddings(args.embeddings, log, items_path=args.items)
    return emb.values.astype(np.float64)


def _seen_items(
    split: corpus.Split, split_name: str
) -> dict[int, list[int]]:
    """Per-user items visible to the model before the held-out position."""
    val_target = dict(split.validation)
    seen: dict[int, list[int]] = {}
    for user, tl in enumerate(split.train.timelines):
        items = list(tl)
        if split_name == "test" and user in val_target:
            items.append(val_target[user])
        seen[user] = items
    return seen


def cmd_ingest(args: argparse.Namespace) -> int:
    out = _resolve_out(args)
    log = _load_log(args)
    tags = corpus.tag_cold_start(log, threshold=args.threshold)
    split = corpus.split_leave_last_out(log)
    stats = {
        "users": log.num_users,
        "items": log.num_items,
        "interactions": log.num_interactions,
        "cold_start_items": len(tags.cs_items),
        "cold_start_users": len(tags.cs_users),
        "threshold": args.threshold,
        "validation_pairs": len(split.validation),
        "test_pairs": len(split.test),
    }
    (out / "stats.json").write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n")
    corpus.save_log(log, out / "log.json")
    for key, value in stats.items():
        print(f"{key}: {value}")
    _echo_config(args, out)
    return 0


def cmd_build_prior(args: argparse.Namespace) -> int:
    out = _resolve_out(args)
    log = _load_log(args)
    emb = corpus.load_embeddings(args.embeddings, log, items_path=args.items)
    k = args.K if args.K is not None else prior.default_k(log.num_items)
    if not (1 <= k < log.num_items):
        raise UsageError(f"--K must be in [1, {log.num_items - 1}], got {k}")
    graph = prior.build_graph(
        emb.values.astype(np.float64), k, kernel=args.kernel,
        eps=args.eps, threads=args.threads,
    )
    prior.save_graph(graph, out / "graph.bin")
    print(f"items: {graph.num_items}")
    print(f"edges: {graph.num_edges}")
    print(f"kernel: {args.kernel} (K={k})")
    counts, bins = np.histogram(graph.weights, bins=10, range=(0.0, 1.0))
    print("weight histogram:")
    for lo, hi, c in zip(bins[:-1], bins[1:], counts):
        print(f"  ({lo:.1f}, {hi:.1f}]: {int(c)}")
    _echo_config(args, out)
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    out = _resolve_out(args)
    log = _load_log(args)
    split = corpus.split_leave_last_out(log)
    graph = _load_graph_for_training(args, log)
    if args.model == "mf":
        params = mf.train_mf(
            split.train, d=args.d, lr=args.lr, epochs=args.epochs, rho=args.rho,
            prior=args.prior, graph=graph, negatives=args.negatives,
            batch_size=args.batch, seed=args.seed, optimizer=args.optimizer,
            clip=args.clip, verbose=True,
        )
        mf.save_checkpoint(params, out / "checkpoint.bin")
    else:
        features = _load_features(args, log) if args.encoder == "mlp" else None
        params = seq.train_seq(
            split.train, d=args.d, max_len=args.maxlen, lr=args.lr,
            epochs=args.epochs, rho=args.rho, prior=args.prior, graph=graph,
            encoder=args.encoder, features=features, hidden_dim=args.dh,
            batch_size=args.batch, seed=args.seed, optimizer=args.optimizer,
            clip=args.clip, verbose=True,
        )
        seq.save_checkpoint(params, out / "checkpoint.bin")
    print(f"checkpoint: {out / 'checkpoint.bin'}")
    _echo_config(args, out)
    return 0


def _evaluate_checkpoint(
    checkpoint: str | Path,
    log: corpus.InteractionLog,
    split: corpus.Split,
    args: argparse.Namespace,
    tags: corpus.ColdStartTags,
    model_tag: str | None = None,
) -> evaluate.EvalReport:
    pairs = split.test if args.split == "test" else split.validation
    ks = _parse_ks(args.ks)
    kind = seq.checkpoint_kind(checkpoint)
    seen = _seen_items(split, args.split)
    if kind == mf.MODEL_KIND_MF:
        params = mf.load_checkpoint(checkpoint)
        if params.user_factors.shape[0] != log.num_users or (
            params.item_factors.shape[0] != log.num_items
        ):
            raise DataError("checkpoint shape does not match the interaction log")
        scorer = params.scorer()
        tag = model_tag or "mf"
    elif kind == seq.MODEL_KIND_SEQ:
        params = seq.load_checkpoint(checkpoint)
        if params.num_items != log.num_items:
            raise DataError("checkpoint item count does not match the interaction log")
        features = None
        if params.encoder == seq.ENCODER_MLP:
            features = _load_features(args, log)
        users = sorted({user for user, _ in pairs})
        histories = [seen[user] for user in users]
        scores = seq.score_users(params, histories, features=features)
        row_of = {user: r for r, user in enumerate(users)}
        scorer = lambda user: scores[row_of[user]]  # noqa: E731
        tag = model_tag or "seq"
    else:
        raise DataError(f"{checkpoint}: unknown checkpoint kind {kind}")
    masked = (lambda user: seen[user]) if args.mask_seen else None
    return evaluate.evaluate(
        scorer, pairs, tags, ks=ks, model_tag=tag,
        masked_items=masked, num_items=log.num_items,
    )


def cmd_eval(args: argparse.Namespace) -> int:
    out = _resolve_out(args)
    log = _load_log(args)
    split = corpus.split_leave_last_out(log)
    tags = corpus.tag_cold_start(log, threshold=args.threshold)
    report = _evaluate_checkpoint(
        args.checkpoint, log, split, args, tags, model_tag=args.tag
    )
    report.write_csv(out / "report.csv")
    sys.stdout.write(report.to_csv())
    _echo_config(args, out)
    return 0


def cmd_sweep_rho(args: argparse.Namespace) -> int:
    out = _resolve_out(args)
    grid = _parse_grid(args.grid)
    if args.prior == "none":
        raise UsageError("sweep-rho needs a prior penalty (--prior graph or l2)")
    log = _load_log(args)
    split = corpus.split_leave_last_out(log)
    tags = corpus.tag_cold_start(log, threshold=args.threshold)
    graph = _load_graph_for_training(args, log)
    features = None
    if args.model == "seq" and args.encoder == "mlp":
        features = _load_features(args, log)

    pairs = split.test if args.split == "test" else split.validation
    ks = _parse_ks(args.ks)
    seen = _seen_items(split, args.split)
    masked = (lambda user: seen[user]) if args.mask_seen else None
    reports: dict[float, evaluate.EvalReport] = {}
    for rho in grid:
        print(f"rho={rho:g}: training {args.model}")
        if args.model == "mf":
            params = mf.train_mf(
                split.train, d=args.d, lr=args.lr, epochs=args.epochs, rho=rho,
                prior=args.prior, graph=graph, negatives=args.negatives,
                batch_size=args.batch, seed=args.seed, optimizer=args.optimizer,
                clip=args.clip,
            )
            scorer = params.scorer()
        else:
            params = seq.train_seq(
                split.train, d=args.d, max_len=args.maxlen, lr=args.lr,
                epochs=args.epochs, rho=rho, prior=args.prior, graph=graph,
                encoder=args.encoder, features=features, hidden_dim=args.dh,
                batch_size=args.batch, seed=args.seed, optimizer=args.optimizer,
                clip=args.clip,
            )
            users = sorted({user for user, _ in pairs})
            scores = seq.score_users(params, [seen[u] for u in users], features=features)
            row_of = {user: r for r, user in enumerate(users)}
            scorer = lambda user, _s=scores, _r=row_of: _s[_r[user]]  # noqa: E731
        reports[rho] = evaluate.evaluate(
            scorer, pairs, tags, ks=ks, model_tag=f"{args.model}-rho{rho:g}",
            masked_items=masked, num_items=log.num_items,
        )

    base = reports[0.0]
    rel_lines = ["rho,slice,metric,k,value"]
    abs_lines = ["rho,slice,metric,k,value"]
    for rho in grid:
        rep = reports[rho]
        for (_, s, m, k, v), (_, bs, bm, bk, bv) in zip(rep.rows, base.rows):
            assert (s, m, k) == (bs, bm, bk)
            abs_lines.append(f"{rho:g},{s},{m},{k},{v:.6f}")
            ratio = v / bv if bv != 0 else (1.0 if v == 0 else float("nan"))
            rel_lines.append(f"{rho:g},{s},{m},{k},{ratio:.6f}")
    (out / "sweep.csv").write_text("\n".join(rel_lines) + "\n")
    (out / "sweep-absolute.csv").write_text("\n".join(abs_lines) + "\n")
    print("\n".join(rel_lines))
    _echo_config(args, out)
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    out = _resolve_out(args)
    data = synth.generate_benchmark(
        num_users=args.users, num_items=args.items_count,
        num_clusters=args.clusters, dim=args.dim, cold_frac=args.cold_frac,
        noise=args.noise, seed=args.seed, threshold=args.threshold,
    )
    paths = synth.write_benchmark(data, out)
    total = sum(len(t) for t in data.timelines)
    print(f"users: {args.users}")
    print(f"items: {args.items_count}")
    print(f"interactions: {total}")
    print(f"cold items: {len(data.cold_items)}")
    print(f"cold-start users: {len(data.cs_users)}")
    for name, path in paths.items():
        print(f"{name}: {path}")
    _echo_config(args, out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lmprior",
        description="Graph-prior recommender toolkit: build text-embedding "
        "similarity graphs and train cold-start-aware recommenders.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--out", default=".", help="output directory (default: .)")
        p.add_argument("--seed", type=int, default=42)
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1)

    def add_data(p: argparse.ArgumentParser) -> None:
        p.add_argument("--interactions", required=True, help="user item timestamp file")
        p.add_argument("--header", action="store_true", help="skip the first line")
        p.add_argument("--threshold", type=int, default=5,
                       help="cold-start interaction-count threshold")

    def add_train_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--model", choices=["mf", "seq"], required=True)
        p.add_argument("--prior", choices=["none", "l2", "graph"], default="graph")
        p.add_argument("--graph", help="LMPG0001 similarity graph file")
        p.add_argument("--embeddings", help="LMPE0001 file (mlp encoder input)")
        p.add_argument("--items", help="companion token list for --embeddings")
        p.add_argument("--encoder", choices=["table", "mlp"], default="table")
        p.add_argument("--d", type=int, default=64, help="latent dimension")
        p.add_argument("--dh", type=int, default=128, help="mlp hidden width")
        p.add_argument("--maxlen", type=int, default=50, help="history window")
        p.add_argument("--rho", type=float, default=1.0, help="prior strength")
        p.add_argument("--lr", type=float, default=1e-3)
        p.add_argument("--epochs", type=int, default=50)
        p.add_argument("--batch", type=int, default=128)
        p.add_argument("--negatives", type=int, default=1,
                       help="negatives per positive (mf)")
        p.add_argument("--optimizer", choices=["adam", "sgd"], default="adam")
        p.add_argument("--clip", type=float, default=None,
                       help="per-tensor gradient norm cap")

    def add_eval_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--ks", default="10,20,40", help="comma-separated cutoffs")
        p.add_argument("--mask-seen", action="store_true",
                       help="exclude already-seen items from candidate ranking")
        p.add_argument("--split", choices=["test", "validation"], default="test")

    p = sub.add_parser("ingest", help="parse interactions and report stats")
    add_common(p)
    add_data(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("build-prior", help="build the item-similarity graph")
    add_common(p)
    add_data(p)
    p.add_argument("--embeddings", required=True, help="LMPE0001 file")
    p.add_argument("--items", help="companion token list (default: sibling items.tsv)")
    p.add_argument("--K", type=int, default=None,
                   help="neighbors per item (default floor(sqrt(N)))")
    p.add_argument("--kernel", choices=["global", "local"], default="local")
    p.add_argument("--eps", type=float, default=1e-3,
                   help="covariance shrinkage strength")
    p.set_defaults(func=cmd_build_prior)

    p = sub.add_parser("train", help="train a recommender")
    add_common(p)
    add_data(p)
    add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="rank held-out targets and report metrics")
    add_common(p)
    add_data(p)
    add_eval_flags(p)
    p.add_argument("--checkpoint", required=True, help="LMPM0001 model file")
    p.add_argument("--embeddings", help="LMPE0001 file (mlp encoder input)")
    p.add_argument("--items", help="companion token list for --embeddings")
    p.add_argument("--tag", default=None, help="model column value in the CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep-rho", help="train and evaluate across prior strengths")
    add_common(p)
    add_data(p)
    add_train_flags(p)
    add_eval_flags(p)
    p.add_argument("--grid", default="0,0.1,1,10,100",
                   help="comma-separated rho values; must include 0")
    p.set_defaults(func=cmd_sweep_rho)

    p = sub.add_parser("synth", help="generate the clustered synthetic benchmark")
    add_common(p)
    p.add_argument("--users", type=int, default=2000)
    p.add_argument("--items", dest="items_count", type=int, default=1000)
    p.add_argument("--clusters", type=int, default=10)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--cold-frac", type=float, default=0.05)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--threshold", type=int, default=5)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except LmPriorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        # Unreadable binary inputs (graph, checkpoint, embeddings) count as
        # data errors just like missing TSV files.
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
