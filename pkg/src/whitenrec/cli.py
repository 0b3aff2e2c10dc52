"""Command line entry point: ``whitenrec {synth,diagnose,whiten,train,eval,report}``.

Exit codes: 0 success, 1 runtime or numeric failure, 2 usage or configuration error.
"""
import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import diagnostics as diag
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    cold_start_split, gen_anisotropic_embeddings, gen_sequences, leave_one_out, load_embeddings,
    load_id_map, load_sequences, save_embeddings, save_id_map, save_sequences,
)
from .evaluation import evaluate, parse_report_text
from .exceptions import ConfigError, ShapeError, WhitenRecError
from .plotting import line_chart_svg
from .recommender import PopularityRecommender, SeqRecommender
from .whitening import WhiteningMethod, Whitener, valid_group_counts, verify_whitening

logger = logging.getLogger("whitenrec")

THREADS_ENV = "WHITENSEQ_THREADS"


class UsageError(Exception):
    """Bad flags or configuration; exits with status 2."""


# ---------------------------------------------------------------- config files

TRAIN_DEFAULTS = {
    "embeddings": "",
    "sequences": "",
    "setting": "warm",
    "cold_fraction": "0.15",
    "min_length": "5",
    "variant": "whiten",
    "method": "zca",
    "groups": "4",
    "epsilon": "1e-5",
    "head_depth": "2",
    "combine": "sum",
    "d_model": "64",
    "blocks": "2",
    "heads": "2",
    "max_seq_len": "50",
    "dropout": "0.2",
    "learning_rate": "1e-3",
    "weight_decay": "0",
    "batch_size": "256",
    "max_epochs": "200",
    "patience": "10",
    "target_style": "all_positions",
    "k": "10,20,50",
    "seed": "",
}


def parse_config_text(text, allowed, source="<config>"):
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise UsageError(f"{source}:{lineno}: expected 'key = value'")
        if key not in allowed:
            raise UsageError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = value.strip()
    return out


def format_config(cfg):
    return "".join(f"{k} = {v}\n" for k, v in cfg.items())


def resolve_train_config(path, overrides=()):
    cfg = dict(TRAIN_DEFAULTS)
    cfg.update(parse_config_text(Path(path).read_text(encoding="utf-8"), TRAIN_DEFAULTS, str(path)))
    for item in overrides:
        cfg.update(parse_config_text(item, TRAIN_DEFAULTS, "--set"))
    if not cfg["seed"]:
        raise UsageError("seed is required")
    for key in ("embeddings", "sequences"):
        if not cfg[key] and not (key == "embeddings" and cfg["variant"] == "id"):
            raise UsageError(f"{key} is required")
    base = Path(path).parent
    for key in ("embeddings", "sequences"):
        if cfg[key] and not Path(cfg[key]).is_absolute():
            cfg[key] = str((base / cfg[key]).resolve())
    return cfg


def _int(cfg, key):
    try:
        return int(cfg[key])
    except ValueError:
        raise UsageError(f"{key} must be an integer, got {cfg[key]!r}") from None


def _float(cfg, key):
    try:
        return float(cfg[key])
    except ValueError:
        raise UsageError(f"{key} must be a number, got {cfg[key]!r}") from None


def _ks(text):
    try:
        ks = sorted({int(k) for k in str(text).split(",") if k.strip()})
    except ValueError:
        raise UsageError(f"invalid K list {text!r}") from None
    if not ks or ks[0] < 1:
        raise UsageError("K values must be positive integers")
    return ks


# ---------------------------------------------------------------- helpers

def _out_dir(path):
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"cannot write to output directory {path}: {exc.strerror or exc}") from exc
    return path


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def load_dataset(cfg, item_tokens=None):
    """Sequences, split and aligned features for a resolved training config."""
    emb = load_embeddings(cfg["embeddings"]) if cfg.get("embeddings") else None
    seqs = load_sequences(cfg["sequences"], min_length=_int(cfg, "min_length"),
                          item_vocab=emb.tokens if emb is not None else None)
    if item_tokens is not None:
        # re-express the filtered sequences in the trained model's item order
        pos = {t: i for i, t in enumerate(item_tokens)}
        if set(seqs.item_tokens) != set(pos):
            raise ConfigError("sequence file does not reproduce the id-map of the trained model")
        remap = np.array([pos[t] for t in seqs.item_tokens], dtype=np.int64)
        seqs.sequences = [remap[s] for s in seqs.sequences]
        seqs.item_tokens = list(item_tokens)
    if cfg["setting"] == "warm":
        data = leave_one_out(seqs.sequences, seqs.n_items)
    elif cfg["setting"] == "cold":
        data = cold_start_split(seqs.sequences, _float(cfg, "cold_fraction"),
                                seed=_int(cfg, "seed"), n_items=seqs.n_items)
    else:
        raise UsageError(f"setting must be 'warm' or 'cold', got {cfg['setting']!r}")
    data.item_tokens = seqs.item_tokens
    features = emb.reindex(seqs.item_tokens) if emb is not None else None
    return data, features


def estimator_from_config(cfg):
    return SeqRecommender(
        variant=cfg["variant"], whitening=cfg["method"], relaxed_groups=_int(cfg, "groups"),
        eps=_float(cfg, "epsilon"), head_depth=_int(cfg, "head_depth"), combine=cfg["combine"],
        d_model=_int(cfg, "d_model"), n_blocks=_int(cfg, "blocks"), n_heads=_int(cfg, "heads"),
        max_seq_len=_int(cfg, "max_seq_len"), dropout=_float(cfg, "dropout"),
        learning_rate=_float(cfg, "learning_rate"), weight_decay=_float(cfg, "weight_decay"),
        batch_size=_int(cfg, "batch_size"), max_epochs=_int(cfg, "max_epochs"),
        patience=_int(cfg, "patience"), target_style=cfg["target_style"],
        random_state=_int(cfg, "seed"))


def attach_geometry(report, model, dataset, split):
    """Add alignment/uniformity of eval users and items plus the item-matrix condition number."""
    users, prefixes, targets = dataset.eval_split(split)
    V = model.item_matrix()
    S = model.user_vectors(prefixes)
    u = diag.alignment_uniformity(S, V, np.column_stack([np.arange(len(users)), targets]))
    cond = diag.condition_number(V)
    report.extras.update({"l_align": u.l_align, "l_uniform_user": u.l_uniform_user,
                          "l_uniform_item": u.l_uniform_item,
                          "condition_number": cond.condition_number})
    return report


def _write_report(out, report):
    name = f"eval_{report.split}"
    (out / f"{name}.txt").write_text(report.to_text(), encoding="utf-8")
    (out / f"{name}.csv").write_text(report.csv_header() + "\n" + report.csv_row() + "\n",
                                     encoding="utf-8")


# ---------------------------------------------------------------- commands

def cmd_synth(args):
    out = _out_dir(args.out_dir)
    X = gen_anisotropic_embeddings(args.items, args.dim, args.target_cosine, seed=args.seed)
    seqs = gen_sequences(X, args.users, args.mean_len, seed=args.seed)
    item_tokens = [f"i{i:05d}" for i in range(args.items)]
    user_tokens = [f"u{u:05d}" for u in range(args.users)]
    save_embeddings(out / "embeddings.txt", item_tokens, X)
    save_sequences(out / "sequences.txt", user_tokens, seqs, item_tokens)
    save_id_map(out / "id_map.txt", item_tokens)
    resolved = {"items": args.items, "users": args.users, "dim": args.dim,
                "target_cosine": args.target_cosine, "mean_len": args.mean_len, "seed": args.seed}
    (out / "config.txt").write_text(format_config(resolved), encoding="utf-8")
    manifest = dict(resolved)
    manifest["mean_cosine"] = repr(diag.mean_pairwise_cosine(X))
    manifest["interactions"] = int(sum(len(s) for s in seqs))
    (out / "manifest.txt").write_text(format_config(manifest), encoding="utf-8")
    print(f"mean_cosine = {manifest['mean_cosine']}")
    return 0


def cmd_diagnose(args):
    out = _out_dir(args.out_dir)
    emb = load_embeddings(args.embeddings)
    X = emb.matrix
    spectrum = diag.singular_spectrum(X).normalized_singular_values
    grid = np.linspace(-1.0, 1.0, args.grid_points)
    thresholds, fractions = diag.cosine_cdf(X, grid)
    cond = diag.condition_number(X)
    report = {
        "items": X.shape[0], "dim": X.shape[1],
        "mean_cosine": repr(diag.mean_pairwise_cosine(X)),
        "condition_number": repr(cond.condition_number),
        "lambda_max": repr(cond.lambda_max), "lambda_min": repr(cond.lambda_min),
        "lambda_min_clamped": cond.clamped,
        "l_uniform_item": repr(diag.uniformity(X)),
    }
    (out / "report.txt").write_text(format_config(report), encoding="utf-8")
    (out / "config.txt").write_text(format_config(
        {"embeddings": args.embeddings, "grid_points": args.grid_points, "svg": args.svg}),
        encoding="utf-8")
    _write_csv(out / "spectrum.csv", ["index", "normalized_singular_value"],
               [(i + 1, float(v)) for i, v in enumerate(spectrum)])
    _write_csv(out / "cdf.csv", ["threshold", "fraction"],
               [(float(t), float(f)) for t, f in zip(thresholds, fractions)])
    if args.svg:
        idx = list(range(1, len(spectrum) + 1))
        (out / "spectrum.svg").write_text(line_chart_svg(
            {"spectrum": (idx, list(spectrum))}, "Normalized singular values",
            "index", "value"), encoding="utf-8")
        (out / "cdf.svg").write_text(line_chart_svg(
            {"cdf": (list(thresholds), list(fractions))}, "Pairwise cosine CDF",
            "cosine similarity", "fraction of pairs"), encoding="utf-8")
    print(f"mean_cosine = {report['mean_cosine']}")
    print(f"condition_number = {report['condition_number']}")
    return 0


def cmd_whiten(args):
    emb = load_embeddings(args.embeddings)
    d = emb.dim
    if args.groups < 1 or d % args.groups:
        raise UsageError(f"--groups {args.groups} does not divide dim {d}; "
                         f"valid divisors: {', '.join(map(str, valid_group_counts(d)))}")
    w = Whitener(method=args.method, n_groups=args.groups, eps=args.epsilon)
    Z = w.fit_transform(emb.matrix)
    out = Path(args.out)
    if out.parent and not out.parent.exists():
        _out_dir(out.parent)
    save_embeddings(out, emb.tokens, Z)
    report = verify_whitening(w, Z, tol=args.tol)
    stats = [f"method = {args.method}", f"groups = {args.groups}", f"epsilon = {args.epsilon!r}",
             f"embeddings = {args.embeddings}"] + report.lines()
    Path(str(out) + ".stats").write_text("\n".join(stats) + "\n", encoding="utf-8")
    print(f"max_deviation = {report.max_deviation:.3e}")
    return 0


def cmd_train(args):
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"seed = {args.seed}")
    cfg = resolve_train_config(args.config, overrides)
    out = _out_dir(args.out_dir or Path(args.config).parent / "run")
    (out / "config.txt").write_text(format_config(cfg), encoding="utf-8")
    data, features = load_dataset(cfg)
    model = estimator_from_config(cfg)
    rows = []

    def record(epoch, history):
        rows.append((epoch, history.loss[-1], history.val_ndcg[-1], history.kappa[-1]))
        logger.info("epoch %d loss %.5f val_ndcg@20 %.5f kappa %.3e", *rows[-1])

    model.fit(data, features, epoch_callback=record)
    (out / "history.csv").write_text(model.history_.to_csv(), encoding="utf-8")
    save_id_map(out / "id_map.txt", data.item_tokens)
    meta = {"setting": cfg["setting"], "cold_fraction": cfg["cold_fraction"],
            "seed": cfg["seed"], "min_length": cfg["min_length"],
            "best_epoch": model.history_.best_epoch, "stopped_epoch": model.history_.stopped_epoch}
    save_checkpoint(out / "checkpoint.bin", model.net_, meta)
    pop = PopularityRecommender().fit(data)
    summary = {
        "variant": cfg["variant"],
        "best_epoch": model.history_.best_epoch,
        "stopped_epoch": model.history_.stopped_epoch,
        "best_val_ndcg@20": repr(max(model.history_.val_ndcg)),
        "popularity_val_ndcg@20": repr(evaluate(pop, data, "valid", [20]).ndcg[20]),
        "n_parameters": model.n_parameters_,
    }
    (out / "summary.txt").write_text(format_config(summary), encoding="utf-8")
    if args.svg:
        ep = list(range(1, len(model.history_.loss) + 1))
        (out / "kappa.svg").write_text(line_chart_svg(
            {cfg["variant"]: (ep, model.history_.kappa)}, "Item matrix condition number",
            "epoch", "kappa", logy=True), encoding="utf-8")
        (out / "loss.svg").write_text(line_chart_svg(
            {cfg["variant"]: (ep, model.history_.loss)}, "Training loss", "epoch", "loss"),
            encoding="utf-8")
    print(format_config(summary), end="")
    return 0


def cmd_eval(args):
    net, meta = load_checkpoint(args.checkpoint)
    run_dir = Path(args.checkpoint).parent
    id_map = Path(args.id_map) if args.id_map else run_dir / "id_map.txt"
    item_tokens = load_id_map(id_map)
    cfg = {"sequences": args.sequences, "embeddings": "",
           "min_length": meta.get("min_length", "5"),
           "setting": args.setting or meta.get("setting", "warm"),
           "cold_fraction": args.cold_fraction or meta.get("cold_fraction", "0.15"),
           "seed": str(args.seed if args.seed is not None else meta.get("seed", "0"))}
    data, _ = load_dataset(cfg, item_tokens=item_tokens)
    if data.n_items != net.config.n_items:
        raise ConfigError(f"dataset has {data.n_items} items, checkpoint expects {net.config.n_items}")
    model = SeqRecommender.from_network(net)
    report = evaluate(model, data, args.split, _ks(args.k))
    report.split = args.split
    attach_geometry(report, model, data, args.split)
    out = _out_dir(args.out_dir or run_dir)
    resolved = dict(cfg, checkpoint=args.checkpoint, split=args.split, k=args.k)
    (out / f"eval_{args.split}_config.txt").write_text(format_config(resolved), encoding="utf-8")
    _write_report(out, report)
    print(report.to_text(), end="")
    return 0


def _metric_columns(header):
    return [h for h in header if h.startswith(("recall@", "ndcg@"))]


def cmd_report(args):
    rows = []
    header = None
    for run in args.run_dirs:
        path = Path(run) / f"eval_{args.split}.txt"
        if not path.exists():
            raise FileNotFoundError(f"missing evaluation report {path}")
        values = parse_report_text(path.read_text(encoding="utf-8"))
        values = {"run": Path(run).name, **values}
        if header is None:
            header = list(values)
        elif list(values) != header:
            extra = [k for k in values if k not in header]
            header += extra
        rows.append(values)
    out = _out_dir(args.out_dir)
    with open(out / "report.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([r.get(h, "") for h in header])
    best = []
    for col in _metric_columns(header):
        vals = [(float(r[col]), i) for i, r in enumerate(rows) if r.get(col, "") != ""]
        top = max(vals, key=lambda t: (t[0], -t[1]))
        best.append((col, rows[top[1]]["run"], rows[top[1]][col]))
    with open(out / "best.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "best_run", "value"])
        w.writerows(best)
    (out / "config.txt").write_text(format_config(
        {"run_dirs": ",".join(args.run_dirs), "split": args.split}), encoding="utf-8")
    print((out / "report.csv").read_text(encoding="utf-8"), end="")
    return 0


# ---------------------------------------------------------------- parser

def build_parser():
    p = argparse.ArgumentParser(prog="whitenrec", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate anisotropic embeddings and interaction sequences")
    s.add_argument("--items", type=int, default=500)
    s.add_argument("--users", type=int, default=2000)
    s.add_argument("--dim", type=int, default=64)
    s.add_argument("--target-cosine", type=float, default=0.8)
    s.add_argument("--mean-len", type=float, default=10)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("diagnose", help="cosine, spectrum and conditioning diagnostics")
    s.add_argument("embeddings")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--grid-points", type=int, default=201)
    s.add_argument("--svg", action="store_true")
    s.set_defaults(func=cmd_diagnose)

    s = sub.add_parser("whiten", help="whiten an embedding file")
    s.add_argument("embeddings")
    s.add_argument("--method", choices=[m.value for m in WhiteningMethod], default="zca")
    s.add_argument("--groups", type=int, default=1)
    s.add_argument("--epsilon", type=float, default=1e-5)
    s.add_argument("--tol", type=float, default=1e-8)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_whiten)

    s = sub.add_parser("train", help="train a model from a key = value config file")
    s.add_argument("config")
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    s.add_argument("--seed", type=int, help="shorthand for --set seed=N")
    s.add_argument("--out-dir")
    s.add_argument("--svg", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint on the validation or test split")
    s.add_argument("checkpoint")
    s.add_argument("--sequences", required=True)
    s.add_argument("--split", choices=["valid", "test"], default="test")
    s.add_argument("--k", default="10,20,50")
    s.add_argument("--id-map")
    s.add_argument("--setting", choices=["warm", "cold"])
    s.add_argument("--cold-fraction")
    s.add_argument("--seed", type=int)
    s.add_argument("--out-dir")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("report", help="merge evaluation reports of several runs into one table")
    s.add_argument("run_dirs", nargs="+")
    s.add_argument("--split", choices=["valid", "test"], default="test")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        threads = int(os.environ.get(THREADS_ENV, "1"))
    except ValueError:
        parser.error(f"{THREADS_ENV} must be an integer")
    try:
        with threadpool_limits(limits=max(threads, 1)):
            return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"whitenrec {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (WhitenRecError, OSError, ValueError, KeyError) as exc:
        print(f"whitenrec {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
