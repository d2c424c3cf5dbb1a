"""Command-line entry point: ``mfckge <command> ...``.

Exit codes: 0 on success, 1 on runtime errors, 2 on usage errors.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import PRESETS, TrainConfig, load_config_file
from .decoupler import CSV_HEADER, recompress
from .errors import MFCKGEError
from .evaluator import (compression_csv, compression_report, evaluate_all, export_importance_heatmap,
                        heatmap_csv, lifelong_run)
from .inference import FilterIndex, Predictor, Query
from .kg import accumulated_filter_set, load_growing_kg
from .oracle import brute_force_rank
from .store import checkpoint_digest, load_checkpoint, save_checkpoint
from .synthgen import SynthSpec, dataset_stats, stats_csv, synthesize_growing_kg

log = logging.getLogger("mfckge")

# flag -> (config field, type)
_CONFIG_FLAGS = {
    "theta": ("theta", float), "k": ("top_k", int), "margin": ("margin", float), "alpha": ("alpha", float),
    "eta": ("eta", float), "dim": ("dim", int), "lr": ("learning_rate", float), "batch": ("batch_size", int),
    "seed": ("seed", int), "norm": ("norm", int), "epochs": ("max_epochs", int), "eval_every": ("eval_every", int),
    "patience": ("patience", int), "negatives": ("negatives_per_positive", int), "incidence": ("incidence", str),
    "workers": ("workers", int),
}
_SWITCHES = {"keep_dropped": ("keep_dropped", True), "no_decoupling": ("decoupling", False),
             "uniform_importance": ("importance", False), "no_renorm": ("renorm", False)}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _config_args(p: argparse.ArgumentParser, training: bool = True):
    g = p.add_argument_group("configuration")
    g.add_argument("--config", metavar="FILE", help="key = value file; flags override it")
    g.add_argument("--preset", choices=sorted(PRESETS), default=None,
                   help="base settings: 'full' (large-scale defaults) or 'desk' (small synthetic runs)")
    g.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
    names = _CONFIG_FLAGS if training else {k: v for k, v in _CONFIG_FLAGS.items()
                                             if k in ("k", "incidence", "workers", "norm")}
    for flag, (_field, typ) in names.items():
        g.add_argument("--" + flag.replace("_", "-"), dest=flag, type=typ, default=None)
    switches = _SWITCHES if training else {k: v for k, v in _SWITCHES.items() if k != "keep_dropped"}
    for flag in switches:
        g.add_argument("--" + flag.replace("_", "-"), dest=flag, action="store_true")


def resolve_config(args, base: TrainConfig | None = None) -> TrainConfig:
    """Preset (or the checkpoint's stored config) < config file < MFCKGE_SEED < flags."""
    if getattr(args, "preset", None):
        cfg = PRESETS[args.preset].replace(workers=0)
    elif base is not None:
        cfg = base
    else:
        cfg = PRESETS["full"].replace(workers=0)  # evaluation uses every core unless told otherwise
    if getattr(args, "config", None):
        cfg = TrainConfig.from_dict({**cfg.to_dict(), **load_config_file(args.config)})
    changes = {}
    env_seed = os.environ.get("MFCKGE_SEED")
    if env_seed and getattr(args, "seed", None) is None:
        try:
            changes["seed"] = int(env_seed)
        except ValueError:
            raise MFCKGEError(f"MFCKGE_SEED is not an integer: {env_seed!r}") from None
    for flag, (field, _typ) in _CONFIG_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            changes[field] = v
    for flag, (field, value) in _SWITCHES.items():
        if getattr(args, flag, False):
            changes[field] = value
    return cfg.replace(**changes) if changes else cfg


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(out_dir: Path, command: str, argv, config: TrainConfig | None, dataset=None,
                    kg=None, ckpt=None, outputs=()):
    data = {"tool": "mfckge", "version": __version__, "command": command, "argv": list(argv)}
    if config is not None:
        data["config"] = config.to_dict()
        data["seed"] = config.seed
    if dataset is not None:
        data["dataset"] = str(Path(dataset).resolve())
        data["dataset_sha256"] = kg.checksum() if kg is not None else None
    if ckpt is not None:
        data["checkpoint"] = str(Path(ckpt).resolve())
        data["checkpoint_sha256"] = checkpoint_digest(ckpt)
    data["outputs"] = {name: _sha256_file(out_dir / name) for name in outputs}
    path = out_dir / "run.json"
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


# -- commands ----------------------------------------------------------------

def cmd_stats(args):
    sys.stdout.write(stats_csv(dataset_stats(args.dataset)))
    return 0


def cmd_synthesize(args):
    spec = SynthSpec.from_file(args.spec)
    if args.seed is not None:
        spec = SynthSpec.from_dict({**spec.to_dict(), "seed": args.seed})
    out = synthesize_growing_kg(spec, args.out)
    sys.stdout.write(stats_csv(dataset_stats(out)))
    return 0


def cmd_train(args):
    cfg = resolve_config(args)
    if args.print_config:
        sys.stdout.write(cfg.to_text())
        return 0
    kg = load_growing_kg(args.dataset)
    out = Path(args.out)
    res = lifelong_run(kg, cfg, evaluate=not args.no_eval)
    res.store.meta.update({"config": cfg.to_dict(), "dataset_sha256": kg.checksum()})
    save_checkpoint(res.store, out)
    outputs = ["manifest.json", "decoupling.csv"]
    (out / "decoupling.csv").write_text(
        CSV_HEADER + "\n" + "".join(s.csv_row() + "\n" for s in res.decoupling), encoding="utf-8")
    if not args.no_eval:
        (out / "metrics.csv").write_text(res.metrics.to_csv(), encoding="utf-8")
        outputs.append("metrics.csv")
    _write_manifest(out, "train", args.argv, cfg, args.dataset, kg, out, outputs)
    last = res.metrics.aggregate(kg.n_snapshots) if not args.no_eval else None
    if last is not None:
        print(f"trained {kg.n_snapshots} snapshots; final aggregate MRR {last.mrr:.4f} "
              f"Hits@10 {last.hits_at(10):.4f}")
    else:
        print(f"trained {kg.n_snapshots} snapshots")
    return 0


def _stored_config(store) -> TrainConfig:
    stored = store.meta.get("config")
    return TrainConfig.from_dict(stored) if stored else TrainConfig(dim=store.dim)


def cmd_evaluate(args):
    store = load_checkpoint(args.ckpt)
    cfg = resolve_config(args, _stored_config(store))
    if args.print_config:
        sys.stdout.write(cfg.to_text())
        return 0
    kg = load_growing_kg(args.dataset)
    out = Path(args.out)
    os.makedirs(out, exist_ok=True)
    metrics = evaluate_all(store, kg, cfg)
    (out / "metrics.csv").write_text(metrics.to_csv(), encoding="utf-8")
    _write_manifest(out, "evaluate", args.argv, cfg, args.dataset, kg, args.ckpt, ["metrics.csv"])
    agg = metrics.aggregate(store.n_snapshots)
    print(f"aggregate MRR {agg.mrr:.4f} Hits@1 {agg.hits_at(1):.4f} Hits@10 {agg.hits_at(10):.4f} "
          f"over {agg.n_queries} queries" + (f" ({agg.skipped} test facts skipped)" if agg.skipped else ""))
    return 0


def cmd_recompress(args):
    store = load_checkpoint(args.ckpt)
    stats = recompress(store, args.theta)
    out = Path(args.out or args.ckpt)
    save_checkpoint(store, out)
    sys.stdout.write(CSV_HEADER + "\n" + "".join(s.csv_row() + "\n" for s in stats))
    return 0


def _parse_query(text: str, kg, i: int) -> Query:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 3 or (parts[0] == "?") == (parts[2] == "?"):
        raise MFCKGEError(f"query must look like 'h,r,?' or '?,r,t': {text!r}")
    try:
        r = kg.relation_id(parts[1])
        if parts[2] == "?":
            return Query.tail(kg.entity_id(parts[0]), r, i)
        return Query.head(r, kg.entity_id(parts[2]), i)
    except KeyError as exc:
        raise MFCKGEError(f"unknown label {exc.args[0]!r}") from None


def _check_query(q: Query, kg):
    if q.anchor not in kg.entities(q.snapshot) or q.relation not in kg.relations(q.snapshot):
        raise MFCKGEError(f"query anchor or relation is not part of snapshot {q.snapshot}")


def _inference_setup(args):
    store = load_checkpoint(args.ckpt)
    cfg = resolve_config(args, _stored_config(store))
    kg = load_growing_kg(args.dataset)
    i = args.snapshot or store.n_snapshots
    if not 1 <= i <= store.n_snapshots:
        raise MFCKGEError(f"snapshot {i} outside 1..{store.n_snapshots}")
    return store, cfg, kg, i


def cmd_predict(args):
    store, cfg, kg, i = _inference_setup(args)
    if args.print_config:
        sys.stdout.write(cfg.to_text())
        return 0
    predictor = Predictor(kg, store, cfg)
    filter_triples = accumulated_filter_set(kg, i)
    filters = FilterIndex(filter_triples)
    status = 0
    for text in args.query:
        q = _parse_query(text, kg, i)
        _check_query(q, kg)
        scores, ok = predictor.score_all(q)
        per = predictor.snapshot_scores(q)
        keep = np.zeros(len(ok), dtype=bool)
        keep[predictor.candidate_ids(i)] = True
        top = predictor.top(scores, keep & ok, args.m)
        rec = {
            "direction": q.direction,
            "anchor": kg.entity_labels[q.anchor],
            "relation": kg.relation_labels[q.relation],
            "snapshot": i,
            "beta": [round(float(b), 6) for b in predictor.weights(q)],
            "top": [{"entity": kg.entity_labels[e], "score": round(s, 6),
                     "per_snapshot": [round(float(ps[e]), 6) if on[e] else None for ps, on in per]}
                    for e, s in top],
        }
        if args.verify:
            gold = kg.entity_id(args.gold) if args.gold else (top[0][0] if top else None)
            if gold is None:
                raise MFCKGEError("nothing to verify: no scorable candidate")
            main = predictor.rank(q, gold, filters, m=0).rank
            ref = brute_force_rank(q, gold, filter_triples, kg, store, cfg)
            rec["verify"] = {"gold": kg.entity_labels[gold], "rank": main, "oracle_rank": ref, "agree": main == ref}
            if main != ref:
                status = 1
        print(json.dumps(rec))
    return status


def cmd_explain(args):
    store, cfg, kg, i = _inference_setup(args)
    if args.print_config:
        sys.stdout.write(cfg.to_text())
        return 0
    predictor = Predictor(kg, store, cfg)
    for text in args.query:
        q = _parse_query(text, kg, i)
        _check_query(q, kg)
        rec = predictor.explain(q, args.m)
        rec["anchor"] = kg.entity_labels[q.anchor]
        rec["relation"] = kg.relation_labels[q.relation]
        for row in rec["per_snapshot"] + [{"top": rec["final"]}]:
            for item in row["top"]:
                item["entity"] = kg.entity_labels[item["entity"]]
        print(json.dumps(rec))
    return 0


def cmd_report(args):
    store = load_checkpoint(args.ckpt)
    cfg = resolve_config(args, _stored_config(store))
    if args.print_config:
        sys.stdout.write(cfg.to_text())
        return 0
    kg = load_growing_kg(args.dataset)
    out = Path(args.out)
    os.makedirs(out, exist_ok=True)
    if args.kind == "heatmap":
        name = "heatmap.csv"
        (out / name).write_text(heatmap_csv(export_importance_heatmap(kg, store, cfg)), encoding="utf-8")
    else:
        name = "compression.csv"
        thetas = [float(x) for x in args.thetas.split(",")]
        (out / name).write_text(compression_csv(compression_report(kg, store, cfg, thetas)), encoding="utf-8")
    _write_manifest(out, f"report {args.kind}", args.argv, cfg, args.dataset, kg, args.ckpt, [name])
    sys.stdout.write((out / name).read_text(encoding="utf-8"))
    return 0


def cmd_replay(args):
    """Re-run a recorded train/evaluate/report command into a new directory and compare outputs."""
    manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    recorded = manifest["command"].split()
    cfg = TrainConfig.from_dict(manifest["config"])
    out = Path(args.out)
    os.makedirs(out, exist_ok=True)
    cfg_file = out / "replay.cfg"
    cfg_file.write_text(cfg.to_text(), encoding="utf-8")
    argv = recorded + ["--dataset", manifest["dataset"], "--config", str(cfg_file)]
    if recorded[0] == "train":
        argv += ["--out", str(out)]
    else:
        argv += ["--ckpt", manifest["checkpoint"], "--out", str(out)]
    if recorded[0] == "report" and recorded[1] == "compression":
        argv += ["--thetas", _argv_value(manifest["argv"], "--thetas")]
    kg = load_growing_kg(manifest["dataset"])
    if manifest.get("dataset_sha256") and kg.checksum() != manifest["dataset_sha256"]:
        raise MFCKGEError("dataset content differs from the recorded checksum")
    status = main(argv)
    if status:
        return status
    mismatched = [name for name, digest in manifest["outputs"].items() if _sha256_file(out / name) != digest]
    for name in manifest["outputs"]:
        print(f"{name}: {'differs' if name in mismatched else 'identical'}")
    return 1 if mismatched else 0


def _argv_value(argv, flag):
    for k, a in enumerate(argv):
        if a == flag:
            return argv[k + 1]
        if a.startswith(flag + "="):
            return a.split("=", 1)[1]
    raise MFCKGEError(f"{flag} missing from the recorded command line")


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mfckge", description="Continual KG embedding with decoupled snapshot spaces.")
    p.add_argument("--version", action="version", version=f"mfckge {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("stats", help="per-snapshot entity/relation/new-fact counts")
    s.add_argument("dataset")
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("synthesize", help="generate a synthetic growing KG")
    s.add_argument("--spec", required=True, help="JSON generator spec")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=None)
    s.set_defaults(func=cmd_synthesize)

    s = sub.add_parser("train", help="lifelong training, decoupling and evaluation")
    s.add_argument("--dataset", required=True)
    s.add_argument("--out", required=True, help="checkpoint directory")
    s.add_argument("--no-eval", action="store_true", help="skip per-snapshot evaluation")
    _config_args(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="filtered metrics of a checkpoint on all test sets")
    s.add_argument("--dataset", required=True)
    s.add_argument("--ckpt", required=True)
    s.add_argument("--out", required=True)
    _config_args(s, training=False)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("recompress", help="re-derive pointer decisions at a new threshold")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--theta", type=float, required=True)
    s.add_argument("--out", default=None, help="write here instead of in place")
    s.set_defaults(func=cmd_recompress)

    for name, func, help_ in (("predict", cmd_predict, "rank candidates for queries"),
                              ("explain", cmd_explain, "per-snapshot breakdown of queries")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--ckpt", required=True)
        s.add_argument("--dataset", required=True)
        s.add_argument("--query", required=True, action="append", help="'h,r,?' or '?,r,t' (repeatable)")
        s.add_argument("--snapshot", type=int, default=None, help="evaluation snapshot (default: last)")
        s.add_argument("-m", type=int, default=10 if name == "predict" else 3, help="list length")
        if name == "predict":
            s.add_argument("--verify", action="store_true", help="cross-check the rank with the brute-force oracle")
            s.add_argument("--gold", default=None, help="entity to rank under --verify (default: top prediction)")
        _config_args(s, training=False)
        s.set_defaults(func=func)

    s = sub.add_parser("report", help="importance heatmap or compression sweep")
    s.add_argument("kind", choices=("heatmap", "compression"))
    s.add_argument("--dataset", required=True)
    s.add_argument("--ckpt", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--thetas", default="0.9,0.94,0.97,0.99,1.0")
    _config_args(s, training=False)
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("replay", help="re-run a recorded manifest and compare outputs")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (MFCKGEError, OSError, ValueError, KeyError) as exc:
        print(f"mfckge: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
