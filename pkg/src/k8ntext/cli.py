"""Command-line entry point wiring the pipeline together:

    k8ntext generate | parse | train | infer | cluster | query | serve
             | eval | stats

Exit codes: 0 success, 1 query without matches, 2 query syntax error,
3 configuration error, 4 I/O error, 5 model error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import labels
from .events import ParseReport, export_to, read_file
from .features import FeatureManifest
from .model import DivergedLoss, EmptyTrainingSet, TrainConfig
from .model.network import CheckpointError

EXIT_OK = 0
EXIT_NO_MATCH = 1
EXIT_QUERY_SYNTAX = 2
EXIT_CONFIG = 3
EXIT_IO = 4
EXIT_MODEL = 5

CONFIG_ENV = "K8NTEXT_CONFIG"


class ConfigError(ValueError):
    pass


def _load_inputs(args):
    registry = labels.build_registry(getattr(args, "catalog", None))
    manifest_path = getattr(args, "manifest", None)
    manifest = FeatureManifest.from_file(manifest_path) if manifest_path else FeatureManifest.default()
    return registry, manifest


def _load_corpus(args, registry, manifest):
    from .generate import load_external

    store, truth, report = load_external(args.input, registry, manifest)
    if report.errors:
        print(f"warning: {len(report.errors)} malformed lines skipped", file=sys.stderr)
    return store, truth


def _require_truth(args, truth):
    truth_path = getattr(args, "truth", None)
    if truth_path:
        from .generate import GroundTruth

        return GroundTruth.read(truth_path)
    if truth is None:
        raise ConfigError("no ground-truth side-car found; pass --truth")
    return truth


def cmd_generate(args):
    from .generate import generate_corpus, write_corpus

    mix = args.mix
    if mix and os.path.exists(mix):
        with open(mix, encoding="utf-8") as fh:
            mix = json.load(fh)
    store, truth, lines = generate_corpus(
        mix, interleave=args.interleave, seed=args.seed, duration=args.duration
    )
    events_path, truth_path = write_corpus(args.out, store, truth, lines)
    print(f"wrote {len(store)} events to {events_path}")
    print(f"wrote ground truth to {truth_path}")
    return EXIT_OK


def cmd_parse(args):
    registry, manifest = _load_inputs(args)
    report = ParseReport()
    store = read_file(args.input, registry, manifest, report)
    with open(args.out, "wb") as fh:
        count = export_to(fh, store, None, "raw")
    print(f"parsed {report.parsed} events ({report.skipped} skipped, "
          f"{len(report.errors)} malformed, {store.dup_count} duplicates); wrote {count}")
    for error in report.errors[:10]:
        print(f"  {error}", file=sys.stderr)
    return EXIT_OK


def cmd_train(args):
    from .pipeline import Pipeline

    registry, manifest = _load_inputs(args)
    store, truth = _load_corpus(args, registry, manifest)
    truth = _require_truth(args, truth)
    pipe = Pipeline.train_from_store(
        store,
        truth,
        window=args.window,
        registry=registry,
        manifest=manifest,
        max_epochs=args.epochs,
        gamma=args.gamma,
        seed=args.seed,
        train_stride=args.stride,
    )
    pipe.save(args.out)
    history = pipe.labeler.train_result_.as_dict()
    print(f"trained {len(history['epochs'])} epochs; best val loss "
          f"{history['best_val_loss']:.4f} at epoch {history['best_epoch']}")
    print(f"checkpoint written to {args.out}")
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            json.dump(history, fh, indent=1)
        print(f"history written to {args.report}")
    return EXIT_OK


def cmd_infer(args):
    from .pipeline import Pipeline

    registry, manifest = _load_inputs(args)
    store, _ = _load_corpus(args, registry, manifest)
    pipe = Pipeline.load(args.model, registry)
    contexts, warnings = pipe.label_and_cluster(store)
    with open(args.out, "wb") as fh:
        count = export_to(fh, store, contexts, args.format)
    print(f"labeled {len(store)} lines into {len(contexts)} contexts; "
          f"wrote {count} {args.format} records to {args.out}")
    if warnings:
        print(f"{len(warnings)} clustering warnings", file=sys.stderr)
    return EXIT_OK


def cmd_cluster(args):
    from .clustering import predictions_from_truth, reconstruct

    registry, manifest = _load_inputs(args)
    store, truth = _load_corpus(args, registry, manifest)
    truth = _require_truth(args, truth)
    contexts, warnings = reconstruct(store, predictions_from_truth(store, truth), registry)
    with open(args.out, "wb") as fh:
        count = export_to(fh, store, contexts, args.format)
    print(f"built {len(contexts)} contexts; wrote {count} {args.format} records")
    return EXIT_OK


def cmd_query(args):
    from .clustering import predictions_from_truth, reconstruct
    from .pipeline import Pipeline
    from .query import eval_query, parse_query

    ast = parse_query(args.expr)
    registry, manifest = _load_inputs(args)
    store, truth = _load_corpus(args, registry, manifest)
    if args.model:
        pipe = Pipeline.load(args.model, registry)
        contexts, _ = pipe.label_and_cluster(store)
    else:
        truth = _require_truth(args, truth)
        contexts, _ = reconstruct(store, predictions_from_truth(store, truth), registry)
    matches = eval_query(ast, contexts, store)
    out = sys.stdout.buffer
    for chunk in _export_chunks(store, matches, args.format):
        out.write(chunk)
    out.flush()
    return EXIT_OK if matches else EXIT_NO_MATCH


def _export_chunks(store, contexts, fmt):
    from .events import export

    if fmt == "compact":
        yield from export(store, contexts, "compact")
    else:
        member_ids = set()
        for ctx in contexts:
            member_ids.update(ctx.members)
        for event in store:
            if event.audit_id in member_ids:
                yield event.serialize().encode() + b"\n"


def cmd_serve(args):
    from .events import EventStore
    from .pipeline import Pipeline, StreamingLabeler
    from .webhook import AuditWebhookServer

    registry, manifest = _load_inputs(args)
    host, _, port = args.bind.rpartition(":")
    store = EventStore()

    on_accept = None
    label_out = None
    if args.model:
        pipe = Pipeline.load(args.model, registry)
        streamer = StreamingLabeler(pipe)
        label_out = open(args.out, "a", encoding="utf-8") if args.out else sys.stdout

        def on_accept(events):
            for event in events:
                for done_event, tuple_label, conf in streamer.feed(event):
                    label_out.write(json.dumps({
                        "audit_id": done_event.audit_id,
                        "label": labels.encode_tuple(tuple_label),
                        "confidence": round(conf, 4),
                    }) + "\n")
            label_out.flush()

    server = AuditWebhookServer(store, registry, manifest,
                                host=host or "127.0.0.1", port=int(port), on_accept=on_accept)
    addr = server.address
    print(f"listening on http://{addr[0]}:{addr[1]}/audit (Ctrl-C to stop)")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
        if args.store_out:
            with open(args.store_out, "wb") as fh:
                export_to(fh, store, None, "raw")
            print(f"stored {len(store)} events to {args.store_out}")
    return EXIT_OK


def cmd_eval(args):
    from . import evaluate

    registry, manifest = _load_inputs(args)
    store, truth = _load_corpus(args, registry, manifest)
    truth = _require_truth(args, truth)
    cfg = TrainConfig(max_epochs=args.epochs, seed=args.seed, train_stride=args.stride,
                      gamma=args.gamma)

    if args.eval_cmd == "sweep":
        w_values = [int(w) for w in args.windows.split(",")]
        rows = evaluate.window_sweep(store, truth, w_values, trials=args.trials, cfg=cfg)
        payload = [r.as_dict() for r in rows]
        for row in rows:
            print(f"W={row.w}: F1 {row.mean_f1:.4f} ± {row.std_f1:.4f}  "
                  f"train {row.mean_train_s:.1f} ± {row.std_train_s:.1f} s")
    elif args.eval_cmd == "ablate":
        paths = args.paths.split(",") if args.paths else None
        payload = evaluate.feature_ablation(store, truth, manifest, w=args.window,
                                            cfg=cfg, paths=paths)
        print(f"baseline F1 {payload['baseline_f1']:.4f}")
        for path, delta in sorted(payload["deltas"].items(), key=lambda kv: kv[1]):
            print(f"  {path}: {delta:+.4f}")
    elif args.eval_cmd == "kfold":
        accs = evaluate.kfold_eval(store, truth, k=args.k, w=args.window, cfg=cfg)
        payload = {"k": args.k, "fold_accuracy": accs}
        for i, acc in enumerate(accs):
            print(f"fold {i}: majority accuracy {acc:.4f}")
    else:  # cluster-stats
        report = evaluate.context_report(store, truth, registry)
        payload = {"bins": report["bins"],
                   "rand_agreement": report["rand_agreement"],
                   "trigger_accuracy": report["trigger_accuracy"]}
        print(json.dumps(payload, indent=1))

    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=1)
    return EXIT_OK


def cmd_stats(args):
    from . import evaluate
    from .clustering import predictions_from_truth, reconstruct

    registry, manifest = _load_inputs(args)
    store, truth = _load_corpus(args, registry, manifest)
    passthrough = sum(1 for e in store if e.passthrough)
    control = sum(1 for e in store if e.is_control_plane())
    print(f"events: {len(store)} (control-plane {control}, passthrough {passthrough}, "
          f"duplicates dropped {store.dup_count})")
    if truth is not None:
        contexts, _ = reconstruct(store, predictions_from_truth(store, truth), registry)
        bins = evaluate.clustering_stats(contexts)
        print(f"contexts: {len(contexts)}")
        for name, count in bins.items():
            print(f"  {name} lines: {count} labels")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="k8ntext",
        description="Reconstruct contexts from Kubernetes audit logs.",
    )
    sub = parser.add_subparsers(dest="cmd", required=True)

    def common_io(p, needs_out=True):
        p.add_argument("--in", dest="input", required=True, help="corpus file or directory")
        if needs_out:
            p.add_argument("--out", required=True)
        p.add_argument("--manifest", help="feature manifest file")
        p.add_argument("--catalog", help="action catalog file")
        p.add_argument("--truth", help="ground-truth side-car (overrides auto-discovery)")

    p = sub.add_parser("generate", help="generate a synthetic corpus with ground truth")
    p.add_argument("--mix", default="default", help="preset name or mix JSON file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--duration", type=float, help="corpus duration in seconds")
    p.add_argument("--interleave", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("parse", help="parse and normalize a raw audit stream")
    common_io(p)
    p.set_defaults(fn=cmd_parse)

    p = sub.add_parser("train", help="train the sequence labeler")
    common_io(p)
    p.add_argument("--window", type=int, default=60)
    p.add_argument("--epochs", type=int, default=130)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gamma", type=float, default=2.0)
    p.add_argument("--stride", type=int, default=1, help="training window subsampling stride")
    p.add_argument("--report", help="write training history JSON here")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("infer", help="label a corpus and export contexts")
    common_io(p)
    p.add_argument("--model", required=True, help="checkpoint from train")
    p.add_argument("--format", choices=("raw", "stripped", "compact"), default="raw")
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("cluster", help="reconstruct contexts from labeled lines")
    common_io(p)
    p.add_argument("--format", choices=("raw", "stripped", "compact"), default="compact")
    p.set_defaults(fn=cmd_cluster)

    p = sub.add_parser("query", help="query contexts by triggering-event fields")
    p.add_argument("--expr", required=True)
    common_io(p, needs_out=False)
    p.add_argument("--model", help="checkpoint; otherwise ground-truth labels are used")
    p.add_argument("--format", choices=("compact", "raw"), default="compact")
    p.set_defaults(fn=cmd_query)

    p = sub.add_parser("serve", help="run the audit-webhook receiver")
    p.add_argument("--bind", default="127.0.0.1:8799")
    p.add_argument("--model", help="stream per-line labels with this checkpoint")
    p.add_argument("--out", help="streamed label output file (default stdout)")
    p.add_argument("--store-out", help="write received events here on shutdown")
    p.add_argument("--manifest")
    p.add_argument("--catalog")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("eval", help="experiment harnesses")
    evsub = p.add_subparsers(dest="eval_cmd", required=True)
    for name in ("sweep", "ablate", "kfold", "cluster-stats"):
        ep = evsub.add_parser(name)
        ep.add_argument("--in", dest="input", required=True)
        ep.add_argument("--truth")
        ep.add_argument("--manifest")
        ep.add_argument("--catalog")
        ep.add_argument("--out", help="write the report JSON here")
        ep.add_argument("--epochs", type=int, default=40)
        ep.add_argument("--seed", type=int, default=0)
        ep.add_argument("--stride", type=int, default=4)
        ep.add_argument("--gamma", type=float, default=2.0)
        if name == "sweep":
            ep.add_argument("--windows", default="5,20,50")
            ep.add_argument("--trials", type=int, default=1)
        elif name == "ablate":
            ep.add_argument("--window", type=int, default=20)
            ep.add_argument("--paths", help="comma-separated feature paths to ablate")
        elif name == "kfold":
            ep.add_argument("--window", type=int, default=20)
            ep.add_argument("--k", type=int, default=5)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("stats", help="corpus and clustering-rate statistics")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--manifest")
    p.add_argument("--catalog")
    p.add_argument("--truth")
    p.set_defaults(fn=cmd_stats)

    return parser


def _apply_config_defaults(parser: argparse.ArgumentParser, argv):
    """K8NTEXT_CONFIG points at a JSON file of per-subcommand flag defaults."""
    path = os.environ.get(CONFIG_ENV)
    if not path:
        return
    try:
        with open(path, encoding="utf-8") as fh:
            config = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {CONFIG_ENV} file {path}: {exc}")
    if not isinstance(config, dict):
        raise ConfigError(f"{CONFIG_ENV} file must hold a JSON object")
    if not argv:
        return
    section = config.get(argv[0])
    if isinstance(section, dict):
        for action in parser._subparsers._group_actions:
            if argv[0] in getattr(action, "choices", {}):
                action.choices[argv[0]].set_defaults(**section)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    from .generate import FileError, InvalidMix, InvalidParams, LabelMismatch
    from .query import QuerySyntaxError, RegexError

    try:
        _apply_config_defaults(parser, argv)
        args = parser.parse_args(argv)
        return args.fn(args)
    except QuerySyntaxError as exc:
        print(f"query syntax error: {exc}", file=sys.stderr)
        return EXIT_QUERY_SYNTAX
    except RegexError as exc:
        print(f"query regex error: {exc}", file=sys.stderr)
        return EXIT_QUERY_SYNTAX
    except (ConfigError, InvalidMix, InvalidParams, labels.CatalogError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileError, LabelMismatch, FileNotFoundError, IsADirectoryError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (CheckpointError, EmptyTrainingSet, DivergedLoss) as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL


if __name__ == "__main__":
    sys.exit(main())
