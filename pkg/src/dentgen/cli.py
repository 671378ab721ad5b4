"""Command-line entry point: generate / ingest / split / train / eval / pca / report / verify.

All randomness flows from the single --seed flag (or the config file's seed);
reruns with the same config and seed are byte-identical, which `verify` and
the generate-time "files changed" message check via manifest digests.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import analytics, dataset
from .config import Config, iter_config_keys, load_config
from .errors import DentgenError

USAGE_EXIT = 1
DATA_EXIT = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_EXIT)


def _config_epilog() -> str:
    lines = ["config keys (JSON file, every key optional):"]
    for key, default in iter_config_keys():
        lines.append(f"  {key} (default {default!r})")
    return "\n".join(lines)


def build_parser() -> _Parser:
    parser = _Parser(
        prog="dentgen",
        description=__doc__,
        epilog=_config_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", type=Path, help="JSON config file")
        p.add_argument("--seed", type=int, help="override the config seed")

    g = sub.add_parser("generate", help="render a balanced labeled dataset")
    add_common(g)
    g.add_argument("-n", "--num-samples", type=int, required=True)
    g.add_argument("--background", choices=("black", "pool"), default="black")
    g.add_argument("--background-dir", type=Path, help="background photo pool (pool mode)")
    g.add_argument("--out", type=Path, required=True)
    g.add_argument("--jobs", type=int, default=1, help="parallel sample generation width")

    i = sub.add_parser("ingest", help="import real photos from deformed/ and non_deformed/ dirs")
    add_common(i)
    i.add_argument("--src", type=Path, required=True)
    i.add_argument("--out", type=Path, required=True)

    s = sub.add_parser("split", help="stratified train/test split of a manifest")
    add_common(s)
    s.add_argument("--manifest", type=Path, required=True)
    s.add_argument("--fraction", type=float, default=0.8)
    s.add_argument("--out-train", type=Path, help="default: train.jsonl beside the manifest")
    s.add_argument("--out-test", type=Path, help="default: test.jsonl beside the manifest")

    t = sub.add_parser("train", help="train the logistic baseline classifier")
    add_common(t)
    t.add_argument("--manifest", type=Path, required=True)
    t.add_argument("--out", type=Path, required=True, help="model JSON path")
    t.add_argument("--epochs", type=int, default=400)
    t.add_argument("--lr", type=float, default=2.0)

    e = sub.add_parser("eval", help="evaluate a model; writes metrics.csv and confusion.csv")
    add_common(e)
    e.add_argument("--model", type=Path, required=True)
    e.add_argument("--manifest", type=Path, required=True)
    e.add_argument("--tag", default=None, help="dataset column name in metrics.csv")
    e.add_argument("--out-prefix", type=Path, required=True)

    p = sub.add_parser("pca", help="shared-basis 2D PCA projection of datasets")
    add_common(p)
    p.add_argument("manifests", nargs="+", type=Path)
    p.add_argument("--tags", nargs="*", default=None)
    p.add_argument("--out", type=Path, required=True)

    r = sub.add_parser("report", help="merge eval outputs into one metrics table")
    add_common(r)
    r.add_argument("metrics", nargs="+", type=Path)
    r.add_argument("--out", type=Path, required=True)

    v = sub.add_parser("verify", help="recompute digests of every manifest file")
    add_common(v)
    v.add_argument("--manifest", type=Path, required=True)
    return parser


def _load_cfg(args) -> Config:
    cfg = load_config(args.config) if args.config else Config()
    if getattr(args, "seed", None) is not None:
        if args.seed < 0:
            raise DentgenError("seed must be non-negative")
        cfg.seed = args.seed
    if getattr(args, "background_dir", None):
        cfg.background_dir = str(args.background_dir)
    return cfg


def cmd_generate(args) -> int:
    if args.num_samples <= 0 or args.num_samples % 2 != 0:
        print("dentgen generate: error: -n must be a positive even number", file=sys.stderr)
        return USAGE_EXIT
    if args.jobs < 1:
        print("dentgen generate: error: --jobs must be >= 1", file=sys.stderr)
        return USAGE_EXIT
    cfg = _load_cfg(args)
    manifest, changed = dataset.generate_dataset(
        cfg, args.num_samples, args.background, args.out, jobs=args.jobs
    )
    counts = {}
    for s in manifest.samples:
        counts[s.label] = counts.get(s.label, 0) + 1
    per_class = ", ".join(f"{label}: {n}" for label, n in sorted(counts.items()))
    print(f"wrote {len(manifest.samples)} samples ({per_class}) to {args.out}")
    if changed is not None:
        print(f"{changed} files changed")
    return 0


def cmd_ingest(args) -> int:
    manifest = dataset.ingest_real(args.src, args.out)
    print(f"ingested {len(manifest.samples)} photos into {args.out}")
    return 0


def cmd_split(args) -> int:
    manifest = dataset.DatasetManifest.load(args.manifest)
    cfg = _load_cfg(args)
    result = dataset.split(manifest, args.fraction, cfg.seed)
    out_train = args.out_train or args.manifest.parent / "train.jsonl"
    out_test = args.out_test or args.manifest.parent / "test.jsonl"
    dataset.subset_manifest(manifest, result.train_indices, "train").save(out_train)
    dataset.subset_manifest(manifest, result.test_indices, "test").save(out_test)
    print(
        f"split {len(manifest.samples)} samples -> "
        f"{len(result.train_indices)} train / {len(result.test_indices)} test"
    )
    return 0


def cmd_train(args) -> int:
    manifest = dataset.DatasetManifest.load(args.manifest)
    model = analytics.train_baseline(manifest, epochs=args.epochs, lr=args.lr)
    model.save(args.out)
    print(f"trained baseline on {len(manifest.samples)} samples -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    model = analytics.LinearModel.load(args.model)
    manifest = dataset.DatasetManifest.load(args.manifest)
    cm, report = analytics.evaluate(model, manifest)
    tag = args.tag or args.manifest.parent.name
    prefix = args.out_prefix
    prefix.parent.mkdir(parents=True, exist_ok=True)
    analytics.write_metrics_csv(report, f"{prefix}_metrics.csv", tag=tag)
    analytics.write_confusion_csv(cm, f"{prefix}_confusion.csv")
    for name, value in report.as_rows():
        print(f"{name}: {value:.4f}")
    return 0


def cmd_pca(args) -> int:
    tags = args.tags or [p.parent.name for p in args.manifests]
    if len(tags) != len(args.manifests):
        raise DentgenError("--tags must match the number of manifests")
    tagged = [
        (tag, dataset.DatasetManifest.load(path)) for tag, path in zip(tags, args.manifests)
    ]
    rows = analytics.pca_scatter(tagged, k=2, out_csv=args.out)
    print(f"wrote {len(rows)} projected points to {args.out}")
    return 0


def cmd_report(args) -> int:
    table = analytics.write_report_table(args.metrics, args.out)
    for row in table:
        print("\t".join(str(c) for c in row))
    return 0


def cmd_verify(args) -> int:
    problems = dataset.verify_manifest(args.manifest)
    if problems:
        for p in problems:
            print(p, file=sys.stderr)
        print(f"{len(problems)} files changed")
        return DATA_EXIT
    print("0 files changed")
    return 0


_COMMANDS = {
    "generate": cmd_generate,
    "ingest": cmd_ingest,
    "split": cmd_split,
    "train": cmd_train,
    "eval": cmd_eval,
    "pca": cmd_pca,
    "report": cmd_report,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else USAGE_EXIT
    except DentgenError as e:
        print(f"dentgen: {e}", file=sys.stderr)
        return DATA_EXIT
    except FileNotFoundError as e:
        print(f"dentgen: {e}", file=sys.stderr)
        return DATA_EXIT


if __name__ == "__main__":
    sys.exit(main())
