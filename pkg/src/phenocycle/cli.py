"""Command line entry points.

Exit codes: 0 on success, 1 for usage problems, 2 for runtime failures
(bad files, impossible configs, analysis errors).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

from .cohort import Cohort, load_cohort, save_cohort
from .engine import RunStore, resume_run, run_cycle, stats_battery
from .errors import ConfigError, PhenocycleError
from .phenotype import PhenotypeLabel, label_cohort, label_counts
from .runspec import load_run_spec
from .synth import default_config, generate

LABELS_CSV_FIELDS = ("participant_id", "label")

# GeneratorConfig fields a synth config file may override; the seed
# comes from the flag so a file cannot silently change it
_SYNTH_OVERRIDES = {
    "n_protected": int,
    "n_responder": int,
    "n_refractory": int,
    "observation_window_days": int,
    "visits_per_participant": tuple,
    "score_max": float,
    "threshold": float,
    "dose_step_points": float,
    "dose_protection_points": float,
    "dose_relief_points": float,
    "max_doses": int,
}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise _UsageError(f"{self.prog}: {message}")


def _cohort_format(path: Path) -> str:
    return "csv" if path.suffix == ".csv" else "jsonl"


def _load_cohort(path: str) -> Cohort:
    p = Path(path)
    return load_cohort(p, format=_cohort_format(p))


def _read_labels(path: str, cohort: Cohort) -> dict[str, PhenotypeLabel]:
    labels: dict[str, PhenotypeLabel] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(reader.fieldnames) != set(LABELS_CSV_FIELDS):
            raise ConfigError(
                f"{path}: header must be {','.join(LABELS_CSV_FIELDS)}"
            )
        for n, row in enumerate(reader, start=2):
            try:
                labels[row["participant_id"]] = PhenotypeLabel(row["label"])
            except ValueError as exc:
                raise ConfigError(f"{path}:{n}: unknown label {row['label']!r}") from exc
    missing = [pid for pid in cohort.ids() if pid not in labels]
    if missing:
        raise ConfigError(
            f"{path}: no label for {len(missing)} cohort participants "
            f"(first: {missing[0]!r})"
        )
    return labels


def cmd_synth(args: argparse.Namespace) -> int:
    config = default_config(seed=args.seed)
    if args.config:
        raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if not isinstance(raw, dict):
            raise ConfigError(f"{args.config}: config must be a JSON object")
        unknown = set(raw) - set(_SYNTH_OVERRIDES)
        if unknown:
            raise ConfigError(f"{args.config}: unknown keys: {sorted(unknown)}")
        casts = {k: _SYNTH_OVERRIDES[k](v) for k, v in raw.items()}
        config = dataclasses.replace(config, **casts)
    cohort = generate(config)
    out = Path(args.out)
    save_cohort(cohort, out, format=_cohort_format(out))
    print(f"wrote {len(cohort.participants)} participants to {out}")
    return 0


def cmd_label(args: argparse.Namespace) -> int:
    cohort = _load_cohort(args.cohort)
    labels = label_cohort(cohort, threshold=args.threshold)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(LABELS_CSV_FIELDS)
        for p in cohort:
            writer.writerow([p.id, labels[p.id].value])
    counts = label_counts(labels)
    summary = "  ".join(f"{lab.value}={counts.get(lab, 0)}" for lab in PhenotypeLabel)
    print(f"labeled {len(labels)} participants: {summary}")
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    from .report import write_report

    cohort = _load_cohort(args.cohort)
    labels = _read_labels(args.labels, cohort)
    doc = stats_battery(cohort, labels, seed=args.seed)
    written = write_report(cohort, labels, doc, args.out)
    failed = sorted(
        name for name, entry in doc.items()
        if isinstance(entry, dict) and "error" in entry
    )
    for name, path in sorted(written.items()):
        print(f"{name}: {path}")
    if failed:
        print(f"analyses with errors: {', '.join(failed)}", file=sys.stderr)
    return 0


def cmd_baseline(args: argparse.Namespace) -> int:
    from .baselines import fit_lctm, fit_lmm
    from .engine import _jsonify

    cohort = _load_cohort(args.cohort)
    if args.method == "lmm":
        fit = fit_lmm(cohort)
    else:
        fit = fit_lctm(cohort, n_classes=args.classes, seed=args.seed)
    print(json.dumps(_jsonify(fit), indent=2, sort_keys=True))
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    from .backends import build_backend

    spec = load_run_spec(args.config)
    cohort = spec.load_cohort()
    data_dir = spec.data_dir or Path(args.config).parent / "runs"
    store = RunStore(data_dir)
    backend = build_backend(spec.config.backend, cohort=cohort)
    if args.resume:
        run = resume_run(store, args.resume, cohort, backend=backend)
    else:
        run = run_cycle(
            cohort, spec.pool, spec.config,
            backend=backend, store=store, run_id=spec.run_id,
        )
    print(
        f"run {run.run_id}: {run.status} after {len(run.iterations)} iterations "
        f"(log: {store.run_path(run.run_id)})"
    )
    if run.final_stats is not None:
        print(f"stats: {store.stats_path(run.run_id)}")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .server import create_app

    host, _, port_text = args.addr.rpartition(":")
    if not host or not port_text.isdigit():
        raise ConfigError(f"--addr must be HOST:PORT, got {args.addr!r}")
    ui_dir = Path(args.ui) if args.ui else None
    app = create_app(Path(args.data_dir), ui_dir=ui_dir)
    uvicorn.run(app, host=host, port=int(port_text), log_level="info")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="phenocycle", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cohort file")
    p.add_argument("--out", required=True, help="cohort output path (.jsonl or .csv)")
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--config", help="JSON file overriding generator settings")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("label", help="assign phenotype labels")
    p.add_argument("--cohort", required=True)
    p.add_argument("--threshold", type=float, default=12.0)
    p.add_argument("--out", required=True, help="labels CSV output path")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("stats", help="run the validation battery and render a report")
    p.add_argument("--cohort", required=True)
    p.add_argument("--labels", required=True, help="labels CSV from the label command")
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("baseline", help="fit a trajectory baseline model")
    p.add_argument("--cohort", required=True)
    p.add_argument("--method", required=True, choices=("lmm", "lctm"))
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("run", help="execute a cycle run from a spec file")
    p.add_argument("--config", required=True, help="run spec JSON")
    p.add_argument("--resume", metavar="RUN_ID", help="continue a persisted run")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("serve", help="start the HTTP review service")
    p.add_argument("--addr", required=True, help="HOST:PORT to bind")
    p.add_argument("--data-dir", required=True, help="run log directory")
    p.add_argument("--ui", help="static review UI directory to serve at /")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except PhenocycleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
