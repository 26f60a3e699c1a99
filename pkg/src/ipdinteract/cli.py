"""Command-line interface: ``ipdma analyze | simulate | forest | compare``.

Exit codes: 0 success, 2 validation or usage error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import warnings
from pathlib import Path

from . import __version__
from .dataset import DatasetError, MissingDataWarning, emit_csv, ingest_csv, summarize
from .exemplar import (
    BiasDemoConfig,
    ConfigError,
    ExemplarConfig,
    ReplicationError,
    aggregation_bias_demo,
    compare_approaches,
    generate_bias_demo,
    generate_exemplar,
    operating_table_csv,
    replicate,
)
from .forest import render_svg, render_text
from .models import (
    Handling,
    ModelError,
    ModelSpec,
    ModelSpecError,
    Notice,
    Stage,
    fit_model,
    pool_treatment_effect,
)
from .pooling import FIXED, RANDOM_DL, PoolingError, PooledResult, forest_data
from .regression import RegressionError

SCHEMA_VERSION = 1
EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3

log = logging.getLogger("ipdinteract")


class UsageError(ValueError):
    pass


def _clean(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def dumps(obj) -> str:
    """Deterministic JSON: insertion-ordered keys, shortest round-trip floats."""
    return json.dumps(_clean(obj), indent=2, allow_nan=False) + "\n"


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _write(path: Path, text: str) -> bytes:
    data = text.encode("utf-8")
    path.write_bytes(data)
    return data


# ---------------------------------------------------------------------------
# analyze


def build_report(dataset, spec: ModelSpec, pooling: str, input_digest: str | None, input_name: str | None, notices=()) -> dict:
    dataset.require_meta_analysable()
    result = fit_model(dataset, spec, pooling)
    notices = list(notices) + list(result.notices)
    report = {
        "schema_version": SCHEMA_VERSION,
        "metadata": {
            "tool": "ipdinteract",
            "tool_version": __version__,
            "command": "analyze",
            "seed": None,
            "input_name": input_name,
            "input_sha256": input_digest,
            "n": dataset.n,
            "n_trials": len(dataset.trials),
        },
        "specs": [spec.to_dict()],
        "pooling": pooling if spec.stage is Stage.TWO else None,
        "primary_role": spec.primary_role,
        "estimates": [e.to_dict() for e in result.estimates.values()],
        "pooled": [],
        "trial_fits": [],
        "treatment_effect": pool_treatment_effect(dataset, pooling).to_dict(),
    }
    if spec.stage is Stage.TWO:
        report["pooled"] = [
            {"role": role, "label": result.estimates[role].label, **res.to_dict()} for role, res in result.pooled.items()
        ]
        report["trial_fits"] = [
            {
                "trial_id": f.trial_id,
                "n": f.fit.n,
                "dof": f.fit.dof,
                "sigma2": f.fit.sigma2,
                "estimates": {r: w.to_dict() for r, w in f.estimates.items()},
            }
            for f in result.trial_fits
        ]
        report["excluded_trials"] = [{"trial_id": t, "reason": r} for t, r in result.excluded]
    else:
        report["dropped_columns"] = list(result.dropped_columns)
    report["warnings"] = [n.to_dict() for n in notices]
    return report


def _load(path: str, covariates):
    raw = Path(path).read_bytes()
    notices = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", MissingDataWarning)
        ds = ingest_csv(raw, covariates)
    for w in caught:
        if issubclass(w.category, MissingDataWarning):
            notices.append(Notice("rows_deleted", str(w.message)))
    return ds, _sha256(raw), notices


def cmd_analyze(args) -> int:
    adjust = tuple(args.adjust or ())
    try:
        spec = ModelSpec(args.approach, args.modifier, adjust, Stage(args.stage), Handling(args.handling))
    except ModelSpecError as exc:
        raise UsageError(str(exc)) from None
    if args.stage == "one" and args.pooling != FIXED:
        log.info("--pooling is ignored for one-stage models")
    ds, digest, notices = _load(args.input, [args.modifier, *adjust])
    report = build_report(ds, spec, _pooling(args.pooling), digest, os.path.basename(args.input), notices)
    text = dumps(report)
    if args.out:
        _write(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _pooling(flag: str) -> str:
    return RANDOM_DL if flag in ("dl", RANDOM_DL) else FIXED


# ---------------------------------------------------------------------------
# simulate


def _resolve_scenario(name: str):
    if name in ("exemplar", "bias-demo"):
        return name, None
    path = Path(name)
    if not path.is_file():
        raise UsageError(f"scenario {name!r} is neither 'exemplar', 'bias-demo' nor a readable file")
    try:
        return "file", ExemplarConfig.from_ini(path.read_text(encoding="utf-8"))
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"{name}: {exc}") from None


def cmd_simulate(args) -> int:
    kind, cfg = _resolve_scenario(args.scenario)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise UsageError(f"output directory {str(out)!r} is not writable: {exc}") from None

    artifacts = {}
    if kind == "bias-demo":
        seed = 7 if args.seed is None else args.seed
        artifacts["bias_demo.csv"] = emit_csv(generate_bias_demo(seed, BiasDemoConfig()))
        artifacts["bias_demo.json"] = dumps(aggregation_bias_demo(seed).to_dict())
        effective_seed = seed
    else:
        if cfg is None:
            cfg = ExemplarConfig.default()
        if args.seed is not None:
            cfg = cfg.replace(seed=args.seed)
        effective_seed = cfg.seed
        gen = generate_exemplar(cfg)
        summary = summarize(gen.dataset)
        summary["rejections"] = gen.rejections
        summary["seed"] = cfg.seed
        summary["implied_correlation"] = cfg.implied_correlation()
        csv_name = "exemplar.csv" if kind == "exemplar" else "scenario.csv"
        artifacts[csv_name] = emit_csv(gen.dataset)
        artifacts["summary.json"] = dumps(summary)
        artifacts["scenario.ini"] = cfg.to_ini()
        if args.reps:
            artifacts["operating_characteristics.csv"] = operating_table_csv(replicate(cfg, args.reps))

    listing = []
    for name, text in artifacts.items():
        data = _write(out / name, text)
        listing.append({"name": name, "bytes": len(data), "sha256": _sha256(data)})
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "tool_version": __version__,
        "scenario": args.scenario if kind != "file" else os.path.basename(args.scenario),
        "seed": effective_seed,
        "reps": args.reps,
        "artifacts": listing,
    }
    _write(out / "manifest.json", dumps(manifest))
    return EXIT_OK


# ---------------------------------------------------------------------------
# forest


def cmd_forest(args) -> int:
    try:
        report = json.loads(Path(args.report).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read report {args.report!r}: {exc}") from None
    if args.section == "treatment":
        section = report.get("treatment_effect")
        title = "Treatment effect (mean difference)"
    else:
        primary = report.get("primary_role")
        section = next((p for p in report.get("pooled") or [] if p.get("role") == primary), None)
        title = f"Interaction {section['label']}" if section else ""
    if not section:
        raise UsageError(f"report lacks a pooled section for {args.section!r} (one-stage reports have none)")
    try:
        data = forest_data(PooledResult.from_dict(section), title=title)
    except (KeyError, TypeError) as exc:
        raise UsageError(f"malformed pooled section in report: {exc}") from None
    text = render_svg(data) if args.format == "svg" else render_text(data)
    if args.out:
        _write(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# compare


COMPARE_COLUMNS = ("covariate", "approach", "adjusted_for", "role", "estimate", "se", "p_value")


def comparison_csv(comparison) -> str:
    lines = [",".join(COMPARE_COLUMNS)]
    for r in comparison.rows:
        lines.append(f"{r.covariate},{r.approach},{r.adjusted_for},{r.role},{r.estimate!r},{r.se!r},{r.p_value!r}")
    return "\n".join(lines) + "\n"


def cmd_compare(args) -> int:
    z1, z2 = args.modifiers
    ds, _, _ = _load(args.input, [z1, z2])
    ds.require_meta_analysable()
    text = comparison_csv(compare_approaches(ds, (z1, z2), Stage(args.stage)))
    if args.out:
        _write(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ipdma", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="fit one interaction model and write a JSON report")
    a.add_argument("--input", required=True)
    a.add_argument("--modifier", required=True)
    a.add_argument("--adjust", nargs="+", default=[])
    a.add_argument("--approach", type=int, choices=(1, 2, 3, 4), default=1)
    a.add_argument("--stage", choices=("one", "two"), default="two")
    a.add_argument("--handling", choices=("within", "conflated"), default="within")
    a.add_argument("--pooling", choices=("fixed", "dl"), default="fixed")
    a.add_argument("--out")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("simulate", help="generate a scenario dataset and summaries")
    s.add_argument("--scenario", default="exemplar", help="'exemplar', 'bias-demo' or a scenario .ini file")
    s.add_argument("--seed", type=int)
    s.add_argument("--reps", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("forest", help="render a forest plot from an analyze report")
    f.add_argument("--report", required=True)
    f.add_argument("--format", choices=("text", "svg"), default="text")
    f.add_argument("--section", choices=("interaction", "treatment"), default="interaction")
    f.add_argument("--out")
    f.set_defaults(func=cmd_forest)

    c = sub.add_parser("compare", help="tabulate interaction estimates across approaches")
    c.add_argument("--input", required=True)
    c.add_argument("--modifiers", nargs=2, required=True, metavar=("Z1", "Z2"))
    c.add_argument("--stage", choices=("one", "two"), default="two")
    c.add_argument("--out")
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    level = logging.DEBUG if args.verbose or os.environ.get("IPDMA_VERBOSE") else logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s: %(message)s")
    if getattr(args, "reps", 0) and args.reps < 0:
        print("error: --reps must be non-negative", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        return args.func(args)
    except RegressionError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ReplicationError, PoolingError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (UsageError, DatasetError, ModelSpecError, ModelError, ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
