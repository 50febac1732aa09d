"""Command-line entry point.

Subcommands: audit-dataset, balance, forge, train, score, evaluate,
refine-gaze, dump-default-rules. Exit codes: 0 ok, 1 data error,
2 configuration error, 3 runtime fault. Every non-zero exit prints a
single machine-parsable ``error[kind]: ...`` line to stderr.

The environment variable ``PORTRAITCHECK_OUT_DIR`` provides the default
output directory for commands whose ``--out`` flag is omitted.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import yaml

from .gating import default_conflict_rules, rules_from_config, rules_to_config
from .manifest import (
    compliance_distribution,
    distribution_stats,
    filter_partition,
    format_compliance_table,
    format_distribution_table,
    load_manifest,
    save_manifest,
    select_balanced_subset,
)
from .metrics import Category, ScoredSample, build_report, emit_report
from .types import (
    ConfigError,
    DataError,
    Decision,
    LabelState,
    Partition,
    PortraitCheckError,
    Requirement,
)

ENV_OUT_DIR = "PORTRAITCHECK_OUT_DIR"


@dataclass
class CommandResult:
    exit_code: int
    summary: str
    artifacts: list[str] = field(default_factory=list)


def _resolve_out(value: Optional[str], flag: str = "--out") -> str:
    if value:
        return value
    env = os.environ.get(ENV_OUT_DIR)
    if env:
        return env
    raise ConfigError(f"{flag} not given and {ENV_OUT_DIR} is unset")


def _load_config_file(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config file {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must contain a mapping")
    return raw


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_audit_dataset(args) -> CommandResult:
    records = load_manifest(args.manifest, lenient=args.lenient)
    records = filter_partition(records, Partition(args.partition))
    if not records:
        raise DataError(f"no records in partition {args.partition!r}")
    dist = format_distribution_table(distribution_stats(records))
    comp = format_compliance_table(compliance_distribution(records))
    artifacts = []
    if args.emit_tables:
        os.makedirs(args.emit_tables, exist_ok=True)
        for name, text in (("distribution.tsv", dist), ("compliance.tsv", comp)):
            path = os.path.join(args.emit_tables, name)
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
            artifacts.append(path)
    else:
        sys.stdout.write(dist)
        sys.stdout.write(comp)
    return CommandResult(0, f"audited {len(records)} records", artifacts)


def _cmd_balance(args) -> CommandResult:
    records = load_manifest(args.manifest, lenient=args.lenient)
    fraction = args.fraction
    if fraction is None:
        # largest uniform per-cell target achievable on this pool
        by_cell: dict[tuple, set] = {}
        for r in records:
            by_cell.setdefault(r.demographics.cell(), set()).add(r.subject_id)
        n_pool = len({r.subject_id for r in records})
        smallest = min(len(s) for s in by_cell.values())
        fraction = smallest / n_pool
    out = _resolve_out(args.out)
    subset, report = select_balanced_subset(records, fraction, args.seed)
    save_manifest(subset, out)
    for cell in report.cells:
        print(
            f"cell {cell.gender.value}/{cell.origin.value}/{cell.age_group.value}: "
            f"target {cell.target}, achieved {cell.achieved}"
        )
    n_short = len(report.shortfalls)
    return CommandResult(
        0,
        f"selected {len(subset)} records ({n_short} cell shortfalls)",
        [out],
    )


def _cmd_forge(args) -> CommandResult:
    from .degrade import generate_corpus, load_plan

    records = load_manifest(args.manifest, lenient=args.lenient)
    plan = load_plan(args.plan)
    out_dir = _resolve_out(args.out)
    images_dir = os.path.join(out_dir, "images")
    augmented, report = generate_corpus(
        records,
        plan,
        images_dir,
        seed=args.seed,
        masks_dir=args.masks,
        images_root=args.images_root,
    )
    manifest_path = os.path.join(out_dir, "manifest.ndjson")
    save_manifest(augmented, manifest_path)
    for warning in report.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    return CommandResult(
        0,
        f"generated {report.n_generated} images ({len(report.warnings)} warnings)",
        [manifest_path, images_dir],
    )


def _cmd_train(args) -> CommandResult:
    from .training import TrainConfig, train

    config_raw = _load_config_file(args.config)
    if args.seed is not None:
        config_raw["seed"] = args.seed
    config = TrainConfig.from_dict(config_raw)
    records = load_manifest(args.manifest, lenient=args.lenient)
    records = filter_partition(records, Partition(args.partition))
    rules = None
    if args.rules:
        rules = rules_from_config(_load_config_file(args.rules)["rules"])
    out_dir = _resolve_out(args.out)
    result = train(
        records,
        args.masks,
        config,
        out_dir,
        rules=rules,
        images_root=args.images_root,
        resume_from=args.resume,
    )
    last = result.log[-1]
    return CommandResult(
        0,
        f"trained {last['epoch']} epochs, final total loss {last['total_loss']:.4f}",
        [result.checkpoint_dir],
    )


def _cmd_score(args) -> CommandResult:
    from .checkpoint import load_checkpoint
    from .training import score_records

    records = load_manifest(args.manifest, lenient=args.lenient)
    ckpt = load_checkpoint(args.ckpt)
    input_size = (64, 64)
    if ckpt.train_config and "input_size" in ckpt.train_config:
        input_size = tuple(int(v) for v in ckpt.train_config["input_size"])
    scores = score_records(
        ckpt.model, records, input_size, images_root=args.images_root
    )
    out = _resolve_out(args.out)
    with open(out, "w", encoding="utf-8") as fh:
        for r in records:
            vec = scores[r.image_id]
            for req in Requirement:
                fh.write(
                    json.dumps(
                        {
                            "image_id": r.image_id,
                            "requirement": req.short_name,
                            "score": float(vec[req.value - 1]),
                        }
                    )
                    + "\n"
                )
    return CommandResult(0, f"scored {len(records)} records", [out])


def _read_scores_file(path: str) -> list[dict]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                rows.append(
                    {
                        "image_id": str(row["image_id"]),
                        "requirement": Requirement.from_short_name(row["requirement"]),
                        "score": float(row["score"]),
                    }
                )
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise DataError(f"scores file line {line_no}: {exc}") from None
    return rows


def _cmd_evaluate(args) -> CommandResult:
    from .gating import gate

    records = load_manifest(args.manifest, lenient=args.lenient)
    by_id = {r.image_id: r for r in records}
    rows = _read_scores_file(args.scores)

    categories = []
    if args.groups:
        for token in args.groups.split(","):
            try:
                categories.append(Category(token.strip()))
            except ValueError:
                raise ConfigError(f"unknown demographic category: {token!r}") from None

    gates_cache: dict[str, np.ndarray] = {}
    samples = []
    for row in rows:
        record = by_id.get(row["image_id"])
        if record is None:
            raise DataError(f"scores reference unknown image_id {row['image_id']!r}")
        if record.image_id not in gates_cache:
            gates_cache[record.image_id] = gate(
                record.labels, restricted_to=record.restricted_to
            ).gates
        req = row["requirement"]
        label = record.labels[req]
        samples.append(
            ScoredSample(
                image_id=record.image_id,
                requirement=req,
                score=row["score"],
                label=1 if label.state is LabelState.NON_COMPLIANT else 0,
                group=record.demographics,
                gated_in=bool(gates_cache[record.image_id][req.value - 1]),
            )
        )

    report = build_report(
        samples, categories=categories, aggregation=args.aggregation, strict=False
    )
    out_dir = _resolve_out(args.out)
    paths = emit_report(report, out_dir)
    if args.dump_curves:
        from .metrics import dump_curves

        paths += dump_curves(samples, os.path.join(out_dir, "curves"))
    return CommandResult(
        0,
        f"evaluated {len(report.per_requirement)} requirements, "
        f"mean EER {report.mean_eer:.3f}",
        paths,
    )


def _cmd_refine_gaze(args) -> CommandResult:
    from .gaze import SidecarLandmarks, refine_looking_away

    detector = SidecarLandmarks(args.landmarks)
    rows = []
    with open(args.decisions, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
                rows.append(
                    (
                        str(raw["image_id"]),
                        Requirement.from_short_name(raw["requirement"]),
                        Decision(raw["decision"]),
                    )
                )
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise DataError(f"decisions file line {line_no}: {exc}") from None

    per_image: dict[str, dict[Requirement, Decision]] = {}
    for image_id, req, decision in rows:
        per_image.setdefault(image_id, {})[req] = decision

    flipped = 0
    results = {}
    for image_id, decisions in per_image.items():
        result = refine_looking_away(decisions, detector.detect(image_id), tau=args.tau)
        results[image_id] = result
        if result.flipped:
            flipped += 1

    out = _resolve_out(args.out)
    with open(out, "w", encoding="utf-8") as fh:
        for image_id, req, _ in rows:
            result = results[image_id]
            row = {
                "image_id": image_id,
                "requirement": req.short_name,
                "decision": result.decisions[req].value,
            }
            if req is Requirement.LOOKING_AWAY and result.flipped:
                row["reason"] = result.reason
            fh.write(json.dumps(row) + "\n")
    return CommandResult(0, f"refined {len(per_image)} images, flipped {flipped}", [out])


def _cmd_dump_default_rules(args) -> CommandResult:
    payload = {"rules": rules_to_config(default_conflict_rules())}
    sys.stdout.write(yaml.safe_dump(payload, sort_keys=False))
    return CommandResult(0, "dumped default conflict rules")


# ---------------------------------------------------------------------------
# Parser / dispatch
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="portraitcheck",
        description="Portrait compliance toolkit: dataset auditing, synthetic "
        "degradations, training, scoring, and EER/bias evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--lenient", action="store_true", help="tolerate unknown non-compliance reasons")

    p = sub.add_parser("audit-dataset", help="distribution and compliance tables for a manifest")
    p.add_argument("manifest")
    p.add_argument("--partition", default="all", choices=[x.value for x in Partition])
    p.add_argument("--emit-tables", metavar="DIR", default=None)
    add_common(p)
    p.set_defaults(func=_cmd_audit_dataset)

    p = sub.add_parser("balance", help="select a demographically balanced subset")
    p.add_argument("manifest")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--fraction", type=float, default=None, help="per-cell subject target as a fraction of the pool (default: largest uniform target)")
    p.add_argument("--out", default=None)
    add_common(p)
    p.set_defaults(func=_cmd_balance)

    p = sub.add_parser("forge", help="generate artificial non-compliant images")
    p.add_argument("manifest")
    p.add_argument("--plan", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--masks", default=None)
    p.add_argument("--images-root", default=None)
    add_common(p)
    p.set_defaults(func=_cmd_forge)

    p = sub.add_parser("train", help="train the compliance model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--partition", default="all", choices=[x.value for x in Partition])
    p.add_argument("--resume", default=None)
    p.add_argument("--rules", default=None, help="conflict rules config file")
    p.add_argument("--images-root", default=None)
    add_common(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("score", help="score a manifest with a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--images-root", default=None)
    add_common(p)
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("evaluate", help="EER and bias report from a scores file")
    p.add_argument("--manifest", required=True)
    p.add_argument("--scores", required=True)
    p.add_argument("--groups", default="", help="comma list: gender,origin,age")
    p.add_argument("--aggregation", default="mean", choices=["mean", "pooled"])
    p.add_argument("--dump-curves", action="store_true", help="write per-requirement FAR/FRR curve files")
    p.add_argument("--out", default=None)
    add_common(p)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("refine-gaze", help="landmark-based looking-away refinement")
    p.add_argument("--decisions", required=True)
    p.add_argument("--landmarks", required=True)
    p.add_argument("--tau", type=float, default=0.15)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_refine_gaze)

    p = sub.add_parser("dump-default-rules", help="print the shipped conflict rule table")
    p.set_defaults(func=_cmd_dump_default_rules)

    return parser


def dispatch(argv: list[str]) -> CommandResult:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else 2
        if code == 0:
            return CommandResult(0, "help shown")
        print("error[config]: invalid command line", file=sys.stderr)
        return CommandResult(2, "invalid command line")
    try:
        return args.func(args)
    except DataError as exc:
        print(f"error[data]: {exc}", file=sys.stderr)
        return CommandResult(1, str(exc))
    except ConfigError as exc:
        print(f"error[config]: {exc}", file=sys.stderr)
        return CommandResult(2, str(exc))
    except (PortraitCheckError, OSError, RuntimeError, ValueError) as exc:
        print(f"error[runtime]: {exc}", file=sys.stderr)
        return CommandResult(3, str(exc))


def main(argv: Optional[list[str]] = None) -> int:
    result = dispatch(sys.argv[1:] if argv is None else argv)
    if result.exit_code == 0 and result.summary:
        print(result.summary)
    return result.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
