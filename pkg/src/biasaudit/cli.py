"""Command-line entry point: ``biasaudit <subcommand> ...``.

Exit status is 0 on success, 1 on a data or I/O error (one diagnostic line
on stderr naming the error class), and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .calibration import calibrate, format_table
from .datasets import SCORED_SCHEMA, SliceFilter, TableSchema, _format_of, _open_text, read_table, write_scored
from .errors import BiasAuditError, MissingColumn
from .metrics import METRIC_NAMES
from .report import FORMATS, EvalReport, build_report, render, render_sketch_svg, sketch_distributions
from .scenarios import ScenarioId, ScenarioSpec, preset, sample_scenario

EXTENSION_FORMATS = {".csv": "csv", ".md": "markdown", ".json": "json", ".svg": "svg-heatmap"}


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def _nonnegative_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative integer, got {value}")
    return value


def _format_for(path: Path, explicit: Optional[str], parser: argparse.ArgumentParser) -> str:
    if explicit:
        return explicit
    fmt = EXTENSION_FORMATS.get(path.suffix.lower())
    if fmt is None:
        parser.error(f"cannot infer an output format from {path.name!r}; pass --format")
    return fmt


def _write(path: Path, data: bytes) -> None:
    path.write_bytes(data)


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args, parser) -> int:
    spec = ScenarioSpec.load(args.spec) if args.spec else preset(args.scenario)
    write_scored(args.out, sample_scenario(spec.scaled(args.scale), args.seed))
    return 0


def _score_map(path: Path, schema: TableSchema, column: str) -> dict[str, float]:
    scored = replace(schema, score_column=column, text_column=None)
    return {ex.id: ex.score for ex in read_table(path, scored)}


def cmd_evaluate(args, parser) -> int:
    schema = TableSchema.load(args.schema) if args.schema else SCORED_SCHEMA
    columns = args.score_column or []
    if len(columns) > 2:
        parser.error("--score-column may be given at most twice")
    names = args.model_name or []
    if names and len(names) != max(len(columns), 1):
        parser.error("give one --model-name per scored model")
    fmt = _format_for(args.out, args.format, parser)
    if args.sketch and not args.sketch_out:
        parser.error("--sketch requires --sketch-out")
    if not args.max_chars:
        # texts are only needed for slicing by length
        schema = replace(schema, text_column=None)

    models = None
    if len(columns) == 1:
        schema = replace(schema, score_column=columns[0])
    elif len(columns) == 2:
        models = {
            (names[i] if names else col): _score_map(args.input, schema, col) for i, col in enumerate(columns)
        }
        schema = replace(schema, score_column=None)
    model_name = names[0] if names else (columns[0] if columns else "model")

    flt = SliceFilter(max_chars=args.max_chars, min_subgroup_count=args.min_count)
    subgroups = [s for s in args.subgroups.split(",") if s] if args.subgroups else None
    report = build_report(
        read_table(args.input, schema),
        subgroups,
        flt,
        models,
        model_name=model_name,
        sort_by=args.sort_by,
        threads=args.threads,
        dataset_id=args.dataset_id if args.dataset_id is not None else Path(args.input).name,
    )
    _write(args.out, render(report, fmt))

    if args.sketch:
        scores = next(iter(models.values())) if models else None
        sketch = sketch_distributions(read_table(args.input, schema), args.sketch, scores, args.bins)
        if args.sketch_out.suffix.lower() == ".svg":
            _write(args.sketch_out, render_sketch_svg(sketch))
        else:
            _write(args.sketch_out, (json.dumps(sketch.to_dict(), indent=2) + "\n").encode("utf-8"))
    return 0


def _read_rows(path: Path) -> tuple[list[str], list[dict]]:
    fmt, compressed = _format_of(path)
    with _open_text(path, compressed) as fh:
        if fmt == "jsonl":
            rows = [json.loads(line) for line in fh if line.strip()]
            header = list(dict.fromkeys(k for r in rows for k in r))
        else:
            reader = csv.DictReader(fh, delimiter="\t" if fmt == "tsv" else ",")
            rows = list(reader)
            header = list(reader.fieldnames or [])
    return header, rows


def cmd_score(args, parser) -> int:
    from .scorer import ScorerConfig, score_batch

    cfg = ScorerConfig.load(args.scorer)
    header, rows = _read_rows(args.input)
    for col in (args.id_column, args.text_column):
        if col not in header:
            raise MissingColumn(f"{args.input}: missing column {col!r}")
    if not rows:
        raise BiasAuditError(f"{args.input}: no rows to score")
    texts = [(str(r[args.id_column]), str(r[args.text_column] or "")) for r in rows]
    result = score_batch(texts, cfg)
    scores = dict(result.scores)

    out_header = header + ([args.score_column] if args.score_column not in header else [])
    fmt, _ = _format_of(args.out)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        if fmt == "jsonl":
            for r, (id_, _) in zip(rows, texts):
                fh.write(json.dumps({**r, args.score_column: scores.get(id_)}) + "\n")
        else:
            writer = csv.writer(fh, delimiter="\t" if fmt == "tsv" else ",", lineterminator="\n")
            writer.writerow(out_header)
            for r, (id_, _) in zip(rows, texts):
                s = scores.get(id_)
                row = {**r, args.score_column: "" if s is None else repr(s)}
                writer.writerow([row.get(c, "") for c in out_header])

    if result.errors:
        errors_path = args.errors or args.out.with_name(args.out.name + ".errors.jsonl")
        with open(errors_path, "w", encoding="utf-8") as fh:
            for entry in result.error_manifest():
                fh.write(json.dumps(entry) + "\n")
        first = next(iter(result.errors.values()))
        print(
            f"biasaudit: error: {type(first).__name__}: {len(result.errors)} of {len(texts)} text(s) failed; "
            f"see {errors_path}",
            file=sys.stderr,
        )
        return 1
    return 0


def cmd_report(args, parser) -> int:
    fmt = _format_for(args.out, args.format, parser)
    report = EvalReport.from_json(Path(args.input).read_bytes())
    _write(args.out, render(report, fmt))
    return 0


def cmd_calibrate(args, parser) -> int:
    results = calibrate(seed=args.seed, scale=args.scale)
    print(format_table(results))
    if args.out:
        rows = [r.__dict__ for r in results]
        args.out.write_text(json.dumps(rows, indent=2) + "\n", encoding="utf-8")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="biasaudit", description="Threshold-agnostic unintended-bias metrics.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--threads", type=_positive_int, default=None, help="cap on worker threads")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("simulate", help="sample a synthetic scenario to a scored file")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenario", choices=[s.value for s in ScenarioId])
    src.add_argument("--spec", type=Path, help="scenario spec JSON file")
    p.add_argument("--seed", type=_nonnegative_int, default=0)
    p.add_argument("--scale", type=_positive_int, default=1000, help="examples per unit cell count")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", help="compute the metric suite per subgroup")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--schema", type=Path, help="schema JSON (default: the layout simulate writes)")
    p.add_argument("--max-chars", type=_positive_int, default=None, help="keep comments shorter than this")
    p.add_argument("--min-count", type=_nonnegative_int, default=0, help="minimum in-slice subgroup size")
    p.add_argument("--subgroups", help="comma-separated subgroup ids (default: all present)")
    p.add_argument("--sort-by", choices=METRIC_NAMES, default="subgroup_auc")
    p.add_argument("--score-column", action="append", help="score column; repeat to compare two models")
    p.add_argument("--model-name", action="append", help="display name per scored model")
    p.add_argument("--dataset-id", default=None)
    p.add_argument("--format", choices=FORMATS, default=None, help="default: from the --out extension")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--sketch", metavar="SUBGROUP", help="also sketch score distributions for this subgroup")
    p.add_argument("--sketch-out", type=Path, help=".svg or .json path for the sketch")
    p.add_argument("--bins", type=_positive_int, default=20)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("score", help="score texts against an HTTP endpoint")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--scorer", type=Path, required=True, help="scorer config JSON")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--id-column", default="id")
    p.add_argument("--text-column", default="comment_text")
    p.add_argument("--score-column", default="score")
    p.add_argument("--errors", type=Path, help="error manifest path (default: <out>.errors.jsonl)")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("report", help="render a JSON report in another format")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--format", choices=FORMATS, default=None)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("calibrate", help="re-run the scenario preset calibration")
    p.add_argument("--seed", type=_nonnegative_int, default=0)
    p.add_argument("--scale", type=_positive_int, default=100_000)
    p.add_argument("--out", type=Path, help="also write the table as JSON")
    p.set_defaults(func=cmd_calibrate)
    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    try:
        return args.func(args, sub)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (BiasAuditError, OSError, ValueError) as exc:
        message = str(exc).splitlines()[0] if str(exc) else ""
        print(f"biasaudit: error: {type(exc).__name__}: {message}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
