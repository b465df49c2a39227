"""Reading and writing labeled corpora.

Comma-separated (``.csv``, ``.tsv``) and JSON-lines (``.jsonl``, ``.ndjson``)
files are parsed one row at a time, optionally gzip-compressed (``.gz``).
Fractional crowd labels become binary by thresholding: a row is positive iff
its label value is ``>= label_threshold`` and carries a subgroup tag iff the
identity column value is ``>= identity_threshold``.  Empty identity cells mean
"not tagged".

Malformed rows are skipped, counted and logged rather than aborting the read;
a NaN or infinite *score* aborts it with :class:`NonFiniteScore`.
"""

from __future__ import annotations

import csv
import gzip
import io
import json
import logging
import math
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

from .errors import BadTemplate, MalformedRow, MissingColumn, MissingLength, NonFiniteScore, UnsupportedFormat
from .metrics import BinaryLabel, LabeledExample

log = logging.getLogger(__name__)

# identity options offered to crowd raters, as column names of the released corpus
DEFAULT_IDENTITY_COLUMNS = (
    "male",
    "female",
    "transgender",
    "other_gender",
    "heterosexual",
    "homosexual_gay_or_lesbian",
    "bisexual",
    "other_sexual_orientation",
    "christian",
    "jewish",
    "muslim",
    "hindu",
    "buddhist",
    "atheist",
    "other_religion",
    "black",
    "white",
    "latino",
    "other_race_or_ethnicity",
    "physical_disability",
    "intellectual_or_learning_disability",
    "psychiatric_or_mental_illness",
    "other_disability",
)

TAG_SEPARATOR = ";"


def _default_identities() -> dict[str, str]:
    return {c: c for c in DEFAULT_IDENTITY_COLUMNS}


@dataclass(frozen=True)
class TableSchema:
    """Column mapping and binarization thresholds for one input file.

    ``identity_columns`` maps column name to subgroup id.  ``tags_column`` is
    an alternative (or addition) holding ``;``-separated subgroup ids, which
    is what :func:`write_scored` emits.
    """

    id_column: str = "id"
    label_column: str = "toxicity"
    score_column: Optional[str] = None
    text_column: Optional[str] = "comment_text"
    tags_column: Optional[str] = None
    identity_columns: Mapping[str, str] = field(default_factory=_default_identities)
    label_threshold: float = 0.5
    identity_threshold: float = 0.5

    def __post_init__(self) -> None:
        object.__setattr__(self, "identity_columns", dict(self.identity_columns))
        cols = self.columns()
        if len(set(cols)) != len(cols):
            raise ValueError(f"schema column names must be distinct: {cols}")
        for name in ("label_threshold", "identity_threshold"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")

    def columns(self) -> list[str]:
        cols = [self.id_column, self.label_column]
        cols += [c for c in (self.score_column, self.text_column, self.tags_column) if c]
        cols += list(self.identity_columns)
        return cols

    @property
    def subgroups(self) -> list[str]:
        """Subgroup ids named by identity columns (tag-column ids are data-dependent)."""
        return list(dict.fromkeys(self.identity_columns.values()))

    def to_dict(self) -> dict:
        return {
            "id_column": self.id_column,
            "label_column": self.label_column,
            "score_column": self.score_column,
            "text_column": self.text_column,
            "tags_column": self.tags_column,
            "identity_columns": dict(self.identity_columns),
            "label_threshold": self.label_threshold,
            "identity_threshold": self.identity_threshold,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "TableSchema":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown schema keys: {sorted(unknown)}")
        ident = d.get("identity_columns")
        if isinstance(ident, (list, tuple)):
            d["identity_columns"] = {c: c for c in ident}
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "TableSchema":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


# the layout write_scored emits
SCORED_SCHEMA = TableSchema(
    id_column="id",
    label_column="label",
    score_column="score",
    text_column=None,
    tags_column="subgroups",
    identity_columns={},
)


@dataclass(frozen=True)
class SliceFilter:
    max_chars: Optional[int] = None
    min_subgroup_count: int = 0

    def __post_init__(self) -> None:
        if self.max_chars is not None and self.max_chars < 1:
            raise ValueError("max_chars must be at least 1")
        if self.min_subgroup_count < 0:
            raise ValueError("min_subgroup_count must be nonnegative")


# ---------------------------------------------------------------------------
# reading


def _format_of(path: Path) -> tuple[str, bool]:
    suffixes = [s.lower() for s in path.suffixes]
    compressed = bool(suffixes) and suffixes[-1] == ".gz"
    if compressed:
        suffixes = suffixes[:-1]
    ext = suffixes[-1] if suffixes else ""
    if ext in (".csv", ".tsv"):
        return ext[1:], compressed
    if ext in (".jsonl", ".ndjson", ".json"):
        return "jsonl", compressed
    raise UnsupportedFormat(f"{path}: cannot infer format from extension {ext or '(none)'!r}")


def _open_text(path: Path, compressed: bool):
    if compressed:
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8-sig", newline="")
    return open(path, encoding="utf-8-sig", newline="")


def _to_float(value, what: str) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ValueError(f"{what} {value!r} is not a number") from None


class TableReader:
    """Single-pass iterator of :class:`LabeledExample` over one file.

    After (or during) iteration, ``rows_read`` counts data rows seen,
    ``skipped`` counts malformed rows dropped, and ``malformed`` keeps the
    first ``keep_errors`` :class:`MalformedRow` errors.  Iterating again
    re-reads the file from the start.
    """

    def __init__(self, path: str | Path, schema: TableSchema, keep_errors: int = 100):
        self.path = Path(path)
        self.schema = schema
        self.format, self.compressed = _format_of(self.path)
        self.keep_errors = keep_errors
        self.rows_read = 0
        self.skipped = 0
        self.malformed: list[MalformedRow] = []

    def __iter__(self) -> Iterator[LabeledExample]:
        self.rows_read = self.skipped = 0
        self.malformed = []
        if not self.path.exists():
            raise FileNotFoundError(f"{self.path}: no such file")
        with _open_text(self.path, self.compressed) as fh:
            records = self._csv_records(fh) if self.format != "jsonl" else self._json_records(fh)
            for line, record in records:
                self.rows_read += 1
                try:
                    example = self._example(record)
                except NonFiniteScore as exc:
                    raise NonFiniteScore(f"{self.path}:{line}: {exc}") from None
                except ValueError as exc:
                    self._skip(line, str(exc))
                    continue
                yield example
        if self.skipped:
            log.warning("%s: skipped %d malformed row(s) of %d", self.path, self.skipped, self.rows_read)

    def _skip(self, line: int, reason: str) -> None:
        self.skipped += 1
        err = MalformedRow(line, reason)
        if len(self.malformed) < self.keep_errors:
            self.malformed.append(err)
        log.debug("%s: %s", self.path, err)

    def _check_columns(self, present) -> None:
        missing = [c for c in self.schema.columns() if c not in present]
        if missing:
            raise MissingColumn(f"{self.path}: missing column(s) {', '.join(missing)}")

    def _csv_records(self, fh):
        reader = csv.reader(fh, delimiter="\t" if self.format == "tsv" else ",")
        try:
            header = next(reader)
        except StopIteration:
            raise MissingColumn(f"{self.path}: empty file, no header row") from None
        self._check_columns(header)
        width = len(header)
        while True:
            try:
                row = next(reader)
            except StopIteration:
                return
            except csv.Error as exc:
                self.rows_read += 1
                self._skip(reader.line_num, f"unparseable row: {exc}")
                continue
            if not row:
                continue
            if len(row) != width:
                self.rows_read += 1
                self._skip(reader.line_num, f"expected {width} fields, found {len(row)}")
                continue
            yield reader.line_num, dict(zip(header, row))

    def _json_records(self, fh):
        checked = False
        for line, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                record = json.loads(raw)
            except json.JSONDecodeError as exc:
                self.rows_read += 1
                self._skip(line, f"invalid JSON: {exc.msg}")
                continue
            if not isinstance(record, dict):
                self.rows_read += 1
                self._skip(line, "expected a JSON object")
                continue
            if not checked:
                self._check_columns(record)
                checked = True
            yield line, record

    def _example(self, record: Mapping) -> LabeledExample:
        s = self.schema
        if any(c not in record for c in s.columns()):
            raise ValueError("missing key(s) " + ", ".join(c for c in s.columns() if c not in record))
        ex_id = record[s.id_column]
        ex_id = "" if ex_id is None else str(ex_id)
        if not ex_id:
            raise ValueError("empty id")

        label_value = _to_float(record[s.label_column], "label")
        if not math.isfinite(label_value):
            raise ValueError(f"label {label_value!r} is not finite")
        label = BinaryLabel.POSITIVE if label_value >= s.label_threshold else BinaryLabel.NEGATIVE

        score = None
        if s.score_column:
            raw = record[s.score_column]
            if raw is None or raw == "":
                raise ValueError("empty score")
            score = _to_float(raw, "score")
            if not math.isfinite(score):
                raise NonFiniteScore(f"score {raw!r} for id {ex_id!r} is not finite")

        tags = set()
        for column, subgroup in s.identity_columns.items():
            raw = record[column]
            if raw is None or raw == "":
                continue
            if _to_float(raw, column) >= s.identity_threshold:
                tags.add(subgroup)
        if s.tags_column:
            raw = record[s.tags_column]
            if isinstance(raw, list):
                tags.update(str(t) for t in raw if t)
            elif raw:
                tags.update(t for t in str(raw).split(TAG_SEPARATOR) if t)

        text = None
        if s.text_column:
            text = record[s.text_column]
            text = "" if text is None else str(text)
        return LabeledExample(ex_id, score, label, frozenset(tags), None if text is None else len(text), text)


def read_table(path: str | Path, schema: TableSchema) -> TableReader:
    """Stream :class:`LabeledExample` records from ``path`` under ``schema``."""
    return TableReader(path, schema)


def apply_slice(examples: Iterable[LabeledExample], filter: SliceFilter) -> Iterator[LabeledExample]:
    """Keep examples strictly shorter than ``filter.max_chars`` characters."""
    if filter.max_chars is None:
        yield from examples
        return
    limit = filter.max_chars
    for ex in examples:
        if ex.char_length is None:
            raise MissingLength(f"example {ex.id!r} has no character length; cannot slice by max_chars")
        if ex.char_length < limit:
            yield ex


# ---------------------------------------------------------------------------
# writing


def write_scored(path: str | Path, examples: Iterable[LabeledExample], *, include_text: bool = False) -> TableSchema:
    """Stream ``examples`` to a CSV (or JSON-lines) file readable by :func:`read_table`.

    Scores are written with ``repr`` so they parse back bit-identical.
    Returns the schema that reads the file back.
    """
    path = Path(path)
    fmt, compressed = _format_of(path)
    schema = SCORED_SCHEMA
    if include_text:
        schema = TableSchema(**{**SCORED_SCHEMA.to_dict(), "text_column": "text"})
    columns = schema.columns()

    def row_of(ex: LabeledExample) -> dict:
        row = {
            "id": ex.id,
            "label": int(ex.label),
            "score": "" if ex.score is None else repr(float(ex.score)),
            "subgroups": TAG_SEPARATOR.join(sorted(ex.subgroups)),
        }
        if include_text:
            row["text"] = ex.text or ""
        return row

    opener = (lambda: io.TextIOWrapper(gzip.open(path, "wb"), encoding="utf-8", newline="")) if compressed else (
        lambda: open(path, "w", encoding="utf-8", newline="")
    )
    try:
        with opener() as fh:
            if fmt == "jsonl":
                for ex in examples:
                    row = row_of(ex)
                    row["score"] = ex.score
                    row["subgroups"] = sorted(ex.subgroups)
                    fh.write(json.dumps(row) + "\n")
            else:
                writer = csv.writer(fh, delimiter="\t" if fmt == "tsv" else ",", lineterminator="\n")
                writer.writerow(columns)
                for ex in examples:
                    row = row_of(ex)
                    writer.writerow([row[c] for c in columns])
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write {path}: {exc.strerror}") from exc
    return schema


# ---------------------------------------------------------------------------
# templates

PLACEHOLDER = "{identity}"


@dataclass(frozen=True)
class TemplateSet:
    """Sentence patterns with one ``{identity}`` slot, and the terms to fill it."""

    templates: tuple[tuple[str, BinaryLabel], ...]
    terms: tuple[tuple[str, str], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "templates", tuple((p, BinaryLabel(int(y))) for p, y in self.templates))
        object.__setattr__(self, "terms", tuple((t, g) for t, g in self.terms))

    @property
    def positive_fraction(self) -> float:
        return sum(int(y) for _, y in self.templates) / len(self.templates)


def _read_tsv(source) -> tuple[list[str], list[list[str]]]:
    reader = csv.reader(source, delimiter="\t")
    header = next(reader)
    return header, [row for row in reader if row and not row[0].startswith("#")]


def load_template_set(templates: str | Path | None = None, terms: str | Path | None = None) -> TemplateSet:
    """Load templates (``label<TAB>pattern``) and terms (``term<TAB>subgroup``).

    Without arguments, loads the bundled set: 1,540 templates, half toxic,
    and 50 identity terms.
    """
    data = resources.files("biasaudit") / "data"

    def rows(p, default):
        src = data / default if p is None else Path(p)
        with src.open(encoding="utf-8", newline="") as fh:
            return _read_tsv(fh)[1]

    template_rows = rows(templates, "templates.tsv")
    term_rows = rows(terms, "identity_terms.tsv")
    try:
        tpl = tuple((pattern, BinaryLabel(int(label))) for label, pattern in template_rows)
        trm = tuple((term, subgroup) for term, subgroup in term_rows)
    except ValueError as exc:
        raise BadTemplate(f"malformed template or term file: {exc}") from exc
    return TemplateSet(tpl, trm)


def generate_templates(t: TemplateSet) -> list[LabeledExample]:
    """Fill every template with every term; scores are left empty."""
    if not t.templates or not t.terms:
        raise BadTemplate("template set needs at least one template and one term")
    for i, (pattern, _) in enumerate(t.templates):
        if pattern.count(PLACEHOLDER) != 1:
            raise BadTemplate(f"template {i} must contain {PLACEHOLDER} exactly once: {pattern!r}")
    out = []
    for i, (pattern, label) in enumerate(t.templates):
        for j, (term, subgroup) in enumerate(t.terms):
            text = pattern.replace(PLACEHOLDER, term)
            out.append(LabeledExample(f"t{i:04d}-{j:02d}", None, label, frozenset({subgroup}), len(text), text))
    return out
