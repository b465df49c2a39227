import gzip
import json
import tracemalloc

import pytest
from hypothesis import given
from hypothesis import strategies as st

from biasaudit.datasets import (
    DEFAULT_IDENTITY_COLUMNS,
    SCORED_SCHEMA,
    SliceFilter,
    TableSchema,
    TemplateSet,
    apply_slice,
    generate_templates,
    load_template_set,
    read_table,
    write_scored,
)
from biasaudit.errors import BadTemplate, MissingColumn, MissingLength, NonFiniteScore, UnsupportedFormat
from biasaudit.metrics import BinaryLabel, LabeledExample

SMALL = TableSchema(
    id_column="id",
    label_column="toxicity",
    text_column="comment_text",
    identity_columns={"male": "male", "female": "female"},
)


def write_csv(path, text):
    path.write_text(text, encoding="utf-8")
    return path


@pytest.fixture
def corpus(tmp_path):
    return write_csv(
        tmp_path / "corpus.csv",
        "id,comment_text,toxicity,male,female\n"
        "1,hello there,0.8,0.6,\n"
        '2,"quoted, with comma",0.2,,0.5\n'
        "3,short,0.5,0.4,0.0\n",
    )


class TestReadTable:
    def test_binarization_and_tags(self, corpus):
        rows = {ex.id: ex for ex in read_table(corpus, SMALL)}
        assert rows["1"].label is BinaryLabel.POSITIVE and rows["1"].subgroups == {"male"}
        assert rows["2"].label is BinaryLabel.NEGATIVE and rows["2"].subgroups == {"female"}
        # threshold is inclusive, 0.4 < 0.5 is not tagged
        assert rows["3"].label is BinaryLabel.POSITIVE and rows["3"].subgroups == frozenset()
        assert rows["2"].text == "quoted, with comma" and rows["2"].char_length == 18
        assert rows["1"].score is None

    def test_missing_column(self, corpus):
        schema = TableSchema(identity_columns={"asian": "asian"}, text_column=None)
        with pytest.raises(MissingColumn):
            list(read_table(corpus, schema))

    def test_malformed_rows_are_skipped_and_counted(self, tmp_path):
        path = write_csv(
            tmp_path / "bad.csv",
            "id,comment_text,toxicity,male,female\n"
            "1,ok,0.1,,\n"
            "2,too,many,fields,0,0,0\n"
            "3,bad label,abc,,\n"
            ",no id,0.1,,\n"
            "5,ok,0.9,1,\n",
        )
        reader = read_table(path, SMALL)
        ids = [ex.id for ex in reader]
        assert ids == ["1", "5"]
        assert reader.skipped == 3 and reader.rows_read == 5
        assert [e.line for e in reader.malformed] == [3, 4, 5]

    def test_non_finite_score_aborts(self, tmp_path):
        path = write_csv(tmp_path / "s.csv", "id,label,score,subgroups\n1,1,0.5,\n2,0,nan,\n")
        with pytest.raises(NonFiniteScore, match="s.csv:3"):
            list(read_table(path, SCORED_SCHEMA))

    def test_jsonl(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text(
            json.dumps({"id": 1, "comment_text": "hi", "toxicity": 0.9, "male": 0.7, "female": None})
            + "\n\nnot json\n"
            + json.dumps({"id": 2, "comment_text": "yo", "toxicity": 0.1, "male": 0, "female": 1})
            + "\n"
        )
        reader = read_table(path, SMALL)
        rows = list(reader)
        assert [(r.id, r.label, r.subgroups) for r in rows] == [
            ("1", BinaryLabel.POSITIVE, {"male"}),
            ("2", BinaryLabel.NEGATIVE, {"female"}),
        ]
        assert reader.skipped == 1

    def test_gzip(self, tmp_path, corpus):
        gz = tmp_path / "corpus.csv.gz"
        gz.write_bytes(gzip.compress(corpus.read_bytes()))
        assert [e.id for e in read_table(gz, SMALL)] == ["1", "2", "3"]

    def test_unknown_extension(self, tmp_path):
        with pytest.raises(UnsupportedFormat):
            read_table(tmp_path / "data.parquet", SMALL)

    def test_char_length_counts_code_points(self, tmp_path):
        path = write_csv(tmp_path / "u.csv", "id,comment_text,toxicity,male,female\n1,naïve 😀,0,,\n")
        (ex,) = read_table(path, SMALL)
        assert ex.char_length == 7

    @given(st.floats(0, 1), st.floats(0.01, 0.98), st.floats(0.001, 0.5))
    def test_binarization_monotone(self, value, lo, delta):
        hi = min(lo + delta, 0.99)
        low_schema = TableSchema(label_threshold=lo)
        high_schema = TableSchema(label_threshold=hi)
        row = {"id": "1", "toxicity": value, "comment_text": "", **{c: "" for c in DEFAULT_IDENTITY_COLUMNS}}
        from biasaudit.datasets import TableReader

        a = TableReader.__new__(TableReader)
        a.schema = low_schema
        b = TableReader.__new__(TableReader)
        b.schema = high_schema
        if a._example(row).label is BinaryLabel.NEGATIVE:
            assert b._example(row).label is BinaryLabel.NEGATIVE


class TestSchema:
    def test_roundtrip_json(self, tmp_path):
        SMALL.save(tmp_path / "s.json")
        assert TableSchema.load(tmp_path / "s.json") == SMALL

    def test_identity_list_form(self):
        s = TableSchema.from_dict({"identity_columns": ["male", "female"]})
        assert s.identity_columns == {"male": "male", "female": "female"}

    @pytest.mark.parametrize("bad", [{"label_threshold": 0.0}, {"identity_threshold": 1.0}, {"label_column": "id"}])
    def test_invalid(self, bad):
        with pytest.raises(ValueError):
            TableSchema(**bad)

    def test_unknown_keys(self):
        with pytest.raises(ValueError, match="unknown"):
            TableSchema.from_dict({"colour": "red"})

    def test_default_identities(self):
        assert len(DEFAULT_IDENTITY_COLUMNS) == 23
        assert "homosexual_gay_or_lesbian" in TableSchema().subgroups


def ex(i, n):
    return LabeledExample(str(i), 0.5, BinaryLabel.NEGATIVE, char_length=n)


class TestApplySlice:
    def test_strict_inequality(self):
        assert [e.id for e in apply_slice([ex(1, 99), ex(2, 100), ex(3, 5)], SliceFilter(max_chars=100))] == ["1", "3"]

    def test_no_limit_is_identity(self):
        data = [ex(1, 400), LabeledExample("2", 0.1, BinaryLabel.POSITIVE)]
        assert list(apply_slice(data, SliceFilter())) == data

    def test_missing_length(self):
        with pytest.raises(MissingLength):
            list(apply_slice([LabeledExample("1", 0.5, BinaryLabel.NEGATIVE)], SliceFilter(max_chars=10)))

    def test_bad_filter(self):
        with pytest.raises(ValueError):
            SliceFilter(max_chars=0)


def key(examples):
    return sorted((e.id, e.score, e.label, e.subgroups) for e in examples)


class TestWriteScored:
    def test_roundtrip(self, tmp_path):
        data = [
            LabeledExample("a", 0.1 + 0.2, BinaryLabel.POSITIVE, frozenset({"g", "h k"})),
            LabeledExample("b,c", 1e-17, BinaryLabel.NEGATIVE, frozenset()),
            LabeledExample('d"q', 2 / 3, BinaryLabel.NEGATIVE, frozenset({"g"})),
        ]
        for name in ("s.csv", "s.jsonl", "s.csv.gz"):
            schema = write_scored(tmp_path / name, data)
            assert key(read_table(tmp_path / name, schema)) == key(data)

    def test_text_roundtrip(self, tmp_path):
        data = [LabeledExample("a", 0.5, BinaryLabel.POSITIVE, text="line\nbreak, and comma", char_length=21)]
        schema = write_scored(tmp_path / "t.csv", data, include_text=True)
        (back,) = read_table(tmp_path / "t.csv", schema)
        assert back.text == data[0].text and back.char_length == 21

    def test_empty_is_header_only(self, tmp_path):
        write_scored(tmp_path / "e.csv", [])
        assert (tmp_path / "e.csv").read_text() == "id,label,score,subgroups\n"
        assert list(read_table(tmp_path / "e.csv", SCORED_SCHEMA)) == []

    @given(
        st.lists(
            st.tuples(
                st.floats(allow_nan=False, allow_infinity=False),
                st.booleans(),
                st.sets(st.text("abcxyz_ ", min_size=1, max_size=5)),
            ),
            max_size=20,
        )
    )
    def test_roundtrip_property(self, rows):
        import tempfile
        from pathlib import Path

        data = [LabeledExample(f"id{i}", s, BinaryLabel(int(y)), frozenset(t)) for i, (s, y, t) in enumerate(rows)]
        with tempfile.TemporaryDirectory() as d:
            path = Path(d) / "p.csv"
            schema = write_scored(path, data)
            assert key(read_table(path, schema)) == key(data)

    def test_streamed_memory_is_bounded(self, tmp_path):
        def stream(n):
            for i in range(n):
                yield LabeledExample(f"e{i}", i / n, BinaryLabel(i % 2), frozenset({"g"}) if i % 3 else frozenset())

        peaks = []
        for n in (20_000, 200_000):
            tracemalloc.start()
            write_scored(tmp_path / f"m{n}.csv", stream(n))
            peak_write = tracemalloc.get_traced_memory()[1]
            tracemalloc.reset_peak()
            count = sum(1 for _ in read_table(tmp_path / f"m{n}.csv", SCORED_SCHEMA))
            peak_read = tracemalloc.get_traced_memory()[1]
            tracemalloc.stop()
            assert count == n
            peaks.append((peak_write, peak_read))
        # ten times the rows, well under twice the memory
        assert peaks[1][0] < 2 * peaks[0][0] + 65536
        assert peaks[1][1] < 2 * peaks[0][1] + 65536


class TestTemplates:
    def test_single(self):
        t = TemplateSet(templates=(("I am {identity}.", 0),), terms=(("gay", "gay"),))
        (e,) = generate_templates(t)
        assert e.text == "I am gay." and e.subgroups == {"gay"} and e.score is None

    def test_balance(self):
        terms = tuple((f"term{i}", f"g{i}") for i in range(50))
        tpls = (("{identity} a", 1), ("{identity} b", 1), ("{identity} c", 0), ("{identity} d", 0))
        out = generate_templates(TemplateSet(tpls, terms))
        assert len(out) == 200
        for g in (f"g{i}" for i in range(50)):
            labels = [int(e.label) for e in out if g in e.subgroups]
            assert sum(labels) / len(labels) == 0.5

    @pytest.mark.parametrize("pattern", ["no slot", "{identity} and {identity}"])
    def test_bad_template(self, pattern):
        with pytest.raises(BadTemplate):
            generate_templates(TemplateSet(((pattern, 1),), (("x", "x"),)))

    def test_empty(self):
        with pytest.raises(BadTemplate):
            generate_templates(TemplateSet((), (("x", "x"),)))

    def test_bundled_set(self):
        t = load_template_set()
        assert len(t.templates) == 1540 and len(t.terms) == 50
        assert t.positive_fraction == 0.5
        out = generate_templates(t)
        assert len(out) == 77_000
        assert len({e.id for e in out}) == 77_000
