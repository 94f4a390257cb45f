import csv
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contrastlink.data_model import (Dataset, DatasetError, LabeledPair, RecordPair, Schema,
                                     load_benchmark_dataset, load_pairs_csv, pairs_csv_ids,
                                     save_pairs_csv, split_pairs)


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


@pytest.fixture
def benchmark_dir(tmp_path):
    write_csv(tmp_path / "tableA.csv", ["id", "title", "brand"], [[0, "black ink tank", "canon"]])
    write_csv(tmp_path / "tableB.csv", ["id", "title", "brand"],
              [[3, "ink tank [black]", "canon"], [4, "ink tank cyan", ""]])
    write_csv(tmp_path / "train.csv", ["ltable_id", "rtable_id", "label"], [[0, 3, 1]])
    write_csv(tmp_path / "valid.csv", ["ltable_id", "rtable_id", "label"], [[0, 4, 0]])
    write_csv(tmp_path / "test.csv", ["ltable_id", "rtable_id", "label"], [])
    return tmp_path


class TestSchema:
    def test_rejects_duplicates_and_empty_names(self):
        with pytest.raises(ValueError):
            Schema(("a", "a"))
        with pytest.raises(ValueError):
            Schema(("a", ""))

    def test_record_length_checked(self):
        with pytest.raises(ValueError):
            Schema(("a", "b")).check_record(("x",))

    def test_pair_label_must_be_binary(self):
        with pytest.raises(ValueError):
            LabeledPair(("a",), ("b",), 2)

    def test_swapped(self):
        p = LabeledPair(("a",), ("b",), 1)
        assert p.swapped() == LabeledPair(("b",), ("a",), 1)


class TestLoadBenchmark:
    def test_joins_rows(self, benchmark_dir):
        ds = load_benchmark_dataset(benchmark_dir)
        assert ds.schema.attributes == ("title", "brand")
        assert ds.train == (LabeledPair(("black ink tank", "canon"), ("ink tank [black]", "canon"), 1),)

    def test_empty_split_is_allowed(self, benchmark_dir):
        assert load_benchmark_dataset(benchmark_dir).test == ()

    def test_missing_cell_is_empty_string(self, benchmark_dir):
        assert load_benchmark_dataset(benchmark_dir).valid[0].right == ("ink tank cyan", "")

    def test_dangling_reference_names_row(self, benchmark_dir):
        write_csv(benchmark_dir / "train.csv", ["ltable_id", "rtable_id", "label"], [[0, 3, 1], [999, 3, 0]])
        with pytest.raises(DatasetError, match=r"train\.csv:3.*999"):
            load_benchmark_dataset(benchmark_dir)

    def test_bad_label(self, benchmark_dir):
        write_csv(benchmark_dir / "train.csv", ["ltable_id", "rtable_id", "label"], [[0, 3, 5]])
        with pytest.raises(DatasetError, match=r"train\.csv:2"):
            load_benchmark_dataset(benchmark_dir)

    def test_header_mismatch(self, benchmark_dir):
        write_csv(benchmark_dir / "tableB.csv", ["id", "name", "brand"], [[3, "x", "y"]])
        with pytest.raises(DatasetError, match="header"):
            load_benchmark_dataset(benchmark_dir)

    def test_missing_file(self, benchmark_dir):
        (benchmark_dir / "valid.csv").unlink()
        with pytest.raises(DatasetError, match="valid.csv"):
            load_benchmark_dataset(benchmark_dir)


class TestSplit:
    def test_exact_division(self):
        pairs = [LabeledPair((str(i),), (str(i),), i % 2) for i in range(500)]
        assert tuple(map(len, split_pairs(pairs, (3, 1, 1), seed=7))) == (300, 100, 100)

    def test_remainder_goes_to_train(self):
        pairs = [LabeledPair((str(i),), (str(i),), 0) for i in range(7)]
        # floor(7/5)=1 for valid and test; train takes the rest
        assert tuple(map(len, split_pairs(pairs, (3, 1, 1)))) == (5, 1, 1)

    def test_deterministic(self):
        pairs = [LabeledPair((str(i),), (str(i),), 0) for i in range(50)]
        assert split_pairs(pairs, seed=3) == split_pairs(pairs, seed=3)

    @settings(max_examples=50, deadline=None)
    @given(n=st.integers(0, 200), seed=st.integers(0, 1000))
    def test_partition(self, n, seed):
        pairs = [LabeledPair((str(i),), (str(i),), i % 2) for i in range(n)]
        parts = split_pairs(pairs, (3, 1, 1), seed)
        joined = [p for part in parts for p in part]
        assert Counter(joined) == Counter(pairs)


class TestPairsCsv:
    def test_round_trip(self, tmp_path):
        schema = Schema(("title", "brand"))
        pairs = [LabeledPair(("a, \"quoted\"", "b"), ("c", ""), 1), LabeledPair(("x", "y"), ("x", "y"), 1)]
        save_pairs_csv(pairs, schema, tmp_path / "pairs.csv")
        schema2, back = load_pairs_csv(tmp_path / "pairs.csv")
        assert schema2 == schema
        assert Counter(back) == Counter(pairs)

    def test_unlabeled(self, tmp_path):
        write_csv(tmp_path / "p.csv", ["id", "left_t", "right_t"], [["r1", "a", "b"]])
        _, pairs = load_pairs_csv(tmp_path / "p.csv", require_label=False)
        assert pairs == [RecordPair(("a",), ("b",))]
        assert pairs_csv_ids(tmp_path / "p.csv") == ["r1"]

    def test_flat_layout_directory(self, tmp_path):
        schema = Schema(("t",))
        pairs = [LabeledPair((str(i),), (str(i + 1),), i % 2) for i in range(10)]
        save_pairs_csv(pairs, schema, tmp_path / "pairs.csv")
        ds = load_benchmark_dataset(tmp_path, seed=1)
        assert isinstance(ds, Dataset)
        assert Counter(ds.all_pairs()) == Counter(pairs)
