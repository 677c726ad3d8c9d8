import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asiplab.core import Record, SparseVector, partition
from asiplab.datagen import (
    ParseError,
    PointCloudSpec,
    generate_point_cloud,
    load_sparse_text,
    parse_sparse_line,
    write_sparse_text,
)
from asiplab.objective import ObjectiveSpec
from asiplab.runtime import RuntimeConfig, VirtualClock
from asiplab.solvers import bsp_gd, default_hyperparams


class TestPointCloud:
    def test_shape_and_labels(self):
        recs = generate_point_cloud(PointCloudSpec(50, 1.0, 1))
        assert len(recs) == 100
        assert all(len(r.features) == 3 and r.features[2] == 1.0 for r in recs)
        assert [r.label for r in recs] == [-1.0] * 50 + [1.0] * 50

    def test_zero_sigma(self):
        recs = generate_point_cloud(PointCloudSpec(5, 0.0, 1))
        assert all(r.features.tolist() == [5.0, 5.0, 1.0] for r in recs if r.label > 0)
        assert all(r.features.tolist() == [0.0, 0.0, 1.0] for r in recs if r.label < 0)

    def test_deterministic(self):
        a = generate_point_cloud(PointCloudSpec(20, 1.0, 4))
        b = generate_point_cloud(PointCloudSpec(20, 1.0, 4))
        c = generate_point_cloud(PointCloudSpec(20, 1.0, 5))
        assert a == b
        assert a != c

    def test_class_means(self):
        n, sigma = 10000, 1.0
        recs = generate_point_cloud(PointCloudSpec(n, sigma, 11))
        for label, center in ((-1.0, (0, 0)), (1.0, (5, 5))):
            pts = np.array([r.features[:2] for r in recs if r.label == label])
            assert np.all(np.abs(pts.mean(axis=0) - center) <= 4 * sigma / np.sqrt(n))

    def test_invalid_spec(self):
        with pytest.raises(ValueError):
            PointCloudSpec(0)
        with pytest.raises(ValueError):
            PointCloudSpec(5, -1.0)

    def test_separable_at_small_sigma(self):
        recs = generate_point_cloud(PointCloudSpec(200, 0.1, 3))
        data = partition(recs, 2, seed=0, dimension=3)
        rt = RuntimeConfig(p=2, time_budget_ms=5000, clock=VirtualClock(ms_per_unit=0.005))
        res = bsp_gd(data, ObjectiveSpec("svm", "l2", 0.0), default_hyperparams("bsp-gd"), rt)
        margins = [r.label * float(np.dot(res.model, r.features)) for r in recs]
        assert min(margins) > 0


class TestSparseText:
    def test_parse_example(self):
        r = parse_sparse_line("+1 1:0.5 3:2")
        assert r.features == SparseVector((0, 2), (0.5, 2.0))
        assert r.label == 1.0

    def test_zero_label(self):
        assert parse_sparse_line("0 2:1").label == -1.0

    @pytest.mark.parametrize("line", ["abc", "2 1:1", "1 1:x", "1 0:1", "1 3:1 2:1", "1 1-2"])
    def test_malformed(self, line, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("+1 1:1\n" + line + "\n")
        with pytest.raises(ParseError) as exc:
            load_sparse_text(path)
        assert exc.value.lineno == 2
        assert "line 2" in str(exc.value)

    def test_bad_first_line_names_line_one(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("abc\n")
        with pytest.raises(ParseError, match="line 1"):
            load_sparse_text(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.txt"
        path.write_text("\n\n")
        with pytest.raises(ValueError):
            load_sparse_text(path)

    def test_dimension_is_max_index(self, tmp_path):
        path = tmp_path / "d.txt"
        path.write_text("+1 1:0.5 3:2\n-1 7:1\n\n1 2:1\n")
        recs, d = load_sparse_text(path)
        assert d == 7 and len(recs) == 3

    @settings(max_examples=50, deadline=None)
    @given(rows=st.lists(st.tuples(st.sampled_from([-1.0, 1.0]),
                              st.dictionaries(st.integers(0, 40),
                                              st.floats(allow_nan=False, allow_infinity=False)
                                              .filter(lambda v: v != 0.0), max_size=6)),
                    min_size=1, max_size=20))
    def test_roundtrip(self, rows, tmp_path_factory):
        recs = [Record(SparseVector.from_pairs(feats.items()), y) for y, feats in rows]
        path = write_sparse_text(tmp_path_factory.mktemp("rt") / "data.txt", recs)
        back, _ = load_sparse_text(path)
        assert back == recs

    def test_dense_records_written_sparse(self, tmp_path):
        recs = generate_point_cloud(PointCloudSpec(3, 1.0, 0))
        back, d = load_sparse_text(write_sparse_text(tmp_path / "c.txt", recs))
        assert d == 3
        for a, b in zip(recs, back):
            assert b.features.to_dense(3).tolist() == a.features.tolist()
            assert a.label == b.label
