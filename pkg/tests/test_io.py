import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cone_sampler import io, metrics, pipeline
from cone_sampler.errors import InputFormatError
from cone_sampler.metrics import ScoreSet
from cone_sampler.pipeline import GenerationConfig, LabeledEmbeddingSet


@pytest.fixture
def dataset(refs_100_64):
    return pipeline.generate_dataset(refs_100_64, GenerationConfig(0.6, samples_per_identity=5))


def test_round_trip(tmp_path, dataset):
    io.write_embeddings(dataset, tmp_path / "d.npy")
    back = io.read_embeddings(tmp_path / "d.npy")
    np.testing.assert_array_equal(back.labels, dataset.labels)
    cos = np.einsum("ij,ij->i", back.embeddings, dataset.embeddings)
    assert np.abs(1 - cos).max() <= 1e-6
    assert np.abs(np.linalg.norm(back.embeddings, axis=1) - 1).max() <= 1e-12


def test_numpy_reads_our_files(tmp_path, dataset):
    io.write_array(tmp_path / "d.npy", dataset.embeddings)
    arr = np.load(tmp_path / "d.npy")
    assert arr.dtype == np.dtype("<f4")
    np.testing.assert_array_equal(arr, dataset.embeddings.astype(np.float32))


def test_we_read_numpy_files(tmp_path, rng):
    x = rng.standard_normal((7, 3))
    for dtype in ("<f4", "<f8"):
        np.save(tmp_path / "n.npy", x.astype(dtype))
        np.testing.assert_array_equal(io.read_array(tmp_path / "n.npy"), x.astype(dtype))


def test_writes_are_byte_identical(tmp_path, dataset):
    io.write_embeddings(dataset, tmp_path / "a.npy")
    io.write_embeddings(dataset, tmp_path / "b.npy")
    assert (tmp_path / "a.npy").read_bytes() == (tmp_path / "b.npy").read_bytes()
    assert (tmp_path / "a.labels").read_bytes() == (tmp_path / "b.labels").read_bytes()


def test_file_size_arithmetic(tmp_path, rng):
    io.write_array(tmp_path / "x.npy", rng.standard_normal((500, 512)))
    raw = (tmp_path / "x.npy").read_bytes()
    header = 10 + int.from_bytes(raw[8:10], "little")
    assert header % 128 == 0
    assert len(raw) == header + 500 * 512 * 4 == 128 + 500 * 512 * 4


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10 ** 7), st.integers(2, 10 ** 5))
def test_header_alignment(n, d):
    h = io.npy_header((n, d))
    assert len(h) % 128 == 0 and h.endswith(b"\n") and h[:6] == b"\x93NUMPY"


def test_empty_set_refused(tmp_path):
    with pytest.raises(InputFormatError, match="empty-dataset"):
        io.write_embeddings(LabeledEmbeddingSet(np.zeros((0, 4)), []), tmp_path / "e.npy")


def _corrupt(tmp_path, raw):
    p = tmp_path / "bad.npy"
    p.write_bytes(raw)
    return p


def _good(rng, n=4, d=3):
    return io.npy_header((n, d)) + rng.standard_normal((n, d)).astype("<f4").tobytes()


@pytest.mark.parametrize("mutate, reason", [
    (lambda raw: b"NOTNPY" + raw[6:], "bad-magic"),
    (lambda raw: raw[:8], "truncated-header"),
    (lambda raw: raw[:6] + b"\x02\x00" + raw[8:], "unsupported-version"),
    (lambda raw: raw[:50], "truncated-header"),
    (lambda raw: raw[:-4], "payload-size-mismatch"),
    (lambda raw: raw + b"\x00" * 4, "payload-size-mismatch"),
    (lambda raw: raw.replace(b"<f4", b"<i4"), "unsupported-dtype"),
    (lambda raw: raw.replace(b"False", b"True "), "fortran-order"),
    (lambda raw: raw.replace(b"'shape'", b"'shapf'"), "malformed-header"),
    (lambda raw: raw.replace(b"{'descr'", b"[[[descr'"), "malformed-header"),
])
def test_malformed_files(tmp_path, rng, mutate, reason):
    with pytest.raises(InputFormatError) as exc:
        io.read_array(_corrupt(tmp_path, mutate(_good(rng))))
    assert exc.value.reason == reason
    assert exc.value.exit_code == 3


def test_bad_shape_and_dimension(tmp_path, rng):
    raw = io.npy_header((4,)) + np.zeros(4, "<f4").tobytes()
    with pytest.raises(InputFormatError, match="bad-shape"):
        io.read_array(_corrupt(tmp_path, raw))
    raw = io.npy_header((4, 1)) + np.zeros(4, "<f4").tobytes()
    with pytest.raises(InputFormatError, match="dimension-too-small"):
        io.read_array(_corrupt(tmp_path, raw))


def test_non_finite_reports_offset(tmp_path):
    x = np.ones((3, 2), "<f4")
    x[1, 1] = np.nan
    raw = io.npy_header(x.shape) + x.tobytes()
    with pytest.raises(InputFormatError, match=r"row 1, byte 140"):
        io.read_array(_corrupt(tmp_path, raw))


def test_label_problems(tmp_path, dataset):
    path = tmp_path / "d.npy"
    io.write_embeddings(dataset, path)
    labels = (tmp_path / "d.labels").read_text().splitlines()
    (tmp_path / "d.labels").write_text("\n".join(labels[:-1]) + "\n")
    with pytest.raises(InputFormatError, match="label-count-mismatch"):
        io.read_embeddings(path)
    (tmp_path / "d.labels").write_text("\n".join(["x"] + labels[1:]) + "\n")
    with pytest.raises(InputFormatError, match="bad-label"):
        io.read_embeddings(path)
    (tmp_path / "d.labels").write_text("\n".join(["-1"] + labels[1:]) + "\n")
    with pytest.raises(InputFormatError, match="negative-label") as exc:
        io.read_embeddings(path)
    assert "d.labels: line 1" in str(exc.value)


def test_zero_row_rejected(tmp_path):
    io.write_array(tmp_path / "z.npy", np.array([[1.0, 0.0], [0.0, 0.0]]))
    io.write_labels(tmp_path / "z.labels", [0, 1])
    with pytest.raises(InputFormatError, match="zero-norm"):
        io.read_embeddings(tmp_path / "z.npy")


def test_labels_format(tmp_path):
    io.write_labels(tmp_path / "l", [3, 0, 12])
    assert (tmp_path / "l").read_bytes() == b"3\n0\n12\n"
    np.testing.assert_array_equal(io.read_labels(tmp_path / "l", 3), [3, 0, 12])


def test_attributes(tmp_path):
    (tmp_path / "a.csv").write_text("yaw,exp\n1.5,smile\n-2,neutral\n")
    attrs = io.read_attributes(tmp_path / "a.csv", 2)
    assert attrs.is_continuous("yaw") and not attrs.is_continuous("exp")
    np.testing.assert_array_equal(attrs.columns["yaw"], [1.5, -2.0])
    with pytest.raises(InputFormatError, match="attribute-count-mismatch"):
        io.read_attributes(tmp_path / "a.csv", 3)
    (tmp_path / "b.csv").write_text("yaw,exp\n1.5\n")
    with pytest.raises(InputFormatError, match="ragged"):
        io.read_attributes(tmp_path / "b.csv")


def test_report_round_trip_is_lossless(tmp_path):
    doc = {"eer": 0.1 + 0.2, "one": 1.0, "tiny": 5e-324, "big": 1.7976931348623157e308, "n": 3,
           "none": None, "flags": ["a"], "nested": {"x": np.float64(2) / 3}, "ok": True}
    io.write_report(tmp_path / "r.json", doc)
    text = (tmp_path / "r.json").read_text()
    assert "0.30000000000000004" in text and '"one": 1.0' in text
    back = io.read_report(tmp_path / "r.json")
    assert back == {**doc, "nested": {"x": 2 / 3}}
    assert isinstance(back["one"], float) and isinstance(back["n"], int)
    with pytest.raises(ValueError):
        io.dumps_report({"x": float("nan")})


@settings(max_examples=200, deadline=None)
@given(st.floats(allow_nan=False, allow_infinity=False))
def test_report_floats_round_trip(x):
    assert json.loads(io.dumps_report({"x": x}))["x"] == x


def test_histogram_csv(tmp_path):
    h = metrics.score_histogram(ScoreSet([0.5, -1.0], [0.9]), bins=4)
    io.write_histogram_csv(tmp_path / "h.csv", h)
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "bin_lo,bin_hi,genuine_count,impostor_count"
    assert lines[1:] == ["-1,-0.5,1,0", "-0.5,0,0,0", "0,0.5,0,0", "0.5,1,1,1"]
