import gzip
import struct

import numpy as np
import pytest

from stratgrad.dataio import (
    IdxFormatError,
    LabeledDataset,
    load_mnist_split,
    read_csv_columns,
    read_idx_images,
    read_idx_labels,
    subsample,
    to_dataset,
    write_csv,
    write_manifest,
    write_svg_lineplot,
)

from idxtools import pack_idx_images, pack_idx_labels, synthetic_digits


@pytest.fixture
def tiny_idx(tmp_path):
    images = np.arange(2 * 28 * 28, dtype=np.uint8).reshape(2, 28, 28) % 251
    labels = np.array([3, 7], dtype=np.uint8)
    img_path = tmp_path / "imgs"
    lbl_path = tmp_path / "lbls"
    img_path.write_bytes(pack_idx_images(images))
    lbl_path.write_bytes(pack_idx_labels(labels))
    return images, labels, img_path, lbl_path


# ---------------------------------------------------------------- idx parsing

def test_idx_round_trip_exact(tiny_idx):
    images, labels, img_path, lbl_path = tiny_idx
    assert np.array_equal(read_idx_images(img_path), images)
    assert np.array_equal(read_idx_labels(lbl_path), labels)


def test_idx_gzip_transparent(tmp_path, tiny_idx):
    images, labels, img_path, lbl_path = tiny_idx
    gz = tmp_path / "imgs.gz"
    with gzip.open(gz, "wb") as f:
        f.write(img_path.read_bytes())
    assert np.array_equal(read_idx_images(gz), images)


def test_idx_bad_magic_names_observed_value(tmp_path):
    path = tmp_path / "bad"
    path.write_bytes(struct.pack(">IIII", 0xDEADBEEF, 1, 2, 2) + b"\x00" * 4)
    with pytest.raises(IdxFormatError, match="0xdeadbeef") as exc:
        read_idx_images(path)
    assert exc.value.kind == "magic"
    with pytest.raises(IdxFormatError, match="0x00000803"):
        read_idx_images(path)


def test_idx_truncated_payload(tmp_path):
    path = tmp_path / "short"
    path.write_bytes(struct.pack(">IIII", 0x803, 2, 28, 28) + b"\x00" * 100)
    with pytest.raises(IdxFormatError, match="offset 16") as exc:
        read_idx_images(path)
    assert exc.value.kind == "truncated"


def test_idx_trailing_bytes(tmp_path):
    path = tmp_path / "long"
    path.write_bytes(struct.pack(">II", 0x801, 2) + b"\x00" * 3)
    with pytest.raises(IdxFormatError) as exc:
        read_idx_labels(path)
    assert exc.value.kind == "dimensions"


def test_idx_label_magic_checked(tmp_path):
    path = tmp_path / "wrongkind"
    path.write_bytes(struct.pack(">IIII", 0x803, 1, 1, 1) + b"\x00")
    with pytest.raises(IdxFormatError, match="label magic"):
        read_idx_labels(path)


# ---------------------------------------------------------------- datasets

def test_to_dataset_layout(tiny_idx):
    images, labels, _, _ = tiny_idx
    ds = to_dataset(images, labels)
    assert ds.features.shape == (2, 784)
    assert ds.n_classes == 8  # labels 3 and 7, classes 0..7
    assert float(ds.features.max()) <= 1.0
    sizes = [idx.size for idx in ds.class_index]
    assert sum(sizes) == 2


def test_to_dataset_zero_image_row():
    ds = to_dataset(np.zeros((1, 4, 4), np.uint8), np.array([0]))
    assert np.array_equal(ds.features[0], np.zeros(16))


def test_to_dataset_count_mismatch():
    with pytest.raises(ValueError):
        to_dataset(np.zeros((2, 4, 4), np.uint8), np.array([0]))


def test_class_index_partitions_rows():
    images, labels = synthetic_digits(5, seed=1)
    ds = to_dataset(images, labels)
    covered = np.sort(np.concatenate(ds.class_index))
    assert np.array_equal(covered, np.arange(ds.n_samples))
    for c, idx in enumerate(ds.class_index):
        assert np.all(ds.labels[idx] == c)


def test_dataset_rejects_out_of_range_features():
    with pytest.raises(ValueError):
        LabeledDataset(np.array([[1.5]]), np.array([0]))


def test_subsample_counts_and_determinism():
    images, labels = synthetic_digits(12, seed=2)
    ds = to_dataset(images, labels)
    sub_a = subsample(ds, 4, seed=3)
    sub_b = subsample(ds, 4, seed=3)
    assert sub_a.n_samples == 40
    assert all(idx.size == 4 for idx in sub_a.class_index)
    assert np.array_equal(sub_a.features, sub_b.features)
    with pytest.raises(ValueError):
        subsample(ds, 13, seed=0)


def test_subsample_full_size_is_identity_up_to_order():
    images, labels = synthetic_digits(6, seed=4)
    ds = to_dataset(images, labels)
    sub = subsample(ds, 6, seed=5)
    key = np.lexsort(ds.features.T)
    key_sub = np.lexsort(sub.features.T)
    assert np.array_equal(ds.features[key], sub.features[key_sub])


def test_load_mnist_split_roundtrip(tmp_path):
    from idxtools import write_mnist_style_dir
    root = write_mnist_style_dir(tmp_path / "d", 3, 2, seed=9)
    train = load_mnist_split(root, "train")
    test = load_mnist_split(root, "test")
    assert train.n_samples == 30
    assert test.n_samples == 20
    assert train.n_classes == test.n_classes == 10
    with pytest.raises(FileNotFoundError):
        load_mnist_split(tmp_path, "train")


# ---------------------------------------------------------------- csv / svg

def test_csv_basic_shape(tmp_path):
    path = tmp_path / "t.csv"
    write_csv(path, {"a": list(range(10)), "b": [0.5] * 10})
    lines = path.read_text().split("\n")
    assert lines[0] == "a,b"
    assert len(lines) == 12 and lines[-1] == ""


def test_csv_round_trip_lossless_for_floats(tmp_path):
    rng = np.random.default_rng(6)
    values = np.concatenate([rng.uniform(-1e9, 1e9, 50),
                             rng.uniform(-1e-9, 1e-9, 50),
                             [0.1, 1 / 3, np.pi, 2.0 ** -52]])
    path = tmp_path / "f.csv"
    write_csv(path, {"x": values})
    back = np.array([float(s) for s in read_csv_columns(path)["x"]])
    assert np.array_equal(back, values)


def test_csv_empty_series_rejected(tmp_path):
    with pytest.raises(ValueError):
        write_csv(tmp_path / "e.csv", {"x": []})
    assert not (tmp_path / "e.csv").exists()
    with pytest.raises(ValueError):
        write_csv(tmp_path / "e.csv", {})


def test_csv_length_mismatch_rejected(tmp_path):
    with pytest.raises(ValueError):
        write_csv(tmp_path / "m.csv", {"a": [1], "b": [1, 2]})


def test_csv_newline_convention(tmp_path):
    path = tmp_path / "n.csv"
    write_csv(path, {"a": [1, 2]})
    raw = path.read_bytes()
    assert b"\r" not in raw
    assert raw.endswith(b"\n")


def test_svg_contains_series_and_legend(tmp_path):
    path = tmp_path / "p.svg"
    write_svg_lineplot(path, {"alpha": [1, 2, 3], "beta": [3, 2, 1]},
                       title="demo", x_label="round", y_label="err")
    text = path.read_text()
    assert text.startswith("<?xml")
    assert text.count("<polyline") == 2
    assert "alpha" in text and "beta" in text and "demo" in text


def test_svg_empty_series_rejected(tmp_path):
    with pytest.raises(ValueError):
        write_svg_lineplot(tmp_path / "p.svg", {"a": []})
    with pytest.raises(ValueError):
        write_svg_lineplot(tmp_path / "p.svg", {})


def test_svg_flat_series_still_renders(tmp_path):
    path = tmp_path / "flat.svg"
    write_svg_lineplot(path, {"c": [2.0, 2.0, 2.0]})
    assert "<polyline" in path.read_text()


def test_io_error_carries_path(tmp_path):
    missing = tmp_path / "no" / "dir" / "f.csv"
    with pytest.raises(OSError) as exc:
        write_csv(missing, {"a": [1]})
    assert "f.csv" in str(exc.value)


def test_manifest_key_values(tmp_path):
    path = tmp_path / "m.txt"
    write_manifest(path, {"seed": 3, "output": ["a.csv", "b.svg"]})
    lines = path.read_text().strip().split("\n")
    assert "seed=3" in lines
    assert "output=a.csv" in lines and "output=b.svg" in lines
