import gzip
import struct
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smcda.data import (
    Dataset, IdxFormatError, SubsetWindow, load_idx, make_synthetic, parse_idx, serialize_idx,
    subset_window_view, write_idx,
)
from smcda.numerics import DomainError, RngStream

MNIST_DIR = Path(__file__).resolve().parents[1] / "data" / "mnist5k"


def idx_bytes(pixels, labels, rows=1, cols=1, img_magic=0x803, lab_magic=0x801, n_img=None, n_lab=None):
    n_img = len(labels) if n_img is None else n_img
    n_lab = len(labels) if n_lab is None else n_lab
    images = struct.pack(">IIII", img_magic, n_img, rows, cols) + bytes(pixels)
    labs = struct.pack(">II", lab_magic, n_lab) + bytes(labels)
    return images, labs


class TestIdx:
    def test_two_pixel_fixture(self):
        d = parse_idx(*idx_bytes([0, 255], [3, 7]))
        assert d.features.tolist() == [[0.0], [1.0]]
        assert d.labels.tolist() == [3, 7]
        assert d.image_shape == (1, 1)

    def test_label_magic_wrong(self):
        img, _ = idx_bytes([0, 255], [3, 7])
        lab = struct.pack(">II", 0x803, 2) + bytes([3, 7])
        with pytest.raises(IdxFormatError, match="labels.*magic.*offset 0"):
            parse_idx(img, lab)

    def test_truncated_payload(self):
        img, lab = idx_bytes([0, 255, 9], [1, 2, 3], cols=1)
        with pytest.raises(IdxFormatError, match="images: truncated payload"):
            parse_idx(img[:-1], lab)
        with pytest.raises(IdxFormatError, match="labels: truncated"):
            parse_idx(img, lab[:-1])
        with pytest.raises(IdxFormatError, match="truncated"):
            parse_idx(img[:6], lab)

    def test_count_mismatch(self):
        img, lab = idx_bytes([0, 255], [1, 2], n_lab=3)
        with pytest.raises(IdxFormatError, match="count mismatch"):
            parse_idx(img, lab + b"\x00")

    def test_gzip_transparent(self):
        img, lab = idx_bytes([1, 2, 3, 4], [0, 1], rows=2, cols=1)
        a = parse_idx(img, lab)
        b = parse_idx(gzip.compress(img), gzip.compress(lab))
        np.testing.assert_array_equal(a.features, b.features)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 5), st.integers(1, 4), st.integers(1, 4), st.data())
    def test_round_trip_bytes(self, n, rows, cols, data):
        pixels = data.draw(st.lists(st.integers(0, 255), min_size=n * rows * cols, max_size=n * rows * cols))
        labels = data.draw(st.lists(st.integers(0, 9), min_size=n, max_size=n))
        img, lab = idx_bytes(pixels, labels, rows, cols)
        assert serialize_idx(parse_idx(img, lab)) == (img, lab)

    def test_write_and_load(self, tmp_path):
        img, lab = idx_bytes(range(12), [0, 1, 2], rows=2, cols=2)
        d = parse_idx(img, lab)
        write_idx(d, tmp_path / "i.gz", tmp_path / "l.gz")
        write_idx(d, tmp_path / "i2.gz", tmp_path / "l2.gz")
        assert (tmp_path / "i.gz").read_bytes() == (tmp_path / "i2.gz").read_bytes()
        back = load_idx(tmp_path / "i.gz", tmp_path / "l.gz")
        np.testing.assert_array_equal(back.features, d.features)
        assert load_idx(tmp_path / "i.gz", tmp_path / "l.gz", limit=2).n == 2

    @pytest.mark.skipif(not MNIST_DIR.exists(), reason="run scripts/fetch_mnist_subset.py first")
    def test_mnist_subset_files(self):
        d = load_idx(MNIST_DIR / "train-images-idx3-ubyte.gz", MNIST_DIR / "train-labels-idx1-ubyte.gz")
        assert d.n == 4000 and d.image_shape == (28, 28)
        assert 0.0 <= d.features.min() and d.features.max() <= 1.0
        assert np.bincount(d.labels).tolist() == [400] * 10


class TestDataset:
    def test_bad_permutation(self):
        with pytest.raises(DomainError):
            Dataset(np.zeros((3, 1)), np.zeros(3), permutation=[0, 0, 1])

    def test_misaligned(self):
        with pytest.raises(DomainError):
            Dataset(np.zeros((3, 1)), np.zeros(2))

    def test_shuffle_reproducible(self):
        d = Dataset(np.arange(10.0)[:, None], np.arange(10))
        a, b = d.shuffled(RngStream(3)), d.shuffled(RngStream(3))
        np.testing.assert_array_equal(a.permutation, b.permutation)
        np.testing.assert_array_equal(a.ordered_labels, d.labels[a.permutation])


class TestWindow:
    def data(self):
        return Dataset(np.arange(20.0)[:, None], np.arange(20)).shuffled(RngStream(1))

    def test_full(self):
        d = self.data()
        (px, _), (bx, by) = subset_window_view(d, SubsetWindow(0, 20, 20))
        assert px.shape[0] == 0
        np.testing.assert_array_equal(by, d.ordered_labels)

    def test_empty(self):
        with pytest.raises(DomainError):
            subset_window_view(self.data(), SubsetWindow(0, 0, 20))

    def test_exceeds(self):
        with pytest.raises(DomainError):
            subset_window_view(Dataset(np.zeros((5, 1)), np.zeros(5)), SubsetWindow(0, 8, 8))
        with pytest.raises(DomainError):
            SubsetWindow(3, 2, 10)

    def test_nested_growth(self):
        d = self.data()
        (_, _), (_, small) = subset_window_view(d, SubsetWindow(0, 5, 20))
        (_, _), (_, big) = subset_window_view(d, SubsetWindow(0, 10, 20))
        np.testing.assert_array_equal(big[:5], small)
        (pre_x, pre_y), (blk_x, blk_y) = subset_window_view(d, SubsetWindow(5, 10, 20))
        np.testing.assert_array_equal(np.concatenate([pre_y, blk_y]), big)


class TestSynthetic:
    def test_two_moons_noise_free(self):
        d = make_synthetic("two_moons", 101, noise=0.0)
        counts = np.bincount(d.labels)
        assert abs(counts[0] - counts[1]) <= 1
        outer = d.features[d.labels == 0]
        np.testing.assert_allclose(np.hypot(*outer.T), 1.0, atol=1e-12)
        inner = d.features[d.labels == 1]
        np.testing.assert_allclose(np.hypot(inner[:, 0] - 1, inner[:, 1] - 0.5), 1.0, atol=1e-12)

    @pytest.mark.parametrize("kind", ["two_moons", "gaussian_blobs"])
    def test_reproducible(self, kind):
        a, b = make_synthetic(kind, 50, seed=4), make_synthetic(kind, 50, seed=4)
        np.testing.assert_array_equal(a.features, b.features)
        assert not np.array_equal(a.features, make_synthetic(kind, 50, seed=5).features)

    def test_blobs_classes(self):
        d = make_synthetic("gaussian_blobs", 30, classes=4, dim=3)
        assert d.features.shape == (30, 3) and set(d.labels.tolist()) == {0, 1, 2, 3}

    def test_linear_gaussian_1d_conjugate(self):
        sigma, noise = 1.5, 0.7
        d, post = make_synthetic("linear_gaussian", 25, noise=noise, seed=2, dim=1, prior_sigma=sigma)
        x, y = d.features[:, 0], d.labels
        # normal-normal: precision adds, mean is precision-weighted data term
        prec = 1 / sigma ** 2 + np.sum(x * x) / noise ** 2
        mean = (np.sum(x * y) / noise ** 2) / prec
        assert post.mean[0] == pytest.approx(mean, rel=1e-12)
        assert post.cov[0, 0] == pytest.approx(1 / prec, rel=1e-12)

    def test_errors(self):
        with pytest.raises(DomainError):
            make_synthetic("two_moons", 1)
        with pytest.raises(DomainError):
            make_synthetic("spirals", 10)
        with pytest.raises(DomainError):
            make_synthetic("linear_gaussian", 10, noise=0.0)
