"""Histogram accounting and KL divergence against direct-summation oracles."""

import math

import numpy as np
import pytest

from conftest import make_image, write_dataset
from sarval.ampstats import (AmplitudeHistogram, SMOOTHING_EPS, histogram,
                             kl_by_category, kl_divergence, merge_histograms)
from sarval.errors import InputError
from sarval.manifest import load_manifest
from sarval.raster import AmplitudeImage


def hist_from_counts(counts) -> AmplitudeHistogram:
    counts = np.asarray(counts, dtype=np.int64)
    return AmplitudeHistogram(bin_count=counts.size, counts=counts,
                              saturated_count=0, sample_count=int(counts.sum()),
                              n_images=1)


def kl_oracle(p, q, eps=SMOOTHING_EPS):
    """Direct per-bin summation, independent of the library implementation."""
    q = [qi + eps for qi in q]
    z = sum(q)
    total = 0.0
    for pi, qi in zip(p, q):
        if pi > 0:
            total += pi * math.log(pi / (qi / z))
    return total


class TestHistogram:
    def test_hand_count(self):
        img = make_image([[0.1, 0.1], [0.9, 1.0]])
        h = histogram([img], bin_count=2)
        assert np.allclose(h.density, [2 / 3, 1 / 3])
        assert h.saturated_fraction == 0.25
        assert h.sample_count == 4

    def test_fully_saturated_is_an_error(self):
        with pytest.raises(InputError) as err:
            histogram([make_image([[1.0, 1.0]])], bin_count=4)
        assert err.value.code == "fully-saturated"

    def test_no_images_is_an_error(self):
        with pytest.raises(InputError) as err:
            histogram([], bin_count=4)
        assert err.value.code == "no-images"

    def test_unnormalized_rejected(self):
        with pytest.raises(InputError):
            histogram([make_image([[0.5]], normalized=False)], bin_count=4)

    def test_uniform_monte_carlo(self):
        # 1e6 uniform draws: every bin within 3 binomial sigmas of 1/256
        # (deterministic for this seed).
        values = np.random.default_rng(5).random(1_000_000).astype(np.float32)
        values[values == 1.0] = 0.0
        img = AmplitudeImage.from_array(values.reshape(1000, 1000), normalized=True)
        h = histogram([img], bin_count=256)
        p = 1 / 256
        sigma = math.sqrt(p * (1 - p) / h.sample_count)
        assert np.all(np.abs(h.density - p) <= 3 * sigma)

    def test_pooling_is_order_invariant(self, rng):
        images = [make_image(rng.random((5, 7)).astype(np.float32) * 0.999)
                  for _ in range(6)]
        a = histogram(images, 32)
        b = histogram(list(reversed(images)), 32)
        assert np.array_equal(a.counts, b.counts)
        assert a.saturated_count == b.saturated_count

    def test_merge_matches_pooled(self, rng):
        imgs = [make_image(rng.random((4, 4)).astype(np.float32) * 0.999)
                for _ in range(4)]
        merged = merge_histograms(histogram(imgs[:2], 16), histogram(imgs[2:], 16))
        pooled = histogram(imgs, 16)
        assert np.array_equal(merged.counts, pooled.counts)
        assert merged.n_images == pooled.n_images == 4

    def test_density_sums_to_one(self, rng):
        for _ in range(10):
            img = make_image(rng.random((9, 9)).astype(np.float32) * 0.999)
            assert abs(histogram([img], 64).density.sum() - 1.0) < 1e-9


class TestKlDivergence:
    def test_identity_is_zero(self, rng):
        # With Q-side smoothing, identity KL picks up one smoothing epsilon
        # per empty P bin, so the exact-zero bound applies to supported P.
        for _ in range(20):
            counts = rng.integers(1, 50, size=16)
            h = hist_from_counts(counts)
            assert abs(kl_divergence(h, h).kl_nats) <= 1e-12

    def test_identity_with_empty_bins_stays_near_zero(self, rng):
        for _ in range(20):
            counts = rng.integers(0, 50, size=16)
            counts[0] += 1
            h = hist_from_counts(counts)
            assert abs(kl_divergence(h, h).kl_nats) <= 16 * SMOOTHING_EPS

    def test_reference_value(self):
        p = hist_from_counts([2, 2])
        q = hist_from_counts([1, 3])
        assert abs(kl_divergence(p, q).kl_nats - 0.143841) < 1e-6

    def test_degenerate_p_gives_ln2(self):
        p = hist_from_counts([5, 0])
        q = hist_from_counts([2, 2])
        assert abs(kl_divergence(p, q).kl_nats - math.log(2)) < 1e-9

    def test_matches_direct_summation_oracle(self, rng):
        for _ in range(100):
            bins = int(rng.integers(2, 65))
            p = hist_from_counts(rng.integers(0, 20, size=bins) + (rng.random(bins) < 0.5))
            q = hist_from_counts(rng.integers(0, 20, size=bins) + (rng.random(bins) < 0.5))
            if p.counts.sum() == 0 or q.counts.sum() == 0:
                continue
            expected = kl_oracle(p.density.tolist(), q.density.tolist())
            assert abs(kl_divergence(p, q).kl_nats - expected) < 1e-10

    def test_gibbs_non_negativity(self, rng):
        for _ in range(200):
            bins = int(rng.integers(2, 33))
            p = hist_from_counts(rng.integers(1, 30, size=bins))
            q = hist_from_counts(rng.integers(1, 30, size=bins))
            assert kl_divergence(p, q).kl_nats >= -1e-12

    def test_bin_mismatch(self):
        with pytest.raises(InputError) as err:
            kl_divergence(hist_from_counts([1, 1]), hist_from_counts([1, 1, 1]))
        assert err.value.code == "bin-mismatch"

    def test_smoothing_sensitivity(self, rng):
        # Halving the smoothing changes D by < 1e-6 when Q covers P's support.
        for _ in range(20):
            bins = int(rng.integers(2, 32))
            p = hist_from_counts(rng.integers(0, 10, size=bins) + 1)
            q = hist_from_counts(rng.integers(0, 10, size=bins) + 1)
            full = kl_divergence(p, q, smoothing_eps=SMOOTHING_EPS).kl_nats
            half = kl_divergence(p, q, smoothing_eps=SMOOTHING_EPS / 2).kl_nats
            assert abs(full - half) < 1e-6


class TestKlByCategory:
    def build(self, tmp_path, name, transform=None):
        rng = np.random.default_rng(7)
        images, captions = {}, {}
        for label, word in (("forest", "forest"), ("city", "city")):
            for i in range(2):
                data = rng.random((16, 16)).astype(np.float32) * 0.999
                if transform:
                    data = transform(data)
                images[f"{label}_{i}.ras"] = make_image(data)
                captions[f"{label}_{i}.ras"] = f"A {word} scene."
        return load_manifest(write_dataset(tmp_path / name, images, captions))

    def test_identical_sets_give_zero(self, tmp_path):
        m = self.build(tmp_path, "real")
        reports = kl_by_category(m, m, bin_count=32)
        present = [r for r in reports if not r.absent]
        assert {r.category for r in present} == {None, "forest", "city"}
        assert all(abs(r.kl_nats) <= 1e-10 for r in present)

    def test_squared_amplitudes_increase_kl(self, tmp_path):
        real = self.build(tmp_path, "real")
        gen = self.build(tmp_path, "gen", transform=lambda d: d ** 2)
        reports = kl_by_category(real, gen, bin_count=32)
        for r in reports:
            if not r.absent:
                assert r.kl_nats > 0

    def test_category_missing_on_one_side_flagged_absent(self, tmp_path):
        real = self.build(tmp_path, "real")
        rng = np.random.default_rng(3)
        gen_images = {"port_0.ras": make_image(rng.random((8, 8)).astype(np.float32) * 0.9)}
        gen = load_manifest(write_dataset(tmp_path / "gen2", gen_images,
                                          {"port_0.ras": "A port."}))
        reports = {r.category: r for r in kl_by_category(real, gen, bin_count=16)}
        assert reports["forest"].absent          # nothing generated for forest
        assert reports["port"].absent            # nothing real for port
        assert not math.isnan(reports[None].kl_nats)  # global still computed
        assert reports["forest"].n_real == 2 and reports["forest"].n_gen == 0
