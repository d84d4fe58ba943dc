import numpy as np
import pytest

from emsr.patch_library import (
    build_library,
    kmeans_patches,
    load_library,
    merge_libraries,
    nearest_category,
    save_library,
)
from emsr.registration import PatchPair
from oracles import brute_nearest_mean, wcss


def _pairs_from_groups(level_pairs, per_group, side=9, jitter=0.5, seed=0):
    """Patch pairs drawn from well-separated constant-level groups."""
    rng = np.random.default_rng(seed)
    pairs = []
    for hr_level, lr_level in level_pairs:
        for _ in range(per_group):
            hp = np.full((side, side), hr_level) + rng.normal(0, jitter, (side, side))
            lp = np.full((side, side), lr_level) + rng.normal(0, jitter, (side, side))
            pairs.append(PatchPair(hr_patch=hp, lr_up_patch=lp, center=(0, 0), displacement=(0, 0)))
    return pairs


class TestKmeans:
    def test_two_separated_groups(self):
        patches = [np.zeros((3, 3))] * 20 + [np.full((3, 3), 255.0)] * 20
        cents, assign = kmeans_patches(patches, 2, seed=0)
        assert len(set(assign[:20])) == 1 and len(set(assign[20:])) == 1
        assert assign[0] != assign[20]
        levels = sorted(float(c.mean()) for c in cents)
        assert levels[0] == pytest.approx(0.0, abs=1e-9)
        assert levels[1] == pytest.approx(255.0, abs=1e-9)

    def test_k_equals_count(self):
        rng = np.random.default_rng(1)
        patches = rng.uniform(0, 255, (8, 9))
        cents, assign = kmeans_patches(patches, 8, seed=0)
        assert sorted(assign.tolist()) == list(range(8))
        assert wcss(patches, cents, assign) == pytest.approx(0.0, abs=1e-18)

    def test_three_blob_agreement(self):
        rng = np.random.default_rng(2)
        blobs, labels = [], []
        for lbl, center in enumerate((20.0, 120.0, 230.0)):
            blobs.append(center + rng.normal(0, 4.0, (100, 25)))
            labels += [lbl] * 100
        X = np.concatenate(blobs)
        _, assign = kmeans_patches(X, 3, seed=3)
        # map clusters to majority labels, then count agreement
        agree = 0
        for c in range(3):
            members = np.flatnonzero(assign == c)
            majority = np.bincount([labels[i] for i in members]).argmax()
            agree += sum(1 for i in members if labels[i] == majority)
        assert agree / len(labels) >= 0.95

    def test_objective_non_increasing(self):
        rng = np.random.default_rng(4)
        X = rng.uniform(0, 255, (200, 16))
        values = []
        for iters in range(1, 8):
            cents, assign = kmeans_patches(X, 6, seed=5, max_iter=iters)
            values.append(wcss(X, cents, assign))
        for a, b in zip(values, values[1:]):
            assert b <= a + 1e-6

    def test_validation(self):
        X = np.zeros((5, 4))
        with pytest.raises(ValueError):
            kmeans_patches(X, 0)
        with pytest.raises(ValueError):
            kmeans_patches(X, 6)

    def test_deterministic(self):
        rng = np.random.default_rng(6)
        X = rng.uniform(0, 255, (120, 9))
        a_c, a_a = kmeans_patches(X, 5, seed=7)
        b_c, b_a = kmeans_patches(X, 5, seed=7)
        assert np.array_equal(a_c, b_c) and np.array_equal(a_a, b_a)


class TestBuildLibrary:
    def test_stratification(self):
        levels = [(25.0 * g, 20.0 * g) for g in range(10)]
        lib = build_library(_pairs_from_groups(levels, 300), L=800, k=10, K=10, seed=1)
        assert lib.category_counts.tolist() == [80] * 10
        assert len(lib) == 800

    def test_starved_category(self):
        levels = [(0.0, 0.0), (120.0, 100.0), (240.0, 220.0)]
        pairs = _pairs_from_groups(levels[:2], 500) + _pairs_from_groups([levels[2]], 30, seed=9)
        lib = build_library(pairs, L=240, k=3, K=10, seed=2)
        assert sorted(lib.category_counts.tolist()) == [30, 80, 80]
        assert len(lib) == 190

    def test_means_match_members(self):
        levels = [(10.0 * g, 9.0 * g) for g in range(4)]
        lib = build_library(_pairs_from_groups(levels, 60), L=120, k=4, K=10, seed=3)
        for c in range(lib.k):
            members = lib.lr_up[lib.category_slice(c)]
            assert np.abs(lib.category_means[c] - members.mean(axis=0)).max() <= 1e-9

    def test_validation(self):
        with pytest.raises(ValueError):
            build_library([], L=10, k=2)
        pairs = _pairs_from_groups([(0.0, 0.0)], 5)
        with pytest.raises(ValueError):
            build_library(pairs, L=4, k=8)

    def test_serialization_deterministic(self, tmp_path):
        levels = [(30.0 * g, 25.0 * g) for g in range(5)]
        pairs = _pairs_from_groups(levels, 100)
        p1, p2 = tmp_path / "a.lib", tmp_path / "b.lib"
        save_library(build_library(pairs, L=200, k=5, K=10, seed=4), p1)
        save_library(build_library(pairs, L=200, k=5, K=10, seed=4), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_file_round_trip_bit_exact(self, tmp_path):
        levels = [(30.0 * g, 25.0 * g) for g in range(5)]
        lib = build_library(_pairs_from_groups(levels, 80), L=150, k=5, K=10, seed=5)
        p1, p2 = tmp_path / "a.lib", tmp_path / "b.lib"
        save_library(lib, p1)
        loaded = load_library(p1)
        save_library(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()
        assert loaded.n == lib.n and loaded.k == lib.k and len(loaded) == len(lib)
        assert np.array_equal(loaded.category_ids, lib.category_ids)
        assert np.abs(loaded.hr - lib.hr).max() <= 1e-3

    def test_bad_file_rejected(self, tmp_path):
        path = tmp_path / "junk.lib"
        path.write_bytes(b"NOPE" + b"\0" * 64)
        with pytest.raises(ValueError, match="not a paired-library file"):
            load_library(path)


class TestNearestCategory:
    def test_exact_mean_hit(self):
        levels = [(15.0 * g, 14.0 * g) for g in range(6)]
        lib = build_library(_pairs_from_groups(levels, 50), L=120, k=6, K=10, seed=6)
        for c in range(lib.k):
            assert nearest_category(lib, lib.category_means[c]) == c

    def test_tie_goes_to_lowest_id(self):
        levels = [(0.0, 0.0), (0.0, 100.0)]
        lib = build_library(_pairs_from_groups(levels, 40, jitter=0.0), L=80, k=2, K=10, seed=7)
        mid = (lib.category_means[0] + lib.category_means[1]) / 2.0
        assert nearest_category(lib, mid) == 0

    def test_matches_brute_force(self):
        rng = np.random.default_rng(8)
        levels = [(25.0 * g, 22.0 * g) for g in range(10)]
        lib = build_library(_pairs_from_groups(levels, 40), L=200, k=10, K=10, seed=8)
        for _ in range(50):
            q = rng.uniform(0, 255, lib.n * lib.n)
            assert nearest_category(lib, q) == brute_nearest_mean(lib.category_means, q)

    def test_side_mismatch(self):
        lib = build_library(_pairs_from_groups([(1.0, 1.0)], 30), L=20, k=1, K=10, seed=9)
        with pytest.raises(ValueError):
            nearest_category(lib, np.zeros(25))


class TestMergeLibraries:
    @staticmethod
    def _sorted_rows(lib):
        combined = np.hstack([lib.hr, lib.lr_up])
        order = np.lexsort(combined.T[::-1])
        return combined[order]

    def test_single_merge_preserves_entries(self):
        levels = [(20.0 * g, 18.0 * g) for g in range(4)]
        lib = build_library(_pairs_from_groups(levels, 60), L=120, k=4, K=10, seed=10)
        merged = merge_libraries([lib])
        assert len(merged) == len(lib)
        assert np.array_equal(self._sorted_rows(merged), self._sorted_rows(lib))

    def test_disjoint_merge(self):
        a = build_library(_pairs_from_groups([(0.0, 0.0)], 40, jitter=0.1), L=30, k=1, K=10, seed=11)
        b = build_library(_pairs_from_groups([(250.0, 240.0)], 40, jitter=0.1), L=30, k=1, K=10, seed=12)
        merged = merge_libraries([a, b], k=2, seed=13)
        assert len(merged) == len(a) + len(b)
        together = np.vstack([a.hr, b.hr])
        order_m = np.lexsort(merged.hr.T[::-1])
        order_t = np.lexsort(together.T[::-1])
        assert np.array_equal(merged.hr[order_m], together[order_t])

    def test_many_merge_counts(self):
        libs = [
            build_library(_pairs_from_groups([(10.0 * g, 9.0 * g)], 30, jitter=0.2, seed=g),
                          L=20, k=1, K=10, seed=g)
            for g in range(22)
        ]
        merged = merge_libraries(libs, k=4, seed=0)
        assert len(merged) == sum(len(lib) for lib in libs)

    def test_mismatched_side(self):
        a = build_library(_pairs_from_groups([(1.0, 1.0)], 20, side=5), L=10, k=1, K=10, seed=1)
        b = build_library(_pairs_from_groups([(1.0, 1.0)], 20, side=7), L=10, k=1, K=10, seed=1)
        with pytest.raises(ValueError):
            merge_libraries([a, b])
