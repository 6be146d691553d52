import numpy as np
import pytest
from scipy.cluster import hierarchy

from voxattr.filterviz import (
    build_filter_summary,
    channel_averages,
    cluster_filters,
    flatten_filters,
    probe_preactivations,
    unflatten_filters,
    write_channel_average_csv,
    write_flat_filter_csv,
)
from voxattr.tensornet import Conv3D, Flatten, MaxPool3D, Model, ModelSpec, ReLU, init_weights

from conftest import small_types


class TestChannelAverages:
    def test_all_ones_channel(self):
        w = np.zeros((1, 2, 3, 3, 3))
        w[0, 1] = 1.0
        avg, scaled = channel_averages(w, np.zeros(1))
        assert avg[0, 0] == 0.0
        assert avg[0, 1] == 1.0

    def test_bias_scaled_by_kernel_volume(self):
        w = np.zeros((2, 1, 3, 3, 3))
        _, scaled = channel_averages(w, np.array([27.0, -13.5]))
        assert np.allclose(scaled, [1.0, -0.5])

    def test_matches_brute_force_mean(self, rng):
        w = rng.normal(size=(4, 3, 3, 3, 3))
        avg, _ = channel_averages(w, np.zeros(4))
        for f in range(4):
            for c in range(3):
                assert avg[f, c] == pytest.approx(float(np.mean(w[f, c])), abs=1e-15)

    def test_linearity(self, rng):
        w = rng.normal(size=(2, 2, 3, 3, 3))
        b = rng.normal(size=2)
        a1, s1 = channel_averages(w, b)
        a2, s2 = channel_averages(2.5 * w, 2.5 * b)
        assert np.allclose(a2, 2.5 * a1)
        assert np.allclose(s2, 2.5 * s1)


class TestFlatten:
    def test_center_delta_lands_at_offset_13(self):
        w = np.zeros((1, 3, 3, 3, 3))
        w[0, 2, 1, 1, 1] = 1.0  # channel 2, cube center
        flat = flatten_filters(w)
        assert flat.shape == (1, 81)
        assert flat[0, 2 * 27 + 13] == 1.0
        assert flat.sum() == 1.0

    def test_z_slowest_x_fastest(self):
        w = np.zeros((1, 1, 3, 3, 3))
        w[0, 0] = np.arange(27.0).reshape(3, 3, 3)  # value = x*9 + y*3 + z
        flat = flatten_filters(w)[0]
        expect = [x * 9 + y * 3 + z for z in range(3) for y in range(3) for x in range(3)]
        assert np.array_equal(flat, expect)

    def test_round_trip(self, rng):
        w = rng.normal(size=(3, 2, 3, 3, 3))
        assert np.array_equal(unflatten_filters(flatten_filters(w), 2, 3), w)

    def test_identical_filters_identical_vectors(self, rng):
        base = rng.normal(size=(1, 2, 3, 3, 3))
        w = np.concatenate([base, base], axis=0)
        flat = flatten_filters(w)
        assert np.array_equal(flat[0], flat[1])


class TestClusterFilters:
    def test_single_filter(self):
        assert cluster_filters(np.zeros((1, 5))) == (0,)

    def test_duplicates_adjacent(self, rng):
        vectors = rng.normal(size=(6, 8))
        vectors[4] = vectors[1]  # exact duplicate pair merges first
        order = cluster_filters(vectors)
        assert sorted(order) == list(range(6))
        pos = {f: i for i, f in enumerate(order)}
        assert abs(pos[1] - pos[4]) == 1

    def test_three_points_on_a_line(self):
        vectors = np.array([[0.0], [1.0], [10.0]])
        order = cluster_filters(vectors)
        pos = {f: i for i, f in enumerate(order)}
        assert abs(pos[0] - pos[1]) == 1
        assert pos[2] in (0, 2)

    def test_matches_scipy_merge_structure(self, rng):
        # same merge hierarchy (as leaf sets and heights) as scipy average linkage
        from voxattr.filterviz import cluster_merges

        for _ in range(5):
            vectors = rng.normal(size=(9, 6))
            link = hierarchy.linkage(vectors, method="average")
            scipy_sets = {}
            members = {i: frozenset({i}) for i in range(9)}
            for row_idx, (a, b, height, _) in enumerate(link):
                merged = members[int(a)] | members[int(b)]
                members[9 + row_idx] = merged
                scipy_sets[merged] = height
            _, merges = cluster_merges(vectors)
            assert {s for s, _ in merges} == set(scipy_sets)
            for leaf_set, height in merges:
                assert height == pytest.approx(scipy_sets[leaf_set], rel=1e-9)

    def test_permutation_invariant_topology(self, rng):
        from voxattr.filterviz import cluster_merges

        vectors = rng.normal(size=(7, 5))
        perm = rng.permutation(7)
        _, base = cluster_merges(vectors)
        _, shuffled = cluster_merges(vectors[perm])
        mapped = {frozenset(int(perm[i]) for i in s): h for s, h in shuffled}
        assert {s: pytest.approx(h) for s, h in base} == mapped


class TestSummary:
    def make_model(self, rng):
        spec = ModelSpec(
            input_channels=4, input_size=6, trunk=(MaxPool3D(), Conv3D(5), ReLU(), Flatten())
        )
        return Model(spec, init_weights(spec, int(rng.integers(1 << 30))))

    def test_summary_shapes(self, rng):
        model = self.make_model(rng)
        summary = build_filter_summary(model)
        assert summary.channel_averages.shape == (5, 4)
        assert summary.flattened.shape == (5, 4 * 27)
        assert sorted(summary.order) == list(range(5))
        assert summary.switched_off is None

    def test_switched_off_detection(self, rng):
        model = self.make_model(rng)
        conv = model.weights.trunk[1]
        conv.weight[2] = -np.abs(conv.weight[2])  # all-negative filter
        conv.bias[2] = -1.0
        conv.bias[3] = abs(conv.bias[3]) + 1.0  # guaranteed live filter
        probe = [np.abs(rng.normal(size=model.spec.input_shape)) for _ in range(2)]
        summary = build_filter_summary(model, probe)
        assert summary.switched_off[2]
        assert not summary.switched_off[3]
        peaks = probe_preactivations(model, probe)
        assert peaks[2] <= 0 < peaks[3]

    def test_csv_outputs(self, rng, tmp_path):
        model = self.make_model(rng)
        summary = build_filter_summary(model)
        avg_path = str(tmp_path / "avg.csv")
        flat_path = str(tmp_path / "flat.csv")
        write_channel_average_csv(summary, small_types(), avg_path, comments=["seed: 0"])
        write_flat_filter_csv(summary, flat_path)
        avg_lines = [l for l in open(avg_path) if not l.startswith("#")]
        header = avg_lines[0].strip().split(",")
        assert header[0] == "filter" and header[-1] == "scaled_bias"
        assert len(avg_lines) == 1 + 5
        first_filter = int(avg_lines[1].split(",")[0])
        assert first_filter == summary.order[0]
        flat_lines = [l for l in open(flat_path) if not l.startswith("#")]
        assert len(flat_lines[1].strip().split(",")) == 1 + 4 * 27
