import hashlib

import numpy as np
import pytest

from fedstain.errors import ImageTooSmallError, InfeasibleShapeError
from fedstain.manifest import load_all_domains, read_manifest, write_manifest
from fedstain.patches import PatchSpec, extract_patches, passes_quality, quality_check, sample_negatives
from fedstain.stats import compute_channel_stats
from fedstain.synthetic import DomainSpec, calibrate_shape, default_domain_specs, generate_domain

from oracles import brute_force_moments


def pooled_stats(images, channel):
    return compute_channel_stats(images[:, channel].reshape(1, 1, -1))


def make_spec(**kw):
    base = dict(
        name="t",
        mean=0.5,
        std=0.07,
        skewness=0.0,
        kurtosis=3.0,
        texture_seed=5,
        n_samples=60,
        image_hw=32,
    )
    base.update(kw)
    return DomainSpec(**base)


class TestShapeCalibration:
    @pytest.mark.parametrize(
        "s,k", [(0.0, 3.0), (0.413, 3.29), (-0.896, 4.2), (0.0, 2.4), (1.2, 6.0)]
    )
    def test_reachable_targets(self, s, k):
        eps, delta = calibrate_shape(s, k)
        assert np.isfinite(eps) and delta > 0

    def test_moment_inequality_violation(self):
        with pytest.raises(InfeasibleShapeError):
            calibrate_shape(2.0, 3.0)  # needs K >= 5

    def test_unreachable_floor(self):
        with pytest.raises(InfeasibleShapeError):
            calibrate_shape(0.0, 2.05)  # below the family's symmetric floor


class TestGenerator:
    def test_gaussian_target_is_gaussian_like(self):
        images, _ = generate_domain(make_spec(skewness=0.0, kurtosis=3.0))
        cs = pooled_stats(images, 0)
        assert abs(cs.skewness[0]) < 0.02
        assert abs(cs.kurtosis[0] - 3.0) < 0.05

    def test_paper_shape_target_hit(self):
        images, _ = generate_domain(make_spec(skewness=0.413, kurtosis=3.29))
        for c in range(3):
            cs = pooled_stats(images, c)
            assert cs.skewness[0] == pytest.approx(0.413, abs=0.05)
            assert cs.kurtosis[0] == pytest.approx(3.29, abs=0.1)
            assert cs.mean[0] == pytest.approx(0.5, abs=1e-3)
            assert cs.std[0] == pytest.approx(0.07, abs=1e-3)

    def test_all_default_specs_within_tolerance(self):
        for spec in default_domain_specs(n_samples=40):
            images, labels = generate_domain(spec)
            assert set(labels.tolist()) == {0, 1}
            for c in range(3):
                cs = pooled_stats(images, c)
                assert cs.skewness[0] == pytest.approx(spec.skewness[c], abs=0.1)
                assert cs.kurtosis[0] == pytest.approx(spec.kurtosis[c], abs=0.1)

    def test_same_texture_seed_same_geometry_different_stats(self):
        a_spec = make_spec(skewness=0.413, kurtosis=3.29, mean=0.35, std=0.05)
        b_spec = make_spec(skewness=-0.896, kurtosis=4.2, mean=0.7, std=0.09)
        a_images, a_labels = generate_domain(a_spec)
        b_images, b_labels = generate_domain(b_spec)
        np.testing.assert_array_equal(a_labels, b_labels)
        # monotone stain maps preserve the pooled pixel ordering exactly
        for c in range(3):
            a_order = np.argsort(a_images[:, c].ravel(), kind="stable")
            b_order = np.argsort(b_images[:, c].ravel(), kind="stable")
            np.testing.assert_array_equal(a_order, b_order)
        assert abs(pooled_stats(a_images, 0).mean[0] - pooled_stats(b_images, 0).mean[0]) > 0.2

    def test_deterministic(self):
        a, la = generate_domain(make_spec())
        b, lb = generate_domain(make_spec())
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(la, lb)

    def test_output_in_unit_range(self):
        for spec in default_domain_specs(n_samples=30):
            images, _ = generate_domain(spec)
            assert images.min() >= 0.0 and images.max() <= 1.0

    def test_infeasible_spec_rejected(self):
        with pytest.raises(InfeasibleShapeError):
            make_spec(skewness=2.0, kurtosis=3.0)
        with pytest.raises(InfeasibleShapeError):
            make_spec(std=0.0)


class TestQualityFilter:
    SPEC = PatchSpec(patch_size=32, max_white_fraction=0.5, min_edge_complexity=0.001,
                     min_color_spread=0.005)

    def test_all_white_rejected(self):
        patch = np.ones((3, 32, 32))
        assert quality_check(patch, self.SPEC) == "white_fraction"

    def test_noise_patch_accepted(self):
        patch = np.random.default_rng(0).uniform(0.2, 0.8, size=(3, 32, 32))
        assert passes_quality(patch, self.SPEC)

    def test_flat_dark_patch_rejected_for_edges(self):
        patch = np.full((3, 32, 32), 0.4)
        assert quality_check(patch, self.SPEC) in ("edge_complexity", "color_spread")

    def test_low_spread_rejected(self):
        rng = np.random.default_rng(1)
        patch = 0.5 + 0.001 * rng.normal(size=(3, 32, 32))
        spec = PatchSpec(patch_size=32, max_white_fraction=0.9, min_edge_complexity=0.0,
                         min_color_spread=0.01)
        assert quality_check(patch, spec) == "color_spread"

    def test_zero_thresholds_accept_everything(self):
        spec = PatchSpec(patch_size=32, max_white_fraction=0.0, min_edge_complexity=0.0,
                         min_color_spread=0.0)
        assert passes_quality(np.ones((3, 32, 32)), spec)
        assert passes_quality(np.zeros((3, 32, 32)), spec)


class TestPatchExtraction:
    SPEC = PatchSpec(patch_size=32)

    def image(self, h=128, w=160, seed=0):
        return np.random.default_rng(seed).uniform(size=(3, h, w))

    def test_center_annotation_offset_nonzero(self):
        img = self.image()
        rng = np.random.default_rng(1)
        patches = extract_patches(img, [(80, 64)], self.SPEC, rng)
        assert len(patches) == 1
        patch, label = patches[0]
        assert label == 1 and patch.shape == (3, 32, 32)
        centered = img[:, 64 - 16 : 64 + 16, 80 - 16 : 80 + 16]
        assert not np.array_equal(patch, centered)

    def test_annotated_point_inside_patch(self):
        img = self.image()
        rng = np.random.default_rng(2)
        for x, y in [(40, 40), (100, 90), (30, 100)]:
            (patch, _), = extract_patches(img, [(x, y)], self.SPEC, rng)
            # locate the crop by matching content
            found = False
            for top in range(0, 128 - 32 + 1):
                for left in range(0, 160 - 32 + 1):
                    if np.array_equal(img[:, top : top + 32, left : left + 32], patch):
                        assert top <= y < top + 32 and left <= x < left + 32
                        found = True
                        break
                if found:
                    break
            assert found

    def test_corner_annotation_falls_back_to_corner(self):
        img = self.image()
        rng = np.random.default_rng(3)
        (patch, _), = extract_patches(img, [(0, 0)], self.SPEC, rng)
        np.testing.assert_array_equal(patch, img[:, :32, :32])
        (patch2, _), = extract_patches(img, [(159, 127)], self.SPEC, rng)
        np.testing.assert_array_equal(patch2, img[:, -32:, -32:])

    def test_negative_sampling_avoids_annotations(self):
        img = self.image()
        rng = np.random.default_rng(4)
        annotations = [(80, 64)]
        negs = sample_negatives(img, annotations, self.SPEC, rng, count=5)
        assert len(negs) == 5
        for patch, label in negs:
            assert label == 0
            assert patch.shape == (3, 32, 32)

    def test_fully_annotated_image_yields_no_negatives(self):
        img = self.image(h=64, w=64)
        annotations = [(x, y) for x in range(0, 64, 16) for y in range(0, 64, 16)]
        with pytest.warns(UserWarning):
            negs = sample_negatives(img, annotations, self.SPEC, np.random.default_rng(5), count=3)
        assert negs == []

    def test_too_small_image(self):
        with pytest.raises(ImageTooSmallError):
            extract_patches(np.zeros((3, 16, 16)), [(4, 4)], self.SPEC, np.random.default_rng(0))

    def test_annotation_csv_reader(self, tmp_path):
        from fedstain.patches import read_annotations_csv

        path = tmp_path / "ann.csv"
        path.write_text("x,y\n12.5,30\n7,8\n")
        assert read_annotations_csv(path) == [(12.5, 30.0), (7.0, 8.0)]
        bare = tmp_path / "bare.csv"
        bare.write_text("1,2\n3,4,extra\n")
        assert read_annotations_csv(bare) == [(1.0, 2.0), (3.0, 4.0)]


class TestManifest:
    def small_domains(self):
        specs = default_domain_specs(n_samples=8, image_hw=32)
        return {s.name: generate_domain(s) for s in specs[:2]}

    def test_round_trip(self, tmp_path):
        domains = self.small_domains()
        index = write_manifest(tmp_path / "data", domains)
        manifest = read_manifest(index)
        loaded = load_all_domains(manifest)
        assert set(loaded) == set(domains)
        for name in domains:
            images, labels = domains[name]
            got_images, got_labels = loaded[name]
            np.testing.assert_array_equal(got_labels, labels)
            # 8-bit quantization bounds the reconstruction error
            assert np.max(np.abs(got_images - images)) <= 0.5 / 255 + 1e-12

    def test_deterministic_bytes(self, tmp_path):
        domains = self.small_domains()
        digests = []
        for sub in ("a", "b"):
            root = tmp_path / sub
            write_manifest(root, domains)
            h = hashlib.sha256()
            for path in sorted(root.rglob("*")):
                if path.is_file():
                    h.update(path.name.encode())
                    h.update(path.read_bytes())
            digests.append(h.hexdigest())
        assert digests[0] == digests[1]

    def test_missing_file_detected(self, tmp_path):
        domains = self.small_domains()
        index = write_manifest(tmp_path / "data", domains)
        victim = next((tmp_path / "data").rglob("*.png"))
        victim.unlink()
        with pytest.raises(FileNotFoundError):
            read_manifest(index)

    def test_quantization_preserves_pooled_moments(self, tmp_path):
        spec = make_spec(skewness=0.413, kurtosis=3.29, n_samples=40)
        images, labels = generate_domain(spec)
        index = write_manifest(tmp_path / "data", {"d": (images, labels)})
        loaded, _ = load_all_domains(read_manifest(index))["d"]
        cs = pooled_stats(loaded, 0)
        assert cs.skewness[0] == pytest.approx(0.413, abs=0.05)
        assert cs.kurtosis[0] == pytest.approx(3.29, abs=0.1)


class TestLabelStainIndependence:
    def test_stats_only_classifier_near_chance(self):
        # the label signal is geometric: per-image channel statistics must
        # carry almost none of it
        from sklearn.linear_model import LogisticRegression
        from sklearn.model_selection import cross_val_score
        from sklearn.pipeline import make_pipeline
        from sklearn.preprocessing import StandardScaler

        from fedstain.estimator import StainStatsExtractor

        for spec in default_domain_specs(n_samples=600):
            X, y = generate_domain(spec)
            feats = StainStatsExtractor().fit_transform(X)
            pipe = make_pipeline(StandardScaler(), LogisticRegression(max_iter=500))
            acc = cross_val_score(pipe, feats, y, cv=5).mean()
            assert acc <= 0.58, f"{spec.name}: stats leak label signal (acc={acc:.3f})"
