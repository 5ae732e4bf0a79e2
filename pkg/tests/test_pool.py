import numpy as np
import pytest

from fedstain.errors import UnknownClientError
from fedstain.pool import (
    PoolView,
    StatRecord,
    build_pool,
    fallback_view,
    pool_view,
    read_records,
    record_from_line,
    record_to_line,
    sample_statistics,
    write_records,
)
from fedstain.stats import StatKind


def make_record(client, sample, c=3, seed=0):
    rng = np.random.default_rng(seed)
    mean = rng.normal(size=c)
    std = rng.uniform(0.1, 1.0, size=c)
    return StatRecord(
        client_id=client,
        sample_id=sample,
        color_space="RGB",
        mean=mean,
        std=std,
        shift=rng.normal(size=c),
        scale=rng.uniform(1.5, 4.0, size=c),
    )


def make_images(n, seed=0):
    rng = np.random.default_rng(seed)
    return rng.uniform(0.1, 0.9, size=(n, 3, 8, 8))


class TestSampling:
    @pytest.mark.parametrize("n,ratio,expected", [(25, 0.1, 3), (10, 0.1, 1), (7, 0.1, 1), (30, 0.1, 3)])
    def test_ceiling_counts(self, n, ratio, expected):
        recs = sample_statistics(make_images(n), "c0", ratio, np.random.default_rng(1))
        assert len(recs) == expected

    def test_full_ratio_is_permutation(self):
        recs = sample_statistics(make_images(10), "c0", 1.0, np.random.default_rng(2))
        assert sorted(int(r.sample_id) for r in recs) == list(range(10))

    def test_deterministic_under_seed(self):
        imgs = make_images(7, seed=3)
        a = sample_statistics(imgs, "c0", 0.5, np.random.default_rng(9))
        b = sample_statistics(imgs, "c0", 0.5, np.random.default_rng(9))
        assert [r.sample_id for r in a] == [r.sample_id for r in b]
        for ra, rb in zip(a, b):
            np.testing.assert_array_equal(ra.mean, rb.mean)

    def test_records_match_direct_stats(self):
        imgs = make_images(5, seed=4)
        recs = sample_statistics(imgs, "c0", 1.0, np.random.default_rng(0))
        from fedstain.stats import compute_channel_stats

        for rec in recs:
            cs = compute_channel_stats(imgs[int(rec.sample_id)])
            np.testing.assert_allclose(rec.mean, cs.mean)
            np.testing.assert_allclose(rec.shift, cs.skewness)
            np.testing.assert_allclose(rec.scale, cs.kurtosis)

    @pytest.mark.parametrize("kind", list(StatKind))
    def test_ablation_kinds_fill_pair_slots(self, kind):
        from fedstain.stats import compute_stats_pair

        imgs = make_images(4, seed=6)
        recs = sample_statistics(imgs, "c0", 1.0, np.random.default_rng(1), kind=kind, window=4)
        for rec in recs:
            assert rec.kind is kind
            pair = compute_stats_pair(imgs[int(rec.sample_id)], kind, window=4)
            np.testing.assert_allclose(rec.shift, pair.shift)
            np.testing.assert_allclose(rec.scale, pair.scale)


class TestPool:
    def test_build_and_views(self):
        uploads = {
            f"c{i}": [make_record(f"c{i}", f"s{j}", seed=10 * i + j) for j in range(2)]
            for i in range(3)
        }
        pool = build_pool(uploads, round_no=1)
        assert len(pool) == 6
        view = pool_view(pool, "c1")
        assert len(view) == 4
        assert all(r.client_id != "c1" for r in view.records)

    def test_view_union_restores_pool(self):
        uploads = {f"c{i}": [make_record(f"c{i}", "s0", seed=i)] for i in range(4)}
        pool = build_pool(uploads)
        for cid in uploads:
            view = pool_view(pool, cid)
            merged = set(id(r) for r in view.records) | set(id(r) for r in uploads[cid])
            assert merged == set(id(r) for r in pool.records)

    def test_single_client_empty_view_and_fallback(self):
        own = [make_record("c0", "s0")]
        pool = build_pool({"c0": own})
        view = pool_view(pool, "c0")
        assert view.is_empty()
        fb = fallback_view(own)
        assert len(fb) == 1
        assert fb.draw(np.random.default_rng(0)).client_id == "c0"

    def test_unknown_client(self):
        pool = build_pool({"c0": [make_record("c0", "s0")]})
        with pytest.raises(UnknownClientError):
            build_pool({"ghost": [make_record("ghost", "s0")]}, roster=["c0"])
        with pytest.raises(UnknownClientError):
            pool_view(pool, "ghost", roster=["c0"])

    def test_mislabelled_upload_rejected(self):
        with pytest.raises(UnknownClientError):
            build_pool({"c0": [make_record("c1", "s0")]})

    def test_view_constructor_enforces_exclusion(self):
        with pytest.raises(ValueError):
            PoolView(records=(make_record("c0", "s0"),), excluded_client="c0")


class TestSerialization:
    def test_line_round_trip(self):
        rec = make_record("clinic-7", "sample 3", seed=5)
        line = record_to_line(rec, round_no=4)
        rnd, back = record_from_line(line)
        assert rnd == 4
        assert back.client_id == rec.client_id
        assert back.sample_id == rec.sample_id
        assert back.kind is StatKind.SKEWNESS_KURTOSIS
        for field in ("mean", "std", "shift", "scale"):
            np.testing.assert_array_equal(getattr(back, field), getattr(rec, field))

    def test_line_carries_exactly_four_channel_vectors(self):
        rec = make_record("c0", "s0")
        parts = record_to_line(rec, 0).split("\t")
        vector_fields = [p for p in parts if ";" in p or _is_float(p)]
        # 5 identifier fields then exactly 4 vector fields of C floats each
        assert len(parts) == 9
        scalars = sum(len(p.split(";")) for p in parts[5:])
        assert scalars == 4 * rec.channel_count

    def test_file_round_trip(self, tmp_path):
        recs = [make_record("c0", f"s{i}", seed=i) for i in range(3)]
        path = tmp_path / "stats.tsv"
        write_records(path, recs, round_no=2)
        loaded = read_records(path)
        assert len(loaded) == 3
        assert all(rnd == 2 for rnd, _ in loaded)
        np.testing.assert_array_equal(loaded[1][1].scale, recs[1].scale)


def _is_float(text):
    try:
        float(text)
        return True
    except ValueError:
        return False
