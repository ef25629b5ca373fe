import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twinsight.data import (
    FULLY_LABELED,
    FULLY_UNLABELED,
    PARTIALLY_LABELED,
    UNLABELED,
    AugmentPolicy,
    DataFormatError,
    Dataset,
    augment,
    build_scenario,
    dirichlet_partition,
    generate_blobs,
    load_csv,
    save_csv,
)


def nearest_centroid_acc(ds, seed):
    rng = np.random.default_rng(seed)
    idx = rng.permutation(len(ds))
    tr, te = idx[: len(ds) // 2], idx[len(ds) // 2:]
    cents = np.stack([ds.features[tr][ds.labels[tr] == c].mean(axis=0) for c in range(ds.num_classes)])
    d = ((ds.features[te][:, None, :] - cents[None]) ** 2).sum(-1)
    return (d.argmin(1) == ds.labels[te]).mean()


def test_blobs_balanced():
    ds = generate_blobs(100, 4, 3, 0.5, seed=0)
    assert ds.class_counts().tolist() == [25, 25, 25, 25]
    ds = generate_blobs(101, 4, 3, 0.5, seed=0)
    assert ds.class_counts().max() - ds.class_counts().min() <= 1


def test_blobs_zero_spread_hits_means():
    ds = generate_blobs(40, 4, 5, 0.0, seed=1)
    for c in range(4):
        rows = ds.features[ds.labels == c]
        assert np.array_equal(rows, np.repeat(rows[:1], len(rows), axis=0))
        assert np.linalg.norm(rows[0]) == pytest.approx(1.0, abs=1e-12)


def test_blobs_spread_controls_separability():
    tight = [nearest_centroid_acc(generate_blobs(400, 4, 8, 0.1, s), s) for s in range(10)]
    loose = [nearest_centroid_acc(generate_blobs(400, 4, 8, 2.0, s), s) for s in range(10)]
    assert np.mean(tight) > np.mean(loose)


def test_blobs_invalid():
    with pytest.raises(ValueError):
        generate_blobs(10, 1, 3, 0.1, 0)
    with pytest.raises(ValueError):
        generate_blobs(10, 3, 1, 0.1, 0)


def test_blobs_deterministic():
    a, b = generate_blobs(50, 3, 4, 0.3, 9), generate_blobs(50, 3, 4, 0.3, 9)
    assert np.array_equal(a.features, b.features) and np.array_equal(a.labels, b.labels)


def test_csv_small_file(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("label,f0,f1\n0,1.5,2\n1,0,0.25\n-1,3,4\n", encoding="utf-8")
    ds = load_csv(p)
    assert len(ds) == 3 and ds.dim == 2 and ds.num_classes == 2
    assert ds.labels.tolist() == [0, 1, UNLABELED]
    assert (~ds.labeled_mask).sum() == 1


def test_csv_errors(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("", encoding="utf-8")
    with pytest.raises(DataFormatError, match="empty"):
        load_csv(p)
    p.write_text("label,f0,f1\n0,1,2\n1,3\n", encoding="utf-8")
    with pytest.raises(DataFormatError, match=":3:"):
        load_csv(p)
    p.write_text("label,f0\n0,abc\n", encoding="utf-8")
    with pytest.raises(DataFormatError, match=":2:"):
        load_csv(p)
    p.write_text("label,f0\n5,1.0\n", encoding="utf-8")
    with pytest.raises(DataFormatError, match="class count"):
        load_csv(p, num_classes=3)


def test_csv_roundtrip(tmp_path):
    ds = generate_blobs(30, 3, 4, 0.7, seed=2)
    labels = ds.labels.copy()
    labels[::4] = UNLABELED
    ds = Dataset(ds.features, labels, 3)
    save_csv(ds, tmp_path / "r.csv")
    back = load_csv(tmp_path / "r.csv", num_classes=3)
    assert np.array_equal(back.features, ds.features)
    assert np.array_equal(back.labels, ds.labels)
    raw = (tmp_path / "r.csv").read_bytes()
    assert raw.startswith(b"label,f0,f1,f2,f3\n") and b"\r" not in raw


def _multiset(shards):
    return Counter(tuple(r) + (int(l),) for s in shards for r, l in zip(s.dataset.features, s.dataset.labels))


def test_partition_single_client():
    ds = generate_blobs(50, 3, 2, 0.5, 0)
    (shard,) = dirichlet_partition(ds, 1, 0.5, seed=0)
    assert np.array_equal(shard.dataset.features, ds.features)
    assert np.array_equal(shard.dataset.labels, ds.labels)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 100.0), st.integers(1, 20), st.integers(0, 10_000))
def test_partition_is_exact_cover(gamma, K, seed):
    ds = generate_blobs(120, 5, 3, 1.0, seed)
    shards = dirichlet_partition(ds, K, gamma, seed)
    idx = np.concatenate([s.source_index for s in shards])
    assert sorted(idx.tolist()) == list(range(len(ds)))
    assert all(len(s) >= 1 for s in shards)
    assert _multiset(shards) == _multiset([type(shards[0])(0, ds)])


def test_partition_errors():
    ds = generate_blobs(5, 2, 2, 0.5, 0)
    with pytest.raises(ValueError):
        dirichlet_partition(ds, 6, 1.0, 0)
    with pytest.raises(ValueError):
        dirichlet_partition(ds, 2, 0.0, 0)


def test_partition_deterministic():
    ds = generate_blobs(200, 4, 3, 0.5, 0)
    a = dirichlet_partition(ds, 7, 0.3, 5)
    b = dirichlet_partition(ds, 7, 0.3, 5)
    assert all(np.array_equal(x.source_index, y.source_index) for x, y in zip(a, b))


def test_scenario_alpha_zero_is_identity():
    shards = dirichlet_partition(generate_blobs(100, 4, 3, 0.5, 0), 5, 1.0, 0)
    out = build_scenario(shards, alpha=0.0, seed=0)
    assert all(s.designation == FULLY_LABELED for s in out)


def test_scenario_sixty_percent_unlabeled():
    shards = dirichlet_partition(generate_blobs(400, 4, 3, 0.5, 0), 10, 0.1, 0)
    out = build_scenario(shards, alpha=0.6, seed=3)
    kinds = Counter(s.designation for s in out)
    assert kinds[FULLY_UNLABELED] == 6 and kinds[FULLY_LABELED] == 4
    for a, b in zip(shards, out):
        assert np.array_equal(a.dataset.features, b.dataset.features)


def test_scenario_non_integral_alpha():
    shards = dirichlet_partition(generate_blobs(100, 4, 3, 0.5, 0), 10, 1.0, 0)
    with pytest.raises(ValueError, match="non-integral"):
        build_scenario(shards, alpha=0.55, seed=0)
    with pytest.raises(ValueError, match="no labeled"):
        build_scenario(shards, alpha=1.0, seed=0)


def test_scenario_partial_counts():
    from twinsight.data import ClientShard
    ds = generate_blobs(200, 4, 3, 0.5, 0)
    (out,) = build_scenario([ClientShard(0, ds)], labeled_ratio=0.05, seed=1)
    assert out.dataset.labeled_mask.sum() == 10
    assert out.designation == PARTIALLY_LABELED
    shards = dirichlet_partition(generate_blobs(500, 4, 3, 0.5, 1), 7, 0.5, 1)
    out = build_scenario(shards, labeled_ratio=0.13, seed=2)
    assert sum(s.dataset.labeled_mask.sum() for s in out) == sum(math.ceil(0.13 * len(s)) for s in shards)


def test_augment_identity_policy(rng):
    x = rng.normal(size=7)
    assert np.array_equal(augment(x, AugmentPolicy(0.0, 0.0, (1.0, 1.0)), rng), x)


def test_augment_heavy_dropout(rng):
    out = augment(np.ones(5000), AugmentPolicy(0.0, 0.99, (1.0, 1.0)), rng)
    assert (out == 0).mean() > 0.97


def test_augment_noise_std():
    rng = np.random.default_rng(0)
    x = np.linspace(-1, 1, 5)
    pol = AugmentPolicy(0.1, 0.0, (1.0, 1.0))
    draws = np.stack([augment(x, pol, rng) for _ in range(10_000)])
    std = (draws - x).std(axis=0)
    assert np.all(np.abs(std - 0.1) < 0.01)


def test_augment_deterministic():
    pol = AugmentPolicy()
    x = np.arange(6.0).reshape(2, 3)
    a = augment(x, pol, np.random.default_rng(4))
    b = augment(x, pol, np.random.default_rng(4))
    assert np.array_equal(a, b)


def test_augment_policy_validation():
    with pytest.raises(ValueError):
        AugmentPolicy(jitter=(1.1, 1.2))
    with pytest.raises(ValueError):
        AugmentPolicy(dropout=1.0)
