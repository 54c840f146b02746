import numpy as np
import pytest
from sklearn.linear_model import LogisticRegression
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from stylemix.data import (
    ARCHETYPE_NAMES,
    SPLIT_TEST,
    SPLIT_TRAIN,
    SPLIT_VAL,
    DomainSpec,
    generate_dataset,
    load_dataset,
    sample_batch,
    sample_two_domain_batch,
    save_dataset,
    stylize,
)


@pytest.fixture(scope="module")
def small():
    return generate_dataset(num_classes=3, num_domains=3, per_cell=20, height=16, width=16, seed=3)


@pytest.fixture(scope="module")
def default_ds():
    return generate_dataset()


def test_identity_style_gives_raw_mask(rng):
    mask = rng.random((16, 16)) > 0.5
    img = stylize(mask, DomainSpec.identity(channels=3))
    for c in range(3):
        np.testing.assert_array_equal(img[c], mask.astype(np.float64))


def test_same_seed_bitwise_identical(small):
    again = generate_dataset(num_classes=3, num_domains=3, per_cell=20, height=16, width=16, seed=3)
    assert again.images.tobytes() == small.images.tobytes()
    np.testing.assert_array_equal(again.split, small.split)
    assert again.specs == small.specs


def test_different_seed_differs(small):
    other = generate_dataset(num_classes=3, num_domains=3, per_cell=20, height=16, width=16, seed=4)
    assert other.images.tobytes() != small.images.tobytes()


def test_shapes_ranges_balance(default_ds):
    ds = default_ds
    assert ds.images.shape == (2000, 3, 32, 32)
    assert ds.images.dtype == np.float32
    assert ds.images.min() >= 0.0 and ds.images.max() <= 1.0
    counts = np.zeros((4, 5), dtype=int)
    np.add.at(counts, (ds.domain_labels, ds.class_labels), 1)
    assert np.all(counts == 100)


def test_split_fractions_per_cell(default_ds):
    ds = default_ds
    for d in range(4):
        for k in range(5):
            cell = ds.split[(ds.domain_labels == d) & (ds.class_labels == k)]
            assert [(cell == s).sum() for s in (SPLIT_TRAIN, SPLIT_VAL, SPLIT_TEST)] == [80, 10, 10]


def test_style_content_factorization(small):
    ds = small
    per = 20
    for k in range(3):
        for m in range(per):
            rows = [d * 3 * per + k * per + m for d in range(3)]
            assert len({ds.masks[r].tobytes() for r in rows}) == 1
            assert len({int(ds.split[r]) for r in rows}) == 1


def test_channel_mean_difference_tracks_shift():
    specs = [
        DomainSpec(0, (0.25, 0.05, 0.15), (0.6, 0.6, 0.6)),
        DomainSpec(1, (0.05, 0.20, 0.10), (0.6, 0.6, 0.6)),
        DomainSpec(2, (0.15, 0.15, 0.25), (0.6, 0.6, 0.6)),
    ]
    ds = generate_dataset(num_classes=4, num_domains=3, per_cell=50, seed=1, specs=specs)
    means = np.stack([ds.images[ds.domain_labels == d].mean(axis=(0, 2, 3)) for d in range(3)])
    for d in range(3):
        for e in range(3):
            expected = np.subtract(specs[d].channel_shift, specs[e].channel_shift)
            np.testing.assert_allclose(means[d] - means[e], expected, atol=0.05)


def test_linear_probe_premise(default_ds):
    ds = default_ds
    feats = ds.images.mean(axis=(2, 3))
    train = ds.split == SPLIT_TRAIN
    probe = make_pipeline(StandardScaler(), LogisticRegression(max_iter=5000))
    probe.fit(feats[train], ds.domain_labels[train])
    assert probe.score(feats[~train], ds.domain_labels[~train]) >= 0.90


def test_generator_errors():
    with pytest.raises(ValueError):
        generate_dataset(num_classes=len(ARCHETYPE_NAMES) + 1)
    with pytest.raises(ValueError):
        generate_dataset(num_domains=2)
    with pytest.raises(ValueError):
        generate_dataset(height=8, width=8)
    with pytest.raises(ValueError):
        DomainSpec(0, (0.0,), (0.0,))
    with pytest.raises(ValueError):
        DomainSpec(0, (0.0,), (1.0,), texture_amp=-1.0)


def test_two_domain_layout_and_no_duplicates(small, rng):
    imgs, cls, dom, idx = sample_two_domain_batch(small, 0, 2, 4, rng)
    assert dom.tolist() == [0, 0, 0, 0, 2, 2, 2, 2]
    assert imgs.shape == (8, 3, 16, 16)
    assert len(set(idx.tolist())) == 8
    np.testing.assert_array_equal(cls, small.class_labels[idx])


def test_two_domain_errors(small, rng):
    with pytest.raises(ValueError):
        sample_two_domain_batch(small, 1, 1, 2, rng)
    with pytest.raises(ValueError):
        sample_two_domain_batch(small, 0, 1, 1000, rng)


def test_two_domain_class_frequency(default_ds):
    r = np.random.default_rng(11)
    counts = np.zeros(5)
    for _ in range(10_000):
        _, cls, _, _ = sample_two_domain_batch(default_ds, 0, 1, 4, r)
        counts += np.bincount(cls, minlength=5)
    assert np.all(np.abs(counts / counts.sum() - 0.2) <= 0.02)


def test_mixed_domain_frequency(default_ds):
    r = np.random.default_rng(12)
    pool = default_ds.indices([0, 1, 3], SPLIT_TRAIN)
    counts = np.zeros(4)
    for _ in range(10_000):
        _, _, dom, idx = sample_batch(default_ds, "mixed_domains", 8, r, pool)
        counts += np.bincount(dom, minlength=4)
        assert len(set(idx.tolist())) == 8
    assert counts[2] == 0
    assert np.all(np.abs(counts[[0, 1, 3]] / counts.sum() - 1 / 3) <= 0.02)


def test_single_domain_batches(small, rng):
    for _ in range(50):
        _, _, dom, _ = sample_batch(small, "single_domain", 6, rng)
        assert np.unique(dom).size == 1


def test_sample_batch_errors(small, rng):
    with pytest.raises(ValueError):
        sample_batch(small, "mixed_domains", len(small) + 1, rng)
    with pytest.raises(ValueError):
        sample_batch(small, "mixed_domains", 2, rng, np.array([], dtype=int))
    with pytest.raises(ValueError):
        sample_batch(small, "sideways", 2, rng)


def test_indices_respect_pool(small, rng):
    pool = small.indices([1], SPLIT_TRAIN)
    for _ in range(20):
        _, _, _, idx = sample_batch(small, "mixed_domains", 4, rng, pool)
        assert np.isin(idx, pool).all()


def test_export_roundtrip(small, tmp_path):
    path, sidecar = save_dataset(small, tmp_path / "ds.bin")
    assert sidecar.exists()
    back = load_dataset(path)
    assert back.images.tobytes() == small.images.tobytes()
    np.testing.assert_array_equal(back.class_labels, small.class_labels)
    np.testing.assert_array_equal(back.domain_labels, small.domain_labels)
    np.testing.assert_array_equal(back.split, small.split)
    assert back.specs == small.specs
    raw = path.read_bytes()
    assert raw[:4] == b"SMLD"
    assert len(raw) == 32 + 4 * small.images.size + 8 * len(small)


def test_load_rejects_corrupt(small, tmp_path):
    path, _ = save_dataset(small, tmp_path / "ds.bin")
    raw = bytearray(path.read_bytes())
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"XXXX" + bytes(raw[4:]))
    with pytest.raises(ValueError, match="magic"):
        load_dataset(bad)
    bad.write_bytes(bytes(raw[:-4]))
    with pytest.raises(ValueError, match="bytes"):
        load_dataset(bad)


def test_archetype_areas_are_matched():
    from stylemix.data import shape_mask

    r = np.random.default_rng(0)
    areas = {k: np.mean([shape_mask(k, 64, 64, r).sum() for _ in range(200)]) for k in ARCHETYPE_NAMES[:5]}
    ref = areas["disk"]
    assert all(abs(a / ref - 1) < 0.1 for a in areas.values()), areas
