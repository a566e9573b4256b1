import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pmt import datagen
from pmt.datagen import Mix, NoAugment, RandomAffine, RandomNoise


def test_identity_deterministic_and_distinct():
    assert datagen.gen_identity(5) == datagen.gen_identity(5)
    records = {datagen.gen_identity(s) for s in range(100)}
    assert len(records) == 100


def test_attribute_tag_balanced():
    frac = np.mean([datagen.gen_identity(s).tag for s in range(1000)])
    assert 0.45 <= frac <= 0.55


def test_render_deterministic_and_in_range():
    ident = datagen.gen_identity(11)
    a, b = datagen.render_face(ident, 3), datagen.render_face(ident, 3)
    assert a.tobytes() == b.tobytes()
    assert a.shape == (3, 32, 32)
    assert a.min() >= 0.0 and a.max() <= 1.0


def test_identity_dominates_variation():
    g = np.random.default_rng(0)
    within, between = [], []
    for _ in range(50):
        s, t = (int(v) for v in g.choice(1000, size=2, replace=False))
        v1, v2 = (int(v) for v in g.integers(0, 10_000, size=2))
        a = datagen.gen_identity(s)
        within.append(np.abs(datagen.render_face(a, v1) - datagen.render_face(a, v2)).mean())
        between.append(np.abs(datagen.render_face(a, v1) - datagen.render_face(datagen.gen_identity(t), v2)).mean())
    assert np.mean(within) < np.mean(between)


def test_pairs_balanced_and_valid():
    ids = list(range(6))
    pairs = datagen.make_pairs(ids, 5, 100, 1)
    assert sum(p.y for p in pairs) == 50 and len(pairs) == 100
    for p in pairs:
        assert (p.key1[0] == p.key2[0]) == bool(p.y)
        assert p.key1 != p.key2
        assert p.image1.tobytes() == datagen.render_face(datagen.gen_identity(p.key1[0]), p.key1[1]).tobytes()
    again = datagen.make_pairs(ids, 5, 100, 1)
    assert [(p.key1, p.key2, p.y) for p in pairs] == [(p.key1, p.key2, p.y) for p in again]


@pytest.mark.parametrize("count", [3, -2])
def test_pairs_reject_bad_counts(count):
    with pytest.raises(ValueError):
        datagen.make_pairs([0, 1], 3, count, 0)


def test_pairs_need_two_identities():
    with pytest.raises(ValueError):
        datagen.make_pairs([0], 3, 2, 0)


def test_augment_identities(face):
    assert datagen.augment(face, NoAugment(), 1).tobytes() == face.tobytes()
    assert datagen.augment(face, RandomNoise(0.0), 1).tobytes() == face.tobytes()
    still = RandomAffine(0.0, 0.0, (1.0, 1.0))
    assert np.abs(datagen.augment(face, still, 4) - face).max() <= 1e-12


def test_augment_deterministic_and_clamped(face):
    for mode in (RandomNoise(0.3), RandomAffine(), Mix()):
        a, b = datagen.augment(face, mode, 9), datagen.augment(face, mode, 9)
        assert a.tobytes() == b.tobytes()
        assert a.min() >= 0.0 and a.max() <= 1.0
    assert datagen.augment(face, RandomNoise(0.1), 1).tobytes() != datagen.augment(face, RandomNoise(0.1), 2).tobytes()


def test_noise_augment_statistics():
    flat = np.full((3, 32, 32), 0.5)
    out = datagen.augment(flat, RandomNoise(0.1), 0)
    assert abs((out - 0.5).std() - 0.1) < 0.01


@given(seed=st.integers(0, 10_000))
@settings(max_examples=20, deadline=None)
def test_warp_adjoint(seed):
    g = np.random.default_rng(seed)
    w = datagen.Warp((2, 9, 9), g.uniform(-10, 10), *g.uniform(-2, 2, 2), g.uniform(0.95, 1.05))
    x, y = g.normal(size=(2, 9, 9)), g.normal(size=(2, 9, 9))
    assert np.sum(w.apply(x) * y) == pytest.approx(np.sum(x * w.adjoint(y)), rel=1e-10, abs=1e-10)


def test_bad_augment_parameters():
    with pytest.raises(ValueError):
        RandomNoise(-0.1)
    with pytest.raises(ValueError):
        RandomAffine(scale_range=(1.1, 1.2))
    with pytest.raises(ValueError):
        datagen.parse_augment("blur")


def test_ppm_header_and_black_payload():
    data = datagen.ppm_encode(np.zeros((3, 32, 32)))
    assert data.startswith(b"P6\n32 32\n255\n")
    assert data[len(b"P6\n32 32\n255\n"):] == bytes(3072)


@given(seed=st.integers(0, 10_000))
@settings(max_examples=20, deadline=None)
def test_ppm_quantization_bound(seed):
    x = np.random.default_rng(seed).uniform(size=(3, 5, 7))
    back = datagen.ppm_decode(datagen.ppm_encode(x))
    assert np.abs(back - x).max() <= 1 / 510 + 1e-12
    assert datagen.ppm_encode(back) == datagen.ppm_encode(x)


def test_ppm_errors():
    good = datagen.ppm_encode(np.zeros((3, 4, 4)))
    with pytest.raises(datagen.PPMError, match="bad magic"):
        datagen.ppm_decode(b"P5" + good[2:])
    with pytest.raises(datagen.PPMError, match="truncated"):
        datagen.ppm_decode(good[:-1])
    with pytest.raises(datagen.PPMError):
        datagen.ppm_decode(b"P6\nxx yy\n255\n")
    with pytest.raises(datagen.PPMError):
        datagen.ppm_encode(np.zeros((1, 4, 4)))


def test_dataset_export_import(tmp_path):
    paths = datagen.export_dataset(tmp_path, [3, 4], [0, 1])
    assert sorted(p.split("/")[-1] for p in paths) == ["3_0.ppm", "3_1.ppm", "4_0.ppm", "4_1.ppm"]
    back = datagen.import_dataset(tmp_path)
    ref = datagen.render_face(datagen.gen_identity(4), 1)
    assert np.abs(back[(4, 1)] - ref).max() <= 1 / 510 + 1e-12
