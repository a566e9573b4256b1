import mpmath
import numpy as np
import pytest

from pmt import core, datagen, models, nn
from pmt.core import GaussianKernel, LinearKernel, NoneKernel, PmtConfig
from pmt.datagen import NoAugment


def mp_kernel(kind, k):
    """High-precision evaluation of the closed forms, normalized."""
    mpmath.mp.dps = 40
    idx = range(-k, k + 1)
    if kind == "linear":
        raw = [[(1 - mpmath.mpf(abs(i)) / (k + 1)) * (1 - mpmath.mpf(abs(j)) / (k + 1)) for j in idx] for i in idx]
    else:
        s2 = mpmath.mpf(k) ** 2 / 3
        raw = [[mpmath.exp(-(i * i + j * j) / (2 * s2)) for j in idx] for i in idx]
    total = sum(sum(r) for r in raw)
    return np.array([[float(v / total) for v in r] for r in raw])


def test_none_kernel():
    assert core.make_kernel(NoneKernel()).tolist() == [[1.0]]


def test_linear_one_closed_form():
    w = core.make_kernel(LinearKernel(1))
    expect = np.array([[0.0625, 0.125, 0.0625], [0.125, 0.25, 0.125], [0.0625, 0.125, 0.0625]])
    np.testing.assert_allclose(w, expect, rtol=0, atol=1e-15)


def test_gaussian_one_centre():
    assert core.make_kernel(GaussianKernel(1))[1, 1] == pytest.approx(0.47809, abs=1e-5)


@pytest.mark.parametrize("kind,k", [(t, k) for t in ("linear", "gaussian") for k in (1, 2, 3, 5)])
def test_kernels_match_high_precision_oracle(kind, k):
    spec = LinearKernel(k) if kind == "linear" else GaussianKernel(k)
    w = core.make_kernel(spec)
    np.testing.assert_allclose(w, mp_kernel(kind, k), rtol=1e-13, atol=0)
    assert abs(w.sum() - 1.0) <= 1e-12
    assert (w >= 0).all()
    np.testing.assert_array_equal(w, w[::-1, :])
    np.testing.assert_array_equal(w, w[:, ::-1])


def test_kernel_half_width_must_be_positive():
    with pytest.raises(ValueError):
        core.make_kernel(LinearKernel(0))


def test_init_modes(face):
    assert core.init_obfuscation(face, core.CopyOriginalInit(), 0).tobytes() == face.tobytes()
    perm = core.init_obfuscation(face, core.RandomPermuteInit(), 3)
    assert np.array_equal(np.sort(perm.ravel()), np.sort(face.ravel()))
    blur = core.init_obfuscation(face, core.GaussianBlurInit(), 0)
    assert blur.shape == face.shape and blur.std() < face.std()
    a = core.init_obfuscation(face, core.GaussianNoiseInit(), 5)
    assert a.tobytes() == core.init_obfuscation(face, core.GaussianNoiseInit(), 5).tobytes()
    assert a.min() >= 0.0 and a.max() <= 1.0


def test_noise_init_uncorrelated_with_image():
    corr = []
    for s in range(20):
        x = datagen.render_face(datagen.gen_identity(s), 0)
        xt = core.init_obfuscation(x, core.GaussianNoiseInit(), s)
        corr.append(np.corrcoef(x.ravel(), xt.ravel())[0, 1])
    assert abs(np.mean(corr)) < 0.1


def test_blur_kernel_normalized():
    k = core.blur_kernel(4.0, 13)
    assert k.shape == (13, 13) and abs(k.sum() - 1) <= 1e-12


def test_aggregate_lengths(small_shallow, face):
    assert core.aggregate_features(small_shallow, face, (5,)).shape == (512,)
    assert core.aggregate_features(small_shallow, face, (2, 5)).shape == (768,)
    assert core.aggregate_features(small_shallow, face, ()).shape == (2048,)
    with pytest.raises(ValueError):
        core.aggregate_features(small_shallow, face, (6,))


def test_pooling_is_identity_at_target_size():
    a = np.random.default_rng(0).normal(size=(3, 4, 4))
    assert core.adaptive_pool(a).tobytes() == a.tobytes()


def test_pool_adjoint():
    g = np.random.default_rng(1)
    a, y = g.normal(size=(2, 7, 9)), g.normal(size=(2, 4, 4))
    assert np.sum(core.adaptive_pool(a) * y) == pytest.approx(np.sum(a * core.adaptive_pool_adjoint(y, a.shape)), rel=1e-12)


@pytest.mark.parametrize("layers", [(), (2,), (2, 5), (1, 4)])
def test_objective_gradient_matches_finite_differences(small_shallow, face, layers):
    g = np.random.default_rng(2)
    xt = np.clip(face + g.normal(0, 0.2, face.shape), 0.05, 0.95)
    _, grad = core.objective_grad(small_shallow, face, xt, layers)
    worst = 0.0
    for idx in g.choice(face.size, size=25, replace=False):
        e = np.zeros(face.size)
        e[idx] = 1e-5
        e = e.reshape(face.shape)
        fp = core.objective_grad(small_shallow, face, xt + e, layers)[0]
        fm = core.objective_grad(small_shallow, face, xt - e, layers)[0]
        num = (fp - fm) / 2e-5
        a = grad.reshape(-1)[idx]
        worst = max(worst, abs(a - num) / max(1e-12, abs(a) + abs(num)))
    assert worst <= 1e-6


def test_step_at_fixed_point(small_shallow, face):
    st = core.pmt_step(small_shallow, face, face.copy(), PmtConfig(augment=NoAugment()), 0)
    assert st.loss == 0.0 and st.converged and not st.delta.any()


def test_step_unit_l1_without_kernel(small_shallow, face):
    xt = core.init_obfuscation(face, core.GaussianNoiseInit(), 0)
    st = core.pmt_step(small_shallow, face, xt, PmtConfig(kernel=NoneKernel()), 0)
    assert abs(np.abs(st.delta).sum() - 1.0) <= 1e-12


def test_gaussian_smoothing_reduces_variance(small_shallow):
    for s in range(10):
        x = datagen.render_face(datagen.gen_identity(s), 0)
        xt = core.init_obfuscation(x, core.GaussianNoiseInit(), s)
        raw = core.pmt_step(small_shallow, x, xt, PmtConfig(kernel=NoneKernel()), s).delta
        smooth = core.pmt_step(small_shallow, x, xt, PmtConfig(kernel=GaussianKernel(1)), s).delta
        assert smooth.var() <= raw.var()


def test_copy_init_fixed_point(small_shallow, face):
    cfg = PmtConfig(init=core.CopyOriginalInit(), augment=NoAugment(), iterations=5)
    out = core.pmt_protect(face, small_shallow, cfg)
    assert out.losses == [0.0] * 5
    assert out.image.tobytes() == face.tobytes()


def test_protect_contract_and_determinism(small_shallow, face):
    cfg = PmtConfig(iterations=20, seed=4)
    a, b = core.pmt_protect(face, small_shallow, cfg), core.pmt_protect(face, small_shallow, cfg)
    assert a.image.tobytes() == b.image.tobytes()
    assert len(a.losses) == 20
    assert a.feature.tobytes() == nn.model_forward(small_shallow, a.image).tobytes()
    assert a.image.min() >= 0 and a.image.max() <= 1
    assert a.losses[-1] < a.losses[0]


def test_small_steps_mostly_descend(small_shallow, face):
    cfg = PmtConfig(step=0.01, augment=NoAugment(), kernel=NoneKernel())
    losses = core.pmt_protect(face, small_shallow, cfg).losses
    down = np.mean(np.diff(losses) <= 0)
    assert down >= 0.95


def test_unclamped_mode_can_leave_unit_range(small_shallow, face):
    cfg = PmtConfig(iterations=30, step=0.2, clamp=False)
    img = core.pmt_protect(face, small_shallow, cfg).image
    assert img.min() < 0 or img.max() > 1


def test_multi_with_one_model_is_single_model(small_shallow, face):
    cfg = PmtConfig(iterations=10, seed=1)
    a = core.pmt_protect(face, small_shallow, cfg)
    b = core.pmt_protect_multi(face, [small_shallow], cfg)
    assert a.image.tobytes() == b.image.tobytes() and a.losses == b.losses


def test_multi_sums_losses_and_returns_each_feature(small_shallow, face):
    other = models.split_model(models.build_model(models.recognizer_spec(8), 9), 6).shallow
    out = core.pmt_protect_multi(face, [small_shallow, other], PmtConfig(iterations=5))
    assert len(out.features) == 2
    assert out.features[1].tobytes() == nn.model_forward(other, out.image).tobytes()


def test_multi_needs_a_model(face):
    with pytest.raises(ValueError):
        core.pmt_protect_multi(face, [], PmtConfig())


def test_config_validation():
    with pytest.raises(ValueError):
        PmtConfig(iterations=-1)
    with pytest.raises(ValueError):
        PmtConfig(step=0)
    with pytest.raises(ValueError):
        core.parse_kernel("box")
    with pytest.raises(ValueError):
        core.parse_init("zeros")


def test_default_protection_destroys_appearance(small_recognizer, small_shallow):
    x = datagen.render_face(datagen.gen_identity(2), 1000)
    out = core.pmt_protect(x, small_shallow, PmtConfig())
    from pmt import metrics

    assert metrics.ssim(out.image, x) <= 0.3
    assert out.losses[-1] < 0.5 * out.losses[0]
