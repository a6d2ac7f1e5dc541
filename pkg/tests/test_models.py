import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from bindelta import binning, models, so3
from bindelta.binning import PoseDictionary
from bindelta.data import SynthConfig, generate_synthetic, split
from bindelta.models import ModelOutput, ModelVariant


def rot_angle(a, b):
    return (Rotation.from_rotvec(a).inv() * Rotation.from_rotvec(b)).magnitude()


def batch(K=4, n=5, seed=0, gamma=2.0):
    rng = np.random.default_rng(seed)
    d = PoseDictionary(0.8 * so3.log_map(so3.sample_uniform_rotation(rng, K)))
    y = so3.log_map(so3.sample_uniform_rotation(rng, n))
    s = models.make_samples(rng.normal(size=(n, 6)), y, d, gamma=gamma)
    return d, s, rng


def test_variant_defaults():
    assert models.VARIANTS == ("R_E", "R_G", "C", "M_S", "M_G", "M_R", "M_P", "M_S+", "M_G+", "M_R+", "M_P+")
    expected = {"M_S": 1.0, "M_G": 1.0, "M_P": 1.0, "M_S+": 1.0, "M_P+": 1.0,
                "M_G+": 10.0, "M_R": 0.1, "M_R+": 0.1}
    for tag, alpha in expected.items():
        assert ModelVariant.from_tag(tag).alpha == alpha
    assert ModelVariant.from_tag("M_G").K == 100
    assert ModelVariant.from_tag("M_G+").K == 16
    assert ModelVariant.from_tag("R_G").K == 0
    assert ModelVariant.from_tag("M_R").composition == "riemannian"
    assert ModelVariant.from_tag("M_G+").clips_gradients and not ModelVariant.from_tag("M_S").clips_gradients


def test_variant_validation():
    with pytest.raises(ValueError):
        ModelVariant.from_tag("M_X")
    with pytest.raises(ValueError):
        ModelVariant("M_G", per_bin_deltas=True, K=4)
    with pytest.raises(ValueError):
        ModelVariant.from_tag("C", K=0)
    with pytest.raises(ValueError):
        ModelVariant.from_tag("M_G", alpha=-1.0)


def test_compose_examples():
    z = np.array([0.0, 0.0, np.pi / 2])
    np.testing.assert_allclose(models.compose(z, [0, 0, 0.25], "additive"), [0, 0, np.pi / 2 + 0.25])
    np.testing.assert_allclose(models.compose(z, [0, 0, 0.25], "riemannian"), [0, 0, np.pi / 2 + 0.25], atol=1e-14)
    # additive composition past pi wraps to the equivalent short rotation
    np.testing.assert_allclose(models.compose([0, 0, 3.0], [0, 0, 0.5], "additive"), [0, 0, 3.5 - 2 * np.pi], atol=1e-12)
    # group composition does not commute
    a, b = np.array([1.0, 0, 0]), np.array([0, 1.0, 0])
    assert not np.allclose(models.compose(a, b, "riemannian"), models.compose(b, a, "riemannian"))
    np.testing.assert_allclose(models.compose(a, b, "riemannian"),
                               (Rotation.from_rotvec(a) * Rotation.from_rotvec(b)).as_rotvec(), atol=1e-12)
    with pytest.raises(ValueError):
        models.compose(a, b, "bogus")


def test_compose_recovers_targets():
    rng = np.random.default_rng(1)
    y = so3.log_map(so3.sample_uniform_rotation(rng, 2000))
    d = binning.kmeans_fit(y, 16, seed=0)
    labels = binning.assign_hard(y, d)
    for mode in binning.DELTA_MODES:
        back = models.compose(d.key_poses[labels], binning.delta_target(y, d, labels, mode), mode)
        np.testing.assert_allclose(back, y, atol=1e-9)


def test_geodesic_loss_value_and_degenerate_flags():
    theta, grad, deg = models.geodesic_loss(np.array([[0, 0, 0.3], [0.1, 0.2, 0.3]]), np.array([[0, 0, 0.5], [0.1, 0.2, 0.3]]))
    assert theta[0] == pytest.approx(0.2)
    np.testing.assert_allclose(grad[0], [0, 0, 1], atol=1e-12)
    assert deg.tolist() == [False, True]
    np.testing.assert_array_equal(grad[1], 0.0)
    _, _, deg = models.geodesic_loss([0, 0, 0], [np.pi, 0, 0])
    assert deg


def test_regression_losses():
    loss, grad, _ = models.loss_regression(np.array([[1.0, 2, 3]]), np.array([[1.0, 2, 4]]), "euclidean")
    assert loss[0] == 1.0
    np.testing.assert_array_equal(grad, [[0, 0, -2]])
    with pytest.raises(ValueError):
        models.loss_regression(np.zeros(3), np.zeros(3), "manhattan")


def test_losses_against_component_oracle():
    d, s, rng = batch()
    n, K = len(s), d.K
    logits, deltas = rng.normal(size=(n, K)), 0.2 * rng.normal(size=(n, 3))
    out = ModelOutput(logits=logits, deltas=deltas)
    p = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    ce = -np.mean(np.log(p[np.arange(n), s.label]))
    z = d.key_poses[s.label]

    v = ModelVariant.from_tag("M_S", alpha=0.7, K=K)
    assert models.loss_simple_bd(s, out, v, d.key_poses)[0] == pytest.approx(
        ce + 0.7 * np.mean(np.sum((deltas - (s.y - z)) ** 2, axis=1)))

    r_target = np.array([(Rotation.from_rotvec(zi).inv() * Rotation.from_rotvec(yi)).as_rotvec() for zi, yi in zip(z, s.y)])
    v = ModelVariant.from_tag("M_R", alpha=0.3, K=K)
    assert models.loss_riemannian_bd(s, out, v, d.key_poses)[0] == pytest.approx(
        ce + 0.3 * np.mean(np.sum((deltas - r_target) ** 2, axis=1)))

    v = ModelVariant.from_tag("M_G", alpha=2.0, K=K)
    geo = np.mean([rot_angle(yi, zi + di) for yi, zi, di in zip(s.y, z, deltas)])
    assert models.loss_geodesic_bd(s, out, v, d.key_poses)[0] == pytest.approx(ce + 2.0 * geo)

    v = ModelVariant.from_tag("M_P", alpha=1.5, K=K)
    kl = np.mean(np.sum(s.soft * np.log(s.soft / p), axis=1))
    expected = np.mean([sum(p[i, k] * rot_angle(s.y[i], d.key_poses[k] + deltas[i]) for k in range(K)) for i in range(n)])
    assert models.loss_probabilistic_bd(s, out, v, d.key_poses)[0] == pytest.approx(kl + 1.5 * expected)


def test_per_bin_losses_use_selected_head():
    d, s, rng = batch()
    n, K = len(s), d.K
    deltas = 0.2 * rng.normal(size=(n, K, 3))
    out = ModelOutput(logits=rng.normal(size=(n, K)), deltas=deltas)
    v = ModelVariant.from_tag("M_G+", alpha=1.0, K=K)
    loss, g = models.loss_geodesic_bd(s, out, v, d.key_poses)
    ce = models.loss_classification(out.logits, s.label)[0]
    sel = deltas[np.arange(n), s.label]
    geo = np.mean([rot_angle(yi, zi + di) for yi, zi, di in zip(s.y, d.key_poses[s.label], sel)])
    assert loss == pytest.approx(ce + geo)
    unused = np.ones((n, K), bool)
    unused[np.arange(n), s.label] = False
    assert not g.deltas[unused].any()


@pytest.mark.parametrize("tag", ["M_S", "M_G", "M_R", "M_P", "M_S+", "M_G+"])
def test_loss_is_affine_in_alpha(tag):
    d, s, rng = batch(seed=3)
    K = d.K
    deltas = 0.2 * rng.normal(size=(len(s), K, 3) if tag.endswith("+") else (len(s), 3))
    out = ModelOutput(logits=rng.normal(size=(len(s), K)), deltas=deltas)
    f = [models.objective(s, out, ModelVariant.from_tag(tag, alpha=a, K=K), d.key_poses)[0] for a in (0.0, 1.0, 3.0)]
    assert f[2] - f[0] == pytest.approx(3 * (f[1] - f[0]), rel=1e-12)


def test_probabilistic_loss_tends_to_cross_entropy_for_sharp_labels():
    d, s, rng = batch(gamma=1e6, seed=4)
    out = ModelOutput(logits=rng.normal(size=(len(s), d.K)), deltas=np.zeros((len(s), 3)))
    v = ModelVariant.from_tag("M_P", alpha=0.0, K=d.K)
    kl, _ = models.loss_probabilistic_bd(s, out, v, d.key_poses)
    ce, _ = models.loss_classification(out.logits, s.label)
    assert kl == pytest.approx(ce, abs=1e-9)


@pytest.mark.parametrize("tag", models.VARIANTS)
def test_model_gradients_match_finite_differences(tag):
    from bindelta.selftest import gradient_probes
    err, probes, _ = gradient_probes(tag, n_probes=10)
    assert probes == 10 and err <= 1e-4


def test_predict_pose_examples():
    d = PoseDictionary([[0.0, 0, 0], [0, 0, 1.0]])
    v = ModelVariant.from_tag("M_S", K=2)
    params = models.init_model(v, 2, d, hidden=(3,), rng=np.random.default_rng(0))
    # make the bin net pick bin 1 for every input and the delta net output a constant
    for p in params.bin_net.weights + params.delta_nets[0].weights:
        p[:] = 0.0
    params.bin_net.biases[-1][:] = [0.0, 5.0]
    params.delta_nets[0].biases[-1][:] = [0.0, 0.0, 0.25]
    np.testing.assert_allclose(models.predict_pose(params, np.ones((2, 2))), [[0, 0, 1.25]] * 2)
    params_c = models.init_model(ModelVariant.from_tag("C", K=2), 2, d, hidden=(3,))
    params_c.bin_net.weights[-1][:] = 0.0
    params_c.bin_net.biases[-1][:] = [1.0, 0.0]
    np.testing.assert_array_equal(models.predict_pose(params_c, np.ones((1, 2))), [[0, 0, 0]])


def test_init_requires_matching_dictionary():
    with pytest.raises(ValueError):
        models.init_model(ModelVariant.from_tag("M_G", K=3), 4, PoseDictionary(np.zeros((2, 3))))
    p = models.init_model(ModelVariant.from_tag("M_G+", K=3), 4, PoseDictionary(np.eye(3)))
    assert [n for n, _ in p.networks()] == ["bin", "delta_000", "delta_001", "delta_002"]


@pytest.fixture(scope="module")
def small_data():
    ds = generate_synthetic(SynthConfig(n_samples=600, feature_dim=12, seed=3))
    return split(ds, 1 / 6, seed=0)


def test_training_zero_epochs_returns_initialisation(small_data):
    tr, _ = small_data
    cfg = models.TrainConfig(epochs=0, K=4, seed=1)
    params, hist = models.train("M_G", tr, config=cfg)
    assert hist == []
    fresh = models.init_model(params.variant, tr.feature_dim, params.dictionary, cfg.hidden,
                              rng=models._seeds(1)[1])
    for a, b in zip(params.arrays(), fresh.arrays()):
        np.testing.assert_array_equal(a, b)


def test_training_reduces_loss_and_warm_starts(small_data):
    tr, va = small_data
    _, hist = models.train("M_G", tr, va, models.TrainConfig(epochs=4, K=4))
    assert [h["objective"] for h in hist] == ["M_S", "M_G", "M_G", "M_G"]
    assert [h["epoch"] for h in hist] == [0, 1, 2, 3]
    assert hist[-1]["lr"] == pytest.approx(1e-3 * 0.95 ** 3)
    _, hist = models.train("R_G", tr, va, models.TrainConfig(epochs=5))
    assert hist[-1]["train_loss"] < hist[0]["train_loss"]


def test_training_is_deterministic(small_data):
    tr, va = small_data
    cfg = models.TrainConfig(epochs=2, K=4, seed=9)
    a = models.history_csv(models.train("M_P+", tr, va, cfg)[1])
    b = models.history_csv(models.train("M_P+", tr, va, cfg)[1])
    assert a == b


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_keeps_last_good_parameters(small_data):
    tr, _ = small_data
    with pytest.raises(models.TrainingAborted) as exc:
        models.train("R_E", tr, config=models.TrainConfig(epochs=3, lr=1e200, lr_decay=1.0))
    assert all(np.all(np.isfinite(a)) for a in exc.value.params.arrays())


def test_bundle_roundtrip(small_data, tmp_path):
    tr, va = small_data
    params, _ = models.train("M_R+", tr, config=models.TrainConfig(epochs=1, K=3))
    models.save_bundle(params, tmp_path / "b", {"note": "x"})
    back = models.load_bundle(tmp_path / "b")
    assert back.variant == params.variant
    np.testing.assert_array_equal(back.key_poses, params.key_poses)
    np.testing.assert_array_equal(models.predict_pose(back, va.features), models.predict_pose(params, va.features))
