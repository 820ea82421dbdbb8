import numpy as np
import pytest

from gazeil import gazemap
from gazeil.errors import ConfigurationError, DegenerateMapError
from gazeil.models import (
    CheckpointError,
    DiscriminatorConfig,
    DriverData,
    GazeData,
    GazeHyper,
    GazePredictorConfig,
    IntegrationMode,
    Model,
    ModelConfig,
    build_discriminator,
    build_gaze_predictor,
    build_pilotnet,
    discriminator_accuracy,
    fit_minibatch,
    forward_batch,
    forward_driver,
    gaze_forward,
    generator_loss,
    load_model,
    predict_gaze,
    preprocess_gaze_as_input,
    save_model,
    train_driver,
    train_gaze_adversarial,
    train_gaze_supervised,
)
from gazeil.models.base import decode_model, encode_model
from gazeil.numerics import (
    DropoutMode,
    Graph,
    OptimizerState,
    Tensor,
    backward,
    l1_map_loss,
    mse_loss,
    optimizer_step,
    zero_grad,
)

TINY = dict(input_width=40, input_height=24, convs=((4, 3, 1), (6, 3, 2), (8, 3, 1), (8, 3, 1), (8, 3, 1)),
            dense=(16, 8, 4, 1))


def tiny(mode="nogaze", **kw):
    return ModelConfig(**{**TINY, **kw, "integration_mode": mode})


def frames(n, w=40, h=24, seed=0):
    return np.random.default_rng(seed).random((n, h, w))


# architecture

def test_default_layer_counts_and_chain():
    m = build_pilotnet(ModelConfig(), np.random.default_rng(0))
    convs = {k.split(".")[0] for k in m.params if k.startswith("conv")}
    dense = {k.split(".")[0] for k in m.params if k.startswith("fc")}
    assert len(convs) == 5 and len(dense) == 4
    assert [(w, h) for h, w in ModelConfig().validate()] == [(98, 31), (47, 14), (22, 5), (20, 3), (18, 1)]
    assert m.params["fc1.w"].shape == (100, 64 * 18)


def test_same_seed_same_parameters():
    a = build_pilotnet(ModelConfig(), np.random.default_rng(5))
    b = build_pilotnet(ModelConfig(), np.random.default_rng(5))
    assert all(a.params[k].data.tobytes() == b.params[k].data.tobytes() for k in a.params)


def test_bad_chain_names_first_failing_layer():
    with pytest.raises(ConfigurationError, match="conv3"):
        build_pilotnet(ModelConfig(input_width=20, input_height=20), np.random.default_rng(0))
    with pytest.raises(ConfigurationError, match="fc4"):
        build_pilotnet(ModelConfig(dense=(100, 50, 10, 2)), np.random.default_rng(0))


def test_input_channels_follow_mode():
    assert ModelConfig(integration_mode="gaze-input").input_channels == 2
    assert ModelConfig(integration_mode="gaze-dropout").input_channels == 1


def test_parameter_count_is_pure_function_of_config():
    counts = {build_pilotnet(tiny(), np.random.default_rng(s)).parameter_count() for s in range(3)}
    assert len(counts) == 1


# gaze as input

def test_preprocess_gaze_as_input():
    g = gazemap.render_gaze_map([(10, 5)], 40, 24)
    out = preprocess_gaze_as_input(np.ones((24, 40)), g)
    assert out.shape == (2, 24, 40)
    np.testing.assert_allclose(out[1], g / g.max())
    img = frames(1)[0]
    uni = preprocess_gaze_as_input(img, np.full((24, 40), 1 / 960))
    np.testing.assert_array_equal(uni[0], uni[1])


def test_preprocess_errors():
    with pytest.raises(ValueError):
        preprocess_gaze_as_input(np.ones((24, 40)), np.ones((24, 41)))
    with pytest.raises(DegenerateMapError):
        preprocess_gaze_as_input(np.ones((24, 40)), np.zeros((24, 40)))


# forward

def test_test_mode_is_deterministic():
    m = build_pilotnet(tiny(), np.random.default_rng(0))
    x = frames(1)[0]
    assert forward_driver(m, x) == forward_driver(m, x)


def test_missing_gaze_rejected():
    for mode in ("gaze-input", "gaze-dropout"):
        m = build_pilotnet(tiny(mode), np.random.default_rng(0))
        with pytest.raises(ValueError):
            forward_driver(m, frames(1)[0])
    blob = build_pilotnet(tiny("central-blob"), np.random.default_rng(0))
    assert np.isfinite(forward_driver(blob, frames(1)[0]))


def test_uniform_gaze_dropout_equals_keep_one_baseline():
    m = build_pilotnet(tiny("gaze-dropout"), np.random.default_rng(1))
    base = Model("driver", tiny("nogaze", uniform_keep_prob=1.0), m.params)
    x = frames(4)
    uni = np.full(x.shape, 1.0 / x[0].size)
    np.testing.assert_array_equal(forward_batch(m, x, uni).data, forward_batch(base, x).data)


def test_gaze_scale_invariance():
    x = frames(3)
    g = gazemap.render_batch([[(5, 5)], [(30, 10)], [(20, 20)]], 40, 24)
    for mode in ("gaze-dropout", "gaze-input"):
        m = build_pilotnet(tiny(mode), np.random.default_rng(2))
        a = forward_batch(m, x, g).data
        b = forward_batch(m, x, g * 37.5).data
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("mode", ["nogaze", "gaze-dropout"])
def test_train_mode_mean_matches_test_mode(mode):
    # the Monte-Carlo average of Train-mode outputs approximates the Test-mode output.
    # Non-negative weights keep every relu after the dropout sites in its linear region, so the
    # gap isolates the dropout semantics from Jensen curvature (signed random weights sit 6-22% off)
    m = build_pilotnet(tiny(mode), np.random.default_rng(3))
    for k, p in m.params.items():
        p.data[:] = 0.0 if k.endswith(".b") else np.abs(p.data)
    x = frames(1, seed=4)
    g = gazemap.render_gaze_map([(20, 12)], 40, 24)[None]
    test_out = forward_batch(m, x, g).data[0]
    rng = np.random.default_rng(0)
    reps = np.repeat(x, 10_000, axis=0)
    draws = forward_batch(m, reps, np.repeat(g, 10_000, axis=0), DropoutMode.TRAIN, rng).data
    assert abs(draws.mean() - test_out) <= 0.05 * abs(test_out)


def _modulated_sites(graph):
    out = []
    for _, node in graph.entries:
        if node.op == "spatial_modulated_dropout":
            relu_node = node.inputs[0].node
            conv_node = relu_node.inputs[0].node
            out.append((relu_node.op, conv_node.op, conv_node.inputs[1]))
    return out


def test_exactly_two_modulated_dropout_sites():
    m = build_pilotnet(tiny("gaze-dropout"), np.random.default_rng(0))
    x = frames(2)
    g = gazemap.render_batch([[(5, 5)], [(30, 10)]], 40, 24)
    for mode in DropoutMode:
        graph = Graph.trace(forward_batch(m, x, g, mode, np.random.default_rng(0)))
        sites = _modulated_sites(graph)
        assert len(sites) == 2
        assert [s[:2] for s in sites] == [("relu", "conv2d")] * 2
        assert [s[2] for s in sites] == [m.params["conv1.w"], m.params["conv2.w"]]
        assert graph.count("uniform_dropout") == 0


def test_baseline_has_two_uniform_sites():
    m = build_pilotnet(tiny(), np.random.default_rng(0))
    graph = Graph.trace(forward_batch(m, frames(2), None, DropoutMode.TRAIN, np.random.default_rng(0)))
    assert graph.count("uniform_dropout") == 2 and graph.count("spatial_modulated_dropout") == 0


@pytest.mark.parametrize("mode", list(IntegrationMode))
def test_every_parameter_group_receives_gradient(mode):
    for seed in range(5):
        m = build_pilotnet(ModelConfig(integration_mode=mode), np.random.default_rng(seed))
        x = np.random.default_rng(100 + seed).random((1, 66, 200))
        g = gazemap.render_gaze_map([(100, 30)], 200, 66)[None]
        loss = mse_loss(forward_batch(m, x, g, DropoutMode.TRAIN, np.random.default_rng(seed)), [5.0])
        backward(loss, params=m.params.values())
        for name, p in m.params.items():
            assert np.linalg.norm(p.grad) > 0, name


# training

def test_zero_epochs_leaves_parameters():
    m = build_pilotnet(tiny(), np.random.default_rng(0))
    before = m.snapshot()
    train_driver(m, DriverData(frames(4), np.zeros(4)), 0, 2, OptimizerState(), np.random.default_rng(0))
    assert all(np.array_equal(before[k], m.params[k].data) for k in before)
    assert m.training_history == []


def test_empty_dataset_rejected():
    m = build_pilotnet(tiny(), np.random.default_rng(0))
    with pytest.raises(ValueError):
        train_driver(m, DriverData(np.zeros((0, 24, 40)), np.zeros(0)), 1, 2, OptimizerState(),
                     np.random.default_rng(0))


def test_linear_probe_recovers_slope():
    # least squares on y = 2x has the unique minimiser w = 2
    x = np.linspace(-1, 1, 21)
    w = Tensor(np.zeros(1), requires_grad=True)
    model = Model("probe", None, {"w": w})
    fit_minibatch(model, len(x), 500, len(x), OptimizerState("sgd", 0.1), np.random.default_rng(0),
                  lambda idx, r: mse_loss(Tensor(x[idx]) * w, 2 * x[idx]))
    assert abs(w.data[0] - 2.0) < 1e-3


def test_tiny_pilotnet_overfits():
    rng = np.random.default_rng(0)
    # capacity check, so dropout is switched off (keep 1.0)
    m = build_pilotnet(tiny(uniform_keep_prob=1.0, dense=(32, 16, 8, 1)), rng)
    data = DriverData(frames(16, seed=9), rng.normal(0, 5, 16))
    train_driver(m, data, 200, 16, OptimizerState("adam", 3e-3), rng)
    assert m.training_history[-1] < 0.01 * m.training_history[0]


def test_train_driver_gaze_modes_run():
    rng = np.random.default_rng(0)
    x = frames(8)
    g = gazemap.render_batch([[(20, 12)]] * 8, 40, 24)
    for mode in IntegrationMode:
        m = build_pilotnet(tiny(mode), rng)
        train_driver(m, DriverData(x, rng.normal(size=8), g), 2, 4, OptimizerState(), rng)
        assert len(m.training_history) == 2 and all(np.isfinite(m.training_history))


# checkpoints

def test_checkpoint_round_trip(tmp_path):
    m = build_pilotnet(tiny("gaze-dropout"), np.random.default_rng(4))
    m.training_history = [3.5, 1.25]
    save_model(m, tmp_path / "m.gzmd")
    back = load_model(tmp_path / "m.gzmd")
    assert back.config == m.config and back.kind == "driver" and back.training_history == m.training_history
    assert list(back.params) == list(m.params)
    assert all(back.params[k].data.tobytes() == m.params[k].data.tobytes() for k in m.params)
    x = frames(3)
    g = gazemap.render_batch([[(5, 5)], [(30, 10)], [(20, 20)]], 40, 24)
    assert forward_batch(back, x, g).data.tobytes() == forward_batch(m, x, g).data.tobytes()
    assert encode_model(back) == encode_model(m)


def test_gaze_checkpoint_round_trip():
    m = build_gaze_predictor(GazePredictorConfig(input_width=48, input_height=32), np.random.default_rng(0))
    back = decode_model(encode_model(m))
    x = frames(2, 48, 32)
    assert predict_gaze(back, x).tobytes() == predict_gaze(m, x).tobytes()


def test_checkpoint_corruption():
    raw = encode_model(build_pilotnet(tiny(), np.random.default_rng(0)))
    with pytest.raises(CheckpointError):
        decode_model(b"XXXX" + raw[4:])
    with pytest.raises(CheckpointError):
        decode_model(raw[:4] + b"\x09\x00\x00\x00" + raw[8:])
    with pytest.raises(CheckpointError):
        decode_model(raw[:-3])
    with pytest.raises(CheckpointError):
        decode_model(raw + b"\x00")


# gaze predictor

SMALL_GAZE = GazePredictorConfig(input_width=48, input_height=32, encoder=((6, 5, 2), (8, 3, 1), (8, 3, 1)))


def spot_frames(n, seed):
    """Dark frames with one bright disc; the truth gaze is centred on the disc."""
    rng = np.random.default_rng(seed)
    xs, ys = rng.uniform(6, 41, n), rng.uniform(6, 25, n)
    jj, ii = np.meshgrid(np.arange(48), np.arange(32))
    imgs = np.stack([0.2 + 0.7 * (((jj - x) ** 2 + (ii - y) ** 2) < 9) for x, y in zip(xs, ys)])
    maps = gazemap.render_batch([[(x, y)] for x, y in zip(xs, ys)], 48, 32, sigma=4.0)
    return imgs, maps


def test_predictor_output_is_a_gaze_map():
    m = build_gaze_predictor(GazePredictorConfig(), np.random.default_rng(0))
    x = frames(2, 200, 66)
    out = predict_gaze(m, x)
    assert out.shape == (2, 66, 200)
    assert np.all(out >= 0) and np.allclose(out.sum(axis=(1, 2)), 1.0, atol=1e-6)
    assert np.array_equal(predict_gaze(m, x[0]), predict_gaze(m, x[0]))


def test_predictor_rejects_wrong_resolution():
    m = build_gaze_predictor(SMALL_GAZE, np.random.default_rng(0))
    with pytest.raises(ValueError):
        predict_gaze(m, np.zeros((30, 48)))
    with pytest.raises(ConfigurationError):
        build_gaze_predictor(GazePredictorConfig(input_width=8, input_height=8), np.random.default_rng(0))


def test_gaze_zero_epochs_and_empty():
    m = build_gaze_predictor(SMALL_GAZE, np.random.default_rng(0))
    before = m.snapshot()
    imgs, maps = spot_frames(4, 0)
    train_gaze_supervised(m, GazeData(imgs, maps), GazeHyper(epochs=0), np.random.default_rng(0))
    assert all(np.array_equal(before[k], m.params[k].data) for k in before)
    with pytest.raises(ValueError):
        train_gaze_supervised(m, GazeData(imgs[:0], maps[:0]), GazeHyper(), np.random.default_rng(0))


def test_gaze_overfits_eight_pairs():
    imgs, maps = spot_frames(8, 1)
    m = build_gaze_predictor(SMALL_GAZE, np.random.default_rng(1))
    initial = l1_map_loss(gaze_forward(m, imgs), maps).item()
    train_gaze_supervised(m, GazeData(imgs, maps), GazeHyper(epochs=300, batch_size=8, learning_rate=1e-2),
                          np.random.default_rng(1))
    assert l1_map_loss(gaze_forward(m, imgs), maps).item() < 0.1 * initial


def test_trained_predictor_beats_central_blob_on_held_out():
    imgs, maps = spot_frames(200, 2)
    test_imgs, test_maps = spot_frames(40, 3)
    m = build_gaze_predictor(SMALL_GAZE, np.random.default_rng(2))
    train_gaze_supervised(m, GazeData(imgs, maps), GazeHyper(epochs=15, batch_size=16, learning_rate=5e-3),
                          np.random.default_rng(2))
    pred = predict_gaze(m, test_imgs)
    blob = gazemap.central_blob(48, 32, sigma=4.0)
    kl_p = np.mean([gazemap.kl_divergence(t, p) for t, p in zip(test_maps, pred)])
    kl_b = np.mean([gazemap.kl_divergence(t, blob) for t in test_maps])
    cc_p = np.mean([gazemap.correlation_coefficient(t, p) for t, p in zip(test_maps, pred)])
    cc_b = np.mean([gazemap.correlation_coefficient(t, blob) for t in test_maps])
    assert kl_p < kl_b and cc_p > cc_b


# adversarial

SMALL_DISC = DiscriminatorConfig(input_width=48, input_height=32, convs=((4, 5, 2), (8, 3, 2)))


def test_zero_adversarial_weight_matches_supervised_gradient():
    imgs, maps = spot_frames(4, 5)
    g = build_gaze_predictor(SMALL_GAZE, np.random.default_rng(0))
    d = build_discriminator(SMALL_DISC, np.random.default_rng(1))
    backward(generator_loss(g, d, imgs, maps, 1.0, 0.0), params=g.params.values())
    adv = {k: p.grad.copy() for k, p in g.params.items()}
    zero_grad(g.params.values())
    backward(l1_map_loss(gaze_forward(g, imgs), maps), params=g.params.values())
    for k, p in g.params.items():
        assert np.max(np.abs(p.grad - adv[k])) <= 1e-10


def test_adversarial_with_zero_weight_equals_supervised_update():
    imgs, maps = spot_frames(4, 6)
    a = build_gaze_predictor(SMALL_GAZE, np.random.default_rng(0))
    b = build_gaze_predictor(SMALL_GAZE, np.random.default_rng(0))
    d = build_discriminator(SMALL_DISC, np.random.default_rng(1))
    hyper = GazeHyper(epochs=1, batch_size=4, adv_weight=0.0)
    train_gaze_adversarial(a, d, GazeData(imgs, maps), 1.0, hyper, np.random.default_rng(3))
    train_gaze_supervised(b, GazeData(imgs, maps), hyper, np.random.default_rng(3),
                          optimizer=OptimizerState("adam", hyper.learning_rate, beta1=0.5))
    for k in a.params:
        np.testing.assert_allclose(a.params[k].data, b.params[k].data, rtol=0, atol=1e-10)


def test_untrained_discriminator_is_at_chance():
    imgs, maps = spot_frames(500, 7)
    g = build_gaze_predictor(SMALL_GAZE, np.random.default_rng(0))
    d = build_discriminator(SMALL_DISC, np.random.default_rng(8))
    acc = discriminator_accuracy(d, imgs, maps, predict_gaze(g, imgs))
    assert 0.35 <= acc <= 0.65


def test_generator_loss_descends_on_frozen_discriminator():
    imgs, maps = spot_frames(8, 9)
    g = build_gaze_predictor(SMALL_GAZE, np.random.default_rng(0))
    d = build_discriminator(SMALL_DISC, np.random.default_rng(1))
    before = generator_loss(g, d, imgs, maps, 100.0, 1.0)
    backward(before, params=g.params.values())
    optimizer_step(g.params, OptimizerState("sgd", 1e-5))
    after = generator_loss(g, d, imgs, maps, 100.0, 1.0)
    assert after.item() < before.item()


def test_adversarial_training_runs():
    imgs, maps = spot_frames(16, 10)
    g = build_gaze_predictor(SMALL_GAZE, np.random.default_rng(0))
    d = build_discriminator(SMALL_DISC, np.random.default_rng(1))
    before = d.snapshot()
    train_gaze_adversarial(g, d, GazeData(imgs, maps), 100.0, GazeHyper(epochs=2, batch_size=8),
                           np.random.default_rng(0))
    assert len(g.training_history) == 2
    assert any(not np.array_equal(before[k], d.params[k].data) for k in before)
    with pytest.raises(ValueError):
        train_gaze_adversarial(g, d, GazeData(imgs[:0], maps[:0]), 100.0, GazeHyper(), np.random.default_rng(0))
