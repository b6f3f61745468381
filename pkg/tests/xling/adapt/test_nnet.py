"""Acoustic Model Tests"""

import math
from os.path import join

import numpy as np
import pytest

from hdx.utilities.path import temp_dir
from xling.adapt.features import FeatureMatrix
from xling.adapt.nnet import (
    CheckpointError,
    LayerSpec,
    ModelError,
    TrainConfig,
    TrainingError,
    TrainingExample,
    TrainingLog,
    desk_scale_layers,
    forward,
    gradient_check,
    init_model,
    layers_from_pattern,
    load_checkpoint,
    loss_and_grads,
    lr_schedule,
    full_scale_layers,
    read_checkpoint_header,
    save_checkpoint,
    train,
    transfer_full,
    transfer_hidden,
)


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def reference_forward(model, x):
    """Frame by frame evaluation written straight from the layer equations"""
    h = (x - model.input_shift) / model.input_scale
    frames = len(h)
    for layer in model.hidden:
        spec = layer.spec
        p = layer.params
        if spec.kind == "tdnn":
            out = []
            for t in range(frames):
                spliced = np.concatenate(
                    [h[min(max(t + o, 0), frames - 1)] for o in spec.offsets]
                )
                z = p["W"] @ spliced + p["b"]
                out.append(np.maximum(z, 0) if spec.activation == "relu" else np.tanh(z))
            h = np.array(out)
        else:
            n = spec.dim
            c = np.zeros(n)
            r = np.zeros(spec.projection_dim)
            out = []
            for t in range(frames):
                a = p["Wx"] @ h[t] + p["Wr"] @ r + p["b"]
                i = sigmoid(a[:n] + p["p_i"] * c)
                f = sigmoid(a[n : 2 * n] + p["p_f"] * c)
                g = np.tanh(a[2 * n : 3 * n])
                c = f * c + i * g
                o = sigmoid(a[3 * n :] + p["p_o"] * c)
                r = p["Wp"] @ (o * np.tanh(c))
                out.append(r)
            h = np.array(out)
    logits = h @ model.output["W"].T + model.output["b"]
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def toy_examples(count=16, frames=30, dims=6, seed=0):
    rng = np.random.default_rng(seed)
    examples = []
    for n in range(count):
        x = rng.standard_normal((frames, dims))
        labels = ["a" if value > 0 else "b" for value in x[:, 0]]
        examples.append(TrainingExample(f"u{n}", x, labels))
    return examples


class TestNnet:
    @pytest.fixture(scope="class")
    def specs(self):
        return [
            LayerSpec.tdnn(5, (-1, 0, 1), "tanh"),
            LayerSpec.lstmp(4, 3),
        ]

    @pytest.fixture(scope="class")
    def model(self, specs):
        rng = np.random.default_rng(8)
        return init_model(
            6,
            specs,
            ["sil", "a", "b", "c"],
            "fp0",
            seed=3,
            input_shift=rng.standard_normal(6) * 0.1,
            input_scale=rng.uniform(0.5, 2.0, 6),
        )

    def test_layer_patterns(self):
        layers = layers_from_pattern("TTLTL", 8, 6, 4)
        assert [spec.kind for spec in layers] == [
            "tdnn",
            "tdnn",
            "lstmp",
            "tdnn",
            "lstmp",
        ]
        assert layers[0].offsets == (0,)
        assert layers[1].offsets == (-1, 0, 1)
        assert layers[3].offsets == (-3, 0, 3)
        assert layers[2].output_dim == 4
        full = full_scale_layers()
        assert len(full) == 10
        assert sum(spec.kind == "lstmp" for spec in full) == 3
        assert full[-1].dim == 1024 and full[-1].projection_dim == 256
        desk = desk_scale_layers()
        assert [spec.output_dim for spec in desk] == [64, 64, 32]
        assert LayerSpec.from_dict(desk[2].to_dict()) == desk[2]
        with pytest.raises(ModelError):
            layers_from_pattern("TXL", 8, 6, 4)
        with pytest.raises(ModelError):
            LayerSpec.tdnn(8, (1, 0))
        with pytest.raises(ModelError):
            LayerSpec.lstmp(8, 0)

    def test_forward_matches_reference(self, model):
        x = np.random.default_rng(1).standard_normal((7, 6))
        posteriors = forward(model, FeatureMatrix(x))
        assert posteriors.shape == (7, 4)
        assert np.allclose(posteriors.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(posteriors >= 0)
        assert np.allclose(posteriors, reference_forward(model, x), atol=1e-10)
        with pytest.raises(ModelError):
            forward(model, np.zeros((7, 5)))

    def test_relu_forward_matches_reference(self):
        model = init_model(6, desk_scale_layers("TLT"), ["a", "b"], "fp", seed=2)
        x = np.random.default_rng(2).standard_normal((9, 6))
        assert np.allclose(forward(model, x), reference_forward(model, x), atol=1e-10)

    def test_uniform_output_loss(self, model):
        flat = transfer_full(model)
        flat.output["W"][:] = 0.0
        flat.output["b"][:] = 0.0
        x = np.random.default_rng(4).standard_normal((5, 6))
        loss, _ = loss_and_grads(flat, x, ["sil", "a", "b", "c", "a"])
        assert loss == pytest.approx(math.log(4), abs=1e-12)
        index_loss, _ = loss_and_grads(flat, x, [0, 1, 2, 3, 1])
        assert index_loss == loss
        with pytest.raises(ModelError):
            loss_and_grads(flat, x, ["sil", "a", "b", "c", "zz"])
        with pytest.raises(ModelError):
            loss_and_grads(flat, x, ["sil"])

    @pytest.mark.parametrize("utterance", [0, 1, 2])
    def test_gradient_check(self, utterance):
        rng = np.random.default_rng(40 + utterance)
        model = init_model(
            6,
            [
                LayerSpec.tdnn(5, (-1, 0, 1), "tanh"),
                LayerSpec.tdnn(4, (-2, 0, 2), "tanh"),
                LayerSpec.lstmp(4, 3),
            ],
            ["sil", "a", "b", "c"],
            "fp0",
            seed=utterance,
        )
        frames = 4 + 2 * utterance
        x = rng.standard_normal((frames, 6))
        labels = [["sil", "a", "b", "c"][i] for i in rng.integers(0, 4, frames)]
        before = [value.copy() for _, value in model.parameters()]
        errors = gradient_check(model, x, labels)
        assert set(errors) == {name for name, _ in model.parameters()}
        for name, error in errors.items():
            assert error < 1e-4, name
        for (_, value), original in zip(model.parameters(), before):
            assert np.array_equal(value, original)

    def test_lr_schedule(self):
        cfg = TrainConfig(initial_lr=0.3, final_lr=0.003, epochs=2)
        rates = lr_schedule(cfg, 11)
        assert rates[0] == 0.3
        assert rates[-1] == 0.003
        assert np.all(np.diff(rates) < 0)
        assert rates[5] == pytest.approx(0.03)
        assert list(lr_schedule(cfg, 1)) == [0.3]

    def test_train_config(self):
        cfg = TrainConfig(0.1, 0.01, 3, batch=4, dropout_rate=0.1)
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg
        with pytest.raises(ModelError):
            TrainConfig(0.1, 0.2, 1)
        with pytest.raises(ModelError):
            TrainConfig(0.1, 0.01, 0)
        with pytest.raises(ModelError):
            TrainConfig(0.1, 0.01, 1, dropout_rate=1.0)
        with pytest.raises(ModelError):
            TrainConfig(0.0, 0.0, 1)

    def test_train(self):
        model = init_model(
            6,
            [LayerSpec.tdnn(8, (0,)), LayerSpec.lstmp(8, 4)],
            ["a", "b"],
            "fp",
            seed=1,
        )
        original = model.output["W"].copy()
        cfg = TrainConfig(
            initial_lr=0.5,
            final_lr=0.05,
            epochs=6,
            batch=4,
            bptt_chunk=10,
            seed=2,
            dropout_rate=0.1,
            max_grad_norm=5.0,
        )
        trained, log = train(model, toy_examples(), cfg)
        assert np.array_equal(model.output["W"], original)
        assert len(log.losses) == 6
        assert log.losses[-1] < log.losses[0]
        assert log.first_lr == 0.5
        assert log.last_lr == 0.05
        assert trained.training_state == {"epoch": 6, "last_lr": 0.05}
        assert trained.dropout_rate == 0.1
        assert TrainingLog.from_dict(log.to_dict()).losses == log.losses
        again, again_log = train(model, toy_examples(), cfg)
        assert again_log.losses == log.losses
        for (_, first), (_, second) in zip(trained.parameters(), again.parameters()):
            assert first.tobytes() == second.tobytes()

    def test_train_errors(self):
        model = init_model(6, [LayerSpec.tdnn(4, (0,))], ["a", "b"], "fp")
        cfg = TrainConfig(0.1, 0.01, 1)
        with pytest.raises(TrainingError):
            train(model, [], cfg)
        bad = toy_examples(count=2)
        bad[1] = TrainingExample("short", bad[1].inputs, bad[1].labels[:-1])
        with pytest.raises(TrainingError):
            train(model, bad, cfg)
        nan = toy_examples(count=2)
        nan[0].inputs[:] = np.nan
        with pytest.raises(TrainingError):
            train(model, nan, cfg)

    @pytest.mark.parametrize(
        "specs",
        [
            [LayerSpec.tdnn(4, (0,))],
            [LayerSpec.tdnn(6, (0,)), LayerSpec.lstmp(5, 3)],
            [LayerSpec.tdnn(4, (0,)), LayerSpec.lstmp(4, 2), LayerSpec.tdnn(3, (-3, 0, 3))],
        ],
    )
    def test_transfer_hidden(self, specs):
        source = init_model(5, specs, ["a", "b", "c"], "fp", seed=4)
        source.training_state = {"epoch": 2, "last_lr": 0.01}
        target = transfer_hidden(source, ["x", "y", "z", "w", "v"], seed=9)
        for (name, mine), (other, theirs) in zip(
            target.hidden_parameters(), source.hidden_parameters()
        ):
            assert name == other
            assert mine.tobytes() == theirs.tobytes()
            assert mine is not theirs
        assert target.output["W"].shape == (5, source.hidden_dim)
        bound = 1.0 / math.sqrt(source.hidden_dim)
        assert np.all(np.abs(target.output["W"]) <= bound)
        assert not np.any(target.output["b"])
        assert target.fingerprint == "fp"
        assert target.input_scale.tobytes() == source.input_scale.tobytes()
        assert target.phone_set == ("x", "y", "z", "w", "v")
        again = transfer_hidden(source, ["x", "y", "z", "w", "v"], seed=9)
        assert again.output["W"].tobytes() == target.output["W"].tobytes()
        with pytest.raises(ModelError):
            transfer_hidden(source, [])

    def test_transfer_full_without_training(self, model):
        copied = transfer_full(model)
        for (_, mine), (_, theirs) in zip(copied.parameters(), model.parameters()):
            assert mine.tobytes() == theirs.tobytes()
        x = np.random.default_rng(7).standard_normal((4, 6))
        assert np.array_equal(forward(copied, x), forward(model, x))

    def test_checkpoint(self, model):
        with temp_dir("test_checkpoint", delete_on_success=True, delete_on_failure=False) as folder:
            path = join(folder, "model.ckpt")
            model.training_state = {"epoch": 3, "last_lr": 0.002}
            save_checkpoint(model, path)
            header = read_checkpoint_header(path)
            assert header["phone_set"] == ["sil", "a", "b", "c"]
            assert header["fingerprint"] == "fp0"
            assert header["training_state"] == {"epoch": 3, "last_lr": 0.002}
            assert [spec["kind"] for spec in header["layers"]] == ["tdnn", "lstmp"]
            loaded = load_checkpoint(path)
            assert loaded.phone_set == model.phone_set
            assert loaded.specs == model.specs
            for (name, mine), (other, theirs) in zip(
                loaded.parameters(), model.parameters()
            ):
                assert name == other
                assert mine.tobytes() == theirs.tobytes()
            assert loaded.input_shift.tobytes() == model.input_shift.tobytes()
            x = np.random.default_rng(3).standard_normal((4, 6))
            assert np.array_equal(forward(loaded, x), forward(model, x))
            second = join(folder, "second.ckpt")
            save_checkpoint(loaded, second)
            with open(path, "rb") as fp:
                payload = fp.read()
            with open(second, "rb") as fp:
                assert fp.read() == payload

            broken = join(folder, "broken.ckpt")
            with open(broken, "wb") as fp:
                fp.write(payload[: len(payload) // 2])
            with pytest.raises(CheckpointError):
                load_checkpoint(broken)
            corrupted = bytearray(payload)
            corrupted[-3] ^= 0xFF
            with open(broken, "wb") as fp:
                fp.write(bytes(corrupted))
            with pytest.raises(CheckpointError):
                load_checkpoint(broken)
            with open(broken, "wb") as fp:
                fp.write(b"NOPE" + payload[4:])
            with pytest.raises(CheckpointError):
                load_checkpoint(broken)
            with pytest.raises(CheckpointError):
                read_checkpoint_header(broken)

    @pytest.mark.slow
    def test_full_scale(self):
        model = init_model(300, full_scale_layers(), [f"p{i}" for i in range(40)], "fp")
        x = np.random.default_rng(0).standard_normal((12, 300))
        posteriors = forward(model, x)
        assert posteriors.shape == (12, 40)
        assert np.allclose(posteriors.sum(axis=1), 1.0)
