import json

import numpy as np
import pytest
import torch

from collabadv.core import (
    Architecture,
    Checkpoint,
    Classifier,
    LabeledBatch,
    argmax_lowest,
    forward_logits,
    input_gradient,
    predict,
    snapshot,
)
from helpers import audit_gradients, linear_model, random_batch, small_mlp


class TestForwardLogits:
    def test_zero_weight_linear_gives_zero_logits(self):
        model = linear_model(np.zeros((3, 4)))
        out = forward_logits(model, torch.rand(5, 4, dtype=torch.float64))
        assert torch.equal(out, torch.zeros(5, 3, dtype=torch.float64))

    def test_linear_matches_hand_matmul(self):
        rng = np.random.default_rng(0)
        w = rng.standard_normal((4, 6))
        b = rng.standard_normal(4)
        model = linear_model(w, b)
        x = rng.uniform(0, 1, (7, 6))
        out = forward_logits(model, torch.as_tensor(x)).detach().numpy()
        expected = x @ w.T + b  # independent numpy oracle
        np.testing.assert_allclose(out, expected, rtol=0, atol=1e-12)

    def test_batch_shape(self):
        model = small_mlp(seed=3, d=5, classes=4)
        out = forward_logits(model, torch.rand(3, 5, dtype=torch.float64))
        assert out.shape == (3, 4)

    def test_shape_mismatch_raises(self):
        model = small_mlp(d=5)
        with pytest.raises(ValueError, match="input shape"):
            forward_logits(model, torch.rand(3, 4, dtype=torch.float64))

    def test_softmax_rows_normalized(self):
        model = small_mlp(seed=1)
        out = forward_logits(model, random_batch(2).inputs)
        sums = torch.softmax(out, dim=1).sum(dim=1)
        assert torch.allclose(sums, torch.ones_like(sums), atol=1e-6)

    def test_forward_is_deterministic(self):
        model = small_mlp(seed=9)
        x = random_batch(5).inputs
        assert torch.equal(forward_logits(model, x), forward_logits(model, x))

    def test_mlp_flattens_image_inputs(self):
        arch = Architecture("mlp", (1, 4, 4), 5, (8,))
        model = Classifier(arch, seed=0)
        x = torch.rand(3, 1, 4, 4, dtype=torch.float64)
        out = forward_logits(model, x)
        assert out.shape == (3, 5)
        flat_twin = Classifier(Architecture("mlp", (16,), 5, (8,)), seed=0)
        assert torch.equal(out, forward_logits(flat_twin, x.reshape(3, 16)))

    def test_conv_architecture_forward(self):
        arch = Architecture("conv", (1, 8, 8), 10, (4, 8, 8, 8))
        model = Classifier(arch, seed=0)
        out = forward_logits(model, torch.rand(2, 1, 8, 8, dtype=torch.float64))
        assert out.shape == (2, 10)
        assert torch.isfinite(out).all()


class TestPredict:
    def test_higher_logit_wins(self):
        assert argmax_lowest(torch.tensor([[0.1, 0.9]])).item() == 1

    def test_tie_breaks_to_lowest_index(self):
        assert argmax_lowest(torch.tensor([[0.5, 0.5]])).item() == 0
        assert argmax_lowest(torch.tensor([[1.0, 2.0, 2.0]])).item() == 1

    def test_zero_model_predicts_class_zero(self):
        model = linear_model(np.zeros((4, 3)))
        preds = predict(model, torch.rand(10, 3, dtype=torch.float64))
        assert torch.equal(preds, torch.zeros(10, dtype=torch.long))


class TestInputGradient:
    def test_constant_logits_give_zero_gradient(self):
        model = linear_model(np.zeros((3, 4)))
        batch = random_batch(0, shape=(4,))
        grad = input_gradient(model, batch, "ce")
        assert torch.equal(grad, torch.zeros_like(batch.inputs))

    def test_binary_logistic_analytic_gradient(self):
        # Logits (0, w.x + b): dCE/dx = (sigmoid(z) - y) * w, averaged.
        rng = np.random.default_rng(1)
        w = rng.standard_normal(5)
        b = 0.3
        model = linear_model(np.stack([np.zeros(5), w]), [0.0, b])
        batch = random_batch(2, batch=6, shape=(5,), classes=2)
        grad = input_gradient(model, batch, "ce").numpy()
        z = batch.inputs.numpy() @ w + b
        sigma = 1.0 / (1.0 + np.exp(-z))
        expected = ((sigma - batch.labels.numpy())[:, None] * w) / len(batch)
        np.testing.assert_allclose(grad, expected, rtol=1e-12, atol=1e-14)

    @pytest.mark.parametrize("objective", ["ce", "kl", "cw"])
    def test_matches_central_differences(self, objective):
        model = small_mlp(seed=4, d=4, classes=3, hidden=(6,))
        batch = random_batch(7, batch=3, shape=(4,), classes=3)
        reference = None
        if objective == "kl":
            peer = small_mlp(seed=11, d=4, classes=3, hidden=(6,))
            reference = peer.logits(batch.inputs).detach()
        x = batch.inputs.clone().requires_grad_(True)

        def f():
            from collabadv.core import objective_value
            return objective_value(model, x, batch.labels, objective, reference)

        audit_gradients(f, [x], n_probes=40, seed=13)

    def test_kl_requires_reference(self):
        model = small_mlp()
        batch = random_batch(0)
        with pytest.raises(ValueError, match="reference"):
            input_gradient(model, batch, "kl")
        with pytest.raises(ValueError, match="reference"):
            input_gradient(model, batch, "ce", reference=model.logits(batch.inputs).detach())

    def test_unknown_objective_rejected(self):
        with pytest.raises(ValueError, match="objective"):
            input_gradient(small_mlp(), random_batch(0), "hinge")


class TestSeedReproducibility:
    def test_same_seed_same_parameters(self):
        arch = Architecture("mlp", (3,), 3, (8, 8))
        a, b = Classifier(arch, seed=42), Classifier(arch, seed=42)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert torch.equal(pa, pb)

    def test_different_seed_different_parameters(self):
        arch = Architecture("mlp", (3,), 3, (8,))
        a, b = Classifier(arch, seed=1), Classifier(arch, seed=2)
        assert any(not torch.equal(pa, pb) for pa, pb in zip(a.parameters(), b.parameters()))

    def test_clone_is_exact(self):
        model = small_mlp(seed=5)
        twin = model.clone()
        x = random_batch(1).inputs
        assert torch.equal(model.logits(x), twin.logits(x))


class TestLabeledBatch:
    def test_rejects_out_of_box_inputs(self):
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            LabeledBatch(np.array([[1.5]]), np.array([0]), 2)

    def test_rejects_bad_labels(self):
        with pytest.raises(ValueError, match="labels"):
            LabeledBatch(np.array([[0.5]]), np.array([3]), 2)


class TestCheckpoint:
    def test_round_trip_preserves_logits(self, tmp_path):
        model = small_mlp(seed=8, d=4, classes=3)
        path = tmp_path / "model.npz"
        snapshot(model, epoch=7, meta={"note": "test"}).save(path)
        restored = Checkpoint.load(path)
        assert restored.epoch == 7
        assert restored.meta["note"] == "test"
        x = random_batch(3, shape=(4,)).inputs
        assert torch.equal(restored.to_classifier().logits(x), model.logits(x))

    def test_readable_without_toolkit(self, tmp_path):
        # The container is plain npz + JSON: numpy alone can read it.
        model = small_mlp(seed=1)
        path = tmp_path / "model.npz"
        snapshot(model, epoch=0).save(path)
        with np.load(path) as data:
            header = json.loads(bytes(data["__meta__"]).decode())
            assert header["format_version"] == 1
            assert header["architecture"]["kind"] == "mlp"
            names = [k for k in data.files if k.startswith("param/")]
            assert names
            assert all(data[k].dtype == np.float64 for k in names)

    def test_bad_version_rejected(self, tmp_path):
        path = tmp_path / "model.npz"
        header = json.dumps({"format_version": 99, "architecture": {}, "epoch": 0})
        np.savez(path, __meta__=np.frombuffer(header.encode(), dtype=np.uint8))
        with pytest.raises(ValueError, match="format version"):
            Checkpoint.load(path)
