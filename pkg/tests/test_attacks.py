import itertools

import numpy as np
import pytest
import torch
import torch.nn.functional as F
from hypothesis import given, settings
from hypothesis import strategies as st

from collabadv.attacks import (
    AdversarialBatch,
    AttackConfig,
    craft_for_method,
    cw_margin_objective,
    fgsm,
    pgd,
    project_feasible,
)
from collabadv.core import LabeledBatch
from collabadv.losses import MethodSpec, cross_entropy
from collabadv.seeding import make_generator
from helpers import linear_model, random_batch, small_mlp


class TestAttackConfig:
    def test_defaults_match_standard_threat_model(self):
        cfg = AttackConfig()
        assert cfg.epsilon == pytest.approx(8 / 255)
        assert cfg.step_size == pytest.approx(2 / 255)
        assert cfg.iterations == 10

    @pytest.mark.parametrize("kwargs", [
        {"epsilon": 1.5},
        {"epsilon": 0.01, "step_size": 0.02},
        {"step_size": 0.0},
        {"iterations": 0},
        {"objective": "dlr"},
    ])
    def test_invalid_configs_rejected(self, kwargs):
        with pytest.raises(ValueError):
            AttackConfig(**kwargs)

    def test_clean_degenerate_allowed(self):
        cfg = AttackConfig(epsilon=0.0, step_size=0.0, iterations=1)
        assert cfg.epsilon == 0.0


class TestProjectFeasible:
    def test_interior_point_unchanged(self):
        x = torch.rand(4, 3, dtype=torch.float64)
        assert torch.equal(project_feasible(x.clone(), x, 0.1), x)

    def test_overshoot_clamped_to_epsilon(self):
        x = torch.full((1, 3), 0.5, dtype=torch.float64)
        cand = x.clone()
        cand[0, 1] += 0.2
        out = project_feasible(cand, x, 0.1)
        assert out[0, 1].item() == pytest.approx(0.6, abs=0)
        assert out[0, 0].item() == 0.5

    @given(st.integers(0, 10_000), st.floats(0.01, 0.5))
    @settings(max_examples=50, deadline=None)
    def test_matches_scalar_clamp_oracle(self, seed, eps):
        rng = np.random.default_rng(seed)
        x = rng.uniform(0, 1, (3, 4))
        cand = x + rng.uniform(-1, 1, x.shape)
        out = project_feasible(torch.as_tensor(cand), torch.as_tensor(x), eps).numpy()
        for i in range(x.shape[0]):
            for j in range(x.shape[1]):
                want = min(max(cand[i, j], x[i, j] - eps), x[i, j] + eps)
                want = min(max(want, 0.0), 1.0)
                assert out[i, j] == want
        assert abs(out - x).max() <= eps + 1e-9
        assert out.min() >= 0 and out.max() <= 1

    @given(st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_idempotent(self, seed):
        rng = np.random.default_rng(seed)
        x = torch.as_tensor(rng.uniform(0, 1, (2, 5)))
        cand = torch.as_tensor(rng.uniform(-1, 2, (2, 5)))
        once = project_feasible(cand, x, 0.2)
        assert torch.equal(project_feasible(once, x, 0.2), once)

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValueError):
            project_feasible(torch.zeros(2, 3), torch.zeros(2, 4), 0.1)


class TestFgsm:
    def test_zero_gradient_is_noop(self):
        model = linear_model(np.zeros((3, 4)))
        batch = random_batch(0, shape=(4,))
        adv = fgsm(model, batch, 0.1)
        assert torch.equal(adv.perturbed, batch.inputs)

    def test_binary_linear_matches_hand_gradient_signs(self):
        rng = np.random.default_rng(3)
        w = rng.standard_normal(5)
        model = linear_model(np.stack([np.zeros(5), w]))
        batch = random_batch(1, batch=4, shape=(5,), classes=2, margin=0.2)
        eps = 0.05
        adv = fgsm(model, batch, eps)
        z = batch.inputs.numpy() @ w
        sigma = 1.0 / (1.0 + np.exp(-z))
        expected = batch.inputs.numpy() + eps * np.sign((sigma - batch.labels.numpy())[:, None] * w)
        np.testing.assert_allclose(adv.perturbed.numpy(), expected, atol=1e-12)

    def test_binary_linear_attains_vertex_maximum(self):
        # Binary CE is monotone in the linear margin, so the sign vertex
        # is the exact maximizer over the epsilon box.
        rng = np.random.default_rng(5)
        d = 8
        for trial in range(10):
            w = rng.standard_normal((2, d))
            b = rng.standard_normal(2)
            model = linear_model(w, b)
            batch = random_batch(100 + trial, batch=2, shape=(d,), classes=2, margin=0.3)
            eps = 0.05
            adv = fgsm(model, batch, eps)
            achieved = F.cross_entropy(model.logits(adv.perturbed), batch.labels, reduction="none")
            for i in range(len(batch)):
                best = max(
                    F.cross_entropy(
                        model.logits(batch.inputs[i:i + 1] + eps * torch.tensor([s], dtype=torch.float64)),
                        batch.labels[i:i + 1],
                    ).item()
                    for s in itertools.product([-1.0, 1.0], repeat=d)
                )
                assert achieved[i].item() == pytest.approx(best, abs=1e-10)

    def test_epsilon_validated(self):
        with pytest.raises(ValueError):
            fgsm(small_mlp(), random_batch(0), 0.0)


class TestPgd:
    def test_reduces_to_fgsm_bitwise(self):
        model = small_mlp(seed=2, d=4, classes=3)
        batch = random_batch(4, shape=(4,))
        eps = 0.08
        cfg = AttackConfig(epsilon=eps, step_size=eps, iterations=1, random_start=False, objective="ce")
        assert torch.equal(pgd(model, batch, cfg).perturbed, fgsm(model, batch, eps).perturbed)

    @given(st.integers(0, 10_000), st.integers(1, 4), st.booleans(),
           st.sampled_from(["ce", "cw"]), st.floats(0.02, 0.3))
    @settings(max_examples=40, deadline=None)
    def test_feasibility_invariants(self, seed, iters, random_start, objective, eps):
        model = small_mlp(seed=seed % 7, d=4, classes=3)
        batch = random_batch(seed, batch=3, shape=(4,))
        cfg = AttackConfig(epsilon=eps, step_size=eps / 2, iterations=iters,
                           random_start=random_start, objective=objective)
        adv = pgd(model, batch, cfg, generator=make_generator(seed, "t"))
        assert (adv.perturbed - adv.originals).abs().max().item() <= eps + 1e-9
        assert adv.perturbed.min().item() >= 0 and adv.perturbed.max().item() <= 1

    def test_deterministic_without_random_start(self):
        model = small_mlp(seed=6)
        batch = random_batch(9)
        cfg = AttackConfig(epsilon=0.1, step_size=0.03, iterations=5, random_start=False)
        assert torch.equal(pgd(model, batch, cfg).perturbed, pgd(model, batch, cfg).perturbed)

    def test_random_start_reproducible_from_generator(self):
        model = small_mlp(seed=6)
        batch = random_batch(9)
        cfg = AttackConfig(epsilon=0.1, step_size=0.03, iterations=3, random_start=True)
        a = pgd(model, batch, cfg, generator=make_generator(0, "s"))
        b = pgd(model, batch, cfg, generator=make_generator(0, "s"))
        assert torch.equal(a.perturbed, b.perturbed)

    def test_binary_linear_pgd10_reaches_fgsm_vertex(self):
        # On a binary linear model the ascent direction never flips, so
        # ten 2eps/10-sized steps accumulate to the same vertex FGSM
        # jumps to, and the adversarial CE dominates the clean CE.
        rng = np.random.default_rng(11)
        w = rng.standard_normal((2, 6))
        model = linear_model(w)
        batch = random_batch(12, batch=5, shape=(6,), classes=2, margin=0.2)
        eps = 0.1
        cfg = AttackConfig(epsilon=eps, step_size=eps / 4, iterations=10, random_start=False)
        adv = pgd(model, batch, cfg)
        clean_ce = cross_entropy(model.logits(batch.inputs), batch.labels).item()
        adv_ce = cross_entropy(model.logits(adv.perturbed), batch.labels).item()
        assert adv_ce >= clean_ce
        vertex = fgsm(model, batch, eps)
        assert torch.allclose(adv.perturbed, vertex.perturbed, atol=1e-12)

    def test_kl_objective_requires_reference(self):
        model = small_mlp()
        batch = random_batch(0)
        cfg = AttackConfig(epsilon=0.1, step_size=0.05, iterations=1, random_start=False, objective="kl")
        with pytest.raises(ValueError, match="reference"):
            pgd(model, batch, cfg)


class TestCwMarginObjective:
    def test_two_class_hand_values(self):
        logits = torch.tensor([[3.0, 1.0], [1.0, 3.0]])
        labels = torch.tensor([0, 0])
        out = cw_margin_objective(logits, labels)
        assert out[0].item() == -2.0
        assert out[1].item() == 2.0

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(17)
        logits = torch.as_tensor(rng.standard_normal((6, 5)))
        labels = torch.as_tensor(rng.integers(0, 5, 6))
        out = cw_margin_objective(logits, labels)
        for i in range(6):
            y = labels[i].item()
            best_other = max(logits[i, j].item() for j in range(5) if j != y)
            assert out[i].item() == best_other - logits[i, y].item()


class TestCraftForMethod:
    def test_at_dispatch_matches_pgd_ce(self):
        model = small_mlp(seed=1)
        batch = random_batch(2)
        cfg = AttackConfig(epsilon=0.1, step_size=0.03, iterations=4, random_start=True)
        a = craft_for_method(model, MethodSpec("AT"), batch, cfg, generator=make_generator(7, "x"))
        b = pgd(model, batch, cfg, generator=make_generator(7, "x"))
        assert torch.equal(a.perturbed, b.perturbed)

    def test_alp_dispatch_identical_to_at(self):
        model = small_mlp(seed=1)
        batch = random_batch(2)
        cfg = AttackConfig(epsilon=0.1, step_size=0.03, iterations=4, random_start=True)
        a = craft_for_method(model, MethodSpec("ALP"), batch, cfg, generator=make_generator(3, "y"))
        b = craft_for_method(model, MethodSpec("AT"), batch, cfg, generator=make_generator(3, "y"))
        assert torch.equal(a.perturbed, b.perturbed)

    def test_trades_on_constant_model_is_noop_without_random_start(self):
        model = linear_model(np.zeros((3, 4)))
        batch = random_batch(3, shape=(4,))
        cfg = AttackConfig(epsilon=0.1, step_size=0.03, iterations=4, random_start=False)
        adv = craft_for_method(model, MethodSpec("TRADES"), batch, cfg)
        assert torch.equal(adv.perturbed, batch.inputs)

    def test_trades_uses_kl_objective(self):
        model = small_mlp(seed=4)
        batch = random_batch(5)
        cfg = AttackConfig(epsilon=0.1, step_size=0.05, iterations=3, random_start=False)
        trades_adv = craft_for_method(model, MethodSpec("TRADES"), batch, cfg)
        ce_adv = craft_for_method(model, MethodSpec("AT"), batch, cfg)
        assert not torch.equal(trades_adv.perturbed, ce_adv.perturbed)


class TestAdversarialBatch:
    def test_rejects_oversized_perturbation(self):
        x = torch.full((1, 2), 0.5, dtype=torch.float64)
        with pytest.raises(ValueError, match="epsilon"):
            AdversarialBatch(x, x + 0.3, torch.tensor([0]), epsilon=0.1)

    def test_rejects_out_of_box(self):
        x = torch.full((1, 2), 0.05, dtype=torch.float64)
        with pytest.raises(ValueError, match="unit box"):
            AdversarialBatch(x, x - 0.1, torch.tensor([0]), epsilon=0.2)
