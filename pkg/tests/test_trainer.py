"""Trainer tests: closed-form updates, end-to-end gradient checks against
finite differences, determinism, and the subgroup diagnostics."""

import math

import numpy as np
import pytest

from focalpo.data import SynthConfig, Subgroup, random_reward_model, synthesize_dataset
from focalpo.losses import LossConfig, LossVariant, gradient_weight
from focalpo.policy import (
    PolicyTable,
    TokenSequence,
    pair_margin,
    random_policy,
    sequence_log_prob_grad,
    uniform_policy,
)
from focalpo.trainer import (
    OptimizerState,
    TrainConfig,
    assemble_gradient,
    evaluate,
    init_optimizer_state,
    standard_profile_variants,
    subgroup_weight_profile,
    train,
    train_step,
)
from focalpo.losses import pair_loss


def toy_setup(num_pairs=120, noise=0.1, seed=5, num_classes=3, vocab=6, length=4):
    reference = random_policy(num_classes, vocab, seed=101)
    reward = random_reward_model(num_classes, vocab, seed=102)
    config = SynthConfig(
        num_pairs=num_pairs,
        num_prompt_classes=num_classes,
        vocab_size=vocab,
        seq_length=length,
        labeling_mode="deterministic",
        noise_rate=noise,
        generator_seed=seed,
    )
    return synthesize_dataset(config, reward, reference), reference


def train_config(variant=LossVariant.DPO, gamma=0.05, beta=5.0, **kwargs):
    defaults = dict(
        learning_rate=3e-3,
        batch_size=64,
        num_epochs=10,
        optimizer="adam",
        shuffle_seed=0,
        eval_every=5,
    )
    defaults.update(kwargs)
    return TrainConfig(loss=LossConfig(variant, beta=beta, gamma=gamma), **defaults)


def mean_batch_loss(policy, reference, batch, loss_config):
    total = 0.0
    for pair in batch:
        margin = pair_margin(policy, reference, pair, loss_config.beta)
        total += pair_loss(loss_config, margin).loss
    return total / len(batch)


class TestTrainStep:
    def test_zero_learning_rate_leaves_policy_unchanged(self):
        dataset, reference = toy_setup(num_pairs=16)
        policy = reference.clone()
        config = train_config(learning_rate=0.0, optimizer="sgd")
        state = init_optimizer_state(config, policy)
        before = policy.logits.copy()
        _, _, diagnostics = train_step(policy, reference, dataset[:8], config, state)
        assert np.array_equal(policy.logits, before)
        assert len(diagnostics) == 8
        for diag in diagnostics:
            assert diag.margin == 0.0
            assert diag.probability == 0.5

    def test_single_pair_sgd_closed_form(self):
        dataset, reference = toy_setup(num_pairs=4, noise=0.0)
        policy = random_policy(3, 6, seed=55)
        pair = dataset[0]
        beta, lr = 0.7, 0.5
        config = train_config(
            LossVariant.DPO, beta=beta, learning_rate=lr, optimizer="sgd", batch_size=1
        )
        margin = pair_margin(policy, reference, pair, beta)
        weight = gradient_weight(config.loss, margin)  # sigma(-margin) for dpo
        grad_diff = sequence_log_prob_grad(policy, pair.chosen) - sequence_log_prob_grad(
            policy, pair.rejected
        )
        expected = policy.logits + lr * weight * beta * grad_diff
        state = init_optimizer_state(config, policy)
        train_step(policy, reference, [pair], config, state)
        np.testing.assert_allclose(policy.logits, expected, atol=1e-12)

    def test_full_batch_sgd_descends(self):
        dataset, reference = toy_setup(num_pairs=40)
        policy = random_policy(3, 6, seed=77)
        for variant, gamma in [
            (LossVariant.DPO, 0.05),
            (LossVariant.FOCAL, 0.05),
            (LossVariant.FOCAL_EXACT, 0.05),
            (LossVariant.FOCUS_INCORRECT, 1.0),
        ]:
            config = train_config(
                variant, gamma=gamma, beta=1.0, learning_rate=1e-3, optimizer="sgd",
                batch_size=len(dataset),
            )
            trial = policy.clone()
            before = mean_batch_loss(trial, reference, dataset, config.loss)
            state = init_optimizer_state(config, trial)
            train_step(trial, reference, dataset, config, state)
            after = mean_batch_loss(trial, reference, dataset, config.loss)
            assert after <= before

    def test_empty_batch_rejected(self):
        dataset, reference = toy_setup(num_pairs=4)
        policy = reference.clone()
        config = train_config()
        with pytest.raises(ValueError):
            train_step(policy, reference, [], config, init_optimizer_state(config, policy))

    def test_non_finite_margin_aborts_with_pair_id(self):
        # logits at +/-1e308 are finite, but a two-step chain of suppressed
        # tokens pushes the sequence log-probability to -inf
        dataset, reference = toy_setup(
            num_pairs=2, num_classes=1, vocab=2, length=2, noise=0.0
        )
        policy = uniform_policy(1, 2)
        policy.logits[:, :, 0] = 1e308
        config = train_config(beta=1.0, optimizer="sgd")
        with pytest.raises(FloatingPointError, match="pair_id"):
            train_step(
                policy, reference, dataset[:1], config, init_optimizer_state(config, policy)
            )


class TestGradientCheck:
    def test_assembled_gradient_matches_finite_differences(self):
        dataset, reference = toy_setup(num_pairs=5, num_classes=2, vocab=4, length=3, noise=0.3)
        policy = random_policy(2, 4, seed=91)
        h = 1e-5
        for variant, gamma in [
            (LossVariant.DPO, 0.05),
            (LossVariant.FOCAL, 0.05),
            (LossVariant.FOCAL_EXACT, 0.07),
            (LossVariant.FOCUS_INCORRECT, 1.0),
        ]:
            loss_config = LossConfig(variant, beta=0.7, gamma=gamma)
            grad, _ = assemble_gradient(policy, reference, dataset, loss_config)
            fd = np.zeros_like(grad)
            for idx in np.ndindex(*grad.shape):
                policy.logits[idx] += h
                up = mean_batch_loss(policy, reference, dataset, loss_config)
                policy.logits[idx] -= 2 * h
                down = mean_batch_loss(policy, reference, dataset, loss_config)
                policy.logits[idx] += h
                fd[idx] = (up - down) / (2 * h)
            np.testing.assert_allclose(grad, fd, rtol=1e-5, atol=1e-10)


class TestTrain:
    def test_zero_epochs_reports_only_step_zero(self):
        dataset, reference = toy_setup(num_pairs=12)
        report = train(train_config(num_epochs=0), dataset, reference.clone(), reference)
        assert [rec.step for rec in report.steps] == [0]
        assert report.steps[0].accuracy_overall == 0.0  # all margins exactly zero

    def test_deterministic_reports_and_policies(self):
        dataset, reference = toy_setup(num_pairs=60)
        config = train_config(num_epochs=4)
        policy_a, policy_b = reference.clone(), reference.clone()
        report_a = train(config, dataset, policy_a, reference)
        report_b = train(config, dataset, policy_b, reference)
        assert report_a.to_json_dict() == report_b.to_json_dict()
        assert policy_a.checksum() == policy_b.checksum()

    def test_reference_never_modified(self):
        dataset, reference = toy_setup(num_pairs=60)
        checksum = reference.checksum()
        train(train_config(num_epochs=3), dataset, reference.clone(), reference)
        assert reference.checksum() == checksum

    def test_loss_descends_on_toy_run(self):
        dataset, reference = toy_setup(num_pairs=150)
        report = train(train_config(num_epochs=20), dataset, reference.clone(), reference)
        assert report.final["final_mean_loss"] < report.final["initial_mean_loss"]
        assert report.steps[-1].step == 20 * math.ceil(150 / 64)

    def test_empty_dataset_rejected(self):
        _, reference = toy_setup(num_pairs=4)
        with pytest.raises(ValueError):
            train(train_config(), [], reference.clone(), reference)

    def test_report_records_orderings(self):
        dataset, reference = toy_setup(num_pairs=80)
        report = train(train_config(num_epochs=6), dataset, reference.clone(), reference)
        final = report.final
        assert set(final["weight_profile"]) == {"dpo", "focal", "focus-incorrect"}
        assert final["margin_ordering_incorrect_below_correct"] in (True, False)
        assert final["ratio_ordering_incorrect_below_correct"] in (True, False)


class TestEvaluate:
    def test_policy_equal_to_reference(self):
        dataset, reference = toy_setup(num_pairs=40)
        metrics = evaluate(reference.clone(), reference, dataset, beta=0.01)
        assert metrics["overall_accuracy"] == 0.0
        assert metrics["flip_incorrect_to_correct"] == 0.0
        assert metrics["flip_correct_to_incorrect"] == 0.0
        margins = metrics["mean_margin_by_subgroup"]
        assert margins["correct_at_init"] == 0.0
        assert margins["incorrect_at_init"] == 0.0

    def test_constructed_optimum_has_accuracy_one(self):
        # noise-free deterministic labels are linearly realizable, so
        # perceptron-style nudges on violated pairs reach a perfect ranking
        dataset, reference = toy_setup(num_pairs=30, num_classes=2, vocab=4, length=3, noise=0.0)
        policy = reference.clone()
        for _ in range(200):
            violated = [
                pair for pair in dataset if pair_margin(policy, reference, pair, 0.01) <= 0.0
            ]
            if not violated:
                break
            for pair in violated:
                policy.logits += 0.5 * (
                    sequence_log_prob_grad(policy, pair.chosen)
                    - sequence_log_prob_grad(policy, pair.rejected)
                )
        metrics = evaluate(policy, reference, dataset, beta=0.01)
        assert metrics["overall_accuracy"] == 1.0

    def test_accuracy_matches_brute_force_margins(self):
        from focalpo.policy import sequence_log_prob

        dataset, reference = toy_setup(num_pairs=200)
        policy = random_policy(3, 6, seed=13)
        metrics = evaluate(policy, reference, dataset, beta=0.02)
        correct = 0
        for pair in dataset:
            margin = 0.02 * (
                (sequence_log_prob(policy, pair.chosen) - sequence_log_prob(reference, pair.chosen))
                - (
                    sequence_log_prob(policy, pair.rejected)
                    - sequence_log_prob(reference, pair.rejected)
                )
            )
            correct += margin > 0
        assert metrics["overall_accuracy"] == correct / len(dataset)


class TestSubgroupWeightProfile:
    def test_constant_weights_at_reference_state(self):
        dataset, reference = toy_setup(num_pairs=50)
        rows = subgroup_weight_profile(
            reference.clone(), reference, dataset, standard_profile_variants(0.01)
        )
        by_variant = {}
        for row in rows:
            by_variant.setdefault(row.variant, []).append(row)
        # all margins are exactly zero, so every pair carries the delta=0 weight
        for row in by_variant["dpo"]:
            assert row.mean_weight == 0.5
        for row in by_variant["focal"]:
            assert row.mean_weight == pytest.approx(0.4662297633875558, abs=1e-12)
        counts = sum(row.count for row in by_variant["dpo"])
        assert counts == len(dataset)

    def test_perturbation_toward_correct_subgroup_orders_ratios(self):
        dataset, reference = toy_setup(num_pairs=100)
        policy = reference.clone()
        for pair in dataset:
            from focalpo.data import classify_pair

            if classify_pair(reference, pair) is Subgroup.CORRECT_AT_INIT:
                grad = sequence_log_prob_grad(policy, pair.chosen) - sequence_log_prob_grad(
                    policy, pair.rejected
                )
                policy.logits += 0.5 * grad
        rows = subgroup_weight_profile(
            policy, reference, dataset, standard_profile_variants(1.0)
        )
        means = {(r.variant, r.subgroup): r.mean_weight for r in rows}
        ratio_correct = means[("focal", Subgroup.CORRECT_AT_INIT)] / means[
            ("dpo", Subgroup.CORRECT_AT_INIT)
        ]
        ratio_incorrect = means[("focal", Subgroup.INCORRECT_AT_INIT)] / means[
            ("dpo", Subgroup.INCORRECT_AT_INIT)
        ]
        assert ratio_incorrect < ratio_correct

    def test_tail_weights_at_margin_minus_ten(self):
        # one pair driven to margin -10: the focus-incorrect weight sits at
        # ~1.0 while dpo saturates at sigma(10)
        from focalpo.data import PreferencePair

        reference = uniform_policy(1, 2)
        policy = uniform_policy(1, 2)
        policy.logits[0, :, 0] = -5.0
        policy.logits[0, :, 1] = 5.0
        pair = PreferencePair(
            0, 0, TokenSequence(0, (0,)), TokenSequence(0, (1,)), 1.0, 0.0, False
        )
        margin = pair_margin(policy, reference, pair, beta=1.0)
        assert margin == pytest.approx(-10.0, abs=1e-9)
        variants = [
            LossConfig(LossVariant.DPO, beta=1.0),
            LossConfig(LossVariant.FOCUS_INCORRECT, beta=1.0, gamma=1.0),
        ]
        rows = subgroup_weight_profile(policy, reference, [pair], variants)
        means = {r.variant: r.mean_weight for r in rows}
        assert means["focus-incorrect"] == pytest.approx(1.0, abs=1e-3)
        assert means["dpo"] == pytest.approx(0.9999546021312976, abs=1e-9)

    def test_focal_mean_below_dpo_mean_everywhere(self):
        dataset, reference = toy_setup(num_pairs=80)
        policy = random_policy(3, 6, seed=44)
        rows = subgroup_weight_profile(
            policy, reference, dataset, standard_profile_variants(0.05)
        )
        means = {(r.variant, r.subgroup): r.mean_weight for r in rows}
        for group in (Subgroup.CORRECT_AT_INIT, Subgroup.INCORRECT_AT_INIT):
            assert means[("focal", group)] < means[("dpo", group)]

    def test_empty_subgroup_absent(self):
        reference = uniform_policy(2, 4)  # ties everywhere: all incorrect-at-init
        dataset, _ = toy_setup(num_pairs=10, num_classes=2, vocab=4, length=3)
        rows = subgroup_weight_profile(
            reference.clone(), reference, dataset, standard_profile_variants(0.01)
        )
        assert all(row.subgroup is Subgroup.INCORRECT_AT_INIT for row in rows)


class TestOptimizers:
    def test_adam_state_initialized_lazily_for_sgd(self):
        dataset, reference = toy_setup(num_pairs=8)
        config = train_config(optimizer="sgd")
        state = init_optimizer_state(config, reference.clone())
        assert state.first_moment is None

    def test_adam_and_sgd_differ(self):
        dataset, reference = toy_setup(num_pairs=40)
        policies = {}
        for optimizer in ("adam", "sgd"):
            policy = reference.clone()
            train(
                train_config(num_epochs=3, optimizer=optimizer), dataset, policy, reference
            )
            policies[optimizer] = policy.checksum()
        assert policies["adam"] != policies["sgd"]
