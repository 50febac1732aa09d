import dataclasses
import json
import os

import numpy as np
import pytest
import torch

from portraitcheck.checkpoint import (
    load_checkpoint,
    save_checkpoint,
    update_checkpoint_thresholds,
)
from portraitcheck.gating import gate
from portraitcheck.losses import cls_loss
from portraitcheck.metrics import Category
from portraitcheck.model import ModelConfig, build_model
from portraitcheck.training import (
    TrainConfig,
    TrainingDiverged,
    evaluate_checkpoint,
    load_weights,
    save_weights,
    score_records,
    scored_samples,
    train,
    uniform_weights,
)
from portraitcheck.types import ConfigError, DataError, QualityTier, Requirement

SMALL_MODEL = ModelConfig(encoder="tiny", encoder_channels=8, aspp_rates=(2, 4))


@pytest.fixture(scope="module")
def weights_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("w") / "weights.npz"
    save_weights(uniform_weights(), path)
    return str(path)


def _config(weights_file, **kwargs):
    defaults = dict(
        epochs=3,
        seed=5,
        input_size=(32, 32),
        batch_size=8,
        lr_schedule={"kind": "constant", "lr": 1e-3},
        loss_mix_alpha=0.5,
        model=SMALL_MODEL,
        weight_source=weights_file,
    )
    defaults.update(kwargs)
    return TrainConfig(**defaults)


class TestTrainConfig:
    def test_alpha_bounds(self, weights_file):
        with pytest.raises(ConfigError, match="loss_mix_alpha"):
            _config(weights_file, loss_mix_alpha=1.2)

    def test_seed_mandatory_in_file_config(self):
        with pytest.raises(ConfigError, match="seed"):
            TrainConfig.from_dict({"epochs": 3})

    def test_round_trip(self, weights_file):
        config = _config(weights_file, epochs=7)
        again = TrainConfig.from_dict(config.to_dict())
        assert again == config

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown train config"):
            TrainConfig.from_dict({"epochs": 1, "seed": 0, "optimizer": "sgd"})

    def test_step_schedule(self, weights_file):
        config = _config(
            weights_file,
            lr_schedule={"kind": "step", "lr": 1.0, "step_epochs": 2, "gamma": 0.1},
        )
        assert config.lr_at(1) == 1.0
        assert config.lr_at(2) == 1.0
        assert config.lr_at(3) == pytest.approx(0.1)
        assert config.lr_at(5) == pytest.approx(0.01)


class TestWeightsIO:
    def test_round_trip(self, tmp_path):
        ws = uniform_weights()
        path = tmp_path / "w.npz"
        save_weights(ws, path)
        again = load_weights(path)
        assert np.array_equal(again.lambda_r, ws.lambda_r)
        assert again.beta_r.sum() == pytest.approx(26.0)


class TestCheckpoint:
    def test_round_trip_forward_bit_identical(self, tmp_path):
        model = build_model(SMALL_MODEL, seed=9)
        model.eval()
        x = torch.rand(3, 32, 32, generator=torch.Generator().manual_seed(0))
        with torch.no_grad():
            before = model(x)
        save_checkpoint(tmp_path / "ckpt", model, epoch=4)
        loaded = load_checkpoint(tmp_path / "ckpt")
        loaded.model.eval()
        with torch.no_grad():
            after = loaded.model(x)
        assert torch.equal(before.cls_logits, after.cls_logits)
        assert torch.equal(before.seg_logits, after.seg_logits)
        assert loaded.epoch == 4

    def test_schema_version_mismatch(self, tmp_path):
        model = build_model(SMALL_MODEL, seed=1)
        path = save_checkpoint(tmp_path / "ckpt", model)
        manifest_path = os.path.join(path, "manifest.json")
        manifest = json.load(open(manifest_path))
        manifest["schema_version"] = 99
        json.dump(manifest, open(manifest_path, "w"))
        with pytest.raises(DataError, match="schema-version mismatch"):
            load_checkpoint(path)

    def test_tensor_manifest_checked(self, tmp_path):
        model = build_model(SMALL_MODEL, seed=1)
        path = save_checkpoint(tmp_path / "ckpt", model)
        manifest_path = os.path.join(path, "manifest.json")
        manifest = json.load(open(manifest_path))
        manifest["tensors"][0]["shape"] = [1, 1]
        json.dump(manifest, open(manifest_path, "w"))
        with pytest.raises(DataError, match="does not match"):
            load_checkpoint(path)

    def test_optimizer_state_round_trip(self, tmp_path):
        model = build_model(SMALL_MODEL, seed=2)
        optimizer = torch.optim.Adam(model.parameters(), lr=1e-3)
        out = model(torch.rand(1, 3, 32, 32))
        out.cls_logits.sum().backward()
        optimizer.step()
        save_checkpoint(tmp_path / "ckpt", model, optimizer=optimizer)
        loaded = load_checkpoint(tmp_path / "ckpt")
        fresh = torch.optim.Adam(loaded.model.parameters(), lr=1e-3)
        fresh.load_state_dict(loaded.optimizer_state)
        orig_state = optimizer.state_dict()["state"]
        new_state = fresh.state_dict()["state"]
        assert set(orig_state) == set(new_state)
        for pid in orig_state:
            for key, value in orig_state[pid].items():
                if isinstance(value, torch.Tensor):
                    assert torch.equal(value, new_state[pid][key])
                else:
                    assert value == new_state[pid][key]

    def test_thresholds_update(self, tmp_path):
        model = build_model(SMALL_MODEL, seed=3)
        path = save_checkpoint(tmp_path / "ckpt", model)
        thr = np.linspace(0.1, 0.9, 26)
        update_checkpoint_thresholds(path, thr)
        loaded = load_checkpoint(path)
        assert np.allclose(loaded.thresholds, thr)
        assert np.allclose(loaded.model.default_thresholds, thr)

    def test_not_a_checkpoint(self, tmp_path):
        with pytest.raises(DataError, match="manifest.json"):
            load_checkpoint(tmp_path)


class TestTrainLoop:
    def test_missing_masks_error_lists_ids(self, toy_dataset, weights_file, tmp_path):
        config = _config(weights_file, epochs=1)
        with pytest.raises(DataError, match="missing mask sidecars.*base00"):
            train(toy_dataset.records, tmp_path, config, tmp_path / "run")

    def test_loss_decreases_and_log_structure(self, toy_dataset, weights_file, tmp_path):
        config = _config(weights_file, epochs=10, batch_size=20, seed=1)
        result = train(
            toy_dataset.records, toy_dataset.masks_dir, config, tmp_path / "run"
        )
        assert len(result.log) == 10
        assert result.final_total < result.initial_total
        assert {"epoch", "seg_loss", "cls_loss", "total_loss", "lr"} <= set(
            result.log[0]
        )
        log_path = tmp_path / "run" / "train_log.jsonl"
        lines = log_path.read_text().strip().split("\n")
        assert len(lines) == 10

    def test_alpha_one_freezes_classification_head(
        self, toy_dataset, weights_file, tmp_path
    ):
        config = _config(weights_file, epochs=2, loss_mix_alpha=1.0)
        init = build_model(config.model, seed=config.seed)
        result = train(
            toy_dataset.records, toy_dataset.masks_dir, config, tmp_path / "run"
        )
        final = load_checkpoint(result.checkpoint_dir).model
        # cls parameters got exactly zero gradient, so Adam left them alone
        assert torch.equal(init.fc.weight, final.fc.weight)
        assert torch.equal(init.se.fc1.weight, final.se.fc1.weight)
        # the shared encoder kept learning from the segmentation loss
        assert not torch.equal(init.encoder.conv1.weight, final.encoder.conv1.weight)

    def test_alpha_zero_keeps_seg_head_frozen(self, toy_dataset, weights_file, tmp_path):
        # with masks detached from the cls gradient, alpha = 0 leaves the
        # segmentation head untouched
        config = _config(weights_file, epochs=2, loss_mix_alpha=0.0)
        init = build_model(config.model, seed=config.seed)
        result = train(
            toy_dataset.records, toy_dataset.masks_dir, config, tmp_path / "run"
        )
        final = load_checkpoint(result.checkpoint_dir).model
        assert torch.equal(init.seg_head.weight, final.seg_head.weight)
        assert not torch.equal(init.fc.weight, final.fc.weight)

    def test_resume_reproduces_uninterrupted_run(
        self, toy_dataset, weights_file, tmp_path
    ):
        full = train(
            toy_dataset.records,
            toy_dataset.masks_dir,
            _config(weights_file, epochs=6),
            tmp_path / "full",
        )
        first = train(
            toy_dataset.records,
            toy_dataset.masks_dir,
            _config(weights_file, epochs=3),
            tmp_path / "first",
        )
        resumed = train(
            toy_dataset.records,
            toy_dataset.masks_dir,
            _config(weights_file, epochs=6),
            tmp_path / "resumed",
            resume_from=first.checkpoint_dir,
        )
        assert [e["total_loss"] for e in resumed.log] == [
            e["total_loss"] for e in full.log[3:]
        ]
        a = load_checkpoint(full.checkpoint_dir).model
        b = load_checkpoint(resumed.checkpoint_dir).model
        for (name, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert torch.equal(pa, pb), name

    def test_divergence_raises(self, toy_dataset, weights_file, tmp_path, monkeypatch):
        def bad_loss(*args, **kwargs):
            return torch.tensor(float("nan"), requires_grad=True)

        monkeypatch.setattr("portraitcheck.training.seg_loss", bad_loss)
        config = _config(weights_file, epochs=1)
        with pytest.raises(TrainingDiverged, match="non-finite"):
            train(toy_dataset.records, toy_dataset.masks_dir, config, tmp_path / "run")

    def test_derived_weight_source_needs_both_classes(self, toy_dataset, tmp_path):
        config = _config("derived", epochs=1)
        config = dataclasses.replace(config, weight_source="derived")
        with pytest.raises(DataError, match="degenerate class"):
            train(toy_dataset.records, toy_dataset.masks_dir, config, tmp_path / "run")


class TestGenRestriction:
    def test_generated_image_gradients_confined_to_target_rows(self, toy_dataset):
        gen = next(
            r for r in toy_dataset.records if r.quality_tier is QualityTier.GEN
        )
        target = gen.restricted_to[0]
        model = build_model(SMALL_MODEL, seed=0)
        from portraitcheck.degrade import load_image
        from portraitcheck.losses import targets_from_labels

        img = load_image(gen.source_path)
        x = torch.from_numpy(np.transpose(img, (2, 0, 1))[None].astype(np.float32))
        gates = gate(gen.labels, restricted_to=gen.restricted_to)
        out = model(x)
        loss = cls_loss(
            torch.sigmoid(out.cls_logits),
            targets_from_labels(gen.labels)[None, :],
            gates,
            np.ones(26),
            np.ones(26),
        )
        loss.backward()
        grad = model.fc.weight.grad
        target_row = target.value - 1
        for row in range(26):
            if row == target_row:
                assert torch.any(grad[row] != 0.0)
            else:
                assert torch.all(grad[row] == 0.0)

    def test_generated_image_evaluation_samples_confined(self, toy_dataset):
        gen = next(
            r for r in toy_dataset.records if r.quality_tier is QualityTier.GEN
        )
        scores = {gen.image_id: np.full(26, 0.5)}
        samples = scored_samples([gen], scores)
        gated_in = [s.requirement for s in samples if s.gated_in]
        assert gated_in == list(gen.restricted_to)


@pytest.fixture(scope="module")
def trained(toy_dataset, tmp_path_factory):
    # strong overfit fixture: the decisions-match-labels check needs full
    # separation on the toy training set
    out = tmp_path_factory.mktemp("trained")
    weights = out / "w.npz"
    save_weights(uniform_weights(), weights)
    config = _config(
        str(weights),
        epochs=200,
        batch_size=20,
        seed=3,
        input_size=(64, 64),
        model=ModelConfig(encoder="tiny", encoder_channels=32),
        lr_schedule={"kind": "constant", "lr": 3e-3},
    )
    return train(toy_dataset.records, toy_dataset.masks_dir, config, out)


class TestEvaluateCheckpoint:
    def test_deterministic_reports(self, trained, toy_dataset):
        a = evaluate_checkpoint(trained.checkpoint_dir, toy_dataset.records)
        b = evaluate_checkpoint(trained.checkpoint_dir, toy_dataset.records)
        assert a.mean_eer == b.mean_eer
        assert {r: v.eer for r, v in a.per_requirement.items()} == {
            r: v.eer for r, v in b.per_requirement.items()
        }

    def test_thresholds_written_back(self, trained, toy_dataset):
        evaluate_checkpoint(trained.checkpoint_dir, toy_dataset.records)
        loaded = load_checkpoint(trained.checkpoint_dir)
        assert loaded.thresholds is not None
        assert loaded.thresholds.shape == (26,)

    def test_group_sections_skippable_when_data_thin(self, trained, toy_dataset):
        report = evaluate_checkpoint(
            trained.checkpoint_dir,
            toy_dataset.records,
            categories=(Category.GENDER,),
        )
        # toy data may or may not support the section; the call must not fail
        assert report.mean_eer >= 0.0

    def test_score_records_shapes(self, trained, toy_dataset):
        loaded = load_checkpoint(trained.checkpoint_dir)
        size = tuple(loaded.train_config["input_size"])
        scores = score_records(loaded.model, toy_dataset.records, size)
        assert set(scores) == {r.image_id for r in toy_dataset.records}
        for vec in scores.values():
            assert vec.shape == (26,)
            assert np.all((vec >= 0) & (vec <= 1))

    def test_overfit_decisions_match_labels_on_gated_in_entries(
        self, trained, toy_dataset
    ):
        # overfit-sanity oracle: at the EER operating points, training-set
        # decisions agree with the labels wherever the gates are open
        from portraitcheck.degrade import load_image
        from portraitcheck.losses import targets_from_labels
        from portraitcheck.model import predict_compliance
        from portraitcheck.training import _resize
        from portraitcheck.types import Decision

        evaluate_checkpoint(trained.checkpoint_dir, toy_dataset.records)
        loaded = load_checkpoint(trained.checkpoint_dir)
        size = tuple(loaded.train_config["input_size"])
        for record in toy_dataset.records:
            img = _resize(load_image(record.source_path), size)
            x = torch.from_numpy(np.transpose(img, (2, 0, 1)).astype(np.float32))
            decisions, _ = predict_compliance(loaded.model, x)
            gates = gate(record.labels, restricted_to=record.restricted_to)
            truth = targets_from_labels(record.labels)
            for req in Requirement:
                if gates[req] == 0:
                    continue
                expected = (
                    Decision.NON_COMPLIANT
                    if truth[req.value - 1] == 1.0
                    else Decision.COMPLIANT
                )
                assert decisions[req] is expected, (record.image_id, req.short_name)
