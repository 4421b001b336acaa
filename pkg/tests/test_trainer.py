"""Tests for trainer.py: training runs, checkpoints, resume, evaluation, ablation."""

import dataclasses
import json
from pathlib import Path

import numpy as np
import pytest
from _support import slow

from spiking_par.config import apply_overrides, load_config
from spiking_par.data import SyntheticSpec, available_splits, generate_synthetic, load_split
from spiking_par.distill import DistillConfig, TeacherArtifact, write_artifact
from spiking_par.errors import ConfigError, DataIntegrityError, ValidationError
from spiking_par.metrics import evaluate_predictions
from spiking_par.mock_teacher import TeacherOptions, train_mock_teacher
from spiking_par.spikingformer import Spikingformer
from spiking_par.trainer import (
    CHECKPOINT_NAME,
    METRICS_LOG,
    RESOLVED_CONFIG,
    ablation_rows,
    evaluate,
    load_checkpoint,
    run_ablation,
    sidecar_path,
    train,
)

TEACHER_DIM = 6


def _fake_teacher(dataset, path, *, drop=0, num_attributes=8, seed=0):
    """A random teacher artifact over every sample id in *dataset*."""
    rng = np.random.default_rng(seed)
    ids = np.concatenate([load_split(dataset, s).ids for s in available_splits(dataset)])[drop:]
    write_artifact(
        path,
        TeacherArtifact(
            ids=ids,
            logits=rng.normal(size=(len(ids), num_attributes)).astype(np.float32),
            visual=rng.normal(size=(len(ids), TEACHER_DIM)).astype(np.float32),
            text=rng.normal(size=(num_attributes, TEACHER_DIM)).astype(np.float32),
        ),
    )
    return path


def _model_tensors(checkpoint_path):
    return load_checkpoint(checkpoint_path).group("model")


class TestTrain:
    def test_run_directory_layout(self, tiny_run_config, tiny_dataset):
        result = train(tiny_run_config, tiny_dataset)
        out = tiny_run_config.out
        assert result.checkpoint == out / CHECKPOINT_NAME
        for name in (CHECKPOINT_NAME, "checkpoint.json", METRICS_LOG, RESOLVED_CONFIG, "report.txt", "report.json"):
            assert (out / name).is_file(), name
        lines = (out / METRICS_LOG).read_text().splitlines()
        assert [json.loads(line)["epoch"] for line in lines] == [0, 1]
        assert len(result.history) == 2
        assert set(result.history[0]["val"]) == {"mA", "Acc", "Prec", "Recall", "F1"}
        assert result.final_report is not None
        assert result.final_report.samples == 12

    def test_no_teacher_trains_on_bce_only(self, tiny_run_config, tiny_dataset):
        history = train(tiny_run_config, tiny_dataset).history
        for record in history:
            assert record["resp_kd"] == 0.0
            assert record["feat_kd"] == 0.0
            assert record["total"] == pytest.approx(record["ce"])

    def test_warmup_learning_rate_is_recorded(self, tiny_run_config, tiny_dataset):
        history = train(tiny_run_config, tiny_dataset).history
        # one warm-up epoch of three steps ends on the base rate
        assert history[0]["lr"] == pytest.approx(2e-3)
        assert history[1]["lr"] == pytest.approx(2e-3)

    def test_parameters_move(self, tiny_run_config, tiny_dataset):
        result = train(tiny_run_config, tiny_dataset)
        initial = Spikingformer(tiny_run_config.model, seed=tiny_run_config.seed).parameters()
        trained = _model_tensors(result.checkpoint)
        assert not np.array_equal(trained["head.weight"], initial["head.weight"].data)

    def test_with_teacher_all_terms_are_active(self, tiny_run_config, tiny_dataset, tmp_path):
        teacher = _fake_teacher(tiny_dataset, tmp_path / "t.snta")
        result = train(tiny_run_config, tiny_dataset, teacher_path=teacher)
        record = result.history[-1]
        assert record["resp_kd"] > 0.0
        assert record["feat_kd"] > 0.0
        assert record["total"] == pytest.approx(record["ce"] + record["resp_kd"] + record["feat_kd"], rel=1e-5)
        ckpt = load_checkpoint(result.checkpoint)
        assert ckpt.tensors["projection.weight"].shape == (TEACHER_DIM, tiny_run_config.model.embed_dim)
        assert ckpt.config.teacher == teacher

    def test_zero_weights_match_a_run_without_teacher(self, tiny_run_config, tiny_dataset, tmp_path):
        teacher = _fake_teacher(tiny_dataset, tmp_path / "t.snta")
        plain = train(tiny_run_config, tiny_dataset)
        muted_cfg = dataclasses.replace(
            tiny_run_config, distill=DistillConfig(alpha=0.0, beta=0.0), out=tmp_path / "muted"
        )
        muted = train(muted_cfg, tiny_dataset, teacher_path=teacher)
        a, b = _model_tensors(plain.checkpoint), _model_tensors(muted.checkpoint)
        for name in a:
            np.testing.assert_array_equal(a[name], b[name])

    def test_teacher_missing_ids(self, tiny_run_config, tiny_dataset, tmp_path):
        teacher = _fake_teacher(tiny_dataset, tmp_path / "t.snta", drop=3)
        with pytest.raises(ValidationError, match="lacks 3"):
            train(tiny_run_config, tiny_dataset, teacher_path=teacher)

    def test_teacher_attribute_count(self, tiny_run_config, tiny_dataset, tmp_path):
        teacher = _fake_teacher(tiny_dataset, tmp_path / "t.snta", num_attributes=5)
        with pytest.raises(ValidationError):
            train(tiny_run_config, tiny_dataset, teacher_path=teacher)

    def test_model_must_match_dataset(self, tiny_run_config, tiny_dataset):
        cfg = dataclasses.replace(tiny_run_config, model=dataclasses.replace(tiny_run_config.model, num_attributes=5))
        with pytest.raises(ConfigError, match="num_attributes"):
            train(cfg, tiny_dataset)
        cfg = dataclasses.replace(tiny_run_config, model=dataclasses.replace(tiny_run_config.model, image_width=32))
        with pytest.raises(ConfigError, match="images"):
            train(cfg, tiny_dataset)

    def test_missing_train_split(self, tiny_run_config, tmp_path):
        with pytest.raises(DataIntegrityError):
            train(tiny_run_config, tmp_path / "empty")


class TestCheckpoint:
    def test_round_trip_reproduces_the_test_report(self, tiny_run_config, tiny_dataset):
        result = train(tiny_run_config, tiny_dataset)
        ckpt = load_checkpoint(result.checkpoint)
        assert ckpt.epoch == 1
        assert ckpt.attributes == load_split(tiny_dataset, "train").attributes
        assert ckpt.config == tiny_run_config
        assert ckpt.history == result.history
        report = evaluate(ckpt.build_model(), load_split(tiny_dataset, "test")).report
        assert report == result.final_report

    def test_resume_matches_an_uninterrupted_run(self, tiny_run_config, tiny_dataset, tmp_path):
        full_cfg = dataclasses.replace(tiny_run_config, epochs=3, out=tmp_path / "full")
        full = train(full_cfg, tiny_dataset)

        first = train(dataclasses.replace(full_cfg, epochs=2, out=tmp_path / "part"), tiny_dataset)
        resumed = train(dataclasses.replace(full_cfg, out=tmp_path / "resumed"), tiny_dataset, resume=first.checkpoint)

        assert [r["epoch"] for r in resumed.history] == [0, 1, 2]
        assert resumed.history == full.history
        a, b = load_checkpoint(full.checkpoint).tensors, load_checkpoint(resumed.checkpoint).tensors
        assert a.keys() == b.keys()
        for name in a:
            np.testing.assert_array_equal(a[name], b[name], err_msg=name)

    def test_missing_sidecar(self, tiny_run_config, tiny_dataset):
        result = train(tiny_run_config, tiny_dataset)
        sidecar_path(result.checkpoint).unlink()
        with pytest.raises(DataIntegrityError, match="sidecar"):
            load_checkpoint(result.checkpoint)

    def test_corrupt_sidecar(self, tiny_run_config, tiny_dataset):
        result = train(tiny_run_config, tiny_dataset)
        sidecar_path(result.checkpoint).write_text("{not json")
        with pytest.raises(DataIntegrityError, match="invalid JSON"):
            load_checkpoint(result.checkpoint)


class TestEvaluate:
    def test_matches_scoring_the_dumped_predictions(self, tiny_model_config, tiny_dataset):
        split = load_split(tiny_dataset, "test")
        result = evaluate(Spikingformer(tiny_model_config), split, batch_size=5)
        assert result.predictions.shape == (12, 8)
        assert result.logits.shape == (12, 8)
        assert result.report == evaluate_predictions(result.predictions, split.labels, attributes=split.attributes)

    def test_threshold_changes_predictions(self, tiny_model_config, tiny_dataset):
        model = Spikingformer(tiny_model_config)
        split = load_split(tiny_dataset, "test")
        low = evaluate(model, split, threshold=0.01).predictions
        high = evaluate(model, split, threshold=0.99).predictions
        assert low.sum() >= high.sum()


class TestAblation:
    def test_rows(self):
        names = [r[0] for r in ablation_rows(DistillConfig(alpha=0.5, beta=2.0))]
        assert names == ["ce", "ce+featkd", "ce+respkd", "ce+respkd+featkd"]
        assert ablation_rows(DistillConfig(alpha=0.5, beta=2.0))[-1] == ("ce+respkd+featkd", 0.5, 2.0)
        # a zeroed weight still gets its own row at 1.0
        assert ablation_rows(DistillConfig(alpha=0.0, beta=0.0))[1] == ("ce+featkd", 0.0, 1.0)

    def test_needs_a_teacher(self, tiny_run_config, tiny_dataset):
        with pytest.raises(ConfigError):
            run_ablation(tiny_run_config, tiny_dataset, seeds=1)

    def test_writes_table(self, tiny_run_config, tiny_dataset, tmp_path):
        teacher = _fake_teacher(tiny_dataset, tmp_path / "t.snta")
        cfg = apply_overrides(tiny_run_config, {"teacher": teacher, "epochs": 2})
        rows = run_ablation(cfg, tiny_dataset, seeds=1)
        assert [r.name for r in rows] == ["ce", "ce+featkd", "ce+respkd", "ce+respkd+featkd"]
        payload = json.loads((cfg.out / "ablation.json").read_text())
        assert [p["name"] for p in payload] == [r.name for r in rows]
        assert (cfg.out / "ce+respkd" / "seed0" / CHECKPOINT_NAME).is_file()
        text = (cfg.out / "ablation.txt").read_text().splitlines()
        assert text[0].split() == ["row", "mA", "F1"]
        assert len(text) == 5


@slow
class TestDeskScale:
    """Acceptance runs on the 64x32 synthetic set; minutes of CPU each."""

    @pytest.fixture
    def desk_dataset(self, tmp_path):
        root = tmp_path / "desk"
        generate_synthetic(SyntheticSpec(seed=0, train=2000, test=500), root)
        return root

    def test_student_learns_the_attributes(self, desk_dataset, tmp_path):
        cfg = load_config(Path(__file__).resolve().parent.parent / "configs" / "desk.conf")
        cfg = dataclasses.replace(cfg, out=tmp_path / "run")
        report = train(cfg, desk_dataset).final_report
        assert report.mA >= 0.95
        assert report.F1 >= 0.90

    def test_full_distillation_does_not_hurt_f1(self, desk_dataset, tmp_path):
        teacher = train_mock_teacher(desk_dataset, tmp_path / "teacher.snta", TeacherOptions())
        assert teacher.test_mA >= 0.99
        cfg = load_config(Path(__file__).resolve().parent.parent / "configs" / "desk.conf")
        cfg = apply_overrides(cfg, {"teacher": teacher.path, "out": tmp_path / "ablation"})
        rows = {r.name: r for r in run_ablation(cfg, desk_dataset, seeds=3)}
        assert rows["ce+respkd+featkd"].mean_F1 >= rows["ce"].mean_F1
