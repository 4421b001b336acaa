"""Tests for distill.py: the three loss terms, their sum, and the teacher artifact."""

import math

import numpy as np
import pytest
from _support import leaf

from spiking_par.autograd import Tensor
from spiking_par.distill import (
    AttrWeights,
    DistillConfig,
    FeatureProjection,
    TeacherArtifact,
    feat_kd,
    read_artifact,
    resp_kd,
    total_loss,
    weighted_bce,
    write_artifact,
)
from spiking_par.errors import ConfigError, DataIntegrityError, DimensionError, ValidationError
from spiking_par.gradcheck import finite_diff_check


def _artifact(rng, ids=(10, 11, 12), m=3, d=4):
    return TeacherArtifact(
        ids=np.asarray(ids, dtype=np.int64),
        logits=rng.normal(size=(len(ids), m)).astype(np.float32),
        visual=rng.normal(size=(len(ids), d)).astype(np.float32),
        text=rng.normal(size=(m, d)).astype(np.float32),
    )


class TestAttrWeights:
    def test_exponential_weights(self):
        w = AttrWeights.from_ratios([0.1, 0.5])
        np.testing.assert_allclose(w.omega_pos, [math.exp(0.9), math.exp(0.5)])
        np.testing.assert_allclose(w.omega_neg, [math.exp(0.1), math.exp(0.5)])

    def test_ratio_out_of_range(self):
        with pytest.raises(ValidationError):
            AttrWeights.from_ratios([0.2, 1.5])

    def test_degenerate_ratio_warns(self, caplog):
        AttrWeights.from_ratios([0.0, 0.4])
        assert "no positives or no negatives" in caplog.text


class TestWeightedBce:
    def test_matches_direct_formula(self, rng):
        z = rng.normal(size=(4, 3))
        y = rng.integers(0, 2, size=(4, 3))
        w = AttrWeights.from_ratios([0.2, 0.5, 0.7])
        got = weighted_bce(Tensor(z, dtype=np.float64), y, w).item()
        p = 1.0 / (1.0 + np.exp(-z))
        per = -(y * np.log(p) + (1 - y) * np.log(1 - p)) * w.matrix(y)
        assert got == pytest.approx(per.sum(axis=1).mean())

    def test_extreme_logits_stay_finite(self):
        z = Tensor(np.array([[200.0, -200.0]]), dtype=np.float64)
        loss = weighted_bce(z, np.array([[1, 0]]), AttrWeights.uniform(2)).item()
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_non_binary_labels(self):
        with pytest.raises(ValidationError):
            weighted_bce(Tensor(np.zeros((1, 2))), np.array([[0.5, 1.0]]), AttrWeights.uniform(2))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            weighted_bce(Tensor(np.zeros((2, 2))), np.zeros((2, 3)), AttrWeights.uniform(2))

    def test_gradient(self, rng):
        y = rng.integers(0, 2, size=(3, 4))
        w = AttrWeights.from_ratios([0.1, 0.3, 0.6, 0.9])
        assert finite_diff_check(lambda t: weighted_bce(t, y, w), rng.normal(size=(3, 4))) < 1e-3


class TestRespKd:
    def test_non_negative(self, rng):
        for _ in range(20):
            s = Tensor(rng.normal(size=(5, 4)) * 3, dtype=np.float64)
            t = rng.normal(size=(5, 4)) * 3
            assert resp_kd(s, t, rng.uniform(0.5, 4.0)).item() >= 0.0

    def test_zero_when_equal(self, rng):
        z = rng.normal(size=(3, 4))
        assert resp_kd(Tensor(z, dtype=np.float64), z, 2.0).item() == pytest.approx(0.0, abs=1e-12)

    def test_temperature_scaling(self):
        s = Tensor(np.array([[0.0]]), dtype=np.float64)
        t = np.array([[2.0]])
        tau = 2.0
        q = 1.0 / (1.0 + math.exp(-1.0))
        expected = (q * math.log(q / 0.5) + (1 - q) * math.log((1 - q) / 0.5)) * tau * tau
        assert resp_kd(s, t, tau).item() == pytest.approx(expected)

    def test_certain_teacher_against_undecided_student(self):
        # teacher probability 1, student 0.5: the divergence is ln 2
        s = Tensor(np.array([[0.0]]), dtype=np.float64)
        assert resp_kd(s, np.array([[50.0]]), 1.0).item() == pytest.approx(math.log(2.0), rel=1e-4)

    def test_bad_temperature(self):
        with pytest.raises(ConfigError):
            resp_kd(Tensor(np.zeros((1, 1))), np.zeros((1, 1)), 0.0)

    def test_teacher_gets_no_gradient(self, rng):
        teacher = leaf(rng.normal(size=(2, 3)))
        assert finite_diff_check(lambda s: resp_kd(s, teacher, 2.0), rng.normal(size=(2, 3))) < 1e-3
        assert teacher.grad is None


class TestFeatKd:
    def _setup(self, rng, b=4, d_s=6, d_t=5, m=3):
        proj = FeatureProjection(d_s, d_t, seed=1, dtype=np.float64)
        return proj, rng.normal(size=(b, d_t)), rng.normal(size=(m, d_t)), rng.normal(size=(b, d_s))

    def test_non_negative(self, rng):
        proj, teacher, text, student = self._setup(rng)
        assert feat_kd(Tensor(student, dtype=np.float64), teacher, text, proj).item() >= 0.0

    def test_zero_when_projection_reproduces_teacher(self, rng):
        teacher = rng.normal(size=(4, 3))
        text = rng.normal(size=(2, 3))
        proj = FeatureProjection(3, 3, dtype=np.float64, weight=np.eye(3))
        assert feat_kd(Tensor(teacher, dtype=np.float64), teacher, text, proj).item() == pytest.approx(0.0, abs=1e-12)

    def test_swapped_attribute_similarities(self):
        text = np.eye(2)
        proj = FeatureProjection(2, 2, dtype=np.float64, weight=np.eye(2))
        got = feat_kd(Tensor(np.array([[0.0, 1.0]]), dtype=np.float64), np.array([[1.0, 0.0]]), text, proj).item()
        assert got == pytest.approx((math.e - 1.0) / (math.e + 1.0))

    def test_invariant_to_feature_scale(self, rng):
        proj, teacher, text, student = self._setup(rng)
        a = feat_kd(Tensor(student, dtype=np.float64), teacher, text, proj).item()
        b = feat_kd(Tensor(student, dtype=np.float64), teacher * 7.0, text * 0.1, proj).item()
        assert a == pytest.approx(b)

    def test_zero_norm_row(self, rng):
        proj, teacher, text, student = self._setup(rng)
        teacher[1] = 0.0
        with pytest.raises(ValidationError):
            feat_kd(Tensor(student, dtype=np.float64), teacher, text, proj)

    def test_shape_mismatch(self, rng):
        proj, teacher, text, student = self._setup(rng)
        with pytest.raises(DimensionError):
            feat_kd(Tensor(student, dtype=np.float64), teacher[:, :4], text, proj)

    def test_gradient_wrt_student_and_projection(self, rng):
        proj, teacher, text, student = self._setup(rng)
        err = finite_diff_check(lambda s: feat_kd(s, teacher, text, proj), student)
        assert err < 1e-3
        s = Tensor(student, dtype=np.float64)

        def through_weight(w):
            proj.weight = w
            return feat_kd(s, teacher, text, proj)

        assert finite_diff_check(through_weight, proj.weight.data.copy()) < 1e-3

    def test_projection_weight_shape(self):
        with pytest.raises(DimensionError):
            FeatureProjection(3, 4, weight=np.zeros((3, 4)))


class TestTotalLoss:
    def test_weighted_sum(self):
        assert total_loss(1.0, 2.0, 3.0, DistillConfig(alpha=0.5, beta=2.0)) == pytest.approx(1.0 + 1.0 + 6.0)

    def test_zero_weights_drop_terms(self):
        # a NaN in a dropped term never reaches the total
        assert total_loss(1.5, float("nan"), float("nan"), DistillConfig(alpha=0.0, beta=0.0)) == 1.5

    def test_uses_teacher(self):
        assert DistillConfig().uses_teacher
        assert not DistillConfig(alpha=0.0, beta=0.0).uses_teacher

    @pytest.mark.parametrize("kwargs", [{"alpha": -1.0}, {"temperature": 0.0}, {"feature_temperature": -2.0}])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            DistillConfig(**kwargs)


class TestTeacherArtifact:
    def test_round_trip(self, tmp_path, rng):
        art = _artifact(rng)
        write_artifact(tmp_path / "t.snta", art)
        back = read_artifact(tmp_path / "t.snta")
        np.testing.assert_array_equal(back.ids, art.ids)
        np.testing.assert_array_equal(back.logits, art.logits)
        np.testing.assert_array_equal(back.visual, art.visual)
        np.testing.assert_array_equal(back.text, art.text)

    def test_lookup_follows_requested_order(self, rng):
        art = _artifact(rng)
        logits, visual = art.lookup([12, 10])
        np.testing.assert_array_equal(logits, art.logits[[2, 0]])
        np.testing.assert_array_equal(visual, art.visual[[2, 0]])

    def test_lookup_missing_id(self, rng):
        art = _artifact(rng)
        assert art.missing_ids([10, 99]) == [99]
        with pytest.raises(ValidationError, match="99"):
            art.lookup([10, 99])

    def test_duplicate_ids(self, rng):
        with pytest.raises(DataIntegrityError):
            _artifact(rng, ids=(1, 1, 2))

    def test_inconsistent_shapes(self, rng):
        art = _artifact(rng)
        with pytest.raises(DataIntegrityError):
            TeacherArtifact(art.ids, art.logits, art.visual, art.text[:, :2])

    def test_truncated_file(self, tmp_path, rng):
        write_artifact(tmp_path / "t.snta", _artifact(rng))
        blob = (tmp_path / "t.snta").read_bytes()
        (tmp_path / "t.snta").write_bytes(blob[:-5])
        with pytest.raises(DataIntegrityError):
            read_artifact(tmp_path / "t.snta")

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataIntegrityError):
            read_artifact(tmp_path / "none.snta")
