import json

import numpy as np
import pytest

from progkit.errors import DataError, FitError
from progkit.svm import (
    SvmConfig,
    f1_scores,
    kkt_violation,
    label_components_by_overlap,
    load_model,
    relabel_segmentation,
    save_model,
    svm_predict,
    svm_train,
)
from progkit.volume import Modality, Volume


def blobs(seed=0, n=50, margin=2.0, d=2):
    """Two well-separated Gaussian clusters, labels 0 and 1."""
    rng = np.random.default_rng(seed)
    a = rng.normal(loc=-margin, scale=0.4, size=(n, d))
    b = rng.normal(loc=+margin, scale=0.4, size=(n, d))
    x = np.vstack([a, b])
    y = np.array([0] * n + [1] * n)
    return x, y


def check_kkt(model, x, y, tol=1e-3):
    """Recompute the violation of every pairwise machine on its subset."""
    for machine in model.machines:
        sel = (y == machine.class_a) | (y == machine.class_b)
        x_std = model.standardize(x[sel])
        y_pm = np.where(y[sel] == machine.class_b, 1.0, -1.0)
        gap = kkt_violation(machine, x_std, y_pm, model.gamma, model.config.C)
        assert gap < tol, f"pair ({machine.class_a},{machine.class_b}) gap {gap}"


class TestTraining:
    def test_symmetric_two_point_problem(self):
        x = np.array([[-1.0], [1.0]])
        y = np.array([0, 1])
        model = svm_train(x, y)
        machine = model.machines[0]
        assert len(machine.dual_coef) == 2  # both points are support vectors
        assert machine.decision(model.standardize([[0.0]]), model.gamma)[0] == pytest.approx(0.0, abs=1e-9)
        assert svm_predict(model, [[-0.5]])[0] == 0
        assert svm_predict(model, [[0.5]])[0] == 1
        assert svm_predict(model, [[0.0]])[0] == 0  # exact tie -> lowest class

    def test_separable_blobs_fit_exactly(self):
        x, y = blobs()
        model = svm_train(x, y)
        assert np.array_equal(svm_predict(model, x), y)
        check_kkt(model, x, y)

    def test_three_classes_make_three_machines(self):
        rng = np.random.default_rng(1)
        x = np.vstack([rng.normal(c, 0.3, size=(20, 2)) for c in (-4.0, 0.0, 4.0)])
        y = np.repeat([1, 2, 3], 20)
        model = svm_train(x, y)
        assert len(model.machines) == 3
        assert {(m.class_a, m.class_b) for m in model.machines} == {(1, 2), (1, 3), (2, 3)}
        assert np.array_equal(svm_predict(model, x), y)
        check_kkt(model, x, y)

    def test_xor_pattern_needs_the_kernel(self):
        rng = np.random.default_rng(2)
        centers = np.array([[1, 1], [-1, -1], [1, -1], [-1, 1]], dtype=np.float64)
        x = np.vstack([rng.normal(c, 0.25, size=(25, 2)) for c in centers])
        y = np.repeat([0, 0, 1, 1], 25)
        model = svm_train(x, y)
        accuracy = float(np.mean(svm_predict(model, x) == y))
        assert accuracy >= 0.95

    def test_gamma_scale_definition(self):
        x, y = blobs(seed=3)
        model = svm_train(x, y)
        x_std = (x - x.mean(axis=0)) / x.std(axis=0)
        assert model.gamma == pytest.approx(1.0 / (x.shape[1] * x_std.var()))

    def test_fixed_gamma_respected(self):
        x, y = blobs(seed=4)
        model = svm_train(x, y, SvmConfig(gamma=0.7))
        assert model.gamma == 0.7

    def test_duplicating_non_support_point_changes_nothing(self):
        x, y = blobs(seed=5)
        model = svm_train(x, y)
        support = set(model.machines[0].support_idx.tolist())
        spare = next(k for k in range(len(x)) if k not in support)
        x2 = np.vstack([x, x[spare]])
        y2 = np.append(y, y[spare])
        model2 = svm_train(x2, y2)
        grid = np.array([[gx, gy] for gx in np.linspace(-3, 3, 7) for gy in np.linspace(-3, 3, 7)])
        assert np.array_equal(svm_predict(model, grid), svm_predict(model2, grid))

    def test_standardization_absorbs_feature_rescaling(self):
        x, y = blobs(seed=6)
        scaled = x.copy()
        scaled[:, 0] = scaled[:, 0] * 1000.0 + 5.0
        model_raw = svm_train(x, y)
        model_scaled = svm_train(scaled, y)
        probe = np.array([[0.3, -0.8], [-1.5, 2.0], [2.2, 0.1]])
        probe_scaled = probe.copy()
        probe_scaled[:, 0] = probe_scaled[:, 0] * 1000.0 + 5.0
        assert np.array_equal(
            svm_predict(model_raw, probe), svm_predict(model_scaled, probe_scaled)
        )

    def test_single_class_rejected(self):
        with pytest.raises(FitError, match="2 classes"):
            svm_train(np.zeros((5, 2)), np.zeros(5, dtype=int))

    def test_non_finite_rejected(self):
        x = np.array([[0.0, np.nan], [1.0, 2.0]])
        with pytest.raises(ValueError, match="finite"):
            svm_train(x, np.array([0, 1]))

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError, match="disagree"):
            svm_train(np.zeros((3, 2)), np.array([0, 1]))

    def test_dimension_mismatch_at_predict(self):
        x, y = blobs(seed=7)
        model = svm_train(x, y)
        with pytest.raises(ValueError, match="dimension"):
            svm_predict(model, np.zeros((2, 5)))

    def test_config_validation(self):
        with pytest.raises(ValueError, match="C"):
            SvmConfig(C=0.0)
        with pytest.raises(ValueError, match="gamma"):
            SvmConfig(gamma="auto")
        with pytest.raises(ValueError, match="gamma"):
            SvmConfig(gamma=-1.0)

    def test_dual_constraint_holds(self):
        x, y = blobs(seed=8)
        model = svm_train(x, y)
        for machine in model.machines:
            assert abs(machine.dual_coef.sum()) < 1e-6  # sum alpha_i y_i = 0
            alphas = np.abs(machine.dual_coef)
            assert np.all(alphas <= model.config.C + 1e-12)


class TestSerialization:
    def test_round_trip(self, tmp_path):
        x, y = blobs(seed=9)
        model = svm_train(x, y)
        path = str(tmp_path / "model.json")
        save_model(model, path)
        back = load_model(path)
        probe = np.random.default_rng(10).normal(size=(40, 2))
        assert np.array_equal(svm_predict(model, probe), svm_predict(back, probe))
        assert back.gamma == model.gamma
        assert back.config == model.config

    def test_unsupported_version_rejected(self, tmp_path):
        x, y = blobs(seed=11)
        path = str(tmp_path / "model.json")
        save_model(svm_train(x, y), path)
        doc = json.loads(open(path).read())
        doc["format_version"] = 99
        open(path, "w").write(json.dumps(doc))
        with pytest.raises(DataError, match="version"):
            load_model(path)


def labelled_volume(data):
    return Volume(
        data=np.asarray(data, dtype=np.float32),
        spacing_mm=(1, 1, 1),
        origin_mm=(0, 0, 0),
        modality=Modality.MASK,
    )


class TestComponentLabelling:
    def fixture(self):
        comp = np.zeros((4, 10, 10))
        truth = np.zeros((4, 10, 10))
        comp[0, 0:2, 0:5] = 1  # 10 voxels, 6 of them truth class 1
        truth[0, 0, 0:6] = 1
        comp[1, 0:2, 0:5] = 2  # 10 voxels, no overlap
        comp[2, 0:2, 0:5] = 3  # 4 voxels class 2, 3 voxels class 1
        truth[2, 0, 0:4] = 2
        truth[2, 1, 0:3] = 1
        return labelled_volume(comp), labelled_volume(truth)

    def test_majority_and_background_gate(self):
        comp, truth = self.fixture()
        assert label_components_by_overlap(comp, truth) == {1: 1, 2: 0, 3: 2}

    def test_overlap_threshold_is_inclusive(self):
        comp = np.zeros((1, 2, 5))
        comp[0] = 1  # 10 voxels
        truth = np.zeros((1, 2, 5))
        truth[0, 0, 0] = 2  # exactly 10% overlap
        assert label_components_by_overlap(labelled_volume(comp), labelled_volume(truth)) == {1: 2}
        truth11 = np.zeros((1, 2, 5))
        comp11 = np.zeros((1, 2, 5))
        comp11[0, 0, :] = 1
        comp11[0, 1, :] = 1
        comp11 = np.concatenate([comp11, np.zeros((1, 2, 5))], axis=0)
        # 1 of 11 voxels (< 10%) -> background
        comp11[1, 0, 0] = 1
        truth11 = np.concatenate([truth11, np.zeros((1, 2, 5))], axis=0)
        truth11[0, 0, 0] = 1
        assert label_components_by_overlap(labelled_volume(comp11), labelled_volume(truth11)) == {1: 0}

    def test_shape_mismatch_rejected(self):
        comp, _ = self.fixture()
        with pytest.raises(ValueError, match="shape"):
            label_components_by_overlap(comp, labelled_volume(np.zeros((1, 1, 1))))


class TestRelabel:
    def test_relabelling_and_erasure(self):
        comp = np.zeros((2, 3, 3))
        comp[0, 0, 0] = 1
        comp[0, 2, 2] = 2
        comp[1, 1, 1] = 3
        out = relabel_segmentation(labelled_volume(comp), {1: 1, 2: 0, 3: 2})
        assert out.data[0, 0, 0] == 1.0
        assert out.data[0, 2, 2] == 0.0  # background prediction erased
        assert out.data[1, 1, 1] == 2.0

    def test_empty_mask_passes_through(self):
        out = relabel_segmentation(labelled_volume(np.zeros((2, 2, 2))), {})
        assert not out.data.any()

    def test_missing_prediction_rejected(self):
        comp = np.zeros((2, 2, 2))
        comp[0, 0, 0] = 1
        comp[1, 1, 1] = 2
        with pytest.raises(ValueError, match=r"component ids \[2\]"):
            relabel_segmentation(labelled_volume(comp), {1: 1})


class TestF1:
    def test_perfect(self):
        scores = f1_scores(np.array([0, 1, 2]), np.array([0, 1, 2]))
        assert scores["macro"] == 1.0
        assert scores["micro"] == 1.0

    def test_all_wrong(self):
        scores = f1_scores(np.array([0, 1]), np.array([1, 0]))
        assert scores["macro"] == 0.0
        assert scores["micro"] == 0.0

    def test_hand_confusion_matrix(self):
        truth = np.array([1, 1, 2, 3])
        pred = np.array([1, 2, 2, 3])
        scores = f1_scores(truth, pred)
        assert scores["micro"] == pytest.approx(0.75)
        assert scores["macro"] == pytest.approx(7.0 / 9.0)
        assert scores["per_class"] == pytest.approx({1: 2 / 3, 2: 2 / 3, 3: 1.0})

    def test_micro_equals_accuracy(self):
        rng = np.random.default_rng(12)
        truth = rng.integers(0, 3, size=200)
        pred = rng.integers(0, 3, size=200)
        scores = f1_scores(truth, pred)
        assert scores["micro"] == pytest.approx(float(np.mean(truth == pred)))

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            f1_scores(np.array([]), np.array([]))

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError, match="disagree"):
            f1_scores(np.array([1]), np.array([1, 2]))
