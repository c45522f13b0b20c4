import json

import numpy as np
import pytest

from classdrift.attacks import AffineClassifier, AttackBudget, SyntheticOracle
from classdrift.core import ReachableSet, TransitionMatrix
from classdrift.evaluation import expected_distribution
from classdrift.pipeline import (
    AttackOutcome,
    ClassifierBackend,
    OracleBackend,
    PipelineRun,
    Sample,
    attack_one,
    make_classifier_samples,
    make_oracle_samples,
    outcomes_to_jsonl,
    renormalize_row,
    run_batch,
)

SWAP2 = TransitionMatrix([[0.0, 1.0], [1.0, 0.0]])
IDENTITY3 = TransitionMatrix(np.eye(3))


class TestRenormalizeRow:
    def test_masks_and_rescales(self):
        row = np.array([0.2, 0.3, 0.5])
        reach = ReachableSet.from_classes([2], source=0, k=3)
        out = renormalize_row(row, reach)
        np.testing.assert_allclose(out, [2 / 7, 0.0, 5 / 7])

    def test_zero_mass_stay(self):
        row = np.array([0.0, 1.0, 0.0])
        reach = ReachableSet.from_classes([2], source=0, k=3)
        out = renormalize_row(row, reach, fallback="stay")
        np.testing.assert_array_equal(out, [1.0, 0.0, 0.0])

    def test_zero_mass_uniform(self):
        row = np.array([0.0, 1.0, 0.0])
        reach = ReachableSet.from_classes([2], source=0, k=3)
        out = renormalize_row(row, reach, fallback="uniform")
        np.testing.assert_allclose(out, [0.5, 0.0, 0.5])

    def test_full_reach_row_unchanged(self):
        row = np.array([0.25, 0.25, 0.5])
        reach = ReachableSet.from_classes([0, 1, 2], source=1, k=3)
        np.testing.assert_allclose(renormalize_row(row, reach), row)


class TestAttackOne:
    def test_identity_matrix_never_moves(self):
        oracle = SyntheticOracle.full_reach(3)
        run = PipelineRun(matrix=IDENTITY3, backend=oracle, seed=5)
        out = attack_one(Sample(id=0, true_class=2), run)
        assert out.target == 2
        assert out.predicted == 2
        assert not out.fooled
        assert out.distortion is None  # oracle backend reports no geometry

    def test_swap_matrix_always_moves(self):
        oracle = SyntheticOracle.full_reach(2)
        run = PipelineRun(matrix=SWAP2, backend=oracle, seed=5)
        for sid in range(6):
            out = attack_one(Sample(id=sid, true_class=0), run)
            assert out.target == 1
            assert out.predicted == 1
            assert out.fooled

    def test_restricted_reach_falls_back(self):
        # oracle only ever offers the singleton; swap row has no mass there
        oracle = SyntheticOracle([[(0b01, 1.0)], [(0b10, 1.0)]])
        run = PipelineRun(matrix=SWAP2, backend=oracle, seed=5, fallback="stay")
        out = attack_one(Sample(id=3, true_class=0), run)
        assert out.reachable.mask == 0b01
        assert out.target == 0
        assert not out.fooled

    def test_deterministic_per_seed_and_id(self):
        oracle = SyntheticOracle(
            [[(0b01, 0.4), (0b11, 0.6)], [(0b10, 0.5), (0b11, 0.5)]]
        )
        matrix = TransitionMatrix([[0.3, 0.7], [0.6, 0.4]])
        run = PipelineRun(matrix=matrix, backend=oracle, seed=42)
        a = [attack_one(Sample(id=i, true_class=i % 2), run).to_obj() for i in range(20)]
        b = [attack_one(Sample(id=i, true_class=i % 2), run).to_obj() for i in range(20)]
        assert a == b
        run2 = PipelineRun(matrix=matrix, backend=oracle, seed=43)
        c = [attack_one(Sample(id=i, true_class=i % 2), run2).to_obj() for i in range(20)]
        assert a != c

    def test_k_mismatch_rejected(self):
        with pytest.raises(ValueError):
            PipelineRun(matrix=IDENTITY3, backend=SyntheticOracle.full_reach(2))

    def test_unknown_fallback_rejected(self):
        with pytest.raises(ValueError):
            PipelineRun(
                matrix=SWAP2, backend=SyntheticOracle.full_reach(2), fallback="drop"
            )


class TestClassifierBackend:
    def setup_method(self):
        self.clf = AffineClassifier(np.eye(2), np.zeros(2))

    def test_mislabeled_sample_rejected(self):
        backend = ClassifierBackend(self.clf, "fgsm", AttackBudget(0.3, "linf"))
        run = PipelineRun(matrix=SWAP2, backend=backend)
        bad = Sample(id=0, true_class=1, x=np.array([0.9, 0.1]))
        with pytest.raises(ValueError):
            attack_one(bad, run)

    def test_successful_attack_records_distortion(self):
        backend = ClassifierBackend(self.clf, "fgsm", AttackBudget(0.2, "linf"))
        run = PipelineRun(matrix=SWAP2, backend=backend, seed=1)
        out = attack_one(Sample(id=0, true_class=0, x=np.array([0.6, 0.4])), run)
        assert out.fooled
        assert out.predicted == 1
        # fgsm spends the whole budget on every live coordinate
        assert out.distortion == pytest.approx(0.2, abs=1e-9)

    def test_tight_budget_stays_put(self):
        backend = ClassifierBackend(self.clf, "fgsm", AttackBudget(0.01, "linf"))
        run = PipelineRun(matrix=SWAP2, backend=backend, seed=1)
        out = attack_one(Sample(id=0, true_class=0, x=np.array([0.9, 0.1])), run)
        assert out.reachable.classes == (0,)
        assert out.target == 0
        assert not out.fooled
        assert out.distortion == 0.0


class TestBatch:
    def test_empty_batch_rejected(self):
        run = PipelineRun(matrix=SWAP2, backend=SyntheticOracle.full_reach(2))
        with pytest.raises(ValueError):
            run_batch([], run)

    def test_summary_accounting(self):
        oracle = SyntheticOracle.full_reach(2)
        run = PipelineRun(matrix=SWAP2, backend=oracle, seed=0)
        samples = [Sample(id=i, true_class=0) for i in range(10)]
        outcomes, summary = run_batch(samples, run)
        assert summary.n == 10
        assert summary.fooling_rate == 1.0
        np.testing.assert_allclose(summary.p_hat, [0.0, 1.0])
        obj = summary.to_obj()
        assert set(obj) == {"n", "p_hat", "fooling_rate"}

    def test_jsonl_shape(self):
        oracle = SyntheticOracle.full_reach(2)
        run = PipelineRun(matrix=SWAP2, backend=oracle, seed=0)
        outcomes, _ = run_batch([Sample(id=0, true_class=1)], run)
        line = outcomes_to_jsonl(outcomes).splitlines()[0]
        obj = json.loads(line)
        assert list(obj) == [
            "id", "true_class", "reachable", "target", "predicted", "fooled", "distortion",
        ]
        back = AttackOutcome.from_obj(obj, k=2)
        assert back.to_obj() == obj

    def test_monte_carlo_tracks_expected_distribution(self):
        oracle = SyntheticOracle(
            [[(0b01, 0.3), (0b11, 0.7)], [(0b11, 1.0)]], seed=0
        )
        matrix = TransitionMatrix([[0.2, 0.8], [0.7, 0.3]])
        run = PipelineRun(matrix=matrix, backend=oracle, seed=77)
        n = 10000
        samples = [Sample(id=i, true_class=i % 2) for i in range(n)]
        _, summary = run_batch(samples, run)
        expected = expected_distribution(matrix, oracle, [0.5, 0.5], fallback="stay")
        gap = float(np.max(np.abs(summary.p_hat - np.asarray(expected.values))))
        assert gap < 4 * np.sqrt(0.25 / n) * 2  # generous band for two classes


class TestSampleMakers:
    def test_oracle_samples_cover_classes(self):
        samples = make_oracle_samples(k=3, n=60, seed=9)
        assert len(samples) == 60
        classes = {s.true_class for s in samples}
        assert classes <= {0, 1, 2} and len(classes) == 3
        again = make_oracle_samples(k=3, n=60, seed=9)
        assert [s.true_class for s in again] == [s.true_class for s in samples]

    def test_classifier_samples_are_self_labeled(self):
        rng = np.random.default_rng(4)
        clf = AffineClassifier(rng.normal(size=(3, 5)), rng.normal(size=3))
        samples = make_classifier_samples(clf, n=25, seed=2)
        assert len(samples) == 25
        for s in samples:
            assert clf.predict(s.x) == s.true_class
            assert np.all(s.x >= 0.0) and np.all(s.x <= 1.0)
