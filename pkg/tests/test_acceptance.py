"""Acceptance checks.

Each test covers one numbered criterion and prints a single PASS/FAIL line;
run with -s (or read captured output) to see them alongside pytest's own
verdicts. Tolerances are part of the contract and are not to be loosened.
"""

import json
import time
from contextlib import contextmanager

import numpy as np

from classdrift import lp
from classdrift.attacks import (
    AffineClassifier,
    SyntheticOracle,
    targeted_cw,
    targeted_deepfool,
    targeted_pgd,
    AttackBudget,
    distortion,
)
from classdrift.cli import main as cli_main
from classdrift.core import stats_from_records, validate_distribution
from classdrift.evaluation import (
    db_distortion,
    evaluate_records,
    expected_distribution,
    kl_divergence,
    sample_dirichlet_targets,
    spearman,
)
from classdrift.pipeline import PipelineRun, make_oracle_samples, run_batch
from classdrift.rng import stream
from classdrift.synthesis import SynthesisConfig, synthesize
from helpers import (
    fabricated_full_reach_stats,
    random_box_lp,
    records_from_masks,
    vertex_solve,
)


@contextmanager
def criterion(num: int, label: str):
    try:
        yield
    except BaseException:
        print(f"criterion {num:02d} ({label}): FAIL")
        raise
    print(f"criterion {num:02d} ({label}): PASS")


def test_criterion_01_solver_matches_enumeration():
    with criterion(1, "lp solver vs vertex enumeration"):
        t0 = time.perf_counter()
        rng = np.random.default_rng(20260822)
        for case in range(200):
            prog = random_box_lp(rng)
            got = lp.solve(prog)
            want_status, want_obj = vertex_solve(prog)
            assert got.status.value == want_status, f"case {case}: {got.status}"
            if want_status == "optimal":
                assert abs(got.objective_value - want_obj) <= 1e-6, (
                    f"case {case}: {got.objective_value} vs {want_obj}"
                )
        elapsed = time.perf_counter() - t0
        assert elapsed < 10.0, f"took {elapsed:.1f}s"


def test_criterion_02_all_methods_solve_full_reach_k12():
    with criterion(2, "k=12 full reach, 100 targets, all methods"):
        t0 = time.perf_counter()
        k = 12
        stats = fabricated_full_reach_stats(k, 20000)
        p = validate_distribution([1.0 / k] * k)
        targets = sample_dirichlet_targets(k, 100, seed=2024)
        cfg = SynthesisConfig()
        for t_idx, target in enumerate(targets):
            for method in (1, 2, 3, 4):
                res = synthesize(method, p, target, stats, cfg)
                tag = f"target {t_idx} method {method}"
                assert res.status is lp.SolveStatus.OPTIMAL, f"{tag}: {res.status}"
                assert res.aux["check"].max_residual <= 1e-7, tag
                rows = np.asarray(res.matrix.rows)
                assert np.max(np.abs(rows.sum(axis=1) - 1.0)) <= 1e-7, tag
                assert rows.min() >= -1e-7, tag
        elapsed = time.perf_counter() - t0
        assert elapsed < 120.0, f"took {elapsed:.1f}s"


def test_criterion_03_known_optima():
    with criterion(3, "frozen two-class optima"):
        p = validate_distribution([0.5, 0.5])
        res1 = synthesize(1, p, p, None, SynthesisConfig())
        assert res1.status is lp.SolveStatus.OPTIMAL
        np.testing.assert_allclose(
            res1.matrix.rows, [[0.0, 1.0], [1.0, 0.0]], atol=1e-7
        )
        stats = fabricated_full_reach_stats(2, 10)  # normalized reach 0.5 everywhere
        res3 = synthesize(3, p, p, stats, SynthesisConfig())
        assert res3.status is lp.SolveStatus.OPTIMAL
        np.testing.assert_allclose(
            res3.matrix.rows, [[0.0, 1.0], [1.0, 0.0]], atol=1e-6
        )
        assert abs(res3.aux["eta"] - 2.0) <= 1e-6


def test_criterion_04_monte_carlo_matches_expectation():
    with criterion(4, "100k simulation vs analytic expectation"):
        t0 = time.perf_counter()
        oracle = SyntheticOracle(
            [
                {0b001: 0.3, 0b011: 0.4, 0b111: 0.3},
                {0b010: 0.5, 0b110: 0.5},
                {0b111: 1.0},
            ],
            seed=41,
        )
        p = validate_distribution([1 / 3, 1 / 3, 1 / 3])
        target = validate_distribution([0.2, 0.5, 0.3])
        res = synthesize(1, p, target, None, SynthesisConfig())
        assert res.status is lp.SolveStatus.OPTIMAL
        expected = expected_distribution(res.matrix, oracle, p, fallback="stay")
        n = 100_000
        samples = make_oracle_samples(3, n, seed=41)
        run = PipelineRun(matrix=res.matrix, backend=oracle, seed=41, fallback="stay")
        _, summary = run_batch(samples, run)
        gap = np.max(np.abs(np.asarray(summary.p_hat) - expected.values))
        assert gap <= 0.0063, f"gap {gap:.5f}"
        elapsed = time.perf_counter() - t0
        assert elapsed < 60.0, f"took {elapsed:.1f}s"


def test_criterion_05_variant_feasibility_splits():
    with criterion(5, "strict and keep-singleton infeasibility"):
        # two classes, the donor class stuck with itself
        p2 = validate_distribution([0.5, 0.5])
        shifted = validate_distribution([0.9, 0.1])
        recs = records_from_masks([[0b11] * 4, [0b10] * 4], 2)
        stats2 = stats_from_records(recs, 2)
        strict = synthesize(2, p2, shifted, stats2, SynthesisConfig(relax_caps=False))
        relaxed = synthesize(2, p2, shifted, stats2, SynthesisConfig())
        assert strict.status is lp.SolveStatus.INFEASIBLE
        assert relaxed.status is lp.SolveStatus.OPTIMAL

        # three classes with 90 percent singleton mass per row
        p3 = validate_distribution([1 / 3, 1 / 3, 1 / 3])
        t3 = validate_distribution([0.7, 0.2, 0.1])
        masks = [[1 << i] * 9 + [0b111] for i in range(3)]
        stats3 = stats_from_records(records_from_masks(masks, 3), 3)
        kept = synthesize(4, p3, t3, stats3, SynthesisConfig(zero_singleton=False))
        default = synthesize(4, p3, t3, stats3, SynthesisConfig())
        assert kept.status is lp.SolveStatus.INFEASIBLE
        assert default.status is lp.SolveStatus.OPTIMAL


def test_criterion_06_reach_aware_beats_reach_agnostic():
    with criterion(6, "sparse reach: method 3 vs method 1 KL"):
        k = 4
        rng = np.random.default_rng(66)
        masks = []
        for i in range(k):
            row = []
            for _ in range(60):
                mask = 1 << i
                for j in range(k):
                    # each foreign class reachable 30 percent of the time
                    if j != i and rng.random() < 0.3:
                        mask |= 1 << j
                row.append(mask)
            masks.append(row)
        stats = stats_from_records(records_from_masks(masks, k), k)
        p = validate_distribution([1.0 / k] * k)
        diffs = []
        for target in sample_dirichlet_targets(k, 20, seed=7):
            res1 = synthesize(1, p, target, None, SynthesisConfig())
            res3 = synthesize(3, p, target, stats, SynthesisConfig())
            if not (res1.ok and res3.ok):
                continue
            kl1 = kl_divergence(
                target, expected_distribution(res1.matrix, stats, p)
            )[0]
            kl3 = kl_divergence(
                target, expected_distribution(res3.matrix, stats, p)
            )[0]
            diffs.append(kl1 - kl3)
        assert len(diffs) >= 10, f"only {len(diffs)} usable targets"
        diffs = np.asarray(diffs)
        mean = float(diffs.mean())
        se = float(diffs.std(ddof=1) / np.sqrt(len(diffs)))
        # nominal direction is mean > 0; fail only on a reversal beyond 2 SE
        assert mean >= -2.0 * se, f"mean {mean:.4f}, se {se:.4f}"


def test_criterion_07_fooling_rate_bounds():
    with criterion(7, "fooling rate vs its ceiling and reference"):
        k = 3
        p = validate_distribution([1.0 / k] * k)
        target = validate_distribution([0.5, 0.3, 0.2])
        n_per = 15_000
        recs = records_from_masks([[0b111] * n_per] * k, k)
        stats = stats_from_records(recs, k)
        n_total = k * n_per
        for method in (1, 2, 4):
            res = synthesize(method, p, target, stats, SynthesisConfig())
            assert res.ok, f"method {method}: {res.status}"
            report, _ = evaluate_records(
                res.matrix, recs, target,
                lambda i, m=method: stream(7, "acc-eval", m, i),
            )
            max_fr = report.max_fooling_rate
            sigma = np.sqrt(max(max_fr * (1 - max_fr), 0.0) / n_total)
            assert report.fooling_rate <= max_fr + 4 * sigma
            fr_ref = 1.0 - float(np.trace(np.asarray(res.matrix.rows))) / k
            assert abs(report.fooling_rate - fr_ref) <= 0.01, (
                f"method {method}: fr {report.fooling_rate:.4f} vs {fr_ref:.4f}"
            )

        # partial reach: the ceiling must hold for every method
        sparse = [[0b011] * 30 + [0b001] * 30, [0b010] * 45 + [0b110] * 15,
                  [0b111] * 20 + [0b100] * 40]
        sparse_recs = records_from_masks(sparse, k)
        sparse_stats = stats_from_records(sparse_recs, k)
        n_sp = len(sparse_recs)
        for method in (1, 2, 3, 4):
            for t_idx, tgt in enumerate(sample_dirichlet_targets(k, 3, seed=5)):
                res = synthesize(method, p, tgt, sparse_stats, SynthesisConfig())
                if not res.ok:
                    continue
                report, _ = evaluate_records(
                    res.matrix, sparse_recs, tgt,
                    lambda i, m=method, t=t_idx: stream(8, "acc-eval", m, t, i),
                )
                max_fr = report.max_fooling_rate
                sigma = np.sqrt(max(max_fr * (1 - max_fr), 0.0) / n_sp)
                assert report.fooling_rate <= max_fr + 4 * sigma


def test_criterion_08_attack_mechanics():
    with criterion(8, "gradients, iterate feasibility, deepfool value"):
        rng = np.random.default_rng(88)
        for case in range(50):
            d = int(rng.integers(2, 6))
            kc = int(rng.integers(2, 5))
            clf = AffineClassifier(rng.normal(size=(kc, d)), rng.normal(size=kc))
            x = rng.uniform(0.05, 0.95, size=d)
            tgt = int(rng.integers(kc))
            grad = clf.grad_ce(x, tgt)
            fd = np.empty(d)
            for i in range(d):
                e = np.zeros(d)
                e[i] = 1e-6
                hi = -np.log(clf.softmax(x + e)[tgt])
                lo = -np.log(clf.softmax(x - e)[tgt])
                fd[i] = (hi - lo) / 2e-6
            rel = np.linalg.norm(grad - fd) / max(np.linalg.norm(fd), 1e-12)
            assert rel <= 1e-5, f"case {case}: rel {rel:.2e}"

        clf = AffineClassifier(rng.normal(size=(3, 4)), rng.normal(size=3))
        x = rng.uniform(0.2, 0.8, size=4)
        budget = AttackBudget(epsilon=0.3, norm="linf", max_iters=40)
        ex, traj = targeted_pgd(clf, x, 1, budget, step_alpha=0.05,
                                return_trajectory=True)
        for it in traj:
            assert distortion(x, it, "linf") <= 0.3 * (1 + 1e-9) + 1e-12
            assert np.all(it >= -1e-12) and np.all(it <= 1 + 1e-12)

        cw = targeted_cw(clf, x, 2, AttackBudget(norm="l2", max_iters=40),
                         opt_steps=200)
        assert np.all(cw.x_adv >= -1e-9) and np.all(cw.x_adv <= 1 + 1e-9)

        identity = AffineClassifier(np.eye(2), np.zeros(2))
        df = targeted_deepfool(identity, np.array([1.0, 0.0]), 1,
                               AttackBudget(norm="l2"))
        np.testing.assert_allclose(df.x_adv, [0.49, 0.51], atol=1e-12)
        assert df.success


def test_criterion_09_metric_values():
    with criterion(9, "frozen metric values"):
        kl, flagged = kl_divergence([0.5, 0.5], [0.25, 0.75])
        assert abs(kl - 0.14384) <= 1e-5
        assert not flagged
        assert db_distortion([1.0], [0.01]) == -40.0
        assert spearman([0.1, 0.3, 0.6], [0.6, 0.3, 0.1]) == -1.0


def test_criterion_10_experiment_replay(tmp_path):
    with criterion(10, "experiment determinism across jobs"):
        plan = {
            "k": 3,
            "epsilons": [0.1, 0.3],
            "n_targets": 3,
            "n_repeats": 2,
            "methods": [1, 2, 3, 4],
            "folds": 2,
            "samples_per_class": 15,
            "seed": 12,
        }
        plan_path = tmp_path / "plan.json"
        plan_path.write_text(json.dumps(plan))
        outs = [tmp_path / name for name in ("a", "b", "par")]
        for out, jobs in zip(outs, ("1", "1", "4")):
            rc = cli_main(["--output-dir", str(out), "experiment",
                           "--plan", str(plan_path), "--jobs", jobs])
            assert rc == 0
        a, b, par = (out / "results.csv" for out in outs)
        assert a.read_bytes() == b.read_bytes()

        def agg_rows(path):
            lines = path.read_text().strip().splitlines()
            return [ln for ln in lines if ",agg,aggregate," in ln]

        seq_aggs, par_aggs = agg_rows(a), agg_rows(par)
        assert len(seq_aggs) == len(plan["epsilons"]) * len(plan["methods"])
        assert seq_aggs == par_aggs
