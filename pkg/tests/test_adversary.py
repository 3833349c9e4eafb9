"""Probes, Bayes oracles and the attack protocol."""

import math

import numpy as np
import pytest

from erasure_lab import adversary
from erasure_lab.fixtures import default_benchmark
from erasure_lab.mixture import MixtureSpec, sample_mixture


def gauss_1d(mu_list, concept):
    k = len(mu_list)
    return MixtureSpec(
        means=np.array([[m] for m in mu_list]),
        covs=np.ones((k, 1, 1)),
        weights=np.full(k, 1.0 / k),
        concepts={"c": concept},
    )


class TestTrainProbe:
    def test_chance_level_on_identical_distributions(self, rng):
        pos = rng.standard_normal((4000, 2))
        neg = rng.standard_normal((4000, 2))
        _, acc = adversary.train_probe(pos, neg, rng=rng, steps=800)
        assert 0.45 <= acc <= 0.55

    def test_separable_clusters(self, rng):
        pos = rng.standard_normal((2000, 2)) + [4, 0]
        neg = rng.standard_normal((2000, 2)) - [4, 0]
        _, acc = adversary.train_probe(pos, neg, rng=rng, steps=800)
        assert acc >= 0.98

    def test_same_seed_identical_probe(self):
        r1 = np.random.Generator(np.random.PCG64(3))
        r2 = np.random.Generator(np.random.PCG64(3))
        pos = np.random.Generator(np.random.PCG64(1)).standard_normal((500, 2))
        neg = np.random.Generator(np.random.PCG64(2)).standard_normal((500, 2))
        n1, a1 = adversary.train_probe(pos, neg, rng=r1, steps=100)
        n2, a2 = adversary.train_probe(pos, neg, rng=r2, steps=100)
        assert np.array_equal(n1.params, n2.params) and a1 == a2

    def test_imbalance_rejected(self, rng):
        pos = rng.standard_normal((100, 2))
        neg = rng.standard_normal((900, 2))
        with pytest.raises(adversary.ProbeError):
            adversary.train_probe(pos, neg, rng=rng)


class TestBayesError:
    def test_identical_distributions_half(self):
        mix = gauss_1d([0.0, 0.0], concept=[1])
        assert adversary.bayes_error(mix, "c") == pytest.approx(0.5, abs=1e-6)

    def test_closed_form_two_gaussians(self):
        # unit-variance at 0 and 2, equal priors: e* = Phi(-1)
        mix = gauss_1d([0.0, 2.0], concept=[1])
        expect = 0.5 * (1.0 + math.erf(-1.0 / math.sqrt(2.0)))
        assert adversary.bayes_error(mix, "c") == pytest.approx(expect, abs=1e-6)
        assert expect == pytest.approx(0.1587, abs=1e-4)

    def test_separated_below_1e4(self):
        mix = gauss_1d([0.0, 16.0], concept=[1])
        assert adversary.bayes_error(mix, "c") < 1e-4

    def test_default_benchmark_value(self):
        # boundary at x = 0, three sigma from each mean
        mix = default_benchmark()
        expect = 0.5 * (1.0 + math.erf(-3.0 / math.sqrt(2.0)))
        assert adversary.bayes_error(mix, "right") == pytest.approx(expect, rel=1e-3)

    def test_rejects_high_dimension(self):
        mix = MixtureSpec(means=np.zeros((1, 4)), covs=np.eye(4)[None],
                          weights=np.array([1.0]), concepts={"c": [0]})
        with pytest.raises(ValueError):
            adversary.bayes_error(mix, "c")


class TestWilson:
    def test_contains_half_at_chance(self):
        lo, hi = adversary.wilson_interval(100, 200)
        assert lo <= 0.5 <= hi

    def test_excludes_half_when_strong(self):
        lo, hi = adversary.wilson_interval(190, 200)
        assert lo > 0.5

    def test_degenerate(self):
        assert adversary.wilson_interval(0, 0) == (0.0, 1.0)


class TestAttackProtocol:
    def test_query_flag_patterns(self):
        f = adversary._query_flags("repeat-query", 5, 2, target=1)
        assert np.array_equal(f, [0.0, 1.0])
        f0 = adversary._query_flags("condition-sweep", 0, 2, target=0)
        f1 = adversary._query_flags("condition-sweep", 1, 2, target=0)
        assert f0[0] == 0.0 and f1[0] == 1.0
        combos = {tuple(adversary._query_flags("composite-flags", i, 2, 0))
                  for i in range(4)}
        assert len(combos) == 4

    def test_unknown_strategy_rejected(self, base_model, rng):
        with pytest.raises(ValueError):
            adversary.adaptive_attack(base_model, 0, 1, "mind-reading", rng)

    def test_q0_success_exactly_half(self, base_model, rng):
        tr = adversary.adaptive_attack(base_model, 0, 0, "repeat-query", rng,
                                       trials=40, trial_batch=16)
        assert tr.success == 0.5
        assert tr.ci_lo <= 0.5 <= tr.ci_hi

    def test_base_model_highly_attackable(self, base_model, rng):
        tr = adversary.adaptive_attack(base_model, 0, 4, "condition-sweep", rng,
                                       trials=60, trial_batch=32)
        assert tr.success > 0.9
        assert tr.q == 4 and len(tr.queries) == 4

    def test_transcript_summary_schema(self, base_model, rng):
        tr = adversary.adaptive_attack(base_model, 0, 2, "composite-flags", rng,
                                       trials=20, trial_batch=16)
        s = tr.summary()
        assert set(s) == {"strategy", "q", "trials", "success", "ci_lo",
                          "ci_hi", "queries"}
        assert len(s["queries"]) == 2


class TestCompositeConditionTest:
    def test_insufficient_samples_rejected(self, base_model, rng):
        with pytest.raises(ValueError):
            adversary.composite_condition_test(base_model, 0, 0, 100, rng)


class TestGapSweep:
    def test_sweep_shapes_and_fit(self):
        mix = gauss_1d([0.0, 2.0], concept=[1])
        rng = np.random.Generator(np.random.PCG64(5))
        res = adversary.generalization_gap_sweep(
            mix, "c", [200, 800, 3200], rng, eval_n=4000, probe_steps=400,
            hidden=(16,))
        assert len(res.gaps) == 3
        assert res.fit_c > 0
        assert res.fit_residual >= 0
        assert len(res.smoothed_gaps()) == 3
        # Bayes optimality as a ceiling: no probe beats e* beyond noise
        assert all(err >= res.bayes - 0.01 for err in res.errors)

    def test_smoothed_gaps_window(self):
        res = adversary.GapSweepResult(
            n_values=[1, 2, 3], errors=[0, 0, 0], gaps=[0.4, 0.2, 0.3],
            bayes=0.0, fit_c=1.0, fit_residual=0.0)
        assert res.smoothed_gaps() == [0.4, pytest.approx(0.3), pytest.approx(0.25)]
