"""Ranking AUC and macro-F1 against brute-force oracles, plus the
episode evaluation harness."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fewaspect.data import EmbeddingTable, SyntheticConfig, generate_synthetic
from fewaspect.errors import ConfigError, UndefinedMetricError
from fewaspect.metrics import (
    auc,
    default_tau,
    evaluate_tasks,
    macro_f1,
    sample_eval_tasks,
    score_episode,
)
from fewaspect.model import ModelConfig, forward_episode, init_model_params
from fewaspect.tensor import Tensor

from oracles import auc_pairs_loop, macro_f1_loop


class TestAUC:
    def test_perfect_ranking(self):
        assert auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0

    def test_reversed_ranking(self):
        assert auc([0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0]) == 0.0

    def test_three_point_half(self):
        # one positive between two negatives: 1 win, 1 loss of 2 pairs
        assert auc([0.1, 0.5, 0.9], [0, 1, 0]) == 0.5

    def test_all_tied_is_half(self):
        assert auc([0.4, 0.4, 0.4, 0.4], [1, 0, 1, 0]) == 0.5

    def test_partial_ties(self):
        # pos at 0.7 beats both negs; pos at 0.3 ties one neg, loses none
        got = auc([0.7, 0.3, 0.3, 0.1], [1, 1, 0, 0])
        assert got == (1.0 + 1.0 + 0.5 + 1.0) / 4

    def test_single_class_undefined(self):
        with pytest.raises(UndefinedMetricError):
            auc([0.1, 0.2], [1, 1])
        with pytest.raises(UndefinedMetricError):
            auc([0.1, 0.2], [0, 0])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            auc([0.1, 0.2], [1, 0, 1])

    def test_matches_pair_loop_exactly(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            n = int(rng.integers(2, 30))
            labels = rng.integers(0, 2, n)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            # quantized scores force plenty of ties
            scores = np.round(rng.random(n), 1)
            assert auc(scores, labels) == auc_pairs_loop(scores, labels)

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            n = int(rng.integers(3, 20))
            labels = rng.integers(0, 2, n)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            scores = rng.random(n)
            a1 = auc(scores, labels)
            a2 = auc(3.0 * scores + 2.0, labels)
            a3 = auc(np.exp(scores), labels)
            assert a1 == a2 == a3

    @given(data=st.data())
    @settings(max_examples=150, deadline=None)
    def test_bounded_and_complement(self, data):
        n = data.draw(st.integers(3, 15))
        labels = np.array(data.draw(
            st.lists(st.integers(0, 1), min_size=n, max_size=n)))
        labels[0], labels[1] = 0, 1
        scores = np.array(data.draw(
            st.lists(st.floats(0, 1, allow_nan=False), min_size=n, max_size=n)))
        val = auc(scores, labels)
        assert 0.0 <= val <= 1.0
        # reversing scores reflects the value around 1/2
        assert auc(-scores, labels) == pytest.approx(1.0 - val, abs=1e-12)


class TestMacroF1:
    def test_perfect(self):
        labels = [np.array([1, 0, 0]), np.array([0, 1, 1])]
        predicted = [{0}, {1, 2}]
        assert macro_f1(predicted, labels, 3) == 1.0

    def test_empty_predictions(self):
        labels = [np.array([1, 0]), np.array([0, 1])]
        assert macro_f1([set(), set()], labels, 2) == 0.0

    def test_known_value(self):
        # class 0: tp=1 fp=1 fn=0 -> 2/3; class 1: tp=0 fp=0 fn=1 -> 0
        labels = [np.array([1, 0]), np.array([0, 1])]
        predicted = [{0}, {0}]
        assert macro_f1(predicted, labels, 2) == pytest.approx((2 / 3) / 2)

    def test_absent_class_contributes_zero(self):
        labels = [np.array([1, 0]), np.array([1, 0])]
        predicted = [{0}, {0}]
        assert macro_f1(predicted, labels, 2) == pytest.approx(0.5)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(300):
            n_classes = int(rng.integers(2, 6))
            n_q = int(rng.integers(1, 12))
            labels = [rng.integers(0, 2, n_classes) for _ in range(n_q)]
            predicted = [
                {int(c) for c in np.flatnonzero(rng.random(n_classes) > 0.5)}
                for _ in range(n_q)
            ]
            got = macro_f1(predicted, labels, n_classes)
            want = macro_f1_loop(predicted, labels, n_classes)
            assert got == want

    def test_alignment_checks(self):
        with pytest.raises(ValueError):
            macro_f1([], [], 2)
        with pytest.raises(ValueError):
            macro_f1([{0}], [np.array([1, 0]), np.array([0, 1])], 2)


def test_default_tau():
    assert default_tau(10) == 0.2
    assert default_tau(5) == 0.3
    assert default_tau(7) == 0.3


class TestEvaluateTasks:
    def setup_method(self):
        cfg = SyntheticConfig(num_classes=6, sentences_per_class=16, vocab_size=48,
                              multi_aspect_fraction=0.5)
        self.corpus = generate_synthetic(cfg, 14)
        rng = np.random.default_rng(15)
        emb = EmbeddingTable(self.corpus.vocab,
                             Tensor(rng.normal(0, 0.2, (len(self.corpus.vocab), 6)),
                                    requires_grad=True), 6)
        self.params = init_model_params(
            emb, ModelConfig(embedding_dim=6, hidden_dim=6, window=3, repeat_count=3), rng)
        self.tasks = sample_eval_tasks(self.corpus, self.corpus.classes, 3, 2, 2, 8, rng)

    def test_summary_shape(self):
        summ = evaluate_tasks(self.params, self.tasks, tau=0.3)
        assert summ.episodes_used + summ.episodes_skipped == 8
        assert summ.threshold_mode == "static"
        assert summ.tau == 0.3
        assert len(summ.per_episode_auc) == summ.episodes_used
        assert 0.0 <= summ.mean_auc <= 1.0
        assert 0.0 <= summ.mean_f1 <= 1.0

    def test_deterministic(self):
        s1 = evaluate_tasks(self.params, self.tasks, tau=0.3)
        s2 = evaluate_tasks(self.params, self.tasks, tau=0.3)
        assert s1.per_episode_auc == s2.per_episode_auc
        assert s1.per_episode_f1 == s2.per_episode_f1

    def test_default_tau_applied(self):
        s_default = evaluate_tasks(self.params, self.tasks)
        s_explicit = evaluate_tasks(self.params, self.tasks, tau=0.3)
        assert s_default.per_episode_f1 == s_explicit.per_episode_f1

    def test_tau_extremes(self):
        # tau=0: everything predicted; tau>1: nothing predicted ever
        all_in = evaluate_tasks(self.params, self.tasks, tau=0.0)
        none_in = evaluate_tasks(self.params, self.tasks, tau=1.1)
        for rep_f1 in none_in.per_episode_f1:
            assert rep_f1 == 0.0
        assert all_in.mean_f1 > 0.0

    def test_collect_reports(self):
        summ = evaluate_tasks(self.params, self.tasks, tau=0.3, collect_reports=True)
        assert len(summ.reports) == summ.episodes_used
        rep = summ.reports[0]
        assert len(rep.scores) == len(rep.labels) == len(rep.predicted)
        for s, pred in zip(rep.scores, rep.predicted):
            assert pred == {int(i) for i in np.flatnonzero(s >= 0.3)}

    def test_bad_mode(self):
        with pytest.raises(ConfigError):
            evaluate_tasks(self.params, self.tasks, threshold_mode="fuzzy")

    def test_dynamic_needs_policy(self):
        with pytest.raises(ConfigError):
            evaluate_tasks(self.params, self.tasks, threshold_mode="dynamic")

    def test_ablation_changes_results(self):
        from fewaspect.model import AblationFlags
        full = evaluate_tasks(self.params, self.tasks, tau=0.3)
        ab = evaluate_tasks(self.params, self.tasks, tau=0.3,
                            ablation=AblationFlags(no_query_attention=True))
        assert full.per_episode_auc != ab.per_episode_auc


def test_score_episode_skips_undefined_auc():
    """An episode whose pooled labels are all positive reports auc=None."""
    from fewaspect.model import EpisodeForward

    fwd = EpisodeForward(
        classes=["a", "b"],
        prototypes=Tensor(np.zeros((2, 3))),
        query_reps=[Tensor(np.zeros((2, 3)))],
        distances=[Tensor(np.zeros(2))],
        scores=[Tensor(np.array([0.6, 0.4]))],
        labels=[np.array([1.0, 1.0])],
        temperature=1.0,
    )
    rep = score_episode(fwd, [{0}], "static")
    assert rep.episode_auc is None
    assert rep.episode_f1 > 0.0


def test_evaluate_tasks_warns_and_skips_single_class_episodes():
    """Single-label corpus with every query positive for one class pools fine,
    but a degenerate all-same-label episode must be skipped with a warning."""
    from fewaspect.data import Sentence
    from fewaspect.episode import MetaTask

    rng = np.random.default_rng(16)
    emb = EmbeddingTable({f"t{i}": i for i in range(8)},
                         Tensor(rng.normal(0, 0.2, (8, 4)), requires_grad=True), 4)
    params = init_model_params(
        emb, ModelConfig(embedding_dim=4, hidden_dim=4, window=3, repeat_count=2), rng)
    # both classes label every query -> pooled labels all ones -> AUC undefined
    task = MetaTask(
        ["a", "b"],
        [[Sentence([0], frozenset({"a"}))], [Sentence([1], frozenset({"b"}))]],
        [[0], [1]],
        [Sentence([2], frozenset({"a", "b"}))],
        [2],
        [np.array([1.0, 1.0])],
    )
    with pytest.warns(RuntimeWarning, match="skipped"):
        with pytest.raises(UndefinedMetricError):
            evaluate_tasks(params, [task], tau=0.3)
