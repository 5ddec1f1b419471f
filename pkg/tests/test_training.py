"""Loss functions, the Adam optimizer, and the stage-1 training loop."""

import numpy as np
import pytest

from fewaspect import tensor as T
from fewaspect.data import (
    EmbeddingTable,
    SyntheticConfig,
    generate_synthetic,
    split_classes,
)
from fewaspect.errors import ConfigError, NumericError, ValidationError
from fewaspect.model import forward_episode, init_model_params, params_from_arrays
from fewaspect.tensor import Tensor
from fewaspect.training import (
    AdamState,
    TrainConfig,
    adam_step,
    checkpoint_config,
    episode_loss,
    mse_loss,
    train_main,
)

from oracles import adam_scalar_loop, fd_grad, mse_loop, rel_err


class TestMseLoss:
    def test_single_positive(self):
        y_hat = Tensor(np.array([0.6, 0.3, 0.1]))
        got = float(mse_loss(y_hat, np.array([1.0, 0.0, 0.0])).data)
        want = (0.6 - 1.0) ** 2 + 0.3 ** 2 + 0.1 ** 2
        assert got == pytest.approx(want, abs=1e-15)

    def test_two_positives_normalized(self):
        # two positives: target is (1/2, 1/2, 0)
        y_hat = Tensor(np.array([0.5, 0.25, 0.25]))
        got = float(mse_loss(y_hat, np.array([1.0, 1.0, 0.0])).data)
        want = 0.0 + 0.25 ** 2 + 0.25 ** 2
        assert got == pytest.approx(want, abs=1e-15)

    def test_uniform_prediction_analytic(self):
        # uniform over 3 classes vs target (1, 0, 0): (2/3)^2 + 2*(1/3)^2 = 2/3
        y_hat = Tensor(np.full(3, 1.0 / 3.0))
        got = float(mse_loss(y_hat, np.array([1.0, 0.0, 0.0])).data)
        assert got == pytest.approx(2.0 / 3.0, abs=1e-15)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = int(rng.integers(2, 8))
            y_hat = rng.random(n)
            labels = rng.integers(0, 2, n).astype(float)
            if labels.sum() == 0:
                labels[0] = 1.0
            got = float(mse_loss(Tensor(y_hat), labels).data)
            assert got == pytest.approx(mse_loop(y_hat, labels), abs=1e-14)

    def test_no_positive_rejected(self):
        with pytest.raises(ValidationError):
            mse_loss(Tensor(np.array([0.5, 0.5])), np.array([0.0, 0.0]))

    def test_gradient(self):
        y = np.array([1.0, 0.0, 1.0, 0.0])
        x0 = np.array([0.4, 0.2, 0.3, 0.1])
        t = Tensor(x0.copy(), requires_grad=True)
        mse_loss(t, y).backward()
        numeric = fd_grad(lambda x: mse_loop(x, y), x0)
        assert rel_err(t.grad, numeric) < 1e-7


class TestAdam:
    def test_scalar_trajectory_matches_oracle(self):
        grads = [0.3, -0.1, 0.7, 0.0, -0.4, 0.2]
        p = Tensor(np.array(1.0), requires_grad=True)
        params = {"x": p}
        state = AdamState(params)
        for g in grads:
            p.grad = np.array(g)
            adam_step(params, state, lr=0.05)
        want = adam_scalar_loop(1.0, grads, 0.05)
        assert float(p.data) == pytest.approx(want, abs=1e-15)

    def test_first_step_size_is_lr(self):
        # bias correction makes the first update lr * sign(g)-ish:
        # m/bc1 = g, v/bc2 = g^2 -> step = lr * g / (|g| + eps)
        p = Tensor(np.array(0.0), requires_grad=True)
        params = {"x": p}
        adam_step(params, AdamState(params), lr=0.01)  # grad None: zero, no move
        assert float(p.data) == 0.0
        p.grad = np.array(2.0)
        adam_step(params, AdamState(params), lr=0.01)
        assert float(p.data) == pytest.approx(-0.01, rel=1e-6)

    def test_vector_params(self):
        rng = np.random.default_rng(1)
        x = rng.normal(0, 1, (3, 2))
        p = Tensor(x.copy(), requires_grad=True)
        params = {"w": p}
        state = AdamState(params)
        gs = [rng.normal(0, 1, (3, 2)) for _ in range(4)]
        for g in gs:
            p.grad = g
            adam_step(params, state, lr=0.1)
        # elementwise equivalence with the scalar oracle
        for i in range(3):
            for j in range(2):
                want = adam_scalar_loop(x[i, j], [g[i, j] for g in gs], 0.1)
                assert float(p.data[i, j]) == pytest.approx(want, abs=1e-14)

    def test_non_finite_gradient_raises(self):
        p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        params = {"x": p}
        state = AdamState(params)
        p.grad = np.array([np.nan, 0.0])
        with pytest.raises(NumericError, match="x"):
            adam_step(params, state, lr=0.1)

    def test_shared_state_counts_steps(self):
        p = Tensor(np.array(1.0), requires_grad=True)
        params = {"x": p}
        state = AdamState(params)
        p.grad = np.array(1.0)
        adam_step(params, state, lr=0.1)
        adam_step(params, state, lr=0.1)
        assert state.t == 2


class TestTrainConfig:
    def test_defaults_are_reference_protocol(self):
        cfg = TrainConfig()
        assert cfg.episodes_per_epoch == 800
        assert cfg.val_episodes == 600
        assert cfg.test_episodes == 600
        assert cfg.learning_rate == 1e-3
        assert cfg.policy_learning_rate == 1e-4
        assert cfg.patience == 3
        assert cfg.policy_temperature == 2.0
        assert cfg.seeds == [5, 10, 15, 20, 25]
        assert cfg.embedding_dim == 50

    def test_round_trip(self):
        cfg = TrainConfig(n_way=3, ablations=["no-qa"])
        again = TrainConfig.from_dict(cfg.to_dict())
        assert again == cfg

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown"):
            TrainConfig.from_dict({"n_way": 5, "n_sideways": 2})

    def test_validation(self):
        with pytest.raises(ConfigError):
            TrainConfig(n_way=0).validate()
        with pytest.raises(ConfigError):
            TrainConfig(patience=0).validate()
        with pytest.raises(ConfigError):
            TrainConfig(learning_rate=0.0).validate()
        with pytest.raises(ConfigError):
            TrainConfig(seeds=[]).validate()
        with pytest.raises(ValueError):
            TrainConfig(ablations=["nope"]).validate()
        with pytest.raises(Exception):
            TrainConfig(window=2).validate()


def small_world(seed=40):
    cfg = SyntheticConfig(num_classes=8, sentences_per_class=14, vocab_size=60,
                          multi_aspect_fraction=0.3)
    corpus = generate_synthetic(cfg, seed)
    split = split_classes(corpus, counts=(4, 2, 2), seed=seed)
    train_cfg = TrainConfig(
        n_way=2, k_shot=2, q_per_class=2,
        episodes_per_epoch=6, val_episodes=3, max_epochs=3, patience=2,
        embedding_dim=6, hidden_dim=6, repeat_count=3,
    )
    return corpus, split, train_cfg


class TestEpisodeLossGradient:
    def test_finite_difference_through_episode(self):
        corpus, split, cfg = small_world()
        rng = np.random.default_rng(41)
        from fewaspect.episode import sample_episode
        task = sample_episode(corpus, split.train, 2, 2, 2, rng)
        emb = EmbeddingTable(corpus.vocab,
                             Tensor(rng.normal(0, 0.3, (len(corpus.vocab), 6)),
                                    requires_grad=True), 6)
        params = init_model_params(emb, cfg.model_config(), rng)

        loss = episode_loss(forward_episode(task, params))
        for t in params.trainable().values():
            t.zero_grad()
        loss.backward()

        from fewaspect.model import params_to_arrays
        base = params_to_arrays(params)
        for name in ("conv_kernel", "attn_weight", "embeddings"):
            def f(flat, name=name):
                arrays = {k: v.copy() for k, v in base.items()}
                arrays[name] = flat.reshape(base[name].shape)
                p2 = params_from_arrays(arrays, corpus.vocab, cfg.model_config())
                return float(episode_loss(forward_episode(task, p2)).data)
            numeric = fd_grad(f, base[name].ravel()).reshape(base[name].shape)
            assert rel_err(params.trainable()[name].grad, numeric) < 1e-4


class TestTrainMain:
    def test_runs_and_logs(self):
        corpus, split, cfg = small_world()
        result = train_main(corpus, split, cfg, seed=3)
        assert set(result.arrays) == {
            "embeddings", "conv_kernel", "conv_bias", "attn_weight", "attn_bias",
        }
        assert 1 <= result.best_epoch <= result.epochs_run <= cfg.max_epochs
        assert len(result.log) == result.epochs_run
        for rec in result.log:
            assert set(rec) == {"epoch", "train_loss", "val_auc", "val_macro_f1"}
            assert np.isfinite(rec["train_loss"])

    def test_deterministic(self):
        corpus, split, cfg = small_world()
        r1 = train_main(corpus, split, cfg, seed=3)
        r2 = train_main(corpus, split, cfg, seed=3)
        for name in r1.arrays:
            np.testing.assert_array_equal(r1.arrays[name], r2.arrays[name])
        assert r1.log == r2.log

    def test_seed_changes_run(self):
        corpus, split, cfg = small_world()
        r1 = train_main(corpus, split, cfg, seed=3)
        r2 = train_main(corpus, split, cfg, seed=4)
        assert any(not np.array_equal(r1.arrays[n], r2.arrays[n]) for n in r1.arrays)

    def test_best_snapshot_is_returned(self):
        """The returned arrays must reproduce the best epoch's val AUC."""
        corpus, split, cfg = small_world()
        result = train_main(corpus, split, cfg, seed=5)
        from fewaspect.metrics import evaluate_tasks, sample_eval_tasks
        params = params_from_arrays(result.arrays, corpus.vocab, cfg.model_config())
        rng_val = np.random.default_rng([5, 2])
        val_tasks = sample_eval_tasks(corpus, split.validation, cfg.n_way,
                                      cfg.k_shot, cfg.q_per_class,
                                      cfg.val_episodes, rng_val)
        summ = evaluate_tasks(params, val_tasks, "static", 0.3)
        assert summ.mean_auc == pytest.approx(result.best_val_auc, abs=1e-12)
        assert result.best_val_auc == max(rec["val_auc"] for rec in result.log)

    def test_early_stop_semantics(self):
        """Patience counts epochs without strict improvement."""
        corpus, split, cfg = small_world()
        cfg.max_epochs = 12
        cfg.patience = 1
        result = train_main(corpus, split, cfg, seed=6)
        if result.stopped_early:
            # the run ends exactly one epoch after the last improvement
            assert result.epochs_run == result.best_epoch + 1
        else:
            assert result.epochs_run == cfg.max_epochs

    def test_log_file_written(self, tmp_path):
        corpus, split, cfg = small_world()
        log_path = tmp_path / "train.jsonl"
        result = train_main(corpus, split, cfg, seed=3, log_path=str(log_path))
        import json
        with open(log_path) as fh:
            lines = [json.loads(line) for line in fh]
        assert lines == result.log

    def test_progress_callback(self):
        corpus, split, cfg = small_world()
        seen = []
        train_main(corpus, split, cfg, seed=3, progress=seen.append)
        assert [r["epoch"] for r in seen] == list(range(1, len(seen) + 1))

    def test_explicit_embeddings_used(self):
        corpus, split, cfg = small_world()
        rng = np.random.default_rng(42)
        emb = EmbeddingTable(corpus.vocab,
                             Tensor(rng.normal(0, 0.2, (len(corpus.vocab), 6)),
                                    requires_grad=True), 6)
        r1 = train_main(corpus, split, cfg, seed=3, embeddings=emb)
        r2 = train_main(corpus, split, cfg, seed=3)
        assert not np.array_equal(r1.arrays["embeddings"], r2.arrays["embeddings"])


def test_checkpoint_config_echo():
    corpus, _, cfg = small_world()
    echo = checkpoint_config(corpus, cfg, seed=7, stage="main")
    assert echo["stage"] == "main"
    assert echo["seed"] == 7
    assert echo["vocab"] == corpus.id_to_token
    assert echo["model"]["embedding_dim"] == 6
    assert echo["train"]["episodes_per_epoch"] == 6
    assert echo["policy_temperature"] == 2.0
