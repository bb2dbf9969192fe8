import numpy as np
import pytest

from qcmm.data import DatasetBundle, synth_generate
from qcmm.harness import (
    GOLDEN,
    MASK64,
    CheckpointError,
    TrainConfig,
    TrainingError,
    ablate,
    build_model,
    confusion_matrix,
    epoch_permutation,
    evaluate,
    load_checkpoint,
    metrics_from_confusion,
    save_checkpoint,
    splitmix64,
    train,
)

SMALL = {"n_per_class": 12, "d": 4}


def small_config(**kw):
    base = {"epochs": 2, "batch_size": 8, "hidden": 8, "seed": 17}
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def bundle():
    return synth_generate(SMALL, 3)


class TestConfig:
    def test_defaults(self):
        c = TrainConfig()
        assert (c.learning_rate, c.batch_size, c.epochs, c.seed) == (1e-3, 16, 25, 998244353)
        assert (c.beta1, c.beta2, c.eps) == (0.9, 0.999, 1e-8)

    @pytest.mark.parametrize("bad", [{"learning_rate": 0}, {"batch_size": 0}, {"epochs": -1},
                                     {"kernel_name": "U99"}, {"ablation_mode": "x"}, {"seed": -1}])
    def test_validation(self, bad):
        with pytest.raises(ValueError):
            TrainConfig(**bad)

    def test_unknown_key(self):
        with pytest.raises(ValueError):
            TrainConfig.from_dict({"lr": 0.1})


class TestShuffle:
    def test_splitmix_reference(self):
        # first outputs of splitmix64 seeded with 0, computed by hand from the recurrence
        def ref(state):
            state = (state + GOLDEN) & MASK64
            z = state
            z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
            z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
            return z ^ (z >> 31)

        stream = splitmix64(0)
        assert next(stream) == ref(0) == 0xE220A8397B1DCDAF
        assert next(stream) == ref(GOLDEN)

    def test_permutation(self):
        p = epoch_permutation(50, 7, 0)
        assert sorted(p.tolist()) == list(range(50))
        assert np.array_equal(p, epoch_permutation(50, 7, 0))
        assert not np.array_equal(p, epoch_permutation(50, 7, 1))


class TestTrain:
    def test_zero_epochs(self, bundle):
        cfg = small_config(epochs=0)
        result = train(cfg, bundle)
        init = build_model(cfg, bundle).params
        assert result.history == []
        assert np.array_equal(result.params.flatten(), init.flatten())

    def test_deterministic(self, bundle):
        a, b = train(small_config(), bundle), train(small_config(), bundle)
        assert a.history == b.history
        assert np.array_equal(a.params.flatten(), b.params.flatten())

    def test_tuple_unpacking(self, bundle):
        params, history = train(small_config(epochs=1), bundle)
        assert len(history) == 1 and params.size > 0

    def test_loss_improves(self, bundle):
        result = train(small_config(epochs=6, learning_rate=0.02), bundle)
        assert result.history[-1] < result.history[0]

    def test_fixed_fusion_frozen(self, bundle):
        result = train(small_config(ablation_mode="fixed-fusion", learning_rate=0.05), bundle)
        assert np.array_equal(result.params["fusion.theta"], np.full(8, np.pi))

    def test_trainable_fusion_moves(self, bundle):
        result = train(small_config(learning_rate=0.05), bundle)
        assert not np.array_equal(result.params["fusion.theta"], np.full(8, np.pi))

    def test_no_mlp_uses_scalers(self):
        b = synth_generate({"n_per_class": 12, "d": 8}, 1)
        result = train(small_config(ablation_mode="no-mlp", epochs=1), b)
        assert set(result.model.scalers) == {"h", "l"}
        assert not any(k.startswith("mlp") for k in result.params.names())

    def test_non_finite_diagnostic(self):
        b = synth_generate(SMALL, 3)
        x_h = np.array(b.x_h)
        x_h[b.train_idx[5]] = np.nan
        bad = DatasetBundle(x_h, b.x_l, b.labels, b.train_idx, b.test_idx, b.class_names)
        with pytest.raises(TrainingError, match=r"epoch 0, batch \d+ \(dataset rows .*\b" + str(b.train_idx[5]) + r"\b"):
            train(small_config(), bad)

    def test_requires_four_classes(self):
        b = DatasetBundle(np.zeros((6, 4)), np.zeros((6, 4)), [0, 1, 2, 0, 1, 2], class_names=("a", "b", "c"))
        with pytest.raises(ValueError):
            build_model(small_config(), b)


class TestMetrics:
    def test_perfect(self):
        m = metrics_from_confusion(np.diag([5, 3, 2, 7]))
        assert (m.OA, m.AA, m.F1, m.kappa) == (1.0, 1.0, 1.0, 1.0)

    def test_random_kappa(self):
        rng = np.random.default_rng(0)
        y = np.repeat(np.arange(4), 250)
        m = metrics_from_confusion(confusion_matrix(y, rng.integers(0, 4, 1000), 4))
        assert abs(m.kappa) < 0.1

    def test_two_by_two(self):
        m = metrics_from_confusion([[1, 1], [1, 1]])
        assert m.OA == 0.5 and m.kappa == 0.0

    def test_hand_example(self):
        cm = np.array([[8, 2], [1, 9]])
        m = metrics_from_confusion(cm)
        p_e = (10 * 9 + 10 * 11) / 400
        assert m.kappa == pytest.approx((0.85 - p_e) / (1 - p_e))
        assert m.per_class_recall == [0.8, 0.9]
        f1 = [2 * (8 / 9) * 0.8 / (8 / 9 + 0.8), 2 * (9 / 11) * 0.9 / (9 / 11 + 0.9)]
        assert m.F1 == pytest.approx(np.mean(f1))

    def test_empty(self):
        with pytest.raises(ValueError):
            metrics_from_confusion(np.zeros((4, 4)))

    def test_evaluate_consistency(self, bundle):
        result = train(small_config(epochs=1), bundle)
        m = evaluate(result.model, bundle)
        cm = np.array(m.confusion)
        assert m.OA == np.trace(cm) / cm.sum()
        assert cm.sum(axis=1).tolist() == bundle.class_counts("test").tolist()
        assert 0 <= m.AA <= 1 and -1 <= m.kappa <= 1

    def test_ablate_unknown(self, bundle):
        with pytest.raises(ValueError):
            ablate(small_config(), "bogus", bundle)

    def test_ablate_mode(self, bundle):
        m, result = ablate(small_config(epochs=1), "shallow-qcnn", bundle)
        assert result.config.ablation_mode == "shallow-qcnn"
        assert result.model.spec.qcnn_config.blocks == 1 and m.n == bundle.test_idx.size


class TestCheckpoint:
    def test_round_trip(self, tmp_path, bundle):
        result = train(small_config(epochs=1, ablation_mode="no-mlp", hidden=4), synth_generate({"n_per_class": 12}, 0))
        path = save_checkpoint(tmp_path / "a.qcmm", result.model, result.config)
        model, cfg = load_checkpoint(path)
        assert cfg == result.config and model.spec == result.model.spec
        assert np.array_equal(model.params.flatten(), result.params.flatten())
        x = synth_generate({"n_per_class": 12}, 0)
        assert np.array_equal(model.predict_proba(x.x_h, x.x_l), result.model.predict_proba(x.x_h, x.x_l))

    def test_bytes_deterministic(self, tmp_path, bundle):
        a = train(small_config(epochs=1), bundle)
        b = train(small_config(epochs=1), bundle)
        pa = save_checkpoint(tmp_path / "a.qcmm", a.model, a.config).read_bytes()
        pb = save_checkpoint(tmp_path / "b.qcmm", b.model, b.config).read_bytes()
        assert pa == pb and pa.startswith(b"QCMMCKPT")

    def test_corrupt(self, tmp_path, bundle):
        a = train(small_config(epochs=0), bundle)
        path = save_checkpoint(tmp_path / "a.qcmm", a.model, a.config)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)
        (tmp_path / "junk").write_bytes(b"hello")
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "junk")
