import numpy as np
import pytest
from scipy import stats

from eqodds.noise import TABLE2_SCM
from eqodds.probcore import DimensionError, Sample
from eqodds.simulate import gen_linear_scm
from eqodds.statmod import kmcd
from eqodds.trainer import (FittedModel, MlpSpec, TrainConfig, TrainingError, batch_objective,
                            from_bytes, grad_check, head, init_model, predict, predict_proba,
                            spec_sidecar, to_bytes, train)


def _linear_data(n, seed):
    r = np.random.default_rng(seed)
    a = r.integers(0, 2, n).astype(float)
    x = r.normal(size=n)
    y = 1.5 * x - 0.5 * a + 0.3 * r.normal(size=n)
    return Sample(a, x, y)


def _ols_mse(train_s, test_s):
    def design(s):
        return np.column_stack([np.ones(s.n), s.a, s.x])
    coef, *_ = np.linalg.lstsq(design(train_s), train_s.y, rcond=None)
    return float(np.mean((design(test_s) @ coef - test_s.y) ** 2))


class TestConfig:
    def test_spec_invariants(self):
        with pytest.raises(ValueError):
            MlpSpec(widths=(0, 3))
        with pytest.raises(ValueError):
            MlpSpec(noise_dim=-1)
        with pytest.raises(ValueError):
            MlpSpec(task="ranking")

    def test_train_config_invariants(self):
        with pytest.raises(ValueError):
            TrainConfig(lam=-1)
        with pytest.raises(ValueError):
            TrainConfig(lr=0)
        with pytest.raises(ValueError):
            TrainConfig(batch=0)
        with pytest.raises(ValueError):
            TrainConfig(penalty="hsic")


class TestTrain:
    def test_unpenalized_matches_ols(self):
        tr, te = _linear_data(1000, 0), _linear_data(2000, 1)
        model = train(tr, MlpSpec(seed=0), TrainConfig(epochs=150, lr=3e-3))
        mse = float(np.mean((predict(model, te.a, te.x) - te.y) ** 2))
        assert mse <= 1.10 * _ols_mse(tr, te)

    def test_penalty_trades_off(self):
        tr = gen_linear_scm(TABLE2_SCM, 400, seed=3, a_law="uniform")
        pens = []
        for lam in (0.0, 2.0 ** 10):
            cfg = TrainConfig(lam=lam, epochs=60, ramp_epochs=30)
            model = train(tr, MlpSpec(seed=1), cfg)
            out = predict(model, tr.a, tr.x)
            pens.append(kmcd(out, tr.a, tr.y, cfg.kernel))
        assert pens[1] < pens[0]

    def test_zero_epochs(self):
        tr = _linear_data(50, 2)
        model = train(tr, MlpSpec(seed=4), TrainConfig(epochs=0))
        init = init_model(MlpSpec(seed=4), tr.a, tr.x, tr.y)
        assert model.trace == []
        np.testing.assert_array_equal(model.get_flat(), init.get_flat())

    def test_reproducible_traces(self):
        tr = _linear_data(120, 3)
        cfg = TrainConfig(lam=1.0, epochs=5)
        m1 = train(tr, MlpSpec(noise_dim=2, seed=5), cfg)
        m2 = train(tr, MlpSpec(noise_dim=2, seed=5), cfg)
        assert m1.trace == m2.trace
        np.testing.assert_array_equal(m1.get_flat(), m2.get_flat())

    @pytest.mark.parametrize("penalty", ["kmcd", "excess"])
    def test_objective_decomposition(self, penalty):
        tr = gen_linear_scm(TABLE2_SCM, 200, seed=4, a_law="uniform")
        cfg = TrainConfig(lam=3.0, epochs=8, ramp_epochs=4, penalty=penalty)
        model = train(tr, MlpSpec(noise_dim=1, seed=6), cfg)
        for row in model.trace:
            assert row.objective == row.loss + row.lam * row.penalty
        assert [r.lam for r in model.trace[:4]] == [0.75, 1.5, 2.25, 3.0]

    def test_objective_decreases_on_average(self):
        tr = _linear_data(300, 5)
        model = train(tr, MlpSpec(seed=7), TrainConfig(lam=1.0, epochs=40))
        objs = [r.objective for r in model.trace]
        assert np.mean(objs[-10:]) <= np.mean(objs[:10])

    def test_full_batch_penalty(self):
        tr = _linear_data(64, 6)
        cfg = TrainConfig(lam=1.0, epochs=3, batch=16, full_batch_penalty=True)
        model = train(tr, MlpSpec(seed=8), cfg)
        assert len(model.trace) == 3
        assert all(np.isfinite(r.objective) for r in model.trace)

    def test_divergence_raises(self):
        tr = _linear_data(100, 7)
        with pytest.raises(TrainingError) as info:
            train(tr, MlpSpec(seed=9), TrainConfig(lr=1e8, optimizer="sgd", epochs=50))
        assert info.value.last_finite_epoch >= -1

    def test_warm_start_requires_same_spec(self):
        tr = _linear_data(60, 8)
        base = train(tr, MlpSpec(seed=1), TrainConfig(epochs=1))
        with pytest.raises(ValueError):
            train(tr, MlpSpec(seed=2), TrainConfig(epochs=1), init=base)
        warm = train(tr, MlpSpec(seed=1), TrainConfig(epochs=0), init=base)
        np.testing.assert_array_equal(warm.get_flat(), base.get_flat())

    def test_exclude_protected(self):
        tr = _linear_data(60, 9)
        spec = MlpSpec(seed=0, use_protected=False)
        model = train(tr, spec, TrainConfig(epochs=2))
        assert model.in_dim == 1
        a_changed = 1 - tr.a
        np.testing.assert_array_equal(predict(model, tr.a, tr.x), predict(model, a_changed, tr.x))


class TestPredict:
    def test_deterministic_repeatable(self):
        tr = _linear_data(50, 10)
        model = init_model(MlpSpec(seed=1), tr.a, tr.x, tr.y)
        np.testing.assert_array_equal(predict(model, tr.a, tr.x), predict(model, tr.a, tr.x))

    def test_stochastic_varies(self):
        tr = _linear_data(50, 11)
        model = init_model(MlpSpec(noise_dim=2, seed=1), tr.a, tr.x, tr.y)
        a = np.zeros(10_000)
        x = np.full(10_000, 0.3)
        out = predict(model, a, x, np.random.default_rng(0))
        assert np.var(out) > 0
        with pytest.raises(ValueError):
            predict(model, a, x)

    def test_stochastic_binary_frequency(self):
        tr = _linear_data(50, 12)
        model = init_model(MlpSpec(noise_dim=2, task="binary", seed=3), tr.a, tr.x)
        n = 10_000
        a, x = np.ones(n), np.full(n, -0.4)
        freq = predict(model, a, x, np.random.default_rng(1)).mean()
        p = predict_proba(model, a[:1], x[:1], np.random.default_rng(2), draws=200_000)[0]
        assert abs(freq - p) <= 3 * np.sqrt(p * (1 - p) / n)

    def test_deterministic_binary_thresholds_logit(self):
        tr = _linear_data(40, 13)
        model = init_model(MlpSpec(task="binary", seed=4), tr.a, tr.x)
        labels = predict(model, tr.a, tr.x)
        np.testing.assert_array_equal(labels, (head(model, tr.a, tr.x) > 0).astype(float))

    def test_arity_mismatch(self):
        tr = _linear_data(40, 14)
        model = init_model(MlpSpec(seed=4), tr.a, tr.x)
        with pytest.raises(DimensionError):
            predict(model, tr.a, np.column_stack([tr.x[:, 0], tr.x[:, 0]]))


class TestGradCheck:
    @pytest.mark.parametrize("noise_dim", [0, 3])
    @pytest.mark.parametrize("lam", [0.0, 1.0])
    def test_regression(self, noise_dim, lam):
        s = gen_linear_scm(TABLE2_SCM, 64, seed=2, a_law="uniform")
        model = init_model(MlpSpec(noise_dim=noise_dim, seed=3), s.a, s.x, s.y)
        assert grad_check(model, s.a, s.x, s.y, lam) <= 1e-4

    def test_binary(self):
        s = _linear_data(64, 15)
        y = (s.y > 0).astype(float)
        model = init_model(MlpSpec(task="binary", seed=5), s.a, s.x)
        assert grad_check(model, s.a, s.x, y, 1.0) <= 1e-4

    def test_zero_weights_finite(self):
        s = _linear_data(32, 16)
        model = init_model(MlpSpec(seed=6), s.a, s.x, s.y)
        model.set_flat(np.zeros_like(model.get_flat()))
        assert np.isfinite(grad_check(model, s.a, s.x, s.y, 1.0))

    def test_too_small_batch(self):
        s = _linear_data(6, 17)
        model = init_model(MlpSpec(seed=6), s.a, s.x, s.y)
        with pytest.raises(ValueError):
            grad_check(model, s.a, s.x, s.y, 0.0)


def test_noise_exchangeability():
    s = gen_linear_scm(TABLE2_SCM, 64, seed=5, a_law="uniform")
    model = init_model(MlpSpec(noise_dim=2, seed=7), s.a, s.x, s.y)
    passed = 0
    for seed in range(20):
        r = np.random.default_rng(seed)
        plain, shuffled = [], []
        for _ in range(200):
            noise = r.standard_normal((s.n, 2))
            plain.append(batch_objective(model, s.a, s.x, s.y, noise, 0.0, need_grad=False)[0])
            noise = r.standard_normal((s.n, 2))[r.permutation(s.n)]
            shuffled.append(batch_objective(model, s.a, s.x, s.y, noise, 0.0, need_grad=False)[0])
        passed += stats.ks_2samp(plain, shuffled).pvalue > 0.05
    assert passed >= 18


class TestSerialization:
    def test_round_trip(self):
        tr = _linear_data(80, 18)
        cfg = TrainConfig(lam=0.5, epochs=2)
        model = train(tr, MlpSpec(noise_dim=3, widths=(7, 5), seed=2), cfg)
        blob = to_bytes(model)
        back = from_bytes(blob, spec_sidecar(model, cfg))
        assert back.spec == model.spec
        assert back.trace == model.trace
        np.testing.assert_array_equal(back.get_flat(), model.get_flat())
        np.testing.assert_array_equal(back.in_mean, model.in_mean)
        r1, r2 = np.random.default_rng(0), np.random.default_rng(0)
        np.testing.assert_array_equal(predict(back, tr.a, tr.x, r1), predict(model, tr.a, tr.x, r2))

    def test_little_endian_layout(self):
        model = init_model(MlpSpec(widths=(2,), seed=0), np.zeros(4), np.arange(4.0))
        blob = to_bytes(model)
        assert blob[:4] == b"EQOM"
        assert int.from_bytes(blob[4:8], "little") == 1
        n_doubles = 2 * 2 + model.n_params()
        assert len(blob) == 16 + 4 * 3 + 8 * n_doubles

    def test_rejects_foreign_bytes(self):
        with pytest.raises(ValueError):
            from_bytes(b"XXXX" + bytes(20), "{}")

    def test_fitted_model_type(self):
        model = init_model(MlpSpec(seed=0), np.zeros(4), np.arange(4.0))
        assert isinstance(model.copy(), FittedModel)
