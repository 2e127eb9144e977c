#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
对抗样本生成测试
线性桩模型的行为可手算，真实 BL-DNN 用于检查掩码与边界约束
"""

import numpy as np
import pytest

from src.core.config import AttackSettings, Scenario
from src.core.exceptions import CapabilityError, ConfigError, DatasetError, GeometryError
from src.data.canlog import MAX_DLC, AttackKind, CanRecord, Label
from src.data.pipeline import (
    DATA_SLICE,
    DLC_INDEX,
    DTIME_INDEX,
    ID_SLICE,
    MAX_DTIME,
    N_FEATURES,
    SampleSet,
    concat_sample_sets,
    decode_can_ids,
    encode_records,
    feature_bounds,
    scenario_view,
)
from src.harness.analysis import compute_perturbation_stats
from src.models.base import InputKind, ModelFamily, ModelHandle, ModelView
from src.models.ensemble import EnsembleModel
from src.models.sota_cnn import SotaCnnModel
from src.attacks import (
    AdversarialResult,
    AttackConfig,
    fgsm_step,
    generate_adversarial,
    generate_batch,
    load_results,
    perturb_dataset,
    save_results,
    scenario_mask,
    summarize_results,
)

D0 = DATA_SLICE.start


class LinearStub(ModelHandle):
    """攻击分数 x·w + b > 0 判为攻击；朝目标0的梯度为 w"""

    family = ModelFamily.BL_DNN
    input_kind = InputKind.MESSAGE
    supports_gradient = True

    def __init__(self, weights: np.ndarray, bias: float):
        super().__init__()
        self.weights = np.asarray(weights, dtype=np.float64)
        self.bias = bias

    def build_view(self, samples):
        return ModelView(samples.features, samples.labels)

    def check_geometry(self, inputs):
        pass

    def predict(self, inputs, extras=None):
        return (np.atleast_2d(inputs) @ self.weights + self.bias > 0).astype(np.int64)

    def input_gradient(self, inputs, target_label, extras=None):
        grad = self.weights if target_label == 0 else -self.weights
        inputs = np.asarray(inputs)
        return grad.copy() if inputs.ndim == 1 else np.tile(grad, (len(inputs), 1))

    def save(self, path):
        raise NotImplementedError

    @classmethod
    def load(cls, path):
        raise NotImplementedError


def _weights(**entries) -> np.ndarray:
    w = np.zeros(N_FEATURES)
    for index, value in entries.items():
        w[int(index.lstrip("f"))] = value
    return w


def _config(model, **kwargs) -> AttackConfig:
    return AttackConfig(generation_model=model, **kwargs)


def _stream(kind: AttackKind, n_normal: int, n_attack: int, log_id: int) -> SampleSet:
    records = [CanRecord(i * 0.01, 0x316, 8, (0,) * 8, Label.NORMAL) for i in range(n_normal)]
    attack_id = 0 if kind is AttackKind.DOS else 0x316
    records += [
        CanRecord((n_normal + i) * 0.01, attack_id, 8, (0xFF,) * 8, Label.ATTACK) for i in range(n_attack)
    ]
    return encode_records(records, log_id=log_id, log_kind=kind)


class TestScenarioMask:
    """场景掩码测试"""

    @pytest.mark.parametrize("scenario,size", [
        (Scenario.FULL, 77), (Scenario.DOS, 67), (Scenario.FUZZY, 75), (Scenario.MALFUNCTION, 64),
    ])
    def test_mask_sizes(self, scenario, size):
        """测试各场景允许修改的特征数"""
        assert len(scenario_mask(scenario).allowed) == size

    def test_dos_touches_last_three_id_bits(self):
        """测试DoS只允许ID最后三位"""
        allowed = scenario_mask(Scenario.DOS).allowed
        assert {8, 9, 10} <= allowed
        assert not ({0, 1, 2, 3, 4, 5, 6, 7} & allowed)
        assert DLC_INDEX not in allowed and DTIME_INDEX not in allowed

    def test_malfunction_excludes_id_dlc_dtime(self):
        """测试Malfunction只允许数据位"""
        allowed = scenario_mask(Scenario.MALFUNCTION).allowed
        assert allowed == set(range(DATA_SLICE.start, DATA_SLICE.stop))


class TestFgsmStep:
    """单步更新测试"""

    def test_largest_gradient_moves(self):
        """测试 g=[0.2, -0.5] 时第二个特征 0 -> 1"""
        model = LinearStub(_weights(**{f"f{D0}": 0.2, f"f{D0 + 1}": -0.5}), -10)
        x = np.zeros(N_FEATURES)
        out, index = fgsm_step(model, x, 0, scenario_mask(Scenario.MALFUNCTION))
        assert index == D0 + 1
        assert out[D0] == 0 and out[D0 + 1] == 1
        assert np.count_nonzero(out != x) == 1

    def test_stuck_rule_exhausts(self):
        """测试 x=[1,0], g=[-0.9, 0.1] 时两个候选都卡在边界"""
        model = LinearStub(_weights(**{f"f{D0}": -0.9, f"f{D0 + 1}": 0.1}), -10)
        x = np.zeros(N_FEATURES)
        x[D0] = 1
        out, index = fgsm_step(model, x, 0, scenario_mask(Scenario.MALFUNCTION))
        assert index is None
        assert np.array_equal(out, x.astype(np.float32))

    def test_masked_feature_never_moves(self):
        """测试梯度最大的被屏蔽特征不被修改"""
        model = LinearStub(_weights(f0=-5.0, **{f"f{D0 + 3}": -0.1}), -10)
        out, index = fgsm_step(model, np.zeros(N_FEATURES), 0, scenario_mask(Scenario.MALFUNCTION))
        assert index == D0 + 3
        assert out[0] == 0

    def test_ties_pick_lowest_index(self):
        """测试梯度并列时取最小下标"""
        model = LinearStub(_weights(**{f"f{D0 + 5}": -1.0, f"f{D0 + 2}": -1.0}), -10)
        _, index = fgsm_step(model, np.zeros(N_FEATURES), 0, scenario_mask(Scenario.FULL))
        assert index == D0 + 2

    def test_dtime_clamped(self):
        """测试连续特征的更新被截断到边界"""
        model = LinearStub(_weights(**{f"f{DTIME_INDEX}": -1.0}), -10)
        x = np.zeros(N_FEATURES)
        x[DTIME_INDEX] = 99.5
        out, index = fgsm_step(model, x, 0, scenario_mask(Scenario.FULL), epsilon=1.0)
        assert index == DTIME_INDEX
        assert out[DTIME_INDEX] == feature_bounds()[DTIME_INDEX, 1]


class TestGeneration:
    """迭代生成测试"""

    def _attack_sample(self, bits):
        x = np.zeros(N_FEATURES, dtype=np.float32)
        x[list(bits)] = 1
        samples = SampleSet(x[None], [1], [0], [0], [AttackKind.MALFUNCTION.value])
        return samples[0]

    def test_already_evading(self):
        """测试已被判为正常的样本直接成功"""
        model = LinearStub(_weights(**{f"f{D0}": 1.0}), -5)
        result = generate_adversarial(model, self._attack_sample([D0]), Scenario.FULL, _config(model))
        assert result.success
        assert result.iterations_used == 0
        assert result.modified_features == ()

    def test_two_flips(self):
        """测试需要两次翻转的样本"""
        model = LinearStub(_weights(**{f"f{D0}": 1.0, f"f{D0 + 1}": 1.0}), -0.5)
        result = generate_adversarial(model, self._attack_sample([D0, D0 + 1]), Scenario.MALFUNCTION, _config(model))
        assert result.success
        assert result.iterations_used == 2
        assert result.modified_features == (D0, D0 + 1)
        assert model.predict(result.perturbed.to_array())[0] == 0
        assert np.abs(result.perturbation).sum() == 2

    def test_iteration_budget(self):
        """测试50次迭代内未成功时记为失败"""
        data = list(range(DATA_SLICE.start, DATA_SLICE.stop))
        model = LinearStub(_weights(**{f"f{i}": 0.01 for i in data}), 10)
        result = generate_adversarial(model, self._attack_sample(data), Scenario.MALFUNCTION, _config(model))
        assert not result.success
        assert result.iterations_used == 50
        assert len(result.modified_features) == 50

    def test_exhaustion_is_failure(self):
        """测试候选耗尽时提前停止并记为失败"""
        model = LinearStub(_weights(f0=1.0), 0.5)
        result = generate_adversarial(model, self._attack_sample([0]), Scenario.MALFUNCTION, _config(model))
        assert not result.success
        assert result.iterations_used == 0
        stats = compute_perturbation_stats([result], Scenario.MALFUNCTION, max_iterations=50)
        assert stats.mean_iterations == 50
        assert stats.max_iterations == 50
        assert stats.failures == 1

    def test_normal_sample_rejected(self):
        """测试正常样本不参与扰动"""
        model = LinearStub(_weights(f0=1.0), 0)
        sample = SampleSet(np.zeros((1, N_FEATURES)), [0], [0], [0], ["none"])[0]
        with pytest.raises(DatasetError):
            generate_adversarial(model, sample, Scenario.FULL, _config(model))

    def test_batch_matches_single(self):
        """测试批量生成与逐条生成一致"""
        model = LinearStub(_weights(**{f"f{D0}": 1.0, f"f{D0 + 1}": 1.0}), -0.5)
        x = np.zeros((3, N_FEATURES), dtype=np.float32)
        x[0, [D0, D0 + 1]] = 1
        x[1, D0] = 1
        perturbed, success, iterations = generate_batch(model, x, Scenario.FULL, _config(model))
        assert success.tolist() == [True, True, True]
        assert iterations.tolist() == [2, 1, 0]
        assert not perturbed[:, D0:D0 + 2].any()

    def test_capability_and_geometry(self):
        """测试不提供梯度或非消息输入的模型不能生成"""
        x = np.zeros((1, N_FEATURES))
        with pytest.raises(CapabilityError):
            generate_batch(EnsembleModel(), x, Scenario.FULL, _config(EnsembleModel()))
        with pytest.raises(GeometryError):
            generate_batch(SotaCnnModel(), x, Scenario.FULL, _config(EnsembleModel()))

    def test_config_validation(self):
        """测试生成参数校验"""
        model = LinearStub(np.zeros(N_FEATURES), 0)
        with pytest.raises(ConfigError):
            _config(model, epsilon=0)
        with pytest.raises(ConfigError):
            _config(model, max_iterations=0)
        with pytest.raises(ConfigError):
            _config(model, norm="L2")
        config = AttackConfig.from_settings(model, AttackSettings(max_iterations=7))
        assert config.max_iterations == 7
        assert config.target_label == 0


class TestPerturbDataset:
    """对抗数据集测试"""

    @pytest.fixture
    def dataset(self):
        return concat_sample_sets([
            _stream(AttackKind.DOS, 10, 5, log_id=0),
            _stream(AttackKind.FUZZY, 4, 3, log_id=1),
        ], name="B")

    @pytest.fixture
    def model(self):
        data = list(range(DATA_SLICE.start, DATA_SLICE.stop))
        return LinearStub(_weights(**{f"f{i}": 1.0 for i in data}), -60.5)

    def test_only_matching_attacks_perturbed(self, dataset, model):
        """测试10条正常 + 5条DoS：恰好5条被扰动"""
        adversarial, results = perturb_dataset(model, dataset, Scenario.DOS, _config(model))
        assert len(results) == 5
        assert all(r.success and r.iterations_used == 4 for r in results)
        assert adversarial.name == "B_prime_dos"

        changed = np.flatnonzero((adversarial.features != dataset.features).any(axis=1))
        assert set(dataset.log_kind[changed]) == {"dos"}
        assert set(dataset.labels[changed]) == {1}
        assert np.array_equal(adversarial.labels, dataset.labels)
        assert np.array_equal(adversarial.source_index, dataset.source_index)
        assert np.all(decode_can_ids(adversarial.features[changed]) <= 7)

    def test_full_scenario_covers_all_attacks(self, dataset, model):
        """测试Full场景扰动全部攻击样本"""
        _, results = perturb_dataset(model, dataset, Scenario.FULL, _config(model))
        assert len(results) == 8
        assert summarize_results(results)["success_rate"] == 1.0

    def test_mismatched_scenario(self, dataset, model):
        """测试数据集中没有该场景的攻击"""
        adversarial, results = perturb_dataset(model, dataset, Scenario.MALFUNCTION, _config(model))
        assert results == []
        assert np.array_equal(adversarial.features, dataset.features)

    def test_sidecar(self, dataset, model, tmp_path):
        """测试旁路报告"""
        _, results = perturb_dataset(model, dataset, Scenario.DOS, _config(model))
        path = tmp_path / "B_prime.results.csv"
        save_results(results, path)
        table = load_results(path)
        assert len(table) == 5
        assert table["modified_features"][0] == results[0].modified_features
        assert table["success"].all()
        stats = compute_perturbation_stats(list(table.itertuples()), Scenario.DOS)
        assert stats.mean_size == 4.0


class TestStats:
    """扰动统计测试"""

    def _result(self, modified, iterations, success):
        vec = SampleSet(np.zeros((1, N_FEATURES)), [1], [0], [0], ["dos"])[0].features
        return AdversarialResult(vec, vec, success, iterations, tuple(modified), Scenario.DOS)

    def test_sizes_and_failures(self):
        """测试规模、迭代次数与失败数（失败样本计入统计）"""
        results = [
            self._result([12, 13], 2, True),
            self._result([12, 14, 15, 16], 4, True),
            self._result(range(12, 62), 50, False),
        ]
        stats = compute_perturbation_stats(results, Scenario.DOS)
        assert stats.samples == 3
        assert stats.mean_size == pytest.approx(56 / 3)
        assert stats.max_size == 50
        assert stats.mean_iterations == pytest.approx(56 / 3)
        assert stats.max_iterations == 50
        assert stats.failures == 1
        assert stats.success_rate == pytest.approx(2 / 3)

    def test_early_failure_counted_at_budget(self):
        """测试提前停止的失败样本按迭代上限计入"""
        results = [self._result([12], 1, True), self._result([13, 14], 3, False)]
        stats = compute_perturbation_stats(results, Scenario.DOS, max_iterations=10)
        assert stats.mean_iterations == pytest.approx(5.5)
        assert stats.max_iterations == 10
        assert stats.max_size == 2

    def test_empty(self):
        """测试没有结果时报错"""
        with pytest.raises(DatasetError):
            compute_perturbation_stats([], Scenario.FULL)


class TestOnTrainedDnn:
    """在真实 BL-DNN 上的约束检查"""

    @pytest.mark.parametrize("scenario", [Scenario.DOS, Scenario.MALFUNCTION])
    def test_mask_and_bounds(self, trained_dnn, split, scenario):
        """测试修改只落在掩码内且不越界"""
        view = scenario_view(split.dataset_b, scenario)
        config = _config(trained_dnn, max_iterations=10)
        adversarial, results = perturb_dataset(trained_dnn, view, scenario, config)
        assert results
        allowed = scenario_mask(scenario).allowed
        bounds = feature_bounds()
        for r in results:
            assert set(r.modified_features) <= allowed
            assert r.iterations_used <= 10
            assert len(r.modified_features) <= r.iterations_used
            values = r.perturbed.to_array()
            assert np.all(values >= bounds[:, 0]) and np.all(values <= bounds[:, 1])
        if scenario is Scenario.DOS:
            attacked = adversarial.labels == 1
            assert np.all(decode_can_ids(adversarial.features[attacked]) <= 7)
        success = np.array([r.success for r in results])
        assert np.array_equal(trained_dnn.predict(np.stack([r.perturbed.to_array() for r in results])) == 0, success)


SAMPLES_PER_SCENARIO = 250


def _random_attacks(rng, scenario: Scenario, n: int) -> np.ndarray:
    """合法取值范围内的随机攻击特征；DoS 样本的ID不超过7"""
    x = rng.integers(0, 2, size=(n, N_FEATURES)).astype(np.float32)
    x[:, DLC_INDEX] = rng.integers(0, MAX_DLC + 1, size=n)
    x[:, DTIME_INDEX] = rng.uniform(0.0, MAX_DTIME, size=n)
    edge = rng.random(n) < 0.1
    x[edge, DTIME_INDEX] = rng.choice([0.0, MAX_DTIME], size=int(edge.sum()))
    if scenario is Scenario.DOS:
        x[:, ID_SLICE.start:ID_SLICE.stop - 3] = 0
    return x


def _random_stub(rng) -> LinearStub:
    weights = rng.normal(size=N_FEATURES)
    weights[DLC_INDEX] /= 4
    weights[DTIME_INDEX] /= 50
    return LinearStub(weights, rng.uniform(0.0, 2.0))


def _replay(model, x, mask, max_iterations: int):
    """逐步重放迭代生成，检查每一步的约束"""
    bounds = mask.bounds
    last_move = np.zeros(N_FEATURES)
    moves_per_feature = np.zeros(N_FEATURES, dtype=np.int64)
    iterations, exhausted = 0, False
    while model.predict(x[None])[0] != 0 and iterations < max_iterations:
        out, index = fgsm_step(model, x, 0, mask, last_move=last_move)
        if index is None:
            assert np.array_equal(out, x)
            exhausted = True
            break
        assert np.flatnonzero(out != x).tolist() == [index]
        assert index in mask.allowed
        assert bounds[index, 0] <= out[index] <= bounds[index, 1]
        assert abs(float(out[index]) - float(x[index])) <= 1.0
        move = np.sign(float(out[index]) - float(x[index]))
        assert move != -last_move[index]
        last_move[index] = move
        moves_per_feature[index] += 1
        x = out
        iterations += 1
    # 二值特征至多翻转一次
    binary = np.ones(N_FEATURES, dtype=bool)
    binary[[DLC_INDEX, DTIME_INDEX]] = False
    assert moves_per_feature[binary].max(initial=0) <= 1
    return x, iterations, exhausted


def _check_batch(model, original, perturbed, success, iterations, scenario, max_iterations):
    mask = scenario_mask(scenario)
    bounds = mask.bounds
    changed = perturbed != original
    forbidden = np.ones(N_FEATURES, dtype=bool)
    forbidden[list(mask.allowed)] = False
    assert not changed[:, forbidden].any()
    assert np.all(perturbed >= bounds[:, 0]) and np.all(perturbed <= bounds[:, 1])
    assert np.all(iterations <= max_iterations)
    assert np.all(changed.sum(axis=1) <= iterations)
    assert np.all(np.abs(perturbed - original).sum(axis=1) <= iterations + 1e-4)
    assert np.array_equal(success, model.predict(perturbed) == 0)
    if scenario is Scenario.DOS:
        assert np.all(decode_can_ids(perturbed) <= 7)


class TestGenerationProperties:
    """随机样本上的生成性质（每个场景250条）"""

    @pytest.mark.parametrize("scenario", list(Scenario))
    def test_linear_models(self, scenario):
        """测试随机线性模型上的单步、掩码、边界与成功判定性质"""
        rng = np.random.default_rng(list(Scenario).index(scenario))
        mask = scenario_mask(scenario)
        for _ in range(SAMPLES_PER_SCENARIO // 50):
            model = _random_stub(rng)
            config = _config(model, max_iterations=50)
            original = _random_attacks(rng, scenario, 50)
            perturbed, success, iterations = generate_batch(model, original, scenario, config)
            _check_batch(model, original, perturbed, success, iterations, scenario, config.max_iterations)

            for row in range(len(original)):
                replayed, steps, exhausted = _replay(model, original[row].copy(), mask, config.max_iterations)
                assert np.array_equal(replayed, perturbed[row])
                assert steps == iterations[row]
                if not success[row]:
                    assert exhausted or steps == config.max_iterations

    @pytest.mark.parametrize("scenario", list(Scenario))
    def test_trained_dnn(self, trained_dnn, split, scenario):
        """测试小规模 BL-DNN 上的同一组性质"""
        rng = np.random.default_rng(100 + list(Scenario).index(scenario))
        view = scenario_view(split.dataset_b, scenario)
        real = view.features[view.labels == 1][:SAMPLES_PER_SCENARIO // 2].astype(np.float32)
        original = np.concatenate([real, _random_attacks(rng, scenario, SAMPLES_PER_SCENARIO - len(real))])
        config = _config(trained_dnn, max_iterations=20)
        perturbed, success, iterations = generate_batch(trained_dnn, original, scenario, config)
        _check_batch(trained_dnn, original, perturbed, success, iterations, scenario, config.max_iterations)

        mask = scenario_mask(scenario)
        for row in rng.choice(len(original), size=20, replace=False):
            _, steps, _ = _replay(trained_dnn, original[row].copy(), mask, config.max_iterations)
            assert steps <= config.max_iterations
