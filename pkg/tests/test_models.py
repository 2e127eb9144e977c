#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
IDS模型族测试
BL-DNN、BL-Ensemble、SOTA-CNN、SOTA-LSTM
"""

import json

import numpy as np
import pytest
import torch

from src.core.config import CnnConfig, LstmConfig, build_run_config
from src.core.exceptions import CapabilityError, DatasetError, GeometryError, MissingArtifactError
from src.data.canlog import CanRecord, Label
from src.data.pipeline import DATA_SLICE, N_FEATURES, SampleSet, encode_records, window_frames
from src.engine.layers import Dense, seeded_init
from src.harness.metrics import evaluate
from src.models import (
    BlDnnModel,
    EnsembleModel,
    ModelFamily,
    SotaCnnModel,
    SotaLstmModel,
    checkpoint_path,
    hard_vote,
    load_model,
    percentile_threshold,
    train_ensemble,
    train_sota_cnn,
    train_sota_lstm,
)
from src.models.sota_cnn import encode_frames
from src.models.sota_lstm import build_id_sequences


def _message_level(samples: SampleSet) -> SampleSet:
    out = samples.take(np.arange(len(samples)))
    out.has_stream_metadata = False
    return out


@pytest.fixture(scope="module")
def trained_ensemble(split, run_config):
    return train_ensemble(split.dataset_a, seed=11, config=run_config.ensemble)


@pytest.fixture(scope="module")
def trained_cnn(split, run_config):
    return train_sota_cnn(split.dataset_a, seed=11, config=run_config.cnn,
                          pipeline=run_config.pipeline, dropout_seed=13)


@pytest.fixture(scope="module")
def trained_lstm(split, run_config):
    return train_sota_lstm(split.dataset_a, seed=11, config=run_config.lstm,
                           pipeline=run_config.pipeline, dropout_seed=13)


class TestBlDnn:
    """BL-DNN测试"""

    def test_learns_separable_traffic(self, trained_dnn, split):
        """测试在干净数据上的检测能力"""
        metrics = evaluate(trained_dnn, split.dataset_b)
        assert metrics.total == len(split.dataset_b)
        assert metrics.accuracy > 0.75

    def test_probabilities(self, trained_dnn, split):
        """测试输出为两类概率"""
        probs = trained_dnn.predict_proba(split.dataset_c.features[:10])
        assert probs.shape == (10, 2)
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-5)

    def test_input_gradient_matches_single(self, trained_dnn, split):
        """测试批量梯度与逐条梯度一致"""
        batch = split.dataset_b.features[:4]
        grads = trained_dnn.input_gradient(batch, target_label=0)
        assert grads.shape == (4, N_FEATURES)
        single = trained_dnn.input_gradient(batch[2], target_label=0)
        assert single.shape == (N_FEATURES,)
        assert np.allclose(grads[2], single, atol=1e-6)

    def test_wrong_geometry(self, trained_dnn):
        """测试输入维度错误"""
        with pytest.raises(GeometryError):
            trained_dnn.predict(np.zeros((3, 76)))

    def test_single_class_rejected(self, split, run_config):
        """测试单一类别训练集"""
        from src.models.bl_dnn import train_bl_dnn

        normal = split.dataset_a.take(np.flatnonzero(split.dataset_a.labels == 0))
        with pytest.raises(DatasetError):
            train_bl_dnn(normal, seed=0, config=run_config.dnn)

    def test_checkpoint(self, trained_dnn, split, tmp_path):
        """测试检查点读回后预测不变"""
        path = checkpoint_path(tmp_path, ModelFamily.BL_DNN)
        assert path.suffix == ".pt"
        trained_dnn.save(path)
        restored = load_model(path)
        assert isinstance(restored, BlDnnModel)
        x = split.dataset_c.features
        assert np.array_equal(restored.predict(x), trained_dnn.predict(x))
        assert restored.adam_state is not None

    def test_clone_is_independent(self, trained_dnn, split):
        """测试克隆后继续训练不影响原模型"""
        before = trained_dnn.predict_proba(split.dataset_c.features)
        twin = trained_dnn.clone()
        twin.fit(split.dataset_b, epochs=1, patience=1)
        assert np.array_equal(trained_dnn.predict_proba(split.dataset_c.features), before)


class TestEnsemble:
    """BL-Ensemble测试"""

    def test_hard_vote(self):
        """测试硬投票"""
        votes = np.array([[1, 1, 1, 0, 0], [1, 1, 0, 0, 0], [0, 0, 0, 0, 0], [1, 1, 1, 1, 1]])
        assert hard_vote(votes).tolist() == [1, 0, 0, 1]

    def test_predict_is_majority(self, trained_ensemble, split):
        """测试预测等于五个子学习器的多数票"""
        x = split.dataset_b.features[:50]
        subs = trained_ensemble.sub_predictions(x)
        assert subs.shape == (50, 5)
        assert set(np.unique(subs)) <= {0, 1}
        assert np.array_equal(trained_ensemble.predict(x), hard_vote(subs))
        assert set(trained_ensemble.sub_learners) == {
            "logistic_regression", "decision_tree", "linear_svm", "knn", "gaussian_nb"
        }

    def test_no_gradient(self, trained_ensemble, split):
        """测试集成模型不提供梯度"""
        assert not trained_ensemble.supports_gradient
        with pytest.raises(CapabilityError):
            trained_ensemble.input_gradient(split.dataset_b.features[:1], 0)

    def test_checkpoint(self, trained_ensemble, split, tmp_path):
        """测试joblib检查点"""
        path = checkpoint_path(tmp_path, ModelFamily.BL_ENSEMBLE)
        assert path.suffix == ".joblib"
        trained_ensemble.save(path)
        restored = load_model(path)
        assert isinstance(restored, EnsembleModel)
        x = split.dataset_c.features
        assert np.array_equal(restored.predict(x), trained_ensemble.predict(x))


class TestSotaCnn:
    """SOTA-CNN测试"""

    def test_frame_encoding(self, split):
        """测试帧矩阵每行为18个0加11位ID"""
        frames = window_frames(split.dataset_b, width=29)
        encoded = encode_frames(split.dataset_b, frames[:3])
        assert encoded.shape == (3, 29, 29)
        assert encoded[:, :, :18].sum() == 0
        first = split.dataset_b.features[frames[0].indices[0], :11]
        assert np.array_equal(encoded[0, 0, 18:], first)

    def test_frame_geometry(self):
        """测试 28x29 的帧被拒绝"""
        model = SotaCnnModel()
        with pytest.raises(GeometryError):
            model.predict(np.zeros((1, 28, 29)))
        assert model.predict_proba(np.zeros((2, 29, 29))).shape == (2, 2)
        assert model.predict_proba(np.zeros((0, 29, 29))).shape == (0, 2)

    def test_message_level_dataset_rejected(self, split):
        """测试缺少流元数据的数据集无法分帧"""
        with pytest.raises(GeometryError):
            SotaCnnModel().build_view(_message_level(split.dataset_b))

    def test_view_labels(self, split):
        """测试帧视图标签来自攻击阈值"""
        view = SotaCnnModel().build_view(split.dataset_b)
        assert view.inputs.shape[1:] == (29, 29)
        assert len(view) == len(view.extras["log_ids"])
        assert set(np.unique(view.labels)) <= {0, 1}

    @pytest.mark.slow
    def test_train_and_checkpoint(self, trained_cnn, split, tmp_path):
        """测试训练、梯度与检查点"""
        view = trained_cnn.build_view(split.dataset_c)
        predictions = trained_cnn.predict_view(view)
        assert predictions.shape == view.labels.shape
        grad = trained_cnn.input_gradient(view.inputs[:2], target_label=0)
        assert grad.shape == (2, 29, 29)

        path = checkpoint_path(tmp_path, ModelFamily.SOTA_CNN)
        trained_cnn.save(path)
        restored = load_model(path)
        assert isinstance(restored, SotaCnnModel)
        assert np.array_equal(restored.predict_view(view), predictions)


class TestSotaLstm:
    """SOTA-LSTM测试"""

    def test_percentile(self):
        """测试 {1..100} 的第99百分位为 99.01"""
        assert percentile_threshold(np.arange(1, 101)) == pytest.approx(99.01)
        with pytest.raises(DatasetError):
            percentile_threshold(np.array([]))

    def test_id_sequences(self):
        """测试逐ID历史序列与左侧补0"""
        records = [
            CanRecord(0.00, 0x100, 1, (0x01,), Label.NORMAL),
            CanRecord(0.01, 0x200, 1, (0x02,), Label.NORMAL),
            CanRecord(0.02, 0x100, 1, (0x03,), Label.NORMAL),
            CanRecord(0.03, 0x100, 1, (0x04,), Label.ATTACK),
        ]
        samples = encode_records(records)
        seqs = build_id_sequences(samples, sequence_length=4)
        assert seqs.histories.shape == (4, 4, N_FEATURES)
        assert seqs.can_ids.tolist() == [0x100, 0x200, 0x100, 0x100]
        assert seqs.labels.tolist() == [0, 0, 0, 1]

        last = seqs.histories[3]
        assert np.array_equal(last[-1], samples.features[2])
        assert np.array_equal(last[-2], samples.features[0])
        assert not last[:2].any()
        assert not seqs.histories[0].any()
        assert np.array_equal(seqs.targets[3], samples.features[3, DATA_SLICE])

    def test_no_trainable_id(self, run_config):
        """测试没有足够正常消息的ID时训练失败"""
        samples = encode_records([CanRecord(i * 0.01, 0x100, 0, (), Label.NORMAL) for i in range(5)])
        with pytest.raises(DatasetError):
            train_sota_lstm(samples, seed=0, config=run_config.lstm, pipeline=run_config.pipeline)

    def test_minimum_messages_per_id(self):
        """测试ID至少需要 sequence_length+1 条正常消息才建模"""
        config = build_run_config({}, ["pipeline.sequence_length=4", "lstm.epochs=1", "lstm.width_scale=0.25"])
        records = [CanRecord(i * 0.01, 0x100, 0, (), Label.NORMAL) for i in range(5)]
        records += [CanRecord(0.1 + i * 0.01, 0x200, 0, (), Label.NORMAL) for i in range(4)]
        samples = encode_records(records)
        model = train_sota_lstm(samples, seed=0, config=config.lstm, pipeline=config.pipeline)
        assert set(model.detectors) == {0x100}

    def test_unseen_id_is_attack(self):
        """测试未训练的ID判为攻击"""
        model = SotaLstmModel()
        extras = {"can_ids": np.array([0x7FF]), "targets": np.zeros((1, 64))}
        inputs = np.zeros((1, 20, N_FEATURES))
        assert model.predict(inputs, extras).tolist() == [1]
        assert np.isinf(model.prediction_errors(inputs, extras)[0])
        assert not model.input_gradient(inputs, 0, extras).any()

    def test_missing_extras(self):
        """测试缺少逐序列ID信息"""
        with pytest.raises(GeometryError):
            SotaLstmModel().predict(np.zeros((1, 20, N_FEATURES)))

    @pytest.mark.slow
    def test_train_thresholds_and_checkpoint(self, trained_lstm, split, tmp_path):
        """测试阈值来自训练误差，检查点可复现阈值"""
        assert trained_lstm.detectors
        for detector in trained_lstm.detectors.values():
            assert detector.threshold == pytest.approx(percentile_threshold(detector.errors))

        view = trained_lstm.build_view(split.dataset_c)
        predictions = trained_lstm.predict_view(view)
        assert predictions.shape == view.labels.shape

        path = checkpoint_path(tmp_path, ModelFamily.SOTA_LSTM)
        trained_lstm.save(path)
        manifest = json.loads(path.with_suffix(".manifest.json").read_text(encoding="utf-8"))
        assert len(manifest["sub_models"]) == len(trained_lstm.detectors)

        restored = load_model(path)
        assert isinstance(restored, SotaLstmModel)
        assert {c: d.threshold for c, d in restored.detectors.items()} == \
               {c: d.threshold for c, d in trained_lstm.detectors.items()}
        assert np.array_equal(restored.predict_view(view), predictions)


class TestInitialization:
    """初始化随机源测试"""

    def test_global_rng_untouched(self):
        """测试构造模型不改变全局随机状态"""
        state = torch.get_rng_state()
        BlDnnModel(seed=3)
        SotaCnnModel(CnnConfig(width_scale=0.125), seed=3)
        SotaLstmModel(LstmConfig(width_scale=0.25), seed=3)._new_network(0x100)
        assert torch.equal(torch.get_rng_state(), state)

    def test_same_seed_same_weights(self):
        """测试相同种子得到相同初始权重，与全局种子无关"""
        torch.manual_seed(1)
        first = BlDnnModel(seed=5).network.state_dict()
        torch.manual_seed(2)
        second = BlDnnModel(seed=5).network.state_dict()
        other = BlDnnModel(seed=6).network.state_dict()
        assert all(torch.equal(first[k], second[k]) for k in first)
        assert not torch.equal(first["hidden1.weight"], other["hidden1.weight"])

    def test_seeded_init_scope(self):
        """测试生成器只在块内生效"""
        with seeded_init(9):
            inside = Dense(4, 3).weight.detach().clone()
        with seeded_init(9):
            again = Dense(4, 3).weight.detach().clone()
        assert torch.equal(inside, again)
        torch.manual_seed(0)
        outside = Dense(4, 3).weight.detach().clone()
        torch.manual_seed(0)
        assert torch.equal(Dense(4, 3).weight.detach(), outside)


class TestRegistry:
    """检查点注册表测试"""

    def test_missing_checkpoint(self, tmp_path):
        """测试缺少检查点时指明上游命令"""
        with pytest.raises(MissingArtifactError) as info:
            load_model(tmp_path / "bl_dnn.pt")
        assert info.value.producer == "train"
