import csv
import json
import warnings

import numpy as np
import pytest
import torch
from torch import nn
from tensorly.testing import assert_, assert_array_almost_equal

from .._config import TrainConfig, load_config, save_config, config_from_dict, lr_schedule, with_weights
from .._trainer import (build_state, train_step, failure_check, run_training, restore_state,
                        StructurePreservingCycleGAN, LOG_FIELDS)
from ...exceptions import ConfigurationError, TrainingFaultError
from ...networks import GeneratorSpec, DiscriminatorSpec, NetworkHandle, build_discriminator
from ...preprocess import CropSpec
from ...utils import LossWeights
from ...volume import CTVolume, Modality, save_volume

SMALL_GENERATOR = GeneratorSpec(stem_channels=8, encoder_channels=(8, 8, 16), decoder_channels=(8, 8, 8),
                                n_residual_blocks=2, noise_after_block=1)
SMALL_DISCRIMINATOR = DiscriminatorSpec(channels=(8, 8, 16, 16, 16, 1))


def small_config(**values):
    base = dict(epochs_constant=1, epochs_decay=1, crop=CropSpec(32, 32, jitter=4), generator=SMALL_GENERATOR,
                discriminator=SMALL_DISCRIMINATOR, checkpoint_every=1)
    base.update(values)
    return TrainConfig(**base)


def body_volume(path, hu, modality, seed, n_slices=5, size=40):
    """Ellipse of soft tissue in air, written to ``path``"""
    rng = np.random.default_rng(seed)
    rows, cols = np.mgrid[:size, :size]
    body = ((rows - size / 2) / (0.4 * size)) ** 2 + ((cols - size / 2) / (0.45 * size)) ** 2 <= 1
    voxels = np.full((size, size, n_slices), -1000.0)
    for k in range(n_slices):
        voxels[..., k][body] = rng.normal(hu, 20, size=body.sum())
    return save_volume(CTVolume(voxels, modality=modality, patient_id=path.name), path)


def volume_sets(tmp_path, n_volumes=2):
    cb = [body_volume(tmp_path / 'cb_{}'.format(i), -100, Modality.CBCT, i) for i in range(n_volumes)]
    plan = [body_volume(tmp_path / 'plan_{}'.format(i), 40, Modality.PLAN_CT, 10 + i) for i in range(n_volumes)]
    return cb, plan


def read_log(path):
    with open(path, newline='') as handle:
        return list(csv.DictReader(handle))


def test_lr_schedule():
    """Test the constant phase, the linear decay and the range check"""
    config = TrainConfig()
    assert_(lr_schedule(0, config) == 1e-4)
    assert_(lr_schedule(10, config) == 1e-4)
    assert_(lr_schedule(24, config) == 1e-4)
    assert_array_almost_equal(lr_schedule(37, config), 5.2e-5, decimal=15)
    assert_(lr_schedule(50, config) == 0)
    with pytest.raises(ValueError):
        lr_schedule(51, config)
    with pytest.raises(ValueError):
        lr_schedule(-1, config)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        TrainConfig(base_lr=0)
    with pytest.raises(ConfigurationError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigurationError):
        TrainConfig(epochs_constant=0, epochs_decay=0)
    with pytest.raises(ConfigurationError):
        config_from_dict({'learning_rate': 1e-3})
    with pytest.raises(ConfigurationError):
        config_from_dict({'weights.lambda_sharpness': 1.0})
    with pytest.raises(ConfigurationError):
        config_from_dict({'weights': {'lambda_cycle': -1.0}})


def test_config_file_and_overrides(tmp_path):
    """Test JSON round trip, dotted keys in the file and override precedence"""
    config = small_config(seed=3, weights=LossWeights(lambda_air=0.0))
    path = save_config(config, tmp_path / 'config.json')
    assert_(load_config(path) == config)

    values = json.loads(path.read_text())
    values.pop('weights')
    values['weights.lambda_cycle'] = 5.0
    values['crop.height'] = 24
    path.write_text(json.dumps(values))
    loaded = load_config(path, overrides={'crop.height': 16, 'seed': 9})
    assert_(loaded.weights.lambda_cycle == 5.0 and loaded.weights.lambda_air == 1.0)
    assert_(loaded.crop == CropSpec(16, 32, jitter=4) and loaded.seed == 9)

    ablation = with_weights(config, lambda_grad=0.0)
    assert_(ablation.weights.lambda_grad == 0.0 and ablation.weights.lambda_air == 0.0)


def identity_networks():
    networks = {}
    for name in ('G_CP', 'G_PC'):
        conv = nn.Conv2d(1, 1, kernel_size=1, bias=False)
        with torch.no_grad():
            conv.weight.fill_(1.0)
        networks[name] = NetworkHandle(conv, None)
    networks['D_P'] = build_discriminator(SMALL_DISCRIMINATOR, random_state=0)
    networks['D_C'] = build_discriminator(SMALL_DISCRIMINATOR, random_state=1)
    return networks


def test_train_step_identity_is_fixed_point():
    """Test that identity generators on identical inputs get a zero update from the cycle loss alone"""
    weights = LossWeights(lambda_cycle=10.0, lambda_adv=0.0, lambda_grad=0.0, lambda_idem=0.0, lambda_air=0.0,
                          lambda_tv=0.0, lambda_D=0.0)
    state = build_state(small_config(weights=weights), identity_networks())
    x = torch.rand(1, 1, 32, 32) * 2 - 1
    state, breakdown = train_step(state, x, x.clone())
    assert_(breakdown.cycle_a == 0 and breakdown.cycle_b == 0 and breakdown.idem == 0)
    assert_(breakdown.loss_g == 0)
    for name in ('G_CP', 'G_PC'):
        assert_(torch.equal(state.module(name).weight, torch.ones(1, 1, 1, 1)))


def test_train_step_update_parity():
    """Test that every parameter of the four networks is updated once per step"""
    state = build_state(small_config())
    rng = np.random.default_rng(0)
    for _ in range(3):
        x, y = rng.uniform(-1, 1, size=(2, 1, 1, 32, 32)).astype(np.float32)
        state, breakdown = train_step(state, x, y)
    assert_(state.iteration == 3)
    for key, optimizer in state.optimizers.items():
        params = [p for group in optimizer.param_groups for p in group['params']]
        assert_(params)
        for param in params:
            assert_(int(optimizer.state[param]['step']) == 3)
    assert_(all(param.requires_grad for handle in state.networks.values() for param in handle.module.parameters()))
    assert_(breakdown.loss_g > 0 and breakdown.loss_d > 0)


def test_train_step_non_finite():
    """Test that a non-finite loss aborts the step with its breakdown"""
    state = build_state(small_config())
    x = np.zeros((1, 1, 32, 32), dtype=np.float32)
    x[0, 0, 5, 5] = np.nan
    with pytest.raises(TrainingFaultError) as error:
        train_step(state, x, np.zeros_like(x))
    assert_(error.value.breakdown is not None)
    assert_(state.iteration == 0)


def test_train_step_shape_mismatch():
    state = build_state(small_config())
    with pytest.raises(ValueError):
        train_step(state, np.zeros((32, 32)), np.zeros((40, 40)))


def test_run_training_counts(tmp_path):
    """Test steps, log rows and checkpoints of 2 epochs over 10 + 10 slices"""
    cb, plan = volume_sets(tmp_path)
    config = small_config(cb_paths=cb, plan_paths=plan, out_dir=tmp_path / 'run')
    checkpoint_path, log_path = run_training(config)

    rows = read_log(log_path)
    assert_(len(rows) == 20)
    assert_(tuple(rows[0]) == LOG_FIELDS)
    assert_([int(row['iteration']) for row in rows] == list(range(1, 21)))
    assert_([int(row['epoch']) for row in rows] == [0] * 10 + [1] * 10)
    assert_({float(row['lr']) for row in rows} == {1e-4})
    for name in ('checkpoint_epoch_001.pt', 'checkpoint_epoch_002.pt', 'config.json'):
        assert_((tmp_path / 'run' / name).exists())

    state, _ = restore_state(config, checkpoint_path)
    assert_((state.epoch, state.iteration) == (2, 20))
    expected = np.mean([float(row['cycle_a']) for row in rows[10:]])
    assert_array_almost_equal(state.reference_cycle_loss, expected, decimal=10)


def test_run_training_unequal_sets(tmp_path):
    """Test that the smaller set fixes the number of steps per epoch"""
    cb, plan = volume_sets(tmp_path)
    plan.append(body_volume(tmp_path / 'plan_extra', 40, Modality.PLAN_CT, 99))
    config = small_config(cb_paths=cb, plan_paths=plan, out_dir=tmp_path / 'run', epochs_decay=0, batch_size=3)
    _, log_path = run_training(config)
    assert_(len(read_log(log_path)) == 10 // 3)


def test_resume_reproduces_trajectory(tmp_path):
    """Test that resuming after epoch 1 gives the same epoch 2 losses"""
    cb, plan = volume_sets(tmp_path)
    config = small_config(cb_paths=cb, plan_paths=plan, out_dir=tmp_path / 'full')
    _, full_log = run_training(config)

    resumed = small_config(cb_paths=cb, plan_paths=plan, out_dir=tmp_path / 'resumed',
                           resume_from=tmp_path / 'full' / 'checkpoint_epoch_001.pt')
    _, resumed_log = run_training(resumed)

    full_rows, resumed_rows = read_log(full_log)[10:], read_log(resumed_log)
    assert_(len(resumed_rows) == 10)
    assert_([row['iteration'] for row in resumed_rows] == [row['iteration'] for row in full_rows])
    for field in ('cycle_a', 'cycle_b', 'adv', 'd', 'loss_g'):
        assert_array_almost_equal([float(row[field]) for row in resumed_rows],
                                  [float(row[field]) for row in full_rows], decimal=6)


def test_failure_check():
    """Test the three-times threshold of the failure monitor"""
    assert_(failure_check(1.0, 1.0) == 'ok')
    assert_(failure_check(3.01, 1.0) == 'suspect')
    assert_(failure_check(2.99, 1.0) == 'ok')
    assert_(failure_check(0.3, 0.1) == 'ok')
    with pytest.raises(ValueError):
        failure_check(1.0, 0.0)


def test_estimator_fit_transform():
    """Test the estimator wrapper on in-memory slices"""
    rng = np.random.default_rng(1)
    cb = rng.uniform(-1, 0, size=(4, 40, 40)).astype(np.float32)
    plan = rng.uniform(0, 1, size=(5, 40, 40)).astype(np.float32)
    model = StructurePreservingCycleGAN(small_config(), epochs_decay=0, seed=4).fit(cb, plan)
    assert_(len(model.history_) == 4 and len(model.epoch_cycle_losses_) == 1)
    assert_(model.reference_cycle_loss_ == model.epoch_cycle_losses_[-1])

    translated = model.transform(cb[:, 4:36, 4:36])
    assert_(translated.shape == (4, 32, 32) and translated.dtype == np.float32)
    assert_(np.all(np.abs(translated) <= 1))
    assert_array_almost_equal(translated, model.transform(cb[:, 4:36, 4:36]), decimal=6)
    assert_(model.cycle(cb[:, 4:36, 4:36]).shape == (4, 32, 32))
    assert_(model.transform(plan[:2, :32, :32], direction='P_to_C').shape == (2, 32, 32))


def test_estimator_save_keeps_generator_state(tmp_path):
    """Test that a saved estimator resumes with the shuffle state reached by fit"""
    rng = np.random.default_rng(2)
    cb = rng.uniform(-1, 0, size=(3, 40, 40)).astype(np.float32)
    plan = rng.uniform(0, 1, size=(3, 40, 40)).astype(np.float32)
    model = StructurePreservingCycleGAN(small_config(), epochs_decay=0, seed=6).fit(cb, plan)
    path = model.save(tmp_path / 'model.pt')

    _, restored = restore_state(model.config, path)
    assert_(restored.bit_generator.state == model.rng_.bit_generator.state)
    assert_(restored.bit_generator.state != np.random.default_rng(6).bit_generator.state)


def test_train_step_logs_plain_floats():
    """Test that the breakdown holds python floats taken without grad-tensor conversion warnings"""
    state = build_state(small_config())
    x, y = np.random.default_rng(3).uniform(-1, 1, size=(2, 1, 1, 32, 32)).astype(np.float32)
    with warnings.catch_warnings():
        warnings.filterwarnings('error', message='.*requires_grad.*')
        _, breakdown = train_step(state, x, y)
    assert_(all(type(value) is float for value in breakdown.as_dict().values()))
