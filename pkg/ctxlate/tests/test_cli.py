import json

import numpy as np
import pandas as pd
import pytest
from tensorly.testing import assert_

from ..cli import main, build_parser
from ..data import load_manifest
from ..volume import Modality, load_volume

SMALL_NETWORKS = {'generator': {'stem_channels': 8, 'encoder_channels': [8, 8, 16], 'decoder_channels': [8, 8, 8],
                                'n_residual_blocks': 2, 'noise_after_block': 1},
                  'discriminator': {'channels': [8, 8, 16, 16, 16, 1]},
                  'crop': {'height': 32, 'width': 32, 'jitter': 4}}


@pytest.fixture(scope='module')
def dataset(tmp_path_factory):
    out_dir = tmp_path_factory.mktemp('phantoms')
    assert_(main(['phantom', '--patients', '2', '--out', str(out_dir), '--canvas', '128', '128',
                  '--slices', '3', '--seed', '5']) == 0)
    return out_dir


@pytest.fixture(scope='module')
def trained(dataset, tmp_path_factory):
    run_dir = tmp_path_factory.mktemp('run')
    config = run_dir / 'small.json'
    config.write_text(json.dumps(SMALL_NETWORKS))
    code = main(['train', '--config', str(config), '--manifest', str(dataset), '--holdout', '1',
                 '--epochs', '1', '--seed', '3', '--out', str(run_dir)])
    assert_(code == 0)
    return run_dir


def test_phantom_command(dataset):
    manifest = load_manifest(dataset)
    assert_([patient.patient_id for patient in manifest.patients] == ['phantom_000', 'phantom_001'])
    truth = load_volume(manifest.patients[0].truth)
    assert_(truth.shape == (128, 128, 3) and truth.modality == Modality.PLAN_CT)
    assert_(manifest.phantom_spec['seed'] == 5)


def test_preprocess_command(dataset, tmp_path):
    manifest = load_manifest(dataset)
    source = manifest.patients[0].cbct
    assert_(main(['preprocess', '--input', str(source), '--out', str(tmp_path), '--crop', '96', '112']) == 0)
    masked = load_volume(tmp_path / 'phantom_000_cbct_masked.json')
    assert_(masked.shape == (96, 112, 3) and masked.modality == Modality.CBCT)


def test_train_command(trained):
    saved = json.loads((trained / 'config.json').read_text())
    assert_((saved['epochs_constant'], saved['epochs_decay'], saved['seed']) == (1, 0, 3))
    assert_(len(saved['cb_paths']) == 1 and saved['cb_paths'][0].endswith('phantom_000_cbct.json'))
    assert_((trained / 'checkpoint_final.pt').exists())
    log = pd.read_csv(trained / 'training_log.csv')
    assert_(len(log) == 3 and np.all(np.isfinite(log['cycle_a'])))


def test_train_seed_from_environment(dataset, tmp_path, monkeypatch):
    """Test that the environment seed only applies when neither flag nor config sets one"""
    config = tmp_path / 'small.json'
    config.write_text(json.dumps(dict(SMALL_NETWORKS, epochs_constant=1, epochs_decay=0)))
    monkeypatch.setenv('CTXLATE_SEED', '9')
    assert_(main(['train', '--config', str(config), '--manifest', str(dataset), '--holdout', '1',
                  '--out', str(tmp_path / 'env')]) == 0)
    assert_(json.loads((tmp_path / 'env' / 'config.json').read_text())['seed'] == 9)

    config.write_text(json.dumps(dict(SMALL_NETWORKS, epochs_constant=1, epochs_decay=0, seed=4)))
    assert_(main(['train', '--config', str(config), '--manifest', str(dataset), '--holdout', '1',
                  '--out', str(tmp_path / 'file')]) == 0)
    assert_(json.loads((tmp_path / 'file' / 'config.json').read_text())['seed'] == 4)

    config.write_text(json.dumps(dict(SMALL_NETWORKS, epochs_constant=1, epochs_decay=0)))
    assert_(main(['train', '--config', str(config), '--manifest', str(dataset), '--holdout', '1',
                  '--set', 'seed=5', '--out', str(tmp_path / 'set')]) == 0)
    assert_(json.loads((tmp_path / 'set' / 'config.json').read_text())['seed'] == 5)


def test_translate_and_evaluate_commands(dataset, trained, tmp_path):
    patient = load_manifest(dataset).patients[1]
    output = tmp_path / 'syn.json'
    assert_(main(['translate', '--checkpoint', str(trained / 'checkpoint_final.pt'), '--input', str(patient.cbct),
                  '--output', str(output), '--crop', '32', '32', '--cycle']) == 0)
    synthetic = load_volume(output)
    assert_(synthetic.shape == (128, 128, 3) and synthetic.modality == Modality.SYN_PLAN_CT)
    assert_(load_volume(tmp_path / 'syn_cycle.json').modality == Modality.CBCT)
    assert_(np.load(tmp_path / 'syn_cycle_difference.npy').shape == (32, 32, 3))
    assert_((tmp_path / 'syn_cycle_difference.png').exists())

    report_dir = tmp_path / 'report'
    assert_(main(['evaluate', '--manifest', str(dataset), '--patient', 'phantom_001',
                  '--volume', 'synplanct={}'.format(output), '--out', str(report_dir), '--no-plots',
                  '--ssim-rois', '3']) == 0)
    report = json.loads((report_dir / 'report.json').read_text())
    assert_(set(report['self_ssim']) == {'truth', 'cbct', 'synplanct'})
    assert_(set(pd.read_csv(report_dir / 'roi_stats.csv')['volume']) == {'truth', 'cbct', 'synplanct'})


def test_exit_codes(dataset, tmp_path, monkeypatch, capsys):
    assert_(main(['train', '--out', str(tmp_path)]) == 2)
    assert_('configuration error' in capsys.readouterr().err)
    assert_(main(['translate', '--checkpoint', str(tmp_path / 'none.pt'), '--input', str(tmp_path / 'none.json'),
                  '--output', str(tmp_path / 'out')]) == 1)
    assert_(main(['evaluate', '--manifest', str(dataset), '--patient', 'nobody', '--out', str(tmp_path)]) == 2)
    assert_(main(['sideways']) == 2)
    monkeypatch.setenv('CTXLATE_SEED', 'abc')
    assert_(main(['phantom', '--patients', '1', '--out', str(tmp_path)]) == 2)


def test_parser_defaults():
    args = build_parser().parse_args(['translate', '--checkpoint', 'm.pt', '--input', 'a', '--output', 'b'])
    assert_(args.direction == 'C_to_P' and args.crop is None and not args.no_crop and args.batch_size == 8)


def test_phantom_command_is_deterministic(tmp_path):
    for name in ('a', 'b'):
        assert_(main(['phantom', '--patients', '1', '--out', str(tmp_path / name), '--canvas', '64', '64',
                      '--slices', '2', '--seed', '7']) == 0)
    for suffix in ('truth.raw', 'cbct.raw'):
        assert_((tmp_path / 'a' / 'phantom_000_{}'.format(suffix)).read_bytes()
                == (tmp_path / 'b' / 'phantom_000_{}'.format(suffix)).read_bytes())
    assert_(main(['phantom', '--patients', '1']) == 2)


def test_invalid_weights_stop_before_training(dataset, tmp_path):
    config = tmp_path / 'bad.json'
    config.write_text(json.dumps({'weights.lambda_air': -1.0}))
    assert_(main(['train', '--config', str(config), '--manifest', str(dataset), '--out', str(tmp_path / 'run')]) == 2)
    assert_(not (tmp_path / 'run' / 'config.json').exists())
