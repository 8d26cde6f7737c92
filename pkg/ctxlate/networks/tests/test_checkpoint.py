import pytest
import torch
from tensorly.testing import assert_

from .._checkpoint import save_checkpoint, load_checkpoint, NETWORK_NAMES
from .._discriminator import build_discriminator
from .._generator import build_generator
from .._specs import GeneratorSpec, DiscriminatorSpec
from ...exceptions import CheckpointError
from ...utils import LossWeights

SMALL_GENERATOR = GeneratorSpec(stem_channels=8, encoder_channels=(8, 8, 16), decoder_channels=(8, 8, 8),
                                n_residual_blocks=2, noise_after_block=1)
SMALL_DISCRIMINATOR = DiscriminatorSpec(channels=(8, 8, 16, 16, 16, 1))


def small_networks():
    return {'G_CP': build_generator(SMALL_GENERATOR, random_state=0),
            'G_PC': build_generator(SMALL_GENERATOR, random_state=1),
            'D_P': build_discriminator(SMALL_DISCRIMINATOR, random_state=2),
            'D_C': build_discriminator(SMALL_DISCRIMINATOR, random_state=3)}


def test_checkpoint_round_trip(tmp_path):
    """Test that every network, counter and weight survives a save/load cycle"""
    networks = small_networks()
    optimizer = torch.optim.Adam(networks['G_CP'].module.parameters(), lr=1e-4)
    loss = networks['G_CP'].module(torch.rand(1, 1, 16, 16)).mean()
    loss.backward()
    optimizer.step()

    weights = LossWeights(lambda_air=0.0, lambda_grad=0.0)
    path = save_checkpoint(tmp_path / 'run' / 'epoch_3.pt', networks, {'G': optimizer}, epoch=3, iteration=30,
                           weights=weights, reference_cycle_loss=0.02, config={'seed': 7},
                           rng_state={'torch': torch.get_rng_state(), 'numpy': {'state': 2 ** 100}})
    checkpoint = load_checkpoint(path)
    assert_(set(checkpoint.specs) == set(NETWORK_NAMES))
    assert_(checkpoint.specs['G_CP'] == SMALL_GENERATOR and checkpoint.specs['D_C'] == SMALL_DISCRIMINATOR)
    assert_((checkpoint.epoch, checkpoint.iteration) == (3, 30))
    assert_(checkpoint.weights == weights and checkpoint.reference_cycle_loss == 0.02)
    assert_(checkpoint.config == {'seed': 7} and checkpoint.rng_state['numpy'] == {'state': 2 ** 100})
    assert_(checkpoint.optimizer_states['G']['state'][0]['step'] == 1)

    x = torch.rand(1, 1, 32, 32)
    with torch.no_grad():
        for name, handle in networks.items():
            restored = checkpoint.restore(name).module.eval()
            assert_(torch.equal(restored(x), handle.module.eval()(x)))


def test_checkpoint_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / 'missing.pt')

    corrupt = tmp_path / 'corrupt_file.pt'
    corrupt.write_bytes(b'not a checkpoint')
    with pytest.raises(CheckpointError, match='corrupt_file.pt'):
        load_checkpoint(corrupt)

    future = tmp_path / 'future.pt'
    torch.save({'version': 99}, future)
    with pytest.raises(CheckpointError, match='version'):
        load_checkpoint(future)

    path = save_checkpoint(tmp_path / 'generators.pt', {'G_CP': build_generator(SMALL_GENERATOR)})
    checkpoint = load_checkpoint(path)
    with pytest.raises(CheckpointError):
        checkpoint.restore('G_PC')
    checkpoint.specs['G_CP'] = GeneratorSpec()
    with pytest.raises(CheckpointError):
        checkpoint.restore('G_CP')
