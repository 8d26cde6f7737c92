"""Versioned checkpoint files holding the four networks and the training state."""
import json
import logging
from dataclasses import dataclass, field, asdict
from pathlib import Path

import torch

from ._discriminator import build_discriminator
from ._generator import build_generator
from ._specs import GeneratorSpec, spec_from_dict
from ..exceptions import CheckpointError, ConfigurationError
from ..utils import LossWeights

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
GENERATOR_NAMES = ('G_CP', 'G_PC')
DISCRIMINATOR_NAMES = ('D_P', 'D_C')
NETWORK_NAMES = GENERATOR_NAMES + DISCRIMINATOR_NAMES


@dataclass
class Checkpoint:
    """Content of a checkpoint file.

    ``specs`` and ``state_dicts`` are keyed by network name ('G_CP', 'G_PC',
    'D_P', 'D_C'); a checkpoint written by translation tooling may only
    contain generators.
    """
    specs: dict
    state_dicts: dict
    optimizer_states: dict = field(default_factory=dict)
    epoch: int = 0
    iteration: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    reference_cycle_loss: float = None
    config: dict = field(default_factory=dict)
    rng_state: dict = field(default_factory=dict)
    path: Path = None

    def restore(self, name, device='cpu'):
        """Rebuilds network ``name`` from its spec and loads its weights."""
        if name not in self.specs:
            raise CheckpointError('checkpoint {} holds no network {!r}'.format(self.path, name))
        spec = self.specs[name]
        builder = build_generator if isinstance(spec, GeneratorSpec) else build_discriminator
        handle = builder(spec)
        try:
            handle.module.load_state_dict(self.state_dicts[name])
        except (RuntimeError, KeyError) as error:
            raise CheckpointError('checkpoint {}: weights of {} do not match its spec: {}'.format(
                self.path, name, error)) from error
        handle.module.to(device)
        return handle


def save_checkpoint(path, networks, optimizers=None, epoch=0, iteration=0, weights=LossWeights(),
                    reference_cycle_loss=None, config=None, rng_state=None):
    """Writes networks, optimizer states and counters to ``path``.

    Parameters
    ----------
    path : str or Path
    networks : mapping of name to NetworkHandle
    optimizers : mapping of name to torch.optim.Optimizer, optional
    epoch, iteration : int
        completed epochs and train steps
    weights : LossWeights
    reference_cycle_loss : float or None
    config : dict, optional
        JSON-serializable training configuration
    rng_state : dict, optional
        'torch' (ByteTensor) and 'numpy' (bit generator state dict)

    Returns
    -------
    Path
    """
    path = Path(path)
    unknown = set(networks) - set(NETWORK_NAMES)
    if unknown:
        raise ValueError('unknown network names {}'.format(sorted(unknown)))
    rng_state = dict(rng_state or {})
    payload = {
        'version': CHECKPOINT_VERSION,
        'specs': {name: handle.spec.as_dict() for name, handle in networks.items()},
        'state_dicts': {name: handle.module.state_dict() for name, handle in networks.items()},
        'optimizers': {name: optimizer.state_dict() for name, optimizer in (optimizers or {}).items()},
        'epoch': int(epoch),
        'iteration': int(iteration),
        'weights': asdict(weights),
        'reference_cycle_loss': None if reference_cycle_loss is None else float(reference_cycle_loss),
        # JSON strings keep arbitrary precision integers loadable with weights_only
        'config': json.dumps(config or {}),
        'rng_torch': rng_state.get('torch'),
        'rng_numpy': json.dumps(rng_state.get('numpy')),
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        torch.save(payload, path)
    except OSError as error:
        raise CheckpointError('could not write checkpoint {}: {}'.format(path, error)) from error
    logger.info('wrote checkpoint %s (epoch %d, iteration %d)', path, epoch, iteration)
    return path


def load_checkpoint(path, map_location='cpu'):
    """Reads a checkpoint written by ``save_checkpoint``.

    Raises
    ------
    FileNotFoundError
        if ``path`` does not exist
    CheckpointError
        if the file is not a readable checkpoint of the supported version
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError('checkpoint {} does not exist'.format(path))
    try:
        payload = torch.load(path, map_location=map_location, weights_only=True)
    except Exception as error:
        raise CheckpointError('checkpoint {} is corrupt or unreadable: {}'.format(path, error)) from error
    if not isinstance(payload, dict) or 'version' not in payload:
        raise CheckpointError('checkpoint {} has no version field'.format(path))
    if payload['version'] != CHECKPOINT_VERSION:
        raise CheckpointError('checkpoint {} has version {}, expected {}'.format(
            path, payload['version'], CHECKPOINT_VERSION))
    try:
        specs = {name: spec_from_dict(values) for name, values in payload['specs'].items()}
        weights = LossWeights(**payload['weights'])
        numpy_state = json.loads(payload['rng_numpy'])
        rng_state = {} if numpy_state is None and payload['rng_torch'] is None else {
            'torch': payload['rng_torch'], 'numpy': numpy_state}
        checkpoint = Checkpoint(specs=specs, state_dicts=payload['state_dicts'],
                                optimizer_states=payload['optimizers'], epoch=payload['epoch'],
                                iteration=payload['iteration'], weights=weights,
                                reference_cycle_loss=payload['reference_cycle_loss'],
                                config=json.loads(payload['config']), rng_state=rng_state, path=path)
    except (KeyError, TypeError, ConfigurationError, json.JSONDecodeError) as error:
        raise CheckpointError('checkpoint {} is malformed: {}'.format(path, error)) from error
    for name in checkpoint.specs:
        if name not in checkpoint.state_dicts:
            raise CheckpointError('checkpoint {}: no weights for {}'.format(path, name))
    return checkpoint
