import json
import logging
from dataclasses import dataclass, field, fields, asdict, replace
from pathlib import Path

from ..exceptions import ConfigurationError
from ..networks import GeneratorSpec, DiscriminatorSpec
from ..preprocess import CropSpec
from ..utils import LossWeights

logger = logging.getLogger(__name__)

# nested fields and the dataclass each of them is read into
_NESTED = {'crop': CropSpec, 'weights': LossWeights, 'generator': GeneratorSpec,
           'discriminator': DiscriminatorSpec}


@dataclass(frozen=True)
class TrainConfig:
    """Hyper-parameters, data and output locations of a training run.

    Parameters
    ----------
    epochs_constant : int
        Default : 25. Epochs at ``base_lr``.
    epochs_decay : int
        Default : 25. Epochs over which the rate decays linearly to zero.
    base_lr : float
        Default : 1e-4
    beta_1 : float
        ADAM optimization parameter.
        Default : 0.9
    beta_2 : float
        ADAM optimization parameter.
        Default : 0.999
    batch_size : int
        Default : 1
    seed : int
        Default : 0. Seeds weights, shuffles, crop jitter and latent noise.
    crop : CropSpec
        training crop, jitter included
    weights : LossWeights
    checkpoint_every : int
        Default : 5. Checkpoint period in epochs; the last epoch is always saved.
    cb_paths, plan_paths : tuple of str
        CBCT and planning-CT volumes; the two sets need not have the same size
    out_dir : str
        checkpoints and the training log are written here
    generator, discriminator : GeneratorSpec, DiscriminatorSpec
    device : str
        Default : 'cpu'
    per_volume_otsu : bool
        Default : False
    resume_from : str or None
        checkpoint to resume from
    """
    epochs_constant: int = 25
    epochs_decay: int = 25
    base_lr: float = 1e-4
    beta_1: float = 0.9
    beta_2: float = 0.999
    batch_size: int = 1
    seed: int = 0
    crop: CropSpec = field(default_factory=CropSpec)
    weights: LossWeights = field(default_factory=LossWeights)
    checkpoint_every: int = 5
    cb_paths: tuple = ()
    plan_paths: tuple = ()
    out_dir: str = 'ctxlate_run'
    generator: GeneratorSpec = field(default_factory=GeneratorSpec)
    discriminator: DiscriminatorSpec = field(default_factory=DiscriminatorSpec)
    device: str = 'cpu'
    per_volume_otsu: bool = False
    resume_from: str = None

    def __post_init__(self):
        object.__setattr__(self, 'cb_paths', tuple(str(p) for p in self.cb_paths))
        object.__setattr__(self, 'plan_paths', tuple(str(p) for p in self.plan_paths))
        object.__setattr__(self, 'out_dir', str(self.out_dir))
        if self.resume_from is not None:
            object.__setattr__(self, 'resume_from', str(self.resume_from))
        if self.epochs_constant < 0 or self.epochs_decay < 0 or self.total_epochs < 1:
            raise ConfigurationError('epochs must be non-negative with a positive total, got {} + {}'.format(
                self.epochs_constant, self.epochs_decay))
        if not self.base_lr > 0:
            raise ConfigurationError('base_lr must be positive, got {}'.format(self.base_lr))
        if not (0 <= self.beta_1 < 1 and 0 <= self.beta_2 < 1):
            raise ConfigurationError('Adam betas must lie in [0, 1)')
        if self.batch_size < 1:
            raise ConfigurationError('batch_size must be positive, got {}'.format(self.batch_size))
        if self.checkpoint_every < 1:
            raise ConfigurationError('checkpoint_every must be positive, got {}'.format(self.checkpoint_every))

    @property
    def total_epochs(self):
        return self.epochs_constant + self.epochs_decay

    def to_dict(self):
        """JSON-serializable nested dict, the format read by ``config_from_dict``."""
        values = asdict(self)
        values['cb_paths'] = list(self.cb_paths)
        values['plan_paths'] = list(self.plan_paths)
        return values

    def override(self, values):
        """Copy with fields replaced; keys may be dotted ('weights.lambda_air')."""
        merged = self.to_dict()
        for key, value in _unflatten(values).items():
            if key in _NESTED and isinstance(value, dict):
                merged[key] = dict(merged[key], **value)
            else:
                merged[key] = value
        return config_from_dict(merged)


def _unflatten(values):
    nested = {}
    for key, value in values.items():
        if '.' in key:
            outer, inner = key.split('.', 1)
            nested.setdefault(outer, {})[inner] = value
        else:
            nested[key] = value
    return nested


def _build(cls, values, name):
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigurationError('unknown {} keys: {}'.format(name, sorted(unknown)))
    try:
        return cls(**values)
    except TypeError as error:
        raise ConfigurationError('invalid {}: {}'.format(name, error)) from error


def config_from_dict(values):
    """TrainConfig from nested or dotted-key values, unknown keys rejected."""
    values = _unflatten(dict(values))
    for key, cls in _NESTED.items():
        if key in values:
            nested = values[key]
            if isinstance(nested, cls):
                continue
            if not isinstance(nested, dict):
                raise ConfigurationError('{} must be an object, got {!r}'.format(key, nested))
            nested = {k: v for k, v in nested.items() if k != 'kind'}
            values[key] = _build(cls, nested, key)
    return _build(TrainConfig, values, 'TrainConfig')


def load_config(path, overrides=None):
    """Reads a JSON training configuration and applies ``overrides``."""
    path = Path(path)
    try:
        with open(path) as handle:
            values = json.load(handle)
    except json.JSONDecodeError as error:
        raise ConfigurationError('config {} is not valid JSON: {}'.format(path, error)) from error
    config = config_from_dict(values)
    if overrides:
        config = config.override(overrides)
    logger.info('loaded training config %s', path)
    return config


def save_config(config, path):
    with open(path, 'w') as handle:
        json.dump(config.to_dict(), handle, indent=2)
    return Path(path)


def lr_schedule(epoch, config):
    """Learning rate of ``epoch`` (0-based).

    ``base_lr`` for the first ``epochs_constant`` epochs, then a linear decay
    reaching zero at ``epoch == epochs_constant + epochs_decay``.
    """
    total = config.total_epochs
    if not 0 <= epoch <= total:
        raise ValueError('epoch {} outside [0, {}]'.format(epoch, total))
    if epoch < config.epochs_constant:
        return config.base_lr
    if config.epochs_decay == 0:
        return 0.0
    return config.base_lr * (total - epoch) / config.epochs_decay


def with_weights(config, **weights):
    """Copy of ``config`` with some loss weights replaced (ablations)."""
    return replace(config, weights=replace(config.weights, **weights))
