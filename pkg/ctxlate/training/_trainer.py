import csv
import itertools
import logging
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
import tensorly as tl
import torch
from tqdm import tqdm

from ._config import TrainConfig, lr_schedule, save_config
from ..data import load_scaled_slices
from ..exceptions import CheckpointError, ConfigurationError, TrainingFaultError
from ..networks import (build_generator, build_discriminator, save_checkpoint, load_checkpoint, run_generators,
                        NETWORK_NAMES)
from ..preprocess import center_crop
from ..utils import (LossBreakdown, GENERATOR_TERMS, loss_cycle, loss_adversarial_G, loss_tv, loss_air, loss_grad,
                     loss_idem, discriminator_terms, compose_generator_loss, weighted_generator_loss)
from ..volume import ScaledSlice

logger = logging.getLogger(__name__)

LOG_FIELDS = ('iteration', 'epoch', 'lr') + tuple(f.name for f in fields(LossBreakdown))
# a cycle loss above this multiple of the converged one flags a suspect input
FAILURE_RATIO = 3.0


@dataclass
class TrainState:
    """Networks, optimizers and counters of a training run.

    ``optimizers['G']`` updates both generators and ``optimizers['D']`` both
    discriminators, once per train step each.
    """
    networks: dict
    optimizers: dict
    weights: object
    epoch: int = 0
    iteration: int = 0
    cycle_sum: float = 0.0
    cycle_count: int = 0
    reference_cycle_loss: float = None
    device: str = 'cpu'

    @property
    def running_cycle_loss(self):
        """Mean Loss_cycleA over the steps of the current epoch."""
        return self.cycle_sum / self.cycle_count if self.cycle_count else math.nan

    def reset_epoch(self):
        self.cycle_sum, self.cycle_count = 0.0, 0

    def module(self, name):
        return self.networks[name].module

    def set_learning_rate(self, lr):
        for optimizer in self.optimizers.values():
            for group in optimizer.param_groups:
                group['lr'] = lr


def build_state(config, networks=None):
    """Fresh training state: seeded networks and two Adam optimizers.

    Parameters
    ----------
    config : TrainConfig
    networks : dict of NetworkHandle, optional
        replaces the networks built from ``config.generator`` and
        ``config.discriminator``; keys 'G_CP', 'G_PC', 'D_P', 'D_C'
    """
    torch.manual_seed(config.seed)
    if networks is None:
        networks = {'G_CP': build_generator(config.generator, random_state=config.seed),
                    'G_PC': build_generator(config.generator, random_state=config.seed + 1),
                    'D_P': build_discriminator(config.discriminator, random_state=config.seed + 2),
                    'D_C': build_discriminator(config.discriminator, random_state=config.seed + 3)}
    missing = set(NETWORK_NAMES) - set(networks)
    if missing:
        raise ConfigurationError('missing networks {}'.format(sorted(missing)))
    for handle in networks.values():
        handle.module.to(config.device)

    def adam(names):
        parameters = itertools.chain(*(networks[name].module.parameters() for name in names))
        return torch.optim.Adam(parameters, lr=lr_schedule(0, config), betas=(config.beta_1, config.beta_2))

    optimizers = {'G': adam(('G_CP', 'G_PC')), 'D': adam(('D_P', 'D_C'))}
    return TrainState(networks, optimizers, config.weights, device=config.device)


def _as_batch(image, device):
    """(batch, 1, h, w) float32 tensor from a ScaledSlice, an array or a tensor."""
    if isinstance(image, ScaledSlice):
        image = image.pixels
    if not isinstance(image, torch.Tensor):
        image = torch.from_numpy(np.asarray(image, dtype=np.float32))
    if image.ndim == 2:
        image = image[None, None]
    elif image.ndim == 3:
        image = image[:, None]
    return image.to(device=device, dtype=torch.float32)


def _set_requires_grad(modules, flag):
    for module in modules:
        for parameter in module.parameters():
            parameter.requires_grad_(flag)


def _failed_breakdown(**values):
    nan = {f.name: math.nan for f in fields(LossBreakdown)}
    nan.update(values)
    return LossBreakdown(**nan)


def generator_terms(state, x, y, gx, gy):
    """Every generator loss term of one batch, as differentiable tensors."""
    g_cp, g_pc = state.module('G_CP'), state.module('G_PC')
    cycle_a, cycle_b = loss_cycle(x, g_pc(gx), y, g_cp(gy))
    return {'cycle_a': cycle_a,
            'cycle_b': cycle_b,
            'adv': loss_adversarial_G(state.module('D_P')(gx), state.module('D_C')(gy)),
            'tv': loss_tv(gx),
            'air': loss_air(x, gx, y, gy, state.weights.air_threshold_scaled),
            'grad': loss_grad(x, gx, y, gy),
            'idem': loss_idem(gx, g_cp(gx), gy, g_pc(gy))}


def train_step(state, x, y):
    """One discriminator update followed by one generator update.

    The discriminators are trained first on detached fakes; the generator
    objective then scores the same fakes with the updated discriminators.

    Parameters
    ----------
    state : TrainState
        updated in place
    x : ScaledSlice, ndarray or tensor
        CBCT batch
    y : ScaledSlice, ndarray or tensor
        planning-CT batch, drawn independently of ``x``

    Returns
    -------
    state : TrainState
    breakdown : LossBreakdown

    Raises
    ------
    TrainingFaultError
        if any loss term is not finite; no generator update is made then
    """
    x, y = _as_batch(x, state.device), _as_batch(y, state.device)
    if x.shape != y.shape:
        raise ValueError('CBCT and planning-CT batches differ in shape: {} vs {}'.format(
            tuple(x.shape), tuple(y.shape)))
    for handle in state.networks.values():
        handle.module.train()
    d_p, d_c = state.module('D_P'), state.module('D_C')
    weights = state.weights

    with tl.backend_context('pytorch'):
        gx = state.module('G_CP')(x)
        gy = state.module('G_PC')(y)

        state.optimizers['D'].zero_grad(set_to_none=True)
        d_loss = discriminator_terms(d_p(gx.detach()), d_c(x), d_c(gy.detach()), d_p(y))
        if not torch.isfinite(d_loss):
            raise TrainingFaultError('non-finite discriminator loss at iteration {}'.format(state.iteration + 1),
                                     breakdown=_failed_breakdown(d=d_loss.detach().item()))
        (weights.lambda_D * d_loss).backward()
        state.optimizers['D'].step()

        _set_requires_grad((d_p, d_c), False)
        try:
            state.optimizers['G'].zero_grad(set_to_none=True)
            terms = generator_terms(state, x, y, gx, gy)
            values = {name: terms[name].detach().item() for name in GENERATOR_TERMS}
            breakdown = compose_generator_loss(dict(values, d=d_loss.detach().item()), weights)
            weighted_generator_loss(terms, weights).backward()
            state.optimizers['G'].step()
        finally:
            _set_requires_grad((d_p, d_c), True)

    state.iteration += 1
    state.cycle_sum += breakdown.cycle_a
    state.cycle_count += 1
    return state, breakdown


def failure_check(current_cycle_loss, reference_cycle_loss):
    """'suspect' if the cycle loss exceeds three times the converged one, else 'ok'."""
    if not reference_cycle_loss > 0:
        raise ValueError('reference cycle loss must be positive, got {}'.format(reference_cycle_loss))
    return 'suspect' if current_cycle_loss > FAILURE_RATIO * reference_cycle_loss else 'ok'


def _draw(slices, indices, crop, rng):
    return np.stack([center_crop(slices[i], crop, random_state=rng) for i in indices])[:, None]


def save_state(state, path, config, rng):
    """Checkpoint of ``state`` including the torch and numpy RNG states."""
    return save_checkpoint(path, state.networks, state.optimizers, epoch=state.epoch, iteration=state.iteration,
                           weights=state.weights, reference_cycle_loss=state.reference_cycle_loss,
                           config=config.to_dict(),
                           rng_state={'torch': torch.get_rng_state(), 'numpy': rng.bit_generator.state})


def restore_state(config, path):
    """Training state and numpy generator saved in checkpoint ``path``."""
    checkpoint = load_checkpoint(path, map_location=config.device)
    networks = {name: checkpoint.restore(name, config.device) for name in NETWORK_NAMES}
    state = build_state(config, networks)
    try:
        for key, optimizer in state.optimizers.items():
            optimizer.load_state_dict(checkpoint.optimizer_states[key])
    except (KeyError, ValueError) as error:
        raise CheckpointError('checkpoint {} has no usable optimizer state: {}'.format(path, error)) from error
    state.weights = checkpoint.weights
    state.epoch, state.iteration = checkpoint.epoch, checkpoint.iteration
    state.reference_cycle_loss = checkpoint.reference_cycle_loss
    rng = np.random.default_rng(config.seed)
    if checkpoint.rng_state:
        torch.set_rng_state(checkpoint.rng_state['torch'].cpu())
        rng.bit_generator.state = checkpoint.rng_state['numpy']
    logger.info('resumed from %s at epoch %d, iteration %d', path, state.epoch, state.iteration)
    return state, rng


def fit(state, cb_slices, plan_slices, config, rng, on_step=None, checkpoint_dir=None, verbose=False):
    """Runs the remaining epochs of ``config`` on in-memory scaled slices.

    Each epoch draws independent permutations of both sets and pairs them by
    position, giving ``min(n_cb, n_plan) // batch_size`` steps.

    Parameters
    ----------
    state : TrainState
    cb_slices, plan_slices : ndarray of shape (n, h, w)
        scaled slices; each draw is cropped with ``config.crop``
    config : TrainConfig
    rng : np.random.Generator
    on_step : callable, optional
        called with the log row (dict with ``LOG_FIELDS``) of every step
    checkpoint_dir : Path, optional
        periodic checkpoints go here
    verbose : bool

    Returns
    -------
    list of float
        mean Loss_cycleA of each epoch run
    """
    n_steps = min(len(cb_slices), len(plan_slices)) // config.batch_size
    if n_steps == 0:
        raise ConfigurationError('batch_size {} exceeds the smaller slice set ({} slices)'.format(
            config.batch_size, min(len(cb_slices), len(plan_slices))))
    epoch_losses = []
    for epoch in range(state.epoch, config.total_epochs):
        lr = lr_schedule(epoch, config)
        state.set_learning_rate(lr)
        order_cb = rng.permutation(len(cb_slices))
        order_plan = rng.permutation(len(plan_slices))
        state.reset_epoch()
        for step in tqdm(range(n_steps), desc='epoch {}/{}'.format(epoch + 1, config.total_epochs),
                         disable=not verbose):
            batch = slice(step * config.batch_size, (step + 1) * config.batch_size)
            x = _draw(cb_slices, order_cb[batch], config.crop, rng)
            y = _draw(plan_slices, order_plan[batch], config.crop, rng)
            _, breakdown = train_step(state, x, y)
            if on_step is not None:
                on_step(dict(iteration=state.iteration, epoch=epoch, lr=lr, **breakdown.as_dict()))

        mean_cycle = state.running_cycle_loss
        epoch_losses.append(mean_cycle)
        state.epoch = epoch + 1
        logger.info('epoch %d/%d: lr %.3g, mean cycle loss %.5f', state.epoch, config.total_epochs, lr, mean_cycle)
        if state.reference_cycle_loss is not None and state.reference_cycle_loss > 0:
            verdict = failure_check(mean_cycle, state.reference_cycle_loss)
            logger.log(logging.WARNING if verdict == 'suspect' else logging.INFO,
                       'failure monitor: %s (cycle loss %.5f, reference %.5f)', verdict, mean_cycle,
                       state.reference_cycle_loss)
        if state.epoch == config.total_epochs:
            state.reference_cycle_loss = mean_cycle
        if checkpoint_dir is not None and state.epoch % config.checkpoint_every == 0:
            save_state(state, Path(checkpoint_dir) / 'checkpoint_epoch_{:03d}.pt'.format(state.epoch), config, rng)
    return epoch_losses


def run_training(config, verbose=False):
    """Trains the four networks on the volumes named in ``config``.

    Parameters
    ----------
    config : TrainConfig
    verbose : bool, default is False
        progress bars on stderr

    Returns
    -------
    checkpoint_path : Path
        final checkpoint, carrying the reference cycle loss
    log_path : Path
        per-iteration CSV log
    """
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cb = load_scaled_slices(config.cb_paths, per_volume=config.per_volume_otsu, verbose=verbose).slices
    plan = load_scaled_slices(config.plan_paths, per_volume=config.per_volume_otsu, verbose=verbose).slices
    logger.info('training on %d CBCT and %d planning-CT slices', len(cb), len(plan))

    if config.resume_from:
        state, rng = restore_state(config, config.resume_from)
    else:
        state, rng = build_state(config), np.random.default_rng(config.seed)
    save_config(config, out_dir / 'config.json')

    log_path = out_dir / 'training_log.csv'
    append = bool(config.resume_from) and log_path.exists()
    with open(log_path, 'a' if append else 'w', newline='') as handle:
        writer = csv.DictWriter(handle, fieldnames=LOG_FIELDS)
        if not append:
            writer.writeheader()
        fit(state, cb, plan, config, rng, on_step=writer.writerow, checkpoint_dir=out_dir, verbose=verbose)

    checkpoint_path = save_state(state, out_dir / 'checkpoint_final.pt', config, rng)
    return checkpoint_path, log_path


class StructurePreservingCycleGAN:
    """Estimator-style wrapper around :func:`fit` for in-memory slices.

    Parameters
    ----------
    config : TrainConfig, optional
    **params
        TrainConfig fields overriding ``config``
        (nested ones as dicts, e.g. ``weights={'lambda_air': 0.0}``)

    Attributes
    ----------
    state_ : TrainState
    history_ : list of dict
        one log row per training step
    epoch_cycle_losses_ : list of float
    rng_ : np.random.Generator
        shuffle and crop-jitter generator, in its state after the last epoch
    """

    def __init__(self, config=None, **params):
        config = TrainConfig() if config is None else config
        self.config = config.override(params) if params else config

    def fit(self, cb_slices, plan_slices, verbose=False):
        """Trains on scaled slices of shape (n, h, w)."""
        self.state_ = build_state(self.config)
        self.history_ = []
        self.rng_ = np.random.default_rng(self.config.seed)
        self.epoch_cycle_losses_ = fit(self.state_, np.asarray(cb_slices, dtype=np.float32),
                                       np.asarray(plan_slices, dtype=np.float32), self.config, self.rng_,
                                       on_step=self.history_.append, verbose=verbose)
        self.reference_cycle_loss_ = self.state_.reference_cycle_loss
        return self

    def transform(self, slices, direction='C_to_P', batch_size=8):
        """Translates scaled slices with one generator in eval mode."""
        name = {'C_to_P': 'G_CP', 'P_to_C': 'G_PC'}[direction]
        return run_generators([self.state_.module(name)], slices, batch_size=batch_size, device=self.config.device)

    def cycle(self, slices, batch_size=8):
        """``G_PC(G_CP(slices))``, the cyclic reconstruction of CBCT slices."""
        modules = [self.state_.module('G_CP'), self.state_.module('G_PC')]
        return run_generators(modules, slices, batch_size=batch_size, device=self.config.device)

    def save(self, path):
        """Checkpoint that :func:`run_training` can resume from, shuffle and jitter state included."""
        return save_state(self.state_, path, self.config, self.rng_)
