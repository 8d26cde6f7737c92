"""Loss terms of the structure-preserving CycleGAN objective.

Every function is written with tensorly operations only, so it runs on the
numpy backend (oracles, diagnostics) and on the pytorch backend (training,
where autograd provides the gradients). All sums over pixels and batches are
means, which keeps the weights independent of image and batch size.
"""
import math
from dataclasses import dataclass, fields

import tensorly as tl

from ..exceptions import ConfigurationError, TrainingFaultError


@dataclass(frozen=True)
class LossWeights:
    """Weights of the composite objective and the scaled air threshold C."""
    lambda_cycle: float = 10.0
    lambda_adv: float = 1.0
    lambda_grad: float = 0.1
    lambda_tv: float = 0.01
    lambda_air: float = 1.0
    lambda_idem: float = 1.0
    lambda_D: float = 1.0
    air_threshold_scaled: float = -0.9

    def __post_init__(self):
        for f in fields(self):
            if f.name.startswith('lambda_'):
                value = getattr(self, f.name)
                if not math.isfinite(value) or value < 0:
                    raise ConfigurationError('{} must be a non-negative number, got {}'.format(f.name, value))
        # C is the scaled image of -465 HU: (-465 + 150) / 350
        if abs(self.air_threshold_scaled - (-315.0 / 350.0)) > 1e-12:
            raise ConfigurationError('air_threshold_scaled must equal clip_and_scale(-465 HU) = -0.9, got {}'.format(
                self.air_threshold_scaled))


GENERATOR_TERMS = ('cycle_a', 'cycle_b', 'adv', 'tv', 'air', 'grad', 'idem')


@dataclass(frozen=True)
class LossBreakdown:
    """Per-term values of one training step and the weighted totals."""
    cycle_a: float
    cycle_b: float
    adv: float
    tv: float
    air: float
    grad: float
    idem: float
    d: float
    loss_g: float
    loss_d: float

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _check_same_shape(*pairs):
    for a, b in pairs:
        if tl.shape(a) != tl.shape(b):
            raise ValueError('shape mismatch: {} vs {}'.format(tl.shape(a), tl.shape(b)))


def _mse_to(scores, target):
    return tl.mean((scores - target) ** 2)


def discriminator_terms(dp_fake, dc_real, dc_fake, dp_real):
    """Unweighted LSGAN discriminator objective (fakes to 0, reals to 1)."""
    _check_same_shape((dp_fake, dp_real), (dc_fake, dc_real))
    return (_mse_to(dp_fake, 0.0) + _mse_to(dc_real, 1.0)
            + _mse_to(dc_fake, 0.0) + _mse_to(dp_real, 1.0))


def loss_discriminator(dp_fake, dc_real, dc_fake, dp_real, weights=LossWeights()):
    """LSGAN loss of both discriminators.

    Parameters
    ----------
    dp_fake : ndarray
        D_P score map of G_{C->P}(x)
    dc_real : ndarray
        D_C score map of x
    dc_fake : ndarray
        D_C score map of G_{P->C}(y)
    dp_real : ndarray
        D_P score map of y
    weights : LossWeights

    Returns
    -------
    scalar
        lambda_D * [MSE(dp_fake, 0) + MSE(dc_real, 1) + MSE(dc_fake, 0) + MSE(dp_real, 1)]

    References
    ----------
    .. [1] Mao, X., Li, Q., Xie, H., Lau, R. Y., Wang, Z., & Smolley, S. P. (2017).
           Least squares generative adversarial networks. ICCV, 2794-2802.
    """
    return weights.lambda_D * discriminator_terms(dp_fake, dc_real, dc_fake, dp_real)


def loss_cycle(x, x_cyc, y, y_cyc):
    """Cycle-consistency terms ``(mean|x - x_cyc|, mean|y - y_cyc|)``."""
    _check_same_shape((x, x_cyc), (y, y_cyc))
    return tl.mean(tl.abs(x - x_cyc)), tl.mean(tl.abs(y - y_cyc))


def loss_adversarial_G(dp_of_fake, dc_of_fake):
    """Generator side of the LSGAN objective: both fakes scored as real."""
    return _mse_to(dp_of_fake, 1.0) + _mse_to(dc_of_fake, 1.0)


def loss_tv(fake_plan):
    """Anisotropic total variation of the synthesized planning CT.

    Mean of the absolute forward differences along rows and columns, taken
    over all difference terms together.
    """
    rows = tl.abs(fake_plan[..., 1:, :] - fake_plan[..., :-1, :])
    cols = tl.abs(fake_plan[..., :, 1:] - fake_plan[..., :, :-1])
    n_rows = math.prod(tl.shape(rows))
    n_cols = math.prod(tl.shape(cols))
    return (tl.sum(rows) + tl.sum(cols)) / (n_rows + n_cols)


def psi(z, threshold):
    """``z`` where ``z < threshold``, 0 elsewhere."""
    return tl.where(z < threshold, z, tl.zeros_like(z))


def loss_air(x, gx, y, gy, threshold=LossWeights.air_threshold_scaled):
    """Penalizes any change to air (values below ``threshold``) by either generator."""
    _check_same_shape((x, gx), (y, gy))
    return (tl.mean(tl.abs(psi(gx, threshold) - psi(x, threshold)))
            + tl.mean(tl.abs(psi(gy, threshold) - psi(y, threshold))))


def _reflect_pad(image):
    rows = tl.concatenate([image[..., 1:2, :], image, image[..., -2:-1, :]], axis=-2)
    return tl.concatenate([rows[..., :, 1:2], rows, rows[..., :, -2:-1]], axis=-1)


def sobel_gradients(image):
    """Sobel derivatives of an image under reflect padding.

    Parameters
    ----------
    image : ndarray of shape (..., h, w), h and w at least 3

    Returns
    -------
    g1 : ndarray
        horizontal derivative, correlation with [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]]
    g2 : ndarray
        vertical derivative, correlation with the transposed kernel
    """
    height, width = tl.shape(image)[-2:]
    if height < 3 or width < 3:
        raise ValueError('Sobel gradients need at least 3x3 pixels, got {}x{}'.format(height, width))
    padded = _reflect_pad(image)

    def window(dr, dc):
        return padded[..., 1 + dr:1 + dr + height, 1 + dc:1 + dc + width]

    g1 = (window(-1, 1) + 2 * window(0, 1) + window(1, 1)) - (window(-1, -1) + 2 * window(0, -1) + window(1, -1))
    g2 = (window(1, -1) + 2 * window(1, 0) + window(1, 1)) - (window(-1, -1) + 2 * window(-1, 0) + window(-1, 1))
    return g1, g2


def gradient_magnitude(image):
    g1, g2 = sobel_gradients(image)
    return tl.sqrt(g1 ** 2 + g2 ** 2)


def loss_grad(x, gx, y, gy):
    """Squared Sobel gradients of ``x - gx`` and ``y - gy``, both directions."""
    _check_same_shape((x, gx), (y, gy))
    total = 0.0
    for difference in (x - gx, y - gy):
        g1, g2 = sobel_gradients(difference)
        total = total + tl.mean(g1 ** 2) + tl.mean(g2 ** 2)
    return total


def loss_idem(gx, ggx, gy, ggy):
    """Idempotence terms ``mean|gx - ggx| + mean|gy - ggy|``."""
    _check_same_shape((gx, ggx), (gy, ggy))
    return tl.mean(tl.abs(gx - ggx)) + tl.mean(tl.abs(gy - ggy))


def weighted_generator_loss(terms, weights=LossWeights()):
    """Differentiable composite generator objective from a mapping of terms."""
    return (weights.lambda_cycle * (terms['cycle_a'] + terms['cycle_b'])
            + weights.lambda_adv * terms['adv']
            + weights.lambda_grad * terms['grad']
            + weights.lambda_idem * terms['idem']
            + weights.lambda_air * terms['air']
            + weights.lambda_tv * terms['tv'])


def compose_generator_loss(terms, weights=LossWeights()):
    """Weighted sum of the generator terms, as a LossBreakdown.

    Parameters
    ----------
    terms : mapping
        scalar values for 'cycle_a', 'cycle_b', 'adv', 'tv', 'air', 'grad',
        'idem' and optionally 'd' (unweighted discriminator objective)
    weights : LossWeights

    Returns
    -------
    LossBreakdown
    """
    values = {name: float(terms[name]) for name in GENERATOR_TERMS}
    values['d'] = float(terms.get('d', 0.0))
    for name, value in values.items():
        if not math.isfinite(value):
            raise TrainingFaultError('non-finite loss term "{}": {}'.format(name, value),
                                     breakdown=LossBreakdown(loss_g=math.nan, loss_d=math.nan, **values))
    loss_g = weighted_generator_loss(values, weights)
    return LossBreakdown(loss_g=loss_g, loss_d=weights.lambda_D * values['d'], **values)
