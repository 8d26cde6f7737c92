import math

import numpy as np
import pytest
import tensorly as tl
import torch
from scipy import ndimage
from tensorly.testing import assert_, assert_array_equal, assert_array_almost_equal

from ..losses_and_gradients import (LossWeights, LossBreakdown, loss_discriminator, discriminator_terms,
                                    loss_cycle, loss_adversarial_G, loss_tv, psi, loss_air, sobel_gradients,
                                    loss_grad, loss_idem, weighted_generator_loss, compose_generator_loss)
from ...exceptions import ConfigurationError, TrainingFaultError
from ...preprocess import clip_and_scale


def assert_close(value, reference, rtol=1e-6):
    value, reference = float(value), float(reference)
    assert_(abs(value - reference) <= rtol * abs(reference) + 1e-12,
            'got {}, expected {}'.format(value, reference))


def random_images(rng, n_cases=100):
    for _ in range(n_cases):
        shape = (1, 1, int(rng.integers(3, 9)), int(rng.integers(3, 9)))
        yield shape, [rng.uniform(-1, 1, size=shape) for _ in range(4)]


def loop_sobel(image):
    """Sobel derivatives of a 2D image by explicit loops over a reflect-padded copy"""
    padded = np.pad(image, 1, mode='reflect')
    height, width = image.shape
    g1 = np.zeros((height, width))
    g2 = np.zeros((height, width))
    for i in range(height):
        for j in range(width):
            for a, smooth in zip((-1, 0, 1), (1, 2, 1)):
                g1[i, j] += smooth * (padded[i + 1 + a, j + 2] - padded[i + 1 + a, j])
                g2[i, j] += smooth * (padded[i + 2, j + 1 + a] - padded[i, j + 1 + a])
    return g1, g2


def loop_mean(values):
    total, count = 0.0, 0
    for value in np.ravel(values):
        total += value
        count += 1
    return total / count


def test_sobel_matches_loops_and_scipy():
    """Test the sliced Sobel against explicit loops and scipy's mirror-mode sobel"""
    rng = np.random.default_rng(0)
    for shape, (image, *_) in random_images(rng):
        g1, g2 = sobel_gradients(image)
        ref1, ref2 = loop_sobel(image[0, 0])
        assert_array_almost_equal(g1[0, 0], ref1, decimal=10)
        assert_array_almost_equal(g2[0, 0], ref2, decimal=10)
        assert_array_almost_equal(g1[0, 0], ndimage.sobel(image[0, 0], axis=1, mode='mirror'), decimal=10)
        assert_array_almost_equal(g2[0, 0], ndimage.sobel(image[0, 0], axis=0, mode='mirror'), decimal=10)


def test_sobel_ramp_and_rotation():
    """Test the Sobel response to a column ramp and its behaviour under rotation"""
    ramp = np.tile(np.arange(7, dtype=float), (5, 1))
    g1, g2 = sobel_gradients(ramp)
    assert_array_equal(g1[:, 1:-1], np.full((5, 5), 8.0))
    assert_array_equal(g1[:, 0], np.zeros(5))
    assert_array_equal(g2, np.zeros((5, 7)))

    rng = np.random.default_rng(1)
    image = rng.normal(size=(6, 9))
    g1_rot, _ = sobel_gradients(np.rot90(image))
    _, g2 = sobel_gradients(image)
    assert_array_almost_equal(g1_rot, np.rot90(g2), decimal=12)

    with pytest.raises(ValueError):
        sobel_gradients(np.zeros((2, 5)))


def test_discriminator_loss_oracle():
    """Test the LSGAN discriminator loss against a loop reference on random score maps"""
    rng = np.random.default_rng(2)
    weights = LossWeights(lambda_D=0.5)
    for _, (dp_fake, dc_real, dc_fake, dp_real) in random_images(rng):
        reference = (loop_mean(dp_fake ** 2) + loop_mean((dc_real - 1) ** 2)
                     + loop_mean(dc_fake ** 2) + loop_mean((dp_real - 1) ** 2))
        assert_close(discriminator_terms(dp_fake, dc_real, dc_fake, dp_real), reference)
        assert_close(loss_discriminator(dp_fake, dc_real, dc_fake, dp_real, weights), 0.5 * reference)

    zeros, ones = np.zeros((1, 1, 4, 4)), np.ones((1, 1, 4, 4))
    assert_(loss_discriminator(zeros, ones, zeros, ones) == 0)
    assert_(loss_discriminator(ones, zeros, ones, zeros) == 4)


def test_generator_terms_oracle():
    """Test cycle, adversarial, total variation, air and idempotence terms against loops"""
    rng = np.random.default_rng(3)
    threshold = LossWeights().air_threshold_scaled
    for _, (x, gx, y, gy) in random_images(rng):
        cycle_a, cycle_b = loss_cycle(x, gx, y, gy)
        assert_close(cycle_a, loop_mean(np.abs(x - gx)))
        assert_close(cycle_b, loop_mean(np.abs(y - gy)))

        assert_close(loss_adversarial_G(x, y), loop_mean((x - 1) ** 2) + loop_mean((y - 1) ** 2))

        image = x[0, 0]
        total, count = 0.0, 0
        for i in range(image.shape[0]):
            for j in range(image.shape[1]):
                if i + 1 < image.shape[0]:
                    total += abs(image[i + 1, j] - image[i, j])
                    count += 1
                if j + 1 < image.shape[1]:
                    total += abs(image[i, j + 1] - image[i, j])
                    count += 1
        assert_close(loss_tv(x), total / count)

        def loop_psi(values):
            return np.array([v if v < threshold else 0.0 for v in np.ravel(values)])

        reference = loop_mean(np.abs(loop_psi(gx) - loop_psi(x))) + loop_mean(np.abs(loop_psi(gy) - loop_psi(y)))
        assert_close(loss_air(x, gx, y, gy, threshold), reference)

        assert_close(loss_idem(x, gx, y, gy), loop_mean(np.abs(x - gx)) + loop_mean(np.abs(y - gy)))


def test_grad_loss_oracle():
    """Test the gradient-preservation term against loop Sobel derivatives"""
    rng = np.random.default_rng(4)
    for _, (x, gx, y, gy) in random_images(rng):
        reference = 0.0
        for difference in (x - gx, y - gy):
            g1, g2 = loop_sobel(difference[0, 0])
            reference += loop_mean(g1 ** 2) + loop_mean(g2 ** 2)
        assert_close(loss_grad(x, gx, y, gy), reference)


def test_identity_fixed_points():
    """Test that every structural term vanishes when the generators are identities"""
    rng = np.random.default_rng(5)
    x, y = rng.uniform(-1, 1, size=(2, 1, 1, 8, 8))
    assert_(loss_cycle(x, x, y, y) == (0, 0))
    assert_(loss_air(x, x, y, y) == 0)
    assert_(loss_grad(x, x, y, y) == 0)
    assert_(loss_idem(x, x, y, y) == 0)
    assert_(loss_tv(np.full((1, 1, 8, 8), 0.3)) == 0)
    # a constant offset leaves every Sobel derivative at zero
    assert_(loss_grad(x, x + 0.25, y, y - 0.5) < 1e-20)


def test_air_loss_ignores_tissue():
    """Test that changes above the air threshold are not penalized"""
    x = np.full((1, 1, 4, 4), 0.2)
    gx = x + 0.5
    assert_(loss_air(x, gx, x, x) == 0)
    x[..., 0, 0] = -1.0
    gx[..., 0, 0] = -0.95
    assert_close(loss_air(x, gx, x, x), 0.05 / 16)
    assert_array_equal(psi(np.array([-1.0, -0.9, 0.5]), -0.9), [-1.0, 0.0, 0.0])


def test_shape_mismatch():
    with pytest.raises(ValueError):
        loss_cycle(np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 4, 5)), np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 4, 4)))
    with pytest.raises(ValueError):
        loss_discriminator(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 3, 3)))


def test_numpy_and_pytorch_backends_agree():
    """Test that the loss terms give the same value on both tensorly backends"""
    rng = np.random.default_rng(6)
    x, gx, y, gy = rng.uniform(-1, 1, size=(4, 1, 1, 6, 7))
    with tl.backend_context('numpy'):
        expected = [loss_grad(x, gx, y, gy), loss_tv(gx), loss_air(x, gx, y, gy), loss_idem(x, gx, y, gy)]
    with tl.backend_context('pytorch'):
        tx, tgx, ty, tgy = (torch.from_numpy(a) for a in (x, gx, y, gy))
        found = [loss_grad(tx, tgx, ty, tgy), loss_tv(tgx), loss_air(tx, tgx, ty, tgy), loss_idem(tx, tgx, ty, tgy)]
    for value, reference in zip(found, expected):
        assert_close(value.item(), reference)


def check_gradient(loss_fn, point, step=1e-3):
    """Relative error between the autograd gradient and central differences"""
    with tl.backend_context('pytorch'):
        variable = torch.tensor(point, dtype=torch.float64, requires_grad=True)
        loss_fn(variable).backward()
        analytic = variable.grad.numpy().ravel()
        numeric = np.zeros(point.size)
        with torch.no_grad():
            for i in range(point.size):
                shifted = point.ravel().copy()
                shifted[i] += step
                upper = loss_fn(torch.tensor(shifted.reshape(point.shape))).item()
                shifted[i] -= 2 * step
                lower = loss_fn(torch.tensor(shifted.reshape(point.shape))).item()
                numeric[i] = (upper - lower) / (2 * step)
    return np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric)


def test_gradients_match_finite_differences():
    """Test autograd gradients of every term against central finite differences"""
    rng = np.random.default_rng(7)
    shape = (1, 1, 6, 6)
    rows, cols = np.indices(shape[-2:])
    # strictly increasing along both axes, so no absolute difference sits at a kink
    ramp = (0.3 * rows + 0.7 * cols + rng.uniform(-0.05, 0.05, size=shape[-2:])).reshape(shape)
    x, y = rng.uniform(-0.5, 0.5, size=(2,) + shape)
    signs = rng.choice([-1.0, 1.0], size=shape)
    offset = signs * rng.uniform(0.05, 0.5, size=shape)
    weights = LossWeights()

    def torch_of(array):
        return torch.tensor(array, dtype=torch.float64)

    assert_(check_gradient(lambda t: loss_cycle(torch_of(x), t, torch_of(y), torch_of(y))[0], x + offset) < 1e-3)
    assert_(check_gradient(lambda t: loss_idem(torch_of(x), t, torch_of(y), torch_of(y + offset)), x + offset) < 1e-3)
    assert_(check_gradient(loss_tv, ramp) < 1e-3)
    assert_(check_gradient(lambda t: loss_grad(torch_of(x), t, torch_of(y), torch_of(x)), y) < 1e-3)
    assert_(check_gradient(lambda t: loss_adversarial_G(t, torch_of(y)), x) < 1e-3)
    assert_(check_gradient(lambda t: loss_discriminator(t, torch_of(x), torch_of(y), t, weights), ramp) < 1e-3)

    # air pixels well below the threshold, generator output offset by +-0.03
    air = -0.96 + rng.uniform(-0.01, 0.01, size=shape)
    air_shift = air + rng.choice([-0.03, 0.03], size=shape)
    assert_(check_gradient(lambda t: loss_air(torch_of(air), t, torch_of(y), torch_of(y),
                                              weights.air_threshold_scaled), air_shift) < 1e-3)


@pytest.mark.parametrize('term', ['cycle_a', 'cycle_b', 'adv', 'tv', 'air', 'grad', 'idem', 'd'])
def test_small_image_gradients(term):
    """Test each term's autograd gradient on 4 x 4 images against central differences"""
    rng = np.random.default_rng(8)
    shape = (1, 1, 4, 4)
    rows, cols = np.indices(shape[-2:])
    ramp = (0.2 * rows + 0.5 * cols + rng.uniform(-0.03, 0.03, size=shape[-2:])).reshape(shape)
    x, y = rng.uniform(-0.5, 0.5, size=(2,) + shape)
    offset = rng.choice([-1.0, 1.0], size=shape) * rng.uniform(0.05, 0.4, size=shape)
    air = -0.96 + rng.uniform(-0.01, 0.01, size=shape)
    threshold = LossWeights().air_threshold_scaled

    def torch_of(array):
        return torch.tensor(array, dtype=torch.float64)

    cases = {
        'cycle_a': (lambda t: loss_cycle(t, torch_of(x), torch_of(y), torch_of(y))[0], x + offset),
        'cycle_b': (lambda t: loss_cycle(torch_of(x), torch_of(x), torch_of(y), t)[1], y + offset),
        'adv': (lambda t: loss_adversarial_G(torch_of(x), t), y),
        'tv': (loss_tv, ramp),
        'air': (lambda t: loss_air(torch_of(air), t, torch_of(y), torch_of(y), threshold),
                air + rng.choice([-0.03, 0.03], size=shape)),
        'grad': (lambda t: loss_grad(torch_of(x), torch_of(y), t, torch_of(x)), y),
        'idem': (lambda t: loss_idem(torch_of(x), torch_of(x), torch_of(y), t), y + offset),
        'd': (lambda t: discriminator_terms(torch_of(x), t, torch_of(y), t), ramp),
    }
    loss_fn, point = cases[term]
    assert_(check_gradient(loss_fn, point, step=1e-4) < 1e-3)


def test_loss_weights():
    weights = LossWeights()
    assert_((weights.lambda_cycle, weights.lambda_adv, weights.lambda_grad, weights.lambda_tv,
             weights.lambda_air, weights.lambda_idem, weights.lambda_D) == (10, 1, 0.1, 0.01, 1, 1, 1))
    assert_(weights.air_threshold_scaled == clip_and_scale(-465))
    with pytest.raises(ConfigurationError):
        LossWeights(lambda_tv=-0.01)
    with pytest.raises(ConfigurationError):
        LossWeights(lambda_cycle=math.nan)
    with pytest.raises(ConfigurationError):
        LossWeights(air_threshold_scaled=-0.5)


def test_compose_generator_loss():
    """Test the weighted sum of the generator terms and its breakdown"""
    terms = dict(cycle_a=0.5, cycle_b=0.5, adv=1.0, tv=1.0, air=1.0, grad=1.0, idem=1.0, d=2.0)
    breakdown = compose_generator_loss(terms)
    assert_(isinstance(breakdown, LossBreakdown))
    assert_close(breakdown.loss_g, 13.11, rtol=1e-12)
    assert_close(breakdown.loss_d, 2.0)
    assert_close(weighted_generator_loss(terms), breakdown.loss_g, rtol=1e-12)

    zero = compose_generator_loss({name: 0.0 for name in terms})
    assert_(zero.loss_g == 0 and zero.loss_d == 0)

    only_cycle = compose_generator_loss(dict(terms, adv=0, tv=0, air=0, grad=0, idem=0),
                                        LossWeights(lambda_cycle=2.0))
    assert_close(only_cycle.loss_g, 2.0)
    assert_(set(breakdown.as_dict()) == {'cycle_a', 'cycle_b', 'adv', 'tv', 'air', 'grad', 'idem',
                                         'd', 'loss_g', 'loss_d'})


def test_compose_generator_loss_non_finite():
    terms = dict(cycle_a=0.5, cycle_b=0.5, adv=1.0, tv=1.0, air=math.inf, grad=1.0, idem=1.0)
    with pytest.raises(TrainingFaultError) as error:
        compose_generator_loss(terms)
    assert_('air' in str(error.value))
    assert_(math.isinf(error.value.breakdown.air))
