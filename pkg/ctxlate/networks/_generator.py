import logging

import numpy as np
import torch
from torch import nn

from ._specs import GeneratorSpec, NetworkHandle

logger = logging.getLogger(__name__)


def weights_init_normal(module):
    """Normal(0, 0.02) convolution weights and zero biases."""
    if isinstance(module, nn.Conv2d):
        nn.init.normal_(module.weight, 0.0, 0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)


def seeded_build(factory, random_state):
    """Runs ``factory`` under ``torch.manual_seed(random_state)`` without touching the global RNG."""
    if random_state is None:
        return factory()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(random_state)
        return factory()


def check_divisible(batch, factor):
    height, width = batch.shape[-2:]
    if height % factor or width % factor:
        raise ValueError('input spatial dims must be divisible by {}, got {}x{}'.format(factor, height, width))


def normalization_layer(layer):
    if layer.normalization == 'instance_no_affine':
        return nn.InstanceNorm2d(layer.out_channels, affine=False)
    return nn.Identity()


def activation_layer(layer):
    return {'relu': nn.ReLU(),
            'leaky_relu_0.2': nn.LeakyReLU(0.2),
            'tanh': nn.Tanh(),
            'none': nn.Identity()}[layer.activation]


def padded_conv(in_channels, layer, padding_value=None):
    """Convolution preceded by explicit same padding, reflect unless a constant is given."""
    before, after = layer.padding
    pads = (before, after, before, after)
    pad = nn.ReflectionPad2d(pads) if padding_value is None else nn.ConstantPad2d(pads, padding_value)
    return nn.Sequential(pad, nn.Conv2d(in_channels, layer.out_channels, layer.kernel, stride=layer.stride))


def conv_block(in_channels, layer, padding_value=None):
    return nn.Sequential(padded_conv(in_channels, layer, padding_value),
                         normalization_layer(layer), activation_layer(layer))


class ResidualBlock(nn.Module):
    """conv-norm-relu-conv-norm plus a shortcut.

    The shortcut is the identity when channel counts agree and a 1x1
    convolution otherwise.
    """

    def __init__(self, in_channels, layer):
        super().__init__()
        self.body = nn.Sequential(padded_conv(in_channels, layer), normalization_layer(layer), nn.ReLU(),
                                  padded_conv(layer.out_channels, layer), normalization_layer(layer))
        if in_channels == layer.out_channels:
            self.shortcut = nn.Identity()
        else:
            self.shortcut = nn.Conv2d(in_channels, layer.out_channels, 1)
        self.activation = activation_layer(layer)

    def forward(self, x):
        return self.activation(self.shortcut(x) + self.body(x))


class UnpoolResidualBlock(nn.Module):
    """Nearest-neighbour 2x upsampling followed by a residual block."""

    def __init__(self, in_channels, layer):
        super().__init__()
        self.unpool = nn.Upsample(scale_factor=2, mode='nearest')
        self.block = ResidualBlock(in_channels, layer)

    def forward(self, x):
        return self.block(self.unpool(x))


class Generator(nn.Module):
    """Image-to-image generator mapping (batch, 1, H, W) to (batch, 1, H, W) in [-1, 1].

    Parameters
    ----------
    spec : GeneratorSpec
    """

    def __init__(self, spec=GeneratorSpec()):
        super().__init__()
        self.spec = spec
        layers = spec.layers()
        n_blocks = spec.n_residual_blocks
        stem, encoder = layers[0], layers[1:4]
        bottleneck, decoder, head = layers[4:4 + n_blocks], layers[4 + n_blocks:7 + n_blocks], layers[-1]

        self.stem = conv_block(1, stem, padding_value=spec.stem_padding_value)
        channels = [stem.out_channels] + [layer.out_channels for layer in encoder]
        self.encoder = nn.ModuleList(conv_block(c_in, layer) for c_in, layer in zip(channels, encoder))
        self.bottleneck = nn.ModuleList(ResidualBlock(channels[-1], layer) for layer in bottleneck)
        decoder_in = [channels[-1]] + [layer.out_channels for layer in decoder[:-1]]
        self.decoder = nn.ModuleList(UnpoolResidualBlock(c_in, layer) for c_in, layer in zip(decoder_in, decoder))
        self.head = conv_block(decoder[-1].out_channels, head)

    def forward(self, x):
        check_divisible(x, 8)
        stem = self.stem(x)
        features = [stem]
        for down in self.encoder:
            features.append(down(features[-1]))

        h = features[-1]
        for index, block in enumerate(self.bottleneck):
            if self.training and self.spec.latent_noise_sd > 0 and index == self.spec.noise_after_block:
                h = h + self.spec.latent_noise_sd * torch.randn_like(h)
            h = block(h)
        if self.training and self.spec.latent_noise_sd > 0 and self.spec.noise_after_block == len(self.bottleneck):
            h = h + self.spec.latent_noise_sd * torch.randn_like(h)

        # skips: second encoder stage, first encoder stage, stem
        for up, skip in zip(self.decoder, (features[2], features[1], features[0])):
            h = up(h) + skip
        return self.head(h)


def build_generator(spec=GeneratorSpec(), random_state=None):
    """Instantiates a generator with Normal(0, 0.02) weights.

    Parameters
    ----------
    spec : GeneratorSpec
    random_state : int or None
        seed of the weight initialization; the global torch RNG is left untouched

    Returns
    -------
    NetworkHandle
    """
    def factory():
        module = Generator(spec)
        module.apply(weights_init_normal)
        return module

    handle = NetworkHandle(seeded_build(factory, random_state), spec)
    logger.debug('built generator with %d parameters', handle.parameter_count)
    return handle


def run_generators(modules, slices, batch_size=8, device='cpu'):
    """Applies ``modules`` in sequence, in eval mode, to scaled slices.

    Parameters
    ----------
    modules : list of torch.nn.Module
    slices : ndarray of shape (n, h, w)
    batch_size : int, default is 8
    device : str

    Returns
    -------
    ndarray of shape (n, h, w), float32
    """
    slices = np.asarray(slices, dtype=np.float32)
    output = np.empty_like(slices)
    for module in modules:
        module.eval()
    with torch.no_grad():
        for start in range(0, len(slices), batch_size):
            batch = torch.from_numpy(slices[start:start + batch_size, None]).to(device)
            for module in modules:
                batch = module(batch)
            output[start:start + batch_size] = batch[:, 0].cpu().numpy()
    return output
