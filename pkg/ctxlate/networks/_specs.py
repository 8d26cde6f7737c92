"""Declarative descriptions of the generator and discriminator.

A spec is an immutable value. Both the torch modules and the receptive-field
arithmetic are derived from ``spec.layers()``, so the two can never disagree.
"""
from dataclasses import dataclass, asdict

from ..exceptions import ConfigurationError

LAYER_KINDS = ('conv', 'down_conv', 'residual_block', 'unpool_residual')
NORMALIZATIONS = ('instance_no_affine', 'none')
ACTIVATIONS = ('relu', 'leaky_relu_0.2', 'tanh', 'none')


def same_padding(kernel, stride):
    """(before, after) padding keeping ``ceil(n / stride)`` outputs for any n divisible by stride."""
    total = max(kernel - stride, 0)
    return total // 2, total - total // 2


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    kernel: int
    stride: int
    out_channels: int
    normalization: str = 'instance_no_affine'
    activation: str = 'relu'

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigurationError('unknown layer kind {!r}, expected one of {}'.format(self.kind, LAYER_KINDS))
        if not (self.kernel % 2 == 1 or self.kernel == 4):
            raise ConfigurationError('kernel must be odd or 4, got {}'.format(self.kernel))
        if self.stride not in (1, 2):
            raise ConfigurationError('stride must be 1 or 2, got {}'.format(self.stride))
        if self.out_channels < 1:
            raise ConfigurationError('out_channels must be positive, got {}'.format(self.out_channels))
        if self.normalization not in NORMALIZATIONS:
            raise ConfigurationError('unknown normalization {!r}'.format(self.normalization))
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError('unknown activation {!r}'.format(self.activation))

    @property
    def padding(self):
        return same_padding(self.kernel, self.stride)


@dataclass(frozen=True)
class GeneratorSpec:
    """Encoder-decoder generator with residual bottleneck and additive skips.

    Parameters
    ----------
    stem_channels : int, default is 32
    encoder_channels : tuple of int, default is (32, 64, 128)
        channels of the three 3x3 stride-2 down convolutions
    n_residual_blocks : int, default is 9
    decoder_channels : tuple of int, default is (64, 32, 32)
        channels of the three unpool + residual stages; they must match the
        encoder feature they are added to (second, first encoder stage, stem)
    latent_noise_sd : float, default is 0.05
        sd of the Gaussian noise added after ``noise_after_block`` residual
        blocks, in training mode only
    noise_after_block : int, default is 4
        only checked against ``n_residual_blocks`` when the noise is on
    stem_padding_value : float, default is -1.0
        constant padding of the stem, the scaled intensity of air
    normalization : {'instance_no_affine', 'none'}
    """
    stem_channels: int = 32
    encoder_channels: tuple = (32, 64, 128)
    n_residual_blocks: int = 9
    decoder_channels: tuple = (64, 32, 32)
    latent_noise_sd: float = 0.05
    noise_after_block: int = 4
    stem_padding_value: float = -1.0
    normalization: str = 'instance_no_affine'

    def __post_init__(self):
        object.__setattr__(self, 'encoder_channels', tuple(self.encoder_channels))
        object.__setattr__(self, 'decoder_channels', tuple(self.decoder_channels))
        if len(self.encoder_channels) != 3 or len(self.decoder_channels) != 3:
            raise ConfigurationError('the generator has exactly three encoder and three decoder stages')
        skips = (self.encoder_channels[1], self.encoder_channels[0], self.stem_channels)
        if self.decoder_channels != skips:
            raise ConfigurationError('decoder channels {} must equal the skip channels {}'.format(
                self.decoder_channels, skips))
        if self.latent_noise_sd > 0 and not 0 <= self.noise_after_block <= self.n_residual_blocks:
            raise ConfigurationError('noise_after_block must lie in [0, n_residual_blocks]')
        if self.latent_noise_sd < 0:
            raise ConfigurationError('latent_noise_sd must be non-negative')
        self.layers()

    def layers(self):
        norm = self.normalization
        layers = [LayerSpec('conv', 7, 1, self.stem_channels, norm, 'relu')]
        layers += [LayerSpec('down_conv', 3, 2, channels, norm, 'relu') for channels in self.encoder_channels]
        layers += [LayerSpec('residual_block', 3, 1, self.encoder_channels[-1], norm, 'none')
                   for _ in range(self.n_residual_blocks)]
        layers += [LayerSpec('unpool_residual', 3, 1, channels, norm, 'relu') for channels in self.decoder_channels]
        layers.append(LayerSpec('conv', 7, 1, 1, 'none', 'tanh'))
        return layers

    def as_dict(self):
        return dict(asdict(self), kind='generator')


@dataclass(frozen=True)
class DiscriminatorSpec:
    """Fully convolutional patch discriminator.

    Parameters
    ----------
    channels : tuple of int, default is (32, 64, 128, 256, 256, 1)
    strides : tuple of int, default is (1, 2, 2, 2, 1, 1)
    kernel : int, default is 4
    normalization : {'instance_no_affine', 'none'}
        applied to every layer but the last
    """
    channels: tuple = (32, 64, 128, 256, 256, 1)
    strides: tuple = (1, 2, 2, 2, 1, 1)
    kernel: int = 4
    normalization: str = 'instance_no_affine'

    def __post_init__(self):
        object.__setattr__(self, 'channels', tuple(self.channels))
        object.__setattr__(self, 'strides', tuple(self.strides))
        if len(self.channels) != len(self.strides) or not self.channels:
            raise ConfigurationError('channels and strides must be non-empty and of equal length')
        if self.channels[-1] != 1:
            raise ConfigurationError('the last layer must produce a single score channel')
        self.layers()

    @property
    def downsampling(self):
        factor = 1
        for stride in self.strides:
            factor *= stride
        return factor

    def layers(self):
        layers = []
        for index, (channels, stride) in enumerate(zip(self.channels, self.strides)):
            last = index == len(self.channels) - 1
            layers.append(LayerSpec('down_conv' if stride == 2 else 'conv', self.kernel, stride, channels,
                                    'none' if last else self.normalization,
                                    'none' if last else 'leaky_relu_0.2'))
        return layers

    def as_dict(self):
        return dict(asdict(self), kind='discriminator')


def spec_from_dict(values):
    """Inverse of ``as_dict`` for both spec types."""
    values = dict(values)
    kind = values.pop('kind', None)
    if kind == 'generator':
        return GeneratorSpec(**values)
    if kind == 'discriminator':
        return DiscriminatorSpec(**values)
    raise ConfigurationError('unknown network kind {!r}'.format(kind))


@dataclass
class NetworkHandle:
    """An instantiated network together with the spec it was built from."""
    module: object
    spec: object

    @property
    def parameter_count(self):
        return sum(parameter.numel() for parameter in self.module.parameters())

    def __call__(self, batch):
        return self.module(batch)
