import logging

from torch import nn

from ._generator import conv_block, check_divisible, seeded_build, weights_init_normal
from ._specs import DiscriminatorSpec, NetworkHandle

logger = logging.getLogger(__name__)


class Discriminator(nn.Module):
    """Patch discriminator returning a (batch, 1, H/8, W/8) map of real/fake scores."""

    def __init__(self, spec=DiscriminatorSpec()):
        super().__init__()
        self.spec = spec
        layers = spec.layers()
        in_channels = [1] + [layer.out_channels for layer in layers[:-1]]
        self.layers = nn.Sequential(*(conv_block(c_in, layer) for c_in, layer in zip(in_channels, layers)))

    def forward(self, x):
        check_divisible(x, self.spec.downsampling)
        return self.layers(x)


def build_discriminator(spec=DiscriminatorSpec(), random_state=None):
    """Instantiates a patch discriminator with Normal(0, 0.02) weights.

    Parameters
    ----------
    spec : DiscriminatorSpec
    random_state : int or None

    Returns
    -------
    NetworkHandle
    """
    def factory():
        module = Discriminator(spec)
        module.apply(weights_init_normal)
        return module

    handle = NetworkHandle(seeded_build(factory, random_state), spec)
    logger.debug('built discriminator with %d parameters', handle.parameter_count)
    return handle
