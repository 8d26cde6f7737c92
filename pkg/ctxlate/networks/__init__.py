from ._specs import (LayerSpec, GeneratorSpec, DiscriminatorSpec, NetworkHandle, same_padding,
                     spec_from_dict)
from ._generator import Generator, build_generator, weights_init_normal, run_generators
from ._discriminator import Discriminator, build_discriminator
from ._receptive_field import receptive_field, receptive_field_span
from ._checkpoint import (Checkpoint, save_checkpoint, load_checkpoint, CHECKPOINT_VERSION,
                          GENERATOR_NAMES, DISCRIMINATOR_NAMES, NETWORK_NAMES)
