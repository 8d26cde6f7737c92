__version__ = '0.1.0'

from . import volume
from . import preprocess
from . import data
from . import utils
from . import networks
from . import training
from . import translation
from . import evaluation
from .exceptions import (CTXlateError, VolumeFormatError, DegenerateInputError, ConfigurationError,
                         CheckpointError, TrainingFaultError)
