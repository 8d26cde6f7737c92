from ._config import TrainConfig, config_from_dict, load_config, save_config, lr_schedule, with_weights
from ._trainer import (TrainState, StructurePreservingCycleGAN, build_state, train_step, failure_check, fit,
                       run_training, save_state, restore_state, generator_terms, LOG_FIELDS, FAILURE_RATIO)
