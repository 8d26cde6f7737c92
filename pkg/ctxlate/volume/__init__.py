from ._volume import (CTVolume, ScaledSlice, Modality, load_volume, save_volume,
                      HU_MIN, HU_MAX)
