from ._translator import (Direction, TranslationJob, ScaledPair, CycleDiagnostics, translate_with, translate_volume,
                          cycle_translate)
