import enum
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import tensorly as tl

from ..networks import load_checkpoint, run_generators
from ..preprocess import (AIR_HU, CropSpec, crop_window, pad_to_multiple, unpad, preprocess_volume, unscale)
from ..training import failure_check
from ..utils import loss_cycle
from ..volume import Modality, load_volume, save_volume

logger = logging.getLogger(__name__)


class Direction(str, enum.Enum):
    C_TO_P = 'C_to_P'
    P_TO_C = 'P_to_C'


# generator applied for each direction, and the modality it produces
_GENERATOR = {Direction.C_TO_P: 'G_CP', Direction.P_TO_C: 'G_PC'}
_INVERSE = {Direction.C_TO_P: 'G_PC', Direction.P_TO_C: 'G_CP'}
_OUTPUT_MODALITY = {Direction.C_TO_P: Modality.SYN_PLAN_CT, Direction.P_TO_C: Modality.SYN_CBCT}


@dataclass(frozen=True)
class ScaledPair:
    """Scaled network input and output slices, both of shape (d, h', w')."""
    input: np.ndarray
    output: np.ndarray


@dataclass(frozen=True)
class CycleDiagnostics:
    """Per-slice cycle statistics of a :func:`cycle_translate` run.

    Parameters
    ----------
    cycle_loss : ndarray of shape (d,)
        mean absolute cycle error of each slice, as Loss_cycleA
    verdicts : list of {'ok', 'suspect'} or None
        failure monitor against ``reference_cycle_loss``, None without one
    reference_cycle_loss : float or None
        converged cycle loss stored in the checkpoint
    scaled_input, scaled_cycle : ndarray of shape (d, h', w')
    slices_per_second : float
    """
    cycle_loss: np.ndarray
    verdicts: list
    reference_cycle_loss: float
    scaled_input: np.ndarray
    scaled_cycle: np.ndarray
    slices_per_second: float


@dataclass(frozen=True)
class TranslationJob:
    """One volume to translate with a trained checkpoint.

    Parameters
    ----------
    checkpoint : str
    input_path : str
    output_path : str, optional
        the translated volume is written here when given
    crop : CropSpec or None
        network input window, jitter is forced to 0; None translates the
        whole slice, padded with air up to a multiple of 8
    direction : {'C_to_P', 'P_to_C'}
    batch_size : int, default is 8
    device : str, default is 'cpu'
    per_volume_otsu : bool, default is False
    """
    checkpoint: str
    input_path: str
    output_path: str = None
    crop: CropSpec = field(default_factory=lambda: CropSpec(jitter=0))
    direction: Direction = Direction.C_TO_P
    batch_size: int = 8
    device: str = 'cpu'
    per_volume_otsu: bool = False

    def __post_init__(self):
        if self.crop is not None and self.crop.jitter:
            object.__setattr__(self, 'crop', self.crop.centered())
        object.__setattr__(self, 'direction', Direction(self.direction))
        if self.batch_size < 1:
            raise ValueError('batch_size must be positive, got {}'.format(self.batch_size))


def _network_input(scaled, crop):
    """Window of the (d, h, w) scaled stack fed to the networks and a function re-embedding results."""
    height, width = scaled.shape[1:]
    if crop is None:
        padded, pads = pad_to_multiple(scaled, 8, fill=-1.0)

        def embed(result):
            return unpad(result, pads)
        return padded, embed

    row, col = crop_window((height, width), crop)

    def embed(result):
        canvas = np.full((len(result), height, width), np.nan, dtype=result.dtype)
        canvas[:, row:row + crop.height, col:col + crop.width] = result
        return canvas
    return scaled[:, row:row + crop.height, col:col + crop.width], embed


def _to_volume(scaled_stack, embed, volume, modality):
    hu = embed(unscale(np.clip(scaled_stack, -1.0, 1.0)))
    hu = np.where(np.isnan(hu), AIR_HU, hu)
    return volume.with_voxels(np.moveaxis(hu, 0, -1), modality=modality)


def translate_with(modules, volume, crop=None, modality=Modality.SYN_PLAN_CT, batch_size=8, device='cpu',
                   per_volume_otsu=False, return_scaled=False):
    """Translates every axial slice of ``volume`` with ``modules`` applied in sequence.

    Each slice is masked, clipped and scaled, cut to the network window,
    translated, mapped back to HU and re-embedded in the original canvas;
    voxels outside the window are air.

    Parameters
    ----------
    modules : list of torch.nn.Module
    volume : CTVolume
    crop : CropSpec or None
    modality : Modality
        modality of the returned volume
    batch_size : int, default is 8
    device : str
    per_volume_otsu : bool, default is False
    return_scaled : bool, default is False
        if True, also returns the scaled network input and output

    Returns
    -------
    CTVolume
        same shape, spacing and patient as ``volume``
    scaled : ScaledPair, optional
    """
    scaled, _ = preprocess_volume(volume, per_volume=per_volume_otsu)
    network_input, embed = _network_input(scaled, crop)
    network_output = run_generators(modules, network_input, batch_size=batch_size, device=device)
    result = _to_volume(network_output, embed, volume, modality)
    if return_scaled:
        return result, ScaledPair(input=network_input, output=network_output)
    return result


def _load_job(job, names):
    checkpoint = load_checkpoint(job.checkpoint, map_location=job.device)
    modules = [checkpoint.restore(name, job.device).module for name in names]
    return checkpoint, modules, load_volume(job.input_path)


def translate_volume(job):
    """Translates the input volume of ``job`` with the matching generator.

    Returns
    -------
    CTVolume
        modality 'SynPlanCT' for C_to_P and 'SynCBCT' for P_to_C; written to
        ``job.output_path`` when set
    """
    _, modules, volume = _load_job(job, [_GENERATOR[job.direction]])
    start = time.perf_counter()
    result = translate_with(modules, volume, crop=job.crop, modality=_OUTPUT_MODALITY[job.direction],
                            batch_size=job.batch_size, device=job.device, per_volume_otsu=job.per_volume_otsu)
    elapsed = time.perf_counter() - start
    logger.info('translated %d slices of %s in %.2fs (%.1f slices/s)', volume.n_slices, job.input_path,
                elapsed, volume.n_slices / max(elapsed, 1e-12))
    if job.output_path is not None:
        save_volume(result, job.output_path)
    return result


def cycle_translate(job, return_diagnostics=False):
    """Translates the input volume to the other domain and back.

    Parameters
    ----------
    job : TranslationJob
        ``job.direction`` is the first leg of the cycle
    return_diagnostics : bool, default is False

    Returns
    -------
    CTVolume
        cyclic reconstruction, with the modality of the input
    diagnostics : CycleDiagnostics, optional
    """
    checkpoint, modules, volume = _load_job(job, [_GENERATOR[job.direction], _INVERSE[job.direction]])
    start = time.perf_counter()
    result, scaled = translate_with(modules, volume, crop=job.crop, modality=volume.modality,
                                    batch_size=job.batch_size, device=job.device,
                                    per_volume_otsu=job.per_volume_otsu, return_scaled=True)
    throughput = volume.n_slices / max(time.perf_counter() - start, 1e-12)
    logger.info('cycle-translated %d slices of %s (%.1f slices/s)', volume.n_slices, job.input_path, throughput)
    if job.output_path is not None:
        save_volume(result, job.output_path)
    if not return_diagnostics:
        return result

    with tl.backend_context('numpy'):
        cycle_loss = np.array([float(loss_cycle(x[None, None], x_cyc[None, None], x[None, None], x[None, None])[0])
                               for x, x_cyc in zip(scaled.input.astype(np.float64),
                                                   scaled.output.astype(np.float64))])
    reference = checkpoint.reference_cycle_loss
    verdicts = None
    if reference is not None and reference > 0:
        verdicts = [failure_check(value, reference) for value in cycle_loss]
        n_suspect = verdicts.count('suspect')
        if n_suspect:
            logger.warning('%d of %d slices exceed three times the reference cycle loss %.5f',
                           n_suspect, len(verdicts), reference)
    diagnostics = CycleDiagnostics(cycle_loss=cycle_loss, verdicts=verdicts, reference_cycle_loss=reference,
                                   scaled_input=scaled.input, scaled_cycle=scaled.output,
                                   slices_per_second=throughput)
    return result, diagnostics
