import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from tqdm import tqdm

from ..preprocess import preprocess_volume
from ..volume import load_volume

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PatientRecord:
    """One manifest patient: volume paths, seeds and ROI boxes."""
    patient_id: str
    truth: Path
    cbct: Path
    rois: tuple
    phantom_seed: int
    degradation_seed: int


@dataclass(frozen=True)
class Manifest:
    """Patients of a phantom dataset and the specs it was emitted with."""
    patients: tuple
    phantom_spec: dict
    degradation_spec: dict
    root: Path


@dataclass(frozen=True)
class SliceSet:
    """Stacked scaled slices and the (path, slice index) each one came from."""
    slices: np.ndarray
    sources: list

    def __len__(self):
        return len(self.slices)


def load_manifest(path):
    """Reads a phantom dataset manifest.

    Volume file names are resolved against the manifest directory and ROI
    boxes are attached to each patient.

    Parameters
    ----------
    path : str or Path
        manifest file, or the directory holding 'manifest.json'

    Returns
    -------
    Manifest
        patients in manifest order, volume paths resolved
    """
    path = Path(path)
    if path.is_dir():
        path = path / 'manifest.json'
    with open(path) as handle:
        manifest = json.load(handle)
    root = path.parent
    try:
        patients = tuple(PatientRecord(patient_id=entry['patient_id'],
                                       truth=root / entry['truth'],
                                       cbct=root / entry['cbct'],
                                       rois=tuple(entry['rois']),
                                       phantom_seed=entry['phantom_seed'],
                                       degradation_seed=entry['degradation_seed'])
                         for entry in manifest['patients'])
    except KeyError as error:
        raise ValueError('manifest {} misses field {}'.format(path, error)) from error
    return Manifest(patients=patients, phantom_spec=manifest.get('phantom_spec'),
                    degradation_spec=manifest.get('degradation_spec'), root=root)


def split_patients(manifest, n_holdout):
    """Splits manifest patients into training and held-out tuples (held-out last)."""
    if not 0 <= n_holdout < len(manifest.patients):
        raise ValueError('n_holdout must leave at least one training patient')
    cut = len(manifest.patients) - n_holdout
    return manifest.patients[:cut], manifest.patients[cut:]


def load_scaled_slices(paths, per_volume=False, skip_empty=True, verbose=False):
    """Masked, clipped and scaled axial slices of several volumes.

    Parameters
    ----------
    paths : list of str or Path
        volume files (sidecar or payload path)
    per_volume : bool, default is False
        one Otsu threshold per volume instead of per slice
    skip_empty : bool, default is True
        drop slices without a body
    verbose : bool, default is False
        progress bar on stderr

    Returns
    -------
    SliceSet
        'slices' (ndarray (n, h, w), float32 in [-1, 1]) and 'sources'
        (list of (path, slice index))
    """
    if not paths:
        raise ValueError('no volume paths given')
    slices, sources = [], []
    for path in tqdm(paths, desc='loading volumes', disable=not verbose):
        volume = load_volume(path)
        scaled, masks = preprocess_volume(volume, per_volume=per_volume)
        for k, mask in enumerate(masks):
            if skip_empty and mask is None:
                continue
            slices.append(scaled[k])
            sources.append((Path(path), k))
    shapes = {s.shape for s in slices}
    if len(shapes) > 1:
        raise ValueError('volumes have different slice shapes: {}'.format(sorted(shapes)))
    if not slices:
        raise ValueError('no body slices found in {} volumes'.format(len(paths)))
    logger.info('loaded %d slices from %d volumes', len(slices), len(paths))
    return SliceSet(slices=np.stack(slices), sources=sources)
