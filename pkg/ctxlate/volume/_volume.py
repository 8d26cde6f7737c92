import enum
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..exceptions import VolumeFormatError

logger = logging.getLogger(__name__)

HU_MIN = -1024
HU_MAX = 3071
FORMAT_VERSION = 1
_PAYLOAD_DTYPE = np.dtype('<i2')


class Modality(str, enum.Enum):
    CBCT = 'CBCT'
    PLAN_CT = 'PlanCT'
    SYN_PLAN_CT = 'SynPlanCT'
    SYN_CBCT = 'SynCBCT'
    PHANTOM_TRUTH = 'PhantomTruth'
    PHANTOM_CBCT = 'PhantomCBCT'


@dataclass(frozen=True, eq=False)
class CTVolume:
    """Volumetric CT image in Hounsfield units.

    Parameters
    ----------
    voxels : ndarray of shape (h, w, d)
        HU values, axial slices along the third axis. Stored as int16 and
        made read-only.
    spacing : tuple of 3 floats
        Voxel size (dx, dy, dz) in mm.
    modality : Modality or str
    patient_id : str
    """
    voxels: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    modality: Modality = Modality.CBCT
    patient_id: str = ''

    def __post_init__(self):
        voxels = np.asarray(self.voxels)
        if voxels.ndim != 3 or min(voxels.shape) <= 0:
            raise ValueError('voxels must be a non-empty 3D array, got shape {}'.format(voxels.shape))
        if np.issubdtype(voxels.dtype, np.floating):
            if not np.all(np.isfinite(voxels)):
                raise ValueError('voxels contain non-finite values')
            voxels = np.rint(voxels)
        low, high = voxels.min(), voxels.max()
        if low < HU_MIN or high > HU_MAX:
            raise ValueError('voxels out of HU range [{}, {}]: found [{}, {}]'.format(HU_MIN, HU_MAX, low, high))
        voxels = voxels.astype(np.int16)
        voxels.flags.writeable = False
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or not all(s > 0 for s in spacing):
            raise ValueError('spacing must hold three positive values, got {}'.format(self.spacing))
        object.__setattr__(self, 'voxels', voxels)
        object.__setattr__(self, 'spacing', spacing)
        object.__setattr__(self, 'modality', Modality(self.modality))
        object.__setattr__(self, 'patient_id', str(self.patient_id))

    @property
    def shape(self):
        return self.voxels.shape

    @property
    def n_slices(self):
        return self.voxels.shape[2]

    def slice(self, index):
        """Axial slice ``index`` as a read-only (h, w) array."""
        return self.voxels[:, :, index]

    def with_voxels(self, voxels, modality=None):
        """Copy of this volume carrying new voxels (and optionally modality)."""
        return CTVolume(voxels, spacing=self.spacing,
                        modality=self.modality if modality is None else modality,
                        patient_id=self.patient_id)

    def __eq__(self, other):
        if not isinstance(other, CTVolume):
            return NotImplemented
        return (self.spacing == other.spacing and self.modality == other.modality
                and self.patient_id == other.patient_id
                and self.voxels.shape == other.voxels.shape
                and np.array_equal(self.voxels, other.voxels))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class ScaledSlice:
    """A network-ready 2D slice with values in [-1, 1] and sides divisible by 8."""
    pixels: np.ndarray = field(repr=False)

    def __post_init__(self):
        pixels = np.asarray(self.pixels, dtype=np.float32)
        if pixels.ndim != 2:
            raise ValueError('a scaled slice is 2D, got shape {}'.format(pixels.shape))
        if pixels.shape[0] % 8 or pixels.shape[1] % 8:
            raise ValueError('scaled slice sides must be divisible by 8, got {}'.format(pixels.shape))
        if pixels.size and (pixels.min() < -1 or pixels.max() > 1):
            raise ValueError('scaled slice values must lie in [-1, 1]')
        object.__setattr__(self, 'pixels', pixels)

    @classmethod
    def from_array(cls, array):
        return cls(array)

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]


def _paths(path):
    path = Path(path)
    if path.suffix in ('.json', '.raw'):
        path = path.with_suffix('')
    return path.with_suffix('.json'), path.with_suffix('.raw')


def save_volume(volume, path):
    """Writes a volume as a JSON sidecar plus a raw little-endian int16 payload.

    Slices are written contiguously (slice-major): the payload is the
    (d, h, w) C-ordered array.

    Parameters
    ----------
    volume : CTVolume
    path : str or pathlib.Path
        ``<name>``, ``<name>.json`` or ``<name>.raw``.

    Returns
    -------
    pathlib.Path
        path of the sidecar
    """
    if not isinstance(volume, CTVolume):
        raise TypeError('save_volume expects a CTVolume, got {}'.format(type(volume).__name__))
    sidecar_path, raw_path = _paths(path)
    h, w, d = volume.shape
    sidecar = {
        'format_version': FORMAT_VERSION,
        'dims': [h, w, d],
        'spacing': list(volume.spacing),
        'modality': volume.modality.value,
        'patient_id': volume.patient_id,
        'dtype': 'int16',
        'byte_order': 'little',
        'layout': 'slice-major',
    }
    payload = np.ascontiguousarray(np.moveaxis(volume.voxels, 2, 0)).astype(_PAYLOAD_DTYPE)
    sidecar_path.parent.mkdir(parents=True, exist_ok=True)
    raw_path.write_bytes(payload.tobytes())
    sidecar_path.write_text(json.dumps(sidecar, indent=2))
    logger.debug('wrote volume %s (%dx%dx%d)', sidecar_path, h, w, d)
    return sidecar_path


def _sidecar_field(sidecar, name, sidecar_path):
    try:
        return sidecar[name]
    except KeyError:
        raise VolumeFormatError('{}: missing field "{}"'.format(sidecar_path, name)) from None


def load_volume(path):
    """Reads a volume written by :func:`save_volume`.

    Parameters
    ----------
    path : str or pathlib.Path

    Returns
    -------
    CTVolume
    """
    sidecar_path, raw_path = _paths(path)
    if not sidecar_path.exists():
        raise FileNotFoundError('volume sidecar not found: {}'.format(sidecar_path))
    if not raw_path.exists():
        raise FileNotFoundError('volume payload not found: {}'.format(raw_path))
    try:
        sidecar = json.loads(sidecar_path.read_text())
    except json.JSONDecodeError as err:
        raise VolumeFormatError('{}: invalid JSON ({})'.format(sidecar_path, err)) from None

    dims = _sidecar_field(sidecar, 'dims', sidecar_path)
    if len(dims) != 3 or not all(isinstance(n, int) and n > 0 for n in dims):
        raise VolumeFormatError('{}: field "dims" must hold three positive integers, got {}'.format(sidecar_path, dims))
    dtype = sidecar.get('dtype', 'int16')
    if dtype != 'int16':
        raise VolumeFormatError('{}: field "dtype" must be "int16", got "{}"'.format(sidecar_path, dtype))
    byte_order = sidecar.get('byte_order', 'little')
    if byte_order != 'little':
        raise VolumeFormatError('{}: field "byte_order" must be "little", got "{}"'.format(sidecar_path, byte_order))

    payload = raw_path.read_bytes()
    h, w, d = dims
    expected = h * w * d * _PAYLOAD_DTYPE.itemsize
    if len(payload) != expected:
        raise VolumeFormatError('{}: field "dims" {} requires {} payload bytes, {} has {}'.format(
            sidecar_path, dims, expected, raw_path.name, len(payload)))
    voxels = np.moveaxis(np.frombuffer(payload, dtype=_PAYLOAD_DTYPE).reshape(d, h, w), 0, 2)
    if voxels.min() < HU_MIN or voxels.max() > HU_MAX:
        raise VolumeFormatError('{}: field "voxels" out of HU range [{}, {}]'.format(raw_path, HU_MIN, HU_MAX))

    spacing = _sidecar_field(sidecar, 'spacing', sidecar_path)
    if len(spacing) != 3 or not all(s > 0 for s in spacing):
        raise VolumeFormatError('{}: field "spacing" must hold three positive values, got {}'.format(sidecar_path, spacing))
    modality = _sidecar_field(sidecar, 'modality', sidecar_path)
    try:
        modality = Modality(modality)
    except ValueError:
        raise VolumeFormatError('{}: unknown value "{}" for field "modality"'.format(sidecar_path, modality)) from None
    return CTVolume(voxels, spacing=tuple(spacing), modality=modality,
                    patient_id=sidecar.get('patient_id', ''))
