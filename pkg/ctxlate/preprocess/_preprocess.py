import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..exceptions import ConfigurationError, DegenerateInputError
from ..volume import ScaledSlice

logger = logging.getLogger(__name__)

AIR_HU = -1000
CLIP_MIN = -500
CLIP_MAX = 200
_HALF_RANGE = (CLIP_MAX - CLIP_MIN) / 2
_CENTER = (CLIP_MAX + CLIP_MIN) / 2


@dataclass(frozen=True, eq=False)
class BodyMask:
    """Boolean body mask (True inside the body) and the Otsu threshold it came from."""
    mask: np.ndarray
    source_threshold: float


@dataclass(frozen=True)
class CropSpec:
    """Crop window, in pixels, and the maximum random offset from the centre.

    Defaults are the 480 wide by 384 high window used for network input.
    """
    height: int = 384
    width: int = 480
    jitter: int = 16

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0:
            raise ConfigurationError('crop sides must be positive, got {}x{}'.format(self.height, self.width))
        if self.height % 8 or self.width % 8:
            raise ConfigurationError('crop sides must be divisible by 8, got {}x{}'.format(self.height, self.width))
        if self.jitter < 0:
            raise ConfigurationError('jitter must be non-negative, got {}'.format(self.jitter))

    def centered(self):
        """Same window without jitter."""
        return CropSpec(self.height, self.width, 0)


def _histogram(values, nbins):
    counts, edges = np.histogram(values, bins=nbins, range=(values.min(), values.max()))
    centers = (edges[:-1] + edges[1:]) / 2
    return counts.astype(np.float64), centers


def otsu_threshold(image, nbins=256):
    """Otsu threshold of an HU image.

    Parameters
    ----------
    image : ndarray
        slice (or volume) of HU values
    nbins : int
        Default : 256, equal-width bins spanning [min, max] of ``image``

    Returns
    -------
    float
        centre of the last bin of the lower class; foreground is ``image > threshold``

    References
    ----------
    .. [1] Otsu, N. (1979). A threshold selection method from gray-level histograms.
           IEEE Transactions on Systems, Man, and Cybernetics, 9(1), 62-66.
    """
    values = np.asarray(image, dtype=np.float64).ravel()
    if values.size == 0 or values.min() == values.max():
        raise DegenerateInputError('Otsu threshold needs at least two distinct values')
    counts, centers = _histogram(values, nbins)

    # class weights and means for every split, accumulated from each end
    weight1 = np.cumsum(counts)
    weight2 = np.cumsum(counts[::-1])[::-1]
    mean1 = np.cumsum(counts * centers) / np.where(weight1 > 0, weight1, 1)
    mean2 = (np.cumsum((counts * centers)[::-1]) / np.where(weight2[::-1] > 0, weight2[::-1], 1))[::-1]
    variance12 = weight1[:-1] * weight2[1:] * (mean1[:-1] - mean2[1:]) ** 2
    return float(centers[np.argmax(variance12)])


def body_mask(image, threshold=None):
    """Body mask from an HU slice.

    The slice is thresholded (Otsu unless ``threshold`` is given), only the
    largest connected component is kept and its interior holes are filled.
    """
    image = np.asarray(image)
    if threshold is None:
        threshold = otsu_threshold(image)
    foreground = image > threshold
    labels, n_components = ndimage.label(foreground)
    if n_components > 1:
        sizes = ndimage.sum(foreground, labels, index=np.arange(1, n_components + 1))
        foreground = labels == (np.argmax(sizes) + 1)
    mask = ndimage.binary_fill_holes(foreground)
    return BodyMask(mask=mask, source_threshold=float(threshold))


def apply_body_mask(image, mask):
    """Replaces every voxel outside the body with air (-1000 HU)."""
    image = np.asarray(image)
    mask = mask.mask if isinstance(mask, BodyMask) else np.asarray(mask, dtype=bool)
    if image.shape != mask.shape:
        raise ValueError('mask shape {} does not match slice shape {}'.format(mask.shape, image.shape))
    return np.where(mask, image, np.asarray(AIR_HU, dtype=image.dtype))


def clip_and_scale(image):
    """Clips HU to [-500, 200] and maps it affinely onto [-1, 1].

    ``v -> (clip(v) + 150) / 350``; -465 HU lands on -0.9.
    """
    clipped = np.clip(np.asarray(image, dtype=np.float64), CLIP_MIN, CLIP_MAX)
    return (clipped - _CENTER) / _HALF_RANGE


def unscale(image):
    """Inverse of :func:`clip_and_scale` on [-1, 1]: ``v -> 350 v - 150``."""
    image = np.asarray(image, dtype=np.float64)
    if image.size and (image.min() < -1 or image.max() > 1):
        raise ValueError('scaled values must lie in [-1, 1], found [{}, {}]'.format(image.min(), image.max()))
    return image * _HALF_RANGE + _CENTER


def crop_window(shape, spec, random_state=None):
    """Top-left corner ``(row, col)`` of the crop window for a slice of ``shape``."""
    height, width = shape[-2:]
    if spec.height + 2 * spec.jitter > height or spec.width + 2 * spec.jitter > width:
        if spec.height > height or spec.width > width:
            raise ValueError('crop {}x{} is larger than the slice {}x{}'.format(spec.height, spec.width, height, width))
        raise ValueError('crop {}x{} with jitter {} does not fit in the slice {}x{}'.format(
            spec.height, spec.width, spec.jitter, height, width))
    row = (height - spec.height) // 2
    col = (width - spec.width) // 2
    if spec.jitter:
        rng = np.random.default_rng(random_state)
        row += int(rng.integers(-spec.jitter, spec.jitter + 1))
        col += int(rng.integers(-spec.jitter, spec.jitter + 1))
    return row, col


def center_crop(image, spec, random_state=None):
    """Crops ``spec.height x spec.width`` around the slice centre.

    Parameters
    ----------
    image : ndarray of shape (..., h, w)
    spec : CropSpec
    random_state : {None, int, np.random.Generator}
        seeds the jitter; ``spec.jitter == 0`` gives the exact centre crop

    Returns
    -------
    ndarray of shape (..., spec.height, spec.width)
    """
    row, col = crop_window(np.shape(image), spec, random_state)
    return np.asarray(image)[..., row:row + spec.height, col:col + spec.width]


def pad_to_multiple(image, multiple=8, fill=AIR_HU):
    """Symmetrically pads the last two axes up to a multiple of ``multiple``.

    Returns
    -------
    padded : ndarray
    pads : tuple of (before, after) pairs for rows and columns
    """
    image = np.asarray(image)
    pads = []
    for size in image.shape[-2:]:
        extra = (-size) % multiple
        pads.append((extra // 2, extra - extra // 2))
    width = [(0, 0)] * (image.ndim - 2) + pads
    return np.pad(image, width, mode='constant', constant_values=fill), tuple(pads)


def unpad(image, pads):
    (top, bottom), (left, right) = pads
    height, width = image.shape[-2:]
    return image[..., top:height - bottom, left:width - right]


def identity_alignment(volume):
    """Rigid alignment hook; phantom pairs are aligned by construction."""
    return volume


def preprocess_volume(volume, per_volume=False, align=identity_alignment):
    """Masks and scales every axial slice of a volume.

    Parameters
    ----------
    volume : CTVolume
    per_volume : bool
        Default : False. If True a single Otsu threshold is computed on the
        whole volume, otherwise one threshold per slice.
    align : callable
        CTVolume -> CTVolume hook applied first (rigid pre-alignment).

    Returns
    -------
    scaled : ndarray of shape (d, h, w), float32 in [-1, 1]
    masks : list of BodyMask (None for slices without a body)
    """
    volume = align(volume)
    threshold = otsu_threshold(volume.voxels) if per_volume else None
    scaled = np.full((volume.n_slices,) + volume.shape[:2], -1.0, dtype=np.float32)
    masks = []
    for k in range(volume.n_slices):
        hu = volume.slice(k)
        try:
            mask = body_mask(hu, threshold=threshold)
        except DegenerateInputError:
            logger.debug('slice %d of %s is constant, treated as air', k, volume.patient_id)
            masks.append(None)
            continue
        masks.append(mask)
        scaled[k] = clip_and_scale(apply_body_mask(hu, mask))
    return scaled, masks


def prepare_slice(image, spec, random_state=None):
    """Mask, clip/scale and crop one HU slice into a network-ready ScaledSlice."""
    scaled = clip_and_scale(apply_body_mask(image, body_mask(image)))
    return ScaledSlice(center_crop(scaled, spec, random_state))


def mask_volume(volume, per_volume=False, crop=None):
    """Body-masked copy of a volume in HU, optionally centre-cropped.

    Slices without a body are kept unchanged.

    Parameters
    ----------
    volume : CTVolume
    per_volume : bool, default is False
    crop : CropSpec, optional
        applied without jitter to every slice

    Returns
    -------
    CTVolume
    """
    threshold = otsu_threshold(volume.voxels) if per_volume else None
    masked = np.array(volume.voxels)
    for k in range(volume.n_slices):
        try:
            masked[:, :, k] = apply_body_mask(volume.slice(k), body_mask(volume.slice(k), threshold=threshold))
        except DegenerateInputError:
            continue
    if crop is not None:
        masked = np.moveaxis(center_crop(np.moveaxis(masked, -1, 0), crop.centered()), 0, -1)
    return volume.with_voxels(masked)
