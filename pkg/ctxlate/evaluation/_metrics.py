import logging
from dataclasses import dataclass, asdict

import numpy as np
import tensorly as tl
from scipy import ndimage
from skimage.metrics import structural_similarity

from ..preprocess import CLIP_MIN, CLIP_MAX
from ..utils import gradient_magnitude

logger = logging.getLogger(__name__)

SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_SIGMA = 1.5
SSIM_WINDOW = 11
BLUR_SIGMA = 3.0
BLUR_TRUNCATE = 3.0
HISTOGRAM_BINS = 70
HISTOGRAM_RANGE = (CLIP_MIN, CLIP_MAX)
# HU threshold of the air masks used for Dice
AIR_THRESHOLD_HU = -465


@dataclass(frozen=True)
class ROISpec:
    """Axis-aligned box on one axial slice.

    Parameters
    ----------
    slice_index : int
    row, col : int
        top-left corner
    height, width : int, default is 10
    tissue : str
    roi_id : str, optional
    """
    slice_index: int
    row: int
    col: int
    height: int = 10
    width: int = 10
    tissue: str = ''
    roi_id: str = ''

    def __post_init__(self):
        if min(self.slice_index, self.row, self.col) < 0:
            raise ValueError('ROI position must be non-negative, got slice {} at ({}, {})'.format(
                self.slice_index, self.row, self.col))
        if self.height < 1 or self.width < 1:
            raise ValueError('ROI sides must be positive, got {}x{}'.format(self.height, self.width))

    @classmethod
    def from_manifest(cls, entry):
        """ROI from a manifest entry ('x' is the column, 'y' the row)."""
        return cls(slice_index=entry['slice'], row=entry['y'], col=entry['x'], height=entry['height'],
                   width=entry['width'], tissue=entry['tissue'], roi_id=entry.get('roi_id', ''))

    def fits(self, shape):
        height, width, depth = shape
        return (self.slice_index < depth and self.row + self.height <= height
                and self.col + self.width <= width)

    def extract(self, volume):
        if not self.fits(volume.shape):
            raise ValueError('ROI {} ({}x{} at slice {}, ({}, {})) lies outside a volume of shape {}'.format(
                self.roi_id or '?', self.height, self.width, self.slice_index, self.row, self.col, volume.shape))
        return volume.voxels[self.row:self.row + self.height, self.col:self.col + self.width, self.slice_index]

    def as_dict(self):
        return asdict(self)


def roi_stats(volume, roi):
    """Mean and population sd (HU) of the voxels inside ``roi``."""
    values = roi.extract(volume).astype(np.float64)
    return float(values.mean()), float(values.std())


@dataclass(frozen=True, eq=False)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray

    def as_dict(self):
        return {'edges': self.edges.tolist(), 'counts': self.counts.tolist()}


def volume_histogram(volume, bins=HISTOGRAM_BINS, value_range=HISTOGRAM_RANGE):
    """Histogram of every voxel of a volume.

    Values are clipped into ``value_range`` first, so the counts sum to the
    number of voxels. Bins are left-closed, the last one also holds the
    upper edge.

    Parameters
    ----------
    volume : CTVolume or ndarray
    bins : int, default is 70
    value_range : (float, float), default is (-500, 200)

    Returns
    -------
    Histogram
    """
    if int(bins) != bins or bins < 2:
        raise ValueError('a histogram needs at least 2 bins, got {}'.format(bins))
    low, high = (float(v) for v in value_range)
    if not (np.isfinite(low) and np.isfinite(high) and low < high):
        raise ValueError('invalid histogram range {}'.format(value_range))
    voxels = getattr(volume, 'voxels', volume)
    values = np.clip(np.asarray(voxels, dtype=np.float64).ravel(), low, high)
    counts, edges = np.histogram(values, bins=int(bins), range=(low, high))
    return Histogram(edges=edges, counts=counts)


def to_display_range(image):
    """HU clipped to [-500, 200] and mapped affinely onto [0, 255]."""
    clipped = np.clip(np.asarray(image, dtype=np.float64), CLIP_MIN, CLIP_MAX)
    return (clipped - CLIP_MIN) * 255.0 / (CLIP_MAX - CLIP_MIN)


def self_ssim(image, return_blurred=False):
    """SSIM between an HU image and its Gaussian blur.

    Lower values mean sharper content: the blur changes a sharp image more.

    Parameters
    ----------
    image : ndarray of shape (h, w), HU
        at least 11x11
    return_blurred : bool, default is False

    Returns
    -------
    float in [-1, 1]

    Notes
    -----
    The image is rescaled to [0, 255] over [-500, 200] HU and blurred with
    sigma 3 (kernel radius 9, reflect padding). SSIM uses K1 = 0.01,
    K2 = 0.03, L = 255 and an 11x11 Gaussian window of sigma 1.5.

    References
    ----------
    .. [1] Wang, Z., Bovik, A. C., Sheikh, H. R., & Simoncelli, E. P. (2004).
           Image quality assessment: from error visibility to structural similarity.
           IEEE Transactions on Image Processing, 13(4), 600-612.
    """
    image = np.asarray(image)
    if image.ndim != 2 or min(image.shape) < SSIM_WINDOW:
        raise ValueError('SelfSSIM needs a 2D image of at least {0}x{0}, got shape {1}'.format(
            SSIM_WINDOW, image.shape))
    display = to_display_range(image)
    blurred = ndimage.gaussian_filter(display, sigma=BLUR_SIGMA, mode='reflect', truncate=BLUR_TRUNCATE)
    value = structural_similarity(display, blurred, data_range=255.0, gaussian_weights=True, sigma=SSIM_SIGMA,
                                  use_sample_covariance=False, K1=SSIM_K1, K2=SSIM_K2)
    if return_blurred:
        return float(value), blurred
    return float(value)


def center_rois(volume, n_rois=30, size=120, random_state=None, margin_slices=0):
    """Square ROIs at the slice centre, on randomly drawn slices.

    Returns
    -------
    list of ROISpec
        slices are drawn uniformly with replacement from
        ``[margin_slices, depth - margin_slices)``
    """
    height, width, depth = volume.shape
    size = min(size, height, width)
    rng = np.random.default_rng(random_state)
    if depth - 2 * margin_slices < 1:
        raise ValueError('no slice left after a margin of {} in a volume of depth {}'.format(margin_slices, depth))
    slices = rng.integers(margin_slices, depth - margin_slices, size=n_rois)
    row, col = (height - size) // 2, (width - size) // 2
    return [ROISpec(int(k), row, col, size, size, tissue='center', roi_id='center_{:02d}'.format(i))
            for i, k in enumerate(slices)]


def cycle_difference_image(x, x_cyc):
    """Sobel gradient magnitude of ``x_cyc`` minus that of ``x``.

    Zero where the cycle reproduced the structures of ``x``; anomalous
    objects show up as rings of large values.
    """
    x = np.asarray(x, dtype=np.float64)
    x_cyc = np.asarray(x_cyc, dtype=np.float64)
    if x.shape != x_cyc.shape:
        raise ValueError('shapes differ: {} vs {}'.format(x.shape, x_cyc.shape))
    with tl.backend_context('numpy'):
        return gradient_magnitude(x_cyc) - gradient_magnitude(x)


def anomaly_contrast(difference, mask, dilation=3):
    """Mean |difference| near the boundary of ``mask`` over the mean elsewhere.

    The boundary band is ``mask`` dilated by ``dilation`` pixels.
    """
    mask = np.asarray(mask, dtype=bool)
    band = ndimage.binary_dilation(mask, iterations=dilation)
    magnitude = np.abs(np.asarray(difference))
    if not band.any() or band.all():
        raise ValueError('the anomaly mask must be non-empty and leave pixels outside its band')
    outside = magnitude[~band].mean()
    return float(magnitude[band].mean() / outside) if outside > 0 else np.inf


def dice(mask_a, mask_b):
    """Dice overlap of two boolean masks; 1 when both are empty."""
    mask_a, mask_b = np.asarray(mask_a, dtype=bool), np.asarray(mask_b, dtype=bool)
    if mask_a.shape != mask_b.shape:
        raise ValueError('mask shapes differ: {} vs {}'.format(mask_a.shape, mask_b.shape))
    total = mask_a.sum() + mask_b.sum()
    if total == 0:
        return 1.0
    return float(2 * np.logical_and(mask_a, mask_b).sum() / total)


def air_dice(volume_a, volume_b, threshold=AIR_THRESHOLD_HU):
    """Dice of the {HU < threshold} masks of two volumes."""
    return dice(getattr(volume_a, 'voxels', volume_a) < threshold, getattr(volume_b, 'voxels', volume_b) < threshold)


def checkerboard_overlay(image_a, image_b, tile=8):
    """Interleaves two images in square tiles.

    Returns
    -------
    overlay : ndarray
    provenance : ndarray of int
        0 where the pixel comes from ``image_a``, 1 where from ``image_b``
    """
    image_a, image_b = np.asarray(image_a), np.asarray(image_b)
    if image_a.shape != image_b.shape or image_a.ndim != 2:
        raise ValueError('overlay needs two 2D images of equal shape, got {} and {}'.format(
            image_a.shape, image_b.shape))
    if tile < 1:
        raise ValueError('tile must be positive, got {}'.format(tile))
    rows, cols = np.indices(image_a.shape)
    provenance = (rows // tile + cols // tile) % 2
    return np.where(provenance == 0, image_a, image_b), provenance
