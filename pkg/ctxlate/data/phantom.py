"""Synthetic pelvic phantoms and their artifact-degraded CBCT counterparts.

A phantom is a stack of axial slices built from ellipses in normalized
canvas coordinates ([-1, 1] along each axis). Every voxel carries a tissue
label; labels drive both the intensity model and the placement of ground
truth ROIs written to the dataset manifest.
"""
import json
import logging
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..preprocess import AIR_HU
from ..volume import CTVolume, Modality, save_volume, HU_MIN, HU_MAX

logger = logging.getLogger(__name__)

TISSUES = ('air', 'fat', 'muscle', 'bladder', 'prostate', 'bone', 'metal')
LABELS = {tissue: code for code, tissue in enumerate(TISSUES)}
SOFT_TISSUES = ('muscle', 'fat', 'prostate', 'bladder')
# voxels strictly below this value are air for the air-preservation loss
AIR_BOUNDARY_HU = -465
MANIFEST_VERSION = 1


@dataclass(frozen=True)
class Ellipse:
    """Axis-aligned ellipse in normalized (row, col) canvas coordinates."""
    center: tuple
    axes: tuple
    tissue: str = 'muscle'

    def __post_init__(self):
        object.__setattr__(self, 'center', tuple(float(c) for c in self.center))
        object.__setattr__(self, 'axes', tuple(float(a) for a in self.axes))
        if self.tissue not in LABELS or self.tissue == 'air':
            raise ValueError('unknown region tissue {!r}'.format(self.tissue))
        if min(self.axes) <= 0:
            raise ValueError('ellipse axes must be positive, got {}'.format(self.axes))

    def scaled(self, factor):
        return replace(self, axes=(self.axes[0] * factor, self.axes[1] * factor))

    def mask(self, rows, cols):
        return ((rows - self.center[0]) / self.axes[0]) ** 2 + ((cols - self.center[1]) / self.axes[1]) ** 2 <= 1

    def boundary(self, n_points=64):
        angles = np.linspace(0, 2 * np.pi, n_points, endpoint=False)
        return (self.center[0] + self.axes[0] * np.sin(angles),
                self.center[1] + self.axes[1] * np.cos(angles))


def default_regions():
    return (Ellipse((0.0, 0.0), (0.48, 0.70), 'muscle'),
            Ellipse((-0.18, 0.0), (0.16, 0.24), 'bladder'),
            Ellipse((0.12, 0.0), (0.09, 0.12), 'prostate'),
            Ellipse((0.05, -0.52), (0.12, 0.12), 'bone'),
            Ellipse((0.05, 0.52), (0.12, 0.12), 'bone'))


def default_tissue_hu():
    """Mean and sd (HU) of each tissue class in the planning CT."""
    return {'fat': (-104.0, 13.0), 'muscle': (52.0, 14.0), 'prostate': (33.0, 23.0), 'bladder': (8.0, 18.0),
            'bone': (400.0, 0.0), 'metal': (2000.0, 0.0)}


@dataclass(frozen=True)
class PhantomSpec:
    """Geometry and intensities of a planning-CT phantom.

    Parameters
    ----------
    canvas : (int, int), default is (512, 512)
        slice height and width in pixels
    n_slices : int, default is 16
    spacing : tuple of 3 floats, default is (1.0, 1.0, 3.0)
    body : Ellipse
        body outline, filled with ``body.tissue`` (fat by default)
    regions : tuple of Ellipse
        painted in order over the body, later regions win
    metal_seeds : tuple of (row, col)
        normalized centres of 2000 HU seed inserts of radius ``seed_radius`` px
    seed_radius : int, default is 2
    z_taper : float, default is 0.2
        regions shrink by ``1 - z_taper * t**2`` with ``t`` in [-1, 1] along z
    tissue_hu : dict
        class -> (mean, sd) in HU
    seed : int
    patient_id : str
    """
    canvas: tuple = (512, 512)
    n_slices: int = 16
    spacing: tuple = (1.0, 1.0, 3.0)
    body: Ellipse = Ellipse((0.0, 0.0), (0.62, 0.85), 'fat')
    regions: tuple = field(default_factory=default_regions)
    metal_seeds: tuple = ()
    seed_radius: int = 2
    z_taper: float = 0.2
    tissue_hu: dict = field(default_factory=default_tissue_hu)
    seed: int = 0
    patient_id: str = 'phantom'

    def validate(self):
        """Raises ValueError if a region or seed leaves the body ellipse."""
        if self.n_slices < 1 or min(self.canvas) < 8:
            raise ValueError('phantom needs at least one slice and an 8x8 canvas')
        if not 0 <= self.z_taper < 1:
            raise ValueError('z_taper must lie in [0, 1), got {}'.format(self.z_taper))
        for region in self.regions:
            rows, cols = region.boundary()
            if not np.all(self.body.mask(rows, cols)):
                raise ValueError('region {} ({}) lies outside the body'.format(region.center, region.tissue))
        for center in self.metal_seeds:
            if not self.body.mask(np.array(center[0]), np.array(center[1])):
                raise ValueError('metal seed {} lies outside the body'.format(center))
        missing = ({region.tissue for region in self.regions} | {self.body.tissue}) - set(self.tissue_hu)
        if self.metal_seeds:
            missing |= {'metal'} - set(self.tissue_hu)
        if missing:
            raise ValueError('no HU model for tissues {}'.format(sorted(missing)))

    def for_patient(self, index, jitter=0.03):
        """Variant for patient ``index``: own seed and slightly perturbed anatomy."""
        rng = np.random.default_rng([self.seed, index])
        body_scale = rng.uniform(1 - jitter, 1 + jitter, size=2)
        body = replace(self.body, axes=(self.body.axes[0] * body_scale[0], self.body.axes[1] * body_scale[1]))
        regions = []
        for region in self.regions:
            shift = rng.uniform(-jitter, jitter, size=2) * np.asarray(region.axes)
            regions.append(replace(region, center=tuple(np.asarray(region.center) + shift)))
        return replace(self, body=body, regions=tuple(regions), seed=self.seed * 1000 + index,
                       patient_id='{}_{:03d}'.format(self.patient_id, index))

    def as_dict(self):
        return asdict(self)


def _grid(canvas):
    rows = np.linspace(-1, 1, canvas[0])[:, None]
    cols = np.linspace(-1, 1, canvas[1])[None, :]
    return rows, cols


def generate_labels(spec):
    """Tissue label volume of shape (h, w, d), codes from ``LABELS``."""
    spec.validate()
    rows, cols = _grid(spec.canvas)
    labels = np.zeros(tuple(spec.canvas) + (spec.n_slices,), dtype=np.int8)
    pixel_rows, pixel_cols = np.indices(spec.canvas)
    centre_positions = ((np.array(spec.metal_seeds).reshape(-1, 2) + 1) / 2
                        * (np.array(spec.canvas) - 1))
    for k in range(spec.n_slices):
        t = 0.0 if spec.n_slices == 1 else 2 * k / (spec.n_slices - 1) - 1
        layer = np.zeros(spec.canvas, dtype=np.int8)
        layer[spec.body.mask(rows, cols)] = LABELS[spec.body.tissue]
        for region in spec.regions:
            layer[region.scaled(1 - spec.z_taper * t ** 2).mask(rows, cols)] = LABELS[region.tissue]
        for row, col in centre_positions:
            seed = (pixel_rows - row) ** 2 + (pixel_cols - col) ** 2 <= spec.seed_radius ** 2
            layer[seed] = LABELS['metal']
        labels[:, :, k] = layer
    return labels


def generate_truth(spec=PhantomSpec(), return_labels=False):
    """Planning-CT phantom with voxels drawn per class from Normal(mean, sd).

    Parameters
    ----------
    spec : PhantomSpec
    return_labels : bool, default is False
        if True, also returns the (h, w, d) tissue label volume

    Returns
    -------
    CTVolume (modality PhantomTruth)
    labels : ndarray, only if ``return_labels``
    """
    labels = generate_labels(spec)
    rng = np.random.default_rng(spec.seed)
    voxels = np.full(labels.shape, float(AIR_HU))
    for tissue in TISSUES[1:]:
        where = labels == LABELS[tissue]
        if not where.any():
            continue
        mean, sd = spec.tissue_hu[tissue]
        voxels[where] = mean + sd * rng.standard_normal(int(where.sum())) if sd > 0 else mean
    body = labels != LABELS['air']
    voxels[body] = np.maximum(voxels[body], AIR_BOUNDARY_HU + 1)
    volume = CTVolume(np.clip(np.rint(voxels), HU_MIN, HU_MAX), spacing=spec.spacing,
                      modality=Modality.PHANTOM_TRUTH, patient_id=spec.patient_id)
    if return_labels:
        return volume, labels
    return volume


def default_hu_bias():
    """CBCT minus planning-CT offset per class (HU)."""
    return {'air': 0.0, 'fat': -110.0, 'muscle': -190.0, 'prostate': -194.0, 'bladder': -166.0,
            'bone': -150.0, 'metal': 0.0}


def default_noise_sd():
    return {'air': 10.0, 'fat': 40.0, 'muscle': 18.0, 'prostate': 6.0, 'bladder': 6.0, 'bone': 20.0, 'metal': 0.0}


@dataclass(frozen=True)
class DegradationSpec:
    """Artifact model turning a planning-CT phantom into a pseudo-CBCT.

    Parameters
    ----------
    hu_bias : dict
        class -> additive HU offset
    cupping_amplitude : float, default is 25
        amplitude A of the shading field ``A * (rho**2 - 1/2)``, rho the
        normalized elliptical radius of the body; like the rings and streaks
        it is shifted to zero mean inside each tissue class
    ring_count : int, default is 4
        concentric rings at rho = i / (ring_count + 1)
    ring_amplitude : float, default is 10
        HU of the rings, alternating in sign
    ring_width : float, default is 2
        ring width in pixels
    streak_count : int, default is 8
    streak_amplitude : float, default is 15
        HU of the angular streaks (alternating sign), drawn beyond 30% of the body radius
    streak_width : float, default is 2
        angular width of each streak in degrees
    noise_sd : dict or float
        per-class (or global) sd of the additive Gaussian noise
    seed : int
    """
    hu_bias: dict = field(default_factory=default_hu_bias)
    cupping_amplitude: float = 25.0
    ring_count: int = 4
    ring_amplitude: float = 10.0
    ring_width: float = 2.0
    streak_count: int = 8
    streak_amplitude: float = 15.0
    streak_width: float = 2.0
    noise_sd: dict = field(default_factory=default_noise_sd)
    seed: int = 0

    @classmethod
    def zero(cls, seed=0):
        """No bias, no artifacts, no noise."""
        return cls(hu_bias={}, cupping_amplitude=0.0, ring_count=0, ring_amplitude=0.0, streak_count=0,
                   streak_amplitude=0.0, noise_sd=0.0, seed=seed)

    def bias(self, tissue):
        return float(self.hu_bias.get(tissue, 0.0))

    def noise(self, tissue):
        if isinstance(self.noise_sd, dict):
            return float(self.noise_sd.get(tissue, 0.0))
        return float(self.noise_sd)

    def as_dict(self):
        return asdict(self)


def _body_geometry(body):
    """Normalized elliptical radius and polar angle of every pixel of one slice."""
    rows, cols = np.nonzero(body)
    centre_row, centre_col = rows.mean(), cols.mean()
    semi_rows = (rows.max() - rows.min() + 1) / 2
    semi_cols = (cols.max() - cols.min() + 1) / 2
    grid_rows, grid_cols = np.indices(body.shape)
    dr, dc = (grid_rows - centre_row) / semi_rows, (grid_cols - centre_col) / semi_cols
    return np.sqrt(dr ** 2 + dc ** 2), np.arctan2(dr, dc), min(semi_rows, semi_cols)


def artifact_field(body, spec, streak_angles, labels=None):
    """Cupping, ring and streak field (HU) of one slice, zero outside ``body``.

    With the tissue ``labels`` of the slice the field is shifted to zero mean
    inside every class, so the class means of the CBCT differ from the truth
    by ``spec.hu_bias`` alone.
    """
    rho, angle, radius = _body_geometry(body)
    field_hu = spec.cupping_amplitude * (rho ** 2 - 0.5)
    half_width = spec.ring_width / 2 / radius
    for i in range(spec.ring_count):
        on_ring = np.abs(rho - (i + 1) / (spec.ring_count + 1)) <= half_width
        field_hu[on_ring] += spec.ring_amplitude * (1 if i % 2 == 0 else -1)
    half_angle = np.deg2rad(spec.streak_width) / 2
    for j, theta in enumerate(streak_angles):
        # a streak crosses the body, so it appears at theta and theta + pi
        distance = np.abs(np.angle(np.exp(1j * (angle - theta))))
        on_streak = (np.minimum(distance, np.pi - distance) <= half_angle) & (rho > 0.3)
        field_hu[on_streak] += spec.streak_amplitude * (1 if j % 2 == 0 else -1)
    field_hu[~body] = 0
    if labels is not None:
        for code in np.unique(labels[body]):
            where = labels == code
            field_hu[where] -= field_hu[where].mean()
    return field_hu


def degrade_to_cbct(truth, spec=DegradationSpec(), labels=None):
    """Pseudo-CBCT from a phantom truth volume.

    Applies the per-class HU bias, the artifact field and per-class Gaussian
    noise. In-body voxels are kept at or above -464 HU and air at or below
    -466 HU, so the set of voxels below -465 HU is the same as in the truth.

    Parameters
    ----------
    truth : CTVolume
    spec : DegradationSpec
    labels : ndarray of shape truth.shape
        tissue labels returned by ``generate_truth(..., return_labels=True)``

    Returns
    -------
    CTVolume (modality PhantomCBCT)
    """
    if labels is None or np.shape(labels) != truth.shape:
        raise ValueError('degrade_to_cbct needs the tissue labels of the truth volume')
    if AIR_HU + spec.bias('air') >= AIR_BOUNDARY_HU:
        raise ValueError('air bias {} pushes air above {} HU'.format(spec.bias('air'), AIR_BOUNDARY_HU))
    rng = np.random.default_rng(spec.seed)
    streak_angles = rng.uniform(0, np.pi, size=spec.streak_count)

    voxels = truth.voxels.astype(np.float64)
    for tissue in TISSUES:
        where = labels == LABELS[tissue]
        if not where.any():
            continue
        sd = spec.noise(tissue)
        voxels[where] += spec.bias(tissue)
        if sd > 0:
            voxels[where] += sd * rng.standard_normal(int(where.sum()))

    body = labels != LABELS['air']
    for k in range(truth.n_slices):
        if body[:, :, k].any():
            voxels[:, :, k] += artifact_field(body[:, :, k], spec, streak_angles, labels[:, :, k])
    voxels[body] = np.maximum(voxels[body], AIR_BOUNDARY_HU + 1)
    voxels[~body] = np.minimum(voxels[~body], AIR_BOUNDARY_HU - 1)
    return truth.with_voxels(np.clip(np.rint(voxels), HU_MIN, HU_MAX), modality=Modality.PHANTOM_CBCT)


def place_rois(labels, tissue, n_rois, random_state=None, size=10, margin_slices=0):
    """Random ``size x size`` boxes lying entirely inside one tissue class.

    Returns
    -------
    list of dict with keys 'tissue', 'x' (column), 'y' (row), 'slice', 'width', 'height'
    """
    rng = np.random.default_rng(random_state)
    n_slices = labels.shape[2]
    slices = np.arange(margin_slices, n_slices - margin_slices) if n_slices > 2 * margin_slices else np.arange(n_slices)
    rois, candidates_per_slice = [], {}
    for _ in range(n_rois):
        for k in rng.permutation(slices):
            if k not in candidates_per_slice:
                inside = sliding_window_view(labels[:, :, k] == LABELS[tissue], (size, size)).all(axis=(-2, -1))
                candidates_per_slice[k] = np.argwhere(inside)
            candidates = candidates_per_slice[k]
            if len(candidates):
                row, col = candidates[rng.integers(len(candidates))]
                rois.append({'tissue': tissue, 'x': int(col), 'y': int(row), 'slice': int(k),
                             'width': size, 'height': size})
                break
        else:
            logger.warning('no %dx%d box fits inside %s', size, size, tissue)
            break
    return rois


def emit_dataset(n_patients, out_dir, phantom_spec=PhantomSpec(), degradation_spec=DegradationSpec(),
                 rois_per_class=4, roi_size=10):
    """Writes truth/CBCT volume pairs for ``n_patients`` phantoms and a JSON manifest.

    The volumes are written with the PlanCT and CBCT modalities so that the
    dataset feeds the training and translation commands like clinical data;
    the manifest records the phantom and degradation seeds.

    Parameters
    ----------
    n_patients : int
    out_dir : str or Path
    phantom_spec : PhantomSpec
        template, varied per patient with ``PhantomSpec.for_patient``
    degradation_spec : DegradationSpec
        template, seeded per patient
    rois_per_class : int, default is 4
    roi_size : int, default is 10

    Returns
    -------
    Path of the manifest ('manifest.json' in ``out_dir``)
    """
    if n_patients < 1:
        raise ValueError('n_patients must be positive, got {}'.format(n_patients))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    patients = []
    for index in range(n_patients):
        spec = phantom_spec.for_patient(index)
        degradation = replace(degradation_spec, seed=spec.seed + 1)
        truth, labels = generate_truth(spec, return_labels=True)
        cbct = degrade_to_cbct(truth, degradation, labels)
        # on disk the pair stands in for clinical data
        truth_path = save_volume(truth.with_voxels(truth.voxels, modality=Modality.PLAN_CT),
                                 out_dir / '{}_truth'.format(spec.patient_id))
        cbct_path = save_volume(cbct.with_voxels(cbct.voxels, modality=Modality.CBCT),
                                out_dir / '{}_cbct'.format(spec.patient_id))
        rois = []
        for tissue in SOFT_TISSUES:
            rois += place_rois(labels, tissue, rois_per_class, random_state=[spec.seed, LABELS[tissue]],
                               size=roi_size, margin_slices=spec.n_slices // 4)
        for number, roi in enumerate(rois):
            roi['roi_id'] = '{}_{}_{}'.format(spec.patient_id, roi['tissue'], number)
        patients.append({'patient_id': spec.patient_id,
                         'phantom_seed': spec.seed,
                         'degradation_seed': degradation.seed,
                         'truth': truth_path.name,
                         'cbct': cbct_path.name,
                         'rois': rois})
        logger.info('wrote phantom %s (%d ROIs)', spec.patient_id, len(rois))

    manifest = {'format_version': MANIFEST_VERSION,
                'n_patients': n_patients,
                'phantom_spec': phantom_spec.as_dict(),
                'degradation_spec': degradation_spec.as_dict(),
                'patients': patients}
    manifest_path = out_dir / 'manifest.json'
    with open(manifest_path, 'w') as handle:
        json.dump(manifest, handle, indent=2)
    return manifest_path
