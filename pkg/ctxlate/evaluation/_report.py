import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from matplotlib.figure import Figure

from ._metrics import (ROISpec, roi_stats, volume_histogram, self_ssim, center_rois, cycle_difference_image,
                       checkerboard_overlay, HISTOGRAM_BINS, HISTOGRAM_RANGE)
from ..preprocess import CLIP_MIN, CLIP_MAX

logger = logging.getLogger(__name__)

REPORT_VERSION = 1
ROI_COLUMNS = ('volume', 'roi_id', 'tissue', 'mean_hu', 'sd_hu')
FORMATS = ('json', 'csv')

_NUMBER = {'type': 'number'}
_STATS = {'type': 'object', 'required': ['mean', 'sd'], 'properties': {'mean': _NUMBER, 'sd': _NUMBER}}

REPORT_SCHEMA = {
    '$schema': 'http://json-schema.org/draft-07/schema#',
    'title': 'ctxlate evaluation report',
    'type': 'object',
    'required': ['format_version', 'rois', 'tissue_summary', 'histograms', 'self_ssim', 'cycle_difference',
                 'provenance'],
    'additionalProperties': False,
    'properties': {
        'format_version': {'type': 'integer', 'enum': [REPORT_VERSION]},
        'rois': {'type': 'array', 'items': {
            'type': 'object',
            'required': ['volume', 'roi_id', 'tissue', 'slice_index', 'row', 'col', 'height', 'width',
                         'mean_hu', 'sd_hu'],
            'properties': {'volume': {'type': 'string'}, 'roi_id': {'type': 'string'},
                           'tissue': {'type': 'string'},
                           'slice_index': {'type': 'integer', 'minimum': 0},
                           'row': {'type': 'integer', 'minimum': 0}, 'col': {'type': 'integer', 'minimum': 0},
                           'height': {'type': 'integer', 'minimum': 1}, 'width': {'type': 'integer', 'minimum': 1},
                           'mean_hu': _NUMBER, 'sd_hu': {'type': 'number', 'minimum': 0}}}},
        'tissue_summary': {'type': 'object', 'additionalProperties': {
            'type': 'object', 'additionalProperties': _STATS}},
        'histograms': {'type': 'object', 'additionalProperties': {
            'type': 'object', 'required': ['edges', 'counts'],
            'properties': {'edges': {'type': 'array', 'items': _NUMBER},
                           'counts': {'type': 'array', 'items': {'type': 'integer', 'minimum': 0}}}}},
        'self_ssim': {'type': 'object', 'additionalProperties': {
            'type': 'object', 'required': ['mean', 'sd', 'values'],
            'properties': {'mean': _NUMBER, 'sd': _NUMBER, 'values': {'type': 'array', 'items': _NUMBER}}}},
        'cycle_difference': {'type': ['object', 'null'], 'required': ['mean_abs', 'max_abs', 'p99_abs',
                                                                      'per_slice_mean_abs'],
                             'properties': {'mean_abs': _NUMBER, 'max_abs': _NUMBER, 'p99_abs': _NUMBER,
                                            'per_slice_mean_abs': {'type': 'array', 'items': _NUMBER}}},
        'provenance': {'type': 'object', 'required': ['volumes', 'checkpoint', 'roi_sampling'],
                       'properties': {'volumes': {'type': 'object'},
                                      'checkpoint': {'type': ['string', 'null']},
                                      'roi_sampling': {'type': 'string'}}},
    },
}

_TYPES = {'object': dict, 'array': list, 'string': str, 'boolean': bool, 'null': type(None)}


def _type_ok(value, kind):
    if kind == 'integer':
        return isinstance(value, int) and not isinstance(value, bool)
    if kind == 'number':
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    return isinstance(value, _TYPES[kind])


def _schema_errors(value, schema, where):
    kinds = schema.get('type')
    if kinds is not None:
        kinds = [kinds] if isinstance(kinds, str) else kinds
        if not any(_type_ok(value, kind) for kind in kinds):
            return ['{}: expected {}, got {}'.format(where, ' or '.join(kinds), type(value).__name__)]
    errors = []
    if 'enum' in schema and value not in schema['enum']:
        errors.append('{}: {!r} not in {}'.format(where, value, schema['enum']))
    if 'minimum' in schema and _type_ok(value, 'number') and value < schema['minimum']:
        errors.append('{}: {} is below {}'.format(where, value, schema['minimum']))
    if isinstance(value, dict):
        for key in schema.get('required', ()):
            if key not in value:
                errors.append('{}: missing "{}"'.format(where, key))
        properties = schema.get('properties', {})
        extra = schema.get('additionalProperties', True)
        for key, item in value.items():
            if key in properties:
                errors += _schema_errors(item, properties[key], '{}.{}'.format(where, key))
            elif extra is False:
                errors.append('{}: unexpected "{}"'.format(where, key))
            elif isinstance(extra, dict):
                errors += _schema_errors(item, extra, '{}.{}'.format(where, key))
    if isinstance(value, list) and 'items' in schema:
        for index, item in enumerate(value):
            errors += _schema_errors(item, schema['items'], '{}[{}]'.format(where, index))
    return errors


def validate_report(report, schema=REPORT_SCHEMA):
    """Checks a report dict against ``schema``.

    Raises
    ------
    ValueError
        listing every violation, including ROIs that do not form a valid box
    """
    errors = _schema_errors(report, schema, 'report')
    if not errors:
        for index, roi in enumerate(report['rois']):
            try:
                ROISpec(roi['slice_index'], roi['row'], roi['col'], roi['height'], roi['width'], roi['tissue'])
            except ValueError as error:
                errors.append('report.rois[{}]: {}'.format(index, error))
    if errors:
        raise ValueError('invalid report:\n  ' + '\n  '.join(errors))


@dataclass
class EvalReport:
    """ROI statistics, histograms, SelfSSIM and cycle-difference summary of a set of volumes."""
    rois: list
    tissue_summary: dict
    histograms: dict
    self_ssim: dict
    cycle_difference: dict = None
    provenance: dict = field(default_factory=dict)

    def to_dict(self):
        return {'format_version': REPORT_VERSION, 'rois': self.rois, 'tissue_summary': self.tissue_summary,
                'histograms': self.histograms, 'self_ssim': self.self_ssim,
                'cycle_difference': self.cycle_difference, 'provenance': self.provenance}

    def roi_table(self):
        """One row per ROI and volume with the columns of the CSV output."""
        return pd.DataFrame(self.rois, columns=list(ROI_COLUMNS))

    def summary_table(self):
        """Tissue x volume table of 'mean (sd)' strings."""
        table = {}
        for tissue, by_volume in self.tissue_summary.items():
            for name, stats in by_volume.items():
                table.setdefault(name, {})[tissue] = '{:.0f} ({:.0f})'.format(stats['mean'], stats['sd'])
        return pd.DataFrame(table)


def rois_from_manifest(patient):
    """ROISpecs of one ``PatientRecord`` of a loaded manifest."""
    return [ROISpec.from_manifest(entry) for entry in patient.rois]


def _pooled(values):
    """Mean and population sd over all voxels of several equally typed ROIs."""
    stacked = np.concatenate([np.ravel(v) for v in values]).astype(np.float64)
    return {'mean': float(stacked.mean()), 'sd': float(stacked.std())}


def _cycle_summary(input_volume, cycle_volume):
    per_slice, pooled = [], []
    for k in range(input_volume.n_slices):
        difference = np.abs(cycle_difference_image(input_volume.slice(k), cycle_volume.slice(k)))
        per_slice.append(float(difference.mean()))
        pooled.append(difference.ravel())
    pooled = np.concatenate(pooled)
    return {'mean_abs': float(pooled.mean()), 'max_abs': float(pooled.max()),
            'p99_abs': float(np.percentile(pooled, 99)), 'per_slice_mean_abs': per_slice}


def build_report(volumes, rois, cycle_pair=None, n_ssim_rois=30, ssim_size=120, random_state=0,
                 bins=HISTOGRAM_BINS, value_range=HISTOGRAM_RANGE, sources=None, checkpoint=None):
    """Computes an EvalReport without writing anything.

    Parameters
    ----------
    volumes : dict of str to CTVolume
        e.g. {'truth': ..., 'cbct': ..., 'synplanct': ...}; same shape
    rois : list of ROISpec
    cycle_pair : (CTVolume, CTVolume), optional
        input volume and its cyclic reconstruction
    n_ssim_rois : int, default is 30
        centred SelfSSIM ROIs, shared by every volume
    ssim_size : int, default is 120
    random_state : int, default is 0
        seeds the slices of the SelfSSIM ROIs
    bins, value_range
        histogram binning
    sources : dict of str to str, optional
        file of each volume, for provenance
    checkpoint : str, optional

    Returns
    -------
    EvalReport
    """
    if not volumes:
        raise ValueError('no volumes to evaluate')
    shapes = {volume.shape for volume in volumes.values()}
    if len(shapes) > 1:
        raise ValueError('volumes differ in shape: {}'.format(sorted(shapes)))

    rows, by_tissue = [], {}
    for name, volume in volumes.items():
        for roi in rois:
            mean, sd = roi_stats(volume, roi)
            rows.append(dict(volume=name, roi_id=str(roi.roi_id), tissue=str(roi.tissue),
                             slice_index=int(roi.slice_index), row=int(roi.row), col=int(roi.col),
                             height=int(roi.height), width=int(roi.width),
                             mean_hu=mean, sd_hu=sd))
            by_tissue.setdefault(roi.tissue, {}).setdefault(name, []).append(roi.extract(volume))
    tissue_summary = {tissue: {name: _pooled(values) for name, values in by_volume.items()}
                      for tissue, by_volume in by_tissue.items()}

    histograms = {name: volume_histogram(volume, bins, value_range).as_dict() for name, volume in volumes.items()}

    reference = next(iter(volumes.values()))
    ssim_rois = center_rois(reference, n_rois=n_ssim_rois, size=ssim_size, random_state=random_state)
    ssim = {}
    for name, volume in volumes.items():
        values = [self_ssim(roi.extract(volume)) for roi in ssim_rois]
        ssim[name] = {'mean': float(np.mean(values)), 'sd': float(np.std(values)), 'values': values}

    cycle = _cycle_summary(*cycle_pair) if cycle_pair is not None else None
    side = ssim_rois[0].height
    provenance = {'volumes': {name: str((sources or {}).get(name, '')) for name in volumes},
                  'checkpoint': None if checkpoint is None else str(checkpoint),
                  'roi_sampling': '{} centred {}x{} ROIs, slices drawn uniformly with replacement (seed {})'.format(
                      n_ssim_rois, side, side, random_state)}
    logger.info('evaluated %d volumes on %d ROIs', len(volumes), len(rois))
    return EvalReport(rows, tissue_summary, histograms, ssim, cycle, provenance)


def _display(image):
    return np.clip(image, CLIP_MIN, CLIP_MAX)


def plot_histograms(report, path):
    figure = Figure(figsize=(7, 4))
    axis = figure.subplots()
    for name, histogram in report.histograms.items():
        axis.stairs(histogram['counts'], histogram['edges'], label=name)
    axis.set_xlabel('HU')
    axis.set_ylabel('voxels')
    axis.legend()
    figure.savefig(path, dpi=100)
    return path


def plot_roi_violins(volumes, rois, path):
    """Voxel distributions of the ROIs, one violin per tissue and volume."""
    tissues = sorted({roi.tissue for roi in rois})
    names = list(volumes)
    figure = Figure(figsize=(max(6, 1.5 * len(tissues) * len(names) / 2), 4))
    axis = figure.subplots()
    width = 0.8 / len(names)
    for j, name in enumerate(names):
        data = [np.concatenate([roi.extract(volumes[name]).ravel() for roi in rois if roi.tissue == tissue])
                for tissue in tissues]
        positions = np.arange(len(tissues)) + (j - (len(names) - 1) / 2) * width
        # the KDE of a violin needs spread; constant ROIs are drawn as markers
        spread = [np.ptp(values) > 0 for values in data]
        if any(spread):
            axis.violinplot([v for v, ok in zip(data, spread) if ok], positions=positions[spread], widths=width,
                            showmeans=True)
        axis.scatter(positions, [np.mean(values) for values in data], s=12, label=name)
    axis.set_xticks(np.arange(len(tissues)), tissues)
    axis.set_ylabel('HU')
    axis.legend()
    figure.savefig(path, dpi=100)
    return path


def plot_checkerboard(image_a, image_b, path, tile=8):
    overlay, _ = checkerboard_overlay(_display(image_a), _display(image_b), tile=tile)
    figure = Figure(figsize=(5, 5))
    axis = figure.subplots()
    axis.imshow(overlay, cmap='gray', vmin=CLIP_MIN, vmax=CLIP_MAX)
    axis.set_axis_off()
    figure.savefig(path, dpi=100)
    return path


def plot_cycle_difference(difference, path):
    figure = Figure(figsize=(5, 5))
    axis = figure.subplots()
    limit = float(np.max(np.abs(difference))) or 1.0
    image = axis.imshow(difference, cmap='coolwarm', vmin=-limit, vmax=limit)
    figure.colorbar(image, ax=axis)
    axis.set_axis_off()
    figure.savefig(path, dpi=100)
    return path


def emit_report(volumes, rois, out_dir, formats=FORMATS, plots=True, cycle_pair=None, overlay_tile=8,
                **report_params):
    """Evaluates ``volumes`` and writes the report, the ROI table and plots.

    Parameters
    ----------
    volumes : dict of str to CTVolume
    rois : list of ROISpec
    out_dir : str or Path
    formats : subset of ('json', 'csv')
        'report.json' (with 'report.schema.json') and 'roi_stats.csv'
    plots : bool, default is True
        histogram overlay, ROI violins, checkerboard overlay of the first two
        volumes and the cycle-difference map when ``cycle_pair`` is given
    cycle_pair : (CTVolume, CTVolume), optional
    overlay_tile : int, default is 8
    **report_params
        passed to :func:`build_report`

    Returns
    -------
    report : EvalReport
    written : list of Path
    """
    formats = tuple(formats)
    unknown = set(formats) - set(FORMATS)
    if unknown:
        raise ValueError('unknown report formats {}, expected a subset of {}'.format(sorted(unknown), FORMATS))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = build_report(volumes, rois, cycle_pair=cycle_pair, **report_params)
    written = []

    if 'json' in formats:
        content = report.to_dict()
        validate_report(content)
        with open(out_dir / 'report.json', 'w') as handle:
            json.dump(content, handle, indent=2)
        with open(out_dir / 'report.schema.json', 'w') as handle:
            json.dump(REPORT_SCHEMA, handle, indent=2)
        written += [out_dir / 'report.json', out_dir / 'report.schema.json']
    if 'csv' in formats:
        report.roi_table().to_csv(out_dir / 'roi_stats.csv', index=False)
        written.append(out_dir / 'roi_stats.csv')

    if plots:
        written.append(plot_histograms(report, out_dir / 'histograms.png'))
        if rois:
            written.append(plot_roi_violins(volumes, rois, out_dir / 'roi_violins.png'))
        names = list(volumes)
        if len(names) >= 2:
            middle = volumes[names[0]].n_slices // 2
            written.append(plot_checkerboard(volumes[names[0]].slice(middle), volumes[names[1]].slice(middle),
                                             out_dir / 'checkerboard.png', tile=overlay_tile))
        if cycle_pair is not None:
            middle = cycle_pair[0].n_slices // 2
            difference = cycle_difference_image(cycle_pair[0].slice(middle), cycle_pair[1].slice(middle))
            written.append(plot_cycle_difference(difference, out_dir / 'cycle_difference.png'))
    logger.info('wrote %d report files to %s', len(written), out_dir)
    return report, written
