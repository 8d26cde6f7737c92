"""Command line interface: ``ctxlate {phantom,preprocess,train,translate,evaluate}``.

Exit codes are 0 on success, 1 on runtime failures and 2 on usage or
configuration errors.
"""
import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import PhantomSpec, DegradationSpec, emit_dataset, load_manifest, split_patients
from .evaluation import emit_report, rois_from_manifest, cycle_difference_image, plot_cycle_difference
from .exceptions import CTXlateError, ConfigurationError
from .preprocess import CropSpec, mask_volume
from .training import TrainConfig, load_config, run_training
from .translation import TranslationJob, translate_volume, cycle_translate
from .volume import load_volume, save_volume

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(levelname)s - %(name)s - %(message)s'
SEED_VARIABLE = 'CTXLATE_SEED'


def _env_seed():
    value = os.environ.get(SEED_VARIABLE)
    if value is None:
        return None
    try:
        return int(value)
    except ValueError:
        raise ConfigurationError('{} must be an integer, got {!r}'.format(SEED_VARIABLE, value)) from None


def _seed(args):
    return args.seed if args.seed is not None else _env_seed()


def _crop(values, jitter=0):
    return None if values is None else CropSpec(values[0], values[1], jitter)


def _parse_assignment(text):
    key, sep, value = text.partition('=')
    if not sep or not key:
        raise argparse.ArgumentTypeError('expected KEY=VALUE, got {!r}'.format(text))
    try:
        return key, json.loads(value)
    except json.JSONDecodeError:
        return key, value


def cmd_phantom(args):
    seed = _seed(args) or 0
    phantom = PhantomSpec(canvas=tuple(args.canvas), n_slices=args.slices, seed=seed)
    degradation = DegradationSpec(seed=seed) if args.artifacts else DegradationSpec.zero(seed=seed)
    manifest = emit_dataset(args.patients, args.out, phantom_spec=phantom, degradation_spec=degradation,
                            rois_per_class=args.rois_per_class, roi_size=args.roi_size)
    logger.info('wrote %d phantom patients, manifest %s', args.patients, manifest)


def cmd_preprocess(args):
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for path in args.input:
        volume = load_volume(path)
        masked = mask_volume(volume, per_volume=args.per_volume_otsu, crop=_crop(args.crop))
        target = save_volume(masked, out_dir / '{}_masked'.format(Path(path).with_suffix('').name))
        logger.info('masked %s -> %s', path, target)


def _train_config(args):
    overrides = dict(args.set or [])
    file_values = {}
    if args.config is not None:
        with open(args.config) as handle:
            try:
                file_values = json.load(handle)
            except json.JSONDecodeError as error:
                raise ConfigurationError('config {} is not valid JSON: {}'.format(args.config, error)) from error
    if args.manifest is not None:
        manifest = load_manifest(args.manifest)
        train, _ = split_patients(manifest, args.holdout)
        overrides['cb_paths'] = [str(patient.cbct) for patient in train]
        overrides['plan_paths'] = [str(patient.truth) for patient in train]
    if args.cb:
        overrides['cb_paths'] = args.cb
    if args.plan:
        overrides['plan_paths'] = args.plan
    if args.epochs is not None:
        overrides['epochs_constant'] = args.epochs - args.epochs // 2
        overrides['epochs_decay'] = args.epochs // 2
    # --seed, then --set seed=, then the config file, then the environment
    if args.seed is not None:
        overrides['seed'] = args.seed
    elif 'seed' not in overrides and 'seed' not in file_values:
        env_seed = _env_seed()
        if env_seed is not None:
            overrides['seed'] = env_seed
    for key, value in (('out_dir', args.out), ('resume_from', args.resume), ('device', args.device)):
        if value is not None:
            overrides[key] = value
    if args.crop is not None:
        overrides['crop.height'], overrides['crop.width'] = args.crop

    config = load_config(args.config, overrides) if args.config is not None else \
        TrainConfig().override(overrides)
    if not config.cb_paths or not config.plan_paths:
        raise ConfigurationError('training needs CBCT and planning-CT volumes (--cb/--plan, --manifest or config)')
    return config


def cmd_train(args):
    config = _train_config(args)
    checkpoint, log = run_training(config, verbose=args.progress)
    logger.info('final checkpoint %s, training log %s', checkpoint, log)


def cmd_translate(args):
    job = TranslationJob(args.checkpoint, args.input, output_path=args.output,
                         crop=None if args.no_crop else _crop(args.crop) or CropSpec(jitter=0),
                         direction=args.direction, batch_size=args.batch_size, device=args.device)
    translate_volume(job)
    if not args.cycle:
        return
    output = Path(args.output).with_suffix('')
    cycle_job = TranslationJob(job.checkpoint, job.input_path, output_path=output.with_name(output.name + '_cycle'),
                               crop=job.crop, direction=job.direction, batch_size=job.batch_size, device=job.device)
    _, diagnostics = cycle_translate(cycle_job, return_diagnostics=True)
    difference = np.stack([cycle_difference_image(x, x_cyc) for x, x_cyc in
                           zip(diagnostics.scaled_input, diagnostics.scaled_cycle)], axis=-1).astype(np.float32)
    np.save(output.with_name(output.name + '_cycle_difference.npy'), difference)
    plot_cycle_difference(difference[:, :, difference.shape[-1] // 2],
                          output.with_name(output.name + '_cycle_difference.png'))


def cmd_evaluate(args):
    manifest = load_manifest(args.manifest)
    patients = {patient.patient_id: patient for patient in manifest.patients}
    patient_id = args.patient or manifest.patients[0].patient_id
    if patient_id not in patients:
        raise ConfigurationError('patient {!r} not in manifest {}; available: {}'.format(
            patient_id, args.manifest, sorted(patients)))
    patient = patients[patient_id]
    sources = {'truth': patient.truth, 'cbct': patient.cbct}
    sources.update(dict(args.volume or []))
    volumes = {name: load_volume(path) for name, path in sources.items()}
    cycle_pair = None if args.cycle is None else (volumes['cbct'], load_volume(args.cycle))
    formats = tuple(args.format) if args.format else ('json', 'csv')
    emit_report(volumes, rois_from_manifest(patient), args.out, formats=formats, plots=not args.no_plots,
                cycle_pair=cycle_pair, sources={name: str(path) for name, path in sources.items()},
                checkpoint=args.checkpoint, n_ssim_rois=args.ssim_rois, ssim_size=args.ssim_size,
                random_state=_seed(args) or 0)


def _volume_assignment(text):
    key, sep, value = text.partition('=')
    if not sep or not key or not value:
        raise argparse.ArgumentTypeError('expected NAME=PATH, got {!r}'.format(text))
    return key, value


def build_parser():
    parser = argparse.ArgumentParser(prog='ctxlate', description='Unpaired CBCT to planning-CT translation')
    parser.add_argument('--version', action='version', version='%(prog)s ' + __version__)
    parser.add_argument('-v', '--verbose', action='count', default=0, help='-v for INFO, -vv for DEBUG')
    parser.add_argument('-q', '--quiet', action='store_true', help='only errors')
    commands = parser.add_subparsers(dest='command', required=True)

    phantom = commands.add_parser('phantom', help='write a synthetic phantom dataset')
    phantom.add_argument('--patients', type=int, required=True)
    phantom.add_argument('--out', required=True)
    phantom.add_argument('--seed', type=int, default=None, help='default: ${} or 0'.format(SEED_VARIABLE))
    phantom.add_argument('--slices', type=int, default=16)
    phantom.add_argument('--canvas', type=int, nargs=2, default=(512, 512), metavar=('HEIGHT', 'WIDTH'))
    phantom.add_argument('--rois-per-class', type=int, default=4)
    phantom.add_argument('--roi-size', type=int, default=10)
    phantom.add_argument('--no-artifacts', dest='artifacts', action='store_false',
                         help='bias only, no cupping, rings, streaks or noise')
    phantom.set_defaults(handler=cmd_phantom)

    preprocess = commands.add_parser('preprocess', help='body-mask (and crop) volumes')
    preprocess.add_argument('--input', nargs='+', required=True)
    preprocess.add_argument('--out', required=True)
    preprocess.add_argument('--crop', type=int, nargs=2, metavar=('HEIGHT', 'WIDTH'))
    preprocess.add_argument('--per-volume-otsu', action='store_true')
    preprocess.set_defaults(handler=cmd_preprocess)

    train = commands.add_parser('train', help='train the four networks')
    train.add_argument('--config', help='JSON file of TrainConfig fields (dotted keys allowed)')
    train.add_argument('--set', type=_parse_assignment, action='append', metavar='KEY=VALUE',
                       help='override a config field, e.g. weights.lambda_air=0')
    train.add_argument('--manifest', help='phantom dataset: CBCT and truth volumes of the training patients')
    train.add_argument('--holdout', type=int, default=0, help='patients kept out of training (with --manifest)')
    train.add_argument('--cb', nargs='+', help='CBCT volumes')
    train.add_argument('--plan', nargs='+', help='planning-CT volumes')
    train.add_argument('--epochs', type=int, help='total epochs, split evenly into constant and decaying rate')
    train.add_argument('--crop', type=int, nargs=2, metavar=('HEIGHT', 'WIDTH'))
    train.add_argument('--seed', type=int, default=None)
    train.add_argument('--out', help='output directory')
    train.add_argument('--resume', help='checkpoint to resume from')
    train.add_argument('--device')
    train.add_argument('--progress', action='store_true', help='progress bars on stderr')
    train.set_defaults(handler=cmd_train)

    translate = commands.add_parser('translate', help='translate a volume with a trained checkpoint')
    translate.add_argument('--checkpoint', required=True)
    translate.add_argument('--input', required=True)
    translate.add_argument('--output', required=True)
    translate.add_argument('--direction', choices=('C_to_P', 'P_to_C'), default='C_to_P')
    translate.add_argument('--crop', type=int, nargs=2, metavar=('HEIGHT', 'WIDTH'), help='default 384 480')
    translate.add_argument('--no-crop', action='store_true', help='translate whole slices')
    translate.add_argument('--batch-size', type=int, default=8)
    translate.add_argument('--device', default='cpu')
    translate.add_argument('--cycle', action='store_true',
                           help='also write the cycle volume and the cycle-difference map')
    translate.set_defaults(handler=cmd_translate)

    evaluate = commands.add_parser('evaluate', help='ROI statistics, histograms, SelfSSIM and plots')
    evaluate.add_argument('--manifest', required=True)
    evaluate.add_argument('--patient')
    evaluate.add_argument('--volume', type=_volume_assignment, action='append', metavar='NAME=PATH',
                          help='extra volume to evaluate, e.g. synplanct=out/syn.json')
    evaluate.add_argument('--cycle', help='cycle volume of the CBCT, for the cycle-difference summary')
    evaluate.add_argument('--checkpoint', help='recorded in the provenance')
    evaluate.add_argument('--out', required=True)
    evaluate.add_argument('--format', action='append', choices=('json', 'csv'))
    evaluate.add_argument('--no-plots', action='store_true')
    evaluate.add_argument('--ssim-rois', type=int, default=30)
    evaluate.add_argument('--ssim-size', type=int, default=120)
    evaluate.add_argument('--seed', type=int, default=None)
    evaluate.set_defaults(handler=cmd_evaluate)
    return parser


def configure_logging(verbose=0, quiet=False):
    level = logging.ERROR if quiet else [logging.WARNING, logging.INFO, logging.DEBUG][min(verbose, 2)]
    logging.basicConfig(stream=sys.stderr, format=LOG_FORMAT, level=level)
    logging.getLogger('ctxlate').setLevel(level)


def main(argv=None):
    """Runs one subcommand and returns its exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_:
        return exit_.code
    configure_logging(args.verbose, args.quiet)
    try:
        args.handler(args)
    except ConfigurationError as error:
        print('ctxlate {}: configuration error: {}'.format(args.command, error), file=sys.stderr)
        return 2
    except (CTXlateError, OSError, ValueError) as error:
        print('ctxlate {}: {}'.format(args.command, error), file=sys.stderr)
        return 1
    return 0
