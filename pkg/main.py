#!/usr/bin/env python3
"""
SpectraLink - Command Line Entry Point
UV-Vis spectral simulation, fCNN concentration regression and CSK molecular link simulation

Usage:
    python main.py gen-dataset --config config/presets/desk.yaml --out runs/desk
    python main.py train --config config/presets/desk.yaml --out runs/desk
    python main.py eval --model runs/desk/model.fcnn --dataset runs/desk/dataset.spcd --out runs/eval
    python main.py simulate-link --config config/presets/bcsk_sync.yaml --out runs/bcsk
"""

import argparse
import sys
from pathlib import Path

project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

from src.config.settings import SpectraLinkSettings
from src.core.application import run_command

__version__ = "1.0.0"


def _add_common(parser: argparse.ArgumentParser, settings: SpectraLinkSettings, config_required: bool = True):
    parser.add_argument(
        '--config', '-c',
        type=str,
        default=settings.config if config_required else None,
        help=f'YAML run configuration (default: {settings.config})' if config_required
        else 'optional YAML run configuration'
    )
    parser.add_argument(
        '--out', '-o',
        type=str,
        default=settings.out,
        help=f'output directory; every artifact lands here (default: {settings.out})'
    )
    parser.add_argument(
        '--seed',
        type=int,
        default=None,
        help='run seed (u64), overrides the config file'
    )
    parser.add_argument(
        '--quiet', '-q',
        action='store_true',
        help='only warnings and errors on the console'
    )
    parser.add_argument(
        '--debug', '-d',
        action='store_true',
        help='debug output on the console'
    )
    parser.add_argument(
        '--plots',
        action='store_true',
        help='also write matplotlib figures'
    )


def parse_arguments(argv=None):
    """Parse command line arguments"""
    settings = SpectraLinkSettings()
    parser = argparse.ArgumentParser(
        description="SpectraLink - spectral concentration estimation and molecular link simulation",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Exit codes: 0 success, 1 I/O error, 2 configuration or usage error, 3 domain error
Environment: SPECTRALINK_CONFIG and SPECTRALINK_OUT change the defaults of --config and --out
        """
    )
    parser.add_argument('--version', '-v', action='version', version=f'SpectraLink {__version__}')
    subparsers = parser.add_subparsers(dest='command', required=True)

    helps = {
        'fit-extinction': 'fit extinction profiles from a labeled dataset',
        'gen-dataset': 'generate a simulated SPCD dataset',
        'train': 'train the fCNN with the three-phase Adam schedule',
        'simulate-link': 'encode, transmit and demodulate CSK messages',
        'compare': 'train on clean and noisy data and compare detection metrics',
    }
    for name, text in helps.items():
        _add_common(subparsers.add_parser(name, help=text), settings)

    eval_parser = subparsers.add_parser('eval', help='evaluate a checkpoint on a dataset')
    _add_common(eval_parser, settings, config_required=False)
    eval_parser.add_argument('--model', '-m', type=str, default=None, help='.fcnn checkpoint')
    eval_parser.add_argument('--dataset', type=str, default=None, help='SPCD dataset')

    return parser.parse_args(argv)


def main(argv=None) -> int:
    args = parse_arguments(argv)
    options = dict(seed=args.seed, quiet=args.quiet, debug=args.debug, plots=args.plots)
    if args.command == 'eval':
        options.update(model_path=args.model, dataset_path=args.dataset)
    return run_command(args.command, args.config, args.out, **options)


if __name__ == "__main__":
    sys.exit(main())
