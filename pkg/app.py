import argparse
import logging
import os
import sys

# Ensure the repository root is on the Python path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from experiments.artifacts import MANIFEST_NAME, load_manifest
from experiments.config import describe_presets, resolve_config
from experiments.report import report
from experiments.runner import ABLATION_VIEWS, run_experiment


DEFAULT_OUT_DIR = 'results'


def build_parser():
    parser = argparse.ArgumentParser(
        prog='app.py',
        description='Federated learning simulator with mixed-precision gradient quantization, '
                    'a gradient-leakage attack and a Gaussian DP baseline.',
    )
    sub = parser.add_subparsers(dest='verb', required=True)

    def common(p, with_config=True):
        if with_config:
            p.add_argument('--config', help='JSON or YAML config document')
            p.add_argument('--preset', help='shipped preset name (see `presets`)')
            p.add_argument('--seed', type=int, help='override the config seed')
        p.add_argument('--out-dir', default=DEFAULT_OUT_DIR, help='output directory (default: %(default)s)')
        verbosity = p.add_mutually_exclusive_group()
        verbosity.add_argument('--quiet', action='store_true', help='warnings only, no progress bars')
        verbosity.add_argument('--verbose', action='store_true', help='debug logging')

    common(sub.add_parser('train', help='federated training for each configured defense'))
    common(sub.add_parser('attack', help='gradient-leakage attack under each configured view'))
    common(sub.add_parser('ablate-mode', help='attack with correct versus wrong-mode dequantization'))
    rep = sub.add_parser('report', help='print the summary of a manifest')
    common(rep, with_config=False)
    rep.add_argument('--manifest', help=f'manifest file (default: <out-dir>/{MANIFEST_NAME})')
    pre = sub.add_parser('presets', help='list shipped presets')
    pre.add_argument('--quiet', action='store_true', help=argparse.SUPPRESS)
    pre.add_argument('--verbose', action='store_true', help=argparse.SUPPRESS)
    return parser


def configure_logging(args):
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format='%(asctime)s %(levelname)s %(name)s: %(message)s')


def run(args):
    if args.verb == 'presets':
        for name, description in describe_presets():
            print(f'{name:<16} {description}')
        return 0

    if args.verb == 'report':
        report(load_manifest(args.manifest or os.path.join(args.out_dir, MANIFEST_NAME)))
        return 0

    cfg = resolve_config(args.config, args.preset, args.seed)
    progress = not args.quiet
    if args.verb == 'train':
        manifest = run_experiment(cfg, args.out_dir, tasks=('train',), progress=progress)
    elif args.verb == 'attack':
        manifest = run_experiment(cfg, args.out_dir, tasks=('attack',), progress=progress)
    else:
        manifest = run_experiment(cfg, args.out_dir, tasks=('attack',), views=ABLATION_VIEWS, progress=progress)
    print(f'Results written to {os.path.abspath(args.out_dir)}')
    if not args.quiet:
        report(manifest)
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    configure_logging(args)
    try:
        return run(args)
    except (ValueError, OSError) as e:
        print(f'error: {e}', file=sys.stderr)
        return 1


if __name__ == '__main__':
    sys.exit(main())
