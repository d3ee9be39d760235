"""Command-line entry point: `indexnet {train,eval,ablate,export-embeddings}`.

Exit codes: 0 success, 2 usage or configuration error, 3 data or checkpoint error,
4 numeric failure.
"""
import argparse
import json
import logging
import sys

from indexnet import __version__
from indexnet.checkpoint import load_checkpoint
from indexnet.config import PRESETS, parse_config_file, resolve_config
from indexnet.errors import DataError, IndexNetError
from indexnet.experiment import load_dataset, run_command
from indexnet.introspection import export_embeddings
from indexnet.training import evaluate


def config_from_args(args):
    file_values = parse_config_file(args.config) if args.config else None
    overrides = dict(seed=args.seed, workers=args.workers, horizon=args.horizon, device=args.device,
                     max_epochs=args.max_epochs, verbose=True if args.verbose else None)
    return resolve_config(args.preset, file_values, overrides)


def cmd_train(args):
    run = run_command('train', config_from_args(args), data=args.data, out_dir=args.out)
    print(f'run_dir:{run.observers[0].dir}')
    return 0


def cmd_ablate(args):
    run = run_command('ablate', config_from_args(args), data=args.data, out_dir=args.out)
    print(f'run_dir:{run.observers[0].dir}')
    return 0


def cmd_eval(args):
    checkpoint = load_checkpoint(args.checkpoint, device=args.device or 'cpu')
    data = args.data or checkpoint.dataset.get('path')
    if data is None:
        raise DataError('No dataset given (--data) and none recorded in the checkpoint')
    config = checkpoint.config
    if config is None:
        config = resolve_config(overrides=dict(freq_minutes=checkpoint.model.tables.freq_minutes,
                                               dataset=checkpoint.dataset.get('name')))
    ds = load_dataset(data, config)
    report = evaluate(checkpoint.model, ds, args.split, horizon=args.horizon, stats=checkpoint.stats,
                      space=args.space)
    print(json.dumps(report.to_dict()))
    return 0


def cmd_export_embeddings(args):
    model = load_checkpoint(args.checkpoint).model
    tables = model.tables if model.dims.te_enabled else None
    channel_table = model.channel_table if model.dims.ce_enabled else None
    for filename in export_embeddings(tables, channel_table, args.out):
        print(filename)
    return 0


def run_options(parser):
    parser.add_argument('--config', help='flat `key = value` config file')
    parser.add_argument('--data', help='CSV path, looked up under $INDEXNET_DATA_DIR if not found, '
                                       'or synthetic:<name>')
    parser.add_argument('--preset', choices=sorted(PRESETS), help='per-dataset hyperparameters')
    parser.add_argument('--seed', type=int)
    parser.add_argument('--workers', type=int, help='parallel independent runs')
    parser.add_argument('--horizon', type=int)
    parser.add_argument('--max-epochs', type=int, dest='max_epochs')
    parser.add_argument('--device')
    parser.add_argument('--out', help='root directory of the run manifests')
    parser.add_argument('--verbose', action='store_true')


def make_parser():
    parser = argparse.ArgumentParser(prog='indexnet', description='IndexNet forecaster')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    commands = parser.add_subparsers(dest='command', metavar='command')
    commands.required = True

    train = commands.add_parser('train', help='train a model and write a checkpoint')
    run_options(train)
    train.set_defaults(func=cmd_train)

    ablate = commands.add_parser('ablate', help='train the four TE/CE variants with one seed')
    run_options(ablate)
    ablate.set_defaults(func=cmd_ablate)

    evaluate = commands.add_parser('eval', help='evaluate a checkpoint, print metrics as JSON')
    evaluate.add_argument('--checkpoint', required=True)
    evaluate.add_argument('--data')
    evaluate.add_argument('--split', default='test', choices=['train', 'val', 'test'])
    evaluate.add_argument('--horizon', type=int)
    evaluate.add_argument('--space', default='standardized', choices=['standardized', 'raw'])
    evaluate.add_argument('--device')
    evaluate.set_defaults(func=cmd_eval)

    export = commands.add_parser('export-embeddings', help='write embedding tables and PCA coordinates as JSON')
    export.add_argument('--checkpoint', required=True)
    export.add_argument('--out', default='embeddings', help='output directory, one JSON per table')
    export.set_defaults(func=cmd_export_embeddings)
    return parser


def main(argv=None):
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, 'verbose', False) else logging.WARNING,
                        format='%(levelname)s %(name)s: %(message)s')
    try:
        return args.func(args)
    except IndexNetError as e:
        print(f'indexnet {args.command}: {type(e).__name__}: {e}', file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f'indexnet {args.command}: {e}', file=sys.stderr)
        return DataError.exit_code


if __name__ == '__main__':
    sys.exit(main())
