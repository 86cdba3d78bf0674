import argparse
import logging
import sys
from typing import List, Optional

from svnet import utils
from svnet.app import run_command
from svnet.metadata import StateAlphabet
from svnet.stats import METRICS, TSTAT_METHODS
from svnet.version import get_version


def _add_pipeline_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('-c', '--config', help='TOML configuration file')
    parser.add_argument('-i', '--input', required=True, help='trade CSV file')
    parser.add_argument('-o', '--out', required=True, help='output path')
    parser.add_argument('--start', type=int, default=0,
                        help='position of the first business day of the window')
    parser.add_argument('--days', type=int,
                        help='window length in business days (default: all)')
    parser.add_argument('--rho0', type=float, help='imbalance dead zone')
    parser.add_argument('--alpha', type=float, help='false discovery rate')
    parser.add_argument('--alphabet', choices=[a.value for a in StateAlphabet],
                        help='state alphabet')
    parser.add_argument('--seed', type=int, help='random seed')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=utils.APP_NAME,
        description='Statistically validated networks of traders across timescales')
    parser.add_argument('-v', '--verbose', help='log debug messages', action='store_true')
    parser.add_argument('--version', action='version', version=get_version())
    commands = parser.add_subparsers(dest='command', metavar='COMMAND')

    p = commands.add_parser('synth', help='generate a synthetic market')
    p.add_argument('-c', '--config', help='TOML configuration file')
    p.add_argument('-o', '--out', required=True, help='trade CSV to write')
    p.add_argument('--truth', help='JSON file for the planted groups and couplings')
    p.add_argument('--seed', type=int, help='random seed')

    for name, text in (('states', 'write the trader states of one timescale'),
                       ('svn', 'validate the trader network of one timescale'),
                       ('groups', 'detect trader groups at one timescale')):
        p = commands.add_parser(name, help=text)
        _add_pipeline_args(p)
        p.add_argument('-t', '--delta-t', type=int, required=True,
                       help='slice length in seconds')
        if name == 'groups':
            p.add_argument('--summary', help='CSV file for the group summary')

    p = commands.add_parser('leadlag', help='validate the lead-lag network of a '
                                            'timescale pair')
    _add_pipeline_args(p)
    p.add_argument('--dt1', type=int, required=True, help='leading timescale (s)')
    p.add_argument('--dt2', type=int, required=True, help='lagging timescale (s)')
    p.add_argument('--partitions', help='partition CSV to use instead of detecting '
                                        'groups')

    p = commands.add_parser('sweep', help='run the rolling window timescale sweep')
    p.add_argument('-c', '--config', help='TOML configuration file')
    p.add_argument('-i', '--input', required=True, help='trade CSV file')
    p.add_argument('-o', '--out', required=True, help='output directory')
    p.add_argument('--threads', type=int, help='parallel workers, -1 for all cores')
    p.add_argument('--seed', type=int, help='random seed')
    p.add_argument('--t-in', type=int, nargs='+', help='calibration window length(s) '
                                                       'in business days')
    p.add_argument('--rho0', type=float, help='imbalance dead zone')
    p.add_argument('--alpha', type=float, help='false discovery rate')
    p.add_argument('--alphabet', choices=[a.value for a in StateAlphabet],
                   help='state alphabet')

    p = commands.add_parser('asym', help='asymmetry statistics (mugshot) of a sweep')
    p.add_argument('-s', '--sweep', required=True, help='sweep directory')
    p.add_argument('-m', '--metric', choices=sorted(METRICS), default='links')
    p.add_argument('-o', '--out', required=True, help='mugshot CSV to write')
    p.add_argument('--n-min', type=int, help='minimal number of windows per t-statistic')
    p.add_argument('--method', choices=TSTAT_METHODS, help='t-statistic method')
    p.add_argument('--alpha', type=float, help='false discovery rate of the mugshot')

    p = commands.add_parser('report', help='per timescale summary of a sweep')
    p.add_argument('-s', '--sweep', required=True, help='sweep directory')
    p.add_argument('-o', '--out', required=True, help='report CSV to write')
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as ex:
        return utils.EXIT_OK if not ex.code else utils.EXIT_USAGE

    utils.init_logging(logging.DEBUG if args.verbose else None)
    if not args.command:
        parser.print_help()
        return utils.EXIT_USAGE
    return run_command(args.command, args)


if __name__ == "__main__":
    sys.exit(main())
