"""Command-line entry point: `python -m src.main <subcommand> [flags]`."""
import argparse
import logging
import os
import sys

from src.config import RunConfig
from src.errors import MagnetoplateError
from src.runner import Runner, SUBCOMMANDS

log = logging.getLogger('src')

DEFAULT_CONFIG = os.path.join(os.path.dirname(__file__), os.pardir, 'configs', 'default.kv')


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='python -m src.main')
    parser.add_argument('subcommand', choices=SUBCOMMANDS)
    parser.add_argument('--config', default=DEFAULT_CONFIG, help='key=value run configuration')
    parser.add_argument('--out', help='output directory, overrides [run] out')
    parser.add_argument('--spec', help='gamma: catalog profile')
    parser.add_argument('--profile', help='magstat: catalog profile')
    parser.add_argument('--h', help='comma-separated decreasing thicknesses')
    parser.add_argument('--nx', type=int)
    parser.add_argument('--ny', type=int)
    parser.add_argument('--nz', type=int)
    parser.add_argument('--seed', type=int)
    parser.add_argument('--log-level', default='INFO')
    return parser


def overrides_from(args: argparse.Namespace) -> dict[str, str]:
    section = 'magstat' if args.subcommand == 'magstat' else 'gamma'
    flags = {
        'run.out': args.out,
        'gamma.spec': args.spec,
        'magstat.profile': args.profile,
        f'{section}.h': args.h,
        'grid.nx': args.nx,
        'grid.ny': args.ny,
        'grid.nz': args.nz,
        'run.seed': args.seed,
    }
    return {k: str(v) for k, v in flags.items() if v is not None}


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(),
                        format='%(asctime)s %(name)s %(levelname)s %(message)s')
    try:
        cfg = RunConfig.from_file(args.config, overrides_from(args))
        runner = Runner(cfg)
        runner.run(args.subcommand)
    except MagnetoplateError as exc:
        log.error('%s: %s', type(exc).__name__, exc)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        log.error('%s', exc)
        return 1
    return 0


if __name__ == '__main__':
    sys.exit(main())
