"""
GM Solver - Command Line Entry Point

Usage: gmsolver <command> <config.yaml> [--out DIR]
Logging level from GM_LOG (quiet, info, debug).
"""

import argparse
import logging
import os
import sys
from typing import List, Optional

from gmsolver.commands import get_all_commands, get_command
from gmsolver.commands.base import EXIT_CONFIG
from gmsolver.config import load_run_config
from gmsolver.errors import ConfigError

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
LOG_LEVELS = {
    'quiet': logging.WARNING,
    'info': logging.INFO,
    'debug': logging.DEBUG,
}

logger = logging.getLogger(__name__)


def log_level() -> int:
    """Level selected by GM_LOG (default info)"""
    name = os.environ.get('GM_LOG', 'info').strip().lower()
    return LOG_LEVELS.get(name, logging.INFO)


def configure_logging(out_dir: Optional[str] = None) -> None:
    """Console handler, plus <out>/main.log once the output directory is known"""
    handlers: List[logging.Handler] = [logging.StreamHandler()]
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        handlers.append(logging.FileHandler(os.path.join(out_dir, 'main.log'), encoding='utf-8'))
    logging.basicConfig(level=log_level(), format=LOG_FORMAT, handlers=handlers, force=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='gmsolver',
        description='Neumann solver and verification suite for the sign-coupled activator-inhibitor system',
    )
    subparsers = parser.add_subparsers(dest='command', metavar='<command>')
    subparsers.required = True

    for command in get_all_commands():
        sub = subparsers.add_parser(command.name, help=command.description)
        sub.add_argument('config', help='YAML run configuration')
        sub.add_argument('--out', dest='out_dir', default=None, help='output directory (overrides output.dir)')
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging()

    command_class = get_command(args.command)
    try:
        config = load_run_config(args.config, args.out_dir, require_nodal=command_class.requires_nodal)
        configure_logging(config.out_dir)
        command = command_class(config)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG

    code, _ = command.execute()
    logger.info(f"{args.command} exited with code {code}")
    return code


if __name__ == '__main__':
    sys.exit(main())
