"""
Command-line entry point: ``pixelvla SUBCOMMAND [flags]``.

Each subcommand is a ``pixelvla_*`` management command. Exit status is 0 on
success, 1 on a usage or validation error and 2 on any other failure.
"""
import logging
import os
import sys

import django
from django.conf import settings
from django.core.management import call_command, load_command_class
from django.core.management.base import CommandError

from pixelvla.conf import STANDALONE_SETTINGS

logger = logging.getLogger(__name__)

SUBCOMMANDS = {
    'gen-synthetic': 'pixelvla_gen_synthetic',
    'annotate': 'pixelvla_annotate',
    'train': 'pixelvla_train',
    'evaluate': 'pixelvla_evaluate',
    'infer': 'pixelvla_infer',
    'gradcheck': 'pixelvla_gradcheck',
    'inspect': 'pixelvla_inspect',
    'overlay': 'pixelvla_overlay',
    'serve-oracle': 'pixelvla_serve_oracle',
}
USAGE = 'usage: pixelvla {{{}}} [flags]\n'.format(','.join(SUBCOMMANDS))


def setup():
    """
    Configure Django from ``STANDALONE_SETTINGS`` unless a settings module is active.
    """
    if not settings.configured and not os.environ.get('DJANGO_SETTINGS_MODULE'):
        settings.configure(**STANDALONE_SETTINGS)
    django.setup()


def subcommand_usage(name):
    command = load_command_class('pixelvla', SUBCOMMANDS[name])
    return command.create_parser('pixelvla', name).format_usage()


def run(argv=None, stdout=None, stderr=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    if not argv or argv[0] not in SUBCOMMANDS:
        if argv and argv[0] not in ('-h', '--help'):
            stderr.write('unknown subcommand {!r}\n'.format(argv[0]))
        stderr.write(USAGE)
        return 1
    setup()
    try:
        call_command(SUBCOMMANDS[argv[0]], *argv[1:], stdout=stdout, stderr=stderr)
    except CommandError as exc:
        stderr.write('pixelvla {}: {}\n'.format(argv[0], exc))
        if str(exc).startswith('Error: '):
            stderr.write(subcommand_usage(argv[0]))
        return 1
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    except Exception:  # pylint: disable=broad-except
        logger.exception('pixelvla %s failed', argv[0])
        return 2
    return 0


def main():
    sys.exit(run())


if __name__ == '__main__':
    main()
