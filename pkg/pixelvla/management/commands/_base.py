"""
Shared behaviour of the pixelvla management commands.
"""
import logging

from django.core.management.base import BaseCommand, CommandError

from pixelvla.exceptions import PixelVLAError

logger = logging.getLogger(__name__)


class PixelVLACommand(BaseCommand):
    """
    Adds ``--seed`` and turns library errors into ``CommandError``.

    Subclasses implement ``add_command_arguments`` and ``run``.
    """

    requires_system_checks = []
    default_seed = 0

    def add_arguments(self, parser):
        parser.add_argument(
            "--seed",
            default=self.default_seed,
            type=int,
            help="Seed of every random choice the command makes. Defaults to %s" % self.default_seed
        )
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser):
        pass

    def handle(self, *args, **options):
        try:
            return self.run(**options)
        except (PixelVLAError, OSError) as exc:
            logger.error("%s failed: %s", self.__module__.rsplit(".", 1)[-1], exc)
            raise CommandError("{}: {}".format(type(exc).__name__, exc)) from exc

    def run(self, **options):
        raise NotImplementedError

    def line(self, text=""):
        self.stdout.write(text)
