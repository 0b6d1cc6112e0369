import sys

from django.core.management.base import CommandError

from pixelvla.annotation.backends import load_backend_suite
from pixelvla.annotation.serve import serve
from pixelvla.management.commands._base import PixelVLACommand


class Command(PixelVLACommand):

    help = """
        Answers backend protocol requests on standard input with a local backend suite.
    """

    def add_command_arguments(self, parser):
        parser.add_argument("-b", "--backend", default="synthetic", help="Backend suite to serve.")

    def run(self, **options):
        if options["backend"] == "subprocess":
            raise CommandError("The subprocess suite cannot serve itself")
        with load_backend_suite(options["backend"], seed=options["seed"]) as suite:
            serve(sys.stdin, sys.stdout, suite)
