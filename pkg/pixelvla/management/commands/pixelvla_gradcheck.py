from django.core.management.base import CommandError

from pixelvla.gradchecks import CASES, run_gradchecks
from pixelvla.management.commands._base import PixelVLACommand


class Command(PixelVLACommand):

    help = """
        Compares analytic and central finite-difference gradients of the
        differentiable components and prints one PASS or FAIL line per tensor.
    """

    def add_command_arguments(self, parser):
        parser.add_argument(
            "-m",
            "--module",
            action="append",
            choices=sorted(CASES),
            help="Component to check; repeatable. Defaults to all of them."
        )
        parser.add_argument("--tol", default=1e-4, type=float, help="Relative error tolerance. Defaults to 1e-4")
        parser.add_argument("--repeats", default=1, type=int, help="Consecutive seeds to check from --seed.")

    def run(self, **options):
        seeds = range(options["seed"], options["seed"] + options["repeats"])
        failures = 0
        for seed, report in run_gradchecks(options["module"], seeds=seeds, tol=options["tol"]):
            for entry in report.entries:
                verdict = "PASS" if entry.relative_error < report.tol else "FAIL"
                failures += verdict == "FAIL"
                self.line("{} {} seed={} {} {} rel={:.3e} n={}".format(
                    verdict, report.op_name, seed, entry.kind, entry.name, entry.relative_error, entry.checked))
        if failures:
            raise CommandError("{} gradient checks failed".format(failures))
