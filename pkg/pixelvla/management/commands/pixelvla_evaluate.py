import json

from django.template import loader

from pixelvla.management.commands._base import PixelVLACommand
from pixelvla.training import evaluate
from pixelvla.utils import atomic_write


class Command(PixelVLACommand):

    help = """
        Reports the per-dimension L1 error of a checkpoint on a dataset.
    """

    def add_command_arguments(self, parser):
        parser.add_argument("--checkpoint", required=True)
        parser.add_argument("--data", required=True, help="Dataset directory to evaluate on.")
        parser.add_argument("--output", help="Also write the metrics as JSON to this path.")

    def run(self, **options):
        result = evaluate(options["checkpoint"], options["data"])
        if options["output"]:
            atomic_write(options["output"], json.dumps(result.to_json(), indent=2, sort_keys=True).encode("utf-8"))
        rows = [
            {"dim": dim, "mean": mean, "p50": p50, "p90": p90}
            for dim, (mean, p50, p90) in enumerate(zip(result.mean_per_dim, result.p50_per_dim, result.p90_per_dim))
        ]
        template = loader.get_template("pixelvla/evaluation_report.txt")
        self.stdout.write(template.render({"result": result, "rows": rows, "checkpoint": options["checkpoint"]}))
