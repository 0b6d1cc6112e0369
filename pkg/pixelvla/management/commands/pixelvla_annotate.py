import logging

from django.template import loader

from pixelvla.annotation.backends import load_backend_suite
from pixelvla.annotation.pipeline import annotate_dataset
from pixelvla.management.commands._base import PixelVLACommand

logger = logging.getLogger(__name__)


class Command(PixelVLACommand):

    help = """
        Annotates every episode of a corpus with a target mask, visual prompts
        and target text, and writes the annotation report.
    """

    def add_command_arguments(self, parser):
        parser.add_argument("-i", "--input", required=True, help="Corpus directory to annotate.")
        parser.add_argument("-o", "--output", required=True, help="Directory for the annotated corpus.")
        parser.add_argument("-b", "--backend", default="synthetic", help="Backend suite name. Defaults to synthetic")
        parser.add_argument("-r", "--report", help="Report path. Defaults to OUTPUT/annotation_report.json")
        parser.add_argument("-j", "--jobs", default=1, type=int, help="Episodes annotated in parallel.")

    def run(self, **options):
        with load_backend_suite(options["backend"], seed=options["seed"]) as backends:
            report = annotate_dataset(
                options["input"], options["output"], backends, options["seed"],
                jobs=options["jobs"], report_path=options["report"],
            )
        template = loader.get_template("pixelvla/annotation_report.txt")
        self.stdout.write(template.render({"report": report, "backend": options["backend"]}))
