import logging

from pixelvla.management.commands._base import PixelVLACommand
from pixelvla.synthetic import UNSOLVABLE_FRACTION, generate_corpus, linear_task, two_object_task, write_dataset

logger = logging.getLogger(__name__)

DEFAULT_COUNT = 10
TASKS = ("scenes", "linear", "two-object")


class Command(PixelVLACommand):

    help = """
        Writes a synthetic corpus: oracle scenes for the annotation pipeline,
        or one of the two toy training tasks.
    """

    def add_command_arguments(self, parser):
        parser.add_argument("-o", "--output", required=True, help="Dataset directory to create.")
        parser.add_argument(
            "-n",
            "--count",
            default=DEFAULT_COUNT,
            type=int,
            help="Number of episodes (object pairs for two-object). Defaults to %s" % DEFAULT_COUNT
        )
        parser.add_argument("--task", default="scenes", choices=TASKS, help="Corpus to generate.")
        parser.add_argument(
            "--unsolvable-fraction",
            default=UNSOLVABLE_FRACTION,
            type=float,
            help="Share of scenes naming an absent object. Defaults to %s" % UNSOLVABLE_FRACTION
        )

    def run(self, **options):
        output, count, seed = options["output"], options["count"], options["seed"]
        if options["task"] == "scenes":
            scenes = generate_corpus(output, count, seed, options["unsolvable_fraction"])
            unsolvable = sum(1 for scene in scenes if not scene.solvable)
            self.line("Wrote {} scenes ({} unsolvable) to {}".format(len(scenes), unsolvable, output))
            return
        episodes = linear_task(count, seed) if options["task"] == "linear" else two_object_task(count, seed)
        write_dataset(output, options["task"], episodes)
        logger.info("Generated the %s task with %s episodes", options["task"], len(episodes))
        self.line("Wrote {} {} episodes to {}".format(len(episodes), options["task"], output))
