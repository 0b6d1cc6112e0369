from pixelvla.episodes import read_episode
from pixelvla.management.commands._base import PixelVLACommand
from pixelvla.model import read_metadata
from pixelvla.nn import read_checkpoint


class Command(PixelVLACommand):

    help = """
        Prints a summary of an episode file or a checkpoint.
    """

    def add_command_arguments(self, parser):
        target = parser.add_mutually_exclusive_group(required=True)
        target.add_argument("--episode", help="Episode file to describe.")
        target.add_argument("--checkpoint", help="Checkpoint file to describe.")

    def run(self, **options):
        if options["episode"]:
            self._episode(read_episode(options["episode"]))
        else:
            self._checkpoint(options["checkpoint"])

    def _episode(self, episode):
        self.line("steps       {}".format(episode.length))
        self.line("image       {}x{}".format(*episode.image_shape))
        self.line("instruction {}".format(episode.instruction))
        self.line("target      {}".format(episode.target_text or "-"))
        self.line("annotated   {}".format("yes" if episode.is_annotated else "no"))
        for prompt in episode.prompts:
            self.line("prompt      {} {}".format(
                prompt.kind.name.lower(), " ".join("{:.4f}".format(value) for value in prompt.coords)))
        grip = episode.actions[:, -1]
        self.line("gripper     {}".format(" ".join("{:.2f}".format(value) for value in grip)))

    def _checkpoint(self, path):
        metadata = read_metadata(path)
        tensors = read_checkpoint(path)
        self.line("stage       {}".format(metadata.stage))
        self.line("lora        {}".format("rank {} alpha {}".format(*metadata.lora) if metadata.lora else "-"))
        self.line("mask blind  {}".format("yes" if metadata.mask_blind else "no"))
        self.line("tensors     {} ({} values)".format(len(tensors), sum(array.size for array in tensors.values())))
        for name, array in tensors.items():
            self.line("  {} {}".format(name, "x".join(str(size) for size in array.shape)))
