from pixelvla.management.commands._base import PixelVLACommand
from pixelvla.training import StageConfig, train


class Command(PixelVLACommand):

    help = """
        Runs one training stage. Values come from the settings defaults, then
        the key=value config file, then the flags given here.
    """
    default_seed = None

    def add_command_arguments(self, parser):
        parser.add_argument("-c", "--config", help="Flat key=value training config file.")
        parser.add_argument("--stage", type=int, choices=(1, 2))
        parser.add_argument("--steps", type=int)
        parser.add_argument("--batch", type=int)
        parser.add_argument("--lr", type=float)
        parser.add_argument("--rank", type=int, help="LoRA rank of stage 2 adapters.")
        parser.add_argument("--alpha", type=float, help="LoRA scale numerator of stage 2 adapters.")
        parser.add_argument("--chunk", type=int, help="Action chunk length.")
        parser.add_argument("--data", help="Training dataset directory.")
        parser.add_argument("--out", help="Output directory for the checkpoint and metrics.")
        parser.add_argument("--init", help="Checkpoint to start from.")
        parser.add_argument("--skip-stage1", action="store_true", default=None,
                            help="Train stage 2 from a fresh model.")
        parser.add_argument("--mask-blind", action="store_true", default=None,
                            help="Train stage 2 without pixel or prompt tokens.")

    def run(self, **options):
        keys = ("stage", "steps", "batch", "lr", "seed", "rank", "alpha", "chunk", "data", "out", "init",
                "skip_stage1", "mask_blind")
        cfg = StageConfig.load(options["config"], **{key: options[key] for key in keys})
        checkpoint, metrics = train(cfg)
        self.line("Stage {} trained for {} steps in {:.1f}s".format(cfg.stage, len(metrics.losses), metrics.wall_time))
        self.line("loss {:.6f} -> {:.6f}".format(metrics.initial_loss, metrics.final_loss))
        self.line("evaluation L1 {:.6f}".format(metrics.final_eval_l1))
        self.line("frozen digest {}".format(metrics.frozen_digest_after))
        self.line("checkpoint {}".format(checkpoint))
