import json

import numpy as np
from django.core.management.base import CommandError
from PIL import Image

from pixelvla.annotation.backends import load_backend_suite
from pixelvla.episodes import VisualPrompt, read_episode
from pixelvla.management.commands._base import PixelVLACommand
from pixelvla.model import load_model
from pixelvla.training import infer_action
from pixelvla.utils import atomic_write


def read_image(path, mode):
    try:
        with Image.open(path) as image:
            return np.array(image.convert(mode))
    except OSError as exc:
        raise CommandError("Cannot read image {}: {}".format(path, exc)) from exc


class Command(PixelVLACommand):

    help = """
        Predicts the action chunk for one observation. Prompts use the syntax
        point:x,y line:x1,y1,x2,y2 box:x1,y1,x2,y2 or mask.
    """

    def add_command_arguments(self, parser):
        parser.add_argument("--checkpoint", required=True)
        source = parser.add_mutually_exclusive_group(required=True)
        source.add_argument("--episode", help="Episode file to take the frame from.")
        source.add_argument("--image", help="RGB image file.")
        parser.add_argument("--timestep", default=0, type=int, help="Frame index within --episode.")
        parser.add_argument("--instruction", help="Defaults to the instruction of --episode.")
        parser.add_argument("--mask", help="Target mask image; nonzero pixels are the target.")
        parser.add_argument("--episode-mask", action="store_true", help="Use the mask stored in --episode.")
        parser.add_argument("--prompt", action="append", default=[], help="Visual prompt; repeatable.")
        parser.add_argument("--backend", default="synthetic", help="Mask predictor for prompt-only calls.")
        parser.add_argument("--output", help="Also write the chunk as JSON to this path.")

    def run(self, **options):
        mask, instruction = None, options["instruction"]
        if options["episode"]:
            episode = read_episode(options["episode"])
            if not 0 <= options["timestep"] < episode.length:
                raise CommandError("Timestep {} is outside the {}-step episode".format(
                    options["timestep"], episode.length))
            frame = episode.frames[options["timestep"]]
            instruction = instruction or episode.instruction
            if options["episode_mask"]:
                mask = episode.masks[options["timestep"]]
        else:
            frame = read_image(options["image"], "RGB")
        if not instruction:
            raise CommandError("An instruction is required")
        if options["mask"]:
            mask = np.where(read_image(options["mask"], "L") > 0, 255, 0).astype(np.uint8)
        prompts = [VisualPrompt.parse(text) for text in options["prompt"]]

        checkpoint = load_model(options["checkpoint"])
        if mask is None and prompts:
            with load_backend_suite(options["backend"], seed=options["seed"]) as backends:
                chunk = infer_action(checkpoint, frame, instruction, prompts=prompts, backends=backends)
        else:
            chunk = infer_action(checkpoint, frame, instruction, mask=mask, prompts=prompts)

        if options["output"]:
            atomic_write(options["output"], json.dumps({"actions": chunk.tolist()}, indent=2).encode("utf-8"))
        for step, action in enumerate(chunk):
            self.line("{:2d} ".format(step) + " ".join("{:+.5f}".format(value) for value in action))
