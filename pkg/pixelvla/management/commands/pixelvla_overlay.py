import io

import numpy as np
from PIL import Image, ImageDraw

from pixelvla.episodes import PromptKind, read_episode
from pixelvla.management.commands._base import PixelVLACommand
from pixelvla.utils import atomic_write

MASK_TINT = (0, 255, 0)
TINT_OPACITY = 0.5
PROMPT_COLORS = {
    PromptKind.POINT: (255, 255, 0),
    PromptKind.LINE: (0, 255, 255),
    PromptKind.BOX: (255, 64, 0),
}
POINT_RADIUS = 2


def render_overlay(frame, mask, prompts, scale):
    """
    Upscale ``frame``, tint the mask support and draw every geometric prompt on top.
    """
    tinted = frame.astype(np.float64)
    support = np.asarray(mask) > 0
    tinted[support] = (1.0 - TINT_OPACITY) * tinted[support] + TINT_OPACITY * np.asarray(MASK_TINT)
    image = Image.fromarray(np.round(tinted).astype(np.uint8))
    height, width = frame.shape[:2]
    image = image.resize((width * scale, height * scale), Image.NEAREST)
    draw = ImageDraw.Draw(image)
    for prompt in prompts:
        if prompt.kind is PromptKind.MASK_REF:
            continue
        coords = [value * size * scale for value, size in zip(prompt.coords, (width, height) * 2)]
        color = PROMPT_COLORS[prompt.kind]
        if prompt.kind is PromptKind.POINT:
            x, y = coords
            draw.ellipse((x - POINT_RADIUS, y - POINT_RADIUS, x + POINT_RADIUS, y + POINT_RADIUS), fill=color)
        elif prompt.kind is PromptKind.LINE:
            draw.line(coords, fill=color, width=1)
        else:
            draw.rectangle(coords, outline=color, width=1)
    return image


class Command(PixelVLACommand):

    help = """
        Writes a PNG of one episode frame with its mask tinted and its visual prompts drawn.
    """

    def add_command_arguments(self, parser):
        parser.add_argument("--episode", required=True)
        parser.add_argument("--timestep", default=0, type=int)
        parser.add_argument("-o", "--output", required=True, help="PNG file to write.")
        parser.add_argument("--scale", default=4, type=int, help="Upscaling factor. Defaults to 4")

    def run(self, **options):
        episode = read_episode(options["episode"])
        step = min(max(options["timestep"], 0), episode.length - 1)
        image = render_overlay(episode.frames[step], episode.masks[step], episode.prompts, max(options["scale"], 1))
        buffer = io.BytesIO()
        image.save(buffer, format="PNG")
        atomic_write(options["output"], buffer.getvalue())
        self.line("Wrote {} ({}x{}, {} prompts)".format(options["output"], image.width, image.height,
                                                        len(episode.prompts)))
