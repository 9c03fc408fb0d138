"""
animation.py

Animate reconstruction snapshots, one frame per kept iterate.
"""

import logging

import moviepy.editor as mpy
import numpy as np

from mars.utils.img_proc import resize_img, window_image

_logger = logging.getLogger(__name__)


def transform_snapshots(snapshots, cmap, lo=800.0, hi=1200.0, scale=4):
    """
    Turn reconstruction snapshots into RGB frames.

    Parameters
    ----------
    snapshots: list of (int, ImageGrid)
        Iteration index and image, as kept by the reconstruction
    cmap: matplotlib.colors.Colormap
        Colormap applied to the windowed image
    lo, hi: float
        Display window in HU
    scale: int
        Integer magnification of every frame

    Returns
    -------
    frames: list
        List of (height * scale, width * scale, 3) uint8 arrays
    """

    frames = list()
    for _, img in snapshots:
        gray = window_image(img.values, lo, hi) / 255.0

        # drop the alpha channel of the colormap output
        rgb = (cmap(gray)[:, :, :-1] * 255.0).round().astype(np.uint8)
        frames.append(resize_img(rgb, scale))

    return frames


def make_gif(frames, fname, fps=4, program="imageio"):
    """
    Write out a GIF from a stack of frames

    Parameters
    ----------
    frames: list
        List of NumPy arrays to animate
    fname: str
        Output filename (.gif)
    fps: int
        Frames per second for animation
    program: str
        Backend program for animation generation

    Raises
    ------
    RuntimeError
        Fail to create animation
    """

    try:
        assert len(frames) >= 1
    except AssertionError:
        raise ValueError("Need at least one frame to animate!")

    try:
        clip = mpy.ImageSequenceClip(frames, fps=fps)
        clip.write_gif(fname, fps=fps, program=program, logger=None)
    except (OSError, ValueError, TypeError):
        raise RuntimeError("Animation export to {} failed!".format(fname))

    _logger.info("Wrote %d frames to %s", len(frames), fname)
