"""
img_proc.py

Display helpers: HU windowing, percentile rescaling, resizing, and the
tiled view of a learned transform.
"""

import numpy as np
from PIL import Image


def window_image(values, lo=800.0, hi=1200.0):
    """
    Map the display window [lo, hi] in HU linearly onto 0..255.

    Parameters
    ----------
    values: np.array
        Image in modified HU
    lo, hi: float
        Display window, lo < hi

    Returns
    -------
    np.array of uint8
    """

    try:
        assert hi > lo
    except AssertionError:
        raise ValueError("Display window [{}, {}] is invalid!".format(lo, hi))

    # window midpoints map to exactly 127.5
    scaled = (np.asarray(values, dtype=np.float64) - lo) * 255.0 / (hi - lo)
    return np.round(np.clip(scaled, 0.0, 255.0)).astype(np.uint8)


def rescale_img(img, min_val=0.0, max_val=1.0, dtype=np.float32, pmin=0.0, pmax=100.0):
    """
    Rescale an image between [min_val, max_val] using percentiles of its values.

    Parameters
    ----------
    img: np.array
        Image as NumPy array
    min_val: float
        Minimum value of rescaled image (default 0.0)
    max_val: float
        Maximum value of rescaled image (default 1.0)
    dtype : np.dtype
        Type to return rescaled image (default np.float32)
    pmin : float
        Lower percentile mapped to min_val (default 0%)
    pmax : float
        Upper percentile mapped to max_val (default 100%)

    Returns
    -------
    img_rescale: np.array
        Image as NumPy array, constant images map to min_val
    """

    vmin, vmax = np.nanpercentile(img, pmin), np.nanpercentile(img, pmax)
    span = vmax - vmin if vmax > vmin else 1.0

    img_rescale = (min_val + (img - vmin) * ((max_val - min_val) / span)).astype(dtype)
    np.clip(img_rescale, min_val, max_val, out=img_rescale)

    return img_rescale


def resize_img(img, scale):
    """
    Enlarge an 8-bit image by an integer factor with nearest-neighbor sampling.

    Parameters
    ----------
    img: np.array
        (height, width) or (height, width, channels) uint8 array
    scale: int
        Magnification factor

    Returns
    -------
    np.array
    """

    try:
        assert int(scale) >= 1
    except AssertionError:
        raise ValueError("Scale {} is invalid!".format(scale))

    height, width = img.shape[:2]
    size = (width * int(scale), height * int(scale))
    return np.array(Image.fromarray(img).resize(size=size, resample=Image.NEAREST))


def transform_montage(model, layer, patch_h, patch_w, gap=1, pmin=0.0, pmax=100.0):
    """
    Tile the rows of one learned transform as patch_h x patch_w atoms.

    Each row is rescaled to [0, 1] on its own, tiles sit on a white grid.

    Parameters
    ----------
    model: TransformStack
    layer: int
        Layer 1..L
    patch_h, patch_w: int
        Patch size of the model
    gap: int
        Pixels between tiles

    Returns
    -------
    np.array
        2D float array in [0, 1]
    """

    try:
        assert 1 <= layer <= model.L
    except AssertionError:
        raise ValueError("Layer {} is out of range [1, {}]".format(layer, model.L))

    try:
        assert patch_h * patch_w == model.p
    except AssertionError:
        raise ValueError("Patch size {}x{} does not match p = {}".format(patch_h, patch_w, model.p))

    omega = model.omega[layer - 1]
    n_cols = int(np.ceil(np.sqrt(model.p)))
    n_rows = int(np.ceil(model.p / float(n_cols)))

    montage = np.ones((n_rows * (patch_h + gap) + gap, n_cols * (patch_w + gap) + gap))
    for k, atom in enumerate(omega):
        r, c = divmod(k, n_cols)
        y, x = gap + r * (patch_h + gap), gap + c * (patch_w + gap)
        montage[y : y + patch_h, x : x + patch_w] = rescale_img(
            atom.reshape(patch_h, patch_w), dtype=np.float64, pmin=pmin, pmax=pmax
        )

    return montage
