"""
parse_inputs.py

Run configuration: parsing of `key = value` files, serialization, input
checks for the command line, and builders for the per-module settings.
"""

from dataclasses import dataclass, field
import hashlib
import logging
import os

import numpy as np
from matplotlib import pyplot as plt

from mars.utils.edge_preserving import EpConfig
from mars.utils.fbp import WINDOWS
from mars.utils.patches import PatchGeometry
from mars.utils.projector import ScanGeometry
from mars.utils.recon import ReconConfig
from mars.utils.transform import TrainConfig

_logger = logging.getLogger(__name__)

# geom.bin_spacing = 0 means "same as geom.pixel_size"
DEFAULTS = {
    "seed": 0,
    "geom.height": 64,
    "geom.width": 64,
    "geom.pixel_size": 4.0,
    "geom.n_views": 120,
    "geom.n_bins": 96,
    "geom.bin_spacing": 0.0,
    "patch.height": 8,
    "patch.width": 8,
    "patch.stride": 1,
    "sim.I0": 1.0e4,
    "sim.sigma": 5.0,
    "sim.mu_water": 0.02,
    "sim.noiseless": False,
    "train.eta": [80.0, 60.0],
    "train.T": 50,
    "train.log_every": 10,
    "train.n_images": 3,
    "train.max_patches": 0,
    "train.eta_st": 75.0,
    "recon.beta": 1.0e-5,
    "recon.gamma": [50.0, 25.0],
    "recon.T_outer": 200,
    "recon.T_inner": 2,
    "recon.alpha": 1.999,
    "recon.snapshot_every": 0,
    "recon.beta_st": 2.2e-5,
    "recon.gamma_st": 35.0,
    "ep.beta": 2.5e-7,
    "ep.delta": 10.0,
    "ep.iters": 100,
    "fbp.window": "hann",
    "metrics.window_lo": 800.0,
    "metrics.window_hi": 1200.0,
    "metrics.roi_radius": 0.48,
}

_TRUE = ("true", "yes", "on", "1")
_FALSE = ("false", "no", "off", "0")

MAX_FPS = 30
GIF_PROGRAMS = ("imageio", "ImageMagick", "ffmpeg")


@dataclass
class RunConfig:
    """Every tunable of the pipeline, keyed by its namespaced name."""

    values: dict = field(default_factory=lambda: dict(DEFAULTS))

    def __getitem__(self, key):
        return self.values[key]

    def update(self, overrides):
        """Set already-parsed values, skipping None (flags that were not given)."""
        for key, value in overrides.items():
            if value is None:
                continue
            check_key(key)
            self.values[key] = _coerce(key, value)
        return self


def check_key(key):
    try:
        assert key in DEFAULTS
    except AssertionError:
        raise ValueError("Unknown configuration key {}!".format(key))
    return key


def _coerce(key, value):
    default = DEFAULTS[key]
    if isinstance(default, list):
        return [float(v) for v in value]
    if isinstance(default, bool):
        return bool(value)
    return type(default)(value)


def _parse_value(key, text):
    default = DEFAULTS[key]
    try:
        if isinstance(default, list):
            return [float(v) for v in text.split(",") if v.strip()]
        if isinstance(default, bool):
            assert text.lower() in _TRUE + _FALSE
            return text.lower() in _TRUE
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text
    except (ValueError, AssertionError):
        raise ValueError("Value {} for {} is invalid!".format(text, key))


def parse_config_text(text, source="<config>"):
    """
    Parse `key = value` lines on top of the defaults.

    '#' starts a comment, lists are comma-separated, unknown keys are rejected.
    """

    cfg = RunConfig()
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            assert "=" in line
        except AssertionError:
            raise ValueError("Line {} of {} is not `key = value`: {}".format(n, source, line))
        key, value = (s.strip() for s in line.split("=", 1))
        check_key(key)
        cfg.values[key] = _parse_value(key, value)

    check_config(cfg)
    return cfg


def parse_config(fname=None):
    """Read a config file, or return the defaults when fname is None."""
    if fname is None:
        cfg = RunConfig()
        check_config(cfg)
        return cfg

    try:
        with open(fname, "r") as f:
            text = f.read()
    except OSError:
        raise ValueError("Could not read config file {}".format(fname))

    return parse_config_text(text, fname)


def _format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(cfg):
    """Text that parse_config_text reads back to an equal config."""
    lines = ["# mars-ct run configuration"]
    for key in sorted(cfg.values):
        lines.append("{} = {}".format(key, _format_value(cfg.values[key])))
    return "\n".join(lines) + "\n"


def check_config(cfg):
    """Cross-key checks that the per-module constructors cannot see."""
    try:
        assert cfg["fbp.window"] in WINDOWS
    except AssertionError:
        raise ValueError("FBP window {} is invalid!".format(cfg["fbp.window"]))

    try:
        assert len(cfg["train.eta"]) >= 1
        assert len(cfg["recon.gamma"]) == len(cfg["train.eta"])
    except AssertionError:
        raise ValueError(
            "train.eta {} and recon.gamma {} must have one entry per layer".format(
                cfg["train.eta"], cfg["recon.gamma"]
            )
        )

    try:
        assert cfg["metrics.window_hi"] > cfg["metrics.window_lo"]
    except AssertionError:
        raise ValueError(
            "Display window [{}, {}] is invalid!".format(cfg["metrics.window_lo"], cfg["metrics.window_hi"])
        )

    try:
        assert cfg["sim.I0"] > 0.0 and cfg["sim.sigma"] >= 0.0 and cfg["sim.mu_water"] > 0.0
    except AssertionError:
        raise ValueError(
            "Simulation parameters I0 = {}, sigma = {}, mu_water = {} are invalid!".format(
                cfg["sim.I0"], cfg["sim.sigma"], cfg["sim.mu_water"]
            )
        )

    try:
        assert cfg["train.n_images"] >= 1 and cfg["train.max_patches"] >= 0
    except AssertionError:
        raise ValueError(
            "Training set of {} images, {} patches is invalid!".format(
                cfg["train.n_images"], cfg["train.max_patches"]
            )
        )

    try:
        assert cfg["train.eta_st"] >= 0.0 and cfg["recon.gamma_st"] >= 0.0 and cfg["recon.beta_st"] > 0.0
    except AssertionError:
        raise ValueError(
            "Single-layer settings eta = {}, gamma = {}, beta = {} are invalid!".format(
                cfg["train.eta_st"], cfg["recon.gamma_st"], cfg["recon.beta_st"]
            )
        )

    return cfg


def derive_seed(seed, name):
    """Stable sub-seed of a named random component."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    return int(np.random.SeedSequence([int(seed)] + words).generate_state(1)[0])


def scan_geometry(cfg):
    spacing = cfg["geom.bin_spacing"] or None
    return ScanGeometry(
        cfg["geom.height"],
        cfg["geom.width"],
        cfg["geom.pixel_size"],
        cfg["geom.n_views"],
        cfg["geom.n_bins"],
        spacing,
    )


def patch_geometry(cfg, height, width):
    """Patch layout of the regularizer on a height x width image."""
    return PatchGeometry(
        height, width, cfg["patch.height"], cfg["patch.width"], cfg["patch.stride"], cfg["patch.stride"]
    )


def train_config(cfg, single_layer=False):
    """Training settings of the MARS model, or of the one-layer ST model."""
    return TrainConfig(
        eta=[cfg["train.eta_st"]] if single_layer else cfg["train.eta"],
        T=cfg["train.T"],
        patch_h=cfg["patch.height"],
        patch_w=cfg["patch.width"],
        seed=derive_seed(cfg["seed"], "train"),
        log_every=cfg["train.log_every"],
        max_patches=cfg["train.max_patches"],
    )


def recon_config(cfg, single_layer=False):
    return ReconConfig(
        beta=cfg["recon.beta_st"] if single_layer else cfg["recon.beta"],
        gamma=[cfg["recon.gamma_st"]] if single_layer else cfg["recon.gamma"],
        T_outer=cfg["recon.T_outer"],
        T_inner=cfg["recon.T_inner"],
        alpha=cfg["recon.alpha"],
        snapshot_every=cfg["recon.snapshot_every"],
        patch_h=cfg["patch.height"],
        patch_w=cfg["patch.width"],
        stride=cfg["patch.stride"],
    )


def ep_config(cfg):
    return EpConfig(
        beta=cfg["ep.beta"],
        delta=cfg["ep.delta"],
        iters=cfg["ep.iters"],
        T_inner=cfg["recon.T_inner"],
        alpha=cfg["recon.alpha"],
    )


def check_output_file(output_file, extensions):
    try:
        assert any(output_file.endswith(ext) for ext in extensions)
    except AssertionError:
        raise ValueError("Output file {} must end in one of {}".format(output_file, extensions))

    return output_file


def check_input_file(input_file):
    try:
        assert os.path.isfile(input_file)
    except AssertionError:
        raise ValueError("Input file {} does not exist!".format(input_file))

    return input_file


def check_outdir(outdir):
    """
    Directory receiving snapshots, residual maps or demo artifacts, created
    on first use. An existing path that is not a directory is rejected.
    """
    try:
        assert not os.path.exists(outdir) or os.path.isdir(outdir)
    except AssertionError:
        raise ValueError("Output path {} exists and is not a directory!".format(outdir))

    if not os.path.isdir(outdir):
        _logger.info("Creating output directory %s", outdir)
        try:
            os.makedirs(outdir)
        except OSError as e:
            raise ValueError("Could not create output directory {}: {}".format(outdir, e))

    return outdir


def check_colormap(cmap):
    """Colormap applied to the windowed snapshots of an animation."""
    try:
        return plt.get_cmap(cmap)
    except ValueError:
        raise ValueError("Snapshot colormap {} is invalid!".format(cmap))


def check_fps(fps):
    try:
        assert 0 < fps <= MAX_FPS
    except AssertionError:
        raise ValueError("Animation frame rate {} must be in (0, {}]!".format(fps, MAX_FPS))

    return fps


def check_program(program):
    try:
        assert program in GIF_PROGRAMS
    except AssertionError:
        raise ValueError("GIF writer {} is invalid, use one of {}!".format(program, ", ".join(GIF_PROGRAMS)))

    return program
