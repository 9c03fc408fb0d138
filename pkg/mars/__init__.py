"""
mars-ct

A command line tool to learn multi-layer residual sparsifying transforms
from CT images and use them to reconstruct low-dose scans.
"""

from argparse import ArgumentParser, ArgumentDefaultsHelpFormatter
import logging
import os
import sys

import numpy as np
from PIL import Image

from mars.utils.edge_preserving import pwls_ep_reconstruct
from mars.utils.export import (
    read_image,
    read_model,
    read_phantom_spec,
    read_sinogram,
    write_image,
    write_model,
    write_pgm,
    write_phantom_spec,
    write_sinogram,
    write_trace,
)
from mars.utils.fbp import fbp_reconstruct
from mars.utils.img_proc import resize_img, transform_montage
from mars.utils.metrics import circular_roi, rmse_hu, ssim
from mars.utils.parse_inputs import (
    check_colormap,
    check_fps,
    check_input_file,
    check_outdir,
    check_output_file,
    check_program,
    derive_seed,
    ep_config,
    parse_config,
    patch_geometry,
    recon_config,
    scan_geometry,
    serialize_config,
    train_config,
)
from mars.utils.patches import extract_patches, residual_images
from mars.utils.projector import build_system_matrix
from mars.utils.recon import pwls_mars_reconstruct
from mars.utils.simulate import (
    DEFAULT_PHANTOM,
    phantom_generate,
    phantom_variants,
    simulate_counts,
)
from mars.utils.transform import init_state, sparse_code_sweep, train_mars, training_patches

_logger = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


def _add_common(parser):
    parser.add_argument("--config", type=str, help="Run configuration file", default=None)
    parser.add_argument("--seed", type=int, help="Override the configured seed", default=None)
    parser.add_argument("--verbose", help="Log progress to stderr", action="store_true")
    parser.add_argument("--debug", help="Log debugging details to stderr", action="store_true")


def get_parsed_args(argv=None):
    parser = ArgumentParser(prog="mars-ct", formatter_class=ArgumentDefaultsHelpFormatter)
    sub = parser.add_subparsers(dest="command")
    sub.required = True

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text, formatter_class=ArgumentDefaultsHelpFormatter)
        _add_common(p)
        return p

    p = add("phantom", "Render an ellipse phantom to a MARSIMG file")
    p.add_argument("output_file", type=str, help="Output (.img) file")
    p.add_argument("--spec", type=str, help="Ellipse list (cx cy ax ay angle_deg hu)", default=None)
    p.add_argument("--write-spec", type=str, help="Also write the ellipse list used", default=None)

    p = add("simulate", "Simulate a low-dose scan of an image")
    p.add_argument("image", type=str, help="Input (.img) object in modified HU")
    p.add_argument("output_file", type=str, help="Output (.sino) file")
    p.add_argument("--I0", type=float, help="Incident photons per ray", default=None)
    p.add_argument("--sigma", type=float, help="Electronic noise std", default=None)
    p.add_argument("--noiseless", help="Use mean counts instead of noisy ones", action="store_true")

    p = add("fbp", "Filtered back-projection of a sinogram")
    p.add_argument("sinogram", type=str, help="Input (.sino) file")
    p.add_argument("output_file", type=str, help="Output (.img) file")
    p.add_argument("--window", type=str, help="Apodization window (hann | ramp)", default=None)

    p = add("train", "Learn a transform stack from images")
    p.add_argument("output_file", type=str, help="Output (.model) file")
    p.add_argument("images", type=str, nargs="*", help="Training (.img) files, phantom variants if none")
    p.add_argument("--eta", type=float, nargs="+", help="Per-layer thresholds", default=None)
    p.add_argument("--T", type=int, help="Training iterations", default=None)

    p = add("reconstruct", "Reconstruct an image from a sinogram")
    p.add_argument("sinogram", type=str, help="Input (.sino) file")
    p.add_argument("output_file", type=str, help="Output (.img) file")
    p.add_argument("--method", type=str, choices=["mars", "ep"], help="Regularizer", default="mars")
    p.add_argument("--model", type=str, help="Learned (.model) file, required for mars", default=None)
    p.add_argument("--init", type=str, help="Initial (.img), default FBP then EP", default=None)
    p.add_argument(
        "--gamma",
        type=float,
        nargs="+",
        help="Per-layer sparsity thresholds (recon.gamma or recon.gamma_st)",
        default=None,
    )
    p.add_argument(
        "--beta", type=float, help="Regularization weight (recon.beta, recon.beta_st or ep.beta)", default=None
    )
    p.add_argument("--T-outer", type=int, help="Outer iterations (mars) or iterations (ep)", default=None)
    p.add_argument("--trace", type=str, help="Objective trace (.csv) output", default=None)
    p.add_argument("--snapshots", type=str, help="Directory for snapshot images", default=None)
    p.add_argument("--animate", type=str, help="GIF of the snapshots", default=None)
    p.add_argument("--cmap", type=str, help="Colormap of the animation", default="gray")
    p.add_argument("--fps", type=int, help="Frames per second of the animation", default=4)
    p.add_argument("--program", type=str, help="Backend program for GIF creation", default="imageio")

    p = add("metrics", "RMSE and SSIM of an image against a reference")
    p.add_argument("image", type=str, help="Reconstructed (.img) file")
    p.add_argument("reference", type=str, help="Reference (.img) file")

    p = add("residuals", "Per-layer residual images of an image under a model")
    p.add_argument("image", type=str, help="Input (.img) file")
    p.add_argument("model", type=str, help="Learned (.model) file")
    p.add_argument("outdir", type=str, help="Output directory")
    p.add_argument("--normalize", help="Divide by patch cover counts", action="store_true")

    p = add("pgm", "Export an image as an 8-bit PGM preview")
    p.add_argument("image", type=str, help="Input (.img) file")
    p.add_argument("output_file", type=str, help="Output (.pgm) file")
    p.add_argument("--window-lo", type=float, help="Display window low (HU)", default=800.0)
    p.add_argument("--window-hi", type=float, help="Display window high (HU)", default=1200.0)

    p = add("show-model", "Tile the rows of a learned transform")
    p.add_argument("model", type=str, help="Learned (.model) file")
    p.add_argument("output_file", type=str, help="Output (.png) file")
    p.add_argument("--layer", type=int, help="Layer to show", default=1)
    p.add_argument("--scale", type=int, help="Magnification", default=4)

    p = add("demo", "Run the whole pipeline on the built-in phantom")
    p.add_argument("outdir", type=str, help="Output directory")

    return parser.parse_args(argv)


def setup_logging(verbose=False, debug=False):
    level = logging.DEBUG if debug else logging.INFO if verbose else logging.WARNING
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        stream=sys.stderr,
        force=True,
    )


def load_config(args):
    cfg = parse_config(args.config)
    cfg.update({"seed": args.seed})
    return cfg


def system_for(cfg):
    geom = scan_geometry(cfg)
    return geom, build_system_matrix(geom, cfg["sim.mu_water"])


def _check_image_shape(img, geom):
    try:
        assert img.shape == geom.image_shape
    except AssertionError:
        raise ValueError("Image shape {} does not match geometry {}".format(img.shape, geom.image_shape))


def run_phantom(args, cfg):
    output_file = check_output_file(args.output_file, [".img"])
    ellipses = read_phantom_spec(check_input_file(args.spec)) if args.spec else list(DEFAULT_PHANTOM)
    img = phantom_generate(ellipses, cfg["geom.height"], cfg["geom.width"], cfg["geom.pixel_size"])
    write_image(img, output_file)
    if args.write_spec:
        write_phantom_spec(ellipses, args.write_spec)


def run_simulate(args, cfg):
    output_file = check_output_file(args.output_file, [".sino"])
    cfg.update({"sim.I0": args.I0, "sim.sigma": args.sigma})
    if args.noiseless:
        cfg.update({"sim.noiseless": True})

    x_true = read_image(check_input_file(args.image))
    geom, A = system_for(cfg)
    _check_image_shape(x_true, geom)

    meas = simulate_counts(
        A,
        x_true,
        cfg["sim.I0"],
        cfg["sim.sigma"],
        seed=derive_seed(cfg["seed"], "simulate"),
        noiseless=cfg["sim.noiseless"],
    )
    write_sinogram(meas, output_file)


def run_fbp(args, cfg):
    output_file = check_output_file(args.output_file, [".img"])
    cfg.update({"fbp.window": args.window})
    meas = read_sinogram(check_input_file(args.sinogram))
    img = fbp_reconstruct(scan_geometry(cfg), meas, cfg["fbp.window"], cfg["sim.mu_water"])
    write_image(img, output_file)


def train_from_images(cfg, images, single_layer=False):
    tcfg = train_config(cfg, single_layer)
    geom = patch_geometry(cfg, images[0].height, images[0].width)
    R1 = training_patches(images, geom, tcfg.max_patches, tcfg.seed)
    return train_mars(R1, tcfg)


def training_images(cfg):
    return phantom_variants(
        cfg["train.n_images"],
        cfg["geom.height"],
        cfg["geom.width"],
        cfg["geom.pixel_size"],
        seed=derive_seed(cfg["seed"], "phantoms"),
    )


def run_train(args, cfg):
    output_file = check_output_file(args.output_file, [".model"])
    cfg.update({"train.T": args.T})
    if args.eta:
        cfg.update({"train.eta": args.eta})

    if args.images:
        images = [read_image(check_input_file(f)) for f in args.images]
    else:
        images = training_images(cfg)

    write_model(train_from_images(cfg, images), output_file)


def initial_image(cfg, geom, A, meas):
    """FBP followed by the edge-preserving reconstruction."""
    x_fbp = fbp_reconstruct(geom, meas, cfg["fbp.window"], cfg["sim.mu_water"])
    return pwls_ep_reconstruct(meas, A, ep_config(cfg), x_fbp).image


def reconstruct_settings(args, cfg, model=None):
    """
    Apply the reconstruct flags to the keys of the chosen regularizer.

    A one-layer model reconstructed under a multi-layer configuration uses
    the recon.*_st keys. Returns the ReconConfig for mars, None for ep.
    """

    if args.method == "ep":
        cfg.update({"ep.beta": args.beta, "ep.iters": args.T_outer})
        return None

    cfg.update({"recon.T_outer": args.T_outer})
    single_layer = model.L == 1 and len(cfg["recon.gamma"]) != 1
    if single_layer:
        try:
            assert args.gamma is None or len(args.gamma) == 1
        except AssertionError:
            raise ValueError("A one-layer model takes a single --gamma, got {}".format(args.gamma))
        cfg.update({"recon.beta_st": args.beta, "recon.gamma_st": args.gamma[0] if args.gamma else None})
    else:
        cfg.update({"recon.beta": args.beta, "recon.gamma": args.gamma})

    rcfg = recon_config(cfg, single_layer)
    try:
        assert rcfg.L == model.L
    except AssertionError:
        raise ValueError("Model has {} layers but the thresholds are {}".format(model.L, rcfg.gamma))
    return rcfg


def run_reconstruct(args, cfg):
    output_file = check_output_file(args.output_file, [".img"])

    model = None
    if args.method == "mars":
        try:
            assert args.model is not None
        except AssertionError:
            raise ValueError("Method mars needs a --model file!")
        model = read_model(check_input_file(args.model))

    if args.animate:
        check_output_file(args.animate, [".gif"])
        cmap = check_colormap(args.cmap)
        fps = check_fps(args.fps)
        program = check_program(args.program)
        if not cfg["recon.snapshot_every"]:
            cfg.update({"recon.snapshot_every": 1})

    rcfg = reconstruct_settings(args, cfg, model)
    meas = read_sinogram(check_input_file(args.sinogram))
    geom, A = system_for(cfg)

    if args.method == "mars":
        x_init = read_image(check_input_file(args.init)) if args.init else initial_image(cfg, geom, A, meas)
        _check_image_shape(x_init, geom)
        result = pwls_mars_reconstruct(meas, A, model, rcfg, x_init)
    else:
        if args.init:
            x_init = read_image(check_input_file(args.init))
        else:
            x_init = fbp_reconstruct(geom, meas, cfg["fbp.window"], cfg["sim.mu_water"])
        _check_image_shape(x_init, geom)
        result = pwls_ep_reconstruct(meas, A, ep_config(cfg), x_init)

    write_image(result.image, output_file)

    if args.trace:
        write_trace(result.trace, args.trace)

    if args.snapshots:
        outdir = check_outdir(args.snapshots)
        for t, img in result.snapshots:
            write_image(img, os.path.join(outdir, "snapshot_{:05d}.img".format(t)))

    if args.animate:
        from mars.utils.animation import make_gif, transform_snapshots

        snapshots = result.snapshots or [(0, result.image)]
        frames = transform_snapshots(snapshots, cmap, cfg["metrics.window_lo"], cfg["metrics.window_hi"])
        make_gif(frames, args.animate, fps, program)


def image_metrics(cfg, x, ref):
    roi = circular_roi(ref.height, ref.width, cfg["metrics.roi_radius"])
    data_range = cfg["metrics.window_hi"] - cfg["metrics.window_lo"]
    return rmse_hu(x, ref, roi), ssim(x, ref, roi, data_range=data_range)


def run_metrics(args, cfg):
    x = read_image(check_input_file(args.image))
    ref = read_image(check_input_file(args.reference))
    rmse, s = image_metrics(cfg, x, ref)
    print("rmse={:.6f} ssim={:.6f}".format(rmse, s))


def run_residuals(args, cfg):
    img = read_image(check_input_file(args.image))
    model = read_model(check_input_file(args.model))
    outdir = check_outdir(args.outdir)

    geom = patch_geometry(cfg, img.height, img.width)
    try:
        assert geom.p == model.p
    except AssertionError:
        raise ValueError("Patch size {} does not match model p = {}".format(geom.p, model.p))

    state = init_state(model, extract_patches(img, geom))
    sparse_code_sweep(model, state, model.eta)

    for l, res in enumerate(residual_images(model, state, geom, args.normalize, img.pixel_size), start=1):
        _logger.info("Layer %d residual energy %.6e", l, float(np.sum(res.values ** 2)))
        write_image(res, os.path.join(outdir, "residual_{}.img".format(l)))


def run_pgm(args, cfg):
    output_file = check_output_file(args.output_file, [".pgm"])
    write_pgm(read_image(check_input_file(args.image)), output_file, args.window_lo, args.window_hi)


def run_show_model(args, cfg):
    output_file = check_output_file(args.output_file, [".png"])
    model = read_model(check_input_file(args.model))
    montage = transform_montage(model, args.layer, cfg["patch.height"], cfg["patch.width"])
    tile = resize_img(np.round(montage * 255.0).astype(np.uint8), args.scale)
    try:
        Image.fromarray(tile).save(output_file)
    except OSError:
        raise RuntimeError("Montage export to {} failed!".format(output_file))


def run_demo(cfg, outdir):
    """
    Phantom, scan, FBP, training, then EP, single-layer transform (ST) and
    MARS reconstructions, and metrics.

    ST and MARS both start from the EP image. Every artifact is written to
    outdir.

    Returns
    -------
    dict
        Method name to (rmse, ssim)
    """

    outdir = check_outdir(outdir)
    geom, A = system_for(cfg)

    x_true = phantom_generate(DEFAULT_PHANTOM, geom.height, geom.width, geom.pixel_size)
    write_image(x_true, os.path.join(outdir, "phantom.img"))
    write_phantom_spec(DEFAULT_PHANTOM, os.path.join(outdir, "phantom.txt"))

    meas = simulate_counts(
        A,
        x_true,
        cfg["sim.I0"],
        cfg["sim.sigma"],
        seed=derive_seed(cfg["seed"], "simulate"),
        noiseless=cfg["sim.noiseless"],
    )
    write_sinogram(meas, os.path.join(outdir, "scan.sino"))

    x_fbp = fbp_reconstruct(geom, meas, cfg["fbp.window"], cfg["sim.mu_water"])
    write_image(x_fbp, os.path.join(outdir, "fbp.img"))

    images = training_images(cfg)
    model = train_from_images(cfg, images)
    write_model(model, os.path.join(outdir, "mars.model"))
    st_model = train_from_images(cfg, images, single_layer=True)
    write_model(st_model, os.path.join(outdir, "st.model"))

    ep = pwls_ep_reconstruct(meas, A, ep_config(cfg), x_fbp)
    write_image(ep.image, os.path.join(outdir, "ep.img"))
    write_trace(ep.trace, os.path.join(outdir, "ep_trace.csv"))

    st = pwls_mars_reconstruct(meas, A, st_model, recon_config(cfg, single_layer=True), ep.image)
    write_image(st.image, os.path.join(outdir, "st.img"))
    write_trace(st.trace, os.path.join(outdir, "st_trace.csv"))

    mars = pwls_mars_reconstruct(meas, A, model, recon_config(cfg), ep.image)
    write_image(mars.image, os.path.join(outdir, "mars.img"))
    write_trace(mars.trace, os.path.join(outdir, "mars_trace.csv"))

    results = dict()
    for name, img in (("fbp", x_fbp), ("ep", ep.image), ("st", st.image), ("mars", mars.image)):
        results[name] = image_metrics(cfg, img, x_true)
        write_pgm(
            img,
            os.path.join(outdir, name + ".pgm"),
            cfg["metrics.window_lo"],
            cfg["metrics.window_hi"],
        )

    with open(os.path.join(outdir, "run.cfg"), "w") as f:
        f.write(serialize_config(cfg))

    return results


COMMANDS = {
    "phantom": run_phantom,
    "simulate": run_simulate,
    "fbp": run_fbp,
    "train": run_train,
    "reconstruct": run_reconstruct,
    "metrics": run_metrics,
    "residuals": run_residuals,
    "pgm": run_pgm,
    "show-model": run_show_model,
}


def cli_main(argv=None):
    try:
        args = get_parsed_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    setup_logging(args.verbose, args.debug)

    try:
        cfg = load_config(args)
        if args.command == "demo":
            results = run_demo(cfg, args.outdir)
            for name, (rmse, s) in results.items():
                print("{:<6s} rmse={:.6f} ssim={:.6f}".format(name, rmse, s))
        else:
            COMMANDS[args.command](args, cfg)
    except FloatingPointError as e:
        _logger.error("Numeric error: %s", e)
        return EXIT_NUMERIC
    except np.linalg.LinAlgError as e:
        _logger.error("Numeric error: %s", e)
        return EXIT_NUMERIC
    except (ValueError, OSError, RuntimeError) as e:
        _logger.error("%s", e)
        return EXIT_DATA

    return EXIT_OK


def main():
    sys.exit(cli_main(sys.argv[1:]))


if __name__ == "__main__":
    main()
