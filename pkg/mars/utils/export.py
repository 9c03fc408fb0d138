"""
export.py

Readers and writers for images (MARSIMG), sinograms (MARSSINO), learned
models (MARSMODEL), objective traces, phantom descriptions and PGM previews.

Binary payloads are little-endian and follow a single text header line.
Readers raise ValueError on malformed files; writers raise RuntimeError
when the file cannot be written.
"""

import csv
import logging

import numpy as np
from PIL import Image

from mars.utils.img_proc import window_image
from mars.utils.patches import ImageGrid
from mars.utils.simulate import Ellipse, Measurement
from mars.utils.transform import TransformStack, unitarity_error

_logger = logging.getLogger(__name__)

MODEL_UNITARY_TOL = 1e-8


def _read_header(f, magic, n_fields, fname):
    line = f.readline()
    try:
        fields = line.decode("ascii").split()
        assert len(fields) == n_fields + 2
        assert fields[0] == magic and fields[1] == "1"
    except (AssertionError, UnicodeDecodeError):
        raise ValueError("{} is not a {} v1 file!".format(fname, magic))
    return fields[2:]


def _read_block(f, count, dtype, fname):
    dtype = np.dtype(dtype)
    raw = f.read(count * dtype.itemsize)
    try:
        assert len(raw) == count * dtype.itemsize
    except AssertionError:
        raise ValueError("{} is truncated!".format(fname))
    return np.frombuffer(raw, dtype=dtype).astype(np.float64)


def write_image(img, fname):
    """
    Write an image as MARSIMG v1: header then float32 LE values, row-major.

    Raises
    ------
    RuntimeError
        If the file cannot be written
    """

    header = "MARSIMG 1 {} {} {!r}\n".format(img.height, img.width, float(img.pixel_size))
    try:
        with open(fname, "wb") as f:
            f.write(header.encode("ascii"))
            f.write(img.values.astype("<f4").tobytes())
    except OSError:
        raise RuntimeError("Image export to {} failed!".format(fname))


def read_image(fname):
    with open(fname, "rb") as f:
        fields = _read_header(f, "MARSIMG", 3, fname)
        try:
            height, width, pixel_size = int(fields[0]), int(fields[1]), float(fields[2])
            assert height >= 1 and width >= 1
        except (ValueError, AssertionError):
            raise ValueError("{} has an invalid MARSIMG header!".format(fname))
        values = _read_block(f, height * width, "<f4", fname)

    return ImageGrid(values.reshape(height, width), pixel_size)


def write_sinogram(meas, fname):
    """MARSSINO v1: header then counts, sino and weights as float64 LE blocks."""
    header = "MARSSINO 1 {} {} {!r} {!r}\n".format(
        meas.n_views, meas.n_bins, float(meas.I0), float(meas.sigma)
    )
    try:
        with open(fname, "wb") as f:
            f.write(header.encode("ascii"))
            for block in (meas.counts, meas.sino, meas.weights):
                f.write(np.asarray(block, dtype="<f8").tobytes())
    except OSError:
        raise RuntimeError("Sinogram export to {} failed!".format(fname))


def read_sinogram(fname):
    with open(fname, "rb") as f:
        fields = _read_header(f, "MARSSINO", 4, fname)
        try:
            n_views, n_bins = int(fields[0]), int(fields[1])
            I0, sigma = float(fields[2]), float(fields[3])
            assert n_views >= 1 and n_bins >= 1
        except (ValueError, AssertionError):
            raise ValueError("{} has an invalid MARSSINO header!".format(fname))
        n_rays = n_views * n_bins
        counts, sino, weights = (_read_block(f, n_rays, "<f8", fname) for _ in range(3))

    return Measurement(counts, sino, weights, I0, sigma, n_views, n_bins)


def write_model(model, fname):
    """MARSMODEL v1: header, then per layer its threshold line and p*p float64 LE values."""
    try:
        with open(fname, "wb") as f:
            f.write("MARSMODEL 1 {} {}\n".format(model.L, model.p).encode("ascii"))
            for omega, eta in zip(model.omega, model.eta):
                f.write("{!r}\n".format(float(eta)).encode("ascii"))
                f.write(np.asarray(omega, dtype="<f8").tobytes())
    except OSError:
        raise RuntimeError("Model export to {} failed!".format(fname))


def read_model(fname):
    """
    Read a MARSMODEL v1 file.

    Raises
    ------
    ValueError
        If the file is malformed or a transform is not unitary to 1e-8
    """

    with open(fname, "rb") as f:
        fields = _read_header(f, "MARSMODEL", 2, fname)
        try:
            L, p = int(fields[0]), int(fields[1])
            assert L >= 1 and p >= 1
        except (ValueError, AssertionError):
            raise ValueError("{} has an invalid MARSMODEL header!".format(fname))

        omega, eta = list(), list()
        for l in range(1, L + 1):
            try:
                eta.append(float(f.readline().decode("ascii")))
            except (ValueError, UnicodeDecodeError):
                raise ValueError("{} has an invalid threshold for layer {}".format(fname, l))
            omega.append(_read_block(f, p * p, "<f8", fname).reshape(p, p))

    for l, o in enumerate(omega, start=1):
        err = unitarity_error(o)
        try:
            assert err <= MODEL_UNITARY_TOL
        except AssertionError:
            raise ValueError("Transform {} in {} is not unitary (error {:.3e})".format(l, fname, err))

    return TransformStack(omega, eta)


def write_trace(trace, fname):
    """Objective trace as CSV with columns iter,data_term,reg_term,total."""
    try:
        with open(fname, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["iter", "data_term", "reg_term", "total"])
            for e in trace:
                writer.writerow([int(e.iter)] + [repr(float(v)) for v in (e.data_term, e.reg_term, e.total)])
    except OSError:
        raise RuntimeError("Trace export to {} failed!".format(fname))


def read_trace(fname):
    with open(fname, "r", newline="") as f:
        rows = list(csv.DictReader(f))
    try:
        return [
            (int(r["iter"]), float(r["data_term"]), float(r["reg_term"]), float(r["total"]))
            for r in rows
        ]
    except (KeyError, ValueError, TypeError):
        raise ValueError("{} is not a valid objective trace!".format(fname))


def write_pgm(img, fname, lo=800.0, hi=1200.0):
    """8-bit binary PGM preview of an image through the display window [lo, hi]."""
    try:
        Image.fromarray(window_image(img.values, lo, hi)).save(fname, format="PPM")
    except OSError:
        raise RuntimeError("PGM export to {} failed!".format(fname))


def write_phantom_spec(ellipses, fname):
    try:
        with open(fname, "w") as f:
            f.write("# cx cy ax ay angle_deg hu (mm, degrees, modified HU)\n")
            for e in ellipses:
                values = (e.cx, e.cy, e.ax, e.ay, e.angle_deg, e.hu)
                f.write(" ".join(repr(float(v)) for v in values) + "\n")
    except OSError:
        raise RuntimeError("Phantom export to {} failed!".format(fname))


def read_phantom_spec(fname):
    """One ellipse per line, `cx cy ax ay angle_deg hu`; '#' starts a comment."""
    ellipses = list()
    with open(fname, "r") as f:
        for n, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                values = [float(v) for v in line.split()]
                assert len(values) == 6
                assert values[2] > 0.0 and values[3] > 0.0
            except (ValueError, AssertionError):
                raise ValueError("Line {} of {} is not a valid ellipse: {}".format(n, fname, line))
            ellipses.append(Ellipse(*values))

    return ellipses
