"""Affine plate rectification: least-squares fit from a corner quad, bilinear warp."""

import numpy as np

from . import _kernels

CANONICAL_W = 128
CANONICAL_H = 32


class DegenerateQuadError(ValueError):
    """Corner points are collinear or otherwise unusable for fitting."""


class SingularTransformError(ValueError):
    """The affine map has a non-invertible linear part."""


def as_quad(points):
    q = np.asarray(points, dtype=np.float64).reshape(4, 2)
    if not np.all(np.isfinite(q)):
        raise DegenerateQuadError("quad has non-finite coordinates")
    return q


def quad_area(points):
    """Signed shoelace area of the polygon TL, TR, BR, BL."""
    q = as_quad(points)
    x, y = q[:, 0], q[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def canonical_quad(width=CANONICAL_W, height=CANONICAL_H):
    """Corner pixel centres of a width x height image, ordered TL, TR, BR, BL."""
    return np.array([[0, 0], [width - 1, 0], [width - 1, height - 1], [0, height - 1]], dtype=np.float64)


def fit_affine(src, dst):
    """Least-squares 2x3 affine map sending each ``src`` corner onto ``dst``."""
    s, d = as_quad(src), as_quad(dst)
    design = np.column_stack([s, np.ones(4)])
    scale = max(np.abs(s).max(), 1.0)
    if abs(quad_area(s)) <= 1e-12 * scale * scale or np.linalg.matrix_rank(design, tol=1e-10 * scale) < 3:
        raise DegenerateQuadError("source quad is degenerate (collinear or zero area)")
    sol, *_ = np.linalg.lstsq(design, d, rcond=None)
    return sol.T.copy()


def apply_affine(m, points):
    p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    return p @ m[:, :2].T + m[:, 2]


def invert_affine(m):
    m = np.asarray(m, dtype=np.float64)
    lin = m[:, :2]
    det = lin[0, 0] * lin[1, 1] - lin[0, 1] * lin[1, 0]
    if abs(det) <= 1e-12:
        raise SingularTransformError(f"affine linear part is singular (det={det:g})")
    inv = np.linalg.inv(lin)
    return np.column_stack([inv, -inv @ m[:, 2]])


def compose_affine(outer, inner):
    """Matrix of ``outer`` applied after ``inner``."""
    a = np.vstack([outer, [0, 0, 1]])
    b = np.vstack([inner, [0, 0, 1]])
    return (a @ b)[:2]


def warp_bilinear(img, m, out_w, out_h, border="clamp", fill=0.0):
    """Resample ``img`` so output pixel (u, v) reads input at m^-1 (u, v).

    ``img`` is (H, W) or (H, W, C). Out-of-range samples are edge-clamped by
    default; ``border="constant"`` writes ``fill`` instead.
    """
    inv = invert_affine(m)
    arr = np.asarray(img, dtype=np.float64)
    flat = arr.ndim == 2
    if flat:
        arr = arr[:, :, None]
    u, v = np.meshgrid(np.arange(out_w, dtype=np.float64), np.arange(out_h, dtype=np.float64))
    sx = inv[0, 0] * u + inv[0, 1] * v + inv[0, 2]
    sy = inv[1, 0] * u + inv[1, 1] * v + inv[1, 2]
    out = _kernels.bilinear_sample(arr, sx, sy, clamp=(border == "clamp"), fill=fill)
    return out[:, :, 0] if flat else out


def resize(img, out_w, out_h):
    """Bilinear resize aligning pixel areas (not corner centres)."""
    h, w = np.asarray(img).shape[:2]
    sx, sy = out_w / w, out_h / h
    m = np.array([[sx, 0.0, 0.5 * sx - 0.5], [0.0, sy, 0.5 * sy - 0.5]])
    return warp_bilinear(img, m, out_w, out_h)


def rectify_plate(img, quad, width=CANONICAL_W, height=CANONICAL_H):
    """Map the plate bounded by ``quad`` onto the canonical frontal rectangle."""
    m = fit_affine(quad, canonical_quad(width, height))
    return warp_bilinear(img, m, width, height)


def fit_residual(src, dst):
    """RMS residual of the least-squares affine fit (zero for a true affine pair)."""
    m = fit_affine(src, dst)
    return float(np.sqrt(np.mean((apply_affine(m, src) - as_quad(dst)) ** 2)))


def psnr(a, b, peak=1.0):
    mse = float(np.mean((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2))
    if mse == 0.0:
        return np.inf
    return 10.0 * np.log10(peak * peak / mse)
