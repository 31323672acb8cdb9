"""Synthetic plate corpora: frontal renders and affinely warped crops with corner labels."""

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from ..platelang import (
    DIGITS,
    LETTERS,
    STYLES,
    TEMPLATES,
    AugmentConfig,
    GlyphSet,
    augment,
    fabricate_string,
    render_plate,
)
from ..rectify import apply_affine, canonical_quad, warp_bilinear

DESK_LETTERS = "ABCDE"
DESK_DIGITS = "012345"
DESK_SYMBOLS = DESK_LETTERS + DESK_DIGITS + "-"


@dataclass
class Sample:
    image: np.ndarray
    label: str
    quad: np.ndarray = None
    group: str = None


def _child(seed, *keys):
    return np.random.default_rng([seed, *keys])


def synth_plates(
    n,
    seed=0,
    templates=TEMPLATES,
    letters=LETTERS,
    digits=DIGITS,
    augment_cfg=None,
    glyphs=None,
    rare_weight=5.0,
):
    """Rendered frontal plates, optionally augmented. Each sample has its own derived seed."""
    glyphs = glyphs or GlyphSet.builtin()
    out = []
    for i in range(n):
        rng = _child(seed, i)
        plate = fabricate_string(rng, templates, letters, digits, rare_weight=rare_weight)
        style = STYLES[int(rng.integers(len(STYLES)))]
        img = render_plate(plate, glyphs, style, rng=rng)
        if augment_cfg is not None:
            img = augment(img, augment_cfg, rng)
        out.append(Sample(img, plate.text))
    return out


def random_plate_affine(rng, width=128, height=32, scale=(0.6, 0.85), rotation_deg=(-12, 12), shear_deg=(-20, 20)):
    """Affine map placing a width x height plate, shrunk and tilted, inside the same-size frame."""
    for _ in range(100):
        s = rng.uniform(*scale)
        sy = s * rng.uniform(0.9, 1.1)
        a = np.deg2rad(rng.uniform(*rotation_deg))
        sh = np.tan(np.deg2rad(rng.uniform(*shear_deg)))
        lin = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]]) @ np.array([[s, sh * sy], [0.0, sy]])
        src = canonical_quad(width, height)
        moved = src @ lin.T
        lo, hi = moved.min(axis=0), moved.max(axis=0)
        room = np.array([width - 1, height - 1]) - (hi - lo)
        if np.any(room < 0):
            continue
        t = -lo + rng.uniform(0, 1, 2) * room
        return np.column_stack([lin, t])
    raise RuntimeError("could not place plate inside frame")


def _background(rng, width, height):
    base = rng.uniform(0.2, 0.8)
    tex = gaussian_filter(rng.normal(0.0, 0.25, (height, width)), 2.0)
    return np.clip(base + tex, 0.0, 1.0)[:, :, None] * np.ones(3)


def synth_warped(n, seed=0, templates=TEMPLATES, letters=LETTERS, digits=DIGITS, glyphs=None, augment_cfg=None, **affine_kw):
    """Plates warped by a random affine map onto a textured background.

    ``quad`` holds the plate's TL, TR, BR, BL corners in crop pixels.
    """
    glyphs = glyphs or GlyphSet.builtin()
    out = []
    for i in range(n):
        rng = _child(seed, i)
        plate = fabricate_string(rng, templates, letters, digits)
        style = STYLES[int(rng.integers(len(STYLES)))]
        face = render_plate(plate, glyphs, style, rng=rng)
        h, w = face.shape[:2]
        m = random_plate_affine(rng, w, h, **affine_kw)
        bg = _background(rng, w, h)
        warped = warp_bilinear(face, m, w, h, border="constant", fill=0.0)
        mask = warp_bilinear(np.ones((h, w)), m, w, h, border="constant", fill=0.0)[:, :, None]
        img = warped + (1.0 - mask) * bg
        if augment_cfg is not None:
            img = augment(img, augment_cfg, rng)
        out.append(Sample(img, plate.text, apply_affine(m, canonical_quad(w, h))))
    return out


def desk_config():
    """Reduced setting used for CPU-scale end-to-end checks: 5-character plates, 12 symbols."""
    from ..platelang import templates_with

    return dict(templates=templates_with(5), letters=DESK_LETTERS, digits=DESK_DIGITS)


DEFAULT_AUGMENT = AugmentConfig()
