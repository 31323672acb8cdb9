"""Taiwan plate grammar, synthetic plate rendering and training-image augmentation."""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .imageio import read_netpbm, write_netpbm
from .rectify import resize, warp_bilinear

LETTERS = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
DIGITS = "0123456789"

# The legal character-class layouts, row by row as printed ('A' letter, 'N' digit).
TEMPLATES = (
    # 4 characters
    "AA-AN", "AA-NN", "AN-NN", "NA-NN", "NN-AA", "NN-AN", "NN-NA",
    # 5 characters
    "AA-ANN", "AA-NNN", "AN-NNN", "NA-NNN", "NNN-AA", "NNN-AN", "NNN-NA",
    # 6 characters
    "AA-NNNN", "AN-NNNN", "NA-NNNN", "AAA-NNN", "AAN-NNN", "ANA-NNN",
    "ANN-NNN", "NAA-NNN", "NNN-AAA", "NNNN-AA", "NNNN-AN",
    # 7 characters
    "AAA-NNNN",
)  # fmt: skip

_TEMPLATE_SET = frozenset(TEMPLATES)


class MissingGlyphError(KeyError):
    pass


def templates_with(n_chars):
    """Templates whose plates carry ``n_chars`` characters (dash excluded)."""
    return tuple(t for t in TEMPLATES if len(t) - t.count("-") == n_chars)


def char_class(ch):
    if "A" <= ch <= "Z":
        return "A"
    if "0" <= ch <= "9":
        return "N"
    if ch == "-":
        return "-"
    return "?"


def validate(text):
    """Return the matching template for ``text``, or None when no template fits."""
    shape = "".join(char_class(ch) for ch in text)
    return shape if shape in _TEMPLATE_SET else None


@dataclass(frozen=True)
class PlateString:
    text: str
    pattern: str

    def __post_init__(self):
        if validate(self.text) != self.pattern:
            raise ValueError(f"{self.text!r} does not match pattern {self.pattern!r}")

    def __str__(self):
        return self.text


def fabricate_string(rng, templates=TEMPLATES, letters=LETTERS, digits=DIGITS, rare_letters="IO", rare_weight=5.0):
    """Draw a template uniformly, then fill its slots.

    Letters in ``rare_letters`` are drawn ``rare_weight`` times as often as
    the other letters.
    """
    pattern = templates[int(rng.integers(len(templates)))]
    lw = np.array([rare_weight if ch in rare_letters else 1.0 for ch in letters])
    lw /= lw.sum()
    out = []
    for slot in pattern:
        if slot == "A":
            out.append(letters[int(rng.choice(len(letters), p=lw))])
        elif slot == "N":
            out.append(digits[int(rng.integers(len(digits)))])
        else:
            out.append("-")
    return PlateString("".join(out), pattern)


# ---------------------------------------------------------------------------
# Glyphs
# ---------------------------------------------------------------------------

_FONT_5X7 = {
    "A": "01110 10001 10001 11111 10001 10001 10001",
    "B": "11110 10001 10001 11110 10001 10001 11110",
    "C": "01110 10001 10000 10000 10000 10001 01110",
    "D": "11110 10001 10001 10001 10001 10001 11110",
    "E": "11111 10000 10000 11110 10000 10000 11111",
    "F": "11111 10000 10000 11110 10000 10000 10000",
    "G": "01110 10001 10000 10111 10001 10001 01111",
    "H": "10001 10001 10001 11111 10001 10001 10001",
    "I": "01110 00100 00100 00100 00100 00100 01110",
    "J": "00111 00010 00010 00010 00010 10010 01100",
    "K": "10001 10010 10100 11000 10100 10010 10001",
    "L": "10000 10000 10000 10000 10000 10000 11111",
    "M": "10001 11011 10101 10101 10001 10001 10001",
    "N": "10001 10001 11001 10101 10011 10001 10001",
    "O": "01110 10001 10001 10001 10001 10001 01110",
    "P": "11110 10001 10001 11110 10000 10000 10000",
    "Q": "01110 10001 10001 10001 10101 10010 01101",
    "R": "11110 10001 10001 11110 10100 10010 10001",
    "S": "01111 10000 10000 01110 00001 00001 11110",
    "T": "11111 00100 00100 00100 00100 00100 00100",
    "U": "10001 10001 10001 10001 10001 10001 01110",
    "V": "10001 10001 10001 10001 10001 01010 00100",
    "W": "10001 10001 10001 10101 10101 10101 01010",
    "X": "10001 10001 01010 00100 01010 10001 10001",
    "Y": "10001 10001 10001 01010 00100 00100 00100",
    "Z": "11111 00001 00010 00100 01000 10000 11111",
    "0": "01110 10001 10011 10101 11001 10001 01110",
    "1": "00100 01100 00100 00100 00100 00100 01110",
    "2": "01110 10001 00001 00010 00100 01000 11111",
    "3": "11111 00010 00100 00010 00001 10001 01110",
    "4": "00010 00110 01010 10010 11111 00010 00010",
    "5": "11111 10000 11110 00001 00001 10001 01110",
    "6": "00110 01000 10000 11110 10001 10001 01110",
    "7": "11111 00001 00010 00100 01000 01000 01000",
    "8": "01110 10001 10001 01110 10001 10001 01110",
    "9": "01110 10001 10001 01111 00001 00010 01100",
    "-": "00000 00000 00000 11111 00000 00000 00000",
}


@dataclass
class GlyphSet:
    """Per-symbol ink masks in [0, 1] (1 = ink), any size."""

    glyphs: dict = field(default_factory=dict)

    @classmethod
    def builtin(cls):
        g = {}
        for sym, rows in _FONT_5X7.items():
            g[sym] = np.array([[float(c) for c in r] for r in rows.split()])
        return cls(g)

    @classmethod
    def load(cls, directory):
        """Read ``<SYMBOL>.pgm`` files; bright pixels are ink."""
        g = {}
        for path in sorted(Path(directory).glob("*.pgm")):
            g[path.stem] = np.asarray(read_netpbm(path), dtype=np.float64)
        if not g:
            raise FileNotFoundError(f"no <SYMBOL>.pgm glyphs in {directory}")
        return cls(g)

    def save(self, directory):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for sym, bmp in self.glyphs.items():
            write_netpbm(d / f"{sym}.pgm", bmp)

    def __contains__(self, sym):
        return sym in self.glyphs

    def __getitem__(self, sym):
        try:
            return self.glyphs[sym]
        except KeyError:
            raise MissingGlyphError(f"no glyph for symbol {sym!r}") from None


@dataclass(frozen=True)
class PlateStyle:
    background: tuple
    foreground: tuple


# Background / character colour pairs seen on Taiwan plates.
STYLES = (
    PlateStyle((0.95, 0.95, 0.95), (0.05, 0.05, 0.05)),  # white / black
    PlateStyle((0.95, 0.95, 0.95), (0.75, 0.08, 0.08)),  # white / red
    PlateStyle((0.10, 0.45, 0.20), (0.95, 0.95, 0.95)),  # green / white
    PlateStyle((0.95, 0.80, 0.10), (0.05, 0.05, 0.05)),  # yellow / black
    PlateStyle((0.75, 0.10, 0.10), (0.95, 0.95, 0.95)),  # red / white
)


@dataclass(frozen=True)
class Placement:
    symbol: str
    x: float
    y: float
    w: float
    h: float


def plate_layout(text, width=128, height=32, jitter=None):
    """Glyph boxes in output pixels, one per character (dash included).

    ``jitter`` is an optional array of per-glyph (dx, dy) offsets in pixels.
    """
    n = len(text)
    if n == 0:
        return []
    gh = 0.68 * height
    avail = 0.90 * width
    gap_ratio = 0.5  # keeps a blank output frame (4 px) between neighbouring glyphs
    gw = min(gh * 0.62, avail / (n + (n - 1) * gap_ratio))
    gap = gw * gap_ratio
    total = n * gw + (n - 1) * gap
    x0 = 0.5 * (width - total)
    y0 = 0.5 * (height - gh)
    out = []
    for i, ch in enumerate(text):
        dx, dy = (0.0, 0.0) if jitter is None else jitter[i]
        out.append(Placement(ch, x0 + i * (gw + gap) + dx, y0 + dy, gw, gh))
    return out


def _paste_mask(canvas_ink, bmp, x, y, w, h):
    hh, ww = canvas_ink.shape
    r0, r1 = int(round(y)), int(round(y + h))
    c0, c1 = int(round(x)), int(round(x + w))
    if r1 <= r0 or c1 <= c0:
        return
    bh, bw = bmp.shape
    rows = np.minimum((np.arange(r1 - r0) * bh) // (r1 - r0), bh - 1)
    cols = np.minimum((np.arange(c1 - c0) * bw) // (c1 - c0), bw - 1)
    patch = bmp[np.ix_(rows, cols)]
    rr0, cc0 = max(r0, 0), max(c0, 0)
    rr1, cc1 = min(r1, hh), min(c1, ww)
    if rr1 <= rr0 or cc1 <= cc0:
        return
    sub = patch[rr0 - r0 : rr1 - r0, cc0 - c0 : cc1 - c0]
    canvas_ink[rr0:rr1, cc0:cc1] = np.maximum(canvas_ink[rr0:rr1, cc0:cc1], sub)


def render_plate(plate, glyphs=None, style=None, width=128, height=32, rng=None, supersample=4, border=True):
    """Composite a plate image (H, W, 3) in [0, 1].

    With ``rng`` the glyph positions get a small random jitter; the result is
    a pure function of the inputs and the generator state.
    """
    text = str(plate)
    glyphs = glyphs or GlyphSet.builtin()
    for ch in text:
        if ch not in glyphs:
            raise MissingGlyphError(f"no glyph for symbol {ch!r}")
    style = style or STYLES[0]
    s = supersample
    jitter = None
    if rng is not None:
        jitter = rng.uniform(-1.0, 1.0, (len(text), 2)) * np.array([0.8, 1.2])
    ink = np.zeros((height * s, width * s))
    for p in plate_layout(text, width, height, jitter):
        _paste_mask(ink, glyphs[p.symbol], p.x * s, p.y * s, p.w * s, p.h * s)
    if border:
        t = max(s // 2, 1)
        ink[:t, :] = ink[-t:, :] = 1.0
        ink[:, :t] = ink[:, -t:] = 1.0
    ink = ink.reshape(height, s, width, s).mean(axis=(1, 3))[:, :, None]
    bg = np.asarray(style.background)
    fg = np.asarray(style.foreground)
    return bg * (1.0 - ink) + fg * ink


# ---------------------------------------------------------------------------
# Compositing from character crops
# ---------------------------------------------------------------------------


def histogram_similarity(a, b, bins=16):
    """Correlation of normalized gray-level histograms, clipped to [0, 1]."""
    ha = np.histogram(np.clip(a, 0, 1), bins=bins, range=(0.0, 1.0))[0].astype(np.float64)
    hb = np.histogram(np.clip(b, 0, 1), bins=bins, range=(0.0, 1.0))[0].astype(np.float64)
    ha /= ha.sum()
    hb /= hb.sum()
    da, db = ha - ha.mean(), hb - hb.mean()
    den = np.sqrt((da * da).sum() * (db * db).sum())
    if den == 0.0:
        return 1.0 if np.allclose(ha, hb) else 0.0
    return float(max(0.0, (da * db).sum() / den))


def composite_from_crops(plate, crops, threshold=0.5, width=128, height=32, rng=None):
    """Assemble a plate from per-symbol crops, gating each pick by similarity.

    For every character the candidates (shuffled when ``rng`` is given) are
    tried in turn; the first whose histogram similarity to the partial
    composite reaches ``threshold`` is kept. Returns None when some position
    has no acceptable candidate.
    """
    text = str(plate)
    chosen = []
    for ch in text:
        cands = list(crops.get(ch, ()))
        if not cands:
            raise MissingGlyphError(f"no crops for symbol {ch!r}")
        if rng is not None:
            cands = [cands[i] for i in rng.permutation(len(cands))]
        pick = None
        if not chosen:
            pick = cands[0]
        else:
            partial = np.concatenate([c.ravel() for c in chosen])
            for cand in cands:
                if histogram_similarity(cand, partial) >= threshold:
                    pick = cand
                    break
        if pick is None:
            return None
        chosen.append(np.asarray(pick, dtype=np.float64))
    strips = []
    for c in chosen:
        g = c if c.ndim == 2 else c.mean(axis=2)
        w = max(int(round(g.shape[1] * height / g.shape[0])), 1)
        strips.append(resize(g, w, height))
    return resize(np.hstack(strips), width, height)


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AugmentConfig:
    blur_sigma: tuple = (0.0, 1.5)
    noise: tuple = (0.0, 0.05)
    brightness: tuple = (-0.2, 0.2)
    contrast: tuple = (-0.2, 0.2)
    rotation_deg: tuple = (-7.0, 7.0)
    shear_deg: tuple = (-5.0, 5.0)
    seed: int = 0

    def __post_init__(self):
        for name in ("blur_sigma", "noise", "brightness", "contrast", "rotation_deg", "shear_deg"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: lower bound {lo} exceeds upper bound {hi}")
        if self.blur_sigma[0] < 0 or self.noise[0] < 0:
            raise ValueError("blur and noise ranges must be nonnegative")
        if self.brightness[0] <= -1 or self.contrast[0] <= -1:
            raise ValueError("brightness/contrast factors must stay above -100%")

    @classmethod
    def identity(cls, seed=0):
        z = (0.0, 0.0)
        return cls(z, z, z, z, z, z, seed)


def _geometric(img, rot_deg, shear_deg):
    h, w = img.shape[:2]
    cx, cy = 0.5 * (w - 1), 0.5 * (h - 1)
    a, s = np.deg2rad(rot_deg), np.tan(np.deg2rad(shear_deg))
    lin = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]]) @ np.array([[1.0, s], [0.0, 1.0]])
    t = np.array([cx, cy]) - lin @ np.array([cx, cy])
    return warp_bilinear(img, np.column_stack([lin, t]), w, h)


def augment(img, cfg=None, rng=None):
    """Random rotation/shear, blur, contrast, brightness and noise; output clipped to [0, 1].

    Every draw is taken from ``rng`` (or a generator seeded from
    ``cfg.seed``) in a fixed order; stages whose draw is neutral are skipped so
    an all-zero configuration returns the input unchanged.
    """
    cfg = cfg or AugmentConfig()
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    out = np.asarray(img, dtype=np.float64)
    rot = rng.uniform(*cfg.rotation_deg)
    shear = rng.uniform(*cfg.shear_deg)
    sigma = rng.uniform(*cfg.blur_sigma)
    contrast = rng.uniform(*cfg.contrast)
    bright = rng.uniform(*cfg.brightness)
    amp = rng.uniform(*cfg.noise)
    noise = rng.standard_normal(out.shape)

    changed = False
    if rot != 0.0 or shear != 0.0:
        out, changed = _geometric(out, rot, shear), True
    if sigma > 0.0:
        spatial = (sigma, sigma) + (0.0,) * (out.ndim - 2)
        out, changed = gaussian_filter(out, spatial, mode="nearest"), True
    if contrast != 0.0:
        m = out.mean()
        out, changed = (out - m) * (1.0 + contrast) + m, True
    if bright != 0.0:
        out, changed = out * (1.0 + bright), True
    if amp > 0.0:
        out, changed = out + amp * noise, True
    return np.clip(out, 0.0, 1.0) if changed else out.copy()


# ---------------------------------------------------------------------------
# Network input
# ---------------------------------------------------------------------------


def to_gray(img):
    arr = np.asarray(img)
    if arr.dtype == np.uint8:
        arr = arr / 255.0
    arr = arr.astype(np.float64)
    if arr.ndim == 3:
        if arr.shape[2] == 1:
            arr = arr[:, :, 0]
        else:
            arr = arr[:, :, :3] @ np.array([0.299, 0.587, 0.114])
    return arr


def sobel_magnitude(gray):
    p = np.pad(gray, 1, mode="edge")
    gx = (p[:-2, 2:] + 2 * p[1:-1, 2:] + p[2:, 2:]) - (p[:-2, :-2] + 2 * p[1:-1, :-2] + p[2:, :-2])
    gy = (p[2:, :-2] + 2 * p[2:, 1:-1] + p[2:, 2:]) - (p[:-2, :-2] + 2 * p[:-2, 1:-1] + p[:-2, 2:])
    return np.hypot(gx, gy)


def to_two_channel(img, width=128, height=32):
    """(W, H, 2) network input: gray level and max-normalized Sobel magnitude."""
    gray = to_gray(img)
    if gray.size == 0:
        raise ValueError("empty image")
    if gray.shape != (height, width):
        gray = resize(gray, width, height)
    gray = np.clip(gray, 0.0, 1.0)
    mag = sobel_magnitude(gray)
    peak = mag.max()
    mag = mag / peak if peak > 0 else np.zeros_like(mag)
    return np.stack([gray, mag], axis=-1).transpose(1, 0, 2).copy()
