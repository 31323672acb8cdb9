"""Tab-separated corpus manifests.

One entry per line::

    image<TAB>label[<TAB>x1 y1 x2 y2 x3 y3 x4 y4][<TAB>group]

Corners are TL, TR, BR, BL in pixels. The label may be empty for unlabeled
images. Relative image paths resolve against the manifest's directory.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..platelang import validate
from ..rectify import quad_area


class ManifestError(ValueError):
    pass


@dataclass
class ManifestEntry:
    path: Path
    label: str = ""
    quad: np.ndarray = None
    group: str = None
    grammar_ok: bool = True
    line: int = 0


def _looks_numeric(field):
    try:
        [float(v) for v in field.split()]
    except ValueError:
        return False
    return bool(field.split())


def parse_line(line, lineno, base=None):
    parts = line.rstrip("\r\n").split("\t")
    if not parts[0]:
        raise ManifestError(f"line {lineno}: missing image path")
    path = Path(parts[0])
    if base is not None and not path.is_absolute():
        path = Path(base) / path
    label = parts[1].strip() if len(parts) > 1 else ""
    quad = group = None
    rest = parts[2:]
    if len(rest) > 2:
        raise ManifestError(f"line {lineno}: too many fields ({len(parts)})")
    if rest and (_looks_numeric(rest[0]) or len(rest) == 2):
        values = rest[0].split()
        if len(values) != 8:
            raise ManifestError(f"line {lineno}: expected 8 corner coordinates, got {len(values)}")
        try:
            quad = np.array([float(v) for v in values]).reshape(4, 2)
        except ValueError:
            raise ManifestError(f"line {lineno}: corner coordinates must be numbers") from None
        if not np.all(np.isfinite(quad)) or abs(quad_area(quad)) <= 1e-9:
            raise ManifestError(f"line {lineno}: corner quad is degenerate")
        rest = rest[1:]
    if rest:
        group = rest[0].strip() or None
    ok = not label or validate(label) is not None
    return ManifestEntry(path, label, quad, group, ok, lineno)


def load_manifest(path):
    """Parse a manifest; raises ManifestError naming every malformed line."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest {path} does not exist")
    entries, problems = [], []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        try:
            entries.append(parse_line(line, lineno, path.parent))
        except ManifestError as exc:
            problems.append(str(exc))
    if problems:
        raise ManifestError(f"{path}: " + "; ".join(problems))
    return entries


def format_entry(image, label="", quad=None, group=None):
    fields = [str(image), label or ""]
    if quad is not None:
        fields.append(" ".join(f"{v:.3f}" for v in np.asarray(quad).reshape(-1)))
    if group is not None:
        fields.append(str(group))
    return "\t".join(fields)


def write_manifest(path, rows):
    """``rows`` are (image, label, quad, group) tuples."""
    Path(path).write_text("".join(format_entry(*r) + "\n" for r in rows), encoding="utf-8")
