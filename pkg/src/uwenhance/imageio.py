"""Image and manifest I/O.

Images are exchanged as (H,W,3) float64 arrays on [0,1]. Binary PPM (P6,
maxval 255) is parsed directly — it is trivially hand-writable in tests —
and PNG goes through Pillow. Saving quantizes with round-half-away-from-zero
to 0-255.

A dataset manifest is line-delimited text: `id raw_path [label_path]`,
whitespace separated (paths therefore must not contain whitespace). Label
presence must be uniform across the manifest.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ImageFormatError, ManifestError

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


def load_image(path) -> np.ndarray:
    """Load a PNG or binary-PPM file as an (H,W,3) unit-interval array."""
    path = Path(path)
    try:
        head = path.open("rb").read(8)
    except OSError as exc:
        raise ImageFormatError(f"cannot read image {path}: {exc}") from exc
    if head.startswith(b"P6"):
        return _load_ppm(path)
    if head.startswith(_PNG_SIGNATURE):
        return _load_png(path)
    raise ImageFormatError(f"unsupported image format in {path} "
                           "(expected PNG or binary PPM P6)")


def _load_png(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            arr = np.asarray(rgb, dtype=np.float64)
    except Exception as exc:
        raise ImageFormatError(f"cannot decode PNG {path}: {exc}") from exc
    return arr / 255.0


def _load_ppm(path: Path) -> np.ndarray:
    data = path.read_bytes()
    fields: list[bytes] = []
    pos = 0

    def skip_space(i: int) -> int:
        while i < len(data):
            if data[i:i + 1].isspace():
                i += 1
            elif data[i:i + 1] == b"#":
                while i < len(data) and data[i] not in b"\r\n":
                    i += 1
            else:
                break
        return i

    while len(fields) < 4:
        pos = skip_space(pos)
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError(f"truncated PPM header in {path}")
        fields.append(data[start:pos])
    if fields[0] != b"P6":
        raise ImageFormatError(f"{path} is not a binary PPM (P6)")
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError as exc:
        raise ImageFormatError(f"malformed PPM header in {path}") from exc
    if maxval != 255:
        raise ImageFormatError(f"{path}: PPM maxval {maxval} unsupported (must be 255)")
    pos += 1  # single whitespace after maxval
    expected = width * height * 3
    pixels = data[pos:pos + expected]
    if len(pixels) != expected:
        raise ImageFormatError(f"{path}: PPM payload truncated "
                               f"({len(pixels)} of {expected} bytes)")
    arr = np.frombuffer(pixels, dtype=np.uint8).reshape(height, width, 3)
    return arr.astype(np.float64) / 255.0


def save_image(img: np.ndarray, path) -> None:
    """Save to PPM (.ppm) or PNG (anything else), quantizing to 8 bits."""
    path = Path(path)
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ImageFormatError(f"expected an (H,W,3) image to save, got {img.shape}")
    levels = np.clip(np.floor(img * 255.0 + 0.5), 0, 255).astype(np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix.lower() == ".ppm":
        h, w = levels.shape[:2]
        with path.open("wb") as f:
            f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
            f.write(levels.tobytes())
    else:
        Image.fromarray(levels, mode="RGB").save(path, format="PNG")


def resize_bilinear(img: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Edge-aligned bilinear resize (corner pixels map to corner pixels)."""
    if target_h < 1 or target_w < 1:
        raise ValueError("target size must be >= 1")
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    if (h, w) == (target_h, target_w):
        return img.copy()
    ys = np.linspace(0.0, h - 1.0, target_h) if target_h > 1 else np.zeros(1)
    xs = np.linspace(0.0, w - 1.0, target_w) if target_w > 1 else np.zeros(1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bottom = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return top * (1 - wy) + bottom * wy


@dataclass
class ManifestEntry:
    id: str
    raw_path: str
    label_path: str | None = None


def load_manifest(path) -> list[ManifestEntry]:
    """Parse a manifest file; ids must be unique and label presence uniform."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    entries: list[ManifestEntry] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) not in (2, 3):
            raise ManifestError(
                f"{path}:{lineno}: expected `id raw_path [label_path]`, got {len(fields)} fields")
        entries.append(ManifestEntry(fields[0], fields[1],
                                     fields[2] if len(fields) == 3 else None))
    if not entries:
        raise ManifestError(f"manifest {path} contains no entries")
    ids = [e.id for e in entries]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise ManifestError(f"manifest {path} has duplicate ids: {dupes}")
    labeled = {e.label_path is not None for e in entries}
    if len(labeled) != 1:
        raise ManifestError(f"manifest {path} mixes labeled and unlabeled entries")
    return entries
