"""8-bit grayscale image files: binary PGM (native) and PNG (via Pillow)."""

from __future__ import annotations

import os

import numpy as np

from .exceptions import ImageFormatError

__all__ = ["read_gray", "write_gray", "read_pgm", "write_pgm", "IMAGE_EXTENSIONS"]

IMAGE_EXTENSIONS = (".pgm", ".png")


def _pgm_tokens(data):
    """Return the three header integers and the payload offset of a P5 file."""
    if not data.startswith(b"P5"):
        raise ImageFormatError("not a binary PGM (missing P5 magic)")
    pos, values = 2, []
    while len(values) < 3:
        # whitespace and comments may separate header fields
        while pos < len(data) and (data[pos : pos + 1].isspace() or data[pos : pos + 1] == b"#"):
            if data[pos : pos + 1] == b"#":
                nl = data.find(b"\n", pos)
                pos = len(data) if nl < 0 else nl + 1
            else:
                pos += 1
        start = pos
        while pos < len(data) and data[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise ImageFormatError("malformed PGM header")
        values.append(int(data[start:pos]))
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise ImageFormatError("malformed PGM header")
    return values, pos + 1


def read_pgm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    (width, height, maxval), offset = _pgm_tokens(data)
    if maxval != 255:
        raise ImageFormatError(f"{path}: only maxval 255 is supported, got {maxval}")
    payload = data[offset : offset + width * height]
    if len(payload) != width * height:
        raise ImageFormatError(f"{path}: truncated PGM payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width).copy()


def write_pgm(path, pixels):
    pixels = np.asarray(pixels, dtype=np.uint8)
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(pixels).tobytes())


def _read_png(path):
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            im.load()
            if im.mode not in ("L", "1", "P", "RGB", "RGBA", "LA", "I;16", "I"):
                raise ImageFormatError(f"{path}: unsupported PNG mode {im.mode}")
            return np.asarray(im.convert("L"), dtype=np.uint8).copy()
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ImageFormatError(f"{path}: cannot decode PNG ({exc})") from exc


def read_gray(path):
    """Read an 8-bit grayscale image as a ``(H, W)`` uint8 array."""
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".pgm":
        return read_pgm(path)
    if ext == ".png":
        return _read_png(path)
    raise ImageFormatError(f"{path}: unsupported extension {ext!r}")


def write_gray(path, pixels):
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".pgm":
        write_pgm(path, pixels)
    elif ext == ".png":
        from PIL import Image

        Image.fromarray(np.asarray(pixels, dtype=np.uint8)).save(path)
    else:
        raise ImageFormatError(f"{path}: unsupported extension {ext!r}")
