"""Portable float map (PFM) I/O.

"Pf" is single channel, "PF" is 3-channel. The scale line's sign encodes
byte order (negative = little-endian); scanlines are stored bottom-up and
converted to the package's top-down convention at this boundary. Round
trips are bit-exact for finite float32 payloads.
"""

from __future__ import annotations

import io
import os

import numpy as np

from .errors import FormatError
from .images import Image


def _read_token(f: io.BufferedReader) -> bytes:
    """Next whitespace-delimited header token."""
    tok = b""
    while True:
        ch = f.read(1)
        if ch == b"":
            raise FormatError("truncated PFM header")
        if ch.isspace():
            if tok:
                return tok
            continue
        tok += ch


def read_pfm(path) -> Image:
    with open(path, "rb") as f:
        magic = _read_token(f)
        if magic == b"Pf":
            channels = 1
        elif magic == b"PF":
            channels = 3
        else:
            raise FormatError(f"not a PFM file (magic {magic!r})")
        try:
            width = int(_read_token(f))
            height = int(_read_token(f))
            scale = float(_read_token(f))
        except ValueError as e:
            raise FormatError(f"malformed PFM header: {e}") from e
        if width <= 0 or height <= 0:
            raise FormatError(f"invalid PFM dimensions {width}x{height}")
        if scale == 0.0:
            raise FormatError("PFM scale must be nonzero")
        count = width * height * channels
        payload = f.read(4 * count)
        if len(payload) != 4 * count:
            raise FormatError(
                f"truncated PFM payload: expected {4 * count} bytes, got {len(payload)}"
            )
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(payload, dtype=dtype).astype(np.float32)
    data = data.reshape(height, width, channels)
    data = np.flipud(data)  # file rows are bottom-up
    if not np.all(np.isfinite(data)):
        raise FormatError("PFM payload contains NaN or Inf")
    return Image.from_array(data)


def write_pfm(image: Image, path) -> None:
    if image.channels == 1:
        magic = b"Pf"
    elif image.channels == 3:
        magic = b"PF"
    else:
        raise FormatError(
            f"PFM supports 1 or 3 channels, got {image.channels}; "
            "use planar stacking for other channel counts"
        )
    rows = np.flipud(image.data).astype("<f4")
    header = b"%s\n%d %d\n-1.0\n" % (magic, image.width, image.height)
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(rows).tobytes())
    os.replace(tmp, path)


def image_to_planar(image: Image) -> Image:
    """Stack C channels vertically into a single-channel image of height C*H.

    This is the on-disk layout for frames of sensors whose channel count PFM
    cannot represent directly (C = 2, 4, 8).
    """
    planes = [image.data[:, :, c] for c in range(image.channels)]
    return Image.from_array(np.concatenate(planes, axis=0))


def planar_to_image(planar: Image, channels: int) -> Image:
    """Inverse of :func:`image_to_planar`."""
    if planar.channels != 1:
        raise FormatError("planar frame files must be single channel")
    if planar.height % channels != 0:
        raise FormatError(
            f"planar height {planar.height} is not divisible by C={channels}"
        )
    h = planar.height // channels
    planes = [planar.data[c * h : (c + 1) * h, :, 0] for c in range(channels)]
    return Image.from_array(np.stack(planes, axis=-1))


def write_frame(image: Image, path) -> None:
    """Write an image of any channel count, planar-stacking when C not in {1, 3}."""
    if image.channels in (1, 3):
        write_pfm(image, path)
    else:
        write_pfm(image_to_planar(image), path)


def read_frame(path, channels: int) -> Image:
    """Read a frame written by :func:`write_frame` with a known channel count."""
    img = read_pfm(path)
    if channels in (1, 3):
        if img.channels != channels:
            raise FormatError(
                f"frame {path} has {img.channels} channels, expected {channels}"
            )
        return img
    return planar_to_image(img, channels)
