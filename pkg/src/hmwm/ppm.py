"""Binary PPM (P6) frame export."""

from __future__ import annotations

import numpy as np

from .errors import DataFormatError


def write_ppm(frame: np.ndarray, path):
    """Write an (H, W, 3) float frame in [0, 1] as binary PPM, max 255."""
    f = np.asarray(frame)
    if f.ndim != 3 or f.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) frame, got shape {f.shape}")
    h, w = f.shape[:2]
    data = np.round(np.clip(f, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as out:
        out.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        out.write(data.tobytes())


def read_ppm(path) -> np.ndarray:
    """Read a binary PPM back to (H, W, 3) float64 in [0, 1]."""
    with open(path, "rb") as inp:
        raw = inp.read()
    fields = []
    pos = 0
    # header: magic, width, height, maxval; comments allowed between fields
    while len(fields) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    if fields[0] != b"P6":
        raise DataFormatError(f"not a binary PPM: magic {fields[0]!r}")
    try:
        w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    except ValueError as e:
        raise DataFormatError(f"bad PPM header field: {e}") from e
    if maxval != 255:
        raise DataFormatError(f"unsupported PPM maxval {maxval}")
    pos += 1  # single whitespace after maxval
    need = w * h * 3
    body = raw[pos:pos + need]
    if len(body) != need:
        raise DataFormatError(
            f"PPM payload truncated: need {need} bytes, have {len(body)}"
        )
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3) / 255.0
