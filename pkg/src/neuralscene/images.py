"""PNG and PFM image files."""
from __future__ import annotations

import os

import numpy as np
from PIL import Image


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path, img: np.ndarray) -> None:
    """Write an H x W (gray) or H x W x 3 float image in [0, 1] as 8-bit PNG."""
    Image.fromarray(to_uint8(img)).save(path, format="PNG", optimize=False)


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr / 255.0


def write_pfm(path, img: np.ndarray) -> None:
    """Single-channel 32-bit float PFM (little endian, bottom-to-top rows)."""
    img = np.asarray(img, dtype="<f4")
    if img.ndim != 2:
        raise ValueError("PFM writer handles single-channel images only")
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(np.flipud(img).tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        kind = f.readline().strip()
        if kind not in (b"Pf", b"PF"):
            raise ValueError(f"{os.fspath(path)}: not a PFM file")
        w, h = (int(x) for x in f.readline().split())
        scale = float(f.readline())
        channels = 1 if kind == b"Pf" else 3
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(f.read(), dtype=dtype)
    if data.size != w * h * channels:
        raise ValueError(f"{os.fspath(path)}: truncated PFM data")
    shape = (h, w) if channels == 1 else (h, w, 3)
    return np.flipud(data.reshape(shape)).astype(np.float32)
