"""PNG (8-bit) and PFM (float) image I/O."""

from __future__ import annotations

import io

import numpy as np
from PIL import Image

__all__ = ["to_uint8", "write_png", "png_bytes", "read_png", "read_mask",
           "write_pfm", "read_pfm"]


def to_uint8(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return (np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_png(path, img: np.ndarray) -> None:
    Image.fromarray(to_uint8(img)).save(path, format="PNG")


def png_bytes(img: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(to_uint8(img)).save(buf, format="PNG")
    return buf.getvalue()


def read_png(path) -> np.ndarray:
    """Float image in [0, 1]; RGB(A) collapses to RGB, grayscale to (H, W)."""
    with Image.open(path) as im:
        if im.mode in ("RGBA", "P"):
            im = im.convert("RGB")
        arr = np.asarray(im)
    return arr.astype(np.float64) / 255.0


def read_mask(path) -> np.ndarray:
    """Boolean foreground mask from an 8-bit PNG (255 = foreground)."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return arr >= 128


def write_pfm(path, img: np.ndarray) -> None:
    """Color or grayscale PFM, little-endian, rows bottom-to-top."""
    img = np.asarray(img, dtype=np.float32)
    if img.ndim == 2:
        header = b"Pf\n"
        h, w = img.shape
    elif img.ndim == 3 and img.shape[2] == 3:
        header = b"PF\n"
        h, w = img.shape[:2]
    else:
        raise ValueError(f"unsupported PFM shape {img.shape}")
    with open(path, "wb") as f:
        f.write(header)
        f.write(f"{w} {h}\n".encode())
        f.write(b"-1.0\n")  # negative scale marks little-endian
        f.write(np.flipud(img).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        kind = f.readline().strip()
        if kind not in (b"PF", b"Pf"):
            raise ValueError("not a PFM file")
        w, h = (int(v) for v in f.readline().split())
        scale = float(f.readline())
        count = w * h * (3 if kind == b"PF" else 1)
        data = np.frombuffer(f.read(count * 4), dtype="<f4" if scale < 0 else ">f4")
    shape = (h, w, 3) if kind == b"PF" else (h, w)
    return np.flipud(data.reshape(shape)).astype(np.float64)
