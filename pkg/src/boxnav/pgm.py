"""Binary PGM (P5) frame dumps."""
from pathlib import Path

import numpy as np
from PIL import Image


def write_pgm(path, img: np.ndarray) -> Path:
    """Write an 8-bit grayscale image (or a boolean mask as 0/255) as P5."""
    a = np.asarray(img)
    if a.dtype == bool:
        a = a.astype(np.uint8) * 255
    if a.ndim != 2 or a.dtype != np.uint8:
        raise ValueError("expected a 2-D uint8 image or boolean mask")
    path = Path(path)
    Image.fromarray(a, mode="L").save(path, format="PPM")
    return path


def read_pgm(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.format != "PPM" or im.mode != "L":
            raise ValueError(f"{path} is not an 8-bit PGM")
        return np.array(im, dtype=np.uint8)
