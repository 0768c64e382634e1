"""Document image loading and adaptive binarization.

Images are plain numpy arrays: grayscale pages are 2-D ``uint8`` arrays
with intensities in [0, 255], binary pages are 2-D ``uint8`` arrays with
values in {0, 1} where 1 marks foreground (ink). Arrays are indexed
``[row, column]``, i.e. shape is (height, width).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

# ITU-R 601-2 luma weights for RGB -> gray conversion.
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


def _require_2d_nonempty(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 2 or img.size == 0:
        raise ValueError("empty input")
    return img


def to_grayscale(rgb: np.ndarray) -> np.ndarray:
    """Convert an (H, W, 3) RGB image to uint8 gray via fixed luma weights."""
    rgb = np.asarray(rgb)
    if rgb.ndim == 2:
        return rgb.astype(np.uint8)
    if rgb.ndim != 3 or rgb.shape[2] < 3:
        raise ValueError(f"expected (H, W, 3) color image, got shape {rgb.shape}")
    w = np.asarray(LUMA_WEIGHTS, dtype=np.float64)
    gray = rgb[..., :3].astype(np.float64) @ w
    return np.clip(np.round(gray), 0, 255).astype(np.uint8)


def sauvola_binarize(
    img: np.ndarray,
    window: int = 51,
    k: float = 0.2,
    r: float = 128.0,
) -> np.ndarray:
    """Adaptive thresholding of a grayscale page.

    A pixel is foreground when its intensity falls below the local
    threshold ``t = m * (1 + k * (s / r - 1))`` where ``m`` and ``s``
    are the mean and standard deviation over the ``window x window``
    neighborhood centered on the pixel. Windows are clamped at the
    image borders so statistics use only real pixels.

    Local sums are taken from exact int64 integral images, so the
    result is bit-identical to a direct per-pixel evaluation.

    Parameters
    ----------
    img : uint8 array, shape (H, W)
    window : odd window side length, >= 3
    k : sensitivity, 0 < k < 1
    r : dynamic range of the standard deviation, > 0

    Returns
    -------
    uint8 array of {0, 1}, same shape; 1 = foreground ink.
    """
    img = _require_2d_nonempty(img)
    if window % 2 == 0:
        raise ValueError("window must be odd")
    if window < 3:
        raise ValueError("window must be >= 3")
    if not 0.0 < k < 1.0:
        raise ValueError("k must be in (0, 1)")
    if r <= 0:
        raise ValueError("r must be positive")

    t = sauvola_threshold(img, window, k, r)
    return (img.astype(np.float64) < t).astype(np.uint8)


def sauvola_threshold(img: np.ndarray, window: int, k: float, r: float) -> np.ndarray:
    """Per-pixel Sauvola threshold map (float64), borders clamped."""
    img = _require_2d_nonempty(img)
    h, w = img.shape
    half = window // 2

    px = img.astype(np.int64)
    ones = np.zeros((h + 1, w + 1), dtype=np.int64)
    sq = np.zeros((h + 1, w + 1), dtype=np.int64)
    ones[1:, 1:] = px.cumsum(axis=0).cumsum(axis=1)
    sq[1:, 1:] = (px * px).cumsum(axis=0).cumsum(axis=1)

    y0 = np.clip(np.arange(h) - half, 0, None)
    y1 = np.clip(np.arange(h) + half, None, h - 1) + 1
    x0 = np.clip(np.arange(w) - half, 0, None)
    x1 = np.clip(np.arange(w) + half, None, w - 1) + 1

    def box(ii: np.ndarray) -> np.ndarray:
        return (
            ii[np.ix_(y1, x1)]
            - ii[np.ix_(y0, x1)]
            - ii[np.ix_(y1, x0)]
            + ii[np.ix_(y0, x0)]
        )

    n = (y1 - y0)[:, None] * (x1 - x0)[None, :]
    s1 = box(ones)
    s2 = box(sq)

    m = s1 / n
    var = s2 / n - m * m
    s = np.sqrt(np.maximum(var, 0.0))
    return m * (1.0 + k * (s / r - 1.0))


def foreground_fraction(mask: np.ndarray) -> float:
    """Fraction of pixels flagged as foreground, in [0, 1]."""
    mask = _require_2d_nonempty(mask)
    return float(np.count_nonzero(mask)) / mask.size


def invert(mask: np.ndarray) -> np.ndarray:
    """Swap foreground and background of a {0, 1} mask."""
    mask = _require_2d_nonempty(mask)
    return (mask == 0).astype(np.uint8)


def as_binary(img: np.ndarray, inverted: bool = False) -> np.ndarray:
    """Interpret an already two-level image as a mask: nonzero -> foreground."""
    img = _require_2d_nonempty(img)
    mask = (img != 0).astype(np.uint8)
    return invert(mask) if inverted else mask


# ---------------------------------------------------------------------------
# Image file I/O: PNG (via Pillow), PGM/PBM (handled here so the binary
# encodings stay deterministic and byte-reproducible).
# ---------------------------------------------------------------------------


def load_gray(path: str | Path) -> np.ndarray:
    """Load a PNG, PGM or PBM file as a uint8 grayscale array.

    PBM ink pixels (value 1, black) come back as intensity 0.
    """
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix in (".pgm", ".pbm", ".pnm"):
        kind, arr = _read_pnm(path)
        if kind == "pbm":
            return np.where(arr != 0, 0, 255).astype(np.uint8)
        return arr
    from PIL import Image

    with Image.open(path) as im:
        if im.mode in ("L", "I;16", "I"):
            arr = np.asarray(im.convert("L"))
            return arr.astype(np.uint8)
        return to_grayscale(np.asarray(im.convert("RGB")))


def load_mask(path: str | Path, inverted: bool = False) -> np.ndarray:
    """Load an image file as a {0, 1} foreground mask.

    PBM files map black (1) to foreground. Other formats map any
    nonzero pixel to foreground; pass ``inverted=True`` for material
    where ink is the dark (zero) level.
    """
    path = Path(path)
    if path.suffix.lower() == ".pbm":
        _, arr = _read_pnm(path)
        mask = (arr != 0).astype(np.uint8)
        return invert(mask) if inverted else mask
    return as_binary(load_gray(path), inverted=inverted)


def save_pbm(path: str | Path, mask: np.ndarray) -> bool:
    """Write a {0, 1} mask as binary PBM (P4); 1 = foreground = black."""
    from . import container

    mask = _require_2d_nonempty(mask)
    h, w = mask.shape
    bits = np.packbits((mask != 0).astype(np.uint8), axis=1)
    header = f"P4\n{w} {h}\n".encode("ascii")
    return container.write_bytes(path, header + bits.tobytes())


def save_pgm(path: str | Path, img: np.ndarray) -> bool:
    from . import container

    img = _require_2d_nonempty(img).astype(np.uint8)
    h, w = img.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    return container.write_bytes(path, header + img.tobytes())


def _read_pnm(path: Path) -> tuple[str, np.ndarray]:
    """Read P1/P2/P4/P5 netpbm files. Returns (kind, uint8 array)."""
    data = path.read_bytes()
    fields: list[bytes] = []
    pos = 0

    def next_token() -> bytes:
        nonlocal pos
        while pos < len(data):
            if data[pos : pos + 1].isspace():
                pos += 1
            elif data[pos : pos + 1] == b"#":
                while pos < len(data) and data[pos : pos + 1] != b"\n":
                    pos += 1
            else:
                break
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"truncated netpbm header in {path}")
        return data[start:pos]

    magic = next_token()
    if magic not in (b"P1", b"P2", b"P4", b"P5"):
        raise ValueError(f"unsupported netpbm magic {magic!r} in {path}")
    w = int(next_token())
    h = int(next_token())
    if w < 1 or h < 1:
        raise ValueError("empty input")

    if magic in (b"P2", b"P5"):
        maxval = int(next_token())
        if maxval < 1 or maxval > 255:
            raise ValueError(f"unsupported PGM maxval {maxval} in {path}")
        if magic == b"P5":
            pos += 1  # single whitespace after maxval
            raw = data[pos : pos + w * h]
            if len(raw) != w * h:
                raise ValueError(f"truncated PGM payload in {path}")
            arr = np.frombuffer(raw, dtype=np.uint8).reshape(h, w)
        else:
            vals = np.array(data[pos:].split(), dtype=np.int64)
            if vals.size != w * h:
                raise ValueError(f"truncated PGM payload in {path}")
            arr = vals.reshape(h, w).astype(np.uint8)
        return "pgm", arr.copy()

    if magic == b"P4":
        pos += 1
        row_bytes = (w + 7) // 8
        raw = data[pos : pos + row_bytes * h]
        if len(raw) != row_bytes * h:
            raise ValueError(f"truncated PBM payload in {path}")
        rows = np.frombuffer(raw, dtype=np.uint8).reshape(h, row_bytes)
        arr = np.unpackbits(rows, axis=1)[:, :w]
    else:  # P1
        vals = np.array(data[pos:].split(), dtype=np.int64)
        if vals.size != w * h:
            raise ValueError(f"truncated PBM payload in {path}")
        arr = vals.reshape(h, w)
    return "pbm", (arr != 0).astype(np.uint8)
