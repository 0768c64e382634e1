"""Grid window sampling and ViT-style patch extraction on binary pages."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .preproc import foreground_fraction


@dataclass(frozen=True)
class Window:
    """A square crop of a document at a fixed grid position.

    ``origin`` is the (x, y) pixel offset of the top-left corner in the
    source document; ``pixels`` is the {0, 1} content of the crop.
    """

    origin: tuple[int, int]
    pixels: np.ndarray

    @property
    def size(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class PatchGrid:
    """A window cut into flattened square patches, row-major.

    ``patches`` has shape (L, P*P) with L = (window size / P) ** 2; each
    row is one patch flattened row-major. ``fg_counts[i]`` is the number
    of foreground pixels inside patch i.
    """

    patch_size: int
    patches: np.ndarray
    fg_counts: np.ndarray

    def __len__(self) -> int:
        return self.patches.shape[0]


def sample_windows(doc: np.ndarray, size: int = 224, stride: int = 224) -> list[Window]:
    """Cut a document into square windows on a regular grid.

    Windows sit at origins (i * stride, j * stride) for every grid
    position where the window lies fully inside the document, listed
    row-major (x varies fastest). Documents narrower or shorter than
    ``size`` are padded with background on the right/bottom to exactly
    ``size`` along the deficient axis; trailing margins that no window
    reaches are left uncovered.
    """
    doc = np.asarray(doc)
    if doc.ndim != 2 or doc.size == 0:
        raise ValueError("empty input")
    if size < 1 or stride < 1:
        raise ValueError("size and stride must be >= 1")

    h, w = doc.shape
    if h < size or w < size:
        padded = np.zeros((max(h, size), max(w, size)), dtype=doc.dtype)
        padded[:h, :w] = doc
        doc = padded
        h, w = doc.shape

    ny = (h - size) // stride + 1
    nx = (w - size) // stride + 1
    out = []
    for j in range(ny):
        y = j * stride
        for i in range(nx):
            x = i * stride
            out.append(Window(origin=(x, y), pixels=doc[y : y + size, x : x + size]))
    return out


def filter_windows(windows: list[Window], min_fg: float = 0.025) -> list[Window]:
    """Keep windows whose foreground fraction strictly exceeds ``min_fg``."""
    if not 0.0 <= min_fg <= 1.0:
        raise ValueError("min_fg must be in [0, 1]")
    return [w for w in windows if foreground_fraction(w.pixels) > min_fg]


def patchify(window: Window | np.ndarray, patch_size: int = 16) -> PatchGrid:
    """Cut a window into flattened patches plus per-patch foreground counts.

    Patches are ordered row-major over the patch grid and each patch is
    flattened row-major, so reassembling them reproduces the window
    pixel for pixel.
    """
    pixels = window.pixels if isinstance(window, Window) else np.asarray(window)
    if pixels.ndim != 2 or pixels.shape[0] != pixels.shape[1]:
        raise ValueError(f"window must be square, got shape {pixels.shape}")
    size = pixels.shape[0]
    if patch_size < 1 or size % patch_size:
        raise ValueError(f"window size {size} not divisible by patch size {patch_size}")

    g = size // patch_size
    patches = (
        pixels.reshape(g, patch_size, g, patch_size)
        .transpose(0, 2, 1, 3)
        .reshape(g * g, patch_size * patch_size)
    )
    fg_counts = np.count_nonzero(patches, axis=1).astype(np.int64)
    return PatchGrid(patch_size=patch_size, patches=patches, fg_counts=fg_counts)


def unpatchify(grid: PatchGrid) -> np.ndarray:
    """Reassemble a PatchGrid into the original window pixels."""
    L, pp = grid.patches.shape
    p = grid.patch_size
    g = int(round(L**0.5))
    if g * g != L or p * p != pp:
        raise ValueError("inconsistent patch grid")
    return (
        grid.patches.reshape(g, g, p, p).transpose(0, 2, 1, 3).reshape(g * p, g * p)
    )
