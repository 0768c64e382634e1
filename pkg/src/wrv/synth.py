"""Synthetic handwriting-like corpora for tests and demos.

Each synthetic writer is a random stroke texture; the writer's pages
are copies of that texture with independent pixel-flip noise, giving a
corpus with known ground truth where same-writer pages are near
duplicates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def stroke_texture(
    height: int = 336,
    width: int = 336,
    seed: int = 0,
    ink_target: float = 0.10,
) -> np.ndarray:
    """Draw meandering strokes until roughly ``ink_target`` of pixels are ink."""
    rng = np.random.default_rng(seed)
    mask = np.zeros((height, width), dtype=np.uint8)
    target = int(ink_target * mask.size)
    thickness_choices = (1, 2, 2, 3)

    while int(mask.sum()) < target:
        y = rng.uniform(0, height)
        x = rng.uniform(0, width)
        angle = rng.uniform(0, 2 * np.pi)
        steps = int(rng.integers(60, 240))
        t = int(rng.choice(thickness_choices))
        for _ in range(steps):
            angle += rng.normal(0.0, 0.35)
            y += np.sin(angle)
            x += np.cos(angle)
            yi, xi = int(round(y)), int(round(x))
            if not (0 <= yi < height and 0 <= xi < width):
                break
            y0, y1 = max(yi - t + 1, 0), min(yi + t, height)
            x0, x1 = max(xi - t + 1, 0), min(xi + t, width)
            mask[y0:y1, x0:x1] = 1
    return mask


def flip_noise(mask: np.ndarray, prob: float, seed: int = 0) -> np.ndarray:
    """Flip each pixel independently with probability ``prob``."""
    rng = np.random.default_rng(seed)
    flips = rng.random(mask.shape) < prob
    return np.where(flips, 1 - mask, mask).astype(np.uint8)


@dataclass(frozen=True)
class SynthDoc:
    doc_id: str
    writer_id: str
    pixels: np.ndarray


def writer_corpus(
    writers: int = 10,
    pages: int = 5,
    height: int = 336,
    width: int = 336,
    noise: float = 0.01,
    seed: int = 0,
) -> list[SynthDoc]:
    """Pages of several synthetic writers, near-duplicate within a writer."""
    docs = []
    for w in range(writers):
        base = stroke_texture(height, width, seed=seed * 7919 + w)
        for p in range(pages):
            page = flip_noise(base, noise, seed=seed * 104729 + w * 1000 + p)
            docs.append(
                SynthDoc(
                    doc_id=f"w{w:02d}-p{p}",
                    writer_id=f"w{w:02d}",
                    pixels=page,
                )
            )
    return docs
