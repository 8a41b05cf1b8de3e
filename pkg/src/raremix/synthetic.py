"""Procedural stand-ins for pathology data: blob textures and toy instance datasets."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .dataset_io import Dataset

STROMA = np.array([232.0, 190.0, 214.0])

# class -> (nucleus RGB, semi-axes range in px, elongation range)
TOY_CLASSES = {
    "epithelial": (np.array([120.0, 70.0, 150.0]), (6, 9), (1.0, 1.4)),
    "inflammatory": (np.array([60.0, 30.0, 100.0]), (3, 5), (1.0, 1.1)),
    "spindle": (np.array([140.0, 90.0, 170.0]), (3, 5), (2.0, 3.0)),
    "miscellaneous": (np.array([90.0, 40.0, 60.0]), (5, 8), (1.0, 1.8)),
}


def smooth_noise(shape, rng: np.random.Generator, sigma: float) -> np.ndarray:
    n = ndimage.gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    return n / (n.std() + 1e-12)


def background(shape, rng: np.random.Generator, amplitude: float = 12.0) -> np.ndarray:
    h, w = shape
    tint = STROMA + rng.normal(0, 6, 3)
    field = smooth_noise((h, w), rng, sigma=max(h, w) / 16)
    fine = smooth_noise((h, w), rng, sigma=1.0)
    img = tint + amplitude * field[..., None] * np.array([1.0, 0.8, 0.9]) + 3.0 * fine[..., None]
    return img


def ellipse_mask(shape, center, a: float, b: float, theta: float) -> np.ndarray:
    rr, cc = np.mgrid[:shape[0], :shape[1]]
    dr, dc = rr - center[0], cc - center[1]
    u = dr * np.cos(theta) + dc * np.sin(theta)
    v = -dr * np.sin(theta) + dc * np.cos(theta)
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def paint_nucleus(img: np.ndarray, mask: np.ndarray, color: np.ndarray, rng: np.random.Generator) -> None:
    soft = ndimage.gaussian_filter(mask.astype(np.float64), 0.7)
    c = color + rng.normal(0, 5, 3)
    img[:] = img * (1 - soft[..., None]) + c * soft[..., None]
    img[mask] += rng.normal(0, 4, (int(mask.sum()), 3))


def blob_textures(n: int, size: int = 32, seed: int = 0, max_blobs: int = 3) -> np.ndarray:
    """(n, size, size, 3) uint8 tiles of stroma with a few nucleus-like blobs."""
    rng = np.random.default_rng(seed)
    out = np.empty((n, size, size, 3), dtype=np.uint8)
    colors = [v[0] for v in TOY_CLASSES.values()]
    for i in range(n):
        img = background((size, size), rng)
        for _ in range(rng.integers(0, max_blobs + 1)):
            a = rng.uniform(2.5, 7.0)
            m = ellipse_mask((size, size), rng.uniform(0, size, 2), a, a / rng.uniform(1.0, 2.0), rng.uniform(0, np.pi))
            paint_nucleus(img, m, colors[rng.integers(len(colors))], rng)
        out[i] = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return out


def toy_dataset(n_images: int = 4, size: int = 320, per_image: int = 50,
                class_weights: dict[str, float] | None = None, seed: int = 0,
                spacing: float = 4.0) -> Dataset:
    """Non-overlapping elliptical nuclei on smooth stroma, one labelmap id per nucleus.

    Default mix: three classes with one rare ("miscellaneous", ~4%).
    """
    rng = np.random.default_rng(seed)
    weights = class_weights or {"epithelial": 0.46, "inflammatory": 0.50, "miscellaneous": 0.04}
    classes = list(weights)
    p = np.array([weights[c] for c in classes], dtype=np.float64)
    p /= p.sum()
    names, images, labelmaps, table = [], [], [], {}
    for k in range(n_images):
        name = f"toy_{k:03d}"
        img = background((size, size), rng)
        lab = np.zeros((size, size), dtype=np.int64)
        blocked = np.zeros((size, size), dtype=bool)
        placed, tries = 0, 0
        draw = rng.choice(len(classes), size=per_image, p=p)
        while placed < per_image and tries < 50 * per_image:
            tries += 1
            cls = classes[draw[placed]]
            color, (amin, amax), (emin, emax) = TOY_CLASSES[cls]
            a = rng.uniform(amin, amax)
            b = a / rng.uniform(emin, emax)
            center = rng.uniform(amax + 2, size - amax - 2, 2)
            m = ellipse_mask((size, size), center, a, b, rng.uniform(0, np.pi))
            if not m.any() or (m & blocked).any():
                continue
            placed += 1
            lab[m] = placed
            table[(name, placed)] = cls
            blocked |= ndimage.binary_dilation(m, iterations=int(spacing))
            paint_nucleus(img, m, color, rng)
        names.append(name)
        images.append(np.clip(np.rint(img), 0, 255).astype(np.uint8))
        labelmaps.append(lab)
    ds = Dataset(names, images, labelmaps, table, sorted(set(weights)))
    ds.validate()
    return ds
