"""Patch descriptors: a pluggable 768-d embedding, 4 GLCM statistics, and PCA."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np
from skimage.feature import graycomatrix, graycoprops

from .patching import Patch

EMBED_DIM = 768
GLCM_DIM = 4
FEATURE_DIM = EMBED_DIM + GLCM_DIM
GLCM_PROPS = ("contrast", "homogeneity", "energy", "correlation")
LUMA = np.array([0.2125, 0.7154, 0.0721])


class FeatureError(ValueError):
    pass


def to_gray(pixels: np.ndarray) -> np.ndarray:
    """Luma in [0, 255] as float."""
    if pixels.ndim == 2:
        return pixels.astype(np.float64)
    return pixels[..., :3].astype(np.float64) @ LUMA


def quantize(gray: np.ndarray, levels: int = 16) -> np.ndarray:
    # small offset so exact bin edges survive the luma float round-off
    q = np.floor(gray * levels / 256.0 + 1e-9).astype(np.int64)
    return np.clip(q, 0, levels - 1).astype(np.uint8)


def glcm_features(p: Patch | np.ndarray, levels: int = 16, offset: tuple[int, int] = (0, 1)) -> np.ndarray:
    """(contrast, homogeneity, energy, correlation) of the symmetric normalized GLCM.

    ``offset`` is (d_row, d_col); the default pairs each pixel with its right neighbour.
    Zero-variance images get correlation 1.
    """
    pixels = p.pixels if isinstance(p, Patch) else p
    q = quantize(to_gray(pixels), levels)
    dr, dc = offset
    distance = float(np.hypot(dr, dc))
    angle = float(np.arctan2(dr, dc))
    glcm = graycomatrix(q, [distance], [angle], levels=levels, symmetric=True, normed=True)
    return np.array([graycoprops(glcm, prop)[0, 0] for prop in GLCM_PROPS], dtype=np.float64)


class EmbeddingProvider(Protocol):
    dim: int

    def __call__(self, patch: Patch, key: str | None = None) -> np.ndarray: ...


class RandomProjectionEmbedder:
    """Seeded random projection of grid-pooled per-channel means and standard deviations.

    A stand-in for a pretrained backbone: cheap, deterministic, and sensitive to the
    coarse color/texture layout of the patch.
    """

    def __init__(self, dim: int = EMBED_DIM, grid: int = 8, seed: int = 0):
        self.dim = dim
        self.grid = grid
        self.seed = seed
        n_stats = grid * grid * 3 * 2
        rng = np.random.default_rng(seed)
        self.weights = rng.standard_normal((dim, n_stats)) / np.sqrt(n_stats)
        self.bias = rng.uniform(-1.0, 1.0, size=dim)

    def pooled_stats(self, pixels: np.ndarray) -> np.ndarray:
        x = pixels.astype(np.float64) / 255.0
        if x.ndim == 2:
            x = np.repeat(x[..., None], 3, axis=2)
        h, w = x.shape[:2]
        rows = np.array_split(np.arange(h), self.grid)
        cols = np.array_split(np.arange(w), self.grid)
        stats = np.empty((self.grid, self.grid, 3, 2))
        for i, rr in enumerate(rows):
            for j, cc in enumerate(cols):
                cell = x[rr[0]:rr[-1] + 1, cc[0]:cc[-1] + 1].reshape(-1, 3)
                stats[i, j, :, 0] = cell.mean(axis=0)
                stats[i, j, :, 1] = cell.std(axis=0)
        return stats.ravel()

    def __call__(self, patch: Patch, key: str | None = None) -> np.ndarray:
        pixels = patch.pixels if isinstance(patch, Patch) else patch
        return self.weights @ self.pooled_stats(pixels) + self.bias


class SidecarEmbedder:
    """Reads precomputed vectors keyed by ``image/row/col``.

    File format: one record per line, ``<key> v1 v2 ... v768`` separated by whitespace;
    blank lines and lines starting with ``#`` are skipped.
    """

    def __init__(self, path: str | Path, dim: int = EMBED_DIM):
        self.dim = dim
        self.path = Path(path)
        self.table: dict[str, np.ndarray] = {}
        for lineno, line in enumerate(self.path.read_text().splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, *vals = line.split()
            if len(vals) != dim:
                raise FeatureError(f"{self.path}:{lineno}: expected {dim} values for {key}, got {len(vals)}")
            self.table[key] = np.array(vals, dtype=np.float64)

    def __call__(self, patch: Patch, key: str | None = None) -> np.ndarray:
        if key is None or key not in self.table:
            raise FeatureError(f"no sidecar embedding for patch {key!r} in {self.path}")
        return self.table[key].copy()


def write_sidecar(path: str | Path, vectors: dict[str, np.ndarray]) -> None:
    with open(path, "w") as fh:
        for key, vec in vectors.items():
            fh.write(key + " " + " ".join(repr(float(v)) for v in vec) + "\n")


def patch_key(image_name: str, row: int, col: int) -> str:
    return f"{image_name}/{row}/{col}"


def extract_embedding(p: Patch, extractor: EmbeddingProvider, key: str | None = None) -> np.ndarray:
    v = np.asarray(extractor(p, key), dtype=np.float64)
    if v.shape != (extractor.dim,):
        raise FeatureError(f"extractor returned shape {v.shape}, expected ({extractor.dim},)")
    return v


def patch_features(p: Patch, extractor: EmbeddingProvider, key: str | None = None) -> np.ndarray:
    """Concatenated embedding + GLCM vector (772-d with the default extractor)."""
    return np.concatenate([extract_embedding(p, extractor, key), glcm_features(p)])


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X) -> "Standardizer":
        X = np.asarray(X, dtype=np.float64)
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale < 1e-12] = 1.0
        return cls(mean, scale)

    def __call__(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.scale


@dataclass(frozen=True)
class PcaProjector:
    mean: np.ndarray
    basis: np.ndarray  # (p, D), orthonormal rows
    explained_variance: np.ndarray
    padded: int = 0  # trailing zero-variance directions added to reach p

    @property
    def p(self) -> int:
        return self.basis.shape[0]


def fit_pca(X, p: int = 16) -> PcaProjector:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise FeatureError("PCA needs at least 2 vectors")
    n, d = X.shape
    if not 1 <= p <= d:
        raise FeatureError(f"p={p} must be in [1, {d}]")
    mean = X.mean(axis=0)
    Xc = X - mean
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    var = s**2 / (n - 1)
    if var[0] <= 1e-300:
        raise FeatureError("all vectors identical: degenerate variance")
    rank = int(np.sum(var > var[0] * 1e-12))
    basis = vt[:min(rank, p)]
    ev = var[:min(rank, p)]
    padded = p - basis.shape[0]
    if padded:
        warnings.warn(f"only {rank} non-degenerate directions; padding PCA basis with {padded} zero-variance ones")
        # orthonormal complement of the retained directions
        q, _ = np.linalg.qr(np.concatenate([basis.T, np.eye(d)], axis=1))
        extra = q[:, basis.shape[0]:basis.shape[0] + padded].T
        basis = np.concatenate([basis, extra])
        ev = np.concatenate([ev, np.zeros(padded)])
    # sign convention: largest-magnitude loading positive, for reproducibility across LAPACKs
    flip = np.sign(basis[np.arange(p), np.argmax(np.abs(basis), axis=1)])
    basis = basis * flip[:, None]
    return PcaProjector(mean=mean, basis=basis, explained_variance=ev, padded=padded)


def project(pr: PcaProjector, v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != pr.mean.shape[0]:
        raise FeatureError(f"vector length {v.shape[-1]} != projector input dim {pr.mean.shape[0]}")
    return (v - pr.mean) @ pr.basis.T
