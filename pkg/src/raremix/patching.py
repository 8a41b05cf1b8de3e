"""Fixed-size context patches: cropping, center removal, hole filling, contour rings."""

from __future__ import annotations

import hashlib
from collections import OrderedDict
from dataclasses import dataclass, field, replace

import cv2
import numpy as np
from scipy import ndimage, sparse
from scipy.sparse.linalg import splu

PATCH_SIZE = 224
CENTER_SIZE = 112

BOX = np.ones((3, 3), dtype=bool)


class GeometryError(ValueError):
    pass


class InpaintError(RuntimeError):
    pass


@dataclass
class Patch:
    pixels: np.ndarray  # (S, S, 3) uint8
    origin: tuple[int, int]  # top-left of the window in image coords, may be negative
    center: tuple[int, int]
    known_mask: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.known_mask is None:
            self.known_mask = np.ones(self.pixels.shape[:2], dtype=bool)

    @property
    def size(self) -> int:
        return self.pixels.shape[0]

    def copy(self) -> "Patch":
        return replace(self, pixels=self.pixels.copy(), known_mask=self.known_mask.copy())


def window_slices(origin, size, shape):
    """Slices mapping the in-image part of a ``size`` window at ``origin``.

    Returns ``(image_slices, patch_slices)``; both empty when the window misses the image.
    """
    r0, c0 = origin
    h, w = shape[:2]
    ir0, ic0 = max(r0, 0), max(c0, 0)
    ir1, ic1 = min(r0 + size, h), min(c0 + size, w)
    ir1, ic1 = max(ir1, ir0), max(ic1, ic0)
    img = (slice(ir0, ir1), slice(ic0, ic1))
    pat = (slice(ir0 - r0, ir1 - r0), slice(ic0 - c0, ic1 - c0))
    return img, pat


def inside_mask(origin, size, shape) -> np.ndarray:
    """Boolean (size, size) mask of window pixels that fall inside the image."""
    m = np.zeros((size, size), dtype=bool)
    _, pat = window_slices(origin, size, shape)
    m[pat] = True
    return m


def crop_window(arr: np.ndarray, center, size: int, mode: str = "reflect") -> tuple[np.ndarray, tuple[int, int]]:
    """Crop a ``size``-square window centered on ``center``, padding out-of-bounds parts.

    ``mode`` is passed to :func:`numpy.pad`; use ``"constant"`` for label rasters.
    """
    h, w = arr.shape[:2]
    if size > 2 * min(h, w):
        raise GeometryError(f"patch size {size} exceeds twice the smaller image side ({h}x{w})")
    r, c = int(center[0]), int(center[1])
    if not (0 <= r < h and 0 <= c < w):
        raise GeometryError(f"center {center} outside image {h}x{w}")
    half = size // 2
    r0, c0 = r - half, c - half
    pads = [(max(0, -r0), max(0, r0 + size - h)), (max(0, -c0), max(0, c0 + size - w))]
    pads += [(0, 0)] * (arr.ndim - 2)
    padded = np.pad(arr, pads, mode=mode) if any(p != (0, 0) for p in pads) else arr
    pr, pc = r0 + pads[0][0], c0 + pads[1][0]
    return padded[pr:pr + size, pc:pc + size].copy(), (r0, c0)


def crop_patch(image: np.ndarray, center, size: int = PATCH_SIZE) -> Patch:
    pixels, origin = crop_window(image, center, size, mode="reflect")
    return Patch(pixels=pixels, origin=origin, center=(size // 2, size // 2))


def embed_patch(image: np.ndarray, patch: Patch) -> None:
    """Write the in-image pixels of ``patch`` back into ``image`` in place."""
    img, pat = window_slices(patch.origin, patch.size, image.shape)
    image[img] = patch.pixels[pat]


def remove_center(p: Patch, size: int = CENTER_SIZE) -> Patch:
    if size > p.size:
        raise GeometryError(f"center size {size} larger than patch {p.size}")
    out = p.copy()
    if size <= 0:
        return out
    r0 = p.center[0] - size // 2
    c0 = p.center[1] - size // 2
    r0, c0 = max(r0, 0), max(c0, 0)
    out.known_mask[r0:r0 + size, c0:c0 + size] = False
    out.pixels[~out.known_mask] = 0
    return out


# --- harmonic fill -----------------------------------------------------------

_FACTOR_CACHE: "OrderedDict[bytes, tuple]" = OrderedDict()
_FACTOR_CACHE_SIZE = 16


def _laplace_system(known: np.ndarray):
    key = hashlib.blake2b(np.packbits(known).tobytes() + str(known.shape).encode(), digest_size=16).digest()
    hit = _FACTOR_CACHE.get(key)
    if hit is not None:
        _FACTOR_CACHE.move_to_end(key)
        return hit

    h, w = known.shape
    unknown = ~known
    idx = -np.ones(known.shape, dtype=np.int64)
    ur, uc = np.nonzero(unknown)
    n = ur.size
    idx[ur, uc] = np.arange(n)

    rows, cols, vals = [], [], []
    # known-neighbor couplings, as (unknown index, flat known pixel index)
    brow, bpix = [], []
    deg = np.zeros(n)
    for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        nr, nc = ur + dr, uc + dc
        ok = (nr >= 0) & (nr < h) & (nc >= 0) & (nc < w)
        deg += ok
        src = np.nonzero(ok)[0]
        nr, nc = nr[ok], nc[ok]
        nb_unknown = unknown[nr, nc]
        rows.append(src[nb_unknown])
        cols.append(idx[nr[nb_unknown], nc[nb_unknown]])
        brow.append(src[~nb_unknown])
        bpix.append(nr[~nb_unknown] * w + nc[~nb_unknown])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    a = sparse.coo_matrix((-np.ones(rows.size), (rows, cols)), shape=(n, n))
    a = (a + sparse.diags(deg)).tocsc()
    brow = np.concatenate(brow)
    bpix = np.concatenate(bpix)
    b = sparse.csr_matrix((np.ones(brow.size), (brow, bpix)), shape=(n, h * w))
    lu = splu(a)
    entry = (lu, b, ur, uc)
    _FACTOR_CACHE[key] = entry
    if len(_FACTOR_CACHE) > _FACTOR_CACHE_SIZE:
        _FACTOR_CACHE.popitem(last=False)
    return entry


def _check_fillable(known: np.ndarray) -> None:
    if not known.any():
        raise InpaintError("cannot inpaint a fully unknown patch")
    labels, n = ndimage.label(~known)
    if n == 0:
        return
    touched = ndimage.binary_dilation(known, structure=ndimage.generate_binary_structure(2, 1))
    hit = np.unique(labels[touched & ~known])
    if np.setdiff1d(np.arange(1, n + 1), hit).size:
        raise InpaintError("unknown region without any known boundary pixel")


def harmonic_fill(pixels: np.ndarray, known: np.ndarray) -> np.ndarray:
    """Solve the discrete Laplace equation on unknown pixels, Dirichlet data from known ones.

    Returns float values (same shape as ``pixels``); known pixels are copied unchanged.
    """
    _check_fillable(known)
    out = pixels.astype(np.float64)
    if known.all():
        return out
    lu, b, ur, uc = _laplace_system(known)
    flat = out.reshape(-1, out.shape[2] if out.ndim == 3 else 1)
    rhs = b @ flat
    sol = lu.solve(np.ascontiguousarray(rhs))
    if out.ndim == 3:
        out[ur, uc, :] = sol
    else:
        out[ur, uc] = sol[:, 0]
    return out


def classical_inpaint(p: Patch, method: str = "harmonic", radius: int = 5) -> Patch:
    """Fill unknown pixels from their surroundings; known pixels stay bit-exact.

    ``method="harmonic"`` is an exact Laplace solve; ``method="navier-stokes"`` uses
    OpenCV's fluid-dynamics inpainter.
    """
    known = p.known_mask
    out = p.copy()
    if known.all():
        return out
    if method == "harmonic":
        filled = np.clip(np.rint(harmonic_fill(p.pixels, known)), 0, 255).astype(p.pixels.dtype)
    elif method == "navier-stokes":
        _check_fillable(known)
        hole = (~known).astype(np.uint8)
        filled = cv2.inpaint(np.ascontiguousarray(p.pixels), hole, radius, cv2.INPAINT_NS)
    else:
        raise ValueError(f"unknown inpainting method {method!r}")
    out.pixels[~known] = filled[~known]
    out.known_mask[:] = True
    return out


def dilate(mask: np.ndarray, iterations: int) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if iterations <= 0:
        return mask.copy()
    return ndimage.binary_dilation(mask, structure=BOX, iterations=iterations)


def contour_layers(mask: np.ndarray, n_layers: int) -> list[np.ndarray]:
    """Rings of one 3x3-box dilation each around ``mask``; ring k = dilate^k \\ dilate^(k-1)."""
    if n_layers < 0:
        raise ValueError("n_layers must be >= 0")
    rings = []
    prev = np.asarray(mask, dtype=bool)
    for _ in range(n_layers):
        cur = ndimage.binary_dilation(prev, structure=BOX)
        rings.append(cur & ~prev)
        prev = cur
    return rings
