"""Image representation, patch-grid extraction, and label-map resampling.

Images are float64 arrays of shape (height, width, channels) with intensities
in [0, 1]. A patch grid is the non-overlapping d x d decomposition of an image
into equal patches; when d does not divide the image dimensions the right and
bottom remainders are cropped so all patches keep identical shape.
"""
from __future__ import annotations

import colorsys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from PIL import UnidentifiedImageError

from .errors import InputError

# Two unpadded 3x3 convolutions eat 4 pixels per axis; anything smaller than
# this cannot flow through the classifier.
MIN_PATCH_SIDE = 5


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Image:
    """Channel-interleaved raster with intensities scaled to [0, 1]."""

    data: np.ndarray  # (height, width, channels) float64, read-only

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValueError("image data must have shape (height, width, channels)")
        if self.data.shape[0] < 1 or self.data.shape[1] < 1:
            raise ValueError("image has a zero dimension")
        if not np.isfinite(self.data).all():
            raise ValueError("image intensities must be finite")
        if self.data.min() < 0.0 or self.data.max() > 1.0:
            raise ValueError("image intensities must lie in [0, 1]")
        _freeze(self.data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class SegmentationMap:
    """Per-pixel integer labels, 1-based."""

    labels: np.ndarray  # (height, width) int32, read-only

    def __post_init__(self):
        if self.labels.ndim != 2:
            raise ValueError("label map must be 2-D")
        if self.labels.size == 0:
            raise ValueError("label map is empty")
        if self.labels.min() < 1:
            raise ValueError("labels must be >= 1")
        object.__setattr__(self, "labels", _freeze(self.labels.astype(np.int32)))

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


@dataclass(frozen=True)
class PatchGrid:
    """All patches of a d x d decomposition, row-major, with pixel centers."""

    d: int
    patch_w: int
    patch_h: int
    patches: np.ndarray  # (d*d, patch_h, patch_w, channels) float64
    centers: np.ndarray  # (d*d, 2) float64, (x, y) pixel coordinates
    image_width: int     # original (uncropped) width
    image_height: int

    def __post_init__(self):
        _freeze(self.patches)
        _freeze(self.centers)

    @property
    def n_patches(self) -> int:
        return self.d * self.d

    @property
    def channels(self) -> int:
        return self.patches.shape[3]


def load_image(path) -> Image:
    """Read an 8-bit grayscale or RGB PNG/PPM file into a unit-scaled Image."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"image file not found: {path}")
    try:
        with PILImage.open(path) as img:
            if img.format not in ("PNG", "PPM"):
                raise InputError(f"unsupported image format {img.format!r}: {path}")
            if img.mode not in ("L", "RGB"):
                raise InputError(
                    f"unsupported image mode {img.mode!r} (need 8-bit gray or RGB): {path}"
                )
            arr = np.asarray(img, dtype=np.float64)
    except UnidentifiedImageError as exc:
        raise InputError(f"unreadable image file: {path}") from exc
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InputError(f"image has a zero dimension: {path}")
    return Image(arr / 255.0)


def extract_patch_grid(image: Image, d: int) -> PatchGrid:
    """Slice the image into d*d equal patches, cropping any remainder."""
    if d < 1:
        raise ValueError("grid side d must be >= 1")
    patch_h = image.height // d
    patch_w = image.width // d
    if patch_h == 0 or patch_w == 0:
        raise ValueError(f"grid side {d} exceeds image dimensions "
                         f"{image.width}x{image.height}")
    if patch_h < MIN_PATCH_SIDE or patch_w < MIN_PATCH_SIDE:
        raise ValueError(
            f"patch {patch_h}x{patch_w} is too small for the classifier; "
            f"both sides must be >= {MIN_PATCH_SIDE}"
        )
    cropped = image.data[: d * patch_h, : d * patch_w, :]
    c = image.channels
    patches = (
        cropped.reshape(d, patch_h, d, patch_w, c)
        .transpose(0, 2, 1, 3, 4)
        .reshape(d * d, patch_h, patch_w, c)
        .copy()
    )
    cols, rows = np.meshgrid(np.arange(d), np.arange(d))
    centers = np.stack(
        [(cols.ravel() + 0.5) * patch_w, (rows.ravel() + 0.5) * patch_h], axis=1
    ).astype(np.float64)
    return PatchGrid(
        d=d,
        patch_w=patch_w,
        patch_h=patch_h,
        patches=patches,
        centers=centers,
        image_width=image.width,
        image_height=image.height,
    )


def upsample_nearest(smap: SegmentationMap, target_w: int, target_h: int) -> SegmentationMap:
    """Nearest-neighbor resample under center-aligned pixel mapping."""
    if target_w < 1 or target_h < 1:
        raise ValueError("target dimensions must be >= 1")
    src_h, src_w = smap.labels.shape
    rows = np.minimum((np.arange(target_h) + 0.5) * src_h / target_h, src_h - 1).astype(int)
    cols = np.minimum((np.arange(target_w) + 0.5) * src_w / target_w, src_w - 1).astype(int)
    return SegmentationMap(smap.labels[np.ix_(rows, cols)].copy())


def label_palette() -> np.ndarray:
    """Fixed 256-entry RGB palette; entry k renders label k.

    Entry 0 is black; the rest walk the hue wheel by the golden ratio so
    nearby labels get visually distant colors.
    """
    pal = np.zeros((256, 3), dtype=np.uint8)
    for k in range(1, 256):
        h = (k * 0.61803398875) % 1.0
        r, g, b = colorsys.hsv_to_rgb(h, 0.65, 0.95)
        pal[k] = (int(r * 255), int(g * 255), int(b * 255))
    return pal


def save_label_png(smap: SegmentationMap, path) -> None:
    """Write a label map as an indexed 8-bit PNG using the fixed palette."""
    if smap.labels.max() > 255:
        raise ValueError("cannot write labels above 255 to an indexed PNG")
    img = PILImage.fromarray(smap.labels.astype(np.uint8), mode="P")
    img.putpalette(label_palette().ravel().tolist())
    img.save(path, format="PNG")


def load_label_png(path) -> SegmentationMap:
    """Read an indexed or grayscale PNG back as a label map."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"label map not found: {path}")
    try:
        with PILImage.open(path) as img:
            if img.mode not in ("P", "L"):
                raise InputError(f"label PNG must be indexed or grayscale: {path}")
            arr = np.asarray(img, dtype=np.int32)
    except UnidentifiedImageError as exc:
        raise InputError(f"unreadable label map: {path}") from exc
    if arr.min() < 1:
        raise InputError(f"label map must be 1-based (found {arr.min()}): {path}")
    return SegmentationMap(arr)
