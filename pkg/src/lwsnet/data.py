"""Dataset handling: synthetic shelf scenes, window cropping, disk IO.

Real shelf photos are not distributable, so the pipeline ships a
deterministic generator that renders gray-scale shelf fronts in four
viewing regimes (close-up, distant, multi-block, mixed).  Shelves are
full-width horizontal bands; the ground-truth mask marks exactly the band
pixels.  Product rectangles fill the space between consecutive shelves
and never overlap a band.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

REGIMES = ("close-up", "distant", "multi-block", "mixed")

#: Per-regime generator defaults: (shelf count range, thickness range in px,
#: product density, noise sigma).  Distant views show more, thinner shelves
#: than close-ups; multi-block scenes cluster shelves into two groups.
REGIME_DEFAULTS = {
    "close-up": ((2, 3), (10, 16), 0.5, 0.02),
    "distant": ((5, 8), (3, 6), 0.7, 0.02),
    "multi-block": ((4, 6), (6, 10), 0.6, 0.02),
    "mixed": ((4, 8), (4, 9), 0.6, 0.02),
}

LUMA = (0.299, 0.587, 0.114)


class DatasetError(Exception):
    """Raised for unreadable or incomplete dataset directories."""


@dataclass
class Sample:
    """A gray image in [0,1] with its binary shelf-edge mask."""

    image: np.ndarray
    mask: np.ndarray
    source_id: str = ""
    offset: tuple = (0, 0)

    def __post_init__(self):
        if self.image.shape != self.mask.shape:
            raise ValueError(
                f"image shape {self.image.shape} does not match mask shape {self.mask.shape}"
            )


@dataclass(frozen=True)
class SynthSpec:
    """Deterministic recipe for one synthetic shelf scene."""

    seed: int
    height: int = 224
    width: int = 224
    regime: str = "close-up"
    shelf_count: tuple = (2, 3)
    thickness: tuple = (10, 16)
    product_density: float = 0.5
    noise: float = 0.02
    min_gap: int = 8

    @classmethod
    def for_regime(cls, regime: str, seed: int, height: int = 224, width: int = 224) -> "SynthSpec":
        if regime not in REGIME_DEFAULTS:
            raise ValueError(f"unknown regime {regime!r}, expected one of {REGIMES}")
        count, thick, density, noise = REGIME_DEFAULTS[regime]
        return cls(seed=seed, height=height, width=width, regime=regime,
                   shelf_count=count, thickness=thick, product_density=density, noise=noise)


def _place_bands(rng: np.random.Generator, spec: SynthSpec):
    """Choose non-overlapping (top_row, thickness) bands, top to bottom."""
    lo, hi = spec.shelf_count
    n = int(rng.integers(lo, hi + 1))
    if n == 0:
        return []
    thick = rng.integers(spec.thickness[0], spec.thickness[1] + 1, size=n)
    groups = 2 if spec.regime == "multi-block" and n >= 2 else 1
    gaps = spec.min_gap * (n - 1)
    slack = spec.height - int(thick.sum()) - gaps
    if slack < 0:
        raise ValueError(
            f"cannot fit {n} shelves of total thickness {int(thick.sum())} plus gaps in"
            f" height {spec.height}"
        )
    # Split leftover height over the n+1 inter-band spaces; multi-block
    # scenes funnel extra slack into one divider gap.
    weights = np.ones(n + 1)
    if groups == 2:
        weights[n // 2] = n + 1.0
    extra = rng.multinomial(slack, weights / weights.sum())
    bands = []
    y = 0
    for i in range(n):
        y += int(extra[i]) + (spec.min_gap if i else 0)
        bands.append((y, int(thick[i])))
        y += int(thick[i])
    return bands


def _draw_products(rng, image, y_top, y_bottom, width, density):
    """Rectangles standing on the shelf below, clipped to the gap region."""
    room = y_bottom - y_top
    if room < 6:
        return
    count = int(density * width / 22)
    for _ in range(count):
        pw = int(rng.integers(8, max(9, width // 7)))
        ph = int(rng.integers(4, max(5, int(room * 0.9))))
        x0 = int(rng.integers(0, max(1, width - pw)))
        y0 = y_bottom - ph
        shade = rng.uniform(0.25, 0.95)
        image[y0:y_bottom, x0 : x0 + pw] = shade
        image[y0, x0 : x0 + pw] = max(0.0, shade - 0.15)
        image[y0:y_bottom, x0] = max(0.0, shade - 0.15)


def generate_synthetic(spec: SynthSpec) -> Sample:
    """Render one scene; identical specs produce byte-identical samples."""
    rng = np.random.default_rng(spec.seed)
    h, w = spec.height, spec.width
    image = np.empty((h, w), dtype=np.float32)
    base = rng.uniform(0.55, 0.85)
    tilt = rng.uniform(-0.08, 0.08)
    image[:] = (base + tilt * np.linspace(-1, 1, h, dtype=np.float32))[:, None]

    bands = _place_bands(rng, spec)
    for i in range(1, len(bands)):
        gap_top = bands[i - 1][0] + bands[i - 1][1]
        _draw_products(rng, image, gap_top, bands[i][0], w, spec.product_density)

    mask = np.zeros((h, w), dtype=np.uint8)
    for y, t in bands:
        shade = rng.uniform(0.05, 0.25)
        rows = shade + rng.uniform(-0.02, 0.02, size=t).astype(np.float32)
        image[y : y + t, :] = rows[:, None]
        if t >= 3:
            image[y + t - 1, :] = min(1.0, shade + 0.18)  # lit front lip
        mask[y : y + t, :] = 1

    if spec.noise > 0:
        image += rng.normal(0.0, spec.noise, size=(h, w)).astype(np.float32)
    np.clip(image, 0.0, 1.0, out=image)
    return Sample(image=image.astype(np.float32), mask=mask,
                  source_id=f"{spec.regime}-seed{spec.seed}")


def make_regime_set(regime: str, count: int, seed: int, height: int = 224,
                    width: int = 224) -> list:
    """A list of scenes for one regime with consecutive per-sample seeds."""
    out = []
    for i in range(count):
        spec = SynthSpec.for_regime(regime, seed=seed + i, height=height, width=width)
        s = generate_synthetic(spec)
        s.source_id = f"{regime}-{i:04d}"
        out.append(s)
    return out


# ---------------------------------------------------------------------------
# Window cropping

def _crop_origins(dim: int, window: int, stride: int):
    """Sliding origins plus a final edge-anchored origin for full coverage."""
    origins = list(range(0, dim - window + 1, stride))
    if not origins:
        origins = [0]
    if origins[-1] + window < dim:
        origins.append(dim - window)
    return origins


def _reflect_to(arr: np.ndarray, height: int, width: int) -> np.ndarray:
    """Reflect-pad an array up to at least (height, width)."""
    while arr.shape[0] < height or arr.shape[1] < width:
        ph = min(arr.shape[0] - 1, max(0, height - arr.shape[0]))
        pw = min(arr.shape[1] - 1, max(0, width - arr.shape[1]))
        if ph == 0 and pw == 0:
            raise ValueError(f"cannot reflect a {arr.shape} array any further")
        arr = np.pad(arr, ((0, ph), (0, pw)), mode="reflect")
    return arr


def crop_windows(sample: Sample, window: int = 224, stride: int = 112) -> list:
    """Slide a square window over the sample; the last row/column of crops
    is anchored to the image edge so every pixel is covered.  Images
    smaller than the window are reflection-padded and yield one crop.
    """
    img, msk = sample.image, sample.mask
    if img.shape[0] < window or img.shape[1] < window:
        img = _reflect_to(img, window, window)
        msk = _reflect_to(msk, window, window)
        img = img[:window, :window]
        msk = msk[:window, :window]
        return [Sample(img.copy(), msk.copy(), source_id=sample.source_id, offset=(0, 0))]
    crops = []
    for oy in _crop_origins(img.shape[0], window, stride):
        for ox in _crop_origins(img.shape[1], window, stride):
            crops.append(
                Sample(
                    img[oy : oy + window, ox : ox + window].copy(),
                    msk[oy : oy + window, ox : ox + window].copy(),
                    source_id=sample.source_id,
                    offset=(oy, ox),
                )
            )
    return crops


def stitch_windows(crops: list, height: int, width: int) -> Sample:
    """Reassemble crops onto a canvas; later crops overwrite earlier ones."""
    img = np.zeros((height, width), dtype=np.float32)
    msk = np.zeros((height, width), dtype=np.uint8)
    for c in crops:
        oy, ox = c.offset
        h, w = c.image.shape
        img[oy : oy + h, ox : ox + w] = c.image
        msk[oy : oy + h, ox : ox + w] = c.mask
    sid = crops[0].source_id if crops else ""
    return Sample(img, msk, source_id=sid)


# ---------------------------------------------------------------------------
# Disk IO: PNG via Pillow, PGM (P5, 8-bit) natively.

def _read_pgm(path: Path) -> np.ndarray:
    data = path.read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        m = re.match(rb"\s*(?:#[^\n]*\n\s*)*(\S+)", data[pos:])
        if not m:
            raise DatasetError(f"{path}: truncated PGM header")
        tokens.append(m.group(1))
        pos += m.end()
    if tokens[0] != b"P5":
        raise DatasetError(f"{path}: not a binary PGM (P5) file")
    width, height, maxval = (int(t) for t in tokens[1:])
    pos += 1  # single whitespace after maxval
    if maxval <= 0 or maxval > 255:
        raise DatasetError(f"{path}: unsupported PGM maxval {maxval}")
    raw = np.frombuffer(data, dtype=np.uint8, count=height * width, offset=pos)
    return raw.reshape(height, width).astype(np.float32) / maxval


def _write_pgm(path: Path, gray: np.ndarray):
    arr = np.clip(np.rint(gray * 255.0), 0, 255).astype(np.uint8)
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode()
    path.write_bytes(header + arr.tobytes())


def read_gray(path) -> np.ndarray:
    """Load a PNG or PGM as float32 gray in [0,1]; color collapses by luma."""
    path = Path(path)
    try:
        if path.suffix.lower() == ".pgm":
            return _read_pgm(path)
        with Image.open(path) as im:
            if im.mode in ("RGB", "RGBA"):
                rgb = np.asarray(im.convert("RGB"), dtype=np.float32)
                gray = rgb[..., 0] * LUMA[0] + rgb[..., 1] * LUMA[1] + rgb[..., 2] * LUMA[2]
                return (gray / 255.0).astype(np.float32)
            arr = np.asarray(im.convert("I"), dtype=np.float32)
            scale = 65535.0 if im.mode in ("I", "I;16") else 255.0
            return (arr / scale).astype(np.float32)
    except DatasetError:
        raise
    except Exception as exc:
        raise DatasetError(f"cannot read image {path}: {exc}") from exc


def write_gray(path, gray: np.ndarray):
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        _write_pgm(path, gray)
    else:
        arr = np.clip(np.rint(gray * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(arr, mode="L").save(path)


def write_mask(path, mask: np.ndarray):
    write_gray(path, mask.astype(np.float32))


def write_sample(directory, sample: Sample, fmt: str = "png"):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_gray(directory / f"{sample.source_id}.img.{fmt}", sample.image)
    write_mask(directory / f"{sample.source_id}.mask.{fmt}", sample.mask)


def load_dataset(dir_path) -> list:
    """Read `<id>.img.*` / `<id>.mask.*` pairs, sorted by id.

    Masks binarize at half intensity.  Ids with a missing counterpart
    raise with the full orphan list.
    """
    root = Path(dir_path)
    if not root.is_dir():
        raise DatasetError(f"dataset directory not found: {root}")
    images, masks = {}, {}
    for p in sorted(root.iterdir()):
        m = re.fullmatch(r"(.+)\.(img|mask)\.(png|pgm)", p.name, re.IGNORECASE)
        if not m:
            continue
        sid, kind = m.group(1), m.group(2).lower()
        (images if kind == "img" else masks)[sid] = p
    orphans = sorted(set(images) ^ set(masks))
    if orphans:
        raise DatasetError(f"unpaired dataset ids in {root}: {orphans}")
    samples = []
    for sid in sorted(images):
        img = read_gray(images[sid])
        msk = (read_gray(masks[sid]) >= 128.0 / 255.0).astype(np.uint8)
        if img.shape != msk.shape:
            raise DatasetError(
                f"{sid}: image {img.shape} and mask {msk.shape} differ in size"
            )
        samples.append(Sample(img, msk, source_id=sid))
    return samples
