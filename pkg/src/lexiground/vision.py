"""Synthetic shapes dataset and low-level visual features.

Objects are single solid shapes on a white 128x128 canvas: one of six
colours crossed with one of three shapes, with seeded jitter on hue,
saturation, value, size, rotation, and position.  The feature vector for an
image concatenates a 16x4x4 joint HSV histogram over the object's bounding
box with a 1024-bin visual-word histogram, both L1-normalized, for 1280
dimensions total.

Visual words come from dense gradient-orientation descriptors: 8 signed
orientation bins accumulated over 4x4-pixel cells, 2x2 cells per block on a
4-pixel step, so a 128x128 image yields a 31x31 grid of 961 descriptors of
32 dimensions each.  Descriptors are L2-normalized unless flat; flat
descriptors are dropped before quantization, which keeps the word histogram
insensitive to hue (edge structure survives normalization, uniform regions
vanish).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv
from PIL import Image, ImageDraw
from sklearn.cluster import KMeans

COLORS = ("black", "blue", "green", "orange", "purple", "red")
SHAPES = ("circle", "square", "triangle")

IMAGE_SIZE = 128
HSV_BINS = (16, 4, 4)
HSV_DIM = 256
DICTIONARY_SIZE = 1024
DESCRIPTOR_DIM = 32
FEATURE_DIM = HSV_DIM + DICTIONARY_SIZE

CELL_PX = 4
BLOCK_CELLS = 2
STEP_PX = 4
ORIENTATION_BINS = 8

# objects the dictionary is trained on are rendered from this reserved seed,
# never from a dataset seed
DICTIONARY_SEED = 271828
DICTIONARY_IMAGES_PER_CELL = 5

_FLAT_NORM = 1e-8

# base HSV per colour, hue centred in its histogram bin so jitter cannot
# cross a bin edge; black's hue is irrelevant (tiny sat/val) but centred too
_PALETTE = {
    "black": (11.25, 0.05, 0.10),
    "blue": (236.25, 0.85, 0.875),
    "green": (123.75, 0.85, 0.875),
    "orange": (33.75, 0.85, 0.875),
    "purple": (281.25, 0.85, 0.875),
    "red": (11.25, 0.85, 0.875),
}

_BASE_RADIUS = 32
_CENTER = IMAGE_SIZE // 2


class DegenerateInput(ValueError):
    """An image with no usable object pixels."""


class InsufficientData(ValueError):
    """Too few descriptors to build a dictionary of the requested size."""


@dataclass(frozen=True)
class ObjectSpec:
    """What to render: colour, shape, seed, and jitter magnitudes."""

    color: str
    shape: str
    seed: int
    size_jitter_px: float = 6.0
    # drawn roughly upright; orientation words stay comparable across
    # instances of a shape
    rotation_deg: float = 35.0
    hue_noise_deg: float = 4.0
    sat_noise: float = 0.04
    val_noise: float = 0.04
    position_jitter_px: float = 8.0
    # hand-drawn look: relative radial jitter on outline points
    wobble: float = 0.14
    # fraction of object pixels darkened into pen specks
    speckle: float = 0.015
    # drawings come in two sizes; the minority small mode has its own
    # local-edge statistics
    small_fraction: float = 0.2
    small_radius_px: float = 16.0
    small_radius_jitter_px: float = 3.0

    def __post_init__(self) -> None:
        if self.color not in COLORS:
            raise ValueError(f"unknown colour {self.color!r}")
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")


@dataclass(frozen=True)
class ObjectImage:
    """Rendered pixels plus the object's tight bounding box.

    ``bbox`` is (x0, y0, x1, y1) with exclusive right/bottom edges.
    """

    pixels: np.ndarray
    bbox: tuple[int, int, int, int]

    def __post_init__(self) -> None:
        h, w = self.pixels.shape[:2]
        x0, y0, x1, y1 = self.bbox
        if not (0 <= x0 < x1 <= w and 0 <= y0 < y1 <= h):
            raise DegenerateInput(f"bbox {self.bbox} outside {w}x{h} image")


@dataclass(frozen=True)
class VisualDictionary:
    centers: np.ndarray

    def __post_init__(self) -> None:
        if self.centers.ndim != 2 or self.centers.shape[1] != DESCRIPTOR_DIM:
            raise ValueError(
                f"centers must be (k, {DESCRIPTOR_DIM}), got {self.centers.shape}"
            )

    @property
    def size(self) -> int:
        return int(self.centers.shape[0])


@dataclass(frozen=True)
class DatasetObject:
    object_id: str
    spec: ObjectSpec
    image: ObjectImage

    @property
    def attributes(self) -> tuple[str, str]:
        return (self.spec.color, self.spec.shape)


# ---------------------------------------------------------------------------
# rendering


_CIRCLE_POINTS = 28
_EDGE_SEGMENTS = 6


def _corner_angles(shape: str, rotation: float) -> np.ndarray:
    if shape == "square":
        return rotation + np.deg2rad([45.0, 135.0, 225.0, 315.0])
    return rotation + np.deg2rad([90.0, 210.0, 330.0])


def _outline(
    shape: str,
    cx: float,
    cy: float,
    radius: float,
    rotation: float,
    wobble: float,
    rng: np.random.Generator,
) -> list[tuple[float, float]]:
    """Outline vertices with hand-drawn irregularity.

    Deformation is low-frequency on purpose: a hand-drawn shape deviates
    globally but stays locally smooth, which keeps local edge statistics
    shape-informative.  Circles get a smooth two-harmonic radial
    modulation; squares and triangles keep exact corners but their edges
    bow into shallow arcs.
    """
    if shape == "circle":
        amps = rng.uniform(0.0, wobble, 2)
        phases = rng.uniform(0.0, 2 * np.pi, 2)
        theta = rotation + np.linspace(
            0, 2 * np.pi, _CIRCLE_POINTS, endpoint=False
        )
        radii = radius * (
            1.0
            + amps[0] * np.sin(2 * theta + phases[0])
            + amps[1] * np.sin(3 * theta + phases[1])
        )
        return [
            (cx + r * np.cos(a), cy - r * np.sin(a))
            for a, r in zip(theta, radii)
        ]
    corners = [
        (cx + radius * np.cos(a), cy - radius * np.sin(a))
        for a in _corner_angles(shape, rotation)
    ]
    points: list[tuple[float, float]] = []
    for i, (x0, y0) in enumerate(corners):
        x1, y1 = corners[(i + 1) % len(corners)]
        ex, ey = x1 - x0, y1 - y0
        length = np.hypot(ex, ey)
        nx, ny = -ey / length, ex / length
        bow = rng.uniform(-wobble, wobble) * length * 0.5
        points.append((x0, y0))
        for j in range(1, _EDGE_SEGMENTS):
            t = j / _EDGE_SEGMENTS
            off = bow * np.sin(np.pi * t)
            points.append((x0 + ex * t + nx * off, y0 + ey * t + ny * off))
    return points


def render_object(spec: ObjectSpec) -> ObjectImage:
    """Rasterize a spec.  Pure: the same spec always gives the same pixels.

    Jitter values are drawn in a fixed order independent of colour and
    shape, so two specs differing only in those fields share geometry for
    equal seeds.
    """
    rng = np.random.default_rng(spec.seed)
    hue_off = rng.uniform(-spec.hue_noise_deg, spec.hue_noise_deg)
    sat_off = rng.uniform(-spec.sat_noise, spec.sat_noise)
    val_off = rng.uniform(-spec.val_noise, spec.val_noise)
    small = rng.random() < spec.small_fraction
    if small:
        size_off = rng.uniform(
            -spec.small_radius_jitter_px, spec.small_radius_jitter_px
        )
        radius = spec.small_radius_px + size_off
    else:
        size_off = rng.uniform(-spec.size_jitter_px, spec.size_jitter_px)
        radius = _BASE_RADIUS + size_off
    cx_off = rng.uniform(-spec.position_jitter_px, spec.position_jitter_px)
    cy_off = rng.uniform(-spec.position_jitter_px, spec.position_jitter_px)
    rotation = np.deg2rad(rng.uniform(-spec.rotation_deg, spec.rotation_deg))

    h0, s0, v0 = _PALETTE[spec.color]
    hue = ((h0 + hue_off) % 360.0) / 360.0
    sat = float(np.clip(s0 + sat_off, 0.0, 1.0))
    val = float(np.clip(v0 + val_off, 0.0, 1.0))
    rgb = tuple(
        int(round(c * 255)) for c in hsv_to_rgb((hue, sat, val))
    )

    cx = _CENTER + cx_off
    cy = _CENTER + cy_off

    img = Image.new("RGB", (IMAGE_SIZE, IMAGE_SIZE), (255, 255, 255))
    draw = ImageDraw.Draw(img)
    draw.polygon(
        _outline(spec.shape, cx, cy, radius, rotation, spec.wobble, rng),
        fill=rgb,
    )

    pixels = np.asarray(img, dtype=np.uint8)
    mask = np.any(pixels != 255, axis=2)
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        raise DegenerateInput("rendered object left no visible pixels")
    if spec.speckle > 0:
        # pen specks: sparse 25% darker dots inside the object; value-bin
        # mass moved is bounded by the speckle fraction, hue untouched
        dots = mask & (rng.random(mask.shape) < spec.speckle)
        pixels = pixels.astype(np.float64)
        pixels[dots] *= 0.75
        pixels = pixels.round().astype(np.uint8)
    bbox = (int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)
    return ObjectImage(pixels, bbox)


# ---------------------------------------------------------------------------
# HSV block


def _background_mask(hsv: np.ndarray) -> np.ndarray:
    """True where a pixel belongs to the object, not the white ground."""
    return ~((hsv[..., 1] < 0.2) & (hsv[..., 2] > 0.8))


def hsv_histogram(img: ObjectImage) -> np.ndarray:
    """Joint 16x4x4 HSV histogram over object pixels inside the bbox.

    Near-white pixels are excluded so that shapes whose bbox includes
    background corners (circles, rotated triangles) bin the same colour
    mass as squares.  Hue is undefined for unsaturated pixels (8-bit
    rounding scatters it), so pixels below 0.2 saturation fold into hue
    bin 0; dark objects then always share one bin across renders.
    """
    x0, y0, x1, y1 = img.bbox
    patch = img.pixels[y0:y1, x0:x1].astype(np.float64) / 255.0
    if patch.size == 0:
        raise DegenerateInput("empty bounding box")
    hsv = rgb_to_hsv(patch)
    keep = _background_mask(hsv)
    if not keep.any():
        raise DegenerateInput("bounding box contains only background")
    vals = hsv[keep]
    hb, sb, vb = HSV_BINS
    hi = np.minimum((vals[:, 0] * hb).astype(np.intp), hb - 1)
    hi[vals[:, 1] < 0.2] = 0
    si = np.minimum((vals[:, 1] * sb).astype(np.intp), sb - 1)
    vi = np.minimum((vals[:, 2] * vb).astype(np.intp), vb - 1)
    hist = np.bincount(hi * sb * vb + si * vb + vi, minlength=HSV_DIM)
    return hist.astype(np.float64) / hist.sum()


# ---------------------------------------------------------------------------
# dense descriptors and visual words


def dense_descriptors(img: ObjectImage) -> np.ndarray:
    """All 961 block descriptors of a 128x128 image, row-major grid order.

    Layout: intensity is the mean of RGB; gradients via central
    differences; each pixel votes its magnitude into one of 8 signed
    orientation bins; votes are summed over 4x4 cells; a descriptor
    concatenates a 2x2 cell block (row-major), L2-normalized unless its
    norm is below 1e-8, in which case it stays all-zero.
    """
    gray = img.pixels.astype(np.float64).mean(axis=2)
    gy, gx = np.gradient(gray)
    mag = np.hypot(gx, gy)
    ori = np.arctan2(gy, gx)  # [-pi, pi]
    bins = (
        ((ori + np.pi) / (2 * np.pi) * ORIENTATION_BINS).astype(np.intp)
        % ORIENTATION_BINS
    )
    h, w = gray.shape
    votes = np.zeros((h, w, ORIENTATION_BINS))
    rows, cols = np.indices((h, w))
    votes[rows, cols, bins] = mag
    n_cells = h // CELL_PX
    cells = votes.reshape(
        n_cells, CELL_PX, n_cells, CELL_PX, ORIENTATION_BINS
    ).sum(axis=(1, 3))
    blocks = np.concatenate(
        [
            cells[:-1, :-1],
            cells[:-1, 1:],
            cells[1:, :-1],
            cells[1:, 1:],
        ],
        axis=-1,
    )
    desc = blocks.reshape(-1, DESCRIPTOR_DIM)
    norms = np.linalg.norm(desc, axis=1, keepdims=True)
    scale = np.where(norms < _FLAT_NORM, 1.0, norms)
    return desc / scale


def _informative(desc: np.ndarray) -> np.ndarray:
    return desc[np.linalg.norm(desc, axis=1) >= _FLAT_NORM]


def build_dictionary(
    seed_images: list[ObjectImage],
    k: int = DICTIONARY_SIZE,
    seed: int = 0,
    max_samples: int = 20000,
    max_iter: int = 30,
) -> VisualDictionary:
    """Cluster informative descriptors from the seed images into k words.

    Flat descriptors are dropped before clustering; fewer informative
    descriptors than k raises InsufficientData.  Deterministic for fixed
    inputs and seed.
    """
    all_desc = np.concatenate(
        [_informative(dense_descriptors(im)) for im in seed_images]
    ) if seed_images else np.zeros((0, DESCRIPTOR_DIM))
    if all_desc.shape[0] < k:
        raise InsufficientData(
            f"{all_desc.shape[0]} informative descriptors < {k} words"
        )
    if all_desc.shape[0] > max_samples:
        rng = np.random.default_rng(seed)
        idx = rng.choice(all_desc.shape[0], size=max_samples, replace=False)
        all_desc = all_desc[np.sort(idx)]
    km = KMeans(
        n_clusters=k,
        n_init=1,
        max_iter=max_iter,
        random_state=seed,
        algorithm="lloyd",
    ).fit(all_desc)
    return VisualDictionary(km.cluster_centers_.astype(np.float64))


def _assign_words(desc: np.ndarray, dictionary: VisualDictionary) -> np.ndarray:
    centers = dictionary.centers
    d2 = (
        np.sum(desc**2, axis=1, keepdims=True)
        - 2.0 * desc @ centers.T
        + np.sum(centers**2, axis=1)
    )
    return np.argmin(d2, axis=1)


def extract_features(
    img: ObjectImage, dictionary: VisualDictionary
) -> np.ndarray:
    """The 1280-dim vector: [HSV histogram | visual-word histogram].

    Both blocks are L1-normalized.  The word block counts nearest centers
    over the image's informative descriptors only; an image with none
    (nothing but flat regions) is degenerate.
    """
    hsv = hsv_histogram(img)
    desc = _informative(dense_descriptors(img))
    if desc.shape[0] == 0:
        raise DegenerateInput("image has no informative descriptors")
    words = _assign_words(desc, dictionary)
    word_hist = np.bincount(words, minlength=dictionary.size).astype(np.float64)
    return np.concatenate([hsv, word_hist / word_hist.sum()])


# ---------------------------------------------------------------------------
# dataset


def _cell_quota(count: int) -> dict[tuple[str, str], int]:
    """Per-(colour, shape) image counts, as balanced as the total allows.

    With the default 600: every cell gets 33 or 34, every colour exactly
    100, every shape exactly 200.
    """
    cells = [(c, s) for c in COLORS for s in SHAPES]
    base, extra = divmod(count, len(cells))
    quota = {cell: base for cell in cells}
    # spread remainders so colour and shape marginals stay as even as
    # possible: the i-th colour's extra goes to shape i mod 3
    granted = 0
    for ci, c in enumerate(COLORS):
        if granted >= extra:
            break
        quota[(c, SHAPES[ci % len(SHAPES)])] += 1
        granted += 1
    for cell in cells:
        if granted >= extra:
            break
        if quota[cell] == base:
            quota[cell] += 1
            granted += 1
    return quota


def dataset_specs(count: int = 600, seed: int = 0) -> list[ObjectSpec]:
    """Deterministic balanced spec list, cells interleaved round-robin."""
    quota = _cell_quota(count)
    seeds = np.random.SeedSequence(seed).generate_state(count, np.uint64)
    specs: list[ObjectSpec] = []
    i = 0
    for rnd in range(max(quota.values())):
        for c in COLORS:
            for s in SHAPES:
                if rnd < quota[(c, s)]:
                    specs.append(ObjectSpec(c, s, int(seeds[i])))
                    i += 1
    return specs


def build_dataset(count: int = 600, seed: int = 0) -> list[DatasetObject]:
    return [
        DatasetObject(f"obj-{i:03d}", spec, render_object(spec))
        for i, spec in enumerate(dataset_specs(count, seed))
    ]


def dictionary_seed_images(
    seed: int = DICTIONARY_SEED,
    per_cell: int = DICTIONARY_IMAGES_PER_CELL,
) -> list[ObjectImage]:
    """The reserved image set the word dictionary is trained on."""
    n = per_cell * len(COLORS) * len(SHAPES)
    seeds = np.random.SeedSequence(seed).generate_state(n, np.uint64)
    images = []
    i = 0
    for c in COLORS:
        for s in SHAPES:
            for _ in range(per_cell):
                images.append(render_object(ObjectSpec(c, s, int(seeds[i]))))
                i += 1
    return images


def write_dataset(objects: list[DatasetObject], out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "manifest.jsonl", "w") as fh:
        for obj in objects:
            Image.fromarray(obj.image.pixels).save(out / f"{obj.object_id}.png")
            fh.write(
                json.dumps(
                    {
                        "id": obj.object_id,
                        "color": obj.spec.color,
                        "shape": obj.spec.shape,
                        "seed": obj.spec.seed,
                        "bbox": list(obj.image.bbox),
                    }
                )
                + "\n"
            )


def read_dataset(in_dir: str | Path) -> list[DatasetObject]:
    src = Path(in_dir)
    objects = []
    with open(src / "manifest.jsonl") as fh:
        for line in fh:
            row = json.loads(line)
            pixels = np.asarray(
                Image.open(src / f"{row['id']}.png").convert("RGB"),
                dtype=np.uint8,
            )
            objects.append(
                DatasetObject(
                    row["id"],
                    ObjectSpec(row["color"], row["shape"], row["seed"]),
                    ObjectImage(pixels, tuple(row["bbox"])),
                )
            )
    return objects


DICTIONARY_FORMAT_VERSION = 1


def save_dictionary(dictionary: VisualDictionary, path: str | Path) -> None:
    np.savez_compressed(
        path,
        version=np.int64(DICTIONARY_FORMAT_VERSION),
        centers=dictionary.centers,
    )


def load_dictionary(path: str | Path) -> VisualDictionary:
    with np.load(path) as data:
        version = int(data["version"])
        if version != DICTIONARY_FORMAT_VERSION:
            raise ValueError(f"unsupported dictionary format {version}")
        return VisualDictionary(data["centers"])
