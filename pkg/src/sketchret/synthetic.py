"""Procedural photo-sketch pair generator for desk-scale experiments.

Each instance is a randomly parameterized shape (polygon, ellipse, or a
composite of two primitives). The photo is a filled, anti-aliased,
texture-backed rendering; the sketch is the outline converted to stroke-5
with optional offset jitter and vertex dropout. Photo and sketch therefore
agree at instance level but differ in style. Everything is a pure function
of (spec, seed).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .sketch_data import (
    PEN_DOWN,
    PEN_END,
    PEN_LIFT,
    Corpus,
    LabeledPair,
    LabeledPairSet,
    StrokeSequence,
    UnlabeledPhotoSet,
    make_points,
    offsets_from_absolute,
)

FAMILIES = ("polygon", "ellipse", "composite")


@dataclass(frozen=True)
class ShapeSpec:
    families: tuple = FAMILIES
    k_range: tuple = (3, 8)  # polygon vertex count, inclusive
    radial_range: tuple = (0.55, 1.0)  # per-vertex radius factor
    aspect_range: tuple = (0.55, 1.0)
    size_range: tuple = (0.88, 1.0)  # fraction of the padded canvas the shape fills
    offset_frac: float = 0.03  # max random shift of the shape, fraction of canvas
    jitter: float = 0.01  # sigma of Gaussian noise on sketch offsets (canvas units)
    dropout: float = 0.1  # per-vertex drop probability, capped at 0.2
    fill_range: tuple = (0.5, 0.95)
    tint: float = 0.08  # per-channel fill variation
    texture: float = 0.05  # background low-frequency texture amplitude
    noise: float = 0.015  # background white-noise amplitude
    image_size: int = 64
    photo_pad: int = 2

    def validate(self):
        if not self.families or any(f not in FAMILIES for f in self.families):
            raise ValueError(f"invalid shape families {self.families}; known: {FAMILIES}")
        if not (3 <= self.k_range[0] <= self.k_range[1] <= 8):
            raise ValueError(f"polygon k range must sit inside [3, 8], got {self.k_range}")
        if not (0.0 <= self.dropout <= 0.2):
            raise ValueError(f"vertex dropout must be in [0, 0.2], got {self.dropout}")
        if self.jitter < 0:
            raise ValueError("jitter must be nonnegative")
        for name in ("radial_range", "aspect_range", "size_range", "fill_range"):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi):
                raise ValueError(f"invalid {name}: {(lo, hi)}")
        if self.image_size <= 2 * self.photo_pad:
            raise ValueError("image_size too small for photo_pad")
        return self


def _polygon_vertices(rng, k, radial_range, aspect_range):
    angles = np.linspace(0.0, 2.0 * np.pi, k, endpoint=False) + rng.uniform(0, 2 * np.pi)
    radii = rng.uniform(radial_range[0], radial_range[1], size=k)
    sx = 1.0
    sy = rng.uniform(*aspect_range)
    pts = np.stack([np.cos(angles) * radii * sx, np.sin(angles) * radii * sy], axis=1)
    return pts


def _ellipse_vertices(rng, n, aspect_range):
    phase = rng.uniform(0, 2 * np.pi)
    angles = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False) + phase
    b = rng.uniform(*aspect_range)
    rot = rng.uniform(0, np.pi)
    radii = rng.uniform(0.78, 1.0, size=n)  # mild bumps keep instances unique
    pts = np.stack([np.cos(angles) * radii, np.sin(angles) * radii * b], axis=1)
    c, s = np.cos(rot), np.sin(rot)
    return pts @ np.array([[c, s], [-s, c]])


def sample_geometry(spec: ShapeSpec, rng: np.random.Generator):
    """Draw the instance geometry: a list of closed loops (k_i, 2) in unit space."""
    family = spec.families[rng.integers(len(spec.families))]
    if family == "polygon":
        k = int(rng.integers(spec.k_range[0], spec.k_range[1] + 1))
        loops = [_polygon_vertices(rng, k, spec.radial_range, spec.aspect_range)]
    elif family == "ellipse":
        loops = [_ellipse_vertices(rng, 12, spec.aspect_range)]
    else:  # composite: two primitives side by side
        k = int(rng.integers(spec.k_range[0], spec.k_range[1] + 1))
        first = _polygon_vertices(rng, k, spec.radial_range, spec.aspect_range) * 0.62
        second = _ellipse_vertices(rng, 8, spec.aspect_range) * 0.5
        shift = rng.uniform(0.55, 0.8)
        angle = rng.uniform(0, 2 * np.pi)
        direction = np.array([np.cos(angle), np.sin(angle)])
        loops = [first - shift * direction, second + shift * direction]
    return family, loops


def _fit_to_canvas(loops, size, pad, scale_factor, shift):
    """Uniformly scale/center the loops onto the pixel canvas (same convention
    as the sketch rasterizer), then apply the photo's own scale/shift jitter."""
    allpts = np.concatenate(loops, axis=0)
    lo, hi = allpts.min(axis=0), allpts.max(axis=0)
    extent = np.maximum(hi - lo, 1e-9)
    avail = size - 1 - 2 * pad
    s = avail / extent.max() * scale_factor
    center = (lo + hi) / 2.0
    out = []
    for loop in loops:
        pts = (loop - center) * s
        pts = pts + (size - 1) / 2.0 + shift
        out.append(pts)
    return out


def _point_in_loops(px, py, loops):
    """Even-odd point-in-union test, vectorized over flat pixel arrays."""
    inside = np.zeros(px.shape, dtype=bool)
    for loop in loops:
        crossings = np.zeros(px.shape, dtype=np.int64)
        n = len(loop)
        for i in range(n):
            x1, y1 = loop[i]
            x2, y2 = loop[(i + 1) % n]
            cond = (y1 > py) != (y2 > py)
            with np.errstate(divide="ignore", invalid="ignore"):
                xcross = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
            crossings += (cond & (px < xcross)).astype(np.int64)
        inside |= crossings % 2 == 1
    return inside


def _render_photo(loops, spec: ShapeSpec, rng: np.random.Generator) -> np.ndarray:
    size = spec.image_size
    factor = 4  # supersampling for anti-aliased edges
    n = size * factor
    axis = (np.arange(n) + 0.5) / factor - 0.5
    px, py = np.meshgrid(axis, axis)
    mask = _point_in_loops(px.reshape(-1), py.reshape(-1), loops).reshape(n, n)
    alpha = mask.reshape(size, factor, size, factor).mean(axis=(1, 3))

    base = rng.uniform(0.05, 0.18)
    lowfreq = rng.normal(size=(8, 8))
    reps = -(-size // 8)  # ceil, so any canvas size tiles cleanly
    texture = np.kron(lowfreq, np.ones((reps, reps)))[:size, :size] * spec.texture
    fill = rng.uniform(*spec.fill_range)
    tint = rng.uniform(-spec.tint, spec.tint, size=3)
    noise = rng.normal(size=(size, size)) * spec.noise

    photo = np.empty((size, size, 3))
    bg = base + texture + noise
    for ch in range(3):
        photo[:, :, ch] = bg + alpha * (fill + tint[ch] - bg)
    return np.clip(photo, 0.0, 1.0)


def _outline_to_stroke5(loops, spec: ShapeSpec, rng: np.random.Generator) -> StrokeSequence:
    coords = []
    pens = []
    for li, loop in enumerate(loops):
        keep = list(range(len(loop)))
        if spec.dropout > 0 and len(loop) > 3:
            drop = rng.random(len(loop)) < spec.dropout
            drop[0] = False
            kept = [i for i in keep if not drop[i]]
            keep = kept if len(kept) >= 3 else keep
        path = [loop[i] for i in keep] + [loop[keep[0]]]  # close the loop
        for j, vertex in enumerate(path):
            coords.append(vertex)
            last_in_loop = j == len(path) - 1
            if not last_in_loop:
                pens.append(PEN_DOWN)
            else:
                pens.append(PEN_END if li == len(loops) - 1 else PEN_LIFT)
    coords = np.array(coords)
    coords = coords - coords[0]  # pen starts at the first vertex (stroke-5 origin)
    offsets = offsets_from_absolute(coords)
    if spec.jitter > 0:
        offsets = offsets + rng.normal(0.0, spec.jitter, size=offsets.shape)
    return StrokeSequence(make_points(offsets, np.array(pens)))


def generate_synthetic_pair(spec: ShapeSpec, rng: np.random.Generator):
    """One (photo, sketch) pair, fully determined by (spec, rng state)."""
    spec.validate()
    family, loops = sample_geometry(spec, rng)
    scale_factor = rng.uniform(*spec.size_range)
    shift = rng.uniform(-1.0, 1.0, size=2) * spec.offset_frac * spec.image_size
    placed = _fit_to_canvas(loops, spec.image_size, spec.photo_pad, scale_factor, shift)
    photo = _render_photo(placed, spec, rng)
    sketch = _outline_to_stroke5(loops, spec, rng)
    return photo, sketch


def _pair_rng(seed: int, split_code: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(split_code, index)))


def build_corpus(
    spec: ShapeSpec,
    n_labeled: int,
    n_unlabeled: int,
    n_test: int,
    seed: int,
) -> Corpus:
    """Deterministically build a labeled/unlabeled/test corpus from one seed."""
    spec.validate()
    labeled = []
    for i in range(n_labeled):
        photo, sketch = generate_synthetic_pair(spec, _pair_rng(seed, 0, i))
        labeled.append(LabeledPair(f"L{i:05d}", photo, sketch))
    unlabeled_ids, unlabeled_photos = [], []
    for i in range(n_unlabeled):
        photo, _ = generate_synthetic_pair(spec, _pair_rng(seed, 1, i))
        unlabeled_ids.append(f"U{i:05d}")
        unlabeled_photos.append(photo)
    test = []
    for i in range(n_test):
        photo, sketch = generate_synthetic_pair(spec, _pair_rng(seed, 2, i))
        test.append(LabeledPair(f"T{i:05d}", photo, sketch))
    return Corpus(LabeledPairSet(labeled), UnlabeledPhotoSet(unlabeled_ids, unlabeled_photos), LabeledPairSet(test))


def exact_spec(spec: ShapeSpec) -> ShapeSpec:
    """The same distribution with all style noise removed (jitter, dropout,
    placement); used by alignment-sensitive tests."""
    return replace(spec, jitter=0.0, dropout=0.0, offset_frac=0.0, size_range=(1.0, 1.0))
