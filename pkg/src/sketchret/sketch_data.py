"""Stroke-5 sketch data model, rasterization, and corpus file formats.

A sketch is an ordered list of points ``(dx, dy, p1, p2, p3)`` where the
pen state is a one-hot 3-vector over {down, lift, end}. The pen state of
point i governs the segment from point i to point i+1: only segments whose
leading point has pen=down are drawn. The implicit decoding start token
``P0 = (0, 0, down)`` is never stored.

Corpora live on disk as a manifest (JSON), one ``.npy`` raw array per
photo (kept raw so round trips are bit-exact), and an NDJSON file with one
sketch per line: ``{"id": ..., "photo": ..., "points": [[dx,dy,p1,p2,p3], ...]}``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import kernels

PEN_DOWN = 0
PEN_LIFT = 1
PEN_END = 2

DEFAULT_T_MAX = 100


class SketchValidationError(ValueError):
    pass


class CorpusFormatError(ValueError):
    pass


def validate_points(points: np.ndarray, t_max: int | None = None) -> np.ndarray:
    """Check the stroke-5 invariants; returns the validated float64 array."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 5:
        raise SketchValidationError(f"expected (T, 5) points, got shape {points.shape}")
    t = points.shape[0]
    if t < 1:
        raise SketchValidationError("sketch must contain at least one point")
    if t_max is not None and t > t_max:
        raise SketchValidationError(f"sequence length {t} exceeds T_max={t_max}")
    pen = points[:, 2:5]
    if not (np.all((pen == 0.0) | (pen == 1.0)) and np.all(pen.sum(axis=1) == 1.0)):
        raise SketchValidationError("pen state must be an exact one-hot 3-vector")
    ends = np.flatnonzero(pen[:, PEN_END] == 1.0)
    if ends.size and ends[0] != t - 1:
        raise SketchValidationError("points found after the end-of-sketch pen state")
    if not np.all(np.isfinite(points[:, :2])):
        raise SketchValidationError("non-finite offsets")
    return points


class StrokeSequence:
    """Immutable stroke-5 point sequence."""

    __slots__ = ("points",)

    def __init__(self, points, t_max: int | None = None):
        self.points = validate_points(points, t_max=t_max)
        self.points.setflags(write=False)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def offsets(self) -> np.ndarray:
        return self.points[:, :2]

    @property
    def pen_states(self) -> np.ndarray:
        return np.argmax(self.points[:, 2:5], axis=1)

    def scaled(self, factor: float) -> "StrokeSequence":
        pts = self.points.copy()
        pts[:, :2] *= factor
        return StrokeSequence(pts)


def make_points(offsets: np.ndarray, pen_states: np.ndarray) -> np.ndarray:
    """Assemble a stroke-5 array from offsets and integer pen states."""
    offsets = np.asarray(offsets, dtype=np.float64)
    pen_states = np.asarray(pen_states, dtype=np.int64)
    pts = np.zeros((offsets.shape[0], 5))
    pts[:, :2] = offsets
    pts[np.arange(len(pen_states)), 2 + pen_states] = 1.0
    return pts


def to_absolute(seq: StrokeSequence) -> np.ndarray:
    """Cumulative-sum offsets into absolute coordinates starting from (0, 0)."""
    return np.cumsum(seq.offsets, axis=0)


def offsets_from_absolute(coords: np.ndarray) -> np.ndarray:
    """Inverse of :func:`to_absolute` for a coordinate list."""
    coords = np.asarray(coords, dtype=np.float64)
    out = coords.copy()
    out[1:] = coords[1:] - coords[:-1]
    return out


def normalize_offsets(dataset: "LabeledPairSet"):
    """Divide all sketch offsets by the population std of every offset value.

    Returns (normalized dataset, scale); multiplying offsets back by the
    scale restores the originals.
    """
    values = np.concatenate([p.sketch.offsets.reshape(-1) for p in dataset.pairs])
    if values.size == 0 or not np.any(values != 0.0):
        raise SketchValidationError("degenerate sketch corpus: all offsets are zero")
    scale = float(np.std(values))
    pairs = [
        LabeledPair(p.id, p.photo, p.sketch.scaled(1.0 / scale)) for p in dataset.pairs
    ]
    return LabeledPairSet(pairs), scale


def rasterize(
    seq: StrokeSequence,
    height: int = 64,
    width: int = 64,
    pad: int = 2,
    antialias: bool = False,
) -> np.ndarray:
    """Render a stroke sequence to an (H, W, 3) image in [0, 1].

    The rendered polyline starts at the implicit pen-down start token
    (0, 0) followed by the cumulative-sum coordinates. The polyline is
    uniformly scaled (aspect preserved) to fit the padded canvas and
    centered; segments whose leading point has pen=down are drawn as 1px
    Bresenham lines with value 1 on a 0 background. Deterministic, and
    invariant to uniform translation of the drawing.
    """
    coords = np.vstack([np.zeros((1, 2)), to_absolute(seq)])
    pens = np.concatenate([[PEN_DOWN], seq.pen_states])
    return _rasterize_polyline(coords, pens, height, width, pad, antialias)


def _rasterize_polyline(
    coords: np.ndarray,
    pens: np.ndarray,
    height: int,
    width: int,
    pad: int,
    antialias: bool = False,
) -> np.ndarray:
    if height <= 2 * pad or width <= 2 * pad:
        raise ValueError(f"canvas {height}x{width} too small for pad={pad}")
    if antialias:
        fine = _rasterize_polyline(coords, pens, 2 * height, 2 * width, 2 * pad)
        return fine.reshape(height, 2, width, 2, 3).mean(axis=(1, 3))

    lo = coords.min(axis=0)
    hi = coords.max(axis=0)
    extent = hi - lo
    avail_x = width - 1 - 2 * pad
    avail_y = height - 1 - 2 * pad
    scales = []
    if extent[0] > 0 and avail_x > 0:
        scales.append(avail_x / extent[0])
    if extent[1] > 0 and avail_y > 0:
        scales.append(avail_y / extent[1])
    scale = min(scales) if scales else 0.0

    centered = (coords - (lo + hi) / 2.0) * scale
    cols = np.floor(centered[:, 0] + (width - 1) / 2.0 + 0.5).astype(np.int64)
    rows = np.floor(centered[:, 1] + (height - 1) / 2.0 + 0.5).astype(np.int64)

    canvas = np.zeros((height, width))
    if scale == 0.0:
        canvas[rows[0], cols[0]] = 1.0
    else:
        drawn = np.flatnonzero(pens[:-1] == PEN_DOWN)
        if drawn.size:
            kernels.draw_segments(canvas, cols[drawn], rows[drawn], cols[drawn + 1], rows[drawn + 1])
    return np.repeat(canvas[:, :, None], 3, axis=2)


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LabeledPair:
    id: str
    photo: np.ndarray  # (H, W, 3) in [0, 1]
    sketch: StrokeSequence


class LabeledPairSet:
    def __init__(self, pairs):
        pairs = list(pairs)
        ids = [p.id for p in pairs]
        if len(set(ids)) != len(ids):
            raise CorpusFormatError("duplicate pair ids")
        self.pairs = tuple(pairs)

    def __len__(self):
        return len(self.pairs)

    def __getitem__(self, i):
        return self.pairs[i]

    @property
    def ids(self):
        return [p.id for p in self.pairs]

    @property
    def photos(self):
        return [p.photo for p in self.pairs]

    @property
    def sketches(self):
        return [p.sketch for p in self.pairs]

    def subset(self, indices):
        return LabeledPairSet([self.pairs[i] for i in indices])


class UnlabeledPhotoSet:
    def __init__(self, ids, photos):
        ids = list(ids)
        if len(set(ids)) != len(ids):
            raise CorpusFormatError("duplicate photo ids")
        self.ids = ids
        self.photos = list(photos)

    def __len__(self):
        return len(self.ids)

    def subset(self, indices):
        return UnlabeledPhotoSet([self.ids[i] for i in indices], [self.photos[i] for i in indices])


@dataclass
class Corpus:
    labeled: LabeledPairSet
    unlabeled: UnlabeledPhotoSet
    test: LabeledPairSet


# ---------------------------------------------------------------------------
# on-disk format
# ---------------------------------------------------------------------------


def _write_sketch_line(fh, pair_id: str, photo_id: str, sketch: StrokeSequence):
    record = {"id": pair_id, "photo": photo_id, "points": sketch.points.tolist()}
    fh.write(json.dumps(record) + "\n")


def save_corpus(path: str, corpus: Corpus):
    """Write manifest + per-photo .npy arrays + sketches NDJSON under ``path``."""
    os.makedirs(os.path.join(path, "photos"), exist_ok=True)
    manifest = {"photos": []}

    def store_photo(photo_id, photo, split):
        rel = os.path.join("photos", f"{photo_id}.npy")
        np.save(os.path.join(path, rel), np.asarray(photo, dtype=np.float64))
        manifest["photos"].append({"id": photo_id, "path": rel, "split": split})

    with open(os.path.join(path, "sketches.ndjson"), "w", encoding="utf-8") as fh:
        for pair in corpus.labeled.pairs:
            store_photo(pair.id, pair.photo, "labeled")
            _write_sketch_line(fh, pair.id, pair.id, pair.sketch)
        for pair in corpus.test.pairs:
            store_photo(pair.id, pair.photo, "test")
            _write_sketch_line(fh, pair.id, pair.id, pair.sketch)
    for photo_id, photo in zip(corpus.unlabeled.ids, corpus.unlabeled.photos):
        store_photo(photo_id, photo, "unlabeled")
    with open(os.path.join(path, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def load_sketches_ndjson(path: str) -> dict:
    """Parse an NDJSON sketch file into {id: (photo_id, StrokeSequence)}.

    Raises :class:`CorpusFormatError` naming the offending line on any
    malformed record. An empty file yields an empty dict.
    """
    sketches = {}
    if not os.path.exists(path):
        return sketches
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            try:
                seq = StrokeSequence(np.array(record["points"], dtype=np.float64))
            except (KeyError, SketchValidationError, ValueError) as exc:
                raise CorpusFormatError(f"line {lineno}: {exc}") from exc
            if record["id"] in sketches:
                raise CorpusFormatError(f"line {lineno}: duplicate sketch id {record['id']!r}")
            sketches[record["id"]] = (record["photo"], seq)
    return sketches


def load_corpus(path: str) -> Corpus:
    manifest_path = os.path.join(path, "manifest.json")
    if not os.path.exists(manifest_path):
        raise CorpusFormatError(f"no manifest.json under {path}")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    sketches = load_sketches_ndjson(os.path.join(path, "sketches.ndjson"))

    labeled, test = [], []
    unlabeled_ids, unlabeled_photos = [], []
    for entry in manifest["photos"]:
        photo = np.load(os.path.join(path, entry["path"]))
        if entry["split"] == "unlabeled":
            unlabeled_ids.append(entry["id"])
            unlabeled_photos.append(photo)
            continue
        if entry["id"] not in sketches:
            raise CorpusFormatError(f"photo {entry['id']!r} in split {entry['split']} has no sketch")
        _, seq = sketches[entry["id"]]
        target = labeled if entry["split"] == "labeled" else test
        target.append(LabeledPair(entry["id"], photo, seq))
    return Corpus(
        labeled=LabeledPairSet(labeled),
        unlabeled=UnlabeledPhotoSet(unlabeled_ids, unlabeled_photos),
        test=LabeledPairSet(test),
    )
