"""Dataset loading, preprocessing, batching, and the synthetic toy road set.

Supported manifest formats:

* ``udacity_sim`` -- 7-column simulator log
  ``center,left,right,steering,throttle,brake,speed`` (header optional,
  auto-detected).  Image paths are resolved relative to the manifest
  directory.  Steering values are normalized to [-1, 1] by the simulator
  and are converted to radians via ``max_angle_rad`` (default 25 degrees).
* ``kaggle_sap`` -- two-column ``image_path,angle`` file.  The angle unit
  is a loader flag (``degrees``, ``radians``, or ``normalized``), never
  guessed; everything is radians internally.
* ``toy`` -- the two-column format written by :func:`generate_toy_dataset`,
  angles already in radians.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterator

import numpy as np
from PIL import Image

from .errors import ConfigError, EmptyDatasetError

log = logging.getLogger(__name__)

SOURCE_FORMATS = ("kaggle_sap", "udacity_sim", "toy")
ANGLE_UNITS = ("degrees", "radians", "normalized")

#: Full-lock steering angle used to turn normalized [-1, 1] values into radians.
DEFAULT_MAX_ANGLE_RAD = math.radians(25.0)

#: Steering offset applied to side cameras (added left, subtracted right).
DEFAULT_CAMERA_CORRECTION = 0.2


@dataclass(frozen=True)
class SampleRecord:
    center_path: Path
    steering: float  # radians
    left_path: Path | None = None
    right_path: Path | None = None


@dataclass(frozen=True)
class DatasetIndex:
    records: tuple[SampleRecord, ...]
    source_format: str
    root_path: Path
    skipped: int = 0

    def __len__(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class Batch:
    """A batch of decoded images (N,H,W,3 in [0,1]) and targets in radians."""

    images: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.shape[-1] != 3:
            raise ValueError(f"images must be N,H,W,3, got {self.images.shape}")
        if self.images.shape[0] != self.targets.shape[0] or self.n < 1:
            raise ValueError("images and targets must share a nonzero first dimension")

    @property
    def n(self) -> int:
        return self.images.shape[0]


@dataclass(frozen=True)
class Preprocessor:
    """Decode an image file to a float array: RGB, resized, scaled to [0, 1]."""

    input_shape: tuple[int, int] = (160, 320)  # (H, W)

    def __call__(self, path: Path) -> np.ndarray:
        with Image.open(path) as im:
            im = im.convert("RGB")
            h, w = self.input_shape
            if im.size != (w, h):
                im = im.resize((w, h), Image.BILINEAR)
            arr = np.asarray(im, dtype=np.float32) / 255.0
        return arr


def _valid_steering(steering: float) -> bool:
    return math.isfinite(steering) and abs(steering) <= math.pi


def _resolve(root: Path, raw: str) -> Path:
    p = Path(raw.strip())
    return p if p.is_absolute() else root / p


def _parse_udacity_row(row: list[str], root: Path, max_angle_rad: float) -> SampleRecord:
    if len(row) != 7:
        raise ValueError(f"expected 7 columns, got {len(row)}")
    steering = float(row[3]) * max_angle_rad
    left = _resolve(root, row[1]) if row[1].strip() else None
    right = _resolve(root, row[2]) if row[2].strip() else None
    return SampleRecord(
        center_path=_resolve(root, row[0]),
        steering=steering,
        left_path=left,
        right_path=right,
    )


def _parse_two_column_row(row: list[str], root: Path, to_radians: Callable[[float], float]) -> SampleRecord:
    if len(row) != 2:
        raise ValueError(f"expected 2 columns, got {len(row)}")
    return SampleRecord(center_path=_resolve(root, row[0]), steering=to_radians(float(row[1])))


def load_manifest(
    path: str | Path,
    source_format: str,
    angle_unit: str = "radians",
    max_angle_rad: float = DEFAULT_MAX_ANGLE_RAD,
) -> DatasetIndex:
    """Parse a manifest into a DatasetIndex of validated records.

    Rows are dropped (with a warning and a tally in ``index.skipped``) when
    they are malformed, reference a missing center image, or carry a
    non-finite steering value or one beyond +/- pi radians.
    """
    path = Path(path)
    if source_format not in SOURCE_FORMATS:
        raise ConfigError(f"unknown source format {source_format!r}; expected one of {SOURCE_FORMATS}")
    if angle_unit not in ANGLE_UNITS:
        raise ConfigError(f"unknown angle unit {angle_unit!r}; expected one of {ANGLE_UNITS}")
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    root = path.parent

    if source_format == "udacity_sim":
        parse = lambda row: _parse_udacity_row(row, root, max_angle_rad)
    else:
        if source_format == "toy":
            to_radians = float
        elif angle_unit == "degrees":
            to_radians = math.radians
        elif angle_unit == "normalized":
            to_radians = lambda a: a * max_angle_rad
        else:
            to_radians = float
        parse = lambda row: _parse_two_column_row(row, root, to_radians)

    records: list[SampleRecord] = []
    skipped = 0
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                record = parse(row)
            except (ValueError, IndexError) as exc:
                if lineno == 1:
                    continue  # header row
                log.warning("%s:%d: skipping malformed row (%s)", path, lineno, exc)
                skipped += 1
                continue
            if not _valid_steering(record.steering):
                log.warning("%s:%d: skipping row with invalid steering %r", path, lineno, record.steering)
                skipped += 1
                continue
            if not record.center_path.exists():
                log.warning("%s:%d: skipping row, missing image %s", path, lineno, record.center_path)
                skipped += 1
                continue
            records.append(record)

    if not records:
        raise EmptyDatasetError(f"no valid records in {path} ({skipped} rows skipped)")
    return DatasetIndex(records=tuple(records), source_format=source_format, root_path=root, skipped=skipped)


def expand_cameras(
    record: SampleRecord, correction: float = DEFAULT_CAMERA_CORRECTION
) -> list[tuple[Path, float]]:
    """Turn one record into (image_path, steering) entries, one per camera.

    The center angle is unchanged; the left camera gets ``+correction`` and
    the right camera ``-correction``.  Missing side cameras are skipped.
    """
    entries = [(record.center_path, record.steering)]
    if record.left_path is not None:
        entries.append((record.left_path, record.steering + correction))
    if record.right_path is not None:
        entries.append((record.right_path, record.steering - correction))
    return entries


def expand_index(index: DatasetIndex, correction: float = DEFAULT_CAMERA_CORRECTION) -> DatasetIndex:
    """Flatten side cameras into standalone center-only records."""
    records = tuple(
        SampleRecord(center_path=p, steering=s)
        for record in index.records
        for p, s in expand_cameras(record, correction)
    )
    return DatasetIndex(records=records, source_format=index.source_format,
                        root_path=index.root_path, skipped=index.skipped)


def split(index: DatasetIndex, val_fraction: float, seed: int) -> tuple[DatasetIndex, DatasetIndex]:
    """Deterministically partition an index into train and validation sets.

    The validation size is round(n * val_fraction), clamped so both sides
    are nonempty; the partition is disjoint and covers the input.
    """
    if not 0.0 < val_fraction < 1.0:
        raise ConfigError(f"val_fraction must be in (0, 1), got {val_fraction}")
    n = len(index.records)
    if n < 2:
        raise EmptyDatasetError(f"cannot split {n} record(s) into two nonempty sets")
    n_val = min(max(round(n * val_fraction), 1), n - 1)
    order = np.random.RandomState(seed).permutation(n)
    val_ids = set(order[:n_val].tolist())
    train_records = tuple(r for i, r in enumerate(index.records) if i not in val_ids)
    val_records = tuple(r for i, r in enumerate(index.records) if i in val_ids)
    make = lambda recs: DatasetIndex(records=recs, source_format=index.source_format,
                                     root_path=index.root_path, skipped=0)
    return make(train_records), make(val_records)


def make_batches(
    index: DatasetIndex,
    batch_size: int,
    shuffle_seed: int | None,
    preprocess: Preprocessor,
    side_cameras: bool = False,
    correction: float = DEFAULT_CAMERA_CORRECTION,
) -> Iterator[Batch]:
    """Yield one epoch of batches; the last batch may be short.

    Every record contributes exactly once per epoch (three times with
    ``side_cameras``).  Order is deterministic for a fixed seed; pass
    ``shuffle_seed=None`` for manifest order.  Undecodable images are
    skipped with a warning.
    """
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    entries: list[tuple[Path, float]] = []
    for record in index.records:
        if side_cameras:
            entries.extend(expand_cameras(record, correction))
        else:
            entries.append((record.center_path, record.steering))
    if shuffle_seed is not None:
        order = np.random.RandomState(shuffle_seed).permutation(len(entries))
        entries = [entries[i] for i in order]

    images: list[np.ndarray] = []
    targets: list[float] = []
    for path, steering in entries:
        try:
            images.append(preprocess(path))
        except (OSError, ValueError) as exc:
            log.warning("skipping undecodable image %s (%s)", path, exc)
            continue
        targets.append(steering)
        if len(images) == batch_size:
            yield Batch(np.stack(images), np.asarray(targets, dtype=np.float32))
            images, targets = [], []
    if images:
        yield Batch(np.stack(images), np.asarray(targets, dtype=np.float32))


# --- synthetic toy road dataset -------------------------------------------

#: Steering produced by a band at full offset d=1: target = TOY_STEERING_GAIN * d.
TOY_STEERING_GAIN = 0.5


@dataclass(frozen=True)
class ToyParams:
    """Geometry of the synthetic road images.

    Each image is a dark background with a bright vertical band centered at
    offset ``d`` in [-1, 1] (0 is the image center, +/-1 the extremes that
    keep the band fully inside).  The target steering is ``gain * d``
    radians, so ground truth is analytic.
    """

    image_size: tuple[int, int] = (32, 64)  # (H, W)
    gain: float = TOY_STEERING_GAIN
    band_halfwidth: int = 4
    background: float = 0.1
    band_value: float = 0.9
    noise_sigma: float = 0.02

    def band_columns(self, d: float) -> tuple[int, int]:
        """Inclusive column span [lo, hi] covered by the band at offset d."""
        h, w = self.image_size
        half_travel = (w - 1) / 2.0 - self.band_halfwidth
        center = (w - 1) / 2.0 + d * half_travel
        lo = int(round(center)) - self.band_halfwidth
        hi = int(round(center)) + self.band_halfwidth
        return max(lo, 0), min(hi, w - 1)


def render_toy_image(d: float, params: ToyParams, rng: np.random.RandomState) -> np.ndarray:
    if not -1.0 <= d <= 1.0:
        raise ConfigError(f"band offset must be in [-1, 1], got {d}")
    h, w = params.image_size
    img = np.full((h, w), params.background, dtype=np.float32)
    lo, hi = params.band_columns(d)
    img[:, lo : hi + 1] = params.band_value
    img = img[:, :, None].repeat(3, axis=2)
    img += rng.normal(0.0, params.noise_sigma, size=img.shape).astype(np.float32)
    return np.clip(img, 0.0, 1.0)


def generate_toy_dataset(
    n: int,
    image_size: tuple[int, int],
    seed: int,
    out_dir: str | Path,
    params: ToyParams | None = None,
) -> DatasetIndex:
    """Write n toy PNGs plus a two-column manifest and return its index.

    Offsets are drawn uniformly from [-1, 1]; a fixed seed reproduces the
    dataset byte for byte.
    """
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    params = params or ToyParams()
    if params.image_size != tuple(image_size):
        params = replace(params, image_size=tuple(image_size))
    out_dir = Path(out_dir)
    image_dir = out_dir / "images"
    image_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.RandomState(seed)
    offsets = rng.uniform(-1.0, 1.0, size=n)

    manifest = out_dir / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        writer = csv.writer(fh)
        for i, d in enumerate(offsets):
            img = render_toy_image(float(d), params, rng)
            name = f"images/toy_{i:05d}.png"
            Image.fromarray((img * 255.0).round().astype(np.uint8)).save(out_dir / name)
            writer.writerow([name, repr(float(params.gain * d))])
    return load_manifest(manifest, "toy")
