"""Dataset ingestion and the synthetic image generator.

Ingestion reads a directory-per-class tree of PNG files into float RGB
arrays in [0, 1]. The synthetic generator produces a desk-scale corpus
with controllable class separability: each class owns a base color plus a
stripe/blob texture, every class has two sub-styles (so within-class
structure is bimodal), and an optional fraction of "bad capture" outliers
— washed-out, texture-free frames — is planted and recorded in a sidecar
ground-truth file.
"""

import colorsys
import hashlib
import json
import os
from dataclasses import dataclass, field, asdict
from typing import List, Optional, Tuple

import numpy as np
from PIL import Image, UnidentifiedImageError

from .augment import ImageSample
from .errors import ConfigurationError, IngestionError
from .seeding import STREAM_SYNTH, rng_for

GROUND_TRUTH_FILE = "ground_truth.json"


@dataclass(frozen=True)
class SyntheticSpec:
    classes: int = 3
    per_class: int = 100
    image_size: Tuple[int, int] = (40, 60)  # (height, width)
    noise_level: float = 0.05
    outlier_fraction: float = 0.0
    seed: int = 0
    # per-class texture knobs; None derives a spread from the class index
    base_colors: Optional[Tuple[Tuple[float, float, float], ...]] = None
    stripe_frequencies: Optional[Tuple[float, ...]] = None
    blob_densities: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        if self.classes < 1 or self.per_class < 1:
            raise ConfigurationError("classes and per_class must be >= 1")
        if not (0.0 <= self.outlier_fraction < 1.0):
            raise ConfigurationError("outlier_fraction must lie in [0, 1)")
        if self.noise_level < 0:
            raise ConfigurationError("noise_level must be >= 0")


def class_texture(spec, class_idx):
    """Texture parameters for one class: (base_color, stripe_freq, angle, blobs)."""
    if spec.base_colors is not None:
        color = np.asarray(spec.base_colors[class_idx], dtype=np.float64)
    else:
        hue = class_idx / spec.classes
        color = np.asarray(colorsys.hsv_to_rgb(hue, 0.55, 0.55))
    if spec.stripe_frequencies is not None:
        freq = float(spec.stripe_frequencies[class_idx])
    else:
        freq = 3.0 + 2.0 * class_idx
    if spec.blob_densities is not None:
        blobs = int(spec.blob_densities[class_idx])
    else:
        blobs = 2 + class_idx
    angle = np.pi * class_idx / max(spec.classes, 1)
    return color, freq, angle, blobs


def _render_class_image(spec, class_idx, rng):
    h, w = spec.image_size
    color, freq, angle, n_blobs = class_texture(spec, class_idx)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)

    # two sub-styles per class: growth-stage analogue (brightness + texture amount)
    style = int(rng.integers(0, 2))
    brightness = 1.0 if style == 0 else 0.72
    stripe_amp = 0.16 if style == 0 else 0.26

    phase = rng.uniform(0.0, 2.0 * np.pi)
    axis = (xx * np.cos(angle) + yy * np.sin(angle)) / max(h, w)
    stripes = np.sin(2.0 * np.pi * freq * axis + phase)

    blob_field = np.zeros((h, w))
    radius = max(h, w) / 10.0
    for _ in range(n_blobs):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        blob_field += np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * radius * radius))

    img = np.empty((h, w, 3))
    img[:] = color * brightness
    img += stripe_amp * stripes[:, :, None] * np.array([0.4, 0.5, 0.3])
    img += 0.18 * np.clip(blob_field, 0.0, 1.5)[:, :, None] * np.array([0.2, 0.35, 0.15])
    if spec.noise_level > 0:
        img += spec.noise_level * rng.normal(size=img.shape)
    return np.clip(img, 0.0, 1.0)


def _render_outlier_image(spec, rng):
    """Bad-capture frame: washed-out, texture-free, randomly exposed."""
    h, w = spec.image_size
    tint = np.array([0.52, 0.50, 0.46]) + rng.uniform(-0.06, 0.06, size=3)
    exposure = rng.uniform(0.35, 1.35)
    img = np.empty((h, w, 3))
    img[:] = np.clip(tint * exposure, 0.0, 1.0)
    img += 0.02 * rng.normal(size=img.shape)
    if spec.noise_level > 0:
        img += spec.noise_level * rng.normal(size=img.shape)
    return np.clip(img, 0.0, 1.0)


def write_png(path, pixels):
    arr = np.clip(np.round(pixels * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def read_png(path):
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def synth_gen(spec: SyntheticSpec, out_root):
    """Write the synthetic corpus under out_root and return its manifest."""
    os.makedirs(out_root, exist_ok=True)
    n_outliers = int(np.floor(spec.outlier_fraction * spec.per_class))
    outliers = {}
    for c in range(spec.classes):
        cls_name = f"class_{c:02d}"
        cls_dir = os.path.join(out_root, cls_name)
        os.makedirs(cls_dir, exist_ok=True)
        pick_rng = rng_for(spec.seed, STREAM_SYNTH, c, spec.per_class)
        outlier_idx = set(
            int(i) for i in pick_rng.choice(spec.per_class, size=n_outliers, replace=False)
        )
        outliers[cls_name] = []
        for i in range(spec.per_class):
            rng = rng_for(spec.seed, STREAM_SYNTH, c, i)
            if i in outlier_idx:
                img = _render_outlier_image(spec, rng)
                outliers[cls_name].append(f"{cls_name}/img_{i:05d}.png")
            else:
                img = _render_class_image(spec, c, rng)
            write_png(os.path.join(cls_dir, f"img_{i:05d}.png"), img)
        outliers[cls_name].sort()

    sidecar = {
        "generator": asdict(spec),
        "outliers": outliers,
        "n_outliers_per_class": n_outliers,
    }
    with open(os.path.join(out_root, GROUND_TRUTH_FILE), "w") as fh:
        json.dump(sidecar, fh, sort_keys=True, indent=1)
    return ingest(out_root, min_size=(1, 1))


@dataclass
class Reject:
    path: str
    reason: str


@dataclass
class DatasetManifest:
    root: str
    class_names: List[str]
    files: List[List[str]]  # per class, relative paths, sorted
    counts: List[int]
    rejects: List[Reject]
    checksum: str

    def to_dict(self):
        return {
            "root": self.root,
            "class_names": self.class_names,
            "files": self.files,
            "counts": self.counts,
            "rejects": [asdict(r) for r in self.rejects],
            "checksum": self.checksum,
        }


def ingest(root, min_size=(32, 32)):
    """Scan a directory-per-class tree of PNGs into a validated manifest.

    Images smaller than min_size (h, w) or undecodable files become
    rejects with a reason; an empty class directory is a configuration
    error. The checksum is stable under re-ingestion of an unchanged tree.
    """
    if not os.path.isdir(root):
        raise ConfigurationError(f"dataset root {root} does not exist")
    class_names = sorted(
        d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d))
    )
    if not class_names:
        raise ConfigurationError(f"no class subdirectories under {root}")

    files, counts, rejects = [], [], []
    hasher = hashlib.sha256()
    for cls in class_names:
        cls_dir = os.path.join(root, cls)
        accepted = []
        entries = sorted(os.listdir(cls_dir))
        if not entries:
            raise ConfigurationError(f"class directory {cls_dir} is empty")
        for name in entries:
            rel = f"{cls}/{name}"
            path = os.path.join(cls_dir, name)
            if not os.path.isfile(path):
                continue
            if not name.lower().endswith(".png"):
                rejects.append(Reject(rel, "unsupported format (PNG only)"))
                continue
            try:
                with Image.open(path) as im:
                    im.load()
                    w, h = im.size
            except (UnidentifiedImageError, OSError) as exc:
                rejects.append(Reject(rel, f"undecodable: {exc}"))
                continue
            if h < min_size[0] or w < min_size[1]:
                rejects.append(Reject(rel, f"undersized: {h}x{w} < {min_size[0]}x{min_size[1]}"))
                continue
            with open(path, "rb") as fh:
                digest = hashlib.sha256(fh.read()).hexdigest()
            hasher.update(f"{rel}:{digest}\n".encode())
            accepted.append(rel)
        if not accepted:
            raise ConfigurationError(f"class directory {cls_dir} has no usable images")
        files.append(accepted)
        counts.append(len(accepted))
    return DatasetManifest(
        root=str(root),
        class_names=class_names,
        files=files,
        counts=counts,
        rejects=rejects,
        checksum=hasher.hexdigest(),
    )


@dataclass
class Dataset:
    samples: List[ImageSample]
    class_names: List[str]
    manifest: DatasetManifest = None

    def __len__(self):
        return len(self.samples)

    @property
    def n_classes(self):
        return len(self.class_names)

    def by_class(self):
        groups = [[] for _ in self.class_names]
        for s in self.samples:
            groups[s.label].append(s)
        return groups


def load_dataset(manifest: DatasetManifest):
    """Decode every accepted file in manifest order into memory."""
    samples = []
    index = 0
    for label, rels in enumerate(manifest.files):
        for rel in rels:
            px = read_png(os.path.join(manifest.root, rel))
            samples.append(ImageSample(pixels=px, label=label, id=rel, index=index))
            index += 1
    return Dataset(samples=samples, class_names=list(manifest.class_names), manifest=manifest)


def load_ground_truth(root):
    path = os.path.join(root, GROUND_TRUTH_FILE)
    if not os.path.isfile(path):
        raise IngestionError(f"no {GROUND_TRUTH_FILE} sidecar under {root}")
    with open(path) as fh:
        return json.load(fh)
