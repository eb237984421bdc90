"""Deterministic generator of synthetic micro-expression-like clips.

Each sample is a grayscale face template (subject-seeded texture plus a
tracking grating per facial zone) in which the zones of the class's two
action units undergo a smooth ramp-and-release displacement across the
clip, with Gaussian pixel noise on top. Labels are therefore tied to
localized motion, which is exactly what the flow stream measures.

Everything is keyed by (seed, subject_id) or (seed, sample_id), never by
generation order, so regenerating a dataset is byte-identical no matter
how the work is scheduled.
"""

import json
import math
import os
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter, map_coordinates

from . import facs
from .errors import ConfigError
from .numcore import save_mxt

# Disjoint zone rectangles as (y0, y1, x0, x1) fractions of the image.
# Six named regions. Gaps of ~0.09 (10 px at size 112) keep an active
# zone's motion, spread by the flow estimator's 15 px window plus the
# mask feather, out of its neighbours' measurement windows.
ZONE_RECTS = {
    "eyebrow": (0.14, 0.24, 0.22, 0.78),
    "eye": (0.33, 0.42, 0.22, 0.78),
    "cheek": (0.51, 0.62, 0.06, 0.28),
    "nose": (0.51, 0.62, 0.40, 0.60),
    "mouth": (0.71, 0.80, 0.30, 0.70),
    "chin": (0.89, 0.97, 0.36, 0.64),
}

# Unit displacement direction (dy, dx) per zone: brows and cheeks raise,
# lids close downward, the mouth stretches sideways, the jaw drops.
ZONE_DIRECTIONS = {
    "eyebrow": (-1.0, 0.0),
    "eye": (1.0, 0.0),
    "cheek": (-0.6, 0.8),
    "nose": (0.0, -1.0),
    "mouth": (0.0, 1.0),
    "chin": (1.0, 0.0),
}

# Facial zone of every codebook action unit.
AU_ZONE = {
    1: "eyebrow", 2: "eyebrow", 4: "eyebrow",
    5: "eye", 7: "eye", 41: "eye", 42: "eye", 43: "eye", 44: "eye",
    45: "eye", 46: "eye",
    6: "cheek", 11: "cheek", 13: "cheek", 14: "cheek",
    9: "nose",
    10: "mouth", 12: "mouth", 15: "mouth", 16: "mouth", 18: "mouth",
    20: "mouth", 22: "mouth", 23: "mouth", 24: "mouth", 25: "mouth",
    27: "mouth", 28: "mouth",
    17: "chin", 26: "chin",
}


@dataclass(frozen=True)
class ClassDef:
    """One synthetic class: a distinct pair of action units and their zones."""

    name: str
    aus: tuple
    zones: tuple


@dataclass(frozen=True)
class SynthSpec:
    n_classes: int = 5
    samples_per_class: int = 20
    n_subjects: int = 5
    frames: int = 16
    size: int = 112
    motion_amplitude: float = 2.0
    noise_sigma: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ConfigError(f"n_classes must be >= 2, got {self.n_classes}")
        if self.samples_per_class < 1:
            raise ConfigError(f"samples_per_class must be >= 1, got {self.samples_per_class}")
        if self.n_subjects < 5:
            raise ConfigError(f"n_subjects must be >= 5, got {self.n_subjects}")
        if self.frames < 2:
            raise ConfigError(f"frames must be >= 2, got {self.frames}")
        if self.size < 16:
            raise ConfigError(f"size must be >= 16, got {self.size}")
        if not self.motion_amplitude > 0:
            raise ConfigError(f"motion_amplitude must be > 0, got {self.motion_amplitude}")
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")


def zone_masks(size):
    """Boolean mask per zone at the given image size."""
    out = {}
    for zone, (y0, y1, x0, x1) in ZONE_RECTS.items():
        m = np.zeros((size, size), bool)
        m[round(y0 * size) : round(y1 * size), round(x0 * size) : round(x1 * size)] = True
        out[zone] = m
    return out


def class_au_table(n_classes, seed):
    """Deterministic distinct AU pairs, preferring distinct zone pairs.

    A first pass accepts pairs whose zone set has not been used yet, so
    small tables get classes that differ in where they move, not just in
    which action units moved.
    """
    ids = sorted(facs.CODEBOOK)
    pairs = [(a, b) for i, a in enumerate(ids) for b in ids[i + 1 :]]
    if n_classes > len(pairs):
        raise ConfigError(f"cannot build {n_classes} distinct AU pairs from {len(pairs)} candidates")
    rng = np.random.default_rng(seed)
    order = [pairs[i] for i in rng.permutation(len(pairs))]
    chosen = []
    used_zones = set()
    for pair in order:
        zones = frozenset(AU_ZONE[a] for a in pair)
        if zones not in used_zones:
            chosen.append(pair)
            used_zones.add(zones)
        if len(chosen) == n_classes:
            break
    if len(chosen) < n_classes:
        taken = set(chosen)
        chosen += [p for p in order if p not in taken][: n_classes - len(chosen)]
    return [
        ClassDef(
            name=facs.format_au_string(pair),
            aus=tuple(pair),
            zones=tuple(AU_ZONE[a] for a in pair),
        )
        for pair in chosen
    ]


def _render_base(subject_rng, size):
    """Face template: elliptical shading, smooth texture, zone gratings."""
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1.0)
    ellipse = ((yy - 0.52) / 0.46) ** 2 + ((xx - 0.5) / 0.40) ** 2
    shading = np.clip(1.0 - ellipse, 0.0, 1.0)
    tex = gaussian_filter(subject_rng.standard_normal((size, size)), sigma=max(2.0, size / 28.0))
    tex /= max(float(np.abs(tex).max()), 1e-9)
    # fine isotropic texture everywhere keeps the flow estimator pinned
    # on static areas instead of drifting on noise
    fine = gaussian_filter(subject_rng.standard_normal((size, size)), sigma=1.2)
    fine /= max(float(np.abs(fine).max()), 1e-9)
    base = 0.45 + 0.25 * shading + 0.10 * tex + 0.06 * fine
    # each zone gets a crossed-grating patch (wavelength ~9 px): two
    # orthogonal waves constrain both flow components, a single grating
    # would leave motion along its stripes unobservable
    for zi, zone in enumerate(sorted(ZONE_RECTS)):
        theta = zi * math.pi / 6.0 + subject_rng.uniform(-0.2, 0.2)
        k = 2.0 * math.pi / 9.0 * (size - 1.0)
        u = np.cos(theta) * xx + np.sin(theta) * yy
        v = -np.sin(theta) * xx + np.cos(theta) * yy
        plaid = np.sin(k * u + subject_rng.uniform(0.0, 2.0 * math.pi)) + np.sin(
            k * v + subject_rng.uniform(0.0, 2.0 * math.pi)
        )
        mask = zone_masks(size)[zone]
        base = base + 0.07 * plaid * mask
    return np.clip(base, 0.0, 1.0)


def _soft_zone_mask(size, zone):
    return gaussian_filter(zone_masks(size)[zone].astype(np.float64), sigma=1.0)


def _render_clip(base, class_def, spec, sample_rng):
    """[T,H,W] float32: ramp-and-release warp of the class zones plus noise."""
    size, frames = spec.size, spec.frames
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    fields = []
    for zone in set(class_def.zones):
        dy, dx = ZONE_DIRECTIONS[zone]
        fields.append((dy, dx, _soft_zone_mask(size, zone)))
    clip = np.empty((frames, size, size), np.float32)
    for t in range(frames):
        ramp = math.sin(math.pi * t / (frames - 1)) ** 2 * spec.motion_amplitude
        py, px = yy.copy(), xx.copy()
        for dy, dx, mask in fields:
            py -= ramp * dy * mask
            px -= ramp * dx * mask
        frame = map_coordinates(base, [py, px], order=1, mode="nearest")
        if spec.noise_sigma > 0:
            frame = frame + sample_rng.normal(0.0, spec.noise_sigma, frame.shape)
        clip[t] = np.clip(frame, 0.0, 1.0)
    return clip


def generate(spec: SynthSpec, out_dir):
    """Write clips plus manifest.jsonl under out_dir; return the rows.

    Sample s of class c has sample_id = c * samples_per_class + s and
    subject sample_id % n_subjects, so every subject spans all classes
    once samples_per_class >= n_subjects.
    """
    table = class_au_table(spec.n_classes, spec.seed)
    clips_dir = os.path.join(out_dir, "clips")
    os.makedirs(clips_dir, exist_ok=True)
    bases = {}
    rows = []
    for class_id, class_def in enumerate(table):
        for i in range(spec.samples_per_class):
            sample_id = class_id * spec.samples_per_class + i
            subject_id = sample_id % spec.n_subjects
            if subject_id not in bases:
                subject_rng = np.random.default_rng([spec.seed, 0, subject_id])
                bases[subject_id] = _render_base(subject_rng, spec.size)
            sample_rng = np.random.default_rng([spec.seed, 1, sample_id])
            clip = _render_clip(bases[subject_id], class_def, spec, sample_rng)
            rel_path = os.path.join("clips", f"sample_{sample_id:05d}.mxt")
            save_mxt(os.path.join(out_dir, rel_path), clip)
            rows.append(
                {
                    "sample_id": sample_id,
                    "subject_id": subject_id,
                    "class_id": class_id,
                    "class_name": class_def.name,
                    "au": facs.format_au_string(class_def.aus),
                    "rgb_path": rel_path,
                    "frames": spec.frames,
                }
            )
    rows.sort(key=lambda r: r["sample_id"])
    with open(os.path.join(out_dir, "manifest.jsonl"), "w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    return rows


def read_manifest(path):
    """Rows of a manifest.jsonl file."""
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows
