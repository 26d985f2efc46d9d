"""Synthetic desk-scale dataset, patient-level splits, and on-disk formats.

Images are single-channel float grids in [0, 1], quantized to 8-bit levels so
a PGM round trip is lossless.  Masks are binary.  A dataset on disk is a
directory with ``images/``, ``masks/`` and a tab-separated ``manifest.tsv``
listing one slice per row.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .exceptions import DataError

MANIFEST_NAME = "manifest.tsv"
MANIFEST_COLUMNS = ("patient_id", "slice_index", "image", "mask")
FG_FRACTION_RANGE = (0.02, 0.40)


@dataclass
class Sample:
    image: np.ndarray  # (H, W) float64 in [0, 1]
    mask: np.ndarray   # (H, W) uint8 in {0, 1}
    patient_id: str
    slice_index: int


def _ellipse_field(h: int, w: int, cy: float, cx: float, ry: float, rx: float,
                   angle: float) -> tuple[np.ndarray, np.ndarray]:
    """Normalized radius s (s <= 1 is the interior) and polar angle per pixel."""
    ys, xs = np.mgrid[0:h, 0:w]
    dy, dx = ys - cy, xs - cx
    c, s = np.cos(angle), np.sin(angle)
    u = (c * dx + s * dy) / rx
    v = (-s * dx + c * dy) / ry
    return np.sqrt(u * u + v * v), np.arctan2(v, u)


def _patient_anatomy(rng: np.random.Generator, h: int, w: int) -> dict:
    return {
        "cy": h * rng.uniform(0.35, 0.65),
        "cx": w * rng.uniform(0.35, 0.65),
        "ry": h * rng.uniform(0.10, 0.20),
        "rx": w * rng.uniform(0.10, 0.20),
        "angle": rng.uniform(0.0, np.pi),
        # low-frequency boundary wobble: two harmonics
        "wobble_amp": rng.uniform(0.04, 0.12, size=2),
        "wobble_phase": rng.uniform(0.0, 2 * np.pi, size=2),
        "lobe_dir": rng.uniform(0.0, 2 * np.pi),
        "lobe_scale": rng.uniform(0.40, 0.60),
        "contrast": rng.uniform(0.30, 0.45),
    }


def _render_slice(rng: np.random.Generator, anatomy: dict, h: int, w: int,
                  noise: float) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = FG_FRACTION_RANGE
    a2, a3 = anatomy["wobble_amp"]
    p2, p3 = anatomy["wobble_phase"]
    for _ in range(1000):
        jitter = rng.uniform(0.85, 1.15)
        cy = anatomy["cy"] + rng.uniform(-3.0, 3.0)
        cx = anatomy["cx"] + rng.uniform(-3.0, 3.0)
        ry = anatomy["ry"] * jitter
        rx = anatomy["rx"] * jitter
        angle = anatomy["angle"] + rng.uniform(-0.3, 0.3)
        s1, phi = _ellipse_field(h, w, cy, cx, ry, rx, angle)
        wobble = 1.0 + a2 * np.cos(2 * phi + p2) + a3 * np.cos(3 * phi + p3)
        body = s1 / wobble  # <= 1 inside the perturbed boundary

        # protruding lobe: centered near the body boundary so it overlaps
        # (union stays connected) while most of it sticks out
        t = anatomy["lobe_dir"] + rng.uniform(-0.4, 0.4)
        reach = 0.85 * float(1.0 + a2 * np.cos(2 * t + p2) + a3 * np.cos(3 * t + p3))
        ca, sa = np.cos(angle), np.sin(angle)
        lcx = cx + reach * (rx * np.cos(t) * ca - ry * np.sin(t) * sa)
        lcy = cy + reach * (rx * np.cos(t) * sa + ry * np.sin(t) * ca)
        ls = anatomy["lobe_scale"]
        s2, _ = _ellipse_field(h, w, lcy, lcx, ls * ry, ls * rx,
                               angle + rng.uniform(-0.6, 0.6))

        mask = ((body <= 1.0) | (s2 <= 1.0)).astype(np.uint8)
        frac = mask.mean()
        if lo <= frac <= hi:
            break
    else:
        raise DataError(f"could not draw a mask with foreground fraction in "
                        f"[{lo}, {hi}] after 1000 attempts")

    ys, xs = np.mgrid[0:h, 0:w]
    # slowly varying bias field plus blob confounders: intensity alone is ambiguous
    background = (rng.uniform(0.15, 0.35)
                  + rng.uniform(-0.10, 0.10) * xs / w
                  + rng.uniform(-0.10, 0.10) * ys / h)
    for _ in range(3):
        by, bx = rng.uniform(0, h), rng.uniform(0, w)
        sigma = rng.uniform(0.15, 0.35) * min(h, w)
        background += rng.uniform(-0.08, 0.08) * np.exp(
            -((ys - by) ** 2 + (xs - bx) ** 2) / (2 * sigma ** 2))

    srel = np.minimum(body, s2)
    bump = np.clip(1.5 * (1.0 - srel * srel), 0.0, 1.0)
    image = background + anatomy["contrast"] * bump
    image = image + rng.normal(0.0, noise, size=(h, w))
    image = np.clip(image, 0.0, 1.0)
    image = np.round(image * 255.0) / 255.0  # lossless through 8-bit PGM
    return image, mask


def generate_synthetic(num_patients: int, slices_per_patient: int,
                       image_size: int = 64, seed: int = 0,
                       noise: float = 0.1) -> list[Sample]:
    """Connected blob-with-lobe structures over a drifting background.

    Per-patient anatomy (position, radii, orientation, boundary wobble, lobe
    direction, contrast) is sampled once and jittered per slice, so slices of
    one patient correlate the way the patient-level split assumes.
    """
    if num_patients < 1 or slices_per_patient < 1:
        raise DataError("need at least one patient and one slice per patient")
    rng = np.random.default_rng(seed)
    h = w = int(image_size)
    samples = []
    for p in range(num_patients):
        anatomy = _patient_anatomy(rng, h, w)
        pid = f"p{p:03d}"
        for s in range(slices_per_patient):
            image, mask = _render_slice(rng, anatomy, h, w, noise)
            samples.append(Sample(image=image, mask=mask, patient_id=pid,
                                  slice_index=s))
    return samples


def split_patients(patient_ids: list[str], seed: int,
                   val_fraction: float = 0.10,
                   test_fraction: float = 0.20) -> tuple[list[str], list[str], list[str]]:
    """Disjoint train/val/test patient lists covering every patient.

    Splitting happens at patient granularity so no patient leaks across sets.
    """
    unique = sorted(set(patient_ids))
    if len(unique) < 3:
        raise DataError(f"need at least 3 patients to split, got {len(unique)}")
    if val_fraction < 0 or test_fraction < 0 or val_fraction + test_fraction >= 1:
        raise DataError(f"invalid split fractions val={val_fraction} test={test_fraction}")
    order = np.random.default_rng(seed).permutation(len(unique))
    shuffled = [unique[i] for i in order]
    n = len(unique)
    n_val = max(1, round(n * val_fraction))
    n_test = max(1, round(n * test_fraction))
    if n_val + n_test >= n:
        raise DataError(f"split leaves no training patients (n={n}, "
                        f"val={n_val}, test={n_test})")
    val = sorted(shuffled[:n_val])
    test = sorted(shuffled[n_val:n_val + n_test])
    train = sorted(shuffled[n_val + n_test:])
    return train, val, test


def select_split(samples: list[Sample], patient_ids: list[str]) -> list[Sample]:
    wanted = set(patient_ids)
    return [s for s in samples if s.patient_id in wanted]


def stack_batch(samples: list[Sample]) -> tuple[np.ndarray, np.ndarray]:
    """Stack samples into (B, 1, H, W) image and mask arrays."""
    images = np.stack([s.image for s in samples])[:, None, :, :]
    masks = np.stack([s.mask for s in samples])[:, None, :, :].astype(np.float64)
    return images, masks


# ---------------------------------------------------------------------------
# PGM (portable graymap, binary "P5") IO


def save_pgm(path: str, values: np.ndarray) -> None:
    """Write a (H, W) uint8 array as binary PGM with maxval 255."""
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise DataError(f"PGM wants a 2-d array, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        raise DataError(f"PGM wants uint8 values, got {arr.dtype}")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def load_pgm(path: str) -> np.ndarray:
    """Read a binary PGM into a (H, W) uint8 array.

    Header whitespace and ``#`` comments are tolerated; maxval must be 255 and
    the payload must hold exactly width*height bytes.
    """
    with open(path, "rb") as fh:
        blob = fh.read()

    pos = 0

    def token() -> bytes:
        nonlocal pos
        while pos < len(blob):
            ch = blob[pos:pos + 1]
            if ch == b"#":
                while pos < len(blob) and blob[pos:pos + 1] != b"\n":
                    pos += 1
            elif ch.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError(f"{path}: truncated PGM header")
        return blob[start:pos]

    magic = token()
    if magic != b"P5":
        raise DataError(f"{path}: not a binary PGM (magic {magic!r})")
    try:
        w, h, maxval = int(token()), int(token()), int(token())
    except ValueError as err:
        raise DataError(f"{path}: malformed PGM header") from err
    if maxval != 255:
        raise DataError(f"{path}: unsupported maxval {maxval}, expected 255")
    pos += 1  # single whitespace byte separates header from raster
    raster = blob[pos:]
    if len(raster) != w * h:
        raise DataError(f"{path}: raster holds {len(raster)} bytes, "
                        f"expected {w * h} for {w}x{h}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w)


def image_to_bytes(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def mask_to_bytes(mask: np.ndarray) -> np.ndarray:
    return (np.asarray(mask) > 0).astype(np.uint8) * 255


def bytes_to_image(arr: np.ndarray) -> np.ndarray:
    return arr.astype(np.float64) / 255.0


def bytes_to_mask(arr: np.ndarray) -> np.ndarray:
    # anything at or above mid-gray counts as foreground
    return (arr >= 128).astype(np.uint8)


# ---------------------------------------------------------------------------
# dataset directory + manifest


def save_dataset(samples: list[Sample], out_dir: str) -> str:
    """Write images, masks, and the manifest; returns the manifest path."""
    images_dir = os.path.join(out_dir, "images")
    masks_dir = os.path.join(out_dir, "masks")
    os.makedirs(images_dir, exist_ok=True)
    os.makedirs(masks_dir, exist_ok=True)
    rows = []
    for s in samples:
        stem = f"{s.patient_id}_{s.slice_index:03d}.pgm"
        save_pgm(os.path.join(images_dir, stem), image_to_bytes(s.image))
        save_pgm(os.path.join(masks_dir, stem), mask_to_bytes(s.mask))
        rows.append((s.patient_id, str(s.slice_index),
                     f"images/{stem}", f"masks/{stem}"))
    manifest = os.path.join(out_dir, MANIFEST_NAME)
    with open(manifest, "w", encoding="utf-8") as fh:
        fh.write("\t".join(MANIFEST_COLUMNS) + "\n")
        for row in rows:
            fh.write("\t".join(row) + "\n")
    return manifest


def load_dataset(path: str) -> list[Sample]:
    """Load a dataset from a manifest path or a directory containing one."""
    manifest = os.path.join(path, MANIFEST_NAME) if os.path.isdir(path) else path
    if not os.path.exists(manifest):
        raise DataError(f"no manifest at {manifest}")
    root = os.path.dirname(manifest)
    with open(manifest, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or tuple(lines[0].split("\t")) != MANIFEST_COLUMNS:
        raise DataError(f"{manifest}: first line must be "
                        + "\t".join(MANIFEST_COLUMNS))
    samples = []
    shape = None
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != len(MANIFEST_COLUMNS):
            raise DataError(f"{manifest}:{lineno}: expected "
                            f"{len(MANIFEST_COLUMNS)} tab-separated fields, "
                            f"got {len(parts)}")
        pid, slice_str, image_rel, mask_rel = parts
        try:
            slice_index = int(slice_str)
        except ValueError as err:
            raise DataError(f"{manifest}:{lineno}: slice_index {slice_str!r} "
                            f"is not an integer") from err
        image_path = os.path.join(root, image_rel)
        mask_path = os.path.join(root, mask_rel)
        for p in (image_path, mask_path):
            if not os.path.exists(p):
                raise DataError(f"{manifest}:{lineno}: missing file {p}")
        image = bytes_to_image(load_pgm(image_path))
        mask = bytes_to_mask(load_pgm(mask_path))
        if image.shape != mask.shape:
            raise DataError(f"{manifest}:{lineno}: image {image.shape} and "
                            f"mask {mask.shape} disagree")
        if shape is None:
            shape = image.shape
        elif image.shape != shape:
            raise DataError(f"{manifest}:{lineno}: slice shape {image.shape} "
                            f"differs from first slice {shape}")
        samples.append(Sample(image=image, mask=mask, patient_id=pid,
                              slice_index=slice_index))
    if not samples:
        raise DataError(f"{manifest}: no samples listed")
    return samples
