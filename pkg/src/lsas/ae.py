"""Attention-efficiency scoring against annotated ideal regions.

A focused region M scores 1 on an image when |M intersect D| / |M| strictly
exceeds the threshold lambda (default 0.8), where D is the annotated ideal
region; the dataset-level score is the mean of these indicators as a
percentage. Annotations are stored as per-image single-channel mask files
``{image_stem}.mask.png`` with nonzero marking the ideal region.
"""

from __future__ import annotations

import csv
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .gradcam import RegionMask

DEFAULT_LAMBDA = 0.8
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")
_LABEL_RE = re.compile(r"_(\d+)$")


@dataclass(frozen=True)
class AEAnnotationRecord:
    """One annotated image: reference, ideal-region mask and class label."""

    image_ref: str
    ideal_mask: np.ndarray
    label: int
    image: np.ndarray | None = None  # pixels kept in memory by the generator

    def __post_init__(self):
        mask = np.asarray(self.ideal_mask, dtype=bool)
        if mask.ndim != 2 or not mask.any():
            raise ValueError(f"{self.image_ref}: ideal mask must be a nonempty 2-D region")
        object.__setattr__(self, "ideal_mask", mask)


def aes_score(m, d, lam: float = DEFAULT_LAMBDA):
    """Per-image overlap ratio and indicator.

    Returns (overlap_ratio, aes) where overlap_ratio = |M intersect D| / |M|
    in pixel counts and aes is 1 iff the ratio strictly exceeds ``lam``.
    """
    m_bits = m.bits if isinstance(m, RegionMask) else np.asarray(m, dtype=bool)
    d_bits = d.ideal_mask if isinstance(d, AEAnnotationRecord) else np.asarray(d, dtype=bool)
    if m_bits.shape != d_bits.shape:
        raise ValueError(
            f"dimension mismatch: focused region {m_bits.shape} vs ideal region {d_bits.shape}"
        )
    m_size = int(m_bits.sum())
    if m_size == 0:
        raise ValueError("focused region is empty; the overlap ratio is undefined")
    ratio = float(np.logical_and(m_bits, d_bits).sum()) / m_size
    return ratio, int(ratio > lam)


def ae_aggregate(scores) -> float:
    """Dataset-level score: 100 * mean of the per-image indicators."""
    scores = list(scores)
    if not scores:
        raise ValueError("cannot aggregate an empty score list")
    if any(s not in (0, 1) for s in scores):
        raise ValueError("scores must be 0/1 indicators")
    return 100.0 * sum(scores) / len(scores)


def relative_improvement(new: float, old: float) -> float:
    """Percent change of ``new`` over ``old``."""
    if old == 0:
        raise ValueError("relative improvement over zero is undefined")
    return (new - old) / old * 100.0


@dataclass(frozen=True)
class AEReport:
    """Per-image rows (image_ref, overlap_ratio, aes) plus the aggregate."""

    per_image: tuple
    lam: float = DEFAULT_LAMBDA

    @property
    def dataset_size(self) -> int:
        return len(self.per_image)

    @property
    def ae(self) -> float:
        return ae_aggregate([row[2] for row in self.per_image])

    def to_text(self) -> str:
        lines = ["image_ref\toverlap_ratio\taes"]
        for ref, ratio, aes in self.per_image:
            lines.append(f"{ref}\t{ratio:.4f}\t{aes}")
        lines.append(f"# lambda={self.lam} size={self.dataset_size} AE={self.ae:.2f}")
        return "\n".join(lines) + "\n"

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["image_ref", "overlap_ratio", "aes"])
            for ref, ratio, aes in self.per_image:
                writer.writerow([ref, f"{ratio:.6f}", aes])
            writer.writerow(["# lambda", self.lam, ""])
            writer.writerow(["# AE", f"{self.ae:.2f}", self.dataset_size])


def build_report(entries, lam: float = DEFAULT_LAMBDA) -> AEReport:
    """Score (image_ref, focused_mask, record) triples into a report."""
    rows = []
    for ref, mask, record in entries:
        ratio, aes = aes_score(mask, record, lam)
        rows.append((ref, ratio, aes))
    return AEReport(per_image=tuple(rows), lam=lam)


@dataclass
class AnnotationLoadReport:
    records: list = field(default_factory=list)
    errors: list = field(default_factory=list)  # (image_ref, message)


def _label_from_stem(stem: str) -> int:
    match = _LABEL_RE.search(stem)
    return int(match.group(1)) if match else -1


def load_annotations(directory) -> AnnotationLoadReport:
    """Pair image files with their sibling ``{stem}.mask.png`` files.

    Masks are binarized at nonzero. Missing masks and size mismatches become
    per-record error entries instead of exceptions; class labels are parsed
    from a trailing ``_{label}`` in the image stem (-1 when absent).
    """
    directory = Path(directory)
    report = AnnotationLoadReport()
    images = sorted(
        p
        for p in directory.glob("*")
        if p.suffix.lower() in IMAGE_SUFFIXES and not p.name.endswith(".mask.png")
    )
    if not images:
        warnings.warn(f"no annotated images found under {directory}")
        return report
    for img_path in images:
        mask_path = img_path.with_name(img_path.stem + ".mask.png")
        if not mask_path.exists():
            report.errors.append((img_path.name, "missing mask file"))
            continue
        with Image.open(img_path) as img:
            size = img.size
        mask = np.asarray(Image.open(mask_path).convert("L")) != 0
        if mask.shape != (size[1], size[0]):
            report.errors.append(
                (img_path.name, f"dimension mismatch: image {size[::-1]} vs mask {mask.shape}")
            )
            continue
        if not mask.any():
            report.errors.append((img_path.name, "empty ideal region"))
            continue
        report.records.append(
            AEAnnotationRecord(
                image_ref=str(img_path),
                ideal_mask=mask,
                label=_label_from_stem(img_path.stem),
            )
        )
    return report


def synth_annotations(seed: int, count: int, shape=(96, 96), num_classes: int = 10):
    """Deterministic synthetic annotations with rectangular ideal regions.

    Each record gets a label ``i % num_classes``, a rectangle covering
    roughly a fifth to a half of either side, and an image whose ideal
    region is brightened over a noisy background, so overlap ratios against
    constructed focused regions are analytically computable.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    h, w = shape
    rng = np.random.default_rng(seed)
    records = []
    for i in range(count):
        rh = int(rng.integers(h // 5, h // 2 + 1))
        rw = int(rng.integers(w // 5, w // 2 + 1))
        top = int(rng.integers(0, h - rh + 1))
        left = int(rng.integers(0, w - rw + 1))
        mask = np.zeros((h, w), dtype=bool)
        mask[top : top + rh, left : left + rw] = True
        image = rng.integers(0, 96, size=(h, w, 3)).astype(np.uint8)
        image[mask] = np.minimum(image[mask] + 140, 255).astype(np.uint8)
        label = i % num_classes
        records.append(
            AEAnnotationRecord(
                image_ref=f"synth_{i:04d}_{label}",
                ideal_mask=mask,
                label=label,
                image=image,
            )
        )
    return records


def write_annotations(records, directory):
    """Persist records as ``{ref}.png`` + ``{ref}.mask.png`` pairs."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for rec in records:
        if rec.image is None:
            raise ValueError(f"{rec.image_ref}: record carries no pixels to write")
        stem = Path(rec.image_ref).stem
        Image.fromarray(rec.image).save(directory / f"{stem}.png")
        mask = (rec.ideal_mask.astype(np.uint8)) * 255
        Image.fromarray(mask, mode="L").save(directory / f"{stem}.mask.png")
    return directory
