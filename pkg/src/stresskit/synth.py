"""Deterministic synthetic fixtures: images, manifest, and a stub scorer config.

The generator builds a small grayscale dataset with controllable subgroup
proportions and class separability. Per-class scores for the companion
degradation stub are constructed as ``separability * label +
(1 - separability) * u`` with ``u`` spread evenly over [0, 1] within each
label group, so the pooled clean AUC approaches a closed-form value as the
sample count grows.

The stub config also carries per-sample degradation targets and a severity
calibration curve. Targets sit on the adversarial side of each sample's own
clean score (positives sink, negatives rise), so mixing any amount further
toward them can never raise a pairwise ranking back up: AUC degradation is
monotone by construction, not by luck. The calibration curve maps the mean
pixel distortion of each suite spec (measured on a sample of the generated
images) to an evenly spaced mixing-weight ladder, giving every severity
step a comparable bite. All randomness flows from the single seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import StressKitError
from .image import ImageBuffer, encode_png
from .perturb import apply, build_suite

__all__ = [
    "AttributeSpec",
    "SynthSpec",
    "expected_clean_auc",
    "largest_remainder_counts",
    "clean_image",
    "generate",
]

DEFAULT_ATTRIBUTES = (
    ("site", (("A", 0.40), ("B", 0.33), ("C", 0.27))),
    ("sex", (("F", 0.52), ("M", 0.48))),
)

WEIGHT_LO = 0.06
WEIGHT_HI = 0.88
CALIBRATION_SAMPLES = 16


@dataclass(frozen=True)
class AttributeSpec:
    name: str
    values: tuple[tuple[str, float], ...]  # (value, proportion)


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 0
    n_samples: int = 100
    height: int = 64
    width: int = 64
    n_classes: int = 2
    prevalence: float = 0.4
    separability: float = 0.3
    attributes: tuple[AttributeSpec, ...] = field(
        default_factory=lambda: tuple(AttributeSpec(n, v) for n, v in DEFAULT_ATTRIBUTES)
    )

    def __post_init__(self):
        if self.n_samples < 1:
            raise StressKitError("n_samples must be >= 1")
        if not 0.0 <= self.separability <= 1.0:
            raise StressKitError("separability must be in [0, 1]")
        if not 0.0 < self.prevalence < 1.0:
            raise StressKitError("prevalence must be in (0, 1)")
        for spec in self.attributes:
            total = sum(p for _, p in spec.values)
            if abs(total - 1.0) > 1e-9:
                raise StressKitError(
                    f"attribute {spec.name!r} proportions sum to {total}, must sum to 1"
                )


def expected_clean_auc(separability: float) -> float:
    """Large-sample pooled AUC of the constructed clean scores.

    With positives at ``s + (1-s)u`` and negatives at ``(1-s)u`` for uniform
    ``u``, a positive loses only when the negative's uniform exceeds its own
    by more than ``s/(1-s)``.
    """
    if separability >= 0.5:
        return 1.0
    c = separability / (1.0 - separability)
    return 1.0 - (1.0 - c) ** 2 / 2.0


def largest_remainder_counts(n: int, proportions: list[float]) -> list[int]:
    """Integer counts summing to n; remainders break ties by declaration order."""
    raw = [p * n for p in proportions]
    counts = [int(np.floor(r)) for r in raw]
    leftover = n - sum(counts)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[:leftover]:
        counts[i] += 1
    return counts


def clean_image(seed: int, index: int, height: int, width: int) -> np.ndarray:
    """Deterministic grayscale test image, uint8 (H, W).

    A vertical brightness ramp plus three horizontal sine textures whose
    amplitude grows left to right, plus mild per-sample speckle. The mix of
    broad gradients and multi-frequency detail makes every perturbation kind
    move the pixels further as its severity grows.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, index])))
    ph = rng.uniform(0.0, 2.0 * np.pi, size=3)
    y = np.linspace(0.15, 0.85, height, dtype=np.float64)[:, None]
    x = np.arange(width, dtype=np.float64)[None, :] / max(width - 1, 1)
    tex = (
        0.09 * np.sin(2.0 * np.pi * 3.0 * x + ph[0])
        + 0.07 * np.sin(2.0 * np.pi * 11.0 * x + ph[1])
        + 0.05 * np.sin(2.0 * np.pi * 23.0 * x + ph[2])
    )
    amp = 0.35 + 0.65 * x
    speckle = rng.uniform(-0.05, 0.05, size=(height, width))
    img = np.clip(y + amp * tex + speckle, 0.02, 0.98)
    return np.rint(img * 255.0).astype(np.uint8)


def _sample_id(index: int) -> str:
    return f"s{index:04d}"


def generate(spec: SynthSpec, out_dir: str | Path) -> dict[str, Path]:
    """Write images/, manifest.csv, config.json, and stub.json under out_dir."""
    out_dir = Path(out_dir)
    images_dir = out_dir / "images"
    images_dir.mkdir(parents=True, exist_ok=True)
    n = spec.n_samples
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    class_names = [f"class_{c}" for c in range(spec.n_classes)]

    # labels: exact positive counts, positions chosen by the seeded stream
    labels = np.zeros((n, spec.n_classes), dtype=np.int64)
    for c in range(spec.n_classes):
        n_pos = int(round(spec.prevalence * n))
        pos_idx = rng.permutation(n)[:n_pos]
        labels[pos_idx, c] = 1

    # clean scores: evenly spread quantiles within each label group
    lam = spec.separability
    scores = np.zeros((n, spec.n_classes), dtype=np.float64)
    for c in range(spec.n_classes):
        for value in (1, 0):
            members = np.flatnonzero(labels[:, c] == value)
            if members.size == 0:
                continue
            ranks = rng.permutation(members.size)
            u = (ranks + 0.5) / members.size
            scores[members, c] = lam * value + (1.0 - lam) * u
    # degradation targets on the adversarial side of each sample's own score
    h = rng.uniform(0.0, 1.0, size=(n, spec.n_classes))
    targets = np.where(labels == 1, scores * h, scores + (1.0 - scores) * h)

    # attribute assignment: largest-remainder counts over a seeded shuffle
    attr_values: dict[str, list[str]] = {}
    for a in spec.attributes:
        counts = largest_remainder_counts(n, [p for _, p in a.values])
        perm = rng.permutation(n)
        column = [""] * n
        pos = 0
        for (value, _), count in zip(a.values, counts):
            for i in perm[pos : pos + count]:
                column[int(i)] = value
            pos += count
        attr_values[a.name] = column

    ids = [_sample_id(i) for i in range(n)]
    buffers: list[ImageBuffer] = []
    for i in range(n):
        img = ImageBuffer.from_uint8(clean_image(spec.seed, i, spec.height, spec.width))
        encode_png(img, images_dir / f"{ids[i]}.png")
        buffers.append(img)

    # severity calibration: mean pixel distortion per suite spec, measured on
    # a slice of the actual images, mapped to an evenly spaced weight ladder
    calib = buffers[: min(CALIBRATION_SAMPLES, n)]
    suite = build_suite()
    d_bars = []
    for sp in suite:
        total = 0.0
        for im in calib:
            total += float(np.mean(np.abs(apply(sp, im).pixels - im.pixels)))
        d_bars.append(total / len(calib))
    order = np.argsort(d_bars)
    weight_curve = sorted(
        (d_bars[int(i)], WEIGHT_LO + (WEIGHT_HI - WEIGHT_LO) * rank / (len(suite) - 1))
        for rank, i in enumerate(order)
    )

    manifest_path = out_dir / "manifest.csv"
    attr_names = [a.name for a in spec.attributes]
    with manifest_path.open("w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(["id", "image_path", *class_names, *attr_names]) + "\n")
        for i in range(n):
            cells = [
                ids[i],
                f"images/{ids[i]}.png",
                *[str(int(v)) for v in labels[i]],
                *[attr_values[a][i] for a in attr_names],
            ]
            fh.write(",".join(cells) + "\n")

    subgroups = []
    for a in spec.attributes:
        for value, _ in a.values:
            taken = {g["name"] for g in subgroups}
            name = value if value not in taken else f"{a.name}={value}"
            subgroups.append({"name": name, "attr": a.name, "equals": value})
    config = {
        "classes": class_names,
        "attributes": [{"name": a.name, "type": "string"} for a in spec.attributes],
        "subgroups": subgroups,
        "suite": {},
    }
    config_path = out_dir / "config.json"
    config_path.write_text(json.dumps(config, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    stub = {
        "manifest": "manifest.csv",
        "classes": class_names,
        "identity": f"degrade-stub(seed={spec.seed},n={n},separability={spec.separability})",
        "scores": {ids[i]: [float(v) for v in scores[i]] for i in range(n)},
        "targets": {ids[i]: [float(v) for v in targets[i]] for i in range(n)},
        "weight_curve": [[float(d), float(w)] for d, w in weight_curve],
    }
    stub_path = out_dir / "stub.json"
    stub_path.write_text(json.dumps(stub, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return {
        "images": images_dir,
        "manifest": manifest_path,
        "config": config_path,
        "stub": stub_path,
    }
