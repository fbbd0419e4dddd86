"""Golden perturbation outputs rendered with torchvision's functional
transforms.

For every (input image, suite spec) pair this writes the reference 8-bit
PNG plus a manifest row of (input, kind, level, parameter, output). The
harness's parity suite replays the manifest against its own transforms and
compares after quantization; fixtures are generated offline and committed,
so the harness tests never invoke this package.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torchvision.transforms.functional as TF
from PIL import Image

BIDIRECTIONAL = ("gamma", "contrast", "brightness", "sharpness")
KIND_ORDER = (*BIDIRECTIONAL, "blur")
DEFAULT_BASES = {"gamma": 1.5, "contrast": 1.4, "brightness": 1.3, "sharpness": 2.0}
DEFAULT_BLUR_STEP = 0.6
DEFAULT_LEVELS = (-3, -2, -1, 1, 2, 3)
DEFAULT_BLUR_LEVELS = (1, 2, 3, 4, 5, 6)


@dataclass(frozen=True)
class Spec:
    kind: str
    level: int
    parameter: float

    @property
    def tag(self) -> str:
        return f"{self.kind}{self.level:+d}"


def suite_from_config(config: dict | None) -> list[Spec]:
    """Expand the declarative suite table (same schema as the harness config)."""
    node = (config or {}).get("suite", config) or {}
    bases = dict(DEFAULT_BASES)
    bases.update(node.get("bases", {}))
    step = node.get("blur_sigma_step", DEFAULT_BLUR_STEP)
    levels = node.get("levels", {})
    blur_levels = node.get("blur_levels", list(DEFAULT_BLUR_LEVELS))
    specs: list[Spec] = []
    for kind in BIDIRECTIONAL:
        for level in sorted(levels.get(kind, DEFAULT_LEVELS)):
            specs.append(Spec(kind, level, bases[kind] ** level))
    for level in sorted(blur_levels):
        specs.append(Spec("blur", level, step * level))
    return specs


def load_image_tensor(path: Path) -> torch.Tensor:
    """Decode 8-bit PNG/JPEG to a (C, H, W) float tensor in [0, 1]."""
    with Image.open(path) as im:
        if im.mode in ("1", "L", "I", "I;16", "LA"):
            im = im.convert("L")
        elif im.mode != "RGB":
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.uint8)
    if arr.ndim == 2:
        arr = arr[np.newaxis, :, :]
    else:
        arr = arr.transpose(2, 0, 1)
    return torch.from_numpy(arr.astype(np.float32) / 255.0)


def apply_reference(kind: str, parameter: float, img: torch.Tensor) -> torch.Tensor:
    """One reference-library transform on a [0, 1] float tensor."""
    if kind == "gamma":
        return TF.adjust_gamma(img, parameter)
    if kind == "contrast":
        return TF.adjust_contrast(img, parameter)
    if kind == "brightness":
        return TF.adjust_brightness(img, parameter)
    if kind == "sharpness":
        return TF.adjust_sharpness(img, parameter)
    if kind == "blur":
        size = 2 * math.ceil(3.0 * parameter) + 1
        return TF.gaussian_blur(img, [size, size], [parameter, parameter])
    raise ValueError(f"unknown kind {kind!r}")


def save_png(tensor: torch.Tensor, path: Path):
    u8 = np.rint(tensor.clamp(0, 1).numpy() * 255.0).astype(np.uint8)
    if u8.shape[0] == 1:
        pil = Image.fromarray(u8[0], mode="L")
    else:
        pil = Image.fromarray(u8.transpose(1, 2, 0), mode="RGB")
    path.parent.mkdir(parents=True, exist_ok=True)
    pil.save(path, format="PNG")


def generate(images_dir: Path, out_dir: Path, suite_config: dict | None = None) -> dict:
    """Render every (image, spec) fixture; returns counts and skipped specs."""
    torch.set_num_threads(1)
    images_dir, out_dir = Path(images_dir), Path(out_dir)
    specs = suite_from_config(suite_config)
    inputs = sorted(
        p for p in images_dir.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg")
    )
    if not inputs:
        raise SystemExit(f"no images found under {images_dir}")
    rows: list[list[str]] = []
    skipped: list[str] = []
    for src in inputs:
        tensor = load_image_tensor(src)
        for spec in specs:
            out_name = f"{src.stem}__{spec.tag}.png"
            try:
                result = apply_reference(spec.kind, spec.parameter, tensor)
            except Exception as e:  # noqa: BLE001 - record and move on
                skipped.append(f"{src.name} x {spec.tag}: {e}")
                continue
            save_png(result, out_dir / "expected" / out_name)
            rows.append(
                [f"inputs/{src.name}", spec.kind, str(spec.level), repr(spec.parameter), f"expected/{out_name}"]
            )
    out_dir.mkdir(parents=True, exist_ok=True)
    with (out_dir / "manifest.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["input", "kind", "level", "parameter", "output"])
        writer.writerows(rows)
    return {"fixtures": len(rows), "inputs": len(inputs), "specs": len(specs), "skipped": skipped}


def load_suite_config(path: Path | None) -> dict | None:
    if path is None:
        return None
    return json.loads(Path(path).read_text(encoding="utf-8"))
