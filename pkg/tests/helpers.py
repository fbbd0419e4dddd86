from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

from stresskit.config import AttributeDecl, DatasetSchema
from stresskit.dataset import load_manifest
from stresskit.image import ImageBuffer, encode_png

REPO_ROOT = Path(__file__).resolve().parent.parent


def stub_cmd(mode: str, *args: str) -> list[str]:
    return [sys.executable, "-m", "stresskit.stubs", mode, *args]


def random_image(rng: np.random.Generator, height: int, width: int, channels: int) -> ImageBuffer:
    return ImageBuffer.from_array(rng.random((height, width, channels), dtype=np.float32))


def write_tiny_dataset(tmp_path: Path, n: int = 6, size: int = 8):
    """Small manifest + images for scorer/harness plumbing tests."""
    schema = DatasetSchema(
        class_names=("c0", "c1"),
        attributes=(AttributeDecl("grp", "string"),),
    )
    gen = np.random.default_rng(99)
    images = tmp_path / "images"
    images.mkdir(exist_ok=True)
    lines = ["id,image_path,c0,c1,grp"]
    for i in range(n):
        img = ImageBuffer.from_array(gen.random((size, size, 1), dtype=np.float32))
        encode_png(img, images / f"x{i}.png")
        lines.append(f"x{i},images/x{i}.png,{i % 2},{(i + 1) % 2},{'a' if i < n // 2 else 'b'}")
    manifest = tmp_path / "manifest.csv"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return load_manifest(manifest, schema, name="tiny"), schema
