#!/usr/bin/env python3
"""Generate the committed parity-fixture input images.

Twenty deterministic images, mixing grayscale and RGB and several sizes,
each with broad gradients plus multi-frequency texture so every transform
has something to bite on. Sides stay >= 24 px so the largest blur kernel
(radius 11 at sigma 3.6) fits the reference library's reflect padding.

Usage: python3 scripts/make_parity_inputs.py [out_dir]
Regenerating into the committed directory is byte-stable.
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
from PIL import Image

SIZES = [(32, 32), (40, 28), (28, 40), (36, 36)]


def make_image(index: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([20240915, index])))
    h, w = SIZES[index % len(SIZES)]
    rgb = index % 2 == 1
    channels = 3 if rgb else 1
    y = np.linspace(0.1, 0.9, h)[:, None]
    x = np.arange(w)[None, :] / max(w - 1, 1)
    planes = []
    for c in range(channels):
        ph = rng.uniform(0, 2 * np.pi, size=3)
        tex = (
            0.10 * np.sin(2 * np.pi * 2.0 * x + ph[0])
            + 0.08 * np.sin(2 * np.pi * 7.0 * x + ph[1])
            + 0.05 * np.sin(2 * np.pi * 13.0 * (y + x) + ph[2])
        )
        speckle = rng.uniform(-0.06, 0.06, size=(h, w))
        planes.append(np.clip(y + tex + speckle, 0.01, 0.99))
    img = np.stack(planes, axis=-1)
    return np.rint(img * 255.0).astype(np.uint8)


def main(out_dir: str) -> int:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(20):
        arr = make_image(i)
        if arr.shape[-1] == 1:
            pil = Image.fromarray(arr[:, :, 0], mode="L")
        else:
            pil = Image.fromarray(arr, mode="RGB")
        pil.save(out / f"img{i:02d}.png", format="PNG")
    print(f"wrote 20 images to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1] if len(sys.argv) > 1 else "fixtures/parity/inputs"))
