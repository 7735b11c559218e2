"""Regenerate the bundled synthetic mini-corpus (images + fixations CSV).

Each image is a smooth shaded background with one or two textured objects;
three synthetic observers fixate mostly on the objects. Output is
deterministic for a given seed.

    python scripts/make_minicorpus.py [out_dir]
"""

import sys
from pathlib import Path

import numpy as np
from PIL import Image

from mdis.metrics import records_to_csv

# name, (width, height), objects as (cx, cy, half-size)
SCENES = [
    ("blocks.png", (128, 128), [(40, 44, 14)]),
    ("stripes.png", (160, 120), [(110, 60, 18)]),
    ("pair.png", (200, 150), [(50, 40, 12), (150, 110, 16)]),
    ("square.png", (256, 256), [(170, 90, 24)]),
    ("wide.png", (681, 511), [(480, 300, 40)]),
]
SUBJECTS = ("s1", "s2", "s3")
FIX_PER_SUBJECT = 12


def render(size, objects, rng):
    w, h = size
    yy, xx = np.mgrid[0:h, 0:w] / max(w, h)
    base = 0.35 + 0.25 * xx + 0.15 * yy + 0.02 * rng.standard_normal((h, w))
    img = np.repeat(base[..., None], 3, axis=2) * np.array([1.0, 0.95, 0.85])
    for cx, cy, r in objects:
        patch = rng.uniform(0.0, 1.0, (2 * r, 2 * r, 3))
        img[cy - r : cy + r, cx - r : cx + r] = patch
    return (np.clip(img, 0, 1) * 255).round().astype(np.uint8)


def fixations(size, objects, rng):
    w, h = size
    out = []
    for k in range(FIX_PER_SUBJECT):
        if rng.random() < 0.8:
            cx, cy, r = objects[rng.integers(len(objects))]
            x, y = rng.normal(cx, r / 2), rng.normal(cy, r / 2)
        else:
            x, y = rng.uniform(0, w - 1), rng.uniform(0, h - 1)
        out.append((float(np.clip(round(x, 1), 0, w - 1)), float(np.clip(round(y, 1), 0, h - 1))))
    return out


def main(out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(20240531)
    records = []
    for name, size, objects in SCENES:
        Image.fromarray(render(size, objects, rng), "RGB").save(out / name)
        for s in SUBJECTS:
            records += [(name, s, x, y) for x, y in fixations(size, objects, rng)]
    records_to_csv(records, out / "fixations.csv")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).resolve().parents[1] / "src/mdis/data/minicorpus")
