"""On-disk dataset layout: A/<id>.ppm, B/<id>.ppm, label/<id>.pgm."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

from ..errors import DataError
from . import pnm
from .synth import BiTemporalSample

SUBDIRS = ("A", "B", "label")


def sample_id(index: int) -> str:
    return f"{index:04d}"


def write_dataset(root, samples: Sequence[BiTemporalSample], *,
                  force: bool = False) -> None:
    root = Path(root)
    if root.exists() and any(root.iterdir()) and not force:
        raise DataError(f"output directory {root} is not empty "
                        f"(use force to overwrite)")
    for sub in SUBDIRS:
        (root / sub).mkdir(parents=True, exist_ok=True)
    for i, s in enumerate(samples):
        sid = sample_id(i)
        pnm.write_image(root / "A" / f"{sid}.ppm", s.image_t1)
        pnm.write_image(root / "B" / f"{sid}.ppm", s.image_t2)
        pnm.write_mask(root / "label" / f"{sid}.pgm", s.gt_change)


def list_ids(root) -> list[str]:
    label_dir = Path(root) / "label"
    if not label_dir.is_dir():
        raise DataError(f"{root}: missing label/ directory")
    return sorted(p.stem for p in label_dir.glob("*.pgm"))


def read_dataset(root) -> list[BiTemporalSample]:
    root = Path(root)
    ids = list_ids(root)
    if not ids:
        raise DataError(f"{root}: no samples found under label/")
    samples = []
    for sid in ids:
        path_a = root / "A" / f"{sid}.ppm"
        path_b = root / "B" / f"{sid}.ppm"
        if not path_a.exists() or not path_b.exists():
            raise DataError(f"{root}: sample {sid} is missing an epoch image")
        samples.append(BiTemporalSample(pnm.read_image(path_a),
                                        pnm.read_image(path_b),
                                        pnm.read_mask(root / "label" / f"{sid}.pgm")))
    return samples
