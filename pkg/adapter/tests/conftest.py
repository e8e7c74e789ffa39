from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
from PIL import Image


@pytest.fixture
def toy_images(tmp_path) -> list[tuple[str, Path]]:
    """Ten tiny distinct PNGs with stable ids."""
    rng = np.random.default_rng(0)
    out = []
    for i in range(10):
        path = tmp_path / f"img_{i:02d}.png"
        pixels = rng.integers(0, 256, size=(8, 8, 3), dtype=np.uint8)
        Image.fromarray(pixels, "RGB").save(path)
        out.append((f"sample_{i:02d}", path))
    return out


def write_manifest(path: Path, entries) -> Path:
    path.write_text("".join(f"{i}\t{v}\n" for i, v in entries), encoding="utf-8")
    return path
