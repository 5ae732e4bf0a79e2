"""Dataset manifest: one index file plus per-domain directories of
8-bit lossless PNG images.

Index format (structured text)::

    format_version=1
    [domain siteA]
    siteA/img_00000.png,0
    siteA/img_00001.png,1
    ...

Images are stored as 3-channel 8-bit PNG; float images in [0, 1] are
quantized on write and mapped back to [0, 1] on read.  Builds are
deterministic byte for byte under a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

FORMAT_VERSION = 1


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    format_version: int
    domains: tuple  # of (name, tuple of (rel_path, label))

    def domain_names(self):
        return [name for name, _ in self.domains]

    def entries(self, domain: str):
        for name, rows in self.domains:
            if name == domain:
                return rows
        raise KeyError(f"unknown domain {domain!r}")


def save_image(path: Path, image: np.ndarray):
    """Quantize a 3×H×W float image in [0, 1] to 8-bit PNG."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.min() < -1e-9 or arr.max() > 1 + 1e-9:
        raise ValueError("image values must lie in [0, 1] for 8-bit storage")
    quantized = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(quantized.transpose(1, 2, 0), mode="RGB").save(path, format="PNG")


def load_image(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    return arr.transpose(2, 0, 1)


def write_manifest(root, domains: dict) -> Path:
    """Write per-domain images and the index; returns the index path.

    ``domains`` maps name -> (images N×3×H×W in [0, 1], labels).
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    blocks = []
    for name in sorted(domains):
        images, labels = domains[name]
        images = np.asarray(images)
        labels = np.asarray(labels)
        domain_dir = root / name
        domain_dir.mkdir(exist_ok=True)
        rows = []
        for i in range(images.shape[0]):
            rel = f"{name}/img_{i:05d}.png"
            save_image(root / rel, images[i])
            rows.append((rel, int(labels[i])))
        blocks.append((name, tuple(rows)))
    index = root / "manifest.txt"
    with open(index, "w", encoding="utf-8") as fh:
        fh.write(f"format_version={FORMAT_VERSION}\n")
        for name, rows in blocks:
            fh.write(f"[domain {name}]\n")
            for rel, label in rows:
                fh.write(f"{rel},{label}\n")
    return index


def read_manifest(index_path) -> DatasetManifest:
    index_path = Path(index_path)
    if index_path.is_dir():
        index_path = index_path / "manifest.txt"
    if not index_path.exists():
        raise FileNotFoundError(f"manifest not found: {index_path}")
    root = index_path.parent
    version = None
    domains = []
    current = None
    rows: list = []
    with open(index_path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("format_version="):
                version = int(line.split("=", 1)[1])
            elif line.startswith("[domain "):
                if current is not None:
                    domains.append((current, tuple(rows)))
                current = line[len("[domain ") : -1]
                rows = []
            else:
                rel, label = line.rsplit(",", 1)
                if label not in ("0", "1"):
                    raise ValueError(f"labels must be 0/1, got {label!r}")
                if not (root / rel).exists():
                    raise FileNotFoundError(f"manifest references missing file {rel}")
                rows.append((rel, int(label)))
    if current is not None:
        domains.append((current, tuple(rows)))
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported manifest format_version {version}")
    return DatasetManifest(root=root, format_version=version, domains=tuple(domains))


def load_domain(manifest: DatasetManifest, name: str):
    entries = manifest.entries(name)
    images = np.stack([load_image(manifest.root / rel) for rel, _ in entries])
    labels = np.array([label for _, label in entries], dtype=np.int64)
    return images, labels


def load_all_domains(manifest: DatasetManifest) -> dict:
    return {name: load_domain(manifest, name) for name in manifest.domain_names()}
