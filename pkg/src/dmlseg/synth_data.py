"""Synthetic scenes with class co-occurrence structure.

Foreground classes are partitioned into pools; every image draws all its
shapes from a single pool.  Classes of equal rank in different pools share
a base color on purpose: a local patch cannot tell them apart, only the
surrounding scene can, which is exactly the signal windowed multi-label
supervision can exploit.
"""

from __future__ import annotations

import colorsys
import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .gt_gen import IGNORE
from .kv import parse_kv

MANIFEST_FORMAT = "dmlseg-corpus-v1"


def default_pools(num_classes: int) -> tuple[tuple[int, ...], ...]:
    """Split foreground classes 1..K-1 into two scene pools."""
    classes = list(range(1, num_classes))
    half = len(classes) // 2
    return tuple(classes[:half]), tuple(classes[half:])


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    size: tuple[int, int] = (96, 96)
    num_classes: int = 8
    pools: tuple[tuple[int, ...], ...] = None
    shapes_min: int = 3
    shapes_max: int = 6
    jitter: float = 0.08
    noise: float = 0.03

    def __post_init__(self):
        object.__setattr__(self, "size", tuple(self.size))
        if self.pools is None:
            object.__setattr__(self, "pools", default_pools(self.num_classes))
        object.__setattr__(self, "pools", tuple(tuple(sorted(p)) for p in self.pools))
        flat = [c for pool in self.pools for c in pool]
        if sorted(flat) != list(range(1, self.num_classes)):
            raise ConfigError(f"pools {self.pools} must partition 1..{self.num_classes - 1}")
        if not (0 <= self.shapes_min <= self.shapes_max):
            raise ConfigError(f"bad shape count range [{self.shapes_min}, {self.shapes_max}]")

    def to_kv(self) -> dict[str, str]:
        return {
            "format": MANIFEST_FORMAT,
            "seed": str(self.seed),
            "size": f"{self.size[0]}x{self.size[1]}",
            "num_classes": str(self.num_classes),
            "pools": "|".join(",".join(str(c) for c in p) for p in self.pools),
            "shapes_min": str(self.shapes_min),
            "shapes_max": str(self.shapes_max),
            "jitter": repr(self.jitter),
            "noise": repr(self.noise),
        }

    @classmethod
    def from_kv(cls, kv: dict[str, str]) -> "SceneSpec":
        try:
            h, _, w = kv["size"].partition("x")
            pools = tuple(tuple(int(c) for c in part.split(","))
                          for part in kv["pools"].split("|"))
            return cls(seed=int(kv["seed"]), size=(int(h), int(w)),
                       num_classes=int(kv["num_classes"]), pools=pools,
                       shapes_min=int(kv["shapes_min"]), shapes_max=int(kv["shapes_max"]),
                       jitter=float(kv["jitter"]), noise=float(kv["noise"]))
        except (KeyError, ValueError) as exc:
            raise DataError(f"bad scene spec in manifest: {exc}") from exc


def class_colors(spec: SceneSpec) -> np.ndarray:
    """(K, 3) base colors; same-rank classes across pools share a color."""
    colors = np.zeros((spec.num_classes, 3))
    colors[0] = (0.45, 0.45, 0.45)
    n_hues = max(len(p) for p in spec.pools)
    for pool in spec.pools:
        for rank, cls in enumerate(pool):
            colors[cls] = colorsys.hsv_to_rgb(rank / n_hues, 0.55, 0.75)
    return colors


def palette(num_classes: int) -> np.ndarray:
    """(K, 3) distinct display colors for rendering predicted label maps."""
    colors = np.zeros((num_classes, 3))
    colors[0] = (0.45, 0.45, 0.45)
    for c in range(1, num_classes):
        colors[c] = colorsys.hsv_to_rgb((c - 1) / max(num_classes - 1, 1), 0.8, 0.9)
    return colors


def generate_scene(spec: SceneSpec, index: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic (image, mask) pair for one scene index.

    image is (3, H, W) float32 on the 1/255 grid so disk round trips are
    exact; mask is (H, W) uint8 class indices.
    """
    h, w = spec.size
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, index]))
    pool = spec.pools[index % len(spec.pools)]
    colors = class_colors(spec)

    image = np.empty((h, w, 3))
    image[:] = colors[0]
    mask = np.zeros((h, w), dtype=np.uint8)
    ys, xs = np.mgrid[0:h, 0:w]

    n_shapes = int(rng.integers(spec.shapes_min, spec.shapes_max + 1))
    for _ in range(n_shapes):
        cls = int(rng.choice(pool))
        kind = int(rng.integers(0, 3))
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        radius = rng.uniform(0.12, 0.30) * min(h, w)
        if kind == 0:  # rectangle
            ry = radius * rng.uniform(0.6, 1.4)
            rx = radius * rng.uniform(0.6, 1.4)
            region = (np.abs(ys - cy) <= ry) & (np.abs(xs - cx) <= rx)
        elif kind == 1:  # disk
            region = (ys - cy) ** 2 + (xs - cx) ** 2 <= radius ** 2
        else:  # triangle from three vertices on a circle
            theta = rng.uniform(0, 2 * np.pi)
            vs = [(cy + 1.4 * radius * np.sin(theta + k * 2 * np.pi / 3),
                   cx + 1.4 * radius * np.cos(theta + k * 2 * np.pi / 3))
                  for k in range(3)]
            region = np.ones((h, w), dtype=bool)
            for (ay, ax), (by, bx) in zip(vs, vs[1:] + vs[:1]):
                cross = (bx - ax) * (ys - ay) - (by - ay) * (xs - ax)
                region &= cross >= 0
        color = np.clip(colors[cls] + rng.normal(0, spec.jitter, 3), 0, 1)
        image[region] = color
        mask[region] = cls

    image += rng.normal(0, spec.noise, (h, w, 3))
    image = np.rint(np.clip(image, 0, 1) * 255).astype(np.uint8)
    return (image.astype(np.float32) / 255.0).transpose(2, 0, 1), mask


# --- netpbm (binary PPM/PGM) -------------------------------------------------

def write_ppm(path: Path, image: np.ndarray) -> None:
    """image is (3, H, W) float in [0, 1] on the 1/255 grid."""
    u8 = np.rint(image * 255).astype(np.uint8).transpose(1, 2, 0)
    h, w, _ = u8.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(u8.tobytes())


def write_pgm(path: Path, mask: np.ndarray) -> None:
    h, w = mask.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(np.ascontiguousarray(mask, dtype=np.uint8).tobytes())


def _read_pnm(path: Path, magic: bytes) -> np.ndarray:
    data = Path(path).read_bytes()
    if not data.startswith(magic):
        raise DataError(f"{path}: expected {magic.decode()} netpbm file")
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        try:
            fields.append(int(data[start:pos]))
        except ValueError as exc:
            raise DataError(f"{path}: malformed netpbm header") from exc
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise DataError(f"{path}: only maxval 255 supported, got {maxval}")
    channels = 3 if magic == b"P6" else 1
    raster = data[pos:pos + w * h * channels]
    if len(raster) != w * h * channels:
        raise DataError(f"{path}: truncated raster")
    arr = np.frombuffer(raster, dtype=np.uint8)
    return arr.reshape(h, w, 3) if channels == 3 else arr.reshape(h, w)


def read_ppm(path: Path) -> np.ndarray:
    """-> (3, H, W) float32 in [0, 1]."""
    u8 = _read_pnm(path, b"P6")
    return (u8.astype(np.float32) / 255.0).transpose(2, 0, 1)


def read_pgm(path: Path) -> np.ndarray:
    return _read_pnm(path, b"P5").copy()


# --- corpus ------------------------------------------------------------------

@dataclass
class Corpus:
    root: Path
    spec: SceneSpec
    entries: list[tuple[str, str, str]]  # (split, image rel path, mask rel path)
    content_hash: str = ""

    def indices(self, split: str) -> list[int]:
        return [i for i, (s, _, _) in enumerate(self.entries) if s == split]

    def load_image(self, i: int) -> np.ndarray:
        return read_ppm(self.root / self.entries[i][1])

    def load_mask(self, i: int) -> np.ndarray:
        return read_pgm(self.root / self.entries[i][2])


def _corpus_hash(root: Path, entries) -> str:
    outer = hashlib.sha256()
    for _, img, msk in entries:
        for rel in (img, msk):
            outer.update(hashlib.sha256((root / rel).read_bytes()).digest())
    return outer.hexdigest()


def write_corpus(spec: SceneSpec, n_train: int, n_val: int, out_dir: Path) -> Corpus:
    """Generate scenes, write PPM/PGM pairs and a hashed manifest.

    With 500+ scenes a class-balance check runs: every foreground class
    must appear in at least 5% of its pool's images.
    """
    root = Path(out_dir)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    entries = []
    appearance = np.zeros(spec.num_classes, dtype=np.int64)
    pool_images = np.zeros(len(spec.pools), dtype=np.int64)
    for i in range(n_train + n_val):
        image, mask = generate_scene(spec, i)
        img_rel = f"images/img_{i:05d}.ppm"
        msk_rel = f"masks/msk_{i:05d}.pgm"
        write_ppm(root / img_rel, image)
        write_pgm(root / msk_rel, mask)
        entries.append(("train" if i < n_train else "val", img_rel, msk_rel))
        pool_images[i % len(spec.pools)] += 1
        for cls in np.unique(mask):
            appearance[cls] += 1

    total = n_train + n_val
    if total >= 500:
        for g, pool in enumerate(spec.pools):
            for cls in pool:
                if appearance[cls] < 0.05 * pool_images[g]:
                    raise DataError(
                        f"class {cls} appears in {appearance[cls]} of "
                        f"{pool_images[g]} pool-{g} images (< 5%); "
                        f"regenerate with a different seed")

    content_hash = _corpus_hash(root, entries)
    lines = [f"{k} = {v}" for k, v in spec.to_kv().items()]
    lines.append(f"n_train = {n_train}")
    lines.append(f"n_val = {n_val}")
    lines.append(f"hash = {content_hash}")
    lines += [f"{split}\t{img}\t{msk}" for split, img, msk in entries]
    (root / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return Corpus(root=root, spec=spec, entries=entries, content_hash=content_hash)


def read_corpus(dir_path: Path) -> Corpus:
    """Parse and verify a corpus directory against its manifest hash."""
    root = Path(dir_path)
    manifest = root / "manifest.txt"
    if not manifest.exists():
        raise DataError(f"no manifest.txt in {root}")
    kv_lines = []
    entries = []
    for raw in manifest.read_text(encoding="utf-8").splitlines():
        if not raw.strip():
            continue
        if "\t" in raw:
            parts = raw.split("\t")
            if len(parts) != 3:
                raise DataError(f"bad manifest file entry {raw!r}")
            entries.append((parts[0], parts[1], parts[2]))
        else:
            kv_lines.append(raw)
    kv = parse_kv("\n".join(kv_lines))
    if kv.get("format") != MANIFEST_FORMAT:
        raise DataError(f"unknown corpus format {kv.get('format')!r}")
    spec = SceneSpec.from_kv(kv)
    for _, img, msk in entries:
        for rel in (img, msk):
            if not (root / rel).exists():
                raise DataError(f"manifest lists missing file {rel}")
    got = _corpus_hash(root, entries)
    if got != kv.get("hash"):
        raise DataError(f"corpus hash mismatch: manifest {kv.get('hash')}, files {got}")
    corpus = Corpus(root=root, spec=spec, entries=entries, content_hash=got)
    for i in range(len(entries)):
        mask = corpus.load_mask(i)
        bad = (mask >= spec.num_classes) & (mask != IGNORE)
        if bad.any():
            raise DataError(f"{entries[i][2]}: invalid class index {int(mask[bad][0])}")
    return corpus
