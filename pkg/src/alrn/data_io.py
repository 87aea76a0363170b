"""Tensor files, dataset manifests, the planted-attribute generator and PGM export."""

import json
import os
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

MAGIC = b"ALRT"
VERSION = 1
SPLIT_TAGS = ("train_seen", "test_seen", "test_unseen")


class FormatError(ValueError):
    """Malformed tensor file or manifest."""


class SpecError(ValueError):
    """Invalid generator settings or dataset layout."""


# -- tensor files -------------------------------------------------------------

def encode_tensor(tensor):
    # asarray, not ascontiguousarray: the latter promotes 0-d input to 1-d
    arr = np.asarray(tensor, dtype="<f8")
    if arr.ndim > 255:
        raise FormatError(f"rank {arr.ndim} exceeds 255")
    header = MAGIC + struct.pack("<BB", VERSION, arr.ndim)
    for d in arr.shape:
        if d > 0xFFFFFFFF:
            raise FormatError(f"dimension {d} does not fit in u32")
        header += struct.pack("<I", d)
    return header + arr.tobytes(order="C")


def decode_tensor(buf):
    if len(buf) < 6:
        raise FormatError(f"truncated header at byte offset {len(buf)}")
    if buf[:4] != MAGIC:
        raise FormatError(f"bad magic {bytes(buf[:4])!r} at byte offset 0")
    version, rank = struct.unpack_from("<BB", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported version {version} at byte offset 4")
    offset = 6
    if len(buf) < offset + 4 * rank:
        raise FormatError(f"truncated dims at byte offset {len(buf)}")
    dims = struct.unpack_from(f"<{rank}I", buf, offset)
    offset += 4 * rank
    count = 1
    for d in dims:
        count *= d
    expected = offset + 8 * count
    if len(buf) != expected:
        raise FormatError(
            f"payload length mismatch: expected {expected} bytes, got {len(buf)} "
            f"(payload starts at byte offset {offset})")
    return np.frombuffer(buf, dtype="<f8", offset=offset, count=count).astype(np.float64).reshape(dims)


def write_tensor(path, tensor):
    Path(path).write_bytes(encode_tensor(tensor))


def read_tensor(path):
    return decode_tensor(Path(path).read_bytes())


# -- in-memory dataset ---------------------------------------------------------

@dataclass
class ZSLDataset:
    features: np.ndarray          # (N, C, H, W)
    labels: np.ndarray            # (N,)
    splits: np.ndarray            # (N,) split tags
    semantics: np.ndarray         # (N_A, N_C)
    seen: list
    unseen: list
    masks: Optional[np.ndarray] = None        # (N, N_A, H, W) planted patches
    local_attributes: list = field(default_factory=list)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.splits = np.asarray(self.splits)
        if set(self.seen) & set(self.unseen):
            raise SpecError("seen and unseen classes overlap")
        seen, unseen = set(self.seen), set(self.unseen)
        for y, tag in zip(self.labels, self.splits):
            if tag not in SPLIT_TAGS:
                raise SpecError(f"unknown split tag {tag!r}")
            if (tag == "test_unseen") != (int(y) in unseen) or (tag != "test_unseen" and int(y) not in seen):
                raise SpecError(f"split tag {tag!r} inconsistent with class {int(y)}")

    def subset(self, tags):
        keep = np.isin(self.splits, list(tags))
        return ZSLDataset(
            features=self.features[keep], labels=self.labels[keep], splits=self.splits[keep],
            semantics=self.semantics, seen=list(self.seen), unseen=list(self.unseen),
            masks=None if self.masks is None else self.masks[keep],
            local_attributes=list(self.local_attributes),
        )

    @property
    def train(self):
        return self.subset(["train_seen"])

    @property
    def test(self):
        return self.subset(["test_seen", "test_unseen"])


def save_dataset(dataset, directory):
    """Write ``manifest.json``, the semantics tensor and one tensor per sample."""
    directory = Path(directory)
    (directory / "features").mkdir(parents=True, exist_ok=True)
    write_tensor(directory / "semantics.alrt", dataset.semantics)
    records = []
    for i, (x, y, tag) in enumerate(zip(dataset.features, dataset.labels, dataset.splits)):
        rel = f"features/{i:06d}.alrt"
        write_tensor(directory / rel, x)
        rec = {"features": rel, "class_id": int(y), "split": str(tag)}
        if dataset.masks is not None:
            mrel = f"features/{i:06d}.mask.alrt"
            write_tensor(directory / mrel, dataset.masks[i].astype(np.float64))
            rec["mask"] = mrel
        records.append(rec)
    manifest = {
        "num_attributes": int(dataset.semantics.shape[0]),
        "num_classes": int(dataset.semantics.shape[1]),
        "semantics": "semantics.alrt",
        "seen_classes": [int(c) for c in dataset.seen],
        "unseen_classes": [int(c) for c in dataset.unseen],
        "local_attributes": [int(a) for a in dataset.local_attributes],
        "samples": records,
    }
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def load_dataset(manifest_path):
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{manifest_path}: {exc}") from None
    for key in ("num_attributes", "num_classes", "semantics", "seen_classes",
                "unseen_classes", "samples"):
        if key not in manifest:
            raise FormatError(f"{manifest_path}: missing key {key!r}")
    S = read_tensor(root / manifest["semantics"])
    if S.shape != (manifest["num_attributes"], manifest["num_classes"]):
        raise FormatError(f"semantics shape {S.shape} does not match manifest counts")
    feats, labels, splits, masks = [], [], [], []
    for rec in manifest["samples"]:
        fpath = root / rec["features"]
        if not fpath.exists():
            raise FormatError(f"missing feature file {fpath}")
        x = read_tensor(fpath)
        if x.ndim != 3:
            raise FormatError(f"{fpath}: expected rank 3, got {x.ndim}")
        feats.append(x)
        labels.append(rec["class_id"])
        splits.append(rec["split"])
        if "mask" in rec:
            masks.append(read_tensor(root / rec["mask"]) > 0.5)
    if len({f.shape for f in feats}) > 1:
        raise FormatError("feature maps have inconsistent shapes")
    return ZSLDataset(
        features=np.stack(feats), labels=np.array(labels), splits=np.array(splits),
        semantics=S, seen=manifest["seen_classes"], unseen=manifest["unseen_classes"],
        masks=np.stack(masks) if masks and len(masks) == len(feats) else None,
        local_attributes=manifest.get("local_attributes", []),
    )


# -- planted-attribute generator -------------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    num_classes: int = 16
    num_seen: int = 12
    samples_per_class: int = 20
    num_attributes: int = 24
    channels: int = 32
    height: int = 7
    width: int = 7
    local_fraction: float = 0.5
    patch_size: int = 2
    signal_strength: float = 3.0
    variation: float = 0.5
    noise: float = 1.0
    test_fraction: float = 0.25
    attribute_density: float = 0.5
    seed: int = 0

    def validate(self):
        if not 0 < self.num_seen < self.num_classes:
            raise SpecError(f"need 0 < num_seen < num_classes, got {self.num_seen}/{self.num_classes}")
        if self.patch_size < 1 or self.patch_size > min(self.height, self.width):
            raise SpecError(
                f"patch {self.patch_size}x{self.patch_size} does not fit a "
                f"{self.height}x{self.width} grid")
        if min(self.variation, self.noise) < 0:
            raise SpecError("variation and noise must be non-negative")
        if not 0.0 <= self.local_fraction <= 1.0:
            raise SpecError("local_fraction must lie in [0, 1]")
        if not 0.0 <= self.test_fraction < 1.0:
            raise SpecError("test_fraction must lie in [0, 1)")
        if min(self.samples_per_class, self.num_attributes, self.channels) < 1:
            raise SpecError("counts must be positive")

    def to_dict(self):
        return asdict(self)


def generate_synthetic(spec):
    """Plant local and holistic attribute signals into noisy feature grids.

    Each attribute owns a random unit direction in feature space. A local
    attribute is painted into one random ``patch_size`` square per image; a
    holistic one is added at every position. The planted amplitude is
    ``signal_strength * s[n] * (1 + delta)`` with per-image jitter
    ``delta ~ U(-variation, variation)``; for holistic attributes this is also
    the spatial mean of the planted signal.

    Masks mark where each attribute was planted and stay empty for attributes
    absent from the class. Seen classes contribute ``train_seen`` and
    ``test_seen`` samples, unseen classes only ``test_unseen``.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    nc, na, c, h, w = (spec.num_classes, spec.num_attributes, spec.channels,
                       spec.height, spec.width)
    active = rng.random((na, nc)) < spec.attribute_density
    S = np.where(active, rng.uniform(0.2, 1.0, size=(na, nc)), 0.0)
    directions = rng.normal(size=(na, c))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    n_local = int(round(spec.local_fraction * na))
    local = np.sort(rng.permutation(na)[:n_local])
    is_local = np.zeros(na, dtype=bool)
    is_local[local] = True

    classes = rng.permutation(nc)
    seen = sorted(int(k) for k in classes[:spec.num_seen])
    unseen = sorted(int(k) for k in classes[spec.num_seen:])
    n_test = int(round(spec.test_fraction * spec.samples_per_class))
    p = spec.patch_size

    feats, labels, splits, masks = [], [], [], []
    for k in range(nc):
        for j in range(spec.samples_per_class):
            delta = rng.uniform(-spec.variation, spec.variation, size=na)
            amp = spec.signal_strength * S[:, k] * (1.0 + delta)
            x = spec.noise * rng.normal(size=(c, h, w))
            mask = np.zeros((na, h, w), dtype=bool)
            for n in range(na):
                if is_local[n]:
                    # location is drawn even for absent attributes so the stream
                    # does not depend on which attributes a class carries
                    i0 = rng.integers(0, h - p + 1)
                    j0 = rng.integers(0, w - p + 1)
                    if amp[n] != 0.0:
                        mask[n, i0:i0 + p, j0:j0 + p] = True
                        x[:, i0:i0 + p, j0:j0 + p] += (amp[n] * directions[n])[:, None, None]
                elif amp[n] != 0.0:
                    mask[n] = True
                    x += (amp[n] * directions[n])[:, None, None]
            feats.append(x)
            labels.append(k)
            masks.append(mask)
            if k in unseen:
                splits.append("test_unseen")
            else:
                splits.append("test_seen" if j < n_test else "train_seen")

    return ZSLDataset(
        features=np.stack(feats), labels=np.array(labels), splits=np.array(splits),
        semantics=S, seen=seen, unseen=unseen, masks=np.stack(masks),
        local_attributes=[int(a) for a in local],
    )


# -- attention maps -------------------------------------------------------------

def attention_to_pixels(channel):
    channel = np.asarray(channel, dtype=np.float64)
    lo, hi = channel.min(), channel.max()
    if hi - lo <= 0.0:
        return np.full(channel.shape, 128, dtype=np.uint8)
    return np.rint((channel - lo) / (hi - lo) * 255.0).astype(np.uint8)


def export_attention(attention, index, path):
    """Write one attention channel as a binary (P5) grayscale PGM."""
    attention = np.asarray(attention)
    if not 0 <= index < attention.shape[0]:
        raise IndexError(f"attribute index {index} out of range for {attention.shape[0]} attributes")
    pixels = attention_to_pixels(attention[index])
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())
    return path


def read_pgm(path):
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise FormatError(f"{path}: not a P5 PGM")
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


def attention_mass_in_mask(attention, index, mask):
    attention = np.asarray(attention)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != attention.shape[-2:]:
        raise ValueError(f"mask shape {mask.shape} does not match attention grid {attention.shape[-2:]}")
    return float(attention[index][mask].sum())


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return Path(path)
