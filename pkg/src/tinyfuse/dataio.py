"""Synthetic complementary-modality classification tasks and dataset persistence.

A task has M modalities with sub-symbol alphabets K_1..K_M; the class count is
K = prod(K_m). A label decomposes into per-modality sub-symbols by mixed-radix
(most-significant digit first), and modality m renders *only* its own digit as
a fixed seeded template (a sum of three Gaussian blobs) plus Gaussian noise.
By construction no single modality can identify the class: the Bayes ceiling
of modality m alone is 1 / prod_{j != m} K_j, so fused models must beat every
unimodal model by a wide, known margin.

Datasets persist as a manifest (JSON: task, splits, per-file sha256) plus raw
little-endian tensor blobs with a 16-byte shape header (eight u16 extents,
right-padded with 1s; the manifest carries the authoritative shape/dtype).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"
BLOB_HEADER_LEN = 16
_DTYPES = {"float32": "<f4", "int64": "<i8"}

SPLIT_FRACTIONS = {"train": 0.7, "val": 0.1, "test": 0.2}


@dataclass(frozen=True)
class SyntheticTaskSpec:
    name: str
    alphabet_sizes: tuple[int, ...]          # per modality
    shapes: tuple[tuple[int, int, int], ...]  # per modality (H, W, C)
    noise_sigma: float
    template_seed: int
    sample_count: int

    def __post_init__(self):
        object.__setattr__(self, "alphabet_sizes", tuple(int(k) for k in self.alphabet_sizes))
        object.__setattr__(self, "shapes", tuple(tuple(int(d) for d in s) for s in self.shapes))
        if len(self.alphabet_sizes) != len(self.shapes) or not self.alphabet_sizes:
            raise DataError("need one alphabet size and one shape per modality")
        if any(k < 1 for k in self.alphabet_sizes) or self.num_classes < 2:
            raise DataError("alphabets must be >= 1 with at least 2 classes overall")
        if any(d < 1 for s in self.shapes for d in s):
            raise DataError("modality shapes must be positive")
        if self.noise_sigma < 0:
            raise DataError("noise_sigma must be >= 0")
        if self.sample_count < self.num_classes:
            raise DataError(
                f"sample_count {self.sample_count} < class count {self.num_classes}"
            )

    @property
    def num_modalities(self) -> int:
        return len(self.alphabet_sizes)

    @property
    def num_classes(self) -> int:
        return math.prod(self.alphabet_sizes)

    @property
    def modality_names(self) -> tuple[str, ...]:
        return tuple(f"m{i}" for i in range(self.num_modalities))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "alphabet_sizes": list(self.alphabet_sizes),
            "shapes": [list(s) for s in self.shapes],
            "noise_sigma": self.noise_sigma,
            "template_seed": self.template_seed,
            "sample_count": self.sample_count,
        }

    @staticmethod
    def from_dict(d) -> "SyntheticTaskSpec":
        return SyntheticTaskSpec(
            name=str(d["name"]),
            alphabet_sizes=tuple(d["alphabet_sizes"]),
            shapes=tuple(tuple(s) for s in d["shapes"]),
            noise_sigma=float(d["noise_sigma"]),
            template_seed=int(d["template_seed"]),
            sample_count=int(d["sample_count"]),
        )


PRESETS = {
    # three audio-like 32x32 feature maps, 2x2x2 = 8 classes, 6000 samples
    "audio3": SyntheticTaskSpec(
        name="audio3",
        alphabet_sizes=(2, 2, 2),
        shapes=((32, 32, 1), (32, 32, 1), (32, 32, 1)),
        noise_sigma=0.3,
        template_seed=20240211,
        sample_count=6000,
    ),
    # two image-like 64x64 maps, 4x4 = 16 classes
    "image2": SyntheticTaskSpec(
        name="image2",
        alphabet_sizes=(4, 4),
        shapes=((64, 64, 1), (64, 64, 1)),
        noise_sigma=0.3,
        template_seed=20240212,
        sample_count=3200,
    ),
}


def decompose_label(label: int, alphabet_sizes) -> tuple[int, ...]:
    """Mixed-radix digits of the label, most-significant (modality 0) first."""
    digits = []
    k = int(label)
    for base in reversed(alphabet_sizes):
        digits.append(k % base)
        k //= base
    return tuple(reversed(digits))


def unimodal_ceiling(spec: SyntheticTaskSpec, modality_index: int) -> float:
    """Bayes-optimal accuracy achievable from one modality alone."""
    others = math.prod(
        k for j, k in enumerate(spec.alphabet_sizes) if j != modality_index
    )
    return 1.0 / others


@dataclass
class Dataset:
    spec: SyntheticTaskSpec
    modalities: dict[str, np.ndarray]  # name -> (N, H, W, C) float32
    labels: np.ndarray                 # (N,) int64
    splits: dict[str, np.ndarray]      # name -> sorted index array
    _fingerprint: str = field(default="", repr=False)

    def fingerprint(self) -> str:
        if not self._fingerprint:
            h = hashlib.sha256()
            h.update(json.dumps(self.spec.to_dict(), sort_keys=True).encode())
            for name in sorted(self.modalities):
                h.update(self.modalities[name].tobytes())
            h.update(self.labels.tobytes())
            for name in sorted(self.splits):
                h.update(self.splits[name].tobytes())
            self._fingerprint = h.hexdigest()
        return self._fingerprint

    def input_shapes(self) -> dict[str, tuple[int, ...]]:
        return {n: tuple(a.shape[1:]) for n, a in self.modalities.items()}


def _blob_templates(rng: np.random.Generator, shape, count: int = 3) -> np.ndarray:
    """Sum of `count` random signed Gaussian blobs per channel."""
    h, w, c = shape
    yy, xx = np.mgrid[0:h, 0:w]
    out = np.zeros((h, w, c), dtype=np.float64)
    for ch in range(c):
        for _ in range(count):
            cy = rng.uniform(0, h)
            cx = rng.uniform(0, w)
            sigma = rng.uniform(min(h, w) / 8.0, min(h, w) / 3.0)
            amp = rng.uniform(0.5, 1.5) * rng.choice((-1.0, 1.0))
            out[:, :, ch] += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))
    return out.astype(np.float32)


def generate(spec: SyntheticTaskSpec, seed: int) -> Dataset:
    """Deterministic synthetic dataset: identical (spec, seed) -> identical bits.

    Draw order is fixed: templates (from template_seed), label permutation,
    per-modality noise in modality order, then the split permutation.
    """
    n, K = spec.sample_count, spec.num_classes
    template_rng = np.random.default_rng(spec.template_seed)
    templates = []  # per modality: (K_m, H, W, C)
    for m, shape in enumerate(spec.shapes):
        templates.append(
            np.stack([_blob_templates(template_rng, shape) for _ in range(spec.alphabet_sizes[m])])
        )

    rng = np.random.default_rng(seed)
    base = np.arange(n, dtype=np.int64) % K  # balanced within +-1 by construction
    labels = base[rng.permutation(n)]

    digit_table = np.array(
        [decompose_label(k, spec.alphabet_sizes) for k in range(K)], dtype=np.int64
    )
    digits = digit_table[labels]  # (N, M)

    modalities = {}
    for m, name in enumerate(spec.modality_names):
        clean = templates[m][digits[:, m]]
        noise = rng.standard_normal(size=(n,) + spec.shapes[m], dtype=np.float32)
        modalities[name] = clean + np.float32(spec.noise_sigma) * noise

    perm = rng.permutation(n)
    n_train = int(round(SPLIT_FRACTIONS["train"] * n))
    n_val = int(round(SPLIT_FRACTIONS["val"] * n))
    splits = {
        "train": np.sort(perm[:n_train]),
        "val": np.sort(perm[n_train : n_train + n_val]),
        "test": np.sort(perm[n_train + n_val :]),
    }
    return Dataset(spec, modalities, labels, splits)


# ---------------------------------------------------------------------------
# persistence


def _write_blob(path: Path, array: np.ndarray, dtype_name: str) -> str:
    a = np.ascontiguousarray(array.astype(_DTYPES[dtype_name], copy=False))
    dims = list(a.shape)
    if len(dims) > 8:
        raise DataError(f"tensor rank {len(dims)} > 8 unsupported by the blob header")
    if any(d >= 2**16 for d in dims):
        raise DataError(f"extent too large for u16 blob header: {dims}")
    header = np.array(dims + [1] * (8 - len(dims)), dtype="<u2").tobytes()
    assert len(header) == BLOB_HEADER_LEN
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(a.tobytes())
    return _sha256_file(path)


def _read_blob(path: Path, shape, dtype_name: str) -> np.ndarray:
    expected = math.prod(shape) * np.dtype(_DTYPES[dtype_name]).itemsize
    with open(path, "rb") as fh:
        header = fh.read(BLOB_HEADER_LEN)
        payload = fh.read()
    if len(header) != BLOB_HEADER_LEN or len(payload) != expected:
        raise DataError(
            f"{path.name}: blob length {len(payload)} != expected {expected} for shape {shape}"
        )
    dims = np.frombuffer(header, dtype="<u2")
    if math.prod(int(d) for d in dims) != math.prod(shape):
        raise DataError(f"{path.name}: header extents {dims.tolist()} conflict with {shape}")
    return np.frombuffer(payload, dtype=_DTYPES[dtype_name]).reshape(shape).copy()


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def save_dataset(dataset: Dataset, directory) -> Path:
    """Write manifest + blobs into `directory`; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = {}
    for name in dataset.spec.modality_names:
        fname = f"{name}.bin"
        digest = _write_blob(directory / fname, dataset.modalities[name], "float32")
        files[name] = {
            "path": fname,
            "dtype": "float32",
            "shape": list(dataset.modalities[name].shape),
            "sha256": digest,
        }
    digest = _write_blob(directory / "labels.bin", dataset.labels, "int64")
    files["labels"] = {
        "path": "labels.bin",
        "dtype": "int64",
        "shape": [int(dataset.labels.shape[0])],
        "sha256": digest,
    }
    manifest = {
        "version": MANIFEST_VERSION,
        "task": dataset.spec.to_dict(),
        "files": files,
        "splits": {k: np.asarray(v).tolist() for k, v in dataset.splits.items()},
    }
    path = directory / MANIFEST_NAME
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return path


def load_dataset(manifest_path) -> Dataset:
    """Load and validate a dataset; checksum or split inconsistencies reject it."""
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / MANIFEST_NAME
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("version") != MANIFEST_VERSION:
        raise DataError(f"unsupported dataset manifest version {manifest.get('version')!r}")
    spec = SyntheticTaskSpec.from_dict(manifest["task"])
    directory = manifest_path.parent

    arrays = {}
    for name, entry in manifest["files"].items():
        path = directory / entry["path"]
        if not path.exists():
            raise DataError(f"dataset file missing: {path}")
        if _sha256_file(path) != entry["sha256"]:
            raise DataError(f"checksum mismatch for {path.name}")
        arrays[name] = _read_blob(path, tuple(entry["shape"]), entry["dtype"])

    labels = arrays.pop("labels")
    n = labels.shape[0]
    splits = {k: np.asarray(v, dtype=np.int64) for k, v in manifest["splits"].items()}
    seen = np.concatenate(list(splits.values())) if splits else np.empty(0, dtype=np.int64)
    if seen.size != np.unique(seen).size:
        raise DataError("splits overlap")
    if seen.size and (seen.min() < 0 or seen.max() >= n):
        raise DataError("split indices out of range")
    return Dataset(spec, arrays, labels, splits)
