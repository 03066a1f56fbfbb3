"""
Dataset Service
Synthetic quadrants data, MNIST IDX ingestion, deterministic splits/subsets
and CSV export
"""

import gzip
import hashlib
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import pandas as pd
from sklearn.model_selection import train_test_split

from app.core.config import settings
from app.core.errors import DataFormatError, DomainError
from app.servies.encoding_service import LabelAlphabet, as_rank_indices

logger = logging.getLogger("condor-ordinal.dataset")

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}

PathLike = Union[str, Path]


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray          # (N, D)
    ranks: np.ndarray             # (N,) 1-based rank indices
    alphabet: LabelAlphabet
    provenance: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        features = np.asarray(self.features)
        ranks = as_rank_indices(self.ranks)
        if features.ndim != 2:
            raise DomainError(f"Features must be an (N, D) matrix, got shape {features.shape}")
        if features.shape[0] == 0:
            raise DomainError("A dataset needs at least one example")
        if ranks.shape[0] != features.shape[0]:
            raise DomainError(f"{features.shape[0]} feature rows but {ranks.shape[0]} labels")
        if ranks.min() < 1 or ranks.max() > self.alphabet.K:
            raise DomainError(f"Labels must lie in [1, {self.alphabet.K}]")
        if not np.all(np.isfinite(features)):
            raise DomainError("Feature rows must be finite")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "ranks", ranks)

    @property
    def size(self) -> int:
        return int(self.features.shape[0])

    @property
    def num_features(self) -> int:
        return int(self.features.shape[1])

    @property
    def num_ranks(self) -> int:
        return self.alphabet.K

    def take(self, indices: np.ndarray, **provenance: Any) -> "Dataset":
        return Dataset(
            self.features[indices],
            self.ranks[indices],
            self.alphabet,
            {**self.provenance, **provenance},
        )

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.ranks, minlength=self.alphabet.K + 1)[1:]


def quadrant_rank(features: np.ndarray) -> np.ndarray:
    """Counterclockwise quadrant index from (+,+); coordinates equal to 0 count as positive"""
    features = np.asarray(features)
    right = features[:, 0] >= 0
    up = features[:, 1] >= 0
    return np.select(
        [right & up, ~right & up, ~right & ~up],
        [1, 2, 3],
        default=4,
    ).astype(np.int64)


def quadrants_generate(n: int = 1000, seed: int = 0) -> Dataset:
    """2-D standard normal points labelled by their quadrant (K=4)"""
    if n < 4:
        raise DomainError(f"quadrants needs n >= 4, got {n}")
    rng = np.random.default_rng(seed)
    features = rng.standard_normal((n, 2))
    return Dataset(
        features,
        quadrant_rank(features),
        LabelAlphabet.from_count(4),
        {"generator": "quadrants", "n": n, "seed": seed},
    )


def split(ds: Dataset, test_fraction: float = 0.1, seed: int = 0) -> Tuple[Dataset, Dataset]:
    """
    Deterministic shuffled train/test partition

    Test size is round(n * test_fraction), capped at n - 1 so a fraction
    below 1 always leaves a training example; an empty test side is an error.
    """
    if not 0.0 < test_fraction < 1.0:
        raise DomainError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n_test = min(int(round(ds.size * test_fraction)), ds.size - 1)
    if n_test < 1:
        raise DomainError(f"test_fraction={test_fraction} gives an empty test split for n={ds.size}")
    train_idx, test_idx = train_test_split(
        np.arange(ds.size), test_size=n_test, random_state=seed, shuffle=True,
    )
    return (
        ds.take(train_idx, split="train", split_seed=seed),
        ds.take(test_idx, split="test", split_seed=seed),
    )


def subset(ds: Dataset, n: int, seed: int = 0) -> Dataset:
    """n examples sampled without replacement (kept in original order)"""
    if not 1 <= n <= ds.size:
        raise DomainError(f"Subset size must lie in [1, {ds.size}], got {n}")
    rng = np.random.default_rng(seed)
    indices = np.sort(rng.choice(ds.size, size=n, replace=False))
    return ds.take(indices, subset=n, subset_seed=seed)


def _read_bytes(path: Path) -> bytes:
    try:
        if path.suffix == ".gz":
            with gzip.open(path, "rb") as f:
                return f.read()
        return path.read_bytes()
    except FileNotFoundError:
        raise
    except (OSError, EOFError) as e:
        raise DataFormatError(f"Could not read IDX file: {e}", path=path) from e


def _header(buf: bytes, fmt: str, magic: int, path: Path) -> Tuple[int, ...]:
    size = struct.calcsize(fmt)
    if len(buf) < size:
        raise DataFormatError(f"Truncated IDX header ({len(buf)} of {size} bytes)", path=path, offset=len(buf))
    fields = struct.unpack_from(fmt, buf, 0)
    if fields[0] != magic:
        raise DataFormatError(f"Bad magic number 0x{fields[0]:08x}, expected 0x{magic:08x}", path=path, offset=0)
    return fields[1:]


def _payload(buf: bytes, start: int, length: int, path: Path) -> np.ndarray:
    end = start + length
    if len(buf) < end:
        raise DataFormatError(f"Truncated IDX payload ({len(buf)} of {end} bytes)", path=path, offset=len(buf))
    if len(buf) > end:
        raise DataFormatError(f"{len(buf) - end} trailing bytes after IDX payload", path=path, offset=end)
    return np.frombuffer(buf, dtype=np.uint8, count=length, offset=start)


def read_idx_images(path: PathLike) -> np.ndarray:
    """uint8 array (count, rows * cols) from an idx3 file"""
    path = Path(path)
    buf = _read_bytes(path)
    count, rows, cols = _header(buf, ">IIII", IDX_IMAGE_MAGIC, path)
    pixels = _payload(buf, 16, count * rows * cols, path)
    return pixels.reshape(count, rows * cols)


def read_idx_labels(path: PathLike) -> np.ndarray:
    path = Path(path)
    buf = _read_bytes(path)
    (count,) = _header(buf, ">II", IDX_LABEL_MAGIC, path)
    labels = _payload(buf, 8, count, path)
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        raise DataFormatError(f"Label {labels[bad[0]]} is not a digit", path=path, offset=8 + int(bad[0]))
    return labels


def _digest(path: Path) -> str:
    return hashlib.sha256(_read_bytes(path)).hexdigest()


def mnist_load(images_path: PathLike, labels_path: PathLike) -> Dataset:
    """
    Parse an MNIST image/label IDX pair

    Pixels are scaled to [0, 1] (float32), digit d becomes rank index d + 1
    with K = 10. Files may be gzipped.
    """
    images_path, labels_path = Path(images_path), Path(labels_path)
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise DataFormatError(
            f"{images.shape[0]} images but {labels.shape[0]} labels",
            path=labels_path, offset=4,
        )
    logger.info(f"Loaded MNIST {images_path.name}: {images.shape[0]} x {images.shape[1]}")
    return Dataset(
        images.astype(np.float32) / np.float32(255.0),
        labels.astype(np.int64) + 1,
        LabelAlphabet(tuple(range(10))),
        {
            "source": "mnist",
            "images": images_path.name,
            "labels": labels_path.name,
            "images_sha256": _digest(images_path),
            "labels_sha256": _digest(labels_path),
        },
    )


def mnist_paths(directory: PathLike, part: str = "train") -> Tuple[Path, Path]:
    """Locate the image/label files of one MNIST part, raw or .gz"""
    if part not in MNIST_FILES:
        raise DomainError(f"Unknown MNIST part {part!r}; expected one of {sorted(MNIST_FILES)}")
    directory = Path(directory)
    found = []
    for stem in MNIST_FILES[part]:
        candidates = [directory / stem, directory / f"{stem}.gz"]
        match = next((p for p in candidates if p.exists()), None)
        if match is None:
            raise FileNotFoundError(f"MNIST file {stem}[.gz] not found in {directory}")
        found.append(match)
    return found[0], found[1]


def mnist_available(directory: PathLike) -> bool:
    try:
        mnist_paths(directory, "train")
        mnist_paths(directory, "test")
    except FileNotFoundError:
        return False
    return True


def export_csv(ds: Dataset, path: PathLike) -> Path:
    """Header x0..x{D-1},rank; one row per example with its 1-based rank"""
    path = Path(path)
    frame = pd.DataFrame(ds.features, columns=[f"x{i}" for i in range(ds.num_features)])
    frame["rank"] = ds.ranks
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False)
    except OSError as e:
        raise OSError(f"Failed to write dataset CSV {path}: {e}") from e
    return path


def load_csv(path: PathLike, num_ranks: Optional[int] = None) -> Dataset:
    """Re-import an export_csv file; K defaults to the largest rank present"""
    path = Path(path)
    try:
        frame = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DataFormatError(f"Unreadable dataset CSV: {e}", path=path) from e
    feature_columns = [c for c in frame.columns if c != "rank"]
    if "rank" not in frame.columns or feature_columns != [f"x{i}" for i in range(len(feature_columns))]:
        raise DataFormatError(f"Expected columns x0..x{{D-1}},rank, got {list(frame.columns)}", path=path)
    try:
        ranks = as_rank_indices(frame["rank"].to_numpy())
    except DomainError as e:
        raise DataFormatError(f"Bad rank column: {e}", path=path) from e
    K = num_ranks if num_ranks is not None else int(ranks.max())
    return Dataset(
        frame[feature_columns].to_numpy(dtype=np.float64),
        ranks,
        LabelAlphabet.from_count(K),
        {"source": "csv", "path": path.name},
    )


class DatasetService:
    """Benchmark data: seeded quadrants splits and MNIST parts parsed once per directory"""

    def __init__(self, mnist_dir: Optional[PathLike] = None):
        self.mnist_dir = Path(mnist_dir) if mnist_dir else settings.mnist_dir
        self._mnist: Dict[Tuple[Path, str], Dataset] = {}

    def quadrants(self, n: int, seed: int, test_fraction: float = 0.1) -> Tuple[Dataset, Dataset]:
        """Generate, then split, both from the same seed"""
        return split(quadrants_generate(n, seed), test_fraction, seed)

    def mnist(self, part: str, directory: Optional[PathLike] = None) -> Dataset:
        directory = Path(directory) if directory else self.mnist_dir
        key = (directory.resolve(), part)
        if key not in self._mnist:
            self._mnist[key] = mnist_load(*mnist_paths(directory, part))
        else:
            logger.debug(f"MNIST {part} from cache ({directory})")
        return self._mnist[key]

    def mnist_split(self, seed: int, n_train: Optional[int] = None, n_test: Optional[int] = None,
                    directory: Optional[PathLike] = None) -> Tuple[Dataset, Dataset]:
        """Train/test pair; n_train/n_test of None keep the full part"""
        train, test = self.mnist("train", directory), self.mnist("test", directory)
        if n_train is not None:
            train = subset(train, min(n_train, train.size), seed)
        if n_test is not None:
            test = subset(test, min(n_test, test.size), seed)
        return train, test

    def mnist_available(self, directory: Optional[PathLike] = None) -> bool:
        return mnist_available(Path(directory) if directory else self.mnist_dir)

    def clear_cache(self) -> None:
        self._mnist.clear()


# Global instance
dataset_service = DatasetService()
