"""MNIST / CIFAR-10 ingestion, one-class splits and seeded minibatch streams.

Datasets are cached under ``$MEMGAN_DATA_DIR`` (default ``~/.cache/memgan``)
in their canonical on-disk formats: gzip'd IDX files for MNIST and the binary
batch files for CIFAR-10. Every file is verified against a SHA-256 of its
decompressed content before use.

When the canonical hosts are unreachable, the same bytes are rebuilt from
package-registry mirrors (``mnist-data`` and ``tfjs-cifar10`` on npm) and
checked against the same hashes.
"""

from __future__ import annotations

import gzip
import hashlib
import io
import json
import logging
import os
import tarfile
import urllib.request
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
import torch

log = logging.getLogger(__name__)

DATASETS = ("mnist", "cifar10")
SHAPES = {"mnist": (1, 28, 28), "cifar10": (3, 32, 32)}
CIFAR10_CLASSES = (
    "airplane", "automobile", "bird", "cat", "deer",
    "dog", "frog", "horse", "ship", "truck",
)

# sha256 of the decompressed file content
MNIST_FILES = {
    "train-images-idx3-ubyte": "ba891046e6505d7aadcbbe25680a0738ad16aec93bde7f9b65e87a2fc25776db",
    "train-labels-idx1-ubyte": "65a50cbbf4e906d70832878ad85ccda5333a97f0f4c3dd2ef09a8a9eef7101c5",
    "t10k-images-idx3-ubyte": "0fa7898d509279e482958e8ce81c8e77db3f2f8254e26661ceb7762c4d494ce7",
    "t10k-labels-idx1-ubyte": "ff7bcfd416de33731a308c3f266cc351222c34898ecbeaf847f06e48f7ec33f2",
}
CIFAR10_FILES = {
    "data_batch_1.bin": "cee916563c9f80d84e3cc88e17fdc0941787f1244f00a67874d45b261883ada5",
    "data_batch_2.bin": "a591ca11fa1708a91ee40f54b3da4784ccd871ecf2137de63f51ada8b3fa57ed",
    "data_batch_3.bin": "bbe8596564c0f86427f876058170b84dac6670ddf06d79402899d93ceea26f67",
    "data_batch_4.bin": "014e562d6e23c72197cc727519169a60359f5eccd8945ad5a09d710285ff4e48",
    "data_batch_5.bin": "755304fc0b379caeae8c14f0dac912fbc7d6cd469eb67a1029a08a39453a9add",
    "test_batch.bin": "8e2eb146ae340b09e24670f29cabc6326dba54da8789dab6768acf480273f65b",
}

MNIST_URLS = [
    "https://ossci-datasets.s3.amazonaws.com/mnist/{}.gz",
    "https://storage.googleapis.com/cvdf-datasets/mnist/{}.gz",
]
MNIST_NPM = "https://registry.npmjs.org/mnist-data/-/mnist-data-1.2.6.tgz"
CIFAR10_URL = "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz"
CIFAR10_NPM = "https://registry.npmjs.org/tfjs-cifar10/-/tfjs-cifar10-1.1.1.tgz"


class DatasetError(RuntimeError):
    pass


class ChecksumError(DatasetError):
    pass


@dataclass
class LabeledImageSet:
    images: np.ndarray  # (count, C, H, W) float32 in [0, 1]
    labels: np.ndarray  # (count,) int64
    name: str
    split: str

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.images.ndim != 4 or tuple(self.images.shape[1:]) not in SHAPES.values():
            raise ValueError(f"unsupported image shape {self.images.shape[1:]}")
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be train|test, got {self.split!r}")
        if len(self.images) and (self.images.min() < 0 or self.images.max() > 1):
            raise ValueError("raw pixel values must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])


@dataclass
class OneClassSplit:
    normal_class: int
    train: LabeledImageSet
    test: LabeledImageSet

    @property
    def test_anomaly_flags(self) -> np.ndarray:
        return (self.test.labels != self.normal_class).astype(np.int64)


def default_cache_dir() -> Path:
    return Path(os.environ.get("MEMGAN_DATA_DIR", Path.home() / ".cache" / "memgan"))


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _download(url: str, timeout: float = 60.0) -> bytes:
    log.info("downloading %s", url)
    with urllib.request.urlopen(url, timeout=timeout) as resp:
        return resp.read()


def _write_verified(path: Path, raw: bytes, expected: str, compress: bool) -> None:
    if _sha256(raw) != expected:
        raise ChecksumError(f"checksum mismatch for {path.name} (corrupt download)")
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".part")
    # mtime=0 keeps the cached gzip byte-stable
    tmp.write_bytes(gzip.compress(raw, mtime=0) if compress else raw)
    tmp.replace(path)


def _fetch_mnist(root: Path) -> None:
    missing = [f for f in MNIST_FILES if not (root / f"{f}.gz").exists()]
    if not missing:
        return
    for name in list(missing):
        for pattern in MNIST_URLS:
            try:
                raw = gzip.decompress(_download(pattern.format(name)))
            except (OSError, EOFError) as exc:
                log.info("canonical source failed for %s: %s", name, exc)
                continue
            _write_verified(root / f"{name}.gz", raw, MNIST_FILES[name], compress=True)
            missing.remove(name)
            break
    if not missing:
        return
    try:
        blob = _download(MNIST_NPM)
    except OSError as exc:
        raise DatasetError(f"could not download MNIST from any source: {exc}") from exc
    with tarfile.open(fileobj=io.BytesIO(blob), mode="r:gz") as tar:
        for name in missing:
            raw = tar.extractfile(f"package/data/{name}").read()
            _write_verified(root / f"{name}.gz", raw, MNIST_FILES[name], compress=True)


def _cifar_from_npm(blob: bytes) -> dict[str, bytes]:
    # tfjs-cifar10 stores each batch as a 1024x10000 RGB png: one image per
    # row, pixels interleaved HWC; labels live in separate json lists
    from PIL import Image

    out = {}
    with tarfile.open(fileobj=io.BytesIO(blob), mode="r:gz") as tar:
        train_labels = json.load(tar.extractfile("package/train_lables.json"))
        test_labels = json.load(tar.extractfile("package/test_lables.json"))
        for name in CIFAR10_FILES:
            stem = name[: -len(".bin")]
            png = Image.open(io.BytesIO(tar.extractfile(f"package/{stem}.png").read()))
            pix = np.asarray(png.convert("RGB"), dtype=np.uint8)
            pix = pix.reshape(10000, 32, 32, 3).transpose(0, 3, 1, 2).reshape(10000, 3072)
            if stem == "test_batch":
                labels = test_labels
            else:
                i = int(stem[-1]) - 1
                labels = train_labels[i * 10000:(i + 1) * 10000]
            records = np.concatenate([np.asarray(labels, dtype=np.uint8)[:, None], pix], axis=1)
            out[name] = records.tobytes()
    return out


def _fetch_cifar10(root: Path) -> None:
    missing = [f for f in CIFAR10_FILES if not (root / f).exists()]
    if not missing:
        return
    files = None
    try:
        blob = _download(CIFAR10_URL, timeout=120)
        with tarfile.open(fileobj=io.BytesIO(blob), mode="r:gz") as tar:
            files = {f: tar.extractfile(f"cifar-10-batches-bin/{f}").read() for f in missing}
    except (OSError, KeyError, tarfile.TarError) as exc:
        log.info("canonical CIFAR-10 source failed: %s", exc)
    if files is None:
        try:
            files = _cifar_from_npm(_download(CIFAR10_NPM, timeout=600))
        except OSError as exc:
            raise DatasetError(f"could not download CIFAR-10 from any source: {exc}") from exc
    for name in missing:
        _write_verified(root / name, files[name], CIFAR10_FILES[name], compress=False)


def _read_verified(path: Path, expected: str) -> bytes:
    try:
        data = path.read_bytes()
        if path.suffix == ".gz":
            data = gzip.decompress(data)
    except (OSError, EOFError) as exc:
        raise DatasetError(f"unreadable cache file {path}: {exc}") from exc
    if _sha256(data) != expected:
        raise ChecksumError(f"checksum mismatch for {path} (corrupt file, delete it to re-download)")
    return data


def _parse_idx(data: bytes) -> np.ndarray:
    ndim = data[3]
    dims = np.frombuffer(data, dtype=">u4", count=ndim, offset=4)
    return np.frombuffer(data, dtype=np.uint8, offset=4 + 4 * ndim).reshape(tuple(int(d) for d in dims))


def load_dataset(name: str, split: str, cache_dir: str | Path | None = None) -> LabeledImageSet:
    """Return the canonical train or test split, downloading it on first use."""
    if name not in DATASETS:
        raise DatasetError(f"unknown dataset id {name!r}; expected one of {DATASETS}")
    if split not in ("train", "test"):
        raise DatasetError(f"unknown split {split!r}")
    root = Path(cache_dir) if cache_dir is not None else default_cache_dir()
    root = root / name
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DatasetError(f"cache directory {root} is not writable: {exc}") from exc

    if name == "mnist":
        _fetch_mnist(root)
        prefix = "train" if split == "train" else "t10k"
        img = f"{prefix}-images-idx3-ubyte"
        lab = f"{prefix}-labels-idx1-ubyte"
        images = _parse_idx(_read_verified(root / f"{img}.gz", MNIST_FILES[img]))[:, None]
        labels = _parse_idx(_read_verified(root / f"{lab}.gz", MNIST_FILES[lab]))
    else:
        _fetch_cifar10(root)
        names = [f"data_batch_{i}.bin" for i in range(1, 6)] if split == "train" else ["test_batch.bin"]
        recs = np.concatenate([
            np.frombuffer(_read_verified(root / f, CIFAR10_FILES[f]), dtype=np.uint8).reshape(-1, 3073)
            for f in names
        ])
        labels = recs[:, 0]
        images = recs[:, 1:].reshape(-1, 3, 32, 32)

    return LabeledImageSet(
        images=images.astype(np.float32) / 255.0,
        labels=labels.astype(np.int64),
        name=name,
        split=split,
    )


def make_one_class_split(train: LabeledImageSet, test: LabeledImageSet, normal_class: int) -> OneClassSplit:
    if not 0 <= normal_class <= 9:
        raise ValueError(f"normal_class must be in [0, 9], got {normal_class}")
    if train.name != test.name:
        raise ValueError(f"train ({train.name}) and test ({test.name}) come from different datasets")
    keep = train.labels == normal_class
    if not keep.any():
        raise ValueError(f"no training images of class {normal_class}")
    normal = LabeledImageSet(train.images[keep], train.labels[keep], train.name, "train")
    return OneClassSplit(normal_class=normal_class, train=normal, test=test)


def to_model_range(pixels: np.ndarray | torch.Tensor):
    """Map [0, 1] pixels onto the generator's tanh range [-1, 1]."""
    return pixels * 2 - 1


def epoch_permutation(count: int, seed: int, epoch: int = 0) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(count)


def batch_iterator(
    split: OneClassSplit,
    m: int,
    seed: int,
    epoch: int = 0,
    dtype: torch.dtype = torch.float32,
) -> Iterator[torch.Tensor]:
    """One epoch of normal-class training batches in [-1, 1].

    The order is a permutation seeded by ``(seed, epoch)``; the final short
    batch is emitted rather than dropped.
    """
    count = len(split.train)
    if m < 1:
        raise ValueError("batch size must be >= 1")
    if m > count:
        raise ValueError(f"batch size {m} exceeds the {count} training images")
    order = epoch_permutation(count, seed, epoch)
    for start in range(0, count, m):
        idx = order[start:start + m]
        yield torch.from_numpy(to_model_range(split.train.images[idx])).to(dtype)


def num_batches(count: int, m: int) -> int:
    return -(-count // m)
