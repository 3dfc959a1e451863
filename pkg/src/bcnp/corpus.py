"""On-disk corpus format and loaders.

One directory per corpus: ``manifest.json`` plus per-record pairs
``data_%06d.bin`` (row-major N x D float32 little-endian) and
``adj_%06d.bin`` (row-major D x D uint8).  Every record carries a CRC-32 in
the manifest; the content checksum chains them so any single-bit corruption
is detectable.  Generation is resumable: records already on disk with a
matching checksum are skipped.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import generator_config_from_dict, generator_config_to_dict
from .datagen import GeneratorConfig, _record_rng, generate_sample
from .errors import IntegrityError, ValidationError, VersionMismatchError

MANIFEST_NAME = "manifest.json"
PROGRESS_NAME = "progress.jsonl"
CORPUS_FORMAT_VERSION = 1


def _data_name(index: int) -> str:
    return f"data_{index:06d}.bin"


def _adj_name(index: int) -> str:
    return f"adj_{index:06d}.bin"


def _record_bytes(dataset: np.ndarray, adjacency: np.ndarray) -> tuple[bytes, bytes]:
    data = np.ascontiguousarray(dataset, dtype="<f4").tobytes()
    adj = np.ascontiguousarray(adjacency, dtype=np.uint8).tobytes()
    return data, adj


def record_crc(data_bytes: bytes, adj_bytes: bytes) -> int:
    return zlib.crc32(adj_bytes, zlib.crc32(data_bytes)) & 0xFFFFFFFF


def content_checksum(record_crcs) -> str:
    blob = b"".join(int(c).to_bytes(4, "little") for c in record_crcs)
    return f"{zlib.crc32(blob) & 0xFFFFFFFF:08x}"


@dataclass(frozen=True)
class CorpusManifest:
    format_version: int
    generator: dict
    num_samples: int
    num_nodes: int
    count: int
    master_seed: int
    record_crcs: list[int]
    content_checksum: str

    def __post_init__(self):
        if len(self.record_crcs) != self.count:
            raise ValidationError("manifest count disagrees with record checksums")

    def generator_config(self) -> GeneratorConfig:
        return generator_config_from_dict(self.generator)


def _manifest_to_dict(manifest: CorpusManifest) -> dict:
    return {
        "format_version": manifest.format_version,
        "generator": manifest.generator,
        "num_samples": manifest.num_samples,
        "num_nodes": manifest.num_nodes,
        "count": manifest.count,
        "master_seed": manifest.master_seed,
        "record_crcs": manifest.record_crcs,
        "content_checksum": manifest.content_checksum,
    }


def load_manifest(directory) -> CorpusManifest:
    path = Path(directory) / MANIFEST_NAME
    if not path.exists():
        raise IntegrityError(f"no {MANIFEST_NAME} in {directory}")
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    version = doc.get("format_version")
    if version != CORPUS_FORMAT_VERSION:
        raise VersionMismatchError(
            f"corpus format version {version}, expected {CORPUS_FORMAT_VERSION}"
        )
    return CorpusManifest(
        format_version=version,
        generator=doc["generator"],
        num_samples=doc["num_samples"],
        num_nodes=doc["num_nodes"],
        count=doc["count"],
        master_seed=doc["master_seed"],
        record_crcs=[int(c) for c in doc["record_crcs"]],
        content_checksum=doc["content_checksum"],
    )


def _existing_record_crc(directory: Path, index: int, n: int, d: int) -> int | None:
    data_path = directory / _data_name(index)
    adj_path = directory / _adj_name(index)
    if not (data_path.exists() and adj_path.exists()):
        return None
    data_bytes = data_path.read_bytes()
    adj_bytes = adj_path.read_bytes()
    if len(data_bytes) != 4 * n * d or len(adj_bytes) != d * d:
        return None
    return record_crc(data_bytes, adj_bytes)


def write_corpus(
    directory,
    config: GeneratorConfig,
    count: int,
    master_seed: int,
    progress_fn=None,
) -> CorpusManifest:
    """Generate ``count`` records into ``directory``.  Idempotent: on rerun,
    records whose files already match their deterministic checksum are kept;
    a directory with a complete, consistent manifest is returned untouched."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest_path = directory / MANIFEST_NAME
    if manifest_path.exists():
        manifest = load_manifest(directory)
        _validate_manifest_matches(manifest, config, count, master_seed)
        missing = [
            i
            for i in range(count)
            if _existing_record_crc(
                directory, i, manifest.num_samples, manifest.num_nodes
            )
            != manifest.record_crcs[i]
        ]
        if not missing:
            return manifest
        raise IntegrityError(
            f"corpus has a manifest but records {missing[:10]} do not match it; "
            "run verification or regenerate into a fresh directory"
        )

    progress_path = directory / PROGRESS_NAME
    known: dict[int, int] = {}
    if progress_path.exists():
        with open(progress_path, "r", encoding="utf-8") as fh:
            for line in fh:
                entry = json.loads(line)
                known[int(entry["index"])] = int(entry["crc32"])

    n, d = config.num_samples, config.num_nodes
    crcs: list[int] = [0] * count
    with open(progress_path, "a", encoding="utf-8") as progress:
        for index in range(count):
            expected = known.get(index)
            if expected is not None and _existing_record_crc(directory, index, n, d) == expected:
                crcs[index] = expected
                continue
            sample = generate_sample(config, _record_rng(master_seed, index), seed=index)
            data_bytes, adj_bytes = _record_bytes(sample.dataset, sample.graph.adjacency)
            (directory / _data_name(index)).write_bytes(data_bytes)
            (directory / _adj_name(index)).write_bytes(adj_bytes)
            crc = record_crc(data_bytes, adj_bytes)
            crcs[index] = crc
            progress.write(json.dumps({"index": index, "crc32": crc}) + "\n")
            progress.flush()
            if progress_fn is not None:
                progress_fn(index + 1, count)

    manifest = CorpusManifest(
        format_version=CORPUS_FORMAT_VERSION,
        generator=generator_config_to_dict(config),
        num_samples=n,
        num_nodes=d,
        count=count,
        master_seed=master_seed,
        record_crcs=crcs,
        content_checksum=content_checksum(crcs),
    )
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(_manifest_to_dict(manifest), fh)
    progress_path.unlink(missing_ok=True)
    return manifest


def _validate_manifest_matches(
    manifest: CorpusManifest, config: GeneratorConfig, count: int, master_seed: int
) -> None:
    if manifest.count != count or manifest.master_seed != master_seed:
        raise ValidationError(
            "existing corpus was generated with a different count or seed"
        )
    if manifest.generator != generator_config_to_dict(config):
        raise ValidationError(
            "existing corpus was generated with a different generator config"
        )


def verify_corpus(directory) -> list[int]:
    """Recompute every record checksum; returns the indices that fail."""
    directory = Path(directory)
    manifest = load_manifest(directory)
    bad: list[int] = []
    for index in range(manifest.count):
        actual = _existing_record_crc(
            directory, index, manifest.num_samples, manifest.num_nodes
        )
        if actual != manifest.record_crcs[index]:
            bad.append(index)
    return bad


class DirectoryCorpus:
    """Read-side view of an on-disk corpus, usable by the trainer."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.manifest = load_manifest(self.directory)
        self.num_nodes = self.manifest.num_nodes
        self.num_samples = self.manifest.num_samples
        self.fingerprint = self.manifest.content_checksum

    def __len__(self) -> int:
        return self.manifest.count

    def record(self, index: int) -> tuple[np.ndarray, np.ndarray]:
        if not 0 <= index < self.manifest.count:
            raise ValidationError(f"record index {index} out of range")
        n, d = self.num_samples, self.num_nodes
        data = np.fromfile(self.directory / _data_name(index), dtype="<f4")
        adj = np.fromfile(self.directory / _adj_name(index), dtype=np.uint8)
        if data.size != n * d or adj.size != d * d:
            raise IntegrityError(f"record {index} has truncated payload files")
        return data.reshape(n, d), adj.reshape(d, d)

    def batch(self, indices) -> tuple[np.ndarray, np.ndarray]:
        records = [self.record(int(i)) for i in indices]
        return (
            np.stack([r[0] for r in records]),
            np.stack([r[1] for r in records]),
        )
