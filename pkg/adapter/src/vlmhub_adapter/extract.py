"""Batch extraction jobs: manifest in, embedding store out.

A manifest is a UTF-8 TSV file, one record per line: `<id>\\t<value>` where
the value is an image path or a text. Output store rows follow manifest
order exactly. Stores are written through the engine's own writer, so every
emitted directory passes the engine's read-side validation (unit norms,
checksum, id alignment). A `<store>.job.json` sidecar records the
checkpoint, its preprocessing, the input-manifest checksum, and any skipped
items.
"""

from __future__ import annotations

import hashlib
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from vlmhub.embedding_store import EmbeddingMatrix, write_store
from vlmhub.errors import InvalidInputError, VlmHubError

logger = logging.getLogger("vlmhub_adapter")

DEFAULT_BATCH_SIZE = 16


@dataclass(frozen=True)
class ExtractionJob:
    """One extraction run: checkpoint, manifest entries, output location."""

    model_ref: str
    manifest: tuple[tuple[str, str], ...]  # (id, image path or text), in order
    out_path: Path
    kind: str  # store kind: image / caption / class-prompt / task-caption
    batch_size: int = DEFAULT_BATCH_SIZE
    skip_bad: bool = False
    overwrite: bool = False

    def __post_init__(self):
        if not self.manifest:
            raise InvalidInputError("extraction manifest is empty")
        ids = [i for i, _ in self.manifest]
        if len(set(ids)) != len(ids):
            raise InvalidInputError("manifest ids must be unique")
        if self.batch_size < 1:
            raise InvalidInputError("batch_size must be >= 1")


def read_manifest(path: str | Path) -> tuple[tuple[str, str], ...]:
    entries: list[tuple[str, str]] = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        if "\t" not in line:
            raise InvalidInputError(f"{path}:{lineno}: expected '<id>\\t<value>'")
        item_id, value = line.split("\t", 1)
        entries.append((item_id, value))
    if not entries:
        raise InvalidInputError(f"manifest {path} has no entries")
    return tuple(entries)


def _manifest_checksum(manifest: tuple[tuple[str, str], ...]) -> str:
    payload = "\n".join(f"{i}\t{v}" for i, v in manifest).encode("utf-8")
    return hashlib.blake2b(payload, digest_size=8).hexdigest()


def _write_job_record(job: ExtractionJob, encoder, skipped: list[str]) -> None:
    record = {
        "model_ref": job.model_ref,
        "encoder": encoder.identifier,
        "preprocessing": encoder.preprocessing,
        "kind": job.kind,
        "manifest_checksum": _manifest_checksum(job.manifest),
        "skipped": sorted(skipped),
    }
    sidecar = Path(job.out_path).with_name(Path(job.out_path).name + ".job.json")
    sidecar.write_text(json.dumps(record, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _batches(items: list, size: int):
    for start in range(0, len(items), size):
        yield items[start : start + size]


def extract_image_embeddings(job: ExtractionJob, encoder) -> Path:
    """Encode every manifest image into the output store, in manifest order.

    An unreadable image is logged per item; the job fails on the first one
    unless skip_bad is set, in which case the bad rows are dropped and
    listed in the job sidecar.
    """
    ids: list[str] = []
    rows: list[np.ndarray] = []
    skipped: list[str] = []
    for batch in _batches(list(job.manifest), job.batch_size):
        for item_id, path in batch:
            try:
                vec = encoder.encode_images([Path(path)])[0]
            except VlmHubError:
                raise
            except Exception as exc:
                logger.error("item %s: cannot encode %s: %s", item_id, path, exc)
                print(f"item {item_id}: cannot encode {path}: {exc}", file=sys.stderr)
                if not job.skip_bad:
                    raise InvalidInputError(
                        f"failed to encode image {path!r} for id {item_id!r}: {exc}"
                    ) from exc
                skipped.append(item_id)
                continue
            ids.append(item_id)
            rows.append(vec)
    if not ids:
        raise InvalidInputError("every manifest item failed to encode")
    matrix = EmbeddingMatrix.from_rows(ids, np.array(rows))
    write_store(
        job.out_path, matrix, owner_id=job.model_ref, kind=job.kind, overwrite=job.overwrite
    )
    _write_job_record(job, encoder, skipped)
    return Path(job.out_path)


def extract_text_embeddings(job: ExtractionJob, encoder) -> Path:
    """Encode every manifest text into the output store, in manifest order."""
    ids = [i for i, _ in job.manifest]
    texts = [t for _, t in job.manifest]
    rows: list[np.ndarray] = []
    for batch in _batches(texts, job.batch_size):
        rows.extend(encoder.encode_texts(batch))
    matrix = EmbeddingMatrix.from_rows(ids, np.array(rows))
    write_store(
        job.out_path, matrix, owner_id=job.model_ref, kind=job.kind, overwrite=job.overwrite
    )
    _write_job_record(job, encoder, skipped=[])
    return Path(job.out_path)
