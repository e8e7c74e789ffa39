"""Bit-exact persistence of unit-normalized embedding matrices.

A store is a directory with three files:

    manifest         JSON: format_version, owner_id, kind, dim, count, checksum
    ids.txt          one id per line, LF-terminated, UTF-8
    embeddings.bin   row-major 32-bit little-endian floats, count x dim

Rows are unit-normalized at write time so cosine similarity reduces to a dot
product. Dot products are accumulated in float64 regardless of the float32
storage precision. The checksum (64-bit BLAKE2b of embeddings.bin) guards the
data file; reads verify it before returning.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
import uuid
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    CorruptionError,
    DegenerateEmbeddingError,
    FormatError,
    IncompleteEmbeddingsError,
    InvalidInputError,
    InvalidValueError,
)

FORMAT_VERSION = 1
STORE_KINDS = ("image", "caption", "class-prompt", "task-caption")

MANIFEST_FILE = "manifest"
IDS_FILE = "ids.txt"
DATA_FILE = "embeddings.bin"

# Rows must carry unit norm after a write/read cycle.
UNIT_NORM_TOL = 1e-4
# Slightly off-unit rows (float32 drift) are silently renormalized on write;
# anything further off is rejected rather than guessed at.
RENORM_TOL = 1e-2
_ZERO_NORM_TOL = 1e-12


def _checksum(data: bytes) -> str:
    return hashlib.blake2b(data, digest_size=8).hexdigest()


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Ordered id list plus a float32 (N, dim) array of unit rows."""

    ids: tuple[str, ...]
    rows: np.ndarray

    def __post_init__(self):
        if self.rows.ndim != 2:
            raise InvalidInputError("rows must be a 2-D array")
        if len(self.ids) != self.rows.shape[0]:
            raise InvalidInputError(
                f"{len(self.ids)} ids but {self.rows.shape[0]} rows"
            )
        if len(set(self.ids)) != len(self.ids):
            raise InvalidInputError("embedding ids must be unique")
        object.__setattr__(self, "_index", {i: k for k, i in enumerate(self.ids)})

    @classmethod
    def from_rows(cls, ids: Sequence[str], rows, *, normalize: bool = True) -> "EmbeddingMatrix":
        """Build a matrix from raw vectors, unit-normalizing each row.

        Raises InvalidValueError on non-finite entries and
        DegenerateEmbeddingError (naming the id) on zero-norm rows.
        """
        arr = np.asarray(rows, dtype=np.float64)
        if arr.ndim != 2:
            raise InvalidInputError("rows must be a 2-D array")
        if not np.isfinite(arr).all():
            bad = [ids[i] for i in np.nonzero(~np.isfinite(arr).all(axis=1))[0]]
            raise InvalidValueError(f"non-finite embedding values for ids {bad}")
        norms = np.linalg.norm(arr, axis=1)
        dead = np.nonzero(norms < _ZERO_NORM_TOL)[0]
        if dead.size:
            raise DegenerateEmbeddingError(
                f"zero-norm embedding rows for ids {[ids[i] for i in dead]}"
            )
        if normalize:
            arr = arr / norms[:, None]
        return cls(tuple(ids), arr.astype(np.float32))

    @property
    def dim(self) -> int:
        return int(self.rows.shape[1])

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, id_: str) -> bool:
        return id_ in self._index  # type: ignore[attr-defined]

    def row(self, id_: str) -> np.ndarray:
        try:
            return self.rows[self._index[id_]]  # type: ignore[attr-defined]
        except KeyError:
            raise IncompleteEmbeddingsError(
                f"no embedding row for id {id_!r}", missing=[id_]
            ) from None

    def take(self, ids: Iterable[str]) -> np.ndarray:
        """Return a float64 submatrix with rows in the requested id order."""
        wanted = list(ids)
        index = self._index  # type: ignore[attr-defined]
        missing = [i for i in wanted if i not in index]
        if missing:
            raise IncompleteEmbeddingsError(
                f"missing embedding rows for {len(missing)} ids: {missing[:8]}",
                missing=missing,
            )
        return self.rows[[index[i] for i in wanted]].astype(np.float64)

    def covers(self, ids: Iterable[str]) -> bool:
        index = self._index  # type: ignore[attr-defined]
        return all(i in index for i in ids)


@dataclass(frozen=True)
class StoreManifest:
    """Sidecar metadata describing one on-disk store."""

    format_version: int
    owner_id: str
    kind: str
    dim: int
    count: int
    checksum: str


def cosine(a, b) -> float:
    """Cosine similarity of two vectors, accumulated in float64.

    Result is clipped to [-1, 1]; for unit-norm inputs it equals the dot
    product up to rounding.
    """
    va = np.asarray(a, dtype=np.float64)
    vb = np.asarray(b, dtype=np.float64)
    if va.shape != vb.shape or va.ndim != 1:
        raise InvalidInputError(
            f"cosine requires equal-length vectors, got {va.shape} and {vb.shape}"
        )
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na < _ZERO_NORM_TOL or nb < _ZERO_NORM_TOL:
        raise InvalidInputError("cosine is undefined for zero-norm vectors")
    return float(np.clip(np.dot(va, vb) / (na * nb), -1.0, 1.0))


def unit_rows64(matrix: EmbeddingMatrix, ids: Iterable[str] | None = None) -> np.ndarray:
    """Float64 rows renormalized to exactly unit norm, in the given id order.

    Stored rows are already unit to float32 precision, but similarity math
    renormalizes so that results are invariant under positive rescaling of a
    whole store (cosine semantics, not raw dot products).
    """
    rows = matrix.take(ids) if ids is not None else matrix.rows.astype(np.float64)
    norms = np.linalg.norm(rows, axis=1)
    if rows.shape[0] and norms.min() < _ZERO_NORM_TOL:
        raise InvalidInputError("cannot renormalize zero-norm rows")
    return rows / norms[:, None]


def sim_matrix(rows_a: np.ndarray, rows_b: np.ndarray) -> np.ndarray:
    """All-pairs cosine for pre-normalized float64 row matrices."""
    return np.clip(rows_a @ rows_b.T, -1.0, 1.0)


def write_store(
    path: str | Path,
    matrix: EmbeddingMatrix,
    *,
    owner_id: str,
    kind: str,
    overwrite: bool = False,
) -> StoreManifest:
    """Persist a matrix to `path`, renormalizing slightly off-unit rows.

    The store is written to a temporary sibling directory and renamed into
    place so concurrent readers never observe a partial store.
    """
    if kind not in STORE_KINDS:
        raise InvalidInputError(f"unknown store kind {kind!r}; expected one of {STORE_KINDS}")
    path = Path(path)
    if path.exists():
        if not overwrite:
            raise InvalidInputError(f"store already exists at {path}")
        shutil.rmtree(path)

    rows = matrix.rows.astype(np.float64)
    if not np.isfinite(rows).all():
        raise InvalidValueError("matrix contains non-finite values")
    norms = np.linalg.norm(rows, axis=1)
    dead = np.nonzero(norms < _ZERO_NORM_TOL)[0]
    if dead.size:
        raise DegenerateEmbeddingError(
            f"zero-norm embedding rows for ids {[matrix.ids[i] for i in dead]}"
        )
    deviation = np.abs(norms - 1.0)
    off = np.nonzero(deviation > RENORM_TOL)[0]
    if off.size:
        raise InvalidInputError(
            f"rows too far from unit norm to renormalize silently: "
            f"{[matrix.ids[i] for i in off[:8]]}"
        )
    # Rows already unit to tolerance are written untouched so round-trips are
    # bit-exact; only drifted rows get pulled back to unit norm.
    drifted = deviation > UNIT_NORM_TOL
    if drifted.any():
        fixed = np.where(drifted[:, None], rows / norms[:, None], rows)
        data = fixed.astype("<f4").tobytes(order="C")
    else:
        data = matrix.rows.astype("<f4").tobytes(order="C")

    manifest = StoreManifest(
        format_version=FORMAT_VERSION,
        owner_id=owner_id,
        kind=kind,
        dim=matrix.dim,
        count=len(matrix),
        checksum=_checksum(data),
    )

    tmp = path.with_name(f".{path.name}.tmp-{uuid.uuid4().hex[:8]}")
    tmp.mkdir(parents=True)
    try:
        (tmp / DATA_FILE).write_bytes(data)
        (tmp / IDS_FILE).write_text("".join(f"{i}\n" for i in matrix.ids), encoding="utf-8")
        (tmp / MANIFEST_FILE).write_text(
            json.dumps(manifest.__dict__, sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )
        path.parent.mkdir(parents=True, exist_ok=True)
        os.replace(tmp, path)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return manifest


def read_manifest(path: str | Path) -> StoreManifest:
    path = Path(path)
    try:
        raw = json.loads((path / MANIFEST_FILE).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise FormatError(f"no manifest in store {path}") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"unparseable manifest in store {path}: {exc}") from None
    try:
        manifest = StoreManifest(**raw)
    except TypeError as exc:
        raise FormatError(f"manifest fields wrong in {path}: {exc}") from None
    if manifest.format_version != FORMAT_VERSION:
        raise FormatError(
            f"unsupported store format_version {manifest.format_version} in {path}"
        )
    return manifest


def read_store(path: str | Path) -> EmbeddingMatrix:
    """Load a store, verifying checksum, shape, and unit norms.

    Rows come back bit-identical to what was written.
    """
    path = Path(path)
    manifest = read_manifest(path)
    try:
        data = (path / DATA_FILE).read_bytes()
        ids_text = (path / IDS_FILE).read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise FormatError(f"incomplete store {path}: {exc.filename} missing") from None

    expected = manifest.count * manifest.dim * 4
    if len(data) != expected:
        raise FormatError(
            f"data file in {path} is {len(data)} bytes, manifest implies {expected}"
        )
    if _checksum(data) != manifest.checksum:
        raise CorruptionError(f"checksum mismatch for store {path}")

    ids = ids_text.splitlines()
    if len(ids) != manifest.count:
        raise FormatError(
            f"{len(ids)} ids in {path} but manifest count is {manifest.count}"
        )
    if len(set(ids)) != len(ids):
        raise FormatError(f"duplicate ids in store {path}")

    rows = np.frombuffer(data, dtype="<f4").reshape(manifest.count, manifest.dim)
    norms = np.linalg.norm(rows.astype(np.float64), axis=1)
    if manifest.count and np.abs(norms - 1.0).max() > UNIT_NORM_TOL:
        worst = int(np.abs(norms - 1.0).argmax())
        raise FormatError(
            f"row {ids[worst]!r} in {path} has norm {norms[worst]:.6f}, expected 1"
        )
    return EmbeddingMatrix(tuple(ids), rows.copy())
