"""Encoder backends that turn images and texts into embedding vectors.

The toy encoder is fully offline and deterministic: each item's vector is
seeded from a content hash, so identical inputs give identical stores on
any machine. Real checkpoints load through open_clip when it is installed;
the remote text embedder calls an external embedding service with a disk
cache so repeated runs never touch the network.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from vlmhub.errors import InvalidInputError

EMBED_API_KEY_ENV = "VLMHUB_EMBED_API_KEY"
EMBED_ENDPOINT_ENV = "VLMHUB_EMBED_ENDPOINT"

DEFAULT_TOY_DIM = 32
DEFAULT_REMOTE_MODEL = "text-embedding-3-large"


def _content_seed(payload: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "big")


@dataclass(frozen=True)
class ToyEncoder:
    """Deterministic stand-in checkpoint: content hash -> seeded Gaussian vector."""

    dim: int = DEFAULT_TOY_DIM
    identifier: str = "toy"
    preprocessing: str = "raw-bytes-hash"

    def encode_image_bytes(self, payload: bytes) -> np.ndarray:
        rng = np.random.default_rng(_content_seed(b"image:" + payload))
        return rng.standard_normal(self.dim)

    def encode_images(self, paths: list[Path]) -> np.ndarray:
        from PIL import Image

        rows = []
        for path in paths:
            with Image.open(path) as img:
                img.verify()  # unreadable or truncated images fail here
            rows.append(self.encode_image_bytes(Path(path).read_bytes()))
        return np.array(rows)

    def encode_texts(self, texts: list[str]) -> np.ndarray:
        rows = []
        for text in texts:
            if not text.strip():
                raise InvalidInputError("cannot embed an empty text")
            rng = np.random.default_rng(_content_seed(b"text:" + text.encode("utf-8")))
            rows.append(rng.standard_normal(self.dim))
        return np.array(rows)


class OpenClipEncoder:
    """Real open_clip checkpoint; requires torch + open_clip to be installed."""

    def __init__(self, architecture: str, pretrained: str, device: str = "cpu"):
        try:
            import open_clip
            import torch
        except ImportError as exc:
            raise InvalidInputError(
                f"checkpoint {architecture}/{pretrained} needs open_clip and torch "
                f"installed: {exc}"
            ) from exc
        self._torch = torch
        self.identifier = f"{architecture}/{pretrained}"
        self.device = device
        model, _, preprocess = open_clip.create_model_and_transforms(
            architecture, pretrained=pretrained, device=device
        )
        self._model = model.eval()
        self._preprocess = preprocess
        self._tokenizer = open_clip.get_tokenizer(architecture)
        self.preprocessing = f"open_clip default for {architecture}"
        with torch.no_grad():
            probe = self._tokenizer(["probe"]).to(device)
            self.dim = int(self._model.encode_text(probe).shape[-1])

    def encode_images(self, paths: list[Path]) -> np.ndarray:
        from PIL import Image

        torch = self._torch
        batch = torch.stack(
            [self._preprocess(Image.open(p).convert("RGB")) for p in paths]
        ).to(self.device)
        with torch.no_grad():
            return self._model.encode_image(batch).cpu().numpy()

    def encode_texts(self, texts: list[str]) -> np.ndarray:
        torch = self._torch
        for text in texts:
            if not text.strip():
                raise InvalidInputError("cannot embed an empty text")
        tokens = self._tokenizer(texts).to(self.device)
        with torch.no_grad():
            return self._model.encode_text(tokens).cpu().numpy()


class RemoteTextEmbedder:
    """Text-embedding web service with a per-text disk cache.

    Credentials come from the environment only; every response is cached to
    `cache_dir` keyed by a hash of (model, text), so a warmed cache serves
    reruns with zero network calls.
    """

    def __init__(
        self,
        model: str = DEFAULT_REMOTE_MODEL,
        *,
        endpoint: str | None = None,
        api_key: str | None = None,
        cache_dir: str | Path | None = None,
        session=None,
    ):
        self.model = model
        self.identifier = f"remote/{model}"
        self.preprocessing = "service-side tokenization"
        self.endpoint = endpoint or os.environ.get(EMBED_ENDPOINT_ENV)
        self.api_key = api_key or os.environ.get(EMBED_API_KEY_ENV)
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self._session = session
        self.dim = 0  # learned from the first response or cache hit

    def _cache_path(self, text: str) -> Path | None:
        if self.cache_dir is None:
            return None
        key = hashlib.blake2b(
            f"{self.model}\x00{text}".encode("utf-8"), digest_size=16
        ).hexdigest()
        return self.cache_dir / f"{key}.json"

    def _fetch(self, texts: list[str]) -> list[list[float]]:
        if not self.endpoint or not self.api_key:
            raise InvalidInputError(
                f"remote embedding needs {EMBED_ENDPOINT_ENV} and {EMBED_API_KEY_ENV} set "
                f"(or a warmed cache)"
            )
        session = self._session
        if session is None:
            import requests

            session = requests
        response = session.post(
            self.endpoint,
            json={"model": self.model, "input": texts},
            headers={"Authorization": f"Bearer {self.api_key}"},
            timeout=120,
        )
        response.raise_for_status()
        data = response.json()["data"]
        return [item["embedding"] for item in data]

    def encode_texts(self, texts: list[str]) -> np.ndarray:
        for text in texts:
            if not text.strip():
                raise InvalidInputError("cannot embed an empty text")
        vectors: dict[int, list[float]] = {}
        misses: list[int] = []
        for i, text in enumerate(texts):
            cache_path = self._cache_path(text)
            if cache_path is not None and cache_path.exists():
                vectors[i] = json.loads(cache_path.read_text(encoding="utf-8"))["embedding"]
            else:
                misses.append(i)
        if misses:
            fetched = self._fetch([texts[i] for i in misses])
            for i, vec in zip(misses, fetched):
                vectors[i] = vec
                cache_path = self._cache_path(texts[i])
                if cache_path is not None:
                    cache_path.parent.mkdir(parents=True, exist_ok=True)
                    cache_path.write_text(
                        json.dumps({"model": self.model, "embedding": vec}),
                        encoding="utf-8",
                    )
        rows = np.array([vectors[i] for i in range(len(texts))], dtype=np.float64)
        self.dim = int(rows.shape[1])
        return rows


def resolve_encoder(ref: str, *, cache_dir: str | Path | None = None):
    """Build an encoder from a checkpoint reference string.

    Accepted forms:
      toy               deterministic offline encoder, default dim
      toy:<dim>         deterministic offline encoder with explicit dim
      open_clip:<architecture>/<pretrained>
      remote[:<model>]  text-embedding web service (texts only)
    """
    if ref == "toy":
        return ToyEncoder()
    if ref.startswith("toy:"):
        return ToyEncoder(dim=int(ref.split(":", 1)[1]))
    if ref.startswith("open_clip:"):
        spec = ref.split(":", 1)[1]
        if "/" not in spec:
            raise InvalidInputError(
                f"open_clip reference must be open_clip:<architecture>/<pretrained>, got {ref!r}"
            )
        architecture, pretrained = spec.split("/", 1)
        return OpenClipEncoder(architecture, pretrained)
    if ref == "remote" or ref.startswith("remote:"):
        model = ref.split(":", 1)[1] if ":" in ref else DEFAULT_REMOTE_MODEL
        return RemoteTextEmbedder(model, cache_dir=cache_dir)
    raise InvalidInputError(f"unknown checkpoint reference {ref!r}")
