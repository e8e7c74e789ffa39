"""Class-caption generation: fixture files for offline runs, a live
text-generation service otherwise.

Live responses are cached to disk keyed by a prompt hash, so a warmed cache
makes reruns fully offline. Prompt text comes from the engine's own
template builder, keeping the two sides byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from pathlib import Path

from vlmhub.errors import InvalidInputError, VlmHubError
from vlmhub.selection import build_class_caption_prompt

CAPTION_API_KEY_ENV = "VLMHUB_CAPTION_API_KEY"
CAPTION_ENDPOINT_ENV = "VLMHUB_CAPTION_ENDPOINT"
CAPTION_MODEL_ENV = "VLMHUB_CAPTION_MODEL"

DEFAULT_WORD_LIMIT = 50
RETRY_DELAYS = (0.5, 1.0, 2.0)


class CaptionServiceError(VlmHubError):
    """The live caption service kept failing after retries."""


class LiveCaptionService:
    """Text-generation client with retry/backoff and a prompt-keyed cache."""

    def __init__(
        self,
        *,
        endpoint: str | None = None,
        api_key: str | None = None,
        model: str | None = None,
        cache_dir: str | Path | None = None,
        session=None,
        sleep=time.sleep,
    ):
        self.endpoint = endpoint or os.environ.get(CAPTION_ENDPOINT_ENV)
        self.api_key = api_key or os.environ.get(CAPTION_API_KEY_ENV)
        self.model = model or os.environ.get(CAPTION_MODEL_ENV, "gpt-4")
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self._session = session
        self._sleep = sleep

    def _cache_path(self, prompt: str) -> Path | None:
        if self.cache_dir is None:
            return None
        key = hashlib.blake2b(prompt.encode("utf-8"), digest_size=16).hexdigest()
        return self.cache_dir / f"{key}.json"

    def _post(self, prompt: str) -> str:
        if not self.endpoint or not self.api_key:
            raise InvalidInputError(
                f"live caption mode needs {CAPTION_ENDPOINT_ENV} and "
                f"{CAPTION_API_KEY_ENV} set (or a warmed cache)"
            )
        session = self._session
        if session is None:
            import requests

            session = requests
        last_error: Exception | None = None
        for attempt, delay in enumerate((*RETRY_DELAYS, None)):
            try:
                response = session.post(
                    self.endpoint,
                    json={
                        "model": self.model,
                        "messages": [{"role": "user", "content": prompt}],
                    },
                    headers={"Authorization": f"Bearer {self.api_key}"},
                    timeout=60,
                )
                response.raise_for_status()
                return response.json()["choices"][0]["message"]["content"].strip()
            except Exception as exc:
                last_error = exc
                if delay is None:
                    break
                self._sleep(delay)
        raise CaptionServiceError(
            f"caption service failed after {len(RETRY_DELAYS) + 1} attempts: {last_error}"
        )

    def caption(self, prompt: str) -> str:
        cache_path = self._cache_path(prompt)
        if cache_path is not None and cache_path.exists():
            return json.loads(cache_path.read_text(encoding="utf-8"))["caption"]
        caption = self._post(prompt)
        if cache_path is not None:
            cache_path.parent.mkdir(parents=True, exist_ok=True)
            cache_path.write_text(
                json.dumps({"prompt": prompt, "caption": caption}, sort_keys=True),
                encoding="utf-8",
            )
        return caption


def load_caption_fixtures(path: str | Path) -> dict[str, str]:
    try:
        fixtures = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"unparseable caption fixtures {path}: {exc}") from None
    if not isinstance(fixtures, dict):
        raise InvalidInputError(f"caption fixtures {path} must be a class->caption object")
    return fixtures


def generate_class_captions(
    classes: list[str],
    domain_text: str,
    task_text: str,
    *,
    mode: str,
    fixtures_path: str | Path | None = None,
    service: LiveCaptionService | None = None,
    cache_dir: str | Path | None = None,
    word_limit: int = DEFAULT_WORD_LIMIT,
) -> dict[str, str]:
    """One caption per class, from fixtures or the live service."""
    if not classes:
        raise InvalidInputError("no classes given")
    if mode == "fixture":
        if fixtures_path is None:
            raise InvalidInputError("fixture mode needs a fixtures file")
        fixtures = load_caption_fixtures(fixtures_path)
        missing = [c for c in classes if c not in fixtures]
        if missing:
            raise InvalidInputError(f"caption fixtures missing classes: {missing}")
        return {c: fixtures[c] for c in classes}
    if mode != "live":
        raise InvalidInputError(f"unknown caption mode {mode!r}")
    service = service or LiveCaptionService(cache_dir=cache_dir)
    return {
        c: service.caption(build_class_caption_prompt(c, domain_text, task_text, word_limit))
        for c in classes
    }


def save_caption_file(captions: dict[str, str], path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(dict(sorted(captions.items())), sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )
