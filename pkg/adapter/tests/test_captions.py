from __future__ import annotations

import json

import pytest

from vlmhub.errors import InvalidInputError
from vlmhub.selection import build_class_caption_prompt

from vlmhub_adapter.captions import (
    CaptionServiceError,
    LiveCaptionService,
    generate_class_captions,
    save_caption_file,
)


def test_prompt_bytes_match_engine_template():
    got = build_class_caption_prompt("cat", "natural picture", "image classification", 50)
    expected = (
        "Generate long detailed caption for the natural picture of cat in the "
        'image classification. e.g., "The natural picture of cat, which is ... ". '
        "Generate long caption for cat within 50 words."
    )
    assert got.encode("utf-8") == expected.encode("utf-8")


def test_fixture_mode_copies_captions_verbatim(tmp_path):
    fixtures = {"cat": "The natural picture of cat, which is a small feline.",
                "dog": "The natural picture of dog, which is a loyal canine."}
    fixtures_path = tmp_path / "fixtures.json"
    fixtures_path.write_text(json.dumps(fixtures))
    got = generate_class_captions(
        ["cat", "dog"], "natural picture", "image classification",
        mode="fixture", fixtures_path=fixtures_path,
    )
    assert got == fixtures
    again = generate_class_captions(
        ["cat", "dog"], "natural picture", "image classification",
        mode="fixture", fixtures_path=fixtures_path,
    )
    assert again == got  # offline and deterministic


def test_fixture_miss_names_the_class(tmp_path):
    fixtures_path = tmp_path / "fixtures.json"
    fixtures_path.write_text(json.dumps({"cat": "a caption"}))
    with pytest.raises(InvalidInputError) as err:
        generate_class_captions(
            ["cat", "zebra"], "natural picture", "image classification",
            mode="fixture", fixtures_path=fixtures_path,
        )
    assert "zebra" in str(err.value)


class _CountingSession:
    """Fake HTTP session returning canned captions and counting calls."""

    def __init__(self):
        self.calls = 0

    def post(self, url, json=None, headers=None, timeout=None):
        self.calls += 1
        prompt = json["messages"][0]["content"]

        class Response:
            def raise_for_status(self):
                pass

            def json(self_inner):
                return {"choices": [{"message": {"content": f"caption for: {prompt[:30]}"}}]}

        return Response()


class _FailingSession:
    def __init__(self):
        self.calls = 0

    def post(self, *args, **kwargs):
        self.calls += 1
        raise ConnectionError("service down")


def test_live_mode_caches_responses(tmp_path):
    session = _CountingSession()
    service = LiveCaptionService(
        endpoint="https://example.invalid/v1", api_key="k", model="m",
        cache_dir=tmp_path / "cache", session=session, sleep=lambda _: None,
    )
    first = generate_class_captions(
        ["cat", "dog"], "natural picture", "image classification",
        mode="live", service=service,
    )
    assert session.calls == 2

    # A rerun against a dead session must be served entirely from the cache.
    dead = _FailingSession()
    offline = LiveCaptionService(
        endpoint="https://example.invalid/v1", api_key="k", model="m",
        cache_dir=tmp_path / "cache", session=dead, sleep=lambda _: None,
    )
    second = generate_class_captions(
        ["cat", "dog"], "natural picture", "image classification",
        mode="live", service=offline,
    )
    assert second == first
    assert dead.calls == 0


def test_live_mode_retries_then_raises(tmp_path):
    session = _FailingSession()
    service = LiveCaptionService(
        endpoint="https://example.invalid/v1", api_key="k",
        cache_dir=tmp_path / "cache", session=session, sleep=lambda _: None,
    )
    with pytest.raises(CaptionServiceError):
        generate_class_captions(
            ["cat"], "natural picture", "image classification",
            mode="live", service=service,
        )
    assert session.calls == 4  # initial try plus three retries


def test_unknown_mode_rejected():
    with pytest.raises(InvalidInputError):
        generate_class_captions(["cat"], "d", "t", mode="telepathy")


def test_caption_file_is_canonical(tmp_path):
    path = tmp_path / "captions.json"
    save_caption_file({"b": "two", "a": "one"}, path)
    assert json.loads(path.read_text()) == {"a": "one", "b": "two"}
    assert path.read_text().startswith('{\n  "a"')
