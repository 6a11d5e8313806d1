"""Chunk translation through a pluggable client, plus prompt assembly."""

from __future__ import annotations

import json
import os
import threading
from concurrent.futures import Future
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Mapping, Optional, Protocol, Tuple

import requests

from ._http import send_with_retry
from .errors import ClientError, EmptyTranslation, UnknownText
from .languages import AUTO, check_code

DEFAULT_TRANSLATE_ENDPOINT = "https://translation.googleapis.com/language/translate/v2"
SUFFIX_JOIN = ", "


@dataclass(frozen=True)
class TranslationRequest:
    text: str
    source_lang: str = AUTO
    target_lang: str = "en"

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise ValueError("translation text must be non-empty")
        check_code(self.source_lang, allow_auto=True)
        check_code(self.target_lang)

    @property
    def key(self) -> Tuple[str, str, str]:
        return (self.source_lang, self.target_lang, self.text)


class TranslationClient(Protocol):
    calls: int
    deterministic: bool

    def translate(self, text: str, source_lang: str, target_lang: str) -> str: ...


class MockTranslator:
    """Lookup-table client for offline runs.

    With ``passthrough`` set, text missing from the table is returned as is
    instead of raising :class:`UnknownText`.
    """

    deterministic = True

    def __init__(self, table: Optional[Mapping[str, str]] = None, passthrough: bool = False):
        self.table = dict(table or {})
        self.passthrough = passthrough
        self.calls = 0
        self._lock = threading.Lock()

    @classmethod
    def from_json(cls, path: str | Path, passthrough: bool = False) -> "MockTranslator":
        with open(path, encoding="utf-8") as fh:
            table = json.load(fh)
        if not isinstance(table, dict):
            raise ValueError(f"{path}: expected a JSON object mapping text to translation")
        return cls(table, passthrough=passthrough)

    def translate(self, text: str, source_lang: str, target_lang: str) -> str:
        with self._lock:
            self.calls += 1
        if text in self.table:
            return self.table[text]
        if self.passthrough:
            return text
        raise UnknownText(f"no mock translation for {text!r}")


class RemoteTranslator:
    """Google-Translate-compatible HTTP client.

    Sends ``q``/``source``/``target`` as a POST and accepts either the Google v2
    response shape or a flat ``{"translatedText": ...}`` object.
    """

    deterministic = False

    def __init__(
        self,
        endpoint: str = DEFAULT_TRANSLATE_ENDPOINT,
        api_key: Optional[str] = None,
        session: Optional[requests.Session] = None,
        timeout: float = 30.0,
        retries: int = 3,
        sleep: Callable[[float], None] | None = None,
    ):
        self.endpoint = endpoint
        self.api_key = api_key if api_key is not None else os.environ.get("TRANSLATE_API_KEY")
        self.session = session or requests.Session()
        self.timeout = timeout
        self.retries = retries
        self._sleep = sleep
        self.calls = 0
        self._lock = threading.Lock()

    def translate(self, text: str, source_lang: str, target_lang: str) -> str:
        payload = {"q": text, "target": target_lang, "format": "text"}
        if source_lang != AUTO:
            payload["source"] = source_lang
        params = {"key": self.api_key} if self.api_key else None
        with self._lock:
            self.calls += 1

        def send():
            return self.session.post(self.endpoint, data=payload, params=params, timeout=self.timeout)

        kwargs = {"sleep": self._sleep} if self._sleep else {}
        try:
            resp = send_with_retry(send, retries=self.retries, **kwargs)
        except requests.RequestException as exc:
            raise ClientError(f"translation request failed: {exc}") from exc
        if resp.status_code != 200:
            raise ClientError(f"translation service returned HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            body = resp.json()
            if "data" in body:
                return body["data"]["translations"][0]["translatedText"]
            return body["translatedText"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ClientError(f"unexpected translation response: {resp.text[:200]}") from exc


class Translator:
    """Caching front end for a :class:`TranslationClient`.

    The cache is append-only and single-flight: concurrent requests for the
    same key share one client call.
    """

    def __init__(self, client: TranslationClient, source_lang: str = AUTO, target_lang: str = "en"):
        self.client = client
        self.source_lang = check_code(source_lang, allow_auto=True)
        self.target_lang = check_code(target_lang)
        self._cache: Dict[Tuple[str, str, str], Future] = {}
        self._lock = threading.Lock()

    @property
    def deterministic(self) -> bool:
        return getattr(self.client, "deterministic", False)

    def translate(self, text: str | TranslationRequest) -> str:
        req = text if isinstance(text, TranslationRequest) else TranslationRequest(
            text, self.source_lang, self.target_lang
        )
        if req.source_lang == req.target_lang:
            return req.text
        with self._lock:
            fut = self._cache.get(req.key)
            owner = fut is None
            if owner:
                fut = self._cache[req.key] = Future()
        if owner:
            try:
                result = self.client.translate(req.text, req.source_lang, req.target_lang)
                if not result or not result.strip():
                    raise EmptyTranslation(f"empty translation for {req.text!r}")
                fut.set_result(result.strip())
            except BaseException as exc:
                # failures are not cached; a later call may retry
                with self._lock:
                    del self._cache[req.key]
                fut.set_exception(exc)
        return fut.result()


def build_prompt(translated: str, context_suffix: Optional[str] = None, extra: Optional[str] = None) -> str:
    """Join the translated text with the optional style suffix and extra request.

    A suffix that is already one of the comma-separated parts is not added
    again, so the function is idempotent.
    """
    prompt = translated.strip()
    for suffix in (context_suffix, extra):
        if not suffix or not suffix.strip():
            continue
        suffix = suffix.strip()
        if suffix in (p.strip() for p in prompt.split(SUFFIX_JOIN)):
            continue
        prompt = prompt.rstrip(" .,;:") + SUFFIX_JOIN + suffix
    return prompt
