"""Image-generation backends: a remote create/edit API client and an offline
procedural mock that honors the same contracts."""

from __future__ import annotations

import base64
import hashlib
import os
import threading
import time
from dataclasses import dataclass
from typing import Callable, Optional, Protocol, Tuple

import numpy as np
import requests

from ._http import send_with_retry
from .errors import AuthError, DimMismatch, NetworkError, NothingEditable, ProviderError, RateLimited
from .image_ops import DEFAULT_SIZE, RasterImage
from .masks import Mask, to_edit_alpha

DEFAULT_IMAGE_ENDPOINT = "https://api.openai.com/v1"
DEFAULT_MODEL = "dall-e-2"
WHITE_BACKGROUND_HINT = "white background"
BLOCK = 8

Size = Tuple[int, int]


@dataclass(frozen=True)
class BackendResult:
    image: RasterImage
    provider_id: str
    latency_ms: float


class ImageBackend(Protocol):
    deterministic: bool

    def create(self, prompt: str, size: Size = DEFAULT_SIZE, seed: Optional[int] = None) -> BackendResult: ...

    def edit(
        self, base: RasterImage, mask: Mask, prompt: str, size: Optional[Size] = None, seed: Optional[int] = None
    ) -> BackendResult: ...


def _check_prompt(prompt: str) -> None:
    if not prompt or not prompt.strip():
        raise ValueError("prompt must be non-empty")


def _check_edit(base: RasterImage, mask: Mask, size: Optional[Size]) -> Size:
    size = tuple(size) if size is not None else base.size
    if base.size != size or (mask.width, mask.height) != size:
        raise DimMismatch(f"base {base.size}, mask {(mask.width, mask.height)}, size {size} disagree")
    if mask.count == 0:
        raise NothingEditable("edit mask has no editable pixels")
    return size


# -- mock ------------------------------------------------------------------------

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _mix(x: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer, elementwise on uint64 arrays."""
    x = x.astype(np.uint64, copy=True)
    x ^= x >> np.uint64(30)
    x *= _M1
    x ^= x >> np.uint64(27)
    x *= _M2
    x ^= x >> np.uint64(31)
    return x


def prompt_hash(prompt: str) -> int:
    return int.from_bytes(hashlib.blake2b(prompt.encode("utf-8"), digest_size=8).digest(), "little")


class MockBackend:
    """Deterministic procedural generator.

    Every pixel is a pure function of ``(prompt hash, request seed, row // 8,
    col // 8)``: a prompt-tinted horizontal band palette with per-block hashed
    jitter, so distinct prompts give visibly distinct blocky images.  Prompts
    asking for a white background render that pattern only inside a
    prompt-dependent ellipse and leave the rest white, which gives the object
    pipeline something to extract.  ``edit`` repaints exactly the editable
    pixels and copies the rest from the base.
    """

    deterministic = True

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.calls = 0
        self._lock = threading.Lock()

    def render(self, prompt: str, size: Size, seed: Optional[int] = None) -> np.ndarray:
        w, h = size
        ph = np.uint64(prompt_hash(prompt))
        rs = np.uint64(int(self.seed if seed is None else seed) & (2**64 - 1))
        rows = np.arange(h, dtype=np.uint64)[:, None] // np.uint64(BLOCK)
        cols = np.arange(w, dtype=np.uint64)[None, :] // np.uint64(BLOCK)
        with np.errstate(over="ignore"):
            key = _mix(np.array([ph ^ (rs * _GOLDEN)], dtype=np.uint64))[0]
            cell = _mix(key ^ _mix(rows * _GOLDEN + np.uint64(1)) ^ _mix(cols * _M1 + np.uint64(2)))
            band = _mix(key + (rows // np.uint64(4)) * _GOLDEN + np.uint64(3))
        band_rgb = np.stack([(band >> np.uint64(s)) & np.uint64(0xFF) for s in (0, 8, 16)], axis=-1)
        jitter = np.stack([(cell >> np.uint64(s)) & np.uint64(0x3F) for s in (24, 32, 40)], axis=-1)
        rgb = (band_rgb.astype(np.int64) * 3 // 4 + jitter.astype(np.int64)).astype(np.uint8)
        rgb = np.broadcast_to(rgb, (h, w, 3))
        px = np.empty((h, w, 4), np.uint8)
        px[..., :3] = rgb
        px[..., 3] = 255
        if WHITE_BACKGROUND_HINT in prompt.lower():
            px[~self._blob(int(key), size)] = 255
        return px

    @staticmethod
    def _blob(key: int, size: Size) -> np.ndarray:
        w, h = size
        frac = [((key >> s) & 0xFF) / 255.0 for s in (0, 8, 16, 24)]
        cr, cc = h * (0.4 + 0.2 * frac[0]), w * (0.4 + 0.2 * frac[1])
        ar, ac = h * (0.25 + 0.15 * frac[2]), w * (0.2 + 0.15 * frac[3])
        rr = (np.arange(h)[:, None] - cr) / ar
        cc_ = (np.arange(w)[None, :] - cc) / ac
        return rr**2 + cc_**2 <= 1.0

    def _provider_id(self, kind: str, prompt: str, seed: Optional[int]) -> str:
        digest = hashlib.blake2b(f"{kind}|{prompt}|{seed}".encode("utf-8"), digest_size=6).hexdigest()
        return f"mock-{kind}-{digest}"

    def create(self, prompt: str, size: Size = DEFAULT_SIZE, seed: Optional[int] = None) -> BackendResult:
        _check_prompt(prompt)
        with self._lock:
            self.calls += 1
        image = RasterImage(self.render(prompt, tuple(size), seed))
        return BackendResult(image, self._provider_id("create", prompt, seed), 0.0)

    def edit(
        self, base: RasterImage, mask: Mask, prompt: str, size: Optional[Size] = None, seed: Optional[int] = None
    ) -> BackendResult:
        _check_prompt(prompt)
        size = _check_edit(base, mask, size)
        with self._lock:
            self.calls += 1
        fresh = self.render(prompt, size, seed)
        out = base.writable()
        out[mask.editable] = fresh[mask.editable]
        return BackendResult(RasterImage(out), self._provider_id("edit", prompt, seed), 0.0)


# -- remote ------------------------------------------------------------------------

class RemoteBackend:
    """Client for a DALL-E-style ``images/generations`` + ``images/edits`` API.

    The returned edit has every fixed pixel copied back from the base, so the
    preservation contract holds whatever the provider does at the seams.
    """

    deterministic = False

    def __init__(
        self,
        endpoint: str = DEFAULT_IMAGE_ENDPOINT,
        api_key: Optional[str] = None,
        model: str = DEFAULT_MODEL,
        max_in_flight: int = 2,
        retries: int = 3,
        timeout: float = 60.0,
        session: Optional[requests.Session] = None,
        sleep: Optional[Callable[[float], None]] = None,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get("OPENAI_API_KEY")
        self.model = model
        self.retries = retries
        self.timeout = timeout
        self.session = session or requests.Session()
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._sleep = sleep or time.sleep

    def _headers(self) -> dict:
        if not self.api_key:
            raise AuthError("OPENAI_API_KEY is not set")
        return {"Authorization": f"Bearer {self.api_key}"}

    def _post(self, path: str, **kwargs) -> Tuple[dict, float]:
        headers = self._headers()
        url = f"{self.endpoint}/{path}"

        def send():
            return self.session.post(url, headers=headers, timeout=self.timeout, **kwargs)

        start = time.perf_counter()
        with self._slots:
            try:
                resp = send_with_retry(send, retries=self.retries, sleep=self._sleep)
            except requests.RequestException as exc:
                raise NetworkError(f"{url}: {exc}") from exc
        latency = (time.perf_counter() - start) * 1000.0
        if resp.status_code in (401, 403):
            raise AuthError(f"{url}: HTTP {resp.status_code}")
        if resp.status_code == 429:
            raise RateLimited(f"{url}: still rate limited after {self.retries} retries")
        if resp.status_code != 200:
            raise ProviderError(f"{url}: HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json(), latency
        except ValueError as exc:
            raise ProviderError(f"{url}: response is not JSON") from exc

    def _decode(self, body: dict, size: Size) -> Tuple[RasterImage, str]:
        try:
            item = body["data"][0]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError("response carries no image") from exc
        if item.get("b64_json"):
            data = base64.b64decode(item["b64_json"])
        elif item.get("url"):
            try:
                fetched = self.session.get(item["url"], timeout=self.timeout)
                fetched.raise_for_status()
            except requests.RequestException as exc:
                raise NetworkError(f"image download failed: {exc}") from exc
            data = fetched.content
        else:
            raise ProviderError("response carries no image")
        image = RasterImage.from_png_bytes(data)
        if image.size != tuple(size):
            raise ProviderError(f"provider returned {image.size}, requested {tuple(size)}")
        provider_id = str(body.get("id") or body.get("created") or "remote")
        return image, provider_id

    def create(self, prompt: str, size: Size = DEFAULT_SIZE, seed: Optional[int] = None) -> BackendResult:
        _check_prompt(prompt)
        payload = {
            "model": self.model,
            "prompt": prompt,
            "n": 1,
            "size": f"{size[0]}x{size[1]}",
            "response_format": "b64_json",
        }
        body, latency = self._post("images/generations", json=payload)
        image, pid = self._decode(body, size)
        return BackendResult(image, pid, latency)

    def edit(
        self, base: RasterImage, mask: Mask, prompt: str, size: Optional[Size] = None, seed: Optional[int] = None
    ) -> BackendResult:
        _check_prompt(prompt)
        size = _check_edit(base, mask, size)
        request_png = to_edit_alpha(mask, base).to_png_bytes()
        data = {
            "model": self.model,
            "prompt": prompt,
            "n": "1",
            "size": f"{size[0]}x{size[1]}",
            "response_format": "b64_json",
        }
        files = {"image": ("image.png", request_png, "image/png")}
        body, latency = self._post("images/edits", data=data, files=files)
        image, pid = self._decode(body, size)
        out = base.writable()
        out[mask.editable] = image.pixels[mask.editable]
        return BackendResult(RasterImage(out), pid, latency)
