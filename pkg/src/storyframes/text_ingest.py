"""Acquire story text, clean it, and cut it into chunks.

Text is kept in logical (storage) order throughout; nothing here performs bidi
reordering, so right-to-left input reaches the translator untouched.
"""

from __future__ import annotations

import enum
import html
import re
import unicodedata
from dataclasses import dataclass
from html.parser import HTMLParser
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import requests

from .errors import EmptyAfterCleaning, EmptySource, FetchFailed, FileUnreadable, InvalidSpec
from .languages import check_code

FETCH_TIMEOUT = 30
MAX_REDIRECTS = 5


class Origin(str, enum.Enum):
    INLINE = "inline"
    FILE = "file"
    URL = "url"


@dataclass(frozen=True)
class SourceText:
    origin: Origin
    detail: Optional[str]
    raw: str
    language_hint: Optional[str] = None


# -- ingestion -----------------------------------------------------------------

_INVISIBLE_TAGS = {"script", "style", "noscript", "template", "head", "svg", "iframe", "object"}
_BLOCK_TAGS = {
    "address", "article", "aside", "blockquote", "br", "dd", "div", "dl", "dt",
    "figcaption", "figure", "footer", "h1", "h2", "h3", "h4", "h5", "h6", "header",
    "hr", "li", "main", "nav", "ol", "p", "pre", "section", "table", "td", "th",
    "tr", "ul",
}


class _VisibleText(HTMLParser):
    def __init__(self) -> None:
        super().__init__(convert_charrefs=True)
        self.parts: List[str] = []
        self._hidden = 0

    def handle_starttag(self, tag, attrs):
        if tag in _INVISIBLE_TAGS:
            self._hidden += 1
        elif tag in _BLOCK_TAGS:
            self.parts.append("\n")

    def handle_startendtag(self, tag, attrs):
        if tag in _BLOCK_TAGS:
            self.parts.append("\n")

    def handle_endtag(self, tag):
        if tag in _INVISIBLE_TAGS:
            self._hidden = max(0, self._hidden - 1)
        elif tag in _BLOCK_TAGS:
            self.parts.append("\n")

    def handle_data(self, data):
        if not self._hidden:
            self.parts.append(data)


def visible_text(page: str) -> str:
    """Text a reader would see: markup gone, script/style bodies dropped."""
    parser = _VisibleText()
    parser.feed(page)
    parser.close()
    text = "".join(parser.parts)
    lines = (re.sub(r"[^\S\n]+", " ", line).strip() for line in text.split("\n"))
    return "\n".join(line for line in lines if line)


def fetch_url(url: str, session: Optional[requests.Session] = None) -> str:
    if not re.match(r"^https?://", url, re.IGNORECASE):
        raise FetchFailed(f"unsupported URL scheme: {url}")
    session = session or requests.Session()
    session.max_redirects = MAX_REDIRECTS
    try:
        resp = session.get(url, timeout=FETCH_TIMEOUT)
    except requests.RequestException as exc:
        raise FetchFailed(f"{url}: {exc}") from exc
    if not 200 <= resp.status_code < 300:
        raise FetchFailed(f"{url}: HTTP {resp.status_code}")
    if resp.encoding is None or resp.encoding.lower() == "iso-8859-1":
        # requests falls back to latin-1 for text/* without a charset
        resp.encoding = resp.apparent_encoding or "utf-8"
    return resp.text


def ingest(
    origin: Origin | str,
    value: str,
    language_hint: Optional[str] = None,
    session: Optional[requests.Session] = None,
) -> SourceText:
    """Load raw story text from an inline string, a UTF-8 file, or a web page."""
    origin = Origin(origin)
    if language_hint is not None and language_hint != "auto":
        check_code(language_hint)
    else:
        language_hint = None

    detail: Optional[str] = None
    if origin is Origin.INLINE:
        raw = value
    elif origin is Origin.FILE:
        detail = str(value)
        try:
            raw = Path(value).read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            raise FileUnreadable(f"{value}: {exc}") from exc
    else:
        detail = value
        raw = visible_text(fetch_url(value, session))

    if not raw.strip():
        raise EmptySource(f"no text extracted from {origin.value} source")
    return SourceText(origin, detail, raw, language_hint)


# -- cleaning ------------------------------------------------------------------

# tag names run to whitespace, "/" or ">" as in HTML tokenizers
_TAG_RE = re.compile(r"<(/?)([A-Za-z][^\s/<>]*)[^<>]*>|<![^<>]*>|<\?[^<>]*>")
_ENTITY_RE = re.compile(r"&(?:#[0-9]+|#[xX][0-9a-fA-F]+|[A-Za-z][A-Za-z0-9]*);")
_URL_RE = re.compile(r"(?:[A-Za-z][A-Za-z0-9+.-]*://|www\.)\S+", re.IGNORECASE)
_SPACES_RE = re.compile(r"[^\S\n]+")
_DROP_CATEGORIES = {"Cc", "Cs", "Co", "Cn"}
_DROP_CHARS = {"\ufeff", "\ufffd"}


def _strip_markup(text: str) -> str:
    def tag(m: re.Match) -> str:
        name = (m.group(2) or "").lower()
        return "\n" if name in _BLOCK_TAGS else " "

    text = _TAG_RE.sub(tag, text)
    text = html.unescape(text)
    text = _ENTITY_RE.sub(" ", text)
    return _URL_RE.sub(" ", text)


def _normalize_chars(text: str) -> str:
    out = []
    for ch in text:
        if ch == "\n":
            out.append(ch)
        elif ch in "\u2028\u2029":
            out.append("\n")
        elif ch in _DROP_CHARS or unicodedata.category(ch) in _DROP_CATEGORIES:
            out.append(" ")
        else:
            out.append(ch)
    return "".join(out)


def clean(raw: str) -> str:
    """Remove markup, entities, URLs and control characters.

    Newlines survive (line-based chunking needs them), spaces are collapsed,
    lines are trimmed and runs of blank lines are reduced to one.
    ``clean(clean(s)) == clean(s)`` for every input.
    """
    text = raw.replace("\r\n", "\n").replace("\r", "\n")
    # unescaping or deleting can expose new tags/entities/URLs: run to a fixed point
    while True:
        stripped = _normalize_chars(_strip_markup(text))
        if stripped == text:
            break
        text = stripped
    lines = [_SPACES_RE.sub(" ", line).strip() for line in text.split("\n")]
    text = re.sub(r"\n{3,}", "\n\n", "\n".join(lines)).strip("\n")
    if not text.strip():
        raise EmptyAfterCleaning("nothing left after cleaning")
    return text


# -- splitting and chunking ----------------------------------------------------

TERMINATORS = ".!?׃"
_SENTENCE_BREAK = re.compile(
    r"(?:(?<=[.!?׃])|(?<=[.!?׃][\"'”’»)\]]))\s+"
)


def split_units(text: str, by: str) -> List[str]:
    """Split cleaned text into lines or sentences, dropping empty units."""
    lines = [line.strip() for line in text.split("\n")]
    lines = [line for line in lines if line]
    if by == "line":
        return lines
    if by != "sentence":
        raise InvalidSpec(f"unknown unit kind {by!r}")
    units: List[str] = []
    for line in lines:
        line_units: List[str] = []
        for piece in _SENTENCE_BREAK.split(line):
            piece = piece.strip()
            if not piece:
                continue
            if line_units and all(ch in TERMINATORS for ch in piece):
                # stray punctuation such as "..." belongs to the preceding sentence
                line_units[-1] = f"{line_units[-1]} {piece}"
            else:
                line_units.append(piece)
        units.extend(line_units)
    return units


class ChunkMethod(str, enum.Enum):
    BY_LINE = "by-line"
    BY_SENTENCE = "by-sentence"
    SENTENCE_WINDOW = "sentence-window"
    LINE_PAIR_STACK = "line-pair-stack"

    @property
    def unit(self) -> str:
        if self in (ChunkMethod.BY_LINE, ChunkMethod.LINE_PAIR_STACK):
            return "line"
        return "sentence"


@dataclass(frozen=True)
class ChunkingSpec:
    method: ChunkMethod = ChunkMethod.BY_LINE
    window: int = 2
    stride: int = 1

    def __post_init__(self):
        object.__setattr__(self, "method", ChunkMethod(self.method))
        if self.method is ChunkMethod.SENTENCE_WINDOW:
            if self.window < 1 or self.stride < 1:
                raise InvalidSpec("window and stride must be positive")
            if self.stride > self.window:
                raise InvalidSpec(f"stride {self.stride} > window {self.window} leaves gaps")


@dataclass(frozen=True)
class Chunk:
    index: int
    text: str
    span: Tuple[int, int]  # half-open range of unit indices


def chunk(units: Sequence[str], spec: ChunkingSpec) -> List[Chunk]:
    if not units:
        raise InvalidSpec("cannot chunk an empty unit list")
    n = len(units)
    spans: List[Tuple[int, int]] = []
    joiner = " "
    if spec.method in (ChunkMethod.BY_LINE, ChunkMethod.BY_SENTENCE):
        spans = [(i, i + 1) for i in range(n)]
    elif spec.method is ChunkMethod.SENTENCE_WINDOW:
        start = 0
        while True:
            spans.append((start, min(start + spec.window, n)))
            if start + spec.window >= n:
                break
            start += spec.stride
    else:
        joiner = "\n"
        spans = [(0, 1)] if n == 1 else [(i, i + 2) for i in range(n - 1)]
    return [
        Chunk(i, joiner.join(units[a:b]), (a, b)) for i, (a, b) in enumerate(spans)
    ]


def chunk_text(text: str, spec: ChunkingSpec) -> List[Chunk]:
    """Clean text in, chunks out: splits by the unit the method works on."""
    return chunk(split_units(text, spec.method.unit), spec)
