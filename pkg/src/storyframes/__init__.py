"""Turn multi-lingual narrative text into a coherent sequence of images.

Text is cleaned, chunked and translated; each chunk then drives one frame,
derived from the previous frame through a mask-constrained edit call so the
scene and the dominant object stay consistent across the story.
"""

from .backend import BackendResult, MockBackend, RemoteBackend
from .image_ops import ObjectRegion, RasterImage, TextBox
from .masks import Mask, MaskParams, Polarity, ProtectedRegion
from .story import (
    FixtureDetector,
    FrameRecord,
    Mode,
    NullDetector,
    RemoteOcrDetector,
    StoryConfig,
    StoryRun,
    run_story,
)
from .text_ingest import Chunk, ChunkingSpec, ChunkMethod, Origin, SourceText, chunk_text, clean, ingest
from .translator import MockTranslator, RemoteTranslator, Translator, build_prompt

__version__ = "0.1.0"

__all__ = [
    "BackendResult", "MockBackend", "RemoteBackend",
    "ObjectRegion", "RasterImage", "TextBox",
    "Mask", "MaskParams", "Polarity", "ProtectedRegion",
    "FixtureDetector", "FrameRecord", "Mode", "NullDetector", "RemoteOcrDetector",
    "StoryConfig", "StoryRun", "run_story",
    "Chunk", "ChunkingSpec", "ChunkMethod", "Origin", "SourceText", "chunk_text", "clean", "ingest",
    "MockTranslator", "RemoteTranslator", "Translator", "build_prompt",
]
