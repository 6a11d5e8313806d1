"""Story orchestration: mode-specific initialization, then the frame loop
(mask -> edit -> text removal -> saturation match), with a JSON manifest."""

from __future__ import annotations

import datetime as _dt
import enum
import hashlib
import json
import logging
import os
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np
import requests

from .backend import BackendResult, ImageBackend
from .errors import (
    EmptyTranslation,
    InvalidSpec,
    NetworkError,
    NothingEditable,
    ProviderError,
    StoryError,
)
from .image_ops import (
    OBJECT_SCALE,
    WHITE_THRESHOLD,
    ObjectRegion,
    RasterImage,
    TextBox,
    composite_over,
    extract_object,
    inpaint,
    match_saturation,
    mean_saturation,
    placement_anchor,
    resize_reposition,
    white_mask,
)
from .masks import (
    Mask,
    MaskParams,
    ProtectedRegion,
    dotted_mask,
    edge_mask,
    object_mutation_mask,
)
from .text_ingest import Chunk, ChunkingSpec
from .translator import Translator, build_prompt

log = logging.getLogger(__name__)

WHITE_BACKGROUND_REQUEST = "on white background"
MANIFEST_NAME = "manifest.json"
INTERMEDIATE_DIR = "intermediate"

# seed streams for the initialization calls; frames use (run_seed, index)
_STAGE_OBJECT, _STAGE_GAP_FILL, _STAGE_BACKGROUND = 1, 2, 3


class Mode(str, enum.Enum):
    PLAIN = "plain"
    FREE_OBJECT = "free-object"
    DEFINED_SETTING = "defined-setting"
    DEFINED_SETTING_AND_OBJECT = "defined-setting-object"

    @property
    def has_object(self) -> bool:
        return self in (Mode.FREE_OBJECT, Mode.DEFINED_SETTING_AND_OBJECT)

    @property
    def has_setting(self) -> bool:
        return self in (Mode.DEFINED_SETTING, Mode.DEFINED_SETTING_AND_OBJECT)


@dataclass(frozen=True)
class StoryConfig:
    mode: Mode = Mode.PLAIN
    title: str = ""
    context_suffix: Optional[str] = None
    setting_image: Optional[RasterImage] = None
    setting_image_path: Optional[str] = None
    chunking: ChunkingSpec = field(default_factory=ChunkingSpec)
    mask_params: MaskParams = field(default_factory=MaskParams)
    protected: Tuple[ProtectedRegion, ...] = ()
    white_threshold: int = WHITE_THRESHOLD
    object_scale: float = OBJECT_SCALE
    object_anchor: Optional[Tuple[int, int]] = None  # None: lower-center placement
    run_seed: int = 0
    size: Tuple[int, int] = (256, 256)

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "size", tuple(self.size))
        object.__setattr__(self, "protected", tuple(self.protected))
        w, h = self.size
        self.mask_params.check_size(w, h)
        if self.mode.has_setting:
            if self.setting_image is None:
                raise InvalidSpec(f"mode {self.mode.value} needs a setting image")
            if self.setting_image.size != self.size:
                raise InvalidSpec(f"setting image is {self.setting_image.size}, story size is {self.size}")
        if self.mode.has_object and not self.title.strip():
            raise InvalidSpec(f"mode {self.mode.value} needs a title to create the object")
        if not 0 < self.object_scale <= 1:
            raise InvalidSpec("object_scale must lie in (0, 1]")
        if not 0 <= self.white_threshold <= 255:
            raise InvalidSpec("white_threshold must lie in [0, 255]")
        if self.run_seed < 0:
            raise InvalidSpec("run_seed must be non-negative")

    def echo(self) -> Dict[str, Any]:
        """JSON-safe copy of the config; the setting image appears by path only."""
        params = asdict(self.mask_params)
        params["dot_polarity"] = self.mask_params.dot_polarity.value
        return {
            "mode": self.mode.value,
            "title": self.title,
            "context_suffix": self.context_suffix,
            "setting_image": self.setting_image_path,
            "chunking": {
                "method": self.chunking.method.value,
                "window": self.chunking.window,
                "stride": self.chunking.stride,
            },
            "mask_params": params,
            "protected": [asdict(p) for p in self.protected],
            "white_threshold": self.white_threshold,
            "object_scale": self.object_scale,
            "object_anchor": list(self.object_anchor) if self.object_anchor else None,
            "run_seed": self.run_seed,
            "size": list(self.size),
        }


@dataclass
class FrameRecord:
    index: int
    text: str
    translated: Optional[str]
    prompt: Optional[str]
    mask: Optional[Dict[str, Any]]
    file: Optional[str]
    provider_id: Optional[str]
    postprocess: Dict[str, Any] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)


# -- text detection ----------------------------------------------------------------

class TextDetector(Protocol):
    def detect(self, image: RasterImage) -> List[TextBox]: ...


class NullDetector:
    def detect(self, image: RasterImage) -> List[TextBox]:
        return []


def _box_from_json(entry) -> TextBox:
    entry = list(entry)
    if len(entry) == 4 and all(isinstance(v, (int, float)) for v in entry):
        top, left, bottom, right = entry
    else:
        # polygon of (x, y) points, as OCR detectors usually report
        xs = [float(p[0]) for p in entry]
        ys = [float(p[1]) for p in entry]
        top, left, bottom, right = min(ys), min(xs), max(ys) + 1, max(xs) + 1
    return TextBox(int(np.floor(top)), int(np.floor(left)), int(np.ceil(bottom)), int(np.ceil(right)))


def _in_bounds(boxes, image: RasterImage) -> List[TextBox]:
    out = []
    for box in boxes:
        clipped = box.clipped(image.width, image.height)
        if clipped is not None:
            out.append(clipped)
    return out


class FixtureDetector:
    """Reports the same configured boxes for every image."""

    def __init__(self, boxes: Sequence[TextBox] = ()):
        self.boxes = list(boxes)

    @classmethod
    def from_json(cls, path: str | Path) -> "FixtureDetector":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        if isinstance(data, dict):
            data = data.get("boxes", [])
        return cls([_box_from_json(b) for b in data])

    def detect(self, image: RasterImage) -> List[TextBox]:
        return _in_bounds(self.boxes, image)


class RemoteOcrDetector:
    """POSTs the frame as PNG; expects ``{"boxes": [...]}`` with each box either
    ``[top, left, bottom, right]`` or a polygon of ``[x, y]`` points."""

    def __init__(self, endpoint: str, session: Optional[requests.Session] = None, timeout: float = 60.0):
        self.endpoint = endpoint
        self.session = session or requests.Session()
        self.timeout = timeout

    def detect(self, image: RasterImage) -> List[TextBox]:
        files = {"image": ("frame.png", image.to_png_bytes(), "image/png")}
        try:
            resp = self.session.post(self.endpoint, files=files, timeout=self.timeout)
        except requests.RequestException as exc:
            raise NetworkError(f"OCR request failed: {exc}") from exc
        if resp.status_code != 200:
            raise ProviderError(f"OCR service returned HTTP {resp.status_code}")
        try:
            boxes = [_box_from_json(b) for b in resp.json().get("boxes", [])]
        except (ValueError, TypeError, IndexError, AttributeError) as exc:
            raise ProviderError("malformed OCR response") from exc
        return _in_bounds(boxes, image)


# -- seeds and masks -------------------------------------------------------------

def derive_seed(run_seed: int, *keys: int) -> int:
    """64-bit seed for a named sub-stream of a run."""
    seq = np.random.SeedSequence([int(run_seed) & (2**64 - 1), *(int(k) for k in keys)])
    return int(seq.generate_state(1, np.uint64)[0])


def frame_seed(run_seed: int, frame_index: int) -> int:
    return derive_seed(run_seed, frame_index)


def frame_mask(
    config: StoryConfig, frame_index: int, region: Optional[ObjectRegion] = None
) -> Tuple[Mask, Dict[str, Any]]:
    """Mask used to derive frame ``frame_index`` from its predecessor, plus a
    JSON descriptor of how it was built."""
    if config.mode.has_object != (region is not None):
        raise InvalidSpec("an object region is required exactly in object modes")
    w, h = config.size
    p = config.mask_params
    seed = frame_seed(config.run_seed, frame_index)
    background = dotted_mask(w, h, p.dot_spacing_x, p.edge_width_y, p.dot_polarity)
    descriptor: Dict[str, Any] = {
        "recipe": "dotted",
        "dot_spacing_x": p.dot_spacing_x,
        "edge_width_y": p.edge_width_y,
        "polarity": p.dot_polarity.value,
        "seed": seed,
    }
    if region is None:
        mask = background
    else:
        outside = Mask(background.editable & ~region.pixel_mask)
        mutation = object_mutation_mask(region, p, config.protected, seed)
        mask = (outside | mutation) & edge_mask(w, h, p.edge_width_y)
        descriptor.update(
            recipe="object",
            object_dot_spacing=p.object_dot_spacing,
            mutation_fraction=p.mutation_fraction,
            protected=[asdict(r) for r in config.protected],
        )
    if mask.count == 0:
        raise NothingEditable(f"frame {frame_index}: mask parameters leave nothing editable")
    descriptor["editable_pixels"] = mask.count
    return mask, descriptor


# -- initialization ----------------------------------------------------------------

@dataclass
class ObjectInit:
    prompt: str
    raw: RasterImage
    resized: RasterImage
    canvas: RasterImage
    region: ObjectRegion
    provider_ids: List[str]


def init_object(config: StoryConfig, translator: Translator, backend: ImageBackend) -> ObjectInit:
    """White-background object: create from the title, shrink and place it,
    fill the gap against fixed white borders, then extract the non-white part."""
    if not config.mode.has_object:
        raise InvalidSpec(f"mode {config.mode.value} has no dominant object")
    prompt = build_prompt(translator.translate(config.title), None, WHITE_BACKGROUND_REQUEST)
    created = backend.create(prompt, config.size, seed=derive_seed(config.run_seed, 0, _STAGE_OBJECT))
    provider_ids = [created.provider_id]
    raw = created.image
    first = extract_object(raw, config.white_threshold)

    anchor = config.object_anchor or placement_anchor(first, config.object_scale, config.size)
    resized = resize_reposition(raw, config.object_scale, anchor)

    w, h = config.size
    gap = edge_mask(w, h, config.mask_params.edge_width_y).editable & white_mask(resized, config.white_threshold)
    canvas = resized
    if gap.any():
        filled = backend.edit(
            resized, Mask(gap), prompt, config.size, seed=derive_seed(config.run_seed, 0, _STAGE_GAP_FILL)
        )
        canvas = filled.image
        provider_ids.append(filled.provider_id)
    region = extract_object(canvas, config.white_threshold)
    return ObjectInit(prompt, raw, resized, canvas, region, provider_ids)


def init_background(
    config: StoryConfig, first_prompt: Optional[str], backend: ImageBackend
) -> Tuple[RasterImage, Optional[str]]:
    """Setting image when one is defined, else a fresh image of the first chunk.
    Returns the image and the provider id (None for the setting image)."""
    if config.mode.has_setting:
        return config.setting_image, None
    if not first_prompt:
        raise EmptyTranslation("no prompt available for the opening background")
    res = backend.create(first_prompt, config.size, seed=derive_seed(config.run_seed, 0, _STAGE_BACKGROUND))
    return res.image, res.provider_id


# -- run -----------------------------------------------------------------------------

@dataclass
class StoryRun:
    run_id: str
    status: str
    records: List[FrameRecord]
    images: List[RasterImage]
    region: Optional[ObjectRegion] = None
    intermediates: Dict[str, RasterImage] = field(default_factory=dict)
    failed_at: Optional[int] = None
    error: Optional[str] = None
    manifest: Dict[str, Any] = field(default_factory=dict)


def run_id_for(config: StoryConfig, chunks: Sequence[Chunk]) -> str:
    payload = json.dumps(
        {"config": config.echo(), "chunks": [c.text for c in chunks]},
        ensure_ascii=False,
        sort_keys=True,
    )
    if config.setting_image is not None:
        payload += hashlib.sha256(config.setting_image.pixels.tobytes()).hexdigest()
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def mask_to_rle(mask: np.ndarray) -> List[int]:
    """Run lengths of the row-major flattened mask, starting with a False run."""
    flat = np.asarray(mask, bool).ravel()
    edges = np.flatnonzero(np.diff(flat.astype(np.int8))) + 1
    bounds = np.concatenate([[0], edges, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat.size and flat[0]:
        runs.insert(0, 0)
    return runs


def mask_from_rle(runs: Sequence[int], shape: Tuple[int, int]) -> np.ndarray:
    values = np.arange(len(runs)) % 2 == 1
    return np.repeat(values, runs).reshape(shape)


def _timestamp(deterministic: bool) -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is not None:
        when = _dt.datetime.fromtimestamp(int(epoch), _dt.timezone.utc)
    elif deterministic:
        # mock runs must be byte-reproducible, wall clock included
        when = _dt.datetime.fromtimestamp(0, _dt.timezone.utc)
    else:
        when = _dt.datetime.now(_dt.timezone.utc).replace(microsecond=0)
    return when.isoformat().replace("+00:00", "Z")


def frame_filename(index: int) -> str:
    return f"frame_{index:04d}.png"


class _RunStore:
    """Writes frames and the manifest as the run progresses."""

    def __init__(self, out_dir: Optional[Path], keep_intermediate: bool):
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.keep_intermediate = keep_intermediate
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)

    def frame(self, index: int, image: RasterImage) -> Optional[str]:
        name = frame_filename(index)
        if self.out_dir is not None:
            image.save(self.out_dir / name)
        return name

    def intermediate(self, name: str, image: RasterImage) -> None:
        if self.out_dir is not None and self.keep_intermediate:
            folder = self.out_dir / INTERMEDIATE_DIR
            folder.mkdir(exist_ok=True)
            image.save(folder / f"{name}.png")

    def manifest(self, manifest: Dict[str, Any]) -> None:
        if self.out_dir is None:
            return
        tmp = self.out_dir / (MANIFEST_NAME + ".tmp")
        tmp.write_text(json.dumps(manifest, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
        tmp.replace(self.out_dir / MANIFEST_NAME)


def _load_resume(out_dir: Path, run_id: str, shape: Tuple[int, int]):
    path = out_dir / MANIFEST_NAME
    if not path.exists():
        return None
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError):
        return None
    if manifest.get("run_id") != run_id or manifest.get("status") != "failed":
        return None
    records, images = [], []
    for entry in manifest.get("frames", []):
        frame_path = out_dir / (entry.get("file") or "")
        if entry.get("index") != len(records) or not frame_path.is_file():
            break
        records.append(FrameRecord(**entry))
        images.append(RasterImage.load(frame_path))
    if not records:
        return None
    region = None
    if manifest.get("object_region"):
        region = ObjectRegion.from_mask(mask_from_rle(manifest["object_region"]["rle"], shape))
    return manifest, records, images, region


def run_story(
    config: StoryConfig,
    chunks: Sequence[Chunk],
    translator: Translator,
    backend: ImageBackend,
    detector: Optional[TextDetector] = None,
    out_dir: Optional[str | Path] = None,
    keep_intermediate: bool = False,
    resume: bool = False,
    prefetch: bool = True,
) -> StoryRun:
    """Produce one frame per chunk.

    Frame 0 is the opening image (object composited over the background in
    object modes).  Every later frame is an edit of its predecessor through
    :func:`frame_mask`, followed by text removal and saturation matching
    against frame 0.  With ``out_dir`` set, frames and ``manifest.json`` are
    written as they are produced; on failure the manifest records the failing
    index, the exception propagates, and ``resume=True`` continues from the
    last good frame on a later call.
    """
    if not chunks:
        raise InvalidSpec("a story needs at least one chunk")
    detector = detector or NullDetector()
    store = _RunStore(out_dir, keep_intermediate)
    run_id = run_id_for(config, chunks)
    deterministic = bool(getattr(backend, "deterministic", False) and translator.deterministic)
    w, h = config.size

    run = StoryRun(run_id=run_id, status="running", records=[], images=[])
    manifest: Dict[str, Any] = {
        "run_id": run_id,
        "created_at": _timestamp(deterministic),
        "status": "running",
        "failed_at": None,
        "error": None,
        "seed": config.run_seed,
        "config": config.echo(),
        "chunk_count": len(chunks),
        "object_region": None,
        "frames": [],
    }
    run.manifest = manifest

    start = 0
    if resume and store.out_dir is not None:
        loaded = _load_resume(store.out_dir, run_id, (h, w))
        if loaded is not None:
            old, run.records, run.images, run.region = loaded
            manifest["created_at"] = old.get("created_at", manifest["created_at"])
            manifest["object_region"] = old.get("object_region")
            start = len(run.records)
            log.info("resuming run %s at frame %d", run_id, start)

    def publish(status: str) -> None:
        manifest["status"] = status
        manifest["frames"] = [asdict(r) for r in run.records]
        store.manifest(manifest)

    executor = ThreadPoolExecutor(max_workers=4) if prefetch else None
    futures: Dict[int, Future] = {}
    if executor is not None:
        for c in chunks[start:]:
            futures[c.index] = executor.submit(translator.translate, c.text)

    def translated(i: int) -> Optional[str]:
        try:
            if i in futures:
                return futures[i].result()
            return translator.translate(chunks[i].text)
        except EmptyTranslation:
            return None

    def postprocess(image: RasterImage, reference: Optional[RasterImage]) -> Tuple[RasterImage, Dict[str, Any]]:
        boxes = detector.detect(image)
        image = inpaint(image, boxes)
        info: Dict[str, Any] = {"text_boxes": [[b.top, b.left, b.bottom, b.right] for b in boxes]}
        if reference is not None:
            mu_frame = mean_saturation(image)
            scale = mean_saturation(reference) / mu_frame if mu_frame > 0 else 1.0
            image = match_saturation(image, reference)
            info["saturation_scale"] = scale
        return image, info

    index = start
    try:
        if start == 0:
            text0 = translated(0)
            warnings: List[str] = []
            init = None
            if config.mode.has_object:
                init = init_object(config, translator, backend)
                run.region = init.region
                run.intermediates.update(object_raw=init.raw, object_resized=init.resized, object_canvas=init.canvas)
                manifest["object_region"] = {
                    "bbox": list(init.region.bbox),
                    "shape": [h, w],
                    "rle": mask_to_rle(init.region.pixel_mask),
                }
            if text0 is None:
                warnings.append("empty translation for chunk 0")
                fallback = translator.translate(config.title) if config.title.strip() else None
                prompt0 = build_prompt(fallback, config.context_suffix) if fallback else None
            else:
                prompt0 = build_prompt(text0, config.context_suffix)
            background, provider = init_background(config, prompt0, backend)
            run.intermediates["background"] = background
            sent = None if config.mode.has_setting else prompt0
            if init is not None:
                frame0 = composite_over(init.canvas, init.region, background)
                provider = "+".join(init.provider_ids + ([provider] if provider else []))
                sent = "; ".join(p for p in (init.prompt, sent) if p)
            else:
                frame0 = background
            for name, image in run.intermediates.items():
                store.intermediate(name, image)
            frame0, info = postprocess(frame0, None)
            record = FrameRecord(
                index=0,
                text=chunks[0].text,
                translated=text0,
                prompt=sent,
                mask=None,
                file=store.frame(0, frame0),
                provider_id=provider,
                postprocess=info,
                warnings=warnings,
            )
            run.images.append(frame0)
            run.records.append(record)
            publish("running")
            index = 1

        frame0 = run.images[0]
        for index in range(max(start, 1), len(chunks)):
            text = translated(index)
            previous = run.images[-1]
            if text is None:
                # nothing to draw: hold the previous frame
                record = FrameRecord(
                    index, chunks[index].text, None, None, None,
                    store.frame(index, previous), None,
                    {"skipped": True}, [f"empty translation for chunk {index}; frame skipped"],
                )
                run.images.append(previous)
                run.records.append(record)
                publish("running")
                continue
            prompt = build_prompt(text, config.context_suffix)
            mask, descriptor = frame_mask(config, index, run.region)
            result: BackendResult = backend.edit(previous, mask, prompt, config.size, seed=descriptor["seed"])
            image, info = postprocess(result.image, frame0)
            record = FrameRecord(
                index, chunks[index].text, text, prompt, descriptor,
                store.frame(index, image), result.provider_id, info,
            )
            run.images.append(image)
            run.records.append(record)
            publish("running")
    except StoryError as exc:
        run.status = "failed"
        run.failed_at = index
        run.error = f"{type(exc).__name__}: {exc}"
        manifest["failed_at"] = index
        manifest["error"] = run.error
        publish("failed")
        exc.story_run = run
        raise
    finally:
        if executor is not None:
            executor.shutdown(wait=True, cancel_futures=True)

    run.status = "complete"
    publish("complete")
    return run
