"""Command-line entry point.

    storyframes run --file song.txt --lang he --mode free-object --title "..." \\
        --backend mock --translator mock:table.json --seed 7 --out frames/
    storyframes mask-preview --recipe dotted --dot-spacing 4 --edge-width 16 --out mask.png

Options may also come from a JSON config file (``--config``) using the same
names as the flags with underscores; flags win over the file.  Credentials
are read from OPENAI_API_KEY and TRANSLATE_API_KEY only.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from .backend import DEFAULT_IMAGE_ENDPOINT, DEFAULT_MODEL, MockBackend, RemoteBackend
from .errors import (
    BackendError,
    IngestError,
    InvalidSpec,
    NoObject,
    StoryError,
    TranslationError,
)
from .image_ops import RasterImage
from .masks import (
    MaskParams,
    Polarity,
    ProtectedRegion,
    center_shape_mask,
    dotted_mask,
    edge_mask,
    random_ellipse_mask,
)
from .story import FixtureDetector, Mode, NullDetector, RemoteOcrDetector, StoryConfig, run_story
from .text_ingest import ChunkingSpec, ChunkMethod, Origin, chunk_text, clean, ingest
from .translator import DEFAULT_TRANSLATE_ENDPOINT, MockTranslator, RemoteTranslator, Translator

log = logging.getLogger("storyframes")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE, EXIT_INGEST, EXIT_TRANSLATE, EXIT_BACKEND, EXIT_IO = 0, 1, 2, 3, 4, 5, 6


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _report(code: int, kind: str, message: str) -> int:
    print(json.dumps({"error": kind, "message": message, "exit_code": code}, ensure_ascii=False), file=sys.stderr)
    return code


# -- option parsing ------------------------------------------------------------------

def parse_size(value) -> Tuple[int, int]:
    if isinstance(value, (list, tuple)):
        w, h = (int(v) for v in value)
    else:
        text = str(value).lower()
        w, _, h = text.partition("x")
        w, h = int(w), int(h or w)
    if w < 1 or h < 1:
        raise ValueError(f"bad size {value!r}")
    return w, h


def parse_pair(value) -> Tuple[int, int]:
    if isinstance(value, (list, tuple)):
        a, b = value
    else:
        a, b = str(value).split(",")
    return int(a), int(b)


@dataclasses.dataclass
class RunOptions:
    text: Optional[str] = None
    file: Optional[str] = None
    url: Optional[str] = None
    lang: str = "auto"
    target_lang: str = "en"
    mode: str = Mode.PLAIN.value
    title: str = ""
    context: Optional[str] = None
    setting_image: Optional[str] = None
    chunking: str = ChunkMethod.BY_LINE.value
    window: int = 2
    stride: int = 1
    dot_spacing: int = 4
    edge_width: int = 16
    object_dot_spacing: int = 12  # 0 disables in-object dots
    mutation_fraction: float = 0.3
    polarity: str = Polarity.DOTS_EDITABLE.value
    protect: List[Any] = dataclasses.field(default_factory=list)
    white_threshold: int = 245
    object_scale: float = 0.6
    anchor: Optional[Any] = None
    size: Any = "256x256"
    seed: int = 0
    backend: str = "mock"
    image_endpoint: str = DEFAULT_IMAGE_ENDPOINT
    model: str = DEFAULT_MODEL
    max_in_flight: int = 2
    translator: str = "mock"
    translate_endpoint: str = DEFAULT_TRANSLATE_ENDPOINT
    detector: str = "null"
    out: Optional[str] = None
    keep_intermediate: bool = False
    resume: bool = False

    def input_selector(self) -> Tuple[Origin, str]:
        given = [(o, v) for o, v in ((Origin.INLINE, self.text), (Origin.FILE, self.file), (Origin.URL, self.url)) if v]
        if len(given) != 1:
            raise UsageError("exactly one of --text, --file, --url is required")
        return given[0]

    def story_config(self) -> StoryConfig:
        w, h = parse_size(self.size)
        setting = None
        if self.setting_image:
            try:
                setting = RasterImage.load(self.setting_image)
            except OSError as exc:
                raise UsageError(f"cannot read setting image: {exc}") from exc
        protected = []
        for item in self.protect:
            protected.append(ProtectedRegion(*item) if isinstance(item, (list, tuple)) else ProtectedRegion.parse(item))
        params = MaskParams(
            dot_spacing_x=self.dot_spacing,
            edge_width_y=self.edge_width,
            object_dot_spacing=self.object_dot_spacing or None,
            mutation_fraction=self.mutation_fraction,
            dot_polarity=Polarity(self.polarity),
            seed=self.seed,
        )
        return StoryConfig(
            mode=Mode(self.mode),
            title=self.title,
            context_suffix=self.context,
            setting_image=setting,
            setting_image_path=self.setting_image,
            chunking=ChunkingSpec(ChunkMethod(self.chunking), self.window, self.stride),
            mask_params=params,
            protected=tuple(protected),
            white_threshold=self.white_threshold,
            object_scale=self.object_scale,
            object_anchor=parse_pair(self.anchor) if self.anchor is not None else None,
            run_seed=self.seed,
            size=(w, h),
        )


def _run_parser(sub) -> argparse.ArgumentParser:
    p = sub.add_parser("run", help="turn a story into frames")
    p.add_argument("--config", help="JSON file with option defaults")
    src = p.add_argument_group("input (exactly one)")
    src.add_argument("--text")
    src.add_argument("--file")
    src.add_argument("--url")
    p.add_argument("--lang", help="ISO-639 code of the source text, or 'auto'")
    p.add_argument("--target-lang")
    p.add_argument("--mode", choices=[m.value for m in Mode])
    p.add_argument("--title", help="story title; drives object creation in object modes")
    p.add_argument("--context", help="style suffix appended to every prompt")
    p.add_argument("--setting-image", help="background photo for the defined-setting modes")
    p.add_argument("--chunking", choices=[m.value for m in ChunkMethod])
    p.add_argument("--window", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--dot-spacing", type=int)
    p.add_argument("--edge-width", type=int)
    p.add_argument("--object-dot-spacing", type=int, help="0 disables in-object dots")
    p.add_argument("--mutation-fraction", type=float)
    p.add_argument("--polarity", choices=[m.value for m in Polarity])
    p.add_argument("--protect", action="append", metavar="TOP,LEFT,BOTTOM,RIGHT",
                   help="object-relative fractions never mutated; repeatable")
    p.add_argument("--white-threshold", type=int)
    p.add_argument("--object-scale", type=float)
    p.add_argument("--anchor", metavar="ROW,COL")
    p.add_argument("--size", metavar="WxH")
    p.add_argument("--seed", type=int)
    p.add_argument("--backend", choices=["mock", "remote"])
    p.add_argument("--image-endpoint")
    p.add_argument("--model")
    p.add_argument("--max-in-flight", type=int)
    p.add_argument("--translator", help="'mock', 'mock:TABLE.json' or 'remote'")
    p.add_argument("--translate-endpoint")
    p.add_argument("--detector", help="'null', 'fixture:BOXES.json' or 'remote:URL'")
    p.add_argument("--out", help="output directory")
    p.add_argument("--keep-intermediate", action="store_true", default=None)
    p.add_argument("--resume", action="store_true", default=None)
    return p


def _preview_parser(sub) -> argparse.ArgumentParser:
    p = sub.add_parser("mask-preview", help="render a mask recipe as a PNG (255 = editable)")
    p.add_argument("--recipe", required=True,
                   choices=["edge", "dotted", "center-rect", "center-ellipse", "random-ellipse"])
    p.add_argument("--size", default="256x256", metavar="WxH")
    p.add_argument("--dot-spacing", type=int, default=4)
    p.add_argument("--edge-width", type=int, default=16)
    p.add_argument("--polarity", choices=[m.value for m in Polarity], default=Polarity.DOTS_EDITABLE.value)
    p.add_argument("--extent", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="storyframes", description="Multi-lingual text to coherent image sequences.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _run_parser(sub)
    _preview_parser(sub)
    return parser


def resolve_run_options(ns: argparse.Namespace) -> RunOptions:
    known = {f.name for f in dataclasses.fields(RunOptions)}
    merged: Dict[str, Any] = {}
    if ns.config:
        try:
            with open(ns.config, encoding="utf-8") as fh:
                from_file = json.load(fh)
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config {ns.config}: {exc}") from exc
        if not isinstance(from_file, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = set(from_file) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        merged.update(from_file)
    for name, value in vars(ns).items():
        if name in known and value is not None:
            merged[name] = value
    return RunOptions(**merged)


# -- wiring ------------------------------------------------------------------------

def make_translator(opts: RunOptions) -> Translator:
    kind, _, arg = opts.translator.partition(":")
    if kind == "mock":
        client = MockTranslator.from_json(arg) if arg else MockTranslator(passthrough=True)
    elif kind == "remote":
        client = RemoteTranslator(endpoint=arg or opts.translate_endpoint)
    else:
        raise UsageError(f"unknown translator {opts.translator!r}")
    try:
        return Translator(client, source_lang=opts.lang, target_lang=opts.target_lang)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def make_backend(opts: RunOptions):
    if opts.backend == "mock":
        return MockBackend(seed=opts.seed)
    if opts.backend == "remote":
        return RemoteBackend(endpoint=opts.image_endpoint, model=opts.model, max_in_flight=opts.max_in_flight)
    raise UsageError(f"unknown backend {opts.backend!r}")


def make_detector(opts: RunOptions):
    kind, _, arg = opts.detector.partition(":")
    if kind == "null":
        return NullDetector()
    if kind == "fixture" and arg:
        return FixtureDetector.from_json(arg)
    if kind == "remote" and arg:
        return RemoteOcrDetector(arg)
    raise UsageError(f"unknown detector {opts.detector!r}")


def cmd_run(opts: RunOptions) -> int:
    origin, value = opts.input_selector()
    if not opts.out:
        raise UsageError("--out is required")
    try:
        config = opts.story_config()
        translator = make_translator(opts)
        backend = make_backend(opts)
        detector = make_detector(opts)
    except (InvalidSpec, ValueError) as exc:
        raise UsageError(str(exc)) from exc

    source = ingest(origin, value, language_hint=None if opts.lang == "auto" else opts.lang)
    chunks = chunk_text(clean(source.raw), config.chunking)
    log.info("%d chunks from %s source", len(chunks), origin.value)
    run = run_story(
        config, chunks, translator, backend, detector,
        out_dir=opts.out, keep_intermediate=opts.keep_intermediate, resume=opts.resume,
    )
    print(json.dumps({"status": run.status, "frames": len(run.records), "out": str(Path(opts.out))}))
    return EXIT_OK


def cmd_mask_preview(ns: argparse.Namespace) -> int:
    try:
        w, h = parse_size(ns.size)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    recipe = ns.recipe
    if recipe == "edge":
        mask = edge_mask(w, h, ns.edge_width)
    elif recipe == "dotted":
        mask = dotted_mask(w, h, ns.dot_spacing, ns.edge_width, ns.polarity)
    elif recipe in ("center-rect", "center-ellipse"):
        mask = center_shape_mask(w, h, recipe.split("-")[1], ns.extent)
    else:
        mask = random_ellipse_mask(w, h, ns.seed)
    mask.save_png(ns.out)
    print(json.dumps({"recipe": recipe, "editable_pixels": mask.count, "out": ns.out}))
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if ns.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
        )
        if ns.command == "mask-preview":
            return cmd_mask_preview(ns)
        return cmd_run(resolve_run_options(ns))
    except UsageError as exc:
        return _report(EXIT_USAGE, "usage", str(exc))
    except InvalidSpec as exc:
        return _report(EXIT_USAGE, type(exc).__name__, str(exc))
    except IngestError as exc:
        return _report(EXIT_INGEST, type(exc).__name__, str(exc))
    except TranslationError as exc:
        return _report(EXIT_TRANSLATE, type(exc).__name__, str(exc))
    except (BackendError, NoObject) as exc:
        return _report(EXIT_BACKEND, type(exc).__name__, str(exc))
    except OSError as exc:
        return _report(EXIT_IO, type(exc).__name__, str(exc))
    except StoryError as exc:
        return _report(EXIT_FAILURE, type(exc).__name__, str(exc))


if __name__ == "__main__":
    sys.exit(main())
