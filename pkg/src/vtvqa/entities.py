"""Domain types for video OCR/object annotations and entity sequence construction.

Annotation files are JSON arrays of samples; each sample lists the scene
text and detected objects of every frame together with the question and
its ground-truth answers. Boxes are normalized to [0, 1]; files that carry
a ``frame_size`` entry store pixel boxes which get normalized at load
time. Sequences are built frame-major: the M scene-text slots of frame 0,
then its N object slots, then frame 1, and so on.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import AnnotationError, ValidationError

logger = logging.getLogger(__name__)

PAD_TEXT = "[pad]"
UNK_TEXT = "[unk]"

# Word boxes may stick out of their line/paragraph by this much per
# coordinate before ingestion logs a containment warning.
CONTAINMENT_TOL = 0.02


class EntityKind(str, Enum):
    SCENE_TEXT = "text"
    OBJECT = "object"


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned rectangle with normalized corner coordinates."""

    x_tl: float
    y_tl: float
    x_br: float
    y_br: float

    def __post_init__(self) -> None:
        ok = (
            0.0 <= self.x_tl <= self.x_br <= 1.0
            and 0.0 <= self.y_tl <= self.y_br <= 1.0
        )
        if not ok:
            raise ValidationError(
                f"box ({self.x_tl}, {self.y_tl}, {self.x_br}, {self.y_br}) "
                "violates 0 <= tl <= br <= 1"
            )

    def union(self, other: "BoundingBox") -> "BoundingBox":
        return BoundingBox(
            min(self.x_tl, other.x_tl),
            min(self.y_tl, other.y_tl),
            max(self.x_br, other.x_br),
            max(self.y_br, other.y_br),
        )

    def contains(self, other: "BoundingBox", tol: float = 0.0) -> bool:
        return (
            self.x_tl - tol <= other.x_tl
            and self.y_tl - tol <= other.y_tl
            and self.x_br + tol >= other.x_br
            and self.y_br + tol >= other.y_br
        )

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_tl, self.y_tl, self.x_br, self.y_br)


PAD_BOX = BoundingBox(0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class VisualEntity:
    """One scene-text word or one detected object in one frame.

    Scene text carries word/line/paragraph boxes; objects only their
    detection box. ``instance_id`` ties occurrences of the same physical
    instance across frames; it is generator/diagnostic metadata and never
    consumed by the model.
    """

    kind: EntityKind
    text: str
    frame_index: int
    word_box: BoundingBox
    line_box: Optional[BoundingBox] = None
    para_box: Optional[BoundingBox] = None
    line_id: Optional[int] = None
    para_id: Optional[int] = None
    instance_id: Optional[int] = None

    @property
    def is_scene_text(self) -> bool:
        return self.kind is EntityKind.SCENE_TEXT


@dataclass
class VideoSample:
    """T frames of entities plus the question and its answers."""

    video_id: str
    num_frames: int
    entities: list[VisualEntity]
    question: str
    answers: list[str]
    frame_features: Optional[np.ndarray] = None

    def validate(self) -> None:
        if self.num_frames < 1:
            raise ValidationError(f"{self.video_id}: num_frames must be >= 1")
        if not self.answers:
            raise ValidationError(f"{self.video_id}: answers must be non-empty")
        for i, ent in enumerate(self.entities):
            if not 0 <= ent.frame_index < self.num_frames:
                raise ValidationError(
                    f"{self.video_id}: entity {i} frame_index {ent.frame_index} "
                    f"outside [0, {self.num_frames})"
                )
        if self.frame_features is not None and len(self.frame_features) != self.num_frames:
            raise ValidationError(
                f"{self.video_id}: frame_features has {len(self.frame_features)} rows, "
                f"expected {self.num_frames}"
            )


def _pad_entity(frame_index: int) -> VisualEntity:
    return VisualEntity(
        kind=EntityKind.SCENE_TEXT,
        text=PAD_TEXT,
        frame_index=frame_index,
        word_box=PAD_BOX,
        line_box=PAD_BOX,
        para_box=PAD_BOX,
    )


@dataclass
class EntitySequence:
    """Flattened, padded, frame-major token sequence of length T*(M+N).

    Per frame the first M slots hold scene text in reading order and the
    next N slots hold objects; missing entities are padded, surplus ones
    truncated (counts recorded in the diagnostics).
    """

    slots: list[VisualEntity]
    T: int
    M: int
    N: int
    is_scene_text: np.ndarray  # (L,) bool; False for padding
    is_padding: np.ndarray  # (L,) bool
    frame_index: np.ndarray  # (L,) int
    truncated_text: int = 0
    truncated_objects: int = 0
    embeddings: Optional[object] = None  # (L, d), populated by the encoder

    def __len__(self) -> int:
        return len(self.slots)

    @property
    def slots_per_frame(self) -> int:
        return self.M + self.N

    def _top_left(self, attr: str) -> np.ndarray:
        out = np.zeros((len(self.slots), 2), dtype=np.float64)
        for i, ent in enumerate(self.slots):
            box = getattr(ent, attr) or ent.word_box
            out[i, 0] = box.x_tl
            out[i, 1] = box.y_tl
        return out

    def word_top_left(self) -> np.ndarray:
        return self._top_left("word_box")

    def line_top_left(self) -> np.ndarray:
        return self._top_left("line_box")

    def para_top_left(self) -> np.ndarray:
        return self._top_left("para_box")

    def texts(self) -> list[str]:
        return [ent.text for ent in self.slots]


def _reading_order(entities: Iterable[VisualEntity]) -> list[VisualEntity]:
    # (y_tl, x_tl) lexicographic; stable, so equal keys keep input order.
    return sorted(entities, key=lambda e: (e.word_box.y_tl, e.word_box.x_tl))


def build_entity_sequence(sample: VideoSample, M: int, N: int) -> EntitySequence:
    """Arrange a sample's entities into the frame-major padded slot grid."""
    if M < 1 or N < 0:
        raise ValidationError(f"need M >= 1 and N >= 0, got M={M}, N={N}")
    slots: list[VisualEntity] = []
    is_text: list[bool] = []
    is_pad: list[bool] = []
    frames: list[int] = []
    trunc_text = 0
    trunc_obj = 0
    by_frame: dict[int, list[VisualEntity]] = {}
    for ent in sample.entities:
        by_frame.setdefault(ent.frame_index, []).append(ent)
    for t in range(sample.num_frames):
        frame_entities = by_frame.get(t, [])
        texts = _reading_order(e for e in frame_entities if e.is_scene_text)
        objects = _reading_order(e for e in frame_entities if not e.is_scene_text)
        trunc_text += max(0, len(texts) - M)
        trunc_obj += max(0, len(objects) - N)
        for group, width in ((texts, M), (objects, N)):
            kept = group[:width]
            for ent in kept:
                slots.append(ent)
                is_text.append(ent.is_scene_text)
                is_pad.append(False)
                frames.append(t)
            for _ in range(width - len(kept)):
                slots.append(_pad_entity(t))
                is_text.append(False)
                is_pad.append(True)
                frames.append(t)
    seq = EntitySequence(
        slots=slots,
        T=sample.num_frames,
        M=M,
        N=N,
        is_scene_text=np.asarray(is_text, dtype=bool),
        is_padding=np.asarray(is_pad, dtype=bool),
        frame_index=np.asarray(frames, dtype=np.int64),
        truncated_text=trunc_text,
        truncated_objects=trunc_obj,
    )
    assert len(seq) == sample.num_frames * (M + N)
    return seq


def derive_granularity_boxes(entities: Sequence[VisualEntity]) -> list[VisualEntity]:
    """Fill line/paragraph boxes of scene-text words from their group ids.

    Line boxes are the coordinate-wise union of member word boxes and
    paragraph boxes the union of member line boxes. Objects and entities
    that already carry explicit boxes pass through unchanged.
    """
    line_groups: dict[int, list[VisualEntity]] = {}
    for ent in entities:
        if ent.is_scene_text and ent.line_id is not None:
            line_groups.setdefault(ent.line_id, []).append(ent)
    line_boxes: dict[int, BoundingBox] = {}
    for line_id, members in line_groups.items():
        if len({m.frame_index for m in members}) > 1:
            raise ValidationError(f"line group {line_id} spans multiple frames")
        box = members[0].word_box
        for m in members[1:]:
            box = box.union(m.word_box)
        line_boxes[line_id] = box

    para_groups: dict[int, list[VisualEntity]] = {}
    for ent in entities:
        if ent.is_scene_text and ent.para_id is not None:
            para_groups.setdefault(ent.para_id, []).append(ent)
    para_boxes: dict[int, BoundingBox] = {}
    for para_id, members in para_groups.items():
        if len({m.frame_index for m in members}) > 1:
            raise ValidationError(f"paragraph group {para_id} spans multiple frames")
        boxes = [
            line_boxes.get(m.line_id, m.word_box) if m.line_id is not None else m.word_box
            for m in members
        ]
        box = boxes[0]
        for b in boxes[1:]:
            box = box.union(b)
        para_boxes[para_id] = box

    out: list[VisualEntity] = []
    for ent in entities:
        if not ent.is_scene_text:
            out.append(ent)
            continue
        line_box = ent.line_box
        para_box = ent.para_box
        if line_box is None and ent.line_id is not None:
            line_box = line_boxes[ent.line_id]
        if para_box is None and ent.para_id is not None:
            para_box = para_boxes[ent.para_id]
        out.append(replace(ent, line_box=line_box, para_box=para_box))
    return out


def _normalize_box(
    raw: Sequence[float],
    frame_size: Optional[Sequence[float]],
    context: str,
) -> BoundingBox:
    if len(raw) != 4:
        raise ValidationError(f"{context}: box must have 4 coordinates, got {len(raw)}")
    x_tl, y_tl, x_br, y_br = (float(v) for v in raw)
    if frame_size is not None:
        w, h = float(frame_size[0]), float(frame_size[1])
        if w <= 0 or h <= 0:
            raise ValidationError(f"{context}: frame_size must be positive")
        x_tl, x_br = x_tl / w, x_br / w
        y_tl, y_br = y_tl / h, y_br / h
    try:
        return BoundingBox(x_tl, y_tl, x_br, y_br)
    except ValidationError as exc:
        raise ValidationError(f"{context}: {exc}") from exc


def _parse_entity(
    raw: dict, frame_size: Optional[Sequence[float]], context: str
) -> VisualEntity:
    kind_raw = raw.get("kind", "text")
    try:
        kind = EntityKind(kind_raw)
    except ValueError:
        raise ValidationError(f"{context}: unknown entity kind {kind_raw!r}")
    word_box = _normalize_box(raw["box"], frame_size, context)
    line_box = para_box = None
    if raw.get("line_box") is not None:
        line_box = _normalize_box(raw["line_box"], frame_size, f"{context} line_box")
    if raw.get("para_box") is not None:
        para_box = _normalize_box(raw["para_box"], frame_size, f"{context} para_box")
    return VisualEntity(
        kind=kind,
        text=str(raw["text"]),
        frame_index=int(raw["frame"]),
        word_box=word_box,
        line_box=line_box,
        para_box=para_box,
        line_id=raw.get("line_id"),
        para_id=raw.get("para_id"),
        instance_id=raw.get("instance_id"),
    )


def _check_containment(ent: VisualEntity, context: str) -> None:
    if not ent.is_scene_text:
        return
    if ent.line_box is not None and not ent.line_box.contains(ent.word_box, CONTAINMENT_TOL):
        logger.warning("%s: word box not contained in line box", context)
    if (
        ent.line_box is not None
        and ent.para_box is not None
        and not ent.para_box.contains(ent.line_box, CONTAINMENT_TOL)
    ):
        logger.warning("%s: line box not contained in paragraph box", context)


def _complete_scene_text_boxes(entities: list[VisualEntity]) -> list[VisualEntity]:
    needs_derive = any(
        e.is_scene_text
        and (e.line_box is None or e.para_box is None)
        and (e.line_id is not None or e.para_id is not None)
        for e in entities
    )
    if needs_derive:
        entities = derive_granularity_boxes(entities)
    out = []
    for ent in entities:
        if ent.is_scene_text and (ent.line_box is None or ent.para_box is None):
            # No grouping information: treat the word as its own line and
            # paragraph so multi-granularity invariants hold.
            ent = replace(
                ent,
                line_box=ent.line_box or ent.word_box,
                para_box=ent.para_box or ent.line_box or ent.word_box,
            )
        out.append(ent)
    return out


def parse_sample(raw: dict) -> VideoSample:
    """Build one validated VideoSample from its JSON dict."""
    video_id = str(raw.get("video_id", "<missing id>"))
    frame_size = raw.get("frame_size")
    entities: list[VisualEntity] = []
    for i, ent_raw in enumerate(raw.get("entities", [])):
        context = f"{video_id} entity {i}"
        ent = _parse_entity(ent_raw, frame_size, context)
        entities.append(ent)
    entities = _complete_scene_text_boxes(entities)
    for i, ent in enumerate(entities):
        _check_containment(ent, f"{video_id} entity {i}")
    features = None
    if raw.get("frame_features") is not None:
        features = np.asarray(raw["frame_features"], dtype=np.float64)
    sample = VideoSample(
        video_id=video_id,
        num_frames=int(raw["num_frames"]),
        entities=entities,
        question=str(raw.get("question", "")),
        answers=[str(a) for a in raw.get("answers", [])],
        frame_features=features,
    )
    sample.validate()
    return sample


def load_annotations(path: str | Path) -> list[VideoSample]:
    """Load and validate an annotation file (JSON array of samples)."""
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise AnnotationError(
            f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(data, list):
        raise AnnotationError(f"{path}: expected a top-level JSON array of samples")
    return [parse_sample(raw) for raw in data]
