"""Human keypoint annotations and their canonical JSON form.

Document layout::

    {"sequence": str, "annotator": str,
     "tracks": [{"id": int,
                 "points": [{"frame": int, "u": float, "v": float, "respawn": bool}]}]}

Unknown keys at any level are kept and written back. Serialization is
canonical (sorted keys, floats rounded to 9 significant digits) so a
write/read/write cycle is byte-identical.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import jsonschema

from .errors import BoundsError, MissingInputError, SchemaError

FLOAT_DIGITS = 9

SCHEMA = {
    "type": "object",
    "required": ["tracks"],
    "properties": {
        "sequence": {"type": "string"},
        "annotator": {"type": "string"},
        "tracks": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "points"],
                "properties": {
                    "id": {"type": "integer"},
                    "points": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["frame", "u", "v"],
                            "properties": {
                                "frame": {"type": "integer", "minimum": 0},
                                "u": {"type": "number"},
                                "v": {"type": "number"},
                                "respawn": {"type": "boolean"},
                            },
                        },
                    },
                },
            },
        },
    },
}

_VALIDATOR = jsonschema.Draft7Validator(SCHEMA)


def _pointer(path) -> str:
    return "".join(f"/{p}" for p in path)


def canonical_float(x: float, digits: int = FLOAT_DIGITS) -> float:
    return float(f"{float(x):.{digits}g}")


@dataclass
class AnnotationPoint:
    frame: int
    u: float
    v: float
    respawn: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def uv(self):
        return (self.u, self.v)


@dataclass
class AnnotationTrack:
    id: int
    points: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def by_frame(self) -> dict:
        return {p.frame: p for p in self.points}

    def at(self, frame: int) -> Optional[AnnotationPoint]:
        for p in self.points:
            if p.frame == frame:
                return p
        return None

    def upsert(self, point: AnnotationPoint) -> None:
        self.points = [p for p in self.points if p.frame != point.frame]
        self.points.append(point)
        self.points.sort(key=lambda p: p.frame)

    def segment_starts(self) -> list:
        pts = sorted(self.points, key=lambda p: p.frame)
        if not pts:
            return []
        return [pts[0].frame] + [p.frame for p in pts[1:] if p.respawn]


@dataclass
class AnnotationSet:
    tracks: list = field(default_factory=list)
    sequence: Optional[str] = None
    annotator: Optional[str] = None
    extra: dict = field(default_factory=dict)

    def track(self, track_id: int) -> Optional[AnnotationTrack]:
        for t in self.tracks:
            if t.id == track_id:
                return t
        return None

    def ensure_track(self, track_id: int) -> AnnotationTrack:
        t = self.track(track_id)
        if t is None:
            t = AnnotationTrack(track_id)
            self.tracks.append(t)
            self.tracks.sort(key=lambda tr: tr.id)
        return t

    @property
    def track_ids(self) -> list:
        return [t.id for t in self.tracks]

    def check_bounds(self, width: int, height: int) -> None:
        for ti, t in enumerate(self.tracks):
            for pi, p in enumerate(t.points):
                if not (0 <= p.u < width and 0 <= p.v < height):
                    raise BoundsError(
                        f"/tracks/{ti}/points/{pi}",
                        f"({p.u}, {p.v}) outside image [0,{width})x[0,{height})",
                    )

    # (de)serialization ---------------------------------------------------

    @classmethod
    def from_dict(cls, doc, image_size=None) -> "AnnotationSet":
        errors = sorted(_VALIDATOR.iter_errors(doc), key=lambda e: list(e.absolute_path))
        if errors:
            e = errors[0]
            raise SchemaError(_pointer(e.absolute_path), e.message)
        tracks = []
        seen_ids = set()
        for ti, t in enumerate(doc["tracks"]):
            if t["id"] in seen_ids:
                raise SchemaError(f"/tracks/{ti}/id", f"duplicate track id {t['id']}")
            seen_ids.add(t["id"])
            points = []
            frames = set()
            for pi, p in enumerate(t["points"]):
                if p["frame"] in frames:
                    raise SchemaError(
                        f"/tracks/{ti}/points/{pi}/frame",
                        f"second annotation for frame {p['frame']} in track {t['id']}",
                    )
                frames.add(p["frame"])
                extra = {k: v for k, v in p.items() if k not in ("frame", "u", "v", "respawn")}
                points.append(
                    AnnotationPoint(p["frame"], float(p["u"]), float(p["v"]), bool(p.get("respawn", False)), extra)
                )
            points.sort(key=lambda p: p.frame)
            extra = {k: v for k, v in t.items() if k not in ("id", "points")}
            tracks.append(AnnotationTrack(t["id"], points, extra))
        tracks.sort(key=lambda tr: tr.id)
        extra = {k: v for k, v in doc.items() if k not in ("sequence", "annotator", "tracks")}
        out = cls(tracks, doc.get("sequence"), doc.get("annotator"), extra)
        if image_size is not None:
            out.check_bounds(*image_size)
        return out

    def to_dict(self) -> dict:
        doc = dict(self.extra)
        if self.sequence is not None:
            doc["sequence"] = self.sequence
        if self.annotator is not None:
            doc["annotator"] = self.annotator
        doc["tracks"] = []
        for t in sorted(self.tracks, key=lambda tr: tr.id):
            td = dict(t.extra)
            td["id"] = t.id
            td["points"] = []
            for p in sorted(t.points, key=lambda p: p.frame):
                pd = dict(p.extra)
                pd.update(frame=p.frame, u=canonical_float(p.u), v=canonical_float(p.v), respawn=bool(p.respawn))
                td["points"].append(pd)
            doc["tracks"].append(td)
        return doc

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def read_annotations(path, image_size=None) -> AnnotationSet:
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"annotation file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise SchemaError("", f"{path}: invalid JSON at line {e.lineno} column {e.colno}: {e.msg}") from e
    return AnnotationSet.from_dict(doc, image_size)


def write_annotations(annotations: AnnotationSet, path) -> None:
    """Atomically replace ``path`` with the canonical serialization."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(annotations.dumps())
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
