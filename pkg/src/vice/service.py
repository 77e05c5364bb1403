"""HTTP annotation service for the browser client.

One session per sequence; its id is the sequence id. Reads serve the current
immutable snapshot without locking. Writes are serialized per session and
owned by one annotator at a time (``X-Annotator`` header); another annotator
writing while the lease is held gets 409. Every acknowledged mutation is on
disk before the response is sent.
"""

from __future__ import annotations

import copy
import hmac
import mimetypes
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from fastapi import Body, FastAPI, Header, HTTPException, Request
from fastapi.responses import FileResponse, JSONResponse

from .annotations import AnnotationPoint, AnnotationSet, read_annotations, write_annotations
from .errors import BoundsError, SchemaError
from .trajectory import FrameSequence

ANONYMOUS = "anonymous"
DEFAULT_LEASE_S = 300.0


@dataclass
class SessionState:
    sequence_id: str
    frames: FrameSequence
    annotation_path: Path
    annotations: AnnotationSet
    overlays: dict = field(default_factory=dict)  # source -> {track_id: {frame: ImagePoint|None}}
    frame: int = 0
    active_track: Optional[int] = None
    dirty: bool = False
    owner: Optional[str] = None
    last_write: float = 0.0
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def descriptor(self) -> dict:
        f = self.frames
        return {"id": self.sequence_id, "frame_count": len(f), "fps": f.rate_hz,
                "width": f.width, "height": f.height}


def load_session(sequence_id: str, frames: FrameSequence, annotation_path, tracks_by_source=None) -> SessionState:
    """Session over ``frames``; resumes from ``annotation_path`` if it exists."""
    path = Path(annotation_path)
    if path.exists():
        ann = read_annotations(path, (frames.width, frames.height))
    else:
        ann = AnnotationSet([], sequence=sequence_id)
    overlays = {
        source: {tid: t.predicted() for tid, t in tracks.items()}
        for source, tracks in (tracks_by_source or {}).items()
    }
    return SessionState(sequence_id, frames, path, ann, overlays)


class SessionRegistry:
    def __init__(self, sessions, lease_seconds: float = DEFAULT_LEASE_S, clock=time.monotonic):
        self.sessions = {s.sequence_id: s for s in sessions}
        self.lease_seconds = lease_seconds
        self.clock = clock

    def get(self, sequence_id: str) -> SessionState:
        s = self.sessions.get(sequence_id)
        if s is None:
            raise HTTPException(404, f"unknown sequence {sequence_id!r}")
        return s

    def mutate(self, sequence_id: str, annotator: str, fn):
        """Apply ``fn(copy_of_annotations, session)`` as ``annotator`` and persist."""
        s = self.get(sequence_id)
        with s.lock:
            now = self.clock()
            if s.owner not in (None, annotator) and now - s.last_write < self.lease_seconds:
                raise HTTPException(409, f"session {sequence_id!r} is being edited by {s.owner!r}")
            draft = copy.deepcopy(s.annotations)
            result = fn(draft, s)
            draft.check_bounds(s.frames.width, s.frames.height)
            s.dirty = True
            write_annotations(draft, s.annotation_path)
            s.annotations = draft
            s.dirty = False
            s.owner = annotator
            s.last_write = now
            return result


def _check_frame(s: SessionState, n: int):
    if not 0 <= n < len(s.frames):
        raise HTTPException(404, f"frame {n} outside 0..{len(s.frames) - 1}")


def create_app(sessions, token: Optional[str] = None, lease_seconds: float = DEFAULT_LEASE_S,
               clock=time.monotonic) -> FastAPI:
    """FastAPI app over ``sessions`` (``SessionState`` objects)."""
    registry = SessionRegistry(sessions, lease_seconds, clock)
    app = FastAPI(title="vice annotation service")
    app.state.registry = registry

    @app.middleware("http")
    async def bearer(request: Request, call_next):
        if token is not None and request.url.path.startswith("/api"):
            given = request.headers.get("authorization", "")
            if not hmac.compare_digest(given.encode(), f"Bearer {token}".encode()):
                return JSONResponse({"detail": "missing or invalid bearer token"}, status_code=401)
        return await call_next(request)

    @app.exception_handler(SchemaError)
    async def schema_error(request: Request, exc: SchemaError):
        return JSONResponse({"detail": str(exc), "code": exc.code}, status_code=422)

    @app.get("/api/sequences")
    def list_sequences():
        return [s.descriptor() for s in registry.sessions.values()]

    @app.get("/api/sequences/{sequence_id}/frames/{n}")
    def frame_image(sequence_id: str, n: int):
        s = registry.get(sequence_id)
        _check_frame(s, n)
        path = s.frames.images[n] if n < len(s.frames.images) else None
        if not path or not Path(path).exists():
            raise HTTPException(404, f"no image stored for frame {n}")
        media = mimetypes.guess_type(path)[0] or "application/octet-stream"
        return FileResponse(path, media_type=media)

    @app.get("/api/sequences/{sequence_id}/frames/{n}/overlays")
    def overlays(sequence_id: str, n: int, sources: Optional[str] = None):
        s = registry.get(sequence_id)
        _check_frame(s, n)
        wanted = sorted(s.overlays) if not sources else [x.strip() for x in sources.split(",") if x.strip()]
        missing = [x for x in wanted if x not in s.overlays]
        if missing:
            raise HTTPException(404, f"unknown overlay source(s): {', '.join(missing)}")
        out = {}
        for src in wanted:
            pts = []
            for tid in sorted(s.overlays[src]):
                p = s.overlays[src][tid].get(n)
                pts.append({"track_id": tid, "u": None if p is None else p[0], "v": None if p is None else p[1]})
            out[src] = pts
        return {"frame": n, "sources": out}

    @app.get("/api/sequences/{sequence_id}/annotations")
    def get_annotations(sequence_id: str):
        return registry.get(sequence_id).annotations.to_dict()

    @app.post("/api/sequences/{sequence_id}/annotations")
    def post_annotations(sequence_id: str, doc: dict = Body(...),
                         x_annotator: Optional[str] = Header(None)):
        s = registry.get(sequence_id)
        incoming = AnnotationSet.from_dict(doc)
        for t in incoming.tracks:
            for p in t.points:
                _check_frame(s, p.frame)

        def merge(draft: AnnotationSet, session: SessionState):
            for t in incoming.tracks:
                target = draft.ensure_track(t.id)
                target.extra.update(t.extra)
                for p in t.points:
                    target.upsert(p)
                session.active_track = t.id
                if t.points:
                    session.frame = t.points[-1].frame
            if incoming.annotator is not None:
                draft.annotator = incoming.annotator
            if draft.sequence is None:
                draft.sequence = sequence_id
            return draft.to_dict()

        return _mutate(registry, sequence_id, x_annotator, merge)

    @app.post("/api/sessions/{session_id}/respawn")
    def respawn(session_id: str, body: dict = Body(...), x_annotator: Optional[str] = Header(None)):
        s = registry.get(session_id)
        try:
            frame, u, v = int(body["frame"]), float(body["u"]), float(body["v"])
        except (KeyError, TypeError, ValueError):
            raise HTTPException(422, "respawn body needs integer 'frame' and numeric 'u', 'v'") from None
        _check_frame(s, frame)
        track_id = body.get("track", s.active_track)
        if track_id is None:
            raise HTTPException(422, "no active track; pass 'track'")

        def start_segment(draft: AnnotationSet, session: SessionState):
            track = draft.ensure_track(int(track_id))
            track.upsert(AnnotationPoint(frame, u, v, respawn=bool(track.points and track.points[0].frame < frame)))
            session.active_track = int(track_id)
            session.frame = frame
            return {"track": int(track_id), "frame": frame, "segment_starts": track.segment_starts()}

        return _mutate(registry, session_id, x_annotator, start_segment)

    return app


def _mutate(registry: SessionRegistry, sequence_id: str, annotator: Optional[str], fn):
    try:
        return registry.mutate(sequence_id, annotator or ANONYMOUS, fn)
    except BoundsError as e:
        raise HTTPException(422, str(e)) from None

