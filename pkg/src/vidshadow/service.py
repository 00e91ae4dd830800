"""Session-oriented HTTP service for human-in-the-loop annotation.

A session walks a fixed state machine:

    created -> (prompted) -> seeded -> propagating -> propagated
                                            ^              |
                                            +-- repredict -+  (stays propagated)

Masks are returned as base64 PNG (the exact on-disk encoding) plus their
dimensions. Every response carries the session revision, which increases by
one per successful mutation; reads never change it. Session state persists
to disk after every transition, so a restarted service recovers all
sessions at their last revision. Propagation runs on a worker thread;
clients poll the session state until it reaches "propagated".
"""

from __future__ import annotations

import base64
import io
import json
import threading
import uuid
from dataclasses import asdict, dataclass, field
from pathlib import Path

from fastapi import FastAPI, HTTPException
from PIL import Image
from pydantic import BaseModel

from .data_io import (
    RunConfig,
    VideoSequence,
    load_mask,
    load_video_sequence,
    save_mask,
)
from .errors import NotFoundError
from .lstn import LstnModel
from .propagation import PropagationSession, run_plus
from .prompt_gen import BoxPrompt
from .segmenter import SegmenterModel


@dataclass
class SessionState:
    id: str
    video_id: str
    num_frames: int
    frame_size: tuple[int, int]
    revision: int = 1
    state: str = "created"
    prompts: dict[int, list[tuple[int, int, int, int]]] = field(default_factory=dict)
    seed_frame: int | None = None
    mode: str | None = None
    agreement: list[dict] = field(default_factory=list)
    error: str | None = None

    def to_json(self) -> dict:
        data = asdict(self)
        data["prompts"] = {str(k): v for k, v in self.prompts.items()}
        return data

    @classmethod
    def from_json(cls, data: dict) -> "SessionState":
        data = dict(data)
        data["prompts"] = {
            int(k): [tuple(box) for box in v] for k, v in data["prompts"].items()
        }
        data["frame_size"] = tuple(data["frame_size"])
        return cls(**data)


class SessionStore:
    """One JSON file per session plus a directory of mask PNGs."""

    def __init__(self, state_dir: Path | str) -> None:
        self.state_dir = Path(state_dir)
        self.state_dir.mkdir(parents=True, exist_ok=True)

    def save(self, state: SessionState) -> None:
        path = self.state_dir / f"{state.id}.json"
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(state.to_json()), encoding="utf-8")
        tmp.replace(path)

    def load_all(self) -> dict[str, SessionState]:
        sessions = {}
        for path in sorted(self.state_dir.glob("*.json")):
            state = SessionState.from_json(json.loads(path.read_text(encoding="utf-8")))
            if state.state == "propagating":
                # A propagation interrupted by a crash restarts from seeded.
                state.state = "seeded"
            sessions[state.id] = state
        return sessions

    def mask_path(self, session_id: str, frame: int) -> Path:
        return self.state_dir / session_id / "masks" / f"{frame:05d}.png"

    def seed_path(self, session_id: str, frame: int) -> Path:
        return self.state_dir / session_id / f"seed_{frame:05d}.png"

    def agreement_path(self, session_id: str) -> Path:
        return self.state_dir / session_id / "agreement.jsonl"


class CreateSessionRequest(BaseModel):
    video_id: str


class PromptRequest(BaseModel):
    boxes: list[list[int]]


class PropagateRequest(BaseModel):
    mode: str = "forward"


class SeedRequest(BaseModel):
    frame: int = 0


class RepredictRequest(BaseModel):
    frame: int
    boxes: list[list[int]] | None = None
    repropagate: bool = False


def _encode_mask(path: Path) -> dict:
    data = path.read_bytes()
    with Image.open(io.BytesIO(data)) as img:
        width, height = img.size
    return {
        "png_base64": base64.b64encode(data).decode("ascii"),
        "width": width,
        "height": height,
    }


class AnnotationService:
    def __init__(
        self,
        data_root: Path | str,
        segmenter: SegmenterModel,
        lstn: LstnModel,
        state_dir: Path | str,
        config: RunConfig | None = None,
    ) -> None:
        self.data_root = Path(data_root)
        self.segmenter = segmenter
        self.lstn = lstn
        self.store = SessionStore(state_dir)
        self.config = config or RunConfig()
        self.sessions = self.store.load_all()
        self._locks: dict[str, threading.Lock] = {}
        self._videos: dict[str, VideoSequence] = {}
        self._threads: dict[str, threading.Thread] = {}

    def lock(self, session_id: str) -> threading.Lock:
        return self._locks.setdefault(session_id, threading.Lock())

    def get_session(self, session_id: str) -> SessionState:
        session = self.sessions.get(session_id)
        if session is None:
            raise HTTPException(404, f"unknown session {session_id!r}")
        return session

    def video(self, video_id: str) -> VideoSequence:
        if video_id not in self._videos:
            try:
                self._videos[video_id] = load_video_sequence(self.data_root, video_id)
            except NotFoundError as exc:
                raise HTTPException(404, str(exc)) from exc
        return self._videos[video_id]

    def check_frame(self, session: SessionState, frame: int) -> None:
        if not 0 <= frame < session.num_frames:
            raise HTTPException(404, f"frame {frame} out of range")

    def parse_boxes(self, session: SessionState, raw: list[list[int]]) -> list[BoxPrompt]:
        boxes = []
        for entry in raw:
            if len(entry) != 4:
                raise HTTPException(422, f"a box needs 4 integers, got {entry}")
            box = BoxPrompt(*(int(v) for v in entry))
            try:
                box.validate(session.frame_size)
            except Exception as exc:
                raise HTTPException(422, f"invalid box {entry}: {exc}") from exc
            boxes.append(box)
        return boxes

    def bump_and_save(self, session: SessionState) -> None:
        session.revision += 1
        self.store.save(session)

    # -- operations -------------------------------------------------------

    def create_session(self, video_id: str) -> SessionState:
        video = self.video(video_id)
        session = SessionState(
            id=uuid.uuid4().hex[:12],
            video_id=video_id,
            num_frames=len(video),
            frame_size=video.frame_shape,
        )
        self.sessions[session.id] = session
        self.store.save(session)
        return session

    def put_prompts(self, session: SessionState, frame: int, boxes: list[BoxPrompt]) -> None:
        self.check_frame(session, frame)
        if session.state == "propagating":
            raise HTTPException(409, "session is propagating")
        session.prompts[frame] = [box.as_tuple() for box in boxes]
        if session.state == "created":
            session.state = "prompted"
        self.bump_and_save(session)

    def seed(self, session: SessionState, frame: int) -> Path:
        self.check_frame(session, frame)
        if session.state == "propagating":
            raise HTTPException(409, "session is propagating")
        video = self.video(session.video_id)
        boxes = [BoxPrompt(*b) for b in session.prompts.get(frame, [])]
        mask = self.segmenter.predict_mask(video.frames[frame], boxes)
        path = self.store.seed_path(session.id, frame)
        save_mask(mask, path)
        session.seed_frame = frame
        session.state = "seeded"
        self.bump_and_save(session)
        return path

    def propagate(self, session: SessionState, mode: str) -> None:
        if mode not in ("forward", "plus"):
            raise HTTPException(422, f"unknown mode {mode!r}")
        if session.state not in ("seeded", "propagated"):
            raise HTTPException(
                409, f"cannot propagate from state {session.state!r} (seed first)"
            )
        session.state = "propagating"
        session.mode = mode
        self.bump_and_save(session)
        thread = threading.Thread(
            target=self._propagate_worker, args=(session.id, mode), daemon=True
        )
        self._threads[session.id] = thread
        thread.start()

    def _propagate_worker(self, session_id: str, mode: str) -> None:
        session = self.sessions[session_id]
        try:
            with self.lock(session_id):
                video = self.video(session.video_id)
                seed_frame = session.seed_frame if session.seed_frame is not None else 0
                seed_mask = load_mask(
                    self.store.seed_path(session_id, seed_frame), kind="probability"
                )
                if mode == "plus":
                    first_boxes = [BoxPrompt(*b) for b in session.prompts.get(0, [])]
                    last_boxes = [
                        BoxPrompt(*b)
                        for b in session.prompts.get(session.num_frames - 1, [])
                    ]
                    masks, records = run_plus(
                        video, self.segmenter, self.lstn,
                        first_boxes, last_boxes, self.config,
                    )
                    session.agreement = [r.as_record() for r in records]
                    agreement_path = self.store.agreement_path(session_id)
                    agreement_path.parent.mkdir(parents=True, exist_ok=True)
                    agreement_path.write_text(
                        "".join(json.dumps(r) + "\n" for r in session.agreement)
                    )
                else:
                    if len(video) == 1:
                        masks = [seed_mask]
                    else:
                        prop = PropagationSession(
                            self.lstn, video, seed_mask, "forward", self.config
                        )
                        masks = prop.run()
                    session.agreement = []
                for index, mask in enumerate(masks):
                    save_mask(mask, self.store.mask_path(session_id, index))
                session.state = "propagated"
                session.error = None
        except Exception as exc:  # surfaced via session state, not a response
            session.state = "failed"
            session.error = str(exc)
        self.bump_and_save(session)

    def repredict(
        self,
        session: SessionState,
        frame: int,
        boxes: list[BoxPrompt] | None,
        repropagate: bool,
    ) -> list[int]:
        self.check_frame(session, frame)
        if session.state != "propagated":
            raise HTTPException(409, "repredict requires a propagated session")
        video = self.video(session.video_id)
        if boxes is None:
            boxes = [BoxPrompt(*b) for b in session.prompts.get(frame, [])]
        mask = self.segmenter.predict_mask(video.frames[frame], boxes)
        save_mask(mask, self.store.mask_path(session.id, frame))
        changed = [frame]
        if repropagate and frame < session.num_frames - 1:
            tail = VideoSequence(
                id=f"{video.id}-tail",
                frames=video.frames[frame:],
                frame_names=video.frame_names[frame:],
            )
            prop = PropagationSession(self.lstn, tail, mask, "forward", self.config)
            tail_masks = prop.run()
            for offset, tail_mask in enumerate(tail_masks[1:], start=1):
                save_mask(tail_mask, self.store.mask_path(session.id, frame + offset))
                changed.append(frame + offset)
        self.bump_and_save(session)
        return changed


def create_app(
    data_root: Path | str,
    segmenter: SegmenterModel,
    lstn: LstnModel,
    state_dir: Path | str,
    config: RunConfig | None = None,
) -> FastAPI:
    service = AnnotationService(data_root, segmenter, lstn, state_dir, config)
    app = FastAPI(title="vidshadow annotation service")
    app.state.service = service

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok"}

    @app.post("/sessions", status_code=201)
    def create_session(request: CreateSessionRequest) -> dict:
        session = service.create_session(request.video_id)
        return {
            "session_id": session.id,
            "revision": session.revision,
            "state": session.state,
            "num_frames": session.num_frames,
            "frame_size": session.frame_size,
        }

    @app.get("/sessions")
    def list_sessions() -> dict:
        return {
            "sessions": [
                {"session_id": s.id, "state": s.state, "revision": s.revision}
                for s in service.sessions.values()
            ]
        }

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str) -> dict:
        session = service.get_session(session_id)
        return session.to_json()

    @app.put("/sessions/{session_id}/prompts/{frame}")
    def put_prompts(session_id: str, frame: int, request: PromptRequest) -> dict:
        session = service.get_session(session_id)
        with service.lock(session_id):
            boxes = service.parse_boxes(session, request.boxes)
            service.put_prompts(session, frame, boxes)
            return {"revision": session.revision, "state": session.state}

    @app.post("/sessions/{session_id}/seed")
    def seed(session_id: str, request: SeedRequest) -> dict:
        session = service.get_session(session_id)
        with service.lock(session_id):
            path = service.seed(session, request.frame)
            return {
                "revision": session.revision,
                "state": session.state,
                "frame": request.frame,
                "mask": _encode_mask(path),
            }

    @app.post("/sessions/{session_id}/propagate", status_code=202)
    def propagate(session_id: str, request: PropagateRequest) -> dict:
        session = service.get_session(session_id)
        with service.lock(session_id):
            service.propagate(session, request.mode)
        return {"revision": session.revision, "state": session.state}

    @app.get("/sessions/{session_id}/masks/{frame}")
    def get_mask(session_id: str, frame: int) -> dict:
        session = service.get_session(session_id)
        service.check_frame(session, frame)
        if session.state != "propagated":
            raise HTTPException(409, f"masks unavailable in state {session.state!r}")
        path = service.store.mask_path(session_id, frame)
        if not path.exists():
            raise HTTPException(404, f"no mask for frame {frame}")
        return {
            "revision": session.revision,
            "frame": frame,
            "mask": _encode_mask(path),
        }

    @app.get("/sessions/{session_id}/agreement")
    def get_agreement(session_id: str) -> dict:
        session = service.get_session(session_id)
        if session.state != "propagated":
            raise HTTPException(409, f"agreement unavailable in state {session.state!r}")
        return {"revision": session.revision, "records": session.agreement}

    @app.post("/sessions/{session_id}/repredict")
    def repredict(session_id: str, request: RepredictRequest) -> dict:
        session = service.get_session(session_id)
        with service.lock(session_id):
            boxes = (
                service.parse_boxes(session, request.boxes)
                if request.boxes is not None
                else None
            )
            changed = service.repredict(
                session, request.frame, boxes, request.repropagate
            )
            return {
                "revision": session.revision,
                "state": session.state,
                "changed_frames": changed,
            }

    return app
