"""Local HTTP backend for the two-step selection study.

Serves candidate grids to the selection UI and appends validated vote
records to the shared vote log. The protocol: a volunteer picks the best
setting for each of the seven methods (step 1), then picks the overall best
among those seven finalists (step 2); only then is a vote recorded. The
final vote must match one of the volunteer's own step-1 picks.

Endpoints: GET /assignment/:volunteer, GET /images/:t/grid/:m, POST /picks,
GET /finalists/:volunteer/:t, POST /votes, GET /progress, GET /instructions,
plus static image files under /files/ (content-hashed ETags). Authentication
is a bearer volunteer token (this is a LAN tool for a lab study). The log
append happens before the acknowledgement, so an acked vote is never lost.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .dataset import (
    DatasetManifest,
    VoteRecord,
    append_vote,
    candidate_key,
    read_vote_log,
)
from .metrics import N_METHODS, N_PARAMS

INSTRUCTIONS = (
    "Strong edges should be preserved and blurry effects at significant edges "
    "are extremely undesired.",
    "The color of a smoothed image should be as close to the original image "
    "as possible.",
    "Under instructions 1 and 2, the smoother, the better.",
)

SESSION_LIMIT_SECONDS = 60 * 60  # a single work session up to 60 minutes per day
DAY_SECONDS = 24 * 60 * 60


class ServiceError(Exception):
    def __init__(self, status: int, message: str, retry_after: Optional[int] = None):
        super().__init__(message)
        self.status = status
        self.message = message
        self.retry_after = retry_after


@dataclass
class Session:
    volunteer: str
    day: int
    started: float
    picks: dict[str, dict[int, int]] = field(default_factory=dict)  # t -> m -> p


def build_assignment(image_ids: list[str], volunteers: list[str],
                     votes_per_image: int, seed: int) -> dict[str, list[str]]:
    """Deterministic seeded assignment: each image gets votes_per_image
    distinct volunteers, with volunteer loads balanced within one."""
    if votes_per_image > len(volunteers):
        raise ValueError("votes_per_image cannot exceed the volunteer count")
    rng = np.random.default_rng(seed)
    deck: list[str] = []
    assignment: dict[str, list[str]] = {}
    for t in sorted(image_ids):
        chosen: list[str] = []
        while len(chosen) < votes_per_image:
            if not deck:
                deck = [volunteers[i] for i in rng.permutation(len(volunteers))]
            v = deck.pop(0)
            if v not in chosen:
                chosen.append(v)
            else:
                deck.append(v)  # defer to keep loads balanced
        assignment[t] = chosen
    return assignment


class AnnotationService:
    """Protocol state machine, independent of HTTP (the handler is a shim).

    All mutations are serialized by one lock; the vote log is the single
    source of truth for recorded votes and is re-read on startup so the
    service resumes cleanly.
    """

    def __init__(self, root, manifest: DatasetManifest, volunteers: list[str],
                 votes_per_image: Optional[int] = None, seed: int = 0,
                 clock: Callable[[], float] = time.time):
        self.root = Path(root)
        self.manifest = manifest
        self.volunteers = list(volunteers)
        self.votes_per_image = votes_per_image or manifest.votes_per_image
        self.clock = clock
        self.entries = {e.id: e for e in manifest.images}
        self.assignment = build_assignment(
            list(self.entries), self.volunteers, self.votes_per_image, seed)
        self.by_volunteer: dict[str, list[str]] = {v: [] for v in self.volunteers}
        for t, vols in self.assignment.items():
            for v in vols:
                self.by_volunteer[v].append(t)
        self.log_path = self.root / manifest.vote_log
        self.votes: dict[tuple[str, str], tuple[int, int]] = {}
        if self.log_path.exists():
            for r in read_vote_log(self.log_path):
                self.votes[(r.image_id, r.volunteer)] = (r.method, r.param)
        self.sessions: dict[str, Session] = {}
        self._lock = threading.Lock()

    # -- sessions ----------------------------------------------------------

    def _touch_session(self, volunteer: str) -> Session:
        now = self.clock()
        day = int(now // DAY_SECONDS)
        sess = self.sessions.get(volunteer)
        if sess is None or sess.day != day:
            sess = Session(volunteer=volunteer, day=day, started=now,
                           picks=sess.picks if sess else {})
            self.sessions[volunteer] = sess
        if now - sess.started > SESSION_LIMIT_SECONDS:
            retry = int((day + 1) * DAY_SECONDS - now) + 1
            raise ServiceError(
                429, "session limit reached: a single work session up to 60 "
                     "minutes is allowed per day", retry_after=retry)
        return sess

    def _known_volunteer(self, volunteer: str) -> None:
        if volunteer not in self.by_volunteer:
            raise ServiceError(404, f"unknown volunteer {volunteer!r}")

    def _known_image(self, t: str) -> None:
        if t not in self.entries:
            raise ServiceError(404, f"unknown image {t!r}")

    # -- protocol ----------------------------------------------------------

    def get_assignment(self, volunteer: str) -> dict:
        with self._lock:
            self._known_volunteer(volunteer)
            self._touch_session(volunteer)
            pending = [t for t in self.by_volunteer[volunteer]
                       if (t, volunteer) not in self.votes]
            done = [t for t in self.by_volunteer[volunteer]
                    if (t, volunteer) in self.votes]
            return {"volunteer": volunteer, "pending": pending, "completed": done}

    def get_grid(self, t: str, m: int) -> dict:
        with self._lock:
            self._known_image(t)
            if not 1 <= m <= N_METHODS:
                raise ServiceError(400, f"method must be 1..{N_METHODS}, got {m}")
            entry = self.entries[t]
            for p in range(1, N_PARAMS + 1):
                rel = entry.candidates.get(candidate_key(m, p))
                if rel is None or not (self.root / rel).exists():
                    raise ServiceError(
                        404, f"image {t!r}: missing candidate file for "
                             f"method {m} setting {p}")
            return {
                "image_id": t,
                "method": m,
                "source": f"/files/{entry.source}",
                "candidates": [
                    f"/files/{entry.candidates[candidate_key(m, p)]}"
                    for p in range(1, N_PARAMS + 1)],
            }

    def post_pick(self, volunteer: str, t: str, m: int, p: int) -> dict:
        with self._lock:
            self._known_volunteer(volunteer)
            self._known_image(t)
            sess = self._touch_session(volunteer)
            if not (1 <= m <= N_METHODS and 1 <= p <= N_PARAMS):
                raise ServiceError(400, f"(method, param) out of range: ({m}, {p})")
            if t not in self.by_volunteer[volunteer]:
                raise ServiceError(409, f"image {t!r} is not assigned to {volunteer!r}")
            if (t, volunteer) in self.votes:
                raise ServiceError(409, f"final vote for {t!r} already recorded; "
                                        "picks can no longer be revised")
            sess.picks.setdefault(t, {})[m] = p
            return {"volunteer": volunteer, "image_id": t, "method": m, "param": p,
                    "picks_done": len(sess.picks[t])}

    def get_finalists(self, volunteer: str, t: str) -> dict:
        with self._lock:
            self._known_volunteer(volunteer)
            self._known_image(t)
            sess = self._touch_session(volunteer)
            picks = sess.picks.get(t, {})
            if len(picks) < N_METHODS:
                raise ServiceError(
                    409, f"step 2 requires all {N_METHODS} step-1 picks; "
                         f"{volunteer!r} has {len(picks)} for image {t!r}")
            entry = self.entries[t]
            finalists = [
                {"method": m, "param": picks[m],
                 "url": f"/files/{entry.candidates[candidate_key(m, picks[m])]}"}
                for m in range(1, N_METHODS + 1)]
            return {"image_id": t, "source": f"/files/{entry.source}",
                    "finalists": finalists}

    def post_vote(self, volunteer: str, t: str, m: int, p: int) -> dict:
        with self._lock:
            self._known_volunteer(volunteer)
            self._known_image(t)
            sess = self._touch_session(volunteer)
            if not (1 <= m <= N_METHODS and 1 <= p <= N_PARAMS):
                raise ServiceError(400, f"(method, param) out of range: ({m}, {p})")
            existing = self.votes.get((t, volunteer))
            if existing is not None:
                if existing == (m, p):
                    return {"image_id": t, "volunteer": volunteer, "method": m,
                            "param": p, "duplicate": True}
                raise ServiceError(
                    409, f"{volunteer!r} already voted ({existing[0]}, {existing[1]}) "
                         f"on image {t!r}")
            picks = sess.picks.get(t, {})
            if len(picks) < N_METHODS:
                raise ServiceError(
                    409, f"final vote requires all {N_METHODS} step-1 picks first")
            if picks.get(m) != p:
                raise ServiceError(
                    409, f"final vote ({m}, {p}) does not match the step-1 pick "
                         f"({m}, {picks.get(m)}) of {volunteer!r} for image {t!r}")
            record = VoteRecord(
                image_id=t, volunteer=volunteer, method=m, param=p,
                timestamp=time.strftime("%Y-%m-%dT%H:%M:%SZ",
                                        time.gmtime(self.clock())))
            append_vote(self.log_path, record)  # write-ahead: append, then ack
            self.votes[(t, volunteer)] = (m, p)
            return {"image_id": t, "volunteer": volunteer, "method": m, "param": p,
                    "duplicate": False}

    def get_progress(self) -> dict:
        with self._lock:
            counts = {t: 0 for t in self.entries}
            for (t, _v) in self.votes:
                counts[t] += 1
            total_needed = len(self.entries) * self.votes_per_image
            done = sum(counts.values())
            return {"per_image": dict(sorted(counts.items())),
                    "votes": done,
                    "completion": done / total_needed if total_needed else 0.0}

    def get_instructions(self) -> dict:
        return {"instructions": list(INSTRUCTIONS)}


# ---------------------------------------------------------------------------
# HTTP layer


class _Handler(BaseHTTPRequestHandler):
    service: AnnotationService
    ui_dir: Optional[Path] = None

    def log_message(self, fmt, *args):  # quiet test output
        pass

    def _send_json(self, status: int, doc: dict, retry_after: Optional[int] = None):
        body = json.dumps(doc, sort_keys=True).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        if retry_after is not None:
            self.send_header("Retry-After", str(retry_after))
        self.end_headers()
        self.wfile.write(body)

    def _bearer(self) -> str:
        auth = self.headers.get("Authorization", "")
        if not auth.startswith("Bearer "):
            raise ServiceError(401, "missing bearer volunteer token")
        return auth[len("Bearer "):].strip()

    def _serve_file(self, rel: str):
        path = (self.service.root / rel).resolve()
        if not str(path).startswith(str(self.service.root.resolve())) \
                or not path.is_file():
            raise ServiceError(404, f"no such file {rel!r}")
        data = path.read_bytes()
        etag = hashlib.sha256(data).hexdigest()[:16]
        if self.headers.get("If-None-Match") == etag:
            self.send_response(304)
            self.end_headers()
            return
        self.send_response(200)
        ctype = "image/png" if path.suffix == ".png" else "application/octet-stream"
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(data)))
        self.send_header("ETag", etag)
        self.send_header("Cache-Control", "max-age=86400")
        self.end_headers()
        self.wfile.write(data)

    def _serve_ui(self, rel: str):
        if self.ui_dir is None:
            raise ServiceError(404, "no UI bundle configured")
        path = (self.ui_dir / (rel or "index.html")).resolve()
        if not str(path).startswith(str(self.ui_dir.resolve())) or not path.is_file():
            raise ServiceError(404, f"no such UI file {rel!r}")
        types = {".html": "text/html", ".js": "text/javascript", ".css": "text/css"}
        data = path.read_bytes()
        self.send_response(200)
        self.send_header("Content-Type", types.get(path.suffix, "text/plain"))
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_GET(self):
        try:
            parts = [p for p in self.path.split("?")[0].split("/") if p]
            svc = self.service
            if not parts:
                return self._serve_ui("")
            if parts[0] == "assignment" and len(parts) == 2:
                if self._bearer() != parts[1]:
                    raise ServiceError(403, "token does not match volunteer")
                return self._send_json(200, svc.get_assignment(parts[1]))
            if parts[0] == "images" and len(parts) == 4 and parts[2] == "grid":
                return self._send_json(200, svc.get_grid(parts[1], int(parts[3])))
            if parts[0] == "finalists" and len(parts) == 3:
                if self._bearer() != parts[1]:
                    raise ServiceError(403, "token does not match volunteer")
                return self._send_json(200, svc.get_finalists(parts[1], parts[2]))
            if parts[0] == "progress":
                return self._send_json(200, svc.get_progress())
            if parts[0] == "instructions":
                return self._send_json(200, svc.get_instructions())
            if parts[0] == "files":
                return self._serve_file("/".join(parts[1:]))
            return self._serve_ui("/".join(parts))
        except ServiceError as e:
            self._send_json(e.status, {"error": e.message}, e.retry_after)
        except (ValueError, KeyError) as e:
            self._send_json(400, {"error": str(e)})

    def do_POST(self):
        try:
            length = int(self.headers.get("Content-Length", 0))
            doc = json.loads(self.rfile.read(length) or b"{}")
            volunteer = self._bearer()
            parts = [p for p in self.path.split("?")[0].split("/") if p]
            svc = self.service
            if parts == ["picks"]:
                return self._send_json(200, svc.post_pick(
                    volunteer, doc["image_id"], int(doc["method"]), int(doc["param"])))
            if parts == ["votes"]:
                return self._send_json(200, svc.post_vote(
                    volunteer, doc["image_id"], int(doc["method"]), int(doc["param"])))
            raise ServiceError(404, f"no such endpoint {self.path!r}")
        except ServiceError as e:
            self._send_json(e.status, {"error": e.message}, e.retry_after)
        except (ValueError, KeyError, json.JSONDecodeError) as e:
            self._send_json(400, {"error": f"bad request: {e}"})


def make_server(service: AnnotationService, host: str = "127.0.0.1", port: int = 0,
                ui_dir=None) -> ThreadingHTTPServer:
    handler = type("Handler", (_Handler,), {
        "service": service,
        "ui_dir": Path(ui_dir) if ui_dir else None,
    })
    return ThreadingHTTPServer((host, port), handler)


def serve(service: AnnotationService, host: str = "127.0.0.1", port: int = 8765,
          ui_dir=None) -> None:
    server = make_server(service, host, port, ui_dir)
    print(f"annotation service on http://{host}:{server.server_address[1]}/")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
