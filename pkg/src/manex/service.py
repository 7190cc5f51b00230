"""HTTP/JSON steering service.

Session-oriented workflow: create a session, inspect SNR-ranked latent
dimensions, preview diverse proposals along one dimension, then execute a
chosen proposal or an automatic step. Completed episodes are persisted as
steered trajectory records.

Concurrency: mutations on a session go through a per-session non-blocking
lock; a conflicting concurrent request gets a deterministic 409 instead of
interleaved environment mutation. Proposal previews run on env clones and
never touch session state.
"""

from __future__ import annotations

import json
import mimetypes
import os
import re
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

import numpy as np

from .analysis import propose_along_dimension
from .envs import EnvConfig, PlanarEnv, TrajectoryRecord, make_env_config
from .errors import ConfigError
from .improve import plan_chunk
from .rng import RngStream
from .trainer import PolicyBundle

API_VERSION = "0.1.0"


class ApiError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status
        self.message = message


@dataclass
class Session:
    sid: str
    seed: int
    env: PlanarEnv
    obs: np.ndarray
    done: bool = False
    success: bool = False
    chunk_index: int = 0
    history: list = field(default_factory=list)
    observations: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    executed_path: list = field(default_factory=list)
    proposals: dict = field(default_factory=dict)  # proposal id -> Proposal
    proposal_dim: int | None = None
    proposal_epoch: int = 0
    persisted: bool = False
    lock: threading.Lock = field(default_factory=threading.Lock)

    def snapshot(self) -> dict:
        s = self.env.state
        doc = {
            "id": self.sid,
            "seed": self.seed,
            "step": s.t,
            "done": self.done,
            "success": self.success,
            "env": self.env.cfg.name,
            "robot": s.robot.tolist(),
            "goal": s.goal.tolist(),
            "obstacle": {"center": s.obstacle_center.tolist(), "radius": s.obstacle_radius},
            "executed_path": [p.tolist() for p in self.executed_path],
            "history_len": len(self.history),
        }
        if s.obj is not None:
            doc["object"] = s.obj.tolist()
        return doc


class SteeringService:
    """API core, independent of the HTTP layer (handle() is directly testable)."""

    def __init__(
        self,
        bundle: PolicyBundle,
        env_cfg: EnvConfig,
        snr_doc: dict | None = None,
        ui_dir: str | None = None,
        persist_path: str | None = None,
        proposal_batch: int = 64,
        proposal_k: int = 8,
        proposal_span: float = 3.0,
    ):
        if env_cfg.obs_dim != bundle.policy.obs_dim:
            raise ConfigError("checkpoint and environment observation widths differ")
        self.bundle = bundle
        self.env_cfg = env_cfg
        self.snr_doc = snr_doc
        self.ui_dir = ui_dir
        self.persist_path = persist_path
        self.proposal_batch = proposal_batch
        self.proposal_k = proposal_k
        self.proposal_span = proposal_span
        self.sessions: dict[str, Session] = {}
        self._registry_lock = threading.Lock()
        self._persist_lock = threading.Lock()
        self._next_sid = 0

    # ---- routing ----------------------------------------------------------

    def handle(self, method: str, path: str, query: dict, body: dict) -> tuple[int, dict]:
        try:
            return 200, self._dispatch(method, path, query, body)
        except ApiError as e:
            return e.status, {"error": e.message}

    def _dispatch(self, method: str, path: str, query: dict, body: dict) -> dict:
        if method == "GET" and path == "/api/health":
            return {"status": "ok", "version": API_VERSION}
        if method == "POST" and path == "/api/sessions":
            return self.create_session(body)
        m = re.fullmatch(r"/api/sessions/([^/]+)", path)
        if m and method == "GET":
            return self._session(m.group(1)).snapshot()
        m = re.fullmatch(r"/api/sessions/([^/]+)/dimensions", path)
        if m and method == "GET":
            return self.list_dimensions(m.group(1))
        m = re.fullmatch(r"/api/sessions/([^/]+)/proposals", path)
        if m and method == "GET":
            return self.get_proposals(m.group(1), query)
        m = re.fullmatch(r"/api/sessions/([^/]+)/select", path)
        if m and method == "POST":
            return self.select_proposal(m.group(1), body)
        m = re.fullmatch(r"/api/sessions/([^/]+)/auto", path)
        if m and method == "POST":
            return self.step_auto(m.group(1), body)
        m = re.fullmatch(r"/api/sessions/([^/]+)/history", path)
        if m and method == "GET":
            return {"history": self._session(m.group(1)).history}
        raise ApiError(404, f"no route for {method} {path}")

    def _session(self, sid: str) -> Session:
        sess = self.sessions.get(sid)
        if sess is None:
            raise ApiError(404, f"unknown session {sid!r}")
        return sess

    # ---- session lifecycle -------------------------------------------------

    def create_session(self, body: dict) -> dict:
        if "seed" not in body:
            raise ApiError(400, "field 'seed' is required")
        try:
            seed = int(body["seed"])
        except (TypeError, ValueError):
            raise ApiError(400, "field 'seed' must be an integer")
        env_cfg = self.env_cfg
        overrides = body.get("env") or {}
        if overrides:
            try:
                env_cfg = make_env_config(overrides.get("name", env_cfg.name))
            except ConfigError as e:
                raise ApiError(400, f"field 'env': {e}")
            if env_cfg.obs_dim != self.bundle.policy.obs_dim:
                raise ApiError(400, "field 'env': observation width does not match checkpoint")
        env = PlanarEnv(env_cfg)
        obs = env.reset(seed)
        with self._registry_lock:
            sid = f"s{self._next_sid}"
            self._next_sid += 1
            sess = Session(sid=sid, seed=seed, env=env, obs=obs)
            sess.executed_path.append(env.state.robot.copy())
            self.sessions[sid] = sess
        return sess.snapshot()

    # ---- queries ------------------------------------------------------------

    def list_dimensions(self, sid: str) -> dict:
        self._session(sid)
        if self.bundle.plugin is None:
            raise ApiError(412, "checkpoint has no exploration plug-in")
        if self.snr_doc is None:
            raise ApiError(
                412, "no SNR spectrum available for this checkpoint; run snr-report first"
            )
        dims = sorted(self.snr_doc["dims"], key=lambda d: -d["snr_db"])
        return {
            "dims": dims,
            "threshold_db": self.snr_doc["threshold_db"],
            "latent_dim": self.bundle.plugin.cfg.latent_dim,
        }

    def get_proposals(self, sid: str, query: dict) -> dict:
        sess = self._session(sid)
        if sess.done:
            raise ApiError(409, "episode already finished")
        if self.bundle.plugin is None:
            raise ApiError(412, "checkpoint has no exploration plug-in")
        try:
            dim = int(query.get("dim", ["0"])[0])
            batch = int(query.get("batch", [str(self.proposal_batch)])[0])
            k = int(query.get("k", [str(self.proposal_k)])[0])
        except ValueError:
            raise ApiError(400, "dim, batch and k must be integers")
        d = self.bundle.plugin.cfg.latent_dim
        if not 0 <= dim < d:
            raise ApiError(400, f"dim must be in 0..{d - 1}")
        if batch < k or k < 1:
            raise ApiError(400, "need batch >= k >= 1")
        noise_rng = self._chunk_stream(sess, "ddim")
        pset = propose_along_dimension(
            self.bundle.policy,
            self.bundle.plugin,
            sess.obs,
            dim,
            simulate=sess.env.simulate_chunk,
            batch=batch,
            k=k,
            span=self.proposal_span,
            init_noise=noise_rng.normal(self.bundle.policy.chunk_elems),
        )
        sess.proposal_epoch += 1
        sess.proposals = {}
        sess.proposal_dim = dim
        out = []
        for p in pset.proposals:
            pid = f"e{sess.proposal_epoch}-{p.proposal_id}"
            sess.proposals[pid] = p
            out.append(
                {
                    "id": pid,
                    "offset": p.offset,
                    "chunk": p.chunk.tolist(),
                    "trajectory": p.trajectory.tolist(),
                }
            )
        return {"dim": dim, "k": k, "batch": batch, "proposals": out}

    # ---- execution ------------------------------------------------------------

    def _chunk_stream(self, sess: Session, kind: str) -> RngStream:
        return RngStream(sess.seed, f"session/chunk{sess.chunk_index}/{kind}")

    def _execute(self, sess: Session, chunk: np.ndarray, provenance: str) -> dict:
        steps = 0
        for a in chunk:
            sess.observations.append(sess.obs)
            sess.actions.append(np.asarray(a, dtype=np.float64))
            sess.obs, sess.done, sess.success = sess.env.step(a)
            sess.executed_path.append(sess.env.state.robot.copy())
            steps += 1
            if sess.done:
                break
        sess.chunk_index += 1
        sess.proposals = {}
        sess.proposal_dim = None
        sess.history.append(
            {
                "provenance": provenance,
                "chunk": np.asarray(chunk, dtype=np.float64).tolist(),
                "steps": steps,
                "done": sess.done,
                "success": sess.success,
            }
        )
        if sess.done and not sess.persisted:
            self._persist(sess)
        return sess.snapshot()

    def _persist(self, sess: Session) -> None:
        sess.persisted = True
        if self.persist_path is None or not sess.actions:
            return
        rec = TrajectoryRecord(
            observations=np.stack(sess.observations),
            actions=np.stack(sess.actions),
            success=sess.success,
            source="steered",
            env=sess.env.cfg.name,
            seed=sess.seed,
            round=0,
        )
        line = json.dumps(rec.to_dict(), sort_keys=True, separators=(",", ":"))
        with self._persist_lock:
            with open(self.persist_path, "a") as f:
                f.write(line + "\n")

    def select_proposal(self, sid: str, body: dict) -> dict:
        sess = self._session(sid)
        if not sess.lock.acquire(blocking=False):
            raise ApiError(409, "another execution is in flight")
        try:
            if sess.done:
                raise ApiError(409, "episode already finished")
            pid = body.get("proposal_id")
            if pid is None:
                raise ApiError(400, "field 'proposal_id' is required")
            prop = sess.proposals.get(pid)
            if prop is None:
                raise ApiError(409, f"stale or unknown proposal id {pid!r}")
            provenance = f"steered:{sess.proposal_dim}:{pid}"
            return self._execute(sess, prop.chunk, provenance)
        finally:
            sess.lock.release()

    def step_auto(self, sid: str, body: dict) -> dict:
        sess = self._session(sid)
        if not sess.lock.acquire(blocking=False):
            raise ApiError(409, "another execution is in flight")
        try:
            if sess.done:
                raise ApiError(409, "episode already finished")
            try:
                alpha = float(body.get("alpha", 0.0))
            except (TypeError, ValueError):
                raise ApiError(400, "field 'alpha' must be a number")
            if alpha < 0:
                raise ApiError(400, "field 'alpha' must be >= 0")
            mode = "base" if alpha == 0.0 else "explore"
            if mode == "explore" and self.bundle.plugin is None:
                raise ApiError(412, "checkpoint has no exploration plug-in")
            chunk = plan_chunk(
                self.bundle,
                sess.obs,
                mode,
                alpha,
                noise_rng=self._chunk_stream(sess, "ddim"),
                z_rng=self._chunk_stream(sess, "z"),
            )
            return self._execute(sess, chunk, "auto")
        finally:
            sess.lock.release()


# ---- HTTP layer ----------------------------------------------------------------

_FALLBACK_PAGE = """<!doctype html>
<html><head><title>steering service</title></head>
<body><h1>Steering service is running</h1>
<p>No UI bundle is installed. The JSON API lives under <code>/api/</code>.</p>
</body></html>
"""


def make_http_handler(service: SteeringService):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, fmt, *args):  # quiet by default
            pass

        def _send_json(self, status: int, doc: dict) -> None:
            payload = json.dumps(doc).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)

        def _read_body(self) -> dict:
            length = int(self.headers.get("Content-Length") or 0)
            if length == 0:
                return {}
            raw = self.rfile.read(length)
            try:
                doc = json.loads(raw)
            except json.JSONDecodeError:
                raise ApiError(400, "request body is not valid JSON")
            if not isinstance(doc, dict):
                raise ApiError(400, "request body must be a JSON object")
            return doc

        def _serve_static(self, path: str) -> None:
            if path == "/":
                path = "/index.html"
            root = service.ui_dir
            if root is not None:
                full = os.path.realpath(os.path.join(root, path.lstrip("/")))
                if full.startswith(os.path.realpath(root)) and os.path.isfile(full):
                    ctype = mimetypes.guess_type(full)[0] or "application/octet-stream"
                    with open(full, "rb") as f:
                        data = f.read()
                    self.send_response(200)
                    self.send_header("Content-Type", ctype)
                    self.send_header("Content-Length", str(len(data)))
                    self.end_headers()
                    self.wfile.write(data)
                    return
            if path == "/index.html":
                data = _FALLBACK_PAGE.encode()
                self.send_response(200)
                self.send_header("Content-Type", "text/html")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)
                return
            self._send_json(404, {"error": f"not found: {path}"})

        def _route(self, method: str) -> None:
            parsed = urlparse(self.path)
            if parsed.path.startswith("/api/"):
                try:
                    body = self._read_body() if method == "POST" else {}
                except ApiError as e:
                    self._send_json(e.status, {"error": e.message})
                    return
                status, doc = service.handle(method, parsed.path, parse_qs(parsed.query), body)
                self._send_json(status, doc)
            elif method == "GET":
                self._serve_static(parsed.path)
            else:
                self._send_json(404, {"error": f"no route for {method} {parsed.path}"})

        def do_GET(self):
            self._route("GET")

        def do_POST(self):
            self._route("POST")

    return Handler


def make_server(service: SteeringService, host: str = "127.0.0.1", port: int = 8008):
    return ThreadingHTTPServer((host, port), make_http_handler(service))
