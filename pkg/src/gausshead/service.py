"""HTTP editing service: sessions over avatar bundles with live preview.

One writer per session: every mutation and every render of a session happens
under that session's lock, and each mutation bumps a strictly increasing
revision counter.  The live websocket pushes the newest frame only; edits
that arrive while a frame is in flight coalesce into the next push.

Frame bytes come from the same renderer and PNG encoder as the command-line
tool, so a session left at its defaults serves exactly the file ``gausshead
render`` writes.
"""

from __future__ import annotations

import argparse
import io
import logging
import os
import struct
import threading
import uuid
from dataclasses import dataclass, field

from fastapi import Body, FastAPI, Query, Request, Response, WebSocket
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from starlette.concurrency import run_in_threadpool
from starlette.websockets import WebSocketDisconnect

from . import assets, engine
from .errors import AssetError, GaussHeadError
from .headmodel import HeadParams
from .shading import DEFAULT_OCCLUSION, ShLighting
from .splatter import DEFAULT_CONFIG, Camera

log = logging.getLogger("gausshead.service")

# a live-channel frame is "<I" revision followed by PNG bytes; a bare
# revision (no payload) is a keepalive
KEEPALIVE_SECONDS = 0.25

_MUTABLE_KEYS = frozenset({"expression", "jaw", "eyes", "camera", "lighting"})


class ApiError(GaussHeadError):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status


@dataclass
class Session:
    """Editing state for one client; all access goes through ``cond``."""

    id: str
    avatar: engine.Avatar
    camera: Camera
    params: HeadParams
    lighting: ShLighting
    size: int
    revision: int = 0
    cond: threading.Condition = field(default_factory=threading.Condition)

    def render_png(self) -> tuple[int, bytes]:
        with self.cond:
            frame = self.avatar.render(
                params=self.params, camera=self.camera, lighting=self.lighting
            )
            return self.revision, assets.encode_png(frame.image)

    def wait_newer(self, seen: int, timeout: float) -> int:
        """Block until the revision passes ``seen`` (or the timeout runs
        out) and return the current revision."""
        with self.cond:
            if self.revision <= seen:
                self.cond.wait(timeout)
            return self.revision


class ServiceState:
    def __init__(self, bundle_dir: str, max_sessions: int, raster, occlusion):
        self.bundle_dir = bundle_dir
        self.max_sessions = max_sessions
        self.raster = raster
        self.occlusion = occlusion
        self.sessions: dict[str, Session] = {}
        self.lock = threading.Lock()

    def bundle_path(self, name: str) -> str:
        if not name or os.path.basename(name) != name:
            raise ApiError(400, f"bad bundle name {name!r}")
        path = os.path.join(self.bundle_dir, name)
        if not os.path.isfile(path):
            raise ApiError(400, f"no bundle named {name!r}")
        return path

    def open_session(self, name: str, size: int) -> Session:
        if not 16 <= size <= 2048:
            raise ApiError(400, f"size must be within [16, 2048], got {size}")
        bundle = assets.load_bundle(self.bundle_path(name))
        avatar = engine.Avatar(bundle, self.raster, self.occlusion)
        session = Session(
            id=uuid.uuid4().hex,
            avatar=avatar,
            camera=engine.default_camera(bundle.rig, size),
            params=bundle.params,
            lighting=bundle.lighting,
            size=size,
        )
        with self.lock:
            if len(self.sessions) >= self.max_sessions:
                raise ApiError(409, f"session limit reached ({self.max_sessions})")
            self.sessions[session.id] = session
        return session

    def get(self, session_id: str) -> Session:
        with self.lock:
            session = self.sessions.get(session_id)
        if session is None:
            raise ApiError(404, f"session {session_id} is gone")
        return session


def _error_response(status: int, message: str, exc: Exception | None = None) -> JSONResponse:
    diagnostic = uuid.uuid4().hex[:8]
    log.log(
        logging.ERROR if status >= 500 else logging.INFO,
        "[%s] %s", diagnostic, message, exc_info=exc,
    )
    return JSONResponse(
        {"error": message, "diagnostic": diagnostic}, status_code=status
    )


def create_app(
    bundle_dir: str,
    max_sessions: int = 8,
    raster=DEFAULT_CONFIG,
    occlusion=DEFAULT_OCCLUSION,
) -> FastAPI:
    app = FastAPI(title="gausshead editing service")
    state = ServiceState(bundle_dir, max_sessions, raster, occlusion)
    app.state.service = state
    # the editor page is served separately; X-Revision must be exposed or
    # browsers hide it from cross-origin scripts
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
        expose_headers=["X-Revision"],
    )

    @app.exception_handler(ApiError)
    async def _api_error(request: Request, exc: ApiError):
        return _error_response(exc.status, str(exc))

    @app.exception_handler(AssetError)
    async def _asset_error(request: Request, exc: AssetError):
        return _error_response(400, str(exc))

    @app.exception_handler(Exception)
    async def _server_error(request: Request, exc: Exception):
        return _error_response(500, f"internal error: {exc}", exc)

    @app.get("/bundles")
    def list_bundles():
        names = sorted(
            name for name in os.listdir(state.bundle_dir) if name.endswith(".egava")
        )
        return {"bundles": names}

    @app.post("/sessions", status_code=201)
    def open_session(payload: dict = Body(...)):
        if "bundle" not in payload:
            raise ApiError(400, "body must name a bundle")
        size = payload.get("size", 512)
        if not isinstance(size, int):
            raise ApiError(400, "size must be an integer")
        session = state.open_session(payload["bundle"], size)
        rig = session.avatar.bundle.rig
        return {
            "id": session.id,
            "revision": session.revision,
            "size": session.size,
            "schema": {
                "expression": rig.n_expression,
                "eyes": [2, 2],
                "t_tex": int(session.avatar.bundle.textures.albedo.shape[0]),
                "lighting": 27,
            },
        }

    @app.delete("/sessions/{session_id}", status_code=204)
    def close_session(session_id: str):
        session = state.get(session_id)
        with state.lock:
            state.sessions.pop(session_id, None)
        with session.cond:
            session.cond.notify_all()
        return Response(status_code=204)

    @app.patch("/sessions/{session_id}/params")
    def patch_params(session_id: str, payload: dict = Body(...)):
        session = state.get(session_id)
        unknown = set(payload) - _MUTABLE_KEYS
        if unknown:
            raise ApiError(400, f"unknown fields: {', '.join(sorted(unknown))}")
        with session.cond:
            pose_spec = {k: payload[k] for k in ("expression", "jaw", "eyes") if k in payload}
            if pose_spec:
                session.params = assets.parse_params(pose_spec, session.params, "params")
            if "camera" in payload:
                session.camera = assets.parse_camera(
                    payload["camera"], size=session.size, where="camera"
                )
            if "lighting" in payload:
                session.lighting = assets.parse_lighting(payload["lighting"])
            session.revision += 1
            session.cond.notify_all()
            return {"revision": session.revision}

    @app.post("/sessions/{session_id}/texture")
    async def post_texture(
        session_id: str,
        request: Request,
        u0: float = Query(...),
        v0: float = Query(...),
        u1: float = Query(...),
        v1: float = Query(...),
    ):
        session = state.get(session_id)
        data = await request.body()
        try:
            patch = assets.load_png(io.BytesIO(data))
        except AssetError as exc:
            raise ApiError(400, f"cannot decode texture patch ({exc})") from None

        def apply() -> int:
            with session.cond:
                engine.apply_texture_edit(
                    session.avatar.bundle.textures, patch, (u0, v0, u1, v1)
                )
                session.avatar.invalidate_cache()
                session.revision += 1
                session.cond.notify_all()
                return session.revision

        return {"revision": await run_in_threadpool(apply)}

    @app.post("/sessions/{session_id}/hair")
    def post_hair(session_id: str, payload: dict = Body(...)):
        session = state.get(session_id)
        if "bundle" not in payload:
            raise ApiError(400, "body must name a donor bundle")
        donor = assets.load_bundle(state.bundle_path(payload["bundle"]))
        with session.cond:
            swapped = engine.swap_hair(session.avatar.bundle, donor)
            session.avatar = engine.Avatar(swapped, state.raster, state.occlusion)
            session.revision += 1
            session.cond.notify_all()
            return {"revision": session.revision}

    @app.get("/sessions/{session_id}/frame")
    def get_frame(session_id: str):
        session = state.get(session_id)
        revision, png = session.render_png()
        return Response(
            png, media_type="image/png", headers={"X-Revision": str(revision)}
        )

    @app.get("/sessions/{session_id}/export.ply")
    def export_ply(session_id: str):
        session = state.get(session_id)
        with session.cond:
            cloud = session.avatar.cloud_for(session.params)
            data = assets.ply_bytes(cloud)
            revision = session.revision
        return Response(
            data,
            media_type="application/octet-stream",
            headers={
                "X-Revision": str(revision),
                "Content-Disposition": 'attachment; filename="avatar.ply"',
            },
        )

    @app.websocket("/sessions/{session_id}/live")
    async def live(websocket: WebSocket, session_id: str):
        with state.lock:
            session = state.sessions.get(session_id)
        if session is None:
            await websocket.close(code=1008, reason="session gone")
            return
        await websocket.accept()
        sent = -1
        try:
            while True:
                current = await run_in_threadpool(
                    session.wait_newer, sent, KEEPALIVE_SECONDS
                )
                if current > sent:
                    revision, png = await run_in_threadpool(session.render_png)
                    await websocket.send_bytes(struct.pack("<I", revision) + png)
                    sent = revision
                else:  # keepalive; also notices a dropped client
                    await websocket.send_bytes(struct.pack("<I", max(sent, 0)))
        except (WebSocketDisconnect, RuntimeError):
            return

    return app


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="gausshead-service", description="Serve avatar editing sessions."
    )
    parser.add_argument("--port", type=int, default=8601)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--bundle-dir", default=".",
                        help="directory the service may open bundles from")
    parser.add_argument("--max-sessions", type=int, default=8)
    args = parser.parse_args(argv)

    import uvicorn

    logging.basicConfig(level=logging.INFO)
    uvicorn.run(
        create_app(args.bundle_dir, args.max_sessions),
        host=args.host,
        port=args.port,
        log_level="info",
    )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
