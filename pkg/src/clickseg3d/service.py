"""Session-oriented annotation service.

Embodies the precompute-once design: creating a session voxelizes the
scene and runs the backbone a single time; every click round only reruns
the decoder. Sessions are independent; requests to the same session are
serialized by a per-session lock.
"""

from __future__ import annotations

import io
import json
import threading
import time
import uuid
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, HTTPException, Query, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import PlainTextResponse, Response

from . import autodiff as ad
from .encoding import Click
from .errors import ClickSegError, InvalidInput, NothingToUndo, ParseError
from .model import InteractiveSegmentationModel
from .scene import (
    GeneratorSpec,
    PointCloud,
    cloud_from_payload,
    devoxelize_labels,
    generate_synthetic_scene,
    save_ply,
)


@dataclass
class Session:
    id: str
    cloud: PointCloud
    grid: object
    features: object
    scene_positional: np.ndarray
    clicks: list = field(default_factory=list)
    last_mask_labels: np.ndarray | None = None  # voxel-level
    backbone_seconds: float = 0.0
    decode_seconds: list = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)

    @property
    def max_region(self) -> int:
        return max((c.region for c in self.clicks), default=0)


def _resolve_scene(payload: dict) -> PointCloud:
    if "scene" in payload:
        return cloud_from_payload(payload["scene"])
    if "scene_id" in payload:
        sid = str(payload["scene_id"])
        if sid.startswith("synthetic-"):
            try:
                seed = int(sid.split("-", 1)[1])
            except ValueError:
                raise InvalidInput(f"bad synthetic scene id {sid!r}")
            return generate_synthetic_scene(seed).cloud
        raise InvalidInput(f"unknown scene id {sid!r}")
    raise InvalidInput("payload must contain 'scene' or 'scene_id'")


def create_app(
    model: InteractiveSegmentationModel,
    max_points: int = 500_000,
) -> FastAPI:
    app = FastAPI(title="clickseg3d annotation service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    sessions: dict[str, Session] = {}
    app.state.sessions = sessions
    app.state.model = model

    def get_session(session_id: str) -> Session:
        session = sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id}")
        return session

    def run_decode(session: Session):
        """Decoder pass over cached features; updates the session mask."""
        region_ids = sorted({0} | {c.region for c in session.clicks})
        with ad.no_grad():
            result = model.decode(
                session.grid,
                session.features,
                session.clicks,
                region_ids=region_ids,
                scene_positional=session.scene_positional,
            )
        session.last_mask_labels = result.mask.labels
        session.decode_seconds.append(result.decode_seconds)
        return result

    def mask_response(session: Session, result) -> dict:
        point_labels = devoxelize_labels(session.grid, session.last_mask_labels)
        payload = {
            "session_id": session.id,
            "labels": point_labels.tolist(),
            "num_clicks": len(session.clicks),
            "decode_ms": result.decode_seconds * 1000.0,
        }
        if session.cloud.labels is not None:
            from .metrics import iou

            regions = sorted({c.region for c in session.clicks} - {0})
            payload["per_object_iou"] = {
                str(r): iou(point_labels, session.cloud.labels, r) for r in regions
            }
        return payload

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.get("/model")
    def model_info():
        return {
            "checkpoint": model.checkpoint_id,
            "config": model.config.to_dict(),
        }

    @app.post("/sessions")
    async def create_session(request: Request):
        try:
            payload = await request.json()
        except Exception:
            raise HTTPException(status_code=400, detail="request body must be JSON")
        try:
            cloud = _resolve_scene(payload)
        except (InvalidInput, ParseError) as e:
            raise HTTPException(status_code=400, detail=str(e))
        if len(cloud) > max_points:
            raise HTTPException(
                status_code=413, detail=f"scene exceeds {max_points} points"
            )
        with ad.no_grad():
            grid = model.voxelize(cloud)
            t0 = time.perf_counter()
            features = model.forward_backbone(grid)
            backbone_seconds = time.perf_counter() - t0
            scene_pos = model.scene_positional(grid)
        session = Session(
            id=uuid.uuid4().hex,
            cloud=cloud,
            grid=grid,
            features=features,
            scene_positional=scene_pos,
            backbone_seconds=backbone_seconds,
        )
        sessions[session.id] = session
        with session.lock:
            run_decode(session)
        return {
            "session_id": session.id,
            "num_points": len(cloud),
            "num_voxels": grid.num_voxels,
            "backbone_ms": backbone_seconds * 1000.0,
            "has_color": cloud.features.shape[1] >= 6,
            "has_labels": cloud.labels is not None,
        }

    @app.post("/sessions/{session_id}/clicks")
    async def add_clicks(session_id: str, request: Request):
        session = get_session(session_id)
        try:
            payload = await request.json()
        except Exception:
            raise HTTPException(status_code=400, detail="request body must be JSON")
        raw = payload.get("clicks", [])
        with session.lock:
            ts = len(session.clicks) + 1
            new = []
            try:
                for item in raw:
                    new.append(
                        Click(
                            position=[item["x"], item["y"], item["z"]],
                            region=int(item["region"]),
                            timestamp=ts,
                        )
                    )
                    ts += 1
            except (KeyError, TypeError) as e:
                raise HTTPException(status_code=400, detail=f"invalid click: {e}")
            except ClickSegError as e:
                raise HTTPException(status_code=400, detail=str(e))
            session.clicks.extend(new)
            result = run_decode(session)
            return mask_response(session, result)

    @app.post("/sessions/{session_id}/undo")
    def undo(session_id: str):
        session = get_session(session_id)
        with session.lock:
            if not session.clicks:
                raise HTTPException(status_code=409, detail="nothing to undo")
            session.clicks.pop()
            result = run_decode(session)
            return mask_response(session, result)

    @app.get("/sessions/{session_id}/scene")
    def get_scene(session_id: str):
        """Point data for rendering; lets a client open server-side scenes."""
        session = get_session(session_id)
        cloud = session.cloud
        colors = None
        if cloud.features.shape[1] >= 6:
            colors = cloud.features[:, 3:6].tolist()
        return {
            "session_id": session.id,
            "points": cloud.points.tolist(),
            "colors": colors,
        }

    @app.get("/sessions/{session_id}/mask")
    def get_mask(session_id: str):
        session = get_session(session_id)
        with session.lock:
            point_labels = devoxelize_labels(session.grid, session.last_mask_labels)
            return {
                "session_id": session.id,
                "labels": point_labels.tolist(),
                "num_clicks": len(session.clicks),
            }

    @app.get("/sessions/{session_id}/export")
    def export(session_id: str, format: str = Query("json", pattern="^(ply|json)$")):
        session = get_session(session_id)
        with session.lock:
            point_labels = devoxelize_labels(session.grid, session.last_mask_labels)
            click_log = [c.to_json() for c in session.clicks]
            if format == "json":
                return {
                    "session_id": session.id,
                    "labels": point_labels.tolist(),
                    "clicks": click_log,
                    "checkpoint": model.checkpoint_id,
                }
            buf = io.BytesIO()
            import tempfile, os

            with tempfile.NamedTemporaryFile(suffix=".ply", delete=False) as f:
                tmp = f.name
            try:
                save_ply(session.cloud, tmp, binary=True, labels=point_labels)
                data = open(tmp, "rb").read()
            finally:
                os.unlink(tmp)
            return Response(
                content=data,
                media_type="application/octet-stream",
                headers={
                    "Content-Disposition": f"attachment; filename={session.id}.ply",
                    "X-Click-Log": json.dumps(click_log),
                },
            )

    return app


def serve(model_path, host="127.0.0.1", port=8000, max_points=500_000):
    import uvicorn

    model = InteractiveSegmentationModel.load(model_path)
    app = create_app(model, max_points=max_points)
    uvicorn.run(app, host=host, port=port)
