"""HTTP + WebSocket inference service.

One model is loaded at startup and shared read-only across sessions. Each
WebSocket connection is a session holding its own latent noise vector;
requests within a session are handled strictly in arrival order.

Wire protocol (text JSON frames):
  client -> server  {"type":"pose","q":[w,x,y,z],"t":[tx,ty,tz],
                     "z":"hold"|"resample","seed":int?}
  server -> client  {"type":"frame","w":W,"h":H,"pix":"<base64>",
                     "gen_ms":float,"z_id":int}
                    or {"type":"error","msg":str}
"""

from __future__ import annotations

import base64
import itertools
import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse, PlainTextResponse
from pydantic import BaseModel

from .dataset import default_calibration, unit_to_u8
from .evaluation import sample_at
from .geometry import Calibration, GridStats, RigidTransform
from .nn.checkpoint import Checkpoint, load_checkpoint, spec_hash
from .phantom import Phantom, render_slice


class ServiceError(RuntimeError):
    pass


def _parse_pose(q, t) -> RigidTransform:
    q = np.asarray(q, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if q.shape != (4,) or t.shape != (3,):
        raise ValueError("pose must have q[4] and t[3]")
    n = float(np.linalg.norm(q))
    if abs(n - 1.0) > 1e-3:
        raise ValueError(f"quaternion norm {n:.6f} deviates from 1 beyond 1e-3")
    return RigidTransform(q / n, t)


class ModelContext:
    """Loaded generator shared across sessions; generation is serialized
    because layer forward passes cache activations on the layer objects."""

    def __init__(self, ckpt: Checkpoint, calibration: Calibration | None = None,
                 phantom: Phantom | None = None):
        if ckpt.grid_stats is None:
            raise ServiceError("checkpoint has no grid statistics; cannot build conditioning")
        self.generator = ckpt.generator
        self.stats: GridStats = ckpt.grid_stats
        cal = calibration
        if cal is None and "calibration" in ckpt.train_config:
            cal = Calibration.from_json_dict(ckpt.train_config["calibration"])
        self.calibration = cal or default_calibration(ckpt.generator.spec.out_dims)
        self.dims = ckpt.generator.spec.out_dims
        self.noise_dim = ckpt.generator.spec.noise_dim
        self.spec_hash = ckpt.hash
        self.phantom = phantom
        self._lock = threading.Lock()

    def generate(self, pose: RigidTransform, z: np.ndarray) -> tuple[bytes, float]:
        t0 = time.perf_counter()
        with self._lock:
            img = sample_at(self.generator, self.calibration, self.stats, pose, z=z)
        gen_ms = (time.perf_counter() - t0) * 1e3
        return unit_to_u8(img).tobytes(), gen_ms


@dataclass
class Session:
    id: int
    z: np.ndarray
    z_id: int = 0
    last_pose: RigidTransform | None = None
    rng: np.random.Generator = field(default_factory=np.random.default_rng)

    def resolve_z(self, z_mode: str, seed: int | None) -> np.ndarray:
        if z_mode == "resample":
            rng = np.random.default_rng(seed) if seed is not None else self.rng
            self.z = rng.standard_normal(self.z.shape[0])
            self.z_id += 1
        elif z_mode != "hold":
            raise ValueError(f"unknown z mode {z_mode!r}")
        return self.z


class SampleBody(BaseModel):
    q: list[float]
    t: list[float]
    seed: int | None = None


def create_app(ctx: ModelContext) -> FastAPI:
    app = FastAPI(title="usgan service")
    session_ids = itertools.count(1)
    registry_lock = threading.Lock()
    sessions: dict[int, Session] = {}

    @app.get("/healthz")
    def healthz():
        return PlainTextResponse("ok")

    @app.get("/info")
    def info():
        w, h = ctx.dims
        return {"w": w, "h": h, "noise_dim": ctx.noise_dim, "spec_hash": ctx.spec_hash}

    @app.post("/sample")
    def sample(body: SampleBody):
        try:
            pose = _parse_pose(body.q, body.t)
        except ValueError as e:
            return JSONResponse({"error": str(e)}, status_code=422)
        z = np.random.default_rng(body.seed).standard_normal(ctx.noise_dim)
        pix, gen_ms = ctx.generate(pose, z)
        w, h = ctx.dims
        return {"w": w, "h": h, "pix": base64.b64encode(pix).decode(), "gen_ms": gen_ms}

    if ctx.phantom is not None:

        @app.get("/render_gt")
        def render_gt(pose: str):
            try:
                vals = [float(v) for v in pose.split(",")]
                if len(vals) != 7:
                    raise ValueError("pose must be qw,qx,qy,qz,tx,ty,tz")
                p = _parse_pose(vals[:4], vals[4:])
            except ValueError as e:
                return JSONResponse({"error": str(e)}, status_code=422)
            img = render_slice(ctx.phantom, ctx.calibration, p, ctx.dims, speckle_seed=None)
            w, h = ctx.dims
            return {"w": w, "h": h, "pix": base64.b64encode(unit_to_u8(img).tobytes()).decode()}

    @app.websocket("/ws")
    async def ws(sock: WebSocket):
        await sock.accept()
        sid = next(session_ids)
        sess = Session(sid, np.random.default_rng(sid).standard_normal(ctx.noise_dim))
        with registry_lock:
            sessions[sid] = sess
        try:
            while True:
                try:
                    msg = json.loads(await sock.receive_text())
                except json.JSONDecodeError:
                    await sock.send_json({"type": "error", "msg": "malformed JSON"})
                    continue
                if msg.get("type") != "pose":
                    await sock.send_json(
                        {"type": "error", "msg": f"unknown message type {msg.get('type')!r}"}
                    )
                    continue
                try:
                    pose = _parse_pose(msg.get("q"), msg.get("t"))
                    z = sess.resolve_z(msg.get("z", "hold"), msg.get("seed"))
                except (ValueError, TypeError) as e:
                    await sock.send_json({"type": "error", "msg": str(e)})
                    continue
                sess.last_pose = pose
                pix, gen_ms = ctx.generate(pose, z)
                w, h = ctx.dims
                await sock.send_json(
                    {
                        "type": "frame",
                        "w": w,
                        "h": h,
                        "pix": base64.b64encode(pix).decode(),
                        "gen_ms": gen_ms,
                        "z_id": sess.z_id,
                    }
                )
        except WebSocketDisconnect:
            pass
        finally:
            with registry_lock:
                sessions.pop(sid, None)

    return app


def serve(ckpt_path: str | Path, port: int = 8080, host: str = "127.0.0.1",
          phantom: Phantom | None = None) -> None:
    """Load the checkpoint and run the service (blocking)."""
    import uvicorn

    try:
        ckpt = load_checkpoint(ckpt_path)
    except Exception as e:
        raise ServiceError(f"cannot load checkpoint {ckpt_path}: {e}") from e
    app = create_app(ModelContext(ckpt, phantom=phantom))
    uvicorn.run(app, host=host, port=port, log_level="warning")
