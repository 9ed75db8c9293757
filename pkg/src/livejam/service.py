"""WebSocket service exposing the session core.

Control plane: JSON text frames, each with a "type" field. Data plane:
binary frames with an 8-byte header. Outgoing audio is "MRTA" + uint32 LE
chunk index + interleaved s16le stereo at 48 kHz; incoming injected audio is
"MRTI" + uint32 LE output-timeline timestamp + the same sample format.
"""
from __future__ import annotations

import asyncio
import json
from dataclasses import replace

from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from . import stream
from .session import SessionConfig, SessionCore


def create_app(defaults: SessionConfig | None = None, paced: bool = False) -> FastAPI:
    defaults = defaults or SessionConfig()
    app = FastAPI(title="livejam")

    @app.get("/healthz")
    async def healthz():
        return {"status": "ok", "backend": defaults.backend}

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        await ws.accept()
        session = SessionCore(_session_config(defaults, ws.query_params))
        send_lock = asyncio.Lock()
        gen_task: asyncio.Task | None = None

        async def send_json(obj) -> None:
            async with send_lock:
                await ws.send_text(json.dumps(obj))

        async def generation_loop() -> None:
            loop = asyncio.get_running_loop()
            next_deadline = None
            while session.running:
                chunk = await loop.run_in_executor(None, session.generate_next)
                if paced:
                    now = loop.time()
                    if next_deadline is None:
                        next_deadline = now
                    await asyncio.sleep(max(0.0, next_deadline - now))
                    next_deadline = max(next_deadline, now) + stream.CHUNK_SECONDS
                async with send_lock:
                    await ws.send_bytes(chunk.audio_frame())
                await send_json(chunk.metrics_message())

        try:
            while True:
                frame = await ws.receive()
                if frame.get("type") == "websocket.disconnect":
                    break
                if frame.get("bytes") is not None:
                    for reply in session.handle_inject_frame(frame["bytes"]):
                        await send_json(reply)
                    continue
                text = frame.get("text")
                try:
                    message = json.loads(text)
                except (TypeError, json.JSONDecodeError):
                    await send_json({"type": "error", "code": "bad_json",
                                     "reason": "text frames must be JSON objects"})
                    continue
                was_running = session.running
                for reply in session.handle_message(message):
                    await send_json(reply)
                if session.running and not was_running:
                    gen_task = asyncio.create_task(generation_loop())
                elif was_running and not session.running and gen_task is not None:
                    await gen_task
                    gen_task = None
        except WebSocketDisconnect:
            pass
        finally:
            session.running = False
            if gen_task is not None:
                try:
                    await gen_task
                except Exception:
                    pass

    return app


def _session_config(defaults: SessionConfig, params) -> SessionConfig:
    """Per-connection overrides via query string (seed and backend only)."""
    cfg = defaults
    if "seed" in params:
        cfg = replace(cfg, seed=int(params["seed"]))
    if "backend" in params:
        cfg = replace(cfg, backend=params["backend"])
    return cfg


def serve(defaults: SessionConfig, host: str = "127.0.0.1", port: int = 8765,
          paced: bool = True) -> None:
    import uvicorn

    uvicorn.run(create_app(defaults, paced=paced), host=host, port=port, log_level="info")
