"""Local HTTP/WebSocket service that the puppeteer control panel drives.

The WebSocket stream coalesces: while a render is in flight, newer poses
overwrite the pending slot and only the newest one is rendered, keeping
latency bounded during slider drags.
"""

from __future__ import annotations

import asyncio
import json
from concurrent.futures import ThreadPoolExecutor

from fastapi import FastAPI, HTTPException, Request, WebSocket, WebSocketDisconnect
from fastapi.responses import PlainTextResponse, Response

from .imgio import png_bytes
from .runtime import AvatarRuntime, PoseRequest

__all__ = ["create_app"]


def create_app(runtime: AvatarRuntime) -> FastAPI:
    app = FastAPI(title="uvavatar service")
    executor = ThreadPoolExecutor(max_workers=2)

    def render_png(pose: PoseRequest) -> bytes:
        out = runtime.animate(pose)
        return png_bytes(out.image)

    @app.get("/healthz", response_class=PlainTextResponse)
    async def healthz() -> str:
        return "ok"

    @app.get("/avatar/meta")
    async def meta() -> dict:
        return {
            "D": runtime.rect.d,
            "uv": {"height": runtime.asset.height, "width": runtime.asset.width},
            "expression_count": runtime.model.k_exp,
            "default_camera": runtime.default_orbit(),
            "image_size": runtime.default_image_size,
        }

    @app.post("/render")
    async def render_endpoint(request: Request) -> Response:
        try:
            body = await request.json()
        except Exception:
            raise HTTPException(status_code=400, detail="body is not valid JSON")
        try:
            pose = PoseRequest.from_json(body)
        except (ValueError, TypeError) as exc:
            raise HTTPException(status_code=400, detail=f"malformed pose: {exc}")
        loop = asyncio.get_running_loop()
        try:
            png = await loop.run_in_executor(executor, render_png, pose)
        except Exception as exc:  # render failures are server-side errors
            raise HTTPException(status_code=500, detail=f"render failed: {exc}")
        return Response(content=png, media_type="image/png")

    @app.websocket("/stream")
    async def stream(ws: WebSocket) -> None:
        await ws.accept()
        latest: list[str | None] = [None]
        pending = asyncio.Event()
        closed = asyncio.Event()

        async def reader():
            try:
                while True:
                    latest[0] = await ws.receive_text()
                    pending.set()
            except WebSocketDisconnect:
                closed.set()
                pending.set()

        reader_task = asyncio.create_task(reader())
        loop = asyncio.get_running_loop()
        try:
            while True:
                await pending.wait()
                pending.clear()
                if closed.is_set():
                    break
                msg = latest[0]
                try:
                    pose = PoseRequest.from_json(json.loads(msg))
                except (ValueError, TypeError) as exc:
                    await ws.send_text(json.dumps({"error": f"malformed pose: {exc}"}))
                    continue
                try:
                    png = await loop.run_in_executor(executor, render_png, pose)
                except Exception as exc:
                    await ws.send_text(json.dumps({"error": f"render failed: {exc}"}))
                    continue
                await ws.send_bytes(png)
        finally:
            reader_task.cancel()

    return app
