"""Live demo server: one lockstep simulation streamed over a websocket.

A single asyncio task owns the environment. Each tick it drains client
messages, applies scene edits serially between steps, advances the
simulation once, and broadcasts the resulting frame to every connected
viewer; pausing stops simulated time. Exactly one client (first come)
holds the controller lease and may mutate the scene or the clock; other
clients are read-only viewers. Replay mode streams a recorded trace
instead and rejects all edits.

Every streamed state message is a trace frame (wire.state_frame) plus
the session keys {seq, paused}; seq is strictly increasing for the
lifetime of the server. A finished episode automatically resets with
the next seed so the stream never stalls. Client messages:

    {type: "set_goal", x, y}            {type: "move_obstacle", id, x, y}
    {type: "pause"}                     {type: "resume"}
    {type: "reset", seed?}              {type: "set_speed", hz}

Invalid or unauthorized messages are answered with
{type: "error", reason} sent only to the offending client; applied
edits are acknowledged by the next state frame (immediately when
paused). HTTP: GET / serves the built viewer bundle when present,
GET /healthz reports loop status, the websocket lives at /ws.
"""
from __future__ import annotations

import asyncio
import json
from contextlib import asynccontextmanager, suppress
from pathlib import Path

from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import HTMLResponse, JSONResponse
from fastapi.staticfiles import StaticFiles

from .evaluation import greedy_policy
from .wire import state_frame, validate_frame

SESSION_KEYS = ("seq", "paused")
MIN_HZ, MAX_HZ = 1.0, 240.0
BUNDLE_DIR = Path(__file__).resolve().parents[2] / "frontend" / "dist"

_PLACEHOLDER = """<!doctype html>
<html><head><title>reflexarm</title></head>
<body><h1>reflexarm bridge</h1>
<p>No viewer bundle found. Build the frontend, then restart; the
websocket endpoint is live at <code>/ws</code>.</p></body></html>
"""


def strip_session(message):
    """The trace-comparable part of a streamed state message."""
    return {k: v for k, v in message.items() if k not in SESSION_KEYS}


class SimulationHub:
    """Owns the environment (or a recorded trace) and all client queues."""

    def __init__(self, env=None, policy=None, hz=30.0, seed=0, frames=None):
        if (env is None) == (frames is None):
            raise ValueError("exactly one of env (live) or frames (replay)")
        self.env = env
        self.policy = (policy if policy is None or callable(policy)
                       else greedy_policy(policy))
        if env is not None and self.policy is None:
            raise ValueError("a live hub needs a policy")
        self.mode = "live" if env is not None else "replay"
        if frames is not None:
            frames = [validate_frame(dict(f)) for f in frames]
        self.frames = frames
        self.hz = float(hz)
        self.seed = seed
        self.seq = 0
        self.paused = False
        self.state = None
        self.replay_index = 0
        self.last_message = None
        self.clients = {}
        self.controller = None
        self.inbox = asyncio.Queue()
        self._next_client = 0

    # ------------------------------------------------------------------
    # frame fan-out

    def _envelope(self, frame):
        self.seq += 1
        return {**frame, "seq": self.seq, "paused": self.paused}

    def _broadcast(self, message):
        if message.get("type") == "state":
            self.last_message = message
        for queue in self.clients.values():
            self._offer(queue, message)

    @staticmethod
    def _offer(queue, message):
        # a slow viewer skips frames rather than stalling the loop
        while True:
            try:
                queue.put_nowait(message)
                return
            except asyncio.QueueFull:
                with suppress(asyncio.QueueEmpty):
                    queue.get_nowait()

    def _send_error(self, client_id, reason):
        queue = self.clients.get(client_id)
        if queue is not None:
            self._offer(queue, {"type": "error", "reason": reason})

    # ------------------------------------------------------------------
    # live-mode state machine

    def _reset(self, seed):
        self.seed = seed
        self.state = self.env.reset(seed=seed)
        self._broadcast(self._envelope(state_frame(self.env, self.state)))

    def _step(self):
        obs = self.env.observe(self.state)
        result = self.env.step(self.state, self.policy(obs))
        self.state = result.next_state
        self._broadcast(self._envelope(state_frame(
            self.env, self.state, result.reward, result.done, result.info)))
        if result.done:
            self._reset(self.seed + 1)

    def _apply(self, client_id, msg):
        """One client message, between steps; errors never break the loop."""
        if not isinstance(msg, dict) or "type" not in msg:
            self._send_error(client_id, "messages are JSON objects "
                                        "with a 'type'")
            return
        kind = msg["type"]
        if kind not in ("set_goal", "move_obstacle", "pause", "resume",
                        "reset", "set_speed"):
            self._send_error(client_id, f"unknown message type {kind!r}")
            return
        if self.mode == "replay" and kind not in ("pause", "resume",
                                                  "set_speed"):
            self._send_error(client_id, "edits are disabled in replay mode")
            return
        if self.controller is None:
            self.controller = client_id
        if client_id != self.controller:
            self._send_error(client_id, "another client holds the "
                                        "controller lease")
            return
        try:
            self._apply_controller(client_id, msg, kind)
        except (KeyError, TypeError, ValueError) as exc:
            self._send_error(client_id, str(exc) or repr(exc))

    def _apply_controller(self, client_id, msg, kind):
        if kind == "pause":
            self.paused = True
            self._ack_when_paused()
        elif kind == "resume":
            self.paused = False
        elif kind == "set_speed":
            hz = float(msg["hz"])
            if not MIN_HZ <= hz <= MAX_HZ:
                raise ValueError(f"hz must be in [{MIN_HZ}, {MAX_HZ}]")
            self.hz = hz
            self._ack_when_paused()
        elif kind == "reset":
            if self.mode == "live":
                self._reset(int(msg.get("seed", self.seed + 1)))
        elif kind == "set_goal":
            self.state = self.env.mutate_scene(
                self.state, {"op": "set_goal",
                             "point": [float(msg["x"]), float(msg["y"])]})
            self._ack_when_paused()
        elif kind == "move_obstacle":
            self.state = self.env.mutate_scene(
                self.state, {"op": "move_obstacle", "id": int(msg["id"]),
                             "point": [float(msg["x"]), float(msg["y"])]})
            self._ack_when_paused()

    def _ack_when_paused(self):
        """While paused the loop emits no stepped frames, so acknowledge
        applied messages with a frame of the current (unstepped) state."""
        if not self.paused:
            return
        if self.mode == "live" and self.state is not None:
            self._broadcast(self._envelope(state_frame(self.env,
                                                       self.state)))
        elif self.mode == "replay" and self.replay_index > 0:
            self._broadcast(self._envelope(
                self.frames[self.replay_index - 1]))

    # ------------------------------------------------------------------
    # the loop

    async def run(self):
        if self.mode == "live":
            self._reset(self.seed)
        while True:
            while not self.inbox.empty():
                client_id, msg = self.inbox.get_nowait()
                self._apply(client_id, msg)
            if not self.paused:
                if self.mode == "live":
                    self._step()
                # replay waits for a viewer so the first client sees every
                # frame; disconnecting freezes it until someone returns
                elif self.replay_index < len(self.frames) and self.clients:
                    frame = self.frames[self.replay_index]
                    self.replay_index += 1
                    self._broadcast(self._envelope(frame))
                    if self.replay_index == len(self.frames):
                        self._broadcast({"type": "end",
                                         "frames": len(self.frames)})
            await asyncio.sleep(1.0 / self.hz)

    # ------------------------------------------------------------------
    # websocket sessions

    def _hello(self, is_controller):
        config = {"mode": self.mode, "hz": self.hz, "seq": self.seq,
                  "controller": is_controller}
        if self.env is not None:
            config.update({
                "link_lengths": list(self.env.arm.link_lengths),
                "base": list(self.env.arm.base),
                "d_goal": self.env.cfg.d_goal,
                "k": self.env.cfg.k,
                "workspace": [list(b) for b in
                              (self.state.scene.workspace if self.state
                               else ((0.2, 0.9), (-0.8, 0.8)))],
            })
        if self.frames is not None:
            config["frames"] = len(self.frames)
        return {"type": "hello", "config": config}

    async def attach(self, websocket):
        await websocket.accept()
        client_id = self._next_client
        self._next_client += 1
        queue = asyncio.Queue(maxsize=256)
        self.clients[client_id] = queue
        if self.controller is None:
            self.controller = client_id
        await websocket.send_json(self._hello(self.controller == client_id))
        if self.last_message is not None:
            # reconnecting viewers resume from the current frame
            self._offer(queue, self.last_message)

        async def reader():
            while True:
                text = await websocket.receive_text()
                try:
                    msg = json.loads(text)
                except json.JSONDecodeError:
                    self._send_error(client_id, "message is not JSON")
                    continue
                await self.inbox.put((client_id, msg))

        async def writer():
            while True:
                await websocket.send_json(await queue.get())

        tasks = [asyncio.create_task(reader()),
                 asyncio.create_task(writer())]
        try:
            await asyncio.wait(tasks, return_when=asyncio.FIRST_COMPLETED)
        except WebSocketDisconnect:
            pass
        finally:
            for task in tasks:
                task.cancel()
                with suppress(asyncio.CancelledError, WebSocketDisconnect,
                              RuntimeError):
                    await task
            del self.clients[client_id]
            if self.controller == client_id:
                self.controller = None


def build_app(hub, bundle_dir=None):
    bundle = Path(bundle_dir) if bundle_dir is not None else BUNDLE_DIR

    @asynccontextmanager
    async def lifespan(app):
        task = asyncio.create_task(hub.run())
        try:
            yield
        finally:
            task.cancel()
            with suppress(asyncio.CancelledError):
                await task

    app = FastAPI(lifespan=lifespan)

    @app.get("/healthz")
    async def healthz():
        return JSONResponse({"ok": True, "mode": hub.mode, "seq": hub.seq,
                             "paused": hub.paused,
                             "clients": len(hub.clients)})

    @app.websocket("/ws")
    async def ws(websocket: WebSocket):
        await hub.attach(websocket)

    if (bundle / "index.html").exists():
        app.mount("/", StaticFiles(directory=bundle, html=True),
                  name="bundle")
    else:
        @app.get("/")
        async def index():
            return HTMLResponse(_PLACEHOLDER)

    return app


def run_live(env, agent, port=8765, hz=30.0, seed=0):
    import uvicorn
    hub = SimulationHub(env=env, policy=agent, hz=hz, seed=seed)
    print(f"live demo on http://127.0.0.1:{port} (ws at /ws)")
    uvicorn.run(build_app(hub), host="127.0.0.1", port=port,
                log_level="warning")


def run_replay(frames, port=8765, hz=30.0):
    import uvicorn
    hub = SimulationHub(frames=frames, hz=hz)
    print(f"replaying {len(frames)} frames on http://127.0.0.1:{port}")
    uvicorn.run(build_app(hub), host="127.0.0.1", port=port,
                log_level="warning")
