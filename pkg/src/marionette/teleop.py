"""Realtime teleoperation service: 3-point goals in, humanoid state out.

Runs a sparse-goal student policy in the simulator and exposes it over a
WebSocket. Wire protocol (proto_version 1, JSON text frames):

client -> server
  {"proto_version": 1, "type": "hello", "role": "driver" | "viewer"}
  {"proto_version": 1, "type": "goal", "t_client_ms": <number>,
   "head": [x, y, z], "left_hand": [x, y, z], "right_hand": [x, y, z]}
  goal positions are meters in world frame and must lie inside the workspace
  box; optional "<name>_vel" 3-vectors command target velocities.

server -> client
  {"proto_version": 1, "type": "welcome", "role": granted role, ...}
  {"proto_version": 1, "type": "state", ...}        every control tick
  {"proto_version": 1, "type": "heartbeat", ...}    every heartbeat_s
  {"proto_version": 1, "type": "error", "error": reason}

The control loop is the single sim authority and never blocks on clients:
each consumer has a bounded queue and the oldest frame is dropped when a
slow client falls behind. Goals follow zero-order hold, never extrapolated.
The first client asking for the driver role gets it; later driver requests
are granted viewer instead. When the driver disconnects or goes quiet the
last goal holds and the status flips to idle after driver_timeout_s.
"""

from __future__ import annotations

import asyncio
import json
import sys
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from . import geom
from .model import HumanoidModel
from .net import GaussianPolicy, load_policy
from .obs import HistoryBuffer, build_student_obs, record_width, step_record
from .sim import SimParams, Simulator

PROTO_VERSION = 1
KEYPOINT_NAMES = ("head", "left_hand", "right_hand")


@dataclass
class TeleopConfig:
    host: str = "127.0.0.1"
    port: int = 8765
    tick_hz: float = 50.0
    heartbeat_s: float = 1.0
    driver_timeout_s: float = 5.0
    queue_size: int = 8
    # workspace box for incoming goal positions, m
    workspace_lo: tuple = (-2.0, -2.0, 0.0)
    workspace_hi: tuple = (2.0, 2.0, 2.5)

    def __post_init__(self):
        if self.tick_hz <= 0:
            raise ValueError("tick_hz must be positive")
        if self.queue_size < 1:
            raise ValueError("queue_size must be >= 1")
        if np.any(np.asarray(self.workspace_lo) >= np.asarray(self.workspace_hi)):
            raise ValueError("workspace box is empty")


def _vec3(value) -> np.ndarray | None:
    arr = np.asarray(value, dtype=np.float64)
    if arr.shape != (3,) or not np.isfinite(arr).all():
        return None
    return arr


def parse_goal(msg: dict, lo: np.ndarray, hi: np.ndarray):
    """Validates a goal message. Returns (parsed, None) or (None, reason)."""
    if msg.get("proto_version") != PROTO_VERSION:
        return None, f"unsupported proto_version {msg.get('proto_version')!r}"
    t_client = msg.get("t_client_ms")
    if not isinstance(t_client, (int, float)) or not np.isfinite(t_client):
        return None, "t_client_ms must be a finite number"
    pos = np.zeros((3, 3))
    vel = np.zeros((3, 3))
    for i, name in enumerate(KEYPOINT_NAMES):
        p = _vec3(msg.get(name))
        if p is None:
            return None, f"{name} must be a finite 3-vector"
        if np.any(p < lo) or np.any(p > hi):
            return None, f"{name} outside workspace box"
        pos[i] = p
        if f"{name}_vel" in msg:
            v = _vec3(msg[f"{name}_vel"])
            if v is None:
                return None, f"{name}_vel must be a finite 3-vector"
            vel[i] = v
    return {"pos": pos, "vel": vel, "t_client_ms": float(t_client)}, None


class _GoalHold:
    """Reference-frame stand-in carrying only the 3 commanded keypoints."""

    def __init__(self, body_count: int, idx: np.ndarray):
        self.body_pos = np.zeros((body_count, 3))
        self.body_lin_vel = np.zeros((body_count, 3))
        self._idx = idx

    def set(self, pos: np.ndarray, vel: np.ndarray) -> None:
        self.body_pos[self._idx] = pos
        self.body_lin_vel[self._idx] = vel


class TeleopService:
    """One sim, one policy, many sockets. See module docstring for the wire
    protocol. Use start_background()/shutdown() from synchronous code."""

    def __init__(self, model: HumanoidModel, policy: GaussianPolicy,
                 cfg: TeleopConfig | None = None, action_scale: float = 0.25,
                 history_steps: int = 25, sim_params: SimParams | None = None):
        self.model = model
        self.policy = policy
        self.cfg = cfg or TeleopConfig()
        self.action_scale = action_scale
        self.history_steps = history_steps
        self.params = sim_params or SimParams(fixed_base=not model.feet)
        self.idx = model.points3_indices()
        self.port: int | None = None          # bound port, set once serving
        self.tick = 0
        self._lo = np.asarray(self.cfg.workspace_lo, dtype=np.float64)
        self._hi = np.asarray(self.cfg.workspace_hi, dtype=np.float64)
        self._clients: dict = {}              # ws -> {"queue", "role"}
        self._driver = None
        self._goal = None                     # dict from parse_goal
        self._goal_wall = None                # monotonic receipt time
        self._stop = asyncio.Event()
        self._loop: asyncio.AbstractEventLoop | None = None
        self._thread: threading.Thread | None = None

    @classmethod
    def from_checkpoint(cls, path, model: HumanoidModel,
                        cfg: TeleopConfig | None = None) -> "TeleopService":
        policy, meta = load_policy(path)
        if meta.get("variant") != "points3":
            raise ValueError(f"teleop needs a points3 student, got {meta.get('variant')!r}")
        if meta.get("model_hash") not in (None, model.hash()):
            raise ValueError("checkpoint was built for a different model")
        return cls(model, policy, cfg,
                   action_scale=meta.get("action_scale", 0.25),
                   history_steps=meta.get("history_steps", 25))

    # ---- control loop ----

    def _initial_state(self, sim: Simulator):
        root = np.array([0.0, 0.0, self.model.default_root_height])
        return sim.make_state(root_pos=root, root_quat=geom.quat_identity(),
                              dof_pos=self.model.default_pose)

    def _snapshot(self, state, errors: np.ndarray, status: str) -> dict:
        echo = None if self._goal is None else self._goal["t_client_ms"]
        return {
            "proto_version": PROTO_VERSION,
            "type": "state",
            "t_server_ms": time.time() * 1000.0,
            "tick": self.tick,
            "status": status,
            "root_pos": state.root_pos.tolist(),
            "root_quat": state.root_quat.tolist(),
            "dof_pos": state.dof_pos.tolist(),
            "body_pos": state.body_pose.pos.tolist(),
            "keypoint_errors": {n: float(errors[i]) for i, n in enumerate(KEYPOINT_NAMES)},
            "goal_echo_t_client_ms": echo,
        }

    async def _control_loop(self) -> None:
        cfg = self.cfg
        dt = 1.0 / cfg.tick_hz
        sim = Simulator(self.model, self.params)
        state = self._initial_state(sim)
        history = HistoryBuffer(self.history_steps, record_width(self.model))
        goal_hold = _GoalHold(self.model.body_count, self.idx)
        # before any client drives, hold the spawn keypoints
        goal_hold.set(state.body_pose.pos[self.idx], np.zeros((3, 3)))
        last_action = np.zeros(self.model.dof_count)
        heartbeat_every = max(1, int(round(cfg.heartbeat_s * cfg.tick_hz)))
        next_t = time.monotonic()
        while not self._stop.is_set():
            if self._goal is not None:
                goal_hold.set(self._goal["pos"], self._goal["vel"])
            obs = build_student_obs(self.model, state, goal_hold, last_action,
                                    history, "points3").data
            action = self.policy.mean(obs)
            target = self.model.default_pose + self.action_scale * action
            state = sim.step(state, target)
            history.push(step_record(state, action))
            last_action = action
            self.tick += 1

            now = time.monotonic()
            fresh = (self._goal_wall is not None
                     and now - self._goal_wall <= cfg.driver_timeout_s)
            status = "tracking" if (self._driver is not None and fresh) else "idle"
            errors = np.linalg.norm(state.body_pose.pos[self.idx] - goal_hold.body_pos[self.idx],
                                    axis=1)
            self._broadcast(self._snapshot(state, errors, status))
            if self.tick % heartbeat_every == 0:
                self._broadcast({"proto_version": PROTO_VERSION, "type": "heartbeat",
                                 "t_server_ms": time.time() * 1000.0})
            next_t += dt
            delay = next_t - time.monotonic()
            if delay > 0:
                try:
                    await asyncio.wait_for(self._stop.wait(), timeout=delay)
                except asyncio.TimeoutError:
                    pass
            else:
                # behind schedule: yield but do not accumulate debt
                next_t = time.monotonic()
                await asyncio.sleep(0)

    def _broadcast(self, msg: dict) -> None:
        text = json.dumps(msg)
        for entry in self._clients.values():
            q: asyncio.Queue = entry["queue"]
            if q.full():
                q.get_nowait()   # drop-oldest, never block the loop
            q.put_nowait(text)

    # ---- socket handling ----

    def _welcome(self, role: str) -> dict:
        return {
            "proto_version": PROTO_VERSION,
            "type": "welcome",
            "role": role,
            "tick_hz": self.cfg.tick_hz,
            "model": self.model.name,
            "dof_count": self.model.dof_count,
            "body_count": self.model.body_count,
            "keypoints": list(KEYPOINT_NAMES),
            "keypoint_bodies": self.idx.tolist(),
            "body_parent": self.model.body_parent.tolist(),
            "workspace": {"lo": self._lo.tolist(), "hi": self._hi.tolist()},
        }

    @staticmethod
    def _error(reason: str) -> str:
        return json.dumps({"proto_version": PROTO_VERSION, "type": "error", "error": reason})

    async def _sender(self, ws, q: asyncio.Queue) -> None:
        while True:
            await ws.send(await q.get())

    async def _handler(self, ws) -> None:
        entry = {"queue": asyncio.Queue(maxsize=self.cfg.queue_size), "role": "viewer"}
        self._clients[ws] = entry
        sender = asyncio.create_task(self._sender(ws, entry["queue"]))
        try:
            async for raw in ws:
                try:
                    msg = json.loads(raw)
                    if not isinstance(msg, dict):
                        raise ValueError("not an object")
                except ValueError:
                    await ws.send(self._error("malformed JSON frame"))
                    continue
                kind = msg.get("type")
                if kind == "hello":
                    if msg.get("proto_version") != PROTO_VERSION:
                        await ws.send(self._error(
                            f"unsupported proto_version {msg.get('proto_version')!r}"))
                        continue
                    role = "viewer"
                    if msg.get("role") == "driver" and self._driver is None:
                        self._driver = ws
                        role = "driver"
                    entry["role"] = role
                    await ws.send(json.dumps(self._welcome(role)))
                elif kind == "goal":
                    if ws is not self._driver:
                        await ws.send(self._error("driver role required"))
                        continue
                    goal, reason = parse_goal(msg, self._lo, self._hi)
                    if goal is None:
                        await ws.send(self._error(reason))
                        continue
                    self._goal = goal
                    self._goal_wall = time.monotonic()
                else:
                    await ws.send(self._error(f"unknown message type {kind!r}"))
        finally:
            sender.cancel()
            del self._clients[ws]
            if self._driver is ws:
                self._driver = None   # goals keep zero-order hold

    # ---- lifecycle ----

    async def run(self, ready: threading.Event | None = None) -> None:
        """Serves until stop() is called. Binds cfg.port (0 = ephemeral)."""
        import websockets

        self._loop = asyncio.get_running_loop()
        self._stop = asyncio.Event()
        async with websockets.serve(self._handler, self.cfg.host, self.cfg.port) as server:
            self.port = server.sockets[0].getsockname()[1]
            print(f"teleop: listening on ws://{self.cfg.host}:{self.port} "
                  f"at {self.cfg.tick_hz:g} Hz", file=sys.stderr, flush=True)
            if ready is not None:
                ready.set()
            await self._control_loop()

    def serve_forever(self) -> None:
        asyncio.run(self.run())

    def start_background(self) -> "TeleopService":
        """Runs the service on a daemon thread; returns once the port is bound."""
        ready = threading.Event()
        self._thread = threading.Thread(target=lambda: asyncio.run(self.run(ready)),
                                        daemon=True)
        self._thread.start()
        if not ready.wait(timeout=10.0):
            raise RuntimeError("teleop service failed to start")
        return self

    def stop(self) -> None:
        if self._loop is not None:
            self._loop.call_soon_threadsafe(self._stop.set)

    def shutdown(self) -> None:
        self.stop()
        if self._thread is not None:
            self._thread.join(timeout=10.0)
            self._thread = None


def serve(checkpoint_path, model: HumanoidModel, port: int = 8765,
          tick_hz: float = 50.0, host: str = "127.0.0.1") -> TeleopService:
    """Blocking entry point used by the command line."""
    cfg = TeleopConfig(host=host, port=port, tick_hz=tick_hz)
    service = TeleopService.from_checkpoint(checkpoint_path, model, cfg)
    service.serve_forever()
    return service
