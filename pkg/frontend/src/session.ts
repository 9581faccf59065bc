// Connection and goal state for one console tab. Owns the single socket,
// negotiates a role, clamps and rate-limits outgoing goals, and exposes a
// snapshot for the render loop, which runs on its own clock.

import {
  GoalMessage,
  KEYPOINT_NAMES,
  KeypointName,
  StateMessage,
  Vec3,
  WelcomeMessage,
  clampToBox,
  makeGoal,
  makeHello,
  parseServerMessage,
} from "./messages.js";

// Minimal socket surface so tests and node can substitute transports.
export interface Transport {
  send(data: string): void;
  close(): void;
  onopen: (() => void) | null;
  onmessage: ((data: string) => void) | null;
  onclose: (() => void) | null;
}

export type TransportFactory = (url: string) => Transport;

export interface SessionOptions {
  requestRole?: "driver" | "viewer";
  // goal messages are coalesced to at most one per interval
  minSendIntervalMs?: number;
  // state feed is flagged stale after this long without a frame
  staleAfterMs?: number;
  backoffInitialMs?: number;
  backoffMaxMs?: number;
}

export type ConnectionStatus =
  | "disconnected"
  | "connecting"
  | "connected"
  | "retrying";

export interface SessionSnapshot {
  status: ConnectionStatus;
  role: "driver" | "viewer" | null;
  banner: string | null;
  hint: string | null;
  latencyMs: number | null;
  stale: boolean;
  welcome: WelcomeMessage | null;
  state: StateMessage | null;
  handles: Record<KeypointName, Vec3> | null;
}

export class SessionClient {
  readonly requestRole: "driver" | "viewer";
  readonly minSendIntervalMs: number;
  readonly staleAfterMs: number;

  status: ConnectionStatus = "disconnected";
  role: "driver" | "viewer" | null = null;
  banner: string | null = null;
  hint: string | null = null;
  latencyMs: number | null = null;
  welcome: WelcomeMessage | null = null;
  lastState: StateMessage | null = null;
  lastStateAtMs: number | null = null;
  handles: Record<KeypointName, Vec3> | null = null;

  private makeTransport: TransportFactory;
  private transport: Transport | null = null;
  private url = "";
  private closedByUser = false;
  private backoffMs: number;
  private readonly backoffInitialMs: number;
  private readonly backoffMaxMs: number;
  private reconnectTimer: ReturnType<typeof setTimeout> | null = null;
  private sendTimer: ReturnType<typeof setTimeout> | null = null;
  private lastSendAtMs = -Infinity;
  private goalDirty = false;
  private lastEchoSeen: number | null = null;
  private listeners: Array<() => void> = [];

  constructor(makeTransport: TransportFactory, opts: SessionOptions = {}) {
    this.makeTransport = makeTransport;
    this.requestRole = opts.requestRole ?? "driver";
    this.minSendIntervalMs = opts.minSendIntervalMs ?? 20;
    this.staleAfterMs = opts.staleAfterMs ?? 200;
    this.backoffInitialMs = opts.backoffInitialMs ?? 500;
    this.backoffMaxMs = opts.backoffMaxMs ?? 5000;
    this.backoffMs = this.backoffInitialMs;
  }

  subscribe(listener: () => void): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private notify(): void {
    for (const l of this.listeners) l();
  }

  connect(url: string): void {
    this.url = url;
    this.closedByUser = false;
    this.open();
  }

  private open(): void {
    this.status = this.status === "retrying" ? "retrying" : "connecting";
    this.notify();
    let sock: Transport;
    try {
      sock = this.makeTransport(this.url);
    } catch {
      this.scheduleReconnect();
      return;
    }
    this.transport = sock;
    sock.onopen = () => {
      sock.send(JSON.stringify(makeHello(this.requestRole)));
    };
    sock.onmessage = (data) => this.handleFrame(data);
    sock.onclose = () => {
      if (this.transport !== sock) return; // superseded socket
      this.transport = null;
      this.role = null;
      if (this.closedByUser) {
        this.status = "disconnected";
        this.notify();
      } else {
        this.scheduleReconnect();
      }
    };
  }

  private scheduleReconnect(): void {
    this.status = "retrying";
    this.banner = `connection lost, retrying in ${(this.backoffMs / 1000).toFixed(1)} s`;
    this.notify();
    this.reconnectTimer = setTimeout(() => {
      this.reconnectTimer = null;
      this.open();
    }, this.backoffMs);
    this.backoffMs = Math.min(this.backoffMs * 2, this.backoffMaxMs);
  }

  close(): void {
    this.closedByUser = true;
    if (this.reconnectTimer !== null) {
      clearTimeout(this.reconnectTimer);
      this.reconnectTimer = null;
    }
    if (this.sendTimer !== null) {
      clearTimeout(this.sendTimer);
      this.sendTimer = null;
    }
    this.transport?.close();
    this.status = "disconnected";
    this.notify();
  }

  // ---- incoming ----

  private handleFrame(data: string): void {
    const msg = parseServerMessage(data);
    if (msg === null) return; // garbage never kills the session
    switch (msg.type) {
      case "welcome":
        this.welcome = msg;
        this.role = msg.role;
        this.status = "connected";
        this.backoffMs = this.backoffInitialMs;
        this.banner =
          msg.role === this.requestRole
            ? null
            : "driver slot is taken: connected as viewer";
        if (this.handles !== null) this.reclampHandles();
        break;
      case "state":
        this.lastState = msg;
        this.lastStateAtMs = Date.now();
        if (this.handles === null) this.initHandles(msg);
        this.updateLatency(msg);
        break;
      case "error":
        this.hint = `service: ${msg.error}`;
        break;
      case "heartbeat":
        break;
    }
    this.notify();
  }

  /** Handles start on the live keypoints so the first drag is relative to
   *  where the figure actually is. */
  private initHandles(state: StateMessage): void {
    const w = this.welcome;
    if (w === null) return;
    const out = {} as Record<KeypointName, Vec3>;
    KEYPOINT_NAMES.forEach((name, i) => {
      const body = w.keypoint_bodies[i];
      const p = state.body_pos[body];
      if (p === undefined) return;
      out[name] = clampToBox([p[0], p[1], p[2]], w.workspace.lo, w.workspace.hi);
    });
    if (Object.keys(out).length === KEYPOINT_NAMES.length) this.handles = out;
  }

  private reclampHandles(): void {
    const w = this.welcome;
    if (w === null || this.handles === null) return;
    for (const name of KEYPOINT_NAMES) {
      this.handles[name] = clampToBox(this.handles[name], w.workspace.lo, w.workspace.hi);
    }
  }

  private updateLatency(state: StateMessage): void {
    const echo = state.goal_echo_t_client_ms;
    // zero-order hold repeats the same echo; only a fresh value measures a trip
    if (echo !== null && echo !== this.lastEchoSeen) {
      this.lastEchoSeen = echo;
      const trip = Date.now() - echo;
      if (trip >= 0 && trip < 60_000) this.latencyMs = trip;
    }
  }

  // ---- outgoing ----

  /** Moves one goal handle. Returns the (clamped) position actually stored,
   *  or null when the drag was ignored. */
  dragHandle(name: KeypointName, pos: Vec3): Vec3 | null {
    if (this.role !== "driver") {
      this.hint = "viewer role: goal drags are ignored";
      this.notify();
      return null;
    }
    const w = this.welcome;
    if (w === null || this.handles === null) return null;
    if (!pos.every(Number.isFinite)) return null; // clamp keeps NaN, drop it here
    const clamped = clampToBox(pos, w.workspace.lo, w.workspace.hi);
    this.handles[name] = clamped;
    this.hint =
      clamped[0] !== pos[0] || clamped[1] !== pos[1] || clamped[2] !== pos[2]
        ? `${name} clamped to workspace box`
        : null;
    this.goalDirty = true;
    this.scheduleSend();
    this.notify();
    return clamped;
  }

  nudgeHandle(name: KeypointName, delta: Vec3): Vec3 | null {
    if (this.handles === null) return null;
    const p = this.handles[name];
    return this.dragHandle(name, [p[0] + delta[0], p[1] + delta[1], p[2] + delta[2]]);
  }

  private scheduleSend(): void {
    if (this.sendTimer !== null) return; // trailing send already queued
    const wait = this.lastSendAtMs + this.minSendIntervalMs - Date.now();
    if (wait <= 0) {
      this.sendGoalNow();
    } else {
      this.sendTimer = setTimeout(() => {
        this.sendTimer = null;
        this.sendGoalNow();
      }, wait);
    }
  }

  private sendGoalNow(): void {
    if (!this.goalDirty || this.transport === null || this.handles === null) return;
    if (this.role !== "driver") return; // demoted while a send was pending
    const goal: GoalMessage = makeGoal(Date.now(), this.handles);
    this.transport.send(JSON.stringify(goal));
    this.lastSendAtMs = Date.now();
    this.goalDirty = false;
  }

  // ---- view ----

  isStale(nowMs: number = Date.now()): boolean {
    return (
      this.status === "connected" &&
      this.lastStateAtMs !== null &&
      nowMs - this.lastStateAtMs > this.staleAfterMs
    );
  }

  snapshot(): SessionSnapshot {
    return {
      status: this.status,
      role: this.role,
      banner: this.banner,
      hint: this.hint,
      latencyMs: this.latencyMs,
      stale: this.isStale(),
      welcome: this.welcome,
      state: this.lastState,
      handles: this.handles,
    };
  }
}

/** Browser transport: thin wrapper keeping WebSocket out of the session
 *  so tests can run without a DOM. */
export function browserTransport(url: string): Transport {
  const ws = new WebSocket(url);
  const t: Transport = {
    send: (data) => ws.send(data),
    close: () => ws.close(),
    onopen: null,
    onmessage: null,
    onclose: null,
  };
  ws.onopen = () => t.onopen?.();
  ws.onmessage = (ev) => t.onmessage?.(String(ev.data));
  ws.onclose = () => t.onclose?.();
  ws.onerror = () => {}; // close always follows
  return t;
}
