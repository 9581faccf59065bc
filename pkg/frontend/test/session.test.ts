import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { PROTO_VERSION, Vec3, goalIsValid } from "../src/messages.js";
import { SessionClient, Transport } from "../src/session.js";

const LO: Vec3 = [-2, -2, 0];
const HI: Vec3 = [2, 2, 2.5];

class FakeTransport implements Transport {
  sent: string[] = [];
  closed = false;
  onopen: (() => void) | null = null;
  onmessage: ((data: string) => void) | null = null;
  onclose: (() => void) | null = null;

  send(data: string): void {
    this.sent.push(data);
  }

  close(): void {
    this.closed = true;
  }

  welcome(role: "driver" | "viewer" = "driver"): void {
    this.onmessage?.(
      JSON.stringify({
        proto_version: PROTO_VERSION,
        type: "welcome",
        role,
        tick_hz: 50,
        model: "toy_arm",
        dof_count: 2,
        body_count: 3,
        keypoints: ["head", "left_hand", "right_hand"],
        keypoint_bodies: [1, 2, 2],
        body_parent: [-1, 0, 1],
        workspace: { lo: LO, hi: HI },
      }),
    );
  }

  state(fields: Record<string, unknown> = {}): void {
    this.onmessage?.(
      JSON.stringify({
        proto_version: PROTO_VERSION,
        type: "state",
        t_server_ms: Date.now(),
        tick: 1,
        status: "tracking",
        root_pos: [0, 0, 0],
        root_quat: [1, 0, 0, 0],
        dof_pos: [0, 0],
        body_pos: [
          [0, 0, 0],
          [0, 0, 0.1],
          [0, 0, 0.6],
        ],
        keypoint_errors: { head: 0.0, left_hand: 0.01, right_hand: 0.01 },
        goal_echo_t_client_ms: null,
        ...fields,
      }),
    );
  }
}

let transports: FakeTransport[];

function makeSession(opts = {}): { session: SessionClient; first: FakeTransport } {
  const session = new SessionClient(() => {
    const t = new FakeTransport();
    transports.push(t);
    return t;
  }, opts);
  session.connect("ws://test");
  const first = transports[0];
  first.onopen?.();
  return { session, first };
}

function lastGoal(t: FakeTransport): any {
  const goals = t.sent.map((s) => JSON.parse(s)).filter((m) => m.type === "goal");
  return goals[goals.length - 1];
}

beforeEach(() => {
  transports = [];
  vi.useFakeTimers();
});

afterEach(() => {
  vi.useRealTimers();
});

describe("connection and roles", () => {
  it("says hello with the requested role and takes the granted one", () => {
    const { session, first } = makeSession();
    expect(JSON.parse(first.sent[0])).toEqual({
      proto_version: PROTO_VERSION,
      type: "hello",
      role: "driver",
    });
    first.welcome("driver");
    expect(session.status).toBe("connected");
    expect(session.role).toBe("driver");
    expect(session.banner).toBeNull();
  });

  it("falls back to viewer with a visible banner", () => {
    const { session, first } = makeSession();
    first.welcome("viewer");
    expect(session.role).toBe("viewer");
    expect(session.banner).toMatch(/viewer/);
  });

  it("retries with doubling backoff and resets after a welcome", () => {
    const { session, first } = makeSession();
    first.welcome();
    first.onclose?.();
    expect(session.status).toBe("retrying");
    expect(transports.length).toBe(1);
    vi.advanceTimersByTime(500);
    expect(transports.length).toBe(2);

    transports[1].onopen?.();
    transports[1].onclose?.(); // welcome never arrived: backoff grows
    vi.advanceTimersByTime(999);
    expect(transports.length).toBe(2);
    vi.advanceTimersByTime(1);
    expect(transports.length).toBe(3);

    transports[2].onopen?.();
    transports[2].welcome(); // resets the ladder
    transports[2].onclose?.();
    vi.advanceTimersByTime(500);
    expect(transports.length).toBe(4);
  });

  it("stays quiet after a user close", () => {
    const { session, first } = makeSession();
    first.welcome();
    session.close();
    expect(first.closed).toBe(true);
    first.onclose?.();
    vi.advanceTimersByTime(60_000);
    expect(transports.length).toBe(1);
    expect(session.status).toBe("disconnected");
  });

  it("survives malformed incoming frames", () => {
    const { session, first } = makeSession();
    first.welcome();
    for (const junk of ["{", "null", '{"type":"state"}', '{"proto_version":1,"type":"??"}']) {
      first.onmessage?.(junk);
    }
    expect(session.status).toBe("connected");
  });

  it("shows service errors as a hint", () => {
    const { session, first } = makeSession();
    first.welcome();
    first.onmessage?.(
      JSON.stringify({ proto_version: 1, type: "error", error: "left_hand outside workspace box" }),
    );
    expect(session.hint).toMatch(/outside workspace/);
  });
});

describe("goal handles", () => {
  it("initializes handles from the first state at the keypoint bodies", () => {
    const { session, first } = makeSession();
    first.welcome();
    first.state();
    expect(session.handles).toEqual({
      head: [0, 0, 0.1],
      left_hand: [0, 0, 0.6],
      right_hand: [0, 0, 0.6],
    });
  });

  it("clamps drags to the workspace box and says so", () => {
    const { session, first } = makeSession();
    first.welcome();
    first.state();
    const got = session.dragHandle("left_hand", [9, -9, 99]);
    expect(got).toEqual([2, -2, 2.5]);
    expect(session.hint).toMatch(/clamped/);
    expect(lastGoal(first).left_hand).toEqual([2, -2, 2.5]);
  });

  it("ignores drags without the driver role and hints why", () => {
    const { session, first } = makeSession();
    first.welcome("viewer");
    first.state();
    expect(session.dragHandle("head", [0, 0, 0.5])).toBeNull();
    expect(session.hint).toMatch(/viewer/);
    expect(first.sent.filter((s) => JSON.parse(s).type === "goal")).toEqual([]);
  });

  it("drops non-finite drag positions", () => {
    const { session, first } = makeSession();
    first.welcome();
    first.state();
    expect(session.dragHandle("head", [Number.NaN, 0, 0.5])).toBeNull();
    expect(lastGoal(first)).toBeUndefined();
  });

  it("coalesces a burst of drags to the 50 Hz budget", () => {
    const { session, first } = makeSession();
    first.welcome();
    first.state();
    for (let i = 0; i <= 10; i++) {
      session.dragHandle("left_hand", [0.01 * i, 0, 0.6]);
    }
    let goals = first.sent.map((s) => JSON.parse(s)).filter((m) => m.type === "goal");
    expect(goals.length).toBe(1); // leading edge went out immediately

    vi.advanceTimersByTime(20); // trailing edge carries the newest position
    goals = first.sent.map((s) => JSON.parse(s)).filter((m) => m.type === "goal");
    expect(goals.length).toBe(2);
    expect(goals[1].left_hand[0]).toBeCloseTo(0.1, 12);

    vi.advanceTimersByTime(10_000); // idle: zero-order hold, no chatter
    goals = first.sent.map((s) => JSON.parse(s)).filter((m) => m.type === "goal");
    expect(goals.length).toBe(2);
  });

  it("sends ~50 messages for a second of continuous dragging", () => {
    const { session, first } = makeSession();
    first.welcome();
    first.state();
    for (let ms = 0; ms < 1000; ms += 2) {
      session.dragHandle("left_hand", [0.0005 * ms, 0, 0.6]);
      vi.advanceTimersByTime(2);
    }
    const goals = first.sent.map((s) => JSON.parse(s)).filter((m) => m.type === "goal");
    expect(goals.length).toBeGreaterThanOrEqual(45);
    expect(goals.length).toBeLessThanOrEqual(55);
  });

  it("never puts a malformed frame on the wire", () => {
    const { session, first } = makeSession();
    first.welcome();
    first.state();
    const wild: Vec3[] = [
      [9e9, -9e9, 9e9],
      [Number.NaN, 0, 0],
      [0.1, Number.POSITIVE_INFINITY, 0.2],
      [-3, 3, -1],
      [0.2, 0.1, 0.6],
    ];
    for (const [i, p] of wild.entries()) {
      session.dragHandle(
        (["head", "left_hand", "right_hand"] as const)[i % 3],
        p,
      );
      vi.advanceTimersByTime(25);
    }
    for (const raw of first.sent) {
      const msg = JSON.parse(raw);
      if (msg.type === "hello") continue;
      expect(goalIsValid(msg, LO, HI)).toBe(true);
    }
  });

  it("drops a pending send after a demotion", () => {
    const { session, first } = makeSession();
    first.welcome();
    first.state();
    session.dragHandle("head", [0, 0, 0.2]);
    session.dragHandle("head", [0, 0, 0.3]); // queued behind the throttle
    first.welcome("viewer"); // server restarted negotiation, say
    vi.advanceTimersByTime(100);
    const goals = first.sent.map((s) => JSON.parse(s)).filter((m) => m.type === "goal");
    expect(goals.length).toBe(1);
  });
});

describe("health readouts", () => {
  it("measures latency from a fresh goal echo only", () => {
    const { session, first } = makeSession();
    first.welcome();
    first.state();
    vi.setSystemTime(10_000);
    session.dragHandle("left_hand", [0.1, 0, 0.6]);
    const sentAt = lastGoal(first).t_client_ms;
    expect(sentAt).toBe(10_000);

    vi.setSystemTime(10_035);
    first.state({ goal_echo_t_client_ms: sentAt });
    expect(session.latencyMs).toBe(35);

    // held echo repeats forever; it must not inflate the estimate
    vi.setSystemTime(19_000);
    first.state({ goal_echo_t_client_ms: sentAt });
    expect(session.latencyMs).toBe(35);
  });

  it("flags the feed stale after 200 ms without a state", () => {
    const { session, first } = makeSession();
    first.welcome();
    vi.setSystemTime(5_000);
    first.state();
    expect(session.isStale(5_150)).toBe(false);
    expect(session.isStale(5_201)).toBe(true);
    vi.setSystemTime(5_210); // fresh frame clears the flag
    first.state();
    expect(session.isStale(5_250)).toBe(false);
  });
});
