// Wire protocol mirror for the teleop service (proto_version 1, JSON text
// frames). Field names and validation rules match the service exactly; the
// service rejects goals outside the workspace box, so the console clamps
// before sending.

export const PROTO_VERSION = 1;

export type Vec3 = [number, number, number];

export const KEYPOINT_NAMES = ["head", "left_hand", "right_hand"] as const;
export type KeypointName = (typeof KEYPOINT_NAMES)[number];

export interface HelloMessage {
  proto_version: number;
  type: "hello";
  role: "driver" | "viewer";
}

export interface GoalMessage {
  proto_version: number;
  type: "goal";
  t_client_ms: number;
  head: Vec3;
  left_hand: Vec3;
  right_hand: Vec3;
  head_vel?: Vec3;
  left_hand_vel?: Vec3;
  right_hand_vel?: Vec3;
}

export interface WelcomeMessage {
  proto_version: number;
  type: "welcome";
  role: "driver" | "viewer";
  tick_hz: number;
  model: string;
  dof_count: number;
  body_count: number;
  keypoints: string[];
  keypoint_bodies: number[];
  body_parent: number[];
  workspace: { lo: Vec3; hi: Vec3 };
}

export interface StateMessage {
  proto_version: number;
  type: "state";
  t_server_ms: number;
  tick: number;
  status: "idle" | "tracking";
  root_pos: Vec3;
  root_quat: [number, number, number, number];
  dof_pos: number[];
  body_pos: Vec3[];
  keypoint_errors: Record<string, number>;
  goal_echo_t_client_ms: number | null;
}

export interface HeartbeatMessage {
  proto_version: number;
  type: "heartbeat";
  t_server_ms: number;
}

export interface ErrorMessage {
  proto_version: number;
  type: "error";
  error: string;
}

export type ServerMessage =
  | WelcomeMessage
  | StateMessage
  | HeartbeatMessage
  | ErrorMessage;

function isVec3(v: unknown): v is Vec3 {
  return (
    Array.isArray(v) && v.length === 3 && v.every((x) => Number.isFinite(x))
  );
}

function isVec3Array(v: unknown): v is Vec3[] {
  return Array.isArray(v) && v.every(isVec3);
}

function isNumberArray(v: unknown): v is number[] {
  return Array.isArray(v) && v.every((x) => Number.isFinite(x));
}

/** Parses one incoming frame. Returns null for anything malformed: the
 *  session must survive garbage without throwing mid-handler. */
export function parseServerMessage(raw: string): ServerMessage | null {
  let msg: any;
  try {
    msg = JSON.parse(raw);
  } catch {
    return null;
  }
  if (typeof msg !== "object" || msg === null) return null;
  if (msg.proto_version !== PROTO_VERSION) return null;
  switch (msg.type) {
    case "welcome":
      if (msg.role !== "driver" && msg.role !== "viewer") return null;
      if (!Number.isFinite(msg.tick_hz) || typeof msg.model !== "string") return null;
      if (!isNumberArray(msg.keypoint_bodies) || !isNumberArray(msg.body_parent)) return null;
      if (!msg.workspace || !isVec3(msg.workspace.lo) || !isVec3(msg.workspace.hi)) return null;
      return msg as WelcomeMessage;
    case "state":
      if (msg.status !== "idle" && msg.status !== "tracking") return null;
      if (!Number.isFinite(msg.t_server_ms) || !Number.isFinite(msg.tick)) return null;
      if (!isVec3(msg.root_pos) || !isVec3Array(msg.body_pos)) return null;
      if (typeof msg.keypoint_errors !== "object" || msg.keypoint_errors === null) return null;
      return msg as StateMessage;
    case "heartbeat":
      return Number.isFinite(msg.t_server_ms) ? (msg as HeartbeatMessage) : null;
    case "error":
      return typeof msg.error === "string" ? (msg as ErrorMessage) : null;
    default:
      return null;
  }
}

export function makeHello(role: "driver" | "viewer"): HelloMessage {
  return { proto_version: PROTO_VERSION, type: "hello", role };
}

export function clampToBox(p: Vec3, lo: Vec3, hi: Vec3): Vec3 {
  return [
    Math.min(Math.max(p[0], lo[0]), hi[0]),
    Math.min(Math.max(p[1], lo[1]), hi[1]),
    Math.min(Math.max(p[2], lo[2]), hi[2]),
  ];
}

export function makeGoal(
  tClientMs: number,
  handles: Record<KeypointName, Vec3>,
): GoalMessage {
  return {
    proto_version: PROTO_VERSION,
    type: "goal",
    t_client_ms: tClientMs,
    head: [...handles.head],
    left_hand: [...handles.left_hand],
    right_hand: [...handles.right_hand],
  };
}

/** Client-side copy of the service's goal checks, used to prove outgoing
 *  frames are well formed before they hit the socket. */
export function goalIsValid(msg: unknown, lo: Vec3, hi: Vec3): boolean {
  const m = msg as any;
  if (typeof m !== "object" || m === null) return false;
  if (m.proto_version !== PROTO_VERSION || m.type !== "goal") return false;
  if (!Number.isFinite(m.t_client_ms)) return false;
  for (const name of KEYPOINT_NAMES) {
    const p = m[name];
    if (!isVec3(p)) return false;
    for (let i = 0; i < 3; i++) {
      if (p[i] < lo[i] || p[i] > hi[i]) return false;
    }
    const vel = m[`${name}_vel`];
    if (vel !== undefined && !isVec3(vel)) return false;
  }
  return true;
}
