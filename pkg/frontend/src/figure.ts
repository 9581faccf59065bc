// Orbit camera, projection math and stick-figure drawing. The scene is
// z-up meters; the camera orbits a target point. Projection and picking are
// pure functions so drag math can be tested without a canvas.

import { KeypointName, Vec3 } from "./messages.js";

export interface Camera {
  yaw: number;   // rad about world z
  pitch: number; // rad above horizon, clamped away from the poles
  dist: number;  // m from target
  target: Vec3;
  fovDeg: number;
}

export function defaultCamera(): Camera {
  return { yaw: -0.9, pitch: 0.35, dist: 2.6, target: [0, 0, 0.5], fovDeg: 50 };
}

const NEAR = 0.05;

function sub(a: Vec3, b: Vec3): Vec3 {
  return [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
}

function dot(a: Vec3, b: Vec3): number {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

function cross(a: Vec3, b: Vec3): Vec3 {
  return [
    a[1] * b[2] - a[2] * b[1],
    a[2] * b[0] - a[0] * b[2],
    a[0] * b[1] - a[1] * b[0],
  ];
}

function normalize(a: Vec3): Vec3 {
  const n = Math.hypot(a[0], a[1], a[2]) || 1;
  return [a[0] / n, a[1] / n, a[2] / n];
}

export interface CameraBasis {
  eye: Vec3;
  right: Vec3;
  up: Vec3;
  fwd: Vec3;
}

export function cameraBasis(cam: Camera): CameraBasis {
  const cp = Math.cos(cam.pitch);
  const eye: Vec3 = [
    cam.target[0] + cam.dist * cp * Math.cos(cam.yaw),
    cam.target[1] + cam.dist * cp * Math.sin(cam.yaw),
    cam.target[2] + cam.dist * Math.sin(cam.pitch),
  ];
  const fwd = normalize(sub(cam.target, eye));
  const right = normalize(cross(fwd, [0, 0, 1]));
  const up = cross(right, fwd);
  return { eye, right, up, fwd };
}

function focal(cam: Camera, h: number): number {
  return (0.5 * h) / Math.tan((cam.fovDeg * Math.PI) / 360);
}

export interface Projected {
  x: number;
  y: number;
  depth: number; // m along the view axis
}

/** World point to canvas pixels; null when behind the near plane. */
export function project(
  p: Vec3,
  cam: Camera,
  w: number,
  h: number,
): Projected | null {
  const b = cameraBasis(cam);
  const d = sub(p, b.eye);
  const depth = dot(d, b.fwd);
  if (depth < NEAR) return null;
  const f = focal(cam, h);
  return {
    x: w / 2 + (f * dot(d, b.right)) / depth,
    y: h / 2 - (f * dot(d, b.up)) / depth,
    depth,
  };
}

/** Pixel back to the world point on the camera-parallel plane through
 *  planeP. Dragging on this plane keeps the handle under the cursor at a
 *  constant view depth. */
export function unprojectOnPlane(
  sx: number,
  sy: number,
  planeP: Vec3,
  cam: Camera,
  w: number,
  h: number,
): Vec3 | null {
  const b = cameraBasis(cam);
  const f = focal(cam, h);
  const dir: Vec3 = [
    b.fwd[0] + (b.right[0] * (sx - w / 2)) / f + (b.up[0] * (h / 2 - sy)) / f,
    b.fwd[1] + (b.right[1] * (sx - w / 2)) / f + (b.up[1] * (h / 2 - sy)) / f,
    b.fwd[2] + (b.right[2] * (sx - w / 2)) / f + (b.up[2] * (h / 2 - sy)) / f,
  ];
  const denom = dot(dir, b.fwd);
  if (denom < 1e-9) return null;
  const t = dot(sub(planeP, b.eye), b.fwd) / denom;
  if (t < NEAR) return null;
  return [
    b.eye[0] + t * dir[0],
    b.eye[1] + t * dir[1],
    b.eye[2] + t * dir[2],
  ];
}

/** Nearest handle within maxPx of the cursor, or null. */
export function pickHandle(
  sx: number,
  sy: number,
  handles: Record<KeypointName, Vec3>,
  cam: Camera,
  w: number,
  h: number,
  maxPx = 14,
): KeypointName | null {
  let best: KeypointName | null = null;
  let bestD = maxPx;
  for (const name of Object.keys(handles) as KeypointName[]) {
    const pr = project(handles[name], cam, w, h);
    if (pr === null) continue;
    const d = Math.hypot(pr.x - sx, pr.y - sy);
    if (d <= bestD) {
      bestD = d;
      best = name;
    }
  }
  return best;
}

// ---- drawing ----

export interface SceneView {
  bodyPos: Vec3[];
  bodyParent: number[];
  keypointBodies: number[];
  keypointNames: readonly string[];
  handles: Record<string, Vec3> | null;
  selected: string | null;
  errors: Record<string, number>;
  tracking: boolean;
}

const HANDLE_COLORS: Record<string, string> = {
  head: "#e6b422",
  left_hand: "#4f9dde",
  right_hand: "#de6a4f",
};

function line(
  ctx: CanvasRenderingContext2D,
  a: Projected | null,
  b: Projected | null,
): void {
  if (a === null || b === null) return;
  ctx.beginPath();
  ctx.moveTo(a.x, a.y);
  ctx.lineTo(b.x, b.y);
  ctx.stroke();
}

export function drawScene(
  ctx: CanvasRenderingContext2D,
  w: number,
  h: number,
  cam: Camera,
  view: SceneView,
): void {
  ctx.clearRect(0, 0, w, h);

  // ground grid, 0.5 m pitch
  ctx.strokeStyle = "#2a2f36";
  ctx.lineWidth = 1;
  for (let i = -4; i <= 4; i++) {
    const u = i * 0.5;
    line(ctx, project([u, -2, 0], cam, w, h), project([u, 2, 0], cam, w, h));
    line(ctx, project([-2, u, 0], cam, w, h), project([2, u, 0], cam, w, h));
  }

  // skeleton
  ctx.strokeStyle = "#c8d0d8";
  ctx.lineWidth = 2.5;
  const proj = view.bodyPos.map((p) => project(p, cam, w, h));
  view.bodyParent.forEach((parent, i) => {
    if (parent >= 0) line(ctx, proj[parent] ?? null, proj[i] ?? null);
  });
  for (const pr of proj) {
    if (pr === null) continue;
    ctx.fillStyle = "#c8d0d8";
    ctx.beginPath();
    ctx.arc(pr.x, pr.y, 3, 0, 2 * Math.PI);
    ctx.fill();
  }

  // actual keypoints: dots colored by the handle they answer to
  view.keypointBodies.forEach((body, i) => {
    const pr = proj[body];
    if (pr === null || pr === undefined) return;
    ctx.fillStyle = HANDLE_COLORS[view.keypointNames[i]] ?? "#ffffff";
    ctx.beginPath();
    ctx.arc(pr.x, pr.y, 5, 0, 2 * Math.PI);
    ctx.fill();
  });

  // goal handles: crosshairs, dashed guide to the matching keypoint
  if (view.handles !== null) {
    for (const [name, pos] of Object.entries(view.handles)) {
      const pr = project(pos, cam, w, h);
      if (pr === null) continue;
      const color = HANDLE_COLORS[name] ?? "#ffffff";
      const i = view.keypointNames.indexOf(name);
      const actual = i >= 0 ? proj[view.keypointBodies[i]] : null;
      if (actual && view.tracking) {
        ctx.strokeStyle = color;
        ctx.lineWidth = 1;
        ctx.setLineDash([4, 4]);
        line(ctx, pr, actual);
        ctx.setLineDash([]);
      }
      const r = name === view.selected ? 12 : 9;
      ctx.strokeStyle = color;
      ctx.lineWidth = name === view.selected ? 2.5 : 1.5;
      ctx.beginPath();
      ctx.arc(pr.x, pr.y, r, 0, 2 * Math.PI);
      ctx.stroke();
      ctx.beginPath();
      ctx.moveTo(pr.x - r, pr.y);
      ctx.lineTo(pr.x + r, pr.y);
      ctx.moveTo(pr.x, pr.y - r);
      ctx.lineTo(pr.x, pr.y + r);
      ctx.stroke();
      ctx.fillStyle = color;
      ctx.font = "11px system-ui, sans-serif";
      ctx.fillText(name, pr.x + r + 4, pr.y - 4);
    }
  }
}
