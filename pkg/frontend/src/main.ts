// Console entry point: wires the session to the canvas and the readout
// panel. The render loop runs on requestAnimationFrame regardless of how
// the socket is doing; it only ever draws the latest snapshot.

import {
  Camera,
  defaultCamera,
  drawScene,
  pickHandle,
  project,
  unprojectOnPlane,
} from "./figure.js";
import { KEYPOINT_NAMES, KeypointName, Vec3 } from "./messages.js";
import { SessionClient, browserTransport } from "./session.js";

const canvas = document.getElementById("scene") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const el = (id: string) => document.getElementById(id)!;

const session = new SessionClient(browserTransport);
const cam: Camera = defaultCamera();

let selected: KeypointName | null = null;
let dragging: KeypointName | null = null;
let orbiting = false;
let lastMouse: [number, number] = [0, 0];

function canvasSize(): [number, number] {
  const rect = canvas.getBoundingClientRect();
  if (canvas.width !== rect.width * devicePixelRatio) {
    canvas.width = rect.width * devicePixelRatio;
    canvas.height = rect.height * devicePixelRatio;
  }
  return [rect.width, rect.height];
}

function mousePos(ev: MouseEvent): [number, number] {
  const rect = canvas.getBoundingClientRect();
  return [ev.clientX - rect.left, ev.clientY - rect.top];
}

canvas.addEventListener("mousedown", (ev) => {
  const [sx, sy] = mousePos(ev);
  const [w, h] = canvasSize();
  const snap = session.snapshot();
  if (ev.button === 0 && snap.handles !== null) {
    const hit = pickHandle(sx, sy, snap.handles, cam, w, h);
    if (hit !== null) {
      selected = hit;
      dragging = hit;
      lastMouse = [sx, sy];
      return;
    }
  }
  orbiting = true;
  lastMouse = [sx, sy];
});

canvas.addEventListener("mousemove", (ev) => {
  const [sx, sy] = mousePos(ev);
  const [w, h] = canvasSize();
  if (dragging !== null) {
    const snap = session.snapshot();
    const cur = snap.handles?.[dragging];
    if (cur !== undefined) {
      const hit = unprojectOnPlane(sx, sy, cur, cam, w, h);
      if (hit !== null) session.dragHandle(dragging, hit);
    }
  } else if (orbiting) {
    cam.yaw -= (sx - lastMouse[0]) * 0.01;
    cam.pitch = Math.min(
      1.45,
      Math.max(-1.45, cam.pitch + (sy - lastMouse[1]) * 0.01),
    );
  }
  lastMouse = [sx, sy];
});

window.addEventListener("mouseup", () => {
  dragging = null;
  orbiting = false;
});

canvas.addEventListener("wheel", (ev) => {
  ev.preventDefault();
  cam.dist = Math.min(10, Math.max(0.5, cam.dist * (1 + ev.deltaY * 0.001)));
});

// arrow keys nudge the selected handle 2 cm in the ground plane,
// PageUp/PageDown move it vertically
const NUDGE = 0.02;
const KEY_DELTAS: Record<string, Vec3> = {
  ArrowUp: [NUDGE, 0, 0],
  ArrowDown: [-NUDGE, 0, 0],
  ArrowLeft: [0, NUDGE, 0],
  ArrowRight: [0, -NUDGE, 0],
  PageUp: [0, 0, NUDGE],
  PageDown: [0, 0, -NUDGE],
};

window.addEventListener("keydown", (ev) => {
  const delta = KEY_DELTAS[ev.key];
  if (delta === undefined || selected === null) return;
  ev.preventDefault();
  session.nudgeHandle(selected, delta);
});

(el("connect") as HTMLButtonElement).addEventListener("click", () => {
  session.close();
  session.connect((el("url") as HTMLInputElement).value);
});

function fmtErr(m: number): string {
  return `${(m * 1000).toFixed(0)} mm`;
}

function render(): void {
  const [w, h] = canvasSize();
  ctx.setTransform(devicePixelRatio, 0, 0, devicePixelRatio, 0, 0);
  const snap = session.snapshot();

  el("status").textContent = snap.status;
  el("status").className = snap.status;
  el("role").textContent = snap.role ?? "-";
  el("latency").textContent =
    snap.latencyMs === null ? "-" : `${snap.latencyMs.toFixed(0)} ms`;
  el("stale").textContent = snap.stale ? "STALE" : "live";
  el("stale").className = snap.stale ? "stale" : "live";
  el("banner").textContent = snap.banner ?? "";
  el("hint").textContent = snap.hint ?? "";
  el("mode").textContent = snap.state?.status ?? "-";

  const errs = snap.state?.keypoint_errors ?? {};
  el("errors").textContent = KEYPOINT_NAMES.map((n) =>
    n in errs ? `${n}: ${fmtErr(errs[n])}` : `${n}: -`,
  ).join("   ");

  if (snap.state !== null && snap.welcome !== null) {
    drawScene(ctx, w, h, cam, {
      bodyPos: snap.state.body_pos,
      bodyParent: snap.welcome.body_parent,
      keypointBodies: snap.welcome.keypoint_bodies,
      keypointNames: KEYPOINT_NAMES,
      handles: snap.handles,
      selected,
      errors: errs,
      tracking: snap.state.status === "tracking",
    });
  } else {
    ctx.clearRect(0, 0, w, h);
    ctx.fillStyle = "#5a646e";
    ctx.font = "14px system-ui, sans-serif";
    ctx.fillText("no state yet", w / 2 - 40, h / 2);
  }
  requestAnimationFrame(render);
}

requestAnimationFrame(render);

// quick sanity export for the browser console
(window as any).teleop = { session, cam, project };
