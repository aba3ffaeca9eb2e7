// Scripted end-to-end run against a live service with the mock gateway:
// two rated rounds plus a final mark, exercising only the documented API.
// Mirrors the console's acceptance: the post-reload view equals server
// state and every rating round-trips exactly.

import { spawn, spawnSync, type ChildProcess } from "node:child_process";
import { mkdtempSync, readdirSync, writeFileSync } from "node:fs";
import { createServer } from "node:net";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import WebSocket from "ws";

import { ApiClient } from "../src/api.js";
import { EventFeed, type WebSocketLike } from "../src/events.js";
import { SessionStore } from "../src/state.js";
import type { SessionDoc, SessionEvent } from "../src/types.js";

const PYTHON = process.env.PYTHON ?? "python3";

function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const srv = createServer();
    srv.listen(0, "127.0.0.1", () => {
      const address = srv.address();
      if (address === null || typeof address === "string") {
        reject(new Error("no port"));
        return;
      }
      srv.close(() => resolve(address.port));
    });
  });
}

let proc: ChildProcess | null = null;
let api: ApiClient;
let datasetDir: string;
let segmentFiles: string[];

beforeAll(async () => {
  const work = mkdtempSync(join(tmpdir(), "console-it-"));
  datasetDir = join(work, "ds");
  const synth = spawnSync(
    PYTHON,
    ["-m", "neurodesign.cli", "--seed", "21", "synth", "--out", datasetDir,
     "--n-per-class", "8", "--duration-s", "2.0", "--noise-sigma", "1.0"],
    { stdio: "inherit" },
  );
  expect(synth.status).toBe(0);
  segmentFiles = readdirSync(join(datasetDir, "segments"))
    .sort()
    .map((name) => join(datasetDir, "segments", name));

  const port = await freePort();
  const configPath = join(work, "service.json");
  writeFileSync(configPath, JSON.stringify({
    host: "127.0.0.1",
    port,
    state_dir: join(work, "state"),
    artifacts_dir: join(work, "artifacts"),
    gateway: { mode: "mock" },
  }));
  proc = spawn(PYTHON, ["-m", "neurodesign.cli", "serve", "--config", configPath], {
    stdio: "ignore",
  });
  api = new ApiClient(`http://127.0.0.1:${port}`);

  const deadline = Date.now() + 30_000;
  for (;;) {
    try {
      await api.health();
      break;
    } catch {
      if (Date.now() > deadline) {
        throw new Error("service did not come up");
      }
      await new Promise((r) => setTimeout(r, 200));
    }
  }
  const { job_id } = await api.startTraining(datasetDir, { folds: 4 });
  const job = await api.waitForTraining(job_id);
  expect(job.status).toBe("done");
}, 180_000);

afterAll(() => {
  proc?.kill("SIGKILL");
});

async function loadStore(sessionId: string): Promise<SessionStore> {
  const store = new SessionStore((ref) => api.artifactUrl(ref));
  const session = await api.getSession(sessionId);
  const report = session.rounds.length > 0 ? await api.getReport(sessionId) : null;
  store.ingest(session, report);
  store.connection = "connected";
  return store;
}

describe("console against a live service", () => {
  it("completes two rated rounds and a final mark", async () => {
    const created = await api.createSession("it-user", { sessionId: "console-e2e" });
    expect(created.status).toBe("active");

    const events: SessionEvent[] = [];
    const feed = new EventFeed(
      api.eventsUrl(created.session_id),
      (url) => new WebSocket(url) as unknown as WebSocketLike,
      (event) => events.push(event),
      () => {},
    );
    feed.start();
    try {
      // ---- round 1: rate all five; top-rated becomes the next base ----
      const round1 = await api.submitRound(created.session_id, {
        file: segmentFiles[0],
        start_s: 0,
        seed: 1,
      });
      expect(round1.type).toBe("candidates_ready");
      if (round1.type !== "candidates_ready") throw new Error("unreachable");
      expect(round1.candidates).toHaveLength(5);

      let store = await loadStore(created.session_id);
      let vm = store.view();
      expect(vm.openRound?.index).toBe(1);
      expect(vm.openRound?.candidates).toHaveLength(5);

      const ratings1: Record<string, number> = {};
      round1.candidates.forEach((c, i) => {
        ratings1[c.id] = [3, 6, 2, 4, 1][i];
      });
      const closed1 = await api.submitRatings(created.session_id, ratings1);
      if (closed1.type === "candidates_ready") throw new Error("unexpected event");
      const top1 = round1.candidates[1];
      expect(closed1.selected).toBe(top1.id);

      // server-confirmed: the next round's base is the top-rated image
      let session = await api.getSession(created.session_id);
      expect(session.base_image).toBe(top1.image);
      // ratings round-trip exactly
      expect(session.rounds[0].ratings).toEqual(ratings1);

      // ---- round 2: rate, then mark candidate index 3 as final ----
      const round2 = await api.submitRound(created.session_id, {
        file: segmentFiles[9],
        start_s: 0,
        seed: 2,
      });
      if (round2.type !== "candidates_ready") throw new Error("unreachable");
      const ratings2: Record<string, number> = {};
      round2.candidates.forEach((c, i) => {
        ratings2[c.id] = [2, 3, 5, 7, 4][i];
      });
      const mark = round2.candidates[3].id;
      const finalEvent = await api.submitRatings(created.session_id, ratings2, mark);
      if (finalEvent.type === "candidates_ready") throw new Error("unexpected event");
      expect(finalEvent.finalized).toBe(true);

      // ---- finalized view: controls disabled, final mark recorded ----
      store = await loadStore(created.session_id);
      vm = store.view();
      expect(vm.status).toBe("finalized");
      expect(vm.controlsEnabled).toBe(false);
      expect(vm.openRound).toBeNull();
      expect(vm.finalMark).toEqual({ round: 2, candidate: mark });

      session = await api.getSession(created.session_id);
      expect(session.rounds[1].ratings).toEqual(ratings2);
      expect(session.status).toBe("finalized");

      // finalized sessions accept no further rounds (409 surfaces as ApiError)
      await expect(
        api.submitRound(created.session_id, { file: segmentFiles[0], start_s: 0 }),
      ).rejects.toMatchObject({ status: 409 });

      // ---- reload: a fresh store rebuilt from GET equals the live view ----
      const reloaded = await loadStore(created.session_id);
      expect(JSON.stringify(reloaded.view())).toBe(JSON.stringify(vm));

      // ---- the event feed observed the whole session, and only this one ----
      const deadline = Date.now() + 5_000;
      while (events.length < 4 && Date.now() < deadline) {
        await new Promise((r) => setTimeout(r, 50));
      }
      const kinds = events.map((e) => e.type);
      expect(kinds.filter((k) => k === "candidates_ready")).toHaveLength(2);
      expect(kinds.filter((k) => k === "ratings_submitted")).toHaveLength(1);
      expect(kinds.filter((k) => k === "finalized")).toHaveLength(1);
      for (const event of events) {
        expect(event.session_id).toBe(created.session_id);
      }
    } finally {
      feed.stop();
    }
  }, 120_000);

  it("report trace matches the ratings submitted through the console", async () => {
    const report = await api.getReport("console-e2e");
    // round 1 mean of (3, 6, 2, 4, 1) = 3.2; round 2 was finalized with full
    // ratings (2, 3, 5, 7, 4) so it also appears, mean 4.2
    expect(report.per_round.map((r) => r.mean_rating)).toEqual([3.2, 4.2]);
    expect(report.final_mark?.round).toBe(2);
  });

  it("surfaces validation errors with field detail", async () => {
    const session = await api.createSession("it-user-2");
    await api.submitRound(session.session_id, { file: segmentFiles[1], start_s: 0 });
    const current = await api.getSession(session.session_id);
    const open = current.rounds[0];
    const bad: Record<string, number> = {};
    for (const c of open.candidates) {
      bad[c.id] = 9;
    }
    await expect(api.submitRatings(session.session_id, bad)).rejects.toMatchObject({
      status: 400,
    });
  });
});
