import { describe, expect, it } from "vitest";

import { SessionStore } from "../src/state.js";
import type { ReportDoc, SessionDoc } from "../src/types.js";

const artifactUrl = (ref: string | null) =>
  ref === null ? null : `http://svc/artifacts/${ref.replace("sha256:", "")}`;

function sessionDoc(overrides: Partial<SessionDoc> = {}): SessionDoc {
  return {
    session_id: "s1",
    participant_id: "p1",
    base_image: "sha256:aa",
    min_rounds: 8,
    round_index: 1,
    status: "active",
    rounds: [
      {
        index: 1,
        prediction: {
          command: "increase_transparency",
          confidence: 0.78,
          decision_values: [2, 0, -1],
        },
        candidates: ["c0", "c1", "c2", "c3", "c4"].map((id, i) => ({
          id,
          image: `sha256:${id}`,
          prompt_tokens: ["a"],
          model_weight: 0.78,
          provenance: i === 0 ? ("predicted" as const) : ("perturbed" as const),
          seed: i,
          status: "ok",
        })),
        ratings: {},
        selected: null,
        final_mark: null,
      },
    ],
    ...overrides,
  };
}

function reportDoc(): ReportDoc {
  return {
    v: 1,
    session_id: "s1",
    participant_id: "p1",
    status: "active",
    rounds: 1,
    min_rounds: 8,
    per_round: [
      { round: 1, mean_rating: 2.4, max_rating: 3, selected: "c1", selected_rating: 3 },
    ],
    final_mark: null,
  };
}

describe("SessionStore", () => {
  it("exposes the open round with artifact URLs", () => {
    const store = new SessionStore(artifactUrl);
    store.ingest(sessionDoc(), null);
    const vm = store.view();
    expect(vm.openRound?.index).toBe(1);
    expect(vm.openRound?.candidates).toHaveLength(5);
    expect(vm.openRound?.candidates[0].imageUrl).toBe("http://svc/artifacts/c0");
    expect(vm.controlsEnabled).toBe(true);
    expect(vm.baseImageUrl).toBe("http://svc/artifacts/aa");
  });

  it("requires all five draft ratings before enabling submit", () => {
    const store = new SessionStore(artifactUrl);
    store.ingest(sessionDoc(), null);
    for (const id of ["c0", "c1", "c2", "c3"]) {
      store.setDraftRating(id, 4);
    }
    expect(store.view().openRound?.canSubmit).toBe(false);
    store.setDraftRating("c4", 7);
    expect(store.view().openRound?.canSubmit).toBe(true);
  });

  it("rejects out-of-range and fractional ratings", () => {
    const store = new SessionStore(artifactUrl);
    store.ingest(sessionDoc(), null);
    expect(() => store.setDraftRating("c0", 0)).toThrow(/integer/);
    expect(() => store.setDraftRating("c0", 8)).toThrow(/integer/);
    expect(() => store.setDraftRating("c0", 3.5)).toThrow(/integer/);
  });

  it("disables controls and drops the open round once finalized", () => {
    const doc = sessionDoc({ status: "finalized" });
    doc.rounds[0].final_mark = "c2";
    const store = new SessionStore(artifactUrl);
    store.ingest(doc, null);
    const vm = store.view();
    expect(vm.controlsEnabled).toBe(false);
    expect(vm.openRound).toBeNull();
    expect(vm.pastRounds).toEqual([{ index: 1, selected: null, finalMark: "c2" }]);
  });

  it("builds the trace from the report", () => {
    const store = new SessionStore(artifactUrl);
    store.ingest(sessionDoc(), reportDoc());
    const vm = store.view();
    expect(vm.trace).toEqual([{ round: 1, mean: 2.4, max: 3 }]);
    expect(vm.roundsCompleted).toBe(1);
  });

  it("is a pure function of the server documents", () => {
    const a = new SessionStore(artifactUrl);
    const b = new SessionStore(artifactUrl);
    a.ingest(sessionDoc(), reportDoc());
    b.ingest(sessionDoc(), reportDoc());
    expect(JSON.stringify(a.view())).toBe(JSON.stringify(b.view()));
  });

  it("drops drafts that no longer match the open round", () => {
    const store = new SessionStore(artifactUrl);
    store.ingest(sessionDoc(), null);
    store.setDraftRating("c0", 5);
    const closed = sessionDoc();
    closed.rounds[0].selected = "c0";
    closed.rounds[0].ratings = { c0: 5, c1: 1, c2: 1, c3: 1, c4: 1 };
    store.ingest(closed, null);
    expect(store.draftRatings()).toEqual({});
  });
});
