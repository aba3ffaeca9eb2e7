// View-model derivation. The store never owns session state: every view is
// a pure function of the latest server documents, so a reload rebuilds the
// identical view from GET /sessions/{id} alone.

import type { ReportDoc, RoundDoc, SessionDoc } from "./types.js";

export const RATING_MIN = 1;
export const RATING_MAX = 7;

export interface CandidateView {
  id: string;
  imageUrl: string | null;
  provenance: "predicted" | "perturbed";
  generationStatus: string;
  rating: number | null;       // committed rating from the server record
  draftRating: number | null;  // local input, not yet submitted
  isSelected: boolean;
  isFinalMark: boolean;
}

export interface OpenRoundView {
  index: number;
  command: string;
  confidence: number;
  candidates: CandidateView[];
  canSubmit: boolean;          // all five drafts present
}

export interface TracePoint {
  round: number;
  mean: number;
  max: number;
}

export interface ViewModel {
  sessionId: string;
  participantId: string;
  status: "active" | "finalized";
  minRounds: number;
  roundsCompleted: number;
  baseImageUrl: string | null;
  openRound: OpenRoundView | null;
  pastRounds: Array<{ index: number; selected: string | null; finalMark: string | null }>;
  trace: TracePoint[];
  finalMark: { round: number; candidate: string } | null;
  controlsEnabled: boolean;
  connection: "connected" | "disconnected";
  error: string | null;
}

function isOpen(round: RoundDoc): boolean {
  return round.selected === null && round.final_mark === null;
}

export class SessionStore {
  private session: SessionDoc | null = null;
  private report: ReportDoc | null = null;
  private drafts = new Map<string, number>();
  connection: "connected" | "disconnected" = "disconnected";
  lastError: string | null = null;

  constructor(private readonly artifactUrl: (ref: string | null) => string | null) {}

  // server documents are the only authority; drafts for vanished rounds drop
  ingest(session: SessionDoc, report: ReportDoc | null): void {
    this.session = session;
    this.report = report;
    const open = session.rounds.find(isOpen);
    if (!open) {
      this.drafts.clear();
    } else {
      const ids = new Set(open.candidates.map((c) => c.id));
      for (const key of [...this.drafts.keys()]) {
        if (!ids.has(key)) {
          this.drafts.delete(key);
        }
      }
    }
  }

  setDraftRating(candidateId: string, rating: number): void {
    if (!Number.isInteger(rating) || rating < RATING_MIN || rating > RATING_MAX) {
      throw new Error(`rating must be an integer in [${RATING_MIN}, ${RATING_MAX}], got ${rating}`);
    }
    this.drafts.set(candidateId, rating);
  }

  draftRatings(): Record<string, number> {
    return Object.fromEntries(this.drafts);
  }

  clearDrafts(): void {
    this.drafts.clear();
  }

  view(): ViewModel {
    const session = this.session;
    if (!session) {
      throw new Error("no session loaded");
    }
    const openDoc = session.rounds.find(isOpen) ?? null;
    let openRound: OpenRoundView | null = null;
    if (openDoc && session.status === "active") {
      const candidates = openDoc.candidates.map((c) => ({
        id: c.id,
        imageUrl: this.artifactUrl(c.image),
        provenance: c.provenance,
        generationStatus: c.status,
        rating: openDoc.ratings[c.id] ?? null,
        draftRating: this.drafts.get(c.id) ?? null,
        isSelected: false,
        isFinalMark: false,
      }));
      openRound = {
        index: openDoc.index,
        command: openDoc.prediction.command,
        confidence: openDoc.prediction.confidence,
        candidates,
        canSubmit:
          candidates.length > 0 && candidates.every((c) => c.draftRating !== null),
      };
    }
    const trace: TracePoint[] = (this.report?.per_round ?? []).map((row) => ({
      round: row.round,
      mean: row.mean_rating,
      max: row.max_rating,
    }));
    return {
      sessionId: session.session_id,
      participantId: session.participant_id,
      status: session.status,
      minRounds: session.min_rounds,
      roundsCompleted: this.report?.rounds ?? 0,
      baseImageUrl: this.artifactUrl(session.base_image),
      openRound,
      pastRounds: session.rounds
        .filter((r) => !isOpen(r))
        .map((r) => ({ index: r.index, selected: r.selected, finalMark: r.final_mark })),
      trace,
      finalMark: this.report?.final_mark ?? null,
      controlsEnabled: session.status === "active",
      connection: this.connection,
      error: this.lastError,
    };
  }
}
