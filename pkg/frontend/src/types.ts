// Documents and events exactly as the service serves them (docs/service-api.md).

export type CommandName =
  | "increase_transparency"
  | "more_luxurious_decoration"
  | "more_classical_style";

export interface PredictionDoc {
  command: CommandName;
  confidence: number;
  decision_values: number[];
}

export interface CandidateDoc {
  id: string;
  image: string | null;
  prompt_tokens: string[];
  model_weight: number;
  provenance: "predicted" | "perturbed";
  seed: number;
  status: string;
}

export interface RoundDoc {
  index: number;
  prediction: PredictionDoc;
  candidates: CandidateDoc[];
  ratings: Record<string, number>;
  selected: string | null;
  final_mark: string | null;
}

export interface SessionDoc {
  session_id: string;
  participant_id: string;
  base_image: string;
  min_rounds: number;
  round_index: number;
  status: "active" | "finalized";
  rounds: RoundDoc[];
}

export interface ReportRow {
  round: number;
  mean_rating: number;
  max_rating: number;
  selected: string | null;
  selected_rating: number | null;
}

export interface ReportDoc {
  v: number;
  session_id: string;
  participant_id: string;
  status: string;
  rounds: number;
  min_rounds: number;
  per_round: ReportRow[];
  final_mark: { round: number; candidate: string } | null;
}

export interface CandidatesReadyEvent {
  type: "candidates_ready";
  session_id: string;
  round: number;
  prediction: PredictionDoc;
  candidates: CandidateDoc[];
}

export interface RoundClosedEvent {
  type: "ratings_submitted" | "finalized";
  session_id: string;
  round: number;
  selected: string | null;
  finalized: boolean;
  next_base_image: string;
}

export type SessionEvent = CandidatesReadyEvent | RoundClosedEvent;

export interface TrainJobDoc {
  job_id: string;
  status: "running" | "done" | "failed";
  model_name: string;
  progress: { fold: number; folds: number };
  cv_accuracy: Record<string, unknown> | null;
  error: string | null;
}

export type RoundSource =
  | { window: number[][]; seed?: number }
  | { file: string; start_s?: number; seed?: number };
