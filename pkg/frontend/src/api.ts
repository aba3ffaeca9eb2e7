// HTTP client for the session service. Every method is a 1:1 mapping to a
// documented endpoint; the console performs no other writes.

import type {
  ReportDoc,
  RoundSource,
  SessionDoc,
  SessionEvent,
  TrainJobDoc,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

async function parseError(resp: Response): Promise<never> {
  let detail = resp.statusText;
  try {
    const body = await resp.json();
    detail = typeof body.detail === "string" ? body.detail : JSON.stringify(body.detail ?? body);
  } catch {
    /* non-JSON error body */
  }
  throw new ApiError(resp.status, detail);
}

export interface CreateSessionOptions {
  sessionId?: string;
  model?: string;
  minRounds?: number;
  baseImageB64?: string;
}

export class ApiClient {
  constructor(readonly baseUrl: string) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const resp = await fetch(this.baseUrl + path, {
      method,
      headers: body === undefined ? undefined : { "content-type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!resp.ok) {
      await parseError(resp);
    }
    return (await resp.json()) as T;
  }

  health(): Promise<{ status: string }> {
    return this.request("GET", "/health");
  }

  createSession(participantId: string, opts: CreateSessionOptions = {}): Promise<SessionDoc> {
    return this.request("POST", "/sessions", {
      participant_id: participantId,
      session_id: opts.sessionId ?? null,
      model: opts.model ?? "default",
      min_rounds: opts.minRounds ?? null,
      base_image_b64: opts.baseImageB64 ?? null,
    });
  }

  getSession(sessionId: string): Promise<SessionDoc> {
    return this.request("GET", `/sessions/${sessionId}`);
  }

  getReport(sessionId: string): Promise<ReportDoc> {
    return this.request("GET", `/sessions/${sessionId}/report`);
  }

  // next-round trigger: submit one EEG window or a replay reference
  submitRound(sessionId: string, source: RoundSource): Promise<SessionEvent> {
    return this.request("POST", `/sessions/${sessionId}/rounds`, source);
  }

  submitRatings(
    sessionId: string,
    ratings: Record<string, number>,
    finalMark?: string,
  ): Promise<SessionEvent> {
    return this.request("POST", `/sessions/${sessionId}/ratings`, {
      ratings,
      final_mark: finalMark ?? null,
    });
  }

  startTraining(datasetDir: string, opts: { name?: string; folds?: number; seed?: number } = {}) {
    return this.request<{ job_id: string }>("POST", "/train", {
      dataset_dir: datasetDir,
      name: opts.name ?? "default",
      folds: opts.folds ?? null,
      seed: opts.seed ?? 0,
    });
  }

  getTrainingJob(jobId: string): Promise<TrainJobDoc> {
    return this.request("GET", `/train/${jobId}`);
  }

  async waitForTraining(jobId: string, timeoutMs = 120_000): Promise<TrainJobDoc> {
    const deadline = Date.now() + timeoutMs;
    for (;;) {
      const job = await this.getTrainingJob(jobId);
      if (job.status !== "running") {
        return job;
      }
      if (Date.now() > deadline) {
        throw new Error(`training job ${jobId} still running after ${timeoutMs} ms`);
      }
      await new Promise((resolve) => setTimeout(resolve, 150));
    }
  }

  artifactUrl(ref: string | null): string | null {
    if (ref === null) {
      return null;
    }
    const hex = ref.startsWith("sha256:") ? ref.slice("sha256:".length) : ref;
    return `${this.baseUrl}/artifacts/${hex}`;
  }

  eventsUrl(sessionId: string): string {
    return `${this.baseUrl.replace(/^http/, "ws")}/sessions/${sessionId}/events`;
  }
}
