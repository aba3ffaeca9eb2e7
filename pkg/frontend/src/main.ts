// Browser bootstrap: ?api=<http base>&session=<id> (or create a new session
// with &participant=<id>). All state lives on the server; this file only
// wires events to refreshes and user actions to API calls.

import { ApiClient, ApiError } from "./api.js";
import { EventFeed } from "./events.js";
import { SessionStore } from "./state.js";
import { render } from "./view.js";

async function bootstrap(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const apiBase = params.get("api") ?? window.location.origin;
  const api = new ApiClient(apiBase);
  const store = new SessionStore((ref) => api.artifactUrl(ref));
  const root = document.getElementById("app");
  if (!root) {
    throw new Error("missing #app element");
  }

  let sessionId = params.get("session");
  if (!sessionId) {
    const participant = params.get("participant") ?? "anonymous";
    const session = await api.createSession(participant);
    sessionId = session.session_id;
    const url = new URL(window.location.href);
    url.searchParams.set("session", sessionId);
    window.history.replaceState(null, "", url);
  }

  let showProvenance = false;

  const refresh = async () => {
    const session = await api.getSession(sessionId!);
    const report = session.rounds.length > 0 ? await api.getReport(sessionId!) : null;
    store.ingest(session, report);
    draw();
  };

  const act = async (action: () => Promise<unknown>) => {
    store.lastError = null;
    try {
      await action();
    } catch (err) {
      store.lastError = err instanceof ApiError ? err.detail : String(err);
    }
    await refresh();
  };

  const draw = () => {
    render(root, store.view(), {
      onRate: (candidateId, rating) => {
        store.setDraftRating(candidateId, rating);
        draw();
      },
      onSubmitRatings: () =>
        act(async () => {
          await api.submitRatings(sessionId!, store.draftRatings());
          store.clearDrafts();
        }),
      onFinalMark: (candidateId) =>
        act(() => api.submitRatings(sessionId!, store.draftRatings(), candidateId)),
      onNextRound: (replayFile) =>
        act(() => api.submitRound(sessionId!, { file: replayFile, start_s: 0 })),
      onToggleProvenance: () => {
        showProvenance = !showProvenance;
        draw();
      },
    }, { showProvenance });
  };

  const feed = new EventFeed(
    api.eventsUrl(sessionId),
    (url) => new WebSocket(url) as unknown as import("./events.js").WebSocketLike,
    () => void refresh(),
    (status) => {
      store.connection = status;
      draw();
    },
  );
  feed.start();
  await refresh();
}

bootstrap().catch((err) => {
  const root = document.getElementById("app");
  if (root) {
    root.textContent = `failed to start: ${err}`;
  }
});
