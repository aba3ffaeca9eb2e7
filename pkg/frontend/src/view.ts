// DOM rendering. Re-render is idempotent: the whole session area is rebuilt
// from the view-model on every change, so duplicate events are harmless.

import { renderChartSvg } from "./chart.js";
import { RATING_MAX, RATING_MIN, type ViewModel } from "./state.js";

export interface ViewHandlers {
  onRate(candidateId: string, rating: number): void;
  onSubmitRatings(): void;
  onFinalMark(candidateId: string): void;
  onNextRound(replayFile: string): void;
  onToggleProvenance(): void;
}

export interface ViewOptions {
  showProvenance: boolean; // hidden by default to avoid biasing ratings
}

function el(tag: string, className: string, text = ""): HTMLElement {
  const node = document.createElement(tag);
  node.className = className;
  if (text) {
    node.textContent = text;
  }
  return node;
}

export function render(
  root: HTMLElement,
  vm: ViewModel,
  handlers: ViewHandlers,
  options: ViewOptions = { showProvenance: false },
): void {
  root.textContent = "";

  if (vm.connection === "disconnected") {
    root.appendChild(el("div", "banner banner-offline",
      "connection lost — resubscribing…"));
  }
  if (vm.error) {
    root.appendChild(el("div", "banner banner-error", vm.error));
  }

  const header = el("header", "session-header");
  header.appendChild(el("h1", "title", `session ${vm.sessionId}`));
  header.appendChild(el("span", `status status-${vm.status}`, vm.status));
  header.appendChild(el("span", "rounds",
    `${vm.roundsCompleted} round${vm.roundsCompleted === 1 ? "" : "s"} rated` +
    (vm.status === "active" && vm.roundsCompleted < vm.minRounds
      ? ` (aim for at least ${vm.minRounds})`
      : "")));
  const toggle = el("button", "provenance-toggle",
    options.showProvenance ? "hide provenance" : "show provenance") as HTMLButtonElement;
  toggle.addEventListener("click", () => handlers.onToggleProvenance());
  header.appendChild(toggle);
  root.appendChild(header);

  if (vm.baseImageUrl) {
    const base = el("figure", "base-image");
    const img = document.createElement("img");
    img.src = vm.baseImageUrl;
    img.alt = "current base image";
    base.appendChild(img);
    base.appendChild(el("figcaption", "", "current base"));
    root.appendChild(base);
  }

  if (vm.openRound) {
    const section = el("section", "round");
    section.appendChild(el("h2", "",
      `round ${vm.openRound.index}: ${vm.openRound.command.replace(/_/g, " ")} ` +
      `(confidence ${(vm.openRound.confidence * 100).toFixed(0)}%)`));
    const grid = el("div", "candidates");
    for (const candidate of vm.openRound.candidates) {
      const card = el("article", "candidate");
      card.dataset.candidateId = candidate.id;
      if (candidate.imageUrl) {
        const img = document.createElement("img");
        img.src = candidate.imageUrl;
        img.alt = `candidate ${candidate.id}`;
        card.appendChild(img);
      } else {
        card.appendChild(el("div", "candidate-failed",
          `generation ${candidate.generationStatus}`));
      }
      if (options.showProvenance) {
        card.appendChild(el("span", `provenance provenance-${candidate.provenance}`,
          candidate.provenance));
      }
      const ratingRow = el("div", "rating");
      for (let value = RATING_MIN; value <= RATING_MAX; value++) {
        const btn = el("button", "rating-btn", String(value)) as HTMLButtonElement;
        btn.disabled = !vm.controlsEnabled;
        if (candidate.draftRating === value) {
          btn.classList.add("rating-chosen");
        }
        btn.addEventListener("click", () => handlers.onRate(candidate.id, value));
        ratingRow.appendChild(btn);
      }
      card.appendChild(ratingRow);
      const markBtn = el("button", "final-mark", "this is the one") as HTMLButtonElement;
      markBtn.disabled = !vm.controlsEnabled;
      markBtn.addEventListener("click", () => handlers.onFinalMark(candidate.id));
      card.appendChild(markBtn);
      grid.appendChild(card);
    }
    section.appendChild(grid);
    const submit = el("button", "submit-ratings", "submit ratings") as HTMLButtonElement;
    submit.disabled = !vm.controlsEnabled || !vm.openRound.canSubmit;
    submit.addEventListener("click", () => handlers.onSubmitRatings());
    section.appendChild(submit);
    root.appendChild(section);
  } else if (vm.status === "active") {
    const section = el("section", "next-round");
    section.appendChild(el("p", "", "imagine the change, then start the next round"));
    const input = document.createElement("input");
    input.type = "text";
    input.className = "replay-file";
    input.placeholder = "recording CSV path (replay)";
    const go = el("button", "start-round", "imagine next round") as HTMLButtonElement;
    go.addEventListener("click", () => handlers.onNextRound(input.value));
    section.appendChild(input);
    section.appendChild(go);
    root.appendChild(section);
  }

  if (vm.status === "finalized" && vm.finalMark) {
    root.appendChild(el("section", "finalized",
      `finalized at round ${vm.finalMark.round} with candidate ${vm.finalMark.candidate}`));
  }

  const chart = el("section", "chart");
  chart.appendChild(el("h2", "", "satisfaction trend"));
  if (vm.trace.length > 0) {
    chart.insertAdjacentHTML("beforeend", renderChartSvg(vm.trace));
  } else {
    chart.appendChild(el("p", "chart-empty", "no rated rounds yet"));
  }
  root.appendChild(chart);
}
