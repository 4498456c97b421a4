/** DOM construction and event wiring for the whole interaction loop:
 * search box + dataset picker, labelable result grid, model picker, the two
 * sampling sliders, fine-tune button, and the statistics panel.
 */

import { ApiClient, ApiError, FinetuneStats } from "./api.js";
import { AppState, MAX_CARDS, negativeSamplesFromSlider } from "./state.js";

export const MODEL_KINDS = [
  { value: "dbranch", label: "Decision branch" },
  { value: "dbranch_ensemble", label: "Decision branch ensemble" },
  { value: "dtree", label: "Decision tree (scan)" },
  { value: "rforest", label: "Random forest (scan)" },
];

export interface App {
  state: AppState;
  root: HTMLElement;
  refresh: () => void;
  runSearch: () => Promise<void>;
  runFinetune: () => Promise<void>;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) node.setAttribute(key, value);
  if (text !== undefined) node.textContent = text;
  return node;
}

export function createApp(root: HTMLElement, api: ApiClient): App {
  const state = new AppState();

  root.innerHTML = "";
  const bar = el("div", { class: "topbar" });
  const datasetSelect = el("select", { id: "dataset" });
  const searchInput = el("input", {
    id: "search-text",
    type: "text",
    placeholder: "describe what you are looking for...",
  });
  const searchButton = el("button", { id: "search-btn" }, "Search");
  bar.append(datasetSelect, searchInput, searchButton);

  const controls = el("div", { class: "controls" });
  const modelSelect = el("select", { id: "model" });
  for (const kind of MODEL_KINDS) {
    modelSelect.append(el("option", { value: kind.value }, kind.label));
  }
  const negSamples = el("input", {
    id: "neg-samples",
    type: "range",
    min: "0",
    max: "100",
    value: "75",
  });
  const negSamplesOut = el("span", { id: "neg-samples-value" });
  const negWeight = el("input", {
    id: "neg-weight",
    type: "range",
    min: "1",
    max: "100",
    value: "10",
  });
  const negWeightOut = el("span", { id: "neg-weight-value" });
  const allPos = el("button", { id: "all-pos" }, "All positive");
  const allNeg = el("button", { id: "all-neg" }, "All negative");
  const finetuneButton = el("button", { id: "finetune-btn" }, "Fine-tune search");
  controls.append(
    el("label", {}, "Model:"),
    modelSelect,
    el("label", {}, "Negative samples:"),
    negSamples,
    negSamplesOut,
    el("label", {}, "Negative weight:"),
    negWeight,
    negWeightOut,
    allPos,
    allNeg,
    finetuneButton,
  );

  const banner = el("div", { class: "banner", id: "banner" });
  const statsPanel = el("div", { class: "stats", id: "stats" });
  const grid = el("div", { class: "grid", id: "grid" });
  root.append(bar, controls, banner, statsPanel, grid);

  function refreshSliderOutputs(): void {
    negSamplesOut.textContent = String(negativeSamplesFromSlider(Number(negSamples.value)));
    negWeightOut.textContent = String(Number(negWeight.value));
  }

  function showError(message: string): void {
    banner.textContent = message;
    banner.classList.add("visible");
  }

  function clearError(): void {
    banner.textContent = "";
    banner.classList.remove("visible");
  }

  function renderStats(stats: FinetuneStats | null): void {
    statsPanel.innerHTML = "";
    if (!stats) return;
    const parts = [
      `iteration ${stats.iteration}`,
      `model ${stats.model_kind}`,
      `train ${stats.train_ms.toFixed(1)} ms`,
      `query ${stats.query_ms.toFixed(1)} ms`,
      `${stats.n_positives} positives`,
      `${stats.n_candidates} candidates`,
    ];
    for (const part of parts) statsPanel.append(el("span", { class: "stat" }, part));
  }

  function renderGrid(): void {
    grid.innerHTML = "";
    if (state.cards.length === 0) {
      grid.append(el("div", { class: "empty" }, "No results. Try a search."));
      return;
    }
    for (const card of state.cards.slice(0, MAX_CARDS)) {
      const div = el("div", {
        class: `card ${card.label}`,
        "data-id": String(card.id),
        title: `id ${card.id}, score ${card.score.toFixed(4)}`,
      });
      const img = el("img", { alt: `result ${card.id}`, loading: "lazy" });
      img.src = state.dataset ? api.imageUrl(state.dataset, card.id) : card.uri;
      div.append(img);
      div.addEventListener("click", () => {
        state.toggleCard(card.id);
        refresh();
      });
      grid.append(div);
    }
  }

  function refresh(): void {
    refreshSliderOutputs();
    searchButton.toggleAttribute("disabled", state.busy);
    finetuneButton.toggleAttribute("disabled", state.busy);
    renderGrid();
  }

  async function runSearch(): Promise<void> {
    const dataset = datasetSelect.value;
    const text = searchInput.value.trim();
    if (!dataset || !text || state.busy) return;
    state.busy = true;
    clearError();
    refresh();
    try {
      const body = await api.searchText(dataset, text, MAX_CARDS);
      state.dataset = dataset;
      state.resetSession();
      state.setResults(body.results);
      renderStats(null);
    } catch (err) {
      showError(err instanceof ApiError ? err.message : `search failed: ${err}`);
    } finally {
      state.busy = false;
      refresh();
    }
  }

  async function runFinetune(): Promise<void> {
    if (state.busy) return;
    const labels = state.labeledPayload();
    const { pos, neg } = state.counts();
    if (pos < 1 || neg < 1) {
      showError("label at least one positive and one negative first");
      return;
    }
    if (!state.dataset) {
      showError("run a search first");
      return;
    }
    state.busy = true;
    clearError();
    refresh();
    try {
      const body = await api.finetune({
        dataset: state.dataset,
        session_id: state.sessionId ?? undefined,
        labels,
        model: modelSelect.value,
        negative_samples: negativeSamplesFromSlider(Number(negSamples.value)),
        negative_weight: Number(negWeight.value),
      });
      state.sessionId = body.session_id;
      state.setResults(body.results);
      renderStats(body.stats);
    } catch (err) {
      showError(err instanceof ApiError ? err.message : `fine-tune failed: ${err}`);
    } finally {
      state.busy = false;
      refresh();
    }
  }

  searchButton.addEventListener("click", () => void runSearch());
  searchInput.addEventListener("keydown", (event) => {
    if (event.key === "Enter") void runSearch();
  });
  finetuneButton.addEventListener("click", () => void runFinetune());
  allPos.addEventListener("click", () => {
    state.labelAll("pos");
    refresh();
  });
  allNeg.addEventListener("click", () => {
    state.labelAll("neg");
    refresh();
  });
  negSamples.addEventListener("input", refreshSliderOutputs);
  negWeight.addEventListener("input", refreshSliderOutputs);

  void api
    .datasets()
    .then((datasets) => {
      datasetSelect.innerHTML = "";
      for (const d of datasets) {
        datasetSelect.append(el("option", { value: d.name }, `${d.name} (${d.n})`));
      }
    })
    .catch((err) => showError(`could not load datasets: ${err}`));

  refresh();
  return { state, root, refresh, runSearch, runFinetune };
}
