/** Scripted DOM-level tests of the full interaction loop against a mocked
 * HTTP backend: search, tri-state labeling by clicks, the All buttons,
 * fine-tune submission (payload inspected verbatim), stats display, and
 * iterative refinement across a retained session.
 */

import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { ApiClient } from "../src/api.js";
import { cycleLabel, negativeSamplesFromSlider } from "../src/state.js";
import { createApp, type App } from "../src/ui.js";

interface RecordedRequest {
  url: string;
  body: any;
}

const recorded: RecordedRequest[] = [];

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

function makeResults(count: number, offset = 0) {
  return Array.from({ length: count }, (_, i) => ({
    id: offset + i,
    uri: `img-${offset + i}.jpg`,
    score: 1 - i / count,
  }));
}

function stats(iteration: number) {
  return {
    train_ms: 12.5,
    query_ms: 3.25,
    n_candidates: 400,
    n_positives: 57,
    model_kind: "dbranch",
    iteration,
    n_negatives_sampled: 100,
  };
}

let finetuneCalls = 0;

function installFetchMock(searchCount = 60): void {
  finetuneCalls = 0;
  vi.stubGlobal(
    "fetch",
    vi.fn(async (url: string, init?: RequestInit) => {
      const body = init?.body ? JSON.parse(String(init.body)) : null;
      recorded.push({ url: String(url), body });
      if (String(url).endsWith("/datasets")) {
        return jsonResponse([{ name: "toy", n: 500, d_prime: 32 }]);
      }
      if (String(url).endsWith("/search")) {
        return jsonResponse({
          results: makeResults(searchCount),
          stats: { query_ms: 1.5, n_results: searchCount, k: 60 },
        });
      }
      if (String(url).endsWith("/finetune")) {
        finetuneCalls += 1;
        return jsonResponse({
          session_id: "session-abc",
          results: makeResults(20, 100 * finetuneCalls),
          stats: stats(finetuneCalls),
        });
      }
      return jsonResponse({ detail: "not found" }, 404);
    }),
  );
}

async function settle(): Promise<void> {
  await Promise.resolve();
  await Promise.resolve();
  await new Promise((resolve) => setTimeout(resolve, 0));
}

async function bootApp(): Promise<App> {
  document.body.innerHTML = '<div id="app"></div>';
  const app = createApp(document.getElementById("app")!, new ApiClient(""));
  await settle();
  return app;
}

async function runSearch(app: App, text = "leopard"): Promise<void> {
  (document.getElementById("search-text") as HTMLInputElement).value = text;
  (document.getElementById("search-btn") as HTMLButtonElement).click();
  await settle();
}

function cards(): HTMLElement[] {
  return Array.from(document.querySelectorAll<HTMLElement>(".card"));
}

function clickCard(index: number, times = 1): void {
  for (let i = 0; i < times; i += 1) cards()[index].click();
}

beforeEach(() => {
  recorded.length = 0;
  installFetchMock();
});

afterEach(() => {
  vi.unstubAllGlobals();
});

describe("result grid", () => {
  it("shows an empty-state message with no results", async () => {
    await bootApp();
    expect(document.querySelector(".empty")?.textContent).toMatch(/no results/i);
  });

  it("renders up to 60 cards after a search", async () => {
    const app = await bootApp();
    await runSearch(app);
    expect(cards()).toHaveLength(60);
  });

  it("caps oversized responses at 60 cards", async () => {
    installFetchMock(80);
    const app = await bootApp();
    await runSearch(app);
    expect(cards()).toHaveLength(60);
  });

  it("cycles a card unlabeled -> positive -> negative -> unlabeled on clicks", async () => {
    const app = await bootApp();
    await runSearch(app);
    expect(cards()[0].className).toBe("card unlabeled");
    clickCard(0);
    expect(cards()[0].className).toBe("card pos");
    clickCard(0);
    expect(cards()[0].className).toBe("card neg");
    clickCard(0);
    expect(cards()[0].className).toBe("card unlabeled");
  });

  it("cycleLabel helper agrees with the documented order", () => {
    expect(cycleLabel("unlabeled")).toBe("pos");
    expect(cycleLabel("pos")).toBe("neg");
    expect(cycleLabel("neg")).toBe("unlabeled");
  });
});

describe("All buttons", () => {
  it("labels every visible card, and a later click overrides one", async () => {
    const app = await bootApp();
    await runSearch(app);
    (document.getElementById("all-pos") as HTMLButtonElement).click();
    expect(cards().every((c) => c.classList.contains("pos"))).toBe(true);
    clickCard(3); // pos -> neg
    expect(cards()[3].classList.contains("neg")).toBe(true);
    expect(cards().filter((c) => c.classList.contains("pos"))).toHaveLength(59);
  });

  it("is a no-op on an empty grid", async () => {
    const app = await bootApp();
    (document.getElementById("all-neg") as HTMLButtonElement).click();
    expect(app.state.cards).toHaveLength(0);
    expect(document.querySelector(".empty")).not.toBeNull();
  });
});

describe("fine-tune submission", () => {
  it("requires at least one positive and one negative (client-side)", async () => {
    const app = await bootApp();
    await runSearch(app);
    clickCard(0); // one positive only
    (document.getElementById("finetune-btn") as HTMLButtonElement).click();
    await settle();
    expect(recorded.some((r) => r.url.endsWith("/finetune"))).toBe(false);
    expect(document.getElementById("banner")?.textContent).toMatch(/at least one positive/i);
  });

  it("submits exactly the visible label states and the slider values", async () => {
    const app = await bootApp();
    await runSearch(app);
    clickCard(0);
    clickCard(1);
    clickCard(2);
    clickCard(5, 2); // negative
    clickCard(6, 2); // negative
    (document.getElementById("neg-samples") as HTMLInputElement).value = "50";
    (document.getElementById("neg-weight") as HTMLInputElement).value = "25";
    (document.getElementById("model") as HTMLSelectElement).value = "dbranch_ensemble";
    (document.getElementById("finetune-btn") as HTMLButtonElement).click();
    await settle();

    const req = recorded.find((r) => r.url.endsWith("/finetune"));
    expect(req).toBeDefined();
    expect(req!.body.dataset).toBe("toy");
    expect(req!.body.model).toBe("dbranch_ensemble");
    expect(req!.body.negative_samples).toBe(negativeSamplesFromSlider(50));
    expect(req!.body.negative_weight).toBe(25);
    expect(req!.body.session_id).toBeUndefined();
    expect(req!.body.labels).toEqual([
      { id: 0, label: "pos" },
      { id: 1, label: "pos" },
      { id: 2, label: "pos" },
      { id: 5, label: "neg" },
      { id: 6, label: "neg" },
    ]);
  });

  it("slider mapping is 0 or log-scale up to 10000", () => {
    expect(negativeSamplesFromSlider(0)).toBe(0);
    expect(negativeSamplesFromSlider(25)).toBe(10);
    expect(negativeSamplesFromSlider(100)).toBe(10000);
  });
});

describe("iterative refinement loop", () => {
  it("search -> label 3 pos / 2 neg -> fine-tune -> iteration 1 -> relabel -> iteration 2", async () => {
    const app = await bootApp();
    await runSearch(app);
    expect(cards()).toHaveLength(60);

    clickCard(0);
    clickCard(1);
    clickCard(2);
    clickCard(10, 2);
    clickCard(11, 2);
    (document.getElementById("finetune-btn") as HTMLButtonElement).click();
    await settle();

    // grid refreshed with the fine-tuned results, stats shows iteration 1
    expect(document.getElementById("stats")?.textContent).toContain("iteration 1");
    expect(cards()).toHaveLength(20);
    expect(cards()[0].dataset.id).toBe("100");
    expect(cards().every((c) => c.classList.contains("unlabeled"))).toBe(true);

    // relabel on the refreshed grid and fine-tune again in the same session
    clickCard(0);
    clickCard(4, 2);
    (document.getElementById("finetune-btn") as HTMLButtonElement).click();
    await settle();

    expect(document.getElementById("stats")?.textContent).toContain("iteration 2");
    const second = recorded.filter((r) => r.url.endsWith("/finetune"))[1];
    expect(second.body.session_id).toBe("session-abc");
    expect(second.body.labels).toEqual([
      { id: 100, label: "pos" },
      { id: 104, label: "neg" },
    ]);
    expect(cards()[0].dataset.id).toBe("200");
  });

  it("a new search resets the session", async () => {
    const app = await bootApp();
    await runSearch(app);
    clickCard(0);
    clickCard(1, 2);
    (document.getElementById("finetune-btn") as HTMLButtonElement).click();
    await settle();
    expect(app.state.sessionId).toBe("session-abc");
    await runSearch(app, "something else");
    expect(app.state.sessionId).toBeNull();
  });
});

describe("error surfaces", () => {
  it("shows a banner when text search is unavailable (503)", async () => {
    vi.stubGlobal(
      "fetch",
      vi.fn(async (url: string) => {
        if (String(url).endsWith("/datasets")) {
          return jsonResponse([{ name: "toy", n: 500, d_prime: 32 }]);
        }
        return jsonResponse({ detail: "text queries need an embedding sidecar" }, 503);
      }),
    );
    const app = await bootApp();
    await runSearch(app);
    expect(document.getElementById("banner")?.textContent).toMatch(/sidecar/);
  });

  it("surfaces a 422 from the server inline", async () => {
    const app = await bootApp();
    await runSearch(app);
    vi.stubGlobal(
      "fetch",
      vi.fn(async () => jsonResponse({ detail: "label at least one positive and one negative" }, 422)),
    );
    clickCard(0);
    clickCard(1, 2);
    (document.getElementById("finetune-btn") as HTMLButtonElement).click();
    await settle();
    expect(document.getElementById("banner")?.textContent).toMatch(/at least one positive/);
  });
});
