/** Client-side state: the visible card grid and the labeling session.
 *
 * Every displayed value originates from an API response; there is no model
 * logic here. Cards cycle unlabeled -> positive -> negative -> unlabeled.
 */

import type { ResultItem } from "./api.js";

export type LabelState = "unlabeled" | "pos" | "neg";

export interface Card {
  id: number;
  uri: string;
  score: number;
  label: LabelState;
}

export const MAX_CARDS = 60;

export function cycleLabel(state: LabelState): LabelState {
  if (state === "unlabeled") return "pos";
  if (state === "pos") return "neg";
  return "unlabeled";
}

export class AppState {
  dataset: string | null = null;
  sessionId: string | null = null;
  cards: Card[] = [];
  busy = false;

  /** Replace the grid with fresh, unlabeled results (capped at MAX_CARDS). */
  setResults(results: ResultItem[]): void {
    this.cards = results.slice(0, MAX_CARDS).map((r) => ({
      id: r.id,
      uri: r.uri,
      score: r.score,
      label: "unlabeled",
    }));
  }

  toggleCard(id: number): void {
    const card = this.cards.find((c) => c.id === id);
    if (card) card.label = cycleLabel(card.label);
  }

  labelAll(state: LabelState): void {
    for (const card of this.cards) card.label = state;
  }

  /** Labels to submit: exactly the currently visible pos/neg states. */
  labeledPayload(): { id: number; label: "pos" | "neg" }[] {
    return this.cards
      .filter((c) => c.label !== "unlabeled")
      .map((c) => ({ id: c.id, label: c.label as "pos" | "neg" }));
  }

  counts(): { pos: number; neg: number } {
    let pos = 0;
    let neg = 0;
    for (const c of this.cards) {
      if (c.label === "pos") pos += 1;
      else if (c.label === "neg") neg += 1;
    }
    return { pos, neg };
  }

  /** New search or dataset switch: fresh session, empty grid. */
  resetSession(): void {
    this.sessionId = null;
    this.cards = [];
  }
}

/** Slider position (0..100) -> negative sample count (0 or log scale 1..10000). */
export function negativeSamplesFromSlider(position: number): number {
  if (position <= 0) return 0;
  return Math.round(10 ** ((position * 4) / 100));
}
