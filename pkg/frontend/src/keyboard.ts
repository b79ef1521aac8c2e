// Keyboard shortcuts: 0-4 select ratings, c/i/s select verdicts.

import type { Choice, RatingValue, TaskKind, VerdictValue } from "./api.js";

const RATING_KEYS: Record<string, RatingValue> = {
  "0": 0,
  "1": 1,
  "2": 2,
  "3": 3,
  "4": 4,
};

const VERDICT_KEYS: Record<string, VerdictValue> = {
  c: "correct",
  i: "incorrect",
  s: "subjective",
};

export function choiceForKey(kind: TaskKind, key: string): Choice | null {
  if (kind === "relevance") {
    const rating = RATING_KEYS[key];
    return rating === undefined ? null : { kind: "rating", value: rating };
  }
  const verdict = VERDICT_KEYS[key.toLowerCase()];
  return verdict === undefined ? null : { kind: "verdict", value: verdict };
}
