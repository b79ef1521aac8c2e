"""Evaluation metrics: labelers, threshold calibration, and human alignment.

Conventions fixed here and stated in report headers:
  - the labeler boundary is inclusive (score >= threshold is positive);
  - alignment's headline number is the weighted match ratio
    matched_reward / max_reward, which always lies in [0, 1];
  - exact score ties count as a non-match.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Mapping, Sequence

from .errors import ScoreRangeError, ValidationError

RATING_SCALE = {
    0: "unsure",
    1: "no relevance",
    2: "mild relevance",
    3: "high relevance",
    4: "complete relevance",
}
VERDICTS = ("correct", "incorrect", "subjective")

# Grid etas are rounded to keep i*step exact for decimal steps.
_GRID_DECIMALS = 10


@dataclass(frozen=True)
class LabelerConfig:
    """Hard-decision labeler: score >= threshold maps to the positive label."""

    threshold: float
    positive_label: str = "relevant"
    negative_label: str = "irrelevant"

    def __post_init__(self):
        if not (0.0 <= self.threshold <= 1.0):
            raise ValidationError(f"threshold must lie in [0, 1], got {self.threshold}")
        if not self.positive_label or not self.negative_label:
            raise ValidationError("labeler labels must be nonempty")


@dataclass(frozen=True)
class ConfusionStats:
    """Detection rates per class plus overall accuracy, with raw counts."""

    true0: float
    true1: float
    accuracy: float
    pos_total: int
    pos_hits: int
    neg_total: int
    neg_hits: int


@dataclass(frozen=True)
class HumanRating:
    """One relevance judgment on a (question, piece) pair, on the 0-4 scale."""

    question_id: str
    piece_id: str
    rating: int
    annotator_id: str
    timestamp: float = 0.0

    def __post_init__(self):
        if self.rating not in RATING_SCALE:
            raise ValidationError(f"rating must be an integer in 0..4, got {self.rating!r}")


@dataclass(frozen=True)
class SpanVerdict:
    """One human judgment on a response span."""

    question_id: str
    span_index: int
    verdict: str
    annotator_id: str

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise ValidationError(f"verdict must be one of {VERDICTS}, got {self.verdict!r}")
        if self.span_index < 0:
            raise ValidationError("span index must be >= 0")


@dataclass(frozen=True)
class AlignmentResult:
    """Pairwise score-vs-rating agreement, reward-weighted."""

    weighted_match: float
    pairs_considered: int
    pairs_disregarded: int
    raw_reward_sum: float
    max_reward_sum: float

    @property
    def mean_reward(self) -> float:
        """Average earned reward per considered pair."""
        if self.pairs_considered == 0:
            return 0.0
        return self.raw_reward_sum / self.pairs_considered


def _check_scores(scores: Iterable[float], what: str) -> list[float]:
    out = []
    for s in scores:
        s = float(s)
        if not (0.0 <= s <= 1.0):
            raise ScoreRangeError(f"{what} score {s} outside [0, 1]")
        out.append(s)
    return out


def apply_labeler(scores: Sequence[float], cfg: LabelerConfig) -> list[str]:
    """Threshold each score into a hard label (boundary inclusive)."""
    checked = _check_scores(scores, "labeler input")
    return [cfg.positive_label if s >= cfg.threshold else cfg.negative_label for s in checked]


def confusion_stats(pos_scores: Sequence[float], neg_scores: Sequence[float], eta: float) -> ConfusionStats:
    """Detection rates at threshold eta.

    true0 is the detection rate on positive samples (score >= eta), true1 on
    negative samples (score < eta); accuracy weights the two by class counts.
    """
    pos = _check_scores(pos_scores, "positive")
    neg = _check_scores(neg_scores, "negative")
    if not pos or not neg:
        raise ValidationError("both score classes must be nonempty")
    pos_hits = sum(1 for s in pos if s >= eta)
    neg_hits = sum(1 for s in neg if s < eta)
    return ConfusionStats(
        true0=pos_hits / len(pos),
        true1=neg_hits / len(neg),
        accuracy=(pos_hits + neg_hits) / (len(pos) + len(neg)),
        pos_total=len(pos),
        pos_hits=pos_hits,
        neg_total=len(neg),
        neg_hits=neg_hits,
    )


def sweep_thresholds(
    pos_scores: Sequence[float], neg_scores: Sequence[float], step: float
) -> list[tuple[float, ConfusionStats]]:
    """Confusion stats over the threshold grid {0, step, 2*step, ..., 1}."""
    if not (0.0 < step <= 0.5):
        raise ValidationError(f"grid step must lie in (0, 0.5], got {step}")
    points = []
    n = int(round(1.0 / step))
    for i in range(n + 1):
        eta = min(round(i * step, _GRID_DECIMALS), 1.0)
        points.append((eta, confusion_stats(pos_scores, neg_scores, eta)))
    if points[-1][0] != 1.0:
        points.append((1.0, confusion_stats(pos_scores, neg_scores, 1.0)))
    return points


def optimize_threshold(curve: Sequence[tuple[float, ConfusionStats]]) -> float:
    """The grid threshold balancing the two detection rates.

    Minimizes |true0 - true1|; ties broken by maximizing accuracy, then by
    the smallest threshold.
    """
    if not curve:
        raise ValidationError("cannot optimize over an empty curve")
    best = min(curve, key=lambda point: (abs(point[1].true0 - point[1].true1), -point[1].accuracy, point[0]))
    return best[0]


def alignment_reward(
    ratings: Iterable[HumanRating],
    scores: Mapping[tuple[str, str], float],
) -> AlignmentResult:
    """Reward-weighted agreement between relevance scores and human ratings.

    Pairs of rated pieces are formed within each (question, annotator)
    group. A pair is disregarded when either rating is 0 (unsure) or the
    ratings are equal. Otherwise, with ratings r1 < r2, the reward r2 - r1
    is earned iff the piece rated r2 has the strictly higher score; the same
    amount accrues to the maximum attainable reward unconditionally.
    """
    groups: dict[tuple[str, str], list[HumanRating]] = {}
    for rating in ratings:
        groups.setdefault((rating.question_id, rating.annotator_id), []).append(rating)

    raw = 0.0
    maximum = 0.0
    considered = 0
    disregarded = 0
    for key in sorted(groups):
        group = sorted(groups[key], key=lambda r: r.piece_id)
        for first, second in combinations(group, 2):
            if first.rating == 0 or second.rating == 0 or first.rating == second.rating:
                disregarded += 1
                continue
            low, high = (first, second) if first.rating < second.rating else (second, first)
            for record in (low, high):
                if (record.question_id, record.piece_id) not in scores:
                    raise ValidationError(
                        f"missing score for rated piece ({record.question_id!r}, {record.piece_id!r})"
                    )
            reward = high.rating - low.rating
            maximum += reward
            considered += 1
            if scores[(high.question_id, high.piece_id)] > scores[(low.question_id, low.piece_id)]:
                raw += reward

    weighted = raw / maximum if maximum > 0 else 0.0
    return AlignmentResult(
        weighted_match=weighted,
        pairs_considered=considered,
        pairs_disregarded=disregarded,
        raw_reward_sum=raw,
        max_reward_sum=maximum,
    )


def cs_human_overlap(
    verdicts: Sequence[str],
    categories: Sequence[str],
    cs_labels: Sequence[str | None],
) -> float:
    """Fraction of spans where the harness agrees with the human verdict.

    The harness answer per span is its category when subjective, otherwise
    the correctness label. Inputs are aligned by position.
    """
    if not verdicts:
        raise ValidationError("overlap needs at least one span")
    if not (len(verdicts) == len(categories) == len(cs_labels)):
        raise ValidationError(
            f"span sets differ in size: {len(verdicts)} verdicts, "
            f"{len(categories)} categories, {len(cs_labels)} labels"
        )
    agree = 0
    for verdict, category, label in zip(verdicts, categories, cs_labels):
        if verdict not in VERDICTS:
            raise ValidationError(f"invalid verdict {verdict!r}")
        if category == "subjective":
            harness = "subjective"
        else:
            if label is None:
                raise ValidationError("objective span is missing its correctness label")
            harness = label
        if harness == verdict:
            agree += 1
    return agree / len(verdicts)


def rank_profile(per_query_scores: Sequence[Sequence[float]]) -> list[float]:
    """Arithmetic mean of relevance score per retrieval rank across queries."""
    if not per_query_scores:
        raise ValidationError("rank profile needs at least one query")
    k = len(per_query_scores[0])
    if k == 0:
        raise ValidationError("rank profile needs at least one rank")
    for row in per_query_scores:
        if len(row) != k:
            raise ValidationError(f"heterogeneous k: expected {k}, got {len(row)}")
    return [sum(row[rank] for row in per_query_scores) / len(per_query_scores) for rank in range(k)]


def config_comparison(runs: Mapping[str, Sequence[tuple[float, str]]]) -> dict[str, float]:
    """Average correctness score over objective spans, per configuration.

    Each run maps to (cs, category) pairs; subjective spans are excluded
    from the average.
    """
    if not runs:
        raise ValidationError("comparison needs at least one configuration")
    averages: dict[str, float] = {}
    for name in sorted(runs):
        objective = [cs for cs, category in runs[name] if category == "objective"]
        if not objective:
            raise ValidationError(f"configuration {name!r} has no objective spans")
        averages[name] = sum(objective) / len(objective)
    return averages
