import random

import pytest

from ragscore.errors import ScoreRangeError, ValidationError
from ragscore.metrics import (
    AlignmentResult,
    HumanRating,
    LabelerConfig,
    SpanVerdict,
    alignment_reward,
    apply_labeler,
    config_comparison,
    confusion_stats,
    cs_human_overlap,
    optimize_threshold,
    rank_profile,
    sweep_thresholds,
)


def ratings(spec: dict[str, int], question="q1", annotator="a1") -> list[HumanRating]:
    return [
        HumanRating(question_id=question, piece_id=piece, rating=value, annotator_id=annotator)
        for piece, value in spec.items()
    ]


def scores_for(spec: dict[str, float], question="q1") -> dict[tuple[str, str], float]:
    return {(question, piece): value for piece, value in spec.items()}


# -- labeler -------------------------------------------------------------------


def test_apply_labeler_examples():
    cfg = LabelerConfig(threshold=0.7)
    assert apply_labeler([0.9, 0.3], cfg) == ["relevant", "irrelevant"]
    assert apply_labeler([0.7], cfg) == ["relevant"]
    assert apply_labeler([0.0, 0.5, 1.0], LabelerConfig(threshold=0.0)) == ["relevant"] * 3


def test_apply_labeler_validation():
    with pytest.raises(ScoreRangeError):
        apply_labeler([1.2], LabelerConfig(threshold=0.5))
    with pytest.raises(ValidationError):
        LabelerConfig(threshold=1.5)


# -- confusion stats -------------------------------------------------------------


def test_confusion_hand_example():
    stats = confusion_stats([0.9, 0.8, 0.6], [0.4, 0.75, 0.2], eta=0.7)
    assert stats.true0 == pytest.approx(2 / 3)
    assert stats.true1 == pytest.approx(2 / 3)
    assert stats.accuracy == pytest.approx(4 / 6)
    assert (stats.pos_hits, stats.neg_hits) == (2, 2)


def test_confusion_separable_and_boundary():
    perfect = confusion_stats([1.0], [0.0], eta=0.5)
    assert (perfect.true0, perfect.true1, perfect.accuracy) == (1.0, 1.0, 1.0)
    boundary = confusion_stats([0.5], [0.5], eta=0.5)
    assert (boundary.true0, boundary.true1, boundary.accuracy) == (1.0, 0.0, 0.5)


def test_confusion_validation():
    with pytest.raises(ValidationError):
        confusion_stats([], [0.5], eta=0.5)
    with pytest.raises(ScoreRangeError):
        confusion_stats([0.5], [-0.1], eta=0.5)


def test_confusion_matches_label_counting():
    rng = random.Random(11)
    for _ in range(25):
        pos = [rng.random() for _ in range(rng.randint(1, 30))]
        neg = [rng.random() for _ in range(rng.randint(1, 30))]
        eta = rng.random()
        stats = confusion_stats(pos, neg, eta)
        cfg = LabelerConfig(threshold=eta)
        pos_labels = apply_labeler(pos, cfg)
        neg_labels = apply_labeler(neg, cfg)
        assert stats.pos_hits == pos_labels.count("relevant")
        assert stats.neg_hits == neg_labels.count("irrelevant")
        assert stats.accuracy == pytest.approx(
            (stats.pos_hits + stats.neg_hits) / (len(pos) + len(neg))
        )


# -- threshold sweep and optimization --------------------------------------------


def test_sweep_endpoints_and_monotonicity():
    curve = sweep_thresholds([0.9, 0.8], [0.3, 0.1], step=0.25)
    etas = [eta for eta, _ in curve]
    assert etas == [0.0, 0.25, 0.5, 0.75, 1.0]
    first, last = curve[0][1], curve[-1][1]
    assert (first.true0, first.true1) == (1.0, 0.0)
    assert last.true1 == 1.0
    true0s = [s.true0 for _, s in curve]
    true1s = [s.true1 for _, s in curve]
    assert all(a >= b for a, b in zip(true0s, true0s[1:]))
    assert all(a <= b for a, b in zip(true1s, true1s[1:]))


def test_sweep_interior_separable():
    curve = sweep_thresholds([0.9, 0.8], [0.3, 0.1], step=0.25)
    middle = dict(curve)[0.5]
    assert (middle.true0, middle.true1) == (1.0, 1.0)


def test_sweep_step_validation():
    with pytest.raises(ValidationError):
        sweep_thresholds([0.5], [0.5], step=0.0)
    with pytest.raises(ValidationError):
        sweep_thresholds([0.5], [0.5], step=0.6)


def test_sweep_grid_has_exact_decimal_etas():
    curve = sweep_thresholds([0.9], [0.1], step=0.1)
    assert [eta for eta, _ in curve] == [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]


def test_optimize_threshold_derived_fixture():
    curve = sweep_thresholds([0.9, 0.8], [0.3, 0.1], step=0.1)
    assert optimize_threshold(curve) == 0.4


def test_optimize_threshold_mirror_symmetric():
    curve = sweep_thresholds([0.9, 0.7, 0.6], [0.1, 0.3, 0.4], step=0.1)
    assert optimize_threshold(curve) == 0.5


def test_optimize_threshold_degenerate_and_duplication():
    single = [(0.3, confusion_stats([0.9], [0.1], 0.3))]
    assert optimize_threshold(single) == 0.3
    with pytest.raises(ValidationError):
        optimize_threshold([])
    pos, neg = [0.9, 0.8, 0.55], [0.3, 0.45, 0.1]
    base = optimize_threshold(sweep_thresholds(pos, neg, 0.05))
    doubled = optimize_threshold(sweep_thresholds(pos * 2, neg * 2, 0.05))
    assert base == doubled


# -- alignment -------------------------------------------------------------------


def test_alignment_worked_example():
    result = alignment_reward(
        ratings({"A": 1, "B": 3, "C": 0}),
        scores_for({"A": 0.2, "B": 0.9, "C": 0.5}),
    )
    assert result.pairs_disregarded == 2
    assert result.pairs_considered == 1
    assert result.raw_reward_sum == 2
    assert result.max_reward_sum == 2
    assert result.weighted_match == 1.0


def test_alignment_full_reversal():
    result = alignment_reward(
        ratings({"A": 1, "B": 3}),
        scores_for({"A": 0.9, "B": 0.2}),
    )
    assert result.weighted_match == 0.0
    assert result.raw_reward_sum == 0.0
    assert result.max_reward_sum == 2


def test_alignment_scores_equal_to_ratings():
    spec = {"A": 1, "B": 3, "C": 4, "D": 2}
    result = alignment_reward(ratings(spec), scores_for({k: float(v) for k, v in spec.items()}))
    assert result.weighted_match == 1.0


def test_alignment_ties_count_as_non_match():
    result = alignment_reward(
        ratings({"A": 1, "B": 3}),
        scores_for({"A": 0.5, "B": 0.5}),
    )
    assert result.weighted_match == 0.0
    assert result.pairs_considered == 1


def test_alignment_missing_score():
    with pytest.raises(ValidationError, match="missing score"):
        alignment_reward(ratings({"A": 1, "B": 3}), scores_for({"A": 0.2}))


def test_alignment_groups_by_question_and_annotator():
    records = ratings({"A": 1, "B": 3}, question="q1", annotator="x") + ratings(
        {"A": 4, "B": 2}, question="q2", annotator="x"
    )
    scores = {**scores_for({"A": 0.1, "B": 0.9}, question="q1"), **scores_for({"A": 0.8, "B": 0.3}, question="q2")}
    result = alignment_reward(records, scores)
    assert result.pairs_considered == 2
    assert result.weighted_match == 1.0
    # Cross-annotator ratings on the same question never pair up.
    mixed = ratings({"A": 1}, annotator="x") + ratings({"B": 3}, annotator="y")
    lonely = alignment_reward(mixed, scores_for({"A": 0.2, "B": 0.9}))
    assert lonely.pairs_considered == 0
    assert lonely.pairs_disregarded == 0


def test_alignment_monotone_transforms():
    spec = {"A": 1, "B": 3, "C": 4, "D": 2}
    transforms = [
        lambda r: r / 10,
        lambda r: r * r / 20,
        lambda r: 0.1 + 0.2 * r,
    ]
    for transform in transforms:
        result = alignment_reward(
            ratings(spec), scores_for({k: transform(v) for k, v in spec.items()})
        )
        assert result.weighted_match == 1.0
    decreasing = alignment_reward(ratings(spec), scores_for({k: 1.0 - v / 10 for k, v in spec.items()}))
    assert decreasing.weighted_match == 0.0


def test_alignment_mean_reward_property():
    result = AlignmentResult(
        weighted_match=0.5, pairs_considered=4, pairs_disregarded=1, raw_reward_sum=6.0, max_reward_sum=12.0
    )
    assert result.mean_reward == 1.5
    empty = AlignmentResult(
        weighted_match=0.0, pairs_considered=0, pairs_disregarded=0, raw_reward_sum=0.0, max_reward_sum=0.0
    )
    assert empty.mean_reward == 0.0


def test_rating_and_verdict_validation():
    with pytest.raises(ValidationError):
        HumanRating(question_id="q", piece_id="p", rating=5, annotator_id="a")
    with pytest.raises(ValidationError):
        SpanVerdict(question_id="q", span_index=0, verdict="maybe", annotator_id="a")


# -- overlap ---------------------------------------------------------------------


def test_overlap_full_agreement():
    verdicts = ["correct", "incorrect", "subjective", "correct"]
    categories = ["objective", "objective", "subjective", "objective"]
    labels = ["correct", "incorrect", None, "correct"]
    assert cs_human_overlap(verdicts, categories, labels) == 1.0


def test_overlap_partial():
    verdicts = ["correct", "incorrect", "correct", "correct"]
    categories = ["objective", "objective", "subjective", "objective"]
    labels = ["correct", "incorrect", None, "correct"]
    assert cs_human_overlap(verdicts, categories, labels) == 0.75


def test_overlap_validation():
    with pytest.raises(ValidationError):
        cs_human_overlap([], [], [])
    with pytest.raises(ValidationError):
        cs_human_overlap(["correct"], ["objective", "objective"], ["correct", "correct"])
    with pytest.raises(ValidationError):
        cs_human_overlap(["correct"], ["objective"], [None])


# -- rank profile and configuration comparison -------------------------------------


def test_rank_profile_mean():
    assert rank_profile([[0.8, 0.6], [0.4, 0.2]]) == [pytest.approx(0.6), pytest.approx(0.4)]


def test_rank_profile_single_query_identity():
    assert rank_profile([[0.9, 0.5, 0.1]]) == [0.9, 0.5, 0.1]


def test_rank_profile_heterogeneous_k():
    with pytest.raises(ValidationError, match="heterogeneous"):
        rank_profile([[0.9, 0.5], [0.1]])
    with pytest.raises(ValidationError):
        rank_profile([])


def test_config_comparison_mean_and_exclusion():
    runs = {"X": [(0.9, "objective"), (0.7, "objective"), (0.1, "subjective")]}
    assert config_comparison(runs) == {"X": pytest.approx(0.8)}


def test_config_comparison_requires_objective_spans():
    with pytest.raises(ValidationError, match="no objective spans"):
        config_comparison({"X": [(0.5, "subjective")]})
    with pytest.raises(ValidationError):
        config_comparison({})


def test_config_comparison_permutation_invariant():
    spans = [(0.9, "objective"), (0.2, "subjective"), (0.5, "objective"), (0.7, "objective")]
    shuffled = list(spans)
    random.Random(9).shuffle(shuffled)
    assert config_comparison({"A": spans}) == config_comparison({"A": shuffled})
    assert config_comparison({"A": spans, "B": spans})["A"] == config_comparison({"A": spans, "B": spans})["B"]
