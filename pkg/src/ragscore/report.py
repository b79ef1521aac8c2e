"""Structured evaluation reports: canonical JSON plus rendered text tables.

Output is deterministic byte-for-byte: keys are sorted, floats are emitted
through repr, mappings iterate in sorted order, and the header carries the
metric conventions instead of timestamps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping, Sequence

from .errors import ValidationError
from .metrics import AlignmentResult, ConfusionStats

SCHEMA = "rag-eval-report-v1"

_CONVENTIONS = {
    "labeler_boundary": "score >= threshold is labeled positive",
    "alignment_headline": "weighted_match = matched_reward_sum / max_reward_sum",
    "alignment_pairing": "pairs formed within (question, annotator); unsure or equal ratings disregarded",
    "score_ties": "exact score ties count as non-match",
    "config_comparison": "mean correctness score over objective spans only",
    "rank_profile": "mean relevance score per retrieval rank across queries",
}


@dataclass(frozen=True)
class Report:
    document: dict

    def to_json(self) -> str:
        return json.dumps(self.document, indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        return render_text(self.document)

    def save(self, json_path, text_path=None) -> None:
        from pathlib import Path

        Path(json_path).write_text(self.to_json(), encoding="utf-8")
        if text_path is not None:
            Path(text_path).write_text(self.to_text(), encoding="utf-8")


def _confusion_row(stats: ConfusionStats) -> dict:
    return {
        "accuracy": stats.accuracy,
        "true0": stats.true0,
        "true1": stats.true1,
        "pos_total": stats.pos_total,
        "pos_hits": stats.pos_hits,
        "neg_total": stats.neg_total,
        "neg_hits": stats.neg_hits,
    }


def emit_report(
    labeler_performance: Sequence[tuple[str, ConfusionStats]] | None = None,
    alignment: Sequence[tuple[str, AlignmentResult]] | None = None,
    threshold_curve: Sequence[tuple[float, ConfusionStats]] | None = None,
    rank_profiles: Mapping[str, Sequence[float]] | None = None,
    config_comparison: Mapping[str, float] | None = None,
    cs_human_overlap: float | None = None,
    optimized_threshold: float | None = None,
) -> Report:
    """Assemble the report document from whichever metrics were computed.

    At least one section is required. Section shapes mirror the evaluation
    tables this harness reproduces: per-model labeler performance, per-method
    alignment values, the threshold trade-off curve, per-rank relevance
    profiles, and the cross-configuration correctness comparison.
    """
    sections: dict = {}

    if labeler_performance is not None:
        sections["labeler_performance"] = {
            "models": [{"model": name, **_confusion_row(stats)} for name, stats in labeler_performance]
        }
    if alignment is not None or cs_human_overlap is not None:
        entry: dict = {}
        if alignment is not None:
            entry["methods"] = [
                {
                    "method": name,
                    "weighted_match": result.weighted_match,
                    "mean_reward": result.mean_reward,
                    "raw_reward_sum": result.raw_reward_sum,
                    "max_reward_sum": result.max_reward_sum,
                    "pairs_considered": result.pairs_considered,
                    "pairs_disregarded": result.pairs_disregarded,
                }
                for name, result in alignment
            ]
        if cs_human_overlap is not None:
            entry["cs_human_overlap"] = cs_human_overlap
        sections["alignment"] = entry
    if threshold_curve is not None:
        curve_entry: dict = {
            "points": [
                {"eta": eta, "true0": stats.true0, "true1": stats.true1, "accuracy": stats.accuracy}
                for eta, stats in threshold_curve
            ]
        }
        if optimized_threshold is not None:
            curve_entry["optimized_threshold"] = optimized_threshold
        sections["threshold_curve"] = curve_entry
    if rank_profiles is not None:
        sections["rank_profile"] = {
            "methods": {name: list(profile) for name, profile in sorted(rank_profiles.items())}
        }
    if config_comparison is not None:
        sections["config_comparison"] = {
            "configs": [
                {"config": name, "average_cs": value} for name, value in sorted(config_comparison.items())
            ]
        }

    if not sections:
        raise ValidationError("report needs at least one computed metric section")

    return Report(
        document={
            "schema": SCHEMA,
            "header": {"conventions": dict(_CONVENTIONS)},
            "sections": sections,
        }
    )


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def _table(headers: list[str], rows: list[list], indent: str = "  ") -> list[str]:
    cells = [[_fmt(v) for v in row] for row in rows]
    widths = [max(len(h), *(len(r[i]) for r in cells)) if cells else len(h) for i, h in enumerate(headers)]
    lines = [indent + "  ".join(h.ljust(widths[i]) for i, h in enumerate(h for h in headers)).rstrip()]
    for row in cells:
        lines.append(indent + "  ".join(row[i].ljust(widths[i]) for i in range(len(row))).rstrip())
    return lines


def render_text(document: dict) -> str:
    """Fixed-width table rendering of a report document."""
    lines: list[str] = [f"evaluation report ({document.get('schema', '?')})", ""]
    conventions = document.get("header", {}).get("conventions", {})
    if conventions:
        lines.append("conventions:")
        for key in sorted(conventions):
            lines.append(f"  {key}: {conventions[key]}")
        lines.append("")

    sections = document.get("sections", {})

    if "labeler_performance" in sections:
        lines.append("== labeler performance ==")
        rows = [
            [m["model"], m["accuracy"], m["true0"], m["true1"]]
            for m in sections["labeler_performance"]["models"]
        ]
        lines += _table(["model", "accuracy", "true0", "true1"], rows)
        lines.append("")

    if "alignment" in sections:
        lines.append("== alignment with human ratings ==")
        entry = sections["alignment"]
        if "methods" in entry:
            rows = [
                [m["method"], m["weighted_match"], m["pairs_considered"], m["pairs_disregarded"]]
                for m in entry["methods"]
            ]
            lines += _table(["method", "weighted_match", "considered", "disregarded"], rows)
        if "cs_human_overlap" in entry:
            lines.append(f"  cs_human_overlap: {_fmt(entry['cs_human_overlap'])}")
        lines.append("")

    if "threshold_curve" in sections:
        lines.append("== threshold trade-off ==")
        entry = sections["threshold_curve"]
        rows = [[p["eta"], p["true0"], p["true1"], p["accuracy"]] for p in entry["points"]]
        lines += _table(["eta", "true0", "true1", "accuracy"], rows)
        if "optimized_threshold" in entry:
            lines.append(f"  optimized_threshold: {_fmt(entry['optimized_threshold'])}")
        lines.append("")

    if "rank_profile" in sections:
        lines.append("== average relevance by rank ==")
        for name, profile in sorted(sections["rank_profile"]["methods"].items()):
            values = ", ".join(_fmt(v) for v in profile)
            lines.append(f"  {name}: [{values}]")
        lines.append("")

    if "config_comparison" in sections:
        lines.append("== configuration comparison (mean CS, objective spans) ==")
        rows = [[c["config"], c["average_cs"]] for c in sections["config_comparison"]["configs"]]
        lines += _table(["config", "average_cs"], rows)
        lines.append("")

    return "\n".join(lines).rstrip() + "\n"
