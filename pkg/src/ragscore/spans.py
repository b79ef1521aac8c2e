"""Partition a generated response into atomic statements and categorize them.

An atomic statement is a full sentence that stands on its own. With a
rewriting backend attached, partitioning also resolves pronouns to their
referents; without one, a deliberately simple terminator-based splitter is
used and the result is flagged as lower fidelity.

Each statement is categorized as subjective (opinion, hedging, conjecture,
preference markers present) or objective (scorable against the retrieved
context), and explicit ``<imageN>`` references are extracted for
reference-scoped correctness scoring.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Protocol, Sequence

from .errors import MalformedReplyError, ValidationError

logger = logging.getLogger(__name__)

SUBJECTIVE = "subjective"
OBJECTIVE = "objective"

FIDELITY_REWRITER = "rewriter"
FIDELITY_RULE_FALLBACK = "rule-fallback"

LEXICON_SECTIONS = (
    "modal_verbs",
    "opinion_indicators",
    "hedging_phrases",
    "uncertain_quantifiers",
    "frequency_degree_adverbs",
    "judgmental_adjectives",
    "conjectures",
    "comparisons_preferences",
)

_IMAGE_REF_RE = re.compile(r"<image(\d+)>")
_BARE_IMAGE_TOKEN_RE = re.compile(r"<image>")

# Periods after these tokens never end a sentence.
_ABBREVIATIONS = frozenset(
    {"mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "etc", "vs", "e.g", "i.e", "fig", "no", "approx"}
)
_TERMINATORS = ".!?"


class Rewriter(Protocol):
    """Text-generation endpoint used to partition and pronoun-resolve."""

    def generate(self, prompt: str, images: Sequence = ()) -> str: ...


@dataclass(frozen=True)
class Span:
    """One atomic statement of a response, with category and image references."""

    index: int
    text: str
    source_range: tuple[int, int]
    category: str
    image_refs: tuple[int, ...]

    def __post_init__(self):
        if not self.text:
            raise ValidationError("span text must be nonempty")
        if self.category not in (SUBJECTIVE, OBJECTIVE):
            raise ValidationError(f"invalid span category {self.category!r}")
        if any(ref < 1 for ref in self.image_refs):
            raise ValidationError("image references must be 1-based positive indices")


@dataclass(frozen=True)
class PartitionResult:
    statements: tuple[str, ...]
    fidelity: str


@dataclass(frozen=True)
class MarkerLexicon:
    """Eight named term lists driving subjective/objective categorization.

    Terms are lowercase and matched as whole words or phrases,
    case-insensitively. The lexicon ships as a data file so the classifier's
    behavior stays auditable and swappable.
    """

    modal_verbs: tuple[str, ...]
    opinion_indicators: tuple[str, ...]
    hedging_phrases: tuple[str, ...]
    uncertain_quantifiers: tuple[str, ...]
    frequency_degree_adverbs: tuple[str, ...]
    judgmental_adjectives: tuple[str, ...]
    conjectures: tuple[str, ...]
    comparisons_preferences: tuple[str, ...]

    def __post_init__(self):
        for section in LEXICON_SECTIONS:
            terms = getattr(self, section)
            if not terms:
                raise ValidationError(f"lexicon section {section!r} must be nonempty")
            if len(set(terms)) != len(terms):
                raise ValidationError(f"lexicon section {section!r} has duplicate terms")
            for term in terms:
                if not term or term != term.lower().strip():
                    raise ValidationError(f"lexicon term {term!r} must be lowercase and trimmed")

    def sections(self):
        for section in LEXICON_SECTIONS:
            yield section, getattr(self, section)

    @classmethod
    def from_lists(cls, sections: dict[str, Sequence[str]]) -> "MarkerLexicon":
        """Build a lexicon, normalizing case/whitespace and deduplicating."""
        unknown = set(sections) - set(LEXICON_SECTIONS)
        if unknown:
            raise ValidationError(f"unknown lexicon sections: {sorted(unknown)}")
        cleaned = {}
        for name in LEXICON_SECTIONS:
            seen: list[str] = []
            for term in sections.get(name, ()):
                term = " ".join(term.lower().split())
                if term and term not in seen:
                    seen.append(term)
            cleaned[name] = tuple(seen)
        return cls(**cleaned)

    @classmethod
    def from_file(cls, path: Path) -> "MarkerLexicon":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def from_text(cls, text: str) -> "MarkerLexicon":
        sections: dict[str, list[str]] = {}
        current: str | None = None
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("[") and line.endswith("]"):
                current = line[1:-1].strip()
                if current not in LEXICON_SECTIONS:
                    raise ValidationError(f"unknown lexicon section header {current!r}")
                sections.setdefault(current, [])
                continue
            if current is None:
                raise ValidationError(f"lexicon term {line!r} appears before any section header")
            sections[current].append(line)
        missing = [name for name in LEXICON_SECTIONS if name not in sections]
        if missing:
            raise ValidationError(f"lexicon file missing sections: {missing}")
        return cls.from_lists(sections)

    @classmethod
    def default(cls) -> "MarkerLexicon":
        text = resources.files("ragscore.assets").joinpath("lexicon_v1.txt").read_text(encoding="utf-8")
        return cls.from_text(text)

    def first_match(self, text: str) -> tuple[str, str] | None:
        """The (section, term) of the first marker found, for explainability."""
        for section, terms in self.sections():
            for term in terms:
                if _term_pattern(term).search(text):
                    return section, term
        return None


@lru_cache(maxsize=4096)
def _term_pattern(term: str) -> re.Pattern:
    body = r"\s+".join(re.escape(word) for word in term.split())
    return re.compile(rf"(?<!\w){body}(?!\w)", re.IGNORECASE)


def categorize_span(text: str, lexicon: MarkerLexicon) -> str:
    """Subjective iff any lexicon term matches as a whole word or phrase."""
    if not text:
        raise ValidationError("cannot categorize empty text")
    return SUBJECTIVE if lexicon.first_match(text) is not None else OBJECTIVE


def extract_image_refs(text: str) -> list[int]:
    """All N from well-formed ``<imageN>`` tokens, in order, deduplicated."""
    refs: list[int] = []
    for match in _IMAGE_REF_RE.finditer(text):
        value = int(match.group(1))
        if value < 1:
            logger.warning("ignoring malformed image reference %r in %r", match.group(0), text)
            continue
        if value not in refs:
            refs.append(value)
    if _BARE_IMAGE_TOKEN_RE.search(text):
        logger.warning("ignoring digitless <image> token in %r", text)
    return refs


def _is_abbreviation_period(text: str, i: int) -> bool:
    j = i
    while j > 0 and (text[j - 1].isalpha() or text[j - 1] == "."):
        j -= 1
    token = text[j:i].lower().strip(".")
    if not token:
        return False
    # Single letters are treated as initials ("J. Smith").
    return len(token) == 1 or token in _ABBREVIATIONS


def _is_decimal_point(text: str, i: int) -> bool:
    return 0 < i < len(text) - 1 and text[i - 1].isdigit() and text[i + 1].isdigit()


def sentence_ranges(text: str) -> list[tuple[int, int]]:
    """Trimmed (start, end) offsets of sentences under the fallback rule.

    Sentences end at . ! ? outside double quotes, with a small abbreviation
    stoplist and decimal points excluded. Deliberately simple: a
    deterministic baseline that needs no model endpoint.
    """
    ranges: list[tuple[int, int]] = []
    start = 0
    in_quote = False
    i = 0
    n = len(text)

    def flush(end: int) -> None:
        nonlocal start
        s, e = start, end
        while s < e and text[s].isspace():
            s += 1
        while e > s and text[e - 1].isspace():
            e -= 1
        if s < e:
            ranges.append((s, e))
        start = end

    while i < n:
        ch = text[i]
        if ch == '"':
            in_quote = not in_quote
        elif ch in _TERMINATORS and not in_quote:
            if ch == "." and (_is_abbreviation_period(text, i) or _is_decimal_point(text, i)):
                i += 1
                continue
            while i + 1 < n and text[i + 1] in _TERMINATORS:
                i += 1
            flush(i + 1)
        i += 1
    flush(n)
    return ranges


def _load_partition_prompt() -> str:
    return resources.files("ragscore.assets.prompts").joinpath("partition_v1.txt").read_text(encoding="utf-8")


def partition_response(response: str, rewriter: Rewriter | None = None) -> PartitionResult:
    """Break a response into atomic statements.

    With a rewriter, the partition prompt asks for one pronoun-resolved
    statement per line. Without one, sentences are split on terminators with
    no pronoun resolution and the result carries the rule-fallback fidelity
    flag.
    """
    if not response or not response.strip():
        raise ValidationError("response must be nonempty")

    if rewriter is None:
        statements = tuple(response[s:e] for s, e in sentence_ranges(response))
        return PartitionResult(statements=statements, fidelity=FIDELITY_RULE_FALLBACK)

    prompt = _load_partition_prompt().replace("{response}", response)
    output = rewriter.generate(prompt)
    if output is None or not output.strip():
        raise MalformedReplyError("rewriter returned empty partition output")
    statements = tuple(line.strip() for line in output.splitlines() if line.strip())
    for line in statements:
        if not re.search(r"\w", line):
            raise MalformedReplyError(f"rewriter emitted a non-statement line: {line!r}")
    return PartitionResult(statements=statements, fidelity=FIDELITY_REWRITER)


def process_response(response: str, lexicon: MarkerLexicon, rewriter: Rewriter | None = None) -> list[Span]:
    """Partition, then categorize each statement and extract its image refs.

    Source ranges come from a left-to-right greedy match of statements into
    the original response; a rewritten statement that no longer appears
    verbatim gets the range of its enclosing sentence.
    """
    partition = partition_response(response, rewriter)
    sent_ranges = sentence_ranges(response)

    spans: list[Span] = []
    cursor = 0
    sent_ptr = 0
    for i, statement in enumerate(partition.statements):
        pos = response.find(statement, cursor)
        if pos >= 0:
            rng = (pos, pos + len(statement))
            cursor = rng[1]
            while sent_ptr < len(sent_ranges) and sent_ranges[sent_ptr][1] <= rng[1]:
                sent_ptr += 1
        else:
            if sent_ranges:
                rng = sent_ranges[min(sent_ptr, len(sent_ranges) - 1)]
            else:
                rng = (0, len(response))
            sent_ptr += 1
        spans.append(
            Span(
                index=i,
                text=statement,
                source_range=rng,
                category=categorize_span(statement, lexicon),
                image_refs=tuple(extract_image_refs(statement)),
            )
        )
    return spans
