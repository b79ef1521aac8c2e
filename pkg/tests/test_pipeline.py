import logging

import pytest

from ragscore.errors import EndpointError, PipelineError, ValidationError
from ragscore.index import build_index
from ragscore.pipeline import (
    CONTEXT_PLACEHOLDER,
    DIRECT_MLLM,
    RS_RESCORING,
    RagConfig,
    RagTrace,
    generate_context,
    generate_response,
    read_scored_traces,
    read_traces,
    run_query,
    score_trace,
    write_scored_traces,
    write_traces,
)
from ragscore.scorers import FixtureGenerator, HashEmbedder, fixture_scorer
from ragscore.spans import MarkerLexicon

from conftest import RecordingScorer, make_image_corpus


@pytest.fixture(scope="module")
def lexicon():
    return MarkerLexicon.default()


class EchoGenerator:
    """Replies with a tag plus how many images it saw."""

    def __init__(self, tag):
        self.tag = tag
        self.calls = []

    def generate(self, prompt, images=()):
        self.calls.append({"prompt": prompt, "image_names": [a.name for a in images]})
        return f"{self.tag}({len(images)} images)"


class FailingGenerator:
    def generate(self, prompt, images=()):
        raise EndpointError("endpoint timed out")


def fixture_vlm(names):
    return FixtureGenerator(
        entries=[{"images": [f"{n}.png"], "text": f"description of {n}"} for n in names]
    )


def per_piece_config(tmp_path, response_text="There is a pizza on the table."):
    corpus = make_image_corpus(tmp_path / "corpus", ["alpha", "beta", "gamma"])
    embedder = HashEmbedder(dim=8, seed=1)
    config = RagConfig(
        k=2,
        embedder=embedder,
        vlm=fixture_vlm(["alpha", "beta", "gamma"]),
        llm=FixtureGenerator(default_text=response_text),
    )
    index = build_index(corpus, embedder)
    return corpus, index, config


def test_run_query_per_piece(tmp_path):
    corpus, index, config = per_piece_config(tmp_path)
    trace = run_query("what food is shown?", corpus, index, config)
    assert len(trace.retrieved) == 2
    assert len(trace.contexts) == 2
    assert all(c.startswith("description of ") for c in trace.contexts)
    assert trace.response == "There is a pizza on the table."
    assert set(trace.timings) == {"select", "context", "respond", "total"}
    assert trace.config["selection"] == "cosine_topk"


def test_run_query_direct_mode(tmp_path):
    corpus = make_image_corpus(tmp_path / "corpus", ["a", "b", "c", "d", "e"])
    embedder = HashEmbedder(dim=8, seed=2)
    mllm = EchoGenerator("answer")
    config = RagConfig(k=5, generation_mode=DIRECT_MLLM, embedder=embedder, mllm=mllm)
    index = build_index(corpus, embedder)
    trace = run_query("query", corpus, index, config)
    assert trace.contexts == ()
    assert trace.response == "answer(5 images)"
    assert len(mllm.calls) == 1
    assert len(mllm.calls[0]["image_names"]) == 5


def test_run_query_rescoring_selection(tmp_path):
    corpus = make_image_corpus(tmp_path / "corpus", ["x", "y"])
    rs = fixture_scorer({("q", ("x.png",)): 3.0, ("q", ("y.png",)): -3.0})
    config = RagConfig(
        k=1,
        selection=RS_RESCORING,
        rs_scorer=rs,
        generation_mode=DIRECT_MLLM,
        mllm=EchoGenerator("ok"),
    )
    trace = run_query("q", corpus, None, config)
    assert [r.piece_id for r in trace.retrieved] == ["x"]
    assert 0.0 <= trace.retrieved[0].similarity <= 1.0


def test_run_query_empty_corpus(tmp_path):
    corpus = make_image_corpus(tmp_path / "corpus", [])
    embedder = HashEmbedder(dim=8)
    config = RagConfig(k=2, embedder=embedder, vlm=EchoGenerator("v"), llm=EchoGenerator("l"))
    index = build_index(corpus, embedder)
    with pytest.raises(ValidationError, match="empty"):
        run_query("q", corpus, index, config)


def test_run_query_missing_bindings(tmp_path):
    corpus, index, _ = per_piece_config(tmp_path)
    with pytest.raises(ValidationError, match="requires"):
        run_query("q", corpus, index, RagConfig(k=1, embedder=HashEmbedder(dim=8)))


def test_partial_trace_on_generation_failure(tmp_path):
    corpus, index, config = per_piece_config(tmp_path)
    config.llm = FailingGenerator()
    with pytest.raises(PipelineError) as excinfo:
        run_query("q", corpus, index, config)
    partial = excinfo.value.partial_trace
    assert partial is not None
    assert len(partial.retrieved) == 2
    assert len(partial.contexts) == 2
    assert partial.response == ""


def test_generate_context_skip_policy(tmp_path, caplog):
    corpus, index, config = per_piece_config(tmp_path)
    retrieved = run_query("q", corpus, index, config).retrieved[:1]
    config.vlm = FailingGenerator()
    with pytest.raises(EndpointError):
        generate_context(corpus, retrieved, config)
    config.context_error_policy = "skip"
    with caplog.at_level(logging.WARNING):
        contexts = generate_context(corpus, retrieved, config)
    assert contexts == [CONTEXT_PLACEHOLDER]
    assert any("placeholder" in m for m in caplog.messages)
    assert generate_context(corpus, [], config) == []


def test_generate_response_contract(tmp_path):
    config = RagConfig(k=1, embedder=HashEmbedder(dim=8), vlm=EchoGenerator("v"), llm=EchoGenerator("l"))
    with pytest.raises(ValidationError, match="nonempty contexts"):
        generate_response("q", config, contexts=[])
    response = generate_response("q", config, contexts=["a pizza on a table"])
    assert response == "l(0 images)"
    prompt = config.llm.calls[0]["prompt"]
    assert "Image 1: a pizza on a table" in prompt
    assert "Question: q" in prompt


def test_generate_response_rejects_empty_reply(tmp_path):
    config = RagConfig(k=1, embedder=HashEmbedder(dim=8), vlm=EchoGenerator("v"), llm=FixtureGenerator(default_text="  "))
    with pytest.raises(EndpointError, match="empty"):
        generate_response("q", config, contexts=["ctx"])


def test_trace_determinism_and_mode_exclusivity(tmp_path):
    records = []
    for _ in range(2):
        corpus, index, config = per_piece_config(tmp_path)
        trace = run_query("q", corpus, index, config)
        records.append(trace.to_record(mask_timings=True))
        assert trace.contexts != ()  # per-piece mode always carries contexts
    assert records[0] == records[1]


def test_trace_round_trip(tmp_path):
    corpus, index, config = per_piece_config(tmp_path)
    traces = [run_query("q1", corpus, index, config), run_query("q2", corpus, index, config)]
    path = tmp_path / "traces.jsonl"
    write_traces(path, traces)
    loaded = read_traces(path)
    assert [t.to_record() for t in loaded] == [t.to_record() for t in traces]


# -- score_trace -----------------------------------------------------------------


def scored_fixture(tmp_path, lexicon, response_text):
    corpus, index, config = per_piece_config(tmp_path, response_text=response_text)
    trace = run_query("what is shown?", corpus, index, config)
    rs_backend = fixture_scorer({}, default_logit=1.0, backend_id="rs")
    cs_backend = RecordingScorer(logit=2.0, backend_id="cs")
    scored = score_trace(trace, corpus, rs_backend, cs_backend, lexicon)
    return trace, scored, cs_backend


def test_score_trace_scores_every_retrieval(tmp_path, lexicon):
    trace, scored, _ = scored_fixture(tmp_path, lexicon, "There is a pizza on the table.")
    assert len(scored.relevance) == len(trace.retrieved)
    assert all(row.logit == 1.0 for row in scored.relevance)
    assert [row.rank for row in scored.relevance] == [1, 2]


def test_score_trace_skips_subjective_spans(tmp_path, lexicon):
    _, scored, cs_backend = scored_fixture(
        tmp_path, lexicon, "There is a pizza. The pizza might be fresh."
    )
    categories = [s.span.category for s in scored.spans]
    assert categories == ["objective", "subjective"]
    assert scored.spans[0].correctness is not None
    assert scored.spans[1].correctness is None
    # Only the objective span reached the correctness backend.
    assert len(cs_backend.calls) == 1


def test_score_trace_scopes_referenced_images(tmp_path, lexicon):
    _, scored, cs_backend = scored_fixture(
        tmp_path, lexicon, "A man stands in <image2>. The sky is clear."
    )
    scoped_call = cs_backend.calls[0]
    assert len(scoped_call["attachment_names"]) == 1
    full_call = cs_backend.calls[1]
    assert len(full_call["attachment_names"]) == 2


def test_scored_trace_round_trip(tmp_path, lexicon):
    _, scored, _ = scored_fixture(tmp_path, lexicon, "There is a pizza on the table.")
    path = tmp_path / "scored.jsonl"
    write_scored_traces(path, [scored])
    loaded = read_scored_traces(path)
    assert [s.to_record() for s in loaded] == [scored.to_record()]
