import math
import threading
from pathlib import Path

import httpx
import pytest

from ragscore.errors import EndpointError, MalformedReplyError, ValidationError
from ragscore.scorers import (
    Attachment,
    EndpointConfig,
    FixtureGenerator,
    FixtureScorerBackend,
    HashEmbedder,
    HttpEmbedder,
    HttpGenerator,
    HttpScorerBackend,
    ScoreCache,
    ScoreRequest,
    ScoreResponse,
    cache_key,
    fixture_scorer,
    render_cs_prompt,
    render_rs_prompt,
    rlhf_pair_loss,
    score_correctness,
    score_relevance,
    sigmoid_score,
)

from conftest import CountingScorer, RecordingScorer

GOLDEN = Path(__file__).parent / "golden"


# -- prompt templates ---------------------------------------------------------


def test_rs_prompt_matches_golden_bytes():
    rendered = render_rs_prompt("A dog on a beach")
    assert rendered == (GOLDEN / "prompt_rs.txt").read_text(encoding="utf-8")


def test_cs_prompts_match_golden_bytes():
    full = render_cs_prompt(5, "There is a pizza on the table")
    scoped = render_cs_prompt(5, "A boy with a cowboy hat is riding a white horse in <image1>")
    assert full == (GOLDEN / "prompt_cs_full.txt").read_text(encoding="utf-8")
    assert scoped == (GOLDEN / "prompt_cs_scoped.txt").read_text(encoding="utf-8")


def test_rs_prompt_placeholder_collision():
    with pytest.raises(ValidationError, match="placeholder"):
        render_rs_prompt("contains a literal <image> token")


def test_rs_prompt_empty_statement():
    with pytest.raises(ValidationError):
        render_rs_prompt("")


def test_cs_prompt_k_validation():
    with pytest.raises(ValidationError):
        render_cs_prompt(0, "anything")


# -- score math ---------------------------------------------------------------


def test_sigmoid_hand_values():
    assert sigmoid_score(0.0) == pytest.approx(0.5)
    assert sigmoid_score(-2.0) == pytest.approx(0.11920292202211755, abs=1e-8)
    assert sigmoid_score(5.0) == pytest.approx(0.9933071490757153, abs=1e-8)


def test_sigmoid_monotone_and_antisymmetric():
    grid = [x / 10 for x in range(-80, 81)]
    values = [sigmoid_score(x) for x in grid]
    assert all(lo < hi for lo, hi in zip(values, values[1:]))
    for x in grid:
        assert sigmoid_score(-x) == pytest.approx(1.0 - sigmoid_score(x), abs=1e-12)


def test_sigmoid_rejects_non_finite():
    with pytest.raises(ValidationError):
        sigmoid_score(float("nan"))
    with pytest.raises(ValidationError):
        sigmoid_score(float("inf"))


def test_rlhf_pair_loss_hand_values():
    assert rlhf_pair_loss(5.0, -5.0, 1e-6) == pytest.approx(0.013476097938606489, abs=1e-5)
    assert rlhf_pair_loss(1.3, 1.3, 1e-6) == pytest.approx(13.815510557964274, abs=1e-5)
    assert rlhf_pair_loss(-5.0, 5.0, 1e-6) == pytest.approx(13.815510557964274, abs=1e-5)


def test_rlhf_pair_loss_eps_validation():
    with pytest.raises(ValidationError):
        rlhf_pair_loss(1.0, 0.0, eps=0.0)
    with pytest.raises(ValidationError):
        rlhf_pair_loss(1.0, 0.0, eps=1.0)


def test_rlhf_pair_loss_limit_approaches_clamp_floor():
    eps = 1e-6
    floor = -math.log(1.0 - eps)
    losses = [rlhf_pair_loss(gap, -gap, eps) for gap in (5, 10, 25, 50)]
    assert all(lo >= hi for lo, hi in zip(losses, losses[1:]))
    assert all(loss >= 0.0 for loss in losses)
    # The limit settles within one floor-width of the clamp floor.
    assert abs(losses[-1] - floor) <= floor + 1e-12


# -- request/response types -----------------------------------------------------


def test_score_request_invariants():
    ScoreRequest(template="relevance", statement="s", image_refs=("a",), backend_id="b")
    with pytest.raises(ValidationError):
        ScoreRequest(template="relevance", statement="s", image_refs=("a", "b"), backend_id="b")
    with pytest.raises(ValidationError):
        ScoreRequest(template="correctness", statement="s", image_refs=(), backend_id="b")
    with pytest.raises(ValidationError):
        ScoreRequest(template="other", statement="s", image_refs=("a",), backend_id="b")


def test_score_response_consistency():
    ScoreResponse.from_logit(2.0)
    with pytest.raises(ValidationError):
        ScoreResponse(logit=2.0, score=0.2)


# -- fixture backend + dispatch ---------------------------------------------------


def image_file(tmp_path, name: str, payload: bytes = b"img") -> Path:
    path = tmp_path / name
    path.write_bytes(payload + name.encode())
    return path


def test_fixture_scorer_replay_and_strict(tmp_path):
    img = image_file(tmp_path, "a.png")
    backend = fixture_scorer({("q", ("a.png",)): 2.0})
    response = score_relevance(img, "q", backend)
    assert response.logit == 2.0
    assert response.score == pytest.approx(sigmoid_score(2.0))
    with pytest.raises(EndpointError):
        score_relevance(img, "unknown query", backend)


def test_fixture_scorer_default_logit(tmp_path):
    img = image_file(tmp_path, "a.png")
    backend = fixture_scorer({}, default_logit=0.0)
    assert score_relevance(img, "q", backend).score == pytest.approx(0.5)


def test_fixture_scorer_duplicate_key_rejected():
    with pytest.raises(ValidationError):
        FixtureScorerBackend(table={("q", ("a", "b")): 1.0, ("q", ("b", "a")): 2.0})


def test_fixture_scorer_from_file(tmp_path):
    table = tmp_path / "table.json"
    table.write_text(
        '{"default_logit": 0.25, "entries": [{"statement": "q", "images": ["a.png"], "logit": 3.5}]}',
        encoding="utf-8",
    )
    backend = FixtureScorerBackend.from_file(table)
    img = image_file(tmp_path, "a.png")
    assert score_relevance(img, "q", backend).logit == 3.5
    assert score_relevance(img, "other", backend).logit == 0.25


def test_malformed_backend_reply(tmp_path):
    img = image_file(tmp_path, "a.png")

    class TextBackend:
        backend_id = "texty"

        def score_logit(self, request, prompt, attachments):
            return "relevant"

    with pytest.raises(MalformedReplyError):
        score_relevance(img, "q", TextBackend())


# -- caching ---------------------------------------------------------------------


def test_cache_transparency(tmp_path):
    img = image_file(tmp_path, "a.png")
    backend = CountingScorer(fixture_scorer({}, default_logit=1.0))
    cache = ScoreCache()
    responses = [score_relevance(img, "q", backend, cache=cache) for _ in range(5)]
    assert backend.count == 1
    assert all(r == responses[0] for r in responses)


def test_cache_keys_by_content_hash(tmp_path):
    first = image_file(tmp_path, "one.png", payload=b"same")
    second = tmp_path / "two.png"
    second.write_bytes(first.read_bytes())
    key_a = cache_key("b", "p", (Attachment.from_path(first),))
    key_b = cache_key("b", "p", (Attachment.from_path(second),))
    assert key_a == key_b


def test_cache_single_flight(tmp_path):
    img = image_file(tmp_path, "a.png")
    started = threading.Event()
    release = threading.Event()

    class SlowBackend:
        backend_id = "slow"

        def __init__(self):
            self.count = 0

        def score_logit(self, request, prompt, attachments):
            self.count += 1
            started.set()
            release.wait(timeout=5)
            return 0.0

    backend = SlowBackend()
    cache = ScoreCache()
    results = []

    def work():
        results.append(score_relevance(img, "q", backend, cache=cache))

    threads = [threading.Thread(target=work) for _ in range(4)]
    threads[0].start()
    started.wait(timeout=5)
    for t in threads[1:]:
        t.start()
    release.set()
    for t in threads:
        t.join(timeout=5)
    assert backend.count == 1
    assert len(results) == 4


# -- correctness scoping ------------------------------------------------------------


def five_images(tmp_path):
    return [image_file(tmp_path, f"img{i}.png") for i in range(1, 6)]


def test_correctness_attaches_all_images(tmp_path):
    images = five_images(tmp_path)
    backend = RecordingScorer()
    score_correctness(images, "There is a pizza on the table", backend)
    call = backend.calls[0]
    assert call["attachment_names"] == [f"img{i}.png" for i in range(1, 6)]
    assert call["prompt"].startswith("I am giving you 5 images.")


def test_correctness_scopes_to_referenced_image(tmp_path):
    images = five_images(tmp_path)
    backend = RecordingScorer()
    score_correctness(images, "A white horse appears in <image2>", backend)
    call = backend.calls[0]
    assert call["attachment_names"] == ["img2.png"]
    assert call["prompt"].startswith("I am giving you a statement.")


def test_correctness_unresolved_reference(tmp_path):
    images = five_images(tmp_path)
    with pytest.raises(ValidationError, match=r"\[7\]"):
        score_correctness(images, "A cat in <image7>", RecordingScorer())


def test_correctness_requires_images():
    with pytest.raises(ValidationError):
        score_correctness([], "statement", RecordingScorer())


# -- deterministic embedder and generator fixtures ------------------------------------


def test_hash_embedder_deterministic_unit_vectors():
    embedder = HashEmbedder(dim=16, seed=7)
    a1 = embedder.embed_text("hello")
    a2 = embedder.embed_text("hello")
    b = embedder.embed_text("other")
    assert a1 == a2
    assert a1 != b
    assert len(a1) == 16
    assert math.fsum(v * v for v in a1) == pytest.approx(1.0, abs=1e-9)
    img = HashEmbedder(dim=16, seed=7).embed_image(b"bytes")
    assert len(img) == 16


def test_fixture_generator_matching(tmp_path):
    gen = FixtureGenerator(
        entries=[
            {"prompt_contains": "Describe", "images": ["a.png"], "text": "a desk"},
            {"prompt_contains": "Describe", "text": "something"},
        ],
        default_text="fallback",
    )
    attachment = Attachment.from_path(image_file(tmp_path, "a.png"))
    assert gen.generate("Describe the image", [attachment]) == "a desk"
    assert gen.generate("Describe the image", []) == "something"
    assert gen.generate("other prompt") == "fallback"
    strict = FixtureGenerator(entries=[])
    with pytest.raises(EndpointError):
        strict.generate("anything")


# -- HTTP endpoint clients ---------------------------------------------------------


def make_http_backend(handler, retries=1):
    transport = httpx.MockTransport(handler)
    config = EndpointConfig(base_url="http://scorer.test/score", retries=retries)
    return HttpScorerBackend(config, backend_id="http-rs", transport=transport)


def relevance_request(img_path):
    return ScoreRequest(
        template="relevance", statement="q", image_refs=(str(img_path),), backend_id="http-rs"
    )


def test_http_scorer_round_trip(tmp_path):
    img = image_file(tmp_path, "a.png")
    seen = {}

    def handler(request: httpx.Request) -> httpx.Response:
        seen["body"] = request.read()
        return httpx.Response(200, json={"logit": -1.5})

    backend = make_http_backend(handler)
    attachment = Attachment.from_path(img)
    logit = backend.score_logit(relevance_request(img), "prompt text", (attachment,))
    assert logit == -1.5
    assert b"prompt text" in seen["body"]
    assert b"images" in seen["body"]


def test_http_scorer_retries_then_succeeds(tmp_path):
    img = image_file(tmp_path, "a.png")
    calls = {"n": 0}

    def handler(request):
        calls["n"] += 1
        if calls["n"] == 1:
            return httpx.Response(500)
        return httpx.Response(200, json={"logit": 2.0})

    backend = make_http_backend(handler, retries=2)
    logit = backend.score_logit(relevance_request(img), "p", (Attachment.from_path(img),))
    assert logit == 2.0
    assert calls["n"] == 2


def test_http_scorer_exhausts_retry_budget(tmp_path):
    img = image_file(tmp_path, "a.png")
    calls = {"n": 0}

    def handler(request):
        calls["n"] += 1
        return httpx.Response(503)

    backend = make_http_backend(handler, retries=2)
    with pytest.raises(EndpointError):
        backend.score_logit(relevance_request(img), "p", (Attachment.from_path(img),))
    assert calls["n"] == 3


def test_http_scorer_malformed_replies(tmp_path):
    img = image_file(tmp_path, "a.png")

    def text_logit(request):
        return httpx.Response(200, json={"logit": "relevant"})

    with pytest.raises(MalformedReplyError):
        make_http_backend(text_logit).score_logit(relevance_request(img), "p", (Attachment.from_path(img),))

    def not_json(request):
        return httpx.Response(200, content=b"plain text")

    with pytest.raises(MalformedReplyError):
        make_http_backend(not_json).score_logit(relevance_request(img), "p", (Attachment.from_path(img),))


def test_http_auth_header_from_env(tmp_path, monkeypatch):
    monkeypatch.setenv("SCORER_TOKEN", "sekret")
    img = image_file(tmp_path, "a.png")
    seen = {}

    def handler(request):
        seen["auth"] = request.headers.get("authorization")
        return httpx.Response(200, json={"logit": 0.0})

    transport = httpx.MockTransport(handler)
    config = EndpointConfig(base_url="http://scorer.test/score", auth_env="SCORER_TOKEN")
    backend = HttpScorerBackend(config, backend_id="x", transport=transport)
    backend.score_logit(relevance_request(img), "p", (Attachment.from_path(img),))
    assert seen["auth"] == "Bearer sekret"


def test_http_embedder_and_generator():
    def handler(request):
        if b'"prompt"' in request.read():
            return httpx.Response(200, json={"text": "generated"})
        return httpx.Response(200, json={"vector": [0.1, 0.2]})

    transport = httpx.MockTransport(handler)
    embedder = HttpEmbedder(EndpointConfig(base_url="http://embed.test/"), transport=transport)
    assert embedder.embed_text("hi") == [0.1, 0.2]
    assert embedder.embed_image(b"raw") == [0.1, 0.2]

    generator = HttpGenerator(EndpointConfig(base_url="http://gen.test/"), transport=transport)
    assert generator.generate("prompt") == "generated"


def test_endpoint_config_validation():
    with pytest.raises(ValidationError):
        EndpointConfig(base_url="")
    with pytest.raises(ValidationError):
        EndpointConfig(base_url="http://x", timeout=0)
    with pytest.raises(ValidationError):
        EndpointConfig(base_url="http://x", retries=-1)
    with pytest.raises(ValidationError):
        EndpointConfig(base_url="http://x", max_in_flight=0)
