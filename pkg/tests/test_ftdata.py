import pytest
from hypothesis import given, settings, strategies as st

from qaroute.core import Action
from qaroute.ftdata import (ACCEPT, GraphContext, ContextTriple, build,
                            build_question, contamination, extract_context,
                            from_chat_template, query_head_noun,
                            quality_filter, render, split, to_chat_template,
                            PLANNER_SYSTEM_PROMPT)

from helpers import golden_dialogue, golden_graph, make_sample


@pytest.fixture()
def ggraph():
    return golden_graph()


def _ask_sample():
    return golden_dialogue()[1]


# -- context extraction ------------------------------------------------------

def test_extract_context_seeds_from_known_variables(ggraph, embedder):
    ctx = extract_context(_ask_sample(), ggraph, embedder)
    assert ("album", pytest.approx(1.0)) in \
        [(n, s) for n, s in ctx.matched_nodes]


def test_extract_context_ask_carries_requires_alias(ggraph, embedder):
    ctx = extract_context(_ask_sample(), ggraph, embedder)
    assert ctx.includes_requires
    requires = [t for t in ctx.triples if t.relation == "requires"]
    assert len(requires) == 1
    assert requires[0].object == "?unknown_1"  # aliased, never the raw var id
    assert requires[0].weight == 0.9


def test_extract_context_answer_strips_requires(ggraph, embedder):
    s = make_sample("a1", "How did the album sell?", Action.ANSWER,
                    known=["album"], source="quac")
    ctx = extract_context(s, ggraph, embedder)
    assert not any(t.relation == "requires" for t in ctx.triples)
    assert not ctx.includes_requires


def test_extract_context_triples_sorted_by_weight(ggraph, embedder):
    ctx = extract_context(_ask_sample(), ggraph, embedder)
    weights = [t.weight for t in ctx.triples]
    assert weights == sorted(weights, reverse=True)


def test_extract_context_empty_graph(embedder):
    from qaroute.kg import KnowledgeGraph
    ctx = extract_context(_ask_sample(), KnowledgeGraph(), embedder)
    assert ctx.empty


def test_extract_context_no_seed_match(ggraph, embedder):
    s = make_sample("x", "completely unrelated zorbic flux", Action.ABSTAIN,
                    source="quac")
    ctx = extract_context(s, ggraph, embedder)
    assert ctx.empty


# -- clarification questions -------------------------------------------------

def test_build_question_query_head_fallback(embedder):
    q = build_question("sales performance", ["album", "release date"],
                       embedder, query="How did the album sell?")
    assert q == "Regarding album: could you specify sales performance?"


def test_build_question_anchor_by_similarity(embedder):
    # "album sales" shares a token with the missing variable "sales figures"
    q = build_question("sales figures", ["album sales", "tour dates"],
                       embedder, query="how did it do?")
    assert q.startswith("Regarding album sales:")


def test_build_question_requires_missing():
    from qaroute.providers import HashingEmbedder
    with pytest.raises(ValueError):
        build_question("  ", ["a"], HashingEmbedder())


def test_query_head_noun():
    assert query_head_noun("How did the album sell?") == "album"
    assert query_head_noun("Who wrote Hurricane?") == "wrote"


@given(st.text(alphabet="abcdefg ", min_size=1, max_size=20).filter(str.strip))
def test_build_question_always_ends_with_mark(missing):
    from qaroute.providers import HashingEmbedder
    q = build_question(missing, [], HashingEmbedder(), query="what is known")
    assert q.endswith("?")


# -- rendering ---------------------------------------------------------------

def test_render_user_block_tag_order(ggraph, embedder):
    sample = _ask_sample()
    ctx = extract_context(sample, ggraph, embedder)
    out = render(sample, ctx, embedder)
    u = out.user
    assert u.index("<query>") < u.index("<known_variables>") \
        < u.index("<graph_context>") < u.index("<missing_variables>")


def test_render_assistant_four_steps_and_tags(ggraph, embedder):
    sample = _ask_sample()
    ctx = extract_context(sample, ggraph, embedder)
    out = render(sample, ctx, embedder)
    for step in ("Step 1 —", "Step 2 —", "Step 3 —", "Step 4 —"):
        assert step in out.assistant
    assert "<decision> ASK </decision>" in out.assistant
    assert "<clarification_question>" in out.assistant
    assert "Regarding album: could you specify sales performance?" \
        in out.assistant


def test_render_names_the_missing_variable(ggraph, embedder):
    sample = _ask_sample()
    out = render(sample, extract_context(sample, ggraph, embedder), embedder)
    assert "sales performance" in out.assistant
    assert "unspecified variables" not in out.assistant


def test_render_answer_has_no_clarification_tag(ggraph, embedder):
    s = make_sample("a1", "Which label released Desire?", Action.ANSWER,
                    known=["desire"], source="quac")
    ctx = GraphContext(matched_nodes=[("desire", 0.9)],
                       triples=[ContextTriple("columbia records", "release",
                                              "desire", 0.85)])
    out = render(s, ctx, embedder)
    assert "<clarification_question>" not in out.assistant
    assert "<decision> ANSWER </decision>" in out.assistant


def test_render_history_block(ggraph, embedder):
    t1, t2 = golden_dialogue()
    from qaroute.ftdata import HistoryEntry
    history = [HistoryEntry(turn=1, action=Action.ASK, query=t1.query,
                            resolved_variable="release date")]
    out = render(t2, extract_context(t2, ggraph, embedder), embedder,
                 history=history, resolved=["release date"])
    assert "<conversation_history>" in out.user
    assert "Turn 1 | ASK" in out.user
    assert "<resolved_variables> release date </resolved_variables>" in out.user
    assert out.user.index("</conversation_history>") < out.user.index("<query>")


# -- quality filter ----------------------------------------------------------

def test_filter_accepts_golden_turn(ggraph, embedder):
    sample = _ask_sample()
    ctx = extract_context(sample, ggraph, embedder)
    cand = render(sample, ctx, embedder)
    assert quality_filter(cand, ctx, sample, embedder) == ACCEPT


def test_filter_rejects_malformed_tags(ggraph, embedder):
    sample = _ask_sample()
    ctx = extract_context(sample, ggraph, embedder)
    cand = render(sample, ctx, embedder)
    cand.assistant = cand.assistant.replace("</decision>", "")
    assert quality_filter(cand, ctx, sample, embedder) == "malformed_tags"


def test_filter_rejects_answer_with_empty_graph(embedder):
    s = make_sample("a1", "Which label released Desire?", Action.ANSWER,
                    known=["desire"], source="quac")
    ctx = GraphContext()
    cand = render(s, ctx, embedder)
    assert quality_filter(cand, ctx, s, embedder) == "answer_empty_graph"


def test_filter_rejects_answer_with_irrelevant_graph(embedder):
    s = make_sample("a1", "Which label released Desire?", Action.ANSWER,
                    known=["desire"], source="quac")
    ctx = GraphContext(matched_nodes=[("zorp", 0.9)],
                       triples=[ContextTriple("zorp", "link", "blee", 0.8)])
    cand = render(s, ctx, embedder)
    assert quality_filter(cand, ctx, s, embedder) == "answer_graph_irrelevant"


def test_filter_rejects_ask_without_missing_or_vars(embedder):
    s = make_sample("k1", "What else?", Action.ASK, known=["album"],
                    source="quac")
    ctx = GraphContext(matched_nodes=[("album", 0.9)],
                       triples=[ContextTriple("desire", "be", "album", 0.7)])
    cand = render(s, ctx, embedder)
    assert quality_filter(cand, ctx, s, embedder) == \
        "ask_no_missing_no_var_nodes"


def test_filter_rejects_generic_missing_variable(ggraph, embedder):
    s = make_sample("g1", "How did the album sell?", Action.ASK,
                    known=["album"], missing=["more information"],
                    source="quac")
    ctx = extract_context(s, ggraph, embedder)
    cand = render(s, ctx, embedder)
    assert quality_filter(cand, ctx, s, embedder) == "generic_missing_variable"


def test_filter_rejects_empty_response(ggraph, embedder):
    sample = _ask_sample()
    ctx = extract_context(sample, ggraph, embedder)
    cand = render(sample, ctx, embedder)
    cand.assistant = "   "
    assert quality_filter(cand, ctx, sample, embedder) == "empty_response"


# -- splits ------------------------------------------------------------------

def _ft_samples(n_dialogues=20):
    from qaroute.providers import HashingEmbedder
    emb = HashingEmbedder()
    out = []
    for d in range(n_dialogues):
        for t in range(2):
            out.append(render(
                make_sample(f"d{d}-t{t}", "How did the album sell?",
                            Action.ASK, known=["album"],
                            missing=["sales performance"],
                            dialogue_id=f"dlg{d}", turn_id=t, source="quac"),
                GraphContext(), emb))
    return out


def test_split_dialogue_atomic_no_contamination():
    samples = _ft_samples()
    split(samples, (0.8, 0.1, 0.1), seed=5)
    assert contamination(samples) == 0
    assert {s.split for s in samples} == {"train", "val", "test"}


def test_split_deterministic():
    a, b = _ft_samples(), _ft_samples()
    assert split(a, seed=5) == split(b, seed=5)


def test_split_fractions_validated():
    with pytest.raises(ValueError):
        split(_ft_samples(4), (0.5, 0.2, 0.2), seed=0)


# -- chat template -----------------------------------------------------------

def test_chat_template_roundtrip(ggraph, embedder):
    sample = _ask_sample()
    out = render(sample, extract_context(sample, ggraph, embedder), embedder)
    rec = to_chat_template(out)
    assert rec["text"].startswith("<s>[INST] ")
    assert rec["text"].endswith("</s>")
    system, user, assistant = from_chat_template(rec["text"])
    assert system == PLANNER_SYSTEM_PROMPT
    assert user == out.user
    assert assistant == out.assistant
    # prompt span ends exactly where the assistant turn begins
    assert rec["text"][rec["prompt_length_chars"]:] == out.assistant + "</s>"


def test_chat_template_rejects_foreign_string():
    with pytest.raises(ValueError):
        from_chat_template("hello world")


# -- end-to-end build --------------------------------------------------------

def test_build_accepts_dialogue_and_merges_known(ggraph, embedder):
    built, report = build(golden_dialogue(), ggraph, embedder, seed=0)
    assert report.accepted == 2
    assert report.rejected_by_reason == {}
    turn2 = built[1]
    assert "Turn 1 | ASK" in turn2.user
    assert "release date" in turn2.user
    assert turn2.split == "train"


def test_build_reports_rejections(ggraph, embedder):
    bad = make_sample("b1", "Which label released Desire?", Action.ANSWER,
                      known=["zorp"], source="quac")
    built, report = build([bad], ggraph, embedder, seed=0)
    assert built == []
    assert sum(report.rejected_by_reason.values()) == 1
