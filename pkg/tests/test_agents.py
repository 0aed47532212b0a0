import pytest
from hypothesis import given, settings, strategies as st

from qaroute.agents import (NO_CONTEXT_REFUSAL, PLANNER_FALLBACK_REASON,
                            Session, abstain_agent, answer_agent, ask_agent,
                            context_blocks, parse_planner_output, plan,
                            route_turn)
from qaroute.core import Action, InformationState
from qaroute.ftdata import PLANNER_SYSTEM_PROMPT
from qaroute.providers import (ChatMessage, HashingEmbedder, ScriptedChat)
from qaroute.retrieval import Chunk, HybridIndex

VALID = ("<reasoning>\nStep 1 — looked at the graph.\n</reasoning>\n"
         "<decision> ASK </decision>\n"
         "<justification>\nNeed the missing date.\n</justification>\n"
         "<clarification_question>\nWhich date?\n</clarification_question>")


# -- parser ------------------------------------------------------------------

def test_parse_valid_output():
    d, errors = parse_planner_output(VALID)
    assert errors == []
    assert d.action is Action.ASK
    assert d.strict
    assert d.clarification_question == "Which date?"


def test_parse_ask_without_question_uses_justification():
    text = ("<reasoning>r</reasoning><decision>ASK</decision>"
            "<justification>Could you specify the date?</justification>")
    d, errors = parse_planner_output(text)
    assert errors == []
    assert d.clarification_question == "Could you specify the date?"


def test_parse_case_insensitive_flagged_non_strict():
    text = VALID.replace("<decision> ASK ", "<DECISION> ask ") \
                .replace("</decision>", "</DECISION>")
    d, errors = parse_planner_output(text)
    assert errors == []
    assert d.action is Action.ASK
    assert not d.strict


def test_parse_rejects_missing_tags():
    for tag in ("reasoning", "decision", "justification"):
        mutant = VALID.replace(f"<{tag}>", "").replace(f"</{tag}>", "")
        d, errors = parse_planner_output(mutant)
        assert d is None and errors


def test_parse_rejects_out_of_order():
    text = ("<decision>ASK</decision><reasoning>r</reasoning>"
            "<justification>j</justification>")
    d, errors = parse_planner_output(text)
    assert d is None


def test_parse_rejects_stray_text():
    d, errors = parse_planner_output("preamble " + VALID)
    assert d is None


def test_parse_rejects_unknown_decision():
    d, errors = parse_planner_output(VALID.replace("ASK", "PONDER"))
    assert d is None
    assert any("unknown decision" in e for e in errors)


def test_parse_rejects_empty_sections():
    text = ("<reasoning> </reasoning><decision>ASK</decision>"
            "<justification>j</justification>")
    d, errors = parse_planner_output(text)
    assert d is None and any("reasoning" in e for e in errors)
    d, errors = parse_planner_output("")
    assert d is None


@given(st.sampled_from(["ANSWER", "ASK", "ABSTAIN"]))
def test_parse_all_actions(action):
    text = (f"<reasoning>graph checked</reasoning><decision>{action}</decision>"
            f"<justification>grounded</justification>")
    d, errors = parse_planner_output(text)
    assert errors == [] and d.action.value == action


# -- planner call ------------------------------------------------------------

def test_plan_parses_completion():
    chat = ScriptedChat()
    chat.script([ChatMessage("system", PLANNER_SYSTEM_PROMPT),
                 ChatMessage("user", "block")], VALID)
    d = plan("block", chat)
    assert d.action is Action.ASK and not d.fallback


def test_plan_fallback_on_garbage():
    d = plan("block", ScriptedChat())
    assert d.action is Action.ABSTAIN
    assert d.fallback
    assert d.justification == PLANNER_FALLBACK_REASON
    assert d.parse_errors


# -- agents ------------------------------------------------------------------

def _chunk(cid, text):
    return Chunk(chunk_id=cid, doc_id=cid, source="quac", text=text,
                 word_count=len(text.split()))


def test_context_blocks_format():
    out = context_blocks([(_chunk("c1", "alpha"), "alpha"),
                          (_chunk("c2", "beta"), "beta")])
    assert "[Source 1 | quac | coarse]" in out
    assert "[Source 2 | quac | coarse]" in out


def test_answer_agent_refuses_without_context():
    assert answer_agent("q", [], ScriptedChat()) == NO_CONTEXT_REFUSAL


def test_answer_agent_returns_completion():
    chat = ScriptedChat()
    from qaroute.agents import ANSWER_PROMPT
    kept = [(_chunk("c1", "Dylan wrote it"), "Dylan wrote it")]
    prompt = ANSWER_PROMPT.format(context=context_blocks(kept), query="who?")
    chat.script([ChatMessage("user", prompt)], "Bob Dylan wrote it.")
    assert answer_agent("who?", kept, chat) == "Bob Dylan wrote it."


def test_ask_agent_template_fallback():
    state = InformationState(known_variables=("album",),
                             missing_variables=("sales performance",))
    q, var = ask_agent("How did the album sell?", state, ScriptedChat(),
                       HashingEmbedder())
    assert var == "sales performance"
    assert q == "Regarding album: could you specify sales performance?"


def test_ask_agent_accepts_good_completion():
    state = InformationState(missing_variables=("release date",))
    chat = ScriptedChat(fallback="When exactly was the album released?")
    q, var = ask_agent("when?", state, chat, HashingEmbedder())
    assert q == "When exactly was the album released?"


def test_ask_agent_generic_question_without_missing():
    state = InformationState(known_variables=("album",))
    q, var = ask_agent("How did the album sell?", state, ScriptedChat(),
                       HashingEmbedder())
    assert var is None
    assert q.endswith("?")


def test_abstain_agent_fallback_carries_reason():
    chat = ScriptedChat(fallback="no")  # too short: template kicks in
    out = abstain_agent("q", "The topic is absent.", chat)
    assert out == ("I'm unable to answer this query. The topic is absent. "
                   "You may want to consult a specialised source.")


# -- routing and session -----------------------------------------------------

@pytest.fixture()
def album_index(embedder):
    texts = [
        ("a1", "the album desire sold two million copies worldwide"),
        ("a2", "the album desire sold well after its january 1976 release"),
        ("a3", "the album desire sold strongly and features violin parts"),
    ]
    chunks = [_chunk(cid, t) for cid, t in texts]
    return HybridIndex.build(chunks, embedder)


def test_route_turn_incomplete_state_asks(album_index, bundle):
    state = InformationState(known_variables=("album",),
                             missing_variables=("sales performance",))
    r = route_turn("How did the album sell?", state, bundle, album_index,
                   use_classifier=False)
    assert r.action is Action.ASK and r.rule == 6
    assert r.asked_variable == "sales performance"
    assert r.resolution == 0.5


def test_route_turn_complete_state_answers(album_index, bundle):
    state = InformationState(known_variables=("album", "sales performance"))
    r = route_turn("How did the album sell?", state, bundle, album_index,
                   use_classifier=False)
    assert r.action is Action.ANSWER and r.rule == 6
    assert r.response
    assert r.retrieved


def test_route_turn_degenerate_query_abstains(album_index, bundle):
    r = route_turn("the of and", InformationState(), bundle, album_index,
                   use_classifier=False)
    # no content terms: coverage 0; overlap reranker confidence 0 -> rule 2
    assert r.action is Action.ABSTAIN and r.rule == 2


def test_route_turn_ambiguous_query_asks(album_index, bundle):
    # coverage is high ("sold" appears in every chunk) so the low-evidence
    # rule stays quiet and the ambiguity rule fires
    r = route_turn("it sold?", InformationState(), bundle, album_index,
                   use_classifier=False)
    assert r.action is Action.ASK and r.rule == 3


def test_session_reply_flow(album_index, bundle):
    session = Session(bundle, album_index, use_classifier=False)
    r1 = session.start("How did the album sell?",
                       required_vars=["album", "sales performance"])
    assert r1.action is Action.ASK
    assert session.resolution == 0.5
    r2 = session.reply("it sold two million copies")
    assert session.resolution == 1.0
    assert r2.action is Action.ANSWER


def test_session_reply_requires_pending(album_index, bundle):
    session = Session(bundle, album_index, use_classifier=False)
    with pytest.raises(RuntimeError):
        session.reply("too early")
