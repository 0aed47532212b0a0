"""Command-line interface over the pipeline stages: dataset conversion and
balancing, index and graph construction, finetuning-data generation, routing,
evaluation, and an interactive loop.

Exit codes: 0 success, 1 operation failure, 2 usage error."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import __version__
from .agents import Session, route_turn
from .config import EngineConfig, load_or_default
from .core import Action, init_state
from .decision import compute_signals, hard_gate, AnswerabilityLabel
from .evaluate import EvalReport
from .ftdata import build as build_ftdata
from .ftdata import write_outputs
from .ingest import (BalanceTargets, SourceRecord, balance, convert,
                     populate_file, read_jsonl, validate, write_jsonl)
from .providers import (HashingEmbedder, LexiconNer, OverlapReranker,
                        ProviderBundle, RemoteChat, RemoteConfig,
                        RemoteEmbedder, RemoteNer, RemoteReranker,
                        ScriptedChat)
from .report import write_report
from .retrieval import HybridIndex, chunk_document
from . import kg as kgmod


def _bundle(cfg: EngineConfig, lexicon: str | None,
            chat_fixtures: str | None) -> ProviderBundle:
    if cfg.offline:
        ner = LexiconNer.from_file(lexicon) if lexicon else LexiconNer({})
        chat = (ScriptedChat.from_file(chat_fixtures) if chat_fixtures
                else ScriptedChat())
        return ProviderBundle(chat=chat, embedder=HashingEmbedder(),
                              ner=ner, reranker=OverlapReranker())
    return ProviderBundle(
        chat=RemoteChat(RemoteConfig(cfg.chat_base_url, cfg.chat_model,
                                     cfg.api_key)),
        embedder=RemoteEmbedder(RemoteConfig(cfg.embed_base_url,
                                             cfg.embed_model, cfg.api_key)),
        ner=RemoteNer(RemoteConfig(cfg.ner_base_url, api_key=cfg.api_key)),
        reranker=RemoteReranker(RemoteConfig(cfg.rerank_base_url,
                                             cfg.rerank_model, cfg.api_key)),
    )


@click.group()
@click.version_option(__version__)
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None, help="Engine config JSON.")
@click.option("--seed", type=int, default=None, help="Override the RNG seed.")
@click.option("--offline/--remote", default=None,
              help="Force offline providers (default) or remote endpoints.")
@click.option("--lexicon", type=click.Path(exists=True), default=None,
              help="Offline NER lexicon (surface<TAB>category per line).")
@click.option("--chat-fixtures", type=click.Path(exists=True), default=None,
              help="Offline scripted-chat fixture JSONL.")
@click.pass_context
def main(ctx, config_path, seed, offline, lexicon, chat_fixtures):
    cfg = load_or_default(config_path)
    if seed is not None:
        cfg.seed = seed
    if offline is not None:
        cfg.offline = offline
    ctx.obj = {"cfg": cfg, "lexicon": lexicon, "chat_fixtures": chat_fixtures}


def _get_bundle(ctx) -> ProviderBundle:
    return _bundle(ctx.obj["cfg"], ctx.obj["lexicon"], ctx.obj["chat_fixtures"])


# ---------------------------------------------------------------------------
# ingest
# ---------------------------------------------------------------------------

@main.group()
def ingest():
    """Dataset conversion, balancing, variable population, validation."""


@ingest.command("convert")
@click.option("--source", required=True,
              type=click.Choice(["quac", "sharc", "hotpotqa", "contract_nli"]))
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def ingest_convert(source, in_path, out_path):
    """Convert raw source JSONL into unified records."""
    ok, failed = 0, 0
    with open(out_path, "w", encoding="utf-8") as fout:
        for line in Path(in_path).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            try:
                sample = convert(SourceRecord(source, json.loads(line)))
                fout.write(sample.to_json() + "\n")
                ok += 1
            except Exception as e:
                failed += 1
                click.echo(f"skip: {e}", err=True)
    click.echo(f"converted {ok}, skipped {failed}")
    if ok == 0 and failed > 0:
        sys.exit(1)


@ingest.command("balance")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--answer-frac", type=float, default=1 / 3)
@click.option("--ask-frac", type=float, default=1 / 3)
@click.option("--abstain-frac", type=float, default=1 / 3)
@click.option("--report", "report_path", type=click.Path(), default=None)
@click.pass_context
def ingest_balance(ctx, in_path, out_path, answer_frac, ask_frac,
                   abstain_frac, report_path):
    """Action-balance a unified JSONL file with dialogue atomicity."""
    samples = read_jsonl(in_path)
    targets = BalanceTargets(answer_frac, ask_frac, abstain_frac)
    out, report = balance(samples, targets, seed=ctx.obj["cfg"].seed)
    write_jsonl(out, out_path)
    if report_path:
        Path(report_path).write_text(json.dumps(report.to_dict(), indent=2),
                                     encoding="utf-8")
    click.echo(f"kept {len(out)} of {len(samples)}; "
               f"achieved {report.achieved_counts}")


@ingest.command("populate")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--resume", is_flag=True, default=False)
@click.pass_context
def ingest_populate(ctx, in_path, out_path, resume):
    """Fill variable states via the chat provider, with checkpointing."""
    n = populate_file(in_path, out_path, _get_bundle(ctx).chat, resume=resume)
    click.echo(f"populated {n} samples")


@ingest.command("validate")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
def ingest_validate(in_path):
    """Schema-validate a unified JSONL file; exit 1 on any error."""
    n_err = 0
    for i, line in enumerate(Path(in_path).read_text(
            encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        _, errors = validate(line)
        for e in errors:
            click.echo(f"line {i}: {e}", err=True)
            n_err += 1
    click.echo(f"{n_err} error(s)")
    if n_err:
        sys.exit(1)


# ---------------------------------------------------------------------------
# index
# ---------------------------------------------------------------------------

@main.group()
def index():
    """Hybrid retrieval index."""


@index.command("build")
@click.option("--corpus", required=True, type=click.Path(exists=True),
              help='JSONL of {"doc_id","text","source"}.')
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--fine", is_flag=True, default=False,
              help="Also emit per-sentence chunks.")
@click.pass_context
def index_build(ctx, corpus, out_dir, fine):
    bundle = _get_bundle(ctx)
    chunks = []
    for line in Path(corpus).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        chunks.extend(chunk_document(rec["doc_id"], rec["text"],
                                     rec["source"], fine=fine))
    idx = HybridIndex.build(chunks, bundle.embedder)
    idx.save(out_dir)
    click.echo(f"indexed {len(idx.chunks)} chunks -> {out_dir}")


@index.command("query")
@click.option("--index", "index_dir", required=True, type=click.Path(exists=True))
@click.option("--query", required=True)
@click.option("-k", type=int, default=5)
@click.option("--alpha", type=float, default=None)
@click.pass_context
def index_query(ctx, index_dir, query, k, alpha):
    cfg = ctx.obj["cfg"]
    bundle = _get_bundle(ctx)
    idx = HybridIndex.load(index_dir)
    results, empty = idx.hybrid_retrieve(query, bundle.embedder, k=k,
                                         alpha=cfg.alpha if alpha is None else alpha)
    if empty:
        click.echo("index is empty", err=True)
        sys.exit(1)
    for r in results:
        click.echo(json.dumps({"chunk_id": r.chunk.chunk_id,
                               "fused": round(r.fused_score, 6),
                               "sparse": round(r.sparse_score, 6),
                               "dense": round(r.dense_score, 6),
                               "text": r.chunk.text[:120]}))


# ---------------------------------------------------------------------------
# kg
# ---------------------------------------------------------------------------

@main.group()
def kg():
    """Decision-weighted knowledge graph."""


@kg.command("build")
@click.option("--corpus", required=True, type=click.Path(exists=True))
@click.option("--samples", "samples_path", type=click.Path(exists=True),
              default=None, help="Unified JSONL for reinforcement.")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--phase", type=click.Choice(["1", "2", "3", "post"]),
              default="post", help="Stop after this construction phase.")
@click.option("--stats", is_flag=True, default=False)
@click.pass_context
def kg_build(ctx, corpus, samples_path, out_path, phase, stats):
    bundle = _get_bundle(ctx)
    chunks = []
    for line in Path(corpus).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        chunks.extend(chunk_document(rec["doc_id"], rec["text"], rec["source"]))
    g = kgmod.extract_phase1(chunks, bundle.ner)
    if phase != "1":
        texts = {c.chunk_id: c.text for c in chunks}
        g = kgmod.validate_phase2(g, texts, bundle.embedder)
    if phase in ("3", "post"):
        samples = read_jsonl(samples_path) if samples_path else []
        g = kgmod.reinforce_phase3(g, samples, bundle.embedder, bundle.ner)
    if phase == "post":
        g = kgmod.postprocess(g, bundle.ner, bundle.embedder)
    kgmod.save(g, out_path)
    click.echo(f"graph: {len(g.nodes)} nodes, {len(g.edges)} edges -> {out_path}")
    if stats:
        click.echo(json.dumps(g.phase_stats, indent=2))


@kg.command("path")
@click.option("--graph", "graph_path", required=True, type=click.Path(exists=True))
@click.option("--start", required=True)
@click.option("--goal", required=True)
@click.option("--max-hops", type=int, default=4)
def kg_path(graph_path, start, goal, max_hops):
    g = kgmod.load(graph_path)
    try:
        score = kgmod.path_score(g, start, goal, max_hops=max_hops)
    except kgmod.GraphError as e:
        click.echo(str(e), err=True)
        sys.exit(1)
    click.echo(f"{score:.6f}")


# ---------------------------------------------------------------------------
# ftdata
# ---------------------------------------------------------------------------

@main.group()
def ftdata():
    """Planner finetuning data."""


@ftdata.command("build")
@click.option("--samples", "samples_path", required=True,
              type=click.Path(exists=True))
@click.option("--graph", "graph_path", required=True,
              type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.pass_context
def ftdata_build(ctx, samples_path, graph_path, out_dir):
    bundle = _get_bundle(ctx)
    samples = read_jsonl(samples_path)
    g = kgmod.load(graph_path)
    built, report = build_ftdata(samples, g, bundle.embedder,
                                 seed=ctx.obj["cfg"].seed)
    write_outputs(built, report, out_dir)
    click.echo(f"accepted {report.accepted}, "
               f"rejected {sum(report.rejected_by_reason.values())} -> {out_dir}")


# ---------------------------------------------------------------------------
# routing / decision
# ---------------------------------------------------------------------------

@main.command("decide")
@click.option("--index", "index_dir", required=True, type=click.Path(exists=True))
@click.option("--query", required=True)
@click.option("--required-var", "required_vars", multiple=True)
@click.pass_context
def decide(ctx, index_dir, query, required_vars):
    """Signals plus gate decision only, as JSON (no agent response)."""
    cfg = ctx.obj["cfg"]
    bundle = _get_bundle(ctx)
    idx = HybridIndex.load(index_dir)
    state = init_state(query, [], list(required_vars), ner=bundle.ner)
    result = route_turn(query, state, bundle, idx,
                        thresholds=cfg.gate_thresholds(), k=cfg.retrieval_k,
                        alpha=cfg.alpha, use_classifier=False)
    click.echo(json.dumps({"action": result.action.value, "rule": result.rule,
                           "signals": result.signals.to_dict(),
                           "label": result.label.value,
                           "resolution": result.resolution}, indent=2))


@main.command("route")
@click.option("--index", "index_dir", required=True, type=click.Path(exists=True))
@click.option("--query", default=None)
@click.option("--batch", "batch_path", type=click.Path(exists=True),
              default=None, help='JSONL of {"query", "required_vars"?}.')
@click.option("--use-classifier/--no-classifier", default=False)
@click.pass_context
def route(ctx, index_dir, query, batch_path, use_classifier):
    """Full single-turn routing: decision plus agent response."""
    if (query is None) == (batch_path is None):
        raise click.UsageError("provide exactly one of --query or --batch")
    cfg = ctx.obj["cfg"]
    bundle = _get_bundle(ctx)
    idx = HybridIndex.load(index_dir)
    records = ([{"query": query}] if query else
               [json.loads(ln) for ln in
                Path(batch_path).read_text(encoding="utf-8").splitlines()
                if ln.strip()])
    for rec in records:
        state = init_state(rec["query"], [], rec.get("required_vars", []),
                           ner=bundle.ner)
        result = route_turn(rec["query"], state, bundle, idx,
                            thresholds=cfg.gate_thresholds(),
                            k=cfg.retrieval_k, alpha=cfg.alpha,
                            use_classifier=use_classifier)
        click.echo(json.dumps({"query": rec["query"],
                               "action": result.action.value,
                               "rule": result.rule,
                               "response": result.response,
                               "asked_variable": result.asked_variable}))


@main.command("repl")
@click.option("--index", "index_dir", required=True, type=click.Path(exists=True))
@click.option("--required-var", "required_vars", multiple=True)
@click.option("--use-classifier/--no-classifier", default=False)
@click.pass_context
def repl(ctx, index_dir, required_vars, use_classifier):
    """Interactive multi-turn loop; clarification replies update the state."""
    cfg = ctx.obj["cfg"]
    bundle = _get_bundle(ctx)
    idx = HybridIndex.load(index_dir)
    session = Session(bundle, idx, thresholds=cfg.gate_thresholds(),
                      use_classifier=use_classifier, k=cfg.retrieval_k,
                      alpha=cfg.alpha)
    click.echo("query> ", nl=False)
    for line in sys.stdin:
        text = line.strip()
        if not text or text in ("exit", "quit"):
            break
        if session.pending_variable is not None:
            result = session.reply(text)
        else:
            result = session.start(text, required_vars=list(required_vars))
        click.echo(f"[{result.action.value} | rule {result.rule} | "
                   f"resolution {session.resolution:.2f}]")
        click.echo(result.response)
        click.echo("query> ", nl=False)
    click.echo("")


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

@main.command("eval")
@click.option("--predictions", required=True, type=click.Path(exists=True),
              help='JSONL of {"gold","predicted","answer_correct"?}.')
@click.option("--out", "out_dir", required=True, type=click.Path())
def eval_cmd(predictions, out_dir):
    """Score predictions and write the report bundle (JSON, text, CSV,
    figures)."""
    gold, pred, correct = [], [], []
    for line in Path(predictions).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        gold.append(Action.parse(rec["gold"]))
        pred.append(Action.parse(rec["predicted"]))
        correct.append(rec.get("answer_correct"))
    if not gold:
        click.echo("no predictions", err=True)
        sys.exit(1)
    report = EvalReport.build(gold, pred, correct)
    paths = write_report(report, out_dir)
    click.echo(report.to_table())
    for p in paths:
        click.echo(f"wrote {p}")


if __name__ == "__main__":
    main()
