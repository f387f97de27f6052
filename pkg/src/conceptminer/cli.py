"""Command-line drivers for the mining, tagging, and taxonomy pipeline.

Subcommands map one-to-one onto the pipeline stages; every command reads
and writes the plain-text formats documented in the package README so
stages can be chained through files. Exit code 0 on success; failures
raise structured errors with non-zero exit.
"""

from __future__ import annotations

import importlib.resources as resources
import logging
import sys
from concurrent.futures import ThreadPoolExecutor

import click

from . import align as align_mod
from . import bootstrap as boot_mod
from . import discriminator as disc_mod
from . import embeddings as emb_mod
from . import evalkit, seqlabel, taxonomy as tax_mod
from .bootstrap import ConceptCandidate
from .config import PipelineConfig, load_config
from .corpus import (
    RuleTokenizer,
    load_documents,
    load_query_logs,
    read_concept_records,
    write_concept_records,
)
from .keyterms import NOUN_LIKE, extract_key_instances
from .service import ModelBundle, create_app
from .tagger import (
    ConceptIndex,
    build_cooccurrence_stats,
    build_df_table,
    enrich_concept,
    load_stopwords,
    save_tagged,
    tag_document,
)

logger = logging.getLogger(__name__)


def bundled_data_path(name: str):
    return resources.files("conceptminer.data").joinpath(name)


def default_stopwords() -> frozenset[str]:
    with resources.as_file(bundled_data_path("stopwords.txt")) as p:
        return load_stopwords(str(p))


def default_topics() -> list[str]:
    with resources.as_file(bundled_data_path("topics.txt")) as p:
        return tax_mod.load_topics(str(p))


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="YAML config overriding pipeline defaults.")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--threads", type=int, default=None, help="Worker threads for batch stages.")
@click.pass_context
def main(ctx: click.Context, config_path: str | None, seed: int | None,
         threads: int | None) -> None:
    """Concept mining, document tagging, and taxonomy construction."""
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    config = load_config(config_path)
    if seed is not None:
        config = config.__class__(**{**config.__dict__, "seed": seed})
    if threads is not None:
        config = config.__class__(**{**config.__dict__, "threads": threads})
    ctx.obj = config


@main.command("mine-bootstrap")
@click.option("--logs", "logs_path", required=True, type=click.Path(exists=True))
@click.option("--seeds", "seeds_path", type=click.Path(exists=True), default=None,
              help="Seed pattern file; bundled defaults when omitted.")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.pass_obj
def mine_bootstrap(config: PipelineConfig, logs_path: str, seeds_path: str | None,
                   out_path: str) -> None:
    """Mine concepts by iterative pattern bootstrapping."""
    entries = load_query_logs(logs_path, config.min_clicks, config.window_days)
    if seeds_path is None:
        with resources.as_file(bundled_data_path("seed_patterns.txt")) as p:
            seeds = boot_mod.load_seed_patterns(str(p))
    else:
        seeds = boot_mod.load_seed_patterns(seeds_path)
    candidates, patterns = boot_mod.run_bootstrap(
        seeds,
        [e.query for e in entries],
        max_iters=config.max_iters,
        alpha=config.alpha,
        beta=config.beta,
        delta=config.delta,
    )
    write_concept_records(
        ((c.text, c.source, 1.0, c.provenance) for c in candidates), out_path
    )
    click.echo(f"{len(candidates)} candidates from {len(patterns)} patterns -> {out_path}")


@main.command("mine-align")
@click.option("--logs", "logs_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.pass_obj
def mine_align(config: PipelineConfig, logs_path: str, out_path: str) -> None:
    """Mine concepts by query-title N-gram alignment."""
    entries = load_query_logs(logs_path, config.min_clicks, config.window_days)
    records = []
    for entry in entries:
        aligned = align_mod.extract_aligned_candidates(
            entry, min_len=config.min_len, max_span=config.max_span
        )
        picked = align_mod.select_final_candidate(aligned)
        if picked is not None:
            records.append((picked.text, picked.source, 1.0, picked.provenance))
    write_concept_records(records, out_path)
    click.echo(f"{len(records)} aligned candidates -> {out_path}")


@main.command("train-crf")
@click.option("--train", "train_path", required=True, type=click.Path(exists=True))
@click.option("--model-out", "model_path", required=True, type=click.Path())
@click.pass_obj
def train_crf_cmd(config: PipelineConfig, train_path: str, model_path: str) -> None:
    """Train the sequence labeler on token/POS/NER/label columns."""
    data = seqlabel.load_labeled_file(train_path)
    model = seqlabel.train_crf(
        data, l2=config.crf_l2, max_epochs=config.crf_epochs, tol=config.crf_tol
    )
    seqlabel.save_model(model, model_path)
    click.echo(f"trained on {len(data)} sequences -> {model_path}")


@main.command("mine-crf")
@click.option("--logs", "logs_path", required=True, type=click.Path(exists=True))
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.pass_obj
def mine_crf(config: PipelineConfig, logs_path: str, model_path: str,
             out_path: str) -> None:
    """Mine concepts by decoding queries and clicked titles."""
    entries = load_query_logs(logs_path, config.min_clicks, config.window_days)
    model = seqlabel.load_model(model_path)
    records = []
    for entry in entries:
        cand = evalkit.crf_candidate(model, entry)
        if cand is not None:
            records.append((cand.text, cand.source, 1.0, cand.provenance))
    write_concept_records(records, out_path)
    click.echo(f"{len(records)} decoded candidates -> {out_path}")


@main.command("train-gate")
@click.option("--train", "train_path", required=True, type=click.Path(exists=True),
              help="`concept<TAB>label{0,1}` lines.")
@click.option("--logs", "logs_path", required=True, type=click.Path(exists=True))
@click.option("--model-out", "model_path", required=True, type=click.Path())
@click.pass_obj
def train_gate(config: PipelineConfig, train_path: str, logs_path: str,
               model_path: str) -> None:
    """Train the concept quality gate."""
    pairs = disc_mod.load_gate_training_file(train_path)
    entries = load_query_logs(logs_path, config.min_clicks, config.window_days)
    vocab = disc_mod.build_concept_vocab([text for text, _ in pairs])
    topics = default_topics()
    log_index = disc_mod.build_log_index(entries)
    data = []
    for text, label in pairs:
        cand = ConceptCandidate(text=text, source="bootstrap", provenance="training")
        data.append(
            (disc_mod.featurize_concept(cand, entries, None, vocab, topics,
                                        log_index=log_index), label)
        )
    model = disc_mod.train_quality(
        data, vocab, topics,
        threshold=config.gate_threshold,
        l2=config.gate_l2,
        n_stumps=config.gate_stumps,
        seed=config.seed,
    )
    disc_mod.save_quality_model(model, model_path)
    click.echo(
        f"gate trained on {len(data)} samples "
        f"(held-out accuracy {model.held_out_accuracy:.3f}) -> {model_path}"
    )


@main.command("gate")
@click.option("--candidates", "cand_path", required=True, type=click.Path(exists=True))
@click.option("--logs", "logs_path", required=True, type=click.Path(exists=True))
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.pass_obj
def gate_cmd(config: PipelineConfig, cand_path: str, logs_path: str,
             model_path: str, out_path: str) -> None:
    """Filter mined candidates through the trained gate."""
    records = read_concept_records(cand_path)
    entries = load_query_logs(logs_path, config.min_clicks, config.window_days)
    model = disc_mod.load_quality_model(model_path)
    log_index = disc_mod.build_log_index(entries)
    kept = []
    for text, source, _, provenance in records:
        cand = ConceptCandidate(text=text, source=source, provenance=provenance)
        feats = disc_mod.featurize_concept(
            cand, entries, None, model.vocab, model.topics, log_index=log_index
        )
        if disc_mod.gate(model, cand, feats).accepted:
            kept.append((text, source, disc_mod.score_concept(model, feats), provenance))
    write_concept_records(kept, out_path)
    click.echo(f"accepted {len(kept)} / {len(records)} candidates -> {out_path}")


@main.command("extract-keyterms")
@click.option("--docs", "docs_path", required=True, type=click.Path(exists=True))
@click.option("--embeddings", "emb_path", type=click.Path(exists=True), default=None,
              help="Vector table; trained from the corpus when omitted.")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.pass_obj
def extract_keyterms(config: PipelineConfig, docs_path: str, emb_path: str | None,
                     out_path: str) -> None:
    """Extract weighted key instances per document."""
    docs = load_documents(docs_path)
    emb = _load_or_train_embeddings(emb_path, docs, config)
    with open(out_path, "w", encoding="utf-8") as fh:
        for doc in docs:
            keys = extract_key_instances(
                doc, emb, k=config.top_k, delta_w=config.delta_w
            )
            for instance, weight in keys.instances:
                fh.write(f"{doc.id}\t{instance}\t{weight:.6f}\n")
    click.echo(f"key instances for {len(docs)} documents -> {out_path}")


def _load_or_train_embeddings(emb_path, docs, config: PipelineConfig):
    if emb_path is not None:
        return emb_mod.load_embeddings(emb_path)
    sentences = []
    for doc in docs:
        sentences.append([t.surface for t in doc.title])
        for sent in doc.sentences:
            sentences.append([t.surface for t in sent])
    return emb_mod.train_ppmi_embeddings(
        sentences, dim=config.emb_dim, window=config.emb_window,
        min_count=config.emb_min_count,
    )


def _build_bundle(config: PipelineConfig, docs, concepts, entries, graph, emb):
    stopwords = default_stopwords()
    index = ConceptIndex(concepts)
    instance_vocab = tuple(graph.instance_vocabulary()) if graph else ()
    noun_tokens = {
        t.surface for d in docs for t in d.iter_tokens() if t.pos in NOUN_LIKE
    }
    stats = build_cooccurrence_stats(
        docs, sorted(noun_tokens | set(instance_vocab)), stopwords
    )
    df_table = build_df_table(docs)
    enriched = {
        c: enrich_concept(c, entries, config.n_titles, df_table) for c in index.concepts
    }
    concept_parents = graph.concept_parent_map() if graph else {}
    return ModelBundle(
        index=index,
        stats=stats,
        concept_parents=concept_parents,
        enriched=enriched,
        df_table=df_table,
        emb=emb,
        stopwords=stopwords,
        instance_vocab=instance_vocab,
        top_k=config.top_k,
        delta_w=config.delta_w,
        delta_u=config.delta_u,
        top_m=config.top_m,
    )


@main.command("tag")
@click.option("--docs", "docs_path", required=True, type=click.Path(exists=True))
@click.option("--concepts", "concepts_path", required=True, type=click.Path(exists=True))
@click.option("--logs", "logs_path", required=True, type=click.Path(exists=True))
@click.option("--taxonomy", "tax_path", type=click.Path(exists=True), default=None)
@click.option("--embeddings", "emb_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.pass_obj
def tag_cmd(config: PipelineConfig, docs_path: str, concepts_path: str,
            logs_path: str, tax_path: str | None, emb_path: str | None,
            out_path: str) -> None:
    """Tag documents with concepts (matching + inference)."""
    docs = load_documents(docs_path)
    concepts = [text for text, _, _, _ in read_concept_records(concepts_path)]
    entries = load_query_logs(logs_path, config.min_clicks, config.window_days)
    graph = tax_mod.import_taxonomy(tax_path) if tax_path else None
    emb = _load_or_train_embeddings(emb_path, docs, config)
    bundle = _build_bundle(config, docs, concepts, entries, graph, emb)

    def tag_one(doc):
        keys = extract_key_instances(
            doc, bundle.emb, k=bundle.top_k, delta_w=bundle.delta_w,
            instance_vocab=bundle.instance_vocab,
        )
        return tag_document(
            doc, keys, bundle.stats, bundle.index, bundle.concept_parents,
            bundle.enriched, bundle.df_table, delta_u=bundle.delta_u,
            top_m=bundle.top_m, stopwords=bundle.stopwords,
        )

    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            tagged = list(pool.map(tag_one, docs))
    else:
        tagged = [tag_one(d) for d in docs]
    save_tagged(tagged, out_path)
    n_tags = sum(len(t.tags) for t in tagged)
    click.echo(f"{n_tags} tags over {len(docs)} documents -> {out_path}")


@main.command("tag-server")
@click.option("--docs", "docs_path", required=True, type=click.Path(exists=True))
@click.option("--concepts", "concepts_path", required=True, type=click.Path(exists=True))
@click.option("--logs", "logs_path", required=True, type=click.Path(exists=True))
@click.option("--taxonomy", "tax_path", type=click.Path(exists=True), default=None)
@click.option("--embeddings", "emb_path", type=click.Path(exists=True), default=None)
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8000)
@click.pass_obj
def tag_server(config: PipelineConfig, docs_path: str, concepts_path: str,
               logs_path: str, tax_path: str | None, emb_path: str | None,
               host: str, port: int) -> None:
    """Serve POST /tag over a preloaded model bundle."""
    import uvicorn

    docs = load_documents(docs_path)
    concepts = [text for text, _, _, _ in read_concept_records(concepts_path)]
    entries = load_query_logs(logs_path, config.min_clicks, config.window_days)
    graph = tax_mod.import_taxonomy(tax_path) if tax_path else None
    emb = _load_or_train_embeddings(emb_path, docs, config)
    bundle = _build_bundle(config, docs, concepts, entries, graph, emb)
    app = create_app(bundle)
    click.echo(f"serving {len(bundle.index)} concepts on {host}:{port}")
    uvicorn.run(app, host=host, port=port, log_level="warning")


@main.command("build-taxonomy")
@click.option("--concepts", "concepts_path", required=True, type=click.Path(exists=True))
@click.option("--logs", "logs_path", required=True, type=click.Path(exists=True))
@click.option("--docs", "docs_path", required=True, type=click.Path(exists=True))
@click.option("--topics", "topics_path", type=click.Path(exists=True), default=None)
@click.option("--doc-topics", "doc_topics_path", type=click.Path(exists=True),
              default=None, help="`doc_id<TAB>topic` labels for topic linking.")
@click.option("--instance-pairs", "pairs_path", type=click.Path(exists=True),
              default=None, help="External `concept<TAB>instance` pairs to import.")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.pass_obj
def build_taxonomy_cmd(config: PipelineConfig, concepts_path: str, logs_path: str,
                       docs_path: str, topics_path: str | None,
                       doc_topics_path: str | None, pairs_path: str | None,
                       out_path: str) -> None:
    """Build the topic-concept-instance taxonomy from mined artifacts."""
    concepts = [text for text, _, _, _ in read_concept_records(concepts_path)]
    entries = load_query_logs(logs_path, config.min_clicks, config.window_days)
    docs = load_documents(docs_path)
    topics = tax_mod.load_topics(topics_path) if topics_path else default_topics()
    stopwords = default_stopwords()
    tokenizer = RuleTokenizer()
    index = ConceptIndex(concepts)
    noun_tokens = {
        t.surface for d in docs for t in d.iter_tokens() if t.pos in NOUN_LIKE
    }
    stats = build_cooccurrence_stats(docs, sorted(noun_tokens), stopwords)

    tagged_with_topics = []
    if doc_topics_path:
        doc_topic = {}
        with open(doc_topics_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if line:
                    doc_id, topic = line.split("\t")
                    doc_topic[doc_id] = topic
        df_table = build_df_table(docs)
        enriched = {
            c: enrich_concept(c, entries, config.n_titles, df_table)
            for c in index.concepts
        }
        emb = _load_or_train_embeddings(None, docs, config)
        for doc in docs:
            if doc.id not in doc_topic:
                continue
            keys = extract_key_instances(
                doc, emb, k=config.top_k, delta_w=config.delta_w,
            )
            tagged = tag_document(
                doc, keys, stats, index, {}, enriched, df_table,
                delta_u=config.delta_u, top_m=config.top_m, stopwords=stopwords,
            )
            tagged_with_topics.append((tagged, doc_topic[doc.id]))

    concept_tokens = {c: tuple(tokenizer.tokenize(c)) for c in concepts}
    pairs = tax_mod.import_instance_pairs(pairs_path) if pairs_path else ()
    graph = tax_mod.build_taxonomy(
        topics, concepts, concept_tokens, entries, stats, index,
        tagged_with_topics,
        instance_threshold=config.instance_threshold,
        delta_t=config.delta_t,
        imported_pairs=pairs,
    )
    tax_mod.export_taxonomy(graph, out_path)
    n_edges = sum(len(e) for e in graph.children.values())
    click.echo(f"{len(graph.nodes)} nodes, {n_edges} edges -> {out_path}")


@main.command("rewrite")
@click.option("--query", required=True)
@click.option("--concept", required=True)
@click.option("--taxonomy", "tax_path", required=True, type=click.Path(exists=True))
@click.option("--budget", type=int, default=None)
@click.pass_obj
def rewrite_cmd(config: PipelineConfig, query: str, concept: str, tax_path: str,
                budget: int | None) -> None:
    """Expand a conceptual query into instance-grounded rewrites."""
    graph = tax_mod.import_taxonomy(tax_path)
    concept_id = f"concept:{concept}"
    if concept_id not in graph.nodes:
        raise click.ClickException(f"concept {concept!r} not in taxonomy")
    instances = sorted(
        graph.nodes[cid].text for cid in graph.children.get(concept_id, {})
    )
    for rewritten, quota in evalkit.rewrite_query(
        query, concept, instances, budget or config.budget
    ):
        click.echo(f"{rewritten}\t{quota}")


@main.command("eval")
@click.option("--uccm", "uccm_path", required=True, type=click.Path(exists=True),
              help="`query<TAB>titles||...<TAB>gold` benchmark file.")
@click.option("--seeds", "seeds_path", type=click.Path(exists=True), default=None)
@click.option("--crf-model", "crf_path", type=click.Path(exists=True), default=None)
@click.option("--gate-model", "gate_path", type=click.Path(exists=True), default=None)
@click.pass_obj
def eval_cmd(config: PipelineConfig, uccm_path: str, seeds_path: str | None,
             crf_path: str | None, gate_path: str | None) -> None:
    """Score the mining pipeline on a benchmark file."""
    import datetime as dt

    from .corpus import ClickedTitle, Query, QueryLogEntry

    samples = evalkit.load_uccm(uccm_path)
    tokenizer = RuleTokenizer()
    today = dt.date.today()
    entries = []
    for sample in samples:
        query_tokens = tuple(tokenizer.tokenize(sample.query))
        titles = tuple(
            ClickedTitle(tuple(tokenizer.tokenize(t)), config.min_clicks + 1, today)
            for t in sample.clicked_titles
        )
        entries.append(
            QueryLogEntry(
                query=Query(id=" ".join(t.surface for t in query_tokens),
                            tokens=query_tokens),
                titles=titles,
            )
        )
    if seeds_path is None:
        with resources.as_file(bundled_data_path("seed_patterns.txt")) as p:
            seeds = boot_mod.load_seed_patterns(str(p))
    else:
        seeds = boot_mod.load_seed_patterns(seeds_path)
    crf_model = seqlabel.load_model(crf_path) if crf_path else None
    gate_model = disc_mod.load_quality_model(gate_path) if gate_path else None
    result = evalkit.mine_all(
        entries, seeds, crf_model, gate_model,
        max_iters=config.max_iters, alpha=config.alpha, beta=config.beta,
        delta=config.delta, min_len=config.min_len,
    )

    def system(sample: evalkit.EvalSample) -> str:
        key = " ".join(t.surface for t in tokenizer.tokenize(sample.query))
        cand = result.final_by_query.get(key)
        return cand.text if cand else ""

    report = evalkit.evaluate_run(samples, system)
    click.echo(f"exact_match={report.exact_match:.4f} f1={report.f1:.4f} "
               f"n={len(report.records)}")


if __name__ == "__main__":
    main()
