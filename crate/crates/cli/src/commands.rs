use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Map, Value};

use rirag::answerflow::{
    answer_records_to_json, load_answer_records, run_pipeline, AnswerError, Bm25Retriever, PipelineConfig, Retriever,
    RunRetriever,
};
use rirag::corpus::{load_corpus, load_qa, load_qa_with_corpus, qa_to_json_string, Corpus};
use rirag::eval::{evaluate, Qrels};
use rirag::llm::{EchoClient, HttpLlmClient, LlmClient, LLM_KEY_ENV, LLM_URL_ENV};
use rirag::nli::{BackendConfig, Gateway, GatewayConfig};
use rirag::qgen::{
    generate_questions, group_by_topic, obligation_passages, sample_subgroups, seeded_rng, KeywordMatch, QgenConfig,
    QuestionMode, TopicMap,
};
use rirag::repass::{score_answer_file, summarize};
use rirag::retrieval::{
    build_document_index, build_passage_index, fuse, ingest_run_file, normalize, tokenize, Bm25Index, RankedList, Run,
};
use rirag::validation::filter_dataset_resumable;

use crate::args::{
    AnswerArgs, BackendChoice, EvalArgs, FuseArgs, FusionArgs, IndexArgs, IngestArgs, LlmChoice, NliArgs, QgenArgs,
    RepassArgs, SearchArgs, ValidateArgs,
};
use crate::config::{require_exists, RunConfig};
use crate::error::{CliError, ExitCode};

pub const NLI_URL_ENV: &str = "RIRAG_NLI_URL";

pub type Summary = Map<String, Value>;

fn summary(value: Value) -> Summary {
    match value {
        Value::Object(map) => map,
        _ => unreachable!("summaries are objects"),
    }
}

fn required<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
    let path = path
        .as_deref()
        .ok_or_else(|| CliError::usage(format!("no {flag} given: pass --{flag} or set it in the config")))?;
    require_exists(path)?;
    Ok(path)
}

fn output(cfg: &RunConfig, name: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(&cfg.output_dir).map_err(|e| CliError::io(&cfg.output_dir, e))?;
    Ok(cfg.output_dir.join(name))
}

fn write(cfg: &RunConfig, name: &str, contents: &str) -> Result<String, CliError> {
    let path = output(cfg, name)?;
    fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
    Ok(path.display().to_string())
}

fn write_json(cfg: &RunConfig, name: &str, value: &impl Serialize) -> Result<String, CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::internal(e.to_string()))?;
    write(cfg, name, &(text + "\n"))
}

fn write_jsonl<T: Serialize>(cfg: &RunConfig, name: &str, items: &[T]) -> Result<String, CliError> {
    let mut text = String::new();
    for item in items {
        text.push_str(&serde_json::to_string(item).map_err(|e| CliError::internal(e.to_string()))?);
        text.push('\n');
    }
    write(cfg, name, &text)
}

fn apply_fusion(cfg: &mut RunConfig, args: &FusionArgs) {
    if let Some(w) = args.fusion_weight {
        cfg.fusion.doc_weight = w;
    }
    if args.no_fusion {
        cfg.use_fusion = false;
    }
}

fn gateway(cfg: &RunConfig, args: &NliArgs) -> Result<Gateway, CliError> {
    let with = |backend: BackendConfig| GatewayConfig {
        nli: backend,
        ..cfg.nli.clone().unwrap_or_default()
    };
    let env_url = std::env::var(NLI_URL_ENV).ok().filter(|u| !u.is_empty());
    let config = match args.backend {
        Some(BackendChoice::Heuristic) => with(BackendConfig::heuristic()),
        Some(BackendChoice::Fixture) => {
            let path = args
                .fixtures
                .clone()
                .ok_or_else(|| CliError::usage("--backend fixture needs --fixtures"))?;
            require_exists(&path)?;
            with(BackendConfig::fixture(path))
        }
        Some(BackendChoice::Remote) => {
            let url = args
                .nli_url
                .clone()
                .or(env_url)
                .ok_or_else(|| CliError::usage(format!("--backend remote needs --nli-url or {NLI_URL_ENV}")))?;
            with(BackendConfig::remote(url))
        }
        None => match (&args.nli_url, &args.fixtures, &cfg.nli, env_url) {
            (Some(url), _, _, _) => with(BackendConfig::remote(url.clone())),
            (None, Some(path), _, _) => {
                require_exists(path)?;
                with(BackendConfig::fixture(path.clone()))
            }
            (None, None, Some(nli), _) => nli.clone(),
            (None, None, None, Some(url)) => with(BackendConfig::remote(url)),
            (None, None, None, None) => GatewayConfig::default(),
        },
    };
    let gw = Gateway::from_config(&config)?;
    if gw.uses_heuristic() {
        log::warn!("scoring with the lexical heuristic; numbers are not comparable to model scores");
    }
    Ok(gw)
}

fn llm_client(cfg: &RunConfig, choice: LlmChoice) -> Result<Box<dyn LlmClient>, CliError> {
    match choice {
        LlmChoice::Echo => Ok(Box::new(EchoClient)),
        LlmChoice::Http => {
            let url = match &cfg.llm.endpoint {
                Some(url) => url.clone(),
                None => std::env::var(LLM_URL_ENV).map_err(|_| {
                    CliError::input(
                        "invalid-config",
                        format!("no LLM endpoint: set {LLM_URL_ENV} or llm.endpoint in the config"),
                    )
                })?,
            };
            let mut client = HttpLlmClient::new(url, std::env::var(LLM_KEY_ENV).ok(), cfg.llm.timeout_secs);
            if let Some(rpm) = cfg.llm.requests_per_minute {
                client = client.with_rate_limit(rpm);
            }
            Ok(Box::new(client))
        }
    }
}

fn load_corpus_from(cfg: &RunConfig) -> Result<Corpus, CliError> {
    Ok(load_corpus(required(&cfg.corpus, "corpus")?)?)
}

fn index_stats(index: &Bm25Index) -> Value {
    json!({
        "units": index.unit_count(),
        "vocabulary": index.vocabulary_size(),
        "average_length": index.average_length(),
    })
}

fn report_run_warnings(path: &Path) -> Result<Run, CliError> {
    let (run, warnings) = ingest_run_file(path)?;
    for w in warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(run)
}

pub fn ingest(mut cfg: RunConfig, args: &IngestArgs) -> Result<Summary, CliError> {
    cfg.corpus = args.corpus.clone().or(cfg.corpus);
    cfg.qa = args.qa.clone().or(cfg.qa);
    cfg.validate()?;
    let corpus = load_corpus_from(&cfg)?;
    let mut out = json!({
        "passages": corpus.passage_count(),
        "documents": corpus.document_count(),
        "corpus_file": write(&cfg, "corpus.json", &(corpus.to_json_string() + "\n"))?,
    });
    if let Some(qa) = &cfg.qa {
        let (records, dangling) = load_qa_with_corpus(qa, &corpus)?;
        if let Some(first) = dangling.first() {
            return Err(CliError::input(
                "dangling-reference",
                format!("{} gold passages are missing from the corpus, first: {first}", dangling.len()),
            ));
        }
        out["questions"] = json!(records.len());
        out["qa_file"] = json!(write(&cfg, "qa.json", &(qa_to_json_string(&records) + "\n"))?);
    }
    Ok(summary(out))
}

pub fn index(mut cfg: RunConfig, args: &IndexArgs) -> Result<Summary, CliError> {
    cfg.corpus = args.corpus.clone().or(cfg.corpus);
    cfg.validate()?;
    let corpus = load_corpus_from(&cfg)?;
    let (passages, documents) = rayon::join(
        || build_passage_index(&corpus, cfg.bm25),
        || build_document_index(&corpus, cfg.bm25),
    );
    let stats = json!({
        "params": cfg.bm25,
        "passages": index_stats(&passages?),
        "documents": index_stats(&documents?),
    });
    let file = write_json(&cfg, "index.json", &stats)?;
    let mut out = summary(stats);
    out.insert("index_file".into(), json!(file));
    Ok(out)
}

pub fn search(mut cfg: RunConfig, args: &SearchArgs) -> Result<Summary, CliError> {
    if let Some(q) = &args.query {
        if tokenize(q).is_empty() {
            return Err(CliError::input("empty-query", "the query has no searchable terms"));
        }
    }
    if args.k == 0 {
        return Err(CliError::usage("--k must be at least 1"));
    }
    cfg.corpus = args.corpus.clone().or(cfg.corpus);
    cfg.qa = args.qa.clone().or(cfg.qa);
    apply_fusion(&mut cfg, &args.fusion);
    cfg.validate()?;
    if args.query.is_none() && cfg.qa.is_none() {
        return Err(CliError::usage("pass --query or --qa"));
    }
    cfg.fusion.passage_cutoff = cfg.fusion.passage_cutoff.max(args.k);
    let corpus = load_corpus_from(&cfg)?;
    let passages = build_passage_index(&corpus, cfg.bm25)?;
    let documents = if cfg.use_fusion {
        Some(build_document_index(&corpus, cfg.bm25)?)
    } else {
        None
    };
    let retriever = Bm25Retriever {
        corpus: &corpus,
        passages: &passages,
        documents: documents.as_ref(),
        fusion: cfg.fusion,
    };
    let tag = if cfg.use_fusion { "bm25-fused" } else { "bm25" };
    let retrieve = |qid: &str, text: &str| -> Result<RankedList, CliError> {
        match retriever.retrieve(qid, text) {
            Ok(mut list) => {
                list.truncate(args.k);
                Ok(list)
            }
            Err(AnswerError::EmptyRanking) => Ok(RankedList::empty(qid)),
            Err(e) => Err(e.into()),
        }
    };

    if let Some(query) = &args.query {
        let list = retrieve("query", query)?;
        for (i, c) in list.candidates().iter().enumerate() {
            let text = c
                .id
                .passage_id
                .as_deref()
                .and_then(|pid| corpus.passage(c.id.document_id, pid))
                .map_or("", |p| p.text.as_str());
            let snippet: String = text.chars().take(80).collect();
            println!("{}\t{:.4}\t{}\t{}", i + 1, c.score(), c.id, snippet.replace('\n', " "));
        }
        let ids: Vec<String> = list.ids().map(ToString::to_string).collect();
        let mut run = Run::new(tag);
        run.insert(list);
        return Ok(summary(json!({
            "results": ids.len(),
            "top": ids,
            "run_file": write(&cfg, "search.txt", &run.to_run_string())?,
        })));
    }

    let records = load_qa(required(&cfg.qa, "qa")?)?;
    let lists: Vec<RankedList> = records
        .par_iter()
        .map(|r| retrieve(&r.question_id, &r.question))
        .collect::<Result<_, _>>()?;
    let mut run = Run::new(tag);
    let mut unmatched = 0;
    for list in lists {
        if list.is_empty() {
            unmatched += 1;
        } else {
            run.insert(list);
        }
    }
    Ok(summary(json!({
        "queries": records.len(),
        "unmatched": unmatched,
        "fusion": cfg.use_fusion,
        "run_file": write(&cfg, "run.txt", &run.to_run_string())?,
    })))
}

pub fn fuse_runs(mut cfg: RunConfig, args: &FuseArgs) -> Result<Summary, CliError> {
    cfg.corpus = args.corpus.clone().or(cfg.corpus);
    if let Some(w) = args.fusion_weight {
        cfg.fusion.doc_weight = w;
    }
    cfg.validate()?;
    require_exists(&args.passage_run)?;
    require_exists(&args.document_run)?;
    let corpus = cfg.corpus.as_ref().map(load_corpus).transpose()?;
    let passages = report_run_warnings(&args.passage_run)?;
    let documents = report_run_warnings(&args.document_run)?;
    let window = cfg.fusion.passage_cutoff;
    let mut fused = Run::new("fused");
    let mut missing_documents = 0;
    for (qid, list) in passages.iter() {
        let p = normalize(list, window)?;
        let d = match documents.get(qid) {
            Some(d) if !d.is_empty() => normalize(d, window)?,
            _ => {
                missing_documents += 1;
                RankedList::empty(qid)
            }
        };
        fused.insert(fuse(&p, &d, &cfg.fusion, corpus.as_ref())?);
    }
    Ok(summary(json!({
        "queries": fused.len(),
        "without_document_ranking": missing_documents,
        "doc_weight": cfg.fusion.doc_weight,
        "run_file": write(&cfg, "fused_run.txt", &fused.to_run_string())?,
    })))
}

pub fn eval(cfg: RunConfig, args: &EvalArgs) -> Result<Summary, CliError> {
    cfg.validate()?;
    if args.k == 0 {
        return Err(CliError::usage("--k must be at least 1"));
    }
    require_exists(&args.run)?;
    require_exists(&args.qrels)?;
    let run = report_run_warnings(&args.run)?;
    let qrels = Qrels::from_qa(&load_qa(&args.qrels)?)?;
    let report = evaluate(&run, &qrels, args.k)?;
    println!("{report}");
    Ok(summary(json!({
        "k": args.k,
        "queries": report.per_query.len(),
        "recall": report.recall,
        "map": report.map,
        "report_file": write_json(&cfg, "eval.json", &report)?,
    })))
}

pub fn validate(mut cfg: RunConfig, args: &ValidateArgs) -> Result<Summary, CliError> {
    cfg.qa = args.qa.clone().or(cfg.qa);
    cfg.validate()?;
    let records = load_qa(required(&cfg.qa, "qa")?)?;
    let gw = gateway(&cfg, &args.nli)?;
    let log = output(&cfg, "verdicts.jsonl")?;
    let outcome = filter_dataset_resumable(&records, &gw, &log)?;
    Ok(summary(json!({
        "questions": records.len(),
        "kept": outcome.kept.len(),
        "dropped": outcome.dropped.len(),
        "verdicts": outcome.verdicts.len(),
        "backend": gw.watermark(),
        "verdict_log": log.display().to_string(),
        "qa_file": write(&cfg, "validated_qa.json", &(qa_to_json_string(&outcome.kept) + "\n"))?,
    })))
}

pub fn repass(mut cfg: RunConfig, args: &RepassArgs) -> Result<Summary, CliError> {
    cfg.corpus = args.corpus.clone().or(cfg.corpus);
    cfg.validate()?;
    require_exists(&args.answers)?;
    let records = load_answer_records(&args.answers).map_err(|e| CliError::input("invalid-answers", e))?;
    let corpus = cfg.corpus.as_ref().map(load_corpus).transpose()?;
    let gw = gateway(&cfg, &args.nli)?;
    let results = score_answer_file(&records, corpus.as_ref(), &gw, &cfg.repass);
    let file = write_json(&cfg, "repass.json", &results)?;
    let Some(means) = summarize(&results, &gw.watermark()) else {
        return Err(CliError::input(
            "no-scored-records",
            format!("none of the {} answer records could be scored; see {file}", records.len()),
        ));
    };
    let mut out = summary(serde_json::to_value(means).map_err(|e| CliError::internal(e.to_string()))?);
    out.insert("report_file".into(), json!(file));
    Ok(out)
}

pub fn answer(mut cfg: RunConfig, args: &AnswerArgs) -> Result<Summary, CliError> {
    cfg.corpus = args.corpus.clone().or(cfg.corpus);
    cfg.qa = args.qa.clone().or(cfg.qa);
    if let Some(k) = args.k {
        cfg.filter.max_passages = k;
    }
    if let Some(d) = args.drop_threshold {
        cfg.filter.drop_threshold = d;
    }
    if let Some(s) = args.min_score {
        cfg.filter.min_score = s;
    }
    apply_fusion(&mut cfg, &args.fusion);
    cfg.validate()?;
    if let Some(run) = &args.run {
        require_exists(run)?;
    }
    let questions = load_qa(required(&cfg.qa, "qa")?)?;
    let corpus = load_corpus_from(&cfg)?;
    let client = llm_client(&cfg, args.llm)?;
    let pipeline = PipelineConfig {
        policy: cfg.filter,
        llm: cfg.llm.settings.clone(),
        jobs: 0,
    };

    let out = match &args.run {
        Some(path) => {
            let run = report_run_warnings(path)?;
            let retriever = RunRetriever {
                corpus: &corpus,
                run: &run,
                window: cfg.fusion.passage_cutoff,
            };
            run_pipeline(&questions, &retriever, client.as_ref(), &pipeline)
        }
        None => {
            let passages = build_passage_index(&corpus, cfg.bm25)?;
            let documents = if cfg.use_fusion {
                Some(build_document_index(&corpus, cfg.bm25)?)
            } else {
                None
            };
            let retriever = Bm25Retriever {
                corpus: &corpus,
                passages: &passages,
                documents: documents.as_ref(),
                fusion: cfg.fusion,
            };
            run_pipeline(&questions, &retriever, client.as_ref(), &pipeline)
        }
    };

    let answers_file = write(&cfg, "answers.json", &(answer_records_to_json(&out.records) + "\n"))?;
    write_jsonl(&cfg, "transcripts.jsonl", &out.transcripts)?;
    write_json(&cfg, "failures.json", &out.failures)?;
    if out.records.is_empty() && out.failures.iter().any(|f| f.transport) {
        return Err(CliError::new(
            ExitCode::Backend,
            "llm-unavailable",
            format!("no question was answered: {}", out.failures[0].error),
        ));
    }
    Ok(summary(json!({
        "questions": questions.len(),
        "answered": out.records.len(),
        "failed": out.failures.len(),
        "fallbacks": out.fallbacks.len(),
        "llm": client.describe(),
        "answers_file": answers_file,
    })))
}

pub fn qgen(mut cfg: RunConfig, args: &QgenArgs) -> Result<Summary, CliError> {
    cfg.corpus = args.corpus.clone().or(cfg.corpus);
    cfg.topics = args.topics.clone().or(cfg.topics);
    if args.whole_word {
        cfg.keyword_match = KeywordMatch::WholeWord;
    }
    cfg.validate()?;
    if args.size == 0 || args.size > rirag::qgen::MAX_SUBGROUP {
        return Err(CliError::usage(format!(
            "--size must lie in 1..={}",
            rirag::qgen::MAX_SUBGROUP
        )));
    }
    let corpus = load_corpus_from(&cfg)?;
    let topics = match &cfg.topics {
        Some(path) => TopicMap::load(path)?,
        None => TopicMap::sample(),
    };
    let gw = gateway(&cfg, &args.nli)?;
    let client = llm_client(&cfg, args.llm)?;

    let obligations = obligation_passages(&corpus, &gw)?;
    let groups = group_by_topic(&obligations, &topics, cfg.keyword_match)?;
    let mut rng = seeded_rng(cfg.seed);
    let mut subsets = Vec::new();
    let mut too_small = Vec::new();
    for group in &groups {
        if group.members.len() < args.size {
            too_small.push(group.topic.clone());
            continue;
        }
        subsets.extend(sample_subgroups(group, args.size, args.count, &mut rng)?);
    }
    let qcfg = QgenConfig {
        llm: cfg.llm.settings.clone(),
        questions_per_call: cfg.questions_per_call,
        seed: cfg.seed,
    };
    let generated = generate_questions(&subsets, QuestionMode::for_size(args.size), client.as_ref(), &qcfg)?;

    let qa_file = write(&cfg, "generated_qa.json", &(qa_to_json_string(&generated.records) + "\n"))?;
    write_jsonl(&cfg, "transcripts.jsonl", &generated.transcripts)?;
    write_json(&cfg, "qgen_failures.json", &generated.failures)?;
    if generated.records.is_empty() && generated.failures.iter().any(|f| f.transport) {
        return Err(CliError::new(
            ExitCode::Backend,
            "llm-unavailable",
            format!("no question was generated: {}", generated.failures[0].error),
        ));
    }
    Ok(summary(json!({
        "obligation_passages": obligations.len(),
        "groups": groups.len(),
        "groups_too_small": too_small,
        "subsets": subsets.len(),
        "questions": generated.records.len(),
        "failed": generated.failures.len(),
        "backend": gw.watermark(),
        "qa_file": qa_file,
    })))
}
