//! End-to-end runs over the bundled sample corpus.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::Arc;

use rirag::answerflow::{
    answer_records_to_json, run_pipeline, Bm25Retriever, FilterPolicy, PipelineConfig, RunRetriever,
};
use rirag::corpus::{load_corpus, load_qa_with_corpus, segment_sentences, Corpus, QaRecord};
use rirag::eval::{evaluate, Qrels};
use rirag::llm::CannedClient;
use rirag::nli::{FixtureBackend, FixtureStore, Gateway, NliProbs, NliRole};
use rirag::qgen::{
    generate_questions, group_by_topic, obligation_passages, sample_subgroups, seeded_rng, KeywordMatch,
    PassageGroup, QgenConfig, QuestionMode, TopicMap,
};
use rirag::repass::{score_answer_file, RecordResult, RepassConfig};
use rirag::retrieval::{build_document_index, build_passage_index, parse_run, Bm25Params, FusionConfig, Run};
use rirag::validation::filter_dataset;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn corpus() -> Corpus {
    load_corpus(fixture("corpus_sample.json")).unwrap()
}

fn question(id: &str, text: &str) -> QaRecord {
    QaRecord {
        question_id: id.into(),
        question: text.into(),
        gold: Vec::new(),
    }
}

#[test]
fn sample_dataset_resolves_against_the_corpus() {
    let corpus = corpus();
    let (qa, dangling) = load_qa_with_corpus(fixture("obliqa_sample.json"), &corpus).unwrap();
    assert_eq!(qa.len(), 2);
    assert!(dangling.is_empty(), "{dangling:?}");
    let p = corpus.passage(5, "6.1.2").unwrap();
    assert_eq!(segment_sentences(&p.text).len(), 3);
    assert!(corpus.passage_by_record_id("2230472f-a9d4-4b81-842f-964c0653f8e7").is_some());
}

#[test]
fn bm25_run_evaluates_against_sample_gold() {
    let corpus = corpus();
    let (qa, _) = load_qa_with_corpus(fixture("obliqa_sample.json"), &corpus).unwrap();
    let index = build_passage_index(&corpus, Bm25Params::default()).unwrap();
    let mut run = Run::new("bm25");
    for r in &qa {
        run.insert(index.search(&r.question, 10).with_query_id(r.question_id.clone()));
    }
    let (reread, warnings) = parse_run(&run.to_run_string()).unwrap();
    assert!(warnings.is_empty());
    let report = evaluate(&reread, &Qrels::from_qa(&qa).unwrap(), 10).unwrap();
    assert!((0.0..=1.0).contains(&report.recall));
    // the second question shares most of its words with both of its gold passages
    assert_eq!(report.per_query["8dc451a4-ec55-4fa5-abce-b0b8764a9338"].recall, 1.0);
}

#[test]
fn answer_pipeline_keeps_order_and_records_failures() {
    let corpus = corpus();
    let passages = build_passage_index(&corpus, Bm25Params::default()).unwrap();
    let documents = build_document_index(&corpus, Bm25Params::default()).unwrap();
    let retriever = Bm25Retriever {
        corpus: &corpus,
        passages: &passages,
        documents: Some(&documents),
        fusion: FusionConfig::default(),
    };
    let questions = vec![
        question("q1", "What must an AML compliance program address regarding money laundering?"),
        question("q2", "xyzzy plugh"),
        question("q3", "How often must internal audits of compliance monitoring take place?"),
    ];
    let client = CannedClient::new()
        .reply("AML compliance program", "A Relevant Person must maintain an AML compliance program.")
        .reply("internal audits", "Internal audits must take place at least annually.");
    let out = run_pipeline(&questions, &retriever, &client, &PipelineConfig { jobs: 3, ..PipelineConfig::default() });

    let ids: Vec<&str> = out.records.iter().map(|r| r.question_id.as_str()).collect();
    assert_eq!(ids, vec!["q1", "q3"]);
    assert_eq!(out.failures.len(), 1);
    assert_eq!(out.failures[0].question_id, "q2");
    assert_eq!(out.records[0].retrieved_passages.len(), out.records[0].retrieved_ids.len());
    assert!(out.records[0].retrieved_passages[0].contains("AML compliance program"));
    assert_eq!(out.transcripts.len(), 2);

    let json: serde_json::Value = serde_json::from_str(&answer_records_to_json(&out.records)).unwrap();
    let keys: BTreeSet<&str> = json[0].as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(
        keys,
        BTreeSet::from(["QuestionID", "Question", "RetrievedPassages", "Answer", "RetrievedIDs"])
    );

    // the same answers score identically whether passages come inline or by id
    let gw = Gateway::heuristic();
    let inline = score_answer_file(&out.records, None, &gw, &RepassConfig::default());
    let mut by_id = out.records.clone();
    for r in &mut by_id {
        r.retrieved_passages.clear();
    }
    let resolved = score_answer_file(&by_id, Some(&corpus), &gw, &RepassConfig::default());
    for (a, b) in inline.iter().zip(&resolved) {
        match (a, b) {
            (RecordResult::Scored(a), RecordResult::Scored(b)) => assert_eq!(a.repass, b.repass),
            other => panic!("{other:?}"),
        }
    }
}

#[test]
fn run_file_drives_answering() {
    let corpus = corpus();
    let (run, _) = parse_run("q1 30#1.1 1 0.95 fused\nq1 30#1.2 2 0.9 fused\nq1 31#2.1 3 0.6 fused\n").unwrap();
    let retriever = RunRetriever { corpus: &corpus, run: &run, window: 100 };
    let client = CannedClient::new().otherwise("An answer.");
    let out = run_pipeline(&[question("q1", "Q?")], &retriever, &client, &PipelineConfig::default());
    assert_eq!(out.records[0].retrieved_ids.len(), 2);
    assert!(out.fallbacks.is_empty());

    let strict = PipelineConfig {
        policy: FilterPolicy { min_score: 0.99, ..FilterPolicy::default() },
        ..PipelineConfig::default()
    };
    let out = run_pipeline(&[question("q1", "Q?")], &retriever, &client, &strict);
    assert_eq!(out.records[0].retrieved_ids.len(), 1);
    assert_eq!(out.fallbacks, vec!["q1".to_string()]);
}

#[test]
fn topic_groups_match_a_substring_scan() {
    let corpus = corpus();
    let passages: Vec<_> = corpus.passages().cloned().collect();
    let topics = TopicMap::sample();
    let groups = group_by_topic(&passages, &topics, KeywordMatch::Substring).unwrap();
    for (topic, keywords) in topics.topics() {
        let expected: Vec<&str> = passages
            .iter()
            .filter(|p| {
                let lower = p.text.to_lowercase();
                keywords.iter().any(|k| lower.contains(k.as_str()))
            })
            .map(|p| p.record_id.as_str())
            .collect();
        let got: Vec<&str> = groups
            .iter()
            .find(|g| g.topic == topic)
            .map(|g| g.members.iter().map(|p| p.record_id.as_str()).collect())
            .unwrap_or_default();
        assert_eq!(got, expected, "{topic}");
    }
}

#[test]
fn subgroup_membership_is_uniform() {
    let corpus = corpus();
    let group = PassageGroup {
        topic: "all".into(),
        members: corpus.passages().take(10).cloned().collect(),
    };
    let draws = 20_000;
    let subsets = sample_subgroups(&group, 3, draws, &mut seeded_rng(2024)).unwrap();
    // each member appears in a draw with probability 3/10
    let p = 3.0 / 10.0;
    let mean = draws as f64 * p;
    let sd = (draws as f64 * p * (1.0 - p)).sqrt();
    for m in &group.members {
        let hits = subsets.iter().filter(|s| s.iter().any(|x| x.record_id == m.record_id)).count() as f64;
        assert!((hits - mean).abs() <= 3.0 * sd, "{}: {hits} draws vs expected {mean}", m.record_id);
    }
}

#[test]
fn generated_questions_pass_through_validation() {
    let corpus = corpus();
    let obligations = obligation_passages(&corpus, &Gateway::heuristic()).unwrap();
    assert!(obligations.iter().all(|p| p.text.contains("must") || p.text.contains("shall")));
    let groups = group_by_topic(&obligations, &TopicMap::sample(), KeywordMatch::WholeWord).unwrap();
    let aml = groups.iter().find(|g| g.topic == "Anti-Money Laundering").unwrap();
    let subsets = sample_subgroups(aml, 1, 2, &mut seeded_rng(1)).unwrap();
    let client = CannedClient::new()
        .reply("compliance program", "What must an AML program cover?")
        .otherwise("Which activity must be reported?");
    let generated = generate_questions(&subsets, QuestionMode::Single, &client, &QgenConfig::default()).unwrap();
    assert_eq!(generated.records.len(), 2);
    for (r, s) in generated.records.iter().zip(&subsets) {
        assert_eq!(r.gold.len(), 1);
        assert_eq!(r.gold[0].passage_id, s[0].passage_id);
        assert!(r.validate().is_ok());
    }

    // first question retained via the neutral rule, second contradicted
    let mut store = FixtureStore::default();
    let verdicts = [NliProbs { entailment: 0.3, contradiction: 0.1, neutral: 0.6 }, NliProbs {
        entailment: 0.1,
        contradiction: 0.8,
        neutral: 0.1,
    }];
    for (r, probs) in generated.records.iter().zip(verdicts) {
        store.insert_nli(NliRole::Validation, &r.gold[0].text, &r.question, probs);
    }
    let gw = Gateway::uniform(Arc::new(FixtureBackend::new(store)));
    let out = filter_dataset(&generated.records, &gw).unwrap();
    assert_eq!(out.kept.len(), 1);
    assert_eq!(out.kept[0].question_id, generated.records[0].question_id);
    assert_eq!(out.dropped, vec![generated.records[1].question_id.clone()]);
}

#[test]
fn identical_answer_records_score_identically() {
    let corpus = corpus();
    let (qa, _) = load_qa_with_corpus(fixture("obliqa_sample.json"), &corpus).unwrap();
    let record = rirag::answerflow::AnswerRecord {
        question_id: qa[0].question_id.clone(),
        question: qa[0].question.clone(),
        retrieved_passages: qa[0].gold.iter().map(|g| g.text.clone()).collect(),
        answer: "The Fund Manager must ensure the fund is managed in compliance with its constitution. It must maintain a Unitholder register.".into(),
        retrieved_ids: Vec::new(),
    };
    let results = score_answer_file(&[record.clone(), record], None, &Gateway::heuristic(), &RepassConfig::default());
    assert_eq!(results[0], results[1]);
    let RecordResult::Scored(r) = &results[0] else { panic!() };
    assert!(r.obligation_count >= 2);
    assert!((0.0..=1.0).contains(&r.repass));
}
