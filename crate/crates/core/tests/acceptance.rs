//! Acceptance gate. Every criterion prints one `PASS` or `FAIL` line with the
//! tolerance it was held to; the test fails if any required criterion fails.
//!
//! The ObliQA benchmark check runs only when `RIRAG_OBLIQA_CORPUS` (corpus
//! file or directory) and `RIRAG_OBLIQA_QA` (test split) are set. Its outcome
//! is reported but never fails the gate.
//!
//! Run with `cargo test -p rirag --test acceptance -- --nocapture`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rirag::answerflow::{filter_passages, AnswerRecord, FilterPolicy};
use rirag::corpus::{load_corpus, load_qa, Corpus};
use rirag::eval::{evaluate, map_at_k, recall_at_k, Qrels};
use rirag::nli::{FixtureBackend, FixtureStore, Gateway, NliProbs, NliRole, ObligationLabel};
use rirag::repass::{composite, score_answer_file, RecordResult, RepassConfig};
use rirag::retrieval::{
    build_passage_index, fuse, normalize, Bm25Index, Bm25Params, CandidateId, FusionConfig, RankedList, Run,
    ScoredCandidate,
};
use rirag::validation::{decide, Decision, NliLabel};

struct Gate {
    failed: Vec<String>,
}

impl Gate {
    fn check(&mut self, name: &str, tolerance: &str, outcome: Result<String, String>) {
        match outcome {
            Ok(detail) => println!("PASS  {name}  [{tolerance}]  {detail}"),
            Err(detail) => {
                println!("FAIL  {name}  [{tolerance}]  {detail}");
                self.failed.push(name.to_string());
            }
        }
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn composite_rows() -> Result<String, String> {
    let rows = [
        ((0.7639, 0.3336, 1.0000), 0.8101),
        ((0.320, 0.131, 0.222), 0.470),
        ((0.308, 0.123, 0.214), 0.466),
    ];
    let mut worst = 0.0f64;
    for ((e, c, oc), want) in rows {
        let got = composite(e, c, oc).map_err(|err| err.to_string())?;
        ensure((got - want).abs() <= 5e-4, || format!("({e}, {c}, {oc}) -> {got:.6}, expected {want}"))?;
        worst = worst.max((got - want).abs());
    }
    Ok(format!("3 rows, max deviation {worst:.2e}"))
}

/// Synthetic record: distinct capitalized sentences so segmentation is unambiguous.
struct Synthetic {
    passages: Vec<Vec<String>>,
    answer: Vec<String>,
}

fn sentence(tag: &str, r: usize, i: usize) -> String {
    format!("{tag} statement {r} {i} applies.")
}

fn random_probs(rng: &mut ChaCha8Rng) -> NliProbs {
    let a: f64 = rng.random();
    let b: f64 = rng.random();
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    NliProbs {
        entailment: lo,
        contradiction: hi - lo,
        neutral: 1.0 - hi,
    }
}

fn repass_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = FixtureStore::default();
    let mut records = Vec::new();
    let mut synth = Vec::new();
    for r in 0..50 {
        let passages: Vec<Vec<String>> = (0..rng.random_range(1..=3))
            .map(|p| (0..rng.random_range(1..=4)).map(|i| sentence("Passage", r, p * 10 + i)).collect())
            .collect();
        let answer: Vec<String> = (0..rng.random_range(1..=4)).map(|i| sentence("Answer", r, i)).collect();
        for p in passages.iter().flatten() {
            let yes = rng.random_bool(0.5);
            store.insert_obligation(p, ObligationLabel { is_obligation: yes, confidence: 0.9 });
            for a in &answer {
                store.insert_nli(NliRole::Matrix, p, a, random_probs(&mut rng));
                store.insert_nli(NliRole::Coverage, p, a, random_probs(&mut rng));
            }
        }
        records.push(AnswerRecord {
            question_id: format!("q{r}"),
            question: "Question?".into(),
            retrieved_passages: passages.iter().map(|s| s.join(" ")).collect(),
            answer: answer.join(" "),
            retrieved_ids: Vec::new(),
        });
        synth.push(Synthetic { passages, answer });
    }

    let gateway = Gateway::uniform(Arc::new(FixtureBackend::new(store.clone())));
    let results = score_answer_file(&records, None, &gateway, &RepassConfig::default());

    let probs = |role, p: &str, h: &str| store.get_nli(role, p, h).expect("fixture covers every pair");
    let obligation = |s: &str| store.obligations.get(&rirag::nli::obligation_hash(s)).map(|l| l.is_obligation);

    let mut worst = 0.0f64;
    for (s, result) in synth.iter().zip(&results) {
        let RecordResult::Scored(report) = result else {
            return Err(format!("record failed: {result:?}"));
        };
        let premises: Vec<&String> = s.passages.iter().flatten().collect();
        let n = s.answer.len() as f64;
        let mut e_sum = 0.0;
        let mut c_sum = 0.0;
        for a in &s.answer {
            let mut e_max = f64::NEG_INFINITY;
            let mut c_max = f64::NEG_INFINITY;
            for p in &premises {
                let q = probs(NliRole::Matrix, p, a);
                if q.entailment > e_max {
                    e_max = q.entailment;
                }
                if q.contradiction > c_max {
                    c_max = q.contradiction;
                }
            }
            e_sum += e_max;
            c_sum += c_max;
        }
        let e = e_sum / n;
        let c = c_sum / n;
        let obligations: Vec<&&String> = premises.iter().filter(|p| obligation(p) == Some(true)).collect();
        let oc = if obligations.is_empty() {
            1.0
        } else {
            let covered = obligations
                .iter()
                .filter(|o| {
                    let mut best = f64::NEG_INFINITY;
                    for a in &s.answer {
                        best = best.max(probs(NliRole::Coverage, o, a).entailment);
                    }
                    best > 0.7
                })
                .count();
            covered as f64 / obligations.len() as f64
        };
        let repass = (e - c + oc + 1.0) / 3.0;
        for (got, want) in [
            (report.entailment, e),
            (report.contradiction, c),
            (report.coverage, oc),
            (report.repass, repass),
        ] {
            worst = worst.max((got - want).abs());
        }
    }
    ensure(worst <= 1e-9, || format!("max deviation {worst:.3e}"))?;
    Ok(format!("50 records, max deviation {worst:.2e}"))
}

fn repass_extremes() -> Result<String, String> {
    let passage = "Firms must keep records. Firms must report breaches.";
    let answer = "Records are kept. Breaches are reported.";
    let premises = ["Firms must keep records.", "Firms must report breaches."];
    let hypotheses = ["Records are kept.", "Breaches are reported."];
    let build = |e: f64, c: f64| {
        let mut store = FixtureStore::default();
        for p in premises {
            store.insert_obligation(p, ObligationLabel { is_obligation: true, confidence: 1.0 });
            for h in hypotheses {
                let probs = NliProbs { entailment: e, contradiction: c, neutral: 1.0 - e - c };
                store.insert_nli(NliRole::Matrix, p, h, probs);
                store.insert_nli(NliRole::Coverage, p, h, probs);
            }
        }
        Gateway::uniform(Arc::new(FixtureBackend::new(store)))
    };
    let record = AnswerRecord {
        question_id: "x".into(),
        question: "Q?".into(),
        retrieved_passages: vec![passage.into()],
        answer: answer.into(),
        retrieved_ids: Vec::new(),
    };
    let score = |gw: &Gateway| match &score_answer_file(std::slice::from_ref(&record), None, gw, &RepassConfig::default())[0] {
        RecordResult::Scored(r) => Ok(r.repass),
        other => Err(format!("{other:?}")),
    };
    let best = score(&build(1.0, 0.0))?;
    let worst = score(&build(0.0, 1.0))?;
    ensure(best == 1.0 && worst == 0.0, || format!("perfect -> {best}, adversarial -> {worst}"))?;
    Ok("perfect -> 1.0, adversarial -> 0.0".into())
}

fn random_run_and_qrels(rng: &mut ChaCha8Rng) -> (Run, Qrels) {
    let pool = 30;
    let mut run = Run::new("t");
    let mut gold = BTreeMap::new();
    for q in 0..rng.random_range(1..=6) {
        let qid = format!("q{q}");
        let g: BTreeSet<CandidateId> = (0..rng.random_range(1..=5))
            .map(|_| CandidateId::passage(rng.random_range(0..3), format!("p{}", rng.random_range(0..pool))))
            .collect();
        gold.insert(qid.clone(), g);
        if rng.random_bool(0.85) {
            let mut seen = BTreeSet::new();
            let cands: Vec<ScoredCandidate> = (0..rng.random_range(0..=25))
                .filter_map(|_| {
                    let id = CandidateId::passage(rng.random_range(0..3), format!("p{}", rng.random_range(0..pool)));
                    // integer scores produce ties that the id order must break
                    let score = f64::from(rng.random_range(0..10u32));
                    seen.insert(id.clone()).then(|| ScoredCandidate::new(id, score))
                })
                .collect();
            run.insert(RankedList::new(qid, cands).expect("unique ids"));
        }
    }
    (run, Qrels::new(gold).expect("gold sets are non-empty"))
}

fn metric_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for instance in 0..200 {
        let (run, qrels) = random_run_and_qrels(&mut rng);
        let k = 10;
        let mut recall_sum = 0.0;
        let mut ap_sum = 0.0;
        let mut per_query = Vec::new();
        for (qid, gold) in qrels.iter() {
            // relevance vector over the sorted top-k
            let rel: Vec<bool> = match run.get(qid) {
                None => Vec::new(),
                Some(list) => {
                    let mut sorted: Vec<&ScoredCandidate> = list.candidates().iter().collect();
                    sorted.sort_by(|a, b| b.raw_score.total_cmp(&a.raw_score).then_with(|| a.id.cmp(&b.id)));
                    sorted.iter().take(k).map(|c| gold.contains(&c.id)).collect()
                }
            };
            let recall = rel.iter().filter(|&&r| r).count() as f64 / gold.len() as f64;
            let mut ap = 0.0;
            for r in 0..rel.len() {
                if rel[r] {
                    let precision = rel[..=r].iter().filter(|&&x| x).count() as f64 / (r + 1) as f64;
                    ap += precision;
                }
            }
            ap /= gold.len() as f64;
            recall_sum += recall;
            ap_sum += ap;
            per_query.push((qid.to_string(), recall, ap));
        }
        let n = qrels.len() as f64;
        let recall = recall_at_k(&run, &qrels, k).map_err(|e| e.to_string())?;
        let map = map_at_k(&run, &qrels, k).map_err(|e| e.to_string())?;
        for (qid, r, ap) in &per_query {
            ensure(recall.per_query[qid] == *r && map.per_query[qid] == *ap, || {
                format!("instance {instance} query {qid}: ({}, {}) vs oracle ({r}, {ap})", recall.per_query[qid], map.per_query[qid])
            })?;
        }
        ensure(recall.mean == recall_sum / n && map.mean == ap_sum / n, || {
            format!("instance {instance}: means ({}, {}) vs oracle ({}, {})", recall.mean, map.mean, recall_sum / n, ap_sum / n)
        })?;
        let report = evaluate(&run, &qrels, k).map_err(|e| e.to_string())?;
        ensure(report.recall == recall.mean && report.map == map.mean, || "report disagrees".into())?;
    }
    Ok("200 instances".into())
}

fn normalized_list(rng: &mut ChaCha8Rng, n: usize, docs: i64) -> RankedList {
    let cands = (0..n)
        .map(|i| {
            let s: f64 = rng.random();
            ScoredCandidate {
                id: CandidateId::passage(rng.random_range(0..docs), format!("p{i}")),
                raw_score: s,
                normalized_score: Some(s),
            }
        })
        .collect();
    RankedList::new("q", cands).expect("unique ids")
}

fn fusion_degeneracy() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = FusionConfig { doc_weight: 0.0, passage_cutoff: 100 };
    for i in 0..100 {
        let n = rng.random_range(1..60);
        let passages = normalized_list(&mut rng, n, 8);
        let docs = RankedList::new(
            "q",
            (0..8)
                .map(|d| {
                    let s: f64 = rng.random();
                    ScoredCandidate { id: CandidateId::document(d), raw_score: s, normalized_score: Some(s) }
                })
                .collect(),
        )
        .expect("unique ids");
        let fused = fuse(&passages, &docs, &cfg, None).map_err(|e| e.to_string())?;
        let same_order = fused.ids().eq(passages.ids());
        let same_scores = fused.candidates().iter().zip(passages.candidates()).all(|(f, p)| f.score() == p.score());
        ensure(same_order && same_scores, || format!("ranking {i} changed under zero document weight"))?;
    }
    let p = RankedList::new(
        "q",
        vec![ScoredCandidate { id: CandidateId::passage(1, "a"), raw_score: 0.8, normalized_score: Some(0.8) }],
    )
    .expect("one candidate");
    let d = RankedList::new(
        "q",
        vec![ScoredCandidate { id: CandidateId::document(1), raw_score: 0.5, normalized_score: Some(0.5) }],
    )
    .expect("one candidate");
    let got = fuse(&p, &d, &FusionConfig::default(), None).map_err(|e| e.to_string())?.candidates()[0].score();
    let want = 0.9 * 0.8 + 0.1 * 0.5;
    ensure(got == want, || format!("spot check gave {got}, expected {want}"))?;
    Ok(format!("100 rankings unchanged; 0.9*0.8 + 0.1*0.5 = {got}"))
}

fn normalization_properties() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let n = rng.random_range(2..150);
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(-50.0..50.0)).collect();
        let a = rng.random_range(0.1..20.0);
        let b = rng.random_range(-100.0..100.0);
        let list = |scores: &[f64]| {
            RankedList::new(
                "q",
                scores
                    .iter()
                    .enumerate()
                    .map(|(j, &s)| ScoredCandidate::new(CandidateId::passage(0, format!("p{j}")), s))
                    .collect(),
            )
            .expect("unique ids")
        };
        let base = normalize(&list(&raw), 100).map_err(|e| e.to_string())?;
        let moved: Vec<f64> = raw.iter().map(|s| a * s + b).collect();
        let shifted = normalize(&list(&moved), 100).map_err(|e| e.to_string())?;
        let scores: Vec<f64> = base.candidates().iter().map(ScoredCandidate::score).collect();
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
        ensure(max == 1.0 && min == 0.0, || format!("vector {i}: window max {max}, min {min}"))?;
        let shifted_by_id: HashMap<&CandidateId, f64> =
            shifted.candidates().iter().map(|c| (&c.id, c.score())).collect();
        for c in base.candidates() {
            let other = shifted_by_id
                .get(&c.id)
                .ok_or_else(|| format!("vector {i}: {} left the window after an affine map", c.id))?;
            worst = worst.max((c.score() - other).abs());
        }
    }
    ensure(worst <= 1e-12, || format!("affine deviation {worst:.3e}"))?;
    Ok(format!("100 vectors, affine deviation {worst:.2e}"))
}

fn validation_rules() -> Result<String, String> {
    let cases = [
        ((0.8, 0.1, 0.1), NliLabel::Entailment, Decision::Retain),
        ((0.1, 0.8, 0.1), NliLabel::Contradiction, Decision::Eliminate),
        ((0.30, 0.10, 0.60), NliLabel::Neutral, Decision::Retain),
        ((0.10, 0.30, 0.60), NliLabel::Neutral, Decision::Eliminate),
        ((0.25, 0.25, 0.50), NliLabel::Neutral, Decision::Eliminate),
    ];
    for ((e, c, n), label, decision) in cases {
        let got = decide(&NliProbs { entailment: e, contradiction: c, neutral: n });
        ensure(got == (label, decision), || format!("({e}, {c}, {n}) -> {got:?}"))?;
    }
    Ok(format!("{} triples", cases.len()))
}

fn filter_walkthrough() -> Result<String, String> {
    let list = |scores: &[f64]| {
        RankedList::new(
            "q",
            scores
                .iter()
                .enumerate()
                .map(|(i, &s)| ScoredCandidate {
                    id: CandidateId::passage(1, format!("p{i}")),
                    raw_score: s,
                    normalized_score: Some(s),
                })
                .collect(),
        )
        .expect("unique ids")
    };
    let policy = FilterPolicy::default();
    let a = filter_passages(&list(&[0.95, 0.90, 0.60, 0.55]), &policy).map_err(|e| e.to_string())?;
    ensure(a.kept.len() == 2 && !a.fallback, || format!("kept {} passages", a.kept.len()))?;
    let b = filter_passages(&list(&[0.65, 0.60]), &policy).map_err(|e| e.to_string())?;
    ensure(b.kept.len() == 1 && b.fallback && b.kept[0].score() == 0.65, || format!("{b:?}"))?;
    Ok("gap cut keeps 2; all-below-floor keeps rank 1".into())
}

fn oracle_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn bm25_oracle(docs: &[Vec<String>], query: &[String], k1: f64, b: f64) -> Vec<Option<f64>> {
    let n = docs.len() as f64;
    let avg = docs.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let mut distinct: Vec<&String> = Vec::new();
    for t in query {
        if !distinct.contains(&t) {
            distinct.push(t);
        }
    }
    docs.iter()
        .map(|d| {
            let mut score = 0.0;
            let mut hit = false;
            for t in &distinct {
                let tf = d.iter().filter(|w| w == t).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                hit = true;
                let df = docs.iter().filter(|o| o.contains(t)).count() as f64;
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                let qtf = query.iter().filter(|q| q == t).count() as f64;
                score += qtf * idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * d.len() as f64 / avg));
            }
            hit.then_some(score)
        })
        .collect()
}

fn bm25_equivalence() -> Result<String, String> {
    let vocab = [
        "firm", "must", "report", "Audit", "capital", "client", "asset", "risk", "the", "of", "AML", "record",
        "breach", "regulator", "fund", "manager", "shall", "notify", "annual", "review",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let params = Bm25Params::default();
    let mut worst = 0.0f64;
    let mut queries = 0;
    while queries < 100 {
        let size = rng.random_range(1..=50);
        let texts: Vec<String> = (0..size)
            .map(|_| {
                // a few passages run past the token limit
                let len = if rng.random_bool(0.05) { rng.random_range(500..700) } else { rng.random_range(1..40) };
                (0..len).map(|_| vocab[rng.random_range(0..vocab.len())]).collect::<Vec<_>>().join(" ")
            })
            .collect();
        let ids: Vec<CandidateId> = (0..size).map(|i| CandidateId::passage(0, format!("p{i:02}"))).collect();
        let index = Bm25Index::build(ids.iter().cloned().zip(texts.iter().map(String::as_str)), params, true)
            .map_err(|e| e.to_string())?;
        let docs: Vec<Vec<String>> = texts
            .iter()
            .map(|t| oracle_tokens(t).into_iter().take(params.token_limit).collect())
            .collect();
        for _ in 0..10 {
            let q: String = (0..rng.random_range(1..6))
                .map(|_| vocab[rng.random_range(0..vocab.len())])
                .collect::<Vec<_>>()
                .join(", ");
            let expected = bm25_oracle(&docs, &oracle_tokens(&q), params.k1, params.b);
            let got = index.search(&q, size);
            let got_map: HashMap<&CandidateId, f64> = got.candidates().iter().map(|c| (&c.id, c.raw_score)).collect();
            let want_hits = expected.iter().filter(|s| s.is_some()).count();
            ensure(got.len() == want_hits, || format!("query {q:?}: {} hits vs oracle {want_hits}", got.len()))?;
            for (id, want) in ids.iter().zip(&expected) {
                if let Some(want) = want {
                    let have = got_map.get(id).ok_or_else(|| format!("query {q:?}: {id} missing"))?;
                    worst = worst.max((have - want).abs());
                }
            }
            ensure(got.candidates().windows(2).all(|w| w[0].raw_score >= w[1].raw_score), || "unsorted".into())?;
            queries += 1;
        }
    }
    ensure(worst <= 1e-9, || format!("max deviation {worst:.3e}"))?;
    Ok(format!("{queries} queries, max deviation {worst:.2e}"))
}

/// Passage-only BM25 on the public test split. Returns `None` when the data is
/// not configured.
fn obliqa_benchmark() -> Option<Result<String, String>> {
    let corpus_path = std::env::var("RIRAG_OBLIQA_CORPUS").ok()?;
    let qa_path = std::env::var("RIRAG_OBLIQA_QA").ok()?;
    Some((|| {
        let corpus: Corpus = load_corpus(&corpus_path).map_err(|e| e.to_string())?;
        let qa = load_qa(&qa_path).map_err(|e| e.to_string())?;
        let index = build_passage_index(&corpus, Bm25Params::default()).map_err(|e| e.to_string())?;
        let mut run = Run::new("bm25");
        for r in &qa {
            run.insert(index.search(&r.question, 10).with_query_id(r.question_id.clone()));
        }
        let report = evaluate(&run, &Qrels::from_qa(&qa).map_err(|e| e.to_string())?, 10).map_err(|e| e.to_string())?;
        let (r, m) = (report.recall * 100.0, report.map * 100.0);
        let detail = format!("R@10 {r:.1} (published 76.1), M@10 {m:.1} (published 62.4), {} queries", qa.len());
        if (r - 76.1).abs() <= 3.0 && (m - 62.4).abs() <= 3.0 {
            Ok(detail)
        } else {
            Err(detail)
        }
    })())
}

#[test]
fn acceptance() {
    let mut gate = Gate { failed: Vec::new() };
    gate.check("composite reproduces published rows", "abs 5e-4", composite_rows());
    gate.check("RePASs matches nested-loop oracle", "abs 1e-9", repass_oracle());
    gate.check("RePASs extreme points", "exact", repass_extremes());
    gate.check("recall@10 and MAP@10 match oracle", "exact", metric_oracle());
    gate.check("fusion degeneracy and spot check", "exact", fusion_degeneracy());
    gate.check("min-max normalization properties", "abs 1e-12", normalization_properties());
    gate.check("validation rule table", "exact", validation_rules());
    gate.check("filter policy walk-through", "exact", filter_walkthrough());
    gate.check("BM25 matches brute-force scoring", "abs 1e-9", bm25_equivalence());

    match obliqa_benchmark() {
        None => println!("SKIP  ObliQA BM25 benchmark  [abs 3.0 points]  set RIRAG_OBLIQA_CORPUS and RIRAG_OBLIQA_QA to run"),
        Some(Ok(detail)) => println!("PASS  ObliQA BM25 benchmark  [abs 3.0 points]  {detail}"),
        Some(Err(detail)) => println!("FAIL  ObliQA BM25 benchmark  [abs 3.0 points]  {detail} (reported, not gating)"),
    }

    assert!(gate.failed.is_empty(), "failed criteria: {:?}", gate.failed);
}
