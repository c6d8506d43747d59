#![allow(dead_code)]

use std::path::PathBuf;

use evidence_rag::bm25::{Bm25Index, Bm25Params};
use evidence_rag::corpus::{ingest_corpus, Corpus, Document};
use evidence_rag::eval::EvalRecord;
use evidence_rag::feedback::{FeedbackNet, RecordingScorer, RuleScorer, ScoreRule, ScoreTranscript};
use evidence_rag::llm::{RecordingClient, Rule, RuleClient, TemplateName, TemplateSet, Transcript};
use evidence_rag::pipeline::Deps;

pub const CASE_1: &str = "Who is the mother of the director of film Polish-Russian War?";
pub const CASE_2: &str = "what is the name of the rca victor dog?";

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn fixture_index() -> Bm25Index {
    let corpus = ingest_corpus(fixtures().join("corpus.jsonl")).unwrap();
    Bm25Index::build(&corpus, Bm25Params::default()).unwrap()
}

pub fn fixture_rules() -> RuleClient {
    RuleClient::load(fixtures().join("rules.json")).unwrap()
}

pub fn fixture_scorer() -> RuleScorer {
    RuleScorer::load(fixtures().join("score_rules.json")).unwrap()
}

pub fn fixture_net() -> FeedbackNet {
    FeedbackNet::load(fixtures().join("feedback_net.json")).unwrap()
}

/// Sufficient iff the semantic feature exceeds 0.5: the logit is
/// `100 * relu(g_f - 0.5) - 0.001`.
pub fn threshold_net() -> FeedbackNet {
    let mut net = FeedbackNet::zeros((1, 1));
    net.layers[0].weights = vec![vec![0.0, 1.0]];
    net.layers[0].biases = vec![-0.5];
    net.layers[1].weights = vec![vec![1.0]];
    net.layers[2].weights = vec![vec![100.0]];
    net.layers[2].biases = vec![-0.001];
    net
}

/// A net that never reports sufficiency: all weights zero gives p = 0.5,
/// below a threshold of 0.75.
pub fn never_net() -> FeedbackNet {
    FeedbackNet::zeros((16, 8)).with_tau(0.75)
}

pub struct Owned {
    pub index: Bm25Index,
    pub llm: RuleClient,
    pub scorer: RuleScorer,
    pub net: FeedbackNet,
    pub templates: TemplateSet,
}

impl Owned {
    pub fn deps(&self) -> Deps<'_> {
        Deps {
            index: &self.index,
            curator: &self.llm,
            answerer: &self.llm,
            scorer: Some(&self.scorer),
            net: Some(&self.net),
            templates: &self.templates,
        }
    }
}

pub fn fixture_deps(net: FeedbackNet) -> Owned {
    Owned {
        index: fixture_index(),
        llm: fixture_rules(),
        scorer: fixture_scorer(),
        net,
        templates: TemplateSet::default(),
    }
}

/// Iteration at which question `i` of the scripted suite first has enough
/// evidence (1-based), `None` when it never does.
pub const SUITE_STOPS: [Option<usize>; 10] = [
    Some(1),
    Some(2),
    Some(1),
    Some(3),
    Some(2),
    Some(1),
    None,
    Some(2),
    Some(1),
    Some(3),
];

pub fn suite_question(i: usize) -> String {
    format!("Which archive holds the ledger of topic{i}?")
}

fn fact(i: usize, s: usize) -> String {
    let hop = ["start", "hop{i}a", "hop{i}b"][s].replace("{i}", &i.to_string());
    format!("Topic{i} record {s} points onward from {hop} toward archive{i}.")
}

fn fenced(v: serde_json::Value) -> String {
    format!("```json\n{v}\n```")
}

/// Ten questions that each reach one new fact per retrieval. The scorer gives
/// 0.9 once the fact numbered `stop - 1` is in the pool and 0.1 before, so
/// with [`threshold_net`] rfm retrieves exactly `stop` times (or 3).
pub fn scripted_suite() -> (Owned, Vec<EvalRecord>) {
    let mut docs = Vec::new();
    let mut rules = Vec::new();
    let mut score_rules = Vec::new();
    let mut records = Vec::new();
    for (i, stop) in SUITE_STOPS.iter().enumerate() {
        let q = suite_question(i);
        docs.push(Document {
            id: format!("t{i}-0"),
            title: format!("Topic{i}"),
            text: format!("The ledger of topic{i} is kept in an archive. {}", fact(i, 0)),
        });
        for (s, hop) in [(1, format!("hop{i}a")), (2, format!("hop{i}b"))] {
            docs.push(Document {
                id: format!("t{i}-{s}"),
                title: hop.clone(),
                text: format!("{hop} is a waypoint. {}", fact(i, s)),
            });
        }
        rules.push(Rule::new(
            TemplateName::ExtractTriples,
            &[&format!("Question: {q}\n")],
            fenced(serde_json::json!({
                "entities": [format!("Topic{i}")],
                "triples": [[format!("Topic{i}"), "ledger", "<X>"], ["<X>", "archive", "end"]],
            })),
        ));
        for (s, query) in [(0, q.clone()), (1, format!("hop{i}a")), (2, format!("hop{i}b"))] {
            rules.push(Rule::new(
                TemplateName::Curate,
                &[&format!("Query: {query}\n")],
                format!("Evidence:\n{}", fact(i, s)),
            ));
        }
        // beyond the third hop the pipeline falls back to q0 plus the entity
        rules.push(Rule::new(
            TemplateName::Curate,
            &[&format!("Query: {q} Topic{i}\n")],
            "Evidence: none".to_string(),
        ));
        let topic = format!("Topic{i} record");
        rules.push(Rule::new(
            TemplateName::ResolvePlaceholders,
            &[&format!("{topic} 1")],
            fenced(serde_json::json!({"resolutions": [format!("hop{i}a"), format!("hop{i}b")]})),
        ));
        rules.push(Rule::new(
            TemplateName::ResolvePlaceholders,
            &[&format!("{topic} 0")],
            fenced(serde_json::json!({"resolutions": [format!("hop{i}a")]})),
        ));
        let answer = format!("archive{i}");
        if let Some(k) = stop {
            score_rules.push(ScoreRule {
                query_contains: vec![q.clone()],
                text_contains: vec![format!("{topic} {}", k - 1)],
                score: 0.9,
            });
            rules.push(Rule::new(
                TemplateName::FinalAnswer,
                &[&format!("Question: {q}\n"), &format!("{topic} {}", k - 1)],
                format!("The ledger sits in {answer}. So the answer is {answer}."),
            ));
        }
        score_rules.push(ScoreRule {
            query_contains: vec![q.clone()],
            text_contains: vec![],
            score: 0.1,
        });
        rules.push(Rule::new(
            TemplateName::FinalAnswer,
            &[&format!("Question: {q}\n")],
            "Nothing settles it. So the answer is unknown.".to_string(),
        ));
        records.push(EvalRecord {
            id: format!("s{i}"),
            question: q,
            answers: vec![answer],
        });
    }
    let owned = Owned {
        index: Bm25Index::build(&Corpus::new(docs).unwrap(), Bm25Params::default()).unwrap(),
        llm: RuleClient::new(rules),
        scorer: RuleScorer {
            rules: score_rules,
            default: None,
        },
        net: threshold_net(),
        templates: TemplateSet::default(),
    };
    (owned, records)
}

/// Run `f` against recording wrappers around `owned`'s rule models and return
/// the captured transcripts.
pub fn record<R>(owned: &Owned, f: impl FnOnce(Deps<'_>) -> R) -> (R, Transcript, ScoreTranscript) {
    let llm = RecordingClient::new(owned.llm.clone());
    let scorer = RecordingScorer::new(owned.scorer.clone());
    let deps = Deps {
        index: &owned.index,
        curator: &llm,
        answerer: &llm,
        scorer: Some(&scorer),
        net: Some(&owned.net),
        templates: &owned.templates,
    };
    let out = f(deps);
    (out, llm.transcript(), scorer.transcript())
}
