//! Knowledge-gap detection and follow-up query synthesis.
//!
//! The question is analyzed once into key entities and relation triples.
//! Each round, entities whose coverage in the pool falls below θ become
//! gaps, placeholder slots the pool can now fill become resolutions, and
//! both feed the next query.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::evidence::EvidencePool;
use crate::llm::{parse_json_block, ChatModel, ChatRequest, LlmError, Slots, TemplateName, TemplateSet};
use crate::text::normalize;

pub const PLACEHOLDER: &str = "<X>";
/// Upper bound on whitespace-separated words in a synthesized query.
pub const MAX_QUERY_ITEMS: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum GapError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("cannot parse entity/triple extraction: {reason}\n--- raw ---\n{raw}")]
    ExtractionFormat { raw: String, reason: String },
    #[error("cannot parse placeholder resolution: {reason}\n--- raw ---\n{raw}")]
    ResolutionFormat { raw: String, reason: String },
    #[error("no entities extracted from the question")]
    Degenerate,
}

pub fn is_placeholder(s: &str) -> bool {
    matches!(s.trim(), "<X>" | "<x>" | "⟨X⟩" | "⟨x⟩" | "&lt;X&gt;")
}

fn canonical_slot(s: &str) -> String {
    if is_placeholder(s) {
        PLACEHOLDER.to_string()
    } else {
        s.trim().to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationTriple {
    pub subject: String,
    pub predicate: String,
    pub object: String,
}

impl RelationTriple {
    pub fn new(subject: &str, predicate: &str, object: &str) -> Self {
        Self {
            subject: canonical_slot(subject),
            predicate: predicate.trim().to_string(),
            object: canonical_slot(object),
        }
    }

    pub fn has_placeholder(&self) -> bool {
        self.subject == PLACEHOLDER || self.object == PLACEHOLDER
    }
}

impl fmt::Display for RelationTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.subject, self.predicate, self.object)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionAnalysis {
    pub entities: Vec<String>,
    pub triples: Vec<RelationTriple>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawTriple {
    List(Vec<String>),
    Object {
        subject: String,
        predicate: String,
        object: String,
    },
}

#[derive(Deserialize)]
struct RawAnalysis {
    entities: Vec<String>,
    #[serde(default)]
    triples: Vec<RawTriple>,
}

/// Collapse normalized duplicates, keeping first spellings in order.
fn dedup_normalized(items: impl IntoIterator<Item = String>, seen: &mut HashSet<String>) -> Vec<String> {
    let mut out = Vec::new();
    for item in items {
        let item = item.trim().to_string();
        let norm = normalize(&item);
        if norm.is_empty() || is_placeholder(&item) {
            continue;
        }
        if seen.insert(norm) {
            out.push(item);
        }
    }
    out
}

/// Parse the extraction model's output into an analysis.
pub fn parse_analysis(raw: &str) -> Result<QuestionAnalysis, GapError> {
    let parsed: RawAnalysis = parse_json_block(raw).map_err(|reason| GapError::ExtractionFormat {
        raw: raw.to_string(),
        reason,
    })?;
    let entities = dedup_normalized(parsed.entities, &mut HashSet::new());
    let mut triples = Vec::new();
    for t in parsed.triples {
        let triple = match t {
            RawTriple::List(parts) if parts.len() == 3 => RelationTriple::new(&parts[0], &parts[1], &parts[2]),
            RawTriple::List(parts) => {
                return Err(GapError::ExtractionFormat {
                    raw: raw.to_string(),
                    reason: format!("triple with {} elements", parts.len()),
                })
            }
            RawTriple::Object {
                subject,
                predicate,
                object,
            } => RelationTriple::new(&subject, &predicate, &object),
        };
        if !triple.predicate.is_empty() {
            triples.push(triple);
        }
    }
    if entities.is_empty() {
        return Err(GapError::Degenerate);
    }
    Ok(QuestionAnalysis { entities, triples })
}

/// Extract key entities and relation triples from the original question.
pub fn analyze_question(q0: &str, llm: &dyn ChatModel, templates: &TemplateSet) -> Result<QuestionAnalysis, GapError> {
    let template = templates.get(TemplateName::ExtractTriples);
    let mut slots = Slots::new();
    slots.insert("question", q0.to_string());
    slots.insert(
        "examples",
        template
            .examples_block(template.few_shot_examples.len())
            .map_err(LlmError::from)?,
    );
    let prompt = template.render(&slots).map_err(LlmError::from)?;
    let raw = llm.complete(&ChatRequest::new(TemplateName::ExtractTriples, prompt))?.text;
    parse_analysis(&raw)
}

/// `min(C_kE / L_E, 1)`: the share of evidence units mentioning `entity`,
/// zero for an empty pool.
pub fn entity_coverage(pool: &EvidencePool, entity: &str) -> f64 {
    if pool.is_empty() {
        return 0.0;
    }
    (pool.occurrence_count(entity) as f64 / pool.len() as f64).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityCoverage {
    pub entity: String,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub per_entity: Vec<EntityCoverage>,
    pub threshold: f64,
}

impl CoverageReport {
    pub fn compute(analysis: &QuestionAnalysis, pool: &EvidencePool, theta: f64) -> Self {
        Self {
            per_entity: analysis
                .entities
                .iter()
                .map(|e| EntityCoverage {
                    entity: e.clone(),
                    coverage: entity_coverage(pool, e),
                })
                .collect(),
            threshold: theta,
        }
    }

    /// Entities strictly below the threshold, in analysis order.
    pub fn gaps(&self) -> Vec<String> {
        self.per_entity
            .iter()
            .filter(|c| c.coverage < self.threshold)
            .map(|c| c.entity.clone())
            .collect()
    }

    /// First entity with the smallest coverage.
    pub fn least_covered(&self) -> Option<&str> {
        self.per_entity
            .iter()
            .fold(None::<&EntityCoverage>, |best, c| match best {
                Some(b) if b.coverage <= c.coverage => Some(b),
                _ => Some(c),
            })
            .map(|c| c.entity.as_str())
    }
}

/// Entities whose coverage is strictly below `theta`, recomputed from the
/// current pool.
///
/// # Panics
/// If `theta` is outside `(0, 1)`.
pub fn update_gaps(analysis: &QuestionAnalysis, pool: &EvidencePool, theta: f64) -> Vec<String> {
    assert!(theta > 0.0 && theta < 1.0, "coverage threshold must lie in (0, 1), got {theta}");
    CoverageReport::compute(analysis, pool, theta).gaps()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapList {
    pub entity_gaps: Vec<String>,
    pub resolutions: Vec<String>,
}

impl GapList {
    /// Build a gap list, dropping resolutions that repeat an entity gap.
    pub fn new(entity_gaps: Vec<String>, resolutions: Vec<String>) -> Self {
        let mut seen = HashSet::new();
        let entity_gaps = dedup_normalized(entity_gaps, &mut seen);
        let resolutions = dedup_normalized(resolutions, &mut seen);
        Self {
            entity_gaps,
            resolutions,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entity_gaps.is_empty() && self.resolutions.is_empty()
    }

    pub fn items(&self) -> impl Iterator<Item = &str> {
        self.resolutions.iter().chain(&self.entity_gaps).map(String::as_str)
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawResolution {
    Wrapped { resolutions: Vec<serde_json::Value> },
    Bare(Vec<serde_json::Value>),
}

fn resolution_text(v: serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s),
        serde_json::Value::Object(m) => ["value", "entity", "name"]
            .iter()
            .find_map(|k| m.get(*k).and_then(|x| x.as_str()).map(str::to_string)),
        _ => None,
    }
}

pub fn parse_resolutions(raw: &str) -> Result<Vec<String>, GapError> {
    let parsed: RawResolution = parse_json_block(raw)
        .or_else(|block_err| {
            // a bare top-level array is not found by the object scanner
            let start = raw.find('[').ok_or(block_err.clone())?;
            let end = raw.rfind(']').ok_or(block_err.clone())?;
            serde_json::from_str(&raw[start..=end]).map_err(|_| block_err)
        })
        .map_err(|reason| GapError::ResolutionFormat {
            raw: raw.to_string(),
            reason,
        })?;
    let values = match parsed {
        RawResolution::Wrapped { resolutions } => resolutions,
        RawResolution::Bare(v) => v,
    };
    Ok(values.into_iter().filter_map(resolution_text).collect())
}

/// Ask the model which entities fill the `<X>` slots according to the pool.
///
/// Returns only new values: placeholders, empty strings and anything whose
/// normalized form is already in `known` are discarded. No call is made for
/// an empty pool or when no triple carries a placeholder.
pub fn resolve_placeholders(
    triples: &[RelationTriple],
    pool: &EvidencePool,
    llm: &dyn ChatModel,
    templates: &TemplateSet,
    known: &[String],
) -> Result<Vec<String>, GapError> {
    if pool.is_empty() || !triples.iter().any(RelationTriple::has_placeholder) {
        return Ok(Vec::new());
    }
    let mut slots = Slots::new();
    slots.insert(
        "triples",
        triples.iter().map(|t| t.to_string()).collect::<Vec<_>>().join("\n"),
    );
    slots.insert("evidence", pool.render());
    let prompt = templates
        .get(TemplateName::ResolvePlaceholders)
        .render(&slots)
        .map_err(LlmError::from)?;
    let raw = llm
        .complete(&ChatRequest::new(TemplateName::ResolvePlaceholders, prompt))?
        .text;
    let mut seen: HashSet<String> = known.iter().map(|k| normalize(k)).collect();
    Ok(dedup_normalized(parse_resolutions(&raw)?, &mut seen))
}

/// Resolutions first, then entity gaps, joined by spaces and cut to
/// [`MAX_QUERY_ITEMS`] words.
pub fn synthesize_query(gaps: &GapList) -> String {
    gaps.items()
        .flat_map(str::split_whitespace)
        .take(MAX_QUERY_ITEMS)
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evidence::EvidenceUnit;
    use crate::llm::{Rule, RuleClient};

    fn pool(texts: &[&str]) -> EvidencePool {
        let mut p = EvidencePool::new();
        p.add_units(texts.iter().map(|t| EvidenceUnit {
            id: 0,
            text: t.to_string(),
            iteration: 0,
            source_query: String::new(),
            source_doc_ids: vec![],
        }));
        p
    }

    const MOVE_Q: &str =
        "Is the director of Move (1970 Film) and the director of Méditerranée (1963 Film) the same country?";
    const MOVE_JSON: &str = "Entities first.\n```json\n{\"entities\": [\"Move\", \"Méditerranée\"], \"triples\": [[\"Move\", \"director\", \"<X>\"], [\"Méditerranée\", \"director\", \"<X>\"], [\"<X>\", \"country\", \"end\"]]}\n```";

    #[test]
    fn analyzes_move_question() {
        let llm = RuleClient::new(vec![Rule::new(
            TemplateName::ExtractTriples,
            &["Question: Is the director of Move"],
            MOVE_JSON,
        )]);
        let a = analyze_question(MOVE_Q, &llm, &TemplateSet::default()).unwrap();
        assert_eq!(a.entities, ["Move", "Méditerranée"]);
        assert_eq!(
            a.triples,
            [
                RelationTriple::new("Move", "director", "<X>"),
                RelationTriple::new("Méditerranée", "director", "<X>"),
                RelationTriple::new("<X>", "country", "end"),
            ]
        );
    }

    #[test]
    fn collapses_normalized_duplicate_entities() {
        let a = parse_analysis("```json\n{\"entities\": [\"A\", \"a\"], \"triples\": []}\n```").unwrap();
        assert_eq!(a.entities, ["A"]);
    }

    #[test]
    fn prose_is_a_format_error() {
        assert!(matches!(
            parse_analysis("The entities are Move and Méditerranée."),
            Err(GapError::ExtractionFormat { .. })
        ));
    }

    #[test]
    fn empty_entities_are_degenerate() {
        assert!(matches!(
            parse_analysis("```json\n{\"entities\": [], \"triples\": []}\n```"),
            Err(GapError::Degenerate)
        ));
    }

    #[test]
    fn object_triples_and_angle_placeholder() {
        let a = parse_analysis(
            r#"{"entities": ["Nipper"], "triples": [{"subject": "⟨X⟩", "predicate": "owner", "object": "Nipper"}]}"#,
        )
        .unwrap();
        assert_eq!(a.triples[0].subject, PLACEHOLDER);
        assert!(a.triples[0].has_placeholder());
    }

    #[test]
    fn coverage_arithmetic() {
        assert_eq!(entity_coverage(&EvidencePool::new(), "Move"), 0.0);
        let p = pool(&["Move is a film.", "B.", "C.", "D."]);
        assert_eq!(entity_coverage(&p, "Move"), 0.25);
        let p = pool(&["Move one.", "Move two."]);
        assert_eq!(entity_coverage(&p, "Move"), 1.0);
    }

    #[test]
    fn strict_threshold() {
        let analysis = QuestionAnalysis {
            entities: vec!["Alpha".into(), "Beta".into()],
            triples: vec![],
        };
        // Alpha: 1/20 = 0.05, Beta: 2/20 = 0.10
        let mut texts = vec!["Alpha here.".to_string(), "Beta here.".into(), "Beta again.".into()];
        texts.extend((0..17).map(|i| format!("Filler sentence {i}.")));
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let p = pool(&refs);
        assert_eq!(entity_coverage(&p, "Beta"), 0.1);
        assert_eq!(update_gaps(&analysis, &p, 0.1), ["Alpha"]);
    }

    #[test]
    fn covered_entities_leave_no_gaps() {
        let analysis = QuestionAnalysis {
            entities: vec!["Alpha".into()],
            triples: vec![],
        };
        assert!(update_gaps(&analysis, &pool(&["Alpha."]), 0.1).is_empty());
    }

    #[test]
    #[should_panic]
    fn rejects_theta_out_of_range() {
        let analysis = QuestionAnalysis {
            entities: vec!["Alpha".into()],
            triples: vec![],
        };
        update_gaps(&analysis, &EvidencePool::new(), 1.0);
    }

    #[test]
    fn least_covered_prefers_first() {
        let r = CoverageReport {
            per_entity: vec![
                EntityCoverage { entity: "a".into(), coverage: 0.5 },
                EntityCoverage { entity: "b".into(), coverage: 0.2 },
                EntityCoverage { entity: "c".into(), coverage: 0.2 },
            ],
            threshold: 0.1,
        };
        assert_eq!(r.least_covered(), Some("b"));
    }

    fn resolver(response: &str) -> RuleClient {
        RuleClient::new(vec![Rule::new(TemplateName::ResolvePlaceholders, &[], response)])
    }

    fn case1_triples() -> Vec<RelationTriple> {
        vec![
            RelationTriple::new("Polish-Russian War", "director", "<X>"),
            RelationTriple::new("<X>", "mother", "end"),
        ]
    }

    #[test]
    fn resolves_director_placeholder() {
        let p = pool(&["The director of the film \"Polish-Russian War\" is Xawery Żuławski."]);
        let llm = resolver("```json\n{\"resolutions\": [\"Xawery Żuławski\"]}\n```");
        let z = resolve_placeholders(&case1_triples(), &p, &llm, &TemplateSet::default(), &[
            "Polish-Russian War".into(),
        ])
        .unwrap();
        assert_eq!(z, ["Xawery Żuławski"]);
    }

    #[test]
    fn empty_pool_skips_model() {
        let z = resolve_placeholders(&case1_triples(), &EvidencePool::new(), &RuleClient::default(), &TemplateSet::default(), &[])
            .unwrap();
        assert!(z.is_empty());
    }

    #[test]
    fn placeholder_answers_are_discarded() {
        let p = pool(&["Some evidence."]);
        for out in ["{\"resolutions\": [\"<X>\"]}", "{\"resolutions\": [\"⟨X⟩\", \"\"]}", "[]"] {
            let z = resolve_placeholders(&case1_triples(), &p, &resolver(out), &TemplateSet::default(), &[]).unwrap();
            assert!(z.is_empty(), "{out}");
        }
    }

    #[test]
    fn known_values_are_dropped() {
        let p = pool(&["Some evidence."]);
        let llm = resolver("{\"resolutions\": [\"polish-russian war\", \"Berliner\", \"berliner\"]}");
        let z = resolve_placeholders(&case1_triples(), &p, &llm, &TemplateSet::default(), &[
            "Polish-Russian War".into(),
        ])
        .unwrap();
        assert_eq!(z, ["Berliner"]);
    }

    #[test]
    fn query_from_resolutions() {
        let g = GapList::new(vec![], vec!["Xawery Żuławski".into()]);
        assert_eq!(synthesize_query(&g), "Xawery Żuławski");
        let g = GapList::new(vec![], vec!["Berliner".into()]);
        assert_eq!(synthesize_query(&g), "Berliner");
        let g = GapList::new(vec!["Move".into(), "Méditerranée".into()], vec![]);
        assert_eq!(synthesize_query(&g), "Move Méditerranée");
    }

    #[test]
    fn query_order_and_truncation() {
        let g = GapList::new(vec!["Gap".into()], vec!["Res".into()]);
        assert_eq!(synthesize_query(&g), "Res Gap");
        let long: Vec<String> = (0..20).map(|i| format!("w{i}")).collect();
        let g = GapList::new(long, vec![]);
        assert_eq!(synthesize_query(&g).split(' ').count(), MAX_QUERY_ITEMS);
    }

    #[test]
    fn gap_list_dedups_across_lists() {
        let g = GapList::new(vec!["Move".into()], vec!["move".into(), "Other".into()]);
        assert_eq!(g.resolutions, ["Other"]);
    }
}
