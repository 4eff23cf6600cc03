//! Refinement planning: object-centric questions, video evaluation, key-object
//! selection and the localized refinement prompt.

mod evaluate;
mod questions;
mod refine;
mod select;

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::BackendError;

pub use evaluate::evaluate_video;
pub use questions::{generate_question_set, sanitize_plan};
pub use refine::{build_refinement_prompt, contains_word, mentions_any};
pub use select::{fallback_selection, select_key_objects, KeyObjectSelection, NON_OBJECT_NOUNS};

#[derive(Debug, Error)]
pub enum PlanningError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("planner reply violates the question-set rules: {0}")]
    MalformedPlan(String),
    #[error("planner reply contains no entity tuples")]
    EmptyPlan,
    #[error("question dependencies contain a cycle through {0:?}")]
    Cycle(Vec<String>),
    #[error("{0}")]
    Domain(String),
    #[error("every question concerns a preserved object but the score is below 1")]
    EmptyRemainder,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TupleKind {
    Entity,
    Attribute,
    Relationship,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticTuple {
    pub id: String,
    pub kind: TupleKind,
    pub subject: String,
    #[serde(default)]
    pub attribute_or_relation: Option<String>,
    #[serde(default)]
    pub object2: Option<String>,
}

impl SemanticTuple {
    pub fn entity(id: &str, subject: &str) -> Self {
        Self {
            id: id.into(),
            kind: TupleKind::Entity,
            subject: subject.into(),
            attribute_or_relation: None,
            object2: None,
        }
    }

    pub fn attribute(id: &str, subject: &str, attribute: &str) -> Self {
        Self {
            id: id.into(),
            kind: TupleKind::Attribute,
            subject: subject.into(),
            attribute_or_relation: Some(attribute.into()),
            object2: None,
        }
    }

    pub fn relationship(id: &str, subject: &str, relation: &str, object: &str) -> Self {
        Self {
            id: id.into(),
            kind: TupleKind::Relationship,
            subject: subject.into(),
            attribute_or_relation: Some(relation.into()),
            object2: Some(object.into()),
        }
    }

    /// Checks the arity rule for the tuple's kind.
    pub fn check(&self) -> Result<(), String> {
        let has = |o: &Option<String>| o.as_deref().is_some_and(|s| !s.trim().is_empty());
        let ok = match self.kind {
            TupleKind::Entity => self.attribute_or_relation.is_none() && self.object2.is_none(),
            TupleKind::Attribute => has(&self.attribute_or_relation) && self.object2.is_none(),
            TupleKind::Relationship => has(&self.attribute_or_relation) && has(&self.object2),
        };
        if self.subject.trim().is_empty() {
            return Err(format!("tuple {} has an empty subject", self.id));
        }
        if ok {
            Ok(())
        } else {
            Err(format!(
                "tuple {} has the wrong arity for {:?}",
                self.id, self.kind
            ))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionKind {
    Count,
    Attribute,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    pub kind: QuestionKind,
    /// Entity this question belongs to.
    pub object: String,
    /// Instance count named by the prompt; count questions only.
    #[serde(default)]
    pub target_count: Option<u32>,
    #[serde(default)]
    pub depends_on: Vec<String>,
}

impl Question {
    pub fn count(id: &str, text: &str, object: &str, target: u32) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            kind: QuestionKind::Count,
            object: object.into(),
            target_count: Some(target),
            depends_on: Vec::new(),
        }
    }

    pub fn attribute(id: &str, text: &str, object: &str, depends_on: &[&str]) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            kind: QuestionKind::Attribute,
            object: object.into(),
            target_count: None,
            depends_on: depends_on.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionSet {
    pub prompt: String,
    pub tuples: Vec<SemanticTuple>,
    pub questions: Vec<Question>,
}

impl QuestionSet {
    /// Entity names in tuple order.
    pub fn entities(&self) -> Vec<&str> {
        self.tuples
            .iter()
            .filter(|t| t.kind == TupleKind::Entity)
            .map(|t| t.subject.as_str())
            .collect()
    }

    pub fn question(&self, id: &str) -> Option<&Question> {
        self.questions.iter().find(|q| q.id == id)
    }

    pub fn count_question(&self, object: &str) -> Option<&Question> {
        self.questions
            .iter()
            .find(|q| q.kind == QuestionKind::Count && q.object == object)
    }

    /// Question indices in dependency order; ties keep list order.
    pub fn topological_order(&self) -> Result<Vec<usize>, PlanningError> {
        let index: HashMap<&str, usize> = self
            .questions
            .iter()
            .enumerate()
            .map(|(i, q)| (q.id.as_str(), i))
            .collect();
        let n = self.questions.len();
        let mut indegree = vec![0usize; n];
        let mut children = vec![Vec::new(); n];
        for (i, q) in self.questions.iter().enumerate() {
            for dep in &q.depends_on {
                let &j = index.get(dep.as_str()).ok_or_else(|| {
                    PlanningError::MalformedPlan(format!(
                        "question {} depends on unknown {dep}",
                        q.id
                    ))
                })?;
                indegree[i] += 1;
                children[j].push(i);
            }
        }
        let mut order = Vec::with_capacity(n);
        let mut ready: std::collections::BTreeSet<usize> =
            (0..n).filter(|&i| indegree[i] == 0).collect();
        while let Some(i) = ready.pop_first() {
            order.push(i);
            for &c in &children[i] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        if order.len() < n {
            let stuck = (0..n)
                .filter(|&i| indegree[i] > 0)
                .map(|i| self.questions[i].id.clone())
                .collect();
            return Err(PlanningError::Cycle(stuck));
        }
        Ok(order)
    }

    /// Checks every structural rule of a question set.
    pub fn validate(&self) -> Result<(), PlanningError> {
        let bad = |m: String| Err(PlanningError::MalformedPlan(m));
        let mut entity_seen = BTreeMap::new();
        for t in &self.tuples {
            t.check().map_err(PlanningError::MalformedPlan)?;
            if t.kind == TupleKind::Entity && entity_seen.insert(t.subject.as_str(), ()).is_some() {
                return bad(format!("entity {} listed twice", t.subject));
            }
        }
        if entity_seen.is_empty() {
            return Err(PlanningError::EmptyPlan);
        }
        let mut ids = BTreeMap::new();
        let mut count_per_object: BTreeMap<&str, usize> = BTreeMap::new();
        for q in &self.questions {
            if ids.insert(q.id.as_str(), ()).is_some() {
                return bad(format!("question id {} repeated", q.id));
            }
            if !entity_seen.contains_key(q.object.as_str()) {
                return bad(format!("question {} names non-entity {}", q.id, q.object));
            }
            match q.kind {
                QuestionKind::Count => {
                    if q.target_count.unwrap_or(0) == 0 {
                        return bad(format!("count question {} lacks a positive target", q.id));
                    }
                    *count_per_object.entry(q.object.as_str()).or_default() += 1;
                }
                QuestionKind::Attribute => {
                    if q.target_count.is_some() {
                        return bad(format!("attribute question {} carries a count", q.id));
                    }
                }
            }
        }
        for e in entity_seen.keys() {
            match count_per_object.get(e) {
                Some(1) => {}
                Some(n) => return bad(format!("entity {e} has {n} count questions")),
                None => return bad(format!("entity {e} has no count question")),
            }
        }
        self.topological_order()?;
        for q in self
            .questions
            .iter()
            .filter(|q| q.kind == QuestionKind::Attribute)
        {
            let root = self.count_question(&q.object).expect("checked above");
            if !self.reaches(q, &root.id) {
                return bad(format!("question {} does not depend on {}", q.id, root.id));
            }
        }
        Ok(())
    }

    /// Whether `q` depends on `target` directly or transitively.
    pub fn reaches(&self, q: &Question, target: &str) -> bool {
        let mut stack: Vec<&str> = q.depends_on.iter().map(String::as_str).collect();
        let mut seen = std::collections::HashSet::new();
        while let Some(id) = stack.pop() {
            if id == target {
                return true;
            }
            if seen.insert(id) {
                if let Some(dep) = self.question(id) {
                    stack.extend(dep.depends_on.iter().map(String::as_str));
                }
            }
        }
        false
    }
}

/// Outcome of one question. Count answers carry the prompt and observed
/// instance counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub question_id: String,
    pub binary: u8,
    pub n_p: Option<u32>,
    pub n_v: Option<u32>,
    /// False when a dependency scored 0 and the question was never asked.
    pub valid: bool,
    /// True when the backend reply stayed unusable after a retry.
    #[serde(default)]
    pub parse_failed: bool,
    pub raw_backend_reply: String,
}

/// Fraction of questions answered correctly, kept exact.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DsgScore {
    pub correct: u32,
    pub total: u32,
}

impl DsgScore {
    pub fn new(correct: u32, total: u32) -> Self {
        assert!(correct <= total, "score {correct}/{total}");
        Self { correct, total }
    }

    pub fn value(self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            f64::from(self.correct) / f64::from(self.total)
        }
    }

    pub fn is_zero(self) -> bool {
        self.correct == 0
    }

    pub fn is_perfect(self) -> bool {
        self.total > 0 && self.correct == self.total
    }

    fn normalized(self) -> (u64, u64) {
        if self.total == 0 {
            (0, 1)
        } else {
            (u64::from(self.correct), u64::from(self.total))
        }
    }
}

impl PartialEq for DsgScore {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for DsgScore {}

impl PartialOrd for DsgScore {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for DsgScore {
    fn cmp(&self, other: &Self) -> Ordering {
        let (a, b) = self.normalized();
        let (c, d) = other.normalized();
        (a * d).cmp(&(c * b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectScore {
    pub num_correct: u32,
    pub num_total: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub answers: Vec<AnswerRecord>,
    pub dsg_score: DsgScore,
    pub per_object_scores: BTreeMap<String, ObjectScore>,
}

impl EvaluationReport {
    pub fn answer(&self, question_id: &str) -> Option<&AnswerRecord> {
        self.answers.iter().find(|a| a.question_id == question_id)
    }

    /// Assembles a report, computing the aggregate and per-object scores.
    pub fn from_answers(qs: &QuestionSet, answers: Vec<AnswerRecord>) -> Self {
        let mut per_object: BTreeMap<String, ObjectScore> = BTreeMap::new();
        for e in qs.entities() {
            per_object.insert(
                e.to_owned(),
                ObjectScore {
                    num_correct: 0,
                    num_total: 0,
                },
            );
        }
        for a in &answers {
            if let Some(q) = qs.question(&a.question_id) {
                let s = per_object.entry(q.object.clone()).or_insert(ObjectScore {
                    num_correct: 0,
                    num_total: 0,
                });
                s.num_total += 1;
                s.num_correct += u32::from(a.binary);
            }
        }
        let correct = answers.iter().map(|a| u32::from(a.binary)).sum();
        let dsg_score = DsgScore::new(correct, answers.len() as u32);
        Self {
            answers,
            dsg_score,
            per_object_scores: per_object,
        }
    }

    /// Observed count for `object`, when its count question got a usable answer.
    pub fn observed_count(&self, qs: &QuestionSet, object: &str) -> Option<(u32, u32)> {
        let q = qs.count_question(object)?;
        let a = self.answer(&q.id)?;
        Some((q.target_count?, a.n_v?))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreservedObject {
    pub object: String,
    pub count: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinementPlan {
    pub preserved_objects: Vec<PreservedObject>,
    pub refinement_prompt: String,
    pub fallback_paraphrase_used: bool,
    pub original_prompt: String,
}

/// Number of instances of a correctly generated object to keep: everything
/// the video has, capped at what the prompt asks for.
pub fn preserve_count(n_p: u32, n_v: u32) -> Result<u32, PlanningError> {
    if n_p == 0 {
        return Err(PlanningError::Domain(
            "prompt count must be at least 1 for a preserved object".into(),
        ));
    }
    Ok(if n_p <= n_v { n_p } else { n_v })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn bear_set() -> QuestionSet {
        QuestionSet {
            prompt: "a brown bear".into(),
            tuples: vec![
                SemanticTuple::entity("t1", "bear"),
                SemanticTuple::attribute("t2", "bear", "brown"),
            ],
            questions: vec![
                Question::count("q1", "Is there one bear?", "bear", 1),
                Question::attribute("q2", "Is the bear brown?", "bear", &["q1"]),
            ],
        }
    }

    #[test]
    fn preserve_count_cases() {
        assert_eq!(preserve_count(2, 1).unwrap(), 1);
        assert_eq!(preserve_count(3, 3).unwrap(), 3);
        assert_eq!(preserve_count(1, 4).unwrap(), 1);
        assert!(matches!(
            preserve_count(0, 2),
            Err(PlanningError::Domain(_))
        ));
    }

    #[test]
    fn tuple_arity() {
        assert!(SemanticTuple::entity("a", "bear").check().is_ok());
        assert!(SemanticTuple::attribute("a", "bed", "blue").check().is_ok());
        assert!(SemanticTuple::relationship("a", "people", "make", "pizza")
            .check()
            .is_ok());
        let mut t = SemanticTuple::entity("a", "bear");
        t.object2 = Some("x".into());
        assert!(t.check().is_err());
        let mut t = SemanticTuple::relationship("a", "people", "make", "pizza");
        t.object2 = None;
        assert!(t.check().is_err());
    }

    #[test]
    fn valid_set_passes() {
        bear_set().validate().unwrap();
    }

    #[test]
    fn validate_catches_missing_count_and_cycles() {
        let mut qs = bear_set();
        qs.questions.remove(0);
        qs.questions[0].depends_on.clear();
        assert!(matches!(
            qs.validate(),
            Err(PlanningError::MalformedPlan(_))
        ));

        let mut qs = bear_set();
        qs.questions[0].depends_on.push("q2".into());
        assert!(matches!(qs.validate(), Err(PlanningError::Cycle(_))));
    }

    #[test]
    fn topological_order_respects_edges() {
        let mut qs = bear_set();
        qs.questions.swap(0, 1);
        assert_eq!(qs.topological_order().unwrap(), vec![1, 0]);
    }

    #[test]
    fn score_ordering_is_exact() {
        assert_eq!(DsgScore::new(1, 2), DsgScore::new(2, 4));
        assert!(DsgScore::new(2, 3) > DsgScore::new(3, 5));
        assert!(DsgScore::new(0, 0) < DsgScore::new(1, 5));
        assert!(DsgScore::new(5, 5).is_perfect());
    }
}
