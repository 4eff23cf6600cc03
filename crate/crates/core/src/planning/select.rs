use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{EvaluationReport, PlanningError, QuestionSet};
use crate::backends::protocol::{AnswerEvidence, ObjectEvidence, VqaRequest};
use crate::backends::{frame_grid, Backends};
use crate::templates::{TemplateKind, TemplateSet};
use crate::tensor::VideoTensor;

/// Nouns the fallback never preserves.
pub const NON_OBJECT_NOUNS: &[&str] = &[
    "background",
    "floor",
    "field",
    "grass",
    "ground",
    "horizon",
    "landscape",
    "scene",
    "scenery",
    "sky",
    "wall",
    "water",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyObjectSelection {
    pub objects: Vec<String>,
    pub used_fallback: bool,
    #[serde(default)]
    pub backend_error: Option<String>,
}

impl KeyObjectSelection {
    pub fn none() -> Self {
        Self {
            objects: Vec::new(),
            used_fallback: false,
            backend_error: None,
        }
    }
}

/// Objects with at least one observed instance can be preserved.
fn preservable(qs: &QuestionSet, report: &EvaluationReport, object: &str) -> bool {
    report
        .observed_count(qs, object)
        .is_some_and(|(n_p, n_v)| n_p >= 1 && n_v >= 1)
}

fn evidence(qs: &QuestionSet, report: &EvaluationReport) -> Vec<ObjectEvidence> {
    qs.entities()
        .into_iter()
        .map(|object| {
            let score = report.per_object_scores.get(object);
            let answers = qs
                .questions
                .iter()
                .filter(|q| q.object == object)
                .filter_map(|q| {
                    report.answer(&q.id).map(|a| AnswerEvidence {
                        question: q.text.clone(),
                        score: a.binary,
                    })
                })
                .collect();
            ObjectEvidence {
                object: object.to_owned(),
                num_correct: score.map_or(0, |s| s.num_correct),
                num_total: score.map_or(0, |s| s.num_total),
                answers,
            }
        })
        .collect()
}

fn render_evidence(items: &[ObjectEvidence]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&format!(
            "{} ({}/{}):\n",
            item.object, item.num_correct, item.num_total
        ));
        for a in &item.answers {
            out.push_str(&format!("  [{}] {}\n", a.score, a.question));
        }
    }
    out
}

/// Deterministic selection used when the language model cannot be consulted.
pub fn fallback_selection(
    qs: &QuestionSet,
    report: &EvaluationReport,
    allow_multi: bool,
) -> Vec<String> {
    let mut ranked: Vec<(&str, u32, u32)> = report
        .per_object_scores
        .iter()
        .filter(|(name, s)| {
            s.num_correct >= 1
                && preservable(qs, report, name)
                && !NON_OBJECT_NOUNS.contains(&name.to_lowercase().as_str())
        })
        .map(|(name, s)| (name.as_str(), s.num_correct, s.num_total))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(b.2.cmp(&a.2)).then(a.0.cmp(b.0)));
    let keep = if allow_multi {
        ranked.len()
    } else {
        ranked.len().min(1)
    };
    ranked
        .into_iter()
        .take(keep)
        .map(|(n, _, _)| n.to_owned())
        .collect()
}

/// Chooses which correctly generated objects to keep. A video that scored
/// zero keeps nothing.
pub fn select_key_objects(
    video: &VideoTensor,
    qs: &QuestionSet,
    report: &EvaluationReport,
    backends: &Backends,
    templates: &TemplateSet,
    allow_multi: bool,
) -> Result<KeyObjectSelection, PlanningError> {
    if report.dsg_score.is_zero() {
        return Ok(KeyObjectSelection::none());
    }
    let objects = evidence(qs, report);
    let multi_rule = if allow_multi {
        "You may pick several objects."
    } else {
        "Pick exactly one object."
    };
    let outcome = backends
        .encode(&frame_grid(video).to_container())
        .and_then(|image| {
            backends.select_objects(&VqaRequest::SelectObjects {
                instruction: templates.render(
                    TemplateKind::KeyObjects,
                    &[
                        ("evidence", &render_evidence(&objects)),
                        ("multi_rule", multi_rule),
                    ],
                ),
                objects,
                allow_multi,
                image,
            })
        });

    let error = match outcome {
        Ok(reply) => {
            let known: BTreeSet<&str> = qs.entities().into_iter().collect();
            let mut picked: Vec<String> = Vec::new();
            for name in reply.value.objects {
                if known.contains(name.as_str())
                    && preservable(qs, report, &name)
                    && !picked.contains(&name)
                {
                    picked.push(name);
                }
            }
            if !allow_multi {
                picked.truncate(1);
            }
            if !picked.is_empty() {
                return Ok(KeyObjectSelection {
                    objects: picked,
                    used_fallback: false,
                    backend_error: None,
                });
            }
            "reply named no preservable object".to_owned()
        }
        Err(e) => e.to_string(),
    };
    tracing::warn!(%error, "key-object selection falls back to scores");
    Ok(KeyObjectSelection {
        objects: fallback_selection(qs, report, allow_multi),
        used_fallback: true,
        backend_error: Some(error),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planning::{AnswerRecord, Question, SemanticTuple};

    fn record(id: &str, binary: u8, n: Option<(u32, u32)>) -> AnswerRecord {
        AnswerRecord {
            question_id: id.into(),
            binary,
            n_p: n.map(|x| x.0),
            n_v: n.map(|x| x.1),
            valid: true,
            parse_failed: false,
            raw_backend_reply: String::new(),
        }
    }

    fn scene() -> QuestionSet {
        QuestionSet {
            prompt: "two dogs and a cat under the sky".into(),
            tuples: vec![
                SemanticTuple::entity("t1", "dog"),
                SemanticTuple::entity("t2", "cat"),
                SemanticTuple::entity("t3", "sky"),
            ],
            questions: vec![
                Question::count("q1", "Are there two dogs?", "dog", 2),
                Question::count("q2", "Is there one cat?", "cat", 1),
                Question::count("q3", "Is there a sky?", "sky", 1),
                Question::attribute("q4", "Is the cat black?", "cat", &["q2"]),
                Question::attribute("q5", "Is the sky blue?", "sky", &["q3"]),
            ],
        }
    }

    #[test]
    fn fallback_ranks_and_skips_background() {
        let qs = scene();
        let report = EvaluationReport::from_answers(
            &qs,
            vec![
                record("q1", 0, Some((2, 1))),
                record("q2", 1, Some((1, 1))),
                record("q3", 1, Some((1, 1))),
                record("q4", 1, None),
                record("q5", 1, None),
            ],
        );
        assert_eq!(
            fallback_selection(&qs, &report, false),
            vec!["cat".to_string()]
        );
        assert_eq!(
            fallback_selection(&qs, &report, true),
            vec!["cat".to_string()]
        );
    }

    #[test]
    fn fallback_needs_an_observed_instance() {
        let qs = scene();
        let report = EvaluationReport::from_answers(
            &qs,
            vec![
                record("q1", 0, Some((2, 0))),
                record("q2", 0, Some((1, 0))),
                record("q3", 1, Some((1, 1))),
                record("q4", 0, None),
                record("q5", 1, None),
            ],
        );
        assert!(fallback_selection(&qs, &report, true).is_empty());
    }
}
