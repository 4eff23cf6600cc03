use std::collections::HashMap;

use super::{AnswerRecord, EvaluationReport, PlanningError, Question, QuestionKind, QuestionSet};
use crate::backends::protocol::{VqaRequest, YesNo};
use crate::backends::{frame_grid, BackendError, Backends, Reply, TensorRef};
use crate::templates::{TemplateKind, TemplateSet};
use crate::tensor::VideoTensor;

/// Scores a video against a question set. Questions run in dependency order;
/// a question whose prerequisite failed is recorded as invalid without a call.
pub fn evaluate_video(
    video: &VideoTensor,
    qs: &QuestionSet,
    backends: &Backends,
    templates: &TemplateSet,
) -> Result<EvaluationReport, PlanningError> {
    let order = qs.topological_order()?;
    let image = backends.encode(&frame_grid(video).to_container())?;
    let mut slots: Vec<Option<AnswerRecord>> = vec![None; qs.questions.len()];
    let mut binary: HashMap<&str, u8> = HashMap::new();

    for i in order {
        let q = &qs.questions[i];
        let blocked = q
            .depends_on
            .iter()
            .any(|d| binary.get(d.as_str()).copied() == Some(0));
        let record = if blocked {
            AnswerRecord {
                question_id: q.id.clone(),
                binary: 0,
                n_p: q.target_count,
                n_v: None,
                valid: false,
                parse_failed: false,
                raw_backend_reply: String::new(),
            }
        } else {
            ask(q, &image, backends, templates)?
        };
        tracing::debug!(question = %q.id, binary = record.binary, valid = record.valid, "answered");
        binary.insert(q.id.as_str(), record.binary);
        slots[i] = Some(record);
    }

    let answers = slots
        .into_iter()
        .map(|a| a.expect("every question visited"))
        .collect();
    Ok(EvaluationReport::from_answers(qs, answers))
}

/// Calls the backend, retrying once when the reply is unusable.
fn with_reply_retry<T>(
    mut call: impl FnMut() -> Result<Reply<T>, BackendError>,
) -> Result<Result<Reply<T>, String>, BackendError> {
    match call() {
        Ok(r) => Ok(Ok(r)),
        Err(e) if e.is_protocol() => match call() {
            Ok(r) => Ok(Ok(r)),
            Err(e) if e.is_protocol() => Ok(Err(e.raw_body().unwrap_or_default().to_owned())),
            Err(e) => Err(e),
        },
        Err(e) => Err(e),
    }
}

fn ask(
    q: &Question,
    image: &TensorRef,
    backends: &Backends,
    templates: &TemplateSet,
) -> Result<AnswerRecord, PlanningError> {
    let unusable = |raw: String| AnswerRecord {
        question_id: q.id.clone(),
        binary: 0,
        n_p: q.target_count,
        n_v: None,
        valid: true,
        parse_failed: true,
        raw_backend_reply: raw,
    };
    match q.kind {
        QuestionKind::Count => {
            let n_p = q.target_count.ok_or_else(|| {
                PlanningError::MalformedPlan(format!("count question {} has no target", q.id))
            })?;
            let req = VqaRequest::AnswerCount {
                question_id: q.id.clone(),
                question: q.text.clone(),
                object: q.object.clone(),
                n_p,
                instruction: templates.render(
                    TemplateKind::VqaCount,
                    &[("question", &q.text), ("key_objects", &q.object)],
                ),
                image: image.clone(),
            };
            Ok(match with_reply_retry(|| backends.vqa_count(&req))? {
                Ok(reply) => {
                    let n_v = reply.value.n_v;
                    AnswerRecord {
                        question_id: q.id.clone(),
                        binary: u8::from(n_p == n_v),
                        n_p: Some(n_p),
                        n_v: Some(n_v),
                        valid: true,
                        parse_failed: false,
                        raw_backend_reply: reply.raw,
                    }
                }
                Err(raw) => unusable(raw),
            })
        }
        QuestionKind::Attribute => {
            let req = VqaRequest::AnswerAttribute {
                question_id: q.id.clone(),
                question: q.text.clone(),
                object: q.object.clone(),
                instruction: templates.render(
                    TemplateKind::VqaAttribute,
                    &[("question", &q.text), ("key_objects", &q.object)],
                ),
                image: image.clone(),
            };
            Ok(match with_reply_retry(|| backends.vqa_attribute(&req))? {
                Ok(reply) => AnswerRecord {
                    question_id: q.id.clone(),
                    binary: u8::from(reply.value.answer == YesNo::Yes),
                    n_p: None,
                    n_v: None,
                    valid: true,
                    parse_failed: false,
                    raw_backend_reply: reply.raw,
                },
                Err(raw) => unusable(raw),
            })
        }
    }
}
