use std::collections::{BTreeSet, HashSet};

use super::{PlanningError, Question, QuestionKind, QuestionSet, TupleKind};
use crate::backends::protocol::{PlanReply, PlanRequest};
use crate::backends::Backends;
use crate::templates::{TemplateKind, TemplateSet};

/// Asks the planner for tuples and questions and turns the reply into a
/// well-formed question set.
pub fn generate_question_set(
    prompt: &str,
    backends: &Backends,
    templates: &TemplateSet,
) -> Result<QuestionSet, PlanningError> {
    if prompt.trim().is_empty() {
        return Err(PlanningError::InvalidInput("prompt is empty".into()));
    }
    let req = PlanRequest {
        prompt: prompt.to_owned(),
        instruction: templates.render(TemplateKind::QuestionGeneration, &[("prompt", prompt)]),
    };
    let reply = backends.plan(&req)?;
    let qs = sanitize_plan(prompt, reply.value)?;
    tracing::info!(
        tuples = qs.tuples.len(),
        questions = qs.questions.len(),
        "question set ready"
    );
    Ok(qs)
}

/// Drops malformed or orphaned entries from a planner reply, then links every
/// attribute question to its subject's count question.
pub fn sanitize_plan(prompt: &str, reply: PlanReply) -> Result<QuestionSet, PlanningError> {
    let mut entities = BTreeSet::new();
    let mut tuples = Vec::new();
    let mut tuple_ids = HashSet::new();
    for t in reply.tuples.iter().filter(|t| t.kind == TupleKind::Entity) {
        if t.check().is_err() || !tuple_ids.insert(t.id.clone()) {
            tracing::warn!(id = %t.id, "dropping entity tuple");
            continue;
        }
        if entities.insert(t.subject.clone()) {
            tuples.push(t.clone());
        }
    }
    if entities.is_empty() {
        return Err(PlanningError::EmptyPlan);
    }
    for t in reply.tuples.iter().filter(|t| t.kind != TupleKind::Entity) {
        if t.check().is_err() || !entities.contains(&t.subject) || !tuple_ids.insert(t.id.clone()) {
            tracing::warn!(id = %t.id, "dropping tuple");
            continue;
        }
        tuples.push(t.clone());
    }

    let mut ids = HashSet::new();
    let mut counted = HashSet::new();
    let mut questions: Vec<Question> = Vec::new();
    for mut q in reply.questions {
        let usable = !q.id.trim().is_empty()
            && !q.text.trim().is_empty()
            && entities.contains(&q.object)
            && !ids.contains(&q.id);
        let usable = usable
            && match q.kind {
                QuestionKind::Count => {
                    q.target_count.unwrap_or(0) > 0 && !counted.contains(&q.object)
                }
                QuestionKind::Attribute => true,
            };
        if !usable {
            tracing::warn!(id = %q.id, "dropping question");
            continue;
        }
        if q.kind == QuestionKind::Count {
            counted.insert(q.object.clone());
        } else {
            q.target_count = None;
        }
        ids.insert(q.id.clone());
        questions.push(q);
    }

    for q in &mut questions {
        let mut seen = HashSet::new();
        q.depends_on
            .retain(|d| d != &q.id && ids.contains(d) && seen.insert(d.clone()));
    }

    if let Some(e) = entities.iter().find(|e| !counted.contains(*e)) {
        return Err(PlanningError::MalformedPlan(format!(
            "entity {e} has no count question"
        )));
    }

    let mut qs = QuestionSet {
        prompt: prompt.to_owned(),
        tuples,
        questions,
    };
    qs.topological_order()?;
    for i in 0..qs.questions.len() {
        let q = &qs.questions[i];
        if q.kind != QuestionKind::Attribute {
            continue;
        }
        let root = qs
            .count_question(&q.object)
            .expect("every entity counted")
            .id
            .clone();
        if !qs.reaches(q, &root) {
            qs.questions[i].depends_on.push(root);
        }
    }
    qs.validate()?;
    Ok(qs)
}
