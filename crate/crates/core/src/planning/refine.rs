use super::{
    preserve_count, EvaluationReport, KeyObjectSelection, PlanningError, PreservedObject, Question,
    QuestionSet, RefinementPlan,
};
use crate::backends::protocol::{RefineMode, RefinePromptRequest};
use crate::backends::Backends;
use crate::templates::{TemplateKind, TemplateSet};

/// Case-insensitive whole-word match that also accepts a plural `s`/`es`.
pub fn contains_word(text: &str, word: &str) -> bool {
    let text = text.to_lowercase();
    let word = word.trim().to_lowercase();
    if word.is_empty() {
        return false;
    }
    let boundary = |c: Option<char>| c.is_none_or(|c| !c.is_alphanumeric());
    let mut from = 0;
    while let Some(pos) = text[from..].find(&word) {
        let start = from + pos;
        let end = start + word.len();
        let before = text[..start].chars().next_back();
        let rest = &text[end..];
        let after_ok = boundary(rest.chars().next())
            || (rest.starts_with('s') && boundary(rest[1..].chars().next()))
            || (rest.starts_with("es") && boundary(rest[2..].chars().next()));
        if boundary(before) && after_ok {
            return true;
        }
        from = start + text[start..].chars().next().map_or(1, char::len_utf8);
    }
    false
}

pub fn mentions_any(text: &str, names: &[String]) -> bool {
    names.iter().any(|n| contains_word(text, n))
}

fn concerns(q: &Question, preserved: &[String]) -> bool {
    preserved.contains(&q.object) || mentions_any(&q.text, preserved)
}

fn join_questions<'a>(qs: impl Iterator<Item = &'a Question>) -> Vec<String> {
    qs.map(|q| q.text.clone()).collect()
}

/// Builds the preserved-object list and the prompt for the regenerated
/// region.
pub fn build_refinement_prompt(
    qs: &QuestionSet,
    report: &EvaluationReport,
    selection: &KeyObjectSelection,
    backends: &Backends,
    templates: &TemplateSet,
) -> Result<RefinementPlan, PlanningError> {
    if report.dsg_score.is_zero() {
        let questions = join_questions(qs.questions.iter());
        let req = RefinePromptRequest {
            mode: RefineMode::Paraphrase,
            prompt: qs.prompt.clone(),
            instruction: templates.render(
                TemplateKind::Paraphrase,
                &[
                    ("prompt", &qs.prompt),
                    ("questions", &questions.join(" | ")),
                ],
            ),
            questions,
            preserved: Vec::new(),
        };
        let reply = backends.refine_prompt(&req)?;
        return Ok(RefinementPlan {
            preserved_objects: Vec::new(),
            refinement_prompt: reply.value.refinement_prompt.trim().to_owned(),
            fallback_paraphrase_used: true,
            original_prompt: qs.prompt.clone(),
        });
    }

    let mut preserved = Vec::new();
    for object in &selection.objects {
        let (n_p, n_v) = report.observed_count(qs, object).ok_or_else(|| {
            PlanningError::InvalidInput(format!("no usable count answer for {object}"))
        })?;
        preserved.push(PreservedObject {
            object: object.clone(),
            count: preserve_count(n_p, n_v)?,
        });
    }

    let remainder: Vec<&Question> = qs
        .questions
        .iter()
        .filter(|q| !concerns(q, &selection.objects))
        .collect();
    if remainder.is_empty() {
        if report.dsg_score.is_perfect() {
            return Ok(RefinementPlan {
                preserved_objects: preserved,
                refinement_prompt: String::new(),
                fallback_paraphrase_used: false,
                original_prompt: qs.prompt.clone(),
            });
        }
        return Err(PlanningError::EmptyRemainder);
    }

    let questions = join_questions(remainder.into_iter());
    let kept = preserved
        .iter()
        .map(|p| format!("{} x{}", p.object, p.count))
        .collect::<Vec<_>>()
        .join(", ");
    let req = RefinePromptRequest {
        mode: RefineMode::Refine,
        prompt: qs.prompt.clone(),
        instruction: templates.render(
            TemplateKind::RefinePrompt,
            &[
                ("prompt", &qs.prompt),
                ("preserved", &kept),
                ("questions", &questions.join(" | ")),
            ],
        ),
        questions,
        preserved: preserved.clone(),
    };
    let reply = backends.refine_prompt(&req)?;
    let refinement_prompt = reply.value.refinement_prompt.trim().to_owned();
    if mentions_any(&refinement_prompt, &selection.objects) {
        tracing::warn!(%refinement_prompt, "refinement prompt names a preserved object");
    }
    Ok(RefinementPlan {
        preserved_objects: preserved,
        refinement_prompt,
        fallback_paraphrase_used: false,
        original_prompt: qs.prompt.clone(),
    })
}
