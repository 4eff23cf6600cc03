//! Ready-made scenarios for the mock backends.
//!
//! All three use the same prompt and a small 16x32x48 video. Videos are
//! addressed by the labels the mock text-to-video role assigns: `s0` is the
//! initial video, `s0.s2` candidate 2 refined from it, and so on.

use serde_json::{json, Value};

use super::{Rule, Scenario};
use crate::backends::Endpoint;
use crate::config::{PipelineConfig, VideoDims};

pub const PROMPT: &str = "two people are making pizza while a bear is watching them";

/// `(id, text, object, target count)`; attribute questions have no target.
const QUESTIONS: [(&str, &str, &str, Option<u32>); 5] = [
    ("q1", "Are there two people?", "people", Some(2)),
    ("q2", "Is there one bear?", "bear", Some(1)),
    ("q3", "Is there one pizza?", "pizza", Some(1)),
    ("q4", "Are the people making pizza?", "people", None),
    ("q5", "Is the bear watching the people?", "bear", None),
];

#[derive(Debug, Clone)]
pub struct DemoScenario {
    pub name: &'static str,
    pub prompt: &'static str,
    pub scenario: Scenario,
    pub config: PipelineConfig,
}

pub fn plan_reply() -> Value {
    json!({
        "tuples": [
            {"id": "t1", "kind": "entity", "subject": "people"},
            {"id": "t2", "kind": "entity", "subject": "bear"},
            {"id": "t3", "kind": "entity", "subject": "pizza"},
            {"id": "t4", "kind": "relationship", "subject": "people",
             "attribute_or_relation": "make", "object2": "pizza"},
            {"id": "t5", "kind": "relationship", "subject": "bear",
             "attribute_or_relation": "watch", "object2": "people"}
        ],
        "questions": QUESTIONS.iter().map(|(id, text, object, target)| {
            let kind = if target.is_some() { "count" } else { "attribute" };
            let deps: Vec<&str> = match (*id, target) {
                (_, Some(_)) => vec![],
                ("q4", _) => vec!["q1"],
                _ => vec!["q2"],
            };
            json!({"id": id, "text": text, "kind": kind, "object": object,
                   "target_count": target, "depends_on": deps})
        }).collect::<Vec<_>>()
    })
}

/// Observed answers for one video: instance counts for q1..q3 and yes/no
/// for q4 and q5.
#[derive(Debug, Clone, Copy)]
pub struct Answers {
    pub counts: [u32; 3],
    pub attrs: [bool; 2],
}

impl Answers {
    pub const fn new(people: u32, bear: u32, pizza: u32, making: bool, watching: bool) -> Self {
        Self {
            counts: [people, bear, pizza],
            attrs: [making, watching],
        }
    }
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

/// VQA rules answering every question about `label`.
pub fn vqa_rules(scenario: &mut Scenario, label: &str, a: Answers) {
    for (i, (id, _, object, target)) in QUESTIONS.iter().enumerate() {
        let response = match target {
            Some(n_p) => {
                let n_v = a.counts[i];
                json!({"reasoning": format!("I count {n_v} {object}."),
                       "answer": yes_no(n_v == *n_p), "n_p": n_p, "n_v": n_v})
            }
            None => json!({"reasoning": "judged from the four frames",
                           "answer": yes_no(a.attrs[i - 3])}),
        };
        scenario.push(
            Endpoint::Vqa,
            Rule::reply(json!({"video": label, "question_id": id}), response),
        );
    }
}

fn base(name: &str) -> Scenario {
    let mut s = Scenario {
        name: name.to_owned(),
        ..Scenario::default()
    };
    s.push(
        Endpoint::Plan,
        Rule::reply(json!({"prompt": PROMPT}), plan_reply()),
    );
    s
}

fn config(k: usize, max_iterations: u32, allow_multi: bool) -> PipelineConfig {
    PipelineConfig {
        k,
        max_iterations,
        allow_multi_object: allow_multi,
        base_seed: 0,
        downsample: 8,
        latent_channels: 4,
        video: VideoDims {
            frames: 16,
            height: 32,
            width: 48,
            channels: 3,
        },
        ..PipelineConfig::default()
    }
}

/// Bear rectangles `[x0, y0, x1, y1]` on keyframes 0, 4, 8 and 12 of `s0`.
pub const GOLDEN_BEAR_RECTS: [(usize, [usize; 4]); 4] = [
    (0, [8, 8, 24, 24]),
    (4, [10, 8, 26, 24]),
    (8, [12, 9, 28, 25]),
    (12, [14, 10, 30, 26]),
];

pub const GOLDEN_REFINEMENT: &str = "two people making pizza";

/// One round, five candidates. The initial video gets the bear right and
/// one person short. Candidate 4 fails to generate; candidates 1 and 2 are
/// perfect and candidate 2 wins on BLIP-BLEU.
pub fn golden() -> DemoScenario {
    let mut s = base("golden");
    vqa_rules(&mut s, "s0", Answers::new(1, 1, 1, true, true));
    let cands = [
        (Answers::new(1, 1, 1, true, true), 0.30),
        (Answers::new(2, 1, 1, true, true), 0.35),
        (Answers::new(2, 1, 1, true, true), 0.41),
        (Answers::new(2, 1, 0, true, true), 0.50),
    ];
    for (i, (a, blip)) in cands.iter().enumerate() {
        let label = format!("s0.s{i}");
        vqa_rules(&mut s, &label, *a);
        s.push(
            Endpoint::Score,
            Rule::reply(json!({"video_label": label}), json!({"blip_bleu": blip})),
        );
    }
    s.push(
        Endpoint::Vqa,
        Rule::reply(
            json!({"task": "select_objects", "video": "s0"}),
            json!({"reasoning": "the bear is complete", "objects": ["bear"]}),
        ),
    );
    s.push(
        Endpoint::RefinePrompt,
        Rule::reply(
            json!({"mode": "refine"}),
            json!({"refinement_prompt": GOLDEN_REFINEMENT}),
        ),
    );
    s.push(
        Endpoint::Point,
        Rule::reply(
            json!({"video": "s0", "object": "bear"}),
            json!({"points": [{"x": 0.3, "y": 0.5}, {"x": 0.9, "y": 0.9}]}),
        ),
    );
    for (frame, rect) in GOLDEN_BEAR_RECTS {
        s.push(
            Endpoint::Segment,
            Rule::reply(
                json!({"video": "s0", "frame_index": frame, "point": {"x": 0.3, "y": 0.5}}),
                json!({"rect": rect}),
            ),
        );
    }
    s.push(
        Endpoint::Segment,
        Rule::reply(json!({}), json!({"rect": [0, 0, 48, 32]})),
    );
    s.generate.fail_seeds = vec![4];
    DemoScenario {
        name: "golden",
        prompt: PROMPT,
        scenario: s,
        config: config(5, 1, false),
    }
}

pub const TWO_ROUND_PEOPLE_RECTS: [[usize; 4]; 2] = [[2, 4, 10, 28], [36, 4, 46, 28]];
pub const TWO_ROUND_BEAR_RECT: [usize; 4] = [16, 12, 30, 30];

/// Three candidates per round with multi-object preservation. Round 1
/// keeps the bear and fixes the people; round 2 keeps both and fixes the
/// pizza, after which the winner is perfect and the run ends even though a
/// third round is allowed.
pub fn two_round() -> DemoScenario {
    let mut s = base("two_round");
    vqa_rules(&mut s, "s0", Answers::new(1, 1, 1, true, true));
    for (label, a, blip) in [
        ("s0.s0", Answers::new(1, 1, 1, true, true), 0.2),
        ("s0.s1", Answers::new(2, 1, 0, true, true), 0.3),
        ("s0.s2", Answers::new(1, 1, 0, false, true), 0.4),
        ("s0.s1.s0", Answers::new(2, 1, 0, true, true), 0.3),
        ("s0.s1.s1", Answers::new(2, 1, 1, true, true), 0.5),
        ("s0.s1.s2", Answers::new(2, 1, 1, true, true), 0.4),
    ] {
        vqa_rules(&mut s, label, a);
        s.push(
            Endpoint::Score,
            Rule::reply(json!({"video_label": label}), json!({"blip_bleu": blip})),
        );
    }
    s.push(
        Endpoint::Vqa,
        Rule::reply(
            json!({"task": "select_objects", "video": "s0"}),
            json!({"objects": ["bear"]}),
        ),
    );
    s.push(
        Endpoint::Vqa,
        Rule::reply(
            json!({"task": "select_objects", "video": "s0.s1"}),
            json!({"objects": ["people", "bear"]}),
        ),
    );
    s.push(
        Endpoint::RefinePrompt,
        Rule::reply(
            json!({"mode": "refine", "questions": ["Is there one pizza?"]}),
            json!({"refinement_prompt": "a pizza on the table"}),
        ),
    );
    s.push(
        Endpoint::RefinePrompt,
        Rule::reply(
            json!({"mode": "refine"}),
            json!({"refinement_prompt": GOLDEN_REFINEMENT}),
        ),
    );
    s.push(
        Endpoint::Point,
        Rule::reply(
            json!({"object": "bear"}),
            json!({"points": [{"x": 0.5, "y": 0.6}]}),
        ),
    );
    s.push(
        Endpoint::Point,
        Rule::reply(
            json!({"object": "people"}),
            json!({"points": [{"x": 0.1, "y": 0.5}, {"x": 0.85, "y": 0.5}]}),
        ),
    );
    let [p0, p1] = TWO_ROUND_PEOPLE_RECTS;
    for (point, rect) in [
        (json!({"x": 0.5, "y": 0.6}), TWO_ROUND_BEAR_RECT),
        (json!({"x": 0.1, "y": 0.5}), p0),
        (json!({"x": 0.85, "y": 0.5}), p1),
    ] {
        s.push(
            Endpoint::Segment,
            Rule::reply(json!({"point": point}), json!({"rect": rect})),
        );
    }
    DemoScenario {
        name: "two_round",
        prompt: PROMPT,
        scenario: s,
        config: config(3, 3, true),
    }
}

/// The initial video already answers every question correctly.
pub fn early_stop() -> DemoScenario {
    let mut s = base("early_stop");
    vqa_rules(&mut s, "s0", Answers::new(2, 1, 1, true, true));
    DemoScenario {
        name: "early_stop",
        prompt: PROMPT,
        scenario: s,
        config: config(5, 3, false),
    }
}

/// Replies for the fixed probes of the protocol conformance suite.
pub fn conformance() -> DemoScenario {
    let mut s = Scenario {
        name: "conformance".into(),
        ..Scenario::default()
    };
    let cube = crate::backends::conformance::PROBE_OBJECT;
    s.push(
        Endpoint::Plan,
        Rule::reply(
            json!({}),
            json!({
                "tuples": [{"id": "t1", "kind": "entity", "subject": cube}],
                "questions": [{"id": "q1", "text": "Is there one cube?", "kind": "count",
                               "object": cube, "target_count": 1, "depends_on": []}]
            }),
        ),
    );
    s.push(
        Endpoint::RefinePrompt,
        Rule::reply(json!({}), json!({"refinement_prompt": "a red cube"})),
    );
    for (task, reply) in [
        ("answer_count", json!({"answer": "yes", "n_v": 1})),
        ("answer_attribute", json!({"answer": "yes"})),
        ("select_objects", json!({"objects": [cube]})),
    ] {
        s.push(Endpoint::Vqa, Rule::reply(json!({"task": task}), reply));
    }
    s.push(
        Endpoint::Point,
        Rule::reply(json!({}), json!({"points": [{"x": 0.5, "y": 0.5}]})),
    );
    s.push(
        Endpoint::Segment,
        Rule::reply(json!({}), json!({"rect": [4, 4, 12, 12]})),
    );
    s.push(
        Endpoint::Score,
        Rule::reply(json!({}), json!({"blip_bleu": 0.5})),
    );
    DemoScenario {
        name: "conformance",
        prompt: crate::backends::conformance::PROBE_PROMPT,
        scenario: s,
        config: config(1, 1, false),
    }
}

pub fn by_name(name: &str) -> Option<DemoScenario> {
    match name {
        "golden" => Some(golden()),
        "two_round" => Some(two_round()),
        "early_stop" => Some(early_stop()),
        "conformance" => Some(conformance()),
        _ => None,
    }
}

pub const NAMES: [&str; 4] = ["golden", "two_round", "early_stop", "conformance"];
