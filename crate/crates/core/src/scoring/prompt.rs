//! Text protocol spoken with the factor classifier: one prompt per
//! (factor, chunk of at most ten messages), answered with a JSON array of
//! YES/NO verdicts.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::model::Factor;

pub const MAX_CHUNK: usize = 10;

/// Question and definition shown to the classifier for each factor.
pub fn factor_question(factor: Factor) -> &'static str {
    match factor {
        Factor::PartisanAnimosity => "Do the following messages express partisan animosity?",
        Factor::UndemocraticPractices => {
            "Do the following messages express support for undemocratic practices?"
        }
        Factor::PartisanViolence => {
            "Do the following messages express support for partisan violence?"
        }
        Factor::UndemocraticCandidates => {
            "Do the following messages express support for undemocratic candidates?"
        }
        Factor::OppositionToBipartisanship => {
            "Do the following messages express opposition to bipartisanship?"
        }
        Factor::SocialDistrust => "Do the following messages express social distrust?",
        Factor::SocialDistance => "Do the following messages express social distance?",
        Factor::BiasedEvaluation => {
            "Do the following messages express a biased evaluation of politicized facts?"
        }
    }
}

pub fn factor_definition(factor: Factor) -> &'static str {
    match factor {
        Factor::PartisanAnimosity => {
            r#"Partisan animosity is defined as "dislike for opposing partisans"."#
        }
        Factor::UndemocraticPractices => concat!(
            r#"Support for undemocratic practices is defined as "willingness to forgo democratic principles for partisan gain". "#,
            "Undemocratic practices are undemocratic tendencies or actions such as reducing polling stations in areas that support their opponents, ",
            "attacking the independence of the judiciary, undermining the free press, challenging the legitimacy of election results, or encouraging political violence."
        ),
        Factor::PartisanViolence => concat!(
            r#"Support for partisan violence is defined as a "willingness to use violent tactics against outpartisans". "#,
            "Examples of partisan violence include sending threatening and intimidating messages to the opponent party, harassing the opponent party on the Internet, ",
            "using violence in advancing their political goals or winning more races in the next election."
        ),
        Factor::UndemocraticCandidates => concat!(
            r#"Support for undemocratic candidates is defined as "willingness to ignore democratic practices to elect inparty candidates." "#,
            "Undemocratic candidates often support undemocratic practices such as reducing polling stations in areas that support their opponents, ",
            "attacking the independence of the judiciary, undermining the free press, challenging the legitimacy of election results, or encouraging political violence."
        ),
        Factor::OppositionToBipartisanship => {
            r#"Opposition to bipartisanship is defined as "resistance to cross-partisan collaboration"."#
        }
        Factor::SocialDistrust => r#"Social distrust is defined as "distrust of people in general"."#,
        Factor::SocialDistance => concat!(
            r#"Social distance is defined as "resistance to interpersonal contact with outpartisans". "#,
            "Messages that increase social distance may contain terms that increase distrust, distance, insecurity, hate, prejudice, or discrimination."
        ),
        Factor::BiasedEvaluation => concat!(
            r#"Biased evaluation of politicized facts is defined as "skepticism of facts that favor the worldview of the other party". "#,
            "Messages supporting a biased evaluation of politicized facts may partially present political facts or discuss a controversial issue with a certain political stance."
        ),
    }
}

/// Pew-style instruction used for the political pre-filter.
pub const POLITICAL_PROMPT: &str = "Political content on Twitter is varied and can be about officials and \n\
activists, social issues, or news and current events. \n\
Looking at the following tweet, would you categorize it as POLITICAL \n\
or NOT POLITICAL content? \n\
\n\
Answer 1 if it is POLITICAL, 0 otherwise.";

pub fn build_political_prompt(text: &str) -> String {
    format!("{POLITICAL_PROMPT}\n\n{text}")
}

/// Political verdicts are `1`/`0`; anything else is treated as not political.
pub fn parse_political_answer(raw: &str) -> bool {
    let t = raw.trim();
    t.starts_with('1') || t.eq_ignore_ascii_case("political")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactorPrompt {
    pub factor: Factor,
    messages: Vec<(String, String)>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("a factor prompt carries 1..=10 messages, got {0}")]
pub struct ChunkSizeError(pub usize);

impl FactorPrompt {
    pub fn new(factor: Factor, messages: Vec<(String, String)>) -> Result<Self, ChunkSizeError> {
        if messages.is_empty() || messages.len() > MAX_CHUNK {
            return Err(ChunkSizeError(messages.len()));
        }
        Ok(FactorPrompt { factor, messages })
    }

    pub fn messages(&self) -> &[(String, String)] {
        &self.messages
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.messages.iter().map(|(id, _)| id.as_str())
    }

    pub fn render(&self) -> String {
        build_factor_prompt(self.factor, &self.messages)
    }
}

#[derive(Serialize)]
struct InputLine<'a> {
    id: &'a str,
    message: &'a str,
}

pub fn build_factor_prompt(factor: Factor, chunk: &[(String, String)]) -> String {
    let mut out = String::with_capacity(1024);
    out.push_str(factor_question(factor));
    out.push_str(" \n");
    out.push_str(factor_definition(factor));
    out.push_str("\n\nFORMAT:\n");
    out.push_str("The input messages are given as JSON lines in the format \n");
    out.push_str("{\"id\": <message_id>, \"message\": <message>}.\n");
    out.push_str("The output must be a JSON array of objects in the format \n");
    out.push_str("[{\"id\": <message_id>, \"answer\": <YES or NO>}, ... ]. \n");
    out.push_str("\nINPUT MESSAGES:\n");
    for (id, message) in chunk {
        let line = serde_json::to_string(&InputLine { id, message })
            .expect("string fields always serialize");
        out.push_str(&line);
        out.push('\n');
    }
    out
}

/// Recover `(id, message)` pairs from a rendered prompt.
pub fn extract_messages(prompt: &str) -> Vec<(String, String)> {
    let Some((_, body)) = prompt.split_once("INPUT MESSAGES:\n") else {
        return Vec::new();
    };
    body.lines()
        .filter_map(|l| serde_json::from_str::<Value>(l).ok())
        .filter_map(|v| {
            let id = json_id(v.get("id")?)?;
            let msg = v.get("message")?.as_str()?.to_string();
            Some((id, msg))
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactorAnswer {
    pub id: String,
    pub answer: String,
}

pub fn render_answers(answers: &[(String, bool)]) -> String {
    let arr: Vec<FactorAnswer> = answers
        .iter()
        .map(|(id, yes)| FactorAnswer {
            id: id.clone(),
            answer: if *yes { "YES" } else { "NO" }.to_string(),
        })
        .collect();
    serde_json::to_string(&arr).expect("answers always serialize")
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedAnswers {
    pub answers: BTreeMap<String, bool>,
    /// Expected ids that were missing, malformed, or not YES/NO.
    pub degraded: Vec<String>,
}

impl ParsedAnswers {
    pub fn is_degraded(&self) -> bool {
        !self.degraded.is_empty()
    }
}

fn json_id(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Parses a `[{"id":..,"answer":"YES"|"NO"}]` response. Ids that cannot be
/// recovered are mapped to `false` and reported in `degraded`.
pub fn parse_factor_response<'a, I>(raw: &str, expected_ids: I) -> ParsedAnswers
where
    I: IntoIterator<Item = &'a str>,
{
    let expected: BTreeSet<&str> = expected_ids.into_iter().collect();
    let mut found: BTreeMap<String, bool> = BTreeMap::new();

    // Models sometimes wrap the array in prose or code fences.
    let slice = match (raw.find('['), raw.rfind(']')) {
        (Some(a), Some(b)) if a < b => &raw[a..=b],
        _ => "",
    };
    if let Ok(Value::Array(items)) = serde_json::from_str::<Value>(slice) {
        for item in items {
            let Some(id) = item.get("id").and_then(json_id) else { continue };
            if !expected.contains(id.as_str()) {
                continue;
            }
            let verdict = item.get("answer").and_then(Value::as_str).map(|a| a.trim().to_ascii_uppercase());
            match verdict.as_deref() {
                Some("YES") => {
                    found.insert(id, true);
                }
                Some("NO") => {
                    found.insert(id, false);
                }
                _ => {}
            }
        }
    }

    let mut parsed = ParsedAnswers::default();
    for id in expected {
        match found.get(id) {
            Some(v) => {
                parsed.answers.insert(id.to_string(), *v);
            }
            None => {
                parsed.answers.insert(id.to_string(), false);
                parsed.degraded.push(id.to_string());
            }
        }
    }
    if parsed.is_degraded() {
        tracing::warn!(missing = parsed.degraded.len(), "degraded factor response parse");
    }
    parsed
}
