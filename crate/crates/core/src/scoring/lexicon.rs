//! Offline, bit-reproducible stand-in for the remote classifiers.

use async_trait::async_trait;
use regex::{Regex, RegexBuilder};
use serde::Deserialize;

use super::prompt::{render_answers, FactorPrompt};
use super::{BackendCapabilities, BackendError, ScoringBackend};
use crate::model::{AapaScore, Factor};

const BUNDLED: &str = include_str!("../../data/lexicon.toml");

#[derive(Debug, Clone, Deserialize)]
pub struct LexiconTables {
    pub political: PoliticalTable,
    #[serde(rename = "factor")]
    pub factors: Vec<FactorTable>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct PoliticalTable {
    pub patterns: Vec<String>,
    pub topic_sentences: Vec<String>,
    pub neutral_sentences: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct FactorTable {
    pub id: String,
    pub phrases: Vec<String>,
}

impl LexiconTables {
    pub fn bundled() -> &'static LexiconTables {
        static TABLES: std::sync::LazyLock<LexiconTables> = std::sync::LazyLock::new(|| {
            toml::from_str(BUNDLED).expect("bundled lexicon parses")
        });
        &TABLES
    }

    pub fn phrases(&self, factor: Factor) -> &[String] {
        self.factors
            .iter()
            .find(|t| t.id == factor.label())
            .map(|t| t.phrases.as_slice())
            .unwrap_or(&[])
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LexiconError {
    #[error("lexicon toml: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("lexicon regex: {0}")]
    Regex(#[from] regex::Error),
    #[error("lexicon has no table for factor {0}")]
    MissingFactor(&'static str),
}

/// Keyword/phrase classifier. Political when any political pattern or any
/// factor phrase matches; factors are reported only for political texts.
#[derive(Debug, Clone)]
pub struct LexiconOracle {
    political: Regex,
    factors: [Regex; 8],
}

fn build(alternatives: &[String], literal: bool) -> Result<Regex, regex::Error> {
    let body: Vec<String> = alternatives
        .iter()
        .map(|a| if literal { regex::escape(a) } else { a.clone() })
        .collect();
    RegexBuilder::new(&format!(r"\b(?:{})\b", body.join("|")))
        .case_insensitive(true)
        .build()
}

impl LexiconOracle {
    pub fn from_tables(tables: &LexiconTables) -> Result<Self, LexiconError> {
        let political = build(&tables.political.patterns, false)?;
        let mut factors = Vec::with_capacity(8);
        for f in Factor::ALL {
            let phrases = tables.phrases(f);
            if phrases.is_empty() {
                return Err(LexiconError::MissingFactor(f.label()));
            }
            factors.push(build(phrases, true)?);
        }
        let factors: [Regex; 8] = factors.try_into().expect("eight factors");
        Ok(LexiconOracle { political, factors })
    }

    pub fn from_toml(src: &str) -> Result<Self, LexiconError> {
        let tables: LexiconTables = toml::from_str(src)?;
        Self::from_tables(&tables)
    }

    pub fn bundled() -> Self {
        Self::from_tables(LexiconTables::bundled()).expect("bundled lexicon is valid")
    }

    pub fn is_political(&self, text: &str) -> bool {
        self.political.is_match(text) || self.factors.iter().any(|r| r.is_match(text))
    }

    pub fn has_factor(&self, text: &str, factor: Factor) -> bool {
        self.is_political(text) && self.factors[factor.index()].is_match(text)
    }

    /// Full score computed locally, without the prompt round trip.
    pub fn score(&self, text: &str) -> AapaScore {
        if !self.is_political(text) {
            return AapaScore::non_political();
        }
        let mut flags = [false; 8];
        for (flag, re) in flags.iter_mut().zip(&self.factors) {
            *flag = re.is_match(text);
        }
        AapaScore::political(flags)
    }
}

#[async_trait]
impl ScoringBackend for LexiconOracle {
    fn capabilities(&self) -> BackendCapabilities {
        BackendCapabilities { max_concurrent_requests: usize::MAX, expected_latency_ms: 0 }
    }

    async fn classify_political(&self, text: &str) -> Result<bool, BackendError> {
        Ok(self.is_political(text))
    }

    async fn complete_factor(&self, prompt: &FactorPrompt) -> Result<String, BackendError> {
        let answers: Vec<(String, bool)> = prompt
            .messages()
            .iter()
            .map(|(id, text)| (id.clone(), self.has_factor(text, prompt.factor)))
            .collect();
        Ok(render_answers(&answers))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_examples() {
        let o = LexiconOracle::bundled();
        assert!(o.is_political("The senator's new voting bill is a disgrace"));
        assert!(!o.is_political("My cat sleeps 16 hours a day"));
        assert!(!o.is_political(""));
    }

    #[test]
    fn factors_need_political_context_only_through_phrases() {
        let o = LexiconOracle::bundled();
        let s = o.score("Never compromise. I despise them.");
        assert!(s.is_political);
        assert!(s.has(Factor::PartisanAnimosity));
        assert!(s.has(Factor::OppositionToBipartisanship));
        assert_eq!(s.count, 2);
    }

    #[test]
    fn neutral_sentences_are_clean() {
        let t = LexiconTables::bundled();
        let o = LexiconOracle::bundled();
        for s in &t.political.neutral_sentences {
            assert!(!o.is_political(s), "neutral sentence matched: {s}");
        }
        for s in &t.political.topic_sentences {
            let score = o.score(s);
            assert!(score.is_political && score.count == 0, "topic sentence: {s}");
        }
    }

    #[test]
    fn every_phrase_hits_only_its_factor() {
        let t = LexiconTables::bundled();
        let o = LexiconOracle::bundled();
        for f in Factor::ALL {
            for p in t.phrases(f) {
                let s = o.score(p);
                let expected = AapaScore::political({
                    let mut a = [false; 8];
                    a[f.index()] = true;
                    a
                });
                assert_eq!(s, expected, "phrase `{p}` for {f}");
            }
        }
    }

    #[test]
    fn missing_factor_table_is_rejected() {
        let src = "[political]\npatterns=[\"x\"]\ntopic_sentences=[]\nneutral_sentences=[]\n";
        assert!(matches!(
            LexiconOracle::from_toml(&format!("factor = []\n{src}")),
            Err(LexiconError::MissingFactor("v1"))
        ));
    }
}
