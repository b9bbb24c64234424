//! Sentence-level referring expressions from free-text radiology reports.
//!
//! Attributes are assigned by a longest-match lexicon chunker into four
//! categories: R7 (generic modifiers), R1 (entry-level finding name),
//! R5 (relative location) and R6 (relative object / anatomy). A referring
//! expression lists them in the fixed order R7, R1, R5, R6 and requires at
//! least one R1 head.

mod lexicon;
mod negation;
mod segment;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use lexicon::{Disease, Lexicon, LexiconFile, DEFAULT_LEXICON_JSON};
pub use negation::{disease_mentions, is_negated, DiseaseMention};
pub use segment::{segment_sentences, CharSpan, Sentence, Token};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Report {
    pub subject_id: String,
    pub study_id: String,
    pub text: String,
}

impl Report {
    pub fn new(subject_id: impl Into<String>, study_id: impl Into<String>, text: impl Into<String>) -> Result<Self> {
        let report = Report {
            subject_id: subject_id.into(),
            study_id: study_id.into(),
            text: text.into(),
        };
        report.validate()?;
        Ok(report)
    }

    pub fn validate(&self) -> Result<()> {
        if self.subject_id.is_empty() || self.study_id.is_empty() {
            return Err(Error::invalid("report ids must be non-empty"));
        }
        if self.text.trim().is_empty() {
            return Err(Error::invalid(format!("report {} has empty text", self.id())));
        }
        Ok(())
    }

    /// `subject_id/study_id`.
    pub fn id(&self) -> String {
        format!("{}/{}", self.subject_id, self.study_id)
    }

    pub fn sentences(&self) -> Vec<Sentence> {
        let id = self.id();
        let mut sentences = segment_sentences(&self.text);
        for s in &mut sentences {
            s.report_id.clone_from(&id);
        }
        sentences
    }
}

/// Attribute categories, declared in composition order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    R7,
    R1,
    R5,
    R6,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSpan {
    pub category: Category,
    pub token_range: (usize, usize),
    pub surface: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    SceneLabel,
    Referring,
    DiseaseEmphasis,
}

impl std::str::FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scene_label" => Ok(Level::SceneLabel),
            "referring" => Ok(Level::Referring),
            "disease_emphasis" => Ok(Level::DiseaseEmphasis),
            other => Err(Error::invalid(format!("unknown level {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferringExpression {
    pub report_id: String,
    pub sentence_index: usize,
    pub phrase: String,
    pub components: Vec<AttributeSpan>,
    pub polarity: Polarity,
    pub disease_tags: BTreeSet<Disease>,
    pub level: Level,
    /// Diseases mentioned both positively and negatively in the report
    /// (scene labels only; the positive mention wins).
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub conflicts: BTreeSet<Disease>,
}

/// Phrases available at the scene-label level.
pub const SCENE_PHRASES: [&str; 4] = ["pneumonia", "pneumothorax", "pneumonia and pneumothorax", "no pneumo"];

/// Longest-match, left-to-right lexicon chunking of a sentence.
pub fn classify_attributes(sentence: &Sentence, lexicon: &Lexicon) -> Vec<AttributeSpan> {
    let tokens = sentence.lowercase_tokens();
    let mut spans = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        match lexicon.attributes.longest_at(&tokens, i) {
            Some((len, category)) => {
                spans.push(AttributeSpan {
                    category,
                    token_range: (i, i + len),
                    surface: sentence.surface(i, i + len).to_owned(),
                });
                i += len;
            }
            None => i += 1,
        }
    }
    spans
}

fn diseases_in(mentions: &[DiseaseMention]) -> BTreeSet<Disease> {
    mentions.iter().map(|m| m.disease).collect()
}

/// Reorders `spans` into R7, R1, R5, R6 (stable within a category). Returns
/// `None` when the sentence has no R1 head.
pub fn compose_referring_expression(spans: &[AttributeSpan], sentence: &Sentence) -> Option<ReferringExpression> {
    compose_with(spans, sentence, None)
}

fn compose_with(spans: &[AttributeSpan], sentence: &Sentence, lexicon: Option<&Lexicon>) -> Option<ReferringExpression> {
    let head = spans.iter().find(|s| s.category == Category::R1)?;
    let mut components = spans.to_vec();
    components.sort_by_key(|s| (s.category, s.token_range.0));
    let phrase = components
        .iter()
        .map(|s| s.surface.as_str())
        .collect::<Vec<_>>()
        .join(" ");

    let (polarity, disease_tags) = match lexicon {
        Some(lex) => {
            let tokens = sentence.lowercase_tokens();
            let negated = is_negated(&tokens, head.token_range.0, lex);
            let polarity = if negated { Polarity::Negative } else { Polarity::Positive };
            (polarity, diseases_in(&disease_mentions(&tokens, lex)))
        }
        None => (Polarity::Positive, BTreeSet::new()),
    };

    Some(ReferringExpression {
        report_id: sentence.report_id.clone(),
        sentence_index: sentence.index,
        phrase,
        components,
        polarity,
        disease_tags,
        level: Level::Referring,
        conflicts: BTreeSet::new(),
    })
}

/// Referring expression of one sentence with polarity and disease tags.
pub fn referring_expression(sentence: &Sentence, lexicon: &Lexicon) -> Option<ReferringExpression> {
    compose_with(&classify_attributes(sentence, lexicon), sentence, Some(lexicon))
}

fn sentence_phrase(sentence: &Sentence) -> String {
    sentence
        .text
        .trim_end_matches(['.', '!', '?'])
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// One disease-emphasis expression per sentence mentioning a disease. The
/// phrase is the sentence excerpt itself; polarity is negative only when
/// every disease mention in it is negated.
pub fn extract_disease_mentions(report: &Report, lexicon: &Lexicon) -> Vec<ReferringExpression> {
    report
        .sentences()
        .iter()
        .filter_map(|sentence| {
            let tokens = sentence.lowercase_tokens();
            let mentions = disease_mentions(&tokens, lexicon);
            if mentions.is_empty() {
                return None;
            }
            let polarity = if mentions.iter().all(|m| m.negated) {
                Polarity::Negative
            } else {
                Polarity::Positive
            };
            let mut components = classify_attributes(sentence, lexicon);
            components.sort_by_key(|s| (s.category, s.token_range.0));
            Some(ReferringExpression {
                report_id: sentence.report_id.clone(),
                sentence_index: sentence.index,
                phrase: sentence_phrase(sentence),
                components,
                polarity,
                disease_tags: diseases_in(&mentions),
                level: Level::DiseaseEmphasis,
                conflicts: BTreeSet::new(),
            })
        })
        .collect()
}

/// Scene-label expression summarising the report's disease mentions.
pub fn scene_label(report: &Report, lexicon: &Lexicon) -> ReferringExpression {
    let mut positive = BTreeSet::new();
    let mut negative = BTreeSet::new();
    for sentence in report.sentences() {
        for m in disease_mentions(&sentence.lowercase_tokens(), lexicon) {
            if m.negated {
                negative.insert(m.disease);
            } else {
                positive.insert(m.disease);
            }
        }
    }
    let conflicts: BTreeSet<Disease> = positive.intersection(&negative).copied().collect();
    let phrase = match (positive.contains(&Disease::Pneumonia), positive.contains(&Disease::Pneumothorax)) {
        (true, true) => SCENE_PHRASES[2],
        (true, false) => SCENE_PHRASES[0],
        (false, true) => SCENE_PHRASES[1],
        (false, false) => SCENE_PHRASES[3],
    };
    ReferringExpression {
        report_id: report.id(),
        sentence_index: 0,
        phrase: phrase.to_owned(),
        components: Vec::new(),
        polarity: if positive.is_empty() { Polarity::Negative } else { Polarity::Positive },
        disease_tags: positive,
        level: Level::SceneLabel,
        conflicts,
    }
}

pub fn parse_report(report: &Report, lexicon: &Lexicon, level: Level) -> Vec<ReferringExpression> {
    match level {
        Level::SceneLabel => vec![scene_label(report, lexicon)],
        Level::Referring => report
            .sentences()
            .iter()
            .filter_map(|s| referring_expression(s, lexicon))
            .collect(),
        Level::DiseaseEmphasis => extract_disease_mentions(report, lexicon),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sentence(text: &str) -> Sentence {
        segment_sentences(text).remove(0)
    }

    fn cats(spans: &[AttributeSpan]) -> Vec<(Category, &str)> {
        spans.iter().map(|s| (s.category, s.surface.as_str())).collect()
    }

    fn report(text: &str) -> Report {
        Report::new("p10", "s50", text).unwrap()
    }

    #[test]
    fn classify_left_apical_pneumothorax() {
        let lex = Lexicon::bundled();
        let spans = classify_attributes(&sentence("left apical pneumothorax"), &lex);
        use Category::*;
        assert_eq!(cats(&spans), [(R5, "left"), (R5, "apical"), (R1, "pneumothorax")]);
    }

    #[test]
    fn classify_confluent_opacity_at_bases() {
        let lex = Lexicon::bundled();
        let spans = classify_attributes(&sentence("confluent opacity at bases"), &lex);
        use Category::*;
        assert_eq!(cats(&spans), [(R7, "confluent"), (R1, "opacity"), (R6, "at bases")]);
    }

    #[test]
    fn classify_no_hits() {
        let lex = Lexicon::bundled();
        assert!(classify_attributes(&sentence("the the the"), &lex).is_empty());
    }

    #[test]
    fn surfaces_keep_original_case() {
        let lex = Lexicon::bundled();
        let s = sentence("Left  Apical PNEUMOTHORAX");
        let spans = classify_attributes(&s, &lex);
        assert_eq!(spans[2].surface, "PNEUMOTHORAX");
        for span in &spans {
            assert_eq!(span.surface, s.surface(span.token_range.0, span.token_range.1));
        }
    }

    #[test]
    fn compose_orders_components() {
        let lex = Lexicon::bundled();
        let s = sentence("confluent opacity at bases");
        let expr = compose_referring_expression(&classify_attributes(&s, &lex), &s).unwrap();
        assert_eq!(expr.phrase, "confluent opacity at bases");
        let order: Vec<_> = expr.components.iter().map(|c| c.category).collect();
        assert_eq!(order, [Category::R7, Category::R1, Category::R6]);

        let s = sentence("multifocal bilateral airspace consolidation");
        let expr = compose_referring_expression(&classify_attributes(&s, &lex), &s).unwrap();
        let head: Vec<_> = expr.components.iter().filter(|c| c.category == Category::R1).collect();
        assert_eq!(head.len(), 1);
        assert_eq!(head[0].surface, "consolidation");
        assert_eq!(expr.phrase, "multifocal airspace consolidation bilateral");
    }

    #[test]
    fn compose_requires_head() {
        let s = sentence("the the the");
        assert!(compose_referring_expression(&[], &s).is_none());
        let lex = Lexicon::bundled();
        let s = sentence("right lower lobe");
        assert!(compose_referring_expression(&classify_attributes(&s, &lex), &s).is_none());
    }

    #[test]
    fn disease_mentions_polarity() {
        let lex = Lexicon::bundled();
        let neg = extract_disease_mentions(&report("no complications, no pneumothorax"), &lex);
        assert_eq!(neg.len(), 1);
        assert_eq!(neg[0].polarity, Polarity::Negative);
        assert_eq!(neg[0].disease_tags, BTreeSet::from([Disease::Pneumothorax]));

        let pos = extract_disease_mentions(&report("could represent an early pneumonia"), &lex);
        assert_eq!(pos[0].polarity, Polarity::Positive);
        assert_eq!(pos[0].phrase, "could represent an early pneumonia");

        let bare = extract_disease_mentions(&report("pneumonia"), &lex);
        assert_eq!(bare[0].polarity, Polarity::Positive);
        assert_eq!(bare[0].disease_tags, BTreeSet::from([Disease::Pneumonia]));
        assert_eq!(bare[0].level, Level::DiseaseEmphasis);
    }

    #[test]
    fn scene_labels() {
        let lex = Lexicon::bundled();
        let phrase = |t: &str| parse_report(&report(t), &lex, Level::SceneLabel)[0].phrase.clone();
        assert_eq!(phrase("Right lower lobe pneumonia. No pneumothorax."), "pneumonia");
        assert_eq!(phrase("No pneumonia or pneumothorax."), "no pneumo");
        assert_eq!(phrase("Lungs are clear."), "no pneumo");
        assert_eq!(phrase("Small left pneumothorax. Patchy pneumonia."), "pneumonia and pneumothorax");
        assert_eq!(phrase("Large right pneumothorax."), "pneumothorax");
    }

    #[test]
    fn scene_label_conflict_resolves_positive() {
        let lex = Lexicon::bundled();
        let expr = scene_label(&report("No pneumonia. Developing pneumonia at the right base."), &lex);
        assert_eq!(expr.phrase, "pneumonia");
        assert_eq!(expr.conflicts, BTreeSet::from([Disease::Pneumonia]));
    }

    #[test]
    fn referring_level_maps_compose_over_sentences() {
        let lex = Lexicon::bundled();
        let r = report("Confluent opacity at bases. The heart is normal. No left pneumothorax.");
        let exprs = parse_report(&r, &lex, Level::Referring);
        let expected: Vec<_> = r
            .sentences()
            .iter()
            .filter_map(|s| compose_referring_expression(&classify_attributes(s, &lex), s))
            .map(|e| e.phrase)
            .collect();
        assert_eq!(exprs.iter().map(|e| e.phrase.clone()).collect::<Vec<_>>(), expected);
        assert_eq!(exprs[1].polarity, Polarity::Negative);
        assert_eq!(exprs[1].report_id, "p10/s50");
        assert_eq!(exprs[1].sentence_index, 2);
    }

    #[test]
    fn report_validation() {
        assert!(Report::new("", "s", "x").is_err());
        assert!(Report::new("p", "s", "  ").is_err());
    }
}
