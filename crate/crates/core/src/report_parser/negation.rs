//! Forward-scope negation in the NegEx style.
//!
//! A negation cue opens a scope that runs forward to the end of its clause.
//! Clauses end at `;` and `:`, at scope terminators ("but", "although",
//! "which", ...) and at a comma whose following text up to the target
//! contains a clause verb. Pseudo-negations such as "no change" or
//! "cannot be excluded" are skipped and never open a scope.

use super::lexicon::{Disease, Lexicon};

/// A disease term found in a sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiseaseMention {
    pub disease: Disease,
    pub token_range: (usize, usize),
    pub negated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mark {
    Plain,
    Cue,
    Boundary,
    Comma,
}

/// Per-token role of a lowercased token sequence.
fn mark_tokens(tokens: &[String], lexicon: &Lexicon) -> Vec<Mark> {
    let mut marks = vec![Mark::Plain; tokens.len()];
    let mut i = 0;
    while i < tokens.len() {
        if let Some((len, ())) = lexicon.pseudo.longest_at(tokens, i) {
            i += len;
            continue;
        }
        if let Some((len, ())) = lexicon.negations.longest_at(tokens, i) {
            marks[i..i + len].fill(Mark::Cue);
            i += len;
            continue;
        }
        marks[i] = match tokens[i].as_str() {
            ";" | ":" => Mark::Boundary,
            "," => Mark::Comma,
            t if lexicon.terminators.contains(t) => Mark::Boundary,
            _ => Mark::Plain,
        };
        i += 1;
    }
    marks
}

fn is_negated_at(tokens: &[String], marks: &[Mark], target: usize, lexicon: &Lexicon) -> bool {
    // walk backwards from the target; the first cue reached before any
    // clause boundary negates it
    let mut verb_seen = false;
    for i in (0..target).rev() {
        match marks[i] {
            Mark::Cue => return true,
            Mark::Boundary => return false,
            Mark::Comma if verb_seen => return false,
            Mark::Comma | Mark::Plain => {
                if lexicon.verbs.contains(&tokens[i]) {
                    verb_seen = true;
                }
            }
        }
    }
    false
}

/// True when a negation cue scopes the token at `target`.
pub fn is_negated(tokens: &[String], target: usize, lexicon: &Lexicon) -> bool {
    let marks = mark_tokens(tokens, lexicon);
    is_negated_at(tokens, &marks, target, lexicon)
}

/// All disease mentions in a lowercased token sequence, left to right.
pub fn disease_mentions(tokens: &[String], lexicon: &Lexicon) -> Vec<DiseaseMention> {
    let marks = mark_tokens(tokens, lexicon);
    let mut mentions = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        match lexicon.diseases.longest_at(tokens, i) {
            Some((len, disease)) => {
                mentions.push(DiseaseMention {
                    disease,
                    token_range: (i, i + len),
                    negated: is_negated_at(tokens, &marks, i, lexicon),
                });
                i += len;
            }
            None => i += 1,
        }
    }
    mentions
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report_parser::segment::tokenize;

    fn mentions(text: &str) -> Vec<(Disease, bool)> {
        let lex = Lexicon::bundled();
        let toks: Vec<String> = tokenize(text, 0).into_iter().map(|t| t.text.to_lowercase()).collect();
        disease_mentions(&toks, &lex)
            .into_iter()
            .map(|m| (m.disease, m.negated))
            .collect()
    }

    #[test]
    fn comma_list_keeps_scope() {
        assert_eq!(mentions("no complications, no pneumothorax"), [(Disease::Pneumothorax, true)]);
        assert_eq!(
            mentions("No effusion, pneumonia, or pneumothorax"),
            [(Disease::Pneumonia, true), (Disease::Pneumothorax, true)]
        );
    }

    #[test]
    fn uncertain_positive_mention() {
        assert_eq!(
            mentions("vague right mid lung opacity, which is of uncertain etiology, although could represent an early pneumonia"),
            [(Disease::Pneumonia, false)]
        );
    }

    #[test]
    fn comma_clause_with_verb_resets() {
        assert_eq!(mentions("No effusion, there is a right pneumothorax"), [(Disease::Pneumothorax, false)]);
        assert_eq!(mentions("No effusion; pneumonia"), [(Disease::Pneumonia, false)]);
    }

    #[test]
    fn pseudo_negation_is_not_a_cue() {
        assert_eq!(mentions("No change in left lower lobe pneumonia"), [(Disease::Pneumonia, false)]);
        assert_eq!(mentions("Pneumonia cannot be excluded"), [(Disease::Pneumonia, false)]);
    }

    #[test]
    fn multiword_cue() {
        assert_eq!(mentions("There is no evidence of pneumothorax"), [(Disease::Pneumothorax, true)]);
    }
}
