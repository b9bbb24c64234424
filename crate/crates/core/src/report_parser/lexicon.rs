use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Category;
use crate::error::{Error, Result};

/// Lexicon bundled with the crate.
pub const DEFAULT_LEXICON_JSON: &str = include_str!("../../data/lexicon.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Disease {
    Pneumonia,
    Pneumothorax,
}

impl Disease {
    pub const ALL: [Disease; 2] = [Disease::Pneumonia, Disease::Pneumothorax];

    pub fn as_str(self) -> &'static str {
        match self {
            Disease::Pneumonia => "pneumonia",
            Disease::Pneumothorax => "pneumothorax",
        }
    }

    /// Case-insensitive lookup of a category or disease name.
    pub fn from_name(name: &str) -> Option<Self> {
        match name.trim().to_lowercase().as_str() {
            "pneumonia" => Some(Disease::Pneumonia),
            "pneumothorax" => Some(Disease::Pneumothorax),
            _ => None,
        }
    }
}

impl std::fmt::Display for Disease {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// On-disk form of the lexicon. The last three lists tune negation scope
/// and fall back to empty when absent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LexiconFile {
    #[serde(default)]
    pub version: u32,
    pub r1_terms: Vec<String>,
    pub r5_terms: Vec<String>,
    pub r6_terms: Vec<String>,
    pub r7_terms: Vec<String>,
    pub negation_cues: Vec<String>,
    pub disease_terms: BTreeMap<Disease, Vec<String>>,
    #[serde(default)]
    pub pseudo_negations: Vec<String>,
    #[serde(default)]
    pub scope_terminators: Vec<String>,
    #[serde(default)]
    pub clause_verbs: Vec<String>,
}

/// Phrase table keyed by first token; every bucket is sorted longest-first.
#[derive(Debug, Clone)]
pub(crate) struct PhraseTable<V> {
    by_head: HashMap<String, Vec<(Vec<String>, V)>>,
}

impl<V> Default for PhraseTable<V> {
    fn default() -> Self {
        PhraseTable { by_head: HashMap::new() }
    }
}

impl<V: Clone> PhraseTable<V> {
    fn insert(&mut self, words: Vec<String>, value: V) {
        let bucket = self.by_head.entry(words[0].clone()).or_default();
        bucket.push((words, value));
        bucket.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
    }

    /// Longest entry matching `tokens` starting at `start`.
    pub(crate) fn longest_at(&self, tokens: &[String], start: usize) -> Option<(usize, V)> {
        let bucket = self.by_head.get(tokens.get(start)?)?;
        bucket.iter().find_map(|(words, value)| {
            let end = start + words.len();
            (end <= tokens.len() && tokens[start..end] == words[..]).then(|| (words.len(), value.clone()))
        })
    }
}

/// Validated lexicon ready for matching.
#[derive(Debug, Clone)]
pub struct Lexicon {
    source: LexiconFile,
    pub(crate) attributes: PhraseTable<Category>,
    pub(crate) negations: PhraseTable<()>,
    pub(crate) pseudo: PhraseTable<()>,
    pub(crate) diseases: PhraseTable<Disease>,
    pub(crate) terminators: BTreeSet<String>,
    pub(crate) verbs: BTreeSet<String>,
}

fn split_words(entry: &str) -> Vec<String> {
    entry.split_whitespace().map(str::to_owned).collect()
}

fn check_entry(list: &str, entry: &str) -> Result<()> {
    if entry.trim().is_empty() {
        return Err(Error::invalid(format!("empty entry in {list}")));
    }
    if entry.to_lowercase() != entry {
        return Err(Error::invalid(format!("{list} entry {entry:?} is not lowercase")));
    }
    Ok(())
}

impl Lexicon {
    pub fn from_file(file: LexiconFile) -> Result<Self> {
        let mut attributes = PhraseTable::default();
        let mut seen: HashMap<Vec<String>, &'static str> = HashMap::new();
        let categorized = [
            (Category::R1, "r1_terms", &file.r1_terms),
            (Category::R5, "r5_terms", &file.r5_terms),
            (Category::R6, "r6_terms", &file.r6_terms),
            (Category::R7, "r7_terms", &file.r7_terms),
            (Category::R1, "negation_cues", &file.negation_cues),
        ];
        for (category, list, entries) in categorized {
            for entry in entries.iter() {
                check_entry(list, entry)?;
                let words = split_words(entry);
                if let Some(prev) = seen.insert(words.clone(), list) {
                    if prev != list {
                        return Err(Error::invalid(format!(
                            "lexicon entry {entry:?} appears in both {prev} and {list}"
                        )));
                    }
                    continue;
                }
                if list != "negation_cues" {
                    attributes.insert(words, category);
                }
            }
        }

        let mut negations = PhraseTable::default();
        for cue in &file.negation_cues {
            negations.insert(split_words(cue), ());
        }
        let mut pseudo = PhraseTable::default();
        for entry in &file.pseudo_negations {
            check_entry("pseudo_negations", entry)?;
            pseudo.insert(split_words(entry), ());
        }
        let mut diseases = PhraseTable::default();
        for (disease, synonyms) in &file.disease_terms {
            for entry in synonyms {
                check_entry("disease_terms", entry)?;
                diseases.insert(split_words(entry), *disease);
            }
        }
        let mut terminators = BTreeSet::new();
        for entry in &file.scope_terminators {
            check_entry("scope_terminators", entry)?;
            terminators.insert(entry.clone());
        }
        let mut verbs = BTreeSet::new();
        for entry in &file.clause_verbs {
            check_entry("clause_verbs", entry)?;
            verbs.insert(entry.clone());
        }

        Ok(Lexicon {
            source: file,
            attributes,
            negations,
            pseudo,
            diseases,
            terminators,
            verbs,
        })
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let file: LexiconFile = serde_json::from_str(json).map_err(|e| Error::json(json, &e))?;
        Self::from_file(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// The lexicon shipped in `data/lexicon.json`.
    pub fn bundled() -> Self {
        Self::from_json(DEFAULT_LEXICON_JSON).expect("bundled lexicon is valid")
    }

    pub fn file(&self) -> &LexiconFile {
        &self.source
    }

    pub fn has_disease_terms(&self) -> bool {
        self.source.disease_terms.values().any(|v| !v.is_empty())
    }
}
