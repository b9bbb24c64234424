use serde::{Deserialize, Serialize};

/// Abbreviations whose trailing period does not end a sentence.
const ABBREVIATIONS: &[&str] = &[
    "a.m.", "approx.", "cf.", "dr.", "e.g.", "etc.", "i.e.", "mr.", "mrs.", "ms.", "p.a.", "p.m.",
    "pt.", "st.", "vs.",
];

/// Byte offsets `[start, end)` into the report text.
pub type CharSpan = (usize, usize);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub span: CharSpan,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub report_id: String,
    pub index: usize,
    pub char_span: CharSpan,
    /// The sentence substring, `report.text[char_span.0..char_span.1]`.
    pub text: String,
    pub tokens: Vec<Token>,
}

impl Sentence {
    /// Original substring covered by tokens `[start, end)`.
    pub fn surface(&self, start: usize, end: usize) -> &str {
        let from = self.tokens[start].span.0 - self.char_span.0;
        let to = self.tokens[end - 1].span.1 - self.char_span.0;
        &self.text[from..to]
    }

    pub fn lowercase_tokens(&self) -> Vec<String> {
        self.tokens.iter().map(|t| t.text.to_lowercase()).collect()
    }
}

fn is_abbreviation(text: &str, period: usize) -> bool {
    let start = text[..period]
        .rfind(char::is_whitespace)
        .map(|i| i + 1)
        .unwrap_or(0);
    let word = text[start..=period]
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase();
    ABBREVIATIONS.contains(&word.as_str())
}

fn is_sentence_end(text: &str, idx: usize, ch: char) -> bool {
    let next = text[idx + ch.len_utf8()..].chars().next();
    if !next.is_none_or(char::is_whitespace) {
        return false;
    }
    !(ch == '.' && is_abbreviation(text, idx))
}

/// Byte ranges of the raw (untrimmed) sentence chunks.
fn raw_chunks(text: &str) -> Vec<CharSpan> {
    let mut chunks = Vec::new();
    let mut start = 0;
    for (idx, ch) in text.char_indices() {
        match ch {
            '.' | '!' | '?' if is_sentence_end(text, idx, ch) => {
                let end = idx + ch.len_utf8();
                chunks.push((start, end));
                start = end;
            }
            '\n' => {
                // a blank line (only whitespace between two newlines) ends the chunk
                let rest = &text[idx + 1..];
                let gap = rest.len() - rest.trim_start_matches([' ', '\t', '\r']).len();
                if rest[gap..].starts_with('\n') {
                    chunks.push((start, idx));
                    start = idx;
                }
            }
            _ => {}
        }
    }
    chunks.push((start, text.len()));
    chunks
}

fn trim_span(text: &str, (start, end): CharSpan) -> Option<CharSpan> {
    let chunk = &text[start..end];
    let lead = chunk.len() - chunk.trim_start().len();
    let trimmed = chunk.trim();
    (!trimmed.is_empty()).then(|| (start + lead, start + lead + trimmed.len()))
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// Splits a sentence substring into word and punctuation tokens. Words are
/// alphanumeric runs joined by inner `-`, `'` or `/`; a `.` between digits
/// stays inside the word (decimal numbers).
pub(crate) fn tokenize(text: &str, offset: usize) -> Vec<Token> {
    let mut tokens = Vec::new();
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if !is_word_char(c) {
            let end = pos + c.len_utf8();
            tokens.push(Token {
                text: text[pos..end].to_owned(),
                span: (offset + pos, offset + end),
            });
            i += 1;
            continue;
        }
        let mut j = i + 1;
        while j < chars.len() {
            let c = chars[j].1;
            if is_word_char(c) {
                j += 1;
                continue;
            }
            let joins_next = chars.get(j + 1).is_some_and(|&(_, n)| is_word_char(n));
            let joiner = match c {
                '-' | '\'' | '/' => joins_next,
                '.' => joins_next && chars[j - 1].1.is_ascii_digit() && chars[j + 1].1.is_ascii_digit(),
                _ => false,
            };
            if !joiner {
                break;
            }
            j += 2;
        }
        let end = chars.get(j).map(|&(p, _)| p).unwrap_or(text.len());
        tokens.push(Token {
            text: text[pos..end].to_owned(),
            span: (offset + pos, offset + end),
        });
        i = j;
    }
    tokens
}

/// Splits `text` into sentences on `.`, `!`, `?` (followed by whitespace or
/// end of text) and on blank lines, keeping periods of known abbreviations.
pub fn segment_sentences(text: &str) -> Vec<Sentence> {
    raw_chunks(text)
        .into_iter()
        .filter_map(|span| trim_span(text, span))
        .enumerate()
        .map(|(index, (start, end))| Sentence {
            report_id: String::new(),
            index,
            char_span: (start, end),
            text: text[start..end].to_owned(),
            tokens: tokenize(&text[start..end], start),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(text: &str) -> Vec<String> {
        segment_sentences(text).into_iter().map(|s| s.text).collect()
    }

    #[test]
    fn splits_on_terminal_punctuation() {
        assert_eq!(texts("No pneumothorax. Lungs clear."), ["No pneumothorax.", "Lungs clear."]);
        assert_eq!(texts("Is there effusion? No! Fine"), ["Is there effusion?", "No!", "Fine"]);
    }

    #[test]
    fn empty_and_blank_input() {
        assert!(segment_sentences("").is_empty());
        assert!(segment_sentences("  \n\n \t").is_empty());
    }

    #[test]
    fn long_clause_is_one_sentence() {
        let s = "vague right mid lung opacity, which is of uncertain etiology, although could represent an early pneumonia";
        assert_eq!(texts(s), [s]);
    }

    #[test]
    fn abbreviations_and_decimals_do_not_split() {
        assert_eq!(
            texts("Discussed with Dr. Smith at 9 a.m. today. P.A. view shows 2.5 cm nodule."),
            ["Discussed with Dr. Smith at 9 a.m. today.", "P.A. view shows 2.5 cm nodule."]
        );
    }

    #[test]
    fn blank_lines_split() {
        assert_eq!(texts("FINDINGS: clear\n\nIMPRESSION: none"), ["FINDINGS: clear", "IMPRESSION: none"]);
        assert_eq!(texts("one line\nstill same"), ["one line\nstill same"]);
    }

    #[test]
    fn spans_are_ordered_and_nested() {
        let text = "Left apical pneumothorax.  No effusion!\n\nStable, 2.5-cm nodule";
        let sentences = segment_sentences(text);
        let mut last_end = 0;
        for s in &sentences {
            assert!(s.char_span.0 >= last_end && s.char_span.1 <= text.len());
            assert_eq!(&text[s.char_span.0..s.char_span.1], s.text);
            for t in &s.tokens {
                assert!(t.span.0 >= s.char_span.0 && t.span.1 <= s.char_span.1);
                assert_eq!(&text[t.span.0..t.span.1], t.text);
            }
            last_end = s.char_span.1;
        }
        let toks: Vec<&str> = sentences[2].tokens.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(toks, ["Stable", ",", "2.5-cm", "nodule"]);
    }

    #[test]
    fn handles_multibyte_text() {
        let s = segment_sentences("Opacité droite. Ça va.");
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].tokens[0].text, "Opacité");
    }
}
