//! Raw text to token files: numeral canonicalization, dictionary
//! segmentation, and rare-word replacement against a frozen vocabulary.
//!
//! Canonicalization rewrites digit-based spans, tried in this order:
//!
//! | token    | patterns                                                          |
//! |----------|-------------------------------------------------------------------|
//! | `<time>` | `hh:mm`, `hh:mm:ss` (ASCII or full-width colon), `h点`, `h时`, `h点m分` |
//! | `<date>` | `yyyy-mm-dd`, `yyyy/mm/dd`, `yyyy年m月[d日]`, `m月d日`, `m月`, `d日`   |
//! | `<year>` | `yyyy年`, four Chinese digits followed by `年`                      |
//! | `<N>`    | `[+-]digits[(.|,)digits]*` with an optional `%`, `万` or `亿`        |
//!
//! A span directly touching an ASCII letter or digit is left alone, so
//! `w12` or `mp3` are not rewritten.

use std::collections::{HashMap, HashSet};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexicon::{Lexicon, LexiconBuilder, SPECIAL_SEMEME_PREFIX};

pub const UNK: &str = "<unk>";
pub const NUMBER: &str = "<N>";
pub const DATE: &str = "<date>";
pub const YEAR: &str = "<year>";
pub const TIME: &str = "<time>";
pub const SPECIAL_TOKENS: [&str; 5] = [UNK, NUMBER, DATE, YEAR, TIME];

fn patterns() -> &'static [(&'static str, Regex); 4] {
    static PATTERNS: OnceLock<[(&'static str, Regex); 4]> = OnceLock::new();
    PATTERNS.get_or_init(|| {
        let re = |p: &str| Regex::new(p).expect("valid pattern");
        [
            (TIME, re(r"\d{1,2}[:：]\d{2}(?:[:：]\d{2})?|\d{1,2}[点时](?:\d{1,2}分)?")),
            (DATE, re(r"\d{4}-\d{1,2}-\d{1,2}|\d{4}/\d{1,2}/\d{1,2}|\d{4}年\d{1,2}月(?:\d{1,2}日)?|\d{1,2}月\d{1,2}日|\d{1,2}月|\d{1,2}日")),
            (YEAR, re(r"\d{4}年|[〇零一二三四五六七八九]{4}年")),
            (NUMBER, re(r"[+-]?\d+(?:[.,]\d+)*(?:%|万|亿)?")),
        ]
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Piece {
    Text(String),
    Special(&'static str),
}

fn touches_alnum(text: &str, start: usize, end: usize) -> bool {
    let before = text[..start].chars().next_back();
    let after = text[end..].chars().next();
    [before, after].into_iter().flatten().any(|c| c.is_ascii_alphanumeric())
}

fn split_on(text: &str, token: &'static str, re: &Regex) -> Vec<Piece> {
    let mut out = Vec::new();
    let mut last = 0;
    for m in re.find_iter(text) {
        if touches_alnum(text, m.start(), m.end()) {
            continue;
        }
        if m.start() > last {
            out.push(Piece::Text(text[last..m.start()].to_string()));
        }
        out.push(Piece::Special(token));
        last = m.end();
    }
    if last < text.len() {
        out.push(Piece::Text(text[last..].to_string()));
    }
    out
}

fn canonical_pieces(text: &str) -> Vec<Piece> {
    let mut pieces = vec![Piece::Text(text.to_string())];
    for (token, re) in patterns() {
        pieces = pieces
            .into_iter()
            .flat_map(|p| match p {
                Piece::Text(t) => split_on(&t, token, re),
                special => vec![special],
            })
            .collect();
    }
    pieces
}

/// Rewrites numerals, dates, years and times in `text` to their
/// placeholder tokens, each surrounded by spaces.
pub fn canonicalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for piece in canonical_pieces(text) {
        match piece {
            Piece::Text(t) => out.push_str(&t),
            Piece::Special(tok) => {
                out.push(' ');
                out.push_str(tok);
                out.push(' ');
            }
        }
    }
    out
}

/// Word list for forward maximum matching.
#[derive(Clone, Debug)]
pub struct Dictionary {
    words: HashSet<String>,
    max_chars: usize,
}

impl Dictionary {
    pub fn new<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let words: HashSet<String> = words.into_iter().map(Into::into).filter(|w: &String| !w.is_empty()).collect();
        if words.is_empty() {
            return Err(Error::argument("segmentation dictionary is empty"));
        }
        let max_chars = words.iter().map(|w| w.chars().count()).max().unwrap_or(1);
        Ok(Self { words, max_chars })
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }
}

/// Greedy longest-prefix segmentation. Characters with no dictionary match
/// become single-character tokens. Whitespace separates and is dropped.
pub fn fmm_segment(sentence: &str, dict: &Dictionary) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in sentence.split_whitespace() {
        let bounds: Vec<usize> = chunk.char_indices().map(|(i, _)| i).chain([chunk.len()]).collect();
        let chars = bounds.len() - 1;
        let mut i = 0;
        while i < chars {
            let longest = (i + 1..=chars.min(i + dict.max_chars))
                .rev()
                .find(|&j| dict.contains(&chunk[bounds[i]..bounds[j]]))
                .unwrap_or(i + 1);
            out.push(chunk[bounds[i]..bounds[longest]].to_string());
            i = longest;
        }
    }
    out
}

pub fn is_punctuation(token: &str) -> bool {
    let mut chars = token.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) => c.is_ascii_punctuation() || "，。、；：？！“”‘’（）《》【】…—·「」『』".contains(c),
        _ => false,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// Tokens seen fewer times than this in the training split become `<unk>`.
    pub min_count: usize,
    pub canonicalize: bool,
    /// Run forward maximum matching inside whitespace-separated chunks that
    /// are not lexicon words and contain non-ASCII text. Pure ASCII chunks
    /// are already word-delimited.
    pub segment: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { min_count: 5, canonicalize: true, segment: true }
    }
}

/// Splits one line into raw tokens, before vocabulary mapping.
pub fn tokenize_line(line: &str, dict: &Dictionary, config: &PreprocessConfig) -> Vec<String> {
    let text = if config.canonicalize { canonicalize(line) } else { line.to_string() };
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        if SPECIAL_TOKENS.contains(&chunk) || dict.contains(chunk) || !config.segment || chunk.is_ascii() {
            out.push(chunk.to_string());
        } else {
            out.extend(fmm_segment(chunk, dict));
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Preprocessed {
    /// Surviving tokens by descending training count, ties by token.
    pub vocabulary: Vec<(String, usize)>,
    /// Input lexicon restricted to the vocabulary, plus one synthetic sense
    /// for each special or punctuation token.
    pub lexicon: Lexicon,
    pub train: Vec<Vec<String>>,
    pub valid: Vec<Vec<String>>,
    pub test: Vec<Vec<String>>,
}

impl Preprocessed {
    pub fn split_text(sentences: &[Vec<String>]) -> String {
        let mut out = String::new();
        for s in sentences {
            out.push_str(&s.join(" "));
            out.push('\n');
        }
        out
    }
}

/// Tokenizes all splits, freezes the vocabulary on the training split, and
/// maps everything outside it to `<unk>`. A token survives when it occurs at
/// least `min_count` times in training and is a lexicon word, a special
/// token, or punctuation. Lines that end up empty are dropped.
pub fn preprocess(train: &str, valid: &str, test: &str, lex: &Lexicon, config: &PreprocessConfig) -> Result<Preprocessed> {
    if config.min_count == 0 {
        return Err(Error::argument("min_count must be at least 1"));
    }
    let dict = Dictionary::new(lex.words().iter().cloned())?;
    let tokenize = |text: &str| -> Vec<Vec<String>> {
        text.lines().map(|l| tokenize_line(l, &dict, config)).filter(|t| !t.is_empty()).collect()
    };
    let (train, valid, test) = (tokenize(train), tokenize(valid), tokenize(test));

    let mut counts: HashMap<&str, usize> = HashMap::new();
    for tok in train.iter().flatten() {
        *counts.entry(tok.as_str()).or_default() += 1;
    }
    let covered = |t: &str| lex.word_id(t).is_some() || SPECIAL_TOKENS.contains(&t) || is_punctuation(t);
    let mut kept: HashMap<String, usize> = counts
        .iter()
        .filter(|&(t, &c)| c >= config.min_count && covered(t))
        .map(|(t, &c)| (t.to_string(), c))
        .collect();

    let map = |sentences: Vec<Vec<String>>, kept: &HashMap<String, usize>| -> Vec<Vec<String>> {
        sentences
            .into_iter()
            .map(|s| s.into_iter().map(|t| if kept.contains_key(&t) { t } else { UNK.to_string() }).collect())
            .collect()
    };
    let train = map(train, &kept);
    let unk_count = train.iter().flatten().filter(|t| *t == UNK).count();
    kept.insert(UNK.to_string(), unk_count);
    let valid = map(valid, &kept);
    let test = map(test, &kept);

    let mut vocabulary: Vec<(String, usize)> = kept.into_iter().collect();
    vocabulary.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let mut builder = LexiconBuilder::new();
    for (token, _) in &vocabulary {
        match lex.word_id(token) {
            Some(w) => {
                for &s in lex.senses_of(w) {
                    let labels: Vec<&str> = lex.sememes_of(s).iter().map(|&k| lex.sememe(k)).collect();
                    builder.add_sense(token, None, &labels)?;
                }
            }
            None => {
                let label = format!("{SPECIAL_SEMEME_PREFIX}{token}");
                builder.add_sense(token, None, &[label.as_str()])?;
            }
        }
    }
    Ok(Preprocessed { vocabulary, lexicon: builder.build()?, train, valid, test })
}

/// Decodes bytes as UTF-8, reporting the line of the first invalid sequence.
pub fn decode_utf8(bytes: Vec<u8>) -> Result<String> {
    String::from_utf8(bytes).map_err(|e| {
        let at = e.utf8_error().valid_up_to();
        let line = e.as_bytes()[..at].iter().filter(|&&b| b == b'\n').count() + 1;
        Error::schema(line, "invalid UTF-8")
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::parse_lexicon;
    use proptest::prelude::*;

    #[test]
    fn golden_canonicalization() {
        let cases = [
            ("40 billion", "<N> billion"),
            ("up 3.5% today", "up <N> today"),
            ("1,234,567 people", "<N> people"),
            ("at 10:30 on 2019-03-01", "at <time> on <date>"),
            ("1998年5月12日上午9点30分", "<date> 上午 <time>"),
            ("1998年经济增长8%", "<year> 经济增长 <N>"),
            ("一九九八年", "<year>"),
            ("5月出发", "<date> 出发"),
            ("3万人", "<N> 人"),
            ("w12 mp3 x", "w12 mp3 x"),
            ("-7 degrees", "<N> degrees"),
        ];
        for (input, expected) in cases {
            let got: Vec<String> = canonicalize(input).split_whitespace().map(String::from).collect();
            assert_eq!(got.join(" "), expected, "input {input:?}");
        }
    }

    #[test]
    fn fmm_examples() {
        let d = Dictionary::new(["ab", "a", "b"]).unwrap();
        assert_eq!(fmm_segment("ab", &d), vec!["ab"]);
        let d = Dictionary::new(["a", "b"]).unwrap();
        assert_eq!(fmm_segment("ab", &d), vec!["a", "b"]);
        let d = Dictionary::new(["中国", "中国人", "人民"]).unwrap();
        assert_eq!(fmm_segment("中国人民好", &d), vec!["中国人", "民", "好"]);
        assert_eq!(fmm_segment("中国ab人民", &d), vec!["中国", "a", "b", "人民"]);
        assert!(Dictionary::new(Vec::<String>::new()).is_err());
    }

    proptest! {
        #[test]
        fn fmm_reconstructs_input(
            words in proptest::collection::vec("[abc]{1,3}", 1..6),
            text in "[abcd]{0,20}",
        ) {
            let dict = Dictionary::new(words.clone()).unwrap();
            let tokens = fmm_segment(&text, &dict);
            prop_assert_eq!(tokens.concat(), text);
            for t in &tokens {
                prop_assert!(dict.contains(t) || t.chars().count() == 1);
            }
        }
    }

    fn lex() -> Lexicon {
        parse_lexicon("the\t0\tdet\ncat\t0\tanimal\nsat\t0\tact\nmat\t0\tthing\n中国\t0\tcountry\n".as_bytes()).unwrap()
    }

    #[test]
    fn min_count_one_adds_no_unk() {
        let out = preprocess("the cat sat\nthe mat\n", "", "", &lex(), &PreprocessConfig { min_count: 1, ..Default::default() }).unwrap();
        assert!(out.train.iter().flatten().all(|t| t != UNK));
        assert_eq!(out.vocabulary[0], ("the".to_string(), 2));
        assert!(out.lexicon.word_id(UNK).is_some());
    }

    #[test]
    fn rare_and_uncovered_tokens_become_unk() {
        let cfg = PreprocessConfig { min_count: 2, ..Default::default() };
        let out = preprocess("the cat dog , 5\nthe cat , 7\n", "the mat 9\n", "", &lex(), &cfg).unwrap();
        assert_eq!(out.train[0], vec!["the", "cat", UNK, ",", NUMBER]);
        assert_eq!(out.valid[0], vec!["the", UNK, NUMBER]);
        let words: Vec<&str> = out.lexicon.words().iter().map(String::as_str).collect();
        assert_eq!(words, vec![",", NUMBER, "cat", "the", UNK]);
        let comma = out.lexicon.word_id(",").unwrap();
        assert_eq!(out.lexicon.senses_of(comma).len(), 1);
    }

    #[test]
    fn vocabulary_matches_recount() {
        let text = "the cat sat\nthe cat\nthe mat mat 3\n中国 4 5\n";
        let cfg = PreprocessConfig { min_count: 2, ..Default::default() };
        let out = preprocess(text, "", "", &lex(), &cfg).unwrap();
        let mut recount: HashMap<&str, usize> = HashMap::new();
        for t in out.train.iter().flatten() {
            *recount.entry(t.as_str()).or_default() += 1;
        }
        for (tok, count) in &out.vocabulary {
            assert_eq!(recount.get(tok.as_str()).copied().unwrap_or(0), *count, "{tok}");
        }
        assert_eq!(recount.len(), out.vocabulary.len());
    }

    #[test]
    fn idempotent() {
        let raw = "the cat sat on 3 mats\n中国人 1998年 the\nthe cat 12:30 ，the\n";
        let cfg = PreprocessConfig { min_count: 1, ..Default::default() };
        let once = preprocess(raw, raw, "", &lex(), &cfg).unwrap();
        let text = Preprocessed::split_text(&once.train);
        let twice = preprocess(&text, &text, "", &lex(), &cfg).unwrap();
        assert_eq!(once.train, twice.train);
        assert_eq!(once.vocabulary, twice.vocabulary);
    }

    #[test]
    fn invalid_utf8_reports_line() {
        assert!(matches!(decode_utf8(b"ok\nbad \xff\n".to_vec()), Err(Error::Schema { line: 2, .. })));
    }
}
