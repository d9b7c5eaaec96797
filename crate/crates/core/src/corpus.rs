//! Token files and truncated-BPTT batching.
//!
//! A token file is UTF-8 text with one sentence per line and tokens
//! separated by whitespace. Every token must already be a lexicon word.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};
use crate::lexicon::Lexicon;

/// Sentences as word-id sequences.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Corpus {
    pub sentences: Vec<Vec<usize>>,
}

impl Corpus {
    pub fn new(sentences: Vec<Vec<usize>>) -> Self {
        Self { sentences }
    }

    pub fn num_tokens(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }

    /// All sentences concatenated in order.
    pub fn stream(&self) -> Vec<usize> {
        self.sentences.concat()
    }

    /// FNV-1a hash of the token ids and sentence boundaries, used to check
    /// that two reports were computed on the same data.
    pub fn fingerprint(&self) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |v: u64| {
            for byte in v.to_le_bytes() {
                hash ^= u64::from(byte);
                hash = hash.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for sentence in &self.sentences {
            feed(sentence.len() as u64);
            for &w in sentence {
                feed(w as u64);
            }
        }
        hash
    }

    pub fn to_text(&self, lex: &Lexicon) -> String {
        let mut out = String::new();
        for sentence in &self.sentences {
            let words: Vec<&str> = sentence.iter().map(|&w| lex.words()[w].as_str()).collect();
            out.push_str(&words.join(" "));
            out.push('\n');
        }
        out
    }
}

/// Parses a token file. Blank lines are skipped. A token that is not a
/// lexicon word is a contract violation: unknown words must be mapped to
/// `<unk>` before this point.
pub fn parse_corpus<R: BufRead>(source: R, lex: &Lexicon) -> Result<Corpus> {
    let mut sentences = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line.map_err(|e| match e.kind() {
            std::io::ErrorKind::InvalidData => Error::schema(i + 1, "invalid UTF-8"),
            _ => Error::Io(e),
        })?;
        let ids = line
            .split_whitespace()
            .map(|tok| {
                lex.word_id(tok)
                    .map(|w| w.index())
                    .ok_or_else(|| Error::contract(format!("line {}: token `{tok}` is not in the lexicon", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        if !ids.is_empty() {
            sentences.push(ids);
        }
    }
    Ok(Corpus { sentences })
}

pub fn read_corpus(path: impl AsRef<Path>, lex: &Lexicon) -> Result<Corpus> {
    parse_corpus(BufReader::new(fs::File::open(path)?), lex)
}

pub fn write_corpus(corpus: &Corpus, lex: &Lexicon, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, corpus.to_text(lex))?;
    Ok(())
}

/// A token stream split into `batch` contiguous parallel streams. Trailing
/// tokens that do not fill a full column are dropped.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StreamBatches {
    columns: Vec<Vec<usize>>,
    bptt: usize,
}

/// One training window: `inputs[t][b]` predicts `targets[t][b]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Window {
    pub inputs: Vec<Vec<usize>>,
    pub targets: Vec<Vec<usize>>,
}

impl StreamBatches {
    pub fn new(stream: &[usize], batch: usize, bptt: usize) -> Result<Self> {
        if batch == 0 || bptt == 0 {
            return Err(Error::argument("batch size and bptt length must be at least 1"));
        }
        let per_stream = stream.len() / batch;
        if per_stream < 2 {
            return Err(Error::argument(format!(
                "{} tokens cannot fill {batch} streams of at least 2 tokens",
                stream.len()
            )));
        }
        let columns = (0..batch).map(|b| stream[b * per_stream..(b + 1) * per_stream].to_vec()).collect();
        Ok(Self { columns, bptt })
    }

    pub fn batch_size(&self) -> usize {
        self.columns.len()
    }

    pub fn stream_len(&self) -> usize {
        self.columns[0].len()
    }

    /// Number of predicted tokens per pass.
    pub fn num_targets(&self) -> usize {
        (self.stream_len() - 1) * self.batch_size()
    }

    pub fn windows(&self) -> impl Iterator<Item = Window> + '_ {
        let last = self.stream_len() - 1;
        (0..last).step_by(self.bptt).map(move |start| {
            let len = self.bptt.min(last - start);
            let pick = |offset: usize| -> Vec<Vec<usize>> {
                (0..len).map(|t| self.columns.iter().map(|c| c[start + t + offset]).collect()).collect()
            };
            Window { inputs: pick(0), targets: pick(1) }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::parse_lexicon;

    fn lex() -> Lexicon {
        parse_lexicon("a\t0\tx\nb\t0\ty\nc\t0\tz\n".as_bytes()).unwrap()
    }

    #[test]
    fn parses_and_round_trips() {
        let lex = lex();
        let corpus = parse_corpus("a b\n\n c  a b\n".as_bytes(), &lex).unwrap();
        assert_eq!(corpus.sentences, vec![vec![0, 1], vec![2, 0, 1]]);
        assert_eq!(corpus.to_text(&lex), "a b\nc a b\n");
        assert_eq!(corpus.num_tokens(), 5);
    }

    #[test]
    fn unknown_token_is_a_contract_error() {
        let err = parse_corpus("a d\n".as_bytes(), &lex()).unwrap_err();
        assert!(matches!(err, Error::Contract(ref m) if m.contains("`d`")));
    }

    #[test]
    fn invalid_utf8_is_reported() {
        let bytes: &[u8] = b"a\n\xff\xfe\n";
        assert!(matches!(parse_corpus(bytes, &lex()), Err(Error::Schema { line: 2, .. })));
    }

    #[test]
    fn fingerprint_sees_boundaries() {
        let a = Corpus::new(vec![vec![0, 1], vec![2]]);
        let b = Corpus::new(vec![vec![0], vec![1, 2]]);
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint(), a.clone().fingerprint());
    }

    #[test]
    fn contiguous_split_windows() {
        let stream: Vec<usize> = (0..11).collect();
        let batches = StreamBatches::new(&stream, 2, 2).unwrap();
        assert_eq!(batches.stream_len(), 5);
        let windows: Vec<Window> = batches.windows().collect();
        assert_eq!(windows.len(), 2);
        assert_eq!(windows[0].inputs, vec![vec![0, 5], vec![1, 6]]);
        assert_eq!(windows[0].targets, vec![vec![1, 6], vec![2, 7]]);
        assert_eq!(windows[1].inputs, vec![vec![2, 7], vec![3, 8]]);
        assert_eq!(windows[1].targets, vec![vec![3, 8], vec![4, 9]]);
        let covered: usize = windows.iter().map(|w| w.targets.len() * 2).sum();
        assert_eq!(covered, batches.num_targets());
    }

    #[test]
    fn short_streams_are_rejected() {
        assert!(StreamBatches::new(&[1, 2, 3], 2, 4).is_err());
        assert!(StreamBatches::new(&[1, 2, 3], 1, 0).is_err());
    }
}
