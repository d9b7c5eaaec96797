//! Tab-separated lexicon files.
//!
//! ```text
//! # comment
//! #!sememes<TAB>fruit,computer,...
//! word<TAB>sense_ordinal<TAB>sememe1,sememe2,...
//! ```
//!
//! Fields may escape `\\`, `\t`, `\n` and `\,`. The optional `#!sememes`
//! directive fixes the sememe inventory and its order; it is a comment to any
//! reader that does not know about it.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{Lexicon, LexiconBuilder};
use crate::error::{Error, Result};

const SEMEME_DIRECTIVE: &str = "#!sememes";

pub fn parse_lexicon<R: BufRead>(source: R) -> Result<Lexicon> {
    let mut builder = LexiconBuilder::new();
    for (index, line) in source.lines().enumerate() {
        let lineno = index + 1;
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if let Some(rest) = line.strip_prefix(SEMEME_DIRECTIVE) {
            let rest = rest.strip_prefix('\t').unwrap_or(rest);
            for label in split_list(rest, lineno)? {
                builder.declare_sememe(&label);
            }
            continue;
        }
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::schema(lineno, format!("expected 3 tab-separated fields, found {}", fields.len())));
        }
        let word = unescape(fields[0], lineno)?;
        if word.is_empty() {
            return Err(Error::schema(lineno, "empty word"));
        }
        let ordinal: usize = fields[1]
            .trim()
            .parse()
            .map_err(|_| Error::schema(lineno, format!("bad sense ordinal `{}`", fields[1])))?;
        let sememes = split_list(fields[2], lineno)?;
        if sememes.is_empty() {
            return Err(Error::Validation(format!("line {lineno}: sense {ordinal} of `{word}` has no sememes")));
        }
        let labels: Vec<&str> = sememes.iter().map(String::as_str).collect();
        builder.add_sense(&word, Some(ordinal), &labels).map_err(|e| match e {
            Error::Argument(message) => Error::schema(lineno, message),
            Error::Validation(message) => Error::Validation(format!("line {lineno}: {message}")),
            other => other,
        })?;
    }
    builder.build()
}

pub fn read_lexicon(path: impl AsRef<Path>) -> Result<Lexicon> {
    parse_lexicon(BufReader::new(File::open(path)?))
}

/// Emits the lexicon sorted by word id then ordinal, preceded by the sememe
/// inventory so that ids survive a round trip.
pub fn serialize_lexicon<W: Write>(lex: &Lexicon, mut out: W) -> Result<()> {
    let inventory: Vec<String> = lex.sememes().iter().map(|s| escape(s)).collect();
    writeln!(out, "{SEMEME_DIRECTIVE}\t{}", inventory.join(","))?;
    for w in lex.word_ids() {
        let word = escape(lex.word(w));
        for (ordinal, &s) in lex.senses_of(w).iter().enumerate() {
            let labels: Vec<String> = lex.sememes_of(s).iter().map(|&k| escape(lex.sememe(k))).collect();
            writeln!(out, "{word}\t{ordinal}\t{}", labels.join(","))?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_lexicon(lex: &Lexicon, path: impl AsRef<Path>) -> Result<()> {
    serialize_lexicon(lex, BufWriter::new(File::create(path)?))
}

fn escape(field: &str) -> String {
    let mut out = String::with_capacity(field.len());
    for c in field.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            ',' => out.push_str("\\,"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(field: &str, lineno: usize) -> Result<String> {
    let mut out = String::with_capacity(field.len());
    let mut chars = field.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some(',') => out.push(','),
            Some(other) => return Err(Error::schema(lineno, format!("unknown escape `\\{other}`"))),
            None => return Err(Error::schema(lineno, "dangling `\\` at end of field")),
        }
    }
    Ok(out)
}

/// Splits a comma-separated list on unescaped commas and unescapes each item.
fn split_list(field: &str, lineno: usize) -> Result<Vec<String>> {
    if field.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut items = Vec::new();
    let mut current = String::new();
    let mut chars = field.chars();
    while let Some(c) = chars.next() {
        match c {
            '\\' => {
                current.push('\\');
                match chars.next() {
                    Some(next) => current.push(next),
                    None => return Err(Error::schema(lineno, "dangling `\\` at end of field")),
                }
            }
            ',' => items.push(std::mem::take(&mut current)),
            c => current.push(c),
        }
    }
    items.push(current);
    items
        .iter()
        .map(|raw| {
            let label = unescape(raw, lineno)?;
            if label.is_empty() {
                Err(Error::schema(lineno, "empty sememe label"))
            } else {
                Ok(label)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Lexicon> {
        parse_lexicon(text.as_bytes())
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let lex = parse("# header\n\na\t0\tx,y\n# trailing\n").unwrap();
        assert_eq!(lex.num_words(), 1);
        assert_eq!(lex.edge_count(), 2);
    }

    #[test]
    fn duplicate_ordinal_reports_line() {
        let err = parse("a\t0\tx\nb\t0\ty\na\t0\tz\n").unwrap_err();
        assert!(matches!(err, Error::Schema { line: 3, .. }), "{err}");
    }

    #[test]
    fn gap_in_ordinals_is_schema_error() {
        let err = parse("a\t1\tx\n").unwrap_err();
        assert!(matches!(err, Error::Schema { line: 1, .. }));
    }

    #[test]
    fn empty_sememe_list_is_validation_error() {
        assert!(matches!(parse("a\t0\t\n").unwrap_err(), Error::Validation(_)));
    }

    #[test]
    fn repeated_sememe_is_rejected() {
        assert!(matches!(parse("a\t0\tx,y,x\n").unwrap_err(), Error::Validation(_)));
    }

    #[test]
    fn unknown_escape_is_schema_error() {
        let err = parse("a\t0\tx\\q\n").unwrap_err();
        assert!(matches!(err, Error::Schema { line: 1, .. }));
    }

    #[test]
    fn wrong_field_count() {
        assert!(matches!(parse("a\t0\n").unwrap_err(), Error::Schema { line: 1, .. }));
    }

    #[test]
    fn escapes_round_trip() {
        let lex = parse("a\\tb\t0\tx\\,y,z\\\\\n").unwrap();
        assert_eq!(lex.word(super::super::WordId(0)), "a\tb");
        assert_eq!(lex.sememes(), ["x,y", "z\\"]);
        let mut buf = Vec::new();
        serialize_lexicon(&lex, &mut buf).unwrap();
        assert_eq!(parse_lexicon(buf.as_slice()).unwrap(), lex);
    }

    #[test]
    fn interleaved_words_keep_first_appearance_ids() {
        let lex = parse("b\t0\tx\na\t0\ty\nb\t1\tz\n").unwrap();
        assert_eq!(lex.words(), ["b", "a"]);
        assert_eq!(lex.sememes(), ["x", "y", "z"]);
        let b = lex.word_id("b").unwrap();
        assert_eq!(lex.senses_of(b).len(), 2);
    }
}
