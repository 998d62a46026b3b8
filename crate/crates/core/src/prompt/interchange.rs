//! The `--id_prompt` / `--frame_prompt_list` text format.
//!
//! ```text
//! --id_prompt "<identity prompt>"
//! --frame_prompt_list
//!   "<frame 1>"
//!   "<frame 2>"
//! ```
//!
//! Export is bit-exact: one line per token, frames indented by two spaces,
//! every line ending in a space and a newline, as in the published corpus. Inside quotes `"` is written as `\"`, a backslash as
//! `\\` and a newline as `\n`. Several records are separated by one blank
//! line. The parser accepts any whitespace between tokens and keeps unknown
//! backslash sequences verbatim.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::PromptBundle;

pub const ID_PROMPT_FLAG: &str = "--id_prompt";
pub const FRAME_LIST_FLAG: &str = "--frame_prompt_list";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterchangeRecord {
    pub id_prompt: String,
    pub frame_prompts: Vec<String>,
}

impl InterchangeRecord {
    pub fn from_bundle(bundle: &PromptBundle) -> Self {
        Self {
            id_prompt: bundle.identity.text.clone(),
            frame_prompts: bundle.pages.iter().map(|p| p.text.clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{}line {line}, column {column}: {message}", record.map(|r| format!("record {r}: ")).unwrap_or_default())]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
    /// 1-based record index for multi-record input.
    pub record: Option<usize>,
}

pub fn export_interchange(bundle: &PromptBundle) -> String {
    export_record(&InterchangeRecord::from_bundle(bundle))
}

pub fn export_record(record: &InterchangeRecord) -> String {
    let mut out = format!("{ID_PROMPT_FLAG} \"{}\" \n{FRAME_LIST_FLAG} \n", escape(&record.id_prompt));
    for frame in &record.frame_prompts {
        out.push_str("  \"");
        out.push_str(&escape(frame));
        out.push_str("\" \n");
    }
    out
}

pub fn export_records(records: &[InterchangeRecord]) -> String {
    records
        .iter()
        .map(export_record)
        .collect::<Vec<_>>()
        .join("\n")
}

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out
}

/// Parses exactly one record.
pub fn parse_interchange(text: &str) -> Result<InterchangeRecord, ParseError> {
    let mut records = parse_all(text)?;
    match records.len() {
        1 => Ok(records.remove(0)),
        _ => {
            let (line, column) = records_position(text, 1);
            Err(ParseError {
                line,
                column,
                message: format!("expected one record, found {}", records.len()),
                record: Some(2),
            })
        }
    }
}

/// Parses one or more records. Errors carry the 1-based record index.
pub fn parse_records(text: &str) -> Result<Vec<InterchangeRecord>, ParseError> {
    parse_all(text)
}

fn records_position(text: &str, skip: usize) -> (usize, usize) {
    let tokens = match tokenize(text) {
        Ok(t) => t,
        Err(_) => return (1, 1),
    };
    tokens
        .iter()
        .filter(|t| matches!(&t.kind, TokenKind::Flag(f) if f == ID_PROMPT_FLAG))
        .nth(skip)
        .map_or((1, 1), |t| (t.line, t.column))
}

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Flag(String),
    Quoted(String),
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    line: usize,
    column: usize,
}

fn tokenize(text: &str) -> Result<Vec<Token>, ParseError> {
    let mut tokens = Vec::new();
    let mut chars = text.chars().peekable();
    let (mut line, mut column) = (1usize, 1usize);
    let advance = |c: char, line: &mut usize, column: &mut usize| {
        if c == '\n' {
            *line += 1;
            *column = 1;
        } else {
            *column += 1;
        }
    };
    while let Some(&c) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
            advance(c, &mut line, &mut column);
            continue;
        }
        let (start_line, start_column) = (line, column);
        if c == '"' {
            chars.next();
            advance(c, &mut line, &mut column);
            let mut value = String::new();
            let mut closed = false;
            while let Some(c) = chars.next() {
                advance(c, &mut line, &mut column);
                match c {
                    '"' => {
                        closed = true;
                        break;
                    }
                    '\\' => match chars.next() {
                        Some(escaped) => {
                            advance(escaped, &mut line, &mut column);
                            match escaped {
                                '"' => value.push('"'),
                                '\\' => value.push('\\'),
                                'n' => value.push('\n'),
                                other => {
                                    value.push('\\');
                                    value.push(other);
                                }
                            }
                        }
                        None => value.push('\\'),
                    },
                    c => value.push(c),
                }
            }
            if !closed {
                return Err(ParseError {
                    line: start_line,
                    column: start_column,
                    message: "unterminated quoted string".into(),
                    record: None,
                });
            }
            tokens.push(Token {
                kind: TokenKind::Quoted(value),
                line: start_line,
                column: start_column,
            });
        } else {
            let mut word = String::new();
            while let Some(&c) = chars.peek() {
                if c.is_whitespace() || c == '"' {
                    break;
                }
                word.push(c);
                chars.next();
                advance(c, &mut line, &mut column);
            }
            if !word.starts_with("--") {
                return Err(ParseError {
                    line: start_line,
                    column: start_column,
                    message: format!("unexpected text {word:?}"),
                    record: None,
                });
            }
            tokens.push(Token {
                kind: TokenKind::Flag(word),
                line: start_line,
                column: start_column,
            });
        }
    }
    Ok(tokens)
}

fn parse_all(text: &str) -> Result<Vec<InterchangeRecord>, ParseError> {
    let tokens = tokenize(text).map_err(|mut e| {
        e.record = Some(record_at_line(text, e.line));
        e
    })?;
    let eof = {
        let line = text.lines().count().max(1);
        let column = text.lines().last().map_or(0, |l| l.chars().count()) + 1;
        (line, column)
    };
    if tokens.is_empty() {
        return Err(ParseError {
            line: eof.0,
            column: eof.1,
            message: format!("missing {ID_PROMPT_FLAG}"),
            record: Some(1),
        });
    }
    let mut records = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let record_no = records.len() + 1;
        let err = |t: Option<&Token>, message: String| {
            let (line, column) = t.map_or(eof, |t| (t.line, t.column));
            ParseError {
                line,
                column,
                message,
                record: Some(record_no),
            }
        };
        match &tokens[i].kind {
            TokenKind::Flag(f) if f == ID_PROMPT_FLAG => {}
            _ => return Err(err(Some(&tokens[i]), format!("missing {ID_PROMPT_FLAG}"))),
        }
        let id_prompt = match tokens.get(i + 1).map(|t| &t.kind) {
            Some(TokenKind::Quoted(s)) => s.clone(),
            _ => {
                return Err(err(
                    tokens.get(i + 1),
                    format!("{ID_PROMPT_FLAG} must be followed by a quoted prompt"),
                ))
            }
        };
        match tokens.get(i + 2).map(|t| &t.kind) {
            Some(TokenKind::Flag(f)) if f == FRAME_LIST_FLAG => {}
            _ => return Err(err(tokens.get(i + 2), format!("missing {FRAME_LIST_FLAG}"))),
        }
        i += 3;
        let mut frames = Vec::new();
        while let Some(Token {
            kind: TokenKind::Quoted(s),
            ..
        }) = tokens.get(i)
        {
            frames.push(s.clone());
            i += 1;
        }
        if frames.is_empty() {
            return Err(err(tokens.get(i), "frame prompt list is empty".into()));
        }
        if let Some(t) = tokens.get(i) {
            if !matches!(&t.kind, TokenKind::Flag(f) if f == ID_PROMPT_FLAG) {
                return Err(err(Some(t), "unexpected token after frame prompt list".into()));
            }
        }
        records.push(InterchangeRecord {
            id_prompt,
            frame_prompts: frames,
        });
    }
    Ok(records)
}

fn record_at_line(text: &str, line: usize) -> usize {
    text.lines()
        .take(line)
        .filter(|l| l.trim_start().starts_with(ID_PROMPT_FLAG))
        .count()
        .max(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn export_layout_is_exact() {
        let record = InterchangeRecord {
            id_prompt: "A fox.".into(),
            frame_prompts: vec!["one".into(), "two".into()],
        };
        assert_eq!(
            export_record(&record),
            "--id_prompt \"A fox.\" \n--frame_prompt_list \n  \"one\" \n  \"two\" \n"
        );
    }

    #[test]
    fn quotes_are_escaped_and_restored() {
        let record = InterchangeRecord {
            id_prompt: "a \"quoted\" fox \\ slash".into(),
            frame_prompts: vec!["line\nbreak".into()],
        };
        let text = export_record(&record);
        assert!(text.contains("a \\\"quoted\\\" fox"));
        assert_eq!(parse_interchange(&text).unwrap(), record);
    }

    #[test]
    fn tolerant_of_whitespace_and_trailing_spaces() {
        let text = "\n--id_prompt   \"A fox.\" \n--frame_prompt_list \n\t\"one\" \"two\"   \n";
        let r = parse_interchange(text).unwrap();
        assert_eq!(r.frame_prompts, vec!["one", "two"]);
    }

    #[test]
    fn errors_carry_positions() {
        let e = parse_interchange("").unwrap_err();
        assert!(e.message.contains("--id_prompt"));
        let e = parse_interchange("--id_prompt \"A\"\n--frame_prompt_list\n  \"open").unwrap_err();
        assert_eq!((e.line, e.column), (3, 3));
        assert!(e.message.contains("unterminated"));
        let e = parse_interchange("--id_prompt \"A\"\n--frame_prompt_list\n").unwrap_err();
        assert!(e.message.contains("empty"));
        let e = parse_interchange("--frame_prompt_list \"x\"").unwrap_err();
        assert_eq!((e.line, e.column), (1, 1));
    }

    #[test]
    fn multi_record_error_names_record() {
        let good = "--id_prompt \"A\"\n--frame_prompt_list\n  \"x\"\n";
        let bad = "--id_prompt \"B\"\n--frame_prompt_list\n";
        let text = format!("{good}\n{good}\n{bad}\n{good}");
        let e = parse_records(&text).unwrap_err();
        assert_eq!(e.record, Some(3));
        let text = format!("{good}\n{good}");
        assert_eq!(parse_records(&text).unwrap().len(), 2);
        assert!(parse_interchange(&text).is_err());
    }
}
