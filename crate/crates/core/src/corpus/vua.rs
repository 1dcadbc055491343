//! Importer for the figurative-language shared-task release layout.
//!
//! The sentence file is a CSV with the columns `txt_id`, `sentence_id` and
//! `sentence_txt`; tokens are whitespace separated and metaphorical tokens
//! carry an `M_` prefix. The optional target file lists one target per row as
//! `<txt_id>_<sentence_id>_<1-based token offset>[,<label>]`. When it is
//! absent every token containing an alphanumeric character is a target.

use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use super::{AnnotatedInstance, Corpus, Label, RowIssue, Split};
use crate::error::{Error, Result};

const METAPHOR_PREFIX: &str = "M_";

struct Sentence {
    tokens: Vec<String>,
    marked: Vec<bool>,
}

fn open_csv(path: &Path, has_headers: bool) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(has_headers)
        .flexible(true)
        .from_reader(file))
}

fn read_sentences(path: &Path, issues: &mut Vec<RowIssue>) -> Result<Vec<(String, Sentence)>> {
    let mut reader = open_csv(path, true)?;
    let mut out = Vec::new();
    for (idx, row) in reader.records().enumerate() {
        // header is line 1
        let line = idx + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                issues.push(RowIssue {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        if row.len() < 3 {
            issues.push(RowIssue {
                line,
                message: format!("expected 3 columns, found {}", row.len()),
            });
            continue;
        }
        let id = format!("{}_{}", row[0].trim(), row[1].trim());
        let mut tokens = Vec::new();
        let mut marked = Vec::new();
        for raw in row[2].split_whitespace() {
            match raw.strip_prefix(METAPHOR_PREFIX) {
                Some(rest) if !rest.is_empty() => {
                    tokens.push(rest.to_string());
                    marked.push(true);
                }
                _ => {
                    tokens.push(raw.to_string());
                    marked.push(false);
                }
            }
        }
        if tokens.is_empty() {
            issues.push(RowIssue {
                line,
                message: format!("sentence {id} has no tokens"),
            });
            continue;
        }
        out.push((id, Sentence { tokens, marked }));
    }
    Ok(out)
}

fn parse_target_id(id: &str) -> Option<(String, usize)> {
    let (sentence, offset) = id.trim().rsplit_once('_')?;
    let offset: usize = offset.parse().ok()?;
    Some((sentence.to_string(), offset))
}

/// Reads one split of a shared-task release.
pub fn read_vua_shared_task(sentences: &Path, targets: Option<&Path>, split: Split) -> Result<Corpus> {
    let mut issues = Vec::new();
    let rows = read_sentences(sentences, &mut issues)?;
    let mut instances = Vec::new();

    match targets {
        None => {
            for (id, s) in &rows {
                for (i, tok) in s.tokens.iter().enumerate() {
                    if !tok.chars().any(char::is_alphanumeric) {
                        continue;
                    }
                    let label = if s.marked[i] { Label::Metaphor } else { Label::Literal };
                    instances.push(AnnotatedInstance::new(id.clone(), s.tokens.clone(), i, label, split)?);
                }
            }
        }
        Some(path) => {
            let by_id: HashMap<&str, &Sentence> = rows.iter().map(|(id, s)| (id.as_str(), s)).collect();
            let mut reader = open_csv(path, false)?;
            for (idx, row) in reader.records().enumerate() {
                let line = idx + 1;
                let row = match row {
                    Ok(r) => r,
                    Err(e) => {
                        issues.push(RowIssue {
                            line,
                            message: e.to_string(),
                        });
                        continue;
                    }
                };
                let Some((sentence_id, offset)) = row.get(0).and_then(parse_target_id) else {
                    issues.push(RowIssue {
                        line,
                        message: format!("unparseable target id `{}`", row.get(0).unwrap_or("")),
                    });
                    continue;
                };
                let Some(sentence) = by_id.get(sentence_id.as_str()) else {
                    issues.push(RowIssue {
                        line,
                        message: format!("target refers to unknown sentence {sentence_id}"),
                    });
                    continue;
                };
                if offset == 0 || offset > sentence.tokens.len() {
                    return Err(Error::Validation(format!(
                        "{}:{line}: token offset {offset} out of range for sentence {sentence_id} ({} tokens)",
                        path.display(),
                        sentence.tokens.len()
                    )));
                }
                let index = offset - 1;
                let label = match row.get(1).map(str::trim).filter(|s| !s.is_empty()) {
                    Some(l) => match l.parse::<i64>().map_err(|e| e.to_string()).and_then(|v| {
                        Label::from_int(v).map_err(|e| e.to_string())
                    }) {
                        Ok(label) => label,
                        Err(msg) => {
                            issues.push(RowIssue { line, message: msg });
                            continue;
                        }
                    },
                    None if sentence.marked[index] => Label::Metaphor,
                    None => Label::Literal,
                };
                instances.push(AnnotatedInstance::new(
                    sentence_id,
                    sentence.tokens.clone(),
                    index,
                    label,
                    split,
                )?);
            }
        }
    }
    if !issues.is_empty() {
        log::warn!("{}: {} malformed row(s) skipped", sentences.display(), issues.len());
    }
    Corpus::with_issues(instances, issues)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SENTENCES: &str = "\"txt_id\",\"sentence_id\",\"sentence_txt\"\n\
\"a1h\",\"1\",\"He turned his back to the M_cold wind .\"\n\
\"a1h\",\"2\",\"I M_see why you are angry\"\n";

    #[test]
    fn labels_come_from_markers_without_target_list() {
        let dir = tempfile::tempdir().unwrap();
        let s = dir.path().join("s.csv");
        std::fs::write(&s, SENTENCES).unwrap();
        let c = read_vua_shared_task(&s, None, Split::Test).unwrap();
        // 8 + 6 word tokens; "." is skipped
        assert_eq!(c.len(), 8 + 6);
        let cold = c.instances().iter().find(|i| i.target_word() == "cold").unwrap();
        assert_eq!(cold.label, Label::Metaphor);
        assert_eq!(cold.sentence_id, "a1h_1");
        assert!(c.instances().iter().all(|i| i.split == Split::Test));
    }

    #[test]
    fn target_list_selects_and_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let s = dir.path().join("s.csv");
        let t = dir.path().join("t.csv");
        std::fs::write(&s, SENTENCES).unwrap();
        std::fs::write(&t, "a1h_1_4,0\na1h_2_2\nbogus\na1h_9_1,1\n").unwrap();
        let c = read_vua_shared_task(&s, Some(&t), Split::Train).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.instances()[0].target_word(), "back");
        assert_eq!(c.instances()[1].label, Label::Metaphor);
        assert_eq!(c.issues().len(), 2);
    }

    #[test]
    fn out_of_range_offset_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let s = dir.path().join("s.csv");
        let t = dir.path().join("t.csv");
        std::fs::write(&s, SENTENCES).unwrap();
        std::fs::write(&t, "a1h_2_1,0\na1h_2_40,1\n").unwrap();
        let err = read_vua_shared_task(&s, Some(&t), Split::Train).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
    }
}
