//! Question battery files: one question per line, blank lines and `#`
//! comments skipped. Pool files for the subset experiment may add the
//! reference and current answers as tab-separated columns.

use std::path::Path;

use anyhow::{bail, Context};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolLine {
    pub question: String,
    pub answers: Option<(String, String)>,
}

pub fn parse(text: &str) -> anyhow::Result<Vec<PoolLine>> {
    let mut lines = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        let entry = match cols.as_slice() {
            [q] => PoolLine { question: q.to_string(), answers: None },
            [q, r, c] if !r.is_empty() && !c.is_empty() => PoolLine {
                question: q.to_string(),
                answers: Some((r.to_string(), c.to_string())),
            },
            _ => bail!(
                "line {}: expected a question, or question, reference answer and current answer separated by tabs",
                n + 1
            ),
        };
        if entry.question.is_empty() {
            bail!("line {}: empty question", n + 1);
        }
        lines.push(entry);
    }
    if lines.is_empty() {
        bail!("no questions found");
    }
    Ok(lines)
}

pub fn read(path: &Path) -> anyhow::Result<Vec<PoolLine>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read battery file {}", path.display()))?;
    parse(&text).with_context(|| format!("invalid battery file {}", path.display()))
}

pub fn read_questions(path: &Path) -> anyhow::Result<Vec<String>> {
    Ok(read(path)?.into_iter().map(|l| l.question).collect())
}
