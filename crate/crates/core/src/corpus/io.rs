use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Document, LabeledPair, Role};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocFormat {
    Jsonl,
    Tsv,
}

impl std::str::FromStr for DocFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(DocFormat::Jsonl),
            "tsv" => Ok(DocFormat::Tsv),
            other => Err(format!("unknown document format {other:?}")),
        }
    }
}

const TSV_HEADER: &str = "doc_id\trole\tlanguage\ttext";

/// Reads documents, collapsing exact duplicates and rejecting id conflicts.
///
/// Line numbers in errors are 1-based. Blank lines are skipped.
pub fn ingest_documents(path: &Path, format: DocFormat) -> Result<Vec<Document>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);

    let mut docs: Vec<Document> = Vec::new();
    let mut by_id: HashMap<String, usize> = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        if format == DocFormat::Tsv && line_no == 1 && line == TSV_HEADER {
            continue;
        }
        let doc = match format {
            DocFormat::Jsonl => parse_jsonl_document(&line, line_no)?,
            DocFormat::Tsv => parse_tsv_document(&line, line_no)?,
        };
        if doc.doc_id.is_empty() {
            return Err(Error::Ingest {
                line: line_no,
                reason: "empty doc_id".into(),
            });
        }
        match by_id.get(&doc.doc_id) {
            Some(&existing) if docs[existing].text == doc.text => {}
            Some(_) => return Err(Error::Conflict { doc_id: doc.doc_id }),
            None => {
                by_id.insert(doc.doc_id.clone(), docs.len());
                docs.push(doc);
            }
        }
    }
    Ok(docs)
}

fn parse_jsonl_document(line: &str, line_no: usize) -> Result<Document> {
    serde_json::from_str(line).map_err(|e| Error::Ingest {
        line: line_no,
        reason: e.to_string(),
    })
}

fn parse_tsv_document(line: &str, line_no: usize) -> Result<Document> {
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() != 4 {
        return Err(Error::Ingest {
            line: line_no,
            reason: format!("expected 4 tab-separated columns, found {}", cols.len()),
        });
    }
    let role: Role = cols[1].parse().map_err(|reason| Error::Ingest {
        line: line_no,
        reason,
    })?;
    Ok(Document::new(cols[0], role, cols[2], unescape_tsv(cols[3])))
}

fn unescape_tsv(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

fn escape_tsv(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(BufWriter::new(f))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = create(path)?;
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_documents(path: &Path, docs: &[Document]) -> Result<()> {
    write_jsonl(path, docs)
}

/// Writes the TSV variant without a header row.
pub fn write_documents_tsv(path: &Path, docs: &[Document]) -> Result<()> {
    let mut w = create(path)?;
    for d in docs {
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            d.doc_id,
            d.role,
            d.language,
            escape_tsv(&d.text)
        )
        .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_pairs(path: &Path, pairs: &[LabeledPair]) -> Result<()> {
    write_jsonl(path, pairs)
}

/// Reads a pairs file, validating label/source agreement and pair uniqueness.
pub fn read_pairs(path: &Path) -> Result<Vec<LabeledPair>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: LabeledPair = serde_json::from_str(&line).map_err(|e| Error::Ingest {
            line: line_no,
            reason: e.to_string(),
        })?;
        if !pair.is_consistent() {
            return Err(Error::Ingest {
                line: line_no,
                reason: format!("label {} inconsistent with source {:?}", pair.label, pair.source),
            });
        }
        if !seen.insert((pair.resume_id.clone(), pair.vacancy_id.clone())) {
            return Err(Error::Ingest {
                line: line_no,
                reason: format!("duplicate pair ({}, {})", pair.resume_id, pair.vacancy_id),
            });
        }
        pairs.push(pair);
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::LabelSource;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn ingests_three_valid_records() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "d.jsonl",
            concat!(
                r#"{"doc_id":"r1","role":"resume","language":"en","text":"I weld."}"#, "\n",
                r#"{"doc_id":"v1","role":"vacancy","language":"nl","text":"Wij zoeken."}"#, "\n",
                r#"{"doc_id":"r2","role":"resume","language":"en","text":"I drive."}"#, "\n",
            ),
        );
        let docs = ingest_documents(&p, DocFormat::Jsonl).unwrap();
        assert_eq!(docs.len(), 3);
        assert_eq!(docs[1].role, Role::Vacancy);
        assert_eq!(docs[1].language, "nl");
    }

    #[test]
    fn missing_role_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "d.jsonl",
            concat!(
                r#"{"doc_id":"r1","role":"resume","language":"en","text":"a"}"#, "\n",
                r#"{"doc_id":"r2","language":"en","text":"b"}"#, "\n",
            ),
        );
        match ingest_documents(&p, DocFormat::Jsonl) {
            Err(Error::Ingest { line, reason }) => {
                assert_eq!(line, 2);
                assert!(reason.contains("role"), "{reason}");
            }
            other => panic!("expected ingest error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_collapse_or_conflict() {
        let dir = tempfile::tempdir().unwrap();
        let same = write(
            &dir,
            "same.jsonl",
            concat!(
                r#"{"doc_id":"r1","role":"resume","language":"en","text":"same"}"#, "\n",
                r#"{"doc_id":"r1","role":"resume","language":"en","text":"same"}"#, "\n",
            ),
        );
        assert_eq!(ingest_documents(&same, DocFormat::Jsonl).unwrap().len(), 1);

        let clash = write(
            &dir,
            "clash.jsonl",
            concat!(
                r#"{"doc_id":"r1","role":"resume","language":"en","text":"one"}"#, "\n",
                r#"{"doc_id":"r1","role":"resume","language":"en","text":"two"}"#, "\n",
            ),
        );
        assert!(matches!(
            ingest_documents(&clash, DocFormat::Jsonl),
            Err(Error::Conflict { doc_id }) if doc_id == "r1"
        ));
    }

    #[test]
    fn tsv_roundtrip_with_escapes() {
        let dir = tempfile::tempdir().unwrap();
        let docs = vec![
            Document::new("r1", Role::Resume, "en", "line one\nline\ttwo \\ end"),
            Document::new("v1", Role::Vacancy, "nl", "plain"),
        ];
        let p = dir.path().join("d.tsv");
        write_documents_tsv(&p, &docs).unwrap();
        assert_eq!(ingest_documents(&p, DocFormat::Tsv).unwrap(), docs);

        let bad = write(&dir, "bad.tsv", "r1\tresume\ten\n");
        assert!(matches!(
            ingest_documents(&bad, DocFormat::Tsv),
            Err(Error::Ingest { line: 1, .. })
        ));
    }

    #[test]
    fn pairs_file_rejects_inconsistent_label() {
        let dir = tempfile::tempdir().unwrap();
        let ok = vec![
            LabeledPair::new("r1", "v1", LabelSource::ConsultantPositive),
            LabeledPair::new("r2", "v1", LabelSource::RandomNegative),
        ];
        let p = dir.path().join("p.jsonl");
        write_pairs(&p, &ok).unwrap();
        assert_eq!(read_pairs(&p).unwrap(), ok);

        let bad = write(
            &dir,
            "bad.jsonl",
            r#"{"resume_id":"r","vacancy_id":"v","label":1,"source":"random_negative"}"#,
        );
        assert!(matches!(read_pairs(&bad), Err(Error::Ingest { line: 1, .. })));
    }
}
