use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Paragraph {
    pub source: String,
    pub text: String,
}

/// One annotated occurrence of an attribute value in a paragraph.
/// `char_begin..char_end` are byte offsets slicing exactly to `value`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Evidence {
    pub paragraph_index: usize,
    pub char_begin: usize,
    pub char_end: usize,
    pub value: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttributeAnnotation {
    pub key: String,
    pub evidences: Vec<Evidence>,
}

/// A product: its textual context paragraphs plus gold attribute annotations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProductRecord {
    pub id: String,
    pub paragraphs: Vec<Paragraph>,
    pub attributes: Vec<AttributeAnnotation>,
}

impl ProductRecord {
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for attr in &self.attributes {
            if !seen.insert(attr.key.as_str()) {
                return Err(Error::Record {
                    product: self.id.clone(),
                    detail: format!("duplicate attribute key {:?}", attr.key),
                });
            }
            for ev in &attr.evidences {
                let para = self.paragraphs.get(ev.paragraph_index).ok_or_else(|| {
                    Error::Record {
                        product: self.id.clone(),
                        detail: format!(
                            "attribute {:?}: paragraph index {} out of range",
                            attr.key, ev.paragraph_index
                        ),
                    }
                })?;
                let slice = para.text.get(ev.char_begin..ev.char_end).ok_or_else(|| {
                    Error::Record {
                        product: self.id.clone(),
                        detail: format!(
                            "attribute {:?}: span {}..{} out of bounds",
                            attr.key, ev.char_begin, ev.char_end
                        ),
                    }
                })?;
                if slice != ev.value {
                    return Err(Error::Record {
                        product: self.id.clone(),
                        detail: format!(
                            "attribute {:?}: span slices to {:?}, annotated value is {:?}",
                            attr.key, slice, ev.value
                        ),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn attribute(&self, key: &str) -> Option<&AttributeAnnotation> {
        self.attributes.iter().find(|a| a.key == key)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadMode {
    /// First malformed line aborts the load.
    Strict,
    /// Malformed lines are skipped and reported as warnings.
    SkipInvalid,
}

#[derive(Debug)]
pub struct CorpusLoad {
    pub records: Vec<ProductRecord>,
    pub warnings: Vec<String>,
}

/// Reads a JSONL corpus (one `ProductRecord` per line) and validates every
/// record's evidence spans.
pub fn load_corpus(path: &Path, mode: LoadMode) -> Result<CorpusLoad> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: std::result::Result<ProductRecord, _> = serde_json::from_str(&line);
        let outcome = parsed
            .map_err(|e| Error::Corpus {
                line: line_no,
                detail: e.to_string(),
            })
            .and_then(|rec| {
                rec.validate().map_err(|e| Error::Corpus {
                    line: line_no,
                    detail: e.to_string(),
                })?;
                Ok(rec)
            });
        match outcome {
            Ok(rec) => records.push(rec),
            Err(e) => match mode {
                LoadMode::Strict => return Err(e),
                LoadMode::SkipInvalid => warnings.push(e.to_string()),
            },
        }
    }
    Ok(CorpusLoad { records, warnings })
}

/// Writes records as JSONL.
pub fn save_corpus(path: &Path, records: &[ProductRecord]) -> Result<()> {
    let mut out = String::new();
    for rec in records {
        out.push_str(&serde_json::to_string(rec)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn valid_line() -> String {
        serde_json::json!({
            "id": "p1",
            "paragraphs": [{"source": "title", "text": "red shoes"}],
            "attributes": [{"key": "color", "evidences": [
                {"paragraph_index": 0, "char_begin": 0, "char_end": 3, "value": "red"}
            ]}]
        })
        .to_string()
    }

    #[test]
    fn empty_file_loads_empty() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        std::fs::write(&path, "").unwrap();
        let load = load_corpus(&path, LoadMode::Strict).unwrap();
        assert!(load.records.is_empty());
    }

    #[test]
    fn one_valid_line_loads_and_validates() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        std::fs::write(&path, valid_line() + "\n").unwrap();
        let load = load_corpus(&path, LoadMode::Strict).unwrap();
        assert_eq!(load.records.len(), 1);
        assert_eq!(load.records[0].attributes[0].evidences[0].value, "red");
    }

    #[test]
    fn bad_span_is_skipped_with_line_number_in_skip_mode() {
        let bad = serde_json::json!({
            "id": "p2",
            "paragraphs": [{"source": "title", "text": "red"}],
            "attributes": [{"key": "color", "evidences": [
                {"paragraph_index": 0, "char_begin": 0, "char_end": 9, "value": "red"}
            ]}]
        })
        .to_string();
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let mut body = String::new();
        for _ in 0..2 {
            body.push_str(&valid_line());
            body.push('\n');
        }
        body.push_str(&bad);
        body.push('\n');
        std::fs::write(&path, body).unwrap();

        let load = load_corpus(&path, LoadMode::SkipInvalid).unwrap();
        assert_eq!(load.records.len(), 2);
        assert_eq!(load.warnings.len(), 1);
        assert!(load.warnings[0].contains("line 3"), "{}", load.warnings[0]);

        assert!(load_corpus(&path, LoadMode::Strict).is_err());
    }

    #[test]
    fn duplicate_attribute_keys_fail_validation() {
        let rec = ProductRecord {
            id: "p".into(),
            paragraphs: vec![],
            attributes: vec![
                AttributeAnnotation {
                    key: "color".into(),
                    evidences: vec![],
                },
                AttributeAnnotation {
                    key: "color".into(),
                    evidences: vec![],
                },
            ],
        };
        assert!(rec.validate().is_err());
    }
}
