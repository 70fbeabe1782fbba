use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One evaluation triplet plus its conditioning inputs. Paths are resolved
/// against the manifest's directory when relative.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TripletRecord {
    pub id: String,
    pub source_person: PathBuf,
    pub garment_ref: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<PathBuf>,
    pub mask: PathBuf,
    pub densepose: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub undergarment_ref: Option<PathBuf>,
}

impl TripletRecord {
    fn resolve(mut self, base: &Path) -> Self {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.source_person);
        fix(&mut self.garment_ref);
        fix(&mut self.mask);
        fix(&mut self.densepose);
        if let Some(p) = self.ground_truth.as_mut() {
            fix(p);
        }
        if let Some(p) = self.undergarment_ref.as_mut() {
            fix(p);
        }
        self
    }
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

/// Parses JSON-lines manifest text. Blank lines are skipped but still counted
/// for error line numbers.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<TripletRecord>> {
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: TripletRecord = serde_json::from_str(line).map_err(|e| Error::Schema {
            line: line_no,
            message: e.to_string(),
        })?;
        if !valid_id(&record.id) {
            return Err(Error::Schema {
                line: line_no,
                message: format!(
                    "id {:?} must be non-empty and use only ASCII letters, digits, '-', '_' or '.'",
                    record.id
                ),
            });
        }
        if !seen.insert(record.id.clone()) {
            return Err(Error::Schema {
                line: line_no,
                message: format!("duplicate id {:?}", record.id),
            });
        }
        records.push(record.resolve(base));
    }
    if records.is_empty() {
        return Err(Error::Domain("manifest contains no records".into()));
    }
    Ok(records)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<TripletRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    parse_manifest(&text, base)
}
