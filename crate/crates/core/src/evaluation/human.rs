//! Manual labels and pairwise human preference tallies.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::classify::{LabelRecord, LabelSource};
use crate::error::{Error, Result};
use crate::generation::MethodTag;
use crate::schema::{AttributeSet, CategoryCombination};

/// Reads a label CSV with header `path,<attr_1>,...,<attr_M>` (attribute
/// columns in any order). Every bad row is reported, with its line number.
pub fn ingest_manual_labels<R: Read>(
    reader: R,
    attr_set: &AttributeSet,
) -> Result<Vec<LabelRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || headers.get(0) != Some("path") {
        return Err(Error::Validation(
            "label file must start with a `path` column".into(),
        ));
    }
    let mut column_of = vec![None; attr_set.len()];
    for (col, name) in headers.iter().enumerate().skip(1) {
        match attr_set.attribute_index(name) {
            Some(m) if column_of[m].is_none() => column_of[m] = Some(col),
            Some(_) => return Err(Error::Validation(format!("column `{name}` appears twice"))),
            None => {
                return Err(Error::Validation(format!(
                    "column `{name}` is not an attribute of the schema"
                )))
            }
        }
    }
    if let Some(m) = column_of.iter().position(Option::is_none) {
        return Err(Error::Validation(format!(
            "label file has no column for attribute `{}`",
            attr_set.attribute(m).name
        )));
    }

    let mut records = Vec::new();
    let mut bad = Vec::new();
    for (row, result) in rdr.records().enumerate() {
        let line = result
            .as_ref()
            .ok()
            .and_then(|r| r.position())
            .map(|p| p.line())
            .unwrap_or(row as u64 + 2);
        let rec = match result {
            Ok(r) => r,
            Err(e) => {
                bad.push(format!("line {line}: {e}"));
                continue;
            }
        };
        if rec.len() != headers.len() {
            bad.push(format!(
                "line {line}: expected {} fields, got {}",
                headers.len(),
                rec.len()
            ));
            continue;
        }
        let mut combo = Vec::with_capacity(attr_set.len());
        let mut problems = Vec::new();
        for (m, col) in column_of.iter().enumerate() {
            let a = attr_set.attribute(m);
            let cell = &rec[col.expect("checked above")];
            match a.category_index(cell) {
                Some(i) => combo.push(i),
                None => problems.push(format!("unknown category `{cell}` for `{}`", a.name)),
            }
        }
        if !problems.is_empty() {
            bad.push(format!("line {line}: {}", problems.join(", ")));
            continue;
        }
        records.push(LabelRecord {
            image: rec[0].to_string(),
            combination: CategoryCombination(combo),
            source: LabelSource::Manual,
        });
    }
    if !bad.is_empty() {
        return Err(Error::Validation(format!(
            "bad label rows:\n  {}",
            bad.join("\n  ")
        )));
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairwiseChoice {
    pub image_a_method: MethodTag,
    pub image_b_method: MethodTag,
    /// `None` is an abstention.
    pub winner: Option<MethodTag>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreferenceRate {
    pub wins: u64,
    pub comparisons: u64,
    pub rate: f64,
}

/// Keyed by `(preferred, other)`.
pub type PreferenceReport = BTreeMap<(MethodTag, MethodTag), PreferenceRate>;

pub fn preference_tally(choices: &[PairwiseChoice]) -> Result<PreferenceReport> {
    let mut counts: BTreeMap<(MethodTag, MethodTag), (u64, u64)> = BTreeMap::new();
    for (k, c) in choices.iter().enumerate() {
        let (a, b) = (c.image_a_method, c.image_b_method);
        if a == b {
            return Err(Error::Validation(format!(
                "choice {}: both images come from {a}",
                k + 1
            )));
        }
        if let Some(w) = c.winner {
            if w != a && w != b {
                return Err(Error::Validation(format!(
                    "choice {}: winner {w} is neither {a} nor {b}",
                    k + 1
                )));
            }
        }
        for (x, y) in [(a, b), (b, a)] {
            let e = counts.entry((x, y)).or_default();
            e.1 += 1;
            if c.winner == Some(x) {
                e.0 += 1;
            }
        }
    }
    Ok(counts
        .into_iter()
        .map(|(k, (wins, comparisons))| {
            (
                k,
                PreferenceRate {
                    wins,
                    comparisons,
                    rate: wins as f64 / comparisons as f64,
                },
            )
        })
        .collect())
}

/// Reads `image_a_method,image_b_method,winner`; an empty winner cell is
/// an abstention.
pub fn read_pairwise_choices<R: Read>(reader: R) -> Result<Vec<PairwiseChoice>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = row + 2;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let tag = |s: &str| {
            s.parse::<MethodTag>()
                .map_err(|e| Error::Validation(format!("line {line}: {e}")))
        };
        let winner = match field(2) {
            "" => None,
            w => Some(tag(w)?),
        };
        out.push(PairwiseChoice {
            image_a_method: tag(field(0))?,
            image_b_method: tag(field(1))?,
            winner,
        });
    }
    Ok(out)
}
