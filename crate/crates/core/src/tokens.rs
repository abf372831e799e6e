//! Learnable fair-token tables and inclusive prompt assembly.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{AttributeSet, CategoryCombination};
use crate::vector::{all_finite, norm};

/// A sequence of token-embedding vectors, each of width `d_tok`.
pub type TokenSeq = Vec<Vec<f64>>;

const MAGIC: &str = "FAIRTOK 1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct AttributeLayout {
    name: String,
    categories: Vec<String>,
    tokens_per_category: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableMetadata {
    /// Prompt the tokens were trained against.
    pub prompt: String,
    pub encoder_id: String,
    pub config_hash: String,
    pub schema_hash: String,
}

/// Per-(attribute, category) token embeddings, stored as one flat parameter
/// vector so an optimizer can treat them as a single tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct FairTokenTable {
    d_tok: usize,
    layout: Vec<AttributeLayout>,
    /// Start offset into `params` of each (attribute, category) entry.
    offsets: Vec<Vec<usize>>,
    params: Vec<f64>,
    pub metadata: TableMetadata,
}

#[derive(Serialize, Deserialize)]
struct Header {
    d_tok: usize,
    parameter_count: usize,
    #[serde(flatten)]
    metadata: TableMetadata,
    #[serde(rename = "attribute")]
    layout: Vec<AttributeLayout>,
}

impl FairTokenTable {
    pub fn zeros(attr_set: &AttributeSet, d_tok: usize) -> Self {
        let layout: Vec<AttributeLayout> = attr_set
            .attributes()
            .iter()
            .map(|a| AttributeLayout {
                name: a.name.clone(),
                categories: a.categories.iter().map(|c| c.name.clone()).collect(),
                tokens_per_category: a.tokens_per_category,
            })
            .collect();
        Self::from_layout(layout, d_tok)
    }

    fn from_layout(layout: Vec<AttributeLayout>, d_tok: usize) -> Self {
        let mut offsets = Vec::with_capacity(layout.len());
        let mut at = 0;
        for a in &layout {
            let mut row = Vec::with_capacity(a.categories.len());
            for _ in &a.categories {
                row.push(at);
                at += a.tokens_per_category * d_tok;
            }
            offsets.push(row);
        }
        FairTokenTable {
            d_tok,
            layout,
            offsets,
            params: vec![0.0; at],
            metadata: TableMetadata::default(),
        }
    }

    /// Gaussian directions with each vector scaled to norm `scale`.
    pub fn random_init<R: Rng>(
        attr_set: &AttributeSet,
        d_tok: usize,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let mut table = Self::zeros(attr_set, d_tok);
        for chunk in table.params.chunks_mut(d_tok) {
            for x in chunk.iter_mut() {
                *x = rng.sample(StandardNormal);
            }
            let n = norm(chunk).max(f64::MIN_POSITIVE);
            chunk.iter_mut().for_each(|x| *x *= scale / n);
        }
        table
    }

    pub fn d_tok(&self) -> usize {
        self.d_tok
    }

    pub fn num_attributes(&self) -> usize {
        self.layout.len()
    }

    pub fn tokens_per_category(&self, m: usize) -> usize {
        self.layout[m].tokens_per_category
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Offset of entry (m, i) in the flat parameter vector.
    pub fn offset(&self, m: usize, i: usize) -> usize {
        self.offsets[m][i]
    }

    /// The `q` token vectors of category `i` of attribute `m`.
    pub fn tokens(&self, m: usize, i: usize) -> impl Iterator<Item = &[f64]> {
        let start = self.offsets[m][i];
        let len = self.layout[m].tokens_per_category * self.d_tok;
        self.params[start..start + len].chunks(self.d_tok)
    }

    pub fn set_token(&mut self, m: usize, i: usize, k: usize, value: &[f64]) {
        assert_eq!(value.len(), self.d_tok);
        let start = self.offsets[m][i] + k * self.d_tok;
        self.params[start..start + self.d_tok].copy_from_slice(value);
    }

    /// Fair tokens for `combination`, concatenated in attribute order.
    pub fn combination_tokens(&self, combination: &CategoryCombination) -> TokenSeq {
        combination
            .indices()
            .iter()
            .enumerate()
            .flat_map(|(m, &i)| self.tokens(m, i).map(<[f64]>::to_vec))
            .collect()
    }

    /// Errors unless the table was built for exactly this schema.
    pub fn check_schema(&self, attr_set: &AttributeSet) -> Result<()> {
        let expected = Self::zeros(attr_set, self.d_tok);
        if expected.layout != self.layout {
            let names: Vec<&str> = self.layout.iter().map(|a| a.name.as_str()).collect();
            return Err(Error::Schema(format!(
                "token table covers attributes {names:?} which does not match the schema"
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        all_finite(&self.params)
    }

    /// Concatenate independently trained tables (attribute order preserved).
    pub fn concat(tables: &[FairTokenTable]) -> Result<FairTokenTable> {
        let Some(first) = tables.first() else {
            return Err(Error::Validation("no token tables to concatenate".into()));
        };
        let mut layout = Vec::new();
        let mut params = Vec::new();
        for t in tables {
            if t.d_tok != first.d_tok {
                return Err(Error::Validation(format!(
                    "token width mismatch: {} vs {}",
                    t.d_tok, first.d_tok
                )));
            }
            layout.extend(t.layout.iter().cloned());
            params.extend_from_slice(&t.params);
        }
        let mut out = Self::from_layout(layout, first.d_tok);
        out.params = params;
        out.metadata = first.metadata.clone();
        Ok(out)
    }

    /// Restriction to a subset of attributes, by name, in the given order.
    pub fn select(&self, names: &[&str]) -> Result<FairTokenTable> {
        let parts = names
            .iter()
            .map(|n| {
                let m = self
                    .layout
                    .iter()
                    .position(|a| a.name == *n)
                    .ok_or_else(|| Error::Schema(format!("token table has no attribute `{n}`")))?;
                let mut t = Self::from_layout(vec![self.layout[m].clone()], self.d_tok);
                let start = self.offsets[m][0];
                let len = t.params.len();
                t.params.copy_from_slice(&self.params[start..start + len]);
                t.metadata = self.metadata.clone();
                Ok(t)
            })
            .collect::<Result<Vec<_>>>()?;
        if parts.is_empty() {
            let mut t = Self::from_layout(Vec::new(), self.d_tok);
            t.metadata = self.metadata.clone();
            return Ok(t);
        }
        Self::concat(&parts)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = Header {
            d_tok: self.d_tok,
            parameter_count: self.params.len(),
            metadata: self.metadata.clone(),
            layout: self.layout.clone(),
        };
        let text = toml::to_string(&header).map_err(|e| Error::Validation(e.to_string()))?;
        writeln!(w, "{MAGIC}")?;
        writeln!(w, "{}", text.len())?;
        w.write_all(text.as_bytes())?;
        for x in &self.params {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let bad = |what: &str| Error::Validation(format!("malformed token table: {what}"));
        let mut line = String::new();
        r.read_line(&mut line)?;
        if line.trim_end() != MAGIC {
            return Err(bad("missing magic line"));
        }
        line.clear();
        r.read_line(&mut line)?;
        let header_len: usize = line.trim().parse().map_err(|_| bad("header length"))?;
        let mut header = vec![0u8; header_len];
        r.read_exact(&mut header)?;
        let header = String::from_utf8(header).map_err(|_| bad("header is not UTF-8"))?;
        let header: Header = toml::from_str(&header).map_err(|e| bad(&e.to_string()))?;
        let mut table = Self::from_layout(header.layout, header.d_tok);
        if table.params.len() != header.parameter_count {
            return Err(bad("parameter count disagrees with layout"));
        }
        let mut buf = [0u8; 8];
        for x in table.params.iter_mut() {
            r.read_exact(&mut buf).map_err(|_| bad("truncated blob"))?;
            *x = f64::from_le_bytes(buf);
        }
        if !table.is_finite() {
            return Err(Error::Numeric(
                "token table contains non-finite values".into(),
            ));
        }
        table.metadata = header.metadata;
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::new();
        self.write_to(&mut bytes)?;
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::fs::File::open(path)?)
    }
}

/// A base prompt with the fair tokens of one combination appended.
#[derive(Debug, Clone, PartialEq)]
pub struct InclusivePrompt {
    pub base_tokens: TokenSeq,
    pub combination: CategoryCombination,
    pub assembled_tokens: TokenSeq,
}

impl InclusivePrompt {
    pub fn assemble(
        base_tokens: TokenSeq,
        table: &FairTokenTable,
        combination: &CategoryCombination,
        max_sequence_length: usize,
    ) -> Result<Self> {
        if combination.indices().len() != table.num_attributes() {
            return Err(Error::Schema(format!(
                "combination {combination} does not match a table with {} attributes",
                table.num_attributes()
            )));
        }
        let appended: usize = (0..table.num_attributes())
            .map(|m| table.tokens_per_category(m))
            .sum();
        let len = base_tokens.len() + appended;
        if len > max_sequence_length {
            return Err(Error::SequenceLength {
                len,
                max: max_sequence_length,
            });
        }
        let mut assembled = base_tokens.clone();
        assembled.extend(table.combination_tokens(combination));
        Ok(InclusivePrompt {
            base_tokens,
            combination: combination.clone(),
            assembled_tokens: assembled,
        })
    }
}
