use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EmbeddingMatrix;
use crate::corpus::{AgeBucket, Gender, UserProfile};
use crate::error::{Error, Result};
use crate::util::binio;

/// Prefix of embedding column names.
pub const EMB_PREFIX: &str = "emb:";

/// Per-user regression inputs, row-major U × D, with one name per column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    pub columns: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    rows: usize,
    cols: usize,
    columns: Vec<String>,
}

impl CovariateMatrix {
    pub fn new(rows: usize, columns: Vec<String>, data: Vec<f64>) -> Result<Self> {
        let cols = columns.len();
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                what: "covariate data length",
                expected: rows * cols,
                got: data.len(),
            });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("non-finite covariate".into()));
        }
        Ok(CovariateMatrix {
            rows,
            cols,
            data,
            columns,
        })
    }

    /// A U × 0 matrix (no covariates).
    pub fn empty(rows: usize) -> Self {
        CovariateMatrix {
            rows,
            cols: 0,
            data: Vec::new(),
            columns: Vec::new(),
        }
    }

    pub fn row(&self, u: usize) -> &[f64] {
        &self.data[u * self.cols..(u + 1) * self.cols]
    }

    pub fn subset_rows(&self, idx: &[usize]) -> CovariateMatrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &u in idx {
            data.extend_from_slice(self.row(u));
        }
        CovariateMatrix {
            rows: idx.len(),
            cols: self.cols,
            data,
            columns: self.columns.clone(),
        }
    }

    pub fn select_columns(&self, keep: impl Fn(&str) -> bool) -> CovariateMatrix {
        let idx: Vec<usize> = (0..self.cols).filter(|&j| keep(&self.columns[j])).collect();
        let mut data = Vec::with_capacity(self.rows * idx.len());
        for u in 0..self.rows {
            let r = self.row(u);
            data.extend(idx.iter().map(|&j| r[j]));
        }
        CovariateMatrix {
            rows: self.rows,
            cols: idx.len(),
            data,
            columns: idx.iter().map(|&j| self.columns[j].clone()).collect(),
        }
    }

    /// Drop the node-embedding block.
    pub fn without_embedding(&self) -> CovariateMatrix {
        self.select_columns(|c| !c.starts_with(EMB_PREFIX))
    }

    /// Column-standardized copy (mean 0, population variance 1). Columns with
    /// variance below `floor` become all zeros.
    pub fn standardized(&self, floor: f64) -> CovariateMatrix {
        let mut out = self.clone();
        for j in 0..self.cols {
            standardize_column(&mut out.data, self.rows, self.cols, j, floor);
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        binio::write_f64(&dir.join("covariates.f64"), &self.data)?;
        binio::write_json(
            &dir.join("covariates.json"),
            &Sidecar {
                rows: self.rows,
                cols: self.cols,
                columns: self.columns.clone(),
            },
        )
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let side: Sidecar = binio::read_json(&dir.join("covariates.json"))?;
        let data = binio::read_f64(&dir.join("covariates.f64"), side.rows * side.cols)?;
        CovariateMatrix::new(side.rows, side.columns, data)
    }
}

fn standardize_column(data: &mut [f64], rows: usize, cols: usize, j: usize, floor: f64) {
    if rows == 0 {
        return;
    }
    let mean = (0..rows).map(|u| data[u * cols + j]).sum::<f64>() / rows as f64;
    let var = (0..rows)
        .map(|u| (data[u * cols + j] - mean).powi(2))
        .sum::<f64>()
        / rows as f64;
    for u in 0..rows {
        let x = &mut data[u * cols + j];
        *x = if var < floor {
            0.0
        } else {
            (*x - mean) / var.sqrt()
        };
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncodingConfig {
    /// Most frequent countries kept as their own column; the rest map to "other".
    pub country_top_k: usize,
    pub demographics: bool,
    pub embedding: bool,
    pub variance_floor: f64,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        EncodingConfig {
            country_top_k: 30,
            demographics: true,
            embedding: true,
            variance_floor: 1e-12,
        }
    }
}

/// x_u = one-hot(gender) ⧺ one-hot(age) ⧺ one-hot(country) ⧺ standardized embedding.
pub fn covariates(
    profiles: &[UserProfile],
    emb: Option<&EmbeddingMatrix>,
    enc: &EncodingConfig,
) -> Result<CovariateMatrix> {
    let u = profiles.len();
    if let Some(e) = emb {
        if e.rows != u {
            return Err(Error::Dimension {
                what: "embedding rows vs profiles",
                expected: u,
                got: e.rows,
            });
        }
    }
    let mut columns: Vec<String> = Vec::new();
    let mut countries: Vec<String> = Vec::new();
    if enc.demographics {
        columns.extend(Gender::ALL.iter().map(|g| format!("gender={}", g.as_str())));
        columns.extend(AgeBucket::ALL.iter().map(|a| format!("age={}", a.as_str())));
        let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
        for p in profiles {
            if let Some(c) = &p.country {
                *freq.entry(c.as_str()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = freq.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        countries = ranked
            .into_iter()
            .take(enc.country_top_k)
            .map(|(c, _)| c.to_string())
            .collect();
        columns.extend(countries.iter().map(|c| format!("country={c}")));
        columns.push("country=other".into());
        columns.push("country=unspecified".into());
    }
    let demo_cols = columns.len();
    let emb_dim = match (enc.embedding, emb) {
        (true, Some(e)) => e.dim,
        _ => 0,
    };
    columns.extend((0..emb_dim).map(|k| format!("{EMB_PREFIX}{k}")));
    let cols = columns.len();

    let mut data = vec![0.0; u * cols];
    for (i, p) in profiles.iter().enumerate() {
        let row = &mut data[i * cols..(i + 1) * cols];
        if enc.demographics {
            let g = Gender::ALL.iter().position(|&g| g == p.gender).unwrap();
            row[g] = 1.0;
            let a = AgeBucket::ALL
                .iter()
                .position(|&a| a == p.age_bucket)
                .unwrap();
            row[3 + a] = 1.0;
            let base = 3 + AgeBucket::ALL.len();
            let c = match &p.country {
                None => countries.len() + 1,
                Some(c) => countries
                    .iter()
                    .position(|x| x == c)
                    .unwrap_or(countries.len()),
            };
            row[base + c] = 1.0;
        }
        if emb_dim > 0 {
            let e = emb.unwrap();
            for k in 0..emb_dim {
                row[demo_cols + k] = e.get(i, k) as f64;
            }
        }
    }
    for j in demo_cols..cols {
        standardize_column(&mut data, u, cols, j, enc.variance_floor);
    }
    CovariateMatrix::new(u, columns, data)
}
