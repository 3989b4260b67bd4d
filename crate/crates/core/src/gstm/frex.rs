use serde::{Deserialize, Serialize};

/// One word's scores within a group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrexEntry {
    pub word: u32,
    /// ECDF rank of β_gw within the group.
    pub frequency: f64,
    /// ECDF rank of β_gw / Σ_g' β_g'w within the group.
    pub exclusivity: f64,
    pub frex: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrexTable {
    pub omega: f64,
    /// Per group, sorted by FREX descending (ties to the lower word index).
    pub groups: Vec<Vec<FrexEntry>>,
}

/// Fraction of entries ≤ each entry.
fn ecdf(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .map(|x| {
            sorted.partition_point(|s| s.total_cmp(x) != std::cmp::Ordering::Greater) as f64 / n
        })
        .collect()
}

/// FREX = (ω/E + (1−ω)/F)⁻¹ per (group, word). `beta` is G × W.
pub fn frex(beta: &[f64], groups: usize, vocab: usize, omega: f64) -> FrexTable {
    let mut col = vec![0.0; vocab];
    for g in 0..groups {
        for (j, c) in col.iter_mut().enumerate() {
            *c += beta[g * vocab + j];
        }
    }
    let table = (0..groups)
        .map(|g| {
            let row = &beta[g * vocab..(g + 1) * vocab];
            let excl: Vec<f64> = row
                .iter()
                .zip(&col)
                .map(|(b, c)| if *c > 0.0 { b / c } else { 0.0 })
                .collect();
            let f = ecdf(row);
            let e = ecdf(&excl);
            let mut entries: Vec<FrexEntry> = (0..vocab)
                .map(|j| FrexEntry {
                    word: j as u32,
                    frequency: f[j],
                    exclusivity: e[j],
                    frex: 1.0 / (omega / e[j] + (1.0 - omega) / f[j]),
                })
                .collect();
            entries.sort_by(|a, b| b.frex.total_cmp(&a.frex).then(a.word.cmp(&b.word)));
            entries
        })
        .collect();
    FrexTable {
        omega,
        groups: table,
    }
}

impl FrexTable {
    pub fn top_words(&self, g: usize, n: usize) -> Vec<u32> {
        self.groups[g].iter().take(n).map(|e| e.word).collect()
    }

    /// `frex.csv` body with one row per (group, rank).
    pub fn to_csv(&self, vocab: &[String], top: usize) -> String {
        let mut out = String::from("group,rank,word,frequency,exclusivity,frex\n");
        for (g, entries) in self.groups.iter().enumerate() {
            for (r, e) in entries.iter().take(top).enumerate() {
                out.push_str(&format!(
                    "{g},{},{},{:.6},{:.6},{:.6}\n",
                    r + 1,
                    vocab[e.word as usize],
                    e.frequency,
                    e.exclusivity,
                    e.frex
                ));
            }
        }
        out
    }
}
