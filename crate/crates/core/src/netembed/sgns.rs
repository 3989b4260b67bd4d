//! Skip-gram with negative sampling over a walk corpus.
//!
//! Parameters live in `AtomicU32` cells holding `f32` bits. Deterministic mode
//! trains on one thread in corpus order and is bit-reproducible. Fast mode
//! splits the corpus across threads that update shared parameters without
//! locks (relaxed loads and stores), so it only satisfies statistical
//! invariants.

use std::sync::atomic::{AtomicU32, Ordering};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::util::alias::AliasTable;
use crate::util::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    #[default]
    Deterministic,
    Fast,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgnsConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f32,
    /// Step size never decays below `learning_rate * min_lr_frac`.
    pub min_lr_frac: f32,
    pub seed: u64,
    pub mode: TrainMode,
}

impl Default for SgnsConfig {
    fn default() -> Self {
        SgnsConfig {
            dim: 64,
            window: 10,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
            min_lr_frac: 1e-4,
            seed: 0,
            mode: TrainMode::Deterministic,
        }
    }
}

struct Params {
    dim: usize,
    input: Vec<AtomicU32>,
    output: Vec<AtomicU32>,
}

#[inline]
fn ld(c: &AtomicU32) -> f32 {
    f32::from_bits(c.load(Ordering::Relaxed))
}

#[inline]
fn st(c: &AtomicU32, v: f32) {
    c.store(v.to_bits(), Ordering::Relaxed)
}

#[inline]
fn sigmoid(x: f32) -> f32 {
    if x > 30.0 {
        1.0
    } else if x < -30.0 {
        0.0
    } else {
        1.0 / (1.0 + (-x).exp())
    }
}

/// Trained embeddings plus the per-epoch loss on a fixed evaluation sample.
#[derive(Debug, Clone)]
pub struct SgnsOutput {
    pub vectors: Vec<f32>,
    pub dim: usize,
    pub epoch_losses: Vec<f64>,
    /// Nodes that never occur in a (center, context) pair.
    pub untrained: Vec<usize>,
}

struct Trainer<'a> {
    p: &'a Params,
    cfg: &'a SgnsConfig,
    noise: &'a AliasTable,
    total_pairs: f64,
}

impl Trainer<'_> {
    fn lr(&self, done: f64) -> f32 {
        let frac = (1.0 - done / self.total_pairs).max(self.cfg.min_lr_frac as f64);
        self.cfg.learning_rate * frac as f32
    }

    /// One (center, context) update. Returns the pair's loss.
    fn update<R: Rng>(
        &self,
        rng: &mut R,
        center: usize,
        context: usize,
        lr: f32,
        grad: &mut [f32],
        h: &mut [f32],
    ) -> f64 {
        let d = self.p.dim;
        let inp = &self.p.input[center * d..(center + 1) * d];
        for (hk, c) in h.iter_mut().zip(inp) {
            *hk = ld(c);
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0f64;
        for k in 0..=self.cfg.negatives {
            let (target, label) = if k == 0 {
                (context, 1.0f32)
            } else {
                let t = self.noise.sample(rng);
                if t == context {
                    continue;
                }
                (t, 0.0f32)
            };
            let out = &self.p.output[target * d..(target + 1) * d];
            let dotp: f32 = h.iter().zip(out).map(|(a, b)| a * ld(b)).sum();
            let f = sigmoid(dotp);
            let pl = if label > 0.5 { f } else { 1.0 - f };
            loss -= (pl.max(1e-7) as f64).ln();
            let g = (label - f) * lr;
            for ((gk, o), hk) in grad.iter_mut().zip(out).zip(h.iter()) {
                let ov = ld(o);
                *gk += g * ov;
                st(o, ov + g * hk);
            }
        }
        for (c, gk) in inp.iter().zip(grad.iter()) {
            st(c, ld(c) + gk);
        }
        loss
    }

    /// Train on a slice of walks; `done` is the number of pairs processed
    /// before this slice (for the learning-rate schedule).
    fn run(&self, walks: &[Vec<u32>], mut done: f64, rng: &mut rng::Rng) -> (f64, usize) {
        let d = self.p.dim;
        let mut grad = vec![0.0f32; d];
        let mut h = vec![0.0f32; d];
        let mut loss = 0.0;
        let mut pairs = 0usize;
        for walk in walks {
            for (i, &c) in walk.iter().enumerate() {
                let lo = i.saturating_sub(self.cfg.window);
                let hi = (i + self.cfg.window + 1).min(walk.len());
                for (j, &o) in walk.iter().enumerate().take(hi).skip(lo) {
                    if j == i {
                        continue;
                    }
                    let lr = self.lr(done);
                    loss += self.update(rng, c as usize, o as usize, lr, &mut grad, &mut h);
                    done += 1.0;
                    pairs += 1;
                }
            }
        }
        (loss, pairs)
    }
}

/// (center, context, negatives) triples drawn once and re-scored after every
/// epoch, so the reported loss is a deterministic function of the parameters.
struct EvalSample {
    triples: Vec<(usize, usize, Vec<usize>)>,
}

impl EvalSample {
    fn draw(walks: &[Vec<u32>], cfg: &SgnsConfig, noise: &AliasTable, max: usize) -> Self {
        let mut r = rng::stream(cfg.seed, &[0x5608]);
        let usable: Vec<&Vec<u32>> = walks.iter().filter(|w| w.len() > 1).collect();
        let mut triples = Vec::new();
        if usable.is_empty() {
            return EvalSample { triples };
        }
        for _ in 0..max {
            let w = usable[r.random_range(0..usable.len())];
            let i = r.random_range(0..w.len());
            let lo = i.saturating_sub(cfg.window);
            let hi = (i + cfg.window + 1).min(w.len());
            let mut j = r.random_range(lo..hi - 1);
            if j >= i {
                j += 1;
            }
            let negs = (0..cfg.negatives).map(|_| noise.sample(&mut r)).collect();
            triples.push((w[i] as usize, w[j] as usize, negs));
        }
        EvalSample { triples }
    }

    fn loss(&self, p: &Params) -> f64 {
        let d = p.dim;
        let score = |a: usize, b: usize| -> f64 {
            (0..d)
                .map(|k| ld(&p.input[a * d + k]) as f64 * ld(&p.output[b * d + k]) as f64)
                .sum()
        };
        let lsig = |x: f64| -> f64 { -(-x).exp().ln_1p() };
        let total: f64 = self
            .triples
            .iter()
            .map(|(c, o, negs)| {
                let mut l = -lsig(score(*c, *o));
                for &n in negs {
                    if n != *o {
                        l -= lsig(-score(*c, n));
                    }
                }
                l
            })
            .sum();
        total / self.triples.len().max(1) as f64
    }
}

fn pairs_in(walk: &[u32], window: usize) -> usize {
    (0..walk.len())
        .map(|i| {
            let lo = i.saturating_sub(window);
            let hi = (i + window + 1).min(walk.len());
            hi - lo - 1
        })
        .sum()
}

pub fn train(num_nodes: usize, walks: &[Vec<u32>], cfg: &SgnsConfig) -> SgnsOutput {
    let d = cfg.dim;
    let mut init_rng = rng::stream(cfg.seed, &[0x5605]);
    let input: Vec<AtomicU32> = (0..num_nodes * d)
        .map(|_| AtomicU32::new(((init_rng.random::<f32>() - 0.5) / d as f32).to_bits()))
        .collect();
    let output: Vec<AtomicU32> = (0..num_nodes * d)
        .map(|_| AtomicU32::new(0f32.to_bits()))
        .collect();
    let params = Params {
        dim: d,
        input,
        output,
    };

    let mut freq = vec![0.0f64; num_nodes];
    let mut in_context = vec![false; num_nodes];
    for w in walks {
        for &v in w {
            freq[v as usize] += 1.0;
        }
        if w.len() > 1 {
            for &v in w {
                in_context[v as usize] = true;
            }
        }
    }
    let untrained: Vec<usize> = (0..num_nodes).filter(|&v| !in_context[v]).collect();
    if !untrained.is_empty() {
        log::warn!(
            "{} nodes appear in no walk context; their embeddings stay at initialization",
            untrained.len()
        );
    }
    let weights: Vec<f64> = freq.iter().map(|f| f.powf(0.75)).collect();
    let per_epoch: usize = walks.iter().map(|w| pairs_in(w, cfg.window)).sum();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    if let Some(noise) = AliasTable::new(&weights).filter(|_| per_epoch > 0) {
        let trainer = Trainer {
            p: &params,
            cfg,
            noise: &noise,
            total_pairs: (per_epoch * cfg.epochs) as f64,
        };
        let eval = EvalSample::draw(walks, cfg, &noise, 20_000);
        for epoch in 0..cfg.epochs {
            let start = (epoch * per_epoch) as f64;
            let (train_loss, pairs) = match cfg.mode {
                TrainMode::Deterministic => {
                    let mut r = rng::stream(cfg.seed, &[0x5606, epoch as u64]);
                    trainer.run(walks, start, &mut r)
                }
                TrainMode::Fast => {
                    let nchunks = rayon::current_num_threads().max(1);
                    let chunk = walks.len().div_ceil(nchunks).max(1);
                    walks
                        .par_chunks(chunk)
                        .enumerate()
                        .map(|(ci, ws)| {
                            let mut r = rng::stream(cfg.seed, &[0x5607, epoch as u64, ci as u64]);
                            // Approximate schedule position: chunks run concurrently.
                            trainer.run(ws, start, &mut r)
                        })
                        .reduce(|| (0.0, 0), |a, b| (a.0 + b.0, a.1 + b.1))
                }
            };
            log::debug!(
                "sgns epoch {epoch}: train loss {:.5}",
                train_loss / pairs.max(1) as f64
            );
            epoch_losses.push(eval.loss(&params));
        }
    }

    SgnsOutput {
        vectors: params.input.iter().map(ld).collect(),
        dim: d,
        epoch_losses,
        untrained,
    }
}
