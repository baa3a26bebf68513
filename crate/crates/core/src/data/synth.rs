//! Synthetic paired data with a controllable domain shift.
//!
//! Item `n` belongs to concept `k = n mod K` and carries a source vector
//! `z ~ N(0, I)`. Its image is `A_k z + σ ε`, each caption `B_k z + σ ε'`.
//! The target dataset keeps the items, labels and splits but mixes through
//! `A'_k = normalize((1 - α) A_k + α R_k)` with `R_k` drawn from
//! `shift_seed`; `α = 1` gives independent target mixings.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::vocab::build_vocab;
use super::{DataError, Dataset, Matrix, Split, TextPayload};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SynthText {
    Features,
    /// Sentences over concept-specific words `c{k}w{j}`; position `p`
    /// quantizes source coordinate `p mod source_dim`.
    Tokens { words_per_concept: usize, sentence_len: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub concepts: usize,
    pub source_dim: usize,
    pub image_dim: usize,
    pub text_dim: usize,
    pub items_per_concept: usize,
    pub captions_per_image: usize,
    pub noise: f64,
    pub seed: u64,
    pub shift_seed: u64,
    pub shift_strength: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub text: SynthText,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            concepts: 8,
            source_dim: 12,
            image_dim: 256,
            text_dim: 256,
            items_per_concept: 250,
            captions_per_image: 1,
            noise: 0.1,
            seed: 0,
            shift_seed: 1,
            shift_strength: 1.0,
            val_fraction: 0.1,
            test_fraction: 0.1,
            text: SynthText::Features,
        }
    }
}

impl SynthConfig {
    pub fn n_items(&self) -> usize {
        self.concepts * self.items_per_concept
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::Invalid(format!("synth config: {m}")));
        if self.concepts == 0
            || self.source_dim == 0
            || self.image_dim == 0
            || self.text_dim == 0
            || self.items_per_concept == 0
            || self.captions_per_image == 0
        {
            return bad("all counts must be at least 1");
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return bad("noise must be a finite value >= 0");
        }
        if !(0.0..=1.0).contains(&self.shift_strength) {
            return bad("shift_strength must lie in [0, 1]");
        }
        let (v, t) = (self.val_fraction, self.test_fraction);
        if !(0.0..1.0).contains(&v) || !(0.0..1.0).contains(&t) || v + t >= 1.0 {
            return bad("split fractions must be in [0, 1) and leave a training split");
        }
        if let SynthText::Tokens {
            words_per_concept,
            sentence_len,
        } = self.text
        {
            if words_per_concept == 0 || sentence_len == 0 {
                return bad("token sentences need words and length");
            }
        }
        Ok(())
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// `rows x cols`, entries uniform in [-1, 1], unit-norm columns.
fn mixing(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<f64> {
    let mut m: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-1.0..=1.0)).collect();
    normalize_columns(&mut m, rows, cols);
    m
}

fn normalize_columns(m: &mut [f64], rows: usize, cols: usize) {
    for c in 0..cols {
        let norm = (0..rows).map(|r| m[r * cols + c].powi(2)).sum::<f64>().sqrt();
        if norm > 0.0 {
            for r in 0..rows {
                m[r * cols + c] /= norm;
            }
        }
    }
}

fn blend(base: &[f64], other: &[f64], alpha: f64, rows: usize, cols: usize) -> Vec<f64> {
    let mut m: Vec<f64> = base
        .iter()
        .zip(other)
        .map(|(a, r)| (1.0 - alpha) * a + alpha * r)
        .collect();
    normalize_columns(&mut m, rows, cols);
    m
}

/// `M z + σ ε`, rounded through f32 so the values survive the feature format.
fn project(m: &[f64], z: &[f64], noise: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let cols = z.len();
    m.chunks(cols)
        .map(|row| {
            let clean: f64 = row.iter().zip(z).map(|(a, b)| a * b).sum();
            let eps = normal(rng);
            (clean + noise * eps) as f32 as f64
        })
        .collect()
}

struct Mixings {
    image: Vec<Vec<f64>>,
    text: Vec<Vec<f64>>,
    word_perm: Vec<Vec<usize>>,
}

fn sentence(
    concept: usize,
    z: &[f64],
    words: usize,
    len: usize,
    noise: f64,
    perm: Option<(&[usize], f64)>,
    rng: &mut ChaCha8Rng,
) -> String {
    (0..len)
        .map(|p| {
            let x = z[p % z.len()];
            let mut j = (((x + 2.0) / 4.0 * words as f64).floor().max(0.0) as usize).min(words - 1);
            if let Some((perm, alpha)) = perm {
                if rng.random::<f64>() < alpha {
                    j = perm[j];
                }
            }
            if rng.random::<f64>() < noise.min(1.0) {
                j = rng.random_range(0..words);
            }
            format!("c{concept}w{j}")
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn build(
    cfg: &SynthConfig,
    sources: &[Vec<f64>],
    mix: &Mixings,
    shift: Option<f64>,
    split_of: &[Split],
    rng: &mut ChaCha8Rng,
) -> Result<Dataset, DataError> {
    let n = sources.len();
    let c = cfg.captions_per_image;
    let concept = |i: usize| i % cfg.concepts;
    let mut img = Vec::with_capacity(n * cfg.image_dim);
    for (i, z) in sources.iter().enumerate() {
        img.extend(project(&mix.image[concept(i)], z, cfg.noise, rng));
    }
    let image_features = Matrix::new(n, cfg.image_dim, img)?;

    let mut pairs = Vec::with_capacity(n * c);
    let mut text_split = Vec::with_capacity(n * c);
    let mut text_labels = Vec::with_capacity(n * c);
    for i in 0..n {
        for j in 0..c {
            pairs.push((i, i * c + j));
            text_split.push(split_of[i]);
            text_labels.push(concept(i) as u32);
        }
    }

    let (text, vocab) = match cfg.text {
        SynthText::Features => {
            let mut txt = Vec::with_capacity(n * c * cfg.text_dim);
            for (i, z) in sources.iter().enumerate() {
                for _ in 0..c {
                    txt.extend(project(&mix.text[concept(i)], z, cfg.noise, rng));
                }
            }
            (TextPayload::Features(Matrix::new(n * c, cfg.text_dim, txt)?), None)
        }
        SynthText::Tokens {
            words_per_concept,
            sentence_len,
        } => {
            let mut lines = Vec::with_capacity(n * c);
            for (i, z) in sources.iter().enumerate() {
                let perm = shift.map(|a| (mix.word_perm[concept(i)].as_slice(), a));
                for _ in 0..c {
                    lines.push(sentence(concept(i), z, words_per_concept, sentence_len, cfg.noise, perm, rng));
                }
            }
            let train: Vec<&str> = lines
                .iter()
                .zip(&text_split)
                .filter(|(_, s)| **s == Split::Train)
                .map(|(l, _)| l.as_str())
                .collect();
            let vocab = build_vocab(&train, 1)?;
            let seqs = lines.iter().map(|l| vocab.encode(l)).collect();
            (TextPayload::Tokens(seqs), Some(vocab))
        }
    };

    let dataset = Dataset {
        image_features,
        text,
        pairs,
        image_split: split_of.to_vec(),
        text_split,
        five_caption: c == 5,
        image_labels: Some((0..n).map(|i| concept(i) as u32).collect()),
        text_labels: Some(text_labels),
        vocab,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Source and shifted target datasets. Both are deterministic in the config.
pub fn synth_generate(cfg: &SynthConfig) -> Result<(Dataset, Dataset), DataError> {
    cfg.validate()?;
    let (k, s) = (cfg.concepts, cfg.source_dim);
    let n = cfg.n_items();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let words = match cfg.text {
        SynthText::Tokens { words_per_concept, .. } => words_per_concept,
        SynthText::Features => 0,
    };
    let source_mix = Mixings {
        image: (0..k).map(|_| mixing(&mut rng, cfg.image_dim, s)).collect(),
        text: (0..k).map(|_| mixing(&mut rng, cfg.text_dim, s)).collect(),
        word_perm: Vec::new(),
    };
    let sources: Vec<Vec<f64>> = (0..n).map(|_| (0..s).map(|_| normal(&mut rng)).collect()).collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_test = (cfg.test_fraction * n as f64).round() as usize;
    let n_val = (cfg.val_fraction * n as f64).round() as usize;
    let mut split_of = vec![Split::Train; n];
    for (rank, &i) in order.iter().enumerate() {
        split_of[i] = if rank < n_test {
            Split::Test
        } else if rank < n_test + n_val {
            Split::Val
        } else {
            Split::Train
        };
    }
    let source = build(cfg, &sources, &source_mix, None, &split_of, &mut rng)?;

    let mut shift_rng = ChaCha8Rng::seed_from_u64(cfg.shift_seed);
    shift_rng.set_stream(1);
    let a = cfg.shift_strength;
    let target_mix = Mixings {
        image: source_mix
            .image
            .iter()
            .map(|m| blend(m, &mixing(&mut shift_rng, cfg.image_dim, s), a, cfg.image_dim, s))
            .collect(),
        text: source_mix
            .text
            .iter()
            .map(|m| blend(m, &mixing(&mut shift_rng, cfg.text_dim, s), a, cfg.text_dim, s))
            .collect(),
        word_perm: (0..k)
            .map(|_| {
                let mut p: Vec<usize> = (0..words).collect();
                p.shuffle(&mut shift_rng);
                p
            })
            .collect(),
    };
    let target = build(cfg, &sources, &target_mix, Some(a), &split_of, &mut shift_rng)?;
    Ok((source, target))
}
