use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Dataset, Split};

/// The supervision available to a training run: retained pairs plus the
/// items that may only appear unpaired.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairSubset {
    pub retained: Vec<(usize, usize)>,
    pub unpaired_images: Vec<usize>,
    pub unpaired_texts: Vec<usize>,
}

impl PairSubset {
    /// All pairs of `split`; items of that split outside every pair are unpaired.
    pub fn for_split(dataset: &Dataset, split: Split) -> Self {
        let retained = dataset.pairs_in(split);
        let mut img_paired = vec![false; dataset.n_images()];
        let mut txt_paired = vec![false; dataset.n_texts()];
        for &(i, t) in &retained {
            img_paired[i] = true;
            txt_paired[t] = true;
        }
        Self {
            unpaired_images: dataset.images_in(split).into_iter().filter(|&i| !img_paired[i]).collect(),
            unpaired_texts: dataset.texts_in(split).into_iter().filter(|&t| !txt_paired[t]).collect(),
            retained,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub pairs: Vec<(usize, usize)>,
    pub unpaired_images: Vec<usize>,
    pub unpaired_texts: Vec<usize>,
}

fn take_round_robin(pool: &[usize], cursor: &mut usize, n: usize) -> Vec<usize> {
    let n = n.min(pool.len());
    let out = (0..n).map(|k| pool[(*cursor + k) % pool.len()]).collect();
    if !pool.is_empty() {
        *cursor = (*cursor + n) % pool.len();
    }
    out
}

/// Shuffled batches for one epoch. Each holds up to `batch_size` pairs and
/// up to `batch_size` unpaired items per modality, taken round-robin from
/// the shuffled pools. A final batch with fewer than two pairs is dropped.
pub fn make_batches(
    dataset: &Dataset,
    subset: &PairSubset,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Batch>, DataError> {
    if batch_size < 2 {
        return Err(DataError::Invalid(format!("batch size {batch_size} < 2")));
    }
    let (ni, nt) = (dataset.n_images(), dataset.n_texts());
    for &(i, t) in &subset.retained {
        if i >= ni || t >= nt {
            return Err(DataError::PairOutOfRange {
                image: i,
                text: t,
                n_images: ni,
                n_texts: nt,
            });
        }
    }
    if let Some(&i) = subset.unpaired_images.iter().find(|&&i| i >= ni) {
        return Err(DataError::Invalid(format!("unpaired image {i} out of range")));
    }
    if let Some(&t) = subset.unpaired_texts.iter().find(|&&t| t >= nt) {
        return Err(DataError::Invalid(format!("unpaired text {t} out of range")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut pairs = subset.retained.clone();
    pairs.shuffle(&mut rng);
    let mut images = subset.unpaired_images.clone();
    images.shuffle(&mut rng);
    let mut texts = subset.unpaired_texts.clone();
    texts.shuffle(&mut rng);

    let (mut ci, mut ct) = (0, 0);
    Ok(pairs
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(|c| Batch {
            pairs: c.to_vec(),
            unpaired_images: take_round_robin(&images, &mut ci, batch_size),
            unpaired_texts: take_round_robin(&texts, &mut ct, batch_size),
        })
        .collect())
}
