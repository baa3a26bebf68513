use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TrainError;
use crate::data::PairSubset;

/// Stream reserved for supervision subsampling. Epoch shuffles use the
/// epoch number as their stream.
pub(crate) const SUBSAMPLE_STREAM: u64 = u64::MAX - 1;

/// Keeps `⌈fraction·N⌉` pairs chosen uniformly without replacement. Items
/// left without any retained pair join the unpaired pools.
pub fn subsample_supervision(subset: &PairSubset, fraction: f64, seed: u64) -> Result<PairSubset, TrainError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(TrainError::InvalidConfig(format!(
            "supervision_fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let n = subset.retained.len();
    let keep = ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize;
    if keep >= n {
        return Ok(subset.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SUBSAMPLE_STREAM);
    let mut chosen = rand::seq::index::sample(&mut rng, n, keep).into_vec();
    chosen.sort_unstable();
    let retained: Vec<(usize, usize)> = chosen.iter().map(|&i| subset.retained[i]).collect();

    let mut kept_images: Vec<usize> = retained.iter().map(|p| p.0).collect();
    let mut kept_texts: Vec<usize> = retained.iter().map(|p| p.1).collect();
    kept_images.sort_unstable();
    kept_texts.sort_unstable();
    let mut images = subset.unpaired_images.clone();
    let mut texts = subset.unpaired_texts.clone();
    for &(i, t) in &subset.retained {
        if kept_images.binary_search(&i).is_err() {
            images.push(i);
        }
        if kept_texts.binary_search(&t).is_err() {
            texts.push(t);
        }
    }
    images.sort_unstable();
    images.dedup();
    texts.sort_unstable();
    texts.dedup();
    Ok(PairSubset {
        retained,
        unpaired_images: images,
        unpaired_texts: texts,
    })
}
