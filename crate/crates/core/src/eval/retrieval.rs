use std::cmp::Ordering;
use std::fmt::Write as _;

use super::{check_ks, embed_images, embed_texts, Direction, EvalError};
use crate::data::{Dataset, Matrix, Split};
use crate::nets::{ModelConfig, ModelParams};

pub const DEFAULT_KS: [usize; 3] = [1, 5, 10];

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalReport {
    pub direction: Direction,
    pub ks: Vec<usize>,
    /// `recalls[i]` is Recall@`ks[i]`.
    pub recalls: Vec<f64>,
    /// Top `max(ks)` gallery positions per query, best first.
    pub rankings: Vec<Vec<usize>>,
    /// Dataset item id of every query row and gallery row.
    pub query_items: Vec<usize>,
    pub gallery_items: Vec<usize>,
}

impl RetrievalReport {
    pub fn recall(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.recalls[i])
    }

    pub fn recall_sum(&self) -> f64 {
        self.recalls.iter().sum()
    }
}

fn unit_rows(m: &Matrix, which: &'static str) -> Result<Vec<Vec<f64>>, EvalError> {
    (0..m.rows())
        .map(|i| {
            let r = m.row(i);
            let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n == 0.0 || !n.is_finite() {
                return Err(EvalError::ZeroNorm { which, index: i });
            }
            Ok(r.iter().map(|x| x / n).collect())
        })
        .collect()
}

/// Descending similarity, ascending index on ties. `-0.0` ties with `0.0`.
fn rank_order(sims: &[f64], a: usize, b: usize) -> Ordering {
    sims[b]
        .partial_cmp(&sims[a])
        .expect("similarities of finite unit vectors")
        .then(a.cmp(&b))
}

/// Ranks the whole gallery by cosine similarity for every query. A query
/// is a hit at K when any of its ground-truth gallery rows is among the
/// first K.
pub fn recall_at_k(
    direction: Direction,
    queries: &Matrix,
    gallery: &Matrix,
    ground_truth: &[Vec<usize>],
    ks: &[usize],
) -> Result<RetrievalReport, EvalError> {
    check_ks(ks)?;
    if gallery.rows() == 0 {
        return Err(EvalError::EmptyGallery);
    }
    if queries.rows() == 0 {
        return Err(EvalError::NoQueries);
    }
    if queries.cols() != gallery.cols() {
        return Err(EvalError::WidthMismatch(queries.cols(), gallery.cols()));
    }
    if ground_truth.len() != queries.rows() {
        return Err(EvalError::GroundTruthCount {
            queries: queries.rows(),
            truth: ground_truth.len(),
        });
    }
    for (q, gt) in ground_truth.iter().enumerate() {
        if gt.is_empty() {
            return Err(EvalError::EmptyGroundTruth(q));
        }
        if let Some(&index) = gt.iter().find(|&&g| g >= gallery.rows()) {
            return Err(EvalError::GroundTruthOutOfRange {
                index,
                gallery: gallery.rows(),
            });
        }
    }
    let qs = unit_rows(queries, "query")?;
    let gs = unit_rows(gallery, "gallery")?;
    let max_k = ks.iter().copied().max().unwrap_or(1).min(gs.len());

    let mut hits = vec![0usize; ks.len()];
    let mut rankings = Vec::with_capacity(qs.len());
    let mut order: Vec<usize> = Vec::with_capacity(gs.len());
    for (q, gt) in qs.iter().zip(ground_truth) {
        let sims: Vec<f64> = gs.iter().map(|g| g.iter().zip(q).map(|(a, b)| a * b).sum()).collect();
        let best = gt
            .iter()
            .map(|&t| {
                (0..sims.len())
                    .filter(|&j| rank_order(&sims, j, t) == Ordering::Less)
                    .count()
            })
            .min()
            .expect("ground truth nonempty");
        for (h, &k) in hits.iter_mut().zip(ks) {
            if best < k {
                *h += 1;
            }
        }
        order.clear();
        order.extend(0..sims.len());
        if max_k < order.len() {
            order.select_nth_unstable_by(max_k, |&a, &b| rank_order(&sims, a, b));
            order.truncate(max_k);
        }
        order.sort_by(|&a, &b| rank_order(&sims, a, b));
        rankings.push(order.clone());
    }
    Ok(RetrievalReport {
        direction,
        ks: ks.to_vec(),
        recalls: hits.iter().map(|&h| h as f64 / qs.len() as f64).collect(),
        rankings,
        query_items: (0..queries.rows()).collect(),
        gallery_items: (0..gallery.rows()).collect(),
    })
}

/// Both retrieval directions over one split. Image queries use every
/// caption of the split as gallery, any paired caption counting as a hit;
/// caption queries look for their image among the split's images.
pub fn cross_modal_eval(
    params: &ModelParams,
    model: &ModelConfig,
    dataset: &Dataset,
    split: Split,
    ks: &[usize],
) -> Result<(RetrievalReport, RetrievalReport), EvalError> {
    let images = dataset.images_in(split);
    let texts = dataset.texts_in(split);
    let pairs = dataset.pairs_in(split);
    if pairs.is_empty() {
        return Err(EvalError::NoQueries);
    }
    let mut img_pos = vec![usize::MAX; dataset.n_images()];
    images.iter().enumerate().for_each(|(p, &i)| img_pos[i] = p);
    let mut txt_pos = vec![usize::MAX; dataset.n_texts()];
    texts.iter().enumerate().for_each(|(p, &t)| txt_pos[t] = p);

    let mut img_truth = vec![Vec::new(); images.len()];
    let mut txt_truth = vec![Vec::new(); texts.len()];
    for &(i, t) in &pairs {
        img_truth[img_pos[i]].push(txt_pos[t]);
        txt_truth[txt_pos[t]].push(img_pos[i]);
    }

    let zv = embed_images(params, model, &dataset.image_features, &images)?;
    let zt = embed_texts(params, model, &dataset.text, &texts)?;

    let one_direction = |direction, q: &Matrix, g: &Matrix, truth: &[Vec<usize>], q_items: &[usize], g_items: &[usize]| {
        let keep: Vec<usize> = (0..truth.len()).filter(|&p| !truth[p].is_empty()).collect();
        let sub_truth: Vec<Vec<usize>> = keep.iter().map(|&p| truth[p].clone()).collect();
        let mut r = recall_at_k(direction, &q.select_rows(&keep), g, &sub_truth, ks)?;
        r.query_items = keep.iter().map(|&p| q_items[p]).collect();
        r.gallery_items = g_items.to_vec();
        Ok::<_, EvalError>(r)
    };
    let i2t = one_direction(Direction::ImageToText, &zv, &zt, &img_truth, &images, &texts)?;
    let t2i = one_direction(Direction::TextToImage, &zt, &zv, &txt_truth, &texts, &images)?;
    Ok((i2t, t2i))
}

/// Test-split evaluation of a model on another dataset. Nothing is updated.
pub fn cross_dataset_eval(
    params: &ModelParams,
    model: &ModelConfig,
    target: &Dataset,
    ks: &[usize],
) -> Result<(RetrievalReport, RetrievalReport), EvalError> {
    cross_modal_eval(params, model, target, Split::Test, ks)
}

/// `direction\tk\trecall` rows.
pub fn retrieval_table(reports: &[&RetrievalReport]) -> String {
    let mut out = String::from("direction\tk\trecall\n");
    for r in reports {
        for (k, v) in r.ks.iter().zip(&r.recalls) {
            writeln!(out, "{}\t{}\t{:.6}", r.direction, k, v).expect("write to string");
        }
    }
    out
}
