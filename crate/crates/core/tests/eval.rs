use std::fs;

use jwae::autodiff::Tensor;
use jwae::data::{synth_generate, write_features, Dataset, Matrix, Split, SynthConfig, TextPayload};
use jwae::eval::{
    cross_dataset_eval, cross_modal_eval, diagnose_latents, iou, latent_diagnostics, load_localization,
    localization_recall, phrase_localization_eval, positive_proposals, projection_table, recall_at_k,
    retrieval_table, BoundingBox, BoxProposal, Direction, EvalError, LatentSample, LocalizationInstance, Phrase,
    DEFAULT_KS,
};
use jwae::nets::{init_params, DiscriminatorConfig, MlpConfig, ModelConfig, ModelParams, TextEncoderConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn rows(v: &[&[f64]]) -> Matrix {
    Matrix::from_rows(&v.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
    BoundingBox::new(x0, y0, x1, y1).unwrap()
}

/// Full sort of every gallery row per query; rank of the best ground truth.
fn oracle_recall(q: &Matrix, g: &Matrix, truth: &[Vec<usize>], ks: &[usize]) -> (Vec<f64>, Vec<Vec<usize>>) {
    let unit = |r: &[f64]| {
        let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        r.iter().map(|x| x / n).collect::<Vec<f64>>()
    };
    let gs: Vec<Vec<f64>> = (0..g.rows()).map(|j| unit(g.row(j))).collect();
    let mut hits = vec![0usize; ks.len()];
    let mut lists = Vec::new();
    for (qi, gt) in truth.iter().enumerate() {
        let qv = unit(q.row(qi));
        let mut scored: Vec<(f64, usize)> = gs
            .iter()
            .enumerate()
            .map(|(j, gv)| (gv.iter().zip(&qv).map(|(a, b)| a * b).sum(), j))
            .collect();
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let pos = scored.iter().position(|(_, j)| gt.contains(j)).unwrap();
        for (h, &k) in hits.iter_mut().zip(ks) {
            if pos < k {
                *h += 1;
            }
        }
        let max_k = ks.iter().copied().max().unwrap().min(scored.len());
        lists.push(scored[..max_k].iter().map(|s| s.1).collect());
    }
    (hits.iter().map(|&h| h as f64 / truth.len() as f64).collect(), lists)
}

/// Integer-valued rows with repeats so exact similarity ties occur.
fn tie_heavy(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Matrix {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        if i > 0 && rng.random::<f64>() < 0.2 {
            let src = out[rng.random_range(0..i)].clone();
            out.push(src.iter().map(|x| x * 2.0).collect());
            continue;
        }
        let mut r: Vec<f64> = (0..d).map(|_| rng.random_range(-2i32..=2) as f64).collect();
        if r.iter().all(|&x| x == 0.0) {
            r[0] = 1.0;
        }
        out.push(r);
    }
    Matrix::from_rows(&out).unwrap()
}

#[test]
fn perfect_embedding_gives_full_recall() {
    let q = rows(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
    let truth = vec![vec![0], vec![1], vec![2]];
    let r = recall_at_k(Direction::ImageToText, &q, &q, &truth, &[1]).unwrap();
    assert_eq!(r.recalls, vec![1.0]);
}

#[test]
fn window_covering_gallery_gives_full_recall() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let q = tie_heavy(&mut rng, 7, 4);
    let g = tie_heavy(&mut rng, 5, 4);
    let truth: Vec<Vec<usize>> = (0..7).map(|i| vec![i % 5]).collect();
    let r = recall_at_k(Direction::TextToImage, &q, &g, &truth, &[5, 9]).unwrap();
    assert_eq!(r.recalls, vec![1.0, 1.0]);
}

#[test]
fn random_20x8_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let gen = |rng: &mut ChaCha8Rng| {
        let v: Vec<f64> = (0..20 * 8).map(|_| rng.sample(StandardNormal)).collect();
        Matrix::new(20, 8, v).unwrap()
    };
    let q = gen(&mut rng);
    let g = gen(&mut rng);
    let truth: Vec<Vec<usize>> = (0..20).map(|i| vec![(i * 7) % 20]).collect();
    let r = recall_at_k(Direction::ImageToText, &q, &g, &truth, &[1, 5]).unwrap();
    let (expected, lists) = oracle_recall(&q, &g, &truth, &[1, 5]);
    assert_eq!(r.recalls, expected);
    assert_eq!(r.rankings, lists);
}

#[test]
fn ties_rank_by_ascending_index() {
    let q = rows(&[&[1.0, 0.0]]);
    let g = rows(&[&[0.0, 1.0], &[2.0, 0.0], &[1.0, 0.0]]);
    let r = recall_at_k(Direction::ImageToText, &q, &g, &[vec![2]], &[1, 2]).unwrap();
    assert_eq!(r.rankings[0], vec![1, 2]);
    assert_eq!(r.recalls, vec![0.0, 1.0]);
}

#[test]
fn any_ground_truth_counts() {
    let q = rows(&[&[1.0, 0.0]]);
    let g = rows(&[&[1.0, 0.1], &[0.0, 1.0], &[1.0, 0.0]]);
    let r = recall_at_k(Direction::ImageToText, &q, &g, &[vec![1, 2]], &[1]).unwrap();
    assert_eq!(r.recalls, vec![1.0]);
}

#[test]
fn recall_errors() {
    let q = rows(&[&[1.0, 0.0]]);
    let empty = Matrix::new(0, 2, vec![]).unwrap();
    assert!(matches!(
        recall_at_k(Direction::ImageToText, &q, &empty, &[vec![0]], &[1]),
        Err(EvalError::EmptyGallery)
    ));
    let zero = rows(&[&[0.0, 0.0]]);
    assert!(matches!(
        recall_at_k(Direction::ImageToText, &zero, &q, &[vec![0]], &[1]),
        Err(EvalError::ZeroNorm { which: "query", index: 0 })
    ));
    assert!(matches!(
        recall_at_k(Direction::ImageToText, &q, &zero, &[vec![0]], &[1]),
        Err(EvalError::ZeroNorm { which: "gallery", index: 0 })
    ));
    assert!(matches!(
        recall_at_k(Direction::ImageToText, &q, &q, &[vec![]], &[1]),
        Err(EvalError::EmptyGroundTruth(0))
    ));
    assert!(matches!(
        recall_at_k(Direction::ImageToText, &q, &q, &[vec![3]], &[1]),
        Err(EvalError::GroundTruthOutOfRange { index: 3, gallery: 1 })
    ));
    assert!(recall_at_k(Direction::ImageToText, &q, &q, &[vec![0]], &[0]).is_err());
}

#[test]
fn direction_names_round_trip() {
    for d in [Direction::ImageToText, Direction::TextToImage] {
        assert_eq!(d.name().parse::<Direction>().unwrap(), d);
    }
    assert_eq!(Direction::ImageToText.to_string(), "i2t");
    assert!(matches!("x2y".parse::<Direction>(), Err(EvalError::UnknownDirection(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn recall_equals_oracle(seed in any::<u64>(), nq in 1usize..30, ng in 1usize..40, d in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = tie_heavy(&mut rng, nq, d);
        let g = tie_heavy(&mut rng, ng, d);
        let truth: Vec<Vec<usize>> = (0..nq)
            .map(|_| {
                let n = rng.random_range(1..=ng.min(3));
                let mut t: Vec<usize> = (0..n).map(|_| rng.random_range(0..ng)).collect();
                t.sort_unstable();
                t.dedup();
                t
            })
            .collect();
        let ks = [1, 3, 10];
        let r = recall_at_k(Direction::ImageToText, &q, &g, &truth, &ks).unwrap();
        let (expected, lists) = oracle_recall(&q, &g, &truth, &ks);
        prop_assert_eq!(&r.recalls, &expected);
        prop_assert_eq!(&r.rankings, &lists);
        prop_assert!(r.recalls.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn recall_scale_invariant(seed in any::<u64>(), scale in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gen = |rng: &mut ChaCha8Rng, n: usize| {
            let v: Vec<f64> = (0..n * 6).map(|_| rng.sample(StandardNormal)).collect();
            Matrix::new(n, 6, v).unwrap()
        };
        let q = gen(&mut rng, 12);
        let g = gen(&mut rng, 15);
        let truth: Vec<Vec<usize>> = (0..12).map(|i| vec![i]).collect();
        let scaled = |m: &Matrix| Matrix::new(m.rows(), m.cols(), m.values().iter().map(|x| x * scale).collect()).unwrap();
        let a = recall_at_k(Direction::ImageToText, &q, &g, &truth, &DEFAULT_KS).unwrap();
        let b = recall_at_k(Direction::ImageToText, &scaled(&q), &scaled(&g), &truth, &DEFAULT_KS).unwrap();
        prop_assert_eq!(a.recalls, b.recalls);
        prop_assert_eq!(a.rankings, b.rankings);
    }

    #[test]
    fn iou_symmetric_and_bounded(a in (0.0f64..50.0, 0.0f64..50.0, 0.1f64..30.0, 0.1f64..30.0),
                                 b in (0.0f64..50.0, 0.0f64..50.0, 0.1f64..30.0, 0.1f64..30.0)) {
        let ba = bx(a.0, a.1, a.0 + a.2, a.1 + a.3);
        let bb = bx(b.0, b.1, b.0 + b.2, b.1 + b.3);
        let ab = iou(&ba, &bb).unwrap();
        prop_assert_eq!(ab, iou(&bb, &ba).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(iou(&ba, &ba).unwrap(), 1.0);
        if ba != bb {
            prop_assert!(ab < 1.0);
        }
    }
}

#[test]
fn iou_examples() {
    let a = bx(0.0, 0.0, 10.0, 10.0);
    assert_eq!(iou(&a, &a).unwrap(), 1.0);
    assert_eq!(iou(&a, &bx(20.0, 20.0, 30.0, 30.0)).unwrap(), 0.0);
    assert_eq!(iou(&a, &bx(10.0, 0.0, 20.0, 10.0)).unwrap(), 0.0);
    assert!((iou(&a, &bx(5.0, 0.0, 15.0, 10.0)).unwrap() - 1.0 / 3.0).abs() < 1e-15);
}

#[test]
fn degenerate_boxes_rejected() {
    assert!(matches!(BoundingBox::new(0.0, 0.0, 0.0, 5.0), Err(EvalError::DegenerateBox(..))));
    assert!(BoundingBox::new(0.0, 3.0, 1.0, 2.0).is_err());
    assert!(BoundingBox::new(f64::NAN, 0.0, 1.0, 1.0).is_err());
    let bad = BoundingBox {
        x_min: 1.0,
        y_min: 0.0,
        x_max: 0.0,
        y_max: 1.0,
    };
    assert!(iou(&bad, &bx(0.0, 0.0, 1.0, 1.0)).is_err());
}

#[test]
fn positive_proposals_use_point_seven() {
    let gt = bx(0.0, 0.0, 10.0, 10.0);
    let boxes = [
        bx(0.0, 0.0, 10.0, 7.0),
        bx(0.0, 0.0, 10.0, 6.9),
        bx(0.0, 0.0, 10.0, 10.0),
        bx(0.0, 0.0, 10.0, 5.0),
    ];
    assert_eq!(positive_proposals(&boxes, &gt).unwrap(), vec![0, 2]);
}

fn proposal(image_id: usize, bbox: BoundingBox, angle: f64) -> BoxProposal {
    BoxProposal {
        image_id,
        bbox,
        feature: vec![angle.cos(), angle.sin()],
    }
}

#[test]
fn single_matching_proposal_localizes() {
    let gt = bx(1.0, 1.0, 4.0, 4.0);
    let phrases = [Phrase { image_id: 0, gt_box: gt }];
    let r = localization_recall(&rows(&[&[0.3, 0.7]]), &phrases, &[proposal(0, gt, 2.0)], &[1, 5]).unwrap();
    assert_eq!(r, vec![1.0, 1.0]);
}

#[test]
fn no_admissible_proposal_gives_zero() {
    let gt = bx(0.0, 0.0, 10.0, 10.0);
    let phrases = [Phrase { image_id: 0, gt_box: gt }];
    let props: Vec<BoxProposal> = (0..4)
        .map(|i| proposal(0, bx(5.0, 0.0, 15.0 + i as f64, 10.0), i as f64 * 0.1))
        .collect();
    let r = localization_recall(&rows(&[&[1.0, 0.0]]), &phrases, &props, &[1, 2, 10]).unwrap();
    assert_eq!(r, vec![0.0, 0.0, 0.0]);
}

#[test]
fn ten_proposal_toy_matches_hand_count() {
    // Two images, five proposals each, feature angle sets the rank (smaller is closer).
    let gt0 = bx(0.0, 0.0, 10.0, 10.0);
    let gt1 = bx(100.0, 100.0, 120.0, 110.0);
    let props = vec![
        proposal(0, bx(5.0, 0.0, 15.0, 10.0), 0.1),  // iou 1/3, rank 0
        proposal(0, bx(0.0, 0.0, 10.0, 5.0), 0.3),   // iou 0.5, rank 2
        proposal(0, bx(30.0, 30.0, 40.0, 40.0), 0.2), // iou 0, rank 1
        proposal(0, gt0, 0.9),                         // rank 4
        proposal(0, bx(0.0, 0.0, 10.0, 4.0), 0.5),   // iou 0.4, rank 3
        proposal(1, gt1, 0.0),                         // rank 0
        proposal(1, bx(0.0, 0.0, 1.0, 1.0), 0.4),
        proposal(1, bx(100.0, 100.0, 110.0, 110.0), 0.3), // iou 0.5
        proposal(1, bx(0.0, 0.0, 2.0, 2.0), 0.6),
        proposal(1, bx(0.0, 0.0, 3.0, 3.0), 0.7),
    ];
    let phrases = vec![
        Phrase { image_id: 0, gt_box: gt0 }, // first hit at rank 2
        Phrase { image_id: 1, gt_box: gt1 }, // hit at rank 0
        Phrase { image_id: 1, gt_box: bx(0.0, 0.0, 3.0, 3.0) }, // exact box ranked last (4)
        Phrase { image_id: 0, gt_box: bx(60.0, 60.0, 70.0, 70.0) }, // nothing overlaps
    ];
    let q = rows(&[&[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0]]);
    let r = localization_recall(&q, &phrases, &props, &[1, 2, 3, 4, 5]).unwrap();
    assert_eq!(r, vec![0.25, 0.25, 0.5, 0.5, 0.75]);
}

#[test]
fn phrase_without_proposals_errors() {
    let phrases = [Phrase {
        image_id: 7,
        gt_box: bx(0.0, 0.0, 1.0, 1.0),
    }];
    let props = [proposal(0, bx(0.0, 0.0, 1.0, 1.0), 0.0)];
    assert!(matches!(
        localization_recall(&rows(&[&[1.0, 0.0]]), &phrases, &props, &[1]),
        Err(EvalError::NoProposals(0))
    ));
}

/// Both encoders are `relu(x)` on nonnegative 2-D features.
fn identity_model() -> (ModelConfig, ModelParams) {
    let mlp = MlpConfig {
        input_dim: 2,
        hidden_dim: 2,
        latent_dim: 2,
    };
    let model = ModelConfig {
        image: mlp.clone(),
        text: TextEncoderConfig::Features(mlp),
        discriminator: DiscriminatorConfig {
            latent_dim: 2,
            layer_dims: [4, 4, 2],
        },
        variational: false,
    };
    let mut params = init_params(&model, 0).unwrap();
    let eye = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let zero = Tensor::new(vec![2], vec![0.0, 0.0]).unwrap();
    for enc in ["enc_v", "enc_t"] {
        for layer in ["layer1", "layer2"] {
            params.insert(format!("{enc}.{layer}.weight"), eye.clone());
            params.insert(format!("{enc}.{layer}.bias"), zero.clone());
        }
    }
    (model, params)
}

#[test]
fn localization_through_encoders() {
    let (model, params) = identity_model();
    let gt = bx(0.0, 0.0, 10.0, 10.0);
    let feat = |a: f64| vec![a.cos(), a.sin()];
    let instance = LocalizationInstance {
        phrases: vec![Phrase { image_id: 3, gt_box: gt }],
        phrase_text: TextPayload::Features(rows(&[&[1.0, 0.0]])),
        proposals: vec![
            BoxProposal {
                image_id: 3,
                bbox: bx(50.0, 50.0, 60.0, 60.0),
                feature: feat(0.1),
            },
            BoxProposal {
                image_id: 3,
                bbox: gt,
                feature: feat(0.4),
            },
        ],
    };
    let r = phrase_localization_eval(&params, &model, &instance, &[1, 2]).unwrap();
    assert_eq!(r, vec![0.0, 1.0]);
}

#[test]
fn localization_manifest_loads() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    write_features(&p.join("phr.jwf1"), &rows(&[&[0.0, 1.0], &[1.0, 0.0]])).unwrap();
    write_features(&p.join("img0.jwf1"), &rows(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap();
    write_features(&p.join("img4.jwf1"), &rows(&[&[0.5, 0.5]])).unwrap();
    fs::write(p.join("phrases.tsv"), "image\tx_min\ty_min\tx_max\ty_max\n0\t0\t0\t10\t10\n4\t1\t1\t2\t2\n").unwrap();
    fs::write(p.join("boxes.tsv"), "0 0 0 10 10\n0 20 20 30 30\n4 1 1 2 2\n").unwrap();
    fs::write(
        p.join("loc.toml"),
        "phrase_features = \"phr.jwf1\"\nphrases = \"phrases.tsv\"\nproposals = \"boxes.tsv\"\n\n[proposal_features]\n0 = \"img0.jwf1\"\n4 = \"img4.jwf1\"\n",
    )
    .unwrap();
    let inst = load_localization(&p.join("loc.toml")).unwrap();
    assert_eq!(inst.phrases.len(), 2);
    assert_eq!(inst.proposals.len(), 3);
    assert_eq!(inst.proposals[1].bbox, bx(20.0, 20.0, 30.0, 30.0));
    assert_eq!(inst.proposals[1].feature, vec![0.0, 1.0]);
    assert_eq!(inst.proposals[2].image_id, 4);
    let (model, params) = identity_model();
    let r = phrase_localization_eval(&params, &model, &inst, &[1, 2]).unwrap();
    assert_eq!(r, vec![0.5, 1.0]);

    fs::write(p.join("boxes.tsv"), "0 0 0 10 10\n4 1 1 2 2\n").unwrap();
    let err = load_localization(&p.join("loc.toml")).unwrap_err();
    assert!(err.to_string().contains("image 0"), "{err}");
}

fn small_model(dv: usize, dt: usize, d: usize) -> ModelConfig {
    ModelConfig {
        image: MlpConfig {
            input_dim: dv,
            hidden_dim: 16,
            latent_dim: d,
        },
        text: TextEncoderConfig::Features(MlpConfig {
            input_dim: dt,
            hidden_dim: 16,
            latent_dim: d,
        }),
        discriminator: DiscriminatorConfig {
            latent_dim: d,
            layer_dims: [8, 8, 2],
        },
        variational: false,
    }
}

fn small_synth(captions: usize) -> (Dataset, Dataset) {
    synth_generate(&SynthConfig {
        concepts: 3,
        source_dim: 4,
        image_dim: 10,
        text_dim: 8,
        items_per_concept: 20,
        captions_per_image: captions,
        ..SynthConfig::default()
    })
    .unwrap()
}

#[test]
fn cross_modal_reports_are_monotone_and_tabulated() {
    let (src, _) = small_synth(5);
    let model = small_model(10, 8, 4);
    let params = init_params(&model, 2).unwrap();
    let (i2t, t2i) = cross_modal_eval(&params, &model, &src, Split::Test, &DEFAULT_KS).unwrap();
    let n_img = src.images_in(Split::Test).len();
    assert_eq!(i2t.query_items.len(), n_img);
    assert_eq!(t2i.query_items.len(), 5 * n_img);
    assert_eq!(i2t.gallery_items.len(), 5 * n_img);
    for r in [&i2t, &t2i] {
        assert!(r.recalls.windows(2).all(|w| w[0] <= w[1]));
    }
    let table = retrieval_table(&[&i2t, &t2i]);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "direction\tk\trecall");
    assert_eq!(lines.len(), 7);
    assert!(lines[1].starts_with("i2t\t1\t"));
    assert!(lines[6].starts_with("t2i\t10\t"));
}

#[test]
fn cross_dataset_on_source_equals_cross_modal() {
    let (src, _) = small_synth(1);
    let model = small_model(10, 8, 4);
    let params = init_params(&model, 5).unwrap();
    let before = params.clone();
    let a = cross_modal_eval(&params, &model, &src, Split::Test, &DEFAULT_KS).unwrap();
    let b = cross_dataset_eval(&params, &model, &src, &DEFAULT_KS).unwrap();
    assert_eq!(a, b);
    assert!(params.bit_eq(&before));
}

#[test]
fn cross_dataset_rejects_other_widths() {
    let (src, _) = small_synth(1);
    let model = small_model(12, 8, 4);
    let params = init_params(&model, 0).unwrap();
    assert!(matches!(
        cross_dataset_eval(&params, &model, &src, &[1]),
        Err(EvalError::DimensionMismatch { what: "image features", expected: 12, got: 10 })
    ));
}

#[test]
fn untrained_model_is_near_chance() {
    let (src, _) = synth_generate(&SynthConfig {
        image_dim: 32,
        text_dim: 24,
        ..SynthConfig::default()
    })
    .unwrap();
    let model = small_model(32, 24, 8);
    let params = init_params(&model, 9).unwrap();
    let (i2t, t2i) = cross_modal_eval(&params, &model, &src, Split::Test, &[1]).unwrap();
    // 200 queries against 200 candidates: chance is 0.005, binomial sd about 0.005.
    for r in [i2t, t2i] {
        assert!(r.recalls[0] <= 0.005 + 4.0 * 0.005, "{:?}", r.recalls);
    }
}

#[test]
fn single_test_pair_recall_is_binary() {
    let ds = Dataset {
        image_features: rows(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]),
        text: TextPayload::Features(rows(&[&[0.5], &[0.2], &[0.9]])),
        pairs: vec![(0, 0), (1, 1), (2, 2)],
        image_split: vec![Split::Train, Split::Train, Split::Test],
        text_split: vec![Split::Train, Split::Train, Split::Test],
        five_caption: false,
        image_labels: None,
        text_labels: None,
        vocab: None,
    };
    let model = small_model(2, 1, 3);
    let params = init_params(&model, 1).unwrap();
    let (i2t, t2i) = cross_modal_eval(&params, &model, &ds, Split::Test, &[1]).unwrap();
    assert_eq!(i2t.recalls, vec![1.0]);
    assert_eq!(t2i.recalls, vec![1.0]);
}

fn normal_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Matrix {
    Matrix::new(n, d, (0..n * d).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

#[test]
fn standard_normal_sampler_matches_prior() {
    let d = 8;
    let n = 10_000;
    let model = small_model(4, 4, d);
    let disc = init_params(&model, 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let zv = normal_matrix(&mut rng, n, d);
    let zt = normal_matrix(&mut rng, n, d);
    let items: Vec<usize> = (0..n).collect();
    let dg = diagnose_latents(
        LatentSample {
            latents: &zv,
            items: &items,
            labels: None,
        },
        LatentSample {
            latents: &zt,
            items: &items,
            labels: None,
        },
        &disc,
        5,
    )
    .unwrap();
    let bound = 4.0 / (n as f64).sqrt();
    for m in [&dg.image, &dg.text] {
        assert_eq!(m.count, n);
        assert!(m.mean.iter().all(|x| x.abs() < bound), "{:?}", m.mean);
        assert!(m.variance.iter().all(|v| (0.94..=1.06).contains(v)), "{:?}", m.variance);
    }
    assert!((0.47..=0.53).contains(&dg.disc_balanced_accuracy), "{}", dg.disc_balanced_accuracy);
}

/// Calls a latent prior when its l1 norm exceeds 0.05.
fn origin_detector(d: usize) -> ModelParams {
    let mut p = ModelParams::new();
    let mut w1 = vec![0.0; d * 2 * d];
    for i in 0..d {
        w1[i * 2 * d + i] = 1.0;
        w1[i * 2 * d + d + i] = -1.0;
    }
    p.insert("disc.layer1.weight", Tensor::matrix(d, 2 * d, w1).unwrap());
    p.insert("disc.layer1.bias", Tensor::new(vec![2 * d], vec![0.0; 2 * d]).unwrap());
    p.insert("disc.layer2.weight", Tensor::matrix(2 * d, 1, vec![1.0; 2 * d]).unwrap());
    p.insert("disc.layer2.bias", Tensor::new(vec![1], vec![0.0]).unwrap());
    p.insert("disc.layer3.weight", Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap());
    p.insert("disc.layer3.bias", Tensor::new(vec![2], vec![-0.05, 0.0]).unwrap());
    p
}

#[test]
fn zero_encoder_is_separable() {
    let d = 4;
    let z = Matrix::new(300, d, vec![0.0; 300 * d]).unwrap();
    let items: Vec<usize> = (0..300).collect();
    let sample = || LatentSample {
        latents: &z,
        items: &items,
        labels: None,
    };
    let dg = diagnose_latents(sample(), sample(), &origin_detector(d), 1).unwrap();
    assert!(dg.pooled.mean.iter().all(|&m| m == 0.0));
    assert!(dg.pooled.variance.iter().all(|&v| v == 0.0));
    assert_eq!(dg.encoded_accuracy, 1.0);
    assert!(dg.disc_balanced_accuracy > 0.99, "{}", dg.disc_balanced_accuracy);
}

#[test]
fn aligned_pairs_share_projection() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let z = normal_matrix(&mut rng, 30, 5);
    let items: Vec<usize> = (100..130).collect();
    let labels: Vec<u32> = (0..30).map(|i| i % 3).collect();
    let model = small_model(2, 2, 5);
    let disc = init_params(&model, 0).unwrap();
    let sample = || LatentSample {
        latents: &z,
        items: &items,
        labels: Some(&labels),
    };
    let dg = diagnose_latents(sample(), sample(), &disc, 0).unwrap();
    assert_eq!(dg.projection.len(), 60);
    for k in 0..30 {
        let (a, b) = (&dg.projection[k], &dg.projection[30 + k]);
        assert_eq!((a.item, a.label), (b.item, b.label));
        assert_eq!((a.u, a.v), (b.u, b.v));
    }
    let table = projection_table(&dg.projection);
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("item\tmodality\tlabel\tu\tv"));
    assert!(lines.next().unwrap().starts_with("100\timage\t0\t"));
    assert_eq!(table.lines().count(), 61);
}

#[test]
fn latent_diagnostics_caps_samples() {
    let (src, _) = small_synth(1);
    let model = small_model(10, 8, 4);
    let params = init_params(&model, 3).unwrap();
    let dg = latent_diagnostics(&params, &model, &src, Split::Train, 10, 0).unwrap();
    assert_eq!(dg.image.count, 10);
    assert_eq!(dg.text.count, 10);
    assert_eq!(dg.pooled.count, 20);
    assert!(dg.projection.iter().all(|r| r.label.is_some()));
}
