//! End-to-end acceptance suite. Each test prints one PASS/FAIL line; the
//! numeric criteria check analytic code against independent scalar-loop
//! oracles, and the corpus criteria train real models on a generated
//! planted-signal corpus.

use std::collections::HashMap;
use std::sync::OnceLock;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use friss_core::autoencoder::{
    contrastive_loss, focal_triplet_loss, sample_gumbel_noise, smallest_t_indices, view_loss,
    GumbelSchedule, SpanTerm, UnsupLossConfig, LOG_EPS,
};
use friss_core::classifier::{sentence_classify, span_classify, supervised_loss};
use friss_core::corpus::{load_corpus, save_corpus, stratified_folds, Document, LabelRegistry, View};
use friss_core::encoding::EncoderConfig;
use friss_core::model::{ModelDims, ModelParams};
use friss_core::synthetic::{generate, generate_unlabeled, SyntheticConfig};
use friss_core::trainer::{
    ablate, batch_loss_value, prepare_batch, prepare_documents, train_fold, train_on,
    AblationSwitch, DictInit, TrainConfig, TrainReport,
};

fn report(id: usize, name: &str, pass: bool) {
    println!(
        "acceptance {:02} {:<28} {}",
        id,
        name,
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "acceptance criterion {id} ({name}) failed");
}

// ---------------------------------------------------------------------------
// Scalar-loop oracles, written independently of the graph implementation.
// ---------------------------------------------------------------------------

fn o_matvec(w: &Array2<f64>, x: &[f64]) -> Vec<f64> {
    (0..w.nrows())
        .map(|r| (0..w.ncols()).map(|c| w[[r, c]] * x[c]).sum())
        .collect()
}

fn o_relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

fn o_softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|&v| (v - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / s).collect()
}

fn o_l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn o_contrastive(v_hat: &[f64], v_pos: &[f64], negs: &[Vec<f64>], margin: f64) -> f64 {
    let dp = o_l2(v_hat, v_pos);
    let total: f64 = negs
        .iter()
        .map(|n| (margin + dp - o_l2(v_hat, n)).max(0.0))
        .sum();
    total / negs.len() as f64
}

fn o_focal(
    f: &Array2<f64>,
    weights: &[f64],
    v_hat: &[f64],
    v_pos: &[f64],
    t: usize,
    m_budget: f64,
) -> f64 {
    let selected = smallest_t_indices(weights, t);
    let sum: f64 = selected.iter().map(|&i| weights[i]).sum();
    let dp = o_l2(v_hat, v_pos);
    let mut total = 0.0;
    for &i in &selected {
        let g_t = weights[i] / sum;
        let m_i = m_budget * (1.0 - g_t) * (1.0 - g_t);
        let row: Vec<f64> = (0..f.ncols()).map(|c| f[[i, c]]).collect();
        total += (m_i + dp - o_l2(v_hat, &row)).max(0.0);
    }
    total / t as f64
}

fn o_encode(params: &ModelParams, v_tilde: &[f64], view: View) -> Vec<f64> {
    let hidden = o_relu(&o_matvec(&params.w_h, v_tilde));
    o_softmax(&o_matvec(&params.w_view[view.index()], &hidden))
}

fn o_gumbel(d: &[f64], tau: f64, noise: &[f64]) -> Vec<f64> {
    let logits: Vec<f64> = d
        .iter()
        .zip(noise)
        .map(|(&p, &n)| ((p + LOG_EPS).ln() + n) / tau)
        .collect();
    o_softmax(&logits)
}

fn o_reconstruct(f: &Array2<f64>, g: &[f64]) -> Vec<f64> {
    (0..f.ncols())
        .map(|c| (0..f.nrows()).map(|r| f[[r, c]] * g[r]).sum())
        .collect()
}

fn o_gram_penalty(f: &Array2<f64>, lambda: f64) -> f64 {
    let k = f.nrows();
    let mut total = 0.0;
    for i in 0..k {
        for j in 0..k {
            let dot: f64 = (0..f.ncols()).map(|c| f[[i, c]] * f[[j, c]]).sum();
            let target = if i == j { 1.0 } else { 0.0 };
            total += (dot - target) * (dot - target);
        }
    }
    lambda * total
}

fn rand_vec<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn rand_simplex<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

// ---------------------------------------------------------------------------
// Shared trained fixture for the synthetic-corpus criteria.
// ---------------------------------------------------------------------------

struct TrainedFixture {
    report: TrainReport,
}

/// Desk-scale training preset for the synthetic experiments: identical to the
/// library default except for a learning rate sized for a few hundred
/// optimizer steps from random init (the default is tuned for long
/// fine-tuning runs and cannot converge within the 10-epoch budget here).
fn base_config(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        lr_other: 2e-2,
        encoder: EncoderConfig::default(),
        ..Default::default()
    }
}

fn trained_fixture() -> &'static TrainedFixture {
    static FIXTURE: OnceLock<TrainedFixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let corpus = generate(&SyntheticConfig::default());
        let cfg = base_config(7);
        let split = stratified_folds(&corpus.docs, 5, 7).unwrap();
        let (report, _params) = train_fold(&corpus.docs, &split, 0, &cfg).unwrap();
        TrainedFixture { report }
    })
}

/// Mean held-out accuracy of training runs over several seeds.
fn seeded_accuracies(
    train: &[Document],
    unlabeled: &[Document],
    eval: &[Document],
    cfg_of: impl Fn(u64) -> TrainConfig,
    seeds: &[u64],
) -> Vec<f64> {
    seeds
        .iter()
        .map(|&seed| {
            let cfg = cfg_of(seed);
            let train_refs: Vec<&Document> = train.iter().collect();
            let unlab_refs: Vec<&Document> = unlabeled.iter().collect();
            let eval_refs: Vec<&Document> = eval.iter().collect();
            let (train_e, _) = prepare_documents(&train_refs, &cfg).unwrap();
            let (unlab_e, _) = prepare_documents(&unlab_refs, &cfg).unwrap();
            let (eval_e, _) = prepare_documents(&eval_refs, &cfg).unwrap();
            let (report, _) = train_on(&train_e, &unlab_e, &eval_e, &cfg, 0).unwrap();
            report.best_accuracy
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

// ---------------------------------------------------------------------------
// Criteria
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_gradient_check() {
    let cfg = TrainConfig {
        k: 3,
        t: 2,
        m_budget: 2.0,
        negatives: 2,
        dropout: 0.3,
        encoder: EncoderConfig {
            dim: 4,
            ..Default::default()
        },
        ..Default::default()
    };
    let corpus = generate(&SyntheticConfig {
        n_classes: 3,
        docs_per_class: 1,
        sentences_per_doc: 2,
        seed: 11,
        ..Default::default()
    });
    let refs: Vec<&Document> = corpus.docs.iter().collect();
    let (encoded, _) = prepare_documents(&refs, &cfg).unwrap();
    let batch: Vec<_> = encoded.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let prepared = prepare_batch(&batch, &cfg, &mut rng, true);
    let tau = 0.8;

    let params = ModelParams::init(cfg.dims(), 21);
    let analytic = {
        use friss_core::graph::Graph;
        use friss_core::model::ParamVars;
        let mut g = Graph::new();
        let pv = ParamVars::insert(&mut g, &params);
        let vars = friss_core::trainer::batch_loss_graph(&mut g, &pv, &prepared, &cfg, tau).unwrap();
        g.backward(vars.total);
        pv.all()
            .into_iter()
            .map(|(name, var)| (name, g.grad(var).clone()))
            .collect::<Vec<_>>()
    };

    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for (name, grad) in &analytic {
        let shape = grad.raw_dim();
        for r in 0..shape[0] {
            for c in 0..shape[1] {
                let mut plus = params.clone();
                let mut minus = params.clone();
                for (n, t) in plus.named_arrays_mut() {
                    if n == *name {
                        t[[r, c]] += eps;
                    }
                }
                for (n, t) in minus.named_arrays_mut() {
                    if n == *name {
                        t[[r, c]] -= eps;
                    }
                }
                let fd = (batch_loss_value(&plus, &prepared, &cfg, tau).unwrap()
                    - batch_loss_value(&minus, &prepared, &cfg, tau).unwrap())
                    / (2.0 * eps);
                let a = grad[[r, c]];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
    }
    report(1, "gradient_check", worst <= 1e-4);
}

#[test]
fn criterion_02_loss_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(123);
    let tol = 1e-6;
    let mut ok = true;

    for _ in 0..100 {
        let d = rng.gen_range(3..7);
        let n_negs = rng.gen_range(1..4);
        let margin = rng.gen_range(0.2..2.0);
        let v_hat = rand_vec(d, &mut rng);
        let v_pos = rand_vec(d, &mut rng);
        let negs: Vec<Vec<f64>> = (0..n_negs).map(|_| rand_vec(d, &mut rng)).collect();
        let got = contrastive_loss(
            &Array1::from(v_hat.clone()),
            &Array1::from(v_pos.clone()),
            &negs.iter().map(|n| Array1::from(n.clone())).collect::<Vec<_>>(),
            margin,
        )
        .unwrap();
        ok &= (got - o_contrastive(&v_hat, &v_pos, &negs, margin)).abs() <= tol;
    }

    for _ in 0..100 {
        let k = rng.gen_range(3..7);
        let d = rng.gen_range(3..6);
        let t = rng.gen_range(1..k);
        let m_budget = rng.gen_range(1.0..8.0);
        let f = Array2::from_shape_fn((k, d), |_| rng.gen_range(-1.0..1.0));
        let weights = rand_simplex(k, &mut rng);
        let v_hat = rand_vec(d, &mut rng);
        let v_pos = rand_vec(d, &mut rng);
        let got = focal_triplet_loss(
            &f,
            &Array1::from(weights.clone()),
            &Array1::from(v_hat.clone()),
            &Array1::from(v_pos.clone()),
            t,
            m_budget,
        )
        .unwrap();
        ok &= (got - o_focal(&f, &weights, &v_hat, &v_pos, t, m_budget)).abs() <= tol;
    }

    for _ in 0..100 {
        let k = rng.gen_range(3..6);
        let d_w = rng.gen_range(3..5);
        let dims = ModelDims { d_w, d_h: d_w, k };
        let params = ModelParams::init(dims, rng.gen());
        let cfg = UnsupLossConfig {
            t: rng.gen_range(1..k),
            m_budget: 3.0,
            ..Default::default()
        };
        let tau = rng.gen_range(0.5..1.5);
        let view = View::ALL[rng.gen_range(0..3)];
        let n_spans = rng.gen_range(1..4);
        let v_tildes: Vec<Array1<f64>> =
            (0..n_spans).map(|_| Array1::from(rand_vec(2 * d_w, &mut rng))).collect();
        let v_poss: Vec<Array1<f64>> =
            (0..n_spans).map(|_| Array1::from(rand_vec(d_w, &mut rng))).collect();
        let negs: Vec<Vec<Array1<f64>>> = (0..n_spans)
            .map(|_| (0..2).map(|_| Array1::from(rand_vec(d_w, &mut rng))).collect())
            .collect();
        let noises: Vec<Array1<f64>> =
            (0..n_spans).map(|_| sample_gumbel_noise(k, &mut rng)).collect();
        let spans: Vec<SpanTerm> = (0..n_spans)
            .map(|i| SpanTerm {
                v_tilde: &v_tildes[i],
                v_pos: &v_poss[i],
                negatives: negs[i].iter().collect(),
                noise: Some(noises[i].clone()),
                dropout_mask: None,
            })
            .collect();
        let got = view_loss(&params, view, &spans, tau, &cfg).unwrap();

        let mut want = o_gram_penalty(&params.f[view.index()], cfg.lambda_orth);
        for i in 0..n_spans {
            let d = o_encode(&params, v_tildes[i].as_slice().unwrap(), view);
            let g = o_gumbel(&d, tau, noises[i].as_slice().unwrap());
            let v_hat = o_reconstruct(&params.f[view.index()], &g);
            let v_pos: Vec<f64> = v_poss[i].to_vec();
            let neg_vecs: Vec<Vec<f64>> = negs[i].iter().map(|n| n.to_vec()).collect();
            want += o_contrastive(&v_hat, &v_pos, &neg_vecs, cfg.margin);
            want += o_focal(
                &params.f[view.index()],
                &g,
                &v_hat,
                &v_pos,
                cfg.t,
                cfg.m_budget,
            );
        }
        ok &= (got - want).abs() <= tol;
    }

    for _ in 0..100 {
        let k = rng.gen_range(3..6);
        let mut activations: [Vec<Array1<f64>>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        let mut present = 0;
        for v in 0..3 {
            let n = rng.gen_range(0..3);
            if n > 0 {
                present += 1;
            }
            activations[v] = (0..n).map(|_| Array1::from(rand_simplex(k, &mut rng))).collect();
        }
        if present == 0 {
            activations[0].push(Array1::from(rand_simplex(k, &mut rng)));
        }
        let got = span_classify(&activations).unwrap();
        // Oracle: mean over non-empty views of per-view span means, softmaxed.
        let mut acc = vec![0.0; k];
        let mut z = 0.0;
        for d_list in activations.iter() {
            if d_list.is_empty() {
                continue;
            }
            z += 1.0;
            for (i, a) in acc.iter_mut().enumerate() {
                *a += d_list.iter().map(|d| d[i]).sum::<f64>() / d_list.len() as f64;
            }
        }
        let want = o_softmax(&acc.iter().map(|a| a / z).collect::<Vec<_>>());
        ok &= got
            .iter()
            .zip(&want)
            .all(|(a, b)| (a - b).abs() <= tol);
    }

    for _ in 0..100 {
        let k = rng.gen_range(3..6);
        let d_w = rng.gen_range(3..5);
        let params = ModelParams::init(ModelDims { d_w, d_h: d_w, k }, rng.gen());
        let n_sents = rng.gen_range(1..4);
        let sents: Vec<Array1<f64>> =
            (0..n_sents).map(|_| Array1::from(rand_vec(d_w, &mut rng))).collect();
        let got = sentence_classify(&params, &sents).unwrap();
        let mut acc = vec![0.0; k];
        for s in &sents {
            let logits = o_matvec(&params.w_t, &o_relu(&o_matvec(&params.w_r, s.as_slice().unwrap())));
            for (a, l) in acc.iter_mut().zip(&logits) {
                *a += l / n_sents as f64;
            }
        }
        let want = o_softmax(&acc);
        ok &= got.iter().zip(&want).all(|(a, b)| (a - b).abs() <= tol);
    }

    for _ in 0..100 {
        let k = rng.gen_range(3..8);
        let u = rand_simplex(k, &mut rng);
        let s = rand_simplex(k, &mut rng);
        let y = rng.gen_range(0..k);
        let got = supervised_loss(&Array1::from(u.clone()), &Array1::from(s.clone()), y);
        let want = -(u[y].ln()) - s[y].ln();
        ok &= (got - want).abs() <= tol;
    }

    report(2, "loss_oracles", ok);
}

#[test]
fn criterion_03_uniform_ce_bound() {
    let cfg = base_config(0);
    let corpus = generate(&SyntheticConfig {
        docs_per_class: 1,
        ..Default::default()
    });
    let refs: Vec<&Document> = corpus.docs.iter().collect();
    let (encoded, _) = prepare_documents(&refs, &cfg).unwrap();
    let mut params = ModelParams::init(cfg.dims(), 4);
    for w in params.w_view.iter_mut() {
        w.fill(0.0);
    }
    params.w_t.fill(0.0);
    let want = 2.0 * (15.0f64).ln();
    let mut ok = true;
    for doc in &encoded {
        let mut activations: [Vec<Array1<f64>>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for span in &doc.spans {
            let d = friss_core::autoencoder::descriptor_distribution(&params, &span.v_tilde, span.view)
                .unwrap();
            activations[span.view.index()].push(d);
        }
        let y_hat_u = span_classify(&activations).unwrap();
        let y_hat_s = sentence_classify(&params, &doc.sentence_vectors).unwrap();
        let x = supervised_loss(&y_hat_u, &y_hat_s, doc.label.unwrap());
        ok &= (x - want).abs() <= 1e-3;
    }
    report(3, "uniform_ce_bound", ok);
}

#[test]
fn criterion_04_gumbel_schedule() {
    let schedule = GumbelSchedule::default();
    let mut ok = true;
    let mut floor_bucket = None;
    for b in 0..=40usize {
        let tau = schedule.tau(b * 50);
        let want = (-5e-4 * 50.0 * b as f64).exp().max(0.5);
        ok &= (tau - want).abs() <= 1e-12;
        if floor_bucket.is_none() && (tau - 0.5).abs() <= 1e-12 {
            floor_bucket = Some(b);
        }
    }
    ok &= floor_bucket == Some(28);
    report(4, "gumbel_schedule", ok);
}

#[test]
fn criterion_05_synthetic_training() {
    let start = std::time::Instant::now();
    let fixture = trained_fixture();
    let elapsed = start.elapsed();
    let ok = fixture.report.best_accuracy >= 0.90
        && fixture.report.best_macro_f1 >= 0.85
        && elapsed.as_secs() < 300;
    println!(
        "  accuracy {:.4}, macro-F1 {:.4}, {:?}",
        fixture.report.best_accuracy, fixture.report.best_macro_f1, elapsed
    );
    report(5, "synthetic_training", ok);
}

#[test]
fn criterion_06_semi_supervised_benefit() {
    // 50 labeled docs, 500 unlabeled, separate labeled evaluation set.
    let syn = SyntheticConfig {
        docs_per_class: 10,
        noise_rate: 0.4,
        seed: 31,
        ..Default::default()
    };
    let labeled_pool = generate(&syn);
    let mut labeled = Vec::new();
    let mut eval = Vec::new();
    for class in 0..15 {
        let class_docs: Vec<&Document> = labeled_pool
            .docs
            .iter()
            .filter(|d| d.label == Some(class))
            .collect();
        for (i, d) in class_docs.iter().enumerate() {
            if i < 4 {
                if labeled.len() < 50 {
                    labeled.push((*d).clone());
                }
            } else {
                eval.push((*d).clone());
            }
        }
    }
    let unlabeled = generate_unlabeled(&syn, 500, 99);
    let seeds = [1u64, 2, 3, 4, 5];
    let with = seeded_accuracies(
        &labeled,
        &unlabeled,
        &eval,
        |seed| TrainConfig {
            unlabeled_per_batch: 1,
            ..base_config(seed)
        },
        &seeds,
    );
    let without = seeded_accuracies(&labeled, &[], &eval, base_config, &seeds);
    let wins = with.iter().zip(&without).filter(|(a, b)| a > b).count();
    println!(
        "  with unlabeled {:?} (mean {:.4}), without {:?} (mean {:.4}), wins {}/5",
        with,
        mean(&with),
        without,
        mean(&without),
        wins
    );
    let ok = mean(&with) >= mean(&without) - 0.01 && wins >= 3;
    report(6, "semi_supervised_benefit", ok);
}

#[test]
fn criterion_07_ablation_direction() {
    let syn = SyntheticConfig {
        docs_per_class: 10,
        seed: 17,
        ..Default::default()
    };
    let corpus = generate(&syn);
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for (i, d) in corpus.docs.iter().enumerate() {
        if i % 5 == 0 {
            eval.push(d.clone());
        } else {
            train.push(d.clone());
        }
    }
    let seeds = [1u64, 2, 3, 4, 5];
    let full = mean(&seeded_accuracies(&train, &[], &eval, base_config, &seeds));
    let no_focal = mean(&seeded_accuracies(
        &train,
        &[],
        &eval,
        |s| ablate(&base_config(s), AblationSwitch::NoFocal),
        &seeds,
    ));
    let no_gumbel = mean(&seeded_accuracies(
        &train,
        &[],
        &eval,
        |s| ablate(&base_config(s), AblationSwitch::NoGumbel),
        &seeds,
    ));
    println!("  full {full:.4}, -focal {no_focal:.4}, -gumbel {no_gumbel:.4}");
    let ok = no_focal <= full + 0.02 && no_gumbel <= full + 0.02;
    report(7, "ablation_direction", ok);
}

#[test]
fn criterion_08_descriptor_recovery() {
    use friss_core::encoding::build_encoder;
    use friss_core::interpret::{extract_descriptors, DescriptorMode, SimpleNormalizer, TextNormalizer};
    // Descriptor alignment needs a longer, supervision-heavy run than the
    // criterion-5 fixture: the classification accuracy saturates long before
    // the per-view descriptor indices settle onto the classes, so we weight
    // the supervised term heavily, seed the dictionaries from data centroids,
    // and keep the final parameters instead of the earliest accuracy peak.
    let corpus = generate(&SyntheticConfig::default());
    let cfg = TrainConfig {
        alpha: 0.97,
        max_epochs: 60,
        dict_init: DictInit::Centroid,
        eval_every: usize::MAX,
        early_stop_patience: usize::MAX,
        ..base_config(7)
    };
    let split = stratified_folds(&corpus.docs, 5, 7).unwrap();
    let (_report, params) = train_fold(&corpus.docs, &split, 0, &cfg).unwrap();
    let encoder = build_encoder(&cfg.encoder).unwrap();
    let docs_refs: Vec<&Document> = corpus.docs.iter().collect();
    // Filter through the training limits so spans match what the model saw.
    let filtered: Vec<Document> = docs_refs
        .iter()
        .map(|d| friss_core::corpus::filter_document(d, &cfg.limits).unwrap())
        .collect();
    let rep = extract_descriptors(
        &params,
        encoder.as_ref(),
        &filtered,
        0.8,
        DescriptorMode::EvalD,
        &SimpleNormalizer::default(),
    )
    .unwrap();
    let by_cell: HashMap<(usize, View), Vec<String>> = rep
        .cells
        .iter()
        .map(|c| {
            (
                (c.frame, c.view),
                c.entries.iter().take(10).map(|e| e.text.clone()).collect(),
            )
        })
        .collect();
    let norm = SimpleNormalizer::default();
    let mut ok = true;
    for class in 0..15 {
        let mut best_recovery = 0.0f64;
        for view in View::ALL {
            let pool = &corpus.pools[&(class, view)];
            let Some(top) = by_cell.get(&(class, view)) else {
                continue;
            };
            let hits = pool
                .iter()
                .filter(|tok| {
                    let key = norm.normalize(tok);
                    top.iter().any(|t| t.split(' ').any(|w| w == key))
                })
                .count();
            best_recovery = best_recovery.max(hits as f64 / pool.len() as f64);
        }
        if best_recovery < 0.6 {
            println!("  class {class}: best view recovery {best_recovery:.2}");
            ok = false;
        }
    }
    report(8, "descriptor_recovery", ok);
}

#[test]
fn criterion_09_determinism() {
    let corpus = generate(&SyntheticConfig {
        docs_per_class: 4,
        seed: 23,
        ..Default::default()
    });
    let cfg = TrainConfig {
        max_epochs: 2,
        ..base_config(13)
    };
    let split = stratified_folds(&corpus.docs, 4, 13).unwrap();
    let (r1, p1) = train_fold(&corpus.docs, &split, 0, &cfg).unwrap();
    let (r2, p2) = train_fold(&corpus.docs, &split, 0, &cfg).unwrap();
    let mut ok = p1 == p2 && r1.losses.len() == r2.losses.len() && r1.evals.len() == r2.evals.len();
    for (a, b) in r1.losses.iter().zip(&r2.losses) {
        ok &= (a.total - b.total).abs() <= 1e-6
            && (a.supervised - b.supervised).abs() <= 1e-6
            && (a.unsupervised - b.unsupervised).abs() <= 1e-6;
    }
    for (a, b) in r1.evals.iter().zip(&r2.evals) {
        ok &= (a.accuracy - b.accuracy).abs() <= 1e-6 && (a.macro_f1 - b.macro_f1).abs() <= 1e-6;
    }
    report(9, "determinism", ok);
}

#[test]
fn criterion_10_data_layer() {
    let mut corpus = generate(&SyntheticConfig {
        docs_per_class: 7,
        seed: 3,
        ..Default::default()
    });
    corpus
        .docs
        .extend(generate_unlabeled(&SyntheticConfig::default(), 13, 8));
    let k_folds = 4;
    let split = stratified_folds(&corpus.docs, k_folds, 5).unwrap();
    let mut ok = true;

    // Per-class fold counts differ by at most one.
    let label_of: HashMap<&str, Option<usize>> =
        corpus.docs.iter().map(|d| (d.doc_id.as_str(), d.label)).collect();
    for class in 0..15usize {
        let counts: Vec<usize> = split
            .folds
            .iter()
            .map(|fold| {
                fold.iter()
                    .filter(|id| label_of[id.as_str()] == Some(class))
                    .count()
            })
            .collect();
        let lo = *counts.iter().min().unwrap();
        let hi = *counts.iter().max().unwrap();
        ok &= hi - lo <= 1;
    }
    // Unlabeled docs go to the unlabeled pool, labeled docs partition folds.
    ok &= split.unlabeled.len() == 13;
    let total: usize = split.folds.iter().map(Vec::len).sum();
    ok &= total == corpus.docs.len() - 13;

    // JSONL round-trip is lossless.
    let registry = LabelRegistry::mfc_default();
    let dir = std::env::temp_dir().join("friss_acceptance");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("roundtrip.jsonl");
    save_corpus(&corpus.docs, &registry, &path).unwrap();
    let loaded = load_corpus(&path, &registry).unwrap();
    ok &= loaded == corpus.docs;

    report(10, "data_layer", ok);
}
