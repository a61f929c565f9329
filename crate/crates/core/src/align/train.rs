//! Two-stage alignment training: first the gesture VAE learns a latent space
//! by reconstruction, then the text path is pulled onto that space with an
//! in-batch contrastive loss over matched (phrase, gesture-latent) pairs.
//!
//! The second stage treats gesture latents as stop-gradient targets: the
//! encoder that produced them stays fixed and only the text encoder and
//! predictor move.  This keeps the latent space (and the reconstructions it
//! supports) intact while the text path learns to point at it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::{nt_xent_batch, AlignConfig, AlignmentModel};
use crate::diffusion::noise_like;
use crate::error::{CoreError, Result};
use crate::io::manifest::Split;
use crate::metrics::cosine_similarity;
use crate::motion::repr::clip_to_features;
use crate::nn::{AdamW, Binder, NodeId, Tape, Tensor};
use crate::synth::{derive_seed, Dataset};

/// Losses bracketing the two training stages.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlignReport {
    pub vae_recon_initial: Option<f64>,
    pub vae_recon_final: Option<f64>,
    pub contrastive_initial: Option<f64>,
    pub contrastive_final: Option<f64>,
    /// Set when the data cannot support a meaningful contrast.
    pub warning: Option<String>,
}

/// Held-out retrieval quality of a trained alignment model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrievalReport {
    /// Fraction of clips whose own class phrase is the nearest semantic.
    pub accuracy: f64,
    pub matched_mean_cosine: f64,
    pub mismatched_mean_cosine: f64,
    pub pairs: usize,
}

/// Train the gesture VAE and text path on the training split.
pub fn train_alignment(
    dataset: &Dataset,
    cfg: &AlignConfig,
    seed: u64,
) -> Result<(AlignmentModel, AlignReport)> {
    cfg.validate()?;
    let words = dataset.vocab.word_list();
    let clips: Vec<_> = dataset.split(Split::Train).collect();
    if clips.is_empty() {
        return Err(CoreError::validation("training split is empty"));
    }

    let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, (entry, _)) in clips.iter().enumerate() {
        by_class.entry(entry.class_id).or_default().push(i);
    }
    let warning = if by_class.len() < 2 {
        Some(
            "training data contains a single class; contrastive alignment is degenerate"
                .to_string(),
        )
    } else {
        None
    };

    let features: Vec<Tensor> = clips.iter().map(|(_, c)| clip_to_features(c)).collect();
    let tokens: Vec<Vec<usize>> = clips
        .iter()
        .map(|(e, _)| dataset.vocab.phrase_tokens(e.class_id as usize, &words))
        .collect();
    let in_channels = features[0].cols();

    let mut model = AlignmentModel::new(cfg, in_channels, words, derive_seed(seed, 0))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let mut opt = AdamW::new(cfg.lr);

    let mut report = AlignReport {
        vae_recon_initial: None,
        vae_recon_final: None,
        contrastive_initial: None,
        contrastive_final: None,
        warning,
    };

    // Stage 1: reconstruction plus a small KL pull toward the unit prior.
    for _ in 0..cfg.vae_iterations {
        let mut tape = Tape::new();
        let mut binder = Binder::new();
        let mut loss_terms = Vec::new();
        let mut recon_terms = Vec::new();
        for _ in 0..cfg.batch_size {
            let idx = rng.random_range(0..clips.len());
            let x = tape.constant(features[idx].clone());
            let (mu, logvar) = model.vae.encode_nodes(&mut tape, &mut binder, &model.store, x);
            let std_half = tape.scale(logvar, 0.5);
            let std = tape.exp(std_half);
            let eps = tape.constant(noise_like(&mut rng, 1, cfg.d_z));
            let jitter = tape.mul(std, eps);
            let z = tape.add(mu, jitter);
            let rec =
                model
                    .vae
                    .decode_nodes(&mut tape, &mut binder, &model.store, z, features[idx].rows());
            let recon = tape.mse(rec, x);
            let mu_sq = tape.mul(mu, mu);
            let ev = tape.exp(logvar);
            let t1 = tape.add_scalar(logvar, 1.0);
            let t2 = tape.sub(t1, mu_sq);
            let t3 = tape.sub(t2, ev);
            let kl_sum = tape.row_sum(t3);
            let kl = tape.scale(kl_sum, -0.5);
            let kl_w = tape.scale(kl, cfg.kl_weight);
            loss_terms.push(tape.add(recon, kl_w));
            recon_terms.push(recon);
        }
        let mut total = loss_terms[0];
        for &t in &loss_terms[1..] {
            total = tape.add(total, t);
        }
        let loss = tape.scale(total, 1.0 / cfg.batch_size as f64);
        let recon_mean = recon_terms
            .iter()
            .map(|&r| tape.value(r).item())
            .sum::<f64>()
            / cfg.batch_size as f64;
        if !recon_mean.is_finite() {
            return Err(CoreError::Divergence(
                "vae reconstruction loss became non-finite".to_string(),
            ));
        }
        if report.vae_recon_initial.is_none() {
            report.vae_recon_initial = Some(recon_mean);
        }
        report.vae_recon_final = Some(recon_mean);
        let grads = tape.backward(loss);
        let gmap = binder.grads(&tape, &grads);
        opt.apply(&mut model.store, &gmap);
    }
    model.store.is_finite().then_some(()).ok_or_else(|| {
        CoreError::Divergence("vae parameters became non-finite".to_string())
    })?;

    // Record per-dimension latent statistics as standardization buffers,
    // then freeze the standardized latents as stop-gradient targets for
    // stage 2.  Scaling by the within-class deviation makes the clip-to-clip
    // noise isotropic, so a dimension that separates two classes cleanly
    // keeps its full margin in cosine comparisons no matter how small its
    // absolute spread is.  With fewer than two classes (or clips) there are
    // no usable statistics and the buffers stay at identity.
    let raw: Vec<Tensor> = features
        .iter()
        .map(|f| model.vae.posterior_mean(&model.store, f))
        .collect::<Result<_>>()?;
    if raw.len() >= 2 && by_class.len() >= 2 {
        let n = raw.len() as f64;
        let mut center = Tensor::zeros(1, cfg.d_z);
        for r in &raw {
            center.axpy(1.0 / n, r);
        }
        let mut within = vec![0.0; cfg.d_z];
        for members in by_class.values() {
            let m = members.len() as f64;
            for j in 0..cfg.d_z {
                let mu: f64 = members.iter().map(|&i| raw[i].get(0, j)).sum::<f64>() / m;
                within[j] += members
                    .iter()
                    .map(|&i| (raw[i].get(0, j) - mu).powi(2))
                    .sum::<f64>()
                    / n;
            }
        }
        let mean_within = within.iter().map(|v| v.sqrt()).sum::<f64>() / cfg.d_z as f64;
        // Floor each deviation so a near-constant dimension cannot blow up
        // held-out latents.
        let scale = Tensor::from_fn(1, cfg.d_z, |_, j| {
            1.0 / (within[j].sqrt() + 0.01 * mean_within + 1e-12)
        });
        *model.store.get_mut("center") = center;
        *model.store.get_mut("scale") = scale;
    }
    let latents: Vec<Tensor> = features
        .iter()
        .map(|f| model.encode_features(f))
        .collect::<Result<_>>()?;

    // Stage 2: align text and gesture.  A regression warm-up first points
    // the text path at frozen gesture latents -- the shared words couple
    // many classes through the pooled embedding, and plain squared error
    // untangles that far faster than softmax gradients -- then an in-batch
    // contrast fine-tunes both towers together, letting the gesture encoder
    // spread angularly whatever still separates the classes.  The reported
    // contrastive losses bracket the whole stage.
    let class_ids: Vec<u32> = by_class.keys().copied().collect();
    let b = cfg.batch_size.min(class_ids.len());
    let unit_latents: Vec<Tensor> = latents
        .iter()
        .map(|l| {
            let norm = l.frob_sq().sqrt();
            if norm < 1e-12 {
                l.clone()
            } else {
                l.scale(1.0 / norm)
            }
        })
        .collect();

    // One batch of anchors against their candidates, shared by the
    // measurement pass and both training phases.
    let mut draw_batch = |rng: &mut ChaCha8Rng| -> Vec<usize> {
        let mut pool = class_ids.clone();
        for i in 0..b {
            let j = rng.random_range(i..pool.len());
            pool.swap(i, j);
        }
        pool[..b]
            .iter()
            .map(|class| {
                let members = &by_class[class];
                members[rng.random_range(0..members.len())]
            })
            .collect()
    };
    let anchors_for = |tape: &mut Tape,
                       binder: &mut Binder,
                       model: &AlignmentModel,
                       batch: &[usize]|
     -> Result<NodeId> {
        let mut rows = Vec::with_capacity(batch.len());
        for &idx in batch {
            let text = model
                .text
                .encode_node(tape, binder, &model.store, &tokens[idx])?;
            rows.push(model.predictor.apply_node(tape, binder, &model.store, text));
        }
        Ok(tape.concat_rows(&rows))
    };
    let stack = |items: &[Tensor]| -> Tensor {
        let cols = items[0].cols();
        let mut out = Tensor::zeros(items.len(), cols);
        for (i, item) in items.iter().enumerate() {
            out.row_mut(i).copy_from_slice(item.row(0));
        }
        out
    };

    if std::env::var("ALIGN_DEBUG").is_ok() {
        let mut cents: Vec<Vec<f64>> = Vec::new();
        for members in by_class.values() {
            let mut c = vec![0.0; cfg.d_z];
            for &i in members {
                for (j, v) in c.iter_mut().enumerate() {
                    *v += unit_latents[i].get(0, j) / members.len() as f64;
                }
            }
            cents.push(c);
        }
        for (pa, pb) in [(0usize, 1usize), (4, 5), (4, 6), (2, 3)] {
            let (ca, cb) = (&class_ids[pa], &class_ids[pb]);
            let (ma, mb) = (&by_class[ca], &by_class[cb]);
            let mut best = (0.0f64, 0usize);
            for j in 0..cfg.d_z {
                let mean = |m: &Vec<usize>| {
                    m.iter().map(|&i| raw[i].get(0, j)).sum::<f64>() / m.len() as f64
                };
                let sd = |m: &Vec<usize>, mu: f64| {
                    (m.iter().map(|&i| (raw[i].get(0, j) - mu).powi(2)).sum::<f64>()
                        / m.len() as f64)
                        .sqrt()
                };
                let (mua, mub) = (mean(ma), mean(mb));
                let ratio = (mua - mub).abs() / (sd(ma, mua) + sd(mb, mub) + 1e-12);
                if ratio > best.0 {
                    best = (ratio, j);
                }
            }
            eprintln!("pair ({pa},{pb}): best sep ratio {:.2} at dim {}", best.0, best.1);
        }
        for a in &cents {
            let row: Vec<String> = cents
                .iter()
                .map(|b| format!("{:+.2}", cosine_similarity(a, b).unwrap()))
                .collect();
            eprintln!("centroid sims: {}", row.join(" "));
        }
    }
    {
        let mut opt = AdamW::new(cfg.lr);
        for phase in [StagePhase::Warmup, StagePhase::Contrast] {
            let iterations = match phase {
                StagePhase::Warmup => cfg.warmup_iterations,
                StagePhase::Contrast => cfg.contrastive_iterations,
            };
            for _ in 0..iterations {
                let batch = draw_batch(&mut rng);
                let mut tape = Tape::new();
                let mut binder = Binder::new();
                let anchors = anchors_for(&mut tape, &mut binder, &model, &batch)?;
                let loss = match phase {
                    StagePhase::Warmup => {
                        let targets = stack(
                            &batch.iter().map(|&i| unit_latents[i].clone()).collect::<Vec<_>>(),
                        );
                        let t = tape.constant(targets);
                        tape.mse(anchors, t)
                    }
                    StagePhase::Contrast => {
                        // Candidates go through the live encoder and the
                        // same standardization as `encode_features`.
                        let center = tape.constant(model.store.get("center").clone());
                        let scl = tape.constant(model.store.get("scale").clone());
                        let mut rows = Vec::with_capacity(batch.len());
                        for &idx in &batch {
                            let x = tape.constant(features[idx].clone());
                            let (mu, _) =
                                model.vae.encode_nodes(&mut tape, &mut binder, &model.store, x);
                            let centered = tape.sub(mu, center);
                            rows.push(tape.mul(centered, scl));
                        }
                        let c = tape.concat_rows(&rows);
                        nt_xent_batch(&mut tape, anchors, c, cfg.temperature)?
                    }
                };
                if report.contrastive_initial.is_none() {
                    // Bracket the stage with the contrastive loss even while
                    // warming up on regression.
                    let cands =
                        stack(&batch.iter().map(|&i| latents[i].clone()).collect::<Vec<_>>());
                    let c = tape.constant(cands);
                    let probe = nt_xent_batch(&mut tape, anchors, c, cfg.temperature)?;
                    report.contrastive_initial = Some(tape.value(probe).item());
                }
                let value = tape.value(loss).item();
                if std::env::var("ALIGN_DEBUG").is_ok() {
                    eprintln!("phase={} loss={value:.6}", matches!(phase, StagePhase::Warmup) as u8);
                }
                if !value.is_finite() {
                    return Err(CoreError::Divergence(
                        "alignment loss became non-finite".to_string(),
                    ));
                }
                if matches!(phase, StagePhase::Contrast) {
                    report.contrastive_final = Some(value);
                }
                let grads = tape.backward(loss);
                let gmap = binder.grads(&tape, &grads);
                opt.apply(&mut model.store, &gmap);
            }
        }
    }
    model.store.is_finite().then_some(()).ok_or_else(|| {
        CoreError::Divergence("alignment parameters became non-finite".to_string())
    })?;

    Ok((model, report))
}

enum StagePhase {
    Warmup,
    Contrast,
}

/// Score text-to-gesture retrieval on the given splits: for every clip,
/// rank all class phrases by cosine similarity between the predicted
/// semantic and the clip's gesture latent.
pub fn retrieval_report(
    model: &AlignmentModel,
    dataset: &Dataset,
    splits: &[Split],
) -> Result<RetrievalReport> {
    if model.vocab_words != dataset.vocab.word_list() {
        return Err(CoreError::validation(
            "model vocabulary does not match the dataset",
        ));
    }
    let words = &model.vocab_words;
    let mut semantics = Vec::with_capacity(dataset.vocab.len());
    for class in 0..dataset.vocab.len() {
        let tokens = dataset.vocab.phrase_tokens(class, words);
        semantics.push(model.semantic_from_tokens(&tokens)?);
    }

    let mut pairs = 0usize;
    let mut correct = 0usize;
    let mut matched_sum = 0.0;
    let mut mismatched_sum = 0.0;
    let mut mismatched_count = 0usize;
    for &split in splits {
        for (entry, clip) in dataset.split(split) {
            let latent = model.encode_gesture(clip)?;
            let mut best = 0usize;
            let mut best_sim = f64::NEG_INFINITY;
            for (class, sem) in semantics.iter().enumerate() {
                let sim = cosine_similarity(latent.data(), sem.data())?;
                if class == entry.class_id as usize {
                    matched_sum += sim;
                } else {
                    mismatched_sum += sim;
                    mismatched_count += 1;
                }
                if sim > best_sim {
                    best_sim = sim;
                    best = class;
                }
            }
            if best == entry.class_id as usize {
                correct += 1;
            }
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Err(CoreError::validation("no clips in the requested splits"));
    }
    Ok(RetrievalReport {
        accuracy: correct as f64 / pairs as f64,
        matched_mean_cosine: matched_sum / pairs as f64,
        mismatched_mean_cosine: mismatched_sum / mismatched_count.max(1) as f64,
        pairs,
    })
}
