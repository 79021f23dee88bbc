//! Training: softmax cross-entropy on raw logits, the Adam optimizer,
//! seeded Glorot-uniform weight initialization, and the epoch loop with
//! validation, per-epoch checkpoints, and a CSV history.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint;
use crate::data::{batches, epoch_order, load_batch, DatasetIndex};
use crate::error::{Error, Result};
use crate::model::{argmax_rows, LayerKind, Model};
use crate::tensor::Tensor;

/// Mean softmax cross-entropy over a batch of logits, plus the gradient at
/// the logits.
///
/// Per row: softmax with max-subtraction for stability, loss
/// `-log softmax[true]`; the returned `dlogits` is `(softmax - onehot) / b`,
/// i.e. the gradient of the *mean* loss. Row arithmetic runs in f64.
pub fn softmax_ce_from_logits(logits: &Tensor, onehot: &Tensor) -> Result<(f64, Tensor)> {
    if logits.shape().rank() != 2 || logits.dims() != onehot.dims() {
        return Err(Error::ShapeMismatch {
            expected: format!("{}", logits.shape()),
            got: format!("{}", onehot.shape()),
        });
    }
    let (b, k) = (logits.dims()[0], logits.dims()[1]);
    let l = logits.data();
    let y = onehot.data();
    let mut dlogits = vec![0.0f32; b * k];
    let mut loss_sum = 0.0f64;
    for row in 0..b {
        let yr = &y[row * k..(row + 1) * k];
        let mut true_idx = None;
        for (i, &v) in yr.iter().enumerate() {
            if v == 1.0 {
                if true_idx.replace(i).is_some() {
                    return Err(Error::MalformedOneHot { row });
                }
            } else if v != 0.0 {
                return Err(Error::MalformedOneHot { row });
            }
        }
        let true_idx = true_idx.ok_or(Error::MalformedOneHot { row })?;

        let lr = &l[row * k..(row + 1) * k];
        let max = lr.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v as f64));
        let mut sum = 0.0f64;
        let mut exps = vec![0.0f64; k];
        for (i, &v) in lr.iter().enumerate() {
            let e = ((v as f64) - max).exp();
            exps[i] = e;
            sum += e;
        }
        loss_sum += sum.ln() - ((lr[true_idx] as f64) - max);
        for i in 0..k {
            let p = exps[i] / sum;
            dlogits[row * k + i] = ((p - yr[i] as f64) / b as f64) as f32;
        }
    }
    Ok((
        loss_sum / b as f64,
        Tensor::new(&[b, k], dlogits)?,
    ))
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> AdamConfig {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

/// Adam state: first/second-moment accumulators per parameter tensor and
/// the step counter. Moment updates and bias corrections run in f64.
pub struct Adam {
    cfg: AdamConfig,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    /// Zero-moment optimizer sized for a model's parameter tensors.
    pub fn for_model(cfg: AdamConfig, model: &Model) -> Adam {
        let shapes: Vec<Tensor> = model
            .param_tensors()
            .iter()
            .map(|t| Tensor::zeros_like_shape(t.shape()))
            .collect();
        Adam {
            cfg,
            t: 0,
            m: shapes.clone(),
            v: shapes,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update: `m ← β1·m + (1−β1)·g`, `v ← β2·v + (1−β2)·g²`,
    /// `w ← w − lr·m̂/(√v̂ + ε)` with bias-corrected `m̂ = m/(1−β1ᵗ)`,
    /// `v̂ = v/(1−β2ᵗ)`. Parameters and gradients must align with the
    /// tensors the optimizer was built for.
    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[&Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::LengthMismatch {
                expected: self.m.len(),
                got: params.len().max(grads.len()),
            });
        }
        self.t += 1;
        let bc1 = 1.0 - self.cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.cfg.beta2.powi(self.t as i32);
        for ((w, g), (m, v)) in params
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if w.dims() != g.dims() || w.dims() != m.dims() {
                return Err(Error::ShapeMismatch {
                    expected: format!("{}", m.shape()),
                    got: format!("{} and {}", w.shape(), g.shape()),
                });
            }
            let (wd, gd) = (w.data_mut(), g.data());
            let (md, vd) = (m.data_mut(), v.data_mut());
            for i in 0..wd.len() {
                let g = gd[i] as f64;
                let mi = self.cfg.beta1 * md[i] as f64 + (1.0 - self.cfg.beta1) * g;
                let vi = self.cfg.beta2 * vd[i] as f64 + (1.0 - self.cfg.beta2) * g * g;
                md[i] = mi as f32;
                vd[i] = vi as f32;
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                wd[i] = (wd[i] as f64 - self.cfg.lr * mhat / (vhat.sqrt() + self.cfg.epsilon))
                    as f32;
            }
        }
        Ok(())
    }
}

/// Glorot-uniform initialization, fully determined by the seed: weights are
/// drawn from uniform(−L, L) with `L = √(6/(fan_in + fan_out))` — conv fans
/// `kh·kw·c_in` / `kh·kw·c_out`, dense fans `n_in` / `n_out` — and every
/// bias is set to zero. One ChaCha8 stream walks the layers in order.
pub fn init_weights(model: &mut Model, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for layer in model.layers_mut() {
        match &mut layer.kind {
            LayerKind::Conv2d { params, .. } => {
                let (kh, kw) = (params.kh(), params.kw());
                let (fan_in, fan_out) = (kh * kw * params.c_in(), kh * kw * params.c_out());
                fill_glorot(&mut params.kernels, fan_in, fan_out, &mut rng);
                params.bias.data_mut().fill(0.0);
            }
            LayerKind::Dense { params, .. } => {
                let (fan_in, fan_out) = (params.n_in(), params.n_out());
                fill_glorot(&mut params.weights, fan_in, fan_out, &mut rng);
                params.bias.data_mut().fill(0.0);
            }
            _ => {}
        }
    }
}

fn fill_glorot(t: &mut Tensor, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new(-bound, bound);
    for v in t.data_mut() {
        *v = dist.sample(rng) as f32;
    }
}

/// One epoch's aggregate numbers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

/// Completed-epoch records, in order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochStats>,
}

/// Training-run configuration.
#[derive(Clone, Debug)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Receives `epoch_<n>.scnn` checkpoints and `history.csv`.
    pub out_dir: PathBuf,
}

/// Deterministic per-epoch shuffle seed derived from the run seed.
fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Train `model` on `train`, validating on `val` after every epoch.
///
/// Per epoch: shuffle deterministically, then per batch run forward traces,
/// compute loss and accuracy from that pre-update forward pass, accumulate
/// per-sample gradients in batch order, and take one Adam step. Afterwards
/// evaluate `val` with weights frozen, write `epoch_<n>.scnn`, and append
/// one `history.csv` row. Aborts with an error if the loss goes non-finite.
///
/// Memory note: every sample of the current batch keeps its full trace
/// until the optimizer step, so batch size bounds peak memory.
pub fn fit(
    model: &mut Model,
    train: &DatasetIndex,
    val: &DatasetIndex,
    cfg: &FitConfig,
) -> Result<History> {
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be >= 1".to_string()));
    }
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidArgument(
            "training and validation sets must be non-empty".to_string(),
        ));
    }
    let k = model.num_classes();
    if train.num_classes() != k || val.num_classes() != k {
        return Err(Error::InvalidArgument(format!(
            "model expects {k} classes, dataset has {}",
            train.num_classes()
        )));
    }
    let in_dims = model.input_shape().dims();
    if in_dims[2] != 1 {
        return Err(Error::InvalidArgument(
            "training pipeline loads single-channel images".to_string(),
        ));
    }
    let target = (in_dims[0], in_dims[1]);

    fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| Error::io(format!("creating {}", cfg.out_dir.display()), e))?;
    let csv_path = cfg.out_dir.join("history.csv");
    let mut csv = fs::File::create(&csv_path)
        .map_err(|e| Error::io(format!("creating {}", csv_path.display()), e))?;
    writeln!(csv, "epoch,train_loss,train_acc,val_loss,val_acc")
        .map_err(|e| Error::io(format!("writing {}", csv_path.display()), e))?;

    let mut adam = Adam::for_model(cfg.adam, model);
    let mut history = History::default();

    for epoch in 1..=cfg.epochs {
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        let mut seen = 0usize;

        for (batch_idx, batch) in
            batches(train, cfg.batch_size, epoch_seed(cfg.seed, epoch), target)?.enumerate()
        {
            let batch = batch?;
            let b = batch.labels.len();
            let sample_len = target.0 * target.1;

            // Forward every sample with a trace, then score the batch from
            // this pre-update pass.
            let mut traces = Vec::with_capacity(b);
            let mut logits_flat = Vec::with_capacity(b * k);
            for i in 0..b {
                let data = batch.x.data()[i * sample_len..(i + 1) * sample_len].to_vec();
                let image = Tensor::new(&[target.0, target.1, 1], data)?;
                let trace = model.forward_trace(&image)?;
                logits_flat.extend_from_slice(trace.logits().data());
                traces.push(trace);
            }
            let logits = Tensor::new(&[b, k], logits_flat)?;
            let (loss, dlogits) = softmax_ce_from_logits(&logits, &batch.onehot)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            loss_sum += loss * b as f64;
            for (&p, &t) in argmax_rows(&logits).iter().zip(&batch.labels) {
                if p == t {
                    correct += 1;
                }
            }
            seen += b;

            // Accumulate gradients sample by sample in batch order, then
            // take one optimizer step.
            let mut grads = model.zero_grads();
            for (i, trace) in traces.iter().enumerate() {
                let row = Tensor::new(&[k], dlogits.data()[i * k..(i + 1) * k].to_vec())?;
                model.backward_into(trace, &row, &mut grads)?;
            }
            let grad_refs: Vec<&Tensor> = grads
                .iter()
                .filter_map(|g| g.as_ref())
                .flat_map(|(a, b)| [a, b])
                .collect();
            adam.step(model.param_tensors_mut(), &grad_refs)?;
        }

        let train_loss = loss_sum / seen as f64;
        let train_acc = correct as f64 / seen as f64;
        let val_eval = evaluate_dataset(model, val, cfg.batch_size)?;
        let (val_loss, val_acc) = (val_eval.loss, val_eval.accuracy);

        checkpoint::save(model, &cfg.out_dir.join(format!("epoch_{epoch}.scnn")))?;
        writeln!(csv, "{epoch},{train_loss},{train_acc},{val_loss},{val_acc}")
            .map_err(|e| Error::io(format!("writing {}", csv_path.display()), e))?;
        csv.flush()
            .map_err(|e| Error::io(format!("writing {}", csv_path.display()), e))?;

        history.epochs.push(EpochStats {
            epoch,
            train_loss,
            train_acc,
            val_loss,
            val_acc,
        });
    }
    Ok(history)
}

/// Evaluate a dataset with frozen weights: mean per-sample loss, accuracy,
/// and the (prediction, truth) sequences in dataset order.
/// Whole-dataset evaluation: mean loss, accuracy, and the paired label
/// vectors in dataset order.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub truths: Vec<usize>,
    pub preds: Vec<usize>,
}

pub fn evaluate_dataset(model: &Model, ds: &DatasetIndex, batch_size: usize) -> Result<Evaluation> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be >= 1".to_string()));
    }
    let in_dims = model.input_shape().dims();
    let target = (in_dims[0], in_dims[1]);
    let order = epoch_order(ds.len(), None);
    let mut loss_sum = 0.0f64;
    let mut preds = Vec::with_capacity(ds.len());
    let mut truths = Vec::with_capacity(ds.len());
    for chunk in order.chunks(batch_size) {
        let batch = load_batch(ds, chunk, target.0, target.1)?;
        let (logits, _) = model.forward(&batch.x, None)?;
        let (loss, _) = softmax_ce_from_logits(&logits, &batch.onehot)?;
        loss_sum += loss * batch.labels.len() as f64;
        preds.extend(argmax_rows(&logits));
        truths.extend_from_slice(&batch.labels);
    }
    let correct = preds.iter().zip(&truths).filter(|(p, t)| p == t).count();
    Ok(Evaluation {
        loss: loss_sum / ds.len() as f64,
        accuracy: correct as f64 / ds.len() as f64,
        truths,
        preds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelBuilder;
    use proptest::prelude::*;
    use std::path::Path;

    #[test]
    fn uniform_logits_give_log_k_loss() {
        let logits = Tensor::zeros(&[2, 4]).unwrap();
        let onehot = Tensor::new(
            &[2, 4],
            vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
        )
        .unwrap();
        let (loss, dlogits) = softmax_ce_from_logits(&logits, &onehot).unwrap();
        assert!((loss - 4.0f64.ln()).abs() < 1e-4, "loss {loss}");
        // Gradient of the mean: (0.25 - y)/2 per element.
        assert!((dlogits.get(&[0, 0]) - (-0.375)).abs() < 1e-6);
        assert!((dlogits.get(&[0, 1]) - 0.125).abs() < 1e-6);
    }

    #[test]
    fn dominant_true_logit_saturates_to_zero_loss() {
        let logits = Tensor::new(&[1, 4], vec![30.0, 0.0, 0.0, 0.0]).unwrap();
        let onehot = Tensor::new(&[1, 4], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let (loss, _) = softmax_ce_from_logits(&logits, &onehot).unwrap();
        assert!(loss >= 0.0);
        assert!(loss < 1e-8, "loss {loss}");
    }

    #[test]
    fn large_logits_stay_finite_via_max_subtraction() {
        let logits = Tensor::new(&[1, 2], vec![1000.0, 999.0]).unwrap();
        let onehot = Tensor::new(&[1, 2], vec![0.0, 1.0]).unwrap();
        let (loss, dlogits) = softmax_ce_from_logits(&logits, &onehot).unwrap();
        assert!(loss.is_finite());
        assert!(dlogits.all_finite());
    }

    #[test]
    fn malformed_one_hot_rows_are_rejected() {
        let logits = Tensor::zeros(&[1, 2]).unwrap();
        for bad in [vec![0.5, 0.5], vec![1.0, 1.0], vec![0.0, 0.0]] {
            let onehot = Tensor::new(&[1, 2], bad).unwrap();
            assert!(matches!(
                softmax_ce_from_logits(&logits, &onehot).unwrap_err(),
                Error::MalformedOneHot { row: 0 }
            ));
        }
    }

    #[test]
    fn dlogits_matches_finite_differences() {
        // f64 oracle of the same mean loss, differentiated centrally.
        let oracle = |l: &[f64], y: &[f64], b: usize, k: usize| -> f64 {
            let mut total = 0.0;
            for r in 0..b {
                let row = &l[r * k..(r + 1) * k];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
                let t = y[r * k..(r + 1) * k].iter().position(|&v| v == 1.0).unwrap();
                total += sum.ln() - (row[t] - max);
            }
            total / b as f64
        };
        let (b, k) = (3, 4);
        let lvals: Vec<f32> = (0..b * k).map(|i| ((i * 13 % 7) as f32 - 3.0) * 0.5).collect();
        let mut yvals = vec![0.0f32; b * k];
        for r in 0..b {
            yvals[r * k + (r * 2) % k] = 1.0;
        }
        let logits = Tensor::new(&[b, k], lvals.clone()).unwrap();
        let onehot = Tensor::new(&[b, k], yvals.clone()).unwrap();
        let (_, dlogits) = softmax_ce_from_logits(&logits, &onehot).unwrap();

        let l64: Vec<f64> = lvals.iter().map(|&v| v as f64).collect();
        let y64: Vec<f64> = yvals.iter().map(|&v| v as f64).collect();
        let h = 1e-5;
        for i in 0..b * k {
            let mut plus = l64.clone();
            plus[i] += h;
            let mut minus = l64.clone();
            minus[i] -= h;
            let fd = (oracle(&plus, &y64, b, k) - oracle(&minus, &y64, b, k)) / (2.0 * h);
            let got = dlogits.data()[i] as f64;
            let denom = fd.abs().max(1e-6);
            assert!(
                ((got - fd) / denom).abs() < 1e-3,
                "element {i}: got {got}, fd {fd}"
            );
        }
    }

    #[test]
    fn adam_first_step_moves_by_roughly_lr() {
        let mut w = Tensor::new(&[1], vec![1.0]).unwrap();
        let g = Tensor::new(&[1], vec![1.0]).unwrap();
        let mut adam = Adam {
            cfg: AdamConfig::default(),
            t: 0,
            m: vec![Tensor::zeros(&[1]).unwrap()],
            v: vec![Tensor::zeros(&[1]).unwrap()],
        };
        adam.step(vec![&mut w], &[&g]).unwrap();
        assert!((w.data()[0] - 0.999).abs() < 1e-6, "w {}", w.data()[0]);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn adam_zero_gradient_leaves_weights_unchanged() {
        let mut w = Tensor::new(&[2], vec![0.5, -0.5]).unwrap();
        let g = Tensor::zeros(&[2]).unwrap();
        let mut adam = Adam {
            cfg: AdamConfig::default(),
            t: 0,
            m: vec![Tensor::zeros(&[2]).unwrap()],
            v: vec![Tensor::zeros(&[2]).unwrap()],
        };
        adam.step(vec![&mut w], &[&g]).unwrap();
        assert_eq!(w.data(), &[0.5, -0.5]);
    }

    #[test]
    fn adam_steps_are_bounded_by_lr_for_constant_gradient() {
        let cfg = AdamConfig::default();
        let mut w = Tensor::new(&[1], vec![3.0]).unwrap();
        let g = Tensor::new(&[1], vec![0.7]).unwrap();
        let mut adam = Adam {
            cfg,
            t: 0,
            m: vec![Tensor::zeros(&[1]).unwrap()],
            v: vec![Tensor::zeros(&[1]).unwrap()],
        };
        let mut prev = w.data()[0];
        for _ in 0..2 {
            adam.step(vec![&mut w], &[&g]).unwrap();
            let step = (prev - w.data()[0]).abs();
            assert!(step <= cfg.lr as f32 * 1.001, "step {step}");
            assert!(w.data()[0].is_finite());
            prev = w.data()[0];
        }
    }

    fn conv_model() -> Model {
        ModelBuilder::input(&[6, 6, 1])
            .unwrap()
            .conv2d(128, (3, 3), true, None)
            .unwrap()
            .flatten(None)
            .unwrap()
            .dense(2, false, None)
            .unwrap()
            .build()
            .unwrap()
    }

    #[test]
    fn glorot_bounds_and_zero_biases() {
        let mut m = conv_model();
        init_weights(&mut m, 42);
        // First conv: fan_in 9, fan_out 1152 -> L ≈ 0.0719.
        let bound = (6.0f64 / (9.0 + 1152.0)).sqrt();
        assert!((bound - 0.0719).abs() < 1e-4);
        let tensors = m.param_tensors();
        let kernels = tensors[0];
        assert!(kernels.data().iter().all(|&v| (v as f64).abs() < bound));
        assert!(kernels.data().iter().any(|&v| v != 0.0));
        let bias = tensors[1];
        assert!(bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn same_seed_same_weights() {
        let mut a = conv_model();
        let mut b = conv_model();
        init_weights(&mut a, 888);
        init_weights(&mut b, 888);
        for (ta, tb) in a.param_tensors().iter().zip(b.param_tensors()) {
            assert_eq!(ta.data(), tb.data());
        }
        let mut c = conv_model();
        init_weights(&mut c, 889);
        assert_ne!(a.param_tensors()[0].data(), c.param_tensors()[0].data());
    }

    // ---- fit() smoke tests on a tiny on-disk dataset ----

    fn write_class_images(root: &Path, class: &str, n: usize, bright: bool) {
        let dir = root.join(class);
        std::fs::create_dir_all(&dir).unwrap();
        for i in 0..n {
            // Two visually distinct populations so the model can separate
            // them: dark textured vs bright textured.
            let base = if bright { 200 } else { 40 };
            let img = image::GrayImage::from_fn(6, 6, |x, y| {
                image::Luma([(base + ((x + y * 3 + i as u32) % 30)) as u8])
            });
            img.save(dir.join(format!("im{i}.png"))).unwrap();
        }
    }

    fn tiny_dataset(root: &Path) -> (DatasetIndex, DatasetIndex) {
        let train = root.join("train");
        let val = root.join("val");
        for (dir, n) in [(&train, 6), (&val, 2)] {
            write_class_images(dir, "a_dark", n, false);
            write_class_images(dir, "b_bright", n, true);
        }
        (
            DatasetIndex::from_dir(&train).unwrap(),
            DatasetIndex::from_dir(&val).unwrap(),
        )
    }

    fn tiny_model() -> Model {
        ModelBuilder::input(&[6, 6, 1])
            .unwrap()
            .conv2d(2, (3, 3), true, None)
            .unwrap()
            .maxpool((2, 2), None)
            .unwrap()
            .flatten(None)
            .unwrap()
            .dense(2, false, None)
            .unwrap()
            .build()
            .unwrap()
    }

    #[test]
    fn fit_writes_history_and_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let (train, val) = tiny_dataset(dir.path());
        let mut model = tiny_model();
        init_weights(&mut model, 7);
        let out = dir.path().join("run");
        let cfg = FitConfig {
            epochs: 2,
            batch_size: 4,
            adam: AdamConfig::default(),
            seed: 888,
            out_dir: out.clone(),
        };
        let history = fit(&mut model, &train, &val, &cfg).unwrap();
        assert_eq!(history.epochs.len(), 2);
        for (i, e) in history.epochs.iter().enumerate() {
            assert_eq!(e.epoch, i + 1);
            assert!((0.0..=1.0).contains(&e.train_acc));
            assert!((0.0..=1.0).contains(&e.val_acc));
            assert!(e.train_loss >= 0.0 && e.val_loss >= 0.0);
        }
        assert!(out.join("epoch_1.scnn").exists());
        assert!(out.join("epoch_2.scnn").exists());
        let csv = std::fs::read_to_string(out.join("history.csv")).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "epoch,train_loss,train_acc,val_loss,val_acc");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("1,"));
    }

    #[test]
    fn fit_zero_epochs_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let (train, val) = tiny_dataset(dir.path());
        let mut model = tiny_model();
        let cfg = FitConfig {
            epochs: 0,
            batch_size: 4,
            adam: AdamConfig::default(),
            seed: 1,
            out_dir: dir.path().join("run0"),
        };
        let history = fit(&mut model, &train, &val, &cfg).unwrap();
        assert!(history.epochs.is_empty());
    }

    #[test]
    fn fit_is_deterministic_per_seed() {
        let dir = tempfile::tempdir().unwrap();
        let (train, val) = tiny_dataset(dir.path());
        let run = |out: PathBuf| {
            let mut model = tiny_model();
            init_weights(&mut model, 11);
            let cfg = FitConfig {
                epochs: 2,
                batch_size: 3,
                adam: AdamConfig::default(),
                seed: 888,
                out_dir: out,
            };
            fit(&mut model, &train, &val, &cfg).unwrap()
        };
        let h1 = run(dir.path().join("r1"));
        let h2 = run(dir.path().join("r2"));
        assert_eq!(h1, h2);
        let c1 = std::fs::read(dir.path().join("r1/epoch_2.scnn")).unwrap();
        let c2 = std::fs::read(dir.path().join("r2/epoch_2.scnn")).unwrap();
        assert_eq!(c1, c2, "checkpoints must be bit-identical");
        let h1csv = std::fs::read(dir.path().join("r1/history.csv")).unwrap();
        let h2csv = std::fs::read(dir.path().join("r2/history.csv")).unwrap();
        assert_eq!(h1csv, h2csv);
    }

    proptest! {
        // Softmax probabilities recovered from dlogits sum to ~1 per row:
        // dlogits*b + onehot = softmax.
        #[test]
        fn softmax_rows_sum_to_one(vals in proptest::collection::vec(-8.0f32..8.0, 8)) {
            let logits = Tensor::new(&[2, 4], vals).unwrap();
            let onehot = Tensor::new(
                &[2, 4],
                vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
            ).unwrap();
            let (loss, dlogits) = softmax_ce_from_logits(&logits, &onehot).unwrap();
            prop_assert!(loss >= 0.0);
            for r in 0..2 {
                let sum: f32 = (0..4)
                    .map(|i| dlogits.get(&[r, i]) * 2.0 + onehot.get(&[r, i]))
                    .sum();
                prop_assert!((sum - 1.0).abs() < 1e-5);
            }
        }
    }
}
