//! A small trainable stand-in for "fine-tune with adapters at ranks `r`,
//! then measure validation error".
//!
//! The model is a chain of frozen base matrices with trainable low-rank
//! updates and tanh activations, feeding two heads: a regression head (linear,
//! sigmoid, linear, scalar output) and a five-way classification head
//! (dropout, linear, tanh, dropout, linear). Training minimizes the weighted
//! sum of the regression MSE and the classification cross-entropy with plain
//! full-batch gradient descent; evaluation reports the validation regression
//! MSE with predictions clamped to [-1, 1] and dropout disabled.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::Error;
use crate::importance::FitConfig;
use crate::matrix::Matrix;
use crate::objectives::{
    ce_loss, mse_loss, multitask_loss, MultiTaskWeights, ObjectiveEvaluator, SentimentSample,
};
use crate::rank::RankVector;
use crate::rng::rng_from;
use crate::scalar::{real, Real};

const CLASS_COUNT: usize = 5;

/// Frozen architecture: encoder bases plus head widths.
#[derive(Debug, Clone)]
pub struct ToyModelSpec<T> {
    bases: Vec<Matrix<T>>,
    hidden_regression: usize,
    hidden_classification: usize,
    dropout_rate: T,
}

impl<T: Real> ToyModelSpec<T> {
    pub fn new(
        bases: Vec<Matrix<T>>,
        hidden_regression: usize,
        hidden_classification: usize,
        dropout_rate: T,
    ) -> Result<Self, Error> {
        if bases.is_empty() {
            return Err(Error::invalid("encoder needs at least one layer"));
        }
        for window in bases.windows(2) {
            if window[1].cols() != window[0].rows() {
                return Err(Error::shape(format!(
                    "encoder chain broken: {}x{} feeds {}x{}",
                    window[0].rows(),
                    window[0].cols(),
                    window[1].rows(),
                    window[1].cols()
                )));
            }
        }
        if hidden_regression == 0 || hidden_classification == 0 {
            return Err(Error::invalid("head widths must be positive"));
        }
        if dropout_rate < T::zero() || dropout_rate >= T::one() {
            return Err(Error::invalid("dropout rate must lie in [0, 1)"));
        }
        Ok(ToyModelSpec {
            bases,
            hidden_regression,
            hidden_classification,
            dropout_rate,
        })
    }

    /// Square encoder of `layers` frozen Gaussian `dim x dim` bases.
    pub fn seeded(
        layers: usize,
        dim: usize,
        hidden: usize,
        dropout_rate: T,
        seed: u64,
    ) -> Result<Self, Error> {
        if layers == 0 || dim == 0 {
            return Err(Error::invalid("need at least one layer and one dimension"));
        }
        let mut rng = rng_from(seed, 0x62_61_73);
        let std = 1.0 / (dim as f64).sqrt();
        let bases = (0..layers)
            .map(|_| Matrix::random_gaussian(dim, dim, std, &mut rng))
            .collect();
        ToyModelSpec::new(bases, hidden, hidden, dropout_rate)
    }

    pub fn layer_count(&self) -> usize {
        self.bases.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.bases[0].cols()
    }

    pub fn output_dim(&self) -> usize {
        self.bases.last().expect("non-empty").rows()
    }

    pub fn bases(&self) -> &[Matrix<T>] {
        &self.bases
    }

    pub fn dropout_rate(&self) -> T {
        self.dropout_rate
    }

    /// Fresh trainable parameters at the given adapter ranks. Adapter factors
    /// start small and uniform; head weights scale with fan-in; biases start
    /// at zero.
    pub fn init_params(&self, ranks: &RankVector, seed: u64) -> Result<ToyParams<T>, Error> {
        if ranks.len() != self.bases.len() {
            return Err(Error::invalid(format!(
                "rank vector has {} entries for {} layers",
                ranks.len(),
                self.bases.len()
            )));
        }
        let mut rng = rng_from(seed, 0x70_61_72);
        let adapters = self
            .bases
            .iter()
            .zip(ranks.iter())
            .map(|(base, &r)| {
                let r = r.min(base.min_dim());
                let u = Matrix::random_uniform(base.rows(), r, -0.01, 0.01, &mut rng);
                let v = Matrix::random_uniform(base.cols(), r, -0.01, 0.01, &mut rng);
                (u, v)
            })
            .collect();
        let d = self.output_dim();
        let hr = self.hidden_regression;
        let hc = self.hidden_classification;
        let lim_in = 1.0 / (d as f64).sqrt();
        let lim_hr = 1.0 / (hr as f64).sqrt();
        let lim_hc = 1.0 / (hc as f64).sqrt();
        Ok(ToyParams {
            adapters,
            reg_w1: Matrix::random_uniform(hr, d, -lim_in, lim_in, &mut rng),
            reg_b1: vec![T::zero(); hr],
            reg_w2: (0..hr)
                .map(|_| real(rng.random_range(-lim_hr..lim_hr)))
                .collect(),
            reg_b2: T::zero(),
            cls_w1: Matrix::random_uniform(hc, d, -lim_in, lim_in, &mut rng),
            cls_b1: vec![T::zero(); hc],
            cls_w2: Matrix::random_uniform(CLASS_COUNT, hc, -lim_hc, lim_hc, &mut rng),
            cls_b2: vec![T::zero(); CLASS_COUNT],
        })
    }
}

/// All trainable state: per-layer adapter factors plus both heads.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyParams<T> {
    adapters: Vec<(Matrix<T>, Matrix<T>)>,
    reg_w1: Matrix<T>,
    reg_b1: Vec<T>,
    reg_w2: Vec<T>,
    reg_b2: T,
    cls_w1: Matrix<T>,
    cls_b1: Vec<T>,
    cls_w2: Matrix<T>,
    cls_b2: Vec<T>,
}

impl<T: Real> ToyParams<T> {
    pub fn adapter_ranks(&self) -> Vec<usize> {
        self.adapters.iter().map(|(u, _)| u.cols()).collect()
    }

    /// Concatenate every parameter into one vector (fixed order), for
    /// finite-difference checks.
    pub fn flatten(&self) -> Vec<T> {
        let mut flat = Vec::new();
        for (u, v) in &self.adapters {
            flat.extend_from_slice(u.data());
            flat.extend_from_slice(v.data());
        }
        flat.extend_from_slice(self.reg_w1.data());
        flat.extend_from_slice(&self.reg_b1);
        flat.extend_from_slice(&self.reg_w2);
        flat.push(self.reg_b2);
        flat.extend_from_slice(self.cls_w1.data());
        flat.extend_from_slice(&self.cls_b1);
        flat.extend_from_slice(self.cls_w2.data());
        flat.extend_from_slice(&self.cls_b2);
        flat
    }

    /// Inverse of [`flatten`]: write a flat vector back into this shape.
    pub fn assign_from_flat(&mut self, flat: &[T]) -> Result<(), Error> {
        let expected = self.flatten().len();
        if flat.len() != expected {
            return Err(Error::invalid(format!(
                "flat parameter vector has {} entries, expected {expected}",
                flat.len()
            )));
        }
        let mut pos = 0;
        let take_matrix = |m: &mut Matrix<T>, pos: &mut usize| {
            for i in 0..m.rows() {
                for j in 0..m.cols() {
                    m.set(i, j, flat[*pos]);
                    *pos += 1;
                }
            }
        };
        let mut adapters = std::mem::take(&mut self.adapters);
        for (u, v) in adapters.iter_mut() {
            take_matrix(u, &mut pos);
            take_matrix(v, &mut pos);
        }
        self.adapters = adapters;
        let mut reg_w1 = std::mem::replace(&mut self.reg_w1, Matrix::zeros(0, 0));
        take_matrix(&mut reg_w1, &mut pos);
        self.reg_w1 = reg_w1;
        for b in self.reg_b1.iter_mut() {
            *b = flat[pos];
            pos += 1;
        }
        for w in self.reg_w2.iter_mut() {
            *w = flat[pos];
            pos += 1;
        }
        self.reg_b2 = flat[pos];
        pos += 1;
        let mut cls_w1 = std::mem::replace(&mut self.cls_w1, Matrix::zeros(0, 0));
        take_matrix(&mut cls_w1, &mut pos);
        self.cls_w1 = cls_w1;
        for b in self.cls_b1.iter_mut() {
            *b = flat[pos];
            pos += 1;
        }
        let mut cls_w2 = std::mem::replace(&mut self.cls_w2, Matrix::zeros(0, 0));
        take_matrix(&mut cls_w2, &mut pos);
        self.cls_w2 = cls_w2;
        for b in self.cls_b2.iter_mut() {
            *b = flat[pos];
            pos += 1;
        }
        debug_assert_eq!(pos, flat.len());
        Ok(())
    }

    fn zeros_like(&self) -> Self {
        ToyParams {
            adapters: self
                .adapters
                .iter()
                .map(|(u, v)| {
                    (
                        Matrix::zeros(u.rows(), u.cols()),
                        Matrix::zeros(v.rows(), v.cols()),
                    )
                })
                .collect(),
            reg_w1: Matrix::zeros(self.reg_w1.rows(), self.reg_w1.cols()),
            reg_b1: vec![T::zero(); self.reg_b1.len()],
            reg_w2: vec![T::zero(); self.reg_w2.len()],
            reg_b2: T::zero(),
            cls_w1: Matrix::zeros(self.cls_w1.rows(), self.cls_w1.cols()),
            cls_b1: vec![T::zero(); self.cls_b1.len()],
            cls_w2: Matrix::zeros(self.cls_w2.rows(), self.cls_w2.cols()),
            cls_b2: vec![T::zero(); self.cls_b2.len()],
        }
    }

    /// `self += alpha * other`, entry-wise across every parameter.
    fn axpy(&mut self, alpha: T, other: &Self) {
        let mut flat = self.flatten();
        let of = other.flatten();
        for (a, b) in flat.iter_mut().zip(of) {
            *a = *a + alpha * b;
        }
        self.assign_from_flat(&flat).expect("same shape");
    }

    fn squared_norm(&self) -> T {
        self.flatten().iter().map(|&x| x * x).sum()
    }

    fn is_finite(&self) -> bool {
        self.flatten().iter().all(|x| x.is_finite())
    }
}

/// Per-sample dropout masks for one training step (inverted dropout: kept
/// units are scaled by `1 / keep`).
struct DropoutMasks<T> {
    encoder_out: Vec<Vec<T>>,
    cls_hidden: Vec<Vec<T>>,
}

impl<T: Real> DropoutMasks<T> {
    fn draw(
        samples: usize,
        encoder_dim: usize,
        hidden_dim: usize,
        rate: T,
        rng: &mut impl Rng,
    ) -> Self {
        let rate_f = rate.to_f64().unwrap_or(0.0);
        let keep = 1.0 - rate_f;
        let mut mask = |dim: usize| -> Vec<T> {
            (0..dim)
                .map(|_| {
                    if rng.random_range(0.0..1.0) < rate_f {
                        T::zero()
                    } else {
                        real(1.0 / keep)
                    }
                })
                .collect()
        };
        DropoutMasks {
            encoder_out: (0..samples).map(|_| mask(encoder_dim)).collect(),
            cls_hidden: (0..samples).map(|_| mask(hidden_dim)).collect(),
        }
    }

    fn ones(samples: usize, encoder_dim: usize, hidden_dim: usize) -> Self {
        DropoutMasks {
            encoder_out: vec![vec![T::one(); encoder_dim]; samples],
            cls_hidden: vec![vec![T::one(); hidden_dim]; samples],
        }
    }
}

fn matvec<T: Real>(m: &Matrix<T>, x: &[T]) -> Vec<T> {
    (0..m.rows())
        .map(|i| {
            let mut acc = T::zero();
            for j in 0..m.cols() {
                acc = acc + m.at(i, j) * x[j];
            }
            acc
        })
        .collect()
}

fn matvec_t<T: Real>(m: &Matrix<T>, x: &[T]) -> Vec<T> {
    (0..m.cols())
        .map(|j| {
            let mut acc = T::zero();
            for i in 0..m.rows() {
                acc = acc + m.at(i, j) * x[i];
            }
            acc
        })
        .collect()
}

fn add_outer<T: Real>(acc: &mut Matrix<T>, col: &[T], row: &[T]) {
    for i in 0..acc.rows() {
        let c = col[i];
        if c == T::zero() {
            continue;
        }
        for j in 0..acc.cols() {
            acc.set(i, j, acc.at(i, j) + c * row[j]);
        }
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Joint loss and its gradient over one batch.
///
/// Returns `(loss, grads)`; the loss includes the L2 term when
/// `reg_strength > 0`.
fn forward_backward<T: Real>(
    spec: &ToyModelSpec<T>,
    params: &ToyParams<T>,
    samples: &[SentimentSample<T>],
    weights: &MultiTaskWeights<T>,
    reg_strength: T,
    masks: &DropoutMasks<T>,
) -> Result<(T, ToyParams<T>), Error> {
    let n = samples.len();
    if n == 0 {
        return Err(Error::invalid("empty batch"));
    }
    let layer_count = spec.layer_count();

    // Effective encoder weights for this parameter setting.
    let tilde: Vec<Matrix<T>> = spec
        .bases
        .iter()
        .zip(&params.adapters)
        .map(|(base, (u, v))| {
            if u.cols() == 0 {
                Ok(base.clone())
            } else {
                base.add(&u.matmul_bt(v)?)
            }
        })
        .collect::<Result<_, Error>>()?;

    let mut grads = params.zeros_like();
    let mut tilde_grads: Vec<Matrix<T>> = tilde
        .iter()
        .map(|w| Matrix::zeros(w.rows(), w.cols()))
        .collect();

    let mut preds = Vec::with_capacity(n);
    let mut truths = Vec::with_capacity(n);
    let mut logits_all = Matrix::zeros(n, CLASS_COUNT);
    let mut labels = Vec::with_capacity(n);

    // Forward caches for the backward pass.
    let mut all_hs: Vec<Vec<Vec<T>>> = Vec::with_capacity(n);
    let mut all_sr: Vec<Vec<T>> = Vec::with_capacity(n);
    let mut all_tc: Vec<Vec<T>> = Vec::with_capacity(n);
    let mut all_hd: Vec<Vec<T>> = Vec::with_capacity(n);

    for (s_idx, sample) in samples.iter().enumerate() {
        if sample.features.len() != spec.feature_dim() {
            return Err(Error::shape(format!(
                "sample has {} features, encoder expects {}",
                sample.features.len(),
                spec.feature_dim()
            )));
        }
        let mut hs: Vec<Vec<T>> = Vec::with_capacity(layer_count + 1);
        hs.push(sample.features.clone());
        for w in &tilde {
            let z = matvec(w, hs.last().expect("seeded"));
            hs.push(z.into_iter().map(|x| x.tanh()).collect());
        }
        let h_out = hs.last().expect("at least input").clone();

        // Regression head: linear, sigmoid, linear.
        let a1: Vec<T> = matvec(&params.reg_w1, &h_out)
            .into_iter()
            .zip(&params.reg_b1)
            .map(|(x, &b)| x + b)
            .collect();
        let sr: Vec<T> = a1.iter().map(|&x| sigmoid(x)).collect();
        let mut yhat = params.reg_b2;
        for (w, s) in params.reg_w2.iter().zip(&sr) {
            yhat = yhat + *w * *s;
        }

        // Classification head: dropout, linear, tanh, dropout, linear.
        let hd: Vec<T> = h_out
            .iter()
            .zip(&masks.encoder_out[s_idx])
            .map(|(&h, &m)| h * m)
            .collect();
        let a2: Vec<T> = matvec(&params.cls_w1, &hd)
            .into_iter()
            .zip(&params.cls_b1)
            .map(|(x, &b)| x + b)
            .collect();
        let tc: Vec<T> = a2.iter().map(|&x| x.tanh()).collect();
        let td: Vec<T> = tc
            .iter()
            .zip(&masks.cls_hidden[s_idx])
            .map(|(&t, &m)| t * m)
            .collect();
        let logit_row: Vec<T> = matvec(&params.cls_w2, &td)
            .into_iter()
            .zip(&params.cls_b2)
            .map(|(x, &b)| x + b)
            .collect();
        for (j, &l) in logit_row.iter().enumerate() {
            logits_all.set(s_idx, j, l);
        }

        preds.push(yhat);
        truths.push(sample.score);
        labels.push(sample.label);
        all_hs.push(hs);
        all_sr.push(sr);
        all_tc.push(tc);
        all_hd.push(hd);
    }

    let l_r = mse_loss(&preds, &truths)?;
    let l_c = ce_loss(&logits_all, &labels)?;
    let mut loss = multitask_loss(l_r, l_c, weights);
    if reg_strength > T::zero() {
        loss = loss + reg_strength * params.squared_norm();
    }

    // Backward.
    let n_t: T = real(n as f64);
    let two = T::one() + T::one();
    for s_idx in 0..n {
        let hs = &all_hs[s_idx];
        let h_out = hs.last().expect("non-empty");
        let sr = &all_sr[s_idx];
        let tc = &all_tc[s_idx];
        let hd = &all_hd[s_idx];

        // Regression branch.
        let dyhat = weights.w_regression * two * (preds[s_idx] - truths[s_idx]) / n_t;
        let mut dh: Vec<T> = vec![T::zero(); h_out.len()];
        let mut da1 = vec![T::zero(); sr.len()];
        for k in 0..sr.len() {
            grads.reg_w2[k] = grads.reg_w2[k] + dyhat * sr[k];
            let dsr = dyhat * params.reg_w2[k];
            da1[k] = dsr * sr[k] * (T::one() - sr[k]);
            grads.reg_b1[k] = grads.reg_b1[k] + da1[k];
        }
        grads.reg_b2 = grads.reg_b2 + dyhat;
        add_outer(&mut grads.reg_w1, &da1, h_out);
        let back_r = matvec_t(&params.reg_w1, &da1);
        for (d, b) in dh.iter_mut().zip(back_r) {
            *d = *d + b;
        }

        // Classification branch: softmax cross-entropy gradient.
        let row = logits_all.row(s_idx);
        let max = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let exps: Vec<T> = row.iter().map(|&l| (l - max).exp()).collect();
        let denom: T = exps.iter().copied().sum();
        let mut dlogits: Vec<T> = exps.iter().map(|&e| e / denom).collect();
        dlogits[labels[s_idx] as usize] = dlogits[labels[s_idx] as usize] - T::one();
        for d in dlogits.iter_mut() {
            *d = *d * weights.w_classification / n_t;
        }
        add_outer(&mut grads.cls_w2, &dlogits, &all_hd_scaled(tc, &masks.cls_hidden[s_idx]));
        for (g, &d) in grads.cls_b2.iter_mut().zip(&dlogits) {
            *g = *g + d;
        }
        let dtd = matvec_t(&params.cls_w2, &dlogits);
        let da2: Vec<T> = dtd
            .iter()
            .zip(&masks.cls_hidden[s_idx])
            .zip(tc)
            .map(|((&d, &m), &t)| d * m * (T::one() - t * t))
            .collect();
        add_outer(&mut grads.cls_w1, &da2, hd);
        for (g, &d) in grads.cls_b1.iter_mut().zip(&da2) {
            *g = *g + d;
        }
        let dhd = matvec_t(&params.cls_w1, &da2);
        for ((d, &m), b) in dh
            .iter_mut()
            .zip(&masks.encoder_out[s_idx])
            .zip(dhd)
        {
            *d = *d + b * m;
        }

        // Encoder chain.
        let mut dh_cur = dh;
        for layer in (0..layer_count).rev() {
            let h_next = &hs[layer + 1];
            let h_in = &hs[layer];
            let dz: Vec<T> = dh_cur
                .iter()
                .zip(h_next)
                .map(|(&d, &h)| d * (T::one() - h * h))
                .collect();
            add_outer(&mut tilde_grads[layer], &dz, h_in);
            dh_cur = matvec_t(&tilde[layer], &dz);
        }
    }

    // Adapter gradients from the dense encoder gradients:
    // dU = dW v, dV = dW^T u.
    for (layer, (u, v)) in params.adapters.iter().enumerate() {
        if u.cols() == 0 {
            continue;
        }
        grads.adapters[layer].0 = tilde_grads[layer].matmul(v)?;
        grads.adapters[layer].1 = tilde_grads[layer].transpose().matmul(u)?;
    }

    if reg_strength > T::zero() {
        grads.axpy(two * reg_strength, params);
    }

    Ok((loss, grads))
}

fn all_hd_scaled<T: Real>(tc: &[T], mask: &[T]) -> Vec<T> {
    tc.iter().zip(mask).map(|(&t, &m)| t * m).collect()
}

/// Joint loss at a parameter point with dropout disabled. For
/// finite-difference checks against [`multitask_grad_at`].
pub fn multitask_loss_at<T: Real>(
    spec: &ToyModelSpec<T>,
    params: &ToyParams<T>,
    samples: &[SentimentSample<T>],
    weights: &MultiTaskWeights<T>,
    reg_strength: T,
) -> Result<T, Error> {
    let masks = DropoutMasks::ones(
        samples.len(),
        spec.output_dim(),
        spec.hidden_classification,
    );
    forward_backward(spec, params, samples, weights, reg_strength, &masks).map(|(l, _)| l)
}

/// Analytic gradient of the joint loss with dropout disabled.
pub fn multitask_grad_at<T: Real>(
    spec: &ToyModelSpec<T>,
    params: &ToyParams<T>,
    samples: &[SentimentSample<T>],
    weights: &MultiTaskWeights<T>,
    reg_strength: T,
) -> Result<ToyParams<T>, Error> {
    let masks = DropoutMasks::ones(
        samples.len(),
        spec.output_dim(),
        spec.hidden_classification,
    );
    forward_backward(spec, params, samples, weights, reg_strength, &masks).map(|(_, g)| g)
}

/// Objective evaluator backed by the toy trainer: each `evaluate(r)` trains
/// fresh adapters and heads and reports the validation regression MSE.
pub struct ToyMultiTaskObjective<T> {
    spec: ToyModelSpec<T>,
    train: Vec<SentimentSample<T>>,
    validation: Vec<SentimentSample<T>>,
    cfg: FitConfig<T>,
    weights: MultiTaskWeights<T>,
    seed: u64,
}

impl<T: Real> ToyMultiTaskObjective<T> {
    /// Split the dataset 90/10 (train/validation) by a seeded shuffle.
    pub fn new(
        spec: ToyModelSpec<T>,
        dataset: &[SentimentSample<T>],
        cfg: FitConfig<T>,
        weights: MultiTaskWeights<T>,
        seed: u64,
    ) -> Result<Self, Error> {
        cfg.validate()?;
        if dataset.is_empty() {
            return Err(Error::invalid("dataset is empty"));
        }
        for s in dataset {
            if s.features.len() != spec.feature_dim() {
                return Err(Error::shape(format!(
                    "sample has {} features, encoder expects {}",
                    s.features.len(),
                    spec.feature_dim()
                )));
            }
        }
        let mut indices: Vec<usize> = (0..dataset.len()).collect();
        let mut rng = rng_from(seed, 0x73_70_6C);
        indices.shuffle(&mut rng);
        let train_len = (dataset.len() * 9) / 10;
        let (train_idx, val_idx) = indices.split_at(train_len);
        if train_idx.is_empty() || val_idx.is_empty() {
            return Err(Error::invalid(
                "dataset too small to split into train and validation",
            ));
        }
        Ok(ToyMultiTaskObjective {
            spec,
            train: train_idx.iter().map(|&i| dataset[i].clone()).collect(),
            validation: val_idx.iter().map(|&i| dataset[i].clone()).collect(),
            cfg,
            weights,
            seed,
        })
    }

    pub fn train_len(&self) -> usize {
        self.train.len()
    }

    pub fn validation_len(&self) -> usize {
        self.validation.len()
    }

    /// Train at the given ranks and return the validation regression MSE.
    fn train_and_score(&self, ranks: &RankVector) -> Result<T, Error> {
        let mut params = self.spec.init_params(ranks, self.seed)?;
        let mut dropout_rng = rng_from(self.seed, 0x64_72_6F);
        let dropout_on = self.spec.dropout_rate > T::zero();
        let mut prev_loss: Option<T> = None;
        for step in 0..self.cfg.max_steps {
            let masks = if dropout_on {
                DropoutMasks::draw(
                    self.train.len(),
                    self.spec.output_dim(),
                    self.spec.hidden_classification,
                    self.spec.dropout_rate,
                    &mut dropout_rng,
                )
            } else {
                DropoutMasks::ones(
                    self.train.len(),
                    self.spec.output_dim(),
                    self.spec.hidden_classification,
                )
            };
            let (loss, grads) = forward_backward(
                &self.spec,
                &params,
                &self.train,
                &self.weights,
                self.cfg.reg_strength,
                &masks,
            )?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::NumericFailure(format!(
                    "training loss diverged at step {step}"
                )));
            }
            params.axpy(-self.cfg.step_size, &grads);
            // With dropout the per-step loss is stochastic, so early stopping
            // applies only to the deterministic case.
            if !dropout_on {
                if let Some(prev) = prev_loss {
                    if (prev - loss).abs() < self.cfg.stop_tolerance {
                        break;
                    }
                }
                prev_loss = Some(loss);
            }
        }

        // Validation: regression predictions clamped to [-1, 1], dropout off.
        let preds = predict_regression(&self.spec, &params, &self.validation)?;
        let truths: Vec<T> = self.validation.iter().map(|s| s.score).collect();
        let clamped: Vec<T> = preds
            .into_iter()
            .map(|p| p.min(T::one()).max(-T::one()))
            .collect();
        mse_loss(&clamped, &truths)
    }
}

/// Regression-head predictions with dropout disabled.
fn predict_regression<T: Real>(
    spec: &ToyModelSpec<T>,
    params: &ToyParams<T>,
    samples: &[SentimentSample<T>],
) -> Result<Vec<T>, Error> {
    let tilde: Vec<Matrix<T>> = spec
        .bases
        .iter()
        .zip(&params.adapters)
        .map(|(base, (u, v))| {
            if u.cols() == 0 {
                Ok(base.clone())
            } else {
                base.add(&u.matmul_bt(v)?)
            }
        })
        .collect::<Result<_, Error>>()?;
    let mut preds = Vec::with_capacity(samples.len());
    for sample in samples {
        let mut h = sample.features.clone();
        for w in &tilde {
            h = matvec(w, &h).into_iter().map(|x| x.tanh()).collect();
        }
        let a1: Vec<T> = matvec(&params.reg_w1, &h)
            .into_iter()
            .zip(&params.reg_b1)
            .map(|(x, &b)| x + b)
            .collect();
        let mut yhat = params.reg_b2;
        for (w, &a) in params.reg_w2.iter().zip(&a1) {
            yhat = yhat + *w * sigmoid(a);
        }
        preds.push(yhat);
    }
    Ok(preds)
}

impl<T: Real> ObjectiveEvaluator<T> for ToyMultiTaskObjective<T> {
    fn evaluate(&self, ranks: &RankVector) -> Result<T, Error> {
        if ranks.len() != self.spec.layer_count() {
            return Err(Error::invalid(format!(
                "rank vector has {} entries for {} layers",
                ranks.len(),
                self.spec.layer_count()
            )));
        }
        self.train_and_score(ranks)
    }

    fn concurrent_safe(&self) -> bool {
        true
    }
}
