//! Pluggable objective evaluators.
//!
//! An evaluator stands in for "train adapters at ranks `r`, then measure the
//! task error": it maps a rank vector to a finite metric where lower is
//! better. The search engine only ever talks to this trait, so anything from
//! a closed-form spectral model to a real trainer plugs in.

mod data;
mod toy;

pub use data::{
    generate_synthetic_sentiment, samples_from_text, samples_to_text, SentimentSample,
};
pub use toy::{
    multitask_grad_at, multitask_loss_at, ToyModelSpec, ToyMultiTaskObjective, ToyParams,
};

use std::collections::HashMap;

use crate::error::Error;
use crate::importance::{fit_low_rank, FitConfig};
use crate::lowrank::Spectrum;
use crate::matrix::Matrix;
use crate::rank::RankVector;
use crate::rng::mix_seed;
use crate::scalar::{real, Real};

/// A black-box objective over rank vectors. Must be deterministic: the same
/// rank vector always yields the same metric within one instance.
pub trait ObjectiveEvaluator<T: Real>: Send + Sync {
    fn evaluate(&self, ranks: &RankVector) -> Result<T, Error>;

    /// Whether `evaluate` may be called concurrently from several threads.
    /// The search engine falls back to sequential evaluation otherwise.
    fn concurrent_safe(&self) -> bool {
        false
    }
}

impl<T: Real> ObjectiveEvaluator<T> for Box<dyn ObjectiveEvaluator<T>> {
    fn evaluate(&self, ranks: &RankVector) -> Result<T, Error> {
        (**self).evaluate(ranks)
    }
    fn concurrent_safe(&self) -> bool {
        (**self).concurrent_safe()
    }
}

/// Closed-form evaluator: the summed tail singular energy
/// `sum_i sum_{j > r_i} sigma_j^2`, i.e. the smallest reconstruction energy
/// any rank-`r` adapters could leave behind. Separable across layers and
/// monotone non-increasing in every coordinate.
pub struct SpectralTailObjective<T> {
    tails: Vec<Vec<T>>,
}

impl<T: Real> SpectralTailObjective<T> {
    pub fn new(spectra: &[Spectrum<T>]) -> Result<Self, Error> {
        if spectra.is_empty() {
            return Err(Error::invalid("need at least one spectrum"));
        }
        Ok(SpectralTailObjective {
            tails: spectra.iter().map(|s| s.tail_table()).collect(),
        })
    }

    pub fn layer_count(&self) -> usize {
        self.tails.len()
    }

    /// Tail energy of one layer at one rank (clamped to the spectrum length).
    pub fn layer_cost(&self, layer: usize, rank: usize) -> T {
        let table = &self.tails[layer];
        table[rank.min(table.len() - 1)]
    }
}

impl<T: Real> ObjectiveEvaluator<T> for SpectralTailObjective<T> {
    fn evaluate(&self, ranks: &RankVector) -> Result<T, Error> {
        if ranks.len() != self.tails.len() {
            return Err(Error::invalid(format!(
                "rank vector has {} entries for {} layers",
                ranks.len(),
                self.tails.len()
            )));
        }
        let mut acc = T::zero();
        for (layer, &r) in ranks.iter().enumerate() {
            acc = acc + self.layer_cost(layer, r);
        }
        Ok(acc)
    }

    fn concurrent_safe(&self) -> bool {
        true
    }
}

/// Evaluator that fits low-rank factors per layer so that
/// `base_i + u v^T` approaches `target_i`, and reports the summed final
/// fitting objective.
pub struct MatrixFitObjective<T> {
    bases: Vec<Matrix<T>>,
    targets: Vec<Matrix<T>>,
    cfg: FitConfig<T>,
    seed: u64,
}

impl<T: Real> MatrixFitObjective<T> {
    pub fn new(
        bases: Vec<Matrix<T>>,
        targets: Vec<Matrix<T>>,
        cfg: FitConfig<T>,
        seed: u64,
    ) -> Result<Self, Error> {
        if bases.is_empty() || bases.len() != targets.len() {
            return Err(Error::invalid(format!(
                "{} bases vs {} targets",
                bases.len(),
                targets.len()
            )));
        }
        for (i, (b, t)) in bases.iter().zip(&targets).enumerate() {
            if b.rows() != t.rows() || b.cols() != t.cols() {
                return Err(Error::shape(format!(
                    "layer {i}: base {}x{} vs target {}x{}",
                    b.rows(),
                    b.cols(),
                    t.rows(),
                    t.cols()
                )));
            }
        }
        cfg.validate()?;
        Ok(MatrixFitObjective {
            bases,
            targets,
            cfg,
            seed,
        })
    }
}

impl<T: Real> ObjectiveEvaluator<T> for MatrixFitObjective<T> {
    fn evaluate(&self, ranks: &RankVector) -> Result<T, Error> {
        if ranks.len() != self.bases.len() {
            return Err(Error::invalid(format!(
                "rank vector has {} entries for {} layers",
                ranks.len(),
                self.bases.len()
            )));
        }
        let mut total = T::zero();
        for (layer, &r) in ranks.iter().enumerate() {
            let r = r.min(self.bases[layer].min_dim());
            let layer_seed = mix_seed(self.seed, layer as u64);
            let (_, loss) =
                fit_low_rank(&self.bases[layer], &self.targets[layer], r, &self.cfg, layer_seed)?;
            total = total + loss;
        }
        Ok(total)
    }

    fn concurrent_safe(&self) -> bool {
        true
    }
}

/// Lookup-table evaluator for tests and replay: metrics come from a fixed
/// script, with an optional default for unscripted vectors.
pub struct ScriptedObjective<T> {
    table: HashMap<Vec<usize>, T>,
    default: Option<T>,
}

impl<T: Real> ScriptedObjective<T> {
    pub fn new(entries: impl IntoIterator<Item = (Vec<usize>, T)>, default: Option<T>) -> Self {
        ScriptedObjective {
            table: entries.into_iter().collect(),
            default,
        }
    }
}

impl<T: Real> ObjectiveEvaluator<T> for ScriptedObjective<T> {
    fn evaluate(&self, ranks: &RankVector) -> Result<T, Error> {
        match self.table.get(ranks.as_slice()) {
            Some(&metric) => Ok(metric),
            None => self.default.ok_or_else(|| {
                Error::invalid(format!("no scripted metric for ranks {ranks}"))
            }),
        }
    }

    fn concurrent_safe(&self) -> bool {
        true
    }
}

/// Trade-off weights for the joint regression + classification loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultiTaskWeights<T> {
    pub w_regression: T,
    pub w_classification: T,
}

impl<T: Real> MultiTaskWeights<T> {
    pub fn new(w_regression: T, w_classification: T) -> Result<Self, Error> {
        if w_regression < T::zero() || w_classification < T::zero() {
            return Err(Error::invalid("task weights must be non-negative"));
        }
        if w_regression + w_classification <= T::zero() {
            return Err(Error::invalid("task weights must not both be zero"));
        }
        Ok(MultiTaskWeights {
            w_regression,
            w_classification,
        })
    }

    /// Equal weights for both tasks.
    pub fn balanced() -> Self {
        MultiTaskWeights {
            w_regression: real(0.5),
            w_classification: real(0.5),
        }
    }
}

/// Weighted joint loss `w_r * l_r + w_c * l_c`.
pub fn multitask_loss<T: Real>(l_regression: T, l_classification: T, w: &MultiTaskWeights<T>) -> T {
    w.w_regression * l_regression + w.w_classification * l_classification
}

/// Map a sentiment polarity score in `[-1, 1]` to one of five classes:
/// strong negative, negative, neutral, positive, strong positive.
pub fn map_score_to_class<T: Real>(score: T) -> Result<u8, Error> {
    if !(score >= -T::one() && score <= T::one()) {
        return Err(Error::invalid(format!(
            "score {score} outside [-1, 1]"
        )));
    }
    let half: T = real(0.5);
    let neutral: T = real(0.049);
    Ok(if score > half {
        4
    } else if score > neutral {
        3
    } else if score >= -neutral {
        2
    } else if score >= -half {
        1
    } else {
        0
    })
}

/// Mean squared error between prediction and truth vectors.
pub fn mse_loss<T: Real>(pred: &[T], truth: &[T]) -> Result<T, Error> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(Error::invalid(format!(
            "mse needs equal non-empty lengths, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    let n: T = real(pred.len() as f64);
    let sum: T = pred
        .iter()
        .zip(truth)
        .map(|(&p, &t)| (p - t) * (p - t))
        .sum();
    Ok(sum / n)
}

/// Mean categorical cross-entropy: for each row of logits, the negative log
/// of the softmax probability of the true class. Uses the log-sum-exp trick.
pub fn ce_loss<T: Real>(logits: &Matrix<T>, labels: &[u8]) -> Result<T, Error> {
    if logits.rows() != labels.len() || logits.rows() == 0 {
        return Err(Error::invalid(format!(
            "{} logit rows for {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    if logits.cols() == 0 {
        return Err(Error::invalid("logits need at least one class"));
    }
    let mut total = T::zero();
    for (i, &label) in labels.iter().enumerate() {
        let label = label as usize;
        if label >= logits.cols() {
            return Err(Error::invalid(format!(
                "label {label} out of range for {} classes",
                logits.cols()
            )));
        }
        let row = logits.row(i);
        let max = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let sum_exp: T = row.iter().map(|&l| (l - max).exp()).sum();
        total = total + (max + sum_exp.ln() - row[label]);
    }
    Ok(total / real(labels.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectral_tail_worked_examples() {
        let s = |vals: &[f64]| Spectrum::new(vals.to_vec()).unwrap();
        let obj = SpectralTailObjective::new(&[s(&[3.0, 2.0, 1.0])]).unwrap();
        assert_eq!(obj.evaluate(&RankVector::new(vec![1])).unwrap(), 5.0);
        assert_eq!(obj.evaluate(&RankVector::new(vec![3])).unwrap(), 0.0);

        let obj = SpectralTailObjective::new(&[s(&[3.0, 2.0, 1.0]), s(&[5.0, 4.0])]).unwrap();
        assert_eq!(obj.evaluate(&RankVector::new(vec![2, 1])).unwrap(), 17.0);
        // Ranks beyond a spectrum clamp to zero tail.
        assert_eq!(obj.evaluate(&RankVector::new(vec![9, 9])).unwrap(), 0.0);

        assert!(SpectralTailObjective::<f64>::new(&[]).is_err());
        assert!(obj.evaluate(&RankVector::new(vec![1])).is_err());
    }

    #[test]
    fn spectral_tail_has_diminishing_marginals() {
        let s = Spectrum::<f64>::geometric(3.0, 0.7, 12).unwrap();
        let obj = SpectralTailObjective::new(&[s]).unwrap();
        let mut prev_gain = f64::INFINITY;
        for r in 0..11 {
            let here = obj.evaluate(&RankVector::new(vec![r])).unwrap();
            let next = obj.evaluate(&RankVector::new(vec![r + 1])).unwrap();
            let gain = here - next;
            assert!(gain >= 0.0);
            assert!(gain <= prev_gain);
            prev_gain = gain;
        }
    }

    #[test]
    fn matrix_fit_zero_residual_targets() {
        use crate::rng::rng_from;
        let mut rng = rng_from(40, 0);
        let bases: Vec<Matrix<f64>> = (0..3)
            .map(|_| Matrix::random_gaussian(4, 3, 1.0, &mut rng))
            .collect();
        let obj =
            MatrixFitObjective::new(bases.clone(), bases.clone(), FitConfig::default(), 5)
                .unwrap();
        let metric = obj.evaluate(&RankVector::new(vec![1, 2, 0])).unwrap();
        assert!(metric <= 1e-6 * 3.0, "metric {metric}");
    }

    #[test]
    fn matrix_fit_recovers_exact_rank_one_gap() {
        use crate::rng::rng_from;
        let mut rng = rng_from(41, 0);
        let base = Matrix::<f64>::random_gaussian(5, 4, 0.5, &mut rng);
        let a = Matrix::<f64>::random_gaussian(5, 1, 1.0, &mut rng);
        let b = Matrix::<f64>::random_gaussian(4, 1, 1.0, &mut rng);
        let gap = a.matmul_bt(&b).unwrap();
        let target = base.add(&gap).unwrap();
        let cfg = FitConfig {
            max_steps: 5000,
            ..FitConfig::default()
        };
        let obj = MatrixFitObjective::new(vec![base], vec![target], cfg, 9).unwrap();
        let metric = obj.evaluate(&RankVector::new(vec![1])).unwrap();
        assert!(
            metric <= 1e-4 * gap.frobenius_norm_sq(),
            "metric {metric} vs gap energy {}",
            gap.frobenius_norm_sq()
        );
    }

    #[test]
    fn matrix_fit_huge_regularization_freezes_factors() {
        use crate::rng::rng_from;
        let mut rng = rng_from(42, 0);
        let bases: Vec<Matrix<f64>> = (0..2)
            .map(|_| Matrix::random_gaussian(4, 4, 1.0, &mut rng))
            .collect();
        let targets: Vec<Matrix<f64>> = (0..2)
            .map(|_| Matrix::random_gaussian(4, 4, 1.0, &mut rng))
            .collect();
        let cfg = FitConfig {
            reg_strength: 1e6,
            max_steps: 3000,
            ..FitConfig::default()
        };
        let obj = MatrixFitObjective::new(bases.clone(), targets.clone(), cfg, 3).unwrap();
        let metric = obj.evaluate(&RankVector::new(vec![2, 2])).unwrap();
        let residual: f64 = bases
            .iter()
            .zip(&targets)
            .map(|(b, t)| t.sub(b).unwrap().frobenius_norm_sq())
            .sum();
        // Factors driven to zero: the metric approaches the raw residual.
        assert!(
            (metric - residual).abs() <= 0.01 * residual,
            "metric {metric} vs residual {residual}"
        );
    }

    #[test]
    fn matrix_fit_rejects_mismatched_inputs() {
        let a = Matrix::<f64>::zeros(2, 2);
        let b = Matrix::<f64>::zeros(3, 2);
        assert!(
            MatrixFitObjective::new(vec![a.clone()], vec![b], FitConfig::default(), 0).is_err()
        );
        let obj =
            MatrixFitObjective::new(vec![a.clone()], vec![a], FitConfig::default(), 0).unwrap();
        assert!(obj.evaluate(&RankVector::new(vec![1, 1])).is_err());
    }

    #[test]
    fn scripted_lookup_and_default() {
        let obj = ScriptedObjective::new([(vec![1, 2], 0.5), (vec![2, 2], 0.25)], Some(9.0));
        assert_eq!(obj.evaluate(&RankVector::new(vec![2, 2])).unwrap(), 0.25);
        assert_eq!(obj.evaluate(&RankVector::new(vec![0, 0])).unwrap(), 9.0);
        let strict = ScriptedObjective::new([(vec![1], 0.5)], None);
        assert!(strict.evaluate(&RankVector::new(vec![2])).is_err());
    }

    #[test]
    fn score_class_boundaries() {
        let cases: &[(f64, u8)] = &[
            (0.7, 4),
            (0.5, 3),
            (0.049, 2),
            (0.0, 2),
            (-0.049, 2),
            (-0.3, 1),
            (-0.5, 1),
            (-0.9, 0),
        ];
        for &(score, class) in cases {
            assert_eq!(map_score_to_class(score).unwrap(), class, "score {score}");
        }
        assert!(map_score_to_class(1.2).is_err());
        assert!(map_score_to_class(-1.2).is_err());
        assert!(map_score_to_class(f64::NAN).is_err());
    }

    #[test]
    fn score_class_epsilon_scan() {
        let eps = 1e-12;
        assert_eq!(map_score_to_class(0.5 + eps).unwrap(), 4);
        assert_eq!(map_score_to_class(0.5 - eps).unwrap(), 3);
        assert_eq!(map_score_to_class(0.049 + eps).unwrap(), 3);
        assert_eq!(map_score_to_class(0.049 - eps).unwrap(), 2);
        assert_eq!(map_score_to_class(-0.049 + eps).unwrap(), 2);
        assert_eq!(map_score_to_class(-0.049 - eps).unwrap(), 1);
        assert_eq!(map_score_to_class(-0.5 + eps).unwrap(), 1);
        assert_eq!(map_score_to_class(-0.5 - eps).unwrap(), 0);
    }

    #[test]
    fn mse_worked_examples() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[1.0, 0.0], &[0.0, 0.0]).unwrap(), 0.5);
        assert_eq!(mse_loss(&[1.0, -1.0], &[-1.0, 1.0]).unwrap(), 4.0);
        assert!(mse_loss::<f64>(&[], &[]).is_err());
        assert!(mse_loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn ce_uniform_and_confident() {
        let logits = Matrix::new(2, 5, vec![0.3; 10]).unwrap();
        let loss = ce_loss(&logits, &[0, 4]).unwrap();
        assert!((loss - 5.0f64.ln()).abs() < 1e-12);

        let mut confident = Matrix::<f64>::zeros(1, 5);
        confident.set(0, 2, 1000.0);
        let loss = ce_loss(&confident, &[2]).unwrap();
        assert!(loss.abs() < 1e-12);

        assert!(ce_loss(&logits, &[0, 5]).is_err());
        assert!(ce_loss(&logits, &[0]).is_err());
    }

    #[test]
    fn ce_matches_naive_softmax_oracle() {
        use rand::Rng;
        let mut rng = crate::rng::rng_from(77, 0);
        let n = 12;
        let logits = Matrix::<f64>::from_fn(n, 5, |_, _| rng.random_range(-4.0..4.0));
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..5u8)).collect();
        // Independent route: explicit softmax then log, no max-shift.
        let mut expect = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            let row = logits.row(i);
            let denom: f64 = row.iter().map(|l| l.exp()).sum();
            let p = row[label as usize].exp() / denom;
            expect += -p.ln();
        }
        expect /= n as f64;
        let got = ce_loss(&logits, &labels).unwrap();
        assert!((got - expect).abs() <= 1e-9 * expect.max(1.0));
    }

    #[test]
    fn multitask_loss_is_the_weighted_sum() {
        let w = MultiTaskWeights::new(1.0, 0.0).unwrap();
        assert_eq!(multitask_loss(0.2, 9.0, &w), 0.2);
        let w = MultiTaskWeights::new(0.0, 1.0).unwrap();
        assert_eq!(multitask_loss(0.2, 9.0, &w), 9.0);
        let w = MultiTaskWeights::new(0.5f64, 0.5).unwrap();
        assert!((multitask_loss(0.2, 1.0, &w) - 0.6).abs() < 1e-15);
        assert!(MultiTaskWeights::new(0.0, 0.0).is_err());
        assert!(MultiTaskWeights::new(-1.0, 2.0).is_err());
    }
}
