//! Layer importance from singular energy, proportional rank allocation under
//! a total rank budget, and regularized low-rank fitting of a target update.

use crate::error::Error;
use crate::lowrank::{svd, LowRankFactors};
use crate::matrix::Matrix;
use crate::rank::RankVector;
use crate::rng::rng_from;
use crate::scalar::{real, Real};

/// Per-layer non-negative importance scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceVector<T>(Vec<T>);

impl<T: Real> ImportanceVector<T> {
    pub fn new(scores: Vec<T>) -> Result<Self, Error> {
        if scores.is_empty() {
            return Err(Error::invalid("importance vector is empty"));
        }
        if scores.iter().any(|&s| s < T::zero() || !s.is_finite()) {
            return Err(Error::invalid(
                "importance scores must be finite and non-negative",
            ));
        }
        Ok(ImportanceVector(scores))
    }

    pub fn scores(&self) -> &[T] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Importance of a layer's weight matrix: the sum of its squared singular
/// values, computed from the spectrum. Mathematically this equals the squared
/// Frobenius norm, which makes for a cheap independent cross-check.
pub fn importance_score<T: Real>(m: &Matrix<T>) -> Result<T, Error> {
    let decomp = svd(m)?;
    Ok(decomp.spectrum.energy())
}

/// Proportional rank allocation: `r_i = floor(I_i / sum I * rank_budget)`,
/// clamped per layer to `[0, caps_i]`.
///
/// The floors guarantee the pre-clamp total never exceeds the budget.
pub fn allocate_ranks<T: Real>(
    importances: &ImportanceVector<T>,
    rank_budget: usize,
    caps: &[usize],
) -> Result<RankVector, Error> {
    if caps.len() != importances.len() {
        return Err(Error::invalid(format!(
            "{} caps for {} layers",
            caps.len(),
            importances.len()
        )));
    }
    if rank_budget == 0 {
        return Err(Error::invalid("rank budget must be positive"));
    }
    let total: T = importances.scores().iter().copied().sum();
    if total <= T::zero() {
        return Err(Error::DegenerateInput(
            "all importance scores are zero; proportional allocation is undefined".into(),
        ));
    }
    let budget: T = real(rank_budget as f64);
    let ranks = importances
        .scores()
        .iter()
        .zip(caps)
        .map(|(&imp, &cap)| {
            let share = (imp / total * budget).floor();
            let r = share.to_usize().unwrap_or(usize::MAX);
            r.min(cap)
        })
        .collect();
    Ok(RankVector::new(ranks))
}

/// Settings for gradient-descent fitting of low-rank factors.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig<T> {
    /// L2 penalty weight on the factors.
    pub reg_strength: T,
    /// Initial step size; the fitter backtracks when a step would not
    /// decrease the objective.
    pub step_size: T,
    pub max_steps: usize,
    /// Stop once the per-step objective decrease falls below this.
    pub stop_tolerance: T,
}

impl<T: Real> Default for FitConfig<T> {
    fn default() -> Self {
        FitConfig {
            reg_strength: T::zero(),
            step_size: real(0.05),
            max_steps: 2000,
            stop_tolerance: real(1e-12),
        }
    }
}

impl<T: Real> FitConfig<T> {
    pub fn validate(&self) -> Result<(), Error> {
        if self.step_size <= T::zero() || !self.step_size.is_finite() {
            return Err(Error::invalid("step size must be positive"));
        }
        if self.max_steps == 0 {
            return Err(Error::invalid("max steps must be at least 1"));
        }
        if self.reg_strength < T::zero() || self.stop_tolerance < T::zero() {
            return Err(Error::invalid(
                "regularization and stop tolerance must be non-negative",
            ));
        }
        Ok(())
    }
}

/// Objective for the fitter: `||base + u v^T - target||_F^2
/// + reg * (||u||_F^2 + ||v||_F^2)`.
pub fn fit_objective_value<T: Real>(
    base: &Matrix<T>,
    target: &Matrix<T>,
    u: &Matrix<T>,
    v: &Matrix<T>,
    reg_strength: T,
) -> Result<T, Error> {
    let residual = residual_matrix(base, target, u, v)?;
    Ok(residual.frobenius_norm_sq()
        + reg_strength * (u.frobenius_norm_sq() + v.frobenius_norm_sq()))
}

/// Analytic gradients of [`fit_objective_value`]:
/// `dU = 2 E v + 2 reg u`, `dV = 2 E^T u + 2 reg v`
/// with `E = base + u v^T - target`.
pub fn fit_gradients<T: Real>(
    base: &Matrix<T>,
    target: &Matrix<T>,
    u: &Matrix<T>,
    v: &Matrix<T>,
    reg_strength: T,
) -> Result<(Matrix<T>, Matrix<T>), Error> {
    let residual = residual_matrix(base, target, u, v)?;
    let two = T::one() + T::one();
    let grad_u = residual
        .matmul(v)?
        .scale(two)
        .add(&u.scale(two * reg_strength))?;
    let grad_v = residual
        .transpose()
        .matmul(u)?
        .scale(two)
        .add(&v.scale(two * reg_strength))?;
    Ok((grad_u, grad_v))
}

fn residual_matrix<T: Real>(
    base: &Matrix<T>,
    target: &Matrix<T>,
    u: &Matrix<T>,
    v: &Matrix<T>,
) -> Result<Matrix<T>, Error> {
    if base.rows() != target.rows() || base.cols() != target.cols() {
        return Err(Error::shape(format!(
            "base {}x{} vs target {}x{}",
            base.rows(),
            base.cols(),
            target.rows(),
            target.cols()
        )));
    }
    base.add(&u.matmul_bt(v)?)?.sub(target)
}

/// Fit rank-`r` factors so that `base + u v^T` approaches `target`, by
/// gradient descent from a small seeded random init.
///
/// Steps that would increase the objective are rejected and retried with a
/// halved step, so the objective is non-increasing across accepted steps.
/// Returns the factors and the final objective value.
pub fn fit_low_rank<T: Real>(
    base: &Matrix<T>,
    target: &Matrix<T>,
    rank: usize,
    cfg: &FitConfig<T>,
    seed: u64,
) -> Result<(LowRankFactors<T>, T), Error> {
    cfg.validate()?;
    let max_rank = base.rows().min(base.cols());
    if rank > max_rank {
        return Err(Error::InvalidRank {
            rank,
            max: max_rank,
        });
    }

    let mut rng = rng_from(seed, 0x66_69_74);
    let mut u = Matrix::random_uniform(base.rows(), rank, -0.01, 0.01, &mut rng);
    let mut v = Matrix::random_uniform(base.cols(), rank, -0.01, 0.01, &mut rng);

    let mut loss = fit_objective_value(base, target, &u, &v, cfg.reg_strength)?;
    if !loss.is_finite() {
        return Err(Error::NumericFailure(
            "fit objective non-finite at step 0".into(),
        ));
    }
    if rank == 0 {
        return Ok((LowRankFactors::new(u, v)?, loss));
    }

    let mut step = cfg.step_size;
    let min_step = cfg.step_size * real(1e-12);
    for step_index in 0..cfg.max_steps {
        if !loss.is_finite() {
            return Err(Error::NumericFailure(format!(
                "fit objective non-finite at step {step_index}"
            )));
        }
        let (grad_u, grad_v) = fit_gradients(base, target, &u, &v, cfg.reg_strength)?;
        let mut accepted = false;
        while step >= min_step {
            let u_next = u.sub(&grad_u.scale(step))?;
            let v_next = v.sub(&grad_v.scale(step))?;
            let next = fit_objective_value(base, target, &u_next, &v_next, cfg.reg_strength)?;
            if next.is_finite() && next <= loss {
                let gain = loss - next;
                u = u_next;
                v = v_next;
                loss = next;
                accepted = true;
                // Ease the step back up after a success.
                step = (step * real(1.2)).min(cfg.step_size);
                if gain < cfg.stop_tolerance {
                    return Ok((LowRankFactors::new(u, v)?, loss));
                }
                break;
            }
            step = step * real(0.5);
        }
        if !accepted {
            // No decrease possible at any representable step: stationary.
            break;
        }
    }
    Ok((LowRankFactors::new(u, v)?, loss))
}
