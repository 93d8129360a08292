//! Exact reference solvers for desk-scale instances: exhaustive enumeration
//! over candidate rank sets, and a knapsack-style dynamic program for
//! objectives that decompose into per-layer costs. Both certify the greedy
//! search: their optimum is a true lower bound on anything the sweeps return.
//!
//! Tie rule, everywhere: among vectors with equal metric, the
//! lexicographically smallest wins (per-layer candidates ascending). The
//! greedy engine's default smaller-rank preference agrees with this on
//! separable objectives, so cross-checks compare cleanly.

use crate::error::Error;
use crate::lowrank::{param_count, validate_layers, LayerSpec};
use crate::objectives::ObjectiveEvaluator;
use crate::rank::RankVector;
use crate::scalar::Real;

/// Outcome of an exact solve.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult<T> {
    pub best: RankVector,
    pub metric: T,
    /// Work performed: evaluator calls for enumeration, candidate-cell
    /// examinations for the dynamic program.
    pub evaluated_count: u64,
}

/// Default cap on the number of enumerated combinations.
pub const DEFAULT_ENUMERATION_CAP: u128 = 1_000_000;

/// Exhaustive search over the cartesian product of per-layer candidate
/// ranks, honoring an optional parameter budget.
pub fn brute_force_search<T: Real>(
    eval: &dyn ObjectiveEvaluator<T>,
    layers: &[LayerSpec],
    candidate_sets: &[Vec<usize>],
    param_budget: Option<u64>,
    cap: u128,
) -> Result<OracleResult<T>, Error> {
    validate_layers(layers)?;
    if candidate_sets.len() != layers.len() {
        return Err(Error::invalid(format!(
            "{} candidate sets for {} layers",
            candidate_sets.len(),
            layers.len()
        )));
    }
    let mut product: u128 = 1;
    for (layer, set) in candidate_sets.iter().enumerate() {
        if set.is_empty() {
            return Err(Error::invalid(format!("layer {layer} has no candidates")));
        }
        for pair in set.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::invalid(format!(
                    "layer {layer} candidates must be strictly increasing"
                )));
            }
        }
        if *set.last().expect("non-empty") > layers[layer].min_dim() {
            return Err(Error::InvalidRank {
                rank: *set.last().expect("non-empty"),
                max: layers[layer].min_dim(),
            });
        }
        product = product.saturating_mul(set.len() as u128);
    }
    if product > cap {
        return Err(Error::CapExceeded {
            count: product,
            cap,
        });
    }

    let mut indices = vec![0usize; layers.len()];
    let mut best: Option<(RankVector, T)> = None;
    let mut evaluated: u64 = 0;
    let mut min_weight_seen: Option<u64> = None;
    loop {
        let ranks = RankVector::new(
            indices
                .iter()
                .enumerate()
                .map(|(layer, &i)| candidate_sets[layer][i])
                .collect(),
        );
        let weight = param_count(&ranks, layers)?;
        min_weight_seen = Some(min_weight_seen.map_or(weight, |w| w.min(weight)));
        if param_budget.map_or(true, |b| weight <= b) {
            let metric = eval
                .evaluate(&ranks)
                .map_err(|e| e.at_ranks(ranks.as_slice()))?;
            evaluated += 1;
            let better = match &best {
                None => true,
                Some((_, best_metric)) => metric < *best_metric,
            };
            if better {
                best = Some((ranks, metric));
            }
        }

        // Odometer: last layer spins fastest, so enumeration is
        // lexicographic in (layer id, rank).
        let mut pos = layers.len();
        loop {
            if pos == 0 {
                break;
            }
            pos -= 1;
            indices[pos] += 1;
            if indices[pos] < candidate_sets[pos].len() {
                break;
            }
            indices[pos] = 0;
            if pos == 0 {
                pos = usize::MAX;
                break;
            }
        }
        if pos == usize::MAX {
            break;
        }
    }

    match best {
        Some((best, metric)) => Ok(OracleResult {
            best,
            metric,
            evaluated_count: evaluated,
        }),
        None => Err(Error::InfeasibleBudget {
            budget: param_budget.unwrap_or(0),
            min_weight: min_weight_seen.unwrap_or(0),
        }),
    }
}

/// One admissible rank for one layer in the dynamic program, with its cost
/// contribution and its parameter weight `r * (m + n)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankChoice<T> {
    pub rank: usize,
    pub cost: T,
    pub weight: u64,
}

/// Exact optimum for separable objectives: minimize `sum_i cost_i(r_i)`
/// subject to `sum_i weight_i(r_i) <= param_budget`, by a table over
/// (layer, remaining integer budget).
///
/// `param_budget = None` drops the constraint and reduces to independent
/// per-layer minima. The returned metric is recomputed as the left-to-right
/// sum of the chosen costs, matching how a separable evaluator would add
/// them.
pub fn dp_separable_search<T: Real>(
    per_layer: &[Vec<RankChoice<T>>],
    param_budget: Option<u64>,
) -> Result<OracleResult<T>, Error> {
    if per_layer.is_empty() {
        return Err(Error::invalid("no layers"));
    }
    for (layer, choices) in per_layer.iter().enumerate() {
        if choices.is_empty() {
            return Err(Error::invalid(format!("layer {layer} has no choices")));
        }
        for pair in choices.windows(2) {
            if pair[1].rank <= pair[0].rank {
                return Err(Error::invalid(format!(
                    "layer {layer} choices must have strictly increasing ranks"
                )));
            }
        }
        if choices.iter().any(|c| !c.cost.is_finite()) {
            return Err(Error::invalid(format!(
                "layer {layer} has a non-finite cost"
            )));
        }
    }

    let mut examined: u64 = 0;

    let budget = match param_budget {
        None => {
            // Unconstrained: independent per-layer minima, smallest rank on
            // ties.
            let mut ranks = Vec::with_capacity(per_layer.len());
            let mut costs = Vec::with_capacity(per_layer.len());
            for choices in per_layer {
                let mut best = &choices[0];
                examined += choices.len() as u64;
                for c in &choices[1..] {
                    if c.cost < best.cost {
                        best = c;
                    }
                }
                ranks.push(best.rank);
                costs.push(best.cost);
            }
            let metric = costs.into_iter().fold(T::zero(), |a, c| a + c);
            return Ok(OracleResult {
                best: RankVector::new(ranks),
                metric,
                evaluated_count: examined,
            });
        }
        Some(b) => b,
    };

    // The constraint can never bind beyond the total maximal weight.
    let max_total: u64 = per_layer
        .iter()
        .map(|choices| choices.iter().map(|c| c.weight).max().unwrap_or(0))
        .sum();
    let min_total: u64 = per_layer
        .iter()
        .map(|choices| choices.iter().map(|c| c.weight).min().unwrap_or(0))
        .sum();
    if budget < min_total {
        return Err(Error::InfeasibleBudget {
            budget,
            min_weight: min_total,
        });
    }
    let budget = budget.min(max_total);
    let width = usize::try_from(budget + 1)
        .map_err(|_| Error::invalid("budget too large for a dense table"))?;
    let cells = (per_layer.len() + 1).saturating_mul(width);
    if cells > (1usize << 31) {
        return Err(Error::CapExceeded {
            count: cells as u128,
            cap: 1u128 << 31,
        });
    }

    // Suffix table: value[i][b] = best cost for layers i.. within budget b;
    // infeasible states hold +inf.
    let layer_count = per_layer.len();
    let mut value = vec![vec![T::infinity(); width]; layer_count + 1];
    for b in 0..width {
        value[layer_count][b] = T::zero();
    }
    for i in (0..layer_count).rev() {
        for b in 0..width {
            let mut best = T::infinity();
            for choice in &per_layer[i] {
                examined += 1;
                let w = choice.weight as usize;
                if w > b {
                    continue;
                }
                let rest = value[i + 1][b - w];
                if !rest.is_finite() {
                    continue;
                }
                let total = choice.cost + rest;
                if total < best {
                    best = total;
                }
            }
            value[i][b] = best;
        }
    }
    if !value[0][width - 1].is_finite() {
        return Err(Error::InfeasibleBudget {
            budget,
            min_weight: min_total,
        });
    }

    // Forward reconstruction, smallest rank first on ties: the comparison
    // recomputes exactly the expressions the table minimized, so bitwise
    // equality identifies the argmin.
    let mut ranks = Vec::with_capacity(layer_count);
    let mut costs = Vec::with_capacity(layer_count);
    let mut remaining = width - 1;
    for i in 0..layer_count {
        let target = value[i][remaining];
        let mut chosen = None;
        for choice in &per_layer[i] {
            let w = choice.weight as usize;
            if w > remaining {
                continue;
            }
            let rest = value[i + 1][remaining - w];
            if !rest.is_finite() {
                continue;
            }
            if choice.cost + rest == target {
                chosen = Some(*choice);
                break;
            }
        }
        let choice = chosen.expect("table value is attained by some choice");
        ranks.push(choice.rank);
        costs.push(choice.cost);
        remaining -= choice.weight as usize;
    }
    let metric = costs.into_iter().fold(T::zero(), |a, c| a + c);
    Ok(OracleResult {
        best: RankVector::new(ranks),
        metric,
        evaluated_count: examined,
    })
}

/// Variant of the dynamic program constrained by the total rank
/// `sum_i r_i <= rank_budget` instead of the parameter count.
pub fn dp_rank_budget_search<T: Real>(
    per_layer_costs: &[Vec<(usize, T)>],
    rank_budget: u64,
) -> Result<OracleResult<T>, Error> {
    let per_layer: Vec<Vec<RankChoice<T>>> = per_layer_costs
        .iter()
        .map(|choices| {
            choices
                .iter()
                .map(|&(rank, cost)| RankChoice {
                    rank,
                    cost,
                    weight: rank as u64,
                })
                .collect()
        })
        .collect();
    dp_separable_search(&per_layer, Some(rank_budget))
}

/// Build the per-layer choice lists for a separable spectral-tail objective.
pub fn spectral_tail_choices<T: Real>(
    tails: &crate::objectives::SpectralTailObjective<T>,
    layers: &[LayerSpec],
    candidate_sets: &[Vec<usize>],
) -> Result<Vec<Vec<RankChoice<T>>>, Error> {
    if candidate_sets.len() != layers.len() || tails.layer_count() != layers.len() {
        return Err(Error::invalid(
            "layers, spectra, and candidate sets must agree in length",
        ));
    }
    Ok(candidate_sets
        .iter()
        .enumerate()
        .map(|(layer, set)| {
            set.iter()
                .map(|&rank| RankChoice {
                    rank,
                    cost: tails.layer_cost(layer, rank),
                    weight: rank as u64 * layers[layer].param_weight(),
                })
                .collect()
        })
        .collect())
}
