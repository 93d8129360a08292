//! The five experiment commands and their output files.
//!
//! Everything written here is deterministic for a fixed config and seed:
//! result files are structured TOML that re-parses losslessly, histories are
//! line-delimited JSON records, and reports are plain CSV with LF endings.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rankspace::history::Phase;
use rankspace::importance::{allocate_ranks, importance_score, ImportanceVector};
use rankspace::lowrank::param_count;
use rankspace::objectives::ObjectiveEvaluator;
use rankspace::oracle::{brute_force_search, dp_separable_search, spectral_tail_choices};
use rankspace::search::explore_into;
use rankspace::{Error, ExplorationHistory64, HistoryEntry64, RankVector};

use crate::config::{ExperimentConfig, ObjectiveCfg};

/// Everything a command needs beyond the parsed config.
pub struct RunContext {
    /// Directory of the config file; relative paths resolve against it.
    pub config_dir: PathBuf,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub jobs: Option<usize>,
}

impl RunContext {
    pub fn prepare(&self) -> Result<(), Error> {
        std::fs::create_dir_all(&self.output_dir).map_err(Error::from)
    }

    fn out(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }
}

fn write_toml<T: Serialize>(value: &T, path: &Path) -> Result<(), Error> {
    let text = toml::to_string(value)
        .map_err(|e| Error::Io(format!("serializing {}: {e}", path.display())))?;
    std::fs::write(path, text).map_err(Error::from)
}

// ---------------------------------------------------------------------------
// allocate

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct AllocationReport {
    pub seed: u64,
    pub rank_budget: usize,
    pub ranks: Vec<usize>,
    pub importances: Vec<f64>,
    /// Adapter parameters per layer at the allocated rank.
    pub layer_params: Vec<u64>,
    pub total_params: u64,
    pub total_rank: usize,
}

/// Score each layer's base matrix, allocate ranks proportionally under the
/// rank budget, and write `allocation.result`.
pub fn run_allocate(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<AllocationReport, Error> {
    let layers = cfg.layer_specs()?;
    let alloc = cfg
        .allocation
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("config has no [allocation] section".into()))?;
    let bases = cfg.allocation_bases(&ctx.config_dir, ctx.seed)?;

    let mut importances = Vec::with_capacity(bases.len());
    for m in &bases {
        importances.push(importance_score(m)?);
    }
    let caps = alloc
        .caps
        .clone()
        .unwrap_or_else(|| layers.iter().map(|l| l.min_dim()).collect());
    let scores = ImportanceVector::new(importances.clone())?;
    let ranks = allocate_ranks(&scores, alloc.rank_budget, &caps)?;

    let layer_params: Vec<u64> = ranks
        .iter()
        .zip(&layers)
        .map(|(&r, l)| r as u64 * l.param_weight())
        .collect();
    let report = AllocationReport {
        seed: ctx.seed,
        rank_budget: alloc.rank_budget,
        ranks: ranks.as_slice().to_vec(),
        importances,
        layer_params,
        total_params: param_count(&ranks, &layers)?,
        total_rank: ranks.total_rank(),
    };
    ctx.prepare()?;
    write_toml(&report, &ctx.out("allocation.result"))?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// search

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct PhaseSummary {
    pub iterations: usize,
    pub evaluations: u64,
    /// Absent when the phase answered every query from the shared cache.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_metric: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SearchReport {
    pub seed: u64,
    pub ranks: Vec<usize>,
    pub metric: f64,
    pub params: u64,
    pub evaluations: u64,
    pub warnings: Vec<String>,
    pub seed_phase: PhaseSummary,
    pub coarse: PhaseSummary,
    pub fine: PhaseSummary,
}

fn phase_summary(entries: &[HistoryEntry64], phase: Phase) -> PhaseSummary {
    let mut iterations = 0;
    let mut evaluations = 0;
    let mut best = f64::INFINITY;
    for e in entries.iter().filter(|e| e.phase == phase) {
        iterations = iterations.max(e.iteration);
        evaluations += 1;
        best = best.min(e.metric);
    }
    PhaseSummary {
        iterations,
        evaluations,
        best_metric: (evaluations > 0).then_some(best),
    }
}

/// Run the full exploration, streaming the history to `history.log` as it
/// goes, and write `best.result`.
pub fn run_search(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<SearchReport, Error> {
    let layers = cfg.layer_specs()?;
    let space = cfg.rank_space()?;
    let mut search_cfg = cfg.search_config(ctx.seed)?;
    if let Some(jobs) = ctx.jobs {
        search_cfg.jobs = jobs;
    }
    let objective = cfg.build_objective(&ctx.config_dir, ctx.seed)?;

    ctx.prepare()?;
    let log = File::create(ctx.out("history.log")).map_err(Error::from)?;
    let mut history = ExplorationHistory64::with_sink(BufWriter::new(log));
    let (best, metric) = explore_into(objective.as_ref(), &layers, &space, &search_cfg, &mut history)?;

    let report = SearchReport {
        seed: ctx.seed,
        ranks: best.as_slice().to_vec(),
        metric,
        params: param_count(&best, &layers)?,
        evaluations: history.len() as u64,
        warnings: history.warnings().to_vec(),
        seed_phase: phase_summary(history.entries(), Phase::Seed),
        coarse: phase_summary(history.entries(), Phase::Coarse),
        fine: phase_summary(history.entries(), Phase::Fine),
    };
    write_toml(&report, &ctx.out("best.result"))?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// oracle

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct OracleReport {
    pub seed: u64,
    pub method: String,
    pub ranks: Vec<usize>,
    pub metric: f64,
    pub params: u64,
    pub evaluated: u64,
}

/// Solve the configured instance exactly and write `oracle.result`.
///
/// Spectral-tail objectives decompose per layer, so they get the dynamic
/// program over the full integer rank range. Everything else is enumerated
/// over the coarse grid.
pub fn run_oracle(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<OracleReport, Error> {
    let layers = cfg.layer_specs()?;
    let space = cfg.rank_space()?;
    let search_cfg = cfg.search_config(ctx.seed)?;
    let cap = cfg
        .sweep
        .as_ref()
        .map(|s| s.max_combinations as u128)
        .unwrap_or(rankspace::oracle::DEFAULT_ENUMERATION_CAP);

    let (method, result) = match &cfg.objective {
        ObjectiveCfg::SpectralTail { .. } => {
            // Separable: exact dynamic program over the full integer rank
            // range, built from the same tail tables the evaluator uses.
            let spectra = cfg
                .spectral_spectra(&ctx.config_dir)?
                .expect("spectral_tail objective");
            let tails = rankspace::objectives::SpectralTailObjective::new(&spectra)?;
            let sets: Vec<Vec<usize>> = layers
                .iter()
                .map(|l| {
                    let cap_rank = space.r_max.min(l.min_dim());
                    (space.r_min.min(cap_rank)..=cap_rank).collect()
                })
                .collect();
            let choices = spectral_tail_choices(&tails, &layers, &sets)?;
            let result = dp_separable_search(&choices, search_cfg.param_budget)?;
            ("dp".to_string(), result)
        }
        _ => {
            let objective = cfg.build_objective(&ctx.config_dir, ctx.seed)?;
            let sets: Vec<Vec<usize>> = layers
                .iter()
                .map(|l| {
                    let cap_rank = space.r_max.min(l.min_dim());
                    let mut set: Vec<usize> = space
                        .coarse_grid
                        .iter()
                        .copied()
                        .filter(|&r| r <= cap_rank)
                        .collect();
                    let floor = space.r_min.min(cap_rank);
                    if !set.contains(&floor) {
                        set.insert(0, floor);
                    }
                    set
                })
                .collect();
            let result = brute_force_search(
                objective.as_ref(),
                &layers,
                &sets,
                search_cfg.param_budget,
                cap,
            )?;
            ("brute_force".to_string(), result)
        }
    };

    let report = OracleReport {
        seed: ctx.seed,
        method,
        ranks: result.best.as_slice().to_vec(),
        metric: result.metric,
        params: param_count(&result.best, &layers)?,
        evaluated: result.evaluated_count,
    };
    ctx.prepare()?;
    write_toml(&report, &ctx.out("oracle.result"))?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// sweep

/// One row of the group sweep table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub config_name: String,
    pub ranks: Vec<usize>,
    pub params: u64,
    pub metric: f64,
}

/// Evaluate every combination of per-group ranks, each group's rank applied
/// uniformly to its layers, and write `sweep.csv` sorted by metric.
pub fn run_sweep(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<Vec<SweepRow>, Error> {
    let layers = cfg.layer_specs()?;
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("config has no [sweep] section".into()))?;
    let objective = cfg.build_objective(&ctx.config_dir, ctx.seed)?;

    let mut combinations: u128 = 1;
    for g in &sweep.groups {
        combinations = combinations.saturating_mul(g.candidates.len() as u128);
    }
    if combinations > sweep.max_combinations as u128 {
        return Err(Error::CapExceeded {
            count: combinations,
            cap: sweep.max_combinations as u128,
        });
    }

    let group_count = sweep.groups.len();
    let mut indices = vec![0usize; group_count];
    let mut rows = Vec::new();
    loop {
        let group_ranks: Vec<usize> = indices
            .iter()
            .zip(&sweep.groups)
            .map(|(&i, g)| g.candidates[i])
            .collect();
        let mut ranks = vec![0usize; layers.len()];
        for (g, rank) in sweep.groups.iter().zip(&group_ranks) {
            for layer in g.start..=g.end {
                ranks[layer] = (*rank).min(layers[layer].min_dim());
            }
        }
        let vector = RankVector::new(ranks);
        let metric = objective
            .evaluate(&vector)
            .map_err(|e| e.at_ranks(vector.as_slice()))?;
        let name = format!(
            "G{group_count}-{}",
            group_ranks
                .iter()
                .map(|r| r.to_string())
                .collect::<Vec<_>>()
                .join("@")
        );
        rows.push(SweepRow {
            config_name: name,
            ranks: vector.as_slice().to_vec(),
            params: param_count(&vector, &layers)?,
            metric,
        });

        let mut pos = group_count;
        loop {
            if pos == 0 {
                pos = usize::MAX;
                break;
            }
            pos -= 1;
            indices[pos] += 1;
            if indices[pos] < sweep.groups[pos].candidates.len() {
                break;
            }
            indices[pos] = 0;
        }
        if pos == usize::MAX {
            break;
        }
    }

    // Metric ascending; equal metrics order by configuration name.
    rows.sort_by(|a, b| {
        a.metric
            .partial_cmp(&b.metric)
            .expect("finite metrics")
            .then_with(|| a.config_name.cmp(&b.config_name))
    });

    ctx.prepare()?;
    let file = File::create(ctx.out("sweep.csv")).map_err(Error::from)?;
    let mut w = BufWriter::new(file);
    write!(w, "config,ranks,params,metric\n").map_err(Error::from)?;
    for row in &rows {
        write!(
            w,
            "{},{},{},{}\n",
            row.config_name,
            row.ranks
                .iter()
                .map(|r| r.to_string())
                .collect::<Vec<_>>()
                .join("@"),
            row.params,
            row.metric
        )
        .map_err(Error::from)?;
    }
    w.flush().map_err(Error::from)?;
    Ok(rows)
}

// ---------------------------------------------------------------------------
// report

/// Summarize history logs into `report.csv`: the best-metric-vs-evaluation
/// curve, plus (when a config is supplied) the uniform-rank
/// diminishing-returns table over the coarse grid.
pub fn run_report(
    history_paths: &[PathBuf],
    cfg: Option<&ExperimentConfig>,
    ctx: &RunContext,
) -> Result<PathBuf, Error> {
    let mut entries: Vec<HistoryEntry64> = Vec::new();
    for path in history_paths {
        let file = File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let batch = ExplorationHistory64::read_log(BufReader::new(file))?;
        entries.extend(batch);
    }

    ctx.prepare()?;
    let out_path = ctx.out("report.csv");
    let file = File::create(&out_path).map_err(Error::from)?;
    let mut w = BufWriter::new(file);
    write!(w, "section,index,phase,iteration,ranks,metric,running_min\n").map_err(Error::from)?;

    let mut running = f64::INFINITY;
    for (i, e) in entries.iter().enumerate() {
        running = running.min(e.metric);
        write!(
            w,
            "history,{},{},{},{},{},{}\n",
            i,
            e.phase,
            e.iteration,
            e.ranks
                .iter()
                .map(|r| r.to_string())
                .collect::<Vec<_>>()
                .join("@"),
            e.metric,
            running
        )
        .map_err(Error::from)?;
    }

    if let Some(cfg) = cfg {
        let layers = cfg.layer_specs()?;
        let space = cfg.rank_space()?;
        let objective = cfg.build_objective(&ctx.config_dir, ctx.seed)?;
        for &rank in &space.coarse_grid {
            let ranks: Vec<usize> = layers.iter().map(|l| rank.min(l.min_dim())).collect();
            let vector = RankVector::new(ranks);
            let metric = objective
                .evaluate(&vector)
                .map_err(|e| e.at_ranks(vector.as_slice()))?;
            write!(
                w,
                "uniform,{},,,{},{},\n",
                rank,
                vector,
                metric
            )
            .map_err(Error::from)?;
        }
    }
    w.flush().map_err(Error::from)?;
    Ok(out_path)
}

/// Exit code contract: 0 success, 1 config error, 2 degenerate input,
/// 3 numeric or evaluator failure.
pub fn exit_code_for(error: &Error) -> i32 {
    match error {
        Error::DegenerateInput(_) => 2,
        Error::NumericFailure(_) | Error::EvaluatorFailure { .. } => 3,
        _ => 1,
    }
}
