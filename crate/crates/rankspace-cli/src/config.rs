//! Experiment configuration: one TOML file describing the layers, the rank
//! space, the search settings, and exactly one objective. Every knob the
//! underlying algorithms leave open has a default here and a config override.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use rankspace::importance::FitConfig;
use rankspace::lowrank::{svd, LayerSpec, Spectrum};
use rankspace::matrix::Matrix;
use rankspace::objectives::{
    generate_synthetic_sentiment, samples_from_text, MatrixFitObjective, MultiTaskWeights,
    ObjectiveEvaluator, ScriptedObjective, SentimentSample, SpectralTailObjective, ToyModelSpec,
    ToyMultiTaskObjective,
};
use rankspace::search::{CoarseMode, RankSpace, SearchConfig, SweepOrder, TieBreak};
use rankspace::Error;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub layers: Vec<LayerCfg>,
    pub space: SpaceCfg,
    #[serde(default)]
    pub search: SearchCfg,
    pub objective: ObjectiveCfg,
    pub allocation: Option<AllocationCfg>,
    #[serde(default)]
    pub weights: WeightsCfg,
    pub sweep: Option<SweepCfg>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerCfg {
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceCfg {
    #[serde(default)]
    pub r_min: usize,
    pub r_max: usize,
    pub coarse_grid: Option<Vec<usize>>,
    #[serde(default = "one")]
    pub fine_delta: usize,
    #[serde(default = "one")]
    pub r_step: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchCfg {
    pub epsilon: f64,
    pub max_iter: usize,
    pub param_budget: Option<u64>,
    pub tie_break: String,
    pub sweep_order: String,
    pub coarse_mode: String,
    pub memoize: bool,
    pub jobs: usize,
}

impl Default for SearchCfg {
    fn default() -> Self {
        SearchCfg {
            epsilon: 0.0,
            max_iter: 8,
            param_budget: None,
            tie_break: "smaller-rank".into(),
            sweep_order: "ascending".into(),
            coarse_mode: "grid".into(),
            memoize: true,
            jobs: 0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveCfg {
    /// Closed-form tail-energy objective. Exactly one spectrum source:
    /// inline `spectra`, `matrix_files` (decomposed on load), or seeded
    /// geometric generation.
    SpectralTail {
        spectra: Option<Vec<Vec<f64>>>,
        matrix_files: Option<Vec<PathBuf>>,
        generate: Option<SpectrumGenCfg>,
    },
    /// Per-layer low-rank fitting of target matrices over frozen bases.
    MatrixFit {
        base_files: Vec<PathBuf>,
        target_files: Vec<PathBuf>,
        #[serde(default)]
        fit: FitCfg,
    },
    /// Small multi-task trainer on synthetic or file-backed samples.
    ToyMultitask {
        #[serde(default = "default_hidden")]
        hidden: usize,
        #[serde(default = "default_dropout")]
        dropout: f64,
        dataset_file: Option<PathBuf>,
        dataset: Option<DatasetGenCfg>,
        #[serde(default)]
        train: FitCfg,
    },
    /// Fixed metric table, mainly for replay and smoke tests.
    Scripted {
        entries: Vec<ScriptedEntryCfg>,
        default_metric: Option<f64>,
    },
}

fn default_hidden() -> usize {
    16
}

fn default_dropout() -> f64 {
    0.1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumGenCfg {
    pub sigma0: f64,
    pub decay: f64,
    #[serde(default)]
    pub floor: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitCfg {
    pub reg_strength: f64,
    pub step_size: f64,
    pub max_steps: usize,
    pub stop_tolerance: f64,
}

impl Default for FitCfg {
    fn default() -> Self {
        let d = FitConfig::<f64>::default();
        FitCfg {
            reg_strength: d.reg_strength,
            step_size: d.step_size,
            max_steps: d.max_steps,
            stop_tolerance: d.stop_tolerance,
        }
    }
}

impl FitCfg {
    pub fn to_fit_config(&self) -> FitConfig<f64> {
        FitConfig {
            reg_strength: self.reg_strength,
            step_size: self.step_size,
            max_steps: self.max_steps,
            stop_tolerance: self.stop_tolerance,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetGenCfg {
    pub count: usize,
    #[serde(default)]
    pub noise_std: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedEntryCfg {
    pub ranks: Vec<usize>,
    pub metric: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllocationCfg {
    pub rank_budget: usize,
    /// Per-layer rank caps; defaults to min(rows, cols) of each layer.
    pub caps: Option<Vec<usize>>,
    /// Base matrices to score: explicit files, or seeded Gaussian generation.
    pub base_files: Option<Vec<PathBuf>>,
    pub generate: Option<BaseGenCfg>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseGenCfg {
    #[serde(default = "default_scale")]
    pub scale: f64,
}

fn default_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightsCfg {
    pub w_regression: f64,
    pub w_classification: f64,
}

impl Default for WeightsCfg {
    fn default() -> Self {
        WeightsCfg {
            w_regression: 0.5,
            w_classification: 0.5,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepCfg {
    pub groups: Vec<GroupCfg>,
    #[serde(default = "default_combination_cap")]
    pub max_combinations: u64,
}

fn default_combination_cap() -> u64 {
    1_000_000
}

/// Contiguous run of layer ids `start..=end` swept at a shared rank.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupCfg {
    pub start: usize,
    pub end: usize,
    pub candidates: Vec<usize>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.validate(base)?;
        Ok(cfg)
    }

    /// Structural checks plus existence of every referenced file. Paths are
    /// resolved relative to the config file's directory.
    fn validate(&self, base: &Path) -> Result<(), Error> {
        self.layer_specs()?;
        self.rank_space()?;
        self.search_config(self.seed)?;
        for path in self.referenced_files() {
            let resolved = resolve(base, &path);
            if !resolved.is_file() {
                return Err(Error::InvalidInput(format!(
                    "referenced file does not exist: {}",
                    resolved.display()
                )));
            }
        }
        match &self.objective {
            ObjectiveCfg::SpectralTail {
                spectra,
                matrix_files,
                generate,
            } => {
                let sources = [
                    spectra.is_some(),
                    matrix_files.is_some(),
                    generate.is_some(),
                ]
                .iter()
                .filter(|&&s| s)
                .count();
                if sources != 1 {
                    return Err(Error::InvalidInput(
                        "spectral_tail needs exactly one of `spectra`, `matrix_files`, \
                         `generate`"
                            .into(),
                    ));
                }
                if let Some(s) = spectra {
                    if s.len() != self.layers.len() {
                        return Err(Error::InvalidInput(format!(
                            "{} spectra for {} layers",
                            s.len(),
                            self.layers.len()
                        )));
                    }
                }
                if let Some(files) = matrix_files {
                    if files.len() != self.layers.len() {
                        return Err(Error::InvalidInput(format!(
                            "{} matrix files for {} layers",
                            files.len(),
                            self.layers.len()
                        )));
                    }
                }
            }
            ObjectiveCfg::MatrixFit {
                base_files,
                target_files,
                ..
            } => {
                if base_files.len() != self.layers.len()
                    || target_files.len() != self.layers.len()
                {
                    return Err(Error::InvalidInput(format!(
                        "matrix_fit needs one base and one target per layer ({} layers)",
                        self.layers.len()
                    )));
                }
            }
            ObjectiveCfg::ToyMultitask {
                dataset_file,
                dataset,
                dropout,
                ..
            } => {
                if dataset_file.is_some() == dataset.is_some() {
                    return Err(Error::InvalidInput(
                        "toy_multitask needs exactly one of `dataset_file`, `dataset`".into(),
                    ));
                }
                if !(0.0..1.0).contains(dropout) {
                    return Err(Error::InvalidInput("dropout must lie in [0, 1)".into()));
                }
                let dim = self.layers[0].rows;
                if self.layers.iter().any(|l| l.rows != dim || l.cols != dim) {
                    return Err(Error::InvalidInput(
                        "toy_multitask needs square layers of one shared dimension".into(),
                    ));
                }
            }
            ObjectiveCfg::Scripted { entries, .. } => {
                for e in entries {
                    if e.ranks.len() != self.layers.len() {
                        return Err(Error::InvalidInput(format!(
                            "scripted entry {:?} does not match {} layers",
                            e.ranks,
                            self.layers.len()
                        )));
                    }
                }
            }
        }
        if let Some(alloc) = &self.allocation {
            if alloc.base_files.is_some() == alloc.generate.is_some() {
                return Err(Error::InvalidInput(
                    "allocation needs exactly one of `base_files`, `generate`".into(),
                ));
            }
            if let Some(files) = &alloc.base_files {
                if files.len() != self.layers.len() {
                    return Err(Error::InvalidInput(format!(
                        "{} allocation base files for {} layers",
                        files.len(),
                        self.layers.len()
                    )));
                }
            }
            if let Some(caps) = &alloc.caps {
                if caps.len() != self.layers.len() {
                    return Err(Error::InvalidInput(format!(
                        "{} caps for {} layers",
                        caps.len(),
                        self.layers.len()
                    )));
                }
            }
            if alloc.rank_budget == 0 {
                return Err(Error::InvalidInput("rank_budget must be positive".into()));
            }
        }
        MultiTaskWeights::new(self.weights.w_regression, self.weights.w_classification)?;
        if let Some(sweep) = &self.sweep {
            self.check_partition(sweep)?;
        }
        Ok(())
    }

    fn referenced_files(&self) -> Vec<PathBuf> {
        let mut files = Vec::new();
        match &self.objective {
            ObjectiveCfg::SpectralTail { matrix_files, .. } => {
                files.extend(matrix_files.iter().flatten().cloned());
            }
            ObjectiveCfg::MatrixFit {
                base_files,
                target_files,
                ..
            } => {
                files.extend(base_files.iter().cloned());
                files.extend(target_files.iter().cloned());
            }
            ObjectiveCfg::ToyMultitask { dataset_file, .. } => {
                files.extend(dataset_file.iter().cloned());
            }
            ObjectiveCfg::Scripted { .. } => {}
        }
        if let Some(alloc) = &self.allocation {
            files.extend(alloc.base_files.iter().flatten().cloned());
        }
        files
    }

    /// Groups must be disjoint, contiguous, and cover all layers exactly.
    fn check_partition(&self, sweep: &SweepCfg) -> Result<(), Error> {
        if sweep.groups.is_empty() {
            return Err(Error::InvalidInput("sweep needs at least one group".into()));
        }
        let mut next = 0usize;
        for (i, g) in sweep.groups.iter().enumerate() {
            if g.start != next {
                return Err(Error::InvalidInput(format!(
                    "sweep group {i} starts at layer {} but layer {next} is next uncovered",
                    g.start
                )));
            }
            if g.end < g.start || g.end >= self.layers.len() {
                return Err(Error::InvalidInput(format!(
                    "sweep group {i} range {}..={} out of bounds",
                    g.start, g.end
                )));
            }
            if g.candidates.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "sweep group {i} has no candidate ranks"
                )));
            }
            next = g.end + 1;
        }
        if next != self.layers.len() {
            return Err(Error::InvalidInput(format!(
                "sweep groups cover layers 0..{next} but the model has {} layers",
                self.layers.len()
            )));
        }
        Ok(())
    }

    pub fn layer_specs(&self) -> Result<Vec<LayerSpec>, Error> {
        if self.layers.is_empty() {
            return Err(Error::InvalidInput("config defines no layers".into()));
        }
        let layers: Vec<LayerSpec> = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| LayerSpec::new(i, l.rows, l.cols))
            .collect();
        rankspace::lowrank::validate_layers(&layers)?;
        Ok(layers)
    }

    pub fn rank_space(&self) -> Result<RankSpace, Error> {
        RankSpace::new(
            self.space.r_min,
            self.space.r_max,
            self.space.coarse_grid.clone(),
            self.space.fine_delta,
            self.space.r_step,
        )
    }

    pub fn search_config(&self, _seed: u64) -> Result<SearchConfig<f64>, Error> {
        let tie_break = match self.search.tie_break.as_str() {
            "smaller-rank" => TieBreak::SmallerRank,
            "larger-rank" => TieBreak::LargerRank,
            other => {
                return Err(Error::InvalidInput(format!(
                    "unknown tie_break `{other}` (smaller-rank | larger-rank)"
                )))
            }
        };
        let sweep_order = match self.search.sweep_order.as_str() {
            "ascending" => SweepOrder::Ascending,
            "descending" => SweepOrder::Descending,
            "seeded" => SweepOrder::Seeded(self.seed),
            other => {
                return Err(Error::InvalidInput(format!(
                    "unknown sweep_order `{other}` (ascending | descending | seeded)"
                )))
            }
        };
        let coarse_mode = match self.search.coarse_mode.as_str() {
            "grid" => CoarseMode::Grid,
            "arithmetic-step" => CoarseMode::ArithmeticStep,
            other => {
                return Err(Error::InvalidInput(format!(
                    "unknown coarse_mode `{other}` (grid | arithmetic-step)"
                )))
            }
        };
        let cfg = SearchConfig {
            epsilon: self.search.epsilon,
            max_iter: self.search.max_iter,
            param_budget: self.search.param_budget,
            tie_break,
            sweep_order,
            coarse_mode,
            memoize: self.search.memoize,
            jobs: self.search.jobs,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn multitask_weights(&self) -> Result<MultiTaskWeights<f64>, Error> {
        MultiTaskWeights::new(self.weights.w_regression, self.weights.w_classification)
    }

    /// The per-layer spectra of a spectral-tail objective, from whichever
    /// source the config names. `None` for other objective kinds.
    pub fn spectral_spectra(&self, base: &Path) -> Result<Option<Vec<Spectrum<f64>>>, Error> {
        let layers = self.layer_specs()?;
        let ObjectiveCfg::SpectralTail {
            spectra,
            matrix_files,
            generate,
        } = &self.objective
        else {
            return Ok(None);
        };
        let spectra: Vec<Spectrum<f64>> = if let Some(values) = spectra {
            values
                .iter()
                .map(|v| Spectrum::new(v.clone()))
                .collect::<Result<_, _>>()?
        } else if let Some(files) = matrix_files {
            let mut out = Vec::with_capacity(files.len());
            for (i, file) in files.iter().enumerate() {
                let m = Matrix::<f64>::read_text_file(resolve(base, file))?;
                if m.rows() != layers[i].rows || m.cols() != layers[i].cols {
                    return Err(Error::ShapeMismatch(format!(
                        "{}: {}x{} does not match layer {i} ({}x{})",
                        file.display(),
                        m.rows(),
                        m.cols(),
                        layers[i].rows,
                        layers[i].cols
                    )));
                }
                out.push(svd(&m)?.spectrum);
            }
            out
        } else {
            let gen = generate.as_ref().expect("validated source");
            layers
                .iter()
                .map(|l| {
                    let values: Vec<f64> = (0..l.min_dim())
                        .map(|j| gen.sigma0 * gen.decay.powi(j as i32) + gen.floor)
                        .collect();
                    Spectrum::new(values)
                })
                .collect::<Result<_, _>>()?
        };
        Ok(Some(spectra))
    }

    /// Build the configured objective. `base` anchors relative file paths;
    /// `seed` feeds every seeded generation step.
    pub fn build_objective(
        &self,
        base: &Path,
        seed: u64,
    ) -> Result<Box<dyn ObjectiveEvaluator<f64>>, Error> {
        let layers = self.layer_specs()?;
        match &self.objective {
            ObjectiveCfg::SpectralTail { .. } => {
                let spectra = self.spectral_spectra(base)?.expect("spectral_tail kind");
                Ok(Box::new(SpectralTailObjective::new(&spectra)?))
            }
            ObjectiveCfg::MatrixFit {
                base_files,
                target_files,
                fit,
            } => {
                let read = |files: &[PathBuf]| -> Result<Vec<Matrix<f64>>, Error> {
                    files
                        .iter()
                        .map(|f| Matrix::read_text_file(resolve(base, f)))
                        .collect()
                };
                let bases = read(base_files)?;
                let targets = read(target_files)?;
                for (i, (b, l)) in bases.iter().zip(&layers).enumerate() {
                    if b.rows() != l.rows || b.cols() != l.cols {
                        return Err(Error::ShapeMismatch(format!(
                            "base matrix {i} is {}x{}, layer says {}x{}",
                            b.rows(),
                            b.cols(),
                            l.rows,
                            l.cols
                        )));
                    }
                }
                Ok(Box::new(MatrixFitObjective::new(
                    bases,
                    targets,
                    fit.to_fit_config(),
                    seed,
                )?))
            }
            ObjectiveCfg::ToyMultitask {
                hidden,
                dropout,
                dataset_file,
                dataset,
                train,
            } => {
                let dim = layers[0].rows;
                let samples: Vec<SentimentSample<f64>> = if let Some(file) = dataset_file {
                    let text = std::fs::read_to_string(resolve(base, file))
                        .map_err(|e| Error::Io(format!("{}: {e}", file.display())))?;
                    samples_from_text(&text)?
                } else {
                    let gen = dataset.as_ref().expect("validated source");
                    generate_synthetic_sentiment(gen.count, dim, gen.noise_std, seed)?
                };
                let spec = ToyModelSpec::seeded(layers.len(), dim, *hidden, *dropout, seed)?;
                Ok(Box::new(ToyMultiTaskObjective::new(
                    spec,
                    &samples,
                    train.to_fit_config(),
                    self.multitask_weights()?,
                    seed,
                )?))
            }
            ObjectiveCfg::Scripted {
                entries,
                default_metric,
            } => {
                let table = entries.iter().map(|e| (e.ranks.clone(), e.metric));
                Ok(Box::new(ScriptedObjective::new(table, *default_metric)))
            }
        }
    }

    /// Base matrices for the allocate subcommand: files or seeded Gaussians.
    pub fn allocation_bases(&self, base: &Path, seed: u64) -> Result<Vec<Matrix<f64>>, Error> {
        let alloc = self
            .allocation
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("config has no [allocation] section".into()))?;
        let layers = self.layer_specs()?;
        if let Some(files) = &alloc.base_files {
            let mut out = Vec::with_capacity(files.len());
            for (i, file) in files.iter().enumerate() {
                let m = Matrix::<f64>::read_text_file(resolve(base, file))?;
                if m.rows() != layers[i].rows || m.cols() != layers[i].cols {
                    return Err(Error::ShapeMismatch(format!(
                        "{}: {}x{} does not match layer {i}",
                        file.display(),
                        m.rows(),
                        m.cols()
                    )));
                }
                out.push(m);
            }
            Ok(out)
        } else {
            let gen = alloc.generate.as_ref().expect("validated source");
            let mut rng = seeded_rng(seed);
            Ok(layers
                .iter()
                .map(|l| Matrix::random_gaussian(l.rows, l.cols, gen.scale, &mut rng))
                .collect())
        }
    }
}

pub fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

fn seeded_rng(seed: u64) -> impl rand::Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}
