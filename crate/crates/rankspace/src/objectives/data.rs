//! Synthetic sentiment samples from a planted teacher, replacing a real
//! labeled corpus at desk scale.

use std::fmt::Write as _;

use rand_distr::{Distribution, StandardNormal};

use crate::error::Error;
use crate::objectives::map_score_to_class;
use crate::rng::rng_from;
use crate::scalar::{real, Real};

/// One sample: a pre-embedded feature vector, a continuous polarity score in
/// `[-1, 1]`, and the five-way class derived from the score.
#[derive(Debug, Clone, PartialEq)]
pub struct SentimentSample<T> {
    pub features: Vec<T>,
    pub score: T,
    pub label: u8,
}

impl<T: Real> SentimentSample<T> {
    pub fn new(features: Vec<T>, score: T) -> Result<Self, Error> {
        let label = map_score_to_class(score)?;
        Ok(SentimentSample {
            features,
            score,
            label,
        })
    }
}

/// Generate `count` samples with Gaussian features and scores from a planted
/// bounded teacher `tanh(w . x + noise)`. Labels are derived from the score,
/// so the label/score invariant holds by construction. Deterministic per
/// seed.
pub fn generate_synthetic_sentiment<T: Real>(
    count: usize,
    feature_dim: usize,
    noise_std: f64,
    seed: u64,
) -> Result<Vec<SentimentSample<T>>, Error> {
    if count < 10 {
        return Err(Error::invalid("need at least 10 samples"));
    }
    if feature_dim == 0 {
        return Err(Error::invalid("feature dimension must be positive"));
    }
    if noise_std < 0.0 {
        return Err(Error::invalid("noise std must be non-negative"));
    }
    let mut teacher_rng = rng_from(seed, 0x74_65_61);
    // Teacher weights scaled so the pre-activation has unit-plus variance and
    // scores spread across all five classes.
    let scale = 1.5 / (feature_dim as f64).sqrt();
    let teacher: Vec<f64> = (0..feature_dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut teacher_rng);
            z * scale
        })
        .collect();

    let mut rng = rng_from(seed, 0x64_61_74);
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let raw: Vec<f64> = (0..feature_dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let mut pre: f64 = raw.iter().zip(&teacher).map(|(x, w)| x * w).sum();
        if noise_std > 0.0 {
            let z: f64 = StandardNormal.sample(&mut rng);
            pre += z * noise_std;
        }
        let score = pre.tanh();
        let features = raw.into_iter().map(real::<T>).collect();
        samples.push(SentimentSample::new(features, real(score))?);
    }
    Ok(samples)
}

/// One sample per line: features, then score, then label, space-separated.
pub fn samples_to_text<T: Real>(samples: &[SentimentSample<T>]) -> String {
    let mut out = String::new();
    for s in samples {
        for f in &s.features {
            let _ = write!(out, "{f} ");
        }
        let _ = writeln!(out, "{} {}", s.score, s.label);
    }
    out
}

/// Parse the format written by [`samples_to_text`]. All lines must agree on
/// the feature dimension.
pub fn samples_from_text<T: Real>(text: &str) -> Result<Vec<SentimentSample<T>>, Error> {
    let mut samples: Vec<SentimentSample<T>> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() < 3 {
            return Err(Error::Parse {
                line: idx + 1,
                message: "expected features, score, label".into(),
            });
        }
        let label: u8 = tokens[tokens.len() - 1].parse().map_err(|e| Error::Parse {
            line: idx + 1,
            message: format!("bad label: {e}"),
        })?;
        let score: T = tokens[tokens.len() - 2].parse().map_err(|e| Error::Parse {
            line: idx + 1,
            message: format!("bad score: {e}"),
        })?;
        let features = tokens[..tokens.len() - 2]
            .iter()
            .map(|tok| {
                tok.parse::<T>().map_err(|e| Error::Parse {
                    line: idx + 1,
                    message: format!("bad feature `{tok}`: {e}"),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(first) = samples.first() {
            if first.features.len() != features.len() {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!(
                        "feature dimension {} differs from {}",
                        features.len(),
                        first.features.len()
                    ),
                });
            }
        }
        let sample = SentimentSample::new(features, score).map_err(|e| Error::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        if sample.label != label {
            return Err(Error::Parse {
                line: idx + 1,
                message: format!(
                    "label {label} disagrees with score-derived class {}",
                    sample.label
                ),
            });
        }
        samples.push(sample);
    }
    Ok(samples)
}
