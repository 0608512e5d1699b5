//! Synthetic dataset generation, CSV import and sharding.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Objective, ObjectiveError, ObjectiveKind};
use crate::rng::{stream_rng, DATA_STREAM};

/// One PE's samples: row-major features plus one target per row.
///
/// Classification targets hold the class index as a float.
#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    dim: usize,
    features: Vec<f64>,
    targets: Vec<f64>,
}

impl Shard {
    pub fn new(dim: usize, features: Vec<f64>, targets: Vec<f64>) -> Result<Self, ObjectiveError> {
        if dim == 0 {
            return Err(ObjectiveError::InvalidParameter(
                "feature dimension must be >= 1".into(),
            ));
        }
        if features.len() != dim * targets.len() {
            return Err(ObjectiveError::DimensionMismatch {
                expected: dim * targets.len(),
                got: features.len(),
            });
        }
        Ok(Self {
            dim,
            features,
            targets,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn features(&self, s: usize) -> &[f64] {
        &self.features[s * self.dim..(s + 1) * self.dim]
    }

    pub fn target(&self, s: usize) -> f64 {
        self.targets[s]
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKindName {
    LeastSquares,
    Logistic,
    Mlp,
}

/// Dataset and model parameters for the built-in objectives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKindName,
    /// Feature dimension. Inferred from the file when `csv` is set.
    pub dim: usize,
    pub samples_per_pe: usize,
    pub batch_size: usize,
    /// Use the whole shard as every mini-batch.
    pub full_batch: bool,
    /// Target noise std (least squares) or within-cluster std (classification).
    /// Defaults to 0.1 and 1.0 respectively.
    pub noise: Option<f64>,
    /// Std of the class-mean draw for classification data.
    pub separation: f64,
    pub classes: usize,
    pub hidden: usize,
    /// Std of the per-PE shift applied to `x*` or to the cluster means.
    pub heterogeneity: f64,
    /// Give every PE a copy of the same shard.
    pub identical_shards: bool,
    /// Rows of `features..., target`; split into contiguous shards.
    pub csv: Option<String>,
    pub csv_has_header: bool,
}

impl Default for ObjectiveSpec {
    fn default() -> Self {
        Self {
            kind: ObjectiveKindName::LeastSquares,
            dim: 10,
            samples_per_pe: 64,
            batch_size: 8,
            full_batch: false,
            noise: None,
            separation: 2.0,
            classes: 2,
            hidden: 8,
            heterogeneity: 0.0,
            identical_shards: false,
            csv: None,
            csv_has_header: false,
        }
    }
}

impl ObjectiveSpec {
    pub fn objective_kind(&self) -> ObjectiveKind {
        match self.kind {
            ObjectiveKindName::LeastSquares => ObjectiveKind::LeastSquares,
            ObjectiveKindName::Logistic => ObjectiveKind::Logistic {
                classes: self.classes,
            },
            ObjectiveKindName::Mlp => ObjectiveKind::Mlp {
                hidden: self.hidden,
                classes: self.classes,
            },
        }
    }

    fn noise_std(&self) -> f64 {
        self.noise.unwrap_or(match self.kind {
            ObjectiveKindName::LeastSquares => 0.1,
            _ => 1.0,
        })
    }

    pub fn validate(&self) -> Result<(), ObjectiveError> {
        let bad = |m: &str| Err(ObjectiveError::InvalidParameter(m.into()));
        if self.csv.is_none() && self.dim == 0 {
            return bad("dim must be >= 1");
        }
        if self.csv.is_none() && self.samples_per_pe == 0 {
            return bad("samples_per_pe must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.kind != ObjectiveKindName::LeastSquares && self.classes < 2 {
            return bad("classes must be >= 2");
        }
        if self.kind == ObjectiveKindName::Mlp && self.hidden == 0 {
            return bad("hidden must be >= 1");
        }
        if !(self.noise_std() >= 0.0) || !(self.heterogeneity >= 0.0) || !(self.separation >= 0.0) {
            return bad("noise, separation and heterogeneity must be nonnegative");
        }
        Ok(())
    }

    /// Build one objective per PE. Data come from a single seeded generator.
    pub fn build(&self, n: usize, seed: u64) -> Result<Vec<Objective>, ObjectiveError> {
        self.validate()?;
        let shards = match &self.csv {
            Some(path) => self.load_csv_shards(Path::new(path), n)?,
            None => self.generate_shards(n, seed),
        };
        let kind = self.objective_kind();
        let layout = Arc::new(kind.layout(shards[0].dim()));
        shards
            .into_iter()
            .enumerate()
            .map(|(i, shard)| {
                Objective::new(kind, shard, self.batch_size, layout.clone())
                    .map(|o| o.with_full_batch(self.full_batch))
                    .map_err(|e| match e {
                        ObjectiveError::EmptyShard(_) => ObjectiveError::EmptyShard(i),
                        other => other,
                    })
            })
            .collect()
    }

    fn generate_shards(&self, n: usize, seed: u64) -> Vec<Shard> {
        let mut rng = stream_rng(seed, DATA_STREAM);
        let d = self.dim;
        let noise = self.noise_std();
        let gaussian = |rng: &mut rand_chacha::ChaCha8Rng, len: usize, std: f64| -> Vec<f64> {
            (0..len)
                .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                .collect()
        };

        let count = if self.identical_shards { 1 } else { n };
        let mut shards = Vec::with_capacity(n);
        match self.kind {
            ObjectiveKindName::LeastSquares => {
                let x_star = gaussian(&mut rng, d, 1.0);
                for _ in 0..count {
                    let shift = gaussian(&mut rng, d, self.heterogeneity);
                    let local: Vec<f64> = x_star.iter().zip(&shift).map(|(a, b)| a + b).collect();
                    let mut features = Vec::with_capacity(self.samples_per_pe * d);
                    let mut targets = Vec::with_capacity(self.samples_per_pe);
                    for _ in 0..self.samples_per_pe {
                        let a = gaussian(&mut rng, d, 1.0);
                        let clean: f64 = a.iter().zip(&local).map(|(x, y)| x * y).sum();
                        targets.push(clean + noise * rng.sample::<f64, _>(StandardNormal));
                        features.extend(a);
                    }
                    shards.push(Shard::new(d, features, targets).expect("consistent shapes"));
                }
            }
            ObjectiveKindName::Logistic | ObjectiveKindName::Mlp => {
                let means: Vec<Vec<f64>> = (0..self.classes)
                    .map(|_| gaussian(&mut rng, d, self.separation))
                    .collect();
                for _ in 0..count {
                    let shift = gaussian(&mut rng, d, self.heterogeneity);
                    let mut features = Vec::with_capacity(self.samples_per_pe * d);
                    let mut targets = Vec::with_capacity(self.samples_per_pe);
                    for _ in 0..self.samples_per_pe {
                        let c = rng.random_range(0..self.classes);
                        let z = gaussian(&mut rng, d, noise);
                        features.extend(
                            means[c]
                                .iter()
                                .zip(&shift)
                                .zip(z)
                                .map(|((m, s), e)| m + s + e),
                        );
                        targets.push(c as f64);
                    }
                    shards.push(Shard::new(d, features, targets).expect("consistent shapes"));
                }
            }
        }
        if self.identical_shards {
            let first = shards.pop().expect("one shard generated");
            shards = vec![first; n];
        }
        shards
    }

    fn load_csv_shards(&self, path: &Path, n: usize) -> Result<Vec<Shard>, ObjectiveError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(self.csv_has_header)
            .trim(csv::Trim::All)
            .from_path(path)?;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            let row = record
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| {
                    ObjectiveError::InvalidParameter(format!("csv row {}: {e}", line + 1))
                })?;
            if row.len() < 2 {
                return Err(ObjectiveError::InvalidParameter(format!(
                    "csv row {} needs at least one feature and a target",
                    line + 1
                )));
            }
            if let Some(first) = rows.first() {
                if first.len() != row.len() {
                    return Err(ObjectiveError::DimensionMismatch {
                        expected: first.len(),
                        got: row.len(),
                    });
                }
            }
            rows.push(row);
        }
        if rows.len() < n {
            return Err(ObjectiveError::EmptyShard(rows.len()));
        }
        let dim = rows[0].len() - 1;
        let base = rows.len() / n;
        let extra = rows.len() % n;
        let mut it = rows.into_iter();
        (0..n)
            .map(|i| {
                let take = base + usize::from(i < extra);
                let mut features = Vec::with_capacity(take * dim);
                let mut targets = Vec::with_capacity(take);
                for mut row in it.by_ref().take(take) {
                    targets.push(row.pop().expect("row has a target"));
                    features.extend(row);
                }
                Shard::new(dim, features, targets)
            })
            .collect()
    }
}
