//! Persisted models and prediction from raw covariates.
//!
//! A model file carries the fitted parameters together with every
//! preprocessing artifact needed to map raw matrices onto the model's
//! covariates. At prediction time the stored steps run in fit-time order:
//! center, project onto the GLRAM bases, standardize.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::row_major;
use crate::error::{MvError, Result};
use crate::glram::{glram_project, GlramBases};
use crate::inference::{probability_ci, CovarianceEstimate};
use crate::model::{linear_predictor, StandardizationStats, ThetaParam};
use crate::multiclass::{class_probabilities, predict_class, ThetaMulti};
use crate::numeric::sigmoid;
use crate::solver::PenaltyKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Binary,
    Multiclass,
}

/// Per-entry standardization with 1-based flagged positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationFile {
    #[serde(with = "row_major")]
    pub means: DMatrix<f64>,
    #[serde(with = "row_major")]
    pub sds: DMatrix<f64>,
    pub flagged: Vec<(usize, usize)>,
}

impl From<&StandardizationStats> for StandardizationFile {
    fn from(s: &StandardizationStats) -> Self {
        Self {
            means: s.means.clone(),
            sds: s.sds.clone(),
            flagged: s.flagged.iter().map(|&(i, j)| (i + 1, j + 1)).collect(),
        }
    }
}

impl StandardizationFile {
    pub fn stats(&self) -> StandardizationStats {
        StandardizationStats {
            means: self.means.clone(),
            sds: self.sds.clone(),
            flagged: self.flagged.iter().map(|&(i, j)| (i - 1, j - 1)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceFile {
    pub n: usize,
    #[serde(with = "row_major")]
    pub sigma_hat: DMatrix<f64>,
}

/// Parameters of one non-reference class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassBlock {
    pub class: usize,
    pub gamma: f64,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

/// JSON model document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub kind: ModelKind,
    /// Covariate dimensions the coefficients act on (after any projection).
    pub p: usize,
    pub q: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocks: Option<Vec<ClassBlock>>,
    /// 1-based pinned row of `alpha`.
    pub baseline_row: usize,
    pub lambda: f64,
    pub penalty: PenaltyKind,
    #[serde(default)]
    pub standardization: Option<StandardizationFile>,
    #[serde(default)]
    pub glram: Option<GlramBases>,
    #[serde(default)]
    pub covariance: Option<CovarianceFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<Vec<String>>,
}

impl ModelFile {
    pub fn binary(theta: &ThetaParam, lambda: f64, penalty: PenaltyKind) -> Self {
        Self {
            kind: ModelKind::Binary,
            p: theta.p(),
            q: theta.q(),
            gamma: Some(theta.gamma()),
            alpha: Some(theta.alpha().iter().copied().collect()),
            beta: Some(theta.beta().iter().copied().collect()),
            num_classes: None,
            reference_class: None,
            blocks: None,
            baseline_row: theta.baseline_row() + 1,
            lambda,
            penalty,
            standardization: None,
            glram: None,
            covariance: None,
            channels: None,
        }
    }

    pub fn multiclass(theta: &ThetaMulti, lambda: f64, penalty: PenaltyKind) -> Self {
        let blocks = theta
            .block_classes()
            .into_iter()
            .zip(theta.blocks())
            .map(|(class, b)| ClassBlock {
                class,
                gamma: b.gamma(),
                alpha: b.alpha().iter().copied().collect(),
                beta: b.beta().iter().copied().collect(),
            })
            .collect();
        Self {
            kind: ModelKind::Multiclass,
            p: theta.p(),
            q: theta.q(),
            gamma: None,
            alpha: None,
            beta: None,
            num_classes: Some(theta.num_classes()),
            reference_class: Some(theta.reference_class()),
            blocks: Some(blocks),
            baseline_row: theta.baseline_row() + 1,
            lambda,
            penalty,
            standardization: None,
            glram: None,
            covariance: None,
            channels: None,
        }
    }

    pub fn with_standardization(mut self, stats: &StandardizationStats) -> Self {
        self.standardization = Some(stats.into());
        self
    }

    pub fn with_glram(mut self, bases: GlramBases) -> Self {
        self.glram = Some(bases);
        self
    }

    pub fn with_covariance(mut self, cov: &CovarianceEstimate) -> Self {
        self.covariance = Some(CovarianceFile { n: cov.n, sigma_hat: cov.sigma_hat.clone() });
        self
    }

    pub fn with_channels(mut self, channels: Vec<String>) -> Self {
        self.channels = Some(channels);
        self
    }

    fn baseline(&self) -> Result<usize> {
        if self.baseline_row == 0 || self.baseline_row > self.p {
            return Err(MvError::IndexOutOfRange { index: self.baseline_row, len: self.p });
        }
        Ok(self.baseline_row - 1)
    }

    fn block_theta(&self, gamma: f64, alpha: &[f64], beta: &[f64]) -> Result<ThetaParam> {
        if alpha.len() != self.p || beta.len() != self.q {
            return Err(MvError::dims(
                format!("alpha of {} and beta of {}", self.p, self.q),
                format!("alpha of {} and beta of {}", alpha.len(), beta.len()),
            ));
        }
        ThetaParam::new(gamma, DVector::from_column_slice(alpha), DVector::from_column_slice(beta), self.baseline()?)
    }

    pub fn theta(&self) -> Result<ThetaParam> {
        match (self.kind, self.gamma, &self.alpha, &self.beta) {
            (ModelKind::Binary, Some(g), Some(a), Some(b)) => self.block_theta(g, a, b),
            (ModelKind::Binary, ..) => Err(MvError::InvalidInput("binary model needs gamma, alpha and beta".into())),
            (ModelKind::Multiclass, ..) => Err(MvError::InvalidInput("model is multi-class".into())),
        }
    }

    pub fn theta_multi(&self) -> Result<ThetaMulti> {
        let (Some(h), Some(reference), Some(blocks)) = (self.num_classes, self.reference_class, &self.blocks) else {
            return Err(MvError::InvalidInput("multi-class model needs num_classes, reference_class and blocks".into()));
        };
        let mut sorted = blocks.clone();
        sorted.sort_by_key(|b| b.class);
        let expected: Vec<usize> = (1..=h).filter(|&c| c != reference).collect();
        if sorted.iter().map(|b| b.class).collect::<Vec<_>>() != expected {
            return Err(MvError::InvalidInput(format!("blocks must cover classes {expected:?}")));
        }
        let thetas = sorted
            .iter()
            .map(|b| self.block_theta(b.gamma, &b.alpha, &b.beta))
            .collect::<Result<Vec<_>>>()?;
        ThetaMulti::new(thetas, h, reference)
    }

    pub fn covariance(&self) -> Option<CovarianceEstimate> {
        self.covariance
            .as_ref()
            .map(|c| CovarianceEstimate { sigma_hat: c.sigma_hat.clone(), n: c.n, ridge: 0.0 })
    }

    /// Shape of the raw matrices this model accepts.
    pub fn input_shape(&self) -> (usize, usize) {
        match (&self.glram, &self.standardization) {
            (Some(g), _) => (g.p(), g.q()),
            (None, Some(s)) => s.means.shape(),
            (None, None) => (self.p, self.q),
        }
    }

    /// Maps one raw matrix onto model covariates: center, project, standardize.
    pub fn preprocess(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let (ip, iq) = self.input_shape();
        if x.shape() != (ip, iq) {
            if self.glram.is_none() && x.shape() != (self.p, self.q) {
                return Err(MvError::MissingArtifact(format!(
                    "model covariates are {}x{} but the data are {}x{}, and the model stores no GLRAM bases to project them",
                    self.p,
                    self.q,
                    x.nrows(),
                    x.ncols()
                )));
            }
            return Err(MvError::dims(format!("{ip}x{iq}"), format!("{}x{}", x.nrows(), x.ncols())));
        }
        let projected = match &self.glram {
            Some(g) => glram_project(g, x)?,
            None => x.clone(),
        };
        match &self.standardization {
            Some(s) => s.stats().apply(&projected),
            None => Ok(projected),
        }
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| MvError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string(self)?).map_err(|e| MvError::io(path, e))
    }
}

/// One subject's binary prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub label: u8,
    pub probability: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
    pub linear_predictor: f64,
}

/// One subject's multi-class prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPrediction {
    pub id: String,
    pub class: usize,
    pub probabilities: Vec<f64>,
}

/// Binary predictions; intervals are included when the model stores a covariance.
pub fn predict(model: &ModelFile, matrices: &[DMatrix<f64>], ids: &[String], level: f64) -> Result<Vec<Prediction>> {
    if ids.len() != matrices.len() {
        return Err(MvError::dims(format!("{} ids", matrices.len()), format!("{} ids", ids.len())));
    }
    let theta = model.theta()?;
    let cov = model.covariance();
    matrices
        .iter()
        .zip(ids)
        .map(|(raw, id)| {
            let x = model.preprocess(raw)?;
            let eta = linear_predictor(&theta, &x)?;
            let probability = sigmoid(eta);
            let (lower, upper) = match &cov {
                Some(c) => {
                    let ci = probability_ci(&theta, c, &x, level)?;
                    (Some(ci.lower), Some(ci.upper))
                }
                None => (None, None),
            };
            Ok(Prediction { id: id.clone(), label: u8::from(probability > 0.5), probability, lower, upper, linear_predictor: eta })
        })
        .collect()
}

pub fn predict_multiclass(model: &ModelFile, matrices: &[DMatrix<f64>], ids: &[String]) -> Result<Vec<ClassPrediction>> {
    if ids.len() != matrices.len() {
        return Err(MvError::dims(format!("{} ids", matrices.len()), format!("{} ids", ids.len())));
    }
    let theta = model.theta_multi()?;
    matrices
        .iter()
        .zip(ids)
        .map(|(raw, id)| {
            let x = model.preprocess(raw)?;
            Ok(ClassPrediction {
                id: id.clone(),
                class: predict_class(&theta, &x)?,
                probabilities: class_probabilities(&theta, &x)?.iter().copied().collect(),
            })
        })
        .collect()
}
