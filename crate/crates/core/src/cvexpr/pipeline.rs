use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::{featurize_matrix, FeatureSpec, Scaler};
use crate::matrix::FeatureMatrix;
use crate::tica::{self, TicaModel, TicaOptions};
use crate::vde::{self, Mlp, MlpSpec, Tape, TrainConfig, VdeModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TicaStage {
    pub model: TicaModel,
    pub n_tics: usize,
}

/// Coordinates → features → standardization → (tICA) → encoder latent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvPipeline {
    /// Number of raw coordinates the pipeline consumes.
    pub input_dim: usize,
    /// Source coordinate `i` is read from input `input_map[i]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_map: Option<Vec<usize>>,
    pub features: FeatureSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaler: Option<Scaler>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tica: Option<TicaStage>,
    pub encoder: Mlp,
}

impl CvPipeline {
    pub fn new(
        input_dim: usize,
        features: FeatureSpec,
        scaler: Option<Scaler>,
        tica: Option<TicaStage>,
        vde: &VdeModel,
    ) -> Result<Self> {
        let p = Self {
            input_dim,
            input_map: None,
            features,
            scaler,
            tica,
            encoder: vde.encoder.clone(),
        };
        p.validate()?;
        Ok(p)
    }

    /// Width of the coordinate vector after the input map.
    fn source_dim(&self) -> usize {
        self.input_map.as_ref().map_or(self.input_dim, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(map) = &self.input_map {
            if let Some(&bad) = map.iter().find(|&&j| j >= self.input_dim) {
                return Err(Error::Spec(format!(
                    "input map index {bad} out of range for {} inputs",
                    self.input_dim
                )));
            }
        }
        let n_feat = self.features.output_dim(self.source_dim())?;
        if let Some(s) = &self.scaler {
            if s.means.len() != n_feat {
                return Err(Error::Shape {
                    context: "scaler width vs features",
                    expected: n_feat,
                    got: s.means.len(),
                });
            }
        }
        let enc_in = match &self.tica {
            Some(t) => {
                if t.model.n_features != n_feat {
                    return Err(Error::Shape {
                        context: "tICA width vs features",
                        expected: n_feat,
                        got: t.model.n_features,
                    });
                }
                if t.n_tics == 0 || t.n_tics > t.model.n_components() {
                    return Err(Error::Spec(format!("invalid n_tics {}", t.n_tics)));
                }
                t.n_tics
            }
            None => n_feat,
        };
        if self.encoder.input_width() != enc_in {
            return Err(Error::Shape {
                context: "encoder input vs upstream stage",
                expected: enc_in,
                got: self.encoder.input_width(),
            });
        }
        Ok(())
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::Shape {
                context: "collective variable input",
                expected: self.input_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    fn gather(&self, x: &[f64]) -> Vec<f64> {
        match &self.input_map {
            Some(map) => map.iter().map(|&j| x[j]).collect(),
            None => x.to_vec(),
        }
    }

    /// Encoder input for coordinates `x` (already gathered).
    fn encoder_input(&self, src: &[f64]) -> Vec<f64> {
        let mut f = Vec::new();
        self.features.apply_row(src, &mut f);
        if let Some(s) = &self.scaler {
            s.apply_row(&mut f);
        }
        match &self.tica {
            Some(t) => {
                let mut y = vec![0.0; t.n_tics];
                t.model.project_row(&f, &mut y);
                y
            }
            None => f,
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        let src = self.gather(x);
        Ok(self.encoder.forward(&self.encoder_input(&src))[0])
    }

    /// Value and exact gradient w.r.t. the raw coordinates.
    pub fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check(x)?;
        let src = self.gather(x);
        let input = self.encoder_input(&src);
        let mut tape = Tape::default();
        self.encoder.forward_tape(&input, &mut tape);
        let z = tape.output()[0];
        let mut d_out = vec![0.0; self.encoder.output_width()];
        d_out[0] = 1.0;
        let mut sink = vec![0.0; self.encoder.n_params()];
        let dz_din = self.encoder.backward(&tape, &d_out, &mut sink);

        let n_feat = self.features.output_dim(src.len())?;
        let mut dz_df = match &self.tica {
            Some(t) => {
                let mut g = vec![0.0; n_feat];
                for (v, dy) in t.model.components.iter().zip(&dz_din) {
                    for (gi, vi) in g.iter_mut().zip(v) {
                        *gi += vi * dy;
                    }
                }
                g
            }
            None => dz_din,
        };
        if let Some(s) = &self.scaler {
            for (g, sd) in dz_df.iter_mut().zip(&s.stds) {
                *g /= sd;
            }
        }
        let jac = self.features.jacobian(&src);
        let d = src.len();
        let mut dz_dsrc = vec![0.0; d];
        for (row, g) in jac.chunks_exact(d).zip(&dz_df) {
            for (o, j) in dz_dsrc.iter_mut().zip(row) {
                *o += g * j;
            }
        }
        let grad = match &self.input_map {
            Some(map) => {
                let mut out = vec![0.0; self.input_dim];
                for (i, &j) in map.iter().enumerate() {
                    out[j] += dz_dsrc[i];
                }
                out
            }
            None => dz_dsrc,
        };
        Ok((z, grad))
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.value_and_gradient(x)?.1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TicaStageConfig {
    pub lag: usize,
    pub n_tics: usize,
    #[serde(default)]
    pub shrinkage: Option<f64>,
    #[serde(default)]
    pub penalty: f64,
}

/// Everything needed to fit a pipeline from coordinate trajectories.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub features: FeatureSpec,
    #[serde(default = "PipelineConfig::default_standardize")]
    pub standardize: bool,
    #[serde(default)]
    pub tica: Option<TicaStageConfig>,
    /// Encoder widths; the first entry must match the upstream width.
    pub vde: MlpSpec,
    pub lag: usize,
    pub train: TrainConfig,
    #[serde(default = "PipelineConfig::default_noise")]
    pub noise: f64,
    #[serde(default = "PipelineConfig::default_alpha")]
    pub alpha: f64,
}

impl PipelineConfig {
    fn default_standardize() -> bool {
        true
    }
    fn default_noise() -> f64 {
        vde::DEFAULT_NOISE
    }
    fn default_alpha() -> f64 {
        vde::DEFAULT_ALPHA
    }
}

/// Intermediate products of [`fit_pipeline`].
#[derive(Clone, Debug)]
pub struct FittedPipeline {
    pub pipeline: CvPipeline,
    pub vde: VdeModel,
    /// Encoder inputs of the training data, one matrix per trajectory.
    pub encoder_inputs: Vec<FeatureMatrix>,
    /// CV values of the training frames, concatenated.
    pub cv_values: Vec<f64>,
}

/// Featurizes, standardizes, optionally projects onto tICs, and trains the
/// encoder on the result.
pub fn fit_pipeline(coords: &[&FeatureMatrix], cfg: &PipelineConfig) -> Result<FittedPipeline> {
    let first = coords.first().ok_or(Error::Empty("training trajectories"))?;
    let input_dim = first.n_cols();
    cfg.features.validate(input_dim)?;
    let feats = coords
        .iter()
        .map(|c| featurize_matrix(&cfg.features, c))
        .collect::<Result<Vec<_>>>()?;
    let scaler = if cfg.standardize {
        let pooled = FeatureMatrix::vstack(&feats.iter().collect::<Vec<_>>())?;
        Some(Scaler::fit(&pooled)?)
    } else {
        None
    };
    let mut inputs = match &scaler {
        Some(s) => feats.iter().map(|f| s.apply(f)).collect::<Result<Vec<_>>>()?,
        None => feats,
    };
    let tica = match &cfg.tica {
        Some(t) => {
            let opts = TicaOptions { shrinkage: t.shrinkage, penalty: t.penalty, n_components: t.n_tics };
            let model = tica::fit(&inputs.iter().collect::<Vec<_>>(), t.lag, &opts)?;
            inputs = inputs
                .iter()
                .map(|m| Ok(tica::project(&model, m, t.n_tics)?.data))
                .collect::<Result<Vec<_>>>()?;
            Some(TicaStage { model, n_tics: t.n_tics })
        }
        None => None,
    };
    let refs: Vec<&FeatureMatrix> = inputs.iter().collect();
    let model = vde::train(&refs, cfg.lag, &cfg.vde, &cfg.train, cfg.noise, cfg.alpha)?;
    let pipeline = CvPipeline::new(input_dim, cfg.features.clone(), scaler, tica, &model)?;
    let mut cv_values = Vec::new();
    for m in &inputs {
        cv_values.extend(model.encode_matrix(m)?);
    }
    Ok(FittedPipeline { pipeline, vde: model, encoder_inputs: inputs, cv_values })
}
