//! The assembled fuzzy model and its baselines.
//!
//! A model pairs each rule of a [`FuzzyRuleBank`] with a [`SubReservoir`].
//! The output is `y(n) = Σ_i φ_i(n) W_out^i [x^i(n); u(n)]`, which is the
//! same as `Θ G(n)` with `Θ = [W_out^1 … W_out^Q]` and
//! `G(n) = [φ_1 g^1(n); …; φ_Q g^Q(n)]`, `g^i = [x^i; u]`.
//!
//! All computations run in normalized units; [`FrscnModel::predict`] takes
//! and returns raw values.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{NormalizationStats, TimeSeriesDataset};
use crate::error::{FrscnError, Result};
use crate::fuzzy::{fit_fcm, FcmConfig, FuzzyRuleBank};
use crate::linalg::{self, MatrixRecord};
use crate::reservoir::{Activation, SubReservoir, SubReservoirRecord};
use crate::rng::{derive_seed, seeded};
use crate::trainer::{fit_readout, train_sub_reservoir, ScConfig, TrainReport};

pub const FORMAT_VERSION: &str = "frscn-1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Frscn,
    /// Single-rule `Frscn`.
    Rscn,
    Fesn,
    /// Single-rule `Fesn`.
    Esn,
}

impl ModelKind {
    pub fn is_fuzzy(self) -> bool {
        matches!(self, ModelKind::Frscn | ModelKind::Fesn)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Frscn => "frscn",
            ModelKind::Rscn => "rscn",
            ModelKind::Fesn => "fesn",
            ModelKind::Esn => "esn",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = FrscnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frscn" => Ok(ModelKind::Frscn),
            "rscn" => Ok(ModelKind::Rscn),
            "fesn" => Ok(ModelKind::Fesn),
            "esn" => Ok(ModelKind::Esn),
            other => Err(FrscnError::invalid(format!(
                "unknown model kind `{other}` (expected frscn, rscn, fesn or esn)"
            ))),
        }
    }
}

/// Fixed-size echo-state reservoir settings for the baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EsnConfig {
    pub nodes: usize,
    /// Target spectral radius.
    pub alpha: f64,
    /// Fraction of nonzero feedback weights.
    pub density: f64,
    pub ridge: f64,
    pub activation: Activation,
}

impl Default for EsnConfig {
    fn default() -> Self {
        EsnConfig {
            nodes: 50,
            alpha: 0.9,
            density: 0.05,
            ridge: 0.0,
            activation: Activation::Tanh,
        }
    }
}

impl EsnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nodes == 0 {
            return Err(FrscnError::invalid("esn nodes must be >= 1"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(FrscnError::invalid(format!("esn alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(FrscnError::invalid(format!("esn density must lie in (0, 1], got {}", self.density)));
        }
        if !(self.ridge >= 0.0) || !self.ridge.is_finite() {
            return Err(FrscnError::invalid("esn ridge must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Provenance stored with a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub kind: ModelKind,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sc_config: Option<ScConfig>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fcm_config: Option<FcmConfig>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub esn_config: Option<EsnConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrscnModel {
    rule_bank: FuzzyRuleBank,
    sub_reservoirs: Vec<SubReservoir>,
    normalization: NormalizationStats,
    meta: ModelMeta,
}

impl FrscnModel {
    pub fn new(
        rule_bank: FuzzyRuleBank,
        sub_reservoirs: Vec<SubReservoir>,
        normalization: NormalizationStats,
        meta: ModelMeta,
    ) -> Result<Self> {
        let q = rule_bank.rule_count();
        if sub_reservoirs.len() != q {
            return Err(FrscnError::shape("sub-reservoir count", q, sub_reservoirs.len()));
        }
        let k = rule_bank.input_dim();
        let l = sub_reservoirs[0].output_dim();
        for (i, res) in sub_reservoirs.iter().enumerate() {
            if res.input_dim() != k {
                return Err(FrscnError::shape(format!("sub-reservoir {i} inputs"), k, res.input_dim()));
            }
            if res.output_dim() != l {
                return Err(FrscnError::shape(format!("sub-reservoir {i} outputs"), l, res.output_dim()));
            }
        }
        if normalization.input_dim() != k || normalization.output_dim() != l {
            return Err(FrscnError::shape(
                "normalization dimensions",
                format!("{k} inputs / {l} outputs"),
                format!("{} inputs / {} outputs", normalization.input_dim(), normalization.output_dim()),
            ));
        }
        Ok(FrscnModel {
            rule_bank,
            sub_reservoirs,
            normalization,
            meta,
        })
    }

    pub fn rule_bank(&self) -> &FuzzyRuleBank {
        &self.rule_bank
    }

    pub fn sub_reservoirs(&self) -> &[SubReservoir] {
        &self.sub_reservoirs
    }

    pub fn normalization(&self) -> &NormalizationStats {
        &self.normalization
    }

    pub fn meta(&self) -> &ModelMeta {
        &self.meta
    }

    pub fn rule_count(&self) -> usize {
        self.sub_reservoirs.len()
    }

    pub fn input_dim(&self) -> usize {
        self.rule_bank.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.sub_reservoirs[0].output_dim()
    }

    pub fn node_counts(&self) -> Vec<usize> {
        self.sub_reservoirs.iter().map(SubReservoir::nodes).collect()
    }

    /// Width of the stacked feature vector `G(n)`: `Σ_i (N_i + K)`.
    pub fn stacked_dim(&self) -> usize {
        self.sub_reservoirs.iter().map(SubReservoir::feature_dim).sum()
    }

    fn check_inputs(&self, inputs: &DMatrix<f64>) -> Result<()> {
        if inputs.nrows() != self.input_dim() {
            return Err(FrscnError::shape("model input rows", self.input_dim(), inputs.nrows()));
        }
        Ok(())
    }

    /// Predictions in raw units for a `K × n` input sequence, starting from
    /// zero reservoir states.
    pub fn predict(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_inputs(inputs)?;
        let u = self.normalization.apply_inputs(inputs)?;
        let y = self.predict_normalized(&u)?;
        self.normalization.invert_targets(&y)
    }

    /// Fire-strength weighted sum of the per-rule readouts, normalized units.
    pub fn predict_normalized(&self, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_inputs(u)?;
        let phi = self.rule_bank.fire_strength_matrix(u)?;
        let mut y = DMatrix::zeros(self.output_dim(), u.ncols());
        for (i, res) in self.sub_reservoirs.iter().enumerate() {
            let states = res.rollout(u)?;
            let yi = res.readout(&states, u)?;
            for t in 0..u.ncols() {
                let w = phi[(i, t)];
                for q in 0..y.nrows() {
                    y[(q, t)] += w * yi[(q, t)];
                }
            }
        }
        Ok(y)
    }

    /// `Θ = [W_out^1 … W_out^Q]`.
    pub fn stacked_theta(&self) -> DMatrix<f64> {
        let mut theta = DMatrix::zeros(self.output_dim(), self.stacked_dim());
        let mut col = 0;
        for res in &self.sub_reservoirs {
            let p = res.feature_dim();
            theta.columns_mut(col, p).copy_from(res.w_out());
            col += p;
        }
        theta
    }

    /// Replaces every per-rule readout with the matching block of `theta`.
    pub fn set_stacked_theta(&mut self, theta: &DMatrix<f64>) -> Result<()> {
        if theta.shape() != (self.output_dim(), self.stacked_dim()) {
            return Err(FrscnError::shape(
                "stacked readout",
                format!("{}x{}", self.output_dim(), self.stacked_dim()),
                format!("{}x{}", theta.nrows(), theta.ncols()),
            ));
        }
        let mut col = 0;
        for res in &mut self.sub_reservoirs {
            let p = res.feature_dim();
            res.set_readout(theta.columns(col, p).into_owned())?;
            col += p;
        }
        Ok(())
    }

    /// Stacked features `G(n)` (columns) for normalized inputs.
    pub fn stacked_features(&self, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_inputs(u)?;
        let phi = self.rule_bank.fire_strength_matrix(u)?;
        let k = self.input_dim();
        let mut g = DMatrix::zeros(self.stacked_dim(), u.ncols());
        let mut row = 0;
        for (i, res) in self.sub_reservoirs.iter().enumerate() {
            let n = res.nodes();
            let states = res.rollout(u)?;
            for t in 0..u.ncols() {
                let w = phi[(i, t)];
                for j in 0..n {
                    g[(row + j, t)] = w * states.states[(j, t)];
                }
                for j in 0..k {
                    g[(row + n + j, t)] = w * u[(j, t)];
                }
            }
            row += n + k;
        }
        Ok(g)
    }

    /// `Θ G(n)` in normalized units.
    pub fn predict_stacked_normalized(&self, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.stacked_theta() * self.stacked_features(u)?)
    }

    /// Normalized fire strengths (`Q × n`) for raw inputs.
    pub fn fire_strengths(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_inputs(inputs)?;
        let u = self.normalization.apply_inputs(inputs)?;
        self.rule_bank.fire_strength_matrix(&u)
    }

    pub fn session(&self) -> PredictionSession<'_> {
        PredictionSession::new(self)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            version: FORMAT_VERSION.to_string(),
            meta: self.meta.clone(),
            centers: self.rule_bank.centers().into(),
            widths: self.rule_bank.widths().into(),
            normalization: self.normalization.clone(),
            sub_reservoirs: self.sub_reservoirs.iter().map(SubReservoir::to_record).collect(),
        };
        serde_json::to_string_pretty(&file).map_err(|e| FrscnError::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| FrscnError::Format(format!("model file: {e}")))?;
        let found = value
            .get("version")
            .and_then(|v| v.as_str())
            .ok_or_else(|| FrscnError::Format("model file has no version field".into()))?;
        if found != FORMAT_VERSION {
            return Err(FrscnError::Version {
                expected: FORMAT_VERSION.to_string(),
                found: found.to_string(),
            });
        }
        let file: ModelFile =
            serde_json::from_value(value).map_err(|e| FrscnError::Format(format!("model file: {e}")))?;
        let bank = FuzzyRuleBank::new(file.centers.to_matrix()?, file.widths.to_matrix()?)?;
        let subs = file
            .sub_reservoirs
            .into_iter()
            .map(SubReservoirRecord::into_reservoir)
            .collect::<Result<Vec<_>>>()?;
        if subs.is_empty() {
            return Err(FrscnError::Format("model file has no sub-reservoirs".into()));
        }
        FrscnModel::new(bank, subs, file.normalization, file.meta)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| FrscnError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FrscnError::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    version: String,
    meta: ModelMeta,
    centers: MatrixRecord,
    widths: MatrixRecord,
    normalization: NormalizationStats,
    sub_reservoirs: Vec<SubReservoirRecord>,
}

/// Sample-by-sample prediction with reservoir states carried between calls.
/// A new session starts from zero states.
pub struct PredictionSession<'m> {
    model: &'m FrscnModel,
    states: Vec<DVector<f64>>,
}

impl<'m> PredictionSession<'m> {
    fn new(model: &'m FrscnModel) -> Self {
        let states = model
            .sub_reservoirs
            .iter()
            .map(|r| DVector::zeros(r.nodes()))
            .collect();
        PredictionSession { model, states }
    }

    pub fn reset(&mut self) {
        for x in &mut self.states {
            x.fill(0.0);
        }
    }

    /// Advances every sub-reservoir by one raw input sample and returns the
    /// raw prediction.
    pub fn step(&mut self, input: &[f64]) -> Result<DVector<f64>> {
        let m = self.model;
        if input.len() != m.input_dim() {
            return Err(FrscnError::shape("session input", m.input_dim(), input.len()));
        }
        let raw = DMatrix::from_column_slice(input.len(), 1, input);
        let u = m.normalization.apply_inputs(&raw)?;
        let phi = m.rule_bank.fire_strengths(u.column(0).as_view())?;
        let mut y = DVector::zeros(m.output_dim());
        for (i, res) in m.sub_reservoirs.iter().enumerate() {
            res.step(&mut self.states[i], u.column(0).as_view());
            let n = res.nodes();
            let w = res.w_out();
            let yi = w.columns(0, n) * &self.states[i] + w.columns(n, u.nrows()) * u.column(0);
            y.axpy(phi[i], &yi, 1.0);
        }
        let y = m
            .normalization
            .invert_targets(&DMatrix::from_column_slice(y.len(), 1, y.as_slice()))?;
        Ok(y.column(0).into_owned())
    }

    /// Runs a `K × n` block, continuing from the current states.
    pub fn run(&mut self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(self.model.output_dim(), inputs.ncols());
        for (t, col) in inputs.column_iter().enumerate() {
            let y = self.step(col.as_slice())?;
            out.set_column(t, &y);
        }
        Ok(out)
    }
}

/// FCM initialization seed for a model seed: both the configured FCM seed and
/// the model seed vary the clustering.
fn fcm_seed(fcm: &FcmConfig, seed: u64) -> u64 {
    derive_seed(seed ^ fcm.seed, u64::MAX)
}

/// Rule bank in normalized input space. One rule never runs FCM, so the
/// fuzzy model with a single rule is exactly the plain model.
fn build_rule_bank(norm_ds: &TimeSeriesDataset, q: usize, fcm: &FcmConfig, seed: u64) -> Result<FuzzyRuleBank> {
    fcm.validate()?;
    match q {
        0 => Err(FrscnError::invalid("rule count must be >= 1")),
        1 => Ok(FuzzyRuleBank::single(norm_ds.input_dim())),
        _ => {
            let cfg = FcmConfig {
                seed: fcm_seed(fcm, seed),
                ..fcm.clone()
            };
            fit_fcm(&norm_ds.fit_inputs(), q, &cfg)
        }
    }
}

/// Trains a fuzzy model with `q` rules; every rule's reservoir is grown
/// against the full target.
pub fn train_frscn(
    train: &TimeSeriesDataset,
    q: usize,
    sc: &ScConfig,
    fcm: &FcmConfig,
    seed: u64,
) -> Result<(FrscnModel, Vec<TrainReport>)> {
    sc.validate()?;
    let normalization = NormalizationStats::fit(train);
    let norm_ds = normalization.apply(train)?;
    let bank = build_rule_bank(&norm_ds, q, fcm, seed)?;
    let trained = (0..q)
        .into_par_iter()
        .map(|i| train_sub_reservoir(&norm_ds, sc, derive_seed(seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let (subs, reports): (Vec<_>, Vec<_>) = trained.into_iter().unzip();
    let meta = ModelMeta {
        kind: if q == 1 { ModelKind::Rscn } else { ModelKind::Frscn },
        seed,
        sc_config: Some(sc.clone()),
        fcm_config: (q > 1).then(|| fcm.clone()),
        esn_config: None,
    };
    Ok((FrscnModel::new(bank, subs, normalization, meta)?, reports))
}

/// Single-rule model grown by the configuration trainer.
pub fn train_rscn(train: &TimeSeriesDataset, sc: &ScConfig, seed: u64) -> Result<(FrscnModel, TrainReport)> {
    let (model, mut reports) = train_frscn(train, 1, sc, &FcmConfig::default(), seed)?;
    Ok((model, reports.remove(0)))
}

/// Fuzzy echo-state baseline: each rule gets a fixed random reservoir and a
/// least-squares readout.
pub fn train_fesn(
    train: &TimeSeriesDataset,
    q: usize,
    fcm: &FcmConfig,
    esn: &EsnConfig,
    seed: u64,
) -> Result<FrscnModel> {
    esn.validate()?;
    let normalization = NormalizationStats::fit(train);
    let norm_ds = normalization.apply(train)?;
    let bank = build_rule_bank(&norm_ds, q, fcm, seed)?;
    let subs = (0..q)
        .into_par_iter()
        .map(|i| random_esn_reservoir(&norm_ds, esn, derive_seed(seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let meta = ModelMeta {
        kind: if q == 1 { ModelKind::Esn } else { ModelKind::Fesn },
        seed,
        sc_config: None,
        fcm_config: (q > 1).then(|| fcm.clone()),
        esn_config: Some(esn.clone()),
    };
    FrscnModel::new(bank, subs, normalization, meta)
}

fn random_esn_reservoir(ds: &TimeSeriesDataset, esn: &EsnConfig, seed: u64) -> Result<SubReservoir> {
    let mut rng = seeded(seed);
    let n = esn.nodes;
    let k = ds.input_dim();
    let w_in = DMatrix::from_fn(n, k, |_, _| rng.random_range(-1.0..=1.0));
    let mut w_r = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..=1.0));
    for v in w_r.iter_mut() {
        if rng.random::<f64>() >= esn.density {
            *v = 0.0;
        }
    }
    let bias = DVector::from_fn(n, |_, _| rng.random_range(-1.0..=1.0));
    let res = SubReservoir::from_parts(
        w_in,
        w_r,
        bias,
        DMatrix::zeros(ds.output_dim(), n + k),
        esn.activation,
        esn.alpha,
    )?;
    let mut res = res.scale_to_radius(esn.alpha)?;
    let states = res.rollout(ds.inputs())?.states;
    let fit = fit_readout(&states, ds.inputs(), ds.targets(), ds.washout(), esn.ridge)?;
    res.set_readout(fit.w_out)?;
    Ok(res)
}

/// Spectral radius of every sub-reservoir's feedback matrix.
pub fn spectral_radii(model: &FrscnModel) -> Vec<f64> {
    model
        .sub_reservoirs()
        .iter()
        .map(|r| linalg::spectral_radius_general(r.w_r()))
        .collect()
}
