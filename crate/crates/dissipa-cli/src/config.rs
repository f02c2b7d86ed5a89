//! TOML run configuration. Schema-validated before any computation;
//! unknown keys are rejected.

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;
use serde::Deserialize;

use dissipa::analysis::{AnalysisRequest, EpsilonRule, Variant};
use dissipa::expr::{parse_expression, BoundMode, BoxRegion, DynamicsModel};
use dissipa::lmi::QsrMode;
use dissipa::sdp::SolverSettings;
use dissipa::verify::VerifySettings;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub region: RegionConfig,
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    /// n drift expressions over x1..xn.
    pub f: Vec<String>,
    /// n rows of m input-gain expressions; defaults to all zero.
    #[serde(default)]
    pub g: Option<Vec<Vec<String>>>,
    /// p output expressions.
    pub h: Vec<String>,
    /// p rows of m feedthrough expressions; defaults to all zero.
    #[serde(default)]
    pub j: Option<Vec<Vec<String>>>,
    /// n x m constant input matrix; defaults to zero.
    #[serde(default)]
    pub b: Option<Vec<Vec<f64>>>,
    /// p x m constant feedthrough matrix; defaults to zero.
    #[serde(default)]
    pub d: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionConfig {
    pub box_lo: Vec<f64>,
    pub box_hi: Vec<f64>,
    pub divisions: Vec<usize>,
    #[serde(default = "default_exclusion_cells")]
    pub exclusion_cells: usize,
}

fn default_exclusion_cells() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    /// l2_gain | input_strictly_passive | output_strictly_passive | conic |
    /// degenerate_conic | fixed_qsr.
    pub mode: String,
    /// no_affine | with_affine; inferred from B and D when omitted.
    #[serde(default)]
    pub variant: Option<String>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Fixed ball radius; the 2 delta sqrt(n) rule applies when omitted.
    #[serde(default)]
    pub epsilon: Option<f64>,
    /// interval | sampled.
    #[serde(default = "default_bound_mode")]
    pub bound_mode: String,
    #[serde(default = "default_sampled_grid")]
    pub sampled_grid: usize,
    #[serde(default)]
    pub auto_refine: usize,
    /// Fixed Q matrix (fixed_qsr mode only), p x p.
    #[serde(default)]
    pub q: Option<Vec<Vec<f64>>>,
}

fn default_delta() -> f64 {
    1e-9
}
fn default_bound_mode() -> String {
    "interval".into()
}
fn default_sampled_grid() -> usize {
    40
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub max_iter: usize,
    pub tol_feas: f64,
    pub tol_gap: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let s = SolverSettings::default();
        SolverConfig { max_iter: s.max_iter, tol_feas: s.tol_feas, tol_gap: s.tol_gap }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub samples_per_simplex: usize,
    pub trials: usize,
    pub horizon: f64,
    pub input_amplitude: f64,
    pub seed: u64,
    pub tol: f64,
    pub hji_tol: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        let v = VerifySettings::default();
        VerifyConfig {
            samples_per_simplex: v.hji_samples_per_simplex,
            trials: v.trials,
            horizon: v.horizon,
            input_amplitude: v.input_amplitude,
            seed: v.seed,
            tol: v.tol,
            hji_tol: v.hji_tol,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Division counts applied uniformly to every axis.
    pub divisions: Vec<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub result: String,
    pub storage_csv: String,
    pub storage_samples: usize,
    pub mesh_prefix: String,
    pub sweep_csv: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            result: "result.json".into(),
            storage_csv: "storage.csv".into(),
            storage_samples: 101,
            mesh_prefix: "mesh".into(),
            sweep_csv: "sweep.csv".into(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let config: RunConfig = toml::from_str(&text).context("invalid config")?;
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        let n = self.model.n;
        if self.region.box_lo.len() != n || self.region.box_hi.len() != n {
            bail!("region.box_lo/box_hi must have model.n = {n} entries");
        }
        if self.region.divisions.len() != n {
            bail!("region.divisions must have model.n = {n} entries");
        }
        Ok(())
    }

    pub fn build_model(&self) -> Result<DynamicsModel> {
        let m = &self.model;
        let parse_vec = |field: &str, texts: &[String]| -> Result<Vec<_>> {
            texts
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    parse_expression(t, m.n)
                        .with_context(|| format!("model.{field}[{i}] = `{t}`"))
                })
                .collect()
        };
        let parse_mat = |field: &str,
                         rows: &Option<Vec<Vec<String>>>,
                         nr: usize,
                         nc: usize|
         -> Result<Vec<Vec<_>>> {
            match rows {
                None => Ok(vec![
                    vec![parse_expression("0", m.n).unwrap(); nc];
                    nr
                ]),
                Some(rows) => {
                    if rows.len() != nr || rows.iter().any(|r| r.len() != nc) {
                        bail!("model.{field} must be {nr} x {nc}");
                    }
                    rows.iter()
                        .enumerate()
                        .map(|(r, row)| {
                            row.iter()
                                .enumerate()
                                .map(|(c, t)| {
                                    parse_expression(t, m.n).with_context(|| {
                                        format!("model.{field}[{r}][{c}] = `{t}`")
                                    })
                                })
                                .collect()
                        })
                        .collect()
                }
            }
        };
        let const_mat = |field: &str,
                         rows: &Option<Vec<Vec<f64>>>,
                         nr: usize,
                         nc: usize|
         -> Result<DMatrix<f64>> {
            match rows {
                None => Ok(DMatrix::zeros(nr, nc)),
                Some(rows) => {
                    if rows.len() != nr || rows.iter().any(|r| r.len() != nc) {
                        bail!("model.{field} must be {nr} x {nc}");
                    }
                    Ok(DMatrix::from_fn(nr, nc, |r, c| rows[r][c]))
                }
            }
        };
        let model = DynamicsModel::new(
            m.n,
            m.m,
            m.p,
            parse_vec("f", &m.f)?,
            parse_mat("g", &m.g, m.n, m.m)?,
            parse_vec("h", &m.h)?,
            parse_mat("j", &m.j, m.p, m.m)?,
            const_mat("b", &m.b, m.n, m.m)?,
            const_mat("d", &m.d, m.p, m.m)?,
        )?;
        Ok(model)
    }

    pub fn qsr_mode(&self) -> Result<QsrMode> {
        Ok(match self.analysis.mode.as_str() {
            "l2_gain" => QsrMode::L2Gain,
            "input_strictly_passive" => QsrMode::InputStrictlyPassive,
            "output_strictly_passive" => QsrMode::OutputStrictlyPassive,
            "conic" => QsrMode::Conic,
            "degenerate_conic" => QsrMode::DegenerateConic,
            "fixed_qsr" => {
                let q = self
                    .analysis
                    .q
                    .as_ref()
                    .context("analysis.q is required in fixed_qsr mode")?;
                let p = self.model.p;
                if q.len() != p || q.iter().any(|r| r.len() != p) {
                    bail!("analysis.q must be {p} x {p}");
                }
                QsrMode::FixedQsr { q: DMatrix::from_fn(p, p, |r, c| q[r][c]) }
            }
            other => bail!("unknown analysis.mode `{other}`"),
        })
    }

    pub fn region(&self) -> BoxRegion {
        BoxRegion::new(self.region.box_lo.clone(), self.region.box_hi.clone())
    }

    /// Builds the analysis request, optionally overriding divisions and the
    /// verification seed.
    pub fn build_request(
        &self,
        divisions: Option<&[usize]>,
        seed_override: Option<u64>,
        verbosity: u8,
    ) -> Result<AnalysisRequest> {
        let model = self.build_model()?;
        let mode = self.qsr_mode()?;
        let mut req = AnalysisRequest::new(
            model,
            self.region(),
            divisions.map(|d| d.to_vec()).unwrap_or_else(|| self.region.divisions.clone()),
            mode,
        );
        req.variant = match self.analysis.variant.as_deref() {
            None => req.variant,
            Some("no_affine") => Variant::NoAffine,
            Some("with_affine") => Variant::WithAffine,
            Some(other) => bail!("unknown analysis.variant `{other}`"),
        };
        req.exclusion_cells = self.region.exclusion_cells;
        req.delta = self.analysis.delta;
        req.epsilon = match self.analysis.epsilon {
            Some(eps) => EpsilonRule::Fixed(eps),
            None => EpsilonRule::TwoDeltaSqrtN,
        };
        req.bound_mode = match self.analysis.bound_mode.as_str() {
            "interval" => BoundMode::Interval,
            "sampled" => BoundMode::Sampled { grid: self.analysis.sampled_grid },
            other => bail!("unknown analysis.bound_mode `{other}`"),
        };
        req.auto_refine = self.analysis.auto_refine;
        req.solver = SolverSettings {
            max_iter: self.solver.max_iter,
            tol_feas: self.solver.tol_feas,
            tol_gap: self.solver.tol_gap,
            verbosity,
        };
        req.verify = self.verify_settings(seed_override);
        Ok(req)
    }

    pub fn verify_settings(&self, seed_override: Option<u64>) -> VerifySettings {
        VerifySettings {
            hji_samples_per_simplex: self.verify.samples_per_simplex,
            trials: self.verify.trials,
            horizon: self.verify.horizon,
            input_amplitude: self.verify.input_amplitude,
            seed: seed_override.unwrap_or(self.verify.seed),
            tol: self.verify.tol,
            hji_tol: self.verify.hji_tol,
        }
    }
}
