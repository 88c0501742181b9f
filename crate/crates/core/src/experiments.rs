// SPDX-License-Identifier: MIT OR Apache-2.0

//! Simulation studies at matched ARL.
//!
//! A cell pairs a scenario with a detection method. Running it calibrates the
//! threshold to the target ARL under common random numbers, then estimates the
//! detection delay with the change at time 0. Methods that learn a classifier
//! repeat this for several independent training sets and average, so the
//! reported SE covers training variability as well as Monte Carlo noise.

use serde::{Deserialize, Serialize};

use crate::classifiers::{binarize, fit_lda, fit_qda, Classifier};
use crate::detector::DetectorConfig;
use crate::error::{invalid, Error, Result};
use crate::exec::{compensated_sum, Execution};
use crate::mixture::MixtureConfig;
use crate::oc::{
    calibrate_threshold, estimate_run_length, CalibrationResult, relative_comparison_report, ComparisonReport, DetectorSpec,
    McSettings, OperatingCharacteristics, StreamSampler, DEFAULT_TOL_REL,
};
use crate::ratio::{LabelShiftPriors, ScoreRatioModel};
use crate::simgen::{log_true_lr, presets, sample_training_set, GaussianMixtureSpec, PrevalencePath, Scenario, SimRng};
use crate::Regime;

/// Where classifier scores come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreModel {
    /// LDA fitted to a pre-change training sample.
    Lda,
    /// QDA fitted to a pre-change training sample.
    Qda,
    /// Exact posterior of the pre-change mixture under the given class-1 prior;
    /// a fixed, already-trained classifier.
    Posterior { prior: f64 },
}

impl ScoreModel {
    fn is_trained(self) -> bool {
        !matches!(self, ScoreModel::Posterior { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// CUSUM on the true mixture-density ratio.
    OptimalLr,
    /// CUSUM on the binary ratio of the true labels.
    TrueLabels,
    /// CUSUM on labels from a test with known sensitivity and specificity.
    NoisyLabels { sensitivity: f64, specificity: f64 },
    /// CUSUM on the score ratio with the true post-change prevalence.
    Classifier { model: ScoreModel, m: usize },
    /// CUSUM on the binary ratio of thresholded scores.
    Binarized { model: ScoreModel, m: usize, threshold: f64 },
    /// Window-limited mixture over post-change prevalences in `[pi0_min, pi0_max]`.
    Mixture { model: ScoreModel, m: usize, pi0_min: f64, pi0_max: f64 },
}

impl Method {
    fn model(&self) -> Option<(ScoreModel, usize)> {
        match *self {
            Method::Classifier { model, m }
            | Method::Binarized { model, m, .. }
            | Method::Mixture { model, m, .. } => Some((model, m)),
            _ => None,
        }
    }

    fn is_trained(&self) -> bool {
        self.model().is_some_and(|(s, _)| s.is_trained())
    }
}

/// One table entry.
#[derive(Debug, Clone)]
pub struct Cell {
    pub name: String,
    pub scenario: Scenario,
    pub priors: LabelShiftPriors,
    pub method: Method,
}

impl Cell {
    pub fn new(name: impl Into<String>, scenario: Scenario, priors: LabelShiftPriors, method: Method) -> Self {
        Self { name: name.into(), scenario, priors, method }
    }
}

/// Budget and targets for running cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSettings {
    pub target_arl: f64,
    pub tol_rel: f64,
    /// Replications for calibration and again for the delay estimate.
    pub n_reps: u64,
    /// Independent training sets for methods that learn a classifier.
    pub n_classifiers: usize,
    pub seed: u64,
    pub arl_cap: Option<u64>,
    pub add_cap: Option<u64>,
    pub execution: Execution,
}

impl CellSettings {
    pub fn new(target_arl: f64, n_reps: u64, seed: u64) -> Self {
        Self {
            target_arl,
            tol_rel: DEFAULT_TOL_REL,
            n_reps,
            n_classifiers: 1,
            seed,
            arl_cap: None,
            add_cap: None,
            execution: Execution::default(),
        }
    }

    pub fn with_classifiers(mut self, k: usize) -> Self {
        self.n_classifiers = k;
        self
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    fn arl_cap(&self) -> u64 {
        self.arl_cap.unwrap_or_else(|| crate::oc::default_arl_cap(self.target_arl))
    }

    /// Delay runs are truncated at 50 × the target ARL, far above any delay
    /// of a detector that is calibrated at that ARL.
    fn add_cap(&self) -> u64 {
        self.add_cap.unwrap_or((50.0 * self.target_arl).ceil() as u64)
    }
}

/// Result of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellOutcome {
    pub name: String,
    pub oc: OperatingCharacteristics,
    /// Calibrated threshold for each training set.
    pub thresholds: Vec<f64>,
    /// Delay estimate for each training set.
    pub adds: Vec<f64>,
    /// Every calibration reached the tolerance band.
    pub calibrated: bool,
}

/// Draws `(x, y)` from a scenario and maps it to a detector input.
struct ScenarioSampler<'a, F> {
    scenario: &'a Scenario,
    map: F,
}

impl<F> StreamSampler for ScenarioSampler<'_, F>
where
    F: Fn(&[f64], u8, &mut SimRng) -> f64 + Sync,
{
    #[inline]
    fn draw(&self, regime: Regime, t: u64, rng: &mut SimRng) -> f64 {
        let d = self.scenario.dim();
        let mut stack = [0.0f64; 16];
        let mut heap;
        let x: &mut [f64] = if d <= 16 {
            &mut stack[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap
        };
        let y = self.scenario.sample_regime(regime, t, rng, x);
        (self.map)(x, y, rng)
    }
}

/// The exact pre-change posterior with a chosen class-1 prior.
#[derive(Debug, Clone)]
pub struct ExactPosterior {
    spec: GaussianMixtureSpec,
}

impl ExactPosterior {
    pub fn new(pre: &GaussianMixtureSpec, prior: f64) -> Result<Self> {
        Ok(Self { spec: pre.with_prevalence(prior)? })
    }
}

impl Classifier for ExactPosterior {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn log_odds(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        let p = self.spec.prevalence;
        Ok((p / (1.0 - p)).ln() + self.spec.class1.log_density(x) - self.spec.class0.log_density(x))
    }
}

fn build_classifier(
    model: ScoreModel,
    m: usize,
    scenario: &Scenario,
    pi_inf: f64,
    seed: u64,
) -> Result<Box<dyn Classifier>> {
    Ok(match model {
        ScoreModel::Posterior { prior } => Box::new(ExactPosterior::new(&scenario.pre, prior)?),
        ScoreModel::Lda => Box::new(fit_lda(&sample_training_set(&scenario.pre, m, seed)?, pi_inf)?),
        ScoreModel::Qda => Box::new(fit_qda(&sample_training_set(&scenario.pre, m, seed)?, pi_inf)?),
    })
}

/// Well-separated derived seeds for the different random streams of a cell.
fn derive_seed(seed: u64, stream: u64, k: u64) -> u64 {
    const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
    let mut z = seed ^ stream.wrapping_mul(GOLDEN) ^ k.wrapping_mul(0xD1B5_4A32_D192_ED03);
    // SplitMix64 finalizer.
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_TRAIN: u64 = 1;
const STREAM_CALIBRATE: u64 = 2;
const STREAM_DELAY: u64 = 3;

struct Trial {
    threshold: f64,
    arl: f64,
    arl_se: f64,
    add: f64,
    add_se: f64,
    censored: u64,
    converged: bool,
}

fn run_trial(spec: &DetectorSpec, sampler: &dyn StreamSampler, settings: &CellSettings, k: u64) -> Result<Trial> {
    let cal = calibrate_trial(spec, sampler, settings, k)?;
    let add_settings = McSettings::new(settings.n_reps, settings.add_cap(), derive_seed(settings.seed, STREAM_DELAY, k))
        .with_execution(settings.execution);
    let add = estimate_run_length(&spec.with_threshold(cal.threshold)?, sampler, Regime::Post, &add_settings)?;
    Ok(Trial {
        threshold: cal.threshold,
        arl: cal.arl,
        arl_se: cal.arl_se,
        add: add.mean,
        add_se: add.se,
        censored: cal.n_censored + add.censored,
        converged: cal.converged,
    })
}

fn calibrate_trial(
    spec: &DetectorSpec,
    sampler: &dyn StreamSampler,
    settings: &CellSettings,
    k: u64,
) -> Result<CalibrationResult> {
    let cal_settings = McSettings::new(settings.n_reps, settings.arl_cap(), derive_seed(settings.seed, STREAM_CALIBRATE, k))
        .with_execution(settings.execution);
    calibrate_threshold(spec, sampler, settings.target_arl, settings.tol_rel, &cal_settings)
}

/// Builds the detector and detector-input sampler of training set `k` and
/// hands them to `f`.
fn with_sampler<T>(
    cell: &Cell,
    settings: &CellSettings,
    k: u64,
    f: &dyn Fn(&DetectorSpec, &dyn StreamSampler) -> Result<T>,
) -> Result<T> {
    let sc = &cell.scenario;
    let ratio = ScoreRatioModel::new(cell.priors);
    let recursive = DetectorSpec::Recursive(DetectorConfig::cusum(2.0)?);
    let log_binary = [ratio.eval(0.0).ln(), ratio.eval(1.0).ln()];
    let train_seed = derive_seed(settings.seed, STREAM_TRAIN, k);
    match &cell.method {
        Method::OptimalLr => {
            let s = ScenarioSampler { scenario: sc, map: |x: &[f64], _: u8, _: &mut SimRng| log_true_lr(x, &sc.pre, &sc.post) };
            f(&recursive, &s)
        }
        Method::TrueLabels => {
            let s = ScenarioSampler { scenario: sc, map: |_: &[f64], y: u8, _: &mut SimRng| log_binary[y as usize] };
            f(&recursive, &s)
        }
        &Method::NoisyLabels { sensitivity, specificity } => {
            for (name, v) in [("sensitivity", sensitivity), ("specificity", specificity)] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(invalid(format!("{name} must lie in [0, 1], got {v}")));
                }
            }
            let s = ScenarioSampler {
                scenario: sc,
                map: |_: &[f64], y: u8, rng: &mut SimRng| {
                    let u: f64 = rand::Rng::random(rng);
                    let observed = if y == 1 { u < sensitivity } else { u >= specificity };
                    log_binary[usize::from(observed)]
                },
            };
            f(&recursive, &s)
        }
        &Method::Classifier { model, m } => {
            let clf = build_classifier(model, m, sc, cell.priors.pi_inf, train_seed)?;
            let s = ScenarioSampler {
                scenario: sc,
                map: |x: &[f64], _: u8, _: &mut SimRng| clf.score(x).map_or(f64::NAN, |p| ratio.eval(p).ln()),
            };
            f(&recursive, &s)
        }
        &Method::Binarized { model, m, threshold } => {
            let clf = build_classifier(model, m, sc, cell.priors.pi_inf, train_seed)?;
            let s = ScenarioSampler {
                scenario: sc,
                map: |x: &[f64], _: u8, _: &mut SimRng| {
                    clf.score(x).map_or(f64::NAN, |p| log_binary[binarize(p, threshold) as usize])
                },
            };
            f(&recursive, &s)
        }
        &Method::Mixture { model, m, pi0_min, pi0_max } => {
            let clf = build_classifier(model, m, sc, cell.priors.pi_inf, train_seed)?;
            let cfg = MixtureConfig::uniform(pi0_min, pi0_max, cell.priors.pi_inf, 2.0);
            cfg.validate()?;
            let s = ScenarioSampler {
                scenario: sc,
                map: |x: &[f64], _: u8, _: &mut SimRng| clf.score(x).unwrap_or(f64::NAN),
            };
            f(&DetectorSpec::Mixture(cfg), &s)
        }
    }
}

/// Calibrates the threshold of a cell for its first training set only.
pub fn calibrate_cell(cell: &Cell, settings: &CellSettings) -> Result<CalibrationResult> {
    with_sampler(cell, settings, 0, &|spec, s| calibrate_trial(spec, s, settings, 0))
}

fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = compensated_sum(v.iter().copied()) / n;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let ss = compensated_sum(v.iter().map(|x| (x - mean).powi(2)));
    (mean, (ss / (n - 1.0) / n).sqrt())
}

/// Calibrates and evaluates one cell.
pub fn run_cell(cell: &Cell, settings: &CellSettings) -> Result<CellOutcome> {
    if settings.n_classifiers == 0 {
        return Err(invalid("n_classifiers must be at least 1"));
    }
    let k_total = if cell.method.is_trained() { settings.n_classifiers } else { 1 };
    let trials = (0..k_total as u64)
        .map(|k| with_sampler(cell, settings, k, &|spec, s| run_trial(spec, s, settings, k)))
        .collect::<Result<Vec<_>>>()?;
    let adds: Vec<f64> = trials.iter().map(|t| t.add).collect();
    let arls: Vec<f64> = trials.iter().map(|t| t.arl).collect();
    let (oc_arl, oc_arl_se, oc_add, oc_add_se) = if trials.len() == 1 {
        let t = &trials[0];
        (t.arl, t.arl_se, t.add, t.add_se)
    } else {
        let (a, a_se) = mean_and_se(&arls);
        let (d, d_se) = mean_and_se(&adds);
        (a, a_se, d, d_se)
    };
    let oc = OperatingCharacteristics {
        arl_estimate: oc_arl,
        arl_se: oc_arl_se,
        add_estimate: oc_add,
        add_se: oc_add_se,
        n_replications: 2 * settings.n_reps * trials.len() as u64,
        n_censored: trials.iter().map(|t| t.censored).sum(),
        cap: settings.arl_cap().max(settings.add_cap()),
    };
    Ok(CellOutcome {
        name: cell.name.clone(),
        oc,
        thresholds: trials.iter().map(|t| t.threshold).collect(),
        adds,
        calibrated: trials.iter().all(|t| t.converged),
    })
}

/// Runs cells in order and renders a comparison.
pub fn run_group(cells: &[Cell], settings: &CellSettings) -> Result<(Vec<CellOutcome>, ComparisonReport)> {
    let outcomes = cells.iter().map(|c| run_cell(c, settings)).collect::<Result<Vec<_>>>()?;
    let entries: Vec<(String, OperatingCharacteristics)> = outcomes.iter().map(|o| (o.name.clone(), o.oc)).collect();
    let report = relative_comparison_report(&entries)?;
    Ok((outcomes, report))
}

fn scenario1_priors() -> LabelShiftPriors {
    LabelShiftPriors::new(presets::SCENARIO1_PI_INF, presets::SCENARIO1_PI_0).expect("preset priors are valid")
}

fn dengue_priors() -> LabelShiftPriors {
    LabelShiftPriors::new(presets::DENGUE_PI_INF, presets::DENGUE_PI_0).expect("preset priors are valid")
}

/// Training-set sizes of the label-shift table.
pub const SCENARIO1_SIZES: [usize; 3] = [200, 1000, 5000];
/// Training-set size of the label-shift-violation table.
pub const SCENARIO2_SIZE: usize = 1000;
/// Prior the dengue-analogue classifier was trained under. Its Youden-optimal
/// cut-off is therefore 0.33 rather than the 0.3 of the monitored stream.
pub const DENGUE_SCORE_PRIOR: f64 = 0.33;
/// Candidate post-change prevalences for the mixture detector.
pub const DENGUE_PI0_RANGE: (f64, f64) = (0.6, 0.8);

/// Groups of the label-shift table: one per `Σ1`.
pub fn scenario1_groups() -> Vec<(String, Vec<Cell>)> {
    presets::Sigma1::ALL
        .iter()
        .map(|&s1| {
            let sc = presets::scenario1(s1);
            let mut cells: Vec<Cell> = SCENARIO1_SIZES
                .iter()
                .map(|&m| {
                    Cell::new(
                        format!("classifier m={m}"),
                        sc.clone(),
                        scenario1_priors(),
                        Method::Classifier { model: ScoreModel::Lda, m },
                    )
                })
                .collect();
            cells.push(Cell::new("optimal", sc, scenario1_priors(), Method::OptimalLr));
            (format!("scenario1-{}", s1.name()), cells)
        })
        .collect()
}

/// Groups of the label-shift-violation table: one per `(Σ1, post means)`.
pub fn scenario2_groups() -> Vec<(String, Vec<Cell>)> {
    let mut out = Vec::new();
    for s1 in presets::Sigma1::ALL {
        for shift in presets::PostShift::ALL {
            let sc = presets::scenario2(s1, shift);
            let cells = vec![
                Cell::new(
                    "classifier",
                    sc.clone(),
                    scenario1_priors(),
                    Method::Classifier { model: ScoreModel::Lda, m: SCENARIO2_SIZE },
                ),
                Cell::new("optimal", sc, scenario1_priors(), Method::OptimalLr),
            ];
            out.push((format!("scenario2-{}-{}", s1.name(), shift.name()), cells));
        }
    }
    out
}

/// Cells of the prevalence-change table on the synthetic analogue.
pub fn dengue_cells(path: PrevalencePath) -> Vec<Cell> {
    let sc = presets::dengue_analogue(path);
    let model = ScoreModel::Posterior { prior: DENGUE_SCORE_PRIOR };
    let (lo, hi) = DENGUE_PI0_RANGE;
    let p = dengue_priors();
    vec![
        Cell::new("optimal (true labels)", sc.clone(), p, Method::TrueLabels),
        Cell::new(
            "rapid test (sens 0.70, spec 0.99)",
            sc.clone(),
            p,
            Method::NoisyLabels { sensitivity: 0.70, specificity: 0.99 },
        ),
        Cell::new("mixture", sc.clone(), p, Method::Mixture { model, m: 0, pi0_min: lo, pi0_max: hi }),
        Cell::new("classifier (probability)", sc.clone(), p, Method::Classifier { model, m: 0 }),
        Cell::new(
            "classifier (binary, 0.33)",
            sc.clone(),
            p,
            Method::Binarized { model, m: 0, threshold: DENGUE_SCORE_PRIOR },
        ),
        Cell::new("classifier (binary, 0.5)", sc, p, Method::Binarized { model, m: 0, threshold: 0.5 }),
    ]
}

/// Tables that can be reproduced by name.
pub const TABLES: [&str; 3] = ["scenario1", "scenario2", "dengue-analogue"];

/// All groups of a named table.
pub fn table_groups(table: &str) -> Result<Vec<(String, Vec<Cell>)>> {
    match table {
        "scenario1" => Ok(scenario1_groups()),
        "scenario2" => Ok(scenario2_groups()),
        "dengue-analogue" => Ok(vec![("dengue-abrupt".into(), dengue_cells(PrevalencePath::Abrupt))]),
        other => Err(invalid(format!("unknown table '{other}'; expected one of {}", TABLES.join(", ")))),
    }
}

/// Dimension of the LDA/QDA comparison.
pub const CROSSOVER_DIM: usize = 10;
/// Target ARL of the LDA/QDA comparison.
pub const CROSSOVER_ARL: f64 = 180.0;

/// Unequal-covariance label shift in `CROSSOVER_DIM` dimensions: LDA is
/// mis-specified, QDA is not.
pub fn crossover_scenario() -> Scenario {
    let d = CROSSOVER_DIM;
    let c0 = crate::simgen::Gaussian::isotropic(vec![0.0; d]).expect("identity is SPD");
    let c1 = crate::simgen::Gaussian::new(vec![CROSSOVER_MEAN; d], nalgebra::DMatrix::identity(d, d) * CROSSOVER_VAR)
        .expect("scaled identity is SPD");
    let pre = GaussianMixtureSpec::new(c0, c1, presets::SCENARIO1_PI_INF).expect("valid prevalence");
    let post = pre.with_prevalence(presets::SCENARIO1_PI_0).expect("valid prevalence");
    Scenario::new(pre, post, PrevalencePath::Abrupt).expect("consistent scenario")
}

const CROSSOVER_MEAN: f64 = 0.45;
const CROSSOVER_VAR: f64 = 1.4;

/// Mean delay of LDA- and QDA-based CUSUM for each training size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossoverPoint {
    pub m: usize,
    pub lda: CellOutcome,
    pub qda: CellOutcome,
}

pub fn lda_qda_crossover(sizes: &[usize], settings: &CellSettings) -> Result<Vec<CrossoverPoint>> {
    let sc = crossover_scenario();
    sizes
        .iter()
        .map(|&m| {
            let cell = |model, name: &str| {
                Cell::new(format!("{name} m={m}"), sc.clone(), scenario1_priors(), Method::Classifier { model, m })
            };
            Ok(CrossoverPoint {
                m,
                lda: run_cell(&cell(ScoreModel::Lda, "lda"), settings)?,
                qda: run_cell(&cell(ScoreModel::Qda, "qda"), settings)?,
            })
        })
        .collect()
}
