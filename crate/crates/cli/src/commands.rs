// SPDX-License-Identifier: MIT OR Apache-2.0

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::Serialize;

use lsdetect::experiments::{calibrate_cell, table_groups, Cell, CellSettings, Method, ScoreModel, TABLES};
use lsdetect::oc::{
    calibrate_threshold, default_arl_cap, BinaryChainSpec, fredholm_expected_stopping, gaussian_shift_lr_density, CalibrationResult,
    DetectorSpec, FredholmProblem, McSettings, DEFAULT_TOL_REL,
};
use lsdetect::simgen::{presets, sample_stream, SimRng, StreamSpec};
use lsdetect::{
    fit_lda, fit_qda, Classifier, DetectorConfig, DetectorState, LabelShiftPriors, MixtureConfig, MixtureState,
    MixtureWeight, Regime, ScoreRatioModel, UpdateRule,
};

use crate::config::FileConfig;
use crate::input::{read_stream, read_training, StreamRows};
use crate::{Common, DetectorArgs, Rule};

const DEFAULT_SEED: u64 = 1;
const DEFAULT_REPS: u64 = 2000;

/// Writes `text` to `path`, or to stdout when no path is given.
fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            Ok(out.flush()?)
        }
    }
}

fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        bail!("file not found: {}", path.display());
    }
    Ok(())
}

fn load(common: &Common) -> Result<FileConfig> {
    if let Some(p) = &common.config {
        require_file(p)?;
    }
    FileConfig::load(common.config.as_deref())
}

fn priors(cfg: &FileConfig, d: &DetectorArgs, defaults: Option<(f64, f64)>) -> Result<LabelShiftPriors> {
    let (pi_inf, pi0) = match defaults {
        Some((a, b)) => (cfg.pick_or(d.pi_inf, "pi_inf", a)?, cfg.pick_or(d.pi0, "pi0", b)?),
        None => (cfg.require(d.pi_inf, "pi_inf")?, cfg.require(d.pi0, "pi0")?),
    };
    Ok(LabelShiftPriors::new(pi_inf, pi0)?)
}

fn mixture_config(cfg: &FileConfig, d: &DetectorArgs, pi_inf: f64, threshold: f64) -> Result<MixtureConfig> {
    let lo = cfg.require(d.pi0_min, "pi0_min")?;
    let hi = cfg.require(d.pi0_max, "pi0_max")?;
    let mut mc = MixtureConfig::uniform(lo, hi, pi_inf, threshold)
        .with_window(cfg.pick_or(d.window, "window", MixtureConfig::DEFAULT_WINDOW)?)
        .with_nodes(cfg.pick_or(d.n_quad, "n_quad", MixtureConfig::DEFAULT_NODES)?);
    match cfg.pick(d.weight.clone(), "weight")?.as_deref() {
        None | Some("uniform") => {}
        Some(p) => {
            let p: f64 = p.parse().map_err(|_| anyhow!("weight must be `uniform` or a prevalence, got `{p}`"))?;
            mc.weight = MixtureWeight::PointMass(p);
        }
    }
    mc.validate()?;
    Ok(mc)
}

// ---------------------------------------------------------------- detect

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub detector: DetectorArgs,
    /// CSV stream with a `score` column, or feature columns x1..xd.
    #[arg(long)]
    pub input: PathBuf,
    /// Write `row,log_stat` for every processed row.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Labeled pre-change sample (x1..xd, y) used to fit a classifier when the
    /// stream carries features instead of scores.
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "lda")]
    pub classifier: ClassifierKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClassifierKind {
    Lda,
    Qda,
}

#[derive(Debug, Serialize)]
struct DetectReport {
    rule: &'static str,
    threshold: f64,
    rows_read: usize,
    stopped: bool,
    stopping_time: u64,
    /// `null` when the statistic is `log 0`.
    final_log_stat: Option<f64>,
}

enum Stat {
    Recursive(DetectorConfig, DetectorState, ScoreRatioModel),
    Mixture(Box<MixtureState>),
}

impl Stat {
    fn push(&mut self, score: f64) -> Result<f64> {
        Ok(match self {
            Stat::Recursive(cfg, st, model) => st.update(cfg, model.eval(score))?,
            Stat::Mixture(st) => st.update(score)?,
        })
    }
}

fn stream_scores(args: &DetectArgs, pi_inf: f64) -> Result<Vec<f64>> {
    match read_stream(&args.input)? {
        StreamRows::Scores(s) => Ok(s),
        StreamRows::Features(xs) => {
            let train_path = args
                .train
                .as_ref()
                .ok_or_else(|| anyhow!("input has feature columns but no `score`; pass --train to fit a classifier"))?;
            require_file(train_path)?;
            let train = read_training(train_path)?;
            let clf: Box<dyn Classifier> = match args.classifier {
                ClassifierKind::Lda => Box::new(fit_lda(&train, pi_inf)?),
                ClassifierKind::Qda => Box::new(fit_qda(&train, pi_inf)?),
            };
            xs.iter()
                .enumerate()
                .map(|(i, x)| clf.score(x).map_err(|e| anyhow!("row {}: {e}", i + 1)))
                .collect()
        }
    }
}

pub fn detect(args: &DetectArgs) -> Result<u8> {
    require_file(&args.input)?;
    let cfg = load(&args.common)?;
    let d = &args.detector;
    let rule = cfg.pick_or(d.rule, "rule", Rule::Cusum)?;
    let threshold: f64 = cfg.require(d.threshold, "threshold")?;
    let (mut stat, pi_inf, rule_name, init) = match rule {
        Rule::Cusum | Rule::Sr => {
            let p = priors(&cfg, d, None)?;
            let (ur, name) = if rule == Rule::Cusum {
                (UpdateRule::Cusum, "cusum")
            } else {
                (UpdateRule::ShiryaevRoberts, "sr")
            };
            let dc = DetectorConfig::new(ur, threshold)?;
            let init = dc.init.ln();
            (Stat::Recursive(dc, DetectorState::new(&dc), ScoreRatioModel::new(p)), p.pi_inf, name, init)
        }
        Rule::Mixture => {
            let pi_inf = cfg.require(d.pi_inf, "pi_inf")?;
            let mc = mixture_config(&cfg, d, pi_inf, threshold)?;
            (Stat::Mixture(Box::new(MixtureState::new(&mc)?)), pi_inf, "mixture", f64::NEG_INFINITY)
        }
    };
    let scores = stream_scores(args, pi_inf)?;

    let log_a = threshold.ln();
    let mut trace = String::from("row,log_stat\n");
    let mut last = init;
    let mut alarm = None;
    for (i, &s) in scores.iter().enumerate() {
        last = stat.push(s).map_err(|e| anyhow!("row {}: {e}", i + 1))?;
        trace.push_str(&format!("{},{}\n", i + 1, last));
        if last >= log_a {
            alarm = Some(i as u64 + 1);
            break;
        }
    }
    if let Some(p) = &args.trace {
        std::fs::write(p, &trace).with_context(|| format!("cannot write {}", p.display()))?;
    }
    let report = DetectReport {
        rule: rule_name,
        threshold,
        rows_read: scores.len(),
        stopped: alarm.is_some(),
        stopping_time: alarm.unwrap_or(0),
        final_log_stat: last.is_finite().then_some(last),
    };
    match alarm {
        Some(t) => eprintln!("alarm at row {t} (log statistic {last:.6})"),
        None => eprintln!("no alarm in {} rows (log statistic {last:.6})", scores.len()),
    }
    emit(args.common.output.as_deref(), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    Ok(if alarm.is_some() { 0 } else { 2 })
}

// ---------------------------------------------------------------- calibrate

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub detector: DetectorArgs,
    #[arg(long)]
    pub arl_target: Option<f64>,
    /// `bernoulli` (true labels with prevalence π∞ then π0) or a scenario preset.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Detector input for scenario presets.
    #[arg(long, value_enum)]
    pub method: Option<MethodKind>,
    /// Training-set size for fitted classifiers.
    #[arg(long)]
    pub m: Option<usize>,
    /// Classifier for `--method classifier` and `--method mixture`.
    #[arg(long, value_enum)]
    pub classifier: Option<ModelKind>,
    /// Relative tolerance on the ARL.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Bernoulli preset only: snap the two log-ratio increments to the
    /// lattice of the exact chain whose increment ratio has terms up to this
    /// denominator.
    #[arg(long)]
    pub lattice_den: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodKind {
    Optimal,
    TrueLabels,
    Classifier,
    Mixture,
}

impl std::str::FromStr for MethodKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        <MethodKind as ValueEnum>::from_str(s, true)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Lda,
    Qda,
    /// Exact pre-change posterior of the preset.
    Posterior,
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        <ModelKind as ValueEnum>::from_str(s, true)
    }
}

#[derive(Debug, Serialize)]
struct CalibrationReport {
    #[serde(rename = "A")]
    a: f64,
    arl_est: f64,
    arl_se: f64,
    converged: bool,
    iterations: usize,
    n_censored: u64,
}

impl From<CalibrationResult> for CalibrationReport {
    fn from(c: CalibrationResult) -> Self {
        Self {
            a: c.threshold,
            arl_est: c.arl,
            arl_se: c.arl_se,
            converged: c.converged,
            iterations: c.iterations,
            n_censored: c.n_censored,
        }
    }
}

fn calibrate_bernoulli(args: &CalibrateArgs, cfg: &FileConfig, target: f64, tol: f64) -> Result<CalibrationResult> {
    let d = &args.detector;
    let p = priors(cfg, d, None)?;
    let rule = cfg.pick_or(d.rule, "rule", Rule::Cusum)?;
    let settings = McSettings::new(
        cfg.pick_or(args.common.reps, "reps", DEFAULT_REPS)?,
        cfg.pick_or(args.common.cap, "cap", default_arl_cap(target))?,
        cfg.pick_or(args.common.seed, "seed", DEFAULT_SEED)?,
    );
    let hit = move |regime: Regime, rng: &mut SimRng| {
        let q = if regime == Regime::Pre { p.pi_inf } else { p.pi_0 };
        rand::Rng::random::<f64>(rng) < q
    };
    let model = ScoreRatioModel::new(p);
    let mut logs = [model.eval(0.0).ln(), model.eval(1.0).ln()];
    if let Some(den) = cfg.pick(args.lattice_den, "lattice_den")? {
        let chain = BinaryChainSpec::from_priors(&p, p.pi_inf, 2.0, den)?;
        let (up, down) = chain.log_increments();
        logs = if chain.up_label == 1 { [down, up] } else { [up, down] };
    }
    Ok(match rule {
        Rule::Cusum | Rule::Sr => {
            let ur = if rule == Rule::Cusum { UpdateRule::Cusum } else { UpdateRule::ShiryaevRoberts };
            let spec = DetectorSpec::Recursive(DetectorConfig::new(ur, 2.0)?);
            let sampler = move |regime: Regime, _: u64, rng: &mut SimRng| logs[usize::from(hit(regime, rng))];
            calibrate_threshold(&spec, &sampler, target, tol, &settings)?
        }
        Rule::Mixture => {
            let spec = DetectorSpec::Mixture(mixture_config(cfg, d, p.pi_inf, 2.0)?);
            let sampler = move |regime: Regime, _: u64, rng: &mut SimRng| f64::from(u8::from(hit(regime, rng)));
            calibrate_threshold(&spec, &sampler, target, tol, &settings)?
        }
    })
}

pub fn calibrate(args: &CalibrateArgs) -> Result<u8> {
    let cfg = load(&args.common)?;
    let target: f64 = cfg.require(args.arl_target, "arl_target")?;
    if !(target >= 1.0 && target.is_finite()) {
        bail!("--arl-target must be at least 1, got {target}");
    }
    let tol = cfg.pick_or(args.tol, "tol", DEFAULT_TOL_REL)?;
    let name: String = cfg.require(args.scenario.clone(), "scenario")?;
    let result = if name == "bernoulli" {
        calibrate_bernoulli(args, &cfg, target, tol)?
    } else {
        let sc = presets::by_name(&name).ok_or_else(|| {
            anyhow!("unknown scenario `{name}`; expected bernoulli or one of {}", presets::names().join(", "))
        })?;
        let d = &args.detector;
        let p = priors(&cfg, d, Some((sc.pre.prevalence, sc.post.prevalence)))?;
        let rule = cfg.pick_or(d.rule, "rule", Rule::Cusum)?;
        let default_method = if rule == Rule::Mixture { MethodKind::Mixture } else { MethodKind::Classifier };
        let method_kind = cfg.pick_or(args.method, "method", default_method)?;
        if rule == Rule::Sr {
            bail!("--rule sr is only available with --scenario bernoulli");
        }
        let model = match cfg.pick_or(args.classifier, "classifier", ModelKind::Lda)? {
            ModelKind::Lda => ScoreModel::Lda,
            ModelKind::Qda => ScoreModel::Qda,
            ModelKind::Posterior => ScoreModel::Posterior { prior: p.pi_inf },
        };
        let m = cfg.pick_or(args.m, "m", 1000)?;
        let method = match method_kind {
            MethodKind::Optimal => Method::OptimalLr,
            MethodKind::TrueLabels => Method::TrueLabels,
            MethodKind::Classifier => Method::Classifier { model, m },
            MethodKind::Mixture => Method::Mixture {
                model,
                m,
                pi0_min: cfg.require(d.pi0_min, "pi0_min")?,
                pi0_max: cfg.require(d.pi0_max, "pi0_max")?,
            },
        };
        let cell = Cell::new(name.as_str(), sc, p, method);
        let mut settings = CellSettings::new(
            target,
            cfg.pick_or(args.common.reps, "reps", DEFAULT_REPS)?,
            cfg.pick_or(args.common.seed, "seed", DEFAULT_SEED)?,
        );
        settings.tol_rel = tol;
        settings.arl_cap = cfg.pick(args.common.cap, "cap")?;
        calibrate_cell(&cell, &settings)?
    };
    if !result.converged {
        eprintln!("warning: ARL could not be brought within the tolerance; closest threshold reported");
    }
    let report = CalibrationReport::from(result);
    emit(args.common.output.as_deref(), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    Ok(0)
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Scenario preset.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Number of pre-change observations.
    #[arg(long)]
    pub changepoint: Option<u64>,
    /// Total stream length.
    #[arg(long)]
    pub length: Option<u64>,
}

pub fn simulate(args: &SimulateArgs) -> Result<u8> {
    let cfg = load(&args.common)?;
    let name: String = cfg.require(args.scenario.clone(), "scenario")?;
    let sc = presets::by_name(&name)
        .ok_or_else(|| anyhow!("unknown scenario `{name}`; expected one of {}", presets::names().join(", ")))?;
    let length = cfg.pick_or(args.length, "length", 1000)?;
    let changepoint = cfg.pick_or(args.changepoint, "changepoint", length / 2)?;
    let seed = cfg.pick_or(args.common.seed, "seed", DEFAULT_SEED)?;
    let posterior = lsdetect::experiments::ExactPosterior::new(&sc.pre, sc.pre.prevalence)?;
    let d = sc.dim();
    let points = sample_stream(&StreamSpec::new(sc, changepoint, length, seed)?);

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["t".to_string(), "regime".to_string()];
    header.extend((1..=d).map(|j| format!("x{j}")));
    header.extend(["y".to_string(), "score".to_string()]);
    w.write_record(&header)?;
    for (i, p) in points.iter().enumerate() {
        let regime = match p.regime {
            Regime::Pre => "pre",
            Regime::Post => "post",
        };
        let mut rec = vec![(i + 1).to_string(), regime.to_string()];
        rec.extend(p.x.iter().map(|v| v.to_string()));
        rec.push(p.y.to_string());
        rec.push(posterior.score(&p.x)?.to_string());
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| anyhow!("csv buffer: {e}"))?;
    emit(args.common.output.as_deref(), std::str::from_utf8(&bytes)?)?;
    Ok(0)
}

// ---------------------------------------------------------------- reproduce

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    #[command(flatten)]
    pub common: Common,
    /// One of scenario1, scenario2, dengue-analogue.
    #[arg(long)]
    pub table: String,
    /// Replications per cell, for calibration and again for the delay.
    #[arg(long)]
    pub budget: Option<u64>,
    /// Independent training sets per fitted classifier.
    #[arg(long)]
    pub classifiers: Option<usize>,
    #[arg(long)]
    pub arl_target: Option<f64>,
    /// Only run groups whose name contains this string.
    #[arg(long)]
    pub group: Option<String>,
}

#[derive(Debug, Serialize)]
struct GroupReport<'a> {
    group: &'a str,
    #[serde(flatten)]
    report: &'a lsdetect::oc::ComparisonReport,
}

pub fn reproduce(args: &ReproduceArgs) -> Result<u8> {
    let cfg = load(&args.common)?;
    if !TABLES.contains(&args.table.as_str()) {
        bail!("unknown table `{}`; expected one of {}", args.table, TABLES.join(", "));
    }
    let budget = cfg.pick_or(args.budget.or(args.common.reps), "budget", DEFAULT_REPS)?;
    let unreliable = budget < 2;
    let mut settings = CellSettings::new(
        cfg.pick_or(args.arl_target, "arl_target", 500.0)?,
        budget.max(2),
        cfg.pick_or(args.common.seed, "seed", DEFAULT_SEED)?,
    )
    .with_classifiers(cfg.pick_or(args.classifiers, "classifiers", 10)?);
    settings.add_cap = args.common.cap;
    let filter = args.group.clone().unwrap_or_default();
    let mut json = String::new();
    for (group, cells) in table_groups(&args.table)? {
        if !group.contains(&filter) {
            continue;
        }
        let (_, mut report) = lsdetect::experiments::run_group(&cells, &settings)?;
        if unreliable {
            report = report.mark_unreliable();
        }
        println!("== {group}\n{}", report.to_text());
        json.push_str(&serde_json::to_string(&GroupReport { group: &group, report: &report })?);
        json.push('\n');
    }
    if let Some(p) = &args.common.output {
        emit(Some(p), &json)?;
    }
    Ok(0)
}

// ---------------------------------------------------------------- fredholm

#[derive(Debug, Args)]
pub struct FredholmArgs {
    #[command(flatten)]
    pub common: Common,
    /// Post-change mean of the unit-variance Gaussian.
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub rule: Option<Rule>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Quadrature nodes.
    #[arg(long)]
    pub nodes: Option<usize>,
    /// Evaluate under the post-change law instead of the pre-change law.
    #[arg(long)]
    pub post: bool,
    /// Starting value of the statistic (rule default when omitted).
    #[arg(long)]
    pub init: Option<f64>,
}

#[derive(Debug, Serialize)]
struct FredholmReport {
    expected_stopping_time: f64,
    mu: f64,
    rule: &'static str,
    regime: Regime,
    threshold: f64,
    nodes: usize,
    init: f64,
}

pub fn fredholm(args: &FredholmArgs) -> Result<u8> {
    let cfg = load(&args.common)?;
    let mu = cfg.pick_or(args.mu, "mu", 1.0)?;
    let (rule, name) = match cfg.pick_or(args.rule, "rule", Rule::Cusum)? {
        Rule::Cusum => (UpdateRule::Cusum, "cusum"),
        Rule::Sr => (UpdateRule::ShiryaevRoberts, "sr"),
        Rule::Mixture => bail!("the integral equation covers cusum and sr only"),
    };
    let threshold = cfg.require(args.threshold, "threshold")?;
    let nodes = cfg.pick_or(args.nodes, "nodes", 128)?;
    let init = args.init.unwrap_or_else(|| rule.default_init());
    let regime = if args.post { Regime::Post } else { Regime::Pre };
    let problem = FredholmProblem::new(gaussian_shift_lr_density(mu, regime), rule, threshold, nodes);
    let v = fredholm_expected_stopping(&problem, init)?;
    let report = FredholmReport { expected_stopping_time: v, mu, rule: name, regime, threshold, nodes, init };
    emit(args.common.output.as_deref(), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    Ok(0)
}
