//! Config handling and the run driver behind the `atro` binary.
//!
//! A run is fully determined by a [`RunConfig`] plus its input files. Every
//! artifact is computed in memory first and only then written, so a failing
//! run leaves the output directory untouched.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use atro::attack::{AttackMethod, AttackSpec};
use atro::bounds::{self, BoundConfig};
use atro::error::{AtroError, Result};
use atro::eval::{self, BenchConfig, EvalReport, MethodSpec};
use atro::ingest::{self, Dataset, LabelMap, NormScheme, NormStats};
use atro::loss::SurrogateParams;
use atro::model::RejectionModel;
use atro::neural::{self, NetAttackGoal, NeuralTrainConfig, ToyNet};
use atro::seed::RunSeeds;
use atro::solver::{self, TrainConfig, TrainMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    #[default]
    Train,
    Eval,
    Attack,
    Bound,
    Bench,
    NeuralTrain,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Attack => "attack",
            Command::Bound => "bound",
            Command::Bench => "bench",
            Command::NeuralTrain => "neural-train",
        }
    }

    fn needs_model(self) -> bool {
        matches!(self, Command::Eval | Command::Attack | Command::Bound)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    #[default]
    Libsvm,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub path: Option<PathBuf>,
    /// Separate test file. Without one, `train_fraction < 1` holds out part of `path`.
    pub test_path: Option<PathBuf>,
    pub format: DataFormat,
    pub train_fraction: f64,
    /// Fitted on the training part, stored with the model and reapplied at eval time.
    pub normalization: NormScheme,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            path: None,
            test_path: None,
            format: DataFormat::Libsvm,
            train_fraction: 1.0,
            normalization: NormScheme::Minmax01,
        }
    }
}

/// Everything a run needs. `train.seed`, `neural.seed` and `bench.seed` are
/// derived from the top-level `seed` during resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataConfig,
    /// Trained model JSON for `eval`, `attack` and `bound`.
    pub model: Option<PathBuf>,
    pub train: TrainConfig,
    pub attack: AttackSpec,
    pub bound: BoundConfig,
    pub bench: BenchConfig,
    pub methods: Vec<MethodSpec>,
    pub neural: NeuralTrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: Command::Train,
            seed: 0,
            out: PathBuf::from("out"),
            data: DataConfig::default(),
            model: None,
            train: TrainConfig::default(),
            attack: AttackSpec::default(),
            bound: BoundConfig::default(),
            bench: BenchConfig::default(),
            methods: Vec::new(),
            neural: NeuralTrainConfig::default(),
        }
    }
}

/// Command-line flags layered over a config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub eps: Option<f64>,
    pub cost: Option<f64>,
    pub mode: Option<TrainMode>,
    pub attack: Option<AttackMethod>,
    pub steps: Option<usize>,
}

/// Parses JSON without resolving or validating. Errors carry the field path.
pub fn parse_config(raw: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(raw);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let path = if path == "." { String::from("config") } else { path };
        AtroError::config(path, format!("{inner}"))
    })
}

/// Parses, resolves and validates a config.
pub fn validate_config(raw: &str) -> Result<RunConfig> {
    parse_config(raw)?.resolve()
}

impl RunConfig {
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = &o.out {
            self.out = p.clone();
        }
        if let Some(p) = &o.data {
            self.data.path = Some(p.clone());
        }
        if let Some(p) = &o.model {
            self.model = Some(p.clone());
        }
        if let Some(e) = o.eps {
            match self.command {
                Command::Train => self.train.eps = e,
                Command::NeuralTrain => self.neural.attack.eps = e,
                Command::Eval | Command::Attack => self.attack.eps = e,
                Command::Bound => self.bound.eps = e,
                Command::Bench => self.bench.attack_eps = vec![e],
            }
        }
        if let Some(c) = o.cost {
            self.train.c = c;
            self.neural.c = c;
            self.bound.c = c;
            for m in &mut self.methods {
                m.config.c = c;
            }
        }
        if let Some(m) = o.mode {
            self.train.mode = m;
        }
        if let Some(a) = o.attack {
            self.attack.method = a;
            if self.command == Command::Bench {
                self.bench.attack_method = a;
            }
        }
        if let Some(s) = o.steps {
            self.attack.steps = s;
            if self.command == Command::NeuralTrain {
                self.neural.attack.steps = s;
            }
        }
    }

    /// Materializes derived seeds and checks every section the command uses.
    pub fn resolve(mut self) -> Result<RunConfig> {
        let seeds = RunSeeds::from_master(self.seed);
        self.train.seed = seeds.init;
        self.neural.seed = seeds.init;
        self.bench.seed = self.seed;

        if self.data.path.is_none() {
            return Err(AtroError::config(
                "data.path",
                format!("is required for {}", self.command.name()),
            ));
        }
        let f = self.data.train_fraction;
        if !(f > 0.0 && f <= 1.0) {
            return Err(AtroError::config("data.train_fraction", "must lie in (0, 1]"));
        }
        if self.command.needs_model() && self.model.is_none() {
            return Err(AtroError::config(
                "model",
                format!("is required for {}", self.command.name()),
            ));
        }
        self.attack.validate("attack.")?;
        match self.command {
            Command::Train | Command::Eval | Command::Attack => self.train.validate("train.")?,
            Command::Bound => self.bound.validate("bound.")?,
            Command::Bench => {
                self.bench.validate("bench.")?;
                if self.methods.is_empty() {
                    return Err(AtroError::config("methods", "must list at least one method for bench"));
                }
                for (i, m) in self.methods.iter().enumerate() {
                    m.config.validate(&format!("methods[{i}].config."))?;
                }
            }
            Command::NeuralTrain => {
                self.neural.validate("neural.")?;
                if self.attack.method == AttackMethod::AnalyticLinear {
                    return Err(AtroError::config(
                        "attack.method",
                        "analytic_linear applies to linear models only",
                    ));
                }
            }
        }
        Ok(self)
    }

    pub fn manifest_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}

/// Exit status for a failed run: 2 for bad configs or inputs, 3 for numeric
/// failures, 1 for I/O.
pub fn exit_code(e: &AtroError) -> i32 {
    if e.is_numeric() {
        3
    } else if matches!(e, AtroError::Io(_)) {
        1
    } else {
        2
    }
}

/// Files a run produced, plus a short human-readable summary.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub files: Vec<PathBuf>,
    pub summary: String,
}

struct Artifacts(Vec<(&'static str, String)>);

impl Artifacts {
    fn json<T: Serialize>(&mut self, name: &'static str, v: &T) {
        let mut s = serde_json::to_string_pretty(v).expect("artifact serializes");
        s.push('\n');
        self.0.push((name, s));
    }

    fn text(&mut self, name: &'static str, s: String) {
        self.0.push((name, s));
    }

    fn write(self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut out = Vec::with_capacity(self.0.len());
        for (name, body) in self.0 {
            let p = dir.join(name);
            fs::write(&p, body)?;
            out.push(p);
        }
        Ok(out)
    }
}

fn read_input(path: &Path, field: &str) -> Result<String> {
    fs::read_to_string(path).map_err(|e| AtroError::config(field, format!("cannot read {}: {e}", path.display())))
}

fn load_dataset(path: &Path, format: DataFormat, field: &str) -> Result<Dataset> {
    let text = read_input(path, field)?;
    let mut ds = match format {
        DataFormat::Libsvm => ingest::parse_libsvm(&text)?,
        DataFormat::Csv => ingest::parse_csv(&text, &LabelMap::identity())?,
    };
    if let Some(stem) = path.file_stem() {
        ds.name = stem.to_string_lossy().into_owned();
    }
    Ok(ds)
}

fn load_json<T: for<'de> Deserialize<'de>>(path: &Path, field: &str) -> Result<T> {
    let text = read_input(path, field)?;
    serde_json::from_str(&text).map_err(|e| AtroError::config(field, format!("{}: {e}", path.display())))
}

/// Raw training and optional test data, before normalization.
fn train_test(cfg: &RunConfig, seeds: &RunSeeds) -> Result<(Dataset, Option<Dataset>)> {
    let path = cfg.data.path.as_deref().expect("resolved config has data.path");
    let ds = load_dataset(path, cfg.data.format, "data.path")?;
    if let Some(tp) = &cfg.data.test_path {
        let test = load_dataset(tp, cfg.data.format, "data.test_path")?;
        return Ok((ds, Some(test)));
    }
    if cfg.data.train_fraction < 1.0 {
        let (a, b) = ingest::split(&ds, cfg.data.train_fraction, seeds.split)?;
        return Ok((a, Some(b)));
    }
    Ok((ds, None))
}

fn normalized(cfg: &RunConfig, seeds: &RunSeeds) -> Result<(Dataset, Option<Dataset>, NormStats)> {
    let (train_raw, test_raw) = train_test(cfg, seeds)?;
    let (train, stats) = ingest::normalize(&train_raw, cfg.data.normalization)?;
    let test = test_raw.map(|t| stats.apply(&t)).transpose()?;
    Ok((train, test, stats))
}

/// Data for a saved model, normalized with the model's own statistics.
fn model_data(cfg: &RunConfig, stats: Option<&NormStats>) -> Result<Dataset> {
    let path = cfg.data.path.as_deref().expect("resolved config has data.path");
    let ds = load_dataset(path, cfg.data.format, "data.path")?;
    match stats {
        Some(s) => s.apply(&ds),
        None => Ok(ds),
    }
}

const REPORT_HEADER: &str = "set,attack_method,attack_eps,err,rej,pr,ta,tr,fa,fr,loss_01c,clean_loss_01c\n";

#[derive(Serialize)]
struct ReportRow<'a> {
    set: &'a str,
    report: &'a EvalReport,
}

fn report_csv(rows: &[ReportRow]) -> String {
    let mut s = String::from(REPORT_HEADER);
    for r in rows {
        let e = r.report;
        let method = serde_json::to_value(e.attack.method).expect("enum serializes");
        let pr = e.pr.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.set,
            method.as_str().unwrap_or(""),
            e.attack.eps,
            e.err,
            e.rej,
            pr,
            e.counts.ta,
            e.counts.tr,
            e.counts.fa,
            e.counts.fr,
            e.mean_loss_01c,
            e.clean_mean_loss_01c
        );
    }
    s
}

fn summarize(rows: &[ReportRow]) -> String {
    let mut s = String::new();
    for r in rows {
        let e = r.report;
        let _ = writeln!(
            s,
            "{:<6} eps={:<8} err={:.4} rej={:.4} loss01c={:.4}",
            r.set, e.attack.eps, e.err, e.rej, e.mean_loss_01c
        );
    }
    s
}

/// Clean and attacked evaluation on each named set.
fn linear_reports(
    m: &RejectionModel,
    sets: &[(&'static str, &Dataset)],
    attack: &AttackSpec,
    p: &SurrogateParams,
) -> Result<Vec<(&'static str, EvalReport)>> {
    let mut out = Vec::new();
    for (name, ds) in sets {
        out.push((*name, eval::evaluate(m, ds, &AttackSpec::none(), p)?));
        if attack.method != AttackMethod::None {
            out.push((*name, eval::evaluate(m, ds, attack, p)?));
        }
    }
    Ok(out)
}

fn push_reports(art: &mut Artifacts, reports: &[(&'static str, EvalReport)]) -> String {
    let rows: Vec<ReportRow> = reports.iter().map(|(s, r)| ReportRow { set: s, report: r }).collect();
    art.json("report.json", &rows);
    art.text("report.csv", report_csv(&rows));
    summarize(&rows)
}

fn run_train(cfg: &RunConfig, seeds: &RunSeeds, art: &mut Artifacts) -> Result<String> {
    let (train, test, stats) = normalized(cfg, seeds)?;
    let (mut model, trace) = solver::train(&train, &cfg.train)?;
    model.norm_stats = Some(stats);
    let mut sets = vec![("train", &train)];
    if let Some(t) = &test {
        sets.push(("test", t));
    }
    let reports = linear_reports(&model, &sets, &cfg.attack, &cfg.train.params())?;
    art.json("model.json", &model);
    art.text("trace.csv", trace.to_csv());
    Ok(push_reports(art, &reports))
}

fn load_model(cfg: &RunConfig) -> Result<RejectionModel> {
    let path = cfg.model.as_deref().expect("resolved config has model");
    let m: RejectionModel = load_json(path, "model")?;
    m.check_finite()?;
    Ok(m)
}

fn run_eval(cfg: &RunConfig, art: &mut Artifacts) -> Result<String> {
    let model = load_model(cfg)?;
    let ds = model_data(cfg, model.norm_stats.as_ref())?;
    let reports = linear_reports(&model, &[("data", &ds)], &cfg.attack, &cfg.train.params())?;
    Ok(push_reports(art, &reports))
}

fn run_attack(cfg: &RunConfig, art: &mut Artifacts) -> Result<String> {
    let model = load_model(cfg)?;
    let ds = model_data(cfg, model.norm_stats.as_ref())?;
    let p = cfg.train.params();
    let mut per = String::from("index,label,winner,loss_01c,decision,delta_linf\n");
    for (i, s) in ds.samples.iter().enumerate() {
        let phi = model.featurize(&s.x)?;
        let w = eval::attack_sample(&model, &phi, s.y, &cfg.attack, &p)?;
        let moved: Vec<f64> = phi.iter().zip(&w.delta).map(|(a, b)| a + b).collect();
        let d = model.decide_features(&moved);
        let decision = if d.is_reject() {
            "reject".to_string()
        } else {
            format!("{}", d.classifier_label().value())
        };
        let winner = serde_json::to_value(w.winner).expect("enum serializes");
        let linf = w.delta.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let _ = writeln!(
            per,
            "{i},{},{},{},{decision},{linf}",
            s.y.value(),
            winner.as_str().unwrap_or(""),
            w.loss
        );
    }
    let reports = linear_reports(&model, &[("data", &ds)], &cfg.attack, &p)?;
    art.text("perturbations.csv", per);
    Ok(push_reports(art, &reports))
}

fn run_bound(cfg: &RunConfig, seeds: &RunSeeds, art: &mut Artifacts) -> Result<String> {
    let model = load_model(cfg)?;
    let ds = model_data(cfg, model.norm_stats.as_ref())?;
    let b = bounds::model_bound(&model, &ds, &cfg.bound, seeds.monte_carlo)?;
    let mut csv = String::from("term,value\n");
    for (k, v) in [
        ("empirical_risk", b.empirical_risk),
        ("rad_zeta", b.rad_zeta),
        ("rad_gamma", b.rad_gamma),
        ("eps_term", b.eps_term),
        ("conf_term", b.conf_term),
        ("total", b.total),
        ("w", b.w),
    ] {
        let _ = writeln!(csv, "{k},{v}");
    }
    art.json("bound.json", &b);
    art.text("bound.csv", csv);
    Ok(format!(
        "bound total={:.4} (empirical {:.4}, n={}, W={:.4})\n",
        b.total, b.empirical_risk, b.n, b.w
    ))
}

fn run_bench(cfg: &RunConfig, art: &mut Artifacts) -> Result<String> {
    let path = cfg.data.path.as_deref().expect("resolved config has data.path");
    let ds = load_dataset(path, cfg.data.format, "data.path")?;
    let table = eval::benchmark(&cfg.methods, &ds, &cfg.bench)?;
    let text = table.to_text();
    art.json("table.json", &table);
    art.text("table.csv", table.to_csv());
    art.text("table.txt", text.clone());
    Ok(text)
}

fn run_neural(cfg: &RunConfig, seeds: &RunSeeds, art: &mut Artifacts) -> Result<String> {
    let (train, test, stats) = normalized(cfg, seeds)?;
    let (mut net, trace) = neural::train_neural(&train, &cfg.neural)?;
    net.norm_stats = Some(stats);
    let p = cfg.neural.params();
    let mut sets = vec![("train", &train)];
    if let Some(t) = &test {
        sets.push(("test", t));
    }
    let mut reports = Vec::new();
    for (name, ds) in sets {
        let goal = NetAttackGoal::WorstOf;
        reports.push((name, neural::evaluate_net(&net, ds, &AttackSpec::none(), &p, goal)?));
        if cfg.attack.method != AttackMethod::None {
            reports.push((name, neural::evaluate_net(&net, ds, &cfg.attack, &p, goal)?));
        }
    }
    let mut tr = String::from("epoch,loss\n");
    for (i, l) in trace.epoch_loss.iter().enumerate() {
        let _ = writeln!(tr, "{i},{l}");
    }
    art.json::<ToyNet>("net.json", &net);
    art.text("trace.csv", tr);
    Ok(push_reports(art, &reports))
}

/// Runs a resolved config and writes its artifacts plus `manifest.json`.
pub fn run(cfg: &RunConfig) -> Result<RunOutput> {
    let seeds = RunSeeds::from_master(cfg.seed);
    let mut art = Artifacts(Vec::new());
    let summary = match cfg.command {
        Command::Train => run_train(cfg, &seeds, &mut art)?,
        Command::Eval => run_eval(cfg, &mut art)?,
        Command::Attack => run_attack(cfg, &mut art)?,
        Command::Bound => run_bound(cfg, &seeds, &mut art)?,
        Command::Bench => run_bench(cfg, &mut art)?,
        Command::NeuralTrain => run_neural(cfg, &seeds, &mut art)?,
    };
    art.text("manifest.json", cfg.manifest_json());
    let files = art.write(&cfg.out)?;
    Ok(RunOutput { files, summary })
}
