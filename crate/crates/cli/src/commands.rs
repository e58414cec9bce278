use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use metaaug::data::{gen_task, load_dataset, save_dataset, Dataset, Split, TaskSpec};
use metaaug::meta::{
    append_history, initial_tea_policy, read_history, refine_tea, tea_ops_for, truncate_history, Mode, MetaState,
    PolicyInit, RunConfig, TeaStepRecord, Trainer,
};
use metaaug::metrics::{evaluate, write_metrics_csv, MetricsRow};
use metaaug::net::{load_checkpoint, save_checkpoint};
use metaaug::policy::{PolicyFile, TeaPolicy};
use metaaug::tea::{aggregate, build_plan, AggregationPlan};
use metaaug::tensor::LabelMap;
use metaaug::transforms::{default_tea_registry, TeaOp};
use metaaug::{Error, Result, SegNet, Tensor};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::export::PolicyExport;
use crate::overrides::{parse_assignment, read_json, resolve, write_json};

pub const OUTPUT_ROOT_ENV: &str = "METAAUG_OUTPUT_ROOT";

#[derive(Debug, Parser)]
#[command(name = "metaaug", version, about = "Class-specific training-time and test-time augmentation search")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic segmentation task (train, val and test splits).
    GenTask(GenTaskArgs),
    /// Train a segmenter under one augmentation arm.
    Train(TrainArgs),
    /// Learn a test-time policy against a trained, frozen network.
    RefineTea(RefineArgs),
    /// Write aggregated predictions for a split.
    Infer(InferArgs),
    /// Score predictions (from a run or a prediction directory).
    Eval(EvalArgs),
    /// Export policy probabilities for plotting.
    ExportPolicy(ExportArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// JSON file with configuration values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set beta=300`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl ConfigArgs {
    fn overrides(&self) -> Result<Vec<(String, Value)>> {
        self.set.iter().map(|s| parse_assignment(s)).collect()
    }
}

#[derive(Debug, Clone, Args)]
pub struct GenTaskArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Task directory written by `gen-task`.
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory; defaults to `$METAAUG_OUTPUT_ROOT/{mode}-s{seed}`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, env = OUTPUT_ROOT_ENV, default_value = "runs")]
    pub output_root: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<u64>,
    #[arg(long)]
    pub cadence: Option<u64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Add the destructive ops to both pools.
    #[arg(long)]
    pub destructive: bool,
    /// Continue from the run directory's last checkpoint.
    #[arg(long)]
    pub resume: bool,
    /// Checkpoint interval in iterations; must be a multiple of the cadence.
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Uniform,
    Heuristic,
}

#[derive(Debug, Clone, Args)]
pub struct RefineArgs {
    /// Training run holding `config.json` and `checkpoint.bin`.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory; defaults to `{run}/refine-tea`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    pub steps: u64,
    #[arg(long, value_enum)]
    pub init: Option<InitArg>,
    #[arg(long)]
    pub destructive: bool,
    /// Comma-separated op names restricting the pool.
    #[arg(long, value_delimiter = ',')]
    pub pool: Option<Vec<String>>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Clone, Args)]
pub struct PlanArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: SplitArg,
    /// `identity`, `heuristic`, `learned`, or a policy file.
    #[arg(long, default_value = "learned")]
    pub plan: String,
    /// Ops kept; defaults to the run's `top_z`.
    #[arg(long)]
    pub z: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl SplitArg {
    fn dir(self) -> &'static str {
        match self {
            SplitArg::Train => "train",
            SplitArg::Val => "val",
            SplitArg::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub plan: PlanArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long, conflicts_with = "pred")]
    pub run: Option<PathBuf>,
    /// Prediction directory written by `infer`.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: SplitArg,
    #[arg(long, default_value = "learned")]
    pub plan: String,
    #[arg(long)]
    pub z: Option<usize>,
    /// Metrics CSV destination.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub policy: PathBuf,
    #[arg(long, value_enum, default_value = "json")]
    pub format: ExportFormat,
    /// Destination file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenTask(a) => cmd_gen_task(&a),
        Command::Train(a) => cmd_train(&a).map(|_| ()),
        Command::RefineTea(a) => cmd_refine_tea(&a).map(|_| ()),
        Command::Infer(a) => cmd_infer(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::ExportPolicy(a) => cmd_export_policy(&a),
    }
}

/// `task.json` beside the generated splits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskFile {
    pub seed: u64,
    pub spec: TaskSpec,
}

pub fn cmd_gen_task(a: &GenTaskArgs) -> Result<()> {
    let spec: TaskSpec = resolve(a.cfg.config.as_deref(), TaskSpec::default(), &a.cfg.overrides()?)?;
    spec.validate()?;
    let (train, val, test) = gen_task(&spec, a.seed)?;
    for ds in [&train, &val, &test] {
        save_dataset(&a.out.join(split_dir(ds.split)), ds)?;
    }
    write_json(&a.out.join("task.json"), &TaskFile { seed: a.seed, spec })?;
    info!(
        "wrote task to {} (foreground fraction {:.4})",
        a.out.display(),
        train.foreground_fraction()
    );
    Ok(())
}

fn split_dir(s: Split) -> &'static str {
    match s {
        Split::Train => "train",
        Split::Val => "val",
        Split::Test => "test",
    }
}

pub fn load_split(data: &Path, split: SplitArg) -> Result<Dataset> {
    load_dataset(&data.join(split.dir()))
}

pub fn resolve_run_config(a: &TrainArgs) -> Result<RunConfig> {
    let mut o = a.cfg.overrides()?;
    let mut flag = |k: &str, v: Option<Value>| {
        if let Some(v) = v {
            o.push((k.to_string(), v));
        }
    };
    flag("mode", a.mode.map(|m| Value::from(m.as_str())));
    flag("seed", a.seed.map(Value::from));
    flag("iterations", a.iterations.map(Value::from));
    flag("cadence", a.cadence.map(Value::from));
    flag("n", a.n.map(Value::from));
    flag("m", a.m.map(Value::from));
    flag("beta", a.beta.map(Value::from));
    flag("gamma", a.gamma.map(Value::from));
    flag("destructive", a.destructive.then_some(Value::Bool(true)));
    let c: RunConfig = resolve(a.cfg.config.as_deref(), RunConfig::default(), &o)?;
    c.validate()?;
    Ok(c)
}

pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const POLICY_FILE: &str = "policy.json";
pub const HISTORY_FILE: &str = "history.ndjson";
pub const METRICS_FILE: &str = "metrics.csv";

/// Trains one arm and returns the run directory.
pub fn cmd_train(a: &TrainArgs) -> Result<PathBuf> {
    let config = resolve_run_config(a)?;
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| a.output_root.join(format!("{}-s{}", config.mode, config.seed)));
    let every = a.checkpoint_every.unwrap_or(config.cadence * 10);
    if every == 0 || !every.is_multiple_of(config.cadence) {
        return Err(Error::Config(format!(
            "checkpoint_every ({every}) must be a positive multiple of the cadence ({})",
            config.cadence
        )));
    }
    let train = load_split(&a.data, SplitArg::Train)?;
    let val = load_split(&a.data, SplitArg::Val)?;
    let test = load_split(&a.data, SplitArg::Test)?;
    let trainer = Trainer::new(config.clone(), &train, &val)?;

    let mut state = if a.resume {
        let stored: RunConfig = read_json(&out.join(CONFIG_FILE))?;
        let same_but_length = RunConfig {
            iterations: config.iterations,
            ..stored
        };
        if same_but_length != config {
            return Err(Error::Config(format!(
                "{} was written with a different configuration; only iterations may change on resume",
                out.join(CONFIG_FILE).display()
            )));
        }
        let state = load_state(&out)?;
        trainer.check_state(&state)?;
        if state.iteration > config.iterations {
            return Err(Error::Config(format!(
                "checkpoint is at iteration {}, past the requested {}",
                state.iteration, config.iterations
            )));
        }
        let hist = out.join(HISTORY_FILE);
        if hist.exists() {
            truncate_history(&hist, state.iteration)?;
        }
        info!("resuming {} at iteration {}", out.display(), state.iteration);
        state
    } else {
        fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        let hist = out.join(HISTORY_FILE);
        if hist.exists() {
            fs::remove_file(&hist).map_err(|e| Error::io(&hist, e))?;
        }
        trainer.init_state()?
    };
    write_json(&out.join(CONFIG_FILE), &config)?;

    let mut pending = Vec::new();
    let total = config.iterations;
    trainer.run(&mut state, total, |rec, st| {
        pending.push(rec.clone());
        if st.iteration % every == 0 || st.iteration == total {
            append_history(&out.join(HISTORY_FILE), &pending)?;
            pending.clear();
            save_state(&out, &trainer, st)?;
            info!("iteration {}/{total}: train loss {:.4}", st.iteration, rec.train_loss);
        }
        Ok(())
    })?;
    if state.iteration == 0 {
        save_state(&out, &trainer, &state)?;
    }

    let run = format!("{}-s{}", config.mode, config.seed);
    let mut rows = Vec::new();
    for (arm, plan) in run_arms(&trainer, &state)? {
        let report = metaaug::tea::evaluate_plan(&state.net, &test, &plan)?;
        info!("{arm}: test DSC {:.4}", report.mean_dsc);
        rows.extend(report.rows(&run, &arm));
    }
    write_metrics_csv(&out.join(METRICS_FILE), &rows)?;
    Ok(out)
}

/// Evaluation arms written by `train`: the plain network, the fixed
/// heuristic test-time plan, and the learned plan when the mode learns one.
fn run_arms(trainer: &Trainer, state: &MetaState) -> Result<Vec<(String, AggregationPlan)>> {
    let c = trainer.config();
    let ops = trainer.tea_ops();
    let mut arms = vec![("plain".to_string(), identity_plan()?)];
    let heur = TeaPolicy::heuristic(ops, c.tea_other_logit);
    arms.push(("heuristic-tea".into(), build_plan(ops, &heur, c.top_z.min(ops.len()))?));
    if c.mode.learns_tea() {
        arms.push(("learned-tea".into(), trainer.tea_plan(state)?));
    }
    Ok(arms)
}

fn identity_plan() -> Result<AggregationPlan> {
    let reg = default_tea_registry();
    let id = reg
        .into_iter()
        .find(|o| o.name == "identity")
        .ok_or_else(|| Error::Config("registry has no identity op".into()))?;
    Ok(AggregationPlan::single(id))
}

fn save_state(out: &Path, trainer: &Trainer, st: &MetaState) -> Result<()> {
    // write both files under temporary names first so a crash never pairs
    // a new checkpoint with an old policy
    let ck = out.join(CHECKPOINT_FILE);
    let pol = out.join(POLICY_FILE);
    let ck_tmp = out.join("checkpoint.bin.tmp");
    let pol_tmp = out.join("policy.json.tmp");
    save_checkpoint(&ck_tmp, &st.net, st.velocity.as_ref())?;
    PolicyFile::new(
        st.iteration,
        Some((trainer.tra_slots(), &st.tra)),
        Some((trainer.tea_ops(), &st.tea)),
    )
    .save(&pol_tmp)?;
    fs::rename(&ck_tmp, &ck).map_err(|e| Error::io(&ck, e))?;
    fs::rename(&pol_tmp, &pol).map_err(|e| Error::io(&pol, e))
}

pub fn load_state(run: &Path) -> Result<MetaState> {
    let (net, velocity) = load_checkpoint(&run.join(CHECKPOINT_FILE))?;
    let file = PolicyFile::load(&run.join(POLICY_FILE))?;
    let (_, tra) = file
        .tra_policy()
        .ok_or_else(|| Error::Config("policy file has no training-time policy".into()))?;
    let (_, tea) = file
        .tea_policy()
        .ok_or_else(|| Error::Config("policy file has no test-time policy".into()))?;
    Ok(MetaState {
        net,
        velocity,
        tra,
        tea,
        iteration: file.iteration,
    })
}

/// Resolved settings of a `refine-tea` invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineConfig {
    pub steps: u64,
    pub run: RunConfig,
}

pub const TEA_POLICY_FILE: &str = "tea-policy.json";
pub const REFINE_HISTORY_FILE: &str = "refine-history.ndjson";

#[derive(Serialize)]
struct RefineLine<'a> {
    step: u64,
    #[serde(flatten)]
    record: &'a TeaStepRecord,
    logits: &'a [f64],
}

/// Learns a test-time policy for a frozen network; returns the output directory.
pub fn cmd_refine_tea(a: &RefineArgs) -> Result<PathBuf> {
    let base: RunConfig = read_json(&a.run.join(CONFIG_FILE))?;
    let mut o = a.cfg.overrides()?;
    if let Some(i) = a.init {
        o.push(("tea_init".into(), serde_json::to_value(PolicyInit::from(i))?));
    }
    if a.destructive {
        o.push(("destructive".into(), Value::Bool(true)));
    }
    if let Some(p) = &a.pool {
        o.push(("tea_pool".into(), serde_json::to_value(p)?));
    }
    if let Some(g) = a.gamma {
        o.push(("gamma".into(), Value::from(g)));
    }
    if let Some(s) = a.seed {
        o.push(("seed".into(), Value::from(s)));
    }
    let config: RunConfig = resolve(None, base, &o)?;
    config.validate()?;
    let out = a.out.clone().unwrap_or_else(|| a.run.join("refine-tea"));
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    write_json(
        &out.join(CONFIG_FILE),
        &RefineConfig {
            steps: a.steps,
            run: config.clone(),
        },
    )?;

    let (net, _) = load_checkpoint(&a.run.join(CHECKPOINT_FILE))?;
    check_architecture(&net, &config)?;
    let val = load_split(&a.data, SplitArg::Val)?;
    let test = load_split(&a.data, SplitArg::Test)?;
    let ops = tea_ops_for(&config)?;
    let mut policy = initial_tea_policy(&config, &ops);
    let hist = out.join(REFINE_HISTORY_FILE);
    if hist.exists() {
        fs::remove_file(&hist).map_err(|e| Error::io(&hist, e))?;
    }
    let mut lines = String::new();
    refine_tea(&net, &val, &ops, &mut policy, a.steps, &config, |step, rec, p| {
        lines.push_str(&serde_json::to_string(&RefineLine {
            step,
            record: rec,
            logits: &p.logits,
        })?);
        lines.push('\n');
        Ok(())
    })?;
    fs::write(&hist, lines).map_err(|e| Error::io(&hist, e))?;
    PolicyFile::new(a.steps, None, Some((&ops, &policy))).save(&out.join(TEA_POLICY_FILE))?;

    let plan = build_plan(&ops, &policy, config.top_z.min(ops.len()))?;
    let run = format!("{}-s{}", config.mode, config.seed);
    let report = metaaug::tea::evaluate_plan(&net, &test, &plan)?;
    info!("refined test-time plan {:?}: test DSC {:.4}", plan.names(), report.mean_dsc);
    write_metrics_csv(&out.join(METRICS_FILE), &report.rows(&run, "refined-tea"))?;
    Ok(out)
}

fn check_architecture(net: &SegNet, config: &RunConfig) -> Result<()> {
    let expected = SegNet::stacked_specs(1, net.classes(), config.width, config.hidden_layers);
    if net.specs() != expected.as_slice() {
        return Err(Error::Config(
            "checkpoint architecture does not match the run configuration".into(),
        ));
    }
    Ok(())
}

/// Builds the aggregation plan named by `--plan` for a run.
pub fn resolve_plan(run: &Path, plan: &str, z: Option<usize>) -> Result<(SegNet, AggregationPlan)> {
    let config: RunConfig = read_json(&run.join(CONFIG_FILE))?;
    let (net, _) = load_checkpoint(&run.join(CHECKPOINT_FILE))?;
    check_architecture(&net, &config)?;
    let z = z.unwrap_or(config.top_z);
    let from_policy = |ops: Vec<TeaOp>, policy: TeaPolicy| build_plan(&ops, &policy, z.min(ops.len()));
    let plan = match plan {
        "identity" => identity_plan()?,
        "heuristic" => {
            let ops = tea_ops_for(&config)?;
            let policy = TeaPolicy::heuristic(&ops, config.tea_other_logit);
            from_policy(ops, policy)?
        }
        "learned" => {
            let (ops, policy) = PolicyFile::load(&run.join(POLICY_FILE))?
                .tea_policy()
                .ok_or_else(|| Error::Config("run policy has no test-time section".into()))?;
            from_policy(ops, policy)?
        }
        path => {
            let (ops, policy) = PolicyFile::load(Path::new(path))?
                .tea_policy()
                .ok_or_else(|| Error::Config(format!("{path} has no test-time policy")))?;
            from_policy(ops, policy)?
        }
    };
    Ok((net, plan))
}

/// `infer.json` beside the prediction datasets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferManifest {
    pub run: PathBuf,
    pub split: Split,
    pub plan: Vec<String>,
    pub weights: Vec<f64>,
    /// Per foreground class, the directory of its probability maps.
    pub probabilities: Vec<String>,
}

/// Writes `prob-{k}/` datasets whose images are the aggregated probability of
/// class `k` and whose labels are the predicted label maps.
pub fn cmd_infer(a: &InferArgs) -> Result<()> {
    let p = &a.plan;
    let (net, plan) = resolve_plan(&p.run, &p.plan, p.z)?;
    let data = load_split(&p.data, p.split)?;
    let results: Vec<(Tensor, LabelMap)> = data
        .images
        .iter()
        .map(|img| aggregate(&net, img, &plan))
        .collect::<Result<_>>()?;
    let (h, w) = data.dims();
    let mut dirs = Vec::new();
    for k in 1..data.classes {
        let images = results
            .iter()
            .map(|(probs, _)| Tensor::new(vec![1, h, w], probs.data()[k * h * w..(k + 1) * h * w].to_vec()))
            .collect::<Result<_>>()?;
        let labels = results.iter().map(|r| r.1.clone()).collect();
        let name = format!("prob-{k}");
        save_dataset(&a.out.join(&name), &Dataset::new(data.split, data.classes, images, labels)?)?;
        dirs.push(name);
    }
    write_json(
        &a.out.join("infer.json"),
        &InferManifest {
            run: p.run.clone(),
            split: data.split,
            plan: plan.names().iter().map(|s| s.to_string()).collect(),
            weights: plan.weights.clone(),
            probabilities: dirs,
        },
    )
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let truth = load_split(&a.data, a.split)?;
    let (preds, label, arm) = match (&a.run, &a.pred) {
        (Some(run), None) => {
            let (net, plan) = resolve_plan(run, &a.plan, a.z)?;
            let preds = metaaug::tea::segment_all(&net, &truth.images, &plan)?;
            let config: RunConfig = read_json(&run.join(CONFIG_FILE))?;
            (preds, format!("{}-s{}", config.mode, config.seed), a.plan.clone())
        }
        (None, Some(pred)) => {
            let m: InferManifest = read_json(&pred.join("infer.json"))?;
            let first = m
                .probabilities
                .first()
                .ok_or_else(|| Error::Data("prediction manifest lists no outputs".into()))?;
            let ds = load_dataset(&pred.join(first))?;
            (ds.labels, m.run.display().to_string(), m.plan.join("+"))
        }
        _ => return Err(Error::Config("eval needs exactly one of --run or --pred".into())),
    };
    let report = evaluate(&preds, &truth.labels, truth.classes)?;
    let rows: Vec<MetricsRow> = report.rows(&label, &arm);
    write_metrics_csv(&a.out, &rows)?;
    println!(
        "DSC {:.4}  SEN {:.4}  PRC {:.4}  HD95 {}",
        report.mean_dsc,
        report.mean_sen,
        report.mean_prc,
        report.mean_hd95.map_or("undefined".to_string(), |v| format!("{v:.3}"))
    );
    Ok(())
}

pub fn cmd_export_policy(a: &ExportArgs) -> Result<()> {
    let export = PolicyExport::from_file(&PolicyFile::load(&a.policy)?)?;
    let mut buf = Vec::new();
    match a.format {
        ExportFormat::Json => buf.extend_from_slice((export.to_json()? + "\n").as_bytes()),
        ExportFormat::Csv => export.write_csv(&mut buf)?,
    }
    match &a.out {
        Some(p) => fs::write(p, buf).map_err(|e| Error::io(p, e)),
        None => {
            use std::io::Write;
            std::io::stdout()
                .write_all(&buf)
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

/// Reads the history of a run.
pub fn run_history(run: &Path) -> Result<Vec<metaaug::meta::IterationRecord>> {
    read_history(&run.join(HISTORY_FILE))
}

impl From<InitArg> for PolicyInit {
    fn from(i: InitArg) -> Self {
        match i {
            InitArg::Uniform => PolicyInit::Uniform,
            InitArg::Heuristic => PolicyInit::Heuristic,
        }
    }
}
