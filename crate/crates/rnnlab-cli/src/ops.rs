//! Command implementations shared by the CLI surface and the sweep runner.
//!
//! Every command is a pure function of its arguments and the files it reads:
//! data and report files never contain timestamps, so repeated invocations
//! are byte-identical. Exit codes: 0 success, 1 usage, 2 data error,
//! 3 numeric failure.

use crate::config::{Config, Section};
use crate::decode_spec;
use rnnlab_core::analysis::{gradient_histogram, mismatch_matrix};
use rnnlab_core::cells::{CellKind, ModelParams, ModelSpec};
use rnnlab_core::graphs::DecodeConfig;
use rnnlab_core::tasks::{
    bayes_oracle, generate, load_dataset, save_dataset, Dataset, OracleEstimate, OracleMode,
    OracleWindow, TaskError, TaskKind, TaskSpec,
};
use rnnlab_core::training::{load_checkpoint, save_checkpoint, train, TrainConfig, TrainError};
use rnnlab_core::derive_stream;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

fn usage(msg: impl ToString) -> CliError {
    CliError::Usage(msg.to_string())
}

fn data_err(msg: impl ToString) -> CliError {
    CliError::Data(msg.to_string())
}

impl From<TaskError> for CliError {
    fn from(e: TaskError) -> Self {
        match e {
            // spec problems are flag problems; everything else is the data
            TaskError::BadSpec(_) | TaskError::TableTooLarge { .. } => usage(e),
            _ => data_err(e),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Graph(g) => usage(g),
            _ => data_err(e),
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| data_err(format!("cannot write {}: {e}", path.display())))
}

fn make_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path)
        .map_err(|e| data_err(format!("cannot create {}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// gen-data

/// Task flags as given; `resolve` turns them into a validated TaskSpec.
#[derive(Clone, Debug)]
pub struct DataArgs {
    pub task: String,
    pub alphabet: Option<usize>,
    pub classes: Option<usize>,
    pub order: Option<usize>,
    pub modulus: Option<usize>,
    pub future_lookahead: Option<usize>,
    pub noise: f64,
    pub length: usize,
    pub count: usize,
    pub seed: u64,
}

impl DataArgs {
    pub fn resolve(&self) -> Result<TaskSpec, CliError> {
        let kind = match self.task.as_str() {
            "markov" => TaskKind::Markov,
            "modsum" => TaskKind::Modsum,
            "future" => TaskKind::Future,
            other => return Err(usage(format!("unknown task {other:?} (markov, modsum, future)"))),
        };
        let need = |v: Option<usize>, flag: &str| {
            v.ok_or_else(|| usage(format!("task {} requires --{flag}", self.task)))
        };
        let forbid = |v: Option<usize>, flag: &str| match v {
            Some(_) => Err(usage(format!("--{flag} does not apply to task {}", self.task))),
            None => Ok(()),
        };
        let (alphabet, classes, order) = match kind {
            TaskKind::Markov => {
                forbid(self.modulus, "modulus")?;
                forbid(self.future_lookahead, "future-lookahead")?;
                (need(self.alphabet, "alphabet")?, need(self.classes, "classes")?, need(self.order, "order")?)
            }
            TaskKind::Modsum => {
                forbid(self.order, "order")?;
                forbid(self.future_lookahead, "future-lookahead")?;
                let c = need(self.modulus, "modulus")?;
                for (v, flag) in [(self.alphabet, "alphabet"), (self.classes, "classes")] {
                    if v.is_some_and(|v| v != c) {
                        return Err(usage(format!("modsum fixes --{flag} to the modulus {c}")));
                    }
                }
                (c, c, 0)
            }
            TaskKind::Future => {
                forbid(self.order, "order")?;
                forbid(self.modulus, "modulus")?;
                let a = need(self.alphabet, "alphabet")?;
                let l = need(self.future_lookahead, "future-lookahead")?;
                if self.classes.is_some_and(|c| c != a + 1) {
                    return Err(usage(format!(
                        "future labels add a pad class, fixing --classes to {}",
                        a + 1
                    )));
                }
                (a, a + 1, l)
            }
        };
        let spec = TaskSpec {
            kind,
            alphabet,
            classes,
            order,
            noise: self.noise,
            len: self.length,
            count: self.count,
            seed: self.seed,
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn oracle(spec: &TaskSpec, window: OracleWindow) -> Result<OracleEstimate, CliError> {
    // enumeration is exact when noise permits it; otherwise Monte-Carlo with
    // a seed derived from the data seed, so the manifest is reproducible
    let mode = if spec.noise == 0.0 || spec.kind == TaskKind::Modsum {
        OracleMode::Exact
    } else {
        OracleMode::MonteCarlo { samples: 50_000, seed: derive_stream(spec.seed, 7) }
    };
    Ok(bayes_oracle(spec, window, mode)?)
}

/// 80/10/10 split by sequence index; the remainder lands in test.
pub fn split_counts(count: usize) -> (usize, usize, usize) {
    let train = count * 8 / 10;
    let dev = count / 10;
    (train, dev, count - train - dev)
}

fn split_dataset(mut full: Dataset) -> (Dataset, Dataset, Dataset) {
    let (n_train, n_dev, _) = split_counts(full.seqs.len());
    let rest = full.seqs.split_off(n_train);
    let mut dev_seqs = rest;
    let test_seqs = dev_seqs.split_off(n_dev);
    let like = |seqs| Dataset { dim: full.dim, classes: full.classes, seqs, table: full.table.clone() };
    let dev = like(dev_seqs);
    let test = like(test_seqs);
    (full, dev, test)
}

fn data_manifest(args: &DataArgs, spec: &TaskSpec) -> Result<Config, CliError> {
    let mut task = Section::new("task");
    task.push("kind", spec.kind.name());
    task.push("alphabet", spec.alphabet);
    task.push("classes", spec.classes);
    match spec.kind {
        TaskKind::Markov => task.push("order", spec.order),
        TaskKind::Modsum => task.push("modulus", spec.classes),
        TaskKind::Future => task.push("future_lookahead", spec.order),
    }
    task.push("noise", format!("{:.16e}", spec.noise));
    task.push("length", spec.len);
    task.push("count", spec.count);
    task.push("seed", spec.seed);

    let (n_train, n_dev, n_test) = split_counts(args.count);
    let mut splits = Section::new("splits");
    splits.push("train", n_train);
    splits.push("dev", n_dev);
    splits.push("test", n_test);

    let mut orc = Section::new("oracle");
    let push = |orc: &mut Section, key: &str, est: OracleEstimate| {
        orc.push(key, format!("{:.16e}", est.accuracy));
        orc.push(&format!("{key}_se"), format!("{:.16e}", est.std_err));
    };
    push(&mut orc, "online_l1", oracle(spec, OracleWindow::online(1))?);
    if spec.kind == TaskKind::Future {
        push(&mut orc, "online_lstar", oracle(spec, OracleWindow::online(spec.order))?);
    }

    Ok(Config { sections: vec![task, splits, orc] })
}

pub fn gen_data(args: &DataArgs, out: &Path, force: bool) -> Result<String, CliError> {
    let spec = args.resolve()?;
    if args.count < 3 {
        return Err(usage("--count must be >= 3 so every split is nonempty"));
    }
    let files = ["train.txt", "dev.txt", "test.txt", "manifest"];
    if !force {
        for f in files {
            let p = out.join(f);
            if p.exists() {
                return Err(data_err(format!("{} exists; pass --force to overwrite", p.display())));
            }
        }
    }
    make_dir(out)?;
    let manifest = data_manifest(args, &spec)?;
    let (train, dev, test) = split_dataset(generate(&spec)?);
    save_dataset(&out.join("train.txt"), &train)?;
    save_dataset(&out.join("dev.txt"), &dev)?;
    save_dataset(&out.join("test.txt"), &test)?;
    write_file(&out.join("manifest"), &manifest.serialize())?;
    Ok(format!(
        "wrote {} ({} train / {} dev / {} test sequences)",
        out.display(),
        train.seqs.len(),
        dev.seqs.len(),
        test.seqs.len()
    ))
}

// ---------------------------------------------------------------------------
// train

/// Model and optimizer settings after merging defaults, config file and
/// flags. `data` is the gen-data output directory.
#[derive(Clone, Debug)]
pub struct TrainArgs {
    pub data: PathBuf,
    pub cell: String,
    pub layers: usize,
    pub hidden: usize,
    pub decode: String,
    pub lookahead: usize,
    pub context: usize,
    pub predict: usize,
    pub step_size: f64,
    pub clip_norm: f64,
    pub epochs: usize,
    pub seed: u64,
}

pub fn parse_from<T: FromStr>(section: &Section, key: &str, fallback: T) -> Result<T, CliError> {
    match section.get(key) {
        None => Ok(fallback),
        Some(text) => text
            .parse()
            .map_err(|_| usage(format!("[{}] {key} = {text}: cannot parse value", section.name))),
    }
}

impl TrainArgs {
    pub fn defaults(data: PathBuf) -> Self {
        TrainArgs {
            data,
            cell: "lstm".into(),
            layers: 1,
            hidden: 32,
            decode: "online".into(),
            lookahead: 1,
            context: 0,
            predict: 1,
            step_size: 0.05,
            clip_norm: 5.0,
            epochs: 20,
            seed: 0,
        }
    }

    /// Layers config-file values over these settings ([model] and [train]
    /// sections); flags are applied after this, so flags win.
    pub fn apply_config(&mut self, cfg: &Config) -> Result<(), CliError> {
        if let Some(s) = cfg.section("model") {
            self.cell = parse_from(s, "cell", self.cell.clone())?;
            self.layers = parse_from(s, "layers", self.layers)?;
            self.hidden = parse_from(s, "hidden", self.hidden)?;
        }
        if let Some(s) = cfg.section("train") {
            self.decode = parse_from(s, "decode", self.decode.clone())?;
            self.lookahead = parse_from(s, "lookahead", self.lookahead)?;
            self.context = parse_from(s, "context", self.context)?;
            self.predict = parse_from(s, "predict", self.predict)?;
            self.step_size = parse_from(s, "step_size", self.step_size)?;
            self.clip_norm = parse_from(s, "clip_norm", self.clip_norm)?;
            self.epochs = parse_from(s, "epochs", self.epochs)?;
            self.seed = parse_from(s, "seed", self.seed)?;
        }
        Ok(())
    }

    pub fn cell_kind(&self) -> Result<CellKind, CliError> {
        match self.cell.as_str() {
            "vanilla" => Ok(CellKind::Vanilla),
            "lstm" => Ok(CellKind::Lstm),
            other => Err(usage(format!("unknown cell {other:?} (vanilla, lstm)"))),
        }
    }

    pub fn decode_config(&self) -> Result<DecodeConfig, CliError> {
        let cfg = match self.decode.as_str() {
            "online" => DecodeConfig::online(self.lookahead),
            "batch" => {
                if self.context == 0 {
                    return Err(usage("batch decode requires --context"));
                }
                DecodeConfig::batch(self.context, self.lookahead, self.predict)
            }
            other => return Err(usage(format!("unknown decode mode {other:?} (online, batch)"))),
        };
        cfg.validate().map_err(usage)?;
        Ok(cfg)
    }

    /// The effective configuration, echoed into the output directory.
    pub fn manifest(&self) -> Config {
        let mut data = Section::new("data");
        data.push("dir", self.data.display());
        let mut model = Section::new("model");
        model.push("cell", &self.cell);
        model.push("layers", self.layers);
        model.push("hidden", self.hidden);
        let mut tr = Section::new("train");
        tr.push("decode", &self.decode);
        tr.push("lookahead", self.lookahead);
        if self.decode == "batch" {
            tr.push("context", self.context);
            tr.push("predict", self.predict);
        }
        tr.push("step_size", format!("{:.16e}", self.step_size));
        tr.push("clip_norm", format!("{:.16e}", self.clip_norm));
        tr.push("epochs", self.epochs);
        tr.push("seed", self.seed);
        Config { sections: vec![data, model, tr] }
    }
}

fn load_split(dir: &Path, name: &str) -> Result<Dataset, CliError> {
    Ok(load_dataset(&dir.join(name))?)
}

pub fn run_train(args: &TrainArgs, out: &Path) -> Result<String, CliError> {
    let decode = args.decode_config()?;
    let train_set = load_split(&args.data, "train.txt")?;
    let dev_set = load_split(&args.data, "dev.txt")?;
    let spec = ModelSpec {
        cell: args.cell_kind()?,
        layers: args.layers,
        hidden: args.hidden,
        input_dim: train_set.dim,
        classes: train_set.classes,
    };
    if spec.layers == 0 || spec.hidden == 0 {
        return Err(usage("--layers and --hidden must be >= 1"));
    }
    if args.epochs == 0 {
        return Err(usage("--epochs must be >= 1"));
    }
    if !(args.step_size > 0.0) || !(args.clip_norm > 0.0) {
        return Err(usage("--step-size and --clip-norm must be > 0"));
    }
    make_dir(&out.join("checkpoints"))?;
    make_dir(&out.join("reports"))?;

    let cfg = TrainConfig {
        decode,
        step_size: args.step_size,
        clip_norm: args.clip_norm,
        epochs: args.epochs,
        seed: args.seed,
    };
    let (model, history) = train(&spec, &cfg, &train_set, &dev_set)?;
    if history.epochs.iter().any(|e| !e.train_loss.is_finite()) {
        return Err(CliError::Numeric(
            "training loss became non-finite; lower --step-size or check the data".into(),
        ));
    }

    save_checkpoint(&model, &out.join("checkpoints").join("best.ckpt"))?;
    history
        .write_tsv(&out.join("reports").join("history.tsv"))
        .map_err(|e| data_err(format!("cannot write history: {e}")))?;

    let mut manifest = args.manifest();
    let best = &history.epochs[history.best_epoch];
    let mut result = Section::new("result");
    result.push("best_epoch", history.best_epoch + 1);
    result.push("best_dev_fer", format!("{:.16e}", best.dev_fer));
    result.push("skipped_updates", history.skipped_updates);
    manifest.sections.push(result);
    write_file(&out.join("manifest"), &manifest.serialize())?;

    Ok(format!(
        "trained {} epochs; best epoch {} with dev FER {:.4}%",
        history.epochs.len(),
        history.best_epoch + 1,
        best.dev_fer
    ))
}

// ---------------------------------------------------------------------------
// eval

fn load_model(path: &Path) -> Result<ModelParams, CliError> {
    Ok(load_checkpoint(path)?)
}

/// Returns the table text that was also written to `tables/eval.tsv`.
pub fn run_eval(
    checkpoint: &Path,
    data: &Path,
    specs: &[String],
    out: &Path,
) -> Result<String, CliError> {
    if specs.is_empty() {
        return Err(usage("eval needs at least one --decode spec"));
    }
    let cfgs = decode_spec::parse_decode_specs(specs).map_err(usage)?;
    let model = load_model(checkpoint)?;
    let ds = load_dataset(data)?;
    let name = checkpoint
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());

    let cells = mismatch_matrix(&[(name, model)], &cfgs, &ds);
    let mut table = String::from("model\tdecode\tfer\n");
    for cell in &cells {
        let fer = match &cell.fer {
            Ok(v) => format!("{v:.16e}"),
            Err(msg) => format!("error: {msg}"),
        };
        let _ = writeln!(table, "{}\t{}\t{}", cell.train, cell.eval, fer);
    }
    make_dir(&out.join("tables"))?;
    write_file(&out.join("tables").join("eval.tsv"), &table)?;
    Ok(table)
}

// ---------------------------------------------------------------------------
// grad-probe

/// Returns the summary table that was also written to
/// `reports/grad_summary.tsv`.
pub fn run_grad_probe(
    checkpoint: &Path,
    data: &Path,
    spec: &str,
    delta: usize,
    stride: usize,
    bins: usize,
    out: &Path,
) -> Result<String, CliError> {
    let cfgs = decode_spec::parse_decode_spec(spec).map_err(usage)?;
    if cfgs.len() != 1 {
        return Err(usage("grad-probe takes a single decode config, not a sweep"));
    }
    if delta == 0 || stride == 0 || bins < 2 {
        return Err(usage("--delta and --stride must be >= 1 and --bins >= 2"));
    }
    let (label, cfg) = &cfgs[0];
    let model = load_model(checkpoint)?;
    let ds = load_dataset(data)?;

    let report = gradient_histogram(&model, &ds, cfg, delta, stride, bins);
    make_dir(&out.join("reports"))?;
    report
        .write_tsv(&out.join("reports").join("grad_hist.tsv"))
        .map_err(|e| data_err(format!("cannot write histogram: {e}")))?;

    let mut summary = String::from("decode\tdelta\tstride\tsamples\tskipped\tmedian\tmax\n");
    let _ = writeln!(
        summary,
        "{label}\t{delta}\t{stride}\t{}\t{}\t{:.16e}\t{:.16e}",
        report.norms.len(),
        report.skipped,
        report.median,
        report.max
    );
    write_file(&out.join("reports").join("grad_summary.tsv"), &summary)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_args() -> DataArgs {
        DataArgs {
            task: "markov".into(),
            alphabet: Some(2),
            classes: Some(8),
            order: Some(6),
            modulus: None,
            future_lookahead: None,
            noise: 0.1,
            length: 40,
            count: 10,
            seed: 5,
        }
    }

    #[test]
    fn resolve_checks_task_specific_flags() {
        assert!(base_args().resolve().is_ok());

        let mut a = base_args();
        a.order = None;
        assert!(matches!(a.resolve(), Err(CliError::Usage(_))));

        let mut a = base_args();
        a.modulus = Some(4);
        assert!(matches!(a.resolve(), Err(CliError::Usage(_))));

        let modsum = DataArgs {
            task: "modsum".into(),
            alphabet: None,
            classes: None,
            order: None,
            modulus: Some(4),
            future_lookahead: None,
            noise: 0.0,
            length: 10,
            count: 5,
            seed: 1,
        };
        let spec = modsum.resolve().unwrap();
        assert_eq!((spec.alphabet, spec.classes), (4, 4));

        let future = DataArgs {
            task: "future".into(),
            alphabet: Some(4),
            classes: None,
            order: None,
            modulus: None,
            future_lookahead: Some(3),
            noise: 0.0,
            length: 10,
            count: 5,
            seed: 1,
        };
        let spec = future.resolve().unwrap();
        assert_eq!((spec.alphabet, spec.classes, spec.order), (4, 5, 3));
    }

    #[test]
    fn split_counts_cover_everything() {
        for n in [3, 10, 99, 100, 900, 2000] {
            let (a, b, c) = split_counts(n);
            assert_eq!(a + b + c, n);
            assert!(a >= b && b <= c, "dev is the smallest split for n={n}");
            assert!(b >= 1 || n < 10);
        }
    }

    #[test]
    fn train_args_config_then_flag_precedence() {
        let mut args = TrainArgs::defaults(PathBuf::from("x"));
        let cfg = Config::parse("[model]\nhidden = 48\n[train]\nepochs = 7\nstep_size = 0.5\n").unwrap();
        args.apply_config(&cfg).unwrap();
        assert_eq!(args.hidden, 48);
        assert_eq!(args.epochs, 7);
        assert_eq!(args.step_size, 0.5);
        // a later flag assignment simply overwrites the config value
        args.epochs = 2;
        let manifest = args.manifest();
        assert_eq!(manifest.section("train").unwrap().get("epochs"), Some("2"));
    }

    #[test]
    fn decode_config_requires_context_for_batch() {
        let mut args = TrainArgs::defaults(PathBuf::from("x"));
        args.decode = "batch".into();
        assert!(matches!(args.decode_config(), Err(CliError::Usage(_))));
        args.context = 8;
        assert_eq!(args.decode_config().unwrap(), DecodeConfig::batch(8, 1, 1));
    }
}
