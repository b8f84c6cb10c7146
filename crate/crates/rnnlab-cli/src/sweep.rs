//! Sweep plans: a grid of (data, train, eval) cells run into one directory.
//!
//! A plan file holds an optional `[defaults]` section plus one `[cell NAME]`
//! section per experiment. Cell keys layer over the defaults; the merged
//! section is the cell's effective config, and an FNV-1a hash of its
//! canonical text is recorded in the cell's `done` file, so reruns skip
//! finished cells and any config edit invalidates them. Failures are recorded
//! as error rows in the master table and the sweep continues.

use crate::config::{Config, Section};
use crate::decode_spec::parse_decode_spec;
use crate::ops::{gen_data, parse_from, run_eval, run_train, CliError, DataArgs, TrainArgs};
use rayon::prelude::*;
use std::path::{Path, PathBuf};
use std::str::FromStr;

const CELL_KEYS: &[&str] = &[
    "task", "alphabet", "classes", "order", "modulus", "future_lookahead", "noise", "length",
    "count", "data_seed", "cell", "layers", "hidden", "decode", "lookahead", "context", "predict",
    "step_size", "clip_norm", "epochs", "train_seed", "eval",
];

fn usage(msg: impl ToString) -> CliError {
    CliError::Usage(msg.to_string())
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn parse_opt<T: FromStr>(s: &Section, key: &str) -> Result<Option<T>, CliError> {
    match s.get(key) {
        None => Ok(None),
        Some(text) => text
            .parse()
            .map(Some)
            .map_err(|_| usage(format!("[{}] {key} = {text}: cannot parse value", s.name))),
    }
}

#[derive(Clone, Debug)]
pub struct PlannedCell {
    pub name: String,
    /// Defaults followed by the cell's own pairs; serialized form is hashed.
    pub merged: Section,
    pub data: DataArgs,
    pub train: TrainArgs,
    pub evals: Vec<String>,
}

impl PlannedCell {
    fn from_section(defaults: Option<&Section>, cell: &Section, name: &str) -> Result<Self, CliError> {
        let mut merged = Section::new(&format!("cell {name}"));
        if let Some(d) = defaults {
            merged.pairs.extend(d.pairs.iter().cloned());
        }
        merged.pairs.extend(cell.pairs.iter().cloned());
        for (key, _) in &merged.pairs {
            if !CELL_KEYS.contains(&key.as_str()) {
                return Err(usage(format!("cell {name}: unknown key `{key}`")));
            }
        }
        let s = &merged;
        let require = |key: &str| {
            s.get(key).map(str::to_string).ok_or_else(|| usage(format!("cell {name}: missing `{key}`")))
        };

        let data = DataArgs {
            task: require("task")?,
            alphabet: parse_opt(s, "alphabet")?,
            classes: parse_opt(s, "classes")?,
            order: parse_opt(s, "order")?,
            modulus: parse_opt(s, "modulus")?,
            future_lookahead: parse_opt(s, "future_lookahead")?,
            noise: parse_from(s, "noise", 0.0)?,
            length: require("length")?.parse().map_err(|_| usage(format!("cell {name}: bad `length`")))?,
            count: require("count")?.parse().map_err(|_| usage(format!("cell {name}: bad `count`")))?,
            seed: parse_from(s, "data_seed", 0)?,
        };
        data.resolve()?;

        let mut train = TrainArgs::defaults(PathBuf::new());
        train.cell = parse_from(s, "cell", train.cell)?;
        train.layers = parse_from(s, "layers", train.layers)?;
        train.hidden = parse_from(s, "hidden", train.hidden)?;
        train.decode = parse_from(s, "decode", train.decode)?;
        train.lookahead = parse_from(s, "lookahead", train.lookahead)?;
        train.context = parse_from(s, "context", train.context)?;
        train.predict = parse_from(s, "predict", train.predict)?;
        train.step_size = parse_from(s, "step_size", train.step_size)?;
        train.clip_norm = parse_from(s, "clip_norm", train.clip_norm)?;
        train.epochs = parse_from(s, "epochs", train.epochs)?;
        train.seed = parse_from(s, "train_seed", train.seed)?;
        train.cell_kind()?;
        train.decode_config()?;

        let evals: Vec<String> = require("eval")?.split_whitespace().map(str::to_string).collect();
        if evals.is_empty() {
            return Err(usage(format!("cell {name}: `eval` lists no decode specs")));
        }
        for spec in &evals {
            parse_decode_spec(spec).map_err(|e| usage(format!("cell {name}: {e}")))?;
        }

        Ok(PlannedCell { name: name.to_string(), merged, data, train, evals })
    }

    pub fn hash_hex(&self) -> String {
        let text = Config { sections: vec![self.merged.clone()] }.serialize();
        format!("{:016x}", fnv1a64(text.as_bytes()))
    }
}

/// Parses and fully validates a plan; usage errors surface before any work.
pub fn parse_plan(cfg: &Config) -> Result<Vec<PlannedCell>, CliError> {
    let defaults = cfg.section("defaults");
    let mut cells = Vec::new();
    let mut names = Vec::new();
    for section in &cfg.sections {
        if section.name == "defaults" {
            continue;
        }
        let name = section
            .name
            .strip_prefix("cell ")
            .map(str::trim)
            .filter(|n| !n.is_empty())
            .ok_or_else(|| usage(format!("plan section [{}] is neither [defaults] nor [cell NAME]", section.name)))?;
        if names.contains(&name) {
            return Err(usage(format!("plan defines cell {name} twice")));
        }
        names.push(name);
        cells.push(PlannedCell::from_section(defaults, section, name)?);
    }
    Ok(cells)
}

/// One master-table row: cell name, decode label, FER text (or error token).
type Row = (String, String, String);

fn rows_from_eval_tsv(name: &str, text: &str) -> Vec<Row> {
    text.lines()
        .skip(1)
        .filter_map(|line| {
            let mut cols = line.split('\t');
            let _model = cols.next()?;
            let decode = cols.next()?;
            let fer = cols.next()?;
            Some((name.to_string(), decode.to_string(), fer.to_string()))
        })
        .collect()
}

fn run_cell(cell: &PlannedCell, dir: &Path) -> Result<Vec<Row>, CliError> {
    if dir.exists() {
        std::fs::remove_dir_all(dir)
            .map_err(|e| CliError::Data(format!("cannot clear {}: {e}", dir.display())))?;
    }
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;

    gen_data(&cell.data, &dir.join("data"), true)?;
    let mut train = cell.train.clone();
    train.data = dir.join("data");
    run_train(&train, dir)?;
    let table = run_eval(
        &dir.join("checkpoints").join("best.ckpt"),
        &dir.join("data").join("test.txt"),
        &cell.evals,
        dir,
    )?;

    let echo = Config { sections: vec![cell.merged.clone()] }.serialize();
    std::fs::write(dir.join("cell.config"), &echo)
        .map_err(|e| CliError::Data(format!("cannot write cell config: {e}")))?;
    // the hash lands last, so an interrupted cell is rerun from scratch
    std::fs::write(dir.join("done"), cell.hash_hex())
        .map_err(|e| CliError::Data(format!("cannot write done marker: {e}")))?;
    Ok(rows_from_eval_tsv(&cell.name, &table))
}

fn cell_rows(cell: &PlannedCell, out: &Path) -> Vec<Row> {
    let dir = out.join("cells").join(&cell.name);
    let done = std::fs::read_to_string(dir.join("done")).ok();
    if done.as_deref() == Some(cell.hash_hex().as_str()) {
        if let Ok(table) = std::fs::read_to_string(dir.join("tables").join("eval.tsv")) {
            eprintln!("cell {}: done, skipping", cell.name);
            return rows_from_eval_tsv(&cell.name, &table);
        }
    }
    eprintln!("cell {}: running", cell.name);
    match run_cell(cell, &dir) {
        Ok(rows) => rows,
        Err(e) => {
            eprintln!("cell {}: failed: {e}", cell.name);
            vec![(cell.name.clone(), "-".to_string(), format!("error: {e}"))]
        }
    }
}

/// Returns the master table text, also written to `tables/master.tsv`.
pub fn run_sweep(plan_path: &Path, out: &Path, parallel: bool) -> Result<String, CliError> {
    let cfg = Config::load(plan_path).map_err(CliError::Data)?;
    let cells = parse_plan(&cfg)?;

    let rows: Vec<Vec<Row>> = if parallel {
        cells.par_iter().map(|c| cell_rows(c, out)).collect()
    } else {
        cells.iter().map(|c| cell_rows(c, out)).collect()
    };

    let mut master = String::from("cell\tdecode\tfer\n");
    for (name, decode, fer) in rows.into_iter().flatten() {
        master.push_str(&format!("{name}\t{decode}\t{fer}\n"));
    }
    std::fs::create_dir_all(out.join("tables"))
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", out.display())))?;
    std::fs::write(out.join("tables").join("master.tsv"), &master)
        .map_err(|e| CliError::Data(format!("cannot write master table: {e}")))?;
    Ok(master)
}

#[cfg(test)]
mod tests {
    use super::*;

    const PLAN: &str = "\
[defaults]
length = 20
count = 10
cell = lstm
hidden = 8
epochs = 2
eval = online:lookahead=1

[cell quick markov]
task = markov
alphabet = 2
classes = 4
order = 2
data_seed = 3
train_seed = 4

[cell quick modsum]
task = modsum
modulus = 4
count = 12
eval = online:lookahead=1 batch:context=4:lookahead=1
";

    #[test]
    fn plan_parses_with_defaults_and_overrides() {
        let cells = parse_plan(&Config::parse(PLAN).unwrap()).unwrap();
        assert_eq!(cells.len(), 2);
        assert_eq!(cells[0].name, "quick markov");
        assert_eq!(cells[0].data.count, 10);
        assert_eq!(cells[1].data.count, 12);
        assert_eq!(cells[1].evals.len(), 2);
        assert_eq!(cells[0].train.hidden, 8);
    }

    #[test]
    fn hash_tracks_the_effective_config() {
        let cells = parse_plan(&Config::parse(PLAN).unwrap()).unwrap();
        let h0 = cells[0].hash_hex();
        assert_eq!(h0.len(), 16);
        assert_eq!(h0, cells[0].hash_hex());
        assert_ne!(h0, cells[1].hash_hex());

        let edited = PLAN.replace("order = 2", "order = 3");
        let cells2 = parse_plan(&Config::parse(&edited).unwrap()).unwrap();
        assert_ne!(h0, cells2[0].hash_hex());
    }

    #[test]
    fn plan_rejects_bad_sections_and_keys() {
        for (bad, needle) in [
            ("[cells x]\ntask = markov\n", "neither"),
            ("[cell ]\ntask = markov\n", "neither"),
            ("[cell a]\ntask = markov\nalphabet = 2\nclasses = 2\norder = 1\nlength = 5\ncount = 5\neval = online\ntypo = 1\n", "unknown key"),
            ("[cell a]\ntask = markov\n", "missing"),
            ("[cell a]\ntask = markov\nalphabet = 2\nclasses = 2\norder = 1\nlength = 5\ncount = 5\neval =  \n", "no decode specs"),
        ] {
            let err = match parse_plan(&Config::parse(bad).unwrap()) {
                Err(CliError::Usage(m)) => m,
                other => panic!("{bad:?} should be a usage error, got {other:?}"),
            };
            assert!(err.contains(needle), "{err:?} should mention {needle:?}");
        }
        let twice = "[cell a]\ntask = modsum\nmodulus = 2\nlength = 5\ncount = 5\neval = online\n";
        let twice = format!("{twice}\n{twice}");
        assert!(parse_plan(&Config::parse(&twice).unwrap()).is_err());
    }

    #[test]
    fn empty_plan_is_valid() {
        assert!(parse_plan(&Config::parse("").unwrap()).unwrap().is_empty());
    }

    #[test]
    fn bundled_tables_plan_is_valid() {
        let text = include_str!("../plans/tables.plan");
        let cells = parse_plan(&Config::parse(text).unwrap()).unwrap();
        let names: Vec<&str> = cells.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(
            names,
            [
                "future_online_l1",
                "future_online_l3",
                "markov_online",
                "markov_batch_p1",
                "markov_batch_p4",
                "markov_batch_p8",
                "modsum_online",
                "modsum_batch",
            ]
        );
        // every cell shares the one dataset of its task family
        for pair in [(&cells[0], &cells[1]), (&cells[2], &cells[3]), (&cells[6], &cells[7])] {
            assert_eq!(pair.0.data.seed, pair.1.data.seed);
            assert_eq!(pair.0.data.task, pair.1.data.task);
        }
        // training seeds stay distinct so no two runs share an init
        let mut seeds: Vec<u64> = cells.iter().map(|c| c.train.seed).collect();
        seeds.dedup();
        assert_eq!(seeds.len(), cells.len());
    }
}
