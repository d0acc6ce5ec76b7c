//! Flat `key = value` run configuration. `#` starts a comment; every key
//! has a default and unknown keys are rejected.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::dmp::Selection;
use crate::error::{Error, Result};
use crate::experiment::{FixtureConfig, InfluenceCheckConfig};
use crate::nncore::{Optimizer, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub n_buckets: usize,
    pub teacher_temperatures: Vec<f64>,
    pub student_temperature: f64,
    pub ref_sizes: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            n_buckets: 5,
            teacher_temperatures: vec![2.0, 4.0, 6.0],
            student_temperature: 4.0,
            ref_sizes: vec![2000, 4000, 6000, 8000, 10000],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryConfig {
    pub removed_index: usize,
    pub n_rows: usize,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            removed_index: 0,
            n_rows: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Added to every stage seed.
    pub seed: u64,
    pub out: PathBuf,
    pub fixture: FixtureConfig,
    pub sweep: SweepConfig,
    pub theory: TheoryConfig,
    pub influence: InfluenceCheckConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            fixture: FixtureConfig::default(),
            sweep: SweepConfig::default(),
            theory: TheoryConfig::default(),
            influence: InfluenceCheckConfig::default(),
        }
    }
}

fn bad(line: usize, key: &str, value: &str, what: &str) -> Error {
    Error::parse(line, format!("`{key}`: expected {what}, got `{value}`"))
}

fn num<T: std::str::FromStr>(line: usize, key: &str, v: &str, what: &str) -> Result<T> {
    v.parse().map_err(|_| bad(line, key, v, what))
}

fn list<T: std::str::FromStr>(line: usize, key: &str, v: &str, what: &str) -> Result<Vec<T>> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|t| num(line, key, t.trim(), what)).collect()
}

fn optimizer_name(o: Optimizer) -> &'static str {
    match o {
        Optimizer::Sgd => "sgd",
        Optimizer::Adam { .. } => "adam",
    }
}

fn selection_text(s: Selection) -> String {
    match s {
        Selection::LowestEntropy => "lowest_entropy".into(),
        Selection::All => "all".into(),
        Selection::EntropyBucket { index, n_buckets } => format!("bucket:{index}/{n_buckets}"),
    }
}

fn parse_selection(line: usize, key: &str, v: &str) -> Result<Selection> {
    let what = "lowest_entropy, all or bucket:<index>/<n_buckets>";
    match v {
        "lowest_entropy" => Ok(Selection::LowestEntropy),
        "all" => Ok(Selection::All),
        _ => {
            let (i, n) = v
                .strip_prefix("bucket:")
                .and_then(|r| r.split_once('/'))
                .ok_or_else(|| bad(line, key, v, what))?;
            Ok(Selection::EntropyBucket {
                index: num(line, key, i, what)?,
                n_buckets: num(line, key, n, what)?,
            })
        }
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

const TRAIN_FIELDS: [&str; 9] = [
    "epochs",
    "batch_size",
    "learning_rate",
    "optimizer",
    "weight_decay",
    "dropout_rate",
    "label_smoothing",
    "confidence_penalty",
    "seed",
];

fn set_train(t: &mut TrainConfig, field: &str, line: usize, key: &str, v: &str) -> Result<bool> {
    match field {
        "epochs" => t.epochs = num(line, key, v, "an integer")?,
        "batch_size" => t.batch_size = num(line, key, v, "an integer")?,
        "learning_rate" => t.learning_rate = num(line, key, v, "a number")?,
        "optimizer" => {
            t.optimizer = match v {
                "sgd" => Optimizer::Sgd,
                "adam" => Optimizer::default(),
                _ => return Err(bad(line, key, v, "sgd or adam")),
            }
        }
        "weight_decay" => t.weight_decay = num(line, key, v, "a number")?,
        "dropout_rate" => t.dropout_rate = num(line, key, v, "a number")?,
        "label_smoothing" => t.label_smoothing = num(line, key, v, "a number")?,
        "confidence_penalty" => t.confidence_penalty = num(line, key, v, "a number")?,
        "seed" => t.seed = num(line, key, v, "an integer")?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn train_value(t: &TrainConfig, field: &str) -> String {
    match field {
        "epochs" => t.epochs.to_string(),
        "batch_size" => t.batch_size.to_string(),
        "learning_rate" => t.learning_rate.to_string(),
        "optimizer" => optimizer_name(t.optimizer).into(),
        "weight_decay" => t.weight_decay.to_string(),
        "dropout_rate" => t.dropout_rate.to_string(),
        "label_smoothing" => t.label_smoothing.to_string(),
        "confidence_penalty" => t.confidence_penalty.to_string(),
        "seed" => t.seed.to_string(),
        _ => unreachable!("unknown training field {field}"),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(line_no, format!("expected `key = value`, got `{line}`")))?;
            cfg.set(key.trim(), value.trim(), line_no)?;
        }
        Ok(cfg)
    }

    /// Sets one key; `line` is used in error messages.
    pub fn set(&mut self, key: &str, v: &str, line: usize) -> Result<()> {
        let f = &mut self.fixture;
        let int = "an integer";
        let number = "a number";
        match key {
            "seed" => self.seed = num(line, key, v, int)?,
            "out" => self.out = PathBuf::from(v),
            "synth.n_samples" => f.synth.n_samples = num(line, key, v, int)?,
            "synth.n_features" => f.synth.n_features = num(line, key, v, int)?,
            "synth.n_classes" => f.synth.n_classes = num(line, key, v, int)?,
            "synth.cluster_noise" => f.synth.cluster_noise = num(line, key, v, number)?,
            "synth.seed" => f.synth.seed = num(line, key, v, int)?,
            "split.seed" => f.plan.seed = num(line, key, v, int)?,
            "split.d_tr" => f.plan.d_tr = num(line, key, v, int)?,
            "split.x_ref_pool" => f.plan.x_ref_pool = num(line, key, v, int)?,
            "split.d_test" => f.plan.d_test = num(line, key, v, int)?,
            "split.shadow" => f.plan.shadow = num(line, key, v, int)?,
            "split.attack_members_known" => f.plan.attack_members_known = num(line, key, v, int)?,
            "split.attack_nonmembers_known" => f.plan.attack_nonmembers_known = num(line, key, v, int)?,
            "model.hidden" => f.hidden = list(line, key, v, "comma-separated integers")?,
            "attack.hidden" => f.attack.hidden = list(line, key, v, "comma-separated integers")?,
            "dmp.teacher_temperature" => f.dmp.teacher_temperature = num(line, key, v, number)?,
            "dmp.student_temperature" => f.dmp.student_temperature = num(line, key, v, number)?,
            "dmp.ref_size" => f.dmp.ref_size = num(line, key, v, int)?,
            "dmp.selection" => f.dmp.selection = parse_selection(line, key, v)?,
            "sweep.n_buckets" => self.sweep.n_buckets = num(line, key, v, int)?,
            "sweep.teacher_temperatures" => {
                self.sweep.teacher_temperatures = list(line, key, v, "comma-separated numbers")?
            }
            "sweep.student_temperature" => self.sweep.student_temperature = num(line, key, v, number)?,
            "sweep.ref_sizes" => self.sweep.ref_sizes = list(line, key, v, "comma-separated integers")?,
            "theory.removed_index" => self.theory.removed_index = num(line, key, v, int)?,
            "theory.n_rows" => self.theory.n_rows = num(line, key, v, int)?,
            "influence.n_samples" => self.influence.synth.n_samples = num(line, key, v, int)?,
            "influence.n_features" => self.influence.synth.n_features = num(line, key, v, int)?,
            "influence.n_classes" => self.influence.synth.n_classes = num(line, key, v, int)?,
            "influence.cluster_noise" => self.influence.synth.cluster_noise = num(line, key, v, number)?,
            "influence.data_seed" => self.influence.synth.seed = num(line, key, v, int)?,
            "influence.n_train" => self.influence.n_train = num(line, key, v, int)?,
            "influence.n_probes" => self.influence.n_probes = num(line, key, v, int)?,
            "influence.hidden" => self.influence.hidden = list(line, key, v, "comma-separated integers")?,
            "influence.removed_index" => self.influence.removed_index = num(line, key, v, int)?,
            "influence.damping" => self.influence.damping = num(line, key, v, number)?,
            _ => {
                let known = match key.split_once('.') {
                    Some(("teacher", field)) => set_train(&mut f.dmp.teacher_train, field, line, key, v)?,
                    Some(("student", field)) => set_train(&mut f.dmp.student_train, field, line, key, v)?,
                    Some(("attack", field)) => set_train(&mut f.attack.train, field, line, key, v)?,
                    Some(("influence", field)) => set_train(&mut self.influence.train, field, line, key, v)?,
                    _ => false,
                };
                if !known {
                    return Err(Error::invalid(format!("unknown config key `{key}` (line {line})")));
                }
            }
        }
        Ok(())
    }

    /// Every key with its current value, in `parse`-able form.
    pub fn to_text(&self) -> String {
        let f = &self.fixture;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("out", self.out.display().to_string());
        kv("synth.n_samples", f.synth.n_samples.to_string());
        kv("synth.n_features", f.synth.n_features.to_string());
        kv("synth.n_classes", f.synth.n_classes.to_string());
        kv("synth.cluster_noise", f.synth.cluster_noise.to_string());
        kv("synth.seed", f.synth.seed.to_string());
        kv("split.seed", f.plan.seed.to_string());
        kv("split.d_tr", f.plan.d_tr.to_string());
        kv("split.x_ref_pool", f.plan.x_ref_pool.to_string());
        kv("split.d_test", f.plan.d_test.to_string());
        kv("split.shadow", f.plan.shadow.to_string());
        kv("split.attack_members_known", f.plan.attack_members_known.to_string());
        kv("split.attack_nonmembers_known", f.plan.attack_nonmembers_known.to_string());
        kv("model.hidden", join(&f.hidden));
        for (prefix, t) in [
            ("teacher", &f.dmp.teacher_train),
            ("student", &f.dmp.student_train),
            ("attack", &f.attack.train),
        ] {
            for field in TRAIN_FIELDS {
                kv(&format!("{prefix}.{field}"), train_value(t, field));
            }
        }
        kv("attack.hidden", join(&f.attack.hidden));
        kv("dmp.teacher_temperature", f.dmp.teacher_temperature.to_string());
        kv("dmp.student_temperature", f.dmp.student_temperature.to_string());
        kv("dmp.ref_size", f.dmp.ref_size.to_string());
        kv("dmp.selection", selection_text(f.dmp.selection));
        kv("sweep.n_buckets", self.sweep.n_buckets.to_string());
        kv("sweep.teacher_temperatures", join(&self.sweep.teacher_temperatures));
        kv("sweep.student_temperature", self.sweep.student_temperature.to_string());
        kv("sweep.ref_sizes", join(&self.sweep.ref_sizes));
        kv("theory.removed_index", self.theory.removed_index.to_string());
        kv("theory.n_rows", self.theory.n_rows.to_string());
        let inf = &self.influence;
        kv("influence.n_samples", inf.synth.n_samples.to_string());
        kv("influence.n_features", inf.synth.n_features.to_string());
        kv("influence.n_classes", inf.synth.n_classes.to_string());
        kv("influence.cluster_noise", inf.synth.cluster_noise.to_string());
        kv("influence.data_seed", inf.synth.seed.to_string());
        kv("influence.n_train", inf.n_train.to_string());
        kv("influence.n_probes", inf.n_probes.to_string());
        kv("influence.hidden", join(&inf.hidden));
        kv("influence.removed_index", inf.removed_index.to_string());
        kv("influence.damping", inf.damping.to_string());
        for field in TRAIN_FIELDS {
            kv(&format!("influence.{field}"), train_value(&inf.train, field));
        }
        s
    }

    /// The fixture with the global seed added to every stage seed.
    pub fn seeded_fixture(&self) -> FixtureConfig {
        self.fixture.reseeded(self.seed)
    }

    pub fn seeded_influence(&self) -> InfluenceCheckConfig {
        let mut c = self.influence.clone();
        c.synth.seed = c.synth.seed.wrapping_add(self.seed);
        c.train.seed = c.train.seed.wrapping_add(self.seed);
        c
    }
}
