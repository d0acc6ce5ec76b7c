//! Command-line driver: `dmp <subcommand> --config <path> [--out <dir>]
//! [--seed <u64>]`.
//!
//! Exit codes: 0 success, 1 invalid input (config, files, arguments),
//! 2 numerical or training failure.

mod config;

pub use config::{RunConfig, SweepConfig, TheoryConfig};

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::analysis::{distribution_report, stats};
use crate::data::{load_dataset, parts_from_indices, save_dataset, save_soft_labels, split, synth_purchase, SplitIndices};
use crate::dmp::train_unprotected;
use crate::error::{Error, ErrorClass, Result};
use crate::experiment::{
    adaptive, attack_suite, entropy_sweep, influence_check, ref_risk, refsize_sweep, temperature_sweep, theory_check,
    Fixture, FixtureConfig,
};
use crate::nncore::{architecture, load_model, save_model, Mlp};
use crate::report::ExperimentReport;
use crate::textfmt::fmt_f64;

pub const CORPUS: &str = "corpus.csv";
pub const SPLIT: &str = "split_indices.csv";
pub const TEACHER: &str = "teacher.model";
pub const STUDENT: &str = "student.model";
pub const SOFT_LABELS: &str = "soft_labels.csv";
pub const REFERENCE: &str = "reference_indices.csv";
pub const REPORT: &str = "report.csv";

/// Per-stage metric files merged by `report`, in merge order.
pub const STAGE_REPORTS: [&str; 6] = [
    "teacher_report.csv",
    "distill_report.csv",
    "attack_report.csv",
    "ref_risk_report.csv",
    "adaptive_report.csv",
    "theory_report.csv",
];

#[derive(Parser, Debug)]
#[command(name = "dmp", version, about = "Distillation defense and membership-inference workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Flat key=value configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the `out` key.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Global seed added to every stage seed; overrides the `seed` key.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic corpus.
    SynthData(Common),
    /// Partition the corpus.
    Split(Common),
    /// Train the unprotected model.
    Train(Common),
    /// Select reference rows and train the protected model.
    Distill(Common),
    /// Attack both models and write distribution reports.
    Attack(Common),
    /// Membership inference against the reference rows.
    RefRisk(Common),
    /// Distance-to-reference attack on the protected model.
    Adaptive(Common),
    /// One protected model per entropy bucket.
    EntropySweep(Common),
    /// One protected model per teacher temperature.
    TempSweep(Common),
    /// One protected model per reference-set size.
    RefsizeSweep(Common),
    /// Influence estimates against retraining, and the leave-one-out bound.
    InfluenceCheck(Common),
    /// Merge stage metrics into one table.
    Report(Common),
}

/// Parses arguments, runs one subcommand and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e.class() {
        ErrorClass::Validation => 1,
        ErrorClass::Numerical => 2,
    }
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let text = fs::read_to_string(&c.config)
        .map_err(|e| Error::invalid(format!("cannot read config {}: {e}", c.config.display())))?;
    let mut cfg = RunConfig::parse(&text)?;
    if let Some(out) = &c.out {
        cfg.out = out.clone();
    }
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn dispatch(cmd: Command) -> Result<()> {
    use Command::*;
    let (common, f): (&Common, fn(&RunConfig) -> Result<()>) = match &cmd {
        SynthData(c) => (c, cmd_synth_data),
        Split(c) => (c, cmd_split),
        Train(c) => (c, cmd_train),
        Distill(c) => (c, cmd_distill),
        Attack(c) => (c, cmd_attack),
        RefRisk(c) => (c, cmd_ref_risk),
        Adaptive(c) => (c, cmd_adaptive),
        EntropySweep(c) => (c, cmd_entropy_sweep),
        TempSweep(c) => (c, cmd_temp_sweep),
        RefsizeSweep(c) => (c, cmd_refsize_sweep),
        InfluenceCheck(c) => (c, cmd_influence_check),
        Report(c) => (c, cmd_report),
    };
    let cfg = load_config(common)?;
    fs::create_dir_all(&cfg.out)?;
    f(&cfg)
}

fn path(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.out.join(name)
}

fn require(p: &Path) -> Result<()> {
    if p.exists() {
        Ok(())
    } else {
        Err(Error::invalid(format!("missing input file {}", p.display())))
    }
}

fn write(cfg: &RunConfig, name: &str, text: &str) -> Result<()> {
    fs::write(path(cfg, name), text)?;
    Ok(())
}

fn model(cfg: &RunConfig, name: &str) -> Result<Mlp> {
    let p = path(cfg, name);
    require(&p)?;
    load_model(p)
}

/// Rebuilds the fixture from the corpus and split files in the output
/// directory.
pub fn load_fixture(cfg: &RunConfig) -> Result<Fixture> {
    let (corpus_path, split_path) = (path(cfg, CORPUS), path(cfg, SPLIT));
    require(&corpus_path)?;
    require(&split_path)?;
    let corpus = load_dataset(corpus_path)?;
    let n = corpus.len();
    let corpus = corpus.with_origin((0..n).collect());
    let indices = SplitIndices::from_csv(&fs::read_to_string(split_path)?)?;
    let parts = parts_from_indices(&corpus, indices)?;
    let fixture: FixtureConfig = cfg.seeded_fixture();
    let arch = architecture(corpus.n_features(), &fixture.hidden, corpus.n_classes());
    Ok(Fixture {
        cfg: fixture,
        parts,
        arch,
    })
}

fn reference_indices(cfg: &RunConfig) -> Result<Vec<usize>> {
    let p = path(cfg, REFERENCE);
    require(&p)?;
    let text = fs::read_to_string(p)?;
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, l)| l) != Some("pool_row,entropy") {
        return Err(Error::parse(1, "expected header `pool_row,entropy`"));
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.split(',')
                .next()
                .and_then(|t| t.trim().parse().ok())
                .ok_or_else(|| Error::parse(i + 1, format!("bad pool row in `{l}`")))
        })
        .collect()
}

fn save_report(cfg: &RunConfig, name: &str, report: &ExperimentReport) -> Result<()> {
    report.validate()?;
    write(cfg, name, &report.to_csv())
}

fn cmd_synth_data(cfg: &RunConfig) -> Result<()> {
    let params = cfg.seeded_fixture().synth;
    let corpus = synth_purchase(&params)?;
    save_dataset(&corpus, path(cfg, CORPUS))?;
    println!(
        "wrote {} rows, {} features, {} classes to {}",
        corpus.len(),
        corpus.n_features(),
        corpus.n_classes(),
        path(cfg, CORPUS).display()
    );
    Ok(())
}

fn cmd_split(cfg: &RunConfig) -> Result<()> {
    let p = path(cfg, CORPUS);
    require(&p)?;
    let corpus = load_dataset(p)?;
    let parts = split(&corpus, &cfg.seeded_fixture().plan)?;
    write(cfg, SPLIT, &parts.indices.to_csv())?;
    for (name, rows) in parts.indices.named() {
        println!("{name}: {}", rows.len());
    }
    Ok(())
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let fx = load_fixture(cfg)?;
    let up = train_unprotected(&fx.arch, &fx.parts.d_tr, &fx.cfg.dmp.teacher_train, Some(&fx.parts.d_test))?;
    save_model(&up.model, path(cfg, TEACHER))?;
    let a_test = up.a_test.expect("test set given");
    let mut r = ExperimentReport::new();
    r.push("no_defense", "a_train", up.a_train);
    r.push("no_defense", "a_test", a_test);
    r.push("no_defense", "e_gen", up.a_train - a_test);
    save_report(cfg, STAGE_REPORTS[0], &r)?;
    println!("teacher: train {:.4}, test {:.4}", up.a_train, a_test);
    Ok(())
}

fn cmd_distill(cfg: &RunConfig) -> Result<()> {
    let fx = load_fixture(cfg)?;
    let teacher = model(cfg, TEACHER)?;
    let out = fx.distill(&teacher, &fx.cfg.dmp)?;
    save_model(&out.protected, path(cfg, STUDENT))?;
    save_soft_labels(&out.soft_labels, path(cfg, SOFT_LABELS))?;
    let mut s = String::from("pool_row,entropy\n");
    for &i in &out.selection.indices {
        let _ = writeln!(s, "{i},{}", fmt_f64(out.selection.pool_entropies[i]));
    }
    write(cfg, REFERENCE, &s)?;
    save_report(cfg, STAGE_REPORTS[1], &out.report)?;
    let get = |m| out.report.get("dmp", m).unwrap_or(f64::NAN);
    println!(
        "protected: train {:.4}, test {:.4}, mean reference entropy {:.4}",
        get("a_train"),
        get("a_test"),
        get("mean_ref_entropy")
    );
    Ok(())
}

fn cmd_attack(cfg: &RunConfig) -> Result<()> {
    let fx = load_fixture(cfg)?;
    let mut report = ExperimentReport::new();
    for (id, file) in [("no_defense", TEACHER), ("dmp", STUDENT)] {
        let target = model(cfg, file)?;
        let suite = attack_suite(&fx, &target)?;
        suite.push_to(&mut report, id);
        let dist = distribution_report(&target, &fx.parts.eval_members, &fx.parts.eval_nonmembers)?;
        write(cfg, &format!("grad_norm_hist_{id}.csv"), &dist.grad_norms.to_csv())?;
        write(cfg, &format!("loss_hist_{id}.csv"), &dist.losses.to_csv())?;
        write(cfg, &format!("egen_per_class_{id}.csv"), &dist.per_class_csv())?;
        write(cfg, &format!("egen_cdf_{id}.csv"), &dist.egen_cdf_csv())?;
        report.push(id, "median_grad_norm_member", dist.member_median_norm);
        report.push(id, "median_grad_norm_nonmember", dist.nonmember_median_norm);
        println!(
            "{id}: {}",
            suite
                .accuracies()
                .iter()
                .map(|(m, v)| format!("{m} {v:.4}"))
                .collect::<Vec<_>>()
                .join(", ")
        );
    }
    save_report(cfg, STAGE_REPORTS[2], &report)
}

fn cmd_ref_risk(cfg: &RunConfig) -> Result<()> {
    let fx = load_fixture(cfg)?;
    let teacher = model(cfg, TEACHER)?;
    let student = model(cfg, STUDENT)?;
    let r = ref_risk(&fx, &teacher, &student, &reference_indices(cfg)?)?;
    let mut report = ExperimentReport::new();
    for (id, rr) in [("dmp", &r.dmp), ("ref_control", &r.control)] {
        report.push(id, "a_ref_bl", rr.bl.tuned.accuracy);
        report.push(id, "a_ref_bl01", rr.bl.zero_one.accuracy);
        report.push(id, "a_ref_bb", rr.blackbox.accuracy);
        report.push(id, "a_ref_wb", rr.whitebox.accuracy);
        println!("{id}: max reference attack accuracy {:.4}", rr.max_accuracy());
    }
    save_report(cfg, STAGE_REPORTS[3], &report)
}

fn cmd_adaptive(cfg: &RunConfig) -> Result<()> {
    let fx = load_fixture(cfg)?;
    let student = model(cfg, STUDENT)?;
    let (rep, trace) = adaptive(&fx, &student, &reference_indices(cfg)?)?;
    let mut s = String::from("is_member,min_distance,nearest_ref,nearest_ref_entropy,target_entropy\n");
    for p in &trace {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            u8::from(p.is_member),
            p.min_distance,
            p.nearest_ref,
            fmt_f64(p.nearest_ref_entropy),
            fmt_f64(p.target_entropy)
        );
    }
    write(cfg, "adaptive_trace.csv", &s)?;
    let dist: Vec<f64> = trace.iter().map(|p| f64::from(p.min_distance)).collect();
    let ent: Vec<f64> = trace.iter().map(|p| p.target_entropy).collect();
    let ref_ent: Vec<f64> = trace.iter().map(|p| p.nearest_ref_entropy).collect();
    let mut report = ExperimentReport::new();
    report.push("dmp", "a_adaptive", rep.accuracy);
    report.push("dmp", "pearson_distance_entropy", stats::pearson(&dist, &ent)?);
    report.push("dmp", "pearson_distance_ref_entropy", stats::pearson(&dist, &ref_ent)?);
    println!("distance attack accuracy {:.4}", rep.accuracy);
    save_report(cfg, STAGE_REPORTS[4], &report)
}

fn cmd_entropy_sweep(cfg: &RunConfig) -> Result<()> {
    let fx = load_fixture(cfg)?;
    let teacher = model(cfg, TEACHER)?;
    let rows = entropy_sweep(&fx, &teacher, cfg.sweep.n_buckets)?;
    let mut s = String::from("bucket,mean_entropy,a_test,a_bl\n");
    for r in &rows {
        let _ = writeln!(s, "{},{},{},{}", r.bucket, fmt_f64(r.mean_entropy), fmt_f64(r.a_test), fmt_f64(r.a_bl));
        println!("bucket {}: entropy {:.4}, test {:.4}, bl {:.4}", r.bucket, r.mean_entropy, r.a_test, r.a_bl);
    }
    write(cfg, "entropy_sweep.csv", &s)
}

fn cmd_temp_sweep(cfg: &RunConfig) -> Result<()> {
    let fx = load_fixture(cfg)?;
    let teacher = model(cfg, TEACHER)?;
    let rows = temperature_sweep(&fx, &teacher, &cfg.sweep.teacher_temperatures, cfg.sweep.student_temperature)?;
    let mut s = String::from("teacher_temperature,a_train,a_test,e_gen,a_wb\n");
    for r in &rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            fmt_f64(r.teacher_temperature),
            fmt_f64(r.a_train),
            fmt_f64(r.a_test),
            fmt_f64(r.e_gen),
            fmt_f64(r.a_wb)
        );
        println!("T {}: e_gen {:.4}, a_wb {:.4}", r.teacher_temperature, r.e_gen, r.a_wb);
    }
    write(cfg, "temp_sweep.csv", &s)
}

fn cmd_refsize_sweep(cfg: &RunConfig) -> Result<()> {
    let fx = load_fixture(cfg)?;
    let teacher = model(cfg, TEACHER)?;
    let rows = refsize_sweep(&fx, &teacher, &cfg.sweep.ref_sizes)?;
    let mut s = String::from("ref_size,a_test,a_bl\n");
    for r in &rows {
        let _ = writeln!(s, "{},{},{}", r.ref_size, fmt_f64(r.a_test), fmt_f64(r.a_bl));
        println!("size {}: test {:.4}, bl {:.4}", r.ref_size, r.a_test, r.a_bl);
    }
    write(cfg, "refsize_sweep.csv", &s)
}

fn cmd_influence_check(cfg: &RunConfig) -> Result<()> {
    let inf = influence_check(&cfg.seeded_influence())?;
    let mut s = String::from("probe,influence,delta_ce\n");
    for (i, (a, b)) in inf.influence.iter().zip(&inf.delta_ce).enumerate() {
        let _ = writeln!(s, "{i},{},{}", fmt_f64(*a), fmt_f64(*b));
    }
    write(cfg, "influence_check.csv", &s)?;

    let fx = load_fixture(cfg)?;
    let student = model(cfg, STUDENT)?;
    let th = theory_check(&fx, &student, cfg.theory.removed_index, cfg.theory.n_rows)?;
    let t = &th.bound.trace;
    let mut s = String::from("row,delta_kl,delta_ce,entropy\n");
    for i in 0..t.len() {
        let _ = writeln!(
            s,
            "{i},{},{},{}",
            fmt_f64(t.delta_kl[i]),
            fmt_f64(t.delta_ce[i]),
            fmt_f64(t.entropy[i])
        );
    }
    write(cfg, "theory_trace.csv", &s)?;
    let mut report = ExperimentReport::new();
    report.push("dmp", "ratio_bound", th.bound.bound);
    report.push("dmp", "ratio_signed_sum", th.bound.signed_sum);
    report.push("dmp", "pearson_dkl_dce", th.correlations.pearson_dkl_dce);
    report.push("dmp", "spearman_entropy_dkl", th.correlations.spearman_entropy_dkl);
    report.push("influence", "pearson_influence_dce", inf.pearson);
    println!(
        "influence vs retraining: pearson {:.4} ({} parameters); bound {:.4} >= |signed sum| {:.4}",
        inf.pearson,
        inf.n_params,
        th.bound.bound,
        th.bound.signed_sum.abs()
    );
    save_report(cfg, STAGE_REPORTS[5], &report)
}

/// Columns of the comparison table, in display order.
const TABLE: [(&str, &str); 7] = [
    ("E_gen", "e_gen"),
    ("A_train", "a_train"),
    ("A_test", "a_test"),
    ("A_bl", "a_bl"),
    ("A_nn", "a_nn"),
    ("A_bb", "a_bb"),
    ("A_wb", "a_wb"),
];

/// No-defense versus protected model, one row each.
pub fn comparison_table(report: &ExperimentReport) -> String {
    let mut s = format!("{:<12}", "defense");
    for (title, _) in TABLE {
        let _ = write!(s, "{title:>9}");
    }
    s.push('\n');
    for id in ["no_defense", "dmp"] {
        let _ = write!(s, "{id:<12}");
        for (_, metric) in TABLE {
            match report.get(id, metric) {
                Some(v) => {
                    let _ = write!(s, "{:>9.1}", 100.0 * v);
                }
                None => {
                    let _ = write!(s, "{:>9}", "-");
                }
            }
        }
        s.push('\n');
    }
    s
}

fn cmd_report(cfg: &RunConfig) -> Result<()> {
    let mut merged = ExperimentReport::new();
    let mut found = 0;
    for name in STAGE_REPORTS {
        let p = path(cfg, name);
        if p.exists() {
            merged.extend(ExperimentReport::load(&p)?);
            found += 1;
        }
    }
    if found == 0 {
        return Err(Error::invalid(format!("no stage reports found in {}", cfg.out.display())));
    }
    save_report(cfg, REPORT, &merged)?;
    print!("{}", comparison_table(&merged));
    Ok(())
}
