//! Text formats for datasets and soft-label sets.
//!
//! ```text
//! dmp-dataset v1 n=<n> d=<d> c=<c> kind=<binary|continuous>
//! label,f1,...,fd
//!
//! dmp-softlabels v1 n=<n> d=<d> c=<c> T=<temp>
//! f1,...,fd|p1,...,pc
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;

use super::{Dataset, FeatureKind, SoftLabelSet};
use crate::error::{Error, Result};
use crate::textfmt::{fmt_f64, header_usize, parse_f64, parse_floats, parse_header, truncated};

const DATASET_MAGIC: &str = "dmp-dataset v1";
const SOFT_MAGIC: &str = "dmp-softlabels v1";

pub fn write_dataset<W: Write>(d: &Dataset, mut w: W) -> Result<()> {
    writeln!(
        w,
        "{DATASET_MAGIC} n={} d={} c={} kind={}",
        d.len(),
        d.n_features(),
        d.n_classes(),
        d.kind().name()
    )?;
    let mut line = String::new();
    for i in 0..d.len() {
        line.clear();
        line.push_str(&d.labels()[i].to_string());
        for &v in d.row(i) {
            line.push(',');
            match d.kind() {
                FeatureKind::Binary => line.push(if v == 1.0 { '1' } else { '0' }),
                FeatureKind::Continuous => line.push_str(&fmt_f64(v)),
            }
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: BufRead>(r: R) -> Result<Dataset> {
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| Error::parse(1, "empty file"))??;
    let h = parse_header(&header, DATASET_MAGIC, &["n", "d", "c", "kind"])?;
    let (n, d, c) = (header_usize(&h, "n")?, header_usize(&h, "d")?, header_usize(&h, "c")?);
    let kind = match h["kind"] {
        "binary" => FeatureKind::Binary,
        "continuous" => FeatureKind::Continuous,
        other => return Err(Error::parse(1, format!("unknown feature kind `{other}`"))),
    };
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let line_no = i + 2;
        let line = match lines.next() {
            Some(l) => l?,
            None => return Err(truncated(n, i, line_no - 1)),
        };
        let (label, rest) = line
            .split_once(',')
            .ok_or_else(|| Error::parse(line_no, "expected `label,f1,...,fd`"))?;
        let y: usize = label
            .trim()
            .parse()
            .map_err(|_| Error::parse(line_no, format!("bad label `{label}`")))?;
        if y >= c {
            return Err(Error::parse(line_no, format!("label {y} out of range for {c} classes")));
        }
        labels.push(y);
        parse_floats(rest, d, line_no, &mut features)?;
        if kind == FeatureKind::Binary && features[features.len() - d..].iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::parse(line_no, "binary dataset holds a value outside {0, 1}"));
        }
    }
    check_trailing(lines, n + 2)?;
    let features = Array2::from_shape_vec((n, d), features).expect("row count checked");
    Dataset::new(features, labels, c, kind)
}

pub fn write_soft_labels<W: Write>(s: &SoftLabelSet, mut w: W) -> Result<()> {
    writeln!(
        w,
        "{SOFT_MAGIC} n={} d={} c={} T={}",
        s.len(),
        s.inputs().ncols(),
        s.n_classes(),
        fmt_f64(s.teacher_temperature())
    )?;
    let mut line = String::new();
    for (x, p) in s.inputs().rows().into_iter().zip(s.soft_labels().rows()) {
        line.clear();
        let xs: Vec<String> = x.iter().map(|&v| fmt_f64(v)).collect();
        let ps: Vec<String> = p.iter().map(|&v| fmt_f64(v)).collect();
        line.push_str(&xs.join(","));
        line.push('|');
        line.push_str(&ps.join(","));
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_soft_labels<R: BufRead>(r: R) -> Result<SoftLabelSet> {
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| Error::parse(1, "empty file"))??;
    let h = parse_header(&header, SOFT_MAGIC, &["n", "d", "c", "T"])?;
    let (n, d, c) = (header_usize(&h, "n")?, header_usize(&h, "d")?, header_usize(&h, "c")?);
    let t = parse_f64(h["T"], 1)?;
    let mut xs = Vec::with_capacity(n * d);
    let mut ps = Vec::with_capacity(n * c);
    for i in 0..n {
        let line_no = i + 2;
        let line = match lines.next() {
            Some(l) => l?,
            None => return Err(truncated(n, i, line_no - 1)),
        };
        let (x, p) = line
            .split_once('|')
            .ok_or_else(|| Error::parse(line_no, "expected `f1,...,fd|p1,...,pc`"))?;
        parse_floats(x, d, line_no, &mut xs)?;
        parse_floats(p, c, line_no, &mut ps)?;
    }
    check_trailing(lines, n + 2)?;
    let inputs = Array2::from_shape_vec((n, d), xs).expect("row count checked");
    let soft = Array2::from_shape_vec((n, c), ps).expect("row count checked");
    SoftLabelSet::new(inputs, soft, t)
}

fn check_trailing<I: Iterator<Item = std::io::Result<String>>>(lines: I, first_line: usize) -> Result<()> {
    for (k, l) in lines.enumerate() {
        if !l?.trim().is_empty() {
            return Err(Error::parse(first_line + k, "unexpected data after the declared rows"));
        }
    }
    Ok(())
}

pub fn save_dataset(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_dataset(d, BufWriter::new(File::create(path)?))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    read_dataset(BufReader::new(File::open(path)?))
}

pub fn save_soft_labels(s: &SoftLabelSet, path: impl AsRef<Path>) -> Result<()> {
    write_soft_labels(s, BufWriter::new(File::create(path)?))
}

pub fn load_soft_labels(path: impl AsRef<Path>) -> Result<SoftLabelSet> {
    read_soft_labels(BufReader::new(File::open(path)?))
}
