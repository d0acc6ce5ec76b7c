//! ```text
//! dmp-attackset v1 kind=<kind> dim=<d>
//! is_member,f1,...,fd
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{AttackInstance, AttackKind, AttackSet};
use crate::error::{Error, Result};
use crate::textfmt::{fmt_f64, header_usize, parse_floats, parse_header};

const MAGIC: &str = "dmp-attackset v1";

pub fn write_attack_set<W: Write>(set: &AttackSet, mut w: W) -> Result<()> {
    writeln!(w, "{MAGIC} kind={} dim={}", set.kind().name(), set.dim())?;
    for inst in set.instances() {
        let mut line = String::from(if inst.is_member { "1" } else { "0" });
        for &v in &inst.features {
            line.push(',');
            line.push_str(&fmt_f64(v));
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_attack_set<R: BufRead>(r: R) -> Result<AttackSet> {
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| Error::parse(1, "empty file"))??;
    let h = parse_header(&header, MAGIC, &["kind", "dim"])?;
    let kind = AttackKind::from_name(h["kind"])
        .ok_or_else(|| Error::parse(1, format!("unknown attack kind `{}`", h["kind"])))?;
    let dim = header_usize(&h, "dim")?;
    let mut instances = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (flag, rest) = match line.split_once(',') {
            Some(p) => p,
            None if dim == 0 => (line.as_str(), ""),
            None => return Err(Error::parse(line_no, "expected `is_member,f1,...,fd`")),
        };
        let is_member = match flag.trim() {
            "1" => true,
            "0" => false,
            other => return Err(Error::parse(line_no, format!("membership flag must be 0 or 1, got `{other}`"))),
        };
        let mut features = Vec::with_capacity(dim);
        if dim > 0 {
            parse_floats(rest, dim, line_no, &mut features)?;
        }
        instances.push(AttackInstance { features, is_member });
    }
    AttackSet::new(kind, dim, instances)
}

pub fn save_attack_set(set: &AttackSet, path: impl AsRef<Path>) -> Result<()> {
    write_attack_set(set, BufWriter::new(File::create(path)?))
}

pub fn load_attack_set(path: impl AsRef<Path>) -> Result<AttackSet> {
    read_attack_set(BufReader::new(File::open(path)?))
}
