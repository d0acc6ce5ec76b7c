//! Text model files.
//!
//! ```text
//! dmp-model v1
//! layers=<k>
//! layer <i> <in> <out> <activation>
//! w_0 ... w_{in-1} b        (one line per output unit)
//! ```
//!
//! Values are printed with 17 significant digits, which round-trips every
//! `f64` exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::mlp::{Activation, LayerSpec, Mlp};
use crate::error::{Error, Result};
use crate::textfmt::truncated;

const MAGIC: &str = "dmp-model v1";

pub fn write_model<W: Write>(m: &Mlp, mut w: W) -> Result<()> {
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "layers={}", m.n_layers())?;
    let mut line = String::new();
    for (i, l) in m.layers().iter().enumerate() {
        let s = l.spec();
        writeln!(w, "layer {i} {} {} {}", s.input_dim, s.output_dim, s.activation.name())?;
        for (row, b) in l.weights().rows().into_iter().zip(l.bias()) {
            line.clear();
            for v in row.iter().chain(std::iter::once(b)) {
                if !line.is_empty() {
                    line.push(' ');
                }
                line.push_str(&format!("{v:.16e}"));
            }
            writeln!(w, "{line}")?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_model<R: BufRead>(r: R) -> Result<Mlp> {
    let mut lines = r.lines();
    let mut line_no = 0usize;
    let mut next = |what: &str| -> Result<(usize, String)> {
        line_no += 1;
        match lines.next() {
            Some(l) => Ok((line_no, l?)),
            None => Err(Error::parse(line_no - 1, format!("file truncated after line {}: expected {what}", line_no - 1))),
        }
    };
    let (_, magic) = next("header")?;
    if magic.trim() != MAGIC {
        return Err(Error::parse(1, format!("expected `{MAGIC}`")));
    }
    let (_, count) = next("layer count")?;
    let k: usize = count
        .trim()
        .strip_prefix("layers=")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::parse(2, "expected `layers=<k>`"))?;
    let mut specs = Vec::with_capacity(k);
    let mut weights = Vec::with_capacity(k);
    let mut biases = Vec::with_capacity(k);
    for i in 0..k {
        let (ln, head) = next("layer header")?;
        let toks: Vec<&str> = head.split_whitespace().collect();
        let spec = match toks.as_slice() {
            ["layer", idx, inp, out, act] if idx.parse() == Ok(i) => {
                let parse_dim = |s: &str| s.parse::<usize>().ok().filter(|&v| v > 0);
                let (Some(a), Some(b)) = (parse_dim(inp), parse_dim(out)) else {
                    return Err(Error::parse(ln, "layer dimensions must be positive integers"));
                };
                let act = Activation::from_name(act).ok_or_else(|| Error::parse(ln, format!("unknown activation `{act}`")))?;
                LayerSpec::new(a, b, act)
            }
            _ => return Err(Error::parse(ln, format!("expected `layer {i} <in> <out> <activation>`"))),
        };
        let mut w = Array2::zeros((spec.output_dim, spec.input_dim));
        let mut b = Array1::zeros(spec.output_dim);
        for o in 0..spec.output_dim {
            let (ln, row) = next("weight row").map_err(|e| match e {
                Error::Parse { line, .. } => truncated(spec.output_dim, o, line),
                other => other,
            })?;
            let vals: Vec<&str> = row.split_whitespace().collect();
            if vals.len() != spec.input_dim + 1 {
                return Err(Error::parse(
                    ln,
                    format!("expected {} values, found {}", spec.input_dim + 1, vals.len()),
                ));
            }
            for (j, tok) in vals.iter().enumerate() {
                let v = crate::textfmt::parse_f64(tok, ln)?;
                if j < spec.input_dim {
                    w[(o, j)] = v;
                } else {
                    b[o] = v;
                }
            }
        }
        specs.push(spec);
        weights.push(w);
        biases.push(b);
    }
    Mlp::from_parts(&specs, weights, biases).map_err(|e| Error::parse(line_no, e))
}

pub fn save_model(m: &Mlp, path: impl AsRef<Path>) -> Result<()> {
    write_model(m, BufWriter::new(File::create(path)?))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Mlp> {
    read_model(BufReader::new(File::open(path)?))
}
