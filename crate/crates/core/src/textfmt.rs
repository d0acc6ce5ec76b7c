//! Helpers shared by the line-oriented text formats.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Shortest representation that parses back to the same `f64`.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Parses `magic key=value key=value ...`, requiring every key in `keys`.
pub(crate) fn parse_header<'a>(line: &'a str, magic: &str, keys: &[&str]) -> Result<HashMap<&'a str, &'a str>> {
    let rest = line
        .strip_prefix(magic)
        .ok_or_else(|| Error::parse(1, format!("expected header starting with `{magic}`")))?;
    let mut map = HashMap::new();
    for tok in rest.split_whitespace() {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| Error::parse(1, format!("malformed header field `{tok}`")))?;
        map.insert(k, v);
    }
    for k in keys {
        if !map.contains_key(k) {
            return Err(Error::parse(1, format!("header is missing `{k}=`")));
        }
    }
    Ok(map)
}

pub(crate) fn header_usize(map: &HashMap<&str, &str>, key: &str) -> Result<usize> {
    map[key]
        .parse()
        .map_err(|_| Error::parse(1, format!("header field `{key}` is not a nonnegative integer")))
}

pub(crate) fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    let v: f64 = tok
        .trim()
        .parse()
        .map_err(|_| Error::parse(line, format!("`{tok}` is not a number")))?;
    if !v.is_finite() {
        return Err(Error::parse(line, format!("non-finite value `{tok}`")));
    }
    Ok(v)
}

/// Parses exactly `n` comma-separated floats.
pub(crate) fn parse_floats(s: &str, n: usize, line: usize, out: &mut Vec<f64>) -> Result<()> {
    let start = out.len();
    for tok in s.split(',') {
        out.push(parse_f64(tok, line)?);
    }
    let got = out.len() - start;
    if got != n {
        return Err(Error::parse(line, format!("expected {n} values, found {got}")));
    }
    Ok(())
}

/// Error for a body that stops before the declared row count.
pub(crate) fn truncated(expected: usize, found: usize, last_good_line: usize) -> Error {
    Error::parse(
        last_good_line,
        format!("file truncated after line {last_good_line}: expected {expected} rows, found {found}"),
    )
}
