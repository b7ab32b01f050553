//! Row selections such as `0..99`, `3,7,12` or `0..9,20`.

use revise_core::{Error, Result};

/// Parses a selection. Ranges are inclusive on both ends. Indices keep the
/// order given and must be below `n`.
pub fn parse_rows(spec: &str, n: usize) -> Result<Vec<usize>> {
    let bad = |part: &str| Error::config(format!("invalid row selection '{part}'"));
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (lo, hi) = match part.split_once("..") {
            Some((a, b)) => {
                let b = b.strip_prefix('=').unwrap_or(b);
                (
                    a.trim().parse::<usize>().map_err(|_| bad(part))?,
                    b.trim().parse::<usize>().map_err(|_| bad(part))?,
                )
            }
            None => {
                let i = part.parse::<usize>().map_err(|_| bad(part))?;
                (i, i)
            }
        };
        if lo > hi {
            return Err(bad(part));
        }
        if hi >= n {
            return Err(Error::config(format!("row {hi} is out of range for {n} rows")));
        }
        out.extend(lo..=hi);
    }
    if out.is_empty() {
        return Err(Error::config("empty row selection"));
    }
    Ok(out)
}
