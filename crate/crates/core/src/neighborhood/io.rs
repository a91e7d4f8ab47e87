//! `flexknn` text format: header `flexknn v1 <n> <k>` followed by `n` rows of
//! `k` space-separated indices.

use std::io::{BufRead, Write};

use super::NeighborIndex;
use crate::error::{EngineError, Result};

pub fn write_flexknn<W: Write>(out: W, index: &NeighborIndex) -> Result<()> {
    let mut out = std::io::BufWriter::new(out);
    writeln!(out, "flexknn v1 {} {}", index.len(), index.k())?;
    for row in index.rows() {
        let line: Vec<String> = row.iter().map(|j| j.to_string()).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_flexknn<R: BufRead>(input: R) -> Result<NeighborIndex> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| EngineError::config("missing flexknn header"))??;
    let tokens: Vec<&str> = header.split_whitespace().collect();
    if tokens.len() != 4 || tokens[0] != "flexknn" || tokens[1] != "v1" {
        return Err(EngineError::config(format!("bad flexknn header: {header:?}")));
    }
    let n: usize = tokens[2]
        .parse()
        .map_err(|_| EngineError::config("bad flexknn point count"))?;
    let k: usize = tokens[3]
        .parse()
        .map_err(|_| EngineError::config("bad flexknn neighborhood size"))?;
    let mut indices = Vec::with_capacity(n * k);
    for i in 0..n {
        let line = lines
            .next()
            .ok_or_else(|| EngineError::config(format!("expected {n} rows, found {i}")))??;
        let before = indices.len();
        for tok in line.split_whitespace() {
            indices.push(
                tok.parse::<usize>()
                    .map_err(|_| EngineError::config(format!("row {i}: bad index {tok:?}")))?,
            );
        }
        if indices.len() - before != k {
            return Err(EngineError::config(format!("row {i} does not have {k} entries")));
        }
    }
    NeighborIndex::from_rows(k, indices)
}
