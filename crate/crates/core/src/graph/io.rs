//! Plain-text graph and matrix files.
//!
//! Edge lists hold one whitespace-separated `u v` pair per line with 0-based
//! ids. Matrices (features, embeddings) start with an `rows cols` header
//! followed by one row of reals per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use log::warn;

use super::Graph;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub self_loops_dropped: usize,
    pub duplicates_dropped: usize,
}

fn parse<T: FromStr>(tok: &str, line: usize) -> Result<T> {
    tok.parse().map_err(|_| Error::Format {
        line,
        msg: format!("cannot parse {tok:?}"),
    })
}

fn parse_matrix(reader: impl BufRead) -> Result<Matrix> {
    let mut lines = reader.lines().enumerate();
    let (rows, cols) = loop {
        let Some((i, line)) = lines.next() else {
            return Err(Error::Format {
                line: 1,
                msg: "missing \"rows cols\" header".into(),
            });
        };
        let line = line?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            [] => continue,
            [r, c] => break (parse::<usize>(r, i + 1)?, parse::<usize>(c, i + 1)?),
            _ => {
                return Err(Error::Format {
                    line: i + 1,
                    msg: "header must be \"rows cols\"".into(),
                })
            }
        }
    };
    let mut data = Vec::with_capacity(rows * cols);
    let mut seen = 0;
    let mut last_line = 1;
    for (i, line) in lines {
        let line = line?;
        last_line = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        if seen == rows {
            return Err(Error::Format {
                line: i + 1,
                msg: format!("more than the declared {rows} rows"),
            });
        }
        let before = data.len();
        for tok in line.split_whitespace() {
            data.push(parse::<f64>(tok, i + 1)?);
        }
        if data.len() - before != cols {
            return Err(Error::Format {
                line: i + 1,
                msg: format!("expected {cols} values, found {}", data.len() - before),
            });
        }
        seen += 1;
    }
    if seen != rows {
        return Err(Error::Format {
            line: last_line,
            msg: format!("expected {rows} rows, found {seen}"),
        });
    }
    Matrix::from_vec(rows, cols, data)
}

fn parse_edges(reader: impl BufRead, n: usize) -> Result<(Vec<(usize, usize)>, LoadStats)> {
    let mut edges = Vec::new();
    let mut stats = LoadStats::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        let (u, v) = match toks.as_slice() {
            [] => continue,
            [u, v] => (parse::<usize>(u, i + 1)?, parse::<usize>(v, i + 1)?),
            _ => {
                return Err(Error::Format {
                    line: i + 1,
                    msg: "expected two node ids".into(),
                })
            }
        };
        if u >= n || v >= n {
            return Err(Error::Format {
                line: i + 1,
                msg: format!("node id {} out of range for {n} nodes", u.max(v)),
            });
        }
        if u == v {
            stats.self_loops_dropped += 1;
            continue;
        }
        edges.push((u.min(v), u.max(v)));
    }
    let raw = edges.len();
    edges.sort_unstable();
    edges.dedup();
    stats.duplicates_dropped = raw - edges.len();
    Ok((edges, stats))
}

/// Loads a graph from an edge list and a feature matrix; the feature file
/// fixes `N`.
pub fn load_graph(edge_path: &Path, feature_path: &Path) -> Result<(Graph, LoadStats)> {
    let features = parse_matrix(BufReader::new(File::open(feature_path)?))?;
    let n = features.rows();
    let (edges, stats) = parse_edges(BufReader::new(File::open(edge_path)?), n)?;
    if stats.self_loops_dropped > 0 {
        warn!(
            "{}: dropped {} self-loop lines",
            edge_path.display(),
            stats.self_loops_dropped
        );
    }
    Ok((Graph::from_canonical_edges(n, edges, features), stats))
}

pub fn save_graph(g: &Graph, edge_path: &Path, feature_path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(edge_path)?);
    for &(u, v) in g.edges() {
        writeln!(w, "{u} {v}")?;
    }
    w.flush()?;
    save_matrix(g.features(), feature_path)
}

pub fn save_matrix(m: &Matrix, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_matrix(m, &mut w)?;
    w.flush()?;
    Ok(())
}

pub(crate) fn write_matrix(m: &Matrix, w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "{} {}", m.rows(), m.cols())?;
    for i in 0..m.rows() {
        let mut first = true;
        for x in m.row(i) {
            if !first {
                w.write_all(b" ")?;
            }
            first = false;
            // `Display` for f64 prints the shortest string that round-trips.
            write!(w, "{x}")?;
        }
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn load_matrix(path: &Path) -> Result<Matrix> {
    parse_matrix(BufReader::new(File::open(path)?))
}
