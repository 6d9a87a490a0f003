use std::io::BufRead;

use serde::Deserialize;

use super::Vertex;
use crate::error::{Error, Result};

/// Reads an edge list: one `i j` pair per line, `#` starts a comment.
pub fn read_edge_list(reader: impl BufRead, source_name: &str) -> Result<Vec<(Vertex, Vertex)>> {
    let mut edges = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            source_name: source_name.to_string(),
            line: n + 1,
            message,
        };
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(parse_err(format!(
                "expected two vertex ids, found {} field(s)",
                fields.len()
            )));
        }
        let parse = |s: &str| {
            s.parse::<Vertex>()
                .map_err(|_| parse_err(format!("{s:?} is not a non-negative integer")))
        };
        let (a, b) = (parse(fields[0])?, parse(fields[1])?);
        if a == b {
            return Err(parse_err(format!("self-loop on vertex {a}")));
        }
        edges.push((a, b));
    }
    Ok(edges)
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
pub struct PointRecord {
    pub id: Vertex,
    pub x: f64,
    pub y: f64,
}

/// Reads a point-set CSV with header `id,x,y`.
pub fn read_points_csv(reader: impl std::io::Read, source_name: &str) -> Result<Vec<PointRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| csv_err(e, source_name))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["id", "x", "y"] {
        return Err(Error::Parse {
            source_name: source_name.to_string(),
            line: 1,
            message: format!("expected header id,x,y, found {headers:?}"),
        });
    }
    rdr.deserialize()
        .map(|r| r.map_err(|e| csv_err(e, source_name)))
        .collect()
}

pub(crate) fn csv_err(e: csv::Error, source_name: &str) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::Parse {
        source_name: source_name.to_string(),
        line,
        message: e.to_string(),
    }
}
