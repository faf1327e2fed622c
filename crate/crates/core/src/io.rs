//! JSON system definitions.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Chart, ChartError, Expr, ParseError};
use crate::geometry::{christoffel_from_metric, Connection, GeometryError, Metric, VectorField};
use crate::systems::{ControlSystem, SystemError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemFile {
    pub dim: usize,
    pub coords: Vec<String>,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Vec<(f64, f64)>>,
    pub drift: Vec<String>,
    pub inputs: Vec<Vec<String>>,
    pub outputs: Vec<String>,
    pub connection: ConnectionSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConnectionSpec {
    /// Keys are `"a,b,c"` with 1-based indices for `Gamma^a_bc`.
    Christoffel { symbols: BTreeMap<String, String> },
    LeviCivita { metric: Vec<Vec<String>> },
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid JSON at line {line}, column {column}: {message}")]
    Json {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error("{field}: {source} in `{text}`")]
    Expression {
        field: String,
        text: String,
        source: ParseError,
    },
    #[error(transparent)]
    Chart(#[from] ChartError),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error("connection: {0}")]
    Geometry(#[from] GeometryError),
}

/// A parsed system file.
#[derive(Debug, Clone)]
pub struct LoadedSystem {
    pub system: ControlSystem,
    pub connection: Connection,
    /// Present when the connection was given as a Levi-Civita metric.
    pub metric: Option<Metric>,
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> LoadError {
    LoadError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

fn parse_at(chart: &Chart, field: String, text: &str) -> Result<Expr, LoadError> {
    chart.parse(text).map_err(|source| LoadError::Expression {
        field,
        text: text.to_string(),
        source,
    })
}

fn parse_row(chart: &Chart, field: &str, row: &[String]) -> Result<Vec<Expr>, LoadError> {
    if row.len() != chart.dim() {
        return Err(invalid(
            field,
            format!("expected {} entries, got {}", chart.dim(), row.len()),
        ));
    }
    row.iter()
        .enumerate()
        .map(|(i, t)| parse_at(chart, format!("{field}[{i}]"), t))
        .collect()
}

impl SystemFile {
    pub fn from_json(text: &str) -> Result<Self, LoadError> {
        serde_json::from_str(text).map_err(|e| LoadError::Json {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn read(path: &Path) -> Result<Self, LoadError> {
        let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io {
            path: path.display().to_string(),
            source,
        })?;
        SystemFile::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("system files serialize")
    }

    pub fn chart(&self) -> Result<Chart, LoadError> {
        if self.coords.len() != self.dim {
            return Err(invalid(
                "coords",
                format!("dim is {} but {} coordinates given", self.dim, self.coords.len()),
            ));
        }
        let bounds = match &self.bounds {
            Some(b) if b.len() != self.dim => {
                return Err(invalid("box", format!("expected {} intervals", self.dim)))
            }
            Some(b) => b.clone(),
            None => vec![(-1.0, 1.0); self.dim],
        };
        Ok(Chart::new(self.coords.clone(), bounds)?)
    }

    /// Builds the system and connection; `bounds` overrides the file's box.
    pub fn load(&self, bounds: Option<Vec<(f64, f64)>>) -> Result<LoadedSystem, LoadError> {
        let mut chart = self.chart()?;
        if let Some(b) = bounds {
            if b.len() != self.dim {
                return Err(invalid("box", format!("expected {} intervals", self.dim)));
            }
            chart = chart.with_bounds(b)?;
        }
        let n = chart.dim();
        let drift = VectorField::new(parse_row(&chart, "drift", &self.drift)?);
        let inputs = self
            .inputs
            .iter()
            .enumerate()
            .map(|(j, row)| parse_row(&chart, &format!("inputs[{j}]"), row).map(VectorField::new))
            .collect::<Result<Vec<_>, _>>()?;
        let outputs = self
            .outputs
            .iter()
            .enumerate()
            .map(|(j, t)| parse_at(&chart, format!("outputs[{j}]"), t))
            .collect::<Result<Vec<_>, _>>()?;
        let (connection, metric) = match &self.connection {
            ConnectionSpec::Christoffel { symbols } => {
                let mut entries = Vec::new();
                for (key, text) in symbols {
                    let field = format!("connection.symbols[\"{key}\"]");
                    let idx: Vec<usize> = key
                        .split(',')
                        .map(|s| s.trim().parse::<usize>())
                        .collect::<Result<_, _>>()
                        .map_err(|_| invalid(&field, "key must be three comma-separated integers"))?;
                    if idx.len() != 3 || idx.iter().any(|&i| i == 0 || i > n) {
                        return Err(invalid(&field, format!("indices must be three values in 1..={n}")));
                    }
                    entries.push((idx[0] - 1, idx[1] - 1, idx[2] - 1, parse_at(&chart, field, text)?));
                }
                (Connection::from_entries(n, entries)?, None)
            }
            ConnectionSpec::LeviCivita { metric } => {
                if metric.len() != n {
                    return Err(invalid("connection.metric", format!("expected {n} rows")));
                }
                let rows = metric
                    .iter()
                    .enumerate()
                    .map(|(a, row)| parse_row(&chart, &format!("connection.metric[{a}]"), row))
                    .collect::<Result<Vec<_>, _>>()?;
                for a in 0..n {
                    for b in (a + 1)..n {
                        let r = crate::expr::equivalent_on_samples(
                            &rows[a][b],
                            &rows[b][a],
                            &chart,
                            1e-12,
                            16,
                            crate::expr::DEFAULT_SEED,
                        );
                        if !matches!(r, Ok(ref e) if e.equivalent) {
                            return Err(invalid(
                                format!("connection.metric[{a}][{b}]"),
                                "metric is not symmetric",
                            ));
                        }
                    }
                }
                let g = Metric::new(rows)?;
                (christoffel_from_metric(&g)?, Some(g))
            }
        };
        let system = ControlSystem::new(chart, drift, inputs, outputs)?;
        Ok(LoadedSystem {
            system,
            connection,
            metric,
        })
    }
}

pub fn load_system(path: &Path, bounds: Option<Vec<(f64, f64)>>) -> Result<LoadedSystem, LoadError> {
    SystemFile::read(path)?.load(bounds)
}
