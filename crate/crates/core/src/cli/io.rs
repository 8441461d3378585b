use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;

use super::config::{DataSpec, Intercept};
use crate::error::{Error, Result};
use crate::model::{Cluster, ClusteredDataset};
use crate::scalar::{lit, Real};

/// Name given to the prepended column of ones.
pub const INTERCEPT_NAME: &str = "(Intercept)";

pub fn load_csv<T: Real>(path: &Path, spec: &DataSpec) -> Result<ClusteredDataset<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::Dataset(format!("cannot open {}: {e}", path.display())))?;
    read_csv(file, spec)
}

/// Parse CSV text with a header row. Rows are grouped into clusters in order
/// of first appearance of their label.
pub fn read_csv<T: Real, R: Read>(input: R, spec: &DataSpec) -> Result<ClusteredDataset<T>> {
    if spec.fixed.is_empty() && spec.intercept == Intercept::None {
        return Err(Error::Argument("no fixed-effect columns (give --fixed or --intercept)".into()));
    }
    if spec.random.is_empty() && spec.intercept != Intercept::Both {
        return Err(Error::Argument("no random-effect columns (give --random or --intercept both)".into()));
    }
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader.headers().map_err(|e| Error::Dataset(format!("cannot read header: {e}")))?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Dataset(format!("missing column '{name}'")))
    };
    let response = column(&spec.response)?;
    let cluster_col = column(&spec.cluster)?;
    let fixed: Vec<usize> = spec.fixed.iter().map(|c| column(c)).collect::<Result<_>>()?;
    let random: Vec<usize> = spec.random.iter().map(|c| column(c)).collect::<Result<_>>()?;

    let mut order: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut groups: Vec<(Vec<u8>, Vec<Vec<T>>, Vec<Vec<T>>)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Dataset(format!("malformed CSV: {e}")))?;
        let row = record.position().map_or(0, |p| p.line());
        let field = |c: usize| record.get(c).unwrap_or("");
        let y = match field(response) {
            "0" | "0.0" => 0u8,
            "1" | "1.0" => 1u8,
            other => {
                return Err(Error::Dataset(format!(
                    "row {row}: response '{}' must be 0 or 1, got '{other}'",
                    spec.response
                )))
            }
        };
        let number = |c: usize, name: &str| -> Result<T> {
            let text = field(c);
            match text.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(lit(v)),
                _ => Err(Error::Dataset(format!("row {row}: column '{name}' is not a finite number: '{text}'"))),
            }
        };
        let mut x_row = Vec::with_capacity(fixed.len() + 1);
        if spec.intercept != Intercept::None {
            x_row.push(T::one());
        }
        for (&c, name) in fixed.iter().zip(&spec.fixed) {
            x_row.push(number(c, name)?);
        }
        let mut z_row = Vec::with_capacity(random.len() + 1);
        if spec.intercept == Intercept::Both {
            z_row.push(T::one());
        }
        for (&c, name) in random.iter().zip(&spec.random) {
            z_row.push(number(c, name)?);
        }
        let label = field(cluster_col).to_string();
        let slot = *index.entry(label.clone()).or_insert_with(|| {
            order.push(label);
            groups.push((Vec::new(), Vec::new(), Vec::new()));
            groups.len() - 1
        });
        groups[slot].0.push(y);
        groups[slot].1.push(x_row);
        groups[slot].2.push(z_row);
    }
    if groups.is_empty() {
        return Err(Error::Dataset("no data rows".into()));
    }

    let mut fixed_names: Vec<String> = Vec::new();
    let mut random_names: Vec<String> = Vec::new();
    if spec.intercept != Intercept::None {
        fixed_names.push(INTERCEPT_NAME.into());
    }
    if spec.intercept == Intercept::Both {
        random_names.push(INTERCEPT_NAME.into());
    }
    fixed_names.extend(spec.fixed.iter().cloned());
    random_names.extend(spec.random.iter().cloned());

    let clusters = groups
        .into_iter()
        .map(|(y, x, z)| {
            let n = y.len();
            let xm = DMatrix::from_fn(n, fixed_names.len(), |r, c| x[r][c]);
            let zm = DMatrix::from_fn(n, random_names.len(), |r, c| z[r][c]);
            Cluster::new(y, xm, zm)
        })
        .collect::<Result<Vec<_>>>()?;
    ClusteredDataset::new(clusters)?.with_names(order, fixed_names, random_names)
}
