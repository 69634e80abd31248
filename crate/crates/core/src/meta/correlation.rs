//! Pearson correlation between per-user attributes.

use log::info;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub attributes: Vec<String>,
    /// row-major, `attributes.len()` squared
    pub matrix: Vec<Vec<f64>>,
    /// Attributes dropped for having zero variance.
    pub excluded: Vec<String>,
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// `columns[k]` holds attribute `names[k]` for every user.
pub fn attribute_correlations(names: &[String], columns: &[Vec<f64>]) -> Result<CorrelationMatrix> {
    if names.len() != columns.len() {
        return Err(Error::invalid("attribute names and columns differ in count"));
    }
    let n_users = columns.first().map_or(0, Vec::len);
    if n_users < 3 {
        return Err(Error::invalid(format!(
            "correlations need at least 3 users, got {n_users}"
        )));
    }
    if columns.iter().any(|c| c.len() != n_users) {
        return Err(Error::invalid("attribute columns differ in length"));
    }
    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    for (name, col) in names.iter().zip(columns) {
        let first = col[0];
        if col.iter().all(|&v| v == first) || col.iter().any(|v| !v.is_finite()) {
            info!("attribute {name} has no variance (or non-finite values); excluded");
            excluded.push(name.clone());
        } else {
            kept.push((name.clone(), col));
        }
    }
    let k = kept.len();
    let mut matrix = vec![vec![0.0; k]; k];
    for i in 0..k {
        matrix[i][i] = 1.0;
        for j in i + 1..k {
            let r = pearson(kept[i].1, kept[j].1);
            matrix[i][j] = r;
            matrix[j][i] = r;
        }
    }
    Ok(CorrelationMatrix {
        attributes: kept.into_iter().map(|k| k.0).collect(),
        matrix,
        excluded,
    })
}
