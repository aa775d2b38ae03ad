use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributionKind {
    /// Lasso regression weights.
    Coefficients,
    /// Forest mean decrease in impurity.
    Importances,
    /// Absolute input gradients of the recurrent network.
    Saliency,
}

impl AttributionKind {
    /// Name of the value column in the exported CSV.
    pub fn value_label(self) -> &'static str {
        match self {
            AttributionKind::Coefficients => "coefficient",
            AttributionKind::Importances => "importance",
            AttributionKind::Saliency => "saliency",
        }
    }
}

impl fmt::Display for AttributionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.value_label())
    }
}

/// Per-feature importance for one model, location and horizon.
///
/// Coefficient and importance maps have one row per feature and a single
/// column. Saliency maps have one row per input step (oldest first) and one
/// column per input channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionMap {
    pub kind: AttributionKind,
    pub model: String,
    pub location: String,
    pub horizon: usize,
    pub row_labels: Vec<String>,
    pub column_labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl AttributionMap {
    /// Single-column map over named features.
    pub fn per_feature(kind: AttributionKind, names: &[String], values: &[f64]) -> Self {
        AttributionMap {
            kind,
            model: String::new(),
            location: String::new(),
            horizon: 0,
            row_labels: names.to_vec(),
            column_labels: vec![kind.value_label().to_string()],
            values: values.iter().map(|v| vec![*v]).collect(),
        }
    }

    pub fn with_context(
        mut self,
        model: impl Into<String>,
        location: impl Into<String>,
        horizon: usize,
    ) -> Self {
        self.model = model.into();
        self.location = location.into();
        self.horizon = horizon;
        self
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.row_labels.len(), self.column_labels.len())
    }

    /// `(feature, value)` pairs of a single-column map, by descending
    /// magnitude. Equal magnitudes keep their original order.
    pub fn ranked(&self) -> Vec<(String, f64)> {
        let mut v: Vec<(String, f64)> = self
            .row_labels
            .iter()
            .zip(&self.values)
            .map(|(l, row)| (l.clone(), row[0]))
            .collect();
        v.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()));
        v
    }

    /// Element-wise mean of maps with identical labels. Returns `None` for an
    /// empty slice.
    pub fn average(maps: &[AttributionMap]) -> Option<AttributionMap> {
        let first = maps.first()?;
        let mut out = first.clone();
        for m in &maps[1..] {
            for (orow, row) in out.values.iter_mut().zip(&m.values) {
                for (o, v) in orow.iter_mut().zip(row) {
                    *o += v;
                }
            }
        }
        let n = maps.len() as f64;
        out.values.iter_mut().flatten().for_each(|v| *v /= n);
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranking_and_average() {
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let m1 =
            AttributionMap::per_feature(AttributionKind::Coefficients, &names, &[0.1, -3.0, 1.0]);
        let m2 =
            AttributionMap::per_feature(AttributionKind::Coefficients, &names, &[0.3, -1.0, 1.0]);
        let r = m1.ranked();
        assert_eq!(r[0], ("b".to_string(), -3.0));
        assert_eq!(r[2].0, "a");
        let avg = AttributionMap::average(&[m1, m2]).unwrap();
        assert_eq!(avg.values, vec![vec![0.2], vec![-2.0], vec![1.0]]);
        assert!(AttributionMap::average(&[]).is_none());
    }
}
