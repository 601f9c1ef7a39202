use serde::{Deserialize, Serialize};

use crate::error::CoreError;

/// Name and domain of one response variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableMeta {
    pub name: String,
    pub domain: (f64, f64),
}

/// One subject's irregular observations, one `(t, y)` list per variable.
/// Lists are sorted by time and may be empty for variables the subject was
/// never measured on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub id: String,
    pub observations: Vec<Vec<(f64, f64)>>,
}

impl Subject {
    pub fn count_for(&self, variable: usize) -> usize {
        self.observations[variable].len()
    }

    pub fn total_count(&self) -> usize {
        self.observations.iter().map(Vec::len).sum()
    }
}

/// Sparse longitudinal dataset: per-subject, per-variable `(time, value)`
/// observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseDataset {
    pub variables: Vec<VariableMeta>,
    pub subjects: Vec<Subject>,
}

impl SparseDataset {
    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_variables(&self) -> usize {
        self.variables.len()
    }

    /// All `(t, y)` pairs of one variable pooled across subjects.
    pub fn pooled(&self, variable: usize) -> (Vec<f64>, Vec<f64>) {
        let mut ts = Vec::new();
        let mut ys = Vec::new();
        for s in &self.subjects {
            for &(t, y) in &s.observations[variable] {
                ts.push(t);
                ys.push(y);
            }
        }
        (ts, ys)
    }

    /// Sample variance of all pooled values of one variable (1/(N-1)).
    pub fn pooled_variance(&self, variable: usize) -> f64 {
        let (_, ys) = self.pooled(variable);
        let n = ys.len();
        if n < 2 {
            return 0.0;
        }
        let mean: f64 = ys.iter().sum::<f64>() / n as f64;
        ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    }

    /// Checks structural invariants: consistent variable counts, sorted and
    /// in-domain times, and at least one observation per subject overall.
    pub fn validate(&self) -> Result<(), CoreError> {
        let p = self.variables.len();
        for s in &self.subjects {
            if s.observations.len() != p {
                return Err(CoreError::invalid(format!(
                    "subject `{}` carries {} variable lists, expected {p}",
                    s.id,
                    s.observations.len()
                )));
            }
            if s.total_count() == 0 {
                return Err(CoreError::invalid(format!(
                    "subject `{}` has no observations",
                    s.id
                )));
            }
            for (k, obs) in s.observations.iter().enumerate() {
                let (lo, hi) = self.variables[k].domain;
                for &(t, y) in obs {
                    if !(t >= lo && t <= hi) {
                        return Err(CoreError::OutOfDomain { t, lo, hi });
                    }
                    if !t.is_finite() || !y.is_finite() {
                        return Err(CoreError::invalid(format!(
                            "non-finite observation for subject `{}`",
                            s.id
                        )));
                    }
                }
                if obs.windows(2).any(|w| w[0].0 > w[1].0) {
                    return Err(CoreError::invalid(format!(
                        "times not sorted for subject `{}`, variable `{}`",
                        s.id, self.variables[k].name
                    )));
                }
            }
        }
        Ok(())
    }
}
