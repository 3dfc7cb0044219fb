//! Performance-matrix bookkeeping, average accuracy/forgetting, and timing
//! aggregation.
//!
//! Row `i` of the matrix holds the accuracy on every task `j <= i` measured
//! after training through task `i` (0-based). Average accuracy at `i` is the
//! mean of row `i`; average forgetting at `i` is the mean drop of each
//! earlier task's accuracy from its own just-trained diagonal value, defined
//! from the second row on and typically negative. Accuracies are stored as
//! fractions in `[0,1]`; rendering as percentages is a reporting concern.

use serde::ser::SerializeSeq;
use serde::{Serialize, Serializer};

use crate::{Error, Result};

/// Lower-triangular accuracy matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceMatrix {
    size: usize,
    entries: Vec<f64>,
    populated: Vec<bool>,
}

impl PerformanceMatrix {
    pub fn new(num_tasks: usize) -> Self {
        PerformanceMatrix {
            size: num_tasks,
            entries: vec![0.0; num_tasks * num_tasks],
            populated: vec![false; num_tasks * num_tasks],
        }
    }

    pub fn num_tasks(&self) -> usize {
        self.size
    }

    fn index(&self, i: usize, j: usize) -> Result<usize> {
        if i >= self.size || j >= self.size {
            return Err(Error::Metric(format!(
                "entry ({i},{j}) out of range for {} tasks",
                self.size
            )));
        }
        if j > i {
            return Err(Error::Metric(format!(
                "entry ({i},{j}) is in the upper triangle: task {j} has not been seen at step {i}"
            )));
        }
        Ok(i * self.size + j)
    }

    /// Records the accuracy on task `j` after training through task `i`.
    /// Rejects upper-triangle writes and overwrites.
    pub fn record(&mut self, i: usize, j: usize, accuracy: f64) -> Result<()> {
        let idx = self.index(i, j)?;
        if self.populated[idx] {
            return Err(Error::Metric(format!("entry ({i},{j}) already recorded")));
        }
        if !(0.0..=1.0).contains(&accuracy) {
            return Err(Error::Metric(format!(
                "accuracy {accuracy} outside [0,1] at ({i},{j})"
            )));
        }
        self.entries[idx] = accuracy;
        self.populated[idx] = true;
        Ok(())
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let idx = self.index(i, j).ok()?;
        self.populated[idx].then(|| self.entries[idx])
    }

    /// Mean accuracy over tasks `0..=i` after training through task `i`.
    pub fn average_accuracy(&self, i: usize) -> Result<f64> {
        let mut total = 0.0;
        for j in 0..=i {
            let idx = self.index(i, j)?;
            if !self.populated[idx] {
                return Err(Error::Metric(format!("entry ({i},{j}) not populated")));
            }
            total += self.entries[idx];
        }
        Ok(total / (i + 1) as f64)
    }

    /// Mean of `M[i][j] - M[j][j]` over `j < i`; undefined at the first row.
    pub fn average_forgetting(&self, i: usize) -> Result<f64> {
        if i == 0 {
            return Err(Error::Metric(
                "average forgetting is undefined before the second task".into(),
            ));
        }
        let mut total = 0.0;
        for j in 0..i {
            let (row_idx, diag_idx) = (self.index(i, j)?, self.index(j, j)?);
            if !self.populated[row_idx] || !self.populated[diag_idx] {
                return Err(Error::Metric(format!("entries for ({i},{j}) not populated")));
            }
            total += self.entries[row_idx] - self.entries[diag_idx];
        }
        Ok(total / i as f64)
    }

    /// Lower-triangle view as nested options (upper triangle is `None`).
    pub fn rows(&self) -> Vec<Vec<Option<f64>>> {
        (0..self.size)
            .map(|i| {
                (0..self.size)
                    .map(|j| if j <= i { self.get(i, j) } else { None })
                    .collect()
            })
            .collect()
    }

    /// CSV with one row per training step; unpopulated cells are empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("after_task");
        for j in 0..self.size {
            out.push_str(&format!(",task_{j}"));
        }
        out.push('\n');
        for i in 0..self.size {
            out.push_str(&i.to_string());
            for j in 0..self.size {
                out.push(',');
                if let Some(v) = self.get(i, j) {
                    out.push_str(&v.to_string());
                }
            }
            out.push('\n');
        }
        out
    }
}

impl Serialize for PerformanceMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let rows = self.rows();
        let mut seq = serializer.serialize_seq(Some(rows.len()))?;
        for row in rows {
            seq.serialize_element(&row)?;
        }
        seq.end()
    }
}

/// Wall-clock samples for one method, milliseconds per epoch.
#[derive(Debug, Clone)]
pub struct MethodTiming {
    pub method: String,
    pub train_ms: Vec<f64>,
    pub infer_ms: Vec<f64>,
}

/// Mean and sample standard deviation (zero for fewer than two samples).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (xs.len() - 1) as f64;
    (mean, var.sqrt())
}

/// Per-method timing summary row.
#[derive(Debug, Clone, Serialize)]
pub struct TimingSummaryRow {
    pub method: String,
    pub train_mean_ms: f64,
    pub train_std_ms: f64,
    pub infer_mean_ms: f64,
    pub infer_std_ms: f64,
}

/// Aggregated timing table.
#[derive(Debug, Clone, Serialize)]
pub struct TimingReport {
    pub rows: Vec<TimingSummaryRow>,
}

/// Summarizes per-epoch wall-clock samples; errors on an empty sample set.
pub fn timing_report(samples: &[MethodTiming]) -> Result<TimingReport> {
    if samples.is_empty() {
        return Err(Error::Metric("no timing samples".into()));
    }
    let mut rows = Vec::with_capacity(samples.len());
    for m in samples {
        if m.train_ms.is_empty() && m.infer_ms.is_empty() {
            return Err(Error::Metric(format!("method {} has no samples", m.method)));
        }
        let (train_mean_ms, train_std_ms) = mean_std(&m.train_ms);
        let (infer_mean_ms, infer_std_ms) = mean_std(&m.infer_ms);
        rows.push(TimingSummaryRow {
            method: m.method.clone(),
            train_mean_ms,
            train_std_ms,
            infer_mean_ms,
            infer_std_ms,
        });
    }
    Ok(TimingReport { rows })
}

impl TimingReport {
    fn row(&self, method: &str) -> Option<&TimingSummaryRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// `(train, inference)` mean-time ratios of `baseline` over `fast`;
    /// `None` when either method is absent.
    pub fn speedup(&self, baseline: &str, fast: &str) -> Option<(f64, f64)> {
        let b = self.row(baseline)?;
        let f = self.row(fast)?;
        Some((
            b.train_mean_ms / f.train_mean_ms,
            b.infer_mean_ms / f.infer_mean_ms,
        ))
    }

    /// CSV table: one row per method plus an `improv` ratio row
    /// (`N.NNx`) when both the GCN-trained and MLP-trained variants are
    /// present.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("method,train_mean_ms,train_std_ms,infer_mean_ms,infer_std_ms\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.4},{:.4},{:.4},{:.4}\n",
                r.method, r.train_mean_ms, r.train_std_ms, r.infer_mean_ms, r.infer_std_ms
            ));
        }
        if let Some((train, infer)) = self.speedup("ecgl_gcn_trainer", "ecgl") {
            out.push_str(&format!("improv,{train:.2}x,,{infer:.2}x,\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn record_then_read_back() {
        let mut m = PerformanceMatrix::new(3);
        m.record(0, 0, 0.9).unwrap();
        assert_eq!(m.get(0, 0), Some(0.9));
        assert_eq!(m.get(1, 0), None);
    }

    #[test]
    fn future_task_write_is_rejected() {
        let mut m = PerformanceMatrix::new(3);
        let err = m.record(0, 1, 0.5).unwrap_err();
        assert!(err.to_string().contains("upper triangle"));
    }

    #[test]
    fn overwrite_is_rejected() {
        let mut m = PerformanceMatrix::new(3);
        m.record(1, 0, 0.5).unwrap();
        let err = m.record(1, 0, 0.6).unwrap_err();
        assert!(err.to_string().contains("already recorded"));
    }

    #[test]
    fn out_of_range_accuracy_is_rejected() {
        let mut m = PerformanceMatrix::new(2);
        assert!(m.record(0, 0, 1.5).is_err());
        assert!(m.record(0, 0, -0.1).is_err());
    }

    #[test]
    fn average_accuracy_examples() {
        let mut m = PerformanceMatrix::new(3);
        m.record(0, 0, 0.9).unwrap();
        assert_abs_diff_eq!(m.average_accuracy(0).unwrap(), 0.9, epsilon = 1e-15);

        m.record(1, 0, 0.0).unwrap();
        m.record(1, 1, 0.0).unwrap();
        m.record(2, 0, 0.8).unwrap();
        m.record(2, 1, 0.75).unwrap();
        m.record(2, 2, 0.7).unwrap();
        assert_abs_diff_eq!(m.average_accuracy(2).unwrap(), 0.75, epsilon = 1e-15);
    }

    #[test]
    fn constant_matrix_has_constant_average_accuracy() {
        let c = 0.63;
        let mut m = PerformanceMatrix::new(4);
        for i in 0..4 {
            for j in 0..=i {
                m.record(i, j, c).unwrap();
            }
        }
        for i in 0..4 {
            assert_abs_diff_eq!(m.average_accuracy(i).unwrap(), c, epsilon = 1e-15);
        }
    }

    #[test]
    fn average_forgetting_single_pair() {
        let mut m = PerformanceMatrix::new(2);
        m.record(0, 0, 0.9).unwrap();
        m.record(1, 0, 0.8).unwrap();
        m.record(1, 1, 0.8).unwrap();
        assert_abs_diff_eq!(m.average_forgetting(1).unwrap(), -0.1, epsilon = 1e-15);
    }

    #[test]
    fn no_forgetting_matrix_scores_zero() {
        let mut m = PerformanceMatrix::new(3);
        let diag = [0.9, 0.8, 0.7];
        for i in 0..3 {
            for j in 0..=i {
                m.record(i, j, diag[j]).unwrap();
            }
        }
        for i in 1..3 {
            assert_abs_diff_eq!(m.average_forgetting(i).unwrap(), 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn average_forgetting_hand_example() {
        // diag (0.9, 0.8, 0.7), row3 (0.8, 0.75, 0.7)
        let mut m = PerformanceMatrix::new(3);
        m.record(0, 0, 0.9).unwrap();
        m.record(1, 0, 0.85).unwrap();
        m.record(1, 1, 0.8).unwrap();
        m.record(2, 0, 0.8).unwrap();
        m.record(2, 1, 0.75).unwrap();
        m.record(2, 2, 0.7).unwrap();
        assert_abs_diff_eq!(m.average_forgetting(2).unwrap(), -0.075, epsilon = 1e-15);
    }

    #[test]
    fn forgetting_undefined_at_first_row() {
        let mut m = PerformanceMatrix::new(2);
        m.record(0, 0, 0.9).unwrap();
        assert!(m.average_forgetting(0).is_err());
    }

    #[test]
    fn unpopulated_reads_are_errors() {
        let m = PerformanceMatrix::new(3);
        assert!(m.average_accuracy(1).is_err());
        let mut m2 = PerformanceMatrix::new(3);
        m2.record(1, 0, 0.5).unwrap();
        m2.record(1, 1, 0.5).unwrap();
        // diagonal of task 0 missing
        assert!(m2.average_forgetting(1).is_err());
    }

    #[test]
    fn final_row_metrics_invariant_under_task_relabeling() {
        // permute the earlier tasks together with their diagonal references;
        // the final row's AA and AF cannot change
        let diag = [0.9, 0.6, 0.8];
        let last = [0.7, 0.55, 0.65];
        let perm = [2usize, 0, 1];

        let build = |order: &[usize]| -> PerformanceMatrix {
            let mut m = PerformanceMatrix::new(4);
            for (j, &src) in order.iter().enumerate() {
                m.record(j, j, diag[src]).unwrap();
                for prev in 0..j {
                    m.record(j, prev, 0.5).unwrap(); // filler, never read at row 3
                }
            }
            for (j, &src) in order.iter().enumerate() {
                m.record(3, j, last[src]).unwrap();
            }
            m.record(3, 3, 0.6).unwrap();
            m
        };

        let base = build(&[0, 1, 2]);
        let permuted = build(&perm);
        assert_abs_diff_eq!(
            base.average_accuracy(3).unwrap(),
            permuted.average_accuracy(3).unwrap(),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            base.average_forgetting(3).unwrap(),
            permuted.average_forgetting(3).unwrap(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn csv_export_has_header_and_blank_upper_triangle() {
        let mut m = PerformanceMatrix::new(2);
        m.record(0, 0, 0.5).unwrap();
        m.record(1, 0, 0.25).unwrap();
        m.record(1, 1, 1.0).unwrap();
        let csv = m.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "after_task,task_0,task_1");
        assert_eq!(lines[1], "0,0.5,");
        assert_eq!(lines[2], "1,0.25,1");
    }

    #[test]
    fn timing_mean_and_std() {
        let report = timing_report(&[MethodTiming {
            method: "a".into(),
            train_ms: vec![10.0, 10.0, 10.0],
            infer_ms: vec![1.0],
        }])
        .unwrap();
        assert_abs_diff_eq!(report.rows[0].train_mean_ms, 10.0, epsilon = 1e-15);
        assert_abs_diff_eq!(report.rows[0].train_std_ms, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn timing_matches_two_pass_oracle() {
        let xs = [3.0, 7.5, 1.25, 9.0, 4.0];
        let (mean, std) = mean_std(&xs);
        let naive_mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let naive_var =
            xs.iter().map(|x| (x - naive_mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        assert_abs_diff_eq!(mean, naive_mean, epsilon = 1e-12);
        assert_abs_diff_eq!(std, naive_var.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn speedup_ratio_definition() {
        let report = timing_report(&[
            MethodTiming {
                method: "a".into(),
                train_ms: vec![100.0],
                infer_ms: vec![50.0],
            },
            MethodTiming {
                method: "b".into(),
                train_ms: vec![25.0],
                infer_ms: vec![25.0],
            },
        ])
        .unwrap();
        let (train, infer) = report.speedup("a", "b").unwrap();
        assert_abs_diff_eq!(train, 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(infer, 2.0, epsilon = 1e-15);
    }

    #[test]
    fn speedup_is_scale_invariant() {
        let scaled = |k: f64| {
            timing_report(&[
                MethodTiming {
                    method: "ecgl_gcn_trainer".into(),
                    train_ms: vec![80.0 * k, 120.0 * k],
                    infer_ms: vec![30.0 * k],
                },
                MethodTiming {
                    method: "ecgl".into(),
                    train_ms: vec![20.0 * k, 30.0 * k],
                    infer_ms: vec![10.0 * k],
                },
            ])
            .unwrap()
            .speedup("ecgl_gcn_trainer", "ecgl")
            .unwrap()
        };
        let (t1, i1) = scaled(1.0);
        let (t2, i2) = scaled(42.0);
        assert_abs_diff_eq!(t1, t2, epsilon = 1e-12);
        assert_abs_diff_eq!(i1, i2, epsilon = 1e-12);
    }

    #[test]
    fn ratio_row_is_formatted_with_x_suffix() {
        let report = timing_report(&[
            MethodTiming {
                method: "ecgl_gcn_trainer".into(),
                train_ms: vec![100.0],
                infer_ms: vec![40.0],
            },
            MethodTiming {
                method: "ecgl".into(),
                train_ms: vec![25.0],
                infer_ms: vec![20.0],
            },
        ])
        .unwrap();
        let csv = report.to_csv();
        assert!(csv.contains("improv,4.00x,,2.00x,"), "{csv}");
    }

    #[test]
    fn empty_sample_set_is_an_error() {
        assert!(timing_report(&[]).is_err());
        assert!(timing_report(&[MethodTiming {
            method: "a".into(),
            train_ms: vec![],
            infer_ms: vec![],
        }])
        .is_err());
    }
}
