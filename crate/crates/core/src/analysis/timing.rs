use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const DEFAULT_N_VALUES: [usize; 4] = [10, 50, 100, 1000];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub n: usize,
    /// `build / n + estimate`, seconds per order.
    pub amortized_estimate: f64,
    pub retrain: f64,
    pub speedup: f64,
}

/// Amortised per-order estimation cost against retraining for each `n`.
pub fn timing_compare(store_build: f64, per_order_estimate: f64, per_order_retrain: f64, n_values: &[usize]) -> Vec<TimingRow> {
    n_values
        .iter()
        .filter(|&&n| n > 0)
        .map(|&n| {
            let amortized = store_build / n as f64 + per_order_estimate;
            TimingRow {
                n,
                amortized_estimate: amortized,
                retrain: per_order_retrain,
                speedup: per_order_retrain / amortized,
            }
        })
        .collect()
}

pub fn write_timing_csv<W: std::io::Write>(rows: &[TimingRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(super::heatmap::csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example() {
        let rows = timing_compare(40.0, 0.1, 10.0, &[10]);
        assert!((rows[0].amortized_estimate - 4.1).abs() < 1e-12);
        assert!(rows[0].amortized_estimate < rows[0].retrain);
    }

    #[test]
    fn large_n_approaches_estimate_cost() {
        let rows = timing_compare(40.0, 0.1, 10.0, &[1_000_000_000]);
        assert!((rows[0].amortized_estimate - 0.1).abs() < 1e-6);
    }

    #[test]
    fn zero_n_is_skipped_and_csv_has_header() {
        let rows = timing_compare(1.0, 1.0, 4.0, &[0, 1]);
        assert_eq!(rows.len(), 1);
        let mut buf = Vec::new();
        write_timing_csv(&rows, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("n,amortized_estimate,retrain,speedup\n1,2"));
    }
}
