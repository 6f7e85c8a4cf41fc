use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{batch_similarity, Corpus, Samples};
use crate::error::{Error, Result};
use crate::estimator::{estimate_final, EstimatorConfig, Permutation};
use crate::model::{evaluate, DifferentiableModel};
use crate::numerics::{indexed_seed, rng_from_seed, stats, ParamVector};
use crate::store::UpdateTermStore;
use crate::trainer::{train_final, ReferenceTrajectory};

/// Default permutations per heatmap cell.
pub const DEFAULT_CELL_SAMPLES: usize = 3;

/// An order with `batch` at `position` and the other batches shuffled by
/// Fisher-Yates over the free positions.
pub fn pinned_permutation(len: usize, batch: usize, position: usize, rng: &mut impl Rng) -> Result<Permutation> {
    if batch >= len || position >= len {
        return Err(Error::Input(format!("cannot pin batch {batch} at position {position} of {len}")));
    }
    let mut others: Vec<usize> = (0..len).filter(|&b| b != batch).collect();
    for i in (1..others.len()).rev() {
        let j = rng.random_range(0..=i);
        others.swap(i, j);
    }
    others.insert(position, batch);
    Permutation::new(others)
}

/// How final parameters for an order are obtained.
#[derive(Clone, Copy)]
pub enum Source<'a> {
    Estimated {
        store: &'a UpdateTermStore,
        config: EstimatorConfig,
    },
    Oracle,
}

impl Source<'_> {
    pub fn label(&self) -> &'static str {
        match self {
            Source::Estimated { config, .. } => config.mode.label(),
            Source::Oracle => "oracle",
        }
    }

    fn final_params(
        &self,
        traj: &ReferenceTrajectory,
        model: &dyn DifferentiableModel,
        corpus: &Corpus,
        perm: &Permutation,
    ) -> Result<ParamVector> {
        match self {
            Source::Estimated { store, config } => estimate_final(store, traj, perm, config),
            Source::Oracle => train_final(model, corpus, perm, &traj.config, traj.theta(0)),
        }
    }
}

/// `cells[i][j]`: mean final metric when batch `i` sits at position `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub cells: Vec<Vec<f64>>,
    pub samples_per_cell: usize,
    pub source: String,
    pub target: String,
    pub seed: u64,
}

impl Heatmap {
    pub fn size(&self) -> usize {
        self.cells.len()
    }

    pub fn flattened(&self) -> Vec<f64> {
        self.cells.iter().flatten().copied().collect()
    }

    /// Per-row Spearman correlation between position and cell value.
    pub fn row_position_correlations(&self) -> Vec<f64> {
        let pos: Vec<f64> = (0..self.size()).map(|j| j as f64).collect();
        self.cells.iter().map(|row| stats::spearman(&pos, row)).collect()
    }

    /// Mean of the finite row correlations; negative when later positions
    /// give lower (better) metrics.
    pub fn recency(&self) -> f64 {
        let rs: Vec<f64> = self.row_position_correlations().into_iter().filter(|r| r.is_finite()).collect();
        stats::mean(&rs)
    }

    /// Least-squares slope of each row against position.
    pub fn row_slopes(&self) -> Vec<f64> {
        let pos: Vec<f64> = (0..self.size()).map(|j| j as f64).collect();
        self.cells.iter().map(|row| stats::slope(&pos, row)).collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["batch".to_string()];
        header.extend((0..self.size()).map(|j| format!("pos{j}")));
        w.write_record(&header).map_err(csv_err)?;
        for (i, row) in self.cells.iter().enumerate() {
            let mut rec = vec![i.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub struct PinningSetup<'a> {
    pub traj: &'a ReferenceTrajectory,
    pub model: &'a dyn DifferentiableModel,
    pub corpus: &'a Corpus,
}

fn pinned_grid<'t>(
    setup: &PinningSetup<'_>,
    source: Source<'_>,
    n: usize,
    seed: u64,
    target: impl Fn(usize) -> &'t Samples + Sync,
    target_label: &str,
) -> Result<Heatmap> {
    if n == 0 {
        return Err(Error::Input("heatmap cells need at least one permutation".into()));
    }
    let t = setup.traj.num_steps();
    let cells: Vec<f64> = (0..t * t)
        .into_par_iter()
        .map(|c| {
            let (i, j) = (c / t, c % t);
            let mut rng = rng_from_seed(indexed_seed(seed, "pin", &[i as u64, j as u64]));
            let mut total = 0.0;
            for _ in 0..n {
                let perm = pinned_permutation(t, i, j, &mut rng)?;
                let theta = source.final_params(setup.traj, setup.model, setup.corpus, &perm)?;
                total += evaluate(setup.model, &theta, target(i))?.metric();
            }
            let v = total / n as f64;
            if !v.is_finite() {
                return Err(Error::Numeric(format!("non-finite heatmap cell ({i}, {j})")));
            }
            Ok(v)
        })
        .collect::<Result<_>>()?;
    Ok(Heatmap {
        cells: cells.chunks(t).map(<[f64]>::to_vec).collect(),
        samples_per_cell: n,
        source: source.label().to_string(),
        target: target_label.to_string(),
        seed,
    })
}

/// `M[i][j]`: metric on `B_i` itself when `B_i` is trained at position `j`.
pub fn memorization_heatmap(setup: &PinningSetup<'_>, source: Source<'_>, n: usize, seed: u64) -> Result<Heatmap> {
    let corpus = setup.corpus;
    pinned_grid(setup, source, n, seed, |i| &corpus.train[i].samples, "batch")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityGroups {
    pub similarities: Vec<f64>,
    /// Mean similarity, the split threshold.
    pub tau: f64,
    pub high: Vec<usize>,
    pub low: Vec<usize>,
}

/// Split batches at the mean similarity to `dataset`; ties go high.
pub fn similarity_groups(corpus: &Corpus, dataset: &Samples) -> Result<SimilarityGroups> {
    let similarities = corpus
        .train
        .iter()
        .map(|b| batch_similarity(&b.samples, dataset))
        .collect::<Result<Vec<_>>>()?;
    Ok(split_by_mean(similarities))
}

pub fn split_by_mean(similarities: Vec<f64>) -> SimilarityGroups {
    let tau = stats::mean(&similarities);
    // averaging equal values can land an ulp away from them
    let cut = tau - 1e-12 * tau.abs().max(1.0);
    let (high, low) = (0..similarities.len()).partition(|&i| similarities[i] >= cut);
    SimilarityGroups { similarities, tau, high, low }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationReport {
    /// Row `i`: metric on the dataset with `B_i` pinned at each position.
    pub curves: Heatmap,
    pub groups: SimilarityGroups,
    pub high_mean: Vec<f64>,
    pub low_mean: Vec<f64>,
}

fn group_mean(curves: &Heatmap, rows: &[usize]) -> Vec<f64> {
    (0..curves.size())
        .map(|j| stats::mean(&rows.iter().map(|&i| curves.cells[i][j]).collect::<Vec<_>>()))
        .collect()
}

/// Pinning protocol scored on a held-out dataset, with batches grouped by
/// token-frequency similarity to it.
pub fn generalization_curves(
    setup: &PinningSetup<'_>,
    source: Source<'_>,
    dataset: &Samples,
    n: usize,
    seed: u64,
) -> Result<GeneralizationReport> {
    let curves = pinned_grid(setup, source, n, seed, |_| dataset, "dataset")?;
    let groups = similarity_groups(setup.corpus, dataset)?;
    Ok(GeneralizationReport {
        high_mean: group_mean(&curves, &groups.high),
        low_mean: group_mean(&curves, &groups.low),
        curves,
        groups,
    })
}

/// Fraction of `rows` whose position-trend slopes share a sign.
pub fn slope_sign_agreement(a: &Heatmap, b: &Heatmap, rows: &[usize]) -> f64 {
    if rows.is_empty() {
        return f64::NAN;
    }
    let (sa, sb) = (a.row_slopes(), b.row_slopes());
    let agree = rows.iter().filter(|&&i| sa[i].signum() == sb[i].signum()).count();
    agree as f64 / rows.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn pinned_orders_are_valid_and_pinned(len in 1usize..12, seed in any::<u64>(), a in 0usize..12, b in 0usize..12) {
            let (i, j) = (a % len, b % len);
            let p = pinned_permutation(len, i, j, &mut rng_from_seed(seed)).unwrap();
            prop_assert_eq!(p.len(), len);
            prop_assert_eq!(p.as_slice()[j], i);
        }
    }

    #[test]
    fn pinning_out_of_range_fails() {
        assert!(pinned_permutation(3, 3, 0, &mut rng_from_seed(0)).is_err());
        assert!(pinned_permutation(3, 0, 5, &mut rng_from_seed(0)).is_err());
    }

    #[test]
    fn identical_similarities_form_one_group() {
        let g = split_by_mean(vec![0.1 + 0.2; 7]);
        assert_eq!(g.high.len(), 7);
        assert!(g.low.is_empty());
    }

    #[test]
    fn split_is_at_the_mean() {
        let g = split_by_mean(vec![0.2, 0.9, 0.5, 0.4]);
        assert_eq!(g.tau, 0.5);
        assert_eq!(g.high, vec![1, 2]);
        assert_eq!(g.low, vec![0, 3]);
    }

    fn map(cells: Vec<Vec<f64>>) -> Heatmap {
        Heatmap { cells, samples_per_cell: 1, source: "x".into(), target: "batch".into(), seed: 0 }
    }

    #[test]
    fn recency_of_decreasing_rows_is_negative() {
        let h = map(vec![vec![3.0, 2.0, 1.0], vec![5.0, 4.5, 4.0], vec![1.0, 1.0, 1.0]]);
        assert_eq!(h.recency(), -1.0);
        let up = map(vec![vec![1.0, 2.0, 3.0], vec![0.0, 1.0, 5.0], vec![2.0, 2.5, 9.0]]);
        assert_eq!(up.recency(), 1.0);
    }

    #[test]
    fn slope_agreement_counts_matching_signs() {
        let a = map(vec![vec![1.0, 2.0], vec![2.0, 1.0], vec![0.0, 1.0]]);
        let b = map(vec![vec![0.0, 3.0], vec![0.0, 1.0], vec![0.0, 0.5]]);
        assert!((slope_sign_agreement(&a, &b, &[0, 1, 2]) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(slope_sign_agreement(&a, &b, &[0]), 1.0);
    }

    #[test]
    fn csv_has_one_row_per_batch() {
        let h = map(vec![vec![1.0, 2.0], vec![3.0, 4.5]]);
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "batch,pos0,pos1\n0,1,2\n1,3,4.5\n");
    }
}
