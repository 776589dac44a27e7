use std::io::Write;

use serde::{Deserialize, Serialize};

use super::ScoredPair;
use crate::error::{Error, Result};

/// Per-label histograms over shared bin edges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityExport {
    /// `n_bins + 1` edges; the last bin is closed on the right.
    pub edges: Vec<f64>,
    pub negative: Vec<usize>,
    pub positive: Vec<usize>,
}

impl DensityExport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bin_start", "bin_end", "label_0", "label_1"])?;
        for i in 0..self.negative.len() {
            w.write_record([
                self.edges[i].to_string(),
                self.edges[i + 1].to_string(),
                self.negative[i].to_string(),
                self.positive[i].to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Histograms over the observed score range. A zero-width range yields a
/// single bin.
pub fn density_export(scored: &[ScoredPair], n_bins: usize) -> Result<DensityExport> {
    if scored.is_empty() {
        return Err(Error::EmptyInput("no scores to bin".into()));
    }
    if n_bins == 0 {
        return Err(Error::Config("n_bins must be positive".into()));
    }
    if scored.iter().any(|s| !s.score.is_finite()) {
        return Err(Error::UndefinedMetric("non-finite score".into()));
    }
    let lo = scored.iter().map(|s| s.score).fold(f64::INFINITY, f64::min);
    let hi = scored.iter().map(|s| s.score).fold(f64::NEG_INFINITY, f64::max);
    let n_bins = if lo == hi { 1 } else { n_bins };
    let width = (hi - lo) / n_bins as f64;
    let mut edges: Vec<f64> = (0..n_bins).map(|i| lo + i as f64 * width).collect();
    edges.push(hi);

    let mut negative = vec![0; n_bins];
    let mut positive = vec![0; n_bins];
    for s in scored {
        // Bin from the arithmetic guess, then nudged against the stored edges
        // so a score equal to an edge lands in the bin that edge opens.
        let mut b = if width > 0.0 {
            (((s.score - lo) / width).floor() as usize).min(n_bins - 1)
        } else {
            0
        };
        if b + 1 < n_bins && s.score >= edges[b + 1] {
            b += 1;
        } else if b > 0 && s.score < edges[b] {
            b -= 1;
        }
        if s.label == 1 {
            positive[b] += 1;
        } else {
            negative[b] += 1;
        }
    }
    Ok(DensityExport {
        edges,
        negative,
        positive,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    /// `matrix[i][j] = score(rows[i], columns[j])`.
    pub matrix: Vec<Vec<f64>>,
}

impl Heatmap {
    /// First row holds the column labels; every other row starts with its label.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![String::new()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        for (label, row) in self.rows.iter().zip(&self.matrix) {
            let mut rec = vec![label.clone()];
            rec.extend(row.iter().map(|x| x.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

pub fn heatmap_export<F>(left: &[String], right: &[String], mut scorer: F) -> Result<Heatmap>
where
    F: FnMut(&str, &str) -> Result<f64>,
{
    if left.is_empty() || right.is_empty() {
        return Err(Error::EmptyInput("heatmap needs at least one text per axis".into()));
    }
    let matrix = left
        .iter()
        .map(|l| right.iter().map(|r| scorer(l, r)).collect::<Result<Vec<f64>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok(Heatmap {
        rows: left.to_vec(),
        columns: right.to_vec(),
        matrix,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scored(scores: &[f64], labels: &[u8]) -> Vec<ScoredPair> {
        scores
            .iter()
            .zip(labels)
            .enumerate()
            .map(|(i, (&s, &l))| ScoredPair {
                resume_id: format!("r{i}"),
                vacancy_id: format!("v{i}"),
                score: s,
                label: l,
                run_id: "t".into(),
            })
            .collect()
    }

    #[test]
    fn extremes_fill_outer_bins() {
        let d = density_export(&scored(&[1.0, 1.0, 0.0, 0.0, 0.0], &[1, 1, 0, 0, 0]), 50).unwrap();
        assert_eq!(d.edges.len(), 51);
        assert_eq!(d.positive[49], 2);
        assert_eq!(d.negative[0], 3);
        assert_eq!(d.positive.iter().sum::<usize>(), 2);
        assert_eq!(d.negative.iter().sum::<usize>(), 3);
    }

    #[test]
    fn single_sample_single_bin() {
        let d = density_export(&scored(&[0.3], &[1]), 50).unwrap();
        assert_eq!(d.positive, vec![1]);
        assert_eq!(d.negative, vec![0]);
        assert_eq!(d.edges, vec![0.3, 0.3]);
    }

    #[test]
    fn hand_binned_four_samples() {
        // Range [0.1, 0.8] in 4 bins of width 0.175: edges 0.1, 0.275, 0.45, 0.625, 0.8.
        let d = density_export(&scored(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]), 4).unwrap();
        assert_eq!(d.negative, vec![1, 1, 0, 0]);
        assert_eq!(d.positive, vec![0, 1, 0, 1]);
    }

    #[test]
    fn heatmap_shape_and_errors() {
        let left = vec!["a b".to_string(), "c".to_string()];
        let right = vec!["a b".to_string()];
        let h = heatmap_export(&left, &right, |l, r| Ok(if l == r { 1.0 } else { 0.0 })).unwrap();
        assert_eq!(h.matrix, vec![vec![1.0], vec![0.0]]);
        assert!(matches!(heatmap_export(&[], &right, |_, _| Ok(0.0)), Err(Error::EmptyInput(_))));
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), ",a b\na b,1\nc,0\n");
    }
}
