//! Per-question-type statistics of the layer attention weights.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use super::data::{Dataset, SyntheticSample, NUM_QUESTION_TYPES};
use super::dropout::Dropout;
use crate::encoder::NUM_LEVELS;
use crate::error::Result;
use crate::graph::Graph;
use crate::model::Dcn;

pub const QUESTION_TYPE_NAMES: [&str; NUM_QUESTION_TYPES] = ["what_is", "which_attribute", "describe"];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlphaStats {
    pub group: String,
    pub count: usize,
    pub mean: [f64; NUM_LEVELS],
    pub std: [f64; NUM_LEVELS],
}

/// Mean and population standard deviation of every level weight per group.
/// Empty groups are skipped with a warning on stderr.
pub fn alpha_stats(groups: &[(String, Vec<[f64; NUM_LEVELS]>)]) -> Vec<AlphaStats> {
    groups
        .iter()
        .filter_map(|(name, rows)| {
            if rows.is_empty() {
                eprintln!("warning: group {name} has no samples, skipped");
                return None;
            }
            let n = rows.len() as f64;
            let mean: [f64; NUM_LEVELS] = std::array::from_fn(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n);
            let std = std::array::from_fn(|j| (rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt());
            Some(AlphaStats {
                group: name.clone(),
                count: rows.len(),
                mean,
                std,
            })
        })
        .collect()
}

/// Level weights of one sample in evaluation mode.
pub fn layer_alpha(model: &Dcn, data: &Dataset, sample: &SyntheticSample) -> Result<[f64; NUM_LEVELS]> {
    let ex = data.example(sample)?;
    let mut g = Graph::with_params(model.params());
    let out = model.forward(&mut g, &ex, &mut Dropout::eval())?;
    let a = g.value(out.layer_alpha).data();
    Ok(std::array::from_fn(|j| a[j]))
}

pub fn layer_attention_stats(model: &Dcn, data: &Dataset, samples: &[SyntheticSample]) -> Result<Vec<AlphaStats>> {
    let alphas: Vec<[f64; NUM_LEVELS]> = samples
        .par_iter()
        .map(|s| layer_alpha(model, data, s))
        .collect::<Result<_>>()?;
    let mut groups: Vec<(String, Vec<[f64; NUM_LEVELS]>)> =
        QUESTION_TYPE_NAMES.iter().map(|n| (n.to_string(), Vec::new())).collect();
    for (s, a) in samples.iter().zip(alphas) {
        groups[s.question_type].1.push(a);
    }
    Ok(alpha_stats(&groups))
}

/// `group` label followed by the four means and four standard deviations.
pub fn stats_csv(stats: &[AlphaStats]) -> String {
    let mut out = String::from("group,mean_1,mean_2,mean_3,mean_4,std_1,std_2,std_3,std_4\n");
    for s in stats {
        out.push_str(&s.group);
        for v in s.mean.iter().chain(&s.std) {
            let _ = write!(out, ",{v:?}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_sample_has_zero_std() {
        let s = alpha_stats(&[("a".into(), vec![[0.1, 0.2, 0.3, 0.4]])]);
        assert_eq!(s[0].mean, [0.1, 0.2, 0.3, 0.4]);
        assert_eq!(s[0].std, [0.0; 4]);
    }

    #[test]
    fn two_sample_hand_case() {
        let s = alpha_stats(&[("a".into(), vec![[0.1, 0.2, 0.3, 0.4], [0.3, 0.2, 0.1, 0.4]])]);
        let m = s[0].mean;
        assert!((m[0] - 0.2).abs() < 1e-15 && (m[2] - 0.2).abs() < 1e-15);
        assert!((s[0].std[0] - 0.1).abs() < 1e-15);
        assert_eq!(s[0].std[1], 0.0);
        assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn empty_groups_skipped() {
        let s = alpha_stats(&[("a".into(), vec![]), ("b".into(), vec![[0.25; 4]])]);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].group, "b");
    }

    #[test]
    fn csv_has_eight_statistics() {
        let s = alpha_stats(&[("b".into(), vec![[0.25; 4]])]);
        let csv = stats_csv(&s);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0].split(',').count(), 9);
        assert_eq!(lines[1], "b,0.25,0.25,0.25,0.25,0.0,0.0,0.0,0.0");
    }
}
