//! ROC analysis of branch counts: "real" is the positive class and a patch
//! is called real when its count reaches the threshold.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default bootstrap resamples.
pub const DEFAULT_BOOTSTRAP: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// Ascending integer thresholds, from the smallest observed count to
    /// one past the largest.
    pub thresholds: Vec<i64>,
    pub tpr: Vec<f64>,
    pub fpr: Vec<f64>,
    pub auc: f64,
    /// 95% percentile bootstrap interval.
    pub auc_ci: (f64, f64),
    pub n_boot: usize,
}

/// `P(r > f) + ½ P(r = f)`: the Mann–Whitney statistic scaled by `n·m`.
pub fn auc_mann_whitney(real: &[u32], fake: &[u32]) -> f64 {
    let mut sorted = fake.to_vec();
    sorted.sort_unstable();
    let mut wins = 0.0;
    for &r in real {
        let below = sorted.partition_point(|&f| f < r);
        let upto = sorted.partition_point(|&f| f <= r);
        wins += below as f64 + 0.5 * (upto - below) as f64;
    }
    wins / (real.len() as f64 * fake.len() as f64)
}

fn fraction_at_least(sorted: &[u32], t: i64) -> f64 {
    let below = sorted.partition_point(|&v| i64::from(v) < t);
    (sorted.len() - below) as f64 / sorted.len() as f64
}

/// Linear-interpolated percentile of sorted values, `q` in [0, 1].
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Threshold sweep, trapezoidal AUC and a percentile bootstrap interval from
/// `n_boot` resamples (each list resampled with replacement).
pub fn branch_count_roc<R: Rng + ?Sized>(
    real_counts: &[u32],
    fake_counts: &[u32],
    n_boot: usize,
    rng: &mut R,
) -> Result<RocCurve> {
    if real_counts.is_empty() || fake_counts.is_empty() {
        return Err(Error::Argument(format!(
            "ROC needs both count lists non-empty (real {}, fake {})",
            real_counts.len(),
            fake_counts.len()
        )));
    }
    let mut real = real_counts.to_vec();
    let mut fake = fake_counts.to_vec();
    real.sort_unstable();
    fake.sort_unstable();
    let lo = i64::from(real[0].min(fake[0]));
    let hi = i64::from(*real.last().unwrap().max(fake.last().unwrap())) + 1;
    let thresholds: Vec<i64> = (lo..=hi).collect();
    let tpr: Vec<f64> = thresholds.iter().map(|&t| fraction_at_least(&real, t)).collect();
    let fpr: Vec<f64> = thresholds.iter().map(|&t| fraction_at_least(&fake, t)).collect();
    // Trapezoid area in integer counts, divided once, so separated and
    // identical inputs come out exactly 1 and ½.
    let at_least = |sorted: &[u32], t: i64| (sorted.len() - sorted.partition_point(|&v| i64::from(v) < t)) as u64;
    let twice_area: u64 = thresholds
        .windows(2)
        .map(|w| {
            let df = at_least(&fake, w[0]) - at_least(&fake, w[1]);
            df * (at_least(&real, w[0]) + at_least(&real, w[1]))
        })
        .sum();
    let auc = twice_area as f64 / (2.0 * real.len() as f64 * fake.len() as f64);

    let auc_ci = if n_boot == 0 {
        (auc, auc)
    } else {
        let mut boots: Vec<f64> = (0..n_boot)
            .map(|_| {
                let r: Vec<u32> = (0..real.len()).map(|_| real[rng.random_range(0..real.len())]).collect();
                let f: Vec<u32> = (0..fake.len()).map(|_| fake[rng.random_range(0..fake.len())]).collect();
                auc_mann_whitney(&r, &f)
            })
            .collect();
        boots.sort_by(f64::total_cmp);
        (percentile(&boots, 0.025), percentile(&boots, 0.975))
    };
    Ok(RocCurve {
        thresholds,
        tpr,
        fpr,
        auc,
        auc_ci,
        n_boot,
    })
}
