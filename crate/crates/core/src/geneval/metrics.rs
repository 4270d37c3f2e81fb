use super::BinModel;
use crate::error::{Error, Result};

/// Pooled two-proportion z statistic. Zero when the pooled proportion is 0 or 1.
pub fn two_proportion_z(p1: f64, n1: usize, p2: f64, n2: usize) -> f64 {
    let (a, b) = (n1 as f64, n2 as f64);
    let pooled = (p1 * a + p2 * b) / (a + b);
    let var = pooled * (1.0 - pooled) * (1.0 / a + 1.0 / b);
    if var <= 0.0 {
        return 0.0;
    }
    (p1 - p2) / var.sqrt()
}

/// Two-sided critical value of the standard normal at level `alpha`.
pub fn critical_value(alpha: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::standard().inverse_cdf(1.0 - alpha / 2.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NdbResult {
    pub count: usize,
    pub z_scores: Vec<f64>,
    pub flagged: Vec<bool>,
    pub generated_proportions: Vec<f64>,
}

/// Number of bins whose generated share differs significantly from the
/// training share.
pub fn ndb(bins: &BinModel, generated: &[&[f32]]) -> Result<NdbResult> {
    if generated.is_empty() {
        return Err(Error::InvalidArgument("generated set is empty".into()));
    }
    let gp = bins.proportions_of(generated)?;
    Ok(ndb_from_proportions(&bins.proportions, bins.n_train, &gp, generated.len(), bins.alpha))
}

pub fn ndb_from_proportions(train: &[f64], n_train: usize, generated: &[f64], n_gen: usize, alpha: f64) -> NdbResult {
    let crit = critical_value(alpha);
    let z_scores: Vec<f64> = train
        .iter()
        .zip(generated)
        .map(|(&p, &q)| two_proportion_z(p, n_train, q, n_gen))
        .collect();
    let flagged: Vec<bool> = z_scores.iter().map(|z| z.abs() > crit).collect();
    NdbResult {
        count: flagged.iter().filter(|&&f| f).count(),
        z_scores,
        flagged,
        generated_proportions: generated.to_vec(),
    }
}

/// Jensen-Shannon divergence in nats.
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::dim("jsd needs two distributions of equal length"));
    }
    if p.iter().chain(q).any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidArgument("jsd: entries must be finite and non-negative".into()));
    }
    for (name, d) in [("p", p), ("q", q)] {
        let s: f64 = d.iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!("jsd: {name} sums to {s}")));
        }
    }
    let kl = |a: &[f64], m: &[f64]| -> f64 {
        a.iter()
            .zip(m)
            .filter(|(&x, _)| x > 0.0)
            .map(|(&x, &y)| x * (x / y).ln())
            .sum()
    };
    // accumulate the two halves symmetrically so jsd(p, q) == jsd(q, p)
    let m: Vec<f64> = p.iter().zip(q).map(|(&a, &b)| 0.5 * (a + b)).collect();
    let (kp, kq) = (kl(p, &m), kl(q, &m));
    let v = 0.5 * kp.min(kq) + 0.5 * kp.max(kq);
    Ok(v.clamp(0.0, std::f64::consts::LN_2))
}
