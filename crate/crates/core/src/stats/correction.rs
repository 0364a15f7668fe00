use crate::error::{Error, Result};

/// Harmonic factor `c(m) = Σ_{j=1..m} 1/j`.
pub fn harmonic(m: usize) -> f64 {
    (1..=m).map(|j| 1.0 / j as f64).sum()
}

/// Benjamini-Yekutieli adjusted p-values for `m` hypotheses (normally
/// `p.len()`), returned in input order.
pub fn by_correction(p: &[f64], m: usize) -> Result<Vec<f64>> {
    if let Some(bad) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Stats(format!("p-value {bad} outside [0, 1]")));
    }
    if m < p.len() {
        return Err(Error::Stats(format!("m = {m} is smaller than the {} p-values", p.len())));
    }
    let factor = m as f64 * harmonic(m);
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
    let mut adjusted = vec![0.0; p.len()];
    let mut running = f64::INFINITY;
    for (rank, &i) in order.iter().enumerate().rev() {
        running = running.min(factor * p[i] / (rank + 1) as f64);
        adjusted[i] = running.min(1.0);
    }
    Ok(adjusted)
}
