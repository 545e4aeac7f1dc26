//! Chain-quality statistics over stored draws.
//!
//! Effective sample sizes use batch means with batch size `⌊√N⌋`. All
//! statistics work in `f64` on post-burn-in samples.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Minimum chain length for the batch-means estimators.
pub const MIN_ESS_LEN: usize = 100;

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample autocorrelation at `lag` with the biased `1/N` denominator.
pub fn acf(series: &[f64], lag: usize) -> Result<f64> {
    let n = series.len();
    if n <= lag {
        return Err(Error::Undefined(format!("ACF at lag {lag} needs more than {lag} draws, got {n}")));
    }
    let m = mean(series);
    let c0: f64 = series.iter().map(|x| (x - m) * (x - m)).sum();
    if !(c0 > 0.0) {
        return Err(Error::Undefined("ACF of a constant series".into()));
    }
    let ck: f64 = series.windows(lag + 1).map(|w| (w[0] - m) * (w[lag] - m)).sum();
    Ok(ck / c0)
}

struct Batches {
    size: usize,
    count: usize,
}

fn batches(n: usize) -> Result<Batches> {
    if n < MIN_ESS_LEN {
        return Err(Error::Undefined(format!(
            "batch-means estimates need at least {MIN_ESS_LEN} draws, got {n}"
        )));
    }
    let size = (n as f64).sqrt().floor() as usize;
    Ok(Batches { size, count: n / size })
}

/// Batch-means estimate of the asymptotic variance `σ²` in
/// `√N(x̄ − μ) → N(0, σ²)`.
pub fn batch_means_variance(series: &[f64]) -> Result<f64> {
    let b = batches(series.len())?;
    let used = &series[..b.size * b.count];
    let m = mean(used);
    let ss: f64 = used
        .chunks_exact(b.size)
        .map(|c| {
            let d = mean(c) - m;
            d * d
        })
        .sum();
    Ok(b.size as f64 * ss / (b.count - 1) as f64)
}

/// Monte Carlo standard error of the sample mean.
pub fn batch_means_mcse(series: &[f64]) -> Result<f64> {
    Ok((batch_means_variance(series)? / series.len() as f64).sqrt())
}

fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Effective sample size `N σ̂² / σ̂²_BM`, capped at `N`.
pub fn ess(series: &[f64]) -> Result<f64> {
    let n = series.len();
    let bm = batch_means_variance(series)?;
    let var = sample_variance(series);
    if !(var > 0.0) {
        return Err(Error::Undefined("ESS of a constant series".into()));
    }
    if !(bm > 0.0) {
        return Ok(n as f64);
    }
    Ok((n as f64 * var / bm).min(n as f64))
}

fn column_means(chain: &DMatrix<f64>) -> DVector<f64> {
    chain.row_mean().transpose()
}

fn covariance(chain: &DMatrix<f64>) -> DMatrix<f64> {
    let n = chain.nrows();
    let mut c = chain.clone();
    let m = column_means(chain);
    for mut row in c.row_iter_mut() {
        row -= m.transpose();
    }
    c.tr_mul(&c) / (n - 1) as f64
}

/// Coordinates involved in a linear dependence among the columns of `chain`.
fn dependent_coordinates(chain: &DMatrix<f64>) -> Vec<usize> {
    let d = chain.ncols();
    let mut centered = chain.clone();
    let m = column_means(chain);
    for mut row in centered.row_iter_mut() {
        row -= m.transpose();
    }
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut independent: Vec<usize> = Vec::new();
    let mut involved = vec![false; d];
    for j in 0..d {
        let col = centered.column(j).into_owned();
        let scale = col.norm();
        let mut r = col.clone();
        for q in &basis {
            r -= q * q.dot(&r);
        }
        if scale == 0.0 || r.norm() <= 1e-9 * scale {
            involved[j] = true;
            if independent.is_empty() {
                continue;
            }
            // Coefficients on the original independent columns.
            let b = centered.select_columns(independent.iter());
            if let Some(chol) = b.tr_mul(&b).cholesky() {
                let coef = chol.solve(&b.tr_mul(&col));
                for (k, &i) in independent.iter().enumerate() {
                    if coef[k].abs() * b.column(k).norm() > 1e-9 * scale {
                        involved[i] = true;
                    }
                }
            }
        } else {
            let nr = r.norm();
            basis.push(r / nr);
            independent.push(j);
        }
    }
    (0..d).filter(|&j| involved[j]).collect()
}

/// Multivariate ESS `N (|Σ| / |Σ_BM|)^{1/d}`, capped at `N`.
pub fn mess(chain: &DMatrix<f64>) -> Result<f64> {
    let (n, d) = chain.shape();
    if d == 0 {
        return Err(Error::Undefined("mESS of a zero-dimensional chain".into()));
    }
    let b = batches(n)?;
    if b.count <= d {
        return Err(Error::Undefined(format!(
            "mESS needs more batches ({}) than coordinates ({d})",
            b.count
        )));
    }
    let sigma = covariance(chain);
    let singular = || Error::SingularCovariance {
        coordinates: dependent_coordinates(chain),
    };
    let chol = sigma.clone().cholesky().ok_or_else(singular)?;
    let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    if !log_det.is_finite() || !dependent_coordinates(chain).is_empty() {
        return Err(singular());
    }

    let used = chain.rows(0, b.size * b.count);
    let m = used.row_mean();
    let mut bm = DMatrix::zeros(d, d);
    for k in 0..b.count {
        let dev = (used.rows(k * b.size, b.size).row_mean() - &m).transpose();
        bm += &dev * dev.transpose();
    }
    bm *= b.size as f64 / (b.count - 1) as f64;
    let bm_chol = bm
        .cholesky()
        .ok_or_else(|| Error::Undefined("batch-means covariance is not positive definite".into()))?;
    let bm_log_det: f64 = 2.0 * bm_chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let value = n as f64 * ((log_det - bm_log_det) / d as f64).exp();
    Ok(value.min(n as f64))
}

/// Mean squared Euclidean jump over rows `B..N`, averaged over the
/// `N − B − 1` jumps between consecutive stored rows.
pub fn msj(chain: &DMatrix<f64>, burn_in: usize) -> Result<f64> {
    let n = chain.nrows();
    if n <= burn_in + 1 {
        return Err(Error::Undefined(format!(
            "MSJ needs at least two rows after a burn-in of {burn_in}, chain has {n}"
        )));
    }
    let mut acc = 0.0;
    for i in burn_in..n - 1 {
        acc += (chain.row(i + 1) - chain.row(i)).norm_squared();
    }
    Ok(acc / (n - burn_in - 1) as f64)
}

/// Acceptance targets from the usual MALA and HMC guidance.
pub const MALA_TARGET_ACCEPT: f64 = 0.55;
pub const HMC_TARGET_ACCEPT: f64 = 0.70;

/// `ε′ = ε exp(c (α̂ − α*) / iter^0.6)` with `α̂` the mean of `history`.
pub fn adapt_step_size(history: &[f64], step_size: f64, target: f64, iter: usize, gain: f64) -> f64 {
    if history.is_empty() {
        return step_size;
    }
    let alpha = mean(history);
    step_size * (gain * (alpha - target) / (iter.max(1) as f64).powf(0.6)).exp()
}

/// Robbins-Monro step-size tuning used during burn-in.
#[derive(Debug, Clone)]
pub struct StepSizeAdapter {
    step_size: f64,
    target: f64,
    gain: f64,
    iter: usize,
    frozen: bool,
}

impl StepSizeAdapter {
    pub fn new(step_size: f64, target: f64) -> Self {
        Self {
            step_size,
            target,
            gain: 1.0,
            iter: 0,
            frozen: false,
        }
    }

    pub fn with_gain(mut self, gain: f64) -> Self {
        self.gain = gain;
        self
    }

    /// Feeds the latest acceptance probability and returns the new step size.
    /// Has no effect once frozen.
    pub fn update(&mut self, accept_prob: f64) -> f64 {
        if !self.frozen {
            self.iter += 1;
            self.step_size = adapt_step_size(&[accept_prob], self.step_size, self.target, self.iter, self.gain);
        }
        self.step_size
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn step_size(&self) -> f64 {
        self.step_size
    }
}

/// Diagnostics for one chain, grouped by coordinate-name prefix
/// (`u`, `beta`, `lambda`).
#[derive(Debug, Clone)]
pub struct ChainSummary {
    pub names: Vec<String>,
    pub n_draws: usize,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    /// `acf[j][k]` is the lag `k + 1` autocorrelation of coordinate `j`.
    pub acf: Vec<Vec<Option<f64>>>,
    pub ess: Vec<Option<f64>>,
    pub groups: Vec<GroupSummary>,
    pub acceptance_rate: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct GroupSummary {
    pub name: String,
    pub coordinates: Vec<usize>,
    pub mess: std::result::Result<f64, String>,
    pub msj: Option<f64>,
}

fn group_of(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

impl ChainSummary {
    pub fn new(names: &[String], draws: &DMatrix<f64>, acceptance_rate: Option<f64>, max_lag: usize) -> Self {
        let n = draws.nrows();
        let cols: Vec<Vec<f64>> = (0..draws.ncols()).map(|j| draws.column(j).iter().copied().collect()).collect();
        let means = cols.iter().map(|c| if c.is_empty() { f64::NAN } else { mean(c) }).collect();
        let sds = cols
            .iter()
            .map(|c| if c.len() < 2 { f64::NAN } else { sample_variance(c).sqrt() })
            .collect();
        let acf_table = cols
            .iter()
            .map(|c| (1..=max_lag).map(|k| acf(c, k).ok()).collect())
            .collect();
        let ess_col = cols.iter().map(|c| ess(c).ok()).collect();

        let mut group_names: Vec<&str> = Vec::new();
        for name in names {
            let g = group_of(name);
            if !group_names.contains(&g) {
                group_names.push(g);
            }
        }
        let mut groups = Vec::new();
        // β and λ are summarized jointly as well, as in the usual tables.
        let mut specs: Vec<(String, Vec<usize>)> = group_names
            .iter()
            .map(|g| {
                let idx = names.iter().enumerate().filter(|(_, n)| group_of(n) == *g).map(|(i, _)| i).collect();
                (g.to_string(), idx)
            })
            .collect();
        let joint: Vec<usize> = names
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(group_of(n), "beta" | "lambda"))
            .map(|(i, _)| i)
            .collect();
        if group_names.contains(&"beta") && group_names.contains(&"lambda") {
            specs.push(("beta+lambda".to_string(), joint));
        }
        for (name, idx) in specs {
            let sub = draws.select_columns(idx.iter());
            let mess_value = mess(&sub).map_err(|e| e.to_string());
            let msj_value = msj(&sub, 0).ok();
            groups.push(GroupSummary {
                name,
                coordinates: idx,
                mess: mess_value,
                msj: msj_value,
            });
        }
        Self {
            names: names.to_vec(),
            n_draws: n,
            means,
            sds,
            acf: acf_table,
            ess: ess_col,
            groups,
            acceptance_rate,
        }
    }

    /// Plain-text tables: posterior summary with ESS, ACF by lag, and the
    /// per-group mESS and MSJ.
    pub fn render(&self) -> String {
        let fmt = |v: Option<f64>, prec: usize| match v {
            Some(x) if x.is_finite() => format!("{x:.prec$}"),
            _ => "NA".to_string(),
        };
        let width = self.names.iter().map(|n| n.len()).max().unwrap_or(4).max(10);
        let mut out = String::new();
        let _ = writeln!(out, "draws: {}", self.n_draws);
        if let Some(a) = self.acceptance_rate {
            let _ = writeln!(out, "acceptance rate: {a:.4}");
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<width$} {:>12} {:>12} {:>10}", "coordinate", "mean", "sd", "ESS");
        for (j, name) in self.names.iter().enumerate() {
            let _ = writeln!(
                out,
                "{:<width$} {:>12} {:>12} {:>10}",
                name,
                fmt(Some(self.means[j]), 4),
                fmt(Some(self.sds[j]), 4),
                fmt(self.ess[j], 0)
            );
        }
        let lags = self.acf.first().map_or(0, |r| r.len());
        if lags > 0 {
            let _ = writeln!(out);
            let _ = write!(out, "{:<width$}", "ACF lag");
            for k in 1..=lags {
                let _ = write!(out, " {:>8}", k);
            }
            let _ = writeln!(out);
            for (j, name) in self.names.iter().enumerate() {
                let _ = write!(out, "{:<width$}", name);
                for k in 0..lags {
                    let _ = write!(out, " {:>8}", fmt(self.acf[j][k], 3));
                }
                let _ = writeln!(out);
            }
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<width$} {:>10} {:>12}", "group", "mESS", "MSJ");
        for g in &self.groups {
            let _ = writeln!(
                out,
                "{:<width$} {:>10} {:>12}",
                g.name,
                fmt(g.mess.as_ref().ok().copied(), 0),
                fmt(g.msj, 4)
            );
        }
        for g in &self.groups {
            if let Err(e) = &g.mess {
                let _ = writeln!(out, "note: mESS for {} unavailable: {e}", g.name);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alternating_series() {
        let xs: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert!((acf(&xs, 1).unwrap() + 1.0).abs() < 2e-3);
        assert!((acf(&xs, 0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_series_is_undefined() {
        let xs = vec![3.0; 200];
        assert!(matches!(acf(&xs, 1), Err(Error::Undefined(_))));
        assert!(matches!(ess(&xs), Err(Error::Undefined(_))));
    }

    #[test]
    fn msj_of_alternating_chain() {
        let chain = DMatrix::from_fn(11, 2, |i, j| if i % 2 == 0 { 0.0 } else { [3.0, 4.0][j] });
        assert!((msj(&chain, 0).unwrap() - 25.0).abs() < 1e-12);
        assert!((msj(&chain, 4).unwrap() - 25.0).abs() < 1e-12);
        let constant = DMatrix::from_element(5, 3, 1.5);
        assert_eq!(msj(&constant, 0).unwrap(), 0.0);
    }

    #[test]
    fn duplicate_coordinate_is_singular() {
        let mut s = 1u64;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        };
        let chain = DMatrix::from_fn(400, 3, |_, _| next());
        let mut dup = DMatrix::zeros(400, 4);
        dup.columns_mut(0, 3).copy_from(&chain);
        dup.set_column(3, &(chain.column(1) * 2.0));
        match mess(&dup) {
            Err(Error::SingularCovariance { coordinates }) => assert_eq!(coordinates, vec![1, 3]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn adaptation_signs() {
        assert_eq!(adapt_step_size(&[0.55], 0.3, 0.55, 10, 1.0), 0.3);
        let mut a = StepSizeAdapter::new(1.0, 0.55);
        let mut prev = a.step_size();
        for _ in 0..100 {
            let e = a.update(0.0);
            assert!(e < prev);
            prev = e;
        }
        a.freeze();
        assert_eq!(a.update(1.0), prev);
    }
}
