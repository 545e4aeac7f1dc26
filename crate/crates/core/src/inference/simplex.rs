//! Derivative-free Nelder-Mead minimization.

use crate::error::{Error, Result};

/// Stopping rules and initial simplex size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexSettings {
    pub max_evals: usize,
    /// Offset of the initial vertices from the start point, per coordinate.
    pub initial_step: f64,
    /// Stop once the simplex diameter (max norm) falls below this.
    pub xtol: f64,
    /// ... and the spread of function values below this.
    pub ftol: f64,
}

impl Default for SimplexSettings {
    fn default() -> Self {
        Self {
            max_evals: 20_000,
            initial_step: 0.25,
            xtol: 1e-7,
            ftol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
}

fn eval(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], count: &mut usize) -> f64 {
    *count += 1;
    let v = f(x);
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// Minimizes `f` from `x0`. The search restarts once from the reported
/// minimum to guard against a collapsed simplex.
pub fn minimize(mut f: impl FnMut(&[f64]) -> f64, x0: &[f64], settings: &SimplexSettings) -> Result<Minimum> {
    let mut evals = 0;
    let first = run(&mut f, x0, settings, &mut evals)?;
    let second = run(&mut f, &first.x, settings, &mut evals)?;
    let best = if second.value <= first.value { second } else { first };
    if !best.value.is_finite() {
        return Err(Error::Optimizer {
            message: "objective is not finite at the best vertex".into(),
            last_iterate: best.x,
        });
    }
    Ok(Minimum { evals, ..best })
}

fn run(
    f: &mut impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    s: &SimplexSettings,
    evals: &mut usize,
) -> Result<Minimum> {
    let n = x0.len();
    if n == 0 {
        let value = eval(f, x0, evals);
        return Ok(Minimum {
            x: vec![],
            value,
            evals: *evals,
        });
    }
    let mut pts: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += if p[i] != 0.0 { s.initial_step * p[i].abs().max(1.0) } else { s.initial_step };
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| eval(f, p, evals)).collect();

    loop {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();

        let diameter = pts[1..]
            .iter()
            .flat_map(|p| p.iter().zip(&pts[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        let spread = vals[n] - vals[0];
        if diameter <= s.xtol && spread <= s.ftol {
            break;
        }
        if *evals >= s.max_evals {
            return Err(Error::Optimizer {
                message: format!("simplex search did not converge in {} evaluations", s.max_evals),
                last_iterate: pts[0].clone(),
            });
        }

        let centroid: Vec<f64> = (0..n).map(|k| pts[..n].iter().map(|p| p[k]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| -> Vec<f64> { (0..n).map(|k| centroid[k] + t * (pts[n][k] - centroid[k])).collect() };

        let xr = along(-1.0);
        let fr = eval(f, &xr, evals);
        if fr < vals[0] {
            let xe = along(-2.0);
            let fe = eval(f, &xe, evals);
            if fe < fr {
                pts[n] = xe;
                vals[n] = fe;
            } else {
                pts[n] = xr;
                vals[n] = fr;
            }
            continue;
        }
        if fr < vals[n - 1] {
            pts[n] = xr;
            vals[n] = fr;
            continue;
        }
        if fr < vals[n] {
            let xc = along(-0.5);
            let fc = eval(f, &xc, evals);
            if fc <= fr {
                pts[n] = xc;
                vals[n] = fc;
                continue;
            }
        } else {
            let xc = along(0.5);
            let fc = eval(f, &xc, evals);
            if fc < vals[n] {
                pts[n] = xc;
                vals[n] = fc;
                continue;
            }
        }
        for i in 1..=n {
            for k in 0..n {
                pts[i][k] = pts[0][k] + 0.5 * (pts[i][k] - pts[0][k]);
            }
            vals[i] = eval(f, &pts[i], evals);
        }
    }
    Ok(Minimum {
        x: pts[0].clone(),
        value: vals[0],
        evals: *evals,
    })
}
