//! Dataset files: CSV with a header naming `y`, optional `trials`,
//! covariates `x1..xp` and grouping factors `g1..gr`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{logistic, Family, ModelSpec};
use crate::rng::RngStream;
use crate::special::norm_cdf;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: Vec<u64>,
    pub trials: Option<Vec<u64>>,
    /// `m × p`
    pub x: DMatrix<f64>,
    /// `groups[j][i]` is the level of observation `i` in factor `j`.
    pub groups: Vec<Vec<String>>,
}

enum Column {
    Y,
    Trials,
    X(usize),
    G(usize),
}

fn classify(name: &str) -> Option<Column> {
    let index = |rest: &str| rest.parse::<usize>().ok().filter(|&k| k >= 1);
    match name {
        "y" => Some(Column::Y),
        "trials" => Some(Column::Trials),
        _ => {
            if let Some(k) = name.strip_prefix('x').and_then(index) {
                Some(Column::X(k))
            } else {
                name.strip_prefix('g').and_then(index).map(Column::G)
            }
        }
    }
}

fn check_contiguous(prefix: char, mut ks: Vec<usize>) -> Result<usize> {
    ks.sort_unstable();
    for (i, &k) in ks.iter().enumerate() {
        if k != i + 1 {
            return Err(Error::Config(format!(
                "columns {prefix}1..{prefix}{} must all be present exactly once",
                ks.len()
            )));
        }
    }
    Ok(ks.len())
}

impl Dataset {
    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Config(format!("cannot open dataset '{}': {e}", path.display())))?;
        Self::from_reader(file).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("dataset '{}': {msg}", path.display())),
            other => other,
        })
    }

    pub fn from_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers().map_err(|e| Error::Config(e.to_string()))?.clone();
        let mut y_col = None;
        let mut trials_col = None;
        let mut xs = Vec::new();
        let mut gs = Vec::new();
        for (c, name) in header.iter().enumerate() {
            match classify(name) {
                Some(Column::Y) if y_col.is_none() => y_col = Some(c),
                Some(Column::Trials) if trials_col.is_none() => trials_col = Some(c),
                Some(Column::X(k)) => xs.push((k, c)),
                Some(Column::G(k)) => gs.push((k, c)),
                _ => return Err(Error::Config(format!("unexpected or repeated column '{name}'"))),
            }
        }
        let y_col = y_col.ok_or_else(|| Error::Config("missing column 'y'".into()))?;
        let p = check_contiguous('x', xs.iter().map(|&(k, _)| k).collect())?;
        let r = check_contiguous('g', gs.iter().map(|&(k, _)| k).collect())?;
        xs.sort_unstable();
        gs.sort_unstable();

        let mut y = Vec::new();
        let mut trials = Vec::new();
        let mut xvals = Vec::new();
        let mut groups = vec![Vec::new(); r];
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Config(format!("row {}: {e}", row + 2)))?;
            let line = row + 2;
            let count = |c: usize, what: &str| -> Result<u64> {
                rec[c].parse::<u64>().map_err(|_| {
                    Error::Config(format!("line {line}: {what} '{}' is not a nonnegative integer", &rec[c]))
                })
            };
            y.push(count(y_col, "y")?);
            if let Some(c) = trials_col {
                trials.push(count(c, "trials")?);
            }
            for &(k, c) in &xs {
                let v: f64 = rec[c]
                    .parse()
                    .ok()
                    .filter(|v: &f64| v.is_finite())
                    .ok_or_else(|| Error::Config(format!("line {line}: x{k} '{}' is not a finite number", &rec[c])))?;
                xvals.push(v);
            }
            for (j, &(_, c)) in gs.iter().enumerate() {
                groups[j].push(rec[c].to_string());
            }
        }
        if y.is_empty() {
            return Err(Error::Config("no observations".into()));
        }
        let m = y.len();
        Ok(Self {
            y,
            trials: trials_col.map(|_| trials),
            x: DMatrix::from_row_slice(m, p, &xvals),
            groups,
        })
    }

    /// Levels of each factor in order of first appearance.
    pub fn levels(&self) -> Vec<Vec<String>> {
        self.groups
            .iter()
            .map(|g| {
                let mut seen: Vec<String> = Vec::new();
                for label in g {
                    if !seen.contains(label) {
                        seen.push(label.clone());
                    }
                }
                seen
            })
            .collect()
    }

    /// One-hot `Z`, one block per factor, columns in level order.
    pub fn z_matrix(&self) -> (DMatrix<f64>, Vec<usize>) {
        let levels = self.levels();
        let blocks: Vec<usize> = levels.iter().map(|l| l.len()).collect();
        let q: usize = blocks.iter().sum();
        let mut z = DMatrix::zeros(self.n_obs(), q);
        let mut offset = 0;
        for (g, lv) in self.groups.iter().zip(&levels) {
            for (i, label) in g.iter().enumerate() {
                let k = lv.iter().position(|l| l == label).expect("label is a level");
                z[(i, offset + k)] = 1.0;
            }
            offset += lv.len();
        }
        (z, blocks)
    }

    pub fn to_model(&self, family: Family) -> Result<ModelSpec<f64>> {
        if self.groups.is_empty() {
            return Err(Error::Config("dataset has no grouping factor (columns g1..gr)".into()));
        }
        let (z, blocks) = self.z_matrix();
        ModelSpec::new(family, self.y.clone(), self.trials.clone(), self.x.clone(), z, blocks)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let io = |e: csv::Error| Error::Config(format!("cannot write '{}': {e}", path.display()));
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        let mut header = vec!["y".to_string()];
        if self.trials.is_some() {
            header.push("trials".into());
        }
        header.extend((1..=self.x.ncols()).map(|k| format!("x{k}")));
        header.extend((1..=self.groups.len()).map(|k| format!("g{k}")));
        w.write_record(&header).map_err(io)?;
        for i in 0..self.n_obs() {
            let mut rec = vec![self.y[i].to_string()];
            if let Some(t) = &self.trials {
                rec.push(t[i].to_string());
            }
            rec.extend(self.x.row(i).iter().map(|v| v.to_string()));
            rec.extend(self.groups.iter().map(|g| g[i].clone()));
            w.write_record(&rec).map_err(io)?;
        }
        w.flush().map_err(|e| Error::Config(format!("cannot write '{}': {e}", path.display())))
    }
}

/// Parameters a dataset was simulated from.
#[derive(Debug, Clone, Serialize)]
pub struct Truth {
    pub family: Family,
    pub seed: u64,
    pub beta: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Random effects per factor as `(level, value)` pairs.
    pub u: Vec<Vec<(String, f64)>>,
}

pub struct SimulationSpec {
    pub family: Family,
    pub m: usize,
    pub p: usize,
    pub intercept: bool,
    pub blocks: Vec<usize>,
    pub beta: Vec<f64>,
    pub lambda: Vec<f64>,
    pub trials: u64,
}

/// Draws covariates, balanced group labels, `u ~ N(0, D(λ)⁻¹)` and responses
/// given `u`.
pub fn simulate(rng: &mut RngStream, spec: &SimulationSpec) -> Result<(Dataset, Truth)> {
    let (m, p) = (spec.m, spec.p);
    if m == 0 || spec.blocks.is_empty() || spec.blocks.iter().any(|&q| q == 0 || q > m) {
        return Err(Error::Config(
            "simulate needs m >= 1 and every block size between 1 and m".into(),
        ));
    }
    if spec.beta.len() != p || spec.lambda.len() != spec.blocks.len() {
        return Err(Error::Config(format!(
            "simulate: beta needs {p} entries and lambda {} entries",
            spec.blocks.len()
        )));
    }
    if spec.lambda.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return Err(Error::Config("simulate: lambda must be positive and finite".into()));
    }
    if spec.family.is_binomial() && spec.trials == 0 {
        return Err(Error::Config("simulate: trials must be at least 1".into()));
    }
    let mut x = DMatrix::zeros(m, p);
    for i in 0..m {
        for k in 0..p {
            x[(i, k)] = if k == 0 && spec.intercept {
                1.0
            } else {
                rng.sample(StandardNormal)
            };
        }
    }
    let mut groups = Vec::new();
    let mut idx = Vec::new();
    for &q in &spec.blocks {
        let mut g: Vec<usize> = (0..m).map(|i| i % q).collect();
        g.shuffle(rng);
        groups.push(g.iter().map(|&k| format!("L{}", k + 1)).collect::<Vec<_>>());
        idx.push(g);
    }
    let mut u = Vec::new();
    for (&q, &lam) in spec.blocks.iter().zip(&spec.lambda) {
        let sd = lam.sqrt().recip();
        u.push((0..q).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect::<Vec<f64>>());
    }
    let eta = &x * DVector::from_column_slice(&spec.beta);
    let mut y = Vec::with_capacity(m);
    for i in 0..m {
        let e = eta[i] + idx.iter().zip(&u).map(|(g, uj)| uj[g[i]]).sum::<f64>();
        let draw = match spec.family {
            Family::PoissonLog => Poisson::new(e.exp())
                .map_err(|err| Error::Domain(format!("simulate: Poisson mean {}: {err}", e.exp())))?
                .sample(rng) as u64,
            fam => {
                let prob = if fam == Family::Probit { norm_cdf(e) } else { logistic(e) };
                Binomial::new(spec.trials, prob)
                    .map_err(|err| Error::Domain(format!("simulate: success probability {prob}: {err}")))?
                    .sample(rng)
            }
        };
        y.push(draw);
    }
    let trials = (spec.family.is_binomial() && spec.trials != 1).then(|| vec![spec.trials; m]);
    let truth = Truth {
        family: spec.family,
        seed: rng.seed(),
        beta: spec.beta.clone(),
        lambda: spec.lambda.clone(),
        u: u
            .iter()
            .map(|uj| uj.iter().enumerate().map(|(k, &v)| (format!("L{}", k + 1), v)).collect())
            .collect(),
    };
    Ok((Dataset { y, trials, x, groups }, truth))
}
