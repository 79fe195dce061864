//! Convex tonic/phasic decomposition of skin conductance.
//!
//! The (standardised) signal `y` is modelled as
//! `y = M q + B l + C d + e`, where `M q` is the phasic response of a sparse,
//! non-negative driver `p = A q` filtered through a Bateman kernel written as
//! an ARMA recursion, `B l` is a cubic spline on coarse knots, `C d` a linear
//! trend and `e` the residual. The quadratic program
//!
//! ```text
//! minimise   ½‖M q + B l + C d − y‖² + α·1ᵀA q + ½γ‖l‖²
//! subject to A q ≥ 0
//! ```
//!
//! is solved with an interior-point QP solver.

use std::collections::HashMap;
use std::path::Path;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettingsBuilder, DefaultSolver, IPSolver, NonnegativeConeT, SolverStatus};
use serde::{Deserialize, Serialize};

use crate::dataset::Series;
use crate::error::{Error, Result};
use crate::signal;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecompositionConfig {
    /// Rate the signal is resampled to before solving (Hz).
    pub fs_solve: f64,
    pub tau0_s: f64,
    pub tau1_s: f64,
    pub knot_spacing_s: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub tolerance: f64,
    pub max_iter: u32,
}

impl Default for DecompositionConfig {
    fn default() -> Self {
        Self {
            fs_solve: 4.0,
            tau0_s: 2.0,
            tau1_s: 0.7,
            knot_spacing_s: 10.0,
            alpha: 8e-4,
            gamma: 1e-2,
            tolerance: 1e-8,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdaDecomposition {
    /// The signal actually decomposed (after resampling).
    pub input: Series,
    pub tonic: Series,
    pub phasic: Series,
    pub residual: Series,
    /// Non-negative sudomotor driver.
    pub driver: Vec<f64>,
    pub solver_iterations: u32,
}

impl EdaDecomposition {
    /// Writes `t_s,raw,tonic,phasic`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t_s", "raw", "tonic", "phasic"])?;
        for (i, t) in self.input.times().enumerate() {
            w.write_record([
                t.to_string(),
                self.input.values()[i].to_string(),
                self.tonic.values()[i].to_string(),
                self.phasic.values()[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Sparse matrix as columns of (row, value).
struct Columns {
    rows: usize,
    cols: Vec<Vec<(usize, f64)>>,
}

impl Columns {
    fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        for (c, col) in self.cols.iter().enumerate() {
            for &(r, v) in col {
                out[r] += v * x[c];
            }
        }
        out
    }

    fn tmul(&self, y: &[f64]) -> Vec<f64> {
        self.cols
            .iter()
            .map(|col| col.iter().map(|&(r, v)| v * y[r]).sum())
            .collect()
    }
}

/// Second-order recursion `rows i >= 2: coef[0] x_i + coef[1] x_{i-1} + coef[2] x_{i-2}`.
fn banded(n: usize, coef: [f64; 3]) -> Columns {
    let mut cols = vec![Vec::new(); n];
    for i in 2..n {
        for (k, &c) in coef.iter().enumerate() {
            cols[i - k].push((i, c));
        }
    }
    Columns { rows: n, cols }
}

fn spline_basis(n: usize, knot_samples: usize) -> Columns {
    let k = knot_samples.max(2);
    // order-1 triangle convolved with itself gives a cubic B-spline shape
    let tri: Vec<f64> = (1..k).chain((1..=k).rev()).map(|v| v as f64).collect();
    let mut spl = vec![0.0; 2 * tri.len() - 1];
    for (i, a) in tri.iter().enumerate() {
        for (j, b) in tri.iter().enumerate() {
            spl[i + j] += a * b;
        }
    }
    let peak = spl.iter().cloned().fold(f64::MIN, f64::max);
    spl.iter_mut().for_each(|v| *v /= peak);
    let half = (spl.len() / 2) as isize;
    let mut cols = Vec::new();
    let mut centre = 0;
    while centre < n {
        let col: Vec<(usize, f64)> = spl
            .iter()
            .enumerate()
            .filter_map(|(j, &v)| {
                let r = centre as isize + j as isize - half;
                (r >= 0 && (r as usize) < n).then_some((r as usize, v))
            })
            .collect();
        cols.push(col);
        centre += k;
    }
    Columns { rows: n, cols }
}

/// Decomposes an EDA trace into tonic, phasic and residual parts.
pub fn decompose_tonic(eda: &Series) -> Result<EdaDecomposition> {
    decompose_with(eda, &DecompositionConfig::default())
}

pub fn decompose_with(eda: &Series, cfg: &DecompositionConfig) -> Result<EdaDecomposition> {
    if eda.fs() < 1.0 {
        return Err(Error::Domain(format!("EDA sampled at {} Hz; need at least 1 Hz", eda.fs())));
    }
    if eda.duration_s() < 30.0 {
        return Err(Error::InsufficientData(format!(
            "EDA lasts {:.1} s; need at least 30 s",
            eda.duration_s()
        )));
    }
    if let Some(v) = eda.values().iter().find(|v| **v <= 0.0) {
        return Err(Error::Domain(format!("EDA must be positive, found {v}")));
    }
    let input = if eda.fs() > cfg.fs_solve {
        eda.resample(cfg.fs_solve)?
    } else {
        eda.clone()
    };
    let fs = input.fs();
    let raw = input.values();
    let n = raw.len();
    let mean = signal::mean(raw);
    let sd = signal::std(raw);
    let series = |v: Vec<f64>| Series::new(v, fs, input.units());

    if raw.iter().all(|v| *v == raw[0]) {
        return Ok(EdaDecomposition {
            tonic: input.clone(),
            phasic: series(vec![0.0; n])?,
            residual: series(vec![0.0; n])?,
            driver: vec![0.0; n],
            solver_iterations: 0,
            input,
        });
    }
    let y: Vec<f64> = raw.iter().map(|v| (v - mean) / sd).collect();

    let delta = 1.0 / fs;
    let a1 = 1.0 / cfg.tau0_s.min(cfg.tau1_s);
    let a0 = 1.0 / cfg.tau0_s.max(cfg.tau1_s);
    let denom = (a1 - a0) * delta * delta;
    let ar = [
        (a1 * delta + 2.0) * (a0 * delta + 2.0) / denom,
        (2.0 * a1 * a0 * delta * delta - 8.0) / denom,
        (a1 * delta - 2.0) * (a0 * delta - 2.0) / denom,
    ];
    let a_mat = banded(n, ar);
    let m_mat = banded(n, [1.0, 2.0, 1.0]);
    let b_mat = spline_basis(n, (cfg.knot_spacing_s / delta).round() as usize);
    let nb = b_mat.cols.len();
    let c_mat = Columns {
        rows: n,
        cols: vec![
            (0..n).map(|i| (i, 1.0)).collect(),
            (0..n).map(|i| (i, (i + 1) as f64 / n as f64)).collect(),
        ],
    };

    // Variable layout: [q (n) | l (nb) | d (2)]
    let nvar = n + nb + 2;
    let design: Vec<&Vec<(usize, f64)>> = m_mat
        .cols
        .iter()
        .chain(b_mat.cols.iter())
        .chain(c_mat.cols.iter())
        .collect();
    let mut by_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (c, col) in design.iter().enumerate() {
        for &(r, v) in col.iter() {
            by_row[r].push((c, v));
        }
    }
    let mut hess: HashMap<(usize, usize), f64> = HashMap::new();
    for row in &by_row {
        for &(ci, vi) in row {
            for &(cj, vj) in row {
                if ci <= cj {
                    *hess.entry((ci, cj)).or_insert(0.0) += vi * vj;
                }
            }
        }
    }
    for j in n..n + nb {
        *hess.entry((j, j)).or_insert(0.0) += cfg.gamma;
    }
    let p_mat = csc_from_entries(nvar, nvar, hess.into_iter().collect());

    let ones = vec![1.0; n];
    let alpha_driver = a_mat.tmul(&ones);
    let mut lin = Vec::with_capacity(nvar);
    lin.extend(m_mat.tmul(&y).iter().zip(&alpha_driver).map(|(my, ad)| cfg.alpha * ad - my));
    lin.extend(b_mat.tmul(&y).iter().map(|v| -v));
    lin.extend(c_mat.tmul(&y).iter().map(|v| -v));

    // -A q + s = 0, s >= 0  (rows 0 and 1 of A are empty)
    let mut cons = Vec::new();
    for (c, col) in a_mat.cols.iter().enumerate() {
        for &(r, v) in col {
            cons.push(((r - 2, c), -v));
        }
    }
    let ncons = n - 2;
    let g_mat = csc_from_entries(ncons, nvar, cons);
    let rhs = vec![0.0; ncons];

    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(cfg.max_iter)
        .tol_gap_abs(cfg.tolerance)
        .tol_gap_rel(cfg.tolerance)
        .tol_feas(cfg.tolerance)
        .build()
        .map_err(|e| Error::Decomposition(format!("solver settings: {e:?}")))?;
    let cones = [NonnegativeConeT(ncons)];
    let mut solver = DefaultSolver::new(&p_mat, &lin, &g_mat, &rhs, &cones, settings)
        .map_err(|e| Error::Decomposition(format!("solver setup: {e:?}")))?;
    solver.solve();
    let sol = &solver.solution;
    match sol.status {
        SolverStatus::Solved => {}
        SolverStatus::AlmostSolved => log::warn!(
            "EDA decomposition reached reduced accuracy after {} iterations",
            sol.iterations
        ),
        status => {
            return Err(Error::Decomposition(format!(
                "solver stopped with {status:?} after {} iterations (primal residual {:.3e}, dual residual {:.3e})",
                sol.iterations, sol.r_prim, sol.r_dual
            )))
        }
    }
    let x = &sol.x;
    let q = &x[..n];
    let l = &x[n..n + nb];
    let d = &x[n + nb..];
    let driver: Vec<f64> = a_mat.mul(q).iter().map(|v| v.max(0.0) * sd).collect();
    let phasic_z = m_mat.mul(q);
    let spline = b_mat.mul(l);
    let trend = c_mat.mul(d);
    let tonic_z: Vec<f64> = spline.iter().zip(&trend).map(|(a, b)| a + b).collect();

    let tonic: Vec<f64> = tonic_z.iter().map(|t| mean + sd * t).collect();
    let phasic: Vec<f64> = phasic_z.iter().map(|r| sd * r).collect();
    let residual: Vec<f64> = (0..n).map(|i| raw[i] - tonic[i] - phasic[i]).collect();

    Ok(EdaDecomposition {
        tonic: series(tonic)?,
        phasic: series(phasic)?,
        residual: series(residual)?,
        driver,
        solver_iterations: sol.iterations,
        input,
    })
}

/// Builds a CSC matrix from (row, col) entries; duplicates must already be merged.
fn csc_from_entries(m: usize, n: usize, mut entries: Vec<((usize, usize), f64)>) -> CscMatrix<f64> {
    entries.sort_by_key(|&((r, c), _)| (c, r));
    let mut colptr = vec![0usize; n + 1];
    let mut rowval = Vec::with_capacity(entries.len());
    let mut nzval = Vec::with_capacity(entries.len());
    for &((r, c), v) in &entries {
        colptr[c + 1] += 1;
        rowval.push(r);
        nzval.push(v);
    }
    for c in 0..n {
        colptr[c + 1] += colptr[c];
    }
    CscMatrix::new(m, n, colptr, rowval, nzval)
}
