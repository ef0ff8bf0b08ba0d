use super::Graph;
use crate::error::{Result, SimError};
use crate::par;
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

/// Largest n for which dense eigen decompositions and exact mixing are run.
pub const ORACLE_CAP: usize = 4096;

const MAX_MIXING_STEPS: usize = 20_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralProfile {
    /// max |mu_i| over all non-trivial eigenvalues of the transition matrix.
    pub second_eigenvalue_modulus: f64,
    /// Second largest eigenvalue, signed.
    pub second_eigenvalue: f64,
    /// (1 - second_eigenvalue) / 2.
    pub cheeger_lower_bound: f64,
    /// Max over start nodes of the first t with ||P^t e_v - pi||_inf <= 1/n^3.
    pub mixing_time: usize,
    pub lazy: bool,
}

/// Exact spectral profile of the simple walk `A/d` (or `(I + A/d)/2` when lazy).
pub fn spectral_profile(g: &Graph, lazy: bool) -> Result<SpectralProfile> {
    let n = g.n();
    if n > ORACLE_CAP {
        return Err(SimError::OracleCap { n, cap: ORACLE_CAP });
    }
    let d = g.d() as f64;
    let mut m = DMatrix::<f64>::zeros(n, n);
    for v in 0..n {
        for &w in g.neighbors(v as u32) {
            m[(v, w as usize)] = 1.0 / d;
        }
    }
    let mut eig: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    if lazy {
        eig.iter_mut().for_each(|x| *x = (1.0 + *x) / 2.0);
    }
    eig.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let second = eig[1];
    let modulus = eig[1..].iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    let adj: Vec<Vec<u32>> = (0..n as u32).map(|v| g.neighbors(v).to_vec()).collect();
    Ok(SpectralProfile {
        second_eigenvalue_modulus: modulus,
        second_eigenvalue: second,
        cheeger_lower_bound: (1.0 - second) / 2.0,
        mixing_time: mixing_time_of(&adj, n, lazy, 3.0)?,
        lazy,
    })
}

/// Exact `1/n_ref^exponent` mixing time of the simple walk on an arbitrary
/// connected adjacency structure, by iterating every point mass.
pub fn mixing_time_of(adj: &[Vec<u32>], n_ref: usize, lazy: bool, exponent: f64) -> Result<usize> {
    let m = adj.len();
    let two_e: usize = adj.iter().map(Vec::len).sum();
    if m == 0 || two_e == 0 {
        return Err(SimError::NotMixing(0));
    }
    let pi: Vec<f64> = adj.iter().map(|a| a.len() as f64 / two_e as f64).collect();
    let eps = (n_ref as f64).powf(-exponent);
    let starts: Vec<usize> = (0..m).collect();
    let times = par::map(&starts, |&v| {
        let mut p = vec![0.0; m];
        p[v] = 1.0;
        let mut next = vec![0.0; m];
        for t in 0..=MAX_MIXING_STEPS {
            if p.iter().zip(&pi).all(|(a, b)| (a - b).abs() <= eps) {
                return Some(t);
            }
            step(adj, &p, &mut next, lazy);
            std::mem::swap(&mut p, &mut next);
        }
        None
    });
    times
        .into_iter()
        .try_fold(0, |acc, t| t.map(|t| acc.max(t)))
        .ok_or(SimError::NotMixing(MAX_MIXING_STEPS))
}

/// One step of the walk distribution: `next = p P`.
pub(crate) fn step(adj: &[Vec<u32>], p: &[f64], next: &mut [f64], lazy: bool) {
    next.iter_mut().for_each(|x| *x = 0.0);
    for (u, list) in adj.iter().enumerate() {
        if p[u] == 0.0 {
            continue;
        }
        let share = p[u] / list.len() as f64;
        for &w in list {
            next[w as usize] += share;
        }
    }
    if lazy {
        for (x, &old) in next.iter_mut().zip(p) {
            *x = 0.5 * (*x + old);
        }
    }
}
