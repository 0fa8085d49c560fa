//! Two-component PCA of the feature vectors.
//!
//! The top eigenpair of the sample covariance comes from power iteration; the
//! second from the same iteration on the Hotelling-deflated matrix
//! `C - λ₁ u₁ u₁ᵀ`, kept orthogonal to `u₁`. Start vectors are fixed, so the
//! scatter is reproducible bit for bit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureVector;

pub const MAX_ITERATIONS: usize = 10_000;
/// Power iteration stops once successive unit vectors are this close.
pub const STEP_TOLERANCE: f64 = 1e-12;
/// Largest acceptable `‖Cu − λu‖` for an iteration that hit the cap.
pub const RESIDUAL_TOLERANCE: f64 = 1e-8;
/// Relative eigengap below which the top two components are not unique.
pub const DEGENERATE_GAP: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProjectionError {
    #[error("need at least {needed} vectors, got {got}")]
    CorpusTooSmall { needed: usize, got: usize },
    #[error("vectors have inconsistent lengths")]
    Ragged,
    #[error("power iteration did not converge (residual {residual:e})")]
    Convergence { residual: f64 },
}

/// Dense square matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    n: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Matrix { n, data: vec![0.0; n * n] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        assert!(rows.iter().all(|r| r.len() == n), "matrix must be square");
        Matrix { n, data: rows.concat() }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        self.data.chunks_exact(self.n).map(|row| dot(row, v)).collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks_exact(self.n).map(<[f64]>::to_vec).collect()
    }

    /// Shift that makes every Gershgorin disc non-negative.
    fn gershgorin_shift(&self) -> f64 {
        (0..self.n)
            .map(|i| {
                let off: f64 = (0..self.n).filter(|&j| j != i).map(|j| self.get(i, j).abs()).sum();
                self.get(i, i) - off
            })
            .fold(0.0f64, |acc, lo| acc.max(-lo))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Sample covariance `(1/(n−1)) Σ (v−μ)(v−μ)ᵀ` and the mean.
pub fn covariance<R: AsRef<[f64]>>(vectors: &[R]) -> Result<(Matrix, Vec<f64>), ProjectionError> {
    if vectors.len() < 2 {
        return Err(ProjectionError::CorpusTooSmall { needed: 2, got: vectors.len() });
    }
    let d = vectors[0].as_ref().len();
    if vectors.iter().any(|v| v.as_ref().len() != d) {
        return Err(ProjectionError::Ragged);
    }
    let n = vectors.len() as f64;
    let mut mean = vec![0.0; d];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v.as_ref()) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut c = Matrix::zeros(d);
    let mut centered = vec![0.0; d];
    for v in vectors {
        for ((c, x), m) in centered.iter_mut().zip(v.as_ref()).zip(&mean) {
            *c = x - m;
        }
        for i in 0..d {
            for j in i..d {
                c.data[i * d + j] += centered[i] * centered[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = c.get(i, j) / (n - 1.0);
            c.set(i, j, v);
            c.set(j, i, v);
        }
    }
    Ok((c, mean))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenPair {
    pub value: f64,
    /// Unit norm; largest-magnitude entry positive.
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Top2 {
    pub first: EigenPair,
    pub second: EigenPair,
    /// The top two eigenvalues coincide, so the plane is fine but the axes
    /// within it are arbitrary.
    pub degenerate: bool,
}

fn remove_component(v: &mut [f64], along: Option<&[f64]>) {
    if let Some(u) = along {
        let p = dot(v, u);
        v.iter_mut().zip(u).for_each(|(x, ui)| *x -= p * ui);
    }
}

/// Normalized all-ones, then an alternating ramp for when the first start is
/// orthogonal to the dominant direction.
fn start_vectors(n: usize) -> [Vec<f64>; 2] {
    let ones = vec![1.0; n];
    let ramp = (0..n).map(|i| if i % 2 == 0 { (i + 1) as f64 } else { -((i + 1) as f64) }).collect();
    [ones, ramp]
}

struct Iterate {
    value: f64,
    vector: Vec<f64>,
    converged: bool,
}

fn power_iteration(c: &Matrix, shift: f64, start: &[f64], exclude: Option<&[f64]>) -> Option<Iterate> {
    let mut v = start.to_vec();
    remove_component(&mut v, exclude);
    let len = norm(&v);
    if len < 1e-6 * norm(start) {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= len);
    let mut converged = false;
    for _ in 0..MAX_ITERATIONS {
        let mut w = c.mul_vec(&v);
        w.iter_mut().zip(&v).for_each(|(wi, vi)| *wi += shift * vi);
        remove_component(&mut w, exclude);
        let len = norm(&w);
        if len == 0.0 {
            // v spans part of the null space of the shifted matrix.
            converged = true;
            break;
        }
        w.iter_mut().for_each(|x| *x /= len);
        let step = w.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        v = w;
        if step < STEP_TOLERANCE {
            converged = true;
            break;
        }
    }
    let value = dot(&v, &c.mul_vec(&v));
    Some(Iterate { value, vector: v, converged })
}

fn residual(c: &Matrix, value: f64, v: &[f64]) -> f64 {
    let cv = c.mul_vec(v);
    cv.iter().zip(v).map(|(a, b)| (a - value * b).powi(2)).sum::<f64>().sqrt()
}

/// Largest eigenvalue (by value) of `c` restricted to the complement of
/// `exclude`.
fn dominant(c: &Matrix, exclude: Option<&[f64]>) -> Result<EigenPair, ProjectionError> {
    let starts = start_vectors(c.dim());
    let mut worst = 0.0f64;
    for shift in [0.0, c.gershgorin_shift()] {
        let mut best: Option<Iterate> = None;
        for start in &starts {
            let Some(it) = power_iteration(c, shift, start, exclude) else { continue };
            let r = residual(c, it.value, &it.vector);
            if !it.converged && r > RESIDUAL_TOLERANCE {
                worst = worst.max(r);
                continue;
            }
            let better = match &best {
                None => true,
                Some(b) => it.value > b.value + 1e-9 * b.value.abs().max(1.0),
            };
            if better {
                best = Some(it);
            }
        }
        match best {
            // Without a shift, power iteration finds the largest magnitude;
            // that is the largest value only when it is non-negative.
            Some(b) if b.value >= 0.0 || shift > 0.0 => return Ok(EigenPair { value: b.value, vector: b.vector }),
            _ if shift == 0.0 && c.gershgorin_shift() == 0.0 => break,
            _ => {}
        }
    }
    Err(ProjectionError::Convergence { residual: worst })
}

fn canonical_sign(v: &mut [f64]) {
    let mut idx = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[idx].abs() {
            idx = i;
        }
    }
    if v[idx] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Top two eigenpairs of a symmetric matrix.
pub fn top2_eigen(c: &Matrix) -> Result<Top2, ProjectionError> {
    let mut first = dominant(c, None)?;
    let mut deflated = c.clone();
    let n = c.dim();
    for i in 0..n {
        for j in 0..n {
            let v = deflated.get(i, j) - first.value * first.vector[i] * first.vector[j];
            deflated.set(i, j, v);
        }
    }
    let mut second = dominant(&deflated, Some(&first.vector))?;
    if second.value > first.value {
        std::mem::swap(&mut first, &mut second);
    }
    canonical_sign(&mut first.vector);
    canonical_sign(&mut second.vector);
    let degenerate = first.value - second.value <= DEGENERATE_GAP * first.value.abs();
    Ok(Top2 { first, second, degenerate })
}

/// Fitted 2D PCA basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaBasis {
    pub mean: Vec<f64>,
    pub components: [Vec<f64>; 2],
    pub eigenvalues: [f64; 2],
    pub total_variance: f64,
    pub degenerate: bool,
}

impl PcaBasis {
    pub fn explained_variance_ratio(&self) -> f64 {
        if self.total_variance > 0.0 {
            (self.eigenvalues[0] + self.eigenvalues[1]) / self.total_variance
        } else {
            0.0
        }
    }

    pub fn project_one(&self, v: &[f64]) -> [f64; 2] {
        let centered: Vec<f64> = v.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        [dot(&centered, &self.components[0]), dot(&centered, &self.components[1])]
    }
}

pub fn fit<R: AsRef<[f64]>>(vectors: &[R]) -> Result<PcaBasis, ProjectionError> {
    let (c, mean) = covariance(vectors)?;
    let top = top2_eigen(&c)?;
    Ok(PcaBasis {
        mean,
        // Clamp rounding noise on rank-deficient corpora.
        eigenvalues: [top.first.value.max(0.0), top.second.value.max(0.0)],
        components: [top.first.vector, top.second.vector],
        total_variance: c.trace(),
        degenerate: top.degenerate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub scenario_id: String,
    pub agent_id: usize,
    pub x: f64,
    pub y: f64,
}

/// The Overview scatter plus the basis that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection2D {
    pub points: Vec<ProjectedPoint>,
    pub components: [Vec<f64>; 2],
    pub eigenvalues: [f64; 2],
    pub explained_variance_ratio: f64,
    pub mean: Vec<f64>,
    pub degenerate: bool,
}

pub fn project(features: &[FeatureVector], basis: &PcaBasis) -> Projection2D {
    let points = features
        .iter()
        .map(|f| {
            let [x, y] = basis.project_one(&f.latent);
            ProjectedPoint { scenario_id: f.scenario_id.clone(), agent_id: f.agent_id, x, y }
        })
        .collect();
    Projection2D {
        points,
        components: basis.components.clone(),
        eigenvalues: basis.eigenvalues,
        explained_variance_ratio: basis.explained_variance_ratio(),
        mean: basis.mean.clone(),
        degenerate: basis.degenerate,
    }
}

/// Fits on `features` and projects them.
pub fn fit_project(features: &[FeatureVector]) -> Result<Projection2D, ProjectionError> {
    Ok(project(features, &fit(features)?))
}
