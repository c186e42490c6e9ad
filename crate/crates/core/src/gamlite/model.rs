use std::collections::BTreeSet;
use std::ops::Range;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::bspline::BSplineBasis;
use super::stats::aic_value;
use super::{FeatureRow, GamError, CONTROL_COVARIATES};

pub const DEFAULT_K: usize = 10;

/// Eigenvalues below this fraction of the largest are treated as zero.
const RANK_TOL: f64 = 1e-10;
/// Cholesky factors whose squared diagonal ratio falls below this are rejected.
const MIN_RCOND: f64 = 1e-13;
/// Relative GCV slack within which the larger smoothing parameter wins.
const GCV_TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmoothTerm {
    pub covariate: String,
    pub k: usize,
}

impl SmoothTerm {
    pub fn new(covariate: impl Into<String>, k: usize) -> Self {
        SmoothTerm {
            covariate: covariate.into(),
            k,
        }
    }

    pub fn name(&self) -> String {
        format!("s({})", self.covariate)
    }
}

/// Response is always reading speed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub smooths: Vec<SmoothTerm>,
    pub language_effect: bool,
    pub random_intercept: bool,
}

impl ModelSpec {
    /// Control smooths, language fixed effect and participant intercepts.
    pub fn base(k: usize) -> Self {
        ModelSpec {
            name: "base".into(),
            smooths: CONTROL_COVARIATES.iter().map(|c| SmoothTerm::new(*c, k)).collect(),
            language_effect: true,
            random_intercept: true,
        }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_metric(mut self, metric: impl Into<String>, k: usize) -> Self {
        self.smooths.push(SmoothTerm::new(metric, k));
        self
    }

    pub fn without_metric(mut self, metric: &str) -> Self {
        self.smooths.retain(|s| s.covariate != metric);
        self
    }

    /// Smoothed covariates other than the controls.
    pub fn metrics(&self) -> impl Iterator<Item = &str> {
        self.smooths
            .iter()
            .map(|s| s.covariate.as_str())
            .filter(|c| !CONTROL_COVARIATES.contains(c))
    }

    pub fn validate(&self) -> Result<(), GamError> {
        for control in CONTROL_COVARIATES {
            if !self.smooths.iter().any(|s| s.covariate == control) {
                return Err(GamError::Spec(format!("model {} lacks the control smooth s({control})", self.name)));
            }
        }
        let mut seen = BTreeSet::new();
        for s in &self.smooths {
            if s.k < 4 {
                return Err(GamError::Spec(format!("{}: k = {} < 4", s.name(), s.k)));
            }
            if !seen.insert(s.covariate.as_str()) {
                return Err(GamError::Spec(format!("{} appears twice", s.name())));
            }
        }
        Ok(())
    }

    /// Names of the penalized terms, in the order smoothing parameters are given.
    pub fn penalized_terms(&self) -> Vec<String> {
        let mut names: Vec<String> = self.smooths.iter().map(SmoothTerm::name).collect();
        if self.random_intercept {
            names.push(PARTICIPANT_TERM.into());
        }
        names
    }
}

const PARTICIPANT_TERM: &str = "re(participant)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankPolicy {
    /// A singular penalized normal matrix is an error.
    #[default]
    Strict,
    /// Fall back to an eigendecomposition pseudo-inverse, dropping null directions.
    Truncate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FitOptions {
    pub rank: RankPolicy,
}

impl FitOptions {
    pub fn truncating() -> Self {
        FitOptions { rank: RankPolicy::Truncate }
    }
}

/// Half-decade grid from 1e-4 to 1e6.
pub fn lambda_grid() -> Vec<f64> {
    (-8..=12).map(|i| 10f64.powf(i as f64 / 2.0)).collect()
}

#[derive(Debug, Clone)]
struct SmoothBlock {
    covariate: String,
    basis: BSplineBasis,
    /// Null-space basis of the sum-to-zero constraint, `k x (k-1)`.
    z: DMatrix<f64>,
    cols: Range<usize>,
    range: (f64, f64),
}

#[derive(Debug, Clone)]
struct Penalty {
    name: String,
    cols: Range<usize>,
    matrix: DMatrix<f64>,
}

/// Model matrix, response and penalties for one spec on one row set.
#[derive(Debug, Clone)]
pub struct Design {
    spec: ModelSpec,
    x: DMatrix<f64>,
    y: DVector<f64>,
    gram: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
    columns: Vec<String>,
    language_cols: Range<usize>,
    penalties: Vec<Penalty>,
    smooths: Vec<SmoothBlock>,
    dropped: usize,
    row_digest: u64,
}

/// Unconstrained penalized least-squares solution.
#[derive(Debug, Clone)]
pub struct PenalizedSolution {
    pub coefficients: DVector<f64>,
    pub fitted: DVector<f64>,
    pub rss: f64,
    pub edf: f64,
    /// Diagonal of `(X'X + S)^-1 X'X`, one entry per column.
    pub edf_by_column: DVector<f64>,
    pub rank: usize,
}

fn fnv1a(bytes: &[u8], mut h: u64) -> u64 {
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

fn row_key(r: &FeatureRow) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325;
    for part in [r.participant_id.as_bytes(), r.text_id.as_bytes(), r.language.as_bytes()] {
        h = fnv1a(part, h);
        h = fnv1a(&[0xff], h);
    }
    fnv1a(&(r.sentence_index as u64).to_le_bytes(), h)
}

/// Columns of the Householder reflector orthogonal to `c`.
fn centering_basis(c: &DVector<f64>) -> DMatrix<f64> {
    let k = c.len();
    let mut v = c.clone();
    v[0] += c[0].signum() * c.norm();
    let h = DMatrix::identity(k, k) - (&v * v.transpose()) * (2.0 / v.norm_squared());
    h.columns(1, k - 1).into_owned()
}

fn levels<'a>(rows: impl Iterator<Item = &'a str>) -> Vec<String> {
    rows.collect::<BTreeSet<_>>().into_iter().map(str::to_string).collect()
}

impl Design {
    /// Rows missing any smoothed covariate are dropped and counted.
    pub fn build(spec: &ModelSpec, rows: &[FeatureRow]) -> Result<Self, GamError> {
        spec.validate()?;
        let mut kept: Vec<(&FeatureRow, Vec<f64>)> = Vec::with_capacity(rows.len());
        let mut dropped = 0;
        for r in rows {
            if !(r.reading_speed.is_finite() && r.reading_speed > 0.0) {
                return Err(GamError::Row(format!(
                    "{}/{}#{}: reading speed {} is not positive",
                    r.participant_id, r.text_id, r.sentence_index, r.reading_speed
                )));
            }
            if !(r.mean_word_length.is_finite() && r.mean_log_freq.is_finite()) {
                return Err(GamError::Row(format!(
                    "{}/{}#{}: non-finite control feature",
                    r.participant_id, r.text_id, r.sentence_index
                )));
            }
            let values: Option<Vec<f64>> = spec
                .smooths
                .iter()
                .map(|s| r.covariate(&s.covariate).filter(|v| v.is_finite()))
                .collect();
            match values {
                Some(v) => kept.push((r, v)),
                None => dropped += 1,
            }
        }
        let n = kept.len();
        let languages = if spec.language_effect {
            levels(kept.iter().map(|(r, _)| r.language.as_str()))
        } else {
            Vec::new()
        };
        let participants = if spec.random_intercept {
            levels(kept.iter().map(|(r, _)| r.participant_id.as_str()))
        } else {
            Vec::new()
        };
        let n_lang = languages.len().saturating_sub(1);
        let p = 1 + n_lang + spec.smooths.iter().map(|s| s.k - 1).sum::<usize>() + participants.len();
        if n < p {
            return Err(GamError::InsufficientRows {
                model: spec.name.clone(),
                n,
                p,
            });
        }

        let mut x = DMatrix::zeros(n, p);
        let mut columns = Vec::with_capacity(p);
        x.column_mut(0).fill(1.0);
        columns.push("(Intercept)".to_string());
        for (j, lang) in languages.iter().enumerate().skip(1) {
            let col = j;
            for (i, (r, _)) in kept.iter().enumerate() {
                if &r.language == lang {
                    x[(i, col)] = 1.0;
                }
            }
            columns.push(format!("language[{lang}]"));
        }
        let language_cols = 1..1 + n_lang;

        let mut next = 1 + n_lang;
        let mut penalties = Vec::new();
        let mut smooths = Vec::new();
        for (j, term) in spec.smooths.iter().enumerate() {
            let xs: Vec<f64> = kept.iter().map(|(_, v)| v[j]).collect();
            let basis = BSplineBasis::from_quantiles(&xs, term.k).map_err(|e| match e {
                GamError::DegenerateCovariate(m) => GamError::DegenerateCovariate(format!("{}: {m}", term.covariate)),
                other => other,
            })?;
            let b = basis.design(&xs)?;
            let sums = DVector::from_iterator(term.k, b.column_iter().map(|c| c.sum()));
            let z = centering_basis(&sums);
            let block = &b * &z;
            let cols = next..next + term.k - 1;
            x.columns_mut(cols.start, cols.len()).copy_from(&block);
            for c in 1..term.k {
                columns.push(format!("{}.{c}", term.name()));
            }
            let d = basis.second_difference() * &z;
            let s = d.transpose() * d;
            let scale = block.tr_mul(&block).norm() / s.norm();
            penalties.push(Penalty {
                name: term.name(),
                cols: cols.clone(),
                matrix: s * scale,
            });
            let (lo, hi) = basis.domain();
            smooths.push(SmoothBlock {
                covariate: term.covariate.clone(),
                basis,
                z,
                cols: cols.clone(),
                range: (lo, hi),
            });
            next = cols.end;
        }
        if spec.random_intercept {
            let start = next;
            let mut counts = vec![0f64; participants.len()];
            for (i, (r, _)) in kept.iter().enumerate() {
                let j = participants.binary_search(&r.participant_id).expect("level collected above");
                x[(i, start + j)] = 1.0;
                counts[j] += 1.0;
            }
            for pid in &participants {
                columns.push(format!("participant[{pid}]"));
            }
            let gram_norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
            let scale = gram_norm / (participants.len() as f64).sqrt();
            penalties.push(Penalty {
                name: PARTICIPANT_TERM.into(),
                cols: start..start + participants.len(),
                matrix: DMatrix::identity(participants.len(), participants.len()) * scale,
            });
        }

        let y = DVector::from_iterator(n, kept.iter().map(|(r, _)| r.reading_speed));
        let gram = x.tr_mul(&x);
        let xty = x.tr_mul(&y);
        let yty = y.norm_squared();
        let row_digest = kept.iter().fold(n as u64, |acc, (r, _)| acc.wrapping_add(row_key(r)));
        Ok(Design {
            spec: spec.clone(),
            x,
            y,
            gram,
            xty,
            yty,
            columns,
            language_cols,
            penalties,
            smooths,
            dropped,
            row_digest,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn row_digest(&self) -> u64 {
        self.row_digest
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    /// Penalty of term `j` embedded in a `p x p` matrix, as used with λ = 1.
    pub fn penalty(&self, j: usize) -> Option<DMatrix<f64>> {
        let pen = self.penalties.get(j)?;
        let mut full = DMatrix::zeros(self.p(), self.p());
        full.view_mut((pen.cols.start, pen.cols.start), (pen.cols.len(), pen.cols.len()))
            .copy_from(&pen.matrix);
        Some(full)
    }

    pub fn penalized_terms(&self) -> Vec<&str> {
        self.penalties.iter().map(|p| p.name.as_str()).collect()
    }

    fn check_lambdas(&self, lambdas: &[f64]) -> Result<(), GamError> {
        if lambdas.len() != self.penalties.len() {
            return Err(GamError::Lambda(format!(
                "{} values for {} penalized terms ({})",
                lambdas.len(),
                self.penalties.len(),
                self.penalized_terms().join(", ")
            )));
        }
        if let Some(bad) = lambdas.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
            return Err(GamError::Lambda(format!("{bad} is not a finite nonnegative value")));
        }
        Ok(())
    }

    fn normal_matrix(&self, lambdas: &[f64]) -> DMatrix<f64> {
        let mut a = self.gram.clone();
        for (pen, &lam) in self.penalties.iter().zip(lambdas) {
            if lam > 0.0 {
                let len = pen.cols.len();
                let mut view = a.view_mut((pen.cols.start, pen.cols.start), (len, len));
                view += &pen.matrix * lam;
            }
        }
        a
    }

    /// Minimizes `|y - X b|^2 + sum_j lambda_j b' S_j b`.
    fn inverse(&self, lambdas: &[f64], options: &FitOptions) -> Result<(DMatrix<f64>, usize), GamError> {
        self.check_lambdas(lambdas)?;
        let a = self.normal_matrix(lambdas);
        let p = a.nrows();
        match spd_inverse(&a) {
            Some(inv) => Ok((inv, p)),
            None => match options.rank {
                RankPolicy::Strict => Err(singular(&a)),
                RankPolicy::Truncate => Ok(pseudo_inverse(&a)),
            },
        }
    }

    pub fn solve(&self, lambdas: &[f64], options: &FitOptions) -> Result<PenalizedSolution, GamError> {
        let (inverse, rank) = self.inverse(lambdas, options)?;
        let p = inverse.nrows();
        let coefficients = &inverse * &self.xty;
        let fitted = &self.x * &coefficients;
        let rss = (&self.y - &fitted).norm_squared();
        // diag((X'X + S)^-1 X'X) without forming the product
        let edf_by_column = DVector::from_iterator(p, (0..p).map(|i| inverse.row(i).transpose().dot(&self.gram.column(i))));
        Ok(PenalizedSolution {
            edf: edf_by_column.sum(),
            coefficients,
            fitted,
            rss,
            edf_by_column,
            rank,
        })
    }

    /// `n rss / (n - edf)^2`, infinite when the fit fails or saturates.
    /// Works from the normal equations alone, without fitted values.
    pub fn gcv(&self, lambdas: &[f64], options: &FitOptions) -> f64 {
        let n = self.n() as f64;
        let Ok((inverse, _)) = self.inverse(lambdas, options) else {
            return f64::INFINITY;
        };
        let beta = &inverse * &self.xty;
        let rss = (self.yty - 2.0 * beta.dot(&self.xty) + beta.dot(&(&self.gram * &beta))).max(0.0);
        let edf = inverse.component_mul(&self.gram.transpose()).sum();
        if edf < n && rss.is_finite() {
            n * rss / (n - edf).powi(2)
        } else {
            f64::INFINITY
        }
    }

    /// Coordinate-wise grid search minimizing GCV, two sweeps starting from
    /// the grid median. Near-ties go to the larger value.
    pub fn select_lambda(&self, grid: &[f64], options: &FitOptions) -> Result<Vec<f64>, GamError> {
        if grid.is_empty() {
            return Err(GamError::Lambda("empty grid".into()));
        }
        if let Some(bad) = grid.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
            return Err(GamError::Lambda(format!("grid value {bad} is not a finite nonnegative value")));
        }
        let mut grid = grid.to_vec();
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        let largest = grid[grid.len() - 1];
        let mut lambdas = vec![grid[grid.len() / 2]; self.penalties.len()];
        if grid.len() == 1 {
            return Ok(lambdas);
        }
        for _sweep in 0..2 {
            for j in 0..lambdas.len() {
                let scores: Vec<f64> = grid
                    .iter()
                    .map(|&v| {
                        lambdas[j] = v;
                        self.gcv(&lambdas, options)
                    })
                    .collect();
                let best = scores.iter().copied().fold(f64::INFINITY, f64::min);
                lambdas[j] = if best.is_finite() {
                    let cutoff = best + GCV_TIE_TOL * best.abs();
                    grid.iter()
                        .zip(&scores)
                        .rev()
                        .find(|(_, s)| **s <= cutoff)
                        .map(|(v, _)| *v)
                        .unwrap_or(largest)
                } else {
                    largest
                };
            }
        }
        Ok(lambdas)
    }

    /// Fit with the given smoothing parameters. Requires `n > p`.
    pub fn fit(&self, lambdas: &[f64], options: &FitOptions) -> Result<FitResult, GamError> {
        let (n, p) = (self.n(), self.p());
        if n <= p {
            return Err(GamError::InsufficientRows {
                model: self.spec.name.clone(),
                n,
                p,
            });
        }
        let sol = self.solve(lambdas, options)?;
        let nf = n as f64;
        if !(sol.edf > 0.0 && sol.edf < nf) {
            return Err(GamError::DegenerateFit(format!("{}: edf {} outside (0, {n})", self.spec.name, sol.edf)));
        }
        if !(sol.rss > 0.0 && sol.rss.is_finite()) {
            return Err(GamError::DegenerateFit(format!("{}: residual sum of squares {}", self.spec.name, sol.rss)));
        }
        let mut terms = Vec::new();
        if !self.language_cols.is_empty() {
            terms.push(TermFit {
                name: "language".into(),
                lambda: None,
                edf: sol.edf_by_column.rows(self.language_cols.start, self.language_cols.len()).sum(),
            });
        }
        for (pen, &lam) in self.penalties.iter().zip(lambdas) {
            terms.push(TermFit {
                name: pen.name.clone(),
                lambda: Some(lam),
                edf: sol.edf_by_column.rows(pen.cols.start, pen.cols.len()).sum(),
            });
        }
        Ok(FitResult {
            model: self.spec.name.clone(),
            columns: self.columns.clone(),
            coefficients: sol.coefficients.iter().copied().collect(),
            fitted: sol.fitted.iter().copied().collect(),
            rss: sol.rss,
            edf: sol.edf,
            sigma2: sol.rss / (nf - sol.edf),
            aic: aic_value(n, sol.rss, sol.edf),
            terms,
            n,
            dropped: self.dropped,
            row_digest: self.row_digest,
            rank: sol.rank,
            smooths: self.smooths.clone(),
        })
    }
}

fn spd_inverse(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let chol = Cholesky::new(a.clone())?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0f64), |(lo, hi), d| (lo.min(*d), hi.max(*d)));
    if !(lo > 0.0) || (lo / hi).powi(2) < MIN_RCOND {
        return None;
    }
    Some(chol.inverse())
}

fn pseudo_inverse(a: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let eig = SymmetricEigen::new(a.clone());
    let top = eig.eigenvalues.iter().fold(0f64, |m, v| m.max(v.abs()));
    let tol = top * RANK_TOL;
    let mut rank = 0;
    let inv_vals = eig.eigenvalues.map(|v| {
        if v > tol {
            rank += 1;
            1.0 / v
        } else {
            0.0
        }
    });
    let q = &eig.eigenvectors;
    (q * DMatrix::from_diagonal(&inv_vals) * q.transpose(), rank)
}

fn singular(a: &DMatrix<f64>) -> GamError {
    let eig = SymmetricEigen::new(a.clone());
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let max = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = max.abs() * RANK_TOL;
    GamError::Singular {
        min_eigenvalue: min,
        max_eigenvalue: max,
        rank: eig.eigenvalues.iter().filter(|v| **v > tol).count(),
        p: a.nrows(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermFit {
    pub name: String,
    /// `None` for unpenalized terms.
    pub lambda: Option<f64>,
    pub edf: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: String,
    pub columns: Vec<String>,
    pub coefficients: Vec<f64>,
    pub fitted: Vec<f64>,
    pub rss: f64,
    pub edf: f64,
    pub sigma2: f64,
    pub aic: f64,
    pub terms: Vec<TermFit>,
    pub n: usize,
    pub dropped: usize,
    /// Order-independent digest of the rows used.
    pub row_digest: u64,
    /// Numerical rank of the penalized normal matrix.
    pub rank: usize,
    smooths: Vec<SmoothBlock>,
}

impl FitResult {
    pub fn lambda_per_term(&self) -> Vec<(&str, f64)> {
        self.terms
            .iter()
            .filter_map(|t| t.lambda.map(|l| (t.name.as_str(), l)))
            .collect()
    }

    pub fn coefficient(&self, column: &str) -> Option<f64> {
        self.columns.iter().position(|c| c == column).map(|i| self.coefficients[i])
    }

    /// Covariate range the smooth was fitted on.
    pub fn smooth_range(&self, covariate: &str) -> Option<(f64, f64)> {
        self.smooths.iter().find(|s| s.covariate == covariate).map(|s| s.range)
    }

    /// Centred smooth component evaluated at `xs`.
    pub fn smooth_component(&self, covariate: &str, xs: &[f64]) -> Result<Vec<f64>, GamError> {
        let block = self
            .smooths
            .iter()
            .find(|s| s.covariate == covariate)
            .ok_or_else(|| GamError::Spec(format!("model {} has no smooth of {covariate}", self.model)))?;
        let beta = DVector::from_column_slice(&self.coefficients[block.cols.clone()]);
        let weights = &block.z * beta;
        let b = block.basis.design(xs)?;
        Ok((b * weights).iter().copied().collect())
    }

    /// `f(max) - f(min)` of a fitted smooth over its data range.
    pub fn endpoint_effect(&self, covariate: &str) -> Result<f64, GamError> {
        let (lo, hi) = self
            .smooth_range(covariate)
            .ok_or_else(|| GamError::Spec(format!("model {} has no smooth of {covariate}", self.model)))?;
        let f = self.smooth_component(covariate, &[lo, hi])?;
        Ok(f[1] - f[0])
    }
}

pub fn fit_penalized(spec: &ModelSpec, rows: &[FeatureRow], lambdas: &[f64]) -> Result<FitResult, GamError> {
    fit_penalized_with(spec, rows, lambdas, &FitOptions::default())
}

pub fn fit_penalized_with(
    spec: &ModelSpec,
    rows: &[FeatureRow],
    lambdas: &[f64],
    options: &FitOptions,
) -> Result<FitResult, GamError> {
    Design::build(spec, rows)?.fit(lambdas, options)
}

pub fn select_lambda(spec: &ModelSpec, rows: &[FeatureRow], grid: &[f64]) -> Result<Vec<f64>, GamError> {
    Design::build(spec, rows)?.select_lambda(grid, &FitOptions::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rows(n: usize, seed: u64, metric: impl Fn(f64) -> f64) -> Vec<FeatureRow> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let wl: f64 = rng.random_range(3.0..8.0);
                let lf: f64 = rng.random_range(3.0..6.0);
                let m: f64 = rng.random_range(0.0..10.0);
                let speed = 4.0 - 0.2 * wl + 0.3 * (lf - 4.5).powi(2) + metric(m) + rng.random_range(-0.3..0.3);
                FeatureRow {
                    participant_id: format!("p{}", i % 4),
                    language: ["en", "de"][i % 2].into(),
                    text_id: format!("t{}", i / 10),
                    sentence_index: i % 10,
                    reading_speed: speed,
                    mean_word_length: wl,
                    mean_log_freq: lf,
                    metrics: [("m".to_string(), Some(m))].into(),
                }
            })
            .collect()
    }

    fn spec(k: usize, lang: bool, re: bool) -> ModelSpec {
        ModelSpec {
            name: "t".into(),
            language_effect: lang,
            random_intercept: re,
            ..ModelSpec::base(k)
        }
        .with_metric("m", k)
    }

    /// Gaussian elimination with partial pivoting on the normal equations.
    fn normal_equations(x: &DMatrix<f64>, y: &DVector<f64>) -> Vec<f64> {
        let (n, p) = x.shape();
        let mut a = vec![vec![0.0; p + 1]; p];
        for r in 0..p {
            for c in 0..p {
                a[r][c] = (0..n).map(|i| x[(i, r)] * x[(i, c)]).sum();
            }
            a[r][p] = (0..n).map(|i| x[(i, r)] * y[i]).sum();
        }
        for col in 0..p {
            let piv = (col..p).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
            a.swap(col, piv);
            for r in col + 1..p {
                let f = a[r][col] / a[col][col];
                for c in col..=p {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
        let mut b = vec![0.0; p];
        for r in (0..p).rev() {
            let s: f64 = (r + 1..p).map(|c| a[r][c] * b[c]).sum();
            b[r] = (a[r][p] - s) / a[r][r];
        }
        b
    }

    #[test]
    fn zero_lambda_is_least_squares() {
        for seed in 0..5 {
            let data = rows(45, seed, |m| (m / 3.0).sin());
            let sp = spec(5, true, false);
            let design = Design::build(&sp, &data).unwrap();
            let fit = design.fit(&[0.0; 3], &FitOptions::default()).unwrap();
            let beta = normal_equations(design.x(), design.y());
            for (a, b) in fit.coefficients.iter().zip(&beta) {
                assert!((a - b).abs() <= 1e-8 * b.abs().max(1.0), "{a} vs {b}");
            }
            let oracle_fitted = design.x() * DVector::from_vec(beta);
            for (a, b) in fit.fitted.iter().zip(oracle_fitted.iter()) {
                assert!((a - b).abs() <= 1e-8 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn square_design_interpolates() {
        let data = rows(7, 3, |m| m * 0.1);
        let sp = ModelSpec {
            language_effect: false,
            random_intercept: false,
            ..ModelSpec::base(4)
        };
        let design = Design::build(&sp, &data).unwrap();
        assert_eq!((design.n(), design.p()), (7, 7));
        let sol = design.solve(&[0.0, 0.0], &FitOptions::default()).unwrap();
        assert!(sol.rss < 1e-20, "rss = {}", sol.rss);
        assert!((sol.edf - 7.0).abs() < 1e-8);
        assert!(matches!(
            design.fit(&[0.0, 0.0], &FitOptions::default()),
            Err(GamError::InsufficientRows { n: 7, p: 7, .. })
        ));
    }

    #[test]
    fn edf_decreases_in_each_lambda() {
        let data = rows(120, 7, |m| (m / 2.0).cos());
        let design = Design::build(&spec(8, true, true), &data).unwrap();
        let grid = lambda_grid();
        for j in 0..4 {
            let mut last = f64::INFINITY;
            for &v in &grid {
                let mut lam = vec![1.0; 4];
                lam[j] = v;
                let edf = design.solve(&lam, &FitOptions::default()).unwrap().edf;
                assert!(edf <= last + 1e-9, "term {j} λ={v}: {edf} > {last}");
                last = edf;
            }
        }
    }

    #[test]
    fn huge_lambda_leaves_affine_component() {
        let data = rows(200, 11, |m| (m / 1.5).sin());
        let design = Design::build(&spec(10, true, false), &data).unwrap();
        let fit = design.fit(&[1.0, 1.0, 1e12], &FitOptions::default()).unwrap();
        let xs: Vec<f64> = (0..=20).map(|i| i as f64 * 0.45 + 0.3).collect();
        let f = fit.smooth_component("m", &xs).unwrap();
        // second differences on an even grid vanish for an affine function
        let worst = f.windows(3).map(|w| (w[0] - 2.0 * w[1] + w[2]).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-6, "{worst}");
        let wiggly = design.fit(&[1.0, 1.0, 1e-4], &FitOptions::default()).unwrap();
        let g = wiggly.smooth_component("m", &xs).unwrap();
        assert!(g.windows(3).map(|w| (w[0] - 2.0 * w[1] + w[2]).abs()).fold(0.0, f64::max) > 1e-3);
    }

    #[test]
    fn ridge_limit_matches_fixed_effects_only() {
        let data = rows(150, 5, |m| m * 0.05);
        let with_re = fit_penalized(&spec(6, true, true), &data, &[1.0, 1.0, 1.0, 1e10]).unwrap();
        let without = fit_penalized(&spec(6, true, false), &data, &[1.0, 1.0, 1.0]).unwrap();
        for pid in ["p0", "p1", "p2", "p3"] {
            assert!(with_re.coefficient(&format!("participant[{pid}]")).unwrap().abs() < 1e-8);
        }
        for (a, b) in with_re.fitted.iter().zip(&without.fitted) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn fitted_values_follow_covariate_translation() {
        let data = rows(90, 9, |m| (m / 2.0).sin());
        let shifted: Vec<FeatureRow> = data
            .iter()
            .cloned()
            .map(|mut r| {
                r.metrics.insert("m".into(), r.covariate("m").map(|v| v + 250.0));
                r.mean_log_freq += 3.0;
                r
            })
            .collect();
        let lam = [0.5, 2.0, 0.1, 1.0];
        let a = fit_penalized(&spec(7, true, true), &data, &lam).unwrap();
        let b = fit_penalized(&spec(7, true, true), &shifted, &lam).unwrap();
        for (u, v) in a.fitted.iter().zip(&b.fitted) {
            assert!((u - v).abs() <= 1e-8 * u.abs().max(1.0));
        }
    }

    #[test]
    fn aic_ignores_row_order() {
        let data = rows(80, 2, |m| m * 0.1);
        let mut reversed = data.clone();
        reversed.reverse();
        let lam = [1.0, 1.0, 1.0, 1.0];
        let a = fit_penalized(&spec(6, true, true), &data, &lam).unwrap();
        let b = fit_penalized(&spec(6, true, true), &reversed, &lam).unwrap();
        assert!((a.aic - b.aic).abs() < 1e-9 * a.aic.abs());
        assert_eq!(a.row_digest, b.row_digest);
    }

    #[test]
    fn missing_metric_rows_are_dropped() {
        let mut data = rows(60, 4, |m| m * 0.1);
        data[0].metrics.insert("m".into(), None);
        data[1].metrics.clear();
        let fit = fit_penalized(&spec(5, true, true), &data, &[1.0; 4]).unwrap();
        assert_eq!((fit.n, fit.dropped), (58, 2));
    }

    #[test]
    fn invalid_inputs() {
        let data = rows(30, 1, |m| m);
        let bad_spec = ModelSpec {
            smooths: vec![SmoothTerm::new("mean_word_length", 5)],
            ..ModelSpec::base(5)
        };
        assert!(matches!(Design::build(&bad_spec, &data), Err(GamError::Spec(_))));
        assert!(matches!(Design::build(&ModelSpec::base(3), &data), Err(GamError::Spec(_))));
        let design = Design::build(&spec(5, true, true), &data).unwrap();
        assert!(matches!(design.solve(&[1.0; 3], &FitOptions::default()), Err(GamError::Lambda(_))));
        assert!(matches!(design.solve(&[1.0, -1.0, 1.0, 1.0], &FitOptions::default()), Err(GamError::Lambda(_))));
        let mut slow = data.clone();
        slow[3].reading_speed = 0.0;
        assert!(matches!(Design::build(&spec(5, true, true), &slow), Err(GamError::Row(_))));
        assert!(matches!(
            Design::build(&spec(10, true, true), &data[..20]),
            Err(GamError::InsufficientRows { .. })
        ));
    }

    #[test]
    fn duplicated_smooth_is_singular_unless_truncated() {
        let data: Vec<FeatureRow> = rows(100, 8, |m| m * 0.2)
            .into_iter()
            .map(|mut r| {
                let m = r.covariate("m");
                r.metrics.insert("m2".into(), m);
                r
            })
            .collect();
        let sp = spec(6, true, false).with_metric("m2", 6);
        let design = Design::build(&sp, &data).unwrap();
        let lam = [1.0, 1.0, 1.0, 1.0];
        assert!(matches!(
            design.fit(&lam, &FitOptions::default()),
            Err(GamError::Singular { .. })
        ));
        let fit = design.fit(&lam, &FitOptions::truncating()).unwrap();
        assert!(fit.rank < design.p());
        let single = fit_penalized(&spec(6, true, false), &data, &[1.0, 1.0, 0.5]).unwrap();
        assert!((fit.rss - single.rss).abs() < 1e-6 * single.rss);
    }

    #[test]
    fn single_point_grid() {
        let data = rows(60, 6, |m| m * 0.1);
        assert_eq!(select_lambda(&spec(5, true, true), &data, &[3.0]).unwrap(), vec![3.0; 4]);
        assert!(select_lambda(&spec(5, true, true), &data, &[]).is_err());
    }

    #[test]
    fn term_edf_sums_to_total() {
        let data = rows(100, 12, |m| m * 0.1);
        let fit = fit_penalized(&spec(6, true, true), &data, &[1.0; 4]).unwrap();
        let terms: f64 = fit.terms.iter().map(|t| t.edf).sum();
        // the intercept contributes the remaining degree of freedom
        assert!((fit.edf - terms - 1.0).abs() < 1e-6, "{} vs {}", fit.edf, terms);
        assert_eq!(fit.lambda_per_term().len(), 4);
    }
}
