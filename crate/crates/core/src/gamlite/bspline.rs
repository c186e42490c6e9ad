use nalgebra::DMatrix;

use super::GamError;

const DEGREE: usize = 3;

/// Cubic B-spline basis of `k` functions on a strictly increasing knot
/// vector of length `k + 4`. The usable domain is `[knots[3], knots[k]]`,
/// on which the basis functions sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct BSplineBasis {
    knots: Vec<f64>,
    k: usize,
}

impl BSplineBasis {
    pub fn new(knots: Vec<f64>, k: usize) -> Result<Self, GamError> {
        if k < DEGREE + 1 {
            return Err(GamError::Basis(format!("basis size {k} < 4")));
        }
        if knots.len() != k + DEGREE + 1 {
            return Err(GamError::Basis(format!(
                "{} knots given, a cubic basis of size {k} needs {}",
                knots.len(),
                k + DEGREE + 1
            )));
        }
        if knots.iter().any(|t| !t.is_finite()) || knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(GamError::Basis("knots must be finite and strictly increasing".into()));
        }
        Ok(BSplineBasis { knots, k })
    }

    /// Knots at quantiles of the distinct values of `x`, so the domain is
    /// exactly `[min x, max x]`. Three knots are added beyond each end at
    /// the spacing of the outermost interval.
    pub fn from_quantiles(x: &[f64], k: usize) -> Result<Self, GamError> {
        if k < DEGREE + 1 {
            return Err(GamError::Basis(format!("basis size {k} < 4")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(GamError::Basis("non-finite covariate value".into()));
        }
        let mut distinct = x.to_vec();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        if distinct.len() < 2 {
            return Err(GamError::DegenerateCovariate(format!(
                "{} distinct value(s); a smooth needs at least 2",
                distinct.len()
            )));
        }
        let n_inner = k - DEGREE + 1;
        let last = (distinct.len() - 1) as f64;
        let inner: Vec<f64> = (0..n_inner)
            .map(|i| {
                if i == 0 {
                    return distinct[0];
                }
                if i == n_inner - 1 {
                    return distinct[distinct.len() - 1];
                }
                let pos = last * i as f64 / (n_inner - 1) as f64;
                let lo = pos.floor() as usize;
                let frac = pos - lo as f64;
                if frac == 0.0 {
                    distinct[lo]
                } else {
                    distinct[lo] + frac * (distinct[lo + 1] - distinct[lo])
                }
            })
            .collect();
        let h_lo = inner[1] - inner[0];
        let h_hi = inner[n_inner - 1] - inner[n_inner - 2];
        let mut knots = Vec::with_capacity(k + DEGREE + 1);
        knots.extend((1..=DEGREE).rev().map(|j| inner[0] - j as f64 * h_lo));
        knots.extend_from_slice(&inner);
        knots.extend((1..=DEGREE).map(|j| inner[n_inner - 1] + j as f64 * h_hi));
        BSplineBasis::new(knots, k)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.knots[DEGREE], self.knots[self.k])
    }

    /// Index of the first nonzero basis function at `x` and the four values.
    fn local(&self, x: f64) -> Result<(usize, [f64; DEGREE + 1]), GamError> {
        let (lo, hi) = self.domain();
        if !(x >= lo && x <= hi) {
            return Err(GamError::Basis(format!("x = {x} outside the knot span [{lo}, {hi}]")));
        }
        let t = &self.knots;
        // span: t[mu] <= x < t[mu + 1], with the right end folded into the last span
        let mu = match t[DEGREE..=self.k].partition_point(|&knot| knot <= x) {
            0 => DEGREE,
            p => (DEGREE + p - 1).min(self.k - 1),
        };
        let mut n = [0.0; DEGREE + 1];
        let mut left = [0.0; DEGREE + 1];
        let mut right = [0.0; DEGREE + 1];
        n[0] = 1.0;
        for j in 1..=DEGREE {
            left[j] = x - t[mu + 1 - j];
            right[j] = t[mu + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        Ok((mu - DEGREE, n))
    }

    /// All `k` basis values at `x`.
    pub fn evaluate(&self, x: f64) -> Result<Vec<f64>, GamError> {
        let (first, vals) = self.local(x)?;
        let mut row = vec![0.0; self.k];
        row[first..first + DEGREE + 1].copy_from_slice(&vals);
        Ok(row)
    }

    /// Greville abscissae: knot averages at which the coefficients of the
    /// identity function sit.
    pub fn greville(&self) -> Vec<f64> {
        (0..self.k)
            .map(|j| self.knots[j + 1..=j + DEGREE].iter().sum::<f64>() / DEGREE as f64)
            .collect()
    }

    /// `(k-2) x k` second divided differences of the coefficients over the
    /// Greville abscissae. Its null space is exactly the affine functions;
    /// on equally spaced knots it is a multiple of the plain second difference.
    pub fn second_difference(&self) -> DMatrix<f64> {
        let g = self.greville();
        let mut d = DMatrix::zeros(self.k - 2, self.k);
        for i in 0..self.k - 2 {
            let (h0, h1) = (g[i + 1] - g[i], g[i + 2] - g[i + 1]);
            d[(i, i)] = 1.0 / h0;
            d[(i, i + 1)] = -1.0 / h0 - 1.0 / h1;
            d[(i, i + 2)] = 1.0 / h1;
        }
        d
    }

    /// `xs.len() x k` matrix of basis values.
    pub fn design(&self, xs: &[f64]) -> Result<DMatrix<f64>, GamError> {
        let mut m = DMatrix::zeros(xs.len(), self.k);
        for (i, &x) in xs.iter().enumerate() {
            let (first, vals) = self.local(x)?;
            for (j, v) in vals.iter().enumerate() {
                m[(i, first + j)] = *v;
            }
        }
        Ok(m)
    }
}

/// Cubic B-spline design block for `x` on the given knots.
pub fn bspline_basis(x: &[f64], k: usize, knots: &[f64]) -> Result<DMatrix<f64>, GamError> {
    if x.len() < k {
        return Err(GamError::Basis(format!("{} points for a basis of size {k}", x.len())));
    }
    BSplineBasis::new(knots.to_vec(), k)?.design(x)
}
