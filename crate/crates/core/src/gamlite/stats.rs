use super::model::FitResult;
use super::GamError;

/// Gaussian profile AIC with edf in place of the parameter count.
pub fn aic_value(n: usize, rss: f64, edf: f64) -> f64 {
    let n = n as f64;
    n * (rss / n).ln() + 2.0 * (edf + 1.0)
}

pub fn aic(fit: &FitResult) -> f64 {
    aic_value(fit.n, fit.rss, fit.edf)
}

/// `aic(full) - aic(base)`; negative favours the full model. Both fits must
/// cover the same rows.
pub fn delta_aic(full: &FitResult, base: &FitResult) -> Result<f64, GamError> {
    if full.n != base.n {
        return Err(GamError::Comparison(format!(
            "{} has n = {} but {} has n = {}",
            full.model, full.n, base.model, base.n
        )));
    }
    if full.row_digest != base.row_digest {
        return Err(GamError::Comparison(format!(
            "{} and {} were fitted on different rows",
            full.model, base.model
        )));
    }
    Ok(aic(full) - aic(base))
}

/// Product-moment correlation of two complete vectors.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, GamError> {
    if x.len() != y.len() {
        return Err(GamError::UndefinedCorrelation(format!("lengths {} and {}", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(GamError::UndefinedCorrelation(format!("{} pairs, need at least 3", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(GamError::UndefinedCorrelation("non-finite value".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(GamError::UndefinedCorrelation("constant input".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// [`pearson`] over the pairs where both values are present.
pub fn pearson_pairwise(x: &[Option<f64>], y: &[Option<f64>]) -> Result<(f64, usize), GamError> {
    if x.len() != y.len() {
        return Err(GamError::UndefinedCorrelation(format!("lengths {} and {}", x.len(), y.len())));
    }
    let (a, b): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(y)
        .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
        .unzip();
    let n = a.len();
    pearson(&a, &b).map(|r| (r, n))
}
