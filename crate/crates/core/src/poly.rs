//! Multivariate polynomial features and ridge regression.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc as usize
}

/// Number of monomials of exact total degree `order` in `d` variables.
pub fn homogeneous_count(order: usize, d: usize) -> usize {
    if d == 0 {
        return usize::from(order == 0);
    }
    binomial(order + d - 1, d - 1)
}

/// All monomials of total degree at most `order` in `n_inputs` variables.
/// Identical to the degree-`order` monomials of the inputs augmented with
/// a constant, so the count is `homogeneous_count(order, n_inputs + 1)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolyExpansion {
    pub n_inputs: usize,
    pub order: usize,
    exponents: Vec<Vec<u8>>,
}

impl PolyExpansion {
    pub fn new(n_inputs: usize, order: usize) -> Self {
        let mut exponents = Vec::new();
        for degree in 0..=order {
            let mut cur = vec![0u8; n_inputs];
            push_degree(&mut exponents, &mut cur, 0, degree);
        }
        PolyExpansion {
            n_inputs,
            order,
            exponents,
        }
    }

    pub fn n_terms(&self) -> usize {
        self.exponents.len()
    }

    pub fn exponents(&self) -> &[Vec<u8>] {
        &self.exponents
    }

    pub fn expand(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.n_inputs);
        let max = self.order;
        let powers: Vec<Vec<f64>> = x
            .iter()
            .map(|&v| {
                let mut p = Vec::with_capacity(max + 1);
                let mut acc = 1.0;
                for _ in 0..=max {
                    p.push(acc);
                    acc *= v;
                }
                p
            })
            .collect();
        self.exponents
            .iter()
            .map(|e| e.iter().enumerate().map(|(i, &k)| powers[i][k as usize]).product())
            .collect()
    }
}

fn push_degree(out: &mut Vec<Vec<u8>>, cur: &mut Vec<u8>, idx: usize, remaining: usize) {
    if cur.is_empty() {
        if remaining == 0 {
            out.push(Vec::new());
        }
        return;
    }
    if idx == cur.len() - 1 {
        cur[idx] = remaining as u8;
        out.push(cur.clone());
        cur[idx] = 0;
        return;
    }
    for k in (0..=remaining).rev() {
        cur[idx] = k as u8;
        push_degree(out, cur, idx + 1, remaining - k);
    }
    cur[idx] = 0;
}

/// Per-feature affine standardization to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &[Vec<f64>]) -> Result<Self> {
        let d = x.first().map(|r| r.len()).ok_or_else(|| Error::InvalidInput("no samples".into()))?;
        if x.iter().any(|r| r.len() != d) {
            return invalid("samples differ in feature count");
        }
        let n = x.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let std = (0..d)
            .map(|j| {
                let v = x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
                if v > 0.0 {
                    v.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Standardizer { mean, std })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// Solves `(Phi^T Phi + lambda I) w = Phi^T y`.
pub fn ridge_solve(phi: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    if phi.nrows() != y.len() {
        return invalid("design rows and targets differ");
    }
    if lambda < 0.0 {
        return invalid("ridge penalty must be non-negative");
    }
    if lambda == 0.0 {
        if phi.nrows() < phi.ncols() {
            return Err(Error::RankDeficient(format!(
                "{} samples for {} unknowns without regularization",
                phi.nrows(),
                phi.ncols()
            )));
        }
        let sv = phi.clone().singular_values();
        let max = sv.max();
        let min = sv.min();
        if !(max > 0.0) || min <= max * 1e-12 {
            return Err(Error::RankDeficient(format!("condition {:e}", max / min)));
        }
    }
    let mut a = phi.transpose() * phi;
    for i in 0..a.nrows() {
        a[(i, i)] += lambda;
    }
    let b = phi.transpose() * y;
    match a.clone().cholesky() {
        Some(ch) => Ok(ch.solve(&b)),
        None => a
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::RankDeficient("normal equations are singular".into())),
    }
}

/// Polynomial ridge regressor on standardized features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub standardizer: Standardizer,
    pub expansion: PolyExpansion,
    pub lambda: f64,
    pub weights: Vec<f64>,
}

impl RidgeModel {
    pub fn design(&self, x: &[Vec<f64>]) -> DMatrix<f64> {
        design_matrix(&self.standardizer, &self.expansion, x)
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let phi = self.expansion.expand(&self.standardizer.apply(x));
        phi.iter().zip(&self.weights).map(|(a, b)| a * b).sum()
    }
}

fn design_matrix(st: &Standardizer, ex: &PolyExpansion, x: &[Vec<f64>]) -> DMatrix<f64> {
    let rows: Vec<Vec<f64>> = x.iter().map(|r| ex.expand(&st.apply(r))).collect();
    DMatrix::from_fn(rows.len(), ex.n_terms(), |i, j| rows[i][j])
}

pub fn fit_ridge(x: &[Vec<f64>], y: &[f64], order: usize, lambda: f64) -> Result<RidgeModel> {
    if x.len() != y.len() || x.is_empty() {
        return invalid("features and targets must be non-empty and equally long");
    }
    let standardizer = Standardizer::fit(x)?;
    let expansion = PolyExpansion::new(standardizer.mean.len(), order);
    let phi = design_matrix(&standardizer, &expansion, x);
    let w = ridge_solve(&phi, &DVector::from_column_slice(y), lambda)?;
    Ok(RidgeModel {
        standardizer,
        expansion,
        lambda,
        weights: w.iter().cloned().collect(),
    })
}

/// Samples from one day, held out together in cross-validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayGroup {
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSelection {
    pub order: usize,
    pub lambda: f64,
    pub rmse: f64,
    /// (order, lambda, pooled held-out RMSE) for every grid point.
    pub table: Vec<(usize, f64, f64)>,
}

/// Leave-one-day-out selection of polynomial order and ridge penalty.
/// Grid points whose fit fails are skipped; ties keep the earlier point.
pub fn loo_cv_order(groups: &[DayGroup], orders: &[usize], lambdas: &[f64]) -> Result<CvSelection> {
    if groups.len() < 2 {
        return invalid("leave-one-day-out needs at least two days");
    }
    if orders.is_empty() || lambdas.is_empty() {
        return invalid("empty hyperparameter grid");
    }
    let mut table = Vec::new();
    let mut best: Option<(usize, f64, f64)> = None;
    for &order in orders {
        for &lambda in lambdas {
            let mut sse = 0.0;
            let mut count = 0usize;
            let mut failed = false;
            for hold in 0..groups.len() {
                let mut x = Vec::new();
                let mut y = Vec::new();
                for (g, grp) in groups.iter().enumerate() {
                    if g != hold {
                        x.extend(grp.features.iter().cloned());
                        y.extend(grp.targets.iter().cloned());
                    }
                }
                match fit_ridge(&x, &y, order, lambda) {
                    Ok(model) => {
                        for (f, t) in groups[hold].features.iter().zip(&groups[hold].targets) {
                            sse += (model.predict(f) - t).powi(2);
                            count += 1;
                        }
                    }
                    Err(_) => {
                        failed = true;
                        break;
                    }
                }
            }
            if failed || count == 0 {
                continue;
            }
            let rmse = (sse / count as f64).sqrt();
            table.push((order, lambda, rmse));
            if best.map_or(true, |b| rmse < b.2) {
                best = Some((order, lambda, rmse));
            }
        }
    }
    let (order, lambda, rmse) = best.ok_or_else(|| Error::RankDeficient("no grid point could be fitted".into()))?;
    Ok(CvSelection {
        order,
        lambda,
        rmse,
        table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn term_counts_match_closed_form() {
        for d in 1..6 {
            for n in 0..6 {
                let e = PolyExpansion::new(d, n);
                assert_eq!(e.n_terms(), binomial(n + d, d));
                assert_eq!(e.n_terms(), homogeneous_count(n, d + 1));
            }
        }
    }

    #[test]
    fn exponents_unique_and_bounded() {
        let e = PolyExpansion::new(3, 4);
        let mut seen = std::collections::HashSet::new();
        for ex in e.exponents() {
            assert!(ex.iter().map(|&k| k as usize).sum::<usize>() <= 4);
            assert!(seen.insert(ex.clone()));
        }
        assert_eq!(e.exponents()[0], vec![0, 0, 0]);
    }

    #[test]
    fn expansion_values() {
        let e = PolyExpansion::new(2, 2);
        let v = e.expand(&[2.0, 3.0]);
        let mut got = v.clone();
        got.sort_by(f64::total_cmp);
        let mut want = vec![1.0, 2.0, 3.0, 4.0, 6.0, 9.0];
        want.sort_by(f64::total_cmp);
        assert_eq!(got, want);
    }

    #[test]
    fn square_system_interpolates() {
        let phi = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 4.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let w = ridge_solve(&phi, &y, 0.0).unwrap();
        let r = &phi * &w - &y;
        assert!(r.norm() < 1e-12);
    }

    #[test]
    fn rank_deficient_without_penalty() {
        let phi = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert!(matches!(ridge_solve(&phi, &y, 0.0), Err(Error::RankDeficient(_))));
        assert!(ridge_solve(&phi, &y, 1e-3).is_ok());
    }

    #[test]
    fn constant_feature_is_tolerated() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 5.0]).collect();
        let y: Vec<f64> = (0..10).map(|i| 2.0 * i as f64 + 1.0).collect();
        let m = fit_ridge(&x, &y, 1, 1e-9).unwrap();
        assert_relative_eq!(m.predict(&[3.5, 5.0]), 8.0, epsilon = 1e-6);
    }
}
