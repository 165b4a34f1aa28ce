//! Regression metrics and the NASA prognostics score.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// Which sign layout of the asymmetric score to use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreConvention {
    /// `e^{−d/13} − 1` for early (`d < 0`), `e^{d/10} − 1` for late
    /// predictions, with `d = ŷ − y`. Always non-negative.
    #[default]
    Standard,
    /// `e^{−d/13} − 1` for `d ≥ 0` and `e^{−d/10} − 1` for `d < 0`: the
    /// formula as printed, which scores late predictions negative.
    AsPrinted,
}

impl ScoreConvention {
    pub fn name(self) -> &'static str {
        match self {
            ScoreConvention::Standard => "standard",
            ScoreConvention::AsPrinted => "as_printed",
        }
    }
}

fn check_pair(predictions: &[f64], labels: &[f64]) -> Result<()> {
    if predictions.len() != labels.len() {
        return Err(Error::contract(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::contract("metrics need at least one sample"));
    }
    Ok(())
}

/// Mean squared error on the tape; `predictions` and `labels` share a shape.
pub fn mse_loss(tape: &mut Tape, predictions: Var, labels: Var) -> Result<Var> {
    if tape.value(predictions).is_empty() {
        return Err(Error::contract("mse_loss on an empty batch"));
    }
    let r = tape.sub(predictions, labels)?;
    let sq = tape.mul(r, r)?;
    tape.mean(sq)
}

pub fn sum_squared_error(predictions: &[f64], labels: &[f64]) -> f64 {
    predictions.iter().zip(labels).map(|(p, y)| (p - y) * (p - y)).sum()
}

pub fn mse(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    check_pair(predictions, labels)?;
    Ok(sum_squared_error(predictions, labels) / labels.len() as f64)
}

pub fn rmse(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    mse(predictions, labels).map(f64::sqrt)
}

pub fn mae(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    check_pair(predictions, labels)?;
    Ok(predictions.iter().zip(labels).map(|(p, y)| (p - y).abs()).sum::<f64>() / labels.len() as f64)
}

/// Coefficient of determination. With constant labels it is 1 for an exact
/// fit and 0 otherwise.
pub fn r_squared(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    check_pair(predictions, labels)?;
    let mean = labels.iter().sum::<f64>() / labels.len() as f64;
    let total: f64 = labels.iter().map(|y| (y - mean) * (y - mean)).sum();
    let residual = sum_squared_error(predictions, labels);
    if total == 0.0 {
        return Ok(if residual == 0.0 { 1.0 } else { 0.0 });
    }
    Ok(1.0 - residual / total)
}

/// Score of one prediction error `d = ŷ − y`.
pub fn score_term(d: f64, convention: ScoreConvention) -> f64 {
    match convention {
        ScoreConvention::Standard if d < 0.0 => (-d / 13.0).exp() - 1.0,
        ScoreConvention::Standard => (d / 10.0).exp() - 1.0,
        ScoreConvention::AsPrinted if d >= 0.0 => (-d / 13.0).exp() - 1.0,
        ScoreConvention::AsPrinted => (-d / 10.0).exp() - 1.0,
    }
}

pub fn nasa_score(predictions: &[f64], labels: &[f64], convention: ScoreConvention) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::contract(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    Ok(predictions
        .iter()
        .zip(labels)
        .map(|(p, y)| score_term(p - y, convention))
        .sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    pub score: f64,
    pub mae: f64,
    pub r_squared: f64,
    pub n: usize,
}

impl Metrics {
    pub fn compute(predictions: &[f64], labels: &[f64], convention: ScoreConvention) -> Result<Self> {
        Ok(Metrics {
            rmse: rmse(predictions, labels)?,
            score: nasa_score(predictions, labels, convention)?,
            mae: mae(predictions, labels)?,
            r_squared: r_squared(predictions, labels)?,
            n: labels.len(),
        })
    }
}

/// RMSE of a union of groups from each group's `(RMSE, n)`.
pub fn pooled_rmse(groups: &[(f64, usize)]) -> f64 {
    let (sum, n) = groups
        .iter()
        .fold((0.0, 0usize), |(s, c), &(r, k)| (s + r * r * k as f64, c + k));
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check, FD_STEP};
    use crate::tensor::Tensor;
    use proptest::prelude::*;

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse(&[0.0], &[2.0]).unwrap(), 4.0);
        assert!(mse(&[], &[]).is_err());
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::vector(vec![0.0]));
        let y = tape.constant(Tensor::vector(vec![2.0]));
        let l = mse_loss(&mut tape, p, y).unwrap();
        assert_eq!(tape.value(l).item().unwrap(), 4.0);
    }

    #[test]
    fn mse_gradient_is_two_residuals_over_n() {
        let p = Tensor::vector(vec![0.3, -1.0, 2.5]);
        let y = Tensor::vector(vec![1.0, 1.0, 1.0]);
        let report = check(&[p.clone()], FD_STEP, |tape, v| {
            let y = tape.constant(y.clone());
            mse_loss(tape, v[0], y)
        })
        .unwrap();
        let want: Vec<f64> = p.values().iter().zip(y.values()).map(|(a, b)| 2.0 * (a - b) / 3.0).collect();
        for (a, b) in report.analytic[0].iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(report.max_relative_error() < 1e-8);
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[4.0, 5.0], &[4.0, 5.0]).unwrap(), 0.0);
        let r = rmse(&[3.0, -4.0], &[0.0, 0.0]).unwrap();
        assert!((r - 12.5f64.sqrt()).abs() < 1e-15);
        assert!((r - 3.5355).abs() < 1e-4);
    }

    #[test]
    fn score_examples() {
        let s = ScoreConvention::Standard;
        assert_eq!(nasa_score(&[10.0, 20.0], &[10.0, 20.0], s).unwrap(), 0.0);
        assert_eq!(score_term(0.0, s), 0.0);
        let e1 = std::f64::consts::E - 1.0;
        assert!((nasa_score(&[20.0], &[10.0], s).unwrap() - e1).abs() < 1e-12);
        assert!((nasa_score(&[0.0], &[13.0], s).unwrap() - e1).abs() < 1e-12);
        assert!(score_term(13.0, s).abs() > score_term(-13.0, s).abs());
    }

    #[test]
    fn printed_convention_scores_late_predictions_negative() {
        let p = ScoreConvention::AsPrinted;
        assert_eq!(score_term(0.0, p), 0.0);
        assert!(score_term(10.0, p) < 0.0);
        assert!((score_term(-10.0, p) - (std::f64::consts::E - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn r_squared_and_mae() {
        let y = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(r_squared(&y, &y).unwrap(), 1.0);
        assert_eq!(r_squared(&[2.5; 4], &y).unwrap(), 0.0);
        assert_eq!(mae(&[0.0, 4.0], &[1.0, 1.0]).unwrap(), 2.0);
    }

    proptest! {
        #[test]
        fn pooling_and_additivity(
            a in proptest::collection::vec((0.0f64..150.0, 0.0f64..150.0), 1..20),
            b in proptest::collection::vec((0.0f64..150.0, 0.0f64..150.0), 1..20),
        ) {
            let (pa, ya): (Vec<f64>, Vec<f64>) = a.iter().copied().unzip();
            let (pb, yb): (Vec<f64>, Vec<f64>) = b.iter().copied().unzip();
            let all_p: Vec<f64> = pa.iter().chain(&pb).copied().collect();
            let all_y: Vec<f64> = ya.iter().chain(&yb).copied().collect();
            let direct = rmse(&all_p, &all_y).unwrap();
            let (s1, s2) = (sum_squared_error(&pa, &ya), sum_squared_error(&pb, &yb));
            let identity = ((s1 + s2) / (pa.len() + pb.len()) as f64).sqrt();
            prop_assert!((direct - identity).abs() < 1e-9);
            let pooled = pooled_rmse(&[(rmse(&pa, &ya).unwrap(), pa.len()), (rmse(&pb, &yb).unwrap(), pb.len())]);
            prop_assert!((direct - pooled).abs() < 1e-9);
            let s = ScoreConvention::Standard;
            let whole = nasa_score(&all_p, &all_y, s).unwrap();
            let parts = nasa_score(&pa, &ya, s).unwrap() + nasa_score(&pb, &yb, s).unwrap();
            prop_assert!((whole - parts).abs() <= 1e-9 * whole.abs().max(1.0));
            prop_assert!(whole >= 0.0);
            prop_assert!((rmse(&all_p, &all_y).unwrap() - mse(&all_p, &all_y).unwrap().sqrt()).abs() < 1e-12);
        }
    }
}
