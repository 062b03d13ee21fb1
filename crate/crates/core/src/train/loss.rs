//! Label-smoothed, instance-weighted cross-entropy with the positive at
//! index 0.

use crate::error::{Error, Result};

fn check(scores: &[f64], smoothing: f64) -> Result<()> {
    if scores.len() < 2 {
        return Err(Error::Contract("cross-entropy needs at least two candidates".into()));
    }
    if !(0.0..1.0).contains(&smoothing) {
        return Err(Error::Contract(format!("label smoothing {smoothing} outside [0, 1)")));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric {
            location: "loss".into(),
            msg: "non-finite score".into(),
        });
    }
    Ok(())
}

fn target(j: usize, c: usize, smoothing: f64) -> f64 {
    if j == 0 {
        1.0 - smoothing
    } else {
        smoothing / (c - 1) as f64
    }
}

/// Loss and its gradient with respect to the scores.
pub fn ce_loss_with_grad(scores: &[f64], smoothing: f64, weight: f64) -> Result<(f64, Vec<f64>)> {
    check(scores, smoothing)?;
    let c = scores.len();
    let (top, max) = scores
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (j, s)| if s > acc.1 { (j, s) } else { acc });
    // log Z - max, computed as ln(1 + rest) to keep tiny losses accurate
    let rest: f64 = scores
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != top)
        .map(|(_, s)| (s - max).exp())
        .sum();
    let offset = rest.ln_1p();
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(c);
    for (j, &s) in scores.iter().enumerate() {
        let q = target(j, c, smoothing);
        let neg_log_p = (max - s) + offset;
        if q > 0.0 {
            loss += q * neg_log_p;
        }
        grad.push(weight * ((-neg_log_p).exp() - q));
    }
    Ok((weight * loss, grad))
}

pub fn ce_loss(scores: &[f64], smoothing: f64, weight: f64) -> Result<f64> {
    ce_loss_with_grad(scores, smoothing, weight).map(|(l, _)| l)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_scores_give_log_c() {
        let l = ce_loss(&[0.3; 7], 0.0, 1.0).unwrap();
        assert!((l - 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_pair() {
        // -ln sigmoid(20) = ln(1 + e^-20)
        let l = ce_loss(&[10.0, -10.0], 0.0, 1.0).unwrap();
        let expected = (-20f64).exp().ln_1p();
        assert!((l - expected).abs() < 1e-20);
        assert!((l - 2.061e-9).abs() < 1e-12);
    }

    #[test]
    fn weight_scales_linearly() {
        let s = [0.4, -1.2, 2.0];
        let a = ce_loss(&s, 0.0, 1.0).unwrap();
        let b = ce_loss(&s, 0.0, 2.0).unwrap();
        assert_eq!(b, 2.0 * a);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let s = vec![0.4, -1.2, 2.0, 0.1];
        let (_, g) = ce_loss_with_grad(&s, 0.1, 1.5).unwrap();
        for j in 0..s.len() {
            let mut p = s.clone();
            let mut m = s.clone();
            p[j] += 1e-6;
            m[j] -= 1e-6;
            let fd = (ce_loss(&p, 0.1, 1.5).unwrap() - ce_loss(&m, 0.1, 1.5).unwrap()) / 2e-6;
            assert!((fd - g[j]).abs() < 1e-8);
        }
        assert!(g.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ce_loss(&[1.0], 0.0, 1.0).is_err());
        assert!(ce_loss(&[1.0, f64::NAN], 0.0, 1.0).is_err());
        assert!(ce_loss(&[1.0, 0.0], 1.0, 1.0).is_err());
    }
}
