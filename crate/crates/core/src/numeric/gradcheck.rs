use std::cmp::Ordering;

use crate::error::{Error, Result};

use super::{Gradients, ParamTable};

/// Maximum relative error per parameter from a finite-difference check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<(String, f64)>,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.entries.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<(&str, f64)> {
        self.entries
            .iter()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(n, e)| (n.as_str(), *e))
    }

    /// Names of parameters whose error reaches `tol`.
    pub fn failing(&self, tol: f64) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|(_, e)| e.partial_cmp(&tol) != Some(Ordering::Less))
            .map(|(n, _)| n.as_str())
            .collect()
    }
}

/// Compares analytic gradients against central finite differences.
///
/// `objective(params, grads)` must return the scalar loss and, when handed
/// `Some(grads)`, accumulate its analytic gradient into them. It has to be
/// deterministic (no dropout). The error for each entry is
/// `|a - n| / max(1e-8, |a| + |n|)`; the report keeps the maximum per
/// parameter.
pub fn grad_check<F>(params: &ParamTable, eps: f64, mut objective: F) -> Result<GradCheckReport>
where
    F: FnMut(&ParamTable, Option<&mut Gradients>) -> Result<f64>,
{
    let mut analytic = params.zero_gradients();
    let base = objective(params, Some(&mut analytic))?;
    if !base.is_finite() {
        return Err(Error::Numeric {
            location: "grad_check".into(),
            msg: format!("non-finite loss {base} at the unperturbed point"),
        });
    }

    let mut work = params.clone();
    let mut entries = Vec::with_capacity(params.len());
    for id in params.ids() {
        let mut worst: f64 = 0.0;
        for k in 0..params.get(id).len() {
            let orig = params.get(id).data()[k];
            work.get_mut(id).data_mut()[k] = orig + eps;
            let plus = objective(&work, None)?;
            work.get_mut(id).data_mut()[k] = orig - eps;
            let minus = objective(&work, None)?;
            work.get_mut(id).data_mut()[k] = orig;
            if !(plus.is_finite() && minus.is_finite()) {
                return Err(Error::Numeric {
                    location: format!("grad_check {}[{k}]", params.name(id)),
                    msg: "non-finite loss under perturbation".into(),
                });
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.get(id).data()[k];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
        entries.push((params.name(id).to_string(), worst));
    }
    Ok(GradCheckReport { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::ops;
    use crate::numeric::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    /// Random linear readout so every primitive is checked through a
    /// non-trivial scalar.
    fn readout(y: &Tensor, r: &Tensor) -> (f64, Tensor) {
        (y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum(), r.clone())
    }

    #[test]
    fn identity_of_one_parameter() {
        let mut p = ParamTable::new();
        let id = p.insert("theta", Tensor::vector(vec![0.3]), false);
        let report = grad_check(&p, 1e-5, |p, g| {
            if let Some(g) = g {
                g.get_mut(id).data_mut()[0] += 1.0;
            }
            Ok(p.get(id).data()[0])
        })
        .unwrap();
        assert!(report.max_error() < 1e-9);
        let mut g = p.zero_gradients();
        g.get_mut(id).data_mut()[0] += 1.0;
        assert_eq!(g.get(id).data()[0], 1.0);
    }

    #[test]
    fn affine_layer() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut p = ParamTable::new();
            let x = p.insert("x", random(&[3, 4], &mut rng), false);
            let w = p.insert("w", random(&[4, 5], &mut rng), true);
            let b = p.insert("b", random(&[5], &mut rng), false);
            let r = random(&[3, 5], &mut rng);
            let report = grad_check(&p, 1e-5, |p, g| {
                let y = ops::affine(p.get(x), p.get(w), p.get(b));
                let (loss, dy) = readout(&y, &r);
                if let Some(g) = g {
                    let mut dw = Tensor::zeros(p.get(w).shape());
                    let mut db = Tensor::zeros(p.get(b).shape());
                    let dx = ops::affine_backward(p.get(x), p.get(w), &dy, &mut dw, &mut db);
                    g.get_mut(x).add_assign(&dx);
                    g.get_mut(w).add_assign(&dw);
                    g.get_mut(b).add_assign(&db);
                }
                Ok(loss)
            })
            .unwrap();
            assert!(report.max_error() < 1e-6, "seed {seed}: {report:?}");
        }
    }

    #[test]
    fn masked_softmax_with_dot_product() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let mut p = ParamTable::new();
            let q = p.insert("q", random(&[3, 4], &mut rng), false);
            let k = p.insert("k", random(&[5, 4], &mut rng), false);
            let mask = vec![true, false, false, true, false];
            let r = random(&[3, 5], &mut rng);
            let report = grad_check(&p, 1e-5, |p, g| {
                let s = ops::matmul_bt(p.get(q), p.get(k));
                let a = ops::masked_softmax(&s, &mask, ops::MASK_NEG);
                let (loss, da) = readout(&a, &r);
                if let Some(g) = g {
                    let ds = ops::softmax_backward(&a, &da);
                    let dq = ops::matmul(&ds, p.get(k));
                    g.get_mut(q).add_assign(&dq);
                    ops::matmul_at_acc(g.get_mut(k), &ds, p.get(q));
                }
                Ok(loss)
            })
            .unwrap();
            assert!(report.max_error() < 1e-5, "seed {seed}: {report:?}");
        }
    }

    #[test]
    fn elementwise_primitives() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
            let mut p = ParamTable::new();
            // keep clamp test points away from the kink at +-bound
            let xs: Vec<f64> = (0..12)
                .map(|_| {
                    let v: f64 = rng.gen_range(0.2..2.0);
                    if rng.gen_bool(0.5) { v } else { -v }
                })
                .collect();
            let x = p.insert("x", Tensor::matrix(3, 4, xs), false);
            let gain = p.insert("gain", random(&[4], &mut rng), false);
            let shift = p.insert("shift", random(&[4], &mut rng), false);
            let other = p.insert("other", random(&[3, 4], &mut rng), false);
            let r = random(&[3, 4], &mut rng);
            let bound = 1.0;
            let report = grad_check(&p, 1e-5, |p, g| {
                let (ln, cache) = ops::layer_norm(p.get(x), p.get(gain), p.get(shift));
                let ge = ops::gelu(&ln);
                let re = ops::relu(p.get(x));
                let cl = ops::clamp_logits(p.get(x), bound);
                let hd = ops::hadamard(&ge, p.get(other));
                let mut total = hd.clone();
                total.add_assign(&re);
                total.add_assign(&cl);
                let (loss, dy) = readout(&total, &r);
                if let Some(g) = g {
                    let (dge, dother) = ops::hadamard_backward(&ge, p.get(other), &dy);
                    g.get_mut(other).add_assign(&dother);
                    let dln = ops::gelu_backward(&ln, &dge);
                    let mut dgain = Tensor::zeros(&[4]);
                    let mut dshift = Tensor::zeros(&[4]);
                    let mut dx = ops::layer_norm_backward(&cache, p.get(gain), &dln, &mut dgain, &mut dshift);
                    dx.add_assign(&ops::relu_backward(p.get(x), &dy));
                    dx.add_assign(&ops::clamp_backward(p.get(x), &dy, bound));
                    g.get_mut(x).add_assign(&dx);
                    g.get_mut(gain).add_assign(&dgain);
                    g.get_mut(shift).add_assign(&dshift);
                }
                Ok(loss)
            })
            .unwrap();
            assert!(report.max_error() < 1e-5, "seed {seed}: {report:?}");
        }
    }

    #[test]
    fn embedding_and_fixed_dropout() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
            let mut p = ParamTable::new();
            let table = p.insert("table", random(&[6, 3], &mut rng), true);
            let idx = [1usize, 4, 1, 0];
            let r = random(&[4, 3], &mut rng);
            // a fixed mask makes dropout a deterministic function for the check
            let (_, mask) = ops::dropout(&Tensor::zeros(&[4, 3]), 0.3, true, &mut rng);
            let mask = mask.unwrap();
            let report = grad_check(&p, 1e-5, |p, g| {
                let e = ops::embed_lookup(p.get(table), &idx);
                let y = Tensor::new(e.shape(), e.data().iter().zip(&mask).map(|(v, s)| v * s).collect());
                let (loss, dy) = readout(&y, &r);
                if let Some(g) = g {
                    let de = ops::dropout_backward(Some(&mask), &dy);
                    ops::embed_backward(g.get_mut(table), &idx, &de, None);
                }
                Ok(loss)
            })
            .unwrap();
            assert!(report.max_error() < 1e-5, "seed {seed}: {report:?}");
        }
    }

    #[test]
    fn wrong_gradient_is_reported_by_name() {
        let mut p = ParamTable::new();
        let a = p.insert("a", Tensor::vector(vec![0.5, -1.5]), false);
        let b = p.insert("b", Tensor::vector(vec![2.0]), false);
        let report = grad_check(&p, 1e-5, |p, g| {
            let (x, y, z) = (p.get(a).data()[0], p.get(a).data()[1], p.get(b).data()[0]);
            if let Some(g) = g {
                g.get_mut(a).data_mut()[0] += 2.0 * x;
                g.get_mut(a).data_mut()[1] += 3.0 * y * y;
                g.get_mut(b).data_mut()[0] += 2.0 * z; // wrong: should be cos(z)
            }
            Ok(x * x + y * y * y + z.sin())
        })
        .unwrap();
        assert_eq!(report.failing(1e-4), vec!["b"]);
        assert_eq!(report.worst().unwrap().0, "b");
    }

    #[test]
    fn non_finite_loss_aborts() {
        let mut p = ParamTable::new();
        p.insert("a", Tensor::vector(vec![0.0]), false);
        let r = grad_check(&p, 1e-5, |_, _| Ok(f64::NAN));
        assert!(matches!(r, Err(Error::Numeric { .. })));
    }
}
