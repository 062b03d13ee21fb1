//! Differentiable primitives. Every forward has a matching `*_backward`
//! that maps the upstream gradient to input gradients and accumulates
//! parameter gradients into caller-provided buffers.

use rand::Rng;

use super::Tensor;

/// Additive penalty applied to masked logits before the softmax.
pub const MASK_NEG: f64 = 1e4;
/// Default symmetric bound for attention logits.
pub const LOGIT_BOUND: f64 = 50.0;
pub const LN_EPS: f64 = 1e-9;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// `c = op(a) · op(b)`, or `c += ...` when `accumulate` is set. `op(a)` is
/// `m × k` and `op(b)` is `k × n`; a transposed operand is stored in its
/// untransposed layout.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k, "gemm: lhs has {} values, expected {m}x{k}", a.len());
    assert_eq!(b.len(), k * n, "gemm: rhs has {} values, expected {k}x{n}", b.len());
    assert_eq!(c.len(), m * n, "gemm: output has {} values, expected {m}x{n}", c.len());
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.fill(0.0);
        }
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: slice lengths are checked above against the logical extents,
    // and the strides address exactly those extents.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `a · b` for `a: [m × k]`, `b: [k × n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    assert_eq!(b.rows(), k, "matmul: inner extents differ ({k} vs {})", b.rows());
    let mut out = Tensor::zeros(&[m, n]);
    gemm(m, k, n, a.data(), false, b.data(), false, out.data_mut(), false);
    out
}

/// `a · bᵀ` for `a: [m × k]`, `b: [n × k]`.
pub fn matmul_bt(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows(), a.cols(), b.rows());
    assert_eq!(b.cols(), k, "matmul_bt: inner extents differ ({k} vs {})", b.cols());
    let mut out = Tensor::zeros(&[m, n]);
    gemm(m, k, n, a.data(), false, b.data(), true, out.data_mut(), false);
    out
}

/// `acc += aᵀ · b` for `a: [r × m]`, `b: [r × n]`.
pub fn matmul_at_acc(acc: &mut Tensor, a: &Tensor, b: &Tensor) {
    let (r, m, n) = (a.rows(), a.cols(), b.cols());
    assert_eq!(b.rows(), r, "matmul_at_acc: row counts differ");
    assert_eq!((acc.rows(), acc.cols()), (m, n), "matmul_at_acc: accumulator shape");
    gemm(m, r, n, a.data(), true, b.data(), false, acc.data_mut(), true);
}

// ---------------------------------------------------------------- affine

/// `x · w + b` for `x: [n × in]`, `w: [in × out]`, `b: [out]`.
pub fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(b.len(), w.cols(), "affine: bias length");
    let mut y = matmul(x, w);
    for r in 0..y.rows() {
        y.row_mut(r).iter_mut().zip(b.data()).for_each(|(v, bb)| *v += bb);
    }
    y
}

pub fn affine_backward(x: &Tensor, w: &Tensor, dy: &Tensor, dw: &mut Tensor, db: &mut Tensor) -> Tensor {
    matmul_at_acc(dw, x, dy);
    for r in 0..dy.rows() {
        db.data_mut().iter_mut().zip(dy.row(r)).for_each(|(g, d)| *g += d);
    }
    matmul_bt(dy, w)
}

// --------------------------------------------------------------- softmax

/// Row-wise softmax where masked entries get `logit - neg_const`.
///
/// `mask` is either one flag per column (broadcast over rows) or one flag
/// per element; `true` means masked. Rows with every entry masked produce
/// all zeros.
pub fn masked_softmax(logits: &Tensor, mask: &[bool], neg_const: f64) -> Tensor {
    let (rows, cols) = (logits.rows(), logits.cols());
    let per_row = if mask.len() == cols {
        false
    } else if mask.len() == rows * cols {
        true
    } else {
        panic!(
            "masked_softmax: mask of length {} does not conform to {rows}x{cols} logits",
            mask.len()
        );
    };
    let mut out = Tensor::zeros(&[rows, cols]);
    for r in 0..rows {
        let m = if per_row { &mask[r * cols..(r + 1) * cols] } else { mask };
        if m.iter().all(|&x| x) {
            continue;
        }
        let src = logits.row(r);
        let dst = out.row_mut(r);
        let mut max = f64::NEG_INFINITY;
        for j in 0..cols {
            let z = if m[j] { src[j] - neg_const } else { src[j] };
            dst[j] = z;
            max = max.max(z);
        }
        let mut sum = 0.0;
        for v in dst.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        dst.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

/// Gradient of a row-wise softmax given its output `p`.
pub fn softmax_backward(p: &Tensor, dp: &Tensor) -> Tensor {
    let mut dz = Tensor::zeros(p.shape());
    for r in 0..p.rows() {
        let (pr, dr) = (p.row(r), dp.row(r));
        let dot: f64 = pr.iter().zip(dr).map(|(a, b)| a * b).sum();
        dz.row_mut(r)
            .iter_mut()
            .zip(pr.iter().zip(dr))
            .for_each(|(g, (pv, dv))| *g = pv * (dv - dot));
    }
    dz
}

// ----------------------------------------------------------------- clamp

pub fn clamp_logits(x: &Tensor, bound: f64) -> Tensor {
    let data = x.data().iter().map(|v| v.clamp(-bound, bound)).collect();
    Tensor::new(x.shape(), data)
}

/// Hard clip: entries outside `[-bound, bound]` receive zero gradient.
pub fn clamp_backward(x: &Tensor, dy: &Tensor, bound: f64) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(v, d)| if v.abs() <= bound { *d } else { 0.0 })
        .collect();
    Tensor::new(x.shape(), data)
}

// ------------------------------------------------------------ layer norm

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
}

impl LayerNormCache {
    pub fn normalized(&self) -> &Tensor {
        &self.xhat
    }
}

/// Row-wise normalization to zero mean and unit (population) variance,
/// followed by an elementwise gain and shift.
pub fn layer_norm(x: &Tensor, gain: &Tensor, shift: &Tensor) -> (Tensor, LayerNormCache) {
    let (rows, d) = (x.rows(), x.cols());
    assert_eq!(gain.len(), d, "layer_norm: gain length");
    assert_eq!(shift.len(), d, "layer_norm: shift length");
    let mut xhat = Tensor::zeros(&[rows, d]);
    let mut y = Tensor::zeros(&[rows, d]);
    let mut inv_std = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(inv);
        let xh = xhat.row_mut(r);
        let yr = y.row_mut(r);
        for j in 0..d {
            xh[j] = (row[j] - mean) * inv;
            yr[j] = gain.data()[j] * xh[j] + shift.data()[j];
        }
    }
    (y, LayerNormCache { xhat, inv_std })
}

pub fn layer_norm_backward(
    cache: &LayerNormCache,
    gain: &Tensor,
    dy: &Tensor,
    dgain: &mut Tensor,
    dshift: &mut Tensor,
) -> Tensor {
    let (rows, d) = (dy.rows(), dy.cols());
    let mut dx = Tensor::zeros(&[rows, d]);
    let mut dxhat = vec![0.0; d];
    for r in 0..rows {
        let (xh, g) = (cache.xhat.row(r), dy.row(r));
        for j in 0..d {
            dgain.data_mut()[j] += g[j] * xh[j];
            dshift.data_mut()[j] += g[j];
            dxhat[j] = g[j] * gain.data()[j];
        }
        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        let inv = cache.inv_std[r];
        let out = dx.row_mut(r);
        for j in 0..d {
            out[j] = inv * (dxhat[j] - mean_d - xh[j] * mean_dx);
        }
    }
    dx
}

// ----------------------------------------------------------- activations

/// GELU, tanh approximation.
pub fn gelu(x: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .map(|&v| 0.5 * v * (1.0 + (GELU_C * (v + GELU_A * v * v * v)).tanh()))
        .collect();
    Tensor::new(x.shape(), data)
}

pub fn gelu_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &d)| {
            let t = (GELU_C * (v + GELU_A * v * v * v)).tanh();
            let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * v * v);
            d * (0.5 * (1.0 + t) + 0.5 * v * dt)
        })
        .collect();
    Tensor::new(x.shape(), data)
}

pub fn relu(x: &Tensor) -> Tensor {
    Tensor::new(x.shape(), x.data().iter().map(|v| v.max(0.0)).collect())
}

pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(v, d)| if *v > 0.0 { *d } else { 0.0 })
        .collect();
    Tensor::new(x.shape(), data)
}

// --------------------------------------------------------------- dropout

/// Inverted dropout. Returns the output and the per-element scale that was
/// applied (`None` when dropout was inactive, i.e. the identity).
pub fn dropout<R: Rng + ?Sized>(x: &Tensor, rate: f64, train: bool, rng: &mut R) -> (Tensor, Option<Vec<f64>>) {
    if !train || rate <= 0.0 {
        return (x.clone(), None);
    }
    let keep = 1.0 - rate;
    let scale: Vec<f64> = (0..x.len())
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { 1.0 / keep })
        .collect();
    let data = x.data().iter().zip(&scale).map(|(v, s)| v * s).collect();
    (Tensor::new(x.shape(), data), Some(scale))
}

pub fn dropout_backward(scale: Option<&[f64]>, dy: &Tensor) -> Tensor {
    match scale {
        None => dy.clone(),
        Some(s) => Tensor::new(dy.shape(), dy.data().iter().zip(s).map(|(d, k)| d * k).collect()),
    }
}

// ------------------------------------------------------------- embedding

/// Gathers `table` rows; the caller guarantees indices are in range.
pub fn embed_lookup(table: &Tensor, indices: &[usize]) -> Tensor {
    let d = table.cols();
    let mut out = Tensor::zeros(&[indices.len(), d]);
    for (r, &i) in indices.iter().enumerate() {
        out.row_mut(r).copy_from_slice(table.row(i));
    }
    out
}

/// Scatter-adds `dy` rows into `dtable`, skipping indices in `frozen`.
pub fn embed_backward(dtable: &mut Tensor, indices: &[usize], dy: &Tensor, frozen: Option<usize>) {
    for (r, &i) in indices.iter().enumerate() {
        if Some(i) == frozen {
            continue;
        }
        dtable
            .row_mut(i)
            .iter_mut()
            .zip(dy.row(r))
            .for_each(|(g, d)| *g += d);
    }
}

// -------------------------------------------------------------- hadamard

pub fn hadamard(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.shape(), b.shape(), "hadamard: shape mismatch");
    Tensor::new(a.shape(), a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect())
}

pub fn hadamard_backward(a: &Tensor, b: &Tensor, dy: &Tensor) -> (Tensor, Tensor) {
    (hadamard(dy, b), hadamard(dy, a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn gemm_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&[3, 5], &mut rng);
        let b = random(&[5, 4], &mut rng);
        let c = matmul(&a, &b);
        for i in 0..3 {
            for j in 0..4 {
                let naive: f64 = (0..5).map(|k| a.at(i, k) * b.at(k, j)).sum();
                assert!((c.at(i, j) - naive).abs() < 1e-12);
            }
        }
        let bt = Tensor::new(&[4, 5], (0..20).map(|i| b.at(i % 5, i / 5)).collect());
        let c2 = matmul_bt(&a, &bt);
        assert!(c.data().iter().zip(c2.data()).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn softmax_examples() {
        let p = masked_softmax(&Tensor::matrix(1, 2, vec![0.0, 0.0]), &[false, false], MASK_NEG);
        assert_eq!(p.data(), &[0.5, 0.5]);
        let p = masked_softmax(&Tensor::matrix(1, 2, vec![1.0, 2.0]), &[false, true], MASK_NEG);
        assert!((p.data()[0] - 1.0).abs() < 1e-12);
        assert!(p.data()[1] < 1e-6);
        let p = masked_softmax(&Tensor::matrix(1, 2, vec![3.0, -1.0]), &[true, true], MASK_NEG);
        assert_eq!(p.data(), &[0.0, 0.0]);
    }

    #[test]
    fn softmax_per_element_mask() {
        let logits = Tensor::matrix(2, 2, vec![0.0, 5.0, 0.0, 5.0]);
        let p = masked_softmax(&logits, &[false, true, true, true], MASK_NEG);
        assert_eq!(p.row(0), &[1.0, 0.0]);
        assert_eq!(p.row(1), &[0.0, 0.0]);
    }

    #[test]
    #[should_panic(expected = "does not conform")]
    fn softmax_mask_shape_mismatch_panics() {
        masked_softmax(&Tensor::matrix(2, 3, vec![0.0; 6]), &[false; 4], MASK_NEG);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let logits = random(&[4, 7], &mut rng);
            let mask: Vec<bool> = (0..28).map(|i| i % 7 == 0 || rng.gen_bool(0.3)).collect();
            let p = masked_softmax(&logits, &mask, MASK_NEG);
            for r in 0..4 {
                let m = &mask[r * 7..(r + 1) * 7];
                let row = p.row(r);
                if m.iter().all(|&x| x) {
                    assert!(row.iter().all(|&v| v == 0.0));
                    continue;
                }
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                let masked_mass: f64 = row.iter().zip(m).filter(|(_, &mm)| mm).map(|(v, _)| v).sum();
                assert!(masked_mass < 1e-6);
            }
        }
    }

    #[test]
    fn clamp_examples() {
        let y = clamp_logits(&Tensor::vector(vec![0.0, 120.0, -120.0]), LOGIT_BOUND);
        assert_eq!(y.data(), &[0.0, 50.0, -50.0]);
        let g = clamp_backward(&Tensor::vector(vec![0.0, 120.0, -120.0]), &Tensor::vector(vec![1.0; 3]), 50.0);
        assert_eq!(g.data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn layer_norm_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&[6, 16], &mut rng);
        let (_, cache) = layer_norm(&x, &Tensor::filled(&[16], 1.0), &Tensor::zeros(&[16]));
        for r in 0..6 {
            let row = cache.normalized().row(r);
            let mean = row.iter().sum::<f64>() / 16.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn dropout_off_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&[3, 3], &mut rng);
        let (y, s) = dropout(&x, 0.5, false, &mut rng);
        assert_eq!(x, y);
        assert!(s.is_none());
        let (y, s) = dropout(&x, 0.5, true, &mut rng);
        let s = s.unwrap();
        for (i, v) in y.data().iter().enumerate() {
            assert!(s[i] == 0.0 || (s[i] - 2.0).abs() < 1e-15);
            assert_eq!(*v, x.data()[i] * s[i]);
        }
    }

    #[test]
    fn gelu_known_values() {
        let y = gelu(&Tensor::vector(vec![0.0, 1.0, -1.0]));
        assert_eq!(y.data()[0], 0.0);
        assert!((y.data()[1] - 0.841_191_990_607_477_2).abs() < 1e-12);
        assert!((y.data()[2] + 0.158_808_009_392_522_8).abs() < 1e-12);
    }

    #[test]
    fn embed_scatter_skips_frozen_row() {
        let table = Tensor::matrix(3, 2, vec![0.0, 0.0, 1.0, 2.0, 3.0, 4.0]);
        let y = embed_lookup(&table, &[2, 0, 2]);
        assert_eq!(y.data(), &[3.0, 4.0, 0.0, 0.0, 3.0, 4.0]);
        let mut g = Tensor::zeros(&[3, 2]);
        embed_backward(&mut g, &[2, 0, 2], &Tensor::filled(&[3, 2], 1.0), Some(0));
        assert_eq!(g.data(), &[0.0, 0.0, 0.0, 0.0, 2.0, 2.0]);
    }
}
