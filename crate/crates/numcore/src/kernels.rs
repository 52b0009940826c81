// Dense row-major kernels shared by forward and backward passes.

use crate::real::Real;

/// c[m×n] = a[m×k] · b[k×n]
pub(crate) fn matmul<F: Real>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut c = vec![F::zero(); m * n];
    for i in 0..m {
        let row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == F::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in row.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// da[m×k] += dc[m×n] · bᵀ
pub(crate) fn matmul_grad_a<F: Real>(
    da: &mut [F],
    dc: &[F],
    b: &[F],
    m: usize,
    k: usize,
    n: usize,
) {
    for i in 0..m {
        let dcrow = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut acc = F::zero();
            for (&x, &y) in dcrow.iter().zip(brow) {
                acc += x * y;
            }
            da[i * k + p] += acc;
        }
    }
}

/// db[k×n] += aᵀ · dc[m×n]
pub(crate) fn matmul_grad_b<F: Real>(
    db: &mut [F],
    dc: &[F],
    a: &[F],
    m: usize,
    k: usize,
    n: usize,
) {
    for i in 0..m {
        let dcrow = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == F::zero() {
                continue;
            }
            let dbrow = &mut db[p * n..(p + 1) * n];
            for (d, &g) in dbrow.iter_mut().zip(dcrow) {
                *d += av * g;
            }
        }
    }
}

pub(crate) fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// Row-wise softmax over a rows×cols block.
pub(crate) fn softmax_rows<F: Real>(x: &[F], cols: usize) -> Vec<F> {
    let mut out = vec![F::zero(); x.len()];
    for (src, dst) in x.chunks(cols).zip(out.chunks_mut(cols)) {
        let max = src.iter().copied().fold(F::neg_infinity(), F::max);
        let mut total = F::zero();
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - max).exp();
            total += *d;
        }
        for d in dst.iter_mut() {
            *d /= total;
        }
    }
    out
}

/// Row-wise log-softmax over a rows×cols block.
pub(crate) fn log_softmax_rows<F: Real>(x: &[F], cols: usize) -> Vec<F> {
    let mut out = vec![F::zero(); x.len()];
    for (src, dst) in x.chunks(cols).zip(out.chunks_mut(cols)) {
        let (arg, max) =
            src.iter()
                .copied()
                .enumerate()
                .fold((0, F::neg_infinity()), |best, (i, s)| {
                    if s > best.1 {
                        (i, s)
                    } else {
                        best
                    }
                });
        // ln Σ exp(s - max) = ln(1 + rest); ln_1p keeps precision for confident rows
        let rest: F = src
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != arg)
            .map(|(_, &s)| (s - max).exp())
            .sum();
        let log_total = rest.ln_1p();
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - max) - log_total;
        }
    }
    out
}
