//! Dense row-major kernels shared by forward and backward passes.

use super::tensor::Scalar;

/// `c[m×n] += a[m×k] · b[k×n]`
pub(crate) fn matmul_acc<F: Scalar>(a: &[F], b: &[F], c: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (cj, &bj) in crow.iter_mut().zip(brow) {
                *cj = *cj + aip * bj;
            }
        }
    }
}

/// `c[m×n] += a[m×k] · b[n×k]ᵀ`
pub(crate) fn matmul_t_acc<F: Scalar>(a: &[F], b: &[F], c: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        let mut j = 0;
        while j + 4 <= n {
            let d = dot4(arow, &b[j * k..(j + 4) * k], k);
            for (cv, dv) in crow[j..j + 4].iter_mut().zip(d) {
                *cv = *cv + dv;
            }
            j += 4;
        }
        for jj in j..n {
            crow[jj] = crow[jj] + dot(arow, &b[jj * k..(jj + 1) * k]);
        }
    }
}

/// `c[n×k] += x[m×n]ᵀ · y[m×k]`
pub(crate) fn t_matmul_acc<F: Scalar>(x: &[F], y: &[F], c: &mut [F], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let yrow = &y[i * k..(i + 1) * k];
        for j in 0..n {
            let xij = x[i * n + j];
            let crow = &mut c[j * k..(j + 1) * k];
            for (cv, &yv) in crow.iter_mut().zip(yrow) {
                *cv = *cv + xij * yv;
            }
        }
    }
}

/// Dot product with eight interleaved partial sums.
///
/// Lane `j` sums the products at indices `≡ j (mod 8)`, so appending zeros to
/// both operands in whole multiples of eight leaves the result bit-identical.
#[inline]
pub(crate) fn dot<F: Scalar>(x: &[F], y: &[F]) -> F {
    const LANES: usize = 8;
    let mut acc = [F::zero(); LANES];
    let xs = x.chunks_exact(LANES);
    let ys = y.chunks_exact(LANES);
    let (xr, yr) = (xs.remainder(), ys.remainder());
    for (xc, yc) in xs.zip(ys) {
        for l in 0..LANES {
            acc[l] = acc[l] + xc[l] * yc[l];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (&a, &b) in xr.iter().zip(yr) {
        s = s + a * b;
    }
    s
}

/// Four dot products of `x` against consecutive rows of `rows`, each
/// bit-identical to [`dot`].
#[inline]
fn dot4<F: Scalar>(x: &[F], rows: &[F], k: usize) -> [F; 4] {
    const LANES: usize = 8;
    let mut acc = [[F::zero(); LANES]; 4];
    let chunks = k / LANES;
    let (r0, rest) = rows.split_at(k);
    let (r1, rest) = rest.split_at(k);
    let (r2, r3) = rest.split_at(k);
    for c in 0..chunks {
        let o = c * LANES;
        let xc = &x[o..o + LANES];
        let (y0, y1, y2, y3) = (&r0[o..o + LANES], &r1[o..o + LANES], &r2[o..o + LANES], &r3[o..o + LANES]);
        for l in 0..LANES {
            acc[0][l] = acc[0][l] + xc[l] * y0[l];
            acc[1][l] = acc[1][l] + xc[l] * y1[l];
            acc[2][l] = acc[2][l] + xc[l] * y2[l];
            acc[3][l] = acc[3][l] + xc[l] * y3[l];
        }
    }
    let tail = chunks * LANES;
    let mut out = [F::zero(); 4];
    for (r, (a, row)) in acc.iter().zip([r0, r1, r2, r3]).enumerate() {
        let mut s = ((a[0] + a[1]) + (a[2] + a[3])) + ((a[4] + a[5]) + (a[6] + a[7]));
        for t in tail..k {
            s = s + x[t] * row[t];
        }
        out[r] = s;
    }
    out
}

pub(crate) const GELU_COEFF: f64 = 0.7978845608;
pub(crate) const GELU_CUBIC: f64 = 0.044715;

/// GELU, tanh approximation.
#[inline]
pub fn gelu<F: Scalar>(x: F) -> F {
    let half = F::lit(0.5);
    let inner = F::lit(GELU_COEFF) * (x + F::lit(GELU_CUBIC) * x * x * x);
    half * x * (F::one() + inner.tanh())
}

#[inline]
pub(crate) fn gelu_grad<F: Scalar>(x: F) -> F {
    let half = F::lit(0.5);
    let c = F::lit(GELU_COEFF);
    let k = F::lit(GELU_CUBIC);
    let t = (c * (x + k * x * x * x)).tanh();
    half * (F::one() + t) + half * x * (F::one() - t * t) * c * (F::one() + F::lit(3.0) * k * x * x)
}

#[inline]
pub(crate) fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// `c[m×n] = a[m×k] · b[n×k]ᵀ`, the same kernel the graph uses for `matmul_t`.
pub fn matmul_t_into<F: Scalar>(a: &[F], b: &[F], c: &mut [F], m: usize, k: usize, n: usize) {
    c.iter_mut().for_each(|v| *v = F::zero());
    matmul_t_acc(a, b, c, m, k, n);
}
