//! Dense kernels shared by the forward and backward passes.
//!
//! All inner products accumulate in f64 regardless of the storage scalar,
//! with a fixed summation order so results are bit-stable across runs.

use crate::scalar::Scalar;

/// out[m,n] = a[m,k] · b[k,n]
pub fn gemm_nn<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], out: &mut [S]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let mut acc = vec![0.0f64; n];
    for i in 0..m {
        acc.fill(0.0);
        let arow = &a[i * k..(i + 1) * k];
        for (kk, &aik) in arow.iter().enumerate() {
            let aik = aik.to_acc();
            let brow = &b[kk * n..(kk + 1) * n];
            for (j, &bv) in brow.iter().enumerate() {
                acc[j] += aik * bv.to_acc();
            }
        }
        let orow = &mut out[i * n..(i + 1) * n];
        for (o, &v) in orow.iter_mut().zip(acc.iter()) {
            *o = S::from_acc(v);
        }
    }
}

/// out[m,n] = a[m,k] · b[n,k]ᵀ  (rows of both operands are contiguous)
pub fn gemm_nt<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], out: &mut [S]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            // Four independent accumulators so the dot product pipelines.
            let (mut s0, mut s1, mut s2, mut s3) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
            let mut kk = 0;
            while kk + 4 <= k {
                s0 += arow[kk].to_acc() * brow[kk].to_acc();
                s1 += arow[kk + 1].to_acc() * brow[kk + 1].to_acc();
                s2 += arow[kk + 2].to_acc() * brow[kk + 2].to_acc();
                s3 += arow[kk + 3].to_acc() * brow[kk + 3].to_acc();
                kk += 4;
            }
            while kk < k {
                s0 += arow[kk].to_acc() * brow[kk].to_acc();
                kk += 1;
            }
            out[i * n + j] = S::from_acc((s0 + s1) + (s2 + s3));
        }
    }
}

/// acc[m,n] += a[k,m]ᵀ · b[k,n], accumulating in the caller's f64 buffer so
/// contributions from several calls (e.g. per-image weight gradients) sum at
/// full precision.
pub fn gemm_tn_acc<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], acc: &mut [f64]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(acc.len(), m * n);
    for kk in 0..k {
        let arow = &a[kk * m..(kk + 1) * m];
        let brow = &b[kk * n..(kk + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            let av = av.to_acc();
            let arow_acc = &mut acc[i * n..(i + 1) * n];
            for (j, &bv) in brow.iter().enumerate() {
                arow_acc[j] += av * bv.to_acc();
            }
        }
    }
}

/// out[m,n] = a[k,m]ᵀ · b[k,n]
pub fn gemm_tn<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], out: &mut [S]) {
    let mut acc = vec![0.0f64; m * n];
    gemm_tn_acc(m, k, n, a, b, &mut acc);
    for (o, &v) in out.iter_mut().zip(acc.iter()) {
        *o = S::from_acc(v);
    }
}

/// Spatial geometry of a 2-d convolution.
#[derive(Clone, Copy, Debug)]
pub struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn patch_len(&self) -> usize {
        self.cin * self.kh * self.kw
    }
    pub fn out_positions(&self) -> usize {
        self.ho * self.wo
    }
}

/// Unrolls one image [cin, h, w] into patch rows [ho·wo, cin·kh·kw] with
/// zero padding.
pub fn im2col<S: Scalar>(img: &[S], g: &ConvGeom, col: &mut [S]) {
    debug_assert_eq!(img.len(), g.cin * g.h * g.w);
    debug_assert_eq!(col.len(), g.out_positions() * g.patch_len());
    col.fill(S::zero());
    let patch = g.patch_len();
    for oy in 0..g.ho {
        for ox in 0..g.wo {
            let row = (oy * g.wo + ox) * patch;
            let iy0 = (oy * g.stride) as isize - g.pad as isize;
            let ix0 = (ox * g.stride) as isize - g.pad as isize;
            for c in 0..g.cin {
                let img_c = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
                let col_c = row + c * g.kh * g.kw;
                for ky in 0..g.kh {
                    let iy = iy0 + ky as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let ix = ix0 + kx as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        col[col_c + ky * g.kw + kx] = img_c[iy as usize * g.w + ix as usize];
                    }
                }
            }
        }
    }
}

/// Scatter-adds patch-row gradients back onto one image.
pub fn col2im<S: Scalar>(col: &[S], g: &ConvGeom, img: &mut [S]) {
    debug_assert_eq!(img.len(), g.cin * g.h * g.w);
    let patch = g.patch_len();
    for oy in 0..g.ho {
        for ox in 0..g.wo {
            let row = (oy * g.wo + ox) * patch;
            let iy0 = (oy * g.stride) as isize - g.pad as isize;
            let ix0 = (ox * g.stride) as isize - g.pad as isize;
            for c in 0..g.cin {
                let base = c * g.h * g.w;
                let col_c = row + c * g.kh * g.kw;
                for ky in 0..g.kh {
                    let iy = iy0 + ky as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let ix = ix0 + kx as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let idx = base + iy as usize * g.w + ix as usize;
                        img[idx] = img[idx] + col[col_c + ky * g.kw + kx];
                    }
                }
            }
        }
    }
}
