//! 2D cross-correlation primitive shared by every layer of the detector.
//!
//! One routine covers the whole zoo used by the network: `1 x k` and
//! `k x 1` factorized passes, full `k x k` kernels, `1 x 1` projections,
//! stride 1 and 2. The angular (column) axis can be padded circularly,
//! the delay (row) axis is always zero-padded.

use ndarray::Array3;

use crate::num::Real;

/// Static description of one convolution layer inside a plan.
#[derive(Debug, Clone)]
pub struct ConvSpec {
    pub name: String,
    pub in_c: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    /// (row stride, column stride); spatial size is `in / stride` per axis.
    pub stride: (usize, usize),
    /// Circular padding on the column (angular) axis; rows are zero-padded.
    pub circular_cols: bool,
    pub act: Activation,
    /// Input spatial dims this layer sees in the plan.
    pub in_shape: (usize, usize),
    /// Offsets into the flat parameter vector.
    pub w_off: usize,
    pub b_off: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    None,
    /// Leaky rectifier with the given negative-side slope.
    Leaky(f64),
    /// Logistic squash, output clamped to the open interval (0, 1).
    Sigmoid,
}

impl ConvSpec {
    pub fn weight_len(&self) -> usize {
        self.out_c * self.in_c * self.kh * self.kw
    }

    pub fn out_shape(&self) -> (usize, usize) {
        (self.in_shape.0 / self.stride.0, self.in_shape.1 / self.stride.1)
    }

    /// Multiply-accumulate count for one forward pass.
    pub fn macs(&self) -> u64 {
        let (ho, wo) = self.out_shape();
        (self.out_c * ho * wo) as u64 * (self.in_c * self.kh * self.kw) as u64
    }
}

/// Zero/circular "same" padding: rows gain `(kh-1)/2` zero rows on each side,
/// columns gain `(kw-1)/2` wrapped (or zero) columns.
pub fn pad_input<T: Real>(x: &Array3<T>, ph: usize, pw: usize, circular_cols: bool) -> Array3<T> {
    let (c, h, w) = x.dim();
    let (hp, wp) = (h + 2 * ph, w + 2 * pw);
    let mut xp = Array3::zeros((c, hp, wp));
    let xs = x.as_slice().expect("standard layout");
    let ps = xp.as_slice_mut().expect("standard layout");
    for ic in 0..c {
        for i in 0..h {
            let src = &xs[(ic * h + i) * w..(ic * h + i + 1) * w];
            let dst = &mut ps[(ic * hp + i + ph) * wp..(ic * hp + i + ph + 1) * wp];
            dst[pw..pw + w].copy_from_slice(src);
            if circular_cols && pw > 0 {
                dst[..pw].copy_from_slice(&src[w - pw..]);
                dst[pw + w..].copy_from_slice(&src[..pw]);
            }
        }
    }
    xp
}

/// Eight-lane dot product: a deterministic fixed-order reduction that the
/// compiler can keep in vector registers.
#[inline]
fn dot_lanes<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (xa, xb) in (&mut ca).zip(&mut cb) {
        for l in 0..8 {
            acc[l] = acc[l] + xa[l] * xb[l];
        }
    }
    let mut tail = T::zero();
    for (xa, xb) in ca.remainder().iter().zip(cb.remainder()) {
        tail = tail + *xa * *xb;
    }
    (((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]))) + tail
}

/// Split a row into even/odd column phases so stride-2 taps become
/// contiguous slices: `even[j] = row[2j]`, `odd[j] = row[2j + 1]`.
fn split_phases<T: Real>(row: &[T], even: &mut [T], odd: &mut [T]) {
    for (j, pair) in row.chunks_exact(2).enumerate() {
        even[j] = pair[0];
        odd[j] = pair[1];
    }
    if row.len() % 2 == 1 {
        even[row.len() / 2] = row[row.len() - 1];
    }
}

#[inline]
fn axpy<T: Real>(acc: &mut [T], wgt: T, x: &[T]) {
    for (a, v) in acc.iter_mut().zip(x) {
        *a = *a + wgt * *v;
    }
}

/// Even/odd column-phase repack of a padded input, so stride-2 taps read
/// contiguous slices: tap `v` of output column `j` is
/// `phase[v % 2][j + v / 2]`.
struct Phases<T> {
    even: Vec<T>,
    odd: Vec<T>,
    /// Columns per phase row.
    width: usize,
    rows: usize,
}

impl<T: Real> Phases<T> {
    fn build(xs: &[T], c: usize, hp: usize, wp: usize) -> Self {
        let width = wp / 2 + 1;
        let mut even = vec![T::zero(); c * hp * width];
        let mut odd = vec![T::zero(); c * hp * width];
        for r in 0..c * hp {
            split_phases(
                &xs[r * wp..(r + 1) * wp],
                &mut even[r * width..(r + 1) * width],
                &mut odd[r * width..(r + 1) * width],
            );
        }
        Self { even, odd, width, rows: c * hp }
    }

    fn zeros_like(other: &Phases<T>) -> Self {
        Self {
            even: vec![T::zero(); other.even.len()],
            odd: vec![T::zero(); other.odd.len()],
            width: other.width,
            rows: other.rows,
        }
    }

    #[inline]
    fn row(&self, r: usize, v: usize, len: usize) -> &[T] {
        let base = r * self.width + v / 2;
        if v % 2 == 0 {
            &self.even[base..base + len]
        } else {
            &self.odd[base..base + len]
        }
    }

    #[inline]
    fn row_mut(&mut self, r: usize, v: usize, len: usize) -> &mut [T] {
        let base = r * self.width + v / 2;
        if v % 2 == 0 {
            &mut self.even[base..base + len]
        } else {
            &mut self.odd[base..base + len]
        }
    }

    /// Interleave accumulated phase gradients back onto padded rows.
    fn fold_into(&self, target: &mut [T], wp: usize) {
        for r in 0..self.rows {
            let row = &mut target[r * wp..(r + 1) * wp];
            let e = &self.even[r * self.width..(r + 1) * self.width];
            let o = &self.odd[r * self.width..(r + 1) * self.width];
            for (j, pair) in row.chunks_exact_mut(2).enumerate() {
                pair[0] += e[j];
                pair[1] += o[j];
            }
            if wp % 2 == 1 {
                row[wp - 1] += e[wp / 2];
            }
        }
    }
}

/// Pre-activation output `z = conv(x) + b`.
pub fn conv_forward<T: Real>(spec: &ConvSpec, w: &[T], b: &[T], x: &Array3<T>) -> Array3<T> {
    let (c_in, h_in, w_in) = x.dim();
    debug_assert_eq!(c_in, spec.in_c);
    debug_assert_eq!((h_in, w_in), spec.in_shape);
    let (sh, sw) = spec.stride;
    assert!(sw == 1 || sw == 2, "column stride must be 1 or 2");
    let (kh, kw) = (spec.kh, spec.kw);
    let (ph, pw) = ((kh - 1) / 2, (kw - 1) / 2);
    let (h_out, w_out) = spec.out_shape();

    let xp = pad_input(x, ph, pw, spec.circular_cols);
    let (_, hp, wp) = xp.dim();
    let xs = xp.as_slice().expect("padded input is contiguous");
    let phases = (sw == 2).then(|| Phases::build(xs, c_in, hp, wp));

    let mut z = Array3::zeros((spec.out_c, h_out, w_out));
    let zs = z.as_slice_mut().expect("output is contiguous");
    for oc in 0..spec.out_c {
        let bias = b[oc];
        for oi in 0..h_out {
            let zrow = &mut zs[(oc * h_out + oi) * w_out..(oc * h_out + oi + 1) * w_out];
            zrow.fill(bias);
            for ic in 0..c_in {
                for u in 0..kh {
                    let row = ic * hp + oi * sh + u;
                    for v in 0..kw {
                        let wgt = w[((oc * c_in + ic) * kh + u) * kw + v];
                        let xrow = match &phases {
                            None => &xs[row * wp + v..row * wp + v + w_out],
                            Some(p) => p.row(row, v, w_out),
                        };
                        axpy(zrow, wgt, xrow);
                    }
                }
            }
        }
    }
    z
}

/// Elementwise activation.
pub fn activate<T: Real>(act: Activation, z: &Array3<T>) -> Array3<T> {
    match act {
        Activation::None => z.clone(),
        Activation::Leaky(slope) => {
            let s = T::of(slope);
            z.mapv(|v| if v >= T::zero() { v } else { v * s })
        }
        Activation::Sigmoid => {
            let lo = T::of(1e-7);
            let hi = T::one() - lo;
            z.mapv(|v| {
                let s = T::one() / (T::one() + (-v).exp());
                s.max(lo).min(hi)
            })
        }
    }
}

/// Gradient through the activation, expressed in terms of the *activated*
/// output `a` (the leaky rectifier preserves sign, the logistic derivative
/// is `a (1 - a)`), so only one tensor per layer needs caching.
pub fn activation_backward<T: Real>(act: Activation, a: &Array3<T>, g_a: &Array3<T>) -> Array3<T> {
    match act {
        Activation::None => g_a.clone(),
        Activation::Leaky(slope) => {
            let s = T::of(slope);
            let mut g = g_a.clone();
            g.zip_mut_with(a, |gv, &av| {
                if av < T::zero() {
                    *gv = *gv * s;
                }
            });
            g
        }
        Activation::Sigmoid => {
            let mut g = g_a.clone();
            g.zip_mut_with(a, |gv, &av| *gv = *gv * av * (T::one() - av));
            g
        }
    }
}

/// Reverse pass of [`conv_forward`]: accumulates `g_w`/`g_b` (added on top of
/// whatever the slices already hold) and returns the input gradient.
pub fn conv_backward<T: Real>(
    spec: &ConvSpec,
    w: &[T],
    x: &Array3<T>,
    g_z: &Array3<T>,
    g_w: &mut [T],
    g_b: &mut [T],
) -> Array3<T> {
    let (c_in, h_in, w_in) = x.dim();
    let (sh, sw) = spec.stride;
    assert!(sw == 1 || sw == 2, "column stride must be 1 or 2");
    let (kh, kw) = (spec.kh, spec.kw);
    let (ph, pw) = ((kh - 1) / 2, (kw - 1) / 2);
    let (h_out, w_out) = spec.out_shape();

    let xp = pad_input(x, ph, pw, spec.circular_cols);
    let (_, hp, wp) = xp.dim();
    let xs = xp.as_slice().expect("padded input is contiguous");
    let gs = g_z.as_slice().expect("output gradient is contiguous");
    let phases = (sw == 2).then(|| Phases::build(xs, c_in, hp, wp));
    let mut g_phases = phases.as_ref().map(Phases::zeros_like);

    let mut g_xp: Array3<T> = Array3::zeros((c_in, hp, wp));
    let gxs = g_xp.as_slice_mut().expect("gradient buffer is contiguous");

    for oc in 0..spec.out_c {
        let mut gb = T::zero();
        for oi in 0..h_out {
            let grow = &gs[(oc * h_out + oi) * w_out..(oc * h_out + oi + 1) * w_out];
            for g in grow {
                gb += *g;
            }
            for ic in 0..c_in {
                for u in 0..kh {
                    let row = ic * hp + oi * sh + u;
                    for v in 0..kw {
                        let widx = ((oc * c_in + ic) * kh + u) * kw + v;
                        let wgt = w[widx];
                        match (&phases, &mut g_phases) {
                            (None, _) => {
                                let xrow = &xs[row * wp + v..row * wp + v + w_out];
                                g_w[widx] += dot_lanes(grow, xrow);
                                axpy(&mut gxs[row * wp + v..row * wp + v + w_out], wgt, grow);
                            }
                            (Some(p), Some(gp)) => {
                                g_w[widx] += dot_lanes(grow, p.row(row, v, w_out));
                                axpy(gp.row_mut(row, v, w_out), wgt, grow);
                            }
                            _ => unreachable!(),
                        }
                    }
                }
            }
        }
        g_b[oc] += gb;
    }
    if let Some(gp) = &g_phases {
        gp.fold_into(gxs, wp);
    }

    // Fold the padded gradient back: wrapped columns add into their true
    // position, zero-padded rows are dropped.
    let mut g_x: Array3<T> = Array3::zeros((c_in, h_in, w_in));
    let gout = g_x.as_slice_mut().expect("standard layout");
    let gps = g_xp.as_slice().expect("standard layout");
    for ic in 0..c_in {
        for i in 0..h_in {
            let src = &gps[(ic * hp + i + ph) * wp..(ic * hp + i + ph + 1) * wp];
            let dst = &mut gout[(ic * h_in + i) * w_in..(ic * h_in + i + 1) * w_in];
            dst.copy_from_slice(&src[pw..pw + w_in]);
            if spec.circular_cols && pw > 0 {
                for p in 0..pw {
                    dst[w_in - pw + p] += src[p];
                    dst[p] += src[pw + w_in + p];
                }
            }
        }
    }
    g_x
}

/// Nearest-neighbor 2x upsampling.
pub fn upsample2<T: Real>(x: &Array3<T>) -> Array3<T> {
    let (c, h, w) = x.dim();
    Array3::from_shape_fn((c, 2 * h, 2 * w), |(ic, i, j)| x[(ic, i / 2, j / 2)])
}

/// Adjoint of [`upsample2`]: each input cell collects its 2x2 block.
pub fn upsample2_backward<T: Real>(g: &Array3<T>) -> Array3<T> {
    let (c, h2, w2) = g.dim();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut out = Array3::zeros((c, h, w));
    for ic in 0..c {
        for i in 0..h2 {
            for j in 0..w2 {
                out[(ic, i / 2, j / 2)] += g[(ic, i, j)];
            }
        }
    }
    out
}
