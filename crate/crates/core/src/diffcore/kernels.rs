//! Numeric kernels for the graph primitives, forward and vector-Jacobian.
//!
//! Volumes are `[C, D, H, W]` row-major. Convolutions run on a zero-padded
//! copy of the input laid out flat, so every kernel tap becomes one
//! contiguous multiply-add sweep; positions that fall in the padding band are
//! computed and discarded.

use super::scalar::Scalar;

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (o, &v) in y.iter_mut().zip(x) {
        *o += alpha * v;
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub pad: usize,
    /// Input spatial extents.
    pub dims: [usize; 3],
    /// Output spatial extents.
    pub out: [usize; 3],
}

impl ConvGeom {
    pub fn new(input: &[usize], weight: &[usize], pad: usize) -> Self {
        let k = weight[2];
        let dims = [input[1], input[2], input[3]];
        let out = dims.map(|e| e + 2 * pad + 1 - k);
        ConvGeom {
            cin: input[0],
            cout: weight[0],
            k,
            pad,
            dims,
            out,
        }
    }

    fn padded(&self) -> [usize; 3] {
        self.dims.map(|e| e + 2 * self.pad)
    }

    fn padded_len(&self) -> usize {
        self.padded().iter().product()
    }

    /// Length of the flat sweep covering all valid outputs in padded strides.
    fn span(&self) -> usize {
        let [_, ph, pw] = self.padded();
        (self.out[0] - 1) * ph * pw + (self.out[1] - 1) * pw + self.out[2]
    }

    fn tap_offsets(&self) -> Vec<usize> {
        let [_, ph, pw] = self.padded();
        let k = self.k;
        let mut offs = Vec::with_capacity(k * k * k);
        for kz in 0..k {
            for ky in 0..k {
                for kx in 0..k {
                    offs.push(kz * ph * pw + ky * pw + kx);
                }
            }
        }
        offs
    }

    fn pad_input<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        let [d, h, w] = self.dims;
        let [pd, ph, pw] = self.padded();
        let p = self.pad;
        let mut xp = vec![T::zero(); self.cin * pd * ph * pw];
        for c in 0..self.cin {
            for z in 0..d {
                for y in 0..h {
                    let src = c * d * h * w + z * h * w + y * w;
                    let dst = c * pd * ph * pw + (z + p) * ph * pw + (y + p) * pw + p;
                    xp[dst..dst + w].copy_from_slice(&x[src..src + w]);
                }
            }
        }
        xp
    }

    /// Visits (flat output index, padded-stride index) for every valid output row.
    fn for_rows(&self, mut f: impl FnMut(usize, usize, usize)) {
        let [od, oh, ow] = self.out;
        let [_, ph, pw] = self.padded();
        for z in 0..od {
            for y in 0..oh {
                f(z * oh * ow + y * ow, z * ph * pw + y * pw, ow);
            }
        }
    }
}

pub(crate) fn conv3d_forward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    bias: Option<&[T]>,
) -> Vec<T> {
    let xp = g.pad_input(x);
    let plen = g.padded_len();
    let span = g.span();
    let offs = g.tap_offsets();
    let taps = offs.len();
    let out_len: usize = g.out.iter().product();
    let mut out = vec![T::zero(); g.cout * out_len];
    let mut acc = vec![T::zero(); span];
    for co in 0..g.cout {
        acc.iter_mut().for_each(|v| *v = T::zero());
        for ci in 0..g.cin {
            let xc = &xp[ci * plen..(ci + 1) * plen];
            let wk = &w[(co * g.cin + ci) * taps..(co * g.cin + ci + 1) * taps];
            for (t, &off) in offs.iter().enumerate() {
                axpy(wk[t], &xc[off..off + span], &mut acc);
            }
        }
        let b = bias.map_or(T::zero(), |b| b[co]);
        let oc = &mut out[co * out_len..(co + 1) * out_len];
        g.for_rows(|o, s, n| {
            for i in 0..n {
                oc[o + i] = acc[s + i] + b;
            }
        });
    }
    out
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Option<Vec<T>>,
    pub db: Option<Vec<T>>,
}

pub(crate) fn conv3d_backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    dy: &[T],
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let (need_x, need_w, need_b) = need;
    let plen = g.padded_len();
    let span = g.span();
    let offs = g.tap_offsets();
    let taps = offs.len();
    let out_len: usize = g.out.iter().product();

    // Upstream gradient in padded strides, zero in the discarded band.
    let mut dyp = vec![T::zero(); g.cout * span];
    for co in 0..g.cout {
        let src = &dy[co * out_len..(co + 1) * out_len];
        let dst = &mut dyp[co * span..(co + 1) * span];
        g.for_rows(|o, s, n| dst[s..s + n].copy_from_slice(&src[o..o + n]));
    }

    let db = need_b.then(|| {
        (0..g.cout)
            .map(|co| dy[co * out_len..(co + 1) * out_len].iter().copied().sum())
            .collect()
    });

    let dw = need_w.then(|| {
        let xp = g.pad_input(x);
        let mut dw = vec![T::zero(); w.len()];
        for co in 0..g.cout {
            let dyc = &dyp[co * span..(co + 1) * span];
            for ci in 0..g.cin {
                let xc = &xp[ci * plen..(ci + 1) * plen];
                let base = (co * g.cin + ci) * taps;
                for (t, &off) in offs.iter().enumerate() {
                    dw[base + t] = dot(dyc, &xc[off..off + span]);
                }
            }
        }
        dw
    });

    let dx = need_x.then(|| {
        let mut dxp = vec![T::zero(); g.cin * plen];
        for ci in 0..g.cin {
            let dxc = &mut dxp[ci * plen..(ci + 1) * plen];
            for co in 0..g.cout {
                let dyc = &dyp[co * span..(co + 1) * span];
                let wk = &w[(co * g.cin + ci) * taps..(co * g.cin + ci + 1) * taps];
                for (t, &off) in offs.iter().enumerate() {
                    axpy(wk[t], dyc, &mut dxc[off..off + span]);
                }
            }
        }
        let [d, h, wd] = g.dims;
        let [_, ph, pw] = g.padded();
        let p = g.pad;
        let mut dx = vec![T::zero(); g.cin * d * h * wd];
        for c in 0..g.cin {
            for z in 0..d {
                for y in 0..h {
                    let dst = c * d * h * wd + z * h * wd + y * wd;
                    let src = c * plen + (z + p) * ph * pw + (y + p) * pw + p;
                    dx[dst..dst + wd].copy_from_slice(&dxp[src..src + wd]);
                }
            }
        }
        dx
    });

    ConvGrads { dx, dw, db }
}

/// `x: [Cin, D, H, W]`, `w: [Cin, Cout, 2, 2, 2]` → `[Cout, 2D, 2H, 2W]`.
pub(crate) fn conv_transpose3d_forward<T: Scalar>(
    xs: &[usize],
    cout: usize,
    x: &[T],
    w: &[T],
    bias: Option<&[T]>,
) -> Vec<T> {
    let (cin, d, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (od, oh, ow) = (2 * d, 2 * h, 2 * wd);
    let in_len = d * h * wd;
    let out_len = od * oh * ow;
    let mut out = vec![T::zero(); cout * out_len];
    for co in 0..cout {
        let b = bias.map_or(T::zero(), |b| b[co]);
        out[co * out_len..(co + 1) * out_len]
            .iter_mut()
            .for_each(|v| *v = b);
    }
    for ci in 0..cin {
        let xc = &x[ci * in_len..(ci + 1) * in_len];
        for co in 0..cout {
            let oc = &mut out[co * out_len..(co + 1) * out_len];
            for tap in 0..8 {
                let (a, b, c) = (tap >> 2, (tap >> 1) & 1, tap & 1);
                let wv = w[(ci * cout + co) * 8 + tap];
                for z in 0..d {
                    for y in 0..h {
                        let src = z * h * wd + y * wd;
                        let dst = (2 * z + a) * oh * ow + (2 * y + b) * ow + c;
                        for xx in 0..wd {
                            oc[dst + 2 * xx] += wv * xc[src + xx];
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn conv_transpose3d_backward<T: Scalar>(
    xs: &[usize],
    cout: usize,
    x: &[T],
    w: &[T],
    dy: &[T],
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let (need_x, need_w, need_b) = need;
    let (cin, d, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (oh, ow) = (2 * h, 2 * wd);
    let in_len = d * h * wd;
    let out_len = 8 * in_len;

    // Gather dy into per-tap planes aligned with the input grid.
    let mut planes = vec![T::zero(); cout * 8 * in_len];
    for co in 0..cout {
        let dyc = &dy[co * out_len..(co + 1) * out_len];
        for tap in 0..8 {
            let (a, b, c) = (tap >> 2, (tap >> 1) & 1, tap & 1);
            let plane = &mut planes[(co * 8 + tap) * in_len..(co * 8 + tap + 1) * in_len];
            for z in 0..d {
                for y in 0..h {
                    let dst = z * h * wd + y * wd;
                    let src = (2 * z + a) * oh * ow + (2 * y + b) * ow + c;
                    for xx in 0..wd {
                        plane[dst + xx] = dyc[src + 2 * xx];
                    }
                }
            }
        }
    }

    let db = need_b.then(|| {
        (0..cout)
            .map(|co| dy[co * out_len..(co + 1) * out_len].iter().copied().sum())
            .collect()
    });
    let dw = need_w.then(|| {
        let mut dw = vec![T::zero(); w.len()];
        for ci in 0..cin {
            let xc = &x[ci * in_len..(ci + 1) * in_len];
            for co in 0..cout {
                for tap in 0..8 {
                    let plane = &planes[(co * 8 + tap) * in_len..(co * 8 + tap + 1) * in_len];
                    dw[(ci * cout + co) * 8 + tap] = dot(xc, plane);
                }
            }
        }
        dw
    });
    let dx = need_x.then(|| {
        let mut dx = vec![T::zero(); cin * in_len];
        for ci in 0..cin {
            let dxc = &mut dx[ci * in_len..(ci + 1) * in_len];
            for co in 0..cout {
                for tap in 0..8 {
                    let plane = &planes[(co * 8 + tap) * in_len..(co * 8 + tap + 1) * in_len];
                    axpy(w[(ci * cout + co) * 8 + tap], plane, dxc);
                }
            }
        }
        dx
    });
    ConvGrads { dx, dw, db }
}

/// Returns pooled values and the flat input index each one came from.
/// Ties resolve to the first candidate in scan order.
pub(crate) fn maxpool3d_forward<T: Scalar>(xs: &[usize], x: &[T]) -> (Vec<T>, Vec<u32>) {
    let (c, d, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (od, oh, ow) = (d / 2, h / 2, w / 2);
    let n = c * od * oh * ow;
    let mut out = Vec::with_capacity(n);
    let mut arg = Vec::with_capacity(n);
    for ch in 0..c {
        for z in 0..od {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut best = usize::MAX;
                    let mut best_v = f64::NEG_INFINITY;
                    for tap in 0..8 {
                        let (a, b, cc) = (tap >> 2, (tap >> 1) & 1, tap & 1);
                        let idx =
                            ch * d * h * w + (2 * z + a) * h * w + (2 * y + b) * w + 2 * xx + cc;
                        let v = x[idx].re();
                        if best == usize::MAX || v > best_v {
                            best = idx;
                            best_v = v;
                        }
                    }
                    out.push(x[best]);
                    arg.push(best as u32);
                }
            }
        }
    }
    (out, arg)
}

pub(crate) fn group_norm_forward<T: Scalar>(
    xs: &[usize],
    groups: usize,
    eps: f64,
    x: &[T],
    gamma: &[T],
    beta: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let c = xs[0];
    let spatial = x.len() / c;
    let cpg = c / groups;
    let n = cpg * spatial;
    let inv_n = T::from_f64(1.0 / n as f64);
    let eps = T::from_f64(eps);
    let mut y = vec![T::zero(); x.len()];
    let mut means = Vec::with_capacity(groups);
    let mut rstds = Vec::with_capacity(groups);
    for g in 0..groups {
        let seg = &x[g * n..(g + 1) * n];
        let mean = seg.iter().copied().sum::<T>() * inv_n;
        let var = seg
            .iter()
            .map(|&v| {
                let d = v - mean;
                d * d
            })
            .sum::<T>()
            * inv_n;
        let rstd = T::one() / (var + eps).sqrt();
        for ci in 0..cpg {
            let ch = g * cpg + ci;
            let (ga, be) = (gamma[ch], beta[ch]);
            let base = ch * spatial;
            for i in base..base + spatial {
                y[i] = (x[i] - mean) * rstd * ga + be;
            }
        }
        means.push(mean);
        rstds.push(rstd);
    }
    (y, means, rstds)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn group_norm_backward<T: Scalar>(
    xs: &[usize],
    groups: usize,
    x: &[T],
    gamma: &[T],
    means: &[T],
    rstds: &[T],
    dy: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let c = xs[0];
    let spatial = x.len() / c;
    let cpg = c / groups;
    let n = cpg * spatial;
    let nf = T::from_f64(n as f64);
    let inv_n = T::from_f64(1.0 / n as f64);
    let mut dx = vec![T::zero(); x.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    let mut xhat = vec![T::zero(); n];
    let mut dxhat = vec![T::zero(); n];
    for g in 0..groups {
        let (mean, rstd) = (means[g], rstds[g]);
        for ci in 0..cpg {
            let ch = g * cpg + ci;
            let ga = gamma[ch];
            let mut sg = T::zero();
            let mut sb = T::zero();
            for s in 0..spatial {
                let i = ch * spatial + s;
                let j = ci * spatial + s;
                let xh = (x[i] - mean) * rstd;
                xhat[j] = xh;
                dxhat[j] = dy[i] * ga;
                sg += dy[i] * xh;
                sb += dy[i];
            }
            dgamma[ch] = sg;
            dbeta[ch] = sb;
        }
        let s1: T = dxhat.iter().copied().sum();
        let s2 = dot(&dxhat, &xhat);
        let k = rstd * inv_n;
        for j in 0..n {
            dx[g * n + j] = k * (nf * dxhat[j] - s1 - xhat[j] * s2);
        }
    }
    (dx, dgamma, dbeta)
}

/// Softmax over the leading axis.
pub(crate) fn softmax_forward<T: Scalar>(xs: &[usize], x: &[T]) -> Vec<T> {
    let c = xs[0];
    let s = x.len() / c;
    let mut y = vec![T::zero(); x.len()];
    for p in 0..s {
        let m = (0..c)
            .map(|k| x[k * s + p].re())
            .fold(f64::NEG_INFINITY, f64::max);
        let m = T::from_f64(m);
        let mut total = T::zero();
        for k in 0..c {
            let e = (x[k * s + p] - m).exp();
            y[k * s + p] = e;
            total += e;
        }
        for k in 0..c {
            y[k * s + p] /= total;
        }
    }
    y
}

pub(crate) fn softmax_backward<T: Scalar>(xs: &[usize], y: &[T], dy: &[T]) -> Vec<T> {
    let c = xs[0];
    let s = y.len() / c;
    let mut dx = vec![T::zero(); y.len()];
    for p in 0..s {
        let mut inner = T::zero();
        for k in 0..c {
            inner += dy[k * s + p] * y[k * s + p];
        }
        for k in 0..c {
            dx[k * s + p] = y[k * s + p] * (dy[k * s + p] - inner);
        }
    }
    dx
}
