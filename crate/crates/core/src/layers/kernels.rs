//! Convolution, fully-connected, and pooling kernels on flat slices.
//!
//! Convolution weights are laid out `[in_c][kh][kw][out_c]` so that the
//! event-driven scatter path (one active input element feeding `out_c`
//! consecutive weights per kernel tap) walks contiguous memory. FC weights
//! are `[in][out]` for the same reason.
//!
//! Exactness note: the spike-list paths iterate active indices in ascending
//! order and kernel taps in `(ky, kx)` order, which makes every output
//! accumulate its terms in exactly the order the dense path uses; since the
//! skipped terms are exact zeros, sparse and dense results are bit-identical
//! on binary input.

use crate::scalar::Real;

/// Resolved convolution geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
}

impl ConvGeom {
    pub fn resolve(
        in_c: usize,
        in_h: usize,
        in_w: usize,
        out_c: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Option<Self> {
        let (kh, kw) = kernel;
        let (sh, sw) = stride;
        let (ph, pw) = padding;
        if kh == 0 || kw == 0 || sh == 0 || sw == 0 || out_c == 0 {
            return None;
        }
        let eff_h = in_h + 2 * ph;
        let eff_w = in_w + 2 * pw;
        if eff_h < kh || eff_w < kw {
            return None;
        }
        Some(ConvGeom {
            in_c,
            in_h,
            in_w,
            out_c,
            out_h: (eff_h - kh) / sh + 1,
            out_w: (eff_w - kw) / sw + 1,
            kh,
            kw,
            sh,
            sw,
            ph,
            pw,
        })
    }

    pub fn weight_len(&self) -> usize {
        self.in_c * self.kh * self.kw * self.out_c
    }

    pub fn in_len(&self) -> usize {
        self.in_c * self.in_h * self.in_w
    }

    pub fn out_len(&self) -> usize {
        self.out_c * self.out_h * self.out_w
    }

    /// Output accumulations fed by one input element: kernel taps × out
    /// channels. Position-independent (padding treated as interior), which
    /// coincides with the dense per-output count for stride-1 same-padded
    /// convolutions.
    pub fn fanout(&self) -> u64 {
        (self.kh * self.kw * self.out_c) as u64
    }

    #[inline]
    fn w_at(&self, ci: usize, ky: usize, kx: usize) -> usize {
        ((ci * self.kh + ky) * self.kw + kx) * self.out_c
    }
}

/// Fills `out` with `bias` replicated over each output channel's plane.
pub fn fill_bias<F: Real>(out: &mut [F], bias: &[F], plane: usize) {
    for (co, &b) in bias.iter().enumerate() {
        out[co * plane..(co + 1) * plane].fill(b);
    }
}

/// Dense convolution: `out += conv(input)` where `out` was pre-filled with
/// the bias. Accumulates in `(ci, ky, kx)` order per output element.
pub fn conv_forward_dense<F: Real>(g: &ConvGeom, w: &[F], input: &[F], out: &mut [F]) {
    let out_plane = g.out_h * g.out_w;
    for ci in 0..g.in_c {
        let in_plane = &input[ci * g.in_h * g.in_w..(ci + 1) * g.in_h * g.in_w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let wbase = g.w_at(ci, ky, kx);
                for co in 0..g.out_c {
                    let wv = w[wbase + co];
                    let out_plane_s = &mut out[co * out_plane..(co + 1) * out_plane];
                    accumulate_tap(g, ky, kx, wv, in_plane, out_plane_s);
                }
            }
        }
    }
}

/// `out[oy, ox] += wv · in[oy·sh + ky − ph, ox·sw + kx − pw]` over valid positions.
#[inline]
fn accumulate_tap<F: Real>(
    g: &ConvGeom,
    ky: usize,
    kx: usize,
    wv: F,
    in_plane: &[F],
    out_plane: &mut [F],
) {
    // Valid oy range: 0 ≤ oy·sh + ky − ph < in_h.
    let (oy_lo, oy_hi) = tap_range(g.out_h, g.sh, ky, g.ph, g.in_h);
    let (ox_lo, ox_hi) = tap_range(g.out_w, g.sw, kx, g.pw, g.in_w);
    if oy_lo >= oy_hi || ox_lo >= ox_hi {
        return;
    }
    if g.sw == 1 {
        for oy in oy_lo..oy_hi {
            let iy = oy * g.sh + ky - g.ph;
            let in_row = &in_plane[iy * g.in_w + (ox_lo + kx - g.pw)..];
            let out_row = &mut out_plane[oy * g.out_w + ox_lo..oy * g.out_w + ox_hi];
            for (o, &i) in out_row.iter_mut().zip(in_row) {
                *o += wv * i;
            }
        }
    } else {
        for oy in oy_lo..oy_hi {
            let iy = oy * g.sh + ky - g.ph;
            for ox in ox_lo..ox_hi {
                let ix = ox * g.sw + kx - g.pw;
                out_plane[oy * g.out_w + ox] += wv * in_plane[iy * g.in_w + ix];
            }
        }
    }
}

/// Half-open output range `[lo, hi)` for which `o·s + k − p` lands in `[0, n_in)`.
#[inline]
fn tap_range(n_out: usize, s: usize, k: usize, p: usize, n_in: usize) -> (usize, usize) {
    let lo = p.saturating_sub(k).div_ceil(s).min(n_out);
    // largest o with o·s + k − p ≤ n_in − 1
    let hi = if n_in + p > k {
        (((n_in + p - k - 1) / s) + 1).min(n_out)
    } else {
        0
    };
    (lo, hi)
}

/// Event-driven convolution over the active input indices (ascending), each
/// contributing `scale` (1 for plain spikes). `out` must be zero-filled; the
/// caller adds bias afterwards via [`fill_bias`]-style logic or pre-fills and
/// relies on exact zero-order equivalence (see module docs).
pub fn conv_forward_spikes<F: Real>(g: &ConvGeom, w: &[F], active: &[u32], out: &mut [F]) {
    let out_plane = g.out_h * g.out_w;
    let in_plane = g.in_h * g.in_w;
    for &flat in active {
        let flat = flat as usize;
        let ci = flat / in_plane;
        let rem = flat % in_plane;
        let iy = rem / g.in_w;
        let ix = rem % g.in_w;
        for ky in 0..g.kh {
            let oy_num = iy + g.ph;
            if oy_num < ky {
                break;
            }
            let oy_ss = oy_num - ky;
            if oy_ss % g.sh != 0 {
                continue;
            }
            let oy = oy_ss / g.sh;
            if oy >= g.out_h {
                continue;
            }
            for kx in 0..g.kw {
                let ox_num = ix + g.pw;
                if ox_num < kx {
                    break;
                }
                let ox_ss = ox_num - kx;
                if ox_ss % g.sw != 0 {
                    continue;
                }
                let ox = ox_ss / g.sw;
                if ox >= g.out_w {
                    continue;
                }
                let wrow = &w[g.w_at(ci, ky, kx)..g.w_at(ci, ky, kx) + g.out_c];
                let o0 = oy * g.out_w + ox;
                for (co, &wv) in wrow.iter().enumerate() {
                    out[co * out_plane + o0] += wv;
                }
            }
        }
    }
}

/// Weight/bias gradients for dense input: `gw[ci,ky,kx,co] += Σ dout·in`,
/// `gb[co] += Σ dout`.
pub fn conv_wgrad_dense<F: Real>(
    g: &ConvGeom,
    input: &[F],
    dout: &[F],
    gw: &mut [F],
    gb: &mut [F],
) {
    let out_plane = g.out_h * g.out_w;
    for ci in 0..g.in_c {
        let in_plane = &input[ci * g.in_h * g.in_w..(ci + 1) * g.in_h * g.in_w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let (oy_lo, oy_hi) = tap_range(g.out_h, g.sh, ky, g.ph, g.in_h);
                let (ox_lo, ox_hi) = tap_range(g.out_w, g.sw, kx, g.pw, g.in_w);
                let wbase = g.w_at(ci, ky, kx);
                for co in 0..g.out_c {
                    let dplane = &dout[co * out_plane..(co + 1) * out_plane];
                    let mut acc = F::zero();
                    for oy in oy_lo..oy_hi {
                        let iy = oy * g.sh + ky - g.ph;
                        if g.sw == 1 {
                            let in_row = &in_plane[iy * g.in_w + (ox_lo + kx - g.pw)..];
                            let d_row = &dplane[oy * g.out_w + ox_lo..oy * g.out_w + ox_hi];
                            for (&d, &i) in d_row.iter().zip(in_row) {
                                acc += d * i;
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                let ix = ox * g.sw + kx - g.pw;
                                acc += dplane[oy * g.out_w + ox] * in_plane[iy * g.in_w + ix];
                            }
                        }
                    }
                    gw[wbase + co] += acc;
                }
            }
        }
    }
    conv_bias_grad(g, dout, gb);
}

/// Weight/bias gradients for spike-list input with a common `scale`.
pub fn conv_wgrad_spikes<F: Real>(
    g: &ConvGeom,
    active: &[u32],
    scale: F,
    dout: &[F],
    gw: &mut [F],
    gb: &mut [F],
) {
    let out_plane = g.out_h * g.out_w;
    let in_plane = g.in_h * g.in_w;
    for &flat in active {
        let flat = flat as usize;
        let ci = flat / in_plane;
        let rem = flat % in_plane;
        let iy = rem / g.in_w;
        let ix = rem % g.in_w;
        for ky in 0..g.kh {
            if iy + g.ph < ky {
                break;
            }
            let oy_ss = iy + g.ph - ky;
            if oy_ss % g.sh != 0 {
                continue;
            }
            let oy = oy_ss / g.sh;
            if oy >= g.out_h {
                continue;
            }
            for kx in 0..g.kw {
                if ix + g.pw < kx {
                    break;
                }
                let ox_ss = ix + g.pw - kx;
                if ox_ss % g.sw != 0 {
                    continue;
                }
                let ox = ox_ss / g.sw;
                if ox >= g.out_w {
                    continue;
                }
                let wbase = g.w_at(ci, ky, kx);
                let o0 = oy * g.out_w + ox;
                for co in 0..g.out_c {
                    gw[wbase + co] += scale * dout[co * out_plane + o0];
                }
            }
        }
    }
    conv_bias_grad(g, dout, gb);
}

pub fn conv_bias_grad<F: Real>(g: &ConvGeom, dout: &[F], gb: &mut [F]) {
    let out_plane = g.out_h * g.out_w;
    for (co, gbv) in gb.iter_mut().enumerate() {
        let mut acc = F::zero();
        for &d in &dout[co * out_plane..(co + 1) * out_plane] {
            acc += d;
        }
        *gbv += acc;
    }
}

/// Input gradient (transposed convolution): `din[ci,iy,ix] = Σ w·dout`.
pub fn conv_input_grad<F: Real>(g: &ConvGeom, w: &[F], dout: &[F], din: &mut [F]) {
    let out_plane = g.out_h * g.out_w;
    let in_plane = g.in_h * g.in_w;
    for ci in 0..g.in_c {
        let din_plane = &mut din[ci * in_plane..(ci + 1) * in_plane];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let wbase = g.w_at(ci, ky, kx);
                let (oy_lo, oy_hi) = tap_range(g.out_h, g.sh, ky, g.ph, g.in_h);
                let (ox_lo, ox_hi) = tap_range(g.out_w, g.sw, kx, g.pw, g.in_w);
                for co in 0..g.out_c {
                    let wv = w[wbase + co];
                    let dplane = &dout[co * out_plane..(co + 1) * out_plane];
                    for oy in oy_lo..oy_hi {
                        let iy = oy * g.sh + ky - g.ph;
                        if g.sw == 1 {
                            let d_row = &dplane[oy * g.out_w + ox_lo..oy * g.out_w + ox_hi];
                            let i0 = iy * g.in_w + (ox_lo + kx - g.pw);
                            for (j, &d) in d_row.iter().enumerate() {
                                din_plane[i0 + j] += wv * d;
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                let ix = ox * g.sw + kx - g.pw;
                                din_plane[iy * g.in_w + ix] += wv * dplane[oy * g.out_w + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Dense FC forward: `out = bias + Wᵀ·input` with weights `[in][out]`.
/// Zero inputs are skipped; this changes nothing numerically (the skipped
/// terms are exact zeros) and makes the dense path event-driven for free.
pub fn fc_forward_dense<F: Real>(w: &[F], bias: &[F], input: &[F], out: &mut [F]) {
    let n_out = bias.len();
    out.copy_from_slice(bias);
    for (j, &x) in input.iter().enumerate() {
        if x == F::zero() {
            continue;
        }
        let row = &w[j * n_out..(j + 1) * n_out];
        for (o, &wv) in out.iter_mut().zip(row) {
            *o += wv * x;
        }
    }
}

/// FC forward over active indices with a common scale: the per-row weight
/// sums are accumulated first and scaled once.
pub fn fc_forward_spikes<F: Real>(w: &[F], bias: &[F], active: &[u32], scale: F, out: &mut [F]) {
    let n_out = bias.len();
    if scale == F::one() {
        out.copy_from_slice(bias);
        for &j in active {
            let row = &w[j as usize * n_out..(j as usize + 1) * n_out];
            for (o, &wv) in out.iter_mut().zip(row) {
                *o += wv;
            }
        }
    } else {
        out.fill(F::zero());
        for &j in active {
            let row = &w[j as usize * n_out..(j as usize + 1) * n_out];
            for (o, &wv) in out.iter_mut().zip(row) {
                *o += wv;
            }
        }
        for (o, &b) in out.iter_mut().zip(bias) {
            *o = *o * scale + b;
        }
    }
}

/// FC weight/bias gradients for a dense input slice.
pub fn fc_wgrad_dense<F: Real>(input: &[F], dout: &[F], gw: &mut [F], gb: &mut [F]) {
    let n_out = dout.len();
    for (j, &x) in input.iter().enumerate() {
        if x == F::zero() {
            continue;
        }
        let row = &mut gw[j * n_out..(j + 1) * n_out];
        for (g, &d) in row.iter_mut().zip(dout) {
            *g += d * x;
        }
    }
    for (g, &d) in gb.iter_mut().zip(dout) {
        *g += d;
    }
}

/// FC weight/bias gradients for active indices with common scale.
pub fn fc_wgrad_spikes<F: Real>(active: &[u32], scale: F, dout: &[F], gw: &mut [F], gb: &mut [F]) {
    let n_out = dout.len();
    for &j in active {
        let row = &mut gw[j as usize * n_out..(j as usize + 1) * n_out];
        for (g, &d) in row.iter_mut().zip(dout) {
            *g += d * scale;
        }
    }
    for (g, &d) in gb.iter_mut().zip(dout) {
        *g += d;
    }
}

/// FC input gradient: `din[j] = W[j,:]·dout`.
pub fn fc_input_grad<F: Real>(w: &[F], dout: &[F], din: &mut [F]) {
    let n_out = dout.len();
    for (j, dj) in din.iter_mut().enumerate() {
        let row = &w[j * n_out..(j + 1) * n_out];
        let mut acc = F::zero();
        for (&wv, &d) in row.iter().zip(dout) {
            acc += wv * d;
        }
        *dj = acc;
    }
}

/// Non-overlapping window geometry shared by pooling and attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowGeom {
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub n_h: usize,
    pub n_w: usize,
}

impl WindowGeom {
    pub fn resolve(h: usize, w: usize, kh: usize, kw: usize, sh: usize, sw: usize) -> Option<Self> {
        if kh == 0 || kw == 0 || sh == 0 || sw == 0 || h < kh || w < kw {
            return None;
        }
        Some(WindowGeom {
            h,
            w,
            kh,
            kw,
            sh,
            sw,
            n_h: (h - kh) / sh + 1,
            n_w: (w - kw) / sw + 1,
        })
    }

    pub fn windows(&self) -> usize {
        self.n_h * self.n_w
    }
}

/// Max over each window of one plane; `argmax` records the flat plane index
/// of the first maximal element in row-major window order.
pub fn window_max<F: Real>(g: &WindowGeom, plane: &[F], out: &mut [F], argmax: &mut [u32]) {
    for wy in 0..g.n_h {
        for wx in 0..g.n_w {
            let (y0, x0) = (wy * g.sh, wx * g.sw);
            let mut best = plane[y0 * g.w + x0];
            let mut best_i = (y0 * g.w + x0) as u32;
            for dy in 0..g.kh {
                let row = (y0 + dy) * g.w + x0;
                for dx in 0..g.kw {
                    let v = plane[row + dx];
                    if v > best {
                        best = v;
                        best_i = (row + dx) as u32;
                    }
                }
            }
            out[wy * g.n_w + wx] = best;
            argmax[wy * g.n_w + wx] = best_i;
        }
    }
}

/// Mean over each window of one plane.
pub fn window_avg<F: Real>(g: &WindowGeom, plane: &[F], out: &mut [F]) {
    let inv = F::one() / F::from_usize(g.kh * g.kw).unwrap();
    for wy in 0..g.n_h {
        for wx in 0..g.n_w {
            let (y0, x0) = (wy * g.sh, wx * g.sw);
            let mut acc = F::zero();
            for dy in 0..g.kh {
                let row = (y0 + dy) * g.w + x0;
                for dx in 0..g.kw {
                    acc += plane[row + dx];
                }
            }
            out[wy * g.n_w + wx] = acc * inv;
        }
    }
}
