//! Batched jet propagation through swish stacks with a hand-written adjoint.
//!
//! Activations are stored channel-major: a layer with `k` units holds a
//! `k x (C n)` matrix whose column blocks are the value, the time tangent,
//! one block per spatial direction and, optionally, the Laplacian channel
//! (always last), each `n` points wide.

use crate::diffcore::activation::swish_all;
use crate::diffcore::gemm;

/// Offsets of one layer's tensors inside the flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Slot {
    pub n_in: usize,
    pub n_out: usize,
    pub rank: usize,
    pub w: usize,
    pub a: usize,
    pub b: usize,
    pub bias: usize,
}

impl Slot {
    pub fn w<'p>(&self, p: &'p [f64]) -> &'p [f64] {
        &p[self.w..self.w + self.n_out * self.n_in]
    }
    pub fn a<'p>(&self, p: &'p [f64]) -> &'p [f64] {
        &p[self.a..self.a + self.n_out * self.rank]
    }
    pub fn b<'p>(&self, p: &'p [f64]) -> &'p [f64] {
        &p[self.b..self.b + self.rank * self.n_in]
    }
    pub fn bias<'p>(&self, p: &'p [f64]) -> &'p [f64] {
        &p[self.bias..self.bias + self.n_out]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Channels {
    pub n: usize,
    pub dirs: usize,
    pub lap: bool,
}

impl Channels {
    pub fn count(&self) -> usize {
        2 + self.dirs + self.lap as usize
    }
    pub fn cols(&self) -> usize {
        self.count() * self.n
    }
    pub fn dir(&self, k: usize) -> usize {
        (2 + k) * self.n
    }
    pub fn lap(&self) -> usize {
        (2 + self.dirs) * self.n
    }
}

#[derive(Default, Clone, Debug)]
pub(crate) struct LayerCache {
    h: Vec<f64>,
    z: Vec<f64>,
    m: Vec<f64>,
    ab: Vec<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
    phi: f64,
    phidot: f64,
}

/// Forward through `slots`; the last layer is linear. `phi`/`phidot` hold
/// one modulation per layer (ignored for rank-0 layers). Returns the
/// output channels, `n_out x cols`.
pub(crate) fn forward(
    params: &[f64],
    slots: &[Slot],
    phi: &[f64],
    phidot: &[f64],
    input: Vec<f64>,
    ch: Channels,
    caches: &mut Vec<LayerCache>,
) -> Vec<f64> {
    caches.resize_with(slots.len(), LayerCache::default);
    let cols = ch.cols();
    let n = ch.n;
    let last = slots.len() - 1;
    let mut h = input;
    for (l, slot) in slots.iter().enumerate() {
        let c = &mut caches[l];
        let (o, i, r) = (slot.n_out, slot.n_in, slot.rank);
        debug_assert_eq!(h.len(), i * cols);
        c.phi = phi[l];
        c.phidot = phidot[l];
        c.m.clear();
        c.m.extend_from_slice(slot.w(params));
        if r > 0 {
            c.ab.resize(o * i, 0.0);
            gemm(false, false, o, i, r, 1.0, slot.a(params), r, slot.b(params), i, 0.0, &mut c.ab, i);
            for (m, ab) in c.m.iter_mut().zip(&c.ab) {
                *m += c.phi * ab;
            }
        }
        c.z.resize(o * cols, 0.0);
        gemm(false, false, o, cols, i, 1.0, &c.m, i, &h, cols, 0.0, &mut c.z, cols);
        for (row, &bv) in slot.bias(params).iter().enumerate() {
            for v in &mut c.z[row * cols..row * cols + n] {
                *v += bv;
            }
        }
        if r > 0 {
            c.u.resize(r * n, 0.0);
            gemm(false, false, r, n, i, 1.0, slot.b(params), i, &h, cols, 0.0, &mut c.u, n);
            c.v.resize(o * n, 0.0);
            gemm(false, false, o, n, r, 1.0, slot.a(params), r, &c.u, n, 0.0, &mut c.v, n);
            for row in 0..o {
                let zt = &mut c.z[row * cols + n..row * cols + 2 * n];
                for (z, v) in zt.iter_mut().zip(&c.v[row * n..(row + 1) * n]) {
                    *z += c.phidot * v;
                }
            }
        }
        c.h = h;
        h = if l == last { c.z.clone() } else { activate(&c.z, o, ch) };
    }
    h
}

fn activate(z: &[f64], rows: usize, ch: Channels) -> Vec<f64> {
    let cols = ch.cols();
    let n = ch.n;
    let mut a = vec![0.0; rows * cols];
    for row in 0..rows {
        let zr = &z[row * cols..(row + 1) * cols];
        let ar = &mut a[row * cols..(row + 1) * cols];
        for i in 0..n {
            let (s0, s1, s2, _) = swish_all(zr[i]);
            ar[i] = s0;
            ar[n + i] = s1 * zr[n + i];
            let mut sq = 0.0;
            for k in 0..ch.dirs {
                let zd = zr[ch.dir(k) + i];
                ar[ch.dir(k) + i] = s1 * zd;
                sq += zd * zd;
            }
            if ch.lap {
                let li = ch.lap() + i;
                ar[li] = s1 * zr[li] + s2 * sq;
            }
        }
    }
    a
}

fn activate_backward(z: &[f64], abar: &[f64], rows: usize, ch: Channels) -> Vec<f64> {
    let cols = ch.cols();
    let n = ch.n;
    let mut zbar = vec![0.0; rows * cols];
    for row in 0..rows {
        let zr = &z[row * cols..(row + 1) * cols];
        let ar = &abar[row * cols..(row + 1) * cols];
        let out = &mut zbar[row * cols..(row + 1) * cols];
        for i in 0..n {
            let (_, s1, s2, s3) = swish_all(zr[i]);
            let at = ar[n + i];
            let al = if ch.lap { ar[ch.lap() + i] } else { 0.0 };
            let mut acc = s1 * ar[i] + s2 * zr[n + i] * at;
            out[n + i] = s1 * at;
            let mut sq = 0.0;
            for k in 0..ch.dirs {
                let j = ch.dir(k) + i;
                let zd = zr[j];
                acc += s2 * zd * ar[j];
                out[j] = s1 * ar[j] + 2.0 * s2 * al * zd;
                sq += zd * zd;
            }
            if ch.lap {
                let j = ch.lap() + i;
                acc += s2 * zr[j] * al + s3 * al * sq;
                out[j] = s1 * al;
            }
            out[i] = acc;
        }
    }
    zbar
}

/// Reverse sweep matching the last [`forward`] call that filled `caches`.
/// Parameter adjoints are added into `grads`, modulation adjoints into
/// `phibar`/`phidotbar`. Returns the input adjoint when `want_input`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward(
    params: &[f64],
    grads: &mut [f64],
    slots: &[Slot],
    caches: &[LayerCache],
    out_bar: Vec<f64>,
    ch: Channels,
    phibar: &mut [f64],
    phidotbar: &mut [f64],
    want_input: bool,
) -> Option<Vec<f64>> {
    let cols = ch.cols();
    let n = ch.n;
    let mut zbar = out_bar;
    let mut ubar = Vec::new();
    for l in (0..slots.len()).rev() {
        let slot = &slots[l];
        let c = &caches[l];
        let (o, i, r) = (slot.n_out, slot.n_in, slot.rank);

        let mut mbar = vec![0.0; o * i];
        gemm(false, true, o, i, cols, 1.0, &zbar, cols, &c.h, cols, 0.0, &mut mbar, i);
        for (g, m) in grads[slot.w..slot.w + o * i].iter_mut().zip(&mbar) {
            *g += m;
        }
        for row in 0..o {
            grads[slot.bias + row] += zbar[row * cols..row * cols + n].iter().sum::<f64>();
        }
        let with_tau_path = r > 0 && c.phidot != 0.0;
        if r > 0 {
            phibar[l] += mbar.iter().zip(&c.ab).map(|(m, ab)| m * ab).sum::<f64>();
            gemm(false, true, o, r, i, c.phi, &mbar, i, slot.b(params), i, 1.0, &mut grads[slot.a..slot.a + o * r], r);
            gemm(true, false, r, i, o, c.phi, slot.a(params), r, &mbar, i, 1.0, &mut grads[slot.b..slot.b + r * i], i);
            let mut dot = 0.0;
            for row in 0..o {
                let zt = &zbar[row * cols + n..row * cols + 2 * n];
                dot += zt.iter().zip(&c.v[row * n..(row + 1) * n]).map(|(a, b)| a * b).sum::<f64>();
            }
            phidotbar[l] += dot;
            if with_tau_path {
                let zt = &zbar[n..];
                gemm(false, true, o, r, n, c.phidot, zt, cols, &c.u, n, 1.0, &mut grads[slot.a..slot.a + o * r], r);
                ubar.clear();
                ubar.resize(r * n, 0.0);
                gemm(true, false, r, n, o, c.phidot, slot.a(params), r, zt, cols, 0.0, &mut ubar, n);
                gemm(false, true, r, i, n, 1.0, &ubar, n, &c.h, cols, 1.0, &mut grads[slot.b..slot.b + r * i], i);
            }
        }
        if l == 0 && !want_input {
            return None;
        }
        let mut hbar = vec![0.0; i * cols];
        gemm(true, false, i, cols, o, 1.0, &c.m, i, &zbar, cols, 0.0, &mut hbar, cols);
        if with_tau_path {
            gemm(true, false, i, n, r, 1.0, slot.b(params), i, &ubar, n, 1.0, &mut hbar, cols);
        }
        if l == 0 {
            return Some(hbar);
        }
        zbar = activate_backward(&caches[l - 1].z, &hbar, slots[l - 1].n_out, ch);
    }
    None
}
