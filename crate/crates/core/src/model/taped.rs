use super::{FieldJet, FieldModel, LaplacianMode};
use crate::diffcore::{grad_reverse, hess_diag_sum, hutchinson_laplacian, Dual, Real, ScalarFn};
use crate::{Error, Result};

impl FieldModel {
    /// `s(x, tau, mu)` in any scalar algebra, layer by layer as
    /// `W h + phi A (B h) + b`.
    pub fn eval_real<R: Real>(&self, x: &[R], tau: &R, mu: &[f64]) -> R {
        let p = &self.params;
        let mu_n = self.norm.mu(mu);
        let mut h: Vec<R> = std::iter::once(tau.clone()).chain(mu_n.iter().map(|&m| tau.lift(m))).collect();
        let last = self.layout.hyper.len() - 1;
        for (l, s) in self.layout.hyper.iter().enumerate() {
            h = affine(tau, s.w(p), s.bias(p), s.n_out, s.n_in, &h);
            if l < last {
                h = h.iter().map(Real::swish).collect();
            }
        }
        let mods = h;

        let mut h: Vec<R> = x
            .iter()
            .enumerate()
            .map(|(j, v)| (v.clone() - tau.lift(self.norm.x_shift[j])) / tau.lift(self.norm.x_scale[j]))
            .collect();
        let last = self.layout.main.len() - 1;
        for (l, s) in self.layout.main.iter().enumerate() {
            let zero = vec![0.0; s.n_out.max(s.rank)];
            let mut z = affine(tau, s.w(p), s.bias(p), s.n_out, s.n_in, &h);
            let bh = affine(tau, s.b(p), &zero[..s.rank], s.rank, s.n_in, &h);
            let abh = affine(tau, s.a(p), &zero[..s.n_out], s.n_out, s.rank, &bh);
            let phi = mods[self.mod_index(l)].clone();
            for (zr, low) in z.iter_mut().zip(abh) {
                *zr = zr.clone() + phi.clone() * low;
            }
            h = if l < last { z.iter().map(Real::swish).collect() } else { z };
        }
        h.pop().expect("scalar output")
    }

    /// Jet by the generic route: reverse sweep for `grad_x s`, one forward
    /// tangent for `ds/dtau`, forward-over-reverse (or probes) for the
    /// Laplacian.
    pub fn eval_jet_taped(&self, x: &[f64], tau: f64, mu: &[f64], need_laplacian: bool) -> Result<FieldJet> {
        self.check_mu(mu)?;
        if x.len() != self.config.dim {
            return Err(Error::Shape(format!("point of length {}, model expects {}", x.len(), self.config.dim)));
        }
        let f = AtTime { model: self, tau, mu };
        let (s, grad_x) = grad_reverse(&f, x)?;
        let xd: Vec<Dual> = x.iter().map(|&v| Dual::constant(v)).collect();
        let dt = self.eval_real(&xd, &Dual::variable(tau, 0, 1), mu).tangent(0);
        let laplacian = if !need_laplacian {
            0.0
        } else if self.config.dim <= self.config.laplacian_cap {
            hess_diag_sum(&f, x, self.config.laplacian_cap)?
        } else if let LaplacianMode::Hutchinson { probes } = self.config.laplacian {
            hutchinson_laplacian(&f, x, probes, 0)?
        } else {
            return Err(Error::LaplacianCap { dim: self.config.dim, cap: self.config.laplacian_cap });
        };
        if !(s.is_finite() && dt.is_finite() && laplacian.is_finite()) {
            return Err(Error::non_finite(format!("taped jet at tau = {tau}")));
        }
        Ok(FieldJet { s, grad_x, laplacian, dt })
    }
}

fn affine<R: Real>(like: &R, w: &[f64], b: &[f64], rows: usize, cols: usize, h: &[R]) -> Vec<R> {
    (0..rows)
        .map(|r| {
            let mut acc = like.lift(b[r]);
            for c in 0..cols {
                acc = acc + h[c].clone().scale(w[r * cols + c]);
            }
            acc
        })
        .collect()
}

struct AtTime<'a> {
    model: &'a FieldModel,
    tau: f64,
    mu: &'a [f64],
}

impl ScalarFn for AtTime<'_> {
    fn eval<R: Real>(&self, x: &[R]) -> R {
        let tau = x[0].lift(self.tau);
        self.model.eval_real(x, &tau, self.mu)
    }
}
