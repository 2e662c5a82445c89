//! First-order optimizers over [`Module`] parameter sets: Adam, a
//! rectified-warmup Adam variant (RAdam) with optional L2 weight decay, the
//! polyak target update, and the learnable entropy coefficient.

use ndarray::Array2;

use crate::nn::{Module, Scalar};

/// Optimizer family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptKind {
    Adam,
    /// Adam with the rectified variance warmup: early steps where the
    /// variance estimate is untrustworthy fall back to bias-corrected
    /// momentum alone.
    RAdam,
}

/// Decoupled optimizer state for one parameter set.
///
/// The state indexes parameters by position, so it must always be applied to
/// the same module (same canonical parameter order) it was created for.
pub struct Opt<F: Scalar> {
    kind: OptKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    /// L2 penalty folded into the gradient as `g + weight_decay * θ`.
    weight_decay: f64,
    t: u64,
    m: Vec<Array2<F>>,
    v: Vec<Array2<F>>,
}

impl<F: Scalar> Opt<F> {
    pub fn new(kind: OptKind, lr: f64, weight_decay: f64) -> Self {
        Opt {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-5,
            weight_decay,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Applies one gradient step to `module` in place.
    ///
    /// `grads` must align with the module's canonical parameter order, as
    /// returned by binder gradient extraction.
    pub fn step<M: Module<F> + ?Sized>(&mut self, module: &mut M, grads: &[Array2<F>]) {
        let mut params = module.params_mut();
        assert_eq!(params.len(), grads.len(), "gradient/parameter count mismatch");
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Array2::zeros(p.dim())).collect();
            self.v = params.iter().map(|p| Array2::zeros(p.dim())).collect();
        }
        self.t += 1;
        let t = self.t as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);

        // Rectification term: length of the SMA approximation at step t.
        let rho_inf = 2.0 / (1.0 - self.beta2) - 1.0;
        let rho_t = rho_inf - 2.0 * t * self.beta2.powf(t) / bc2;
        let rect = if rho_t > 4.0 {
            Some(
                (((rho_t - 4.0) * (rho_t - 2.0) * rho_inf)
                    / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))
                    .sqrt(),
            )
        } else {
            None
        };

        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(&mut self.v))
        {
            assert_eq!(p.dim(), g.dim(), "gradient shape mismatch");
            for ((pe, ge), (me, ve)) in p
                .iter_mut()
                .zip(g.iter())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                let mut gf = ge.to_f64() + self.weight_decay * pe.to_f64();
                let mf = self.beta1 * me.to_f64() + (1.0 - self.beta1) * gf;
                gf *= gf;
                let vf = self.beta2 * ve.to_f64() + (1.0 - self.beta2) * gf;
                *me = F::from_f64(mf);
                *ve = F::from_f64(vf);
                let m_hat = mf / bc1;
                let delta = match (self.kind, rect) {
                    (OptKind::Adam, _) => self.lr * m_hat / ((vf / bc2).sqrt() + self.eps),
                    (OptKind::RAdam, Some(r)) => {
                        self.lr * r * m_hat / ((vf / bc2).sqrt() + self.eps)
                    }
                    (OptKind::RAdam, None) => self.lr * m_hat,
                };
                *pe = F::from_f64(pe.to_f64() - delta);
            }
        }
    }
}

/// Polyak target update: `target ← (1 − τ)·target + τ·online` elementwise.
pub fn polyak_update<F: Scalar, M: Module<F> + ?Sized>(online: &M, target: &mut M, tau: f64) {
    let src = online.params();
    let mut dst = target.params_mut();
    assert_eq!(src.len(), dst.len(), "parameter count mismatch");
    for (d, s) in dst.iter_mut().zip(src) {
        assert_eq!(d.dim(), s.dim(), "parameter shape mismatch");
        for (de, se) in d.iter_mut().zip(s.iter()) {
            *de = F::from_f64((1.0 - tau) * de.to_f64() + tau * se.to_f64());
        }
    }
}

/// A per-agent or per-group entropy coefficient α, log-parameterized when
/// auto-tuned so that α stays strictly positive.
pub struct EntropyCoefficient<F: Scalar> {
    log_alpha: Array2<F>,
    auto: bool,
    target_entropy: f64,
    opt: Opt<F>,
}

/// Gradient of the temperature objective `mean(−log α·(log π + H̄))` with
/// respect to `log α`.
pub fn entropy_gradient(mean_logp: f64, target_entropy: f64) -> f64 {
    -(mean_logp + target_entropy)
}

impl<F: Scalar> EntropyCoefficient<F> {
    /// `target_entropy` is conventionally −Σ action dims of the covered
    /// agents; `lr` only matters when `auto` is set.
    pub fn new(init: f64, auto: bool, target_entropy: f64, lr: f64) -> Self {
        assert!(init > 0.0);
        EntropyCoefficient {
            log_alpha: Array2::from_elem((1, 1), F::from_f64(init.ln())),
            auto,
            target_entropy,
            opt: Opt::new(OptKind::Adam, lr, 0.0),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha[[0, 0]].to_f64().exp()
    }

    pub fn target_entropy(&self) -> f64 {
        self.target_entropy
    }

    pub fn is_auto(&self) -> bool {
        self.auto
    }

    /// One temperature update from the mean log-probability of fresh
    /// actions; a no-op when auto-tuning is disabled.
    pub fn update(&mut self, mean_logp: f64) {
        if !self.auto {
            return;
        }
        let g = Array2::from_elem((1, 1), F::from_f64(entropy_gradient(mean_logp, self.target_entropy)));
        self.opt.step(&mut self.log_alpha, std::slice::from_ref(&g));
    }
}

impl<F: Scalar> Module<F> for Array2<F> {
    fn params(&self) -> Vec<&Array2<F>> {
        vec![self]
    }
    fn params_mut(&mut self) -> Vec<&mut Array2<F>> {
        vec![self]
    }
}

impl<F: Scalar> Module<F> for EntropyCoefficient<F> {
    fn params(&self) -> Vec<&Array2<F>> {
        vec![&self.log_alpha]
    }
    fn params_mut(&mut self) -> Vec<&mut Array2<F>> {
        vec![&mut self.log_alpha]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Straight-line scalar Adam for the oracle, recomputed from scratch.
    fn adam_oracle(theta0: f64, grads: &[f64], lr: f64, wd: f64) -> f64 {
        let (b1, b2, eps) = (0.9, 0.999, 1e-5);
        let (mut th, mut m, mut v) = (theta0, 0.0, 0.0);
        for (i, g0) in grads.iter().enumerate() {
            let t = (i + 1) as f64;
            let g = g0 + wd * th;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powf(t));
            let vh = v / (1.0 - b2.powf(t));
            th -= lr * mh / (vh.sqrt() + eps);
        }
        th
    }

    /// Straight-line scalar RAdam oracle.
    fn radam_oracle(theta0: f64, grads: &[f64], lr: f64, wd: f64) -> f64 {
        let (b1, b2, eps) = (0.9, 0.999, 1e-5);
        let rho_inf = 2.0 / (1.0 - b2) - 1.0;
        let (mut th, mut m, mut v) = (theta0, 0.0, 0.0);
        for (i, g0) in grads.iter().enumerate() {
            let t = (i + 1) as f64;
            let g = g0 + wd * th;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powf(t));
            let rho_t = rho_inf - 2.0 * t * b2.powf(t) / (1.0 - b2.powf(t));
            if rho_t > 4.0 {
                let r = (((rho_t - 4.0) * (rho_t - 2.0) * rho_inf)
                    / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))
                    .sqrt();
                let vh = v / (1.0 - b2.powf(t));
                th -= lr * r * mh / (vh.sqrt() + eps);
            } else {
                th -= lr * mh;
            }
        }
        th
    }

    #[test]
    fn adam_matches_scalar_oracle() {
        let grads = [0.3, -0.5, 0.1, 0.9, -0.2];
        let mut p = Array2::from_elem((1, 1), 1.5f64);
        let mut opt = Opt::new(OptKind::Adam, 1e-2, 0.0);
        for g in grads {
            let ga = Array2::from_elem((1, 1), g);
            opt.step(&mut p, std::slice::from_ref(&ga));
        }
        let expect = adam_oracle(1.5, &grads, 1e-2, 0.0);
        assert!((p[[0, 0]] - expect).abs() < 1e-14, "{} vs {expect}", p[[0, 0]]);
    }

    #[test]
    fn radam_matches_scalar_oracle_through_warmup_and_beyond() {
        // Enough steps to cross the rectification threshold (ρ_t > 4 from
        // step 5 with β2 = 0.999).
        let grads: Vec<f64> = (0..12).map(|i| 0.2 * ((i * 7 % 5) as f64 - 2.0)).collect();
        let mut p = Array2::from_elem((1, 1), -0.8f64);
        let mut opt = Opt::new(OptKind::RAdam, 3e-3, 1e-5);
        for &g in &grads {
            let ga = Array2::from_elem((1, 1), g);
            opt.step(&mut p, std::slice::from_ref(&ga));
        }
        let expect = radam_oracle(-0.8, &grads, 3e-3, 1e-5);
        assert!((p[[0, 0]] - expect).abs() < 1e-14);
    }

    #[test]
    fn radam_early_steps_skip_variance_adaptation() {
        // Step 1: ρ_t ≈ 3 < 4, so the update must be exactly lr·m̂ = lr·g.
        let mut p = Array2::from_elem((1, 1), 0.0f64);
        let mut opt = Opt::new(OptKind::RAdam, 1e-2, 0.0);
        let g = Array2::from_elem((1, 1), 0.7);
        opt.step(&mut p, std::slice::from_ref(&g));
        assert!((p[[0, 0]] - (-1e-2 * 0.7)).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_folds_into_the_gradient() {
        let mut a = Array2::from_elem((1, 1), 2.0f64);
        let mut b = a.clone();
        let zero = Array2::from_elem((1, 1), 0.0);
        let equiv = Array2::from_elem((1, 1), 0.01 * 2.0);
        Opt::new(OptKind::Adam, 1e-3, 0.01).step(&mut a, std::slice::from_ref(&zero));
        Opt::new(OptKind::Adam, 1e-3, 0.0).step(&mut b, std::slice::from_ref(&equiv));
        assert_eq!(a[[0, 0]], b[[0, 0]]);
    }

    #[test]
    fn polyak_endpoints_and_midpoint() {
        let online = Array2::from_elem((2, 2), 1.0f64);
        let mut t0 = Array2::from_elem((2, 2), 0.0f64);
        polyak_update(&online, &mut t0, 0.0);
        assert!(t0.iter().all(|&x| x == 0.0));
        polyak_update(&online, &mut t0, 1.0);
        assert!(t0.iter().all(|&x| x == 1.0));
        let mut t = Array2::from_elem((2, 2), 0.0f64);
        polyak_update(&online, &mut t, 0.005);
        assert!(t.iter().all(|&x| x == 0.005));
    }

    #[test]
    fn optimizer_state_is_decoupled_per_parameter_set() {
        let mut a = Array2::from_elem((1, 1), 1.0f64);
        let b = Array2::from_elem((1, 1), 1.0f64);
        let g = Array2::from_elem((1, 1), 0.5);
        let mut opt_a = Opt::new(OptKind::Adam, 1e-2, 0.0);
        let _opt_b = Opt::<f64>::new(OptKind::Adam, 1e-2, 0.0);
        opt_a.step(&mut a, std::slice::from_ref(&g));
        assert_ne!(a[[0, 0]], 1.0);
        assert_eq!(b[[0, 0]], 1.0, "untouched set must not move");
    }

    #[test]
    fn entropy_coefficient_stays_positive_and_fixed_mode_never_moves() {
        let mut fixed = EntropyCoefficient::<f64>::new(0.2, false, -2.0, 3e-4);
        fixed.update(-10.0);
        fixed.update(10.0);
        assert_eq!(fixed.alpha(), 0.2);

        let mut auto = EntropyCoefficient::<f64>::new(1.0, true, -3.0, 1e-1);
        // Entropy above target (log π below −H̄): α must shrink, stay > 0.
        for _ in 0..200 {
            auto.update(-9.0);
        }
        assert!(auto.alpha() < 1.0);
        assert!(auto.alpha() > 0.0);
        // Entropy below target: α must grow.
        let before = auto.alpha();
        for _ in 0..200 {
            auto.update(5.0);
        }
        assert!(auto.alpha() > before);
    }

    #[test]
    fn entropy_gradient_vanishes_exactly_at_target() {
        assert_eq!(entropy_gradient(3.0, -3.0), 0.0);
        let mut auto = EntropyCoefficient::<f64>::new(0.7, true, -3.0, 1e-2);
        auto.update(3.0);
        assert_eq!(auto.alpha(), 0.7, "zero gradient must not move α");
    }
}
