//! Undamped five-story shear building under sinusoidal story forces.
//!
//! Input `x = (s1..s5, omega_p)`: the force on story `j` is `s_j p0 sin(omega_p t)`
//! and the structure starts at rest. Responses come from the closed-form
//! modal solution sampled on a uniform time grid.

use std::sync::Arc;

use nalgebra::{Matrix5, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::ModelPair;
use crate::error::{Error, Result};

pub const STORIES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShearBuildingConfig {
    pub mass_per_floor: f64,
    pub stiffness_per_story: f64,
    pub force_amplitude: f64,
    pub drift_limit: f64,
    pub horizon: f64,
    pub lf_safety_factor: f64,
    pub time_step: f64,
}

impl Default for ShearBuildingConfig {
    fn default() -> Self {
        Self {
            mass_per_floor: 45_000.0,
            stiffness_per_story: 2.0e7,
            force_amplitude: 1.0e5,
            drift_limit: 0.25,
            horizon: 1.0,
            lf_safety_factor: 2.0,
            time_step: 5e-4,
        }
    }
}

impl ShearBuildingConfig {
    fn validate(&self) -> Result<()> {
        let all_positive = [
            self.mass_per_floor,
            self.stiffness_per_story,
            self.force_amplitude,
            self.drift_limit,
            self.horizon,
            self.lf_safety_factor,
            self.time_step,
        ]
        .iter()
        .all(|v| v.is_finite() && *v > 0.0);
        if !all_positive || self.time_step > 1e-3 {
            return Err(Error::InvalidParameter(format!(
                "shear building parameters must be positive with time_step <= 1e-3, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Modal model of the building. `phi` columns are mass-normalised mode shapes
/// ordered by increasing natural frequency.
#[derive(Debug, Clone)]
pub struct ShearBuilding {
    cfg: ShearBuildingConfig,
    phi: [[f64; STORIES]; STORIES],
    omega: [f64; STORIES],
    // drift_phi[j][i]: inter-story drift j contributed by unit modal coordinate i
    drift_phi: [[f64; STORIES]; STORIES],
    n_steps: usize,
}

impl ShearBuilding {
    pub fn new(cfg: ShearBuildingConfig) -> Result<Self> {
        cfg.validate()?;
        let k = cfg.stiffness_per_story;
        let m = cfg.mass_per_floor;
        let mut kmat = Matrix5::<f64>::zeros();
        for j in 0..STORIES {
            kmat[(j, j)] = if j + 1 < STORIES { 2.0 * k } else { k };
            if j + 1 < STORIES {
                kmat[(j, j + 1)] = -k;
                kmat[(j + 1, j)] = -k;
            }
        }
        // M = m I, so the generalized problem reduces to the eigenproblem of K / m.
        let eig = SymmetricEigen::new(kmat / m);
        let mut order: Vec<usize> = (0..STORIES).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

        let mut phi = [[0.0; STORIES]; STORIES];
        let mut omega = [0.0; STORIES];
        for (col, &src) in order.iter().enumerate() {
            omega[col] = eig.eigenvalues[src].sqrt();
            let v = eig.eigenvectors.column(src);
            let sign = if v[0] < 0.0 { -1.0 } else { 1.0 };
            for j in 0..STORIES {
                phi[j][col] = sign * v[j] / m.sqrt();
            }
        }
        let mut drift_phi = [[0.0; STORIES]; STORIES];
        for j in 0..STORIES {
            for i in 0..STORIES {
                drift_phi[j][i] = phi[j][i] - if j > 0 { phi[j - 1][i] } else { 0.0 };
            }
        }
        let n_steps = (cfg.horizon / cfg.time_step).round() as usize;
        Ok(Self { cfg, phi, omega, drift_phi, n_steps })
    }

    pub fn config(&self) -> &ShearBuildingConfig {
        &self.cfg
    }

    /// Mode shape matrix, `phi[story][mode]`.
    pub fn mode_shapes(&self) -> &[[f64; STORIES]; STORIES] {
        &self.phi
    }

    pub fn natural_frequencies(&self) -> &[f64; STORIES] {
        &self.omega
    }

    /// Modes retained by the LF model: the one or two natural frequencies
    /// bracketing `omega_p` (zero-based).
    pub fn lf_modes(&self, omega_p: f64) -> Vec<usize> {
        let w = &self.omega;
        if omega_p < w[0] {
            return vec![0];
        }
        if omega_p > w[STORIES - 1] {
            return vec![STORIES - 1];
        }
        let j = (0..STORIES - 1).find(|&j| w[j] <= omega_p && omega_p <= w[j + 1]).unwrap_or(STORIES - 2);
        vec![j, j + 1]
    }

    fn guarded_omega_p(&self, omega_p: f64) -> f64 {
        let mut wp = omega_p;
        for &wn in &self.omega {
            if (wp * wp - wn * wn).abs() < 1e-9 * wn * wn {
                wp += 1e-6;
            }
        }
        wp
    }

    /// `(c_i, r_i)` with `q_i(t) = c_i (sin wp t - r_i sin w_i t)`.
    fn modal_terms(&self, s: &[f64], wp: f64) -> [(f64, f64); STORIES] {
        let mut out = [(0.0, 0.0); STORIES];
        for (i, o) in out.iter_mut().enumerate() {
            let p_i: f64 = (0..STORIES).map(|j| self.phi[j][i] * s[j]).sum::<f64>() * self.cfg.force_amplitude;
            let wi = self.omega[i];
            *o = (p_i / (wi * wi - wp * wp), wp / wi);
        }
        out
    }

    /// Story displacements at time `t` from the closed form.
    pub fn displacement(&self, x: &[f64], t: f64) -> [f64; STORIES] {
        let wp = self.guarded_omega_p(x[STORIES]);
        let terms = self.modal_terms(&x[..STORIES], wp);
        let mut u = [0.0; STORIES];
        for (i, &(c, r)) in terms.iter().enumerate() {
            let q = c * ((wp * t).sin() - r * (self.omega[i] * t).sin());
            for (j, uj) in u.iter_mut().enumerate() {
                *uj += self.phi[j][i] * q;
            }
        }
        u
    }

    /// Max over the time grid of `max_j |sum_i shape[j][i] q_i(t)|` over `modes`.
    fn peak(&self, x: &[f64], shape: &[[f64; STORIES]; STORIES], modes: &[usize]) -> f64 {
        let wp = self.guarded_omega_p(x[STORIES]);
        let terms = self.modal_terms(&x[..STORIES], wp);
        // response_j(t) = a_j sin(wp t) - sum_i b[j][i] sin(w_i t)
        let mut a = [0.0; STORIES];
        let mut b = [[0.0; STORIES]; STORIES];
        for j in 0..STORIES {
            for &i in modes {
                let (c, r) = terms[i];
                a[j] += shape[j][i] * c;
                b[j][i] = shape[j][i] * c * r;
            }
        }
        let dt = self.cfg.time_step;
        let rot = |w: f64| ((w * dt).sin(), (w * dt).cos());
        let rp = rot(wp);
        let rm: Vec<(f64, f64)> = self.omega.iter().map(|&w| rot(w)).collect();
        let (mut sp, mut cp) = (0.0f64, 1.0f64);
        let mut sm = [0.0f64; STORIES];
        let mut cm = [1.0f64; STORIES];
        let mut peak = 0.0f64;
        for _ in 0..=self.n_steps {
            for j in 0..STORIES {
                let mut v = a[j] * sp;
                for &i in modes {
                    v -= b[j][i] * sm[i];
                }
                peak = peak.max(v.abs());
            }
            let (s, c) = (sp * rp.1 + cp * rp.0, cp * rp.1 - sp * rp.0);
            sp = s;
            cp = c;
            for &i in modes {
                let (s, c) = (sm[i] * rm[i].1 + cm[i] * rm[i].0, cm[i] * rm[i].1 - sm[i] * rm[i].0);
                sm[i] = s;
                cm[i] = c;
            }
        }
        peak
    }

    /// Drift limit minus the peak inter-story drift over all five modes.
    pub fn hf_response(&self, x: &[f64]) -> f64 {
        self.cfg.drift_limit - self.peak(x, &self.drift_phi, &[0, 1, 2, 3, 4])
    }

    /// Drift limit minus the safety factor times the peak story displacement,
    /// keeping only the modes nearest the forcing frequency.
    pub fn lf_response(&self, x: &[f64]) -> f64 {
        let modes = self.lf_modes(x[STORIES]);
        self.cfg.drift_limit - self.cfg.lf_safety_factor * self.peak(x, &self.phi, &modes)
    }
}

pub fn shear_building_pair(cfg: ShearBuildingConfig) -> Result<ModelPair> {
    let model = Arc::new(ShearBuilding::new(cfg)?);
    let (h, l) = (Arc::clone(&model), model);
    ModelPair::new(STORIES + 1, Arc::new(move |x: &[f64]| h.hf_response(x)), Arc::new(move |x: &[f64]| l.lf_response(x)), 1.0, 0.4)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn building() -> ShearBuilding {
        ShearBuilding::new(ShearBuildingConfig::default()).unwrap()
    }

    #[test]
    fn eigenfrequencies_match_uniform_chain() {
        let b = building();
        let c = ShearBuildingConfig::default();
        let base = 2.0 * (c.stiffness_per_story / c.mass_per_floor).sqrt();
        for (j, &w) in b.natural_frequencies().iter().enumerate() {
            let exact = base * ((2 * j + 1) as f64 * std::f64::consts::PI / 22.0).sin();
            assert!(((w - exact) / exact).abs() < 1e-8, "mode {j}: {w} vs {exact}");
        }
    }

    #[test]
    fn modes_are_mass_orthonormal_and_diagonalize_stiffness() {
        let b = building();
        let c = ShearBuildingConfig::default();
        let (m, k) = (c.mass_per_floor, c.stiffness_per_story);
        let phi = b.mode_shapes();
        let kmul = |v: [f64; 5]| -> [f64; 5] {
            let mut out = [0.0; 5];
            for j in 0..5 {
                let left = if j > 0 { v[j] - v[j - 1] } else { v[j] };
                let right = if j + 1 < 5 { v[j] - v[j + 1] } else { 0.0 };
                out[j] = k * (left + right);
            }
            out
        };
        let col = |i: usize| -> [f64; 5] { [phi[0][i], phi[1][i], phi[2][i], phi[3][i], phi[4][i]] };
        for a in 0..5 {
            let ka = kmul(col(a));
            for bb in 0..5 {
                let mass: f64 = (0..5).map(|j| phi[j][a] * m * phi[j][bb]).sum();
                let stiff: f64 = (0..5).map(|j| ka[j] * phi[j][bb]).sum();
                let expect = if a == bb { 1.0 } else { 0.0 };
                assert!((mass - expect).abs() < 1e-8, "mass[{a},{bb}] = {mass}");
                let diag = b.natural_frequencies()[a].powi(2);
                if a == bb {
                    assert!(((stiff - diag) / diag).abs() < 1e-6);
                } else {
                    assert!(stiff.abs() / diag < 1e-6);
                }
            }
        }
    }

    #[test]
    fn zero_forcing_is_safe() {
        let b = building();
        for wp in [5.0, 17.5, 49.0] {
            let x = [0.0, 0.0, 0.0, 0.0, 0.0, wp];
            assert_eq!(b.hf_response(&x), 0.25);
            assert_eq!(b.lf_response(&x), 0.25);
        }
    }

    #[test]
    fn lf_mode_selection() {
        let b = building();
        let w = *b.natural_frequencies();
        assert_eq!(b.lf_modes(w[0] - 0.5), vec![0]);
        assert_eq!(b.lf_modes(0.5 * (w[1] + w[2])), vec![1, 2]);
        assert_eq!(b.lf_modes(w[4] + 1.0), vec![4]);
        assert_eq!(b.lf_modes(w[0]), vec![0, 1]);
    }

    fn eom_rhs(b: &ShearBuilding, x: &[f64], t: f64, u: &[f64; 5], v: &[f64; 5]) -> ([f64; 5], [f64; 5]) {
        let c = b.config();
        let (m, k, p0) = (c.mass_per_floor, c.stiffness_per_story, c.force_amplitude);
        let mut acc = [0.0; 5];
        for j in 0..5 {
            let left = if j > 0 { u[j] - u[j - 1] } else { u[j] };
            let right = if j + 1 < 5 { u[j] - u[j + 1] } else { 0.0 };
            acc[j] = (x[j] * p0 * (x[5] * t).sin() - k * (left + right)) / m;
        }
        (*v, acc)
    }

    // Independent time integration of M u'' + K u = s p0 sin(wp t) from rest.
    fn rk4_sup_error(b: &ShearBuilding, x: &[f64]) -> f64 {
        let dt = 1e-5;
        let n = 100_000;
        let (mut u, mut v) = ([0.0; 5], [0.0; 5]);
        let mut worst = 0.0f64;
        let axpy = |a: &[f64; 5], s: f64, d: &[f64; 5]| -> [f64; 5] {
            let mut o = *a;
            for j in 0..5 {
                o[j] += s * d[j];
            }
            o
        };
        for step in 0..n {
            let t = step as f64 * dt;
            let (k1u, k1v) = eom_rhs(b, x, t, &u, &v);
            let (k2u, k2v) = eom_rhs(b, x, t + dt / 2.0, &axpy(&u, dt / 2.0, &k1u), &axpy(&v, dt / 2.0, &k1v));
            let (k3u, k3v) = eom_rhs(b, x, t + dt / 2.0, &axpy(&u, dt / 2.0, &k2u), &axpy(&v, dt / 2.0, &k2v));
            let (k4u, k4v) = eom_rhs(b, x, t + dt, &axpy(&u, dt, &k3u), &axpy(&v, dt, &k3v));
            for j in 0..5 {
                u[j] += dt / 6.0 * (k1u[j] + 2.0 * k2u[j] + 2.0 * k3u[j] + k4u[j]);
                v[j] += dt / 6.0 * (k1v[j] + 2.0 * k2v[j] + 2.0 * k3v[j] + k4v[j]);
            }
            if (step + 1) % 50 == 0 {
                let exact = b.displacement(x, (step + 1) as f64 * dt);
                for j in 0..5 {
                    worst = worst.max((exact[j] - u[j]).abs());
                }
            }
        }
        worst
    }

    #[test]
    fn closed_form_matches_rk4() {
        let b = building();
        for x in [[1.0, -0.5, 0.3, 2.0, -1.2, 6.3], [-0.7, 1.1, 0.0, -2.2, 0.9, 23.0], [0.4, 0.4, -1.5, 0.8, 1.9, 44.0]] {
            let err = rk4_sup_error(&b, &x);
            assert!(err < 1e-6, "x = {x:?}: sup error {err}");
        }
    }

    #[test]
    fn grid_peak_matches_direct_evaluation() {
        let b = building();
        let x = [1.0, -0.5, 0.3, 2.0, -1.2, 12.0];
        let mut peak = 0.0f64;
        for k in 0..=2000 {
            let u = b.displacement(&x, k as f64 * 5e-4);
            peak = peak.max(u[0].abs());
            for j in 1..5 {
                peak = peak.max((u[j] - u[j - 1]).abs());
            }
        }
        assert!((0.25 - peak - b.hf_response(&x)).abs() < 1e-12);
    }

    #[test]
    fn resonance_is_guarded() {
        let b = building();
        let w1 = b.natural_frequencies()[0];
        let x = [1.0, 1.0, 1.0, 1.0, 1.0, w1];
        assert!(b.hf_response(&x).is_finite());
        assert!(b.lf_response(&x).is_finite());
    }

    #[test]
    fn pair_costs() {
        let p = shear_building_pair(ShearBuildingConfig::default()).unwrap();
        assert_eq!(p.cost(super::super::Side::Hf), 1.0);
        assert_eq!(p.cost(super::super::Side::Lf), 0.4);
        assert_eq!(p.dim(), 6);
    }

    #[test]
    fn rejects_coarse_time_step() {
        let cfg = ShearBuildingConfig { time_step: 2e-3, ..Default::default() };
        assert!(ShearBuilding::new(cfg).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn responses_are_finite_and_bounded(
            s in prop::collection::vec(-4.0f64..4.0, 5),
            wp in 5.0f64..50.0,
        ) {
            let b = building();
            let mut x = s.clone();
            x.push(wp);
            let h = b.hf_response(&x);
            let l = b.lf_response(&x);
            prop_assert!(h.is_finite() && h <= 0.25);
            prop_assert!(l.is_finite() && l <= 0.25);
        }
    }
}
