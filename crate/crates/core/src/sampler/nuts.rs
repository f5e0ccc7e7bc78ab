//! Multinomial NUTS transition on a diagonal Euclidean metric.
//!
//! Follows the reference tree-building scheme: biased progressive sampling
//! between subtrees at the top level, uniform-progressive sampling inside
//! subtrees, and the generalized U-turn criterion with the extra checks
//! across subtree boundaries.

use rand::Rng;
use rand_distr::StandardNormal;

use super::LogDensity;
use crate::stats::log_sum_exp;

/// Energy error above which a trajectory is declared divergent.
pub const MAX_DELTA_H: f64 = 1000.0;

/// Position, momentum and the cached log density and gradient at the
/// position.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub grad: Vec<f64>,
    pub logp: f64,
}

impl PhasePoint {
    /// Potential plus kinetic energy; `+inf` for invalid points.
    pub fn hamiltonian(&self, inv_mass: &[f64]) -> f64 {
        let kinetic: f64 = self.p.iter().zip(inv_mass).map(|(p, m)| m * p * p).sum::<f64>() * 0.5;
        let h = -self.logp + kinetic;
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    fn velocity(&self, inv_mass: &[f64]) -> Vec<f64> {
        self.p.iter().zip(inv_mass).map(|(p, m)| m * p).collect()
    }
}

/// One leapfrog step of size `step` (negative to integrate backwards).
pub fn leapfrog<T: LogDensity + ?Sized>(target: &T, z: &mut PhasePoint, inv_mass: &[f64], step: f64) {
    let half = 0.5 * step;
    for (p, g) in z.p.iter_mut().zip(&z.grad) {
        *p += half * g;
    }
    for ((q, p), m) in z.q.iter_mut().zip(&z.p).zip(inv_mass) {
        *q += step * m * p;
    }
    z.logp = target.log_density_gradient(&z.q, &mut z.grad);
    for (p, g) in z.p.iter_mut().zip(&z.grad) {
        *p += half * g;
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Transition {
    pub point: PhasePoint,
    pub accept_stat: f64,
    pub depth: usize,
    pub n_leapfrog: usize,
    pub divergent: bool,
}

pub(crate) struct Nuts<'a, T: ?Sized> {
    target: &'a T,
    pub inv_mass: Vec<f64>,
    pub step_size: f64,
    max_depth: usize,
}

/// Per-transition accumulators shared by the recursive tree builder.
struct TreeState {
    h0: f64,
    n_leapfrog: usize,
    sum_metro_prob: f64,
    divergent: bool,
}

fn add_assign(a: &mut [f64], b: &[f64]) {
    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
}

fn sum(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Generalized no-U-turn check: the trajectory keeps going while the
/// summed momentum points forward at both ends.
fn no_u_turn(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

impl<'a, T: LogDensity + ?Sized> Nuts<'a, T> {
    pub fn new(target: &'a T, inv_mass: Vec<f64>, step_size: f64, max_depth: usize) -> Self {
        Self { target, inv_mass, step_size, max_depth }
    }

    fn sample_momentum<R: Rng>(&self, p: &mut [f64], rng: &mut R) {
        for (p, m) in p.iter_mut().zip(&self.inv_mass) {
            let n: f64 = rng.sample(StandardNormal);
            *p = n / m.sqrt();
        }
    }

    /// Doubles or halves the step size until the acceptance probability of
    /// a single leapfrog step crosses 0.8.
    pub fn init_step_size<R: Rng>(&mut self, start: &PhasePoint, rng: &mut R) -> Result<(), String> {
        let threshold = 0.8f64.ln();
        let trial = |eps: f64, rng: &mut R| {
            let mut z = start.clone();
            self.sample_momentum(&mut z.p, rng);
            let h0 = z.hamiltonian(&self.inv_mass);
            leapfrog(self.target, &mut z, &self.inv_mass, eps);
            h0 - z.hamiltonian(&self.inv_mass)
        };

        let mut eps = self.step_size;
        let direction = if trial(eps, rng) > threshold { 1 } else { -1 };
        for _ in 0..200 {
            let delta_h = trial(eps, rng);
            if (direction == 1 && delta_h <= threshold) || (direction == -1 && delta_h >= threshold) {
                break;
            }
            eps = if direction == 1 { 2.0 * eps } else { 0.5 * eps };
            if eps > 1e7 {
                return Err("step size diverged to infinity; the posterior may be improper".into());
            }
            if eps == 0.0 {
                return Err("step size collapsed to zero".into());
            }
        }
        self.step_size = eps;
        Ok(())
    }

    pub fn transition<R: Rng>(&self, current: &PhasePoint, rng: &mut R) -> Transition {
        let mut z = current.clone();
        self.sample_momentum(&mut z.p, rng);
        let p_sharp = z.velocity(&self.inv_mass);

        let mut z_fwd = z.clone();
        let mut z_bck = z.clone();
        let mut z_sample = z.clone();
        let mut z_propose = z.clone();

        let mut p_fwd_fwd = z.p.clone();
        let mut p_sharp_fwd_fwd = p_sharp.clone();
        let mut p_fwd_bck = z.p.clone();
        let mut p_sharp_fwd_bck = p_sharp.clone();
        let mut p_bck_fwd = z.p.clone();
        let mut p_sharp_bck_fwd = p_sharp.clone();
        let mut p_bck_bck = z.p.clone();
        let mut p_sharp_bck_bck = p_sharp;

        let mut rho = z.p.clone();
        let mut log_sum_weight = 0.0;
        let mut tree =
            TreeState { h0: z.hamiltonian(&self.inv_mass), n_leapfrog: 0, sum_metro_prob: 0.0, divergent: false };
        let dim = z.q.len();
        let mut depth = 0;

        while depth < self.max_depth {
            let mut rho_fwd = vec![0.0; dim];
            let mut rho_bck = vec![0.0; dim];
            let mut log_sum_weight_subtree = f64::NEG_INFINITY;

            let valid = if rng.random::<f64>() > 0.5 {
                rho_bck.copy_from_slice(&rho);
                p_bck_fwd.clone_from(&p_fwd_bck);
                p_sharp_bck_fwd.clone_from(&p_sharp_fwd_bck);
                let valid = self.build_tree(
                    depth,
                    &mut z_fwd,
                    &mut z_propose,
                    &mut p_sharp_fwd_bck,
                    &mut p_sharp_fwd_fwd,
                    &mut rho_fwd,
                    &mut p_fwd_bck,
                    &mut p_fwd_fwd,
                    1.0,
                    &mut log_sum_weight_subtree,
                    &mut tree,
                    rng,
                );
                valid
            } else {
                rho_fwd.copy_from_slice(&rho);
                p_fwd_bck.clone_from(&p_bck_fwd);
                p_sharp_fwd_bck.clone_from(&p_sharp_bck_fwd);
                self.build_tree(
                    depth,
                    &mut z_bck,
                    &mut z_propose,
                    &mut p_sharp_bck_fwd,
                    &mut p_sharp_bck_bck,
                    &mut rho_bck,
                    &mut p_bck_fwd,
                    &mut p_bck_bck,
                    -1.0,
                    &mut log_sum_weight_subtree,
                    &mut tree,
                    rng,
                )
            };

            if !valid {
                break;
            }
            depth += 1;

            // Biased progressive sampling favours the new subtree.
            if log_sum_weight_subtree > log_sum_weight {
                z_sample.clone_from(&z_propose);
            } else {
                let accept_prob = (log_sum_weight_subtree - log_sum_weight).exp();
                if rng.random::<f64>() < accept_prob {
                    z_sample.clone_from(&z_propose);
                }
            }
            log_sum_weight = log_sum_exp(log_sum_weight, log_sum_weight_subtree);

            rho = sum(&rho_bck, &rho_fwd);
            let mut persist = no_u_turn(&p_sharp_bck_bck, &p_sharp_fwd_fwd, &rho);
            let rho_extended = sum(&rho_bck, &p_fwd_bck);
            persist &= no_u_turn(&p_sharp_bck_bck, &p_sharp_fwd_bck, &rho_extended);
            let rho_extended = sum(&rho_fwd, &p_bck_fwd);
            persist &= no_u_turn(&p_sharp_bck_fwd, &p_sharp_fwd_fwd, &rho_extended);
            if !persist {
                break;
            }
        }

        let accept_stat = if tree.n_leapfrog > 0 { tree.sum_metro_prob / tree.n_leapfrog as f64 } else { 0.0 };
        Transition { point: z_sample, accept_stat, depth, n_leapfrog: tree.n_leapfrog, divergent: tree.divergent }
    }

    /// Extends the trajectory from `z` by `2^depth` leapfrog steps in
    /// direction `sign`. Returns false when the subtree diverged or turned.
    #[allow(clippy::too_many_arguments)]
    fn build_tree<R: Rng>(
        &self,
        depth: usize,
        z: &mut PhasePoint,
        z_propose: &mut PhasePoint,
        p_sharp_beg: &mut Vec<f64>,
        p_sharp_end: &mut Vec<f64>,
        rho: &mut [f64],
        p_beg: &mut Vec<f64>,
        p_end: &mut Vec<f64>,
        sign: f64,
        log_sum_weight: &mut f64,
        tree: &mut TreeState,
        rng: &mut R,
    ) -> bool {
        if depth == 0 {
            leapfrog(self.target, z, &self.inv_mass, sign * self.step_size);
            tree.n_leapfrog += 1;
            let h = z.hamiltonian(&self.inv_mass);
            if h - tree.h0 > MAX_DELTA_H {
                tree.divergent = true;
            }
            *log_sum_weight = log_sum_exp(*log_sum_weight, tree.h0 - h);
            tree.sum_metro_prob += if tree.h0 - h > 0.0 { 1.0 } else { (tree.h0 - h).exp() };

            z_propose.clone_from(z);
            *p_sharp_beg = z.velocity(&self.inv_mass);
            p_sharp_end.clone_from(p_sharp_beg);
            add_assign(rho, &z.p);
            p_beg.clone_from(&z.p);
            p_end.clone_from(p_beg);
            return !tree.divergent;
        }

        let dim = z.q.len();

        // Initial subtree.
        let mut log_sum_weight_init = f64::NEG_INFINITY;
        let mut p_init_end = vec![0.0; dim];
        let mut p_sharp_init_end = vec![0.0; dim];
        let mut rho_init = vec![0.0; dim];
        let valid_init = self.build_tree(
            depth - 1,
            z,
            z_propose,
            p_sharp_beg,
            &mut p_sharp_init_end,
            &mut rho_init,
            p_beg,
            &mut p_init_end,
            sign,
            &mut log_sum_weight_init,
            tree,
            rng,
        );
        if !valid_init {
            return false;
        }

        // Final subtree.
        let mut z_propose_final = z.clone();
        let mut log_sum_weight_final = f64::NEG_INFINITY;
        let mut p_final_beg = vec![0.0; dim];
        let mut p_sharp_final_beg = vec![0.0; dim];
        let mut rho_final = vec![0.0; dim];
        let valid_final = self.build_tree(
            depth - 1,
            z,
            &mut z_propose_final,
            &mut p_sharp_final_beg,
            p_sharp_end,
            &mut rho_final,
            &mut p_final_beg,
            p_end,
            sign,
            &mut log_sum_weight_final,
            tree,
            rng,
        );
        if !valid_final {
            return false;
        }

        // Multinomial sample from the combined subtree.
        let log_sum_weight_subtree = log_sum_exp(log_sum_weight_init, log_sum_weight_final);
        *log_sum_weight = log_sum_exp(*log_sum_weight, log_sum_weight_subtree);
        if log_sum_weight_final > log_sum_weight_subtree {
            *z_propose = z_propose_final;
        } else {
            let accept_prob = (log_sum_weight_final - log_sum_weight_subtree).exp();
            if rng.random::<f64>() < accept_prob {
                *z_propose = z_propose_final;
            }
        }

        let rho_subtree = sum(&rho_init, &rho_final);
        add_assign(rho, &rho_subtree);

        let mut persist = no_u_turn(p_sharp_beg, p_sharp_end, &rho_subtree);
        let rho_extended = sum(&rho_init, &p_final_beg);
        persist &= no_u_turn(p_sharp_beg, &p_sharp_final_beg, &rho_extended);
        let rho_extended = sum(&rho_final, &p_init_end);
        persist &= no_u_turn(&p_sharp_init_end, p_sharp_end, &rho_extended);
        persist
    }
}
