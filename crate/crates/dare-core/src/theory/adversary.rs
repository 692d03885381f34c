//! Block-parameterized adversary over test-domain adjustment errors.
//!
//! In an orthonormal basis `U = [U₁ U₂]` with `U₁` spanning range(Π̂), the
//! error `Δ` splits into `Δ₁ = U₁ᵀΔU₁`, `Δ₁₂ = U₁ᵀΔU₂`, `Δ₂₁ = U₂ᵀΔU₁` and
//! `Δ₂ = U₂ᵀΔU₂`. The test mean is chosen last, aligned with the residual, so
//! the risk of a predictor is `(1+ρ²)‖(Δ+I)β̂ − β*‖²`.
//!
//! Feasibility:
//! - cross-subspace budget: `‖Δ₂₁U₁ᵀβ̂‖ ≤ B‖Π̂β*‖`
//! - ground-truth budget: `‖ΔΠ̂β*‖ ≤ (1 − 1e-6)‖Π̂β*‖`
//!
//! `Δ₁₂`, `Δ₂` and the parts of `Δ₁` not touching `Π̂β*` are limited only by
//! the free budget, which may be unbounded.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{DareError, Result};
use crate::matops::{projector_basis, Mat, Vector};
use crate::seeding::{rng_from_seed, Rng};
use crate::theory::risk::adversarial_sup_risk;

/// Strictness margin for the ground-truth budget.
pub const STRICT_MARGIN: f64 = 1e-6;

/// Free-block scales tried when the budget is unbounded.
const ESCALATION: [f64; 7] = [1.0, 10.0, 1e2, 1e3, 1e4, 1e5, 1e6];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FreeBudget {
    /// Frobenius bound on each free block.
    Bounded(f64),
    Unbounded,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdversaryBudget {
    pub rho: f64,
    pub b_bound: f64,
    pub free: FreeBudget,
}

#[derive(Debug, Clone)]
pub struct Blocks {
    pub d1: Mat,
    pub d12: Mat,
    pub d21: Mat,
    pub d2: Mat,
}

impl Blocks {
    fn zeros(r1: usize, r2: usize) -> Self {
        Blocks {
            d1: Mat::zeros(r1, r1),
            d12: Mat::zeros(r1, r2),
            d21: Mat::zeros(r2, r1),
            d2: Mat::zeros(r2, r2),
        }
    }

    fn block_mut(&mut self, i: usize) -> &mut Mat {
        match i % 4 {
            0 => &mut self.d1,
            1 => &mut self.d12,
            2 => &mut self.d21,
            _ => &mut self.d2,
        }
    }
}

/// A feasible adversary: blocks, basis, and the test mean shift.
#[derive(Debug, Clone)]
pub struct AdversarySpec {
    pub rho: f64,
    pub b_bound: f64,
    pub pi_hat: Mat,
    /// `[U₁ U₂]`, d×d.
    pub basis: Mat,
    pub rank: usize,
    pub blocks: Blocks,
    pub test_mean: Vector,
}

impl AdversarySpec {
    /// Reassemble `Δ = U [[Δ₁ Δ₁₂] [Δ₂₁ Δ₂]] Uᵀ`.
    pub fn delta(&self) -> Mat {
        let d = self.basis.nrows();
        let r1 = self.rank;
        let mut m = Mat::zeros(d, d);
        m.view_mut((0, 0), (r1, r1)).copy_from(&self.blocks.d1);
        m.view_mut((0, r1), (r1, d - r1)).copy_from(&self.blocks.d12);
        m.view_mut((r1, 0), (d - r1, r1)).copy_from(&self.blocks.d21);
        m.view_mut((r1, r1), (d - r1, d - r1)).copy_from(&self.blocks.d2);
        &self.basis * m * self.basis.transpose()
    }

    /// Risk recomputed in the original coordinates.
    pub fn risk(&self, beta_hat: &Vector, beta_star: &Vector) -> f64 {
        let d = beta_hat.len();
        let v = (self.delta() + Mat::identity(d, d)) * beta_hat - beta_star;
        let s = v.dot(&self.test_mean);
        v.norm_squared() + s * s
    }
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub best_risk: f64,
    pub witness: AdversarySpec,
    pub sup_formula: f64,
    /// Risk exceeded ten times the sup formula under an unbounded free budget.
    pub unbounded: bool,
    /// Best risk found at each free-budget scale tried.
    pub escalation: Vec<(f64, f64)>,
}

struct Frame {
    x1: Vector,
    x2: Vector,
    p: Vector,
    q: Vector,
    /// Right-hand side of the cross-subspace budget, `B‖p‖`.
    cross_cap: f64,
    /// `(1 − margin)‖p‖`.
    truth_cap: f64,
    rho: f64,
}

impl Frame {
    fn residual(&self, b: &Blocks) -> (Vector, Vector) {
        let v1 = &self.x1 + &b.d1 * &self.x1 + &b.d12 * &self.x2 - &self.p;
        let v2 = &self.x2 + &b.d21 * &self.x1 + &b.d2 * &self.x2 - &self.q;
        (v1, v2)
    }

    fn risk(&self, b: &Blocks) -> f64 {
        let (v1, v2) = self.residual(b);
        (1.0 + self.rho * self.rho) * (v1.norm_squared() + v2.norm_squared())
    }

    /// Largest factor for (Δ₁, Δ₂₁) that keeps both budgets.
    fn feasible_scale(&self, b: &Blocks) -> f64 {
        let truth = ((&b.d1 * &self.p).norm_squared() + (&b.d21 * &self.p).norm_squared()).sqrt();
        let cross = (&b.d21 * &self.x1).norm();
        let s3 = if truth > 0.0 { self.truth_cap / truth } else { f64::INFINITY };
        let s2 = if cross > 0.0 { self.cross_cap / cross } else { f64::INFINITY };
        s2.min(s3)
    }

    fn restore(&self, b: &mut Blocks, free: f64) {
        let s = self.feasible_scale(b);
        if s < 1.0 {
            b.d1 *= s;
            b.d21 *= s;
        }
        for m in [&mut b.d12, &mut b.d2] {
            let n = m.norm();
            if n > free {
                *m *= free / n;
            }
        }
    }

    fn feasible(&self, b: &Blocks, free: f64) -> bool {
        self.feasible_scale(b) >= 1.0 - 1e-12 && b.d12.norm() <= free * (1.0 + 1e-12) && b.d2.norm() <= free * (1.0 + 1e-12)
    }
}

fn unit_or(v: &Vector, fallback: &Vector) -> Vector {
    let n = v.norm();
    if n > 1e-12 {
        v / n
    } else {
        let m = fallback.norm();
        if m > 1e-12 {
            fallback / m
        } else {
            let mut e = Vector::zeros(v.len());
            if !e.is_empty() {
                e[0] = 1.0;
            }
            e
        }
    }
}

fn gaussian(r: usize, c: usize, rng: &mut Rng) -> Mat {
    Mat::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

fn random_candidate(f: &Frame, free: f64, rng: &mut Rng) -> Blocks {
    let (r1, r2) = (f.p.len(), f.q.len());
    let mut b = Blocks {
        d1: gaussian(r1, r1, rng),
        d12: gaussian(r1, r2, rng),
        d21: gaussian(r2, r1, rng),
        d2: gaussian(r2, r2, rng),
    };
    let s = f.feasible_scale(&b);
    if s.is_finite() {
        b.d1 *= s;
        b.d21 *= s;
    }
    for m in [&mut b.d12, &mut b.d2] {
        let n = m.norm();
        if n > 0.0 {
            *m *= free / n;
        }
    }
    b
}

/// Rank-one constructions: spend `t_frac` of the cross budget pushing the
/// out-of-subspace residual, the remaining ground-truth budget on `Δ₁`, and the
/// free budget on `Δ₂ = ±F δδᵀ` and `Δ₁₂ = F u δᵀ` along `(I−Π̂)β̂`.
fn seeded_candidate(f: &Frame, free: f64, t_frac: f64, flip: bool, rng: &mut Rng) -> Blocks {
    let (r1, r2) = (f.p.len(), f.q.len());
    let mut b = Blocks::zeros(r1, r2);
    let noise1 = Vector::from_fn(r1, |_, _| StandardNormal.sample(rng));
    let noise2 = Vector::from_fn(r2, |_, _| StandardNormal.sample(rng));

    let x2n = f.x2.norm();
    if x2n > 1e-12 && free > 0.0 && r2 > 0 {
        let delta = &f.x2 / x2n;
        let sign = if flip { -1.0 } else { 1.0 };
        b.d2 = &delta * delta.transpose() * (sign * free);
        let u = unit_or(&(&f.x1 - &f.p), &noise1);
        if r1 > 0 {
            b.d12 = u * delta.transpose() * free;
        }
    }

    let x1n = f.x1.norm();
    if x1n > 1e-12 && r2 > 0 {
        let base2 = &f.x2 + &b.d2 * &f.x2 - &f.q;
        let w2 = unit_or(&base2, &noise2);
        b.d21 = w2 * (f.x1.transpose() / x1n) * (t_frac * f.cross_cap / x1n);
    }

    if r1 > 0 {
        let used = (&b.d21 * &f.p).norm_squared();
        let rem = (f.truth_cap * f.truth_cap - used).max(0.0).sqrt();
        let base1 = &f.x1 - &f.p + &b.d12 * &f.x2;
        let w1 = unit_or(&base1, &unit_or(&f.p, &noise1));
        let pn = f.p.norm();
        if pn > 1e-12 {
            let ph = &f.p / pn;
            let along = ph.dot(&f.x1);
            let sign = if along < 0.0 { -1.0 } else { 1.0 };
            b.d1 += &w1 * ph.transpose() * (sign * rem / pn);
            let rej = &f.x1 - &ph * along;
            if rej.norm() > 1e-12 && free > 0.0 {
                b.d1 += &w1 * (rej.transpose() / rej.norm()) * free;
            }
        } else if x1n > 1e-12 && free > 0.0 {
            b.d1 += &w1 * (f.x1.transpose() / x1n) * free;
        }
    }
    f.restore(&mut b, free);
    b
}

fn search_at(f: &Frame, free: f64, trials: usize, rng: &mut Rng) -> (f64, Blocks) {
    let (r1, r2) = (f.p.len(), f.q.len());
    let mut best = Blocks::zeros(r1, r2);
    let mut best_risk = f.risk(&best);
    let consider = |b: Blocks, best: &mut Blocks, best_risk: &mut f64| {
        let r = f.risk(&b);
        if r > *best_risk && f.feasible(&b, free) {
            *best_risk = r;
            *best = b;
        }
    };
    for i in 0..trials.max(2) {
        let cand = if i % 2 == 0 {
            random_candidate(f, free, rng)
        } else {
            let t_frac = if i == 1 { 1.0 } else { rng.random::<f64>() };
            seeded_candidate(f, free, t_frac, i % 4 == 3, rng)
        };
        consider(cand, &mut best, &mut best_risk);
    }

    // coordinate ascent, one block at a time
    let mut sigma = 0.1;
    for step in 0..trials {
        let mut cand = best.clone();
        let blk = cand.block_mut(step);
        if blk.is_empty() {
            continue;
        }
        let scale = sigma * (blk.norm() + 0.1);
        let mut noise = gaussian(blk.nrows(), blk.ncols(), rng);
        let nn = noise.norm();
        if nn > 0.0 {
            noise *= scale / nn;
        }
        *blk += noise;
        f.restore(&mut cand, free);
        let r = f.risk(&cand);
        if r > best_risk && f.feasible(&cand, free) {
            best_risk = r;
            best = cand;
            sigma = (sigma * 1.3).min(10.0);
        } else {
            sigma = (sigma * 0.95).max(1e-6);
        }
    }
    (best_risk, best)
}

/// Search for the worst feasible test adjustment for the predictor `β̂`.
pub fn adversary_search(
    beta_hat: &Vector,
    beta_star: &Vector,
    pi_hat: &Mat,
    budget: AdversaryBudget,
    trials: usize,
    seed: u64,
) -> Result<SearchResult> {
    if !(budget.b_bound >= 0.0) || !(budget.rho >= 0.0) {
        return Err(DareError::InvalidArgument(format!(
            "adversary budgets must be non-negative (ρ = {}, B = {})",
            budget.rho, budget.b_bound
        )));
    }
    if let FreeBudget::Bounded(fb) = budget.free {
        if !(fb >= 0.0) {
            return Err(DareError::InvalidArgument("free budget must be non-negative".into()));
        }
    }
    let d = beta_star.len();
    if beta_hat.len() != d || pi_hat.shape() != (d, d) {
        return Err(DareError::DimMismatch("β̂, β*, Π̂ disagree in dimension".into()));
    }
    let (u1, u2) = projector_basis(pi_hat)?;
    let p = u1.transpose() * beta_star;
    let frame = Frame {
        x1: u1.transpose() * beta_hat,
        x2: u2.transpose() * beta_hat,
        q: u2.transpose() * beta_star,
        cross_cap: budget.b_bound * p.norm(),
        truth_cap: (1.0 - STRICT_MARGIN) * p.norm(),
        p,
        rho: budget.rho,
    };
    let sup = adversarial_sup_risk(beta_star, pi_hat, budget.rho, budget.b_bound);
    let scales: Vec<f64> = match budget.free {
        FreeBudget::Bounded(fb) => vec![fb],
        FreeBudget::Unbounded => ESCALATION.to_vec(),
    };
    let mut rng = rng_from_seed(seed);
    let mut escalation = Vec::with_capacity(scales.len());
    let mut best: Option<(f64, Blocks)> = None;
    for &free in &scales {
        let (r, b) = search_at(&frame, free, trials, &mut rng);
        escalation.push((free, r));
        if best.as_ref().is_none_or(|(br, _)| r > *br) {
            best = Some((r, b));
        }
        if budget.free == FreeBudget::Unbounded && r > 10.0 * sup {
            break;
        }
    }
    let (best_risk, blocks) = best.expect("at least one scale searched");

    let r1 = u1.ncols();
    let mut basis = Mat::zeros(d, d);
    basis.view_mut((0, 0), (d, r1)).copy_from(&u1);
    basis.view_mut((0, r1), (d, d - r1)).copy_from(&u2);
    let (v1, v2) = frame.residual(&blocks);
    let v = &u1 * v1 + &u2 * v2;
    let test_mean = if v.norm() > 0.0 { &v * (budget.rho / v.norm()) } else { Vector::zeros(d) };
    Ok(SearchResult {
        best_risk,
        unbounded: budget.free == FreeBudget::Unbounded && best_risk > 10.0 * sup,
        sup_formula: sup,
        escalation,
        witness: AdversarySpec {
            rho: budget.rho,
            b_bound: budget.b_bound,
            pi_hat: pi_hat.clone(),
            basis,
            rank: r1,
            blocks,
            test_mean,
        },
    })
}
