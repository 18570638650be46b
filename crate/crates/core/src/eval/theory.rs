//! The GAN value function on discrete distributions: optimal discriminator,
//! Jensen-Shannon divergence and the `-log 4 + 2 JSD` identity.

use rand::Rng;

use crate::error::{Error, Result};

const SUM_TOLERANCE: f64 = 1e-12;

/// A data distribution `p_d` and a model distribution `p_g` over the same
/// finite support.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteJointDist {
    pub support: Vec<String>,
    pub p_d: Vec<f64>,
    pub p_g: Vec<f64>,
}

fn check_distribution(name: &str, p: &[f64]) -> Result<()> {
    if let Some(v) = p.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::Domain { op: "distribution", detail: format!("{name} has entry {v}") });
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::Domain { op: "distribution", detail: format!("{name} sums to {total}") });
    }
    Ok(())
}

impl DiscreteJointDist {
    /// Outcomes are labelled by index.
    pub fn new(p_d: Vec<f64>, p_g: Vec<f64>) -> Result<Self> {
        let support = (0..p_d.len()).map(|i| i.to_string()).collect();
        Self::with_support(support, p_d, p_g)
    }

    pub fn with_support(support: Vec<String>, p_d: Vec<f64>, p_g: Vec<f64>) -> Result<Self> {
        if p_d.len() != support.len() || p_g.len() != support.len() {
            return Err(Error::shape(
                "distribution",
                format!("support {} with p_d {} and p_g {}", support.len(), p_d.len(), p_g.len()),
            ));
        }
        check_distribution("p_d", &p_d)?;
        check_distribution("p_g", &p_g)?;
        Ok(Self { support, p_d, p_g })
    }

    /// Two independent random distributions on `n` outcomes, every entry
    /// strictly positive.
    pub fn random(n: usize, rng: &mut impl Rng) -> Self {
        let mut draw = || {
            let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
            normalize(&raw)
        };
        let (p_d, p_g) = (draw(), draw());
        Self { support: (0..n).map(|i| i.to_string()).collect(), p_d, p_g }
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }
}

/// Rescales to unit sum, then folds the rounding residue into the largest
/// entry so the sum is 1 to within one ulp.
pub fn normalize(raw: &[f64]) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    let mut p: Vec<f64> = raw.iter().map(|v| v / total).collect();
    if let Some(k) = (0..p.len()).max_by(|&i, &j| p[i].total_cmp(&p[j])) {
        let rest: f64 = p.iter().enumerate().filter(|&(i, _)| i != k).map(|(_, v)| v).sum();
        p[k] = 1.0 - rest;
    }
    p
}

/// `D*(o) = p_d(o) / (p_d(o) + p_g(o))`. Outcomes with no mass under
/// either distribution do not contribute to the value and get `None`.
pub fn optimal_discriminator(dist: &DiscreteJointDist) -> Vec<Option<f64>> {
    dist.p_d.iter().zip(&dist.p_g).map(|(&pd, &pg)| (pd + pg > 0.0).then(|| pd / (pd + pg))).collect()
}

/// `D*` with `0.5` at outcomes that carry no mass.
pub fn optimal_discriminator_filled(dist: &DiscreteJointDist) -> Vec<f64> {
    optimal_discriminator(dist).into_iter().map(|d| d.unwrap_or(0.5)).collect()
}

/// `sum_o p_d log D + p_g log(1 - D)`, with `0 log 0 = 0`.
pub fn gan_value(dist: &DiscreteJointDist, d: &[f64]) -> Result<f64> {
    if d.len() != dist.len() {
        return Err(Error::shape("gan_value", format!("{} outcomes, {} discriminator values", dist.len(), d.len())));
    }
    if let Some(v) = d.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
        return Err(Error::Domain { op: "gan_value", detail: format!("discriminator value {v} outside (0, 1)") });
    }
    Ok(d.iter().zip(dist.p_d.iter().zip(&dist.p_g)).map(|(&dv, (&pd, &pg))| outcome_value(pd, pg, dv)).sum())
}

fn outcome_value(pd: f64, pg: f64, d: f64) -> f64 {
    let real = if pd > 0.0 { pd * d.ln() } else { 0.0 };
    let fake = if pg > 0.0 { pg * (1.0 - d).ln() } else { 0.0 };
    real + fake
}

/// `KL(p || q)` in nats.
pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).filter(|(pi, _)| **pi > 0.0).map(|(pi, qi)| pi * (pi / qi).ln()).sum()
}

/// Jensen-Shannon divergence in nats.
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::shape("jsd", format!("{} vs {} outcomes", p.len(), q.len())));
    }
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    Ok(0.5 * kl(p, &m) + 0.5 * kl(q, &m))
}

/// Maximizes the value over `D` on the grid `{step, 2 step, ...} ∩ (0, 1)`.
/// The value is a sum of per-outcome terms, so the product-grid maximum is
/// found coordinate by coordinate.
pub fn grid_search_discriminator(dist: &DiscreteJointDist, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step < 0.5) {
        return Err(Error::Domain { op: "grid_search_discriminator", detail: format!("step {step}") });
    }
    let points = (1.0 / step).round() as usize;
    let grid: Vec<f64> = (1..points).map(|k| k as f64 * step).collect();
    Ok(dist
        .p_d
        .iter()
        .zip(&dist.p_g)
        .map(|(&pd, &pg)| {
            grid.iter()
                .copied()
                .max_by(|&a, &b| outcome_value(pd, pg, a).total_cmp(&outcome_value(pd, pg, b)))
                .unwrap_or(0.5)
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TheoryReport {
    pub trials: usize,
    pub max_grid_gap: f64,
    pub max_identity_gap: f64,
    pub equal_value: f64,
    pub equal_gap: f64,
}

/// Runs the three checks over `trials` random pairs of distributions on
/// `outcomes` points.
pub fn verify_propositions(trials: usize, outcomes: usize, rng: &mut impl Rng) -> Result<TheoryReport> {
    let mut max_grid_gap: f64 = 0.0;
    let mut max_identity_gap: f64 = 0.0;
    for _ in 0..trials {
        let dist = DiscreteJointDist::random(outcomes, rng);
        let d_star = optimal_discriminator_filled(&dist);
        let found = grid_search_discriminator(&dist, 1e-3)?;
        for (a, b) in d_star.iter().zip(&found) {
            max_grid_gap = max_grid_gap.max((a - b).abs());
        }
        let identity = -(4.0f64.ln()) + 2.0 * jsd(&dist.p_d, &dist.p_g)?;
        max_identity_gap = max_identity_gap.max((gan_value(&dist, &d_star)? - identity).abs());
    }
    let p = DiscreteJointDist::random(outcomes, rng).p_d;
    let equal = DiscreteJointDist::new(p.clone(), p)?;
    let equal_value = gan_value(&equal, &optimal_discriminator_filled(&equal))?;
    Ok(TheoryReport {
        trials,
        max_grid_gap,
        max_identity_gap,
        equal_value,
        equal_gap: (equal_value + 4.0f64.ln()).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;

    fn asymmetric() -> DiscreteJointDist {
        DiscreteJointDist::new(vec![0.8, 0.2], vec![0.2, 0.8]).unwrap()
    }

    /// Independent oracle: KL divergences summed by hand for the 0.8/0.2
    /// pair against the midpoint 0.5/0.5.
    fn asymmetric_jsd_oracle() -> f64 {
        0.8 * (0.8f64 / 0.5).ln() + 0.2 * (0.2f64 / 0.5).ln()
    }

    #[test]
    fn optimal_discriminator_examples() {
        let same = DiscreteJointDist::new(vec![0.3, 0.7], vec![0.3, 0.7]).unwrap();
        assert_eq!(optimal_discriminator_filled(&same), vec![0.5, 0.5]);
        assert_eq!(optimal_discriminator(&asymmetric()), vec![Some(0.8), Some(0.2)]);
        let gap = DiscreteJointDist::new(vec![1.0, 0.0], vec![1.0, 0.0]).unwrap();
        assert_eq!(optimal_discriminator(&gap), vec![Some(0.5), None]);
    }

    #[test]
    fn asymmetric_value_and_divergence() {
        let d = asymmetric();
        let js = jsd(&d.p_d, &d.p_g).unwrap();
        assert!((js - asymmetric_jsd_oracle()).abs() < 1e-15);
        assert!((js - 0.19274).abs() < 1e-5);
        let v = gan_value(&d, &[0.8, 0.2]).unwrap();
        assert!((v - (-1.00081)).abs() < 1e-5);
    }

    #[test]
    fn equal_distributions_reach_minus_log_four() {
        let d = DiscreteJointDist::new(vec![0.1, 0.2, 0.7], vec![0.1, 0.2, 0.7]).unwrap();
        let v = gan_value(&d, &optimal_discriminator_filled(&d)).unwrap();
        assert!((v + 4.0f64.ln()).abs() < 1e-12);
        assert_eq!(jsd(&d.p_d, &d.p_g).unwrap(), 0.0);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        assert!(DiscreteJointDist::new(vec![0.5, 0.6], vec![0.5, 0.5]).is_err());
        assert!(DiscreteJointDist::new(vec![1.5, -0.5], vec![0.5, 0.5]).is_err());
        assert!(gan_value(&asymmetric(), &[1.0, 0.5]).is_err());
    }

    #[test]
    fn grid_search_finds_the_optimum() {
        let mut rng = seeded(3, 0);
        for _ in 0..20 {
            let d = DiscreteJointDist::random(5, &mut rng);
            let found = grid_search_discriminator(&d, 1e-3).unwrap();
            for (a, b) in optimal_discriminator_filled(&d).iter().zip(&found) {
                assert!((a - b).abs() <= 2e-3);
            }
        }
    }

    proptest! {
        #[test]
        fn optimum_beats_perturbations(seed in 0u64..500, n in 2usize..8, sign in prop::bool::ANY) {
            let d = DiscreteJointDist::random(n, &mut seeded(seed, 1));
            let star = optimal_discriminator_filled(&d);
            let best = gan_value(&d, &star).unwrap();
            let delta = if sign { 0.01 } else { -0.01 };
            let moved: Vec<f64> = star.iter().map(|v| (v + delta).clamp(1e-6, 1.0 - 1e-6)).collect();
            prop_assert!(best >= gan_value(&d, &moved).unwrap());
            let identity = -(4.0f64.ln()) + 2.0 * jsd(&d.p_d, &d.p_g).unwrap();
            prop_assert!((best - identity).abs() < 1e-10);
        }

        #[test]
        fn jsd_is_non_negative_and_zero_on_equal_pairs(seed in 0u64..500, n in 1usize..8) {
            let d = DiscreteJointDist::random(n, &mut seeded(seed, 2));
            prop_assert!(jsd(&d.p_d, &d.p_g).unwrap() >= 0.0);
            prop_assert_eq!(jsd(&d.p_d, &d.p_d).unwrap(), 0.0);
        }
    }
}
