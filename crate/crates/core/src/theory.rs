//! Isolation-efficiency mathematics and branching-factor distributions.
//!
//! A tree with branching factor `v` and depth `d` isolates `psi = v^d`
//! instances (its capacity) using an area of `phi = v * d`. The ratio
//! `eta = psi / phi` is the isolation efficiency. With the area held fixed at
//! `Phi`, efficiency becomes `(1/Phi) * v^(Phi/v)`, which peaks at `v = e`
//! regardless of `Phi`.
//!
//! Integer trees cannot branch `e` ways, so branching factors are drawn from a
//! [`BranchingDistribution`] whose mean is `e`. Any such law must satisfy
//! `Pr(V >= v) <= (e - 2) / (v - 2)` for `v > 2`, which in turn forces
//! `p_2 >= 3 - e`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const E: f64 = std::f64::consts::E;

/// Largest exponent accepted before `v^d` is considered an overflow.
const MAX_LN_CAPACITY: f64 = 700.0;

/// Terms used by the partial-sum checks in [`validate_distribution`].
pub const VALIDATION_TERMS: u32 = 50;

/// Samplers never tabulate branching factors beyond this value.
pub const SAMPLER_HORIZON: u32 = 64;

const SAMPLER_TAIL_MASS: f64 = 1e-12;

fn check_branching(v: f64) -> Result<()> {
    if !(v.is_finite() && v > 1.0) {
        return Err(Error::Domain(format!("branching factor must be > 1, got {v}")));
    }
    Ok(())
}

fn check_positive(name: &str, x: f64) -> Result<()> {
    if !(x.is_finite() && x > 0.0) {
        return Err(Error::Domain(format!("{name} must be > 0, got {x}")));
    }
    Ok(())
}

/// One point of the capacity/area/efficiency relation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EfficiencyPoint {
    pub v: f64,
    pub d: f64,
    /// Isolation capacity, `v^d`.
    pub psi: f64,
    /// Isolation area, `v * d`.
    pub phi: f64,
    /// Isolation efficiency, `psi / phi`.
    pub eta: f64,
}

impl EfficiencyPoint {
    pub fn new(v: f64, d: f64) -> Result<Self> {
        check_branching(v)?;
        check_positive("depth", d)?;
        let ln_psi = d * v.ln();
        if ln_psi > MAX_LN_CAPACITY {
            return Err(Error::Overflow(format!(
                "capacity {v}^{d} exceeds the representable range"
            )));
        }
        let psi = ln_psi.exp();
        let phi = v * d;
        Ok(Self {
            v,
            d,
            psi,
            phi,
            eta: psi / phi,
        })
    }
}

/// `v^d / (v * d)`.
pub fn isolation_efficiency(v: f64, d: f64) -> Result<f64> {
    EfficiencyPoint::new(v, d).map(|p| p.eta)
}

/// Efficiency as a function of `v` alone once the area is fixed at `area`:
/// `(1/area) * v^(area/v)`.
pub fn efficiency_at_fixed_area(v: f64, area: f64) -> Result<f64> {
    check_branching(v)?;
    check_positive("isolation area", area)?;
    isolation_efficiency(v, area / v)
}

/// `v^(area/v - 2) * (1 - ln v)`.
///
/// This is the closed form used for the sign analysis of
/// [`efficiency_at_fixed_area`]. It vanishes only at `v = e` and has the
/// same sign as the true derivative, but it is not scaled to match its
/// magnitude.
pub fn efficiency_derivative(v: f64, area: f64) -> Result<f64> {
    check_branching(v)?;
    check_positive("isolation area", area)?;
    let exponent = area / v - 2.0;
    if exponent * v.ln() > MAX_LN_CAPACITY {
        return Err(Error::Overflow(format!("v^(area/v - 2) overflows for v={v}, area={area}")));
    }
    Ok(v.powf(exponent) * (1.0 - v.ln()))
}

/// Golden-section maximisation of [`efficiency_at_fixed_area`] over
/// `[1 + tol, 32]`.
///
/// The search runs on `ln eta`, which has the same argmax and stays finite
/// for large areas.
pub fn optimal_branching(area: f64, tol: f64) -> Result<f64> {
    check_positive("isolation area", area)?;
    if !(tol > 0.0 && tol < 0.1) {
        return Err(Error::Domain(format!("tolerance must lie in (0, 0.1), got {tol}")));
    }
    let log_eta = |v: f64| (area / v) * v.ln() - area.ln();
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;

    let (mut lo, mut hi) = (1.0 + tol, 32.0);
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = log_eta(x1);
    let mut f2 = log_eta(x2);
    // The midpoint of a bracket narrower than tol is within tol/2 of the argmax.
    while hi - lo > tol {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = log_eta(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = log_eta(x1);
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Upper bound on `Pr(V >= v)` for any branching law with mean `e`.
pub fn tail_bound(v: u32) -> Result<f64> {
    if v < 3 {
        return Err(Error::Domain(format!("tail bound needs v >= 3, got {v}")));
    }
    Ok((E - 2.0) / f64::from(v - 2))
}

/// `(v, eta(v))` pairs over `[start, end]` at the given step, for plotting.
pub fn efficiency_curve(area: f64, start: f64, end: f64, step: f64) -> Result<Vec<(f64, f64)>> {
    check_positive("step", step)?;
    let count = ((end - start) / step).floor() as i64;
    (0..=count.max(0))
        .map(|i| start + i as f64 * step)
        .map(|v| efficiency_at_fixed_area(v, area).map(|eta| (v, eta)))
        .collect()
}

/// Probability law over integer branching factors `v >= 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BranchingDistribution {
    /// `p_2 = 3 - e`, `p_3 = e - 2`.
    #[default]
    Finite23,
    /// `p_v = ((e-1)^2 / (2e-1)) * e^(2-v)`.
    Geometric,
    /// `p_v = (v-1) / v!`.
    Factorial,
    /// All mass on a single branching factor.
    Fixed(u32),
}

impl Serialize for BranchingDistribution {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for BranchingDistribution {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for BranchingDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BranchingDistribution::Finite23 => f.write_str("finite23"),
            BranchingDistribution::Geometric => f.write_str("geometric"),
            BranchingDistribution::Factorial => f.write_str("factorial"),
            BranchingDistribution::Fixed(v) => write!(f, "fixed:{v}"),
        }
    }
}

impl FromStr for BranchingDistribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "finite23" => Ok(BranchingDistribution::Finite23),
            "geometric" => Ok(BranchingDistribution::Geometric),
            "factorial" => Ok(BranchingDistribution::Factorial),
            other => {
                let v = other
                    .strip_prefix("fixed:")
                    .and_then(|v| v.parse::<u32>().ok())
                    .ok_or_else(|| {
                        Error::InvalidConfig(format!(
                            "unknown distribution '{s}' (expected finite23, geometric, factorial or fixed:<v>)"
                        ))
                    })?;
                if v < 2 {
                    return Err(Error::InvalidConfig(format!(
                        "fixed branching factor must be >= 2, got {v}"
                    )));
                }
                Ok(BranchingDistribution::Fixed(v))
            }
        }
    }
}

fn geometric_scale() -> f64 {
    (E - 1.0).powi(2) / (2.0 * E - 1.0)
}

impl BranchingDistribution {
    /// Probability of branching factor `v` (0 outside the support).
    pub fn pmf(&self, v: u32) -> f64 {
        if v < 2 {
            return 0.0;
        }
        match *self {
            BranchingDistribution::Finite23 => match v {
                2 => 3.0 - E,
                3 => E - 2.0,
                _ => 0.0,
            },
            BranchingDistribution::Geometric => geometric_scale() * (2.0 - f64::from(v)).exp(),
            BranchingDistribution::Factorial => {
                // (v-1)/v! = 1/(v-1)! - 1/v!, built up as a running product.
                let mut inv_factorial = 1.0;
                for k in 2..=v {
                    inv_factorial /= f64::from(k);
                    if inv_factorial == 0.0 {
                        return 0.0;
                    }
                }
                f64::from(v - 1) * inv_factorial
            }
            BranchingDistribution::Fixed(v0) => {
                if v == v0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Total mass of the closed-form pmf over its whole support.
    ///
    /// This is 1 for every kind except `Geometric`, whose printed constant
    /// yields `e(e-1)/(2e-1)`.
    pub fn total_mass(&self) -> f64 {
        match self {
            BranchingDistribution::Geometric => E * (E - 1.0) / (2.0 * E - 1.0),
            _ => 1.0,
        }
    }

    /// Largest branching factor with non-zero probability, if bounded.
    pub fn max_support(&self) -> Option<u32> {
        match *self {
            BranchingDistribution::Finite23 => Some(3),
            BranchingDistribution::Fixed(v) => Some(v),
            BranchingDistribution::Geometric | BranchingDistribution::Factorial => None,
        }
    }

    pub fn sampler(&self) -> BranchingSampler {
        BranchingSampler::new(*self)
    }

    /// Draws one branching factor. Builds the inverse-CDF table on every
    /// call; use [`BranchingSampler`] for repeated draws.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        self.sampler().sample(rng)
    }
}

/// Inverse-CDF sampler over a truncated table of a [`BranchingDistribution`].
///
/// Unbounded laws are tabulated up to [`SAMPLER_HORIZON`] or until the
/// remaining tail is below `1e-12` of the total mass. The table is scaled by
/// the total mass and the last entry closes at exactly 1, so the sampler is
/// always a proper distribution.
#[derive(Debug, Clone)]
pub struct BranchingSampler {
    values: Vec<u32>,
    cumulative: Vec<f64>,
}

impl BranchingSampler {
    pub fn new(dist: BranchingDistribution) -> Self {
        let total = dist.total_mass();
        let last = dist.max_support().unwrap_or(SAMPLER_HORIZON).clamp(2, SAMPLER_HORIZON);
        let mut values = Vec::new();
        let mut cumulative = Vec::new();
        let mut acc = 0.0;
        for v in 2..=last {
            let p = dist.pmf(v);
            acc += p;
            if p > 0.0 {
                values.push(v);
                cumulative.push(acc / total);
            }
            if total - acc <= SAMPLER_TAIL_MASS * total {
                break;
            }
        }
        if values.is_empty() {
            // Fixed(v) beyond the horizon.
            values.push(dist.max_support().unwrap_or(2));
            cumulative.push(1.0);
        }
        if let Some(c) = cumulative.last_mut() {
            *c = 1.0;
        }
        Self { values, cumulative }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let u: f64 = rng.random();
        let idx = self.cumulative.partition_point(|&c| c <= u);
        self.values[idx.min(self.values.len() - 1)]
    }

    /// Probability the sampler assigns to `v`.
    pub fn probability(&self, v: u32) -> f64 {
        match self.values.iter().position(|&x| x == v) {
            Some(0) => self.cumulative[0],
            Some(i) => self.cumulative[i] - self.cumulative[i - 1],
            None => 0.0,
        }
    }

    pub fn mean(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| f64::from(v) * self.probability(v))
            .sum()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TailCheck {
    pub v: u32,
    pub tail: f64,
    pub bound: f64,
}

/// Numeric checks of a branching law against the mean-`e` requirements.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub distribution: String,
    /// `sum_{v=2}^{50} p_v`
    pub mass: f64,
    pub mass_ok: bool,
    /// `sum_{v=2}^{50} v * p_v`
    pub mean: f64,
    pub mean_ok: bool,
    pub tails: Vec<TailCheck>,
    /// Largest `Pr(V >= v) - (e-2)/(v-2)` over `v` in `[3, 20]`, clamped at 0.
    pub max_bound_violation: f64,
    pub bound_ok: bool,
    pub p2: f64,
    pub p2_ok: bool,
    /// Mean of the (proper) sampler table.
    pub sampler_mean: f64,
    pub passed: bool,
    pub failures: Vec<String>,
}

pub fn validate_distribution(dist: BranchingDistribution) -> ValidationReport {
    let horizon = match dist {
        BranchingDistribution::Fixed(v) => v.max(VALIDATION_TERMS),
        _ => VALIDATION_TERMS,
    };
    let pmf: Vec<(u32, f64)> = (2..=horizon).map(|v| (v, dist.pmf(v))).collect();
    let mass: f64 = pmf.iter().map(|&(_, p)| p).sum();
    let mean: f64 = pmf.iter().map(|&(v, p)| f64::from(v) * p).sum();

    let mass_ok = match dist {
        BranchingDistribution::Fixed(_) => mass == 1.0,
        _ => (1.0 - 1e-10..=1.0).contains(&mass),
    };
    let mean_ok = (mean - E).abs() <= 1e-10;

    let tails: Vec<TailCheck> = (3..=20)
        .map(|v| TailCheck {
            v,
            tail: pmf.iter().filter(|&&(i, _)| i >= v).map(|&(_, p)| p).sum(),
            bound: (E - 2.0) / f64::from(v - 2),
        })
        .collect();
    let max_bound_violation = tails
        .iter()
        .map(|t| t.tail - t.bound)
        .fold(0.0_f64, f64::max);
    let bound_ok = max_bound_violation <= 1e-12;

    let p2 = dist.pmf(2);
    let p2_ok = p2 >= 3.0 - E;

    let mut failures = Vec::new();
    if !mass_ok {
        failures.push(format!("partial mass {mass} is outside [1 - 1e-10, 1]"));
    }
    if !mean_ok {
        failures.push(format!("partial mean {mean} differs from e by {:e}", (mean - E).abs()));
    }
    if !bound_ok {
        failures.push(format!(
            "tail bound (e-2)/(v-2) exceeded by up to {max_bound_violation:e}"
        ));
    }
    if !p2_ok {
        failures.push(format!("p_2 = {p2} is below 3 - e"));
    }

    ValidationReport {
        distribution: dist.to_string(),
        mass,
        mass_ok,
        mean,
        mean_ok,
        tails,
        max_bound_violation,
        bound_ok,
        p2,
        p2_ok,
        sampler_mean: dist.sampler().mean(),
        passed: failures.is_empty(),
        failures,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimalBranchingRow {
    pub area: f64,
    pub v_opt: f64,
    pub abs_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundRow {
    pub v: u32,
    pub bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TheoryReport {
    pub e: f64,
    pub tolerance: f64,
    pub optimal_branching: Vec<OptimalBranchingRow>,
    pub tail_bounds: Vec<BoundRow>,
    pub distributions: Vec<ValidationReport>,
    pub max_bound_violation: f64,
}

/// Runs every numeric check for a set of isolation areas and the three
/// mean-`e` laws (plus `Fixed(2)` as a negative control).
pub fn theory_report(areas: &[f64], tol: f64) -> Result<TheoryReport> {
    let optimal_branching = areas
        .iter()
        .map(|&area| {
            optimal_branching(area, tol).map(|v_opt| OptimalBranchingRow {
                area,
                v_opt,
                abs_error: (v_opt - E).abs(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let tail_bounds = (3..=20)
        .map(|v| tail_bound(v).map(|bound| BoundRow { v, bound }))
        .collect::<Result<Vec<_>>>()?;
    let distributions: Vec<ValidationReport> = [
        BranchingDistribution::Finite23,
        BranchingDistribution::Geometric,
        BranchingDistribution::Factorial,
        BranchingDistribution::Fixed(2),
    ]
    .into_iter()
    .map(validate_distribution)
    .collect();
    let max_bound_violation = distributions
        .iter()
        .map(|r| r.max_bound_violation)
        .fold(0.0, f64::max);
    Ok(TheoryReport {
        e: E,
        tolerance: tol,
        optimal_branching,
        tail_bounds,
        distributions,
        max_bound_violation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn efficiency_examples() {
        assert_relative_eq!(isolation_efficiency(2.0, 3.0).unwrap(), 8.0 / 6.0, max_relative = 1e-12);
        assert_relative_eq!(isolation_efficiency(3.0, 2.0).unwrap(), 1.5, max_relative = 1e-12);
        assert_relative_eq!(isolation_efficiency(2.0, 1.0).unwrap(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn efficiency_point_fields() {
        let p = EfficiencyPoint::new(2.5, 3.5).unwrap();
        assert_relative_eq!(p.psi, 2.5f64.powf(3.5), max_relative = 1e-12);
        assert_eq!(p.phi, 2.5 * 3.5);
        assert_relative_eq!(p.eta, p.psi / p.phi, max_relative = 1e-12);
    }

    #[test]
    fn efficiency_domain_errors() {
        assert!(matches!(isolation_efficiency(1.0, 2.0), Err(Error::Domain(_))));
        assert!(matches!(isolation_efficiency(2.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(isolation_efficiency(2.0, 1100.0), Err(Error::Overflow(_))));
        assert!(efficiency_at_fixed_area(0.5, 6.0).is_err());
        assert!(efficiency_derivative(2.0, -1.0).is_err());
    }

    #[test]
    fn fixed_area_examples() {
        let at_e = efficiency_at_fixed_area(E, 6.0).unwrap();
        assert_relative_eq!(at_e, (6.0 / E).exp() / 6.0, max_relative = 1e-12);
        assert!((at_e - 1.51515).abs() < 1e-5, "{at_e}");
        assert_relative_eq!(efficiency_at_fixed_area(2.0, 6.0).unwrap(), 8.0 / 6.0, max_relative = 1e-12);
        assert_relative_eq!(efficiency_at_fixed_area(6.0, 6.0).unwrap(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn derivative_signs() {
        assert!(efficiency_derivative(E, 6.0).unwrap().abs() < 1e-15);
        assert!(efficiency_derivative(2.0, 6.0).unwrap() > 0.0);
        assert!(efficiency_derivative(4.0, 6.0).unwrap() < 0.0);
    }

    #[test]
    fn derivative_agrees_in_sign_with_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for area in [2.0, 6.0, 20.0] {
            for _ in 0..100 {
                let v: f64 = rng.random_range(1.1..10.0);
                if (v - E).abs() < 1e-4 {
                    continue;
                }
                let h = 1e-6;
                let fd = (efficiency_at_fixed_area(v + h, area).unwrap()
                    - efficiency_at_fixed_area(v - h, area).unwrap())
                    / (2.0 * h);
                let d = efficiency_derivative(v, area).unwrap();
                assert_eq!(fd.signum(), d.signum(), "v={v} area={area} fd={fd} d={d}");
            }
        }
    }

    #[test]
    fn unimodal_around_e() {
        for area in [2.0, 6.0, 20.0] {
            let up: Vec<f64> = (0..)
                .map(|i| 1.1 + 0.01 * f64::from(i))
                .take_while(|&v| v <= E - 0.01)
                .map(|v| efficiency_at_fixed_area(v, area).unwrap())
                .collect();
            assert!(up.windows(2).all(|w| w[1] > w[0]), "area={area}");
            let down: Vec<f64> = (0..)
                .map(|i| E + 0.01 + 0.01 * f64::from(i))
                .take_while(|&v| v <= 10.0)
                .map(|v| efficiency_at_fixed_area(v, area).unwrap())
                .collect();
            assert!(down.windows(2).all(|w| w[1] < w[0]), "area={area}");
        }
    }

    #[test]
    fn optimal_branching_is_e_for_any_area() {
        for (area, tol) in [(6.0, 1e-6), (1.0, 1e-6), (100.0, 1e-4), (0.3, 1e-6), (5000.0, 1e-6)] {
            let v = optimal_branching(area, tol).unwrap();
            assert!((v - E).abs() <= tol, "area={area} v={v}");
        }
        assert!(optimal_branching(6.0, 0.5).is_err());
        assert!(optimal_branching(0.0, 1e-6).is_err());
    }

    #[test]
    fn tail_bound_values() {
        assert!((tail_bound(3).unwrap() - 0.718).abs() < 1e-3);
        assert!((tail_bound(4).unwrap() - 0.359).abs() < 1e-3);
        assert!((tail_bound(5).unwrap() - 0.239).abs() < 1e-3);
        assert!(tail_bound(2).is_err());
    }

    #[test]
    fn pmf_examples() {
        let f = BranchingDistribution::Finite23;
        assert_relative_eq!(f.pmf(2), 3.0 - E);
        assert_eq!(f.pmf(5), 0.0);
        assert_relative_eq!(BranchingDistribution::Factorial.pmf(3), 2.0 / 6.0, max_relative = 1e-15);
        assert_eq!(BranchingDistribution::Fixed(4).pmf(4), 1.0);
        assert_eq!(BranchingDistribution::Fixed(4).pmf(3), 0.0);
        assert_eq!(BranchingDistribution::Geometric.pmf(1), 0.0);
    }

    #[test]
    fn factorial_law_telescopes() {
        // sum_{v=2}^N (v-1)/v! = 1 - 1/N!, checked in exact integer arithmetic
        // by scaling everything by N!.
        for n in 2u32..=20 {
            let n_fact: u128 = (1..=u128::from(n)).product();
            let mut scaled = 0u128;
            for v in 2..=n {
                let v_fact: u128 = (1..=u128::from(v)).product();
                scaled += u128::from(v - 1) * (n_fact / v_fact);
            }
            assert_eq!(scaled, n_fact - 1, "N={n}");
        }
    }

    #[test]
    fn geometric_mass_exceeds_one() {
        let g = BranchingDistribution::Geometric;
        let mass: f64 = (2..=200).map(|v| g.pmf(v)).sum();
        assert_relative_eq!(mass, g.total_mass(), max_relative = 1e-13);
        assert!(mass > 1.05);
    }

    #[test]
    fn validation_reports() {
        let finite = validate_distribution(BranchingDistribution::Finite23);
        assert!(finite.passed, "{:?}", finite.failures);
        assert!((finite.mean - E).abs() < 4.0 * f64::EPSILON);

        let factorial = validate_distribution(BranchingDistribution::Factorial);
        assert!(factorial.passed, "{:?}", factorial.failures);

        let geometric = validate_distribution(BranchingDistribution::Geometric);
        assert!(geometric.mean_ok && geometric.bound_ok && geometric.p2_ok);
        assert!(!geometric.mass_ok);
        assert!(!geometric.passed);

        let fixed2 = validate_distribution(BranchingDistribution::Fixed(2));
        assert_eq!(fixed2.mean, 2.0);
        assert!(!fixed2.mean_ok);
        assert!(fixed2.failures.iter().any(|f| f.contains("mean")));
        assert!(fixed2.mass_ok);
    }

    #[test]
    fn sampler_tables_are_proper() {
        for dist in [
            BranchingDistribution::Finite23,
            BranchingDistribution::Geometric,
            BranchingDistribution::Factorial,
            BranchingDistribution::Fixed(5),
            BranchingDistribution::Fixed(100),
        ] {
            let s = dist.sampler();
            assert_eq!(*s.cumulative.last().unwrap(), 1.0);
            assert!(s.cumulative.windows(2).all(|w| w[1] >= w[0]));
            assert!(*s.values.last().unwrap() <= SAMPLER_HORIZON.max(dist.max_support().unwrap_or(0)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(BranchingDistribution::Fixed(2).sample(&mut rng), 2);
        assert_relative_eq!(BranchingDistribution::Factorial.sampler().mean(), E, max_relative = 1e-11);
    }

    #[test]
    fn sampler_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = BranchingDistribution::Finite23.sampler();
        let n = 200_000;
        let mean = (0..n).map(|_| f64::from(s.sample(&mut rng))).sum::<f64>() / f64::from(n);
        assert!((mean - E).abs() < 0.01, "{mean}");

        let g = BranchingDistribution::Geometric.sampler();
        let ge4 = (0..n).filter(|_| g.sample(&mut rng) >= 4).count() as f64 / f64::from(n);
        assert!(ge4 <= 0.3591 + 0.005, "{ge4}");
    }

    #[test]
    fn parse_distribution() {
        assert_eq!("finite23".parse::<BranchingDistribution>().unwrap(), BranchingDistribution::Finite23);
        assert_eq!("fixed:8".parse::<BranchingDistribution>().unwrap(), BranchingDistribution::Fixed(8));
        assert!("fixed:1".parse::<BranchingDistribution>().is_err());
        assert!("poisson".parse::<BranchingDistribution>().is_err());
        for d in [BranchingDistribution::Geometric, BranchingDistribution::Fixed(3)] {
            assert_eq!(d.to_string().parse::<BranchingDistribution>().unwrap(), d);
        }
    }

    #[test]
    fn curve_peaks_at_e() {
        let curve = efficiency_curve(6.0, 1.1, 10.0, 0.01).unwrap();
        let (v_peak, _) = curve
            .iter()
            .copied()
            .fold((0.0, f64::MIN), |acc, p| if p.1 > acc.1 { p } else { acc });
        assert!((v_peak - E).abs() < 0.01, "{v_peak}");
    }
}
