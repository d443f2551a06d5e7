//! Dirac combs, empirical marginals and bounded continuous observables.

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Configuration;

pub type Weight = Ratio<i64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmpiricalError {
    #[error("invalid order {order} for N = {n}")]
    InvalidOrder { order: usize, n: usize },
    #[error("order mismatch: comb has order {comb}, observable expects {observable}")]
    OrderMismatch { comb: usize, observable: usize },
    #[error("malformed comb: {0}")]
    Malformed(String),
}

/// One weighted point of `R^{6j}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub point: Vec<f64>,
    pub weight: Weight,
}

/// A finite weighted sum of Dirac masses in the phase space of `order`
/// particles.
#[derive(Debug, Clone, PartialEq)]
pub struct DiracComb {
    pub order: usize,
    pub atoms: Vec<Atom>,
}

#[derive(Serialize, Deserialize)]
struct AtomRecord {
    point: Vec<f64>,
    weight_num: i64,
    weight_den: i64,
}

#[derive(Serialize, Deserialize)]
struct CombRecord {
    order: usize,
    atoms: Vec<AtomRecord>,
}

impl Serialize for DiracComb {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        CombRecord {
            order: self.order,
            atoms: self
                .atoms
                .iter()
                .map(|a| AtomRecord {
                    point: a.point.clone(),
                    weight_num: *a.weight.numer(),
                    weight_den: *a.weight.denom(),
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for DiracComb {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = CombRecord::deserialize(d)?;
        let mut atoms = Vec::with_capacity(r.atoms.len());
        for a in r.atoms {
            if a.weight_den == 0 {
                return Err(serde::de::Error::custom("zero weight denominator"));
            }
            if a.point.len() != 6 * r.order {
                return Err(serde::de::Error::custom(format!(
                    "atom dimension {} does not match order {}",
                    a.point.len(),
                    r.order
                )));
            }
            atoms.push(Atom {
                point: a.point,
                weight: Ratio::new(a.weight_num, a.weight_den),
            });
        }
        Ok(DiracComb {
            order: r.order,
            atoms,
        })
    }
}

impl DiracComb {
    pub fn total_weight(&self) -> Weight {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    pub fn is_probability(&self) -> bool {
        self.total_weight() == Ratio::from_integer(1) && self.atoms.iter().all(|a| a.weight >= Ratio::from_integer(0))
    }

    /// Image of the comb under a point map (weights unchanged).
    pub fn pushforward(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> DiracComb {
        DiracComb {
            order: self.order,
            atoms: self
                .atoms
                .iter()
                .map(|a| Atom {
                    point: f(&a.point),
                    weight: a.weight,
                })
                .collect(),
        }
    }

    /// Merges atoms whose points agree within `tol` (max-abs), summing
    /// weights, and drops atoms of zero total weight. Atom order follows
    /// first occurrence.
    pub fn merged(&self, tol: f64) -> DiracComb {
        let mut out: Vec<Atom> = Vec::new();
        for a in &self.atoms {
            match out.iter_mut().find(|b| max_abs_diff(&b.point, &a.point) <= tol) {
                Some(b) => b.weight += a.weight,
                None => out.push(a.clone()),
            }
        }
        out.retain(|a| *a.weight.numer() != 0);
        DiracComb {
            order: self.order,
            atoms: out,
        }
    }

    /// Integrates out the last particle slot.
    pub fn drop_last_slot(&self) -> DiracComb {
        DiracComb {
            order: self.order - 1,
            atoms: self
                .atoms
                .iter()
                .map(|a| Atom {
                    point: a.point[..6 * (self.order - 1)].to_vec(),
                    weight: a.weight,
                })
                .collect(),
        }
        .merged(0.0)
    }

    /// Same atoms and weights up to ordering and point tolerance `tol`.
    pub fn same_measure(&self, other: &DiracComb, tol: f64) -> bool {
        if self.order != other.order {
            return false;
        }
        let a = self.merged(tol);
        let b = other.merged(tol);
        a.atoms.len() == b.atoms.len()
            && a.atoms.iter().all(|x| {
                b.atoms
                    .iter()
                    .any(|y| x.weight == y.weight && max_abs_diff(&x.point, &y.point) <= tol)
            })
    }
}

pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `N (N-1) ... (N-j+1)`.
pub fn falling_factorial(n: usize, j: usize) -> i64 {
    (0..j).map(|i| n as i64 - i as i64).product()
}

/// All ordered `j`-tuples of distinct labels from `0..n`, lexicographic.
pub fn injections(n: usize, j: usize) -> Vec<Vec<usize>> {
    fn rec(n: usize, j: usize, cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == j {
            out.push(cur.clone());
            return;
        }
        for i in 0..n {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                rec(n, j, cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    if j <= n {
        rec(n, j, &mut Vec::with_capacity(j), &mut vec![false; n], &mut out);
    }
    out
}

/// All `j`-tuples of labels from `0..n` (repetitions allowed), lexicographic.
pub fn tuples(n: usize, j: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::with_capacity(j)];
    for _ in 0..j {
        out = out
            .into_iter()
            .flat_map(|t| {
                (0..n).map(move |i| {
                    let mut t = t.clone();
                    t.push(i);
                    t
                })
            })
            .collect();
    }
    out
}

fn tuple_point(config: &Configuration, labels: &[usize]) -> Vec<f64> {
    labels
        .iter()
        .flat_map(|&i| config.particles[i].coords())
        .collect()
}

/// `mu_N = (1/N) sum_i delta(z - z_i)`.
pub fn empirical_measure(config: &Configuration) -> DiracComb {
    let n = config.len() as i64;
    DiracComb {
        order: 1,
        atoms: config
            .particles
            .iter()
            .map(|p| Atom {
                point: p.coords().to_vec(),
                weight: Ratio::new(1, n),
            })
            .collect(),
    }
}

/// Empirical marginal of order `j`: one atom per ordered injection, each of
/// weight `1 / (N (N-1) ... (N-j+1))`.
pub fn marginal(config: &Configuration, j: usize) -> Result<DiracComb, EmpiricalError> {
    let n = config.len();
    if j == 0 || j > n {
        return Err(EmpiricalError::InvalidOrder { order: j, n });
    }
    let w = Ratio::new(1, falling_factorial(n, j));
    Ok(DiracComb {
        order: j,
        atoms: injections(n, j)
            .iter()
            .map(|labels| Atom {
                point: tuple_point(config, labels),
                weight: w,
            })
            .collect(),
    })
}

/// `mu_N^{(x) j}`, contractions included.
pub fn tensor_power(config: &Configuration, j: usize) -> DiracComb {
    let n = config.len();
    let w = Ratio::new(1, (n as i64).pow(j as u32));
    DiracComb {
        order: j,
        atoms: tuples(n, j)
            .iter()
            .map(|labels| Atom {
                point: tuple_point(config, labels),
                weight: w,
            })
            .collect(),
    }
}

/// A bounded continuous test function on `R^{6j}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Observable {
    /// `exp(-|dx|^2 / 2 wx^2 - |dv|^2 / 2 wv^2)` around `center`.
    GaussianPacket {
        center: Vec<f64>,
        width_x: f64,
        width_v: f64,
    },
    /// `(1 - |p - c|^2 / R^2)^2` inside the ball of radius `R`, zero outside.
    PolynomialCutoff { center: Vec<f64>, radius: f64 },
    /// Smooth logistic window on one coordinate of the phase point.
    CoordinateWindow {
        coordinate: usize,
        lo: f64,
        hi: f64,
        softness: f64,
    },
    Constant { value: f64 },
}

impl Observable {
    /// Default isotropic packet (width 0.1 in both blocks).
    pub fn gaussian(center: Vec<f64>) -> Self {
        Observable::GaussianPacket {
            center,
            width_x: 0.1,
            width_v: 0.1,
        }
    }

    pub fn one() -> Self {
        Observable::Constant { value: 1.0 }
    }

    /// Number of particle slots the observable is tied to, if any.
    pub fn order(&self) -> Option<usize> {
        match self {
            Observable::GaussianPacket { center, .. } | Observable::PolynomialCutoff { center, .. } => {
                Some(center.len() / 6)
            }
            Observable::CoordinateWindow { .. } | Observable::Constant { .. } => None,
        }
    }

    pub fn eval(&self, p: &[f64]) -> f64 {
        match self {
            Observable::GaussianPacket {
                center,
                width_x,
                width_v,
            } => {
                let mut e = 0.0;
                for (i, (a, c)) in p.iter().zip(center).enumerate() {
                    let w = if i % 6 < 3 { width_x } else { width_v };
                    e += (a - c) * (a - c) / (2.0 * w * w);
                }
                (-e).exp()
            }
            Observable::PolynomialCutoff { center, radius } => {
                let r2: f64 = p.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
                let u = 1.0 - r2 / (radius * radius);
                if u > 0.0 {
                    u * u
                } else {
                    0.0
                }
            }
            Observable::CoordinateWindow {
                coordinate,
                lo,
                hi,
                softness,
            } => {
                let c = p[*coordinate];
                let s = |z: f64| 1.0 / (1.0 + (-z).exp());
                s((c - lo) / softness) * s((hi - c) / softness)
            }
            Observable::Constant { value } => *value,
        }
    }

    /// Observable with particle slots permuted: slot `s` of the result reads
    /// slot `perm[s]` of the original center.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let permute = |c: &Vec<f64>| -> Vec<f64> {
            perm.iter().flat_map(|&s| c[6 * s..6 * s + 6].to_vec()).collect()
        };
        match self {
            Observable::GaussianPacket {
                center,
                width_x,
                width_v,
            } => Observable::GaussianPacket {
                center: permute(center),
                width_x: *width_x,
                width_v: *width_v,
            },
            Observable::PolynomialCutoff { center, radius } => Observable::PolynomialCutoff {
                center: permute(center),
                radius: *radius,
            },
            other => other.clone(),
        }
    }
}

/// `sum_a weight_a phi(point_a)`.
pub fn integrate(comb: &DiracComb, phi: &Observable) -> Result<f64, EmpiricalError> {
    if let Some(o) = phi.order() {
        if o != comb.order {
            return Err(EmpiricalError::OrderMismatch {
                comb: comb.order,
                observable: o,
            });
        }
    }
    Ok(comb
        .atoms
        .iter()
        .map(|a| ratio_f64(a.weight) * phi.eval(&a.point))
        .sum())
}

pub fn ratio_f64(r: Weight) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// `| int Delta_j phi - N^j / (N)_j int mu_N^{(x)j} phi |`.
pub fn tensor_identity_residual(
    config: &Configuration,
    j: usize,
    phi: &Observable,
) -> Result<f64, EmpiricalError> {
    let lhs = integrate(&marginal(config, j)?, phi)?;
    let n = config.len();
    let factor = (n as f64).powi(j as i32) / falling_factorial(n, j) as f64;
    let rhs = factor * integrate(&tensor_power(config, j), phi)?;
    Ok((lhs - rhs).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{ParticleState, Vec3};

    fn config(n: usize) -> Configuration {
        let ps = (0..n)
            .map(|i| {
                let f = i as f64;
                ParticleState::new(Vec3::new(3.0 * f, 0.5 * f, -f), Vec3::new(0.1 * f, 1.0, -0.3 * f))
            })
            .collect();
        Configuration::new(ps, 1.0, false).unwrap()
    }

    #[test]
    fn single_particle_measure() {
        let m = empirical_measure(&config(1));
        assert_eq!(m.atoms.len(), 1);
        assert_eq!(m.atoms[0].weight, Ratio::from_integer(1));
    }

    #[test]
    fn coincident_atoms_sum_to_one() {
        let p = ParticleState::new(Vec3::ZERO, Vec3::new(1., 0., 0.));
        let c = Configuration::new(vec![p, p], 1.0, true).unwrap();
        let m = empirical_measure(&c);
        assert_eq!(m.atoms.len(), 2);
        assert_eq!(m.total_weight(), Ratio::from_integer(1));
        assert_eq!(m.merged(0.0).atoms.len(), 1);
    }

    #[test]
    fn normalization() {
        let m = empirical_measure(&config(4));
        assert!((integrate(&m, &Observable::one()).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn marginal_atom_counts() {
        let m = marginal(&config(2), 2).unwrap();
        assert_eq!(m.atoms.len(), 2);
        assert!(m.atoms.iter().all(|a| a.weight == Ratio::new(1, 2)));
        let m = marginal(&config(3), 2).unwrap();
        assert_eq!(m.atoms.len(), 6);
        assert!(m.atoms.iter().all(|a| a.weight == Ratio::new(1, 6)));
        assert!(m.is_probability());
    }

    #[test]
    fn marginal_order_too_large() {
        assert_eq!(
            marginal(&config(2), 3).unwrap_err(),
            EmpiricalError::InvalidOrder { order: 3, n: 2 }
        );
    }

    #[test]
    fn gaussian_peak_at_atom() {
        let c = config(1);
        let m = empirical_measure(&c);
        let phi = Observable::gaussian(c.particles[0].coords().to_vec());
        assert_eq!(integrate(&m, &phi).unwrap(), 1.0);
    }

    #[test]
    fn order_mismatch_rejected() {
        let m = empirical_measure(&config(2));
        let phi = Observable::gaussian(vec![0.0; 12]);
        assert!(matches!(
            integrate(&m, &phi),
            Err(EmpiricalError::OrderMismatch { .. })
        ));
    }

    #[test]
    fn tensor_identity_trivial_for_first_order() {
        let c = config(3);
        let phi = Observable::gaussian(c.particles[1].coords().to_vec());
        assert_eq!(tensor_identity_residual(&c, 1, &phi).unwrap(), 0.0);
    }

    #[test]
    fn comb_json_round_trip() {
        let m = marginal(&config(3), 2).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        assert!(s.contains("weight_num") && s.contains("weight_den"));
        let back: DiracComb = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn injections_and_tuples_counts() {
        assert_eq!(injections(3, 2).len(), 6);
        assert_eq!(injections(4, 0), vec![Vec::<usize>::new()]);
        assert_eq!(tuples(3, 2).len(), 9);
        assert_eq!(injections(3, 2)[0], vec![0, 1]);
    }
}
