//! Geometric primitives shared by every other module: 3-vectors, particle
//! states, configurations, the elastic collision rule and contact prediction.

use std::ops::{Add, AddAssign, Index, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on `|omega| - 1` accepted by [`scatter`].
pub const UNIT_TOL: f64 = 1e-12;

/// Relative tolerance below which a normal relative speed counts as grazing.
pub const GRAZING_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("particles {0} and {1} overlap (gap {2:e})")]
    Overlap(usize, usize, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vec3(pub [f64; 3]);

impl Vec3 {
    pub const ZERO: Vec3 = Vec3([0.0; 3]);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3([x, y, z])
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.0[0] * o.0[0] + self.0[1] * o.0[1] + self.0[2] * o.0[2]
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        let [a, b, c] = self.0;
        let [d, e, f] = o.0;
        Vec3([b * f - c * e, c * d - a * f, a * e - b * d])
    }

    pub fn norm2(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm2().sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        self * (1.0 / self.norm())
    }

    pub fn is_finite(self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }

    pub fn max_abs_diff(self, o: Vec3) -> f64 {
        (0..3).map(|i| (self.0[i] - o.0[i]).abs()).fold(0.0, f64::max)
    }

    /// Two unit vectors completing `self` (assumed unit) to an orthonormal
    /// frame. The helper axis is the coordinate axis of smallest |component|,
    /// so the frame is a deterministic function of the input.
    pub fn tangent_frame(self) -> (Vec3, Vec3) {
        let a = self.0.map(f64::abs);
        let axis = if a[0] <= a[1] && a[0] <= a[2] {
            Vec3::new(1.0, 0.0, 0.0)
        } else if a[1] <= a[2] {
            Vec3::new(0.0, 1.0, 0.0)
        } else {
            Vec3::new(0.0, 0.0, 1.0)
        };
        let e1 = (axis - self * self.dot(axis)).normalized();
        let e2 = self.cross(e1);
        (e1, e2)
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3(self.0.map(|c| c * s))
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3(self.0.map(|c| -c))
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl SubAssign for Vec3 {
    fn sub_assign(&mut self, o: Vec3) {
        *self = *self - o;
    }
}

impl Index<usize> for Vec3 {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Position and velocity of one sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParticleState {
    #[serde(rename = "x")]
    pub position: Vec3,
    #[serde(rename = "v")]
    pub velocity: Vec3,
}

impl ParticleState {
    pub fn new(position: Vec3, velocity: Vec3) -> Self {
        Self { position, velocity }
    }

    /// State after free flight for time `s` (negative `s` runs backwards).
    pub fn advanced(&self, s: f64) -> Self {
        Self::new(self.position + self.velocity * s, self.velocity)
    }

    pub fn reversed(&self) -> Self {
        Self::new(self.position, -self.velocity)
    }

    pub fn is_finite(&self) -> bool {
        self.position.is_finite() && self.velocity.is_finite()
    }

    /// The six phase-space coordinates `(x1, x2, x3, v1, v2, v3)`.
    pub fn coords(&self) -> [f64; 6] {
        let [a, b, c] = self.position.0;
        let [d, e, f] = self.velocity.0;
        [a, b, c, d, e, f]
    }

    pub fn from_coords(c: &[f64]) -> Self {
        Self::new(Vec3::new(c[0], c[1], c[2]), Vec3::new(c[3], c[4], c[5]))
    }

    pub fn max_abs_diff(&self, o: &ParticleState) -> f64 {
        self.position
            .max_abs_diff(o.position)
            .max(self.velocity.max_abs_diff(o.velocity))
    }
}

/// An ordered list of spheres of common diameter `epsilon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    pub particles: Vec<ParticleState>,
    pub epsilon: f64,
    #[serde(default)]
    pub allow_overlap: bool,
}

impl Configuration {
    /// Builds a configuration, checking finiteness, `epsilon > 0`, `N >= 1`
    /// and (unless `allow_overlap`) pairwise non-overlap.
    pub fn new(
        particles: Vec<ParticleState>,
        epsilon: f64,
        allow_overlap: bool,
    ) -> Result<Self, GeometryError> {
        let c = Self {
            particles,
            epsilon,
            allow_overlap,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(GeometryError::InvalidInput(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.particles.is_empty() {
            return Err(GeometryError::InvalidInput("empty configuration".into()));
        }
        if let Some(i) = self.particles.iter().position(|p| !p.is_finite()) {
            return Err(GeometryError::InvalidInput(format!(
                "particle {i} has non-finite components"
            )));
        }
        if !self.allow_overlap {
            if let Some((i, k, gap)) = self.closest_pair() {
                // exact contact (gap == 0) is a member of the closed phase space
                if gap < -1e-12 * self.epsilon {
                    return Err(GeometryError::Overlap(i, k, gap));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Pair with the smallest surface gap `|x_i - x_k| - epsilon`.
    pub fn closest_pair(&self) -> Option<(usize, usize, f64)> {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..self.len() {
            for k in i + 1..self.len() {
                let gap = (self.particles[i].position - self.particles[k].position).norm()
                    - self.epsilon;
                if best.is_none_or(|b| gap < b.2) {
                    best = Some((i, k, gap));
                }
            }
        }
        best
    }

    pub fn total_momentum(&self) -> Vec3 {
        self.particles
            .iter()
            .fold(Vec3::ZERO, |acc, p| acc + p.velocity)
    }

    pub fn kinetic_energy(&self) -> f64 {
        0.5 * self.particles.iter().map(|p| p.velocity.norm2()).sum::<f64>()
    }

    /// Time-reversal: every velocity negated.
    pub fn reversed(&self) -> Self {
        Self {
            particles: self.particles.iter().map(ParticleState::reversed).collect(),
            ..self.clone()
        }
    }

    pub fn subset(&self, labels: &[usize]) -> Self {
        Self {
            particles: labels.iter().map(|&i| self.particles[i]).collect(),
            ..self.clone()
        }
    }

    pub fn max_abs_diff(&self, o: &Configuration) -> f64 {
        self.particles
            .iter()
            .zip(&o.particles)
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max)
    }
}

/// Contact data for a pair `(i, k)` touching at distance `epsilon`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactGeometry {
    pub pair: (usize, usize),
    /// `(x_i - x_k) / epsilon`.
    pub omega: Vec3,
    /// `omega . (v_i - v_k)`; negative while approaching.
    pub approach_rate: f64,
}

impl ContactGeometry {
    pub fn from_states(
        pair: (usize, usize),
        a: &ParticleState,
        b: &ParticleState,
    ) -> Self {
        let omega = (a.position - b.position).normalized();
        Self {
            pair,
            omega,
            approach_rate: collision_kernel(omega, a.velocity - b.velocity),
        }
    }

    pub fn is_grazing(&self, relative_speed: f64) -> bool {
        is_grazing(self.approach_rate, relative_speed)
    }
}

/// `|omega . V| < GRAZING_TOL (1 + |V|)`.
pub fn is_grazing(normal_rate: f64, relative_speed: f64) -> bool {
    normal_rate.abs() < GRAZING_TOL * (1.0 + relative_speed)
}

fn check_unit(omega: Vec3) -> Result<(), GeometryError> {
    let n = omega.norm();
    if !n.is_finite() || (n - 1.0).abs() > UNIT_TOL.max(1e-9) {
        return Err(GeometryError::InvalidInput(format!(
            "omega must be a unit vector, |omega| = {n}"
        )));
    }
    Ok(())
}

/// Elastic reflection of the pair `(v_i, v_k)` about `omega`.
pub fn scatter(v_i: Vec3, v_k: Vec3, omega: Vec3) -> Result<(Vec3, Vec3), GeometryError> {
    check_unit(omega)?;
    Ok(scatter_unchecked(v_i, v_k, omega))
}

#[inline]
pub(crate) fn scatter_unchecked(v_i: Vec3, v_k: Vec3, omega: Vec3) -> (Vec3, Vec3) {
    let dn = omega * omega.dot(v_i - v_k);
    (v_i - dn, v_k + dn)
}

/// `B(omega; V) = omega . V`.
pub fn collision_kernel(omega: Vec3, v: Vec3) -> f64 {
    omega.dot(v)
}

/// Earliest `s >= 0` at which free flight brings `a` and `b` to distance
/// `epsilon` while approaching. Touching-and-approaching pairs return
/// `Some(0.0)`. Overlapping pairs are an error.
pub fn contact_time(
    a: &ParticleState,
    b: &ParticleState,
    epsilon: f64,
) -> Result<Option<f64>, GeometryError> {
    let dx = a.position - b.position;
    if dx.norm() < epsilon * (1.0 - 1e-12) {
        return Err(GeometryError::Overlap(0, 1, dx.norm() - epsilon));
    }
    Ok(entering_root(dx, a.velocity - b.velocity, epsilon))
}

/// Smallest root of `|dx + dv s| = epsilon` reached from outside with
/// `dx . dv < 0`, clamped at zero. Uses the cancellation-free form
/// `s = c / (-b + sqrt(b^2 - a c))`.
pub(crate) fn entering_root(dx: Vec3, dv: Vec3, epsilon: f64) -> Option<f64> {
    let b = dx.dot(dv);
    if b >= 0.0 {
        return None;
    }
    let a = dv.norm2();
    let c = (dx.norm2() - epsilon * epsilon).max(0.0);
    let disc = b * b - a * c;
    if disc < 0.0 {
        return None;
    }
    Some(c / (-b + disc.sqrt()))
}

/// Both crossing times of `|dx + dv s| = epsilon` on the whole real line,
/// or `None` when the straight lines never come within `epsilon`.
pub(crate) fn crossing_times(dx: Vec3, dv: Vec3, epsilon: f64) -> Option<(f64, f64)> {
    let a = dv.norm2();
    if a == 0.0 {
        return None;
    }
    let b = dx.dot(dv);
    let c = dx.norm2() - epsilon * epsilon;
    let disc = b * b - a * c;
    if disc <= 0.0 {
        return None;
    }
    let q = -(b + b.signum() * disc.sqrt());
    let (r1, r2) = if q == 0.0 {
        let s = (disc.sqrt()) / a;
        (-s, s)
    } else {
        (q / a, c / q)
    };
    Some((r1.min(r2), r1.max(r2)))
}

/// `min_{i<k} |x_i - x_k| - epsilon`.
pub fn min_gap(config: &Configuration) -> f64 {
    config
        .closest_pair()
        .map(|(_, _, g)| g)
        .unwrap_or(f64::INFINITY)
}
