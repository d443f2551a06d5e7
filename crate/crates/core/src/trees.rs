//! Collision trees, sign vectors, node variables and the combinatorial
//! prefactors of the hierarchical series.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("progenitor k_{r} = {k} outside 1..={max}")]
    ProgenitorOutOfRange { r: usize, k: usize, max: usize },
    #[error("root count must be at least 1")]
    NoRoots,
    #[error("cannot parse tree literal {0:?}: {1}")]
    Parse(String, String),
    #[error("sign vector length {signs} does not match tree size {nodes}")]
    LengthMismatch { signs: usize, nodes: usize },
    #[error("invalid node variables: {0}")]
    InvalidNodes(String),
}

/// An `n`-collision, `j`-particle tree: node `r` (1-based) creates particle
/// `j + r` from progenitor `k_r` in `1..=j+r-1`. Labels are 1-based as in
/// the tree literal syntax.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Tree {
    pub j: usize,
    pub progenitors: Vec<usize>,
}

impl Tree {
    pub fn new(j: usize, progenitors: Vec<usize>) -> Result<Self, TreeError> {
        if j == 0 {
            return Err(TreeError::NoRoots);
        }
        for (r0, &k) in progenitors.iter().enumerate() {
            let max = j + r0;
            if k == 0 || k > max {
                return Err(TreeError::ProgenitorOutOfRange { r: r0 + 1, k, max });
            }
        }
        Ok(Self { j, progenitors })
    }

    pub fn empty(j: usize) -> Self {
        Self {
            j,
            progenitors: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.progenitors.len()
    }

    /// Zero-based progenitor of the particle created at node `r` (1-based).
    pub fn progenitor0(&self, r: usize) -> usize {
        self.progenitors[r - 1] - 1
    }

    /// Zero-based label of the particle created at node `r` (1-based).
    pub fn created0(&self, r: usize) -> usize {
        self.j + r - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> i64 {
        match self {
            Sign::Plus => 1,
            Sign::Minus => -1,
        }
    }

    pub fn of(b: f64) -> Sign {
        if b >= 0.0 {
            Sign::Plus
        } else {
            Sign::Minus
        }
    }

    pub fn flipped(self) -> Sign {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SignVector(pub Vec<Sign>);

impl SignVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `prod_r sigma_r` as `+1` / `-1`.
    pub fn product(&self) -> i64 {
        self.0.iter().map(|s| s.value()).product()
    }

    /// Sign of node `r` (1-based).
    pub fn at(&self, r: usize) -> Sign {
        self.0[r - 1]
    }
}

impl fmt::Display for SignVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.0 {
            f.write_str(match s {
                Sign::Plus => "+",
                Sign::Minus => "-",
            })?;
        }
        Ok(())
    }
}

/// Literal form `j=2;k=1,2,1,3,2;s=++-+-` of a tree with its sign vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeLiteral {
    pub tree: Tree,
    pub signs: SignVector,
}

impl fmt::Display for TreeLiteral {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ks: Vec<String> = self.tree.progenitors.iter().map(|k| k.to_string()).collect();
        write!(f, "j={};k={};s={}", self.tree.j, ks.join(","), self.signs)
    }
}

impl FromStr for TreeLiteral {
    type Err = TreeError;

    fn from_str(s: &str) -> Result<Self, TreeError> {
        let bad = |why: &str| TreeError::Parse(s.to_string(), why.to_string());
        let mut j = None;
        let mut ks = None;
        let mut signs = None;
        for part in s.trim().split(';') {
            let (key, val) = part.split_once('=').ok_or_else(|| bad("expected key=value"))?;
            match key.trim() {
                "j" => j = Some(val.trim().parse::<usize>().map_err(|e| bad(&e.to_string()))?),
                "k" => {
                    let v = val.trim();
                    ks = Some(if v.is_empty() {
                        Vec::new()
                    } else {
                        v.split(',')
                            .map(|x| x.trim().parse::<usize>().map_err(|e| bad(&e.to_string())))
                            .collect::<Result<Vec<_>, _>>()?
                    });
                }
                "s" => {
                    signs = Some(
                        val.trim()
                            .chars()
                            .map(|c| match c {
                                '+' => Ok(Sign::Plus),
                                '-' | '\u{2212}' => Ok(Sign::Minus),
                                _ => Err(bad("signs must be + or -")),
                            })
                            .collect::<Result<Vec<_>, _>>()?,
                    )
                }
                other => return Err(bad(&format!("unknown key {other:?}"))),
            }
        }
        let tree = Tree::new(j.ok_or_else(|| bad("missing j"))?, ks.unwrap_or_default())?;
        let signs = SignVector(signs.unwrap_or_default());
        if signs.len() != tree.n() {
            return Err(TreeError::LengthMismatch {
                signs: signs.len(),
                nodes: tree.n(),
            });
        }
        Ok(TreeLiteral { tree, signs })
    }
}

/// Times, impact directions and velocities labelling the creations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeVariables {
    /// `t_1 > t_2 > ... > t_n`.
    pub times: Vec<f64>,
    pub omegas: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
}

impl NodeVariables {
    pub fn empty() -> Self {
        Self {
            times: Vec::new(),
            omegas: Vec::new(),
            velocities: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.times.len()
    }

    /// Checks lengths, strict ordering inside `(0, t)` and unit omegas.
    pub fn validate(&self, t: f64) -> Result<(), TreeError> {
        let n = self.times.len();
        if self.omegas.len() != n || self.velocities.len() != n {
            return Err(TreeError::InvalidNodes("length mismatch".into()));
        }
        let mut prev = t;
        for (r, &tr) in self.times.iter().enumerate() {
            if !(tr < prev && tr > 0.0) {
                return Err(TreeError::InvalidNodes(format!(
                    "t_{} = {tr} breaks t > t_1 > ... > t_n > 0",
                    r + 1
                )));
            }
            prev = tr;
        }
        for (r, w) in self.omegas.iter().enumerate() {
            if (w.norm() - 1.0).abs() > 1e-9 {
                return Err(TreeError::InvalidNodes(format!("omega_{} is not a unit vector", r + 1)));
            }
        }
        Ok(())
    }
}

/// Every tree `Gamma(j, n)`, in lexicographic order of `(k_1, ..., k_n)`.
pub fn enumerate_trees(j: usize, n: usize) -> Vec<Tree> {
    let mut out = vec![Vec::with_capacity(n)];
    for r in 1..=n {
        out = out
            .into_iter()
            .flat_map(|ks: Vec<usize>| {
                (1..=j + r - 1).map(move |k| {
                    let mut ks = ks.clone();
                    ks.push(k);
                    ks
                })
            })
            .collect();
    }
    out.into_iter()
        .map(|progenitors| Tree { j, progenitors })
        .collect()
}

/// `j (j+1) ... (j+n-1)`.
pub fn tree_count(j: usize, n: usize) -> BigUint {
    (0..n).fold(BigUint::from(1u32), |acc, r| acc * BigUint::from(j + r))
}

/// `alpha(r, n) = r (r-1) ... (r-n+1) epsilon^{2n}`; zero when `n > r`.
pub fn alpha(r: usize, n: usize, epsilon: f64) -> f64 {
    if n > r {
        return 0.0;
    }
    (0..n).map(|i| (r - i) as f64).product::<f64>() * epsilon.powi(2 * n as i32)
}

/// All `2^n` sign vectors, `+` before `-` in each position.
pub fn enumerate_signs(n: usize) -> Vec<SignVector> {
    (0..1usize << n)
        .map(|bits| {
            SignVector(
                (0..n)
                    .map(|r| {
                        if bits >> (n - 1 - r) & 1 == 0 {
                            Sign::Plus
                        } else {
                            Sign::Minus
                        }
                    })
                    .collect(),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_tree() {
        assert_eq!(enumerate_trees(1, 0), vec![Tree::empty(1)]);
        assert_eq!(tree_count(1, 0), BigUint::from(1u32));
    }

    #[test]
    fn small_enumeration() {
        let ts = enumerate_trees(1, 2);
        assert_eq!(ts.len(), 2);
        assert_eq!(ts[0].progenitors, vec![1, 1]);
        assert_eq!(ts[1].progenitors, vec![1, 2]);
        assert_eq!(tree_count(1, 2), BigUint::from(2u32));
    }

    #[test]
    fn figure_tree_is_enumerated() {
        let ts = enumerate_trees(2, 5);
        assert!(ts.contains(&Tree::new(2, vec![1, 2, 1, 3, 2]).unwrap()));
        assert_eq!(ts.len(), 720);
        assert_eq!(tree_count(2, 5), BigUint::from(720u32));
    }

    #[test]
    fn alpha_values() {
        assert_eq!(alpha(5, 0, 0.3), 1.0);
        assert!((alpha(2, 2, 0.1) - 2e-4).abs() < 1e-18);
        assert_eq!(alpha(1, 2, 0.1), 0.0);
    }

    #[test]
    fn sign_enumeration() {
        assert_eq!(enumerate_signs(0), vec![SignVector(vec![])]);
        assert_eq!(
            enumerate_signs(1),
            vec![SignVector(vec![Sign::Plus]), SignVector(vec![Sign::Minus])]
        );
        assert_eq!(enumerate_signs(3).len(), 8);
    }

    #[test]
    fn out_of_range_progenitor() {
        assert_eq!(
            Tree::new(1, vec![2]).unwrap_err(),
            TreeError::ProgenitorOutOfRange { r: 1, k: 2, max: 1 }
        );
    }

    #[test]
    fn literal_round_trip() {
        let lit: TreeLiteral = "j=2;k=1,2,1,3,2;s=++\u{2212}+\u{2212}".parse().unwrap();
        assert_eq!(lit.tree.progenitors, vec![1, 2, 1, 3, 2]);
        assert_eq!(lit.signs.product(), 1);
        assert_eq!(lit.to_string(), "j=2;k=1,2,1,3,2;s=++-+-");
        assert_eq!(lit.to_string().parse::<TreeLiteral>().unwrap(), lit);
        let empty: TreeLiteral = "j=1;k=;s=".parse().unwrap();
        assert_eq!(empty.tree, Tree::empty(1));
    }

    #[test]
    fn literal_length_mismatch() {
        assert!(matches!(
            "j=1;k=1;s=++".parse::<TreeLiteral>(),
            Err(TreeError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn node_ordering_enforced() {
        let nv = NodeVariables {
            times: vec![0.5, 0.7],
            omegas: vec![Vec3::new(1., 0., 0.); 2],
            velocities: vec![Vec3::ZERO; 2],
        };
        assert!(nv.validate(1.0).is_err());
    }
}
