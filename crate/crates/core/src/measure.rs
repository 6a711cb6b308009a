//! Positive measures on a dyadic tree, given by leaf masses, and the balance
//! diagnostics built on top of them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dyadic::{children_unchecked, DyadicTree, NodeId};
use crate::error::{Error, Result};
use crate::martingale::haar_norms;
use crate::seeded_rng;

#[derive(Clone, Debug, PartialEq)]
pub struct MeasureTree {
    tree: DyadicTree,
    /// Aggregated masses in heap order; the last `2^D` entries are the leaves.
    masses: Vec<f64>,
}

impl MeasureTree {
    pub fn from_leaf_masses(tree: DyadicTree, leaf_masses: Vec<f64>) -> Result<Self> {
        if leaf_masses.len() != tree.leaf_count() {
            return Err(Error::LengthMismatch {
                expected: tree.leaf_count(),
                got: leaf_masses.len(),
            });
        }
        if let Some((index, &value)) = leaf_masses
            .iter()
            .enumerate()
            .find(|(_, m)| !(m.is_finite() && **m > 0.0))
        {
            return Err(Error::NonPositiveMass { index, value });
        }
        let first_leaf = tree.internal_count();
        let mut masses = vec![0.0; tree.node_count()];
        masses[first_leaf..].copy_from_slice(&leaf_masses);
        for heap in (0..first_leaf).rev() {
            masses[heap] = masses[2 * heap + 1] + masses[2 * heap + 2];
        }
        Ok(MeasureTree { tree, masses })
    }

    pub fn lebesgue(tree: DyadicTree) -> Self {
        let n = tree.leaf_count();
        let masses = vec![tree.length() / n as f64; n];
        MeasureTree::from_leaf_masses(tree, masses).expect("lebesgue masses are positive")
    }

    pub fn tree(&self) -> &DyadicTree {
        &self.tree
    }

    pub fn depth(&self) -> usize {
        self.tree.depth()
    }

    pub fn leaf_count(&self) -> usize {
        self.tree.leaf_count()
    }

    pub fn leaf_masses(&self) -> &[f64] {
        &self.masses[self.tree.internal_count()..]
    }

    /// Heap-ordered masses of every node.
    pub fn node_masses(&self) -> &[f64] {
        &self.masses
    }

    #[inline]
    pub fn mass(&self, node: NodeId) -> f64 {
        self.masses[node.heap_index()]
    }

    pub fn total_mass(&self) -> f64 {
        self.masses[0]
    }

    /// `m(I) = min(μ(I_-), μ(I_+))`.
    pub fn min_child_mass(&self, node: NodeId) -> Result<f64> {
        let (a, b) = self.tree.children(node)?;
        Ok(self.mass(a).min(self.mass(b)))
    }

    #[inline]
    pub(crate) fn min_child_mass_unchecked(&self, node: NodeId) -> f64 {
        let heap = node.heap_index();
        self.masses[2 * heap + 1].min(self.masses[2 * heap + 2])
    }

    /// Largest parent-to-child mass ratio `μ(Î)/μ(I)`; bounded iff the
    /// measure is dyadically doubling.
    pub fn doubling_ratio(&self) -> f64 {
        (1..self.masses.len())
            .map(|heap| self.masses[(heap - 1) / 2] / self.masses[heap])
            .fold(1.0, f64::max)
    }

    /// The balanced constant `B(μ)` (parent/child comparability of `m`) and
    /// the Haar-norm form of the same condition.
    pub fn balance_report(&self) -> Result<BalanceReport> {
        let depth = self.depth();
        if depth < 2 {
            return Err(Error::DepthTooSmall { depth, min: 2 });
        }
        let mut best = (1.0, NodeId::ROOT);
        let mut bal = (0.0, NodeId::ROOT);
        for parent in self.tree.internal_nodes() {
            if parent.level + 1 >= depth {
                continue;
            }
            let parent_min = self.min_child_mass_unchecked(parent);
            let parent_norms = haar_norms(self, parent);
            let (left, right) = children_unchecked(parent);
            for child in [left, right] {
                let child_min = self.min_child_mass_unchecked(child);
                let ratio = (child_min / parent_min).max(parent_min / child_min);
                if ratio > best.0 {
                    best = (ratio, child);
                }
                let child_norms = haar_norms(self, child);
                let term = parent_norms.l1 * child_norms.linf + parent_norms.linf * child_norms.l1;
                if term > bal.0 {
                    bal = (term, parent);
                }
            }
        }
        Ok(BalanceReport {
            balanced_constant: best.0,
            bal_form_constant: bal.0,
            argmax_node: best.1,
            bal_form_argmax: bal.1,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BalanceReport {
    /// `max max(m(I)/m(Î), m(Î)/m(I))` over non-root internal `I`.
    pub balanced_constant: f64,
    /// `max ‖h_Q‖₁‖h_R‖_∞ + ‖h_Q‖_∞‖h_R‖₁` over internal `Q` and internal children `R`.
    pub bal_form_constant: f64,
    /// Child node `I` attaining the balanced constant.
    pub argmax_node: NodeId,
    /// Parent node `Q` attaining the Haar-norm form.
    pub bal_form_argmax: NodeId,
}

impl BalanceReport {
    /// `√B ≤ bal_form ≤ 4√B`, from `c_I² ∈ [m(I)/2, m(I)]`.
    pub fn sandwich_holds(&self) -> bool {
        let root = self.balanced_constant.sqrt();
        let slack = 1e-12 * self.bal_form_constant;
        root <= self.bal_form_constant + slack && self.bal_form_constant <= 4.0 * root + slack
    }
}

/// Named families of measures used by the experiments. All presets have
/// total mass 1 except `Spine`, whose root mass is its parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    Lebesgue,
    /// Independent split fractions drawn uniformly from `[p_min, p_max]`.
    RandomDoubling { p_min: f64, p_max: f64 },
    /// The leftmost node at level `k` sends fraction `q^(k+1)` of its mass to
    /// its left child; everything else splits evenly.
    GeometricUnbalanced { q: f64 },
    /// Each node on the rightmost branch gives mass exactly 1 to its left
    /// child; off-spine subtrees split evenly. Balanced, not doubling.
    Spine {
        #[serde(rename = "M")]
        total_mass: f64,
    },
}

/// Which root-to-leaf branch carries the interesting geometry of a family.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Leftmost,
    Rightmost,
}

impl Branch {
    pub fn node_at(self, level: usize) -> NodeId {
        match self {
            Branch::Leftmost => NodeId { level, index: 0 },
            Branch::Rightmost => NodeId {
                level,
                index: (1usize << level) - 1,
            },
        }
    }
}

impl Generator {
    pub fn label(&self) -> String {
        match *self {
            Generator::Lebesgue => "lebesgue".to_string(),
            Generator::RandomDoubling { p_min, p_max } => {
                format!("random_doubling(p_min={p_min},p_max={p_max})")
            }
            Generator::GeometricUnbalanced { q } => format!("geometric_unbalanced(q={q})"),
            Generator::Spine { total_mass } => format!("spine(M={total_mass})"),
        }
    }

    pub fn distinguished_branch(&self) -> Branch {
        match self {
            Generator::Spine { .. } => Branch::Rightmost,
            _ => Branch::Leftmost,
        }
    }

    pub fn validate(&self, depth: usize) -> Result<()> {
        if depth < 2 {
            return Err(Error::DepthTooSmall { depth, min: 2 });
        }
        let open_unit = |x: f64| x > 0.0 && x < 1.0;
        match *self {
            Generator::Lebesgue => Ok(()),
            Generator::RandomDoubling { p_min, p_max } => {
                if open_unit(p_min) && open_unit(p_max) && p_min <= p_max {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!(
                        "random_doubling needs 0 < p_min <= p_max < 1, got [{p_min}, {p_max}]"
                    )))
                }
            }
            Generator::GeometricUnbalanced { q } => {
                if open_unit(q) {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!(
                        "geometric_unbalanced needs 0 < q < 1, got {q}"
                    )))
                }
            }
            Generator::Spine { total_mass } => {
                if total_mass.is_finite() && total_mass > (depth + 1) as f64 {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!(
                        "spine needs M > depth + 1 = {}, got {total_mass}",
                        depth + 1
                    )))
                }
            }
        }
    }

    /// Deterministic in `(self, depth, seed)`; only `RandomDoubling` consumes
    /// randomness.
    pub fn generate(&self, depth: usize, seed: u64) -> Result<MeasureTree> {
        self.validate(depth)?;
        let tree = DyadicTree::new(depth)?;
        let mut masses = vec![0.0; tree.node_count()];
        masses[0] = match *self {
            Generator::Spine { total_mass } => total_mass,
            _ => 1.0,
        };
        let mut rng = seeded_rng(seed, 0);
        for node in tree.internal_nodes() {
            let heap = node.heap_index();
            let mass = masses[heap];
            let left = match *self {
                Generator::Lebesgue => 0.5 * mass,
                Generator::RandomDoubling { p_min, p_max } => {
                    let p = if p_min == p_max {
                        p_min
                    } else {
                        rng.random_range(p_min..=p_max)
                    };
                    p * mass
                }
                Generator::GeometricUnbalanced { q } => {
                    if node.index == 0 {
                        q.powi(node.level as i32 + 1) * mass
                    } else {
                        0.5 * mass
                    }
                }
                Generator::Spine { .. } => {
                    if node.index + 1 == 1usize << node.level {
                        1.0
                    } else {
                        0.5 * mass
                    }
                }
            };
            masses[2 * heap + 1] = left;
            masses[2 * heap + 2] = mass - left;
        }
        let leaves = masses.split_off(tree.internal_count());
        MeasureTree::from_leaf_masses(tree, leaves)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn from_leaves(leaves: &[f64]) -> MeasureTree {
        let depth = leaves.len().trailing_zeros() as usize;
        MeasureTree::from_leaf_masses(DyadicTree::new(depth).unwrap(), leaves.to_vec()).unwrap()
    }

    fn n(level: usize, index: usize) -> NodeId {
        NodeId::new(level, index).unwrap()
    }

    /// Independent oracle: direct enumeration over all (parent, child) pairs
    /// using leaf sums only.
    fn balanced_constant_oracle(mu: &MeasureTree) -> f64 {
        let t = mu.tree();
        let leaf_sum = |node: NodeId| -> f64 { t.leaf_range(node).map(|i| mu.leaf_masses()[i]).sum() };
        let m = |node: NodeId| -> f64 {
            let (a, b) = t.children(node).unwrap();
            leaf_sum(a).min(leaf_sum(b))
        };
        let mut best: f64 = 1.0;
        for node in t.nodes() {
            if node.level == 0 || t.is_leaf(node) {
                continue;
            }
            let parent = t.parent(node).unwrap();
            best = best.max(m(node) / m(parent)).max(m(parent) / m(node));
        }
        best
    }

    #[test]
    fn mass_examples() {
        let t = DyadicTree::new(3).unwrap();
        let leb = MeasureTree::lebesgue(t);
        assert_eq!(leb.mass(n(1, 0)), 0.5);
        let mu = from_leaves(&[1.0, 3.0]);
        assert_eq!(mu.mass(NodeId::ROOT), 4.0);
        assert_eq!(mu.mass(n(1, 1)), 3.0);
    }

    #[test]
    fn min_child_mass_examples() {
        assert_eq!(from_leaves(&[1.0, 3.0]).min_child_mass(NodeId::ROOT).unwrap(), 1.0);
        assert_eq!(
            from_leaves(&[2.0, 2.0, 1.0, 7.0]).min_child_mass(n(1, 1)).unwrap(),
            1.0
        );
        let leb = MeasureTree::lebesgue(DyadicTree::new(4).unwrap());
        for node in leb.tree().internal_nodes() {
            let expected = 0.5f64.powi(node.level as i32 + 1);
            assert_eq!(leb.min_child_mass(node).unwrap(), expected);
        }
        assert!(matches!(
            from_leaves(&[1.0, 3.0]).min_child_mass(n(1, 0)),
            Err(Error::LeafHasNoChildren(_))
        ));
    }

    #[test]
    fn rejects_bad_masses() {
        let t = DyadicTree::new(1).unwrap();
        assert!(matches!(
            MeasureTree::from_leaf_masses(t, vec![1.0, 0.0]),
            Err(Error::NonPositiveMass { index: 1, .. })
        ));
        assert!(MeasureTree::from_leaf_masses(t, vec![1.0, -2.0]).is_err());
        assert!(MeasureTree::from_leaf_masses(t, vec![1.0, f64::NAN]).is_err());
        assert!(matches!(
            MeasureTree::from_leaf_masses(t, vec![1.0]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn balanced_constant_examples() {
        for depth in 2..8 {
            let leb = MeasureTree::lebesgue(DyadicTree::new(depth).unwrap());
            let report = leb.balance_report().unwrap();
            assert!((report.balanced_constant - 2.0).abs() < 1e-12);
            assert!((balanced_constant_oracle(&leb) - 2.0).abs() < 1e-12);
        }
        let quarter = Generator::RandomDoubling {
            p_min: 0.25,
            p_max: 0.25,
        }
        .generate(6, 0)
        .unwrap();
        let report = quarter.balance_report().unwrap();
        assert!((report.balanced_constant - 4.0).abs() < 1e-9);
        assert!((balanced_constant_oracle(&quarter) - 4.0).abs() < 1e-9);
        let flat = from_leaves(&[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(flat.balance_report().unwrap().balanced_constant, 2.0);
        assert!(matches!(
            from_leaves(&[1.0, 1.0]).balance_report(),
            Err(Error::DepthTooSmall { .. })
        ));
    }

    #[test]
    fn generator_presets() {
        let leb = Generator::Lebesgue.generate(3, 0).unwrap();
        assert!(leb.leaf_masses().iter().all(|&m| m == 0.125));
        assert_eq!(leb.total_mass(), 1.0);

        let mut previous = 0.0;
        for depth in 3..10 {
            let mu = Generator::GeometricUnbalanced { q: 0.5 }
                .generate(depth, 0)
                .unwrap();
            let b = mu.balance_report().unwrap().balanced_constant;
            assert!((b - balanced_constant_oracle(&mu)).abs() <= 1e-9 * b);
            assert!(b > previous, "B must grow with depth: {b} after {previous}");
            previous = b;
        }

        let spine = Generator::Spine { total_mass: 100.0 }.generate(8, 1).unwrap();
        let b = spine.balance_report().unwrap().balanced_constant;
        assert!(b <= 2.0 + 1e-12, "spine B = {b}");
        assert!((b - balanced_constant_oracle(&spine)).abs() < 1e-12);
        assert!(spine.doubling_ratio() >= 100.0 - 8.0);
        assert_eq!(spine.mass(n(1, 0)), 1.0);
    }

    #[test]
    fn generator_errors() {
        assert!(Generator::RandomDoubling { p_min: 0.0, p_max: 0.5 }
            .generate(4, 0)
            .is_err());
        assert!(Generator::RandomDoubling { p_min: 0.6, p_max: 0.4 }
            .generate(4, 0)
            .is_err());
        assert!(Generator::GeometricUnbalanced { q: 1.0 }.generate(4, 0).is_err());
        assert!(Generator::Spine { total_mass: 5.0 }.generate(4, 0).is_err());
        assert!(Generator::Spine { total_mass: 5.5 }.generate(4, 0).is_ok());
        assert!(Generator::Lebesgue.generate(1, 0).is_err());
    }

    #[test]
    fn generator_is_deterministic() {
        let g = Generator::RandomDoubling {
            p_min: 0.1,
            p_max: 0.9,
        };
        let a = g.generate(9, 42).unwrap();
        let b = g.generate(9, 42).unwrap();
        let c = g.generate(9, 43).unwrap();
        let bits = |mu: &MeasureTree| mu.leaf_masses().iter().map(|m| m.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn additivity_and_sandwich_on_random_measures() {
        for seed in 0..60 {
            let mu = Generator::RandomDoubling {
                p_min: 0.02,
                p_max: 0.98,
            }
            .generate(2 + (seed as usize % 8), seed)
            .unwrap();
            for node in mu.tree().internal_nodes() {
                let (a, b) = mu.tree().children(node).unwrap();
                let sum = mu.mass(a) + mu.mass(b);
                assert!((mu.mass(node) - sum).abs() <= 1e-12 * mu.mass(node));
            }
            let report = mu.balance_report().unwrap();
            assert!(report.sandwich_holds(), "{report:?}");
            assert!(report.balanced_constant >= 1.0 && report.bal_form_constant >= 1.0);
        }
    }
}
