//! Cancellative Haar shifts.
//!
//! A shift is a finite list of terms `(Q, R, S, α)` with `R ∈ D_r(Q)`,
//! `S ∈ D_s(Q)`, acting by `f ↦ Σ α ⟨f, h_R⟩ h_S`. Application happens in the
//! Haar domain: one analysis pass, a sparse coefficient map, one synthesis.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dyadic::{DyadicTree, NodeId};
use crate::error::{Error, Result};
use crate::martingale::{analyze, synthesize, HaarSpectrum, StepFunction};
use crate::measure::MeasureTree;

/// Complexity `(r, s)`: inputs are read `r` generations below `Q`, outputs
/// are written `s` generations below it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftShape {
    pub r: usize,
    pub s: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftTerm {
    #[serde(rename = "Q")]
    pub q: NodeId,
    #[serde(rename = "R")]
    pub r: NodeId,
    #[serde(rename = "S")]
    pub s: NodeId,
    pub alpha: f64,
}

/// Sparse Haar-domain matrix: `(output node S, input node R) → coefficient`.
pub type HaarMatrix = BTreeMap<(NodeId, NodeId), f64>;

pub trait HaarShift {
    fn depth(&self) -> usize;

    /// `(S, R, α)` triples after truncation, in a fixed order.
    fn for_each_term(&self, visit: &mut dyn FnMut(NodeId, NodeId, f64));

    /// Output spectrum of the shift; the output mean is always zero.
    fn apply_spectrum(&self, input: &HaarSpectrum) -> HaarSpectrum {
        assert_eq!(input.depth(), self.depth(), "spectrum depth does not match shift");
        let mut out = HaarSpectrum::zeros(self.depth());
        let coeffs = out.coeffs_mut();
        let source = input.coeffs();
        self.for_each_term(&mut |s, r, alpha| {
            coeffs[s.heap_index()] += alpha * source[r.heap_index()];
        });
        out
    }

    fn apply(&self, f: &StepFunction, mu: &MeasureTree) -> StepFunction {
        synthesize(&self.apply_spectrum(&analyze(f, mu)), mu)
    }

    fn haar_matrix(&self) -> HaarMatrix {
        let mut matrix = HaarMatrix::new();
        self.for_each_term(&mut |s, r, alpha| {
            *matrix.entry((s, r)).or_insert(0.0) += alpha;
        });
        matrix.retain(|_, v| *v != 0.0);
        matrix
    }

    fn to_general(&self) -> GeneralShift;

    fn adjoint(&self) -> GeneralShift {
        self.to_general().adjoint()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneralShift {
    depth: usize,
    shape: ShiftShape,
    terms: Vec<ShiftTerm>,
    dropped: usize,
}

fn check_coefficient(alpha: f64) -> Result<()> {
    if alpha.is_finite() && alpha.abs() <= 1.0 {
        Ok(())
    } else {
        Err(Error::MalformedTerm(format!(
            "coefficient {alpha} violates |alpha| <= 1"
        )))
    }
}

impl GeneralShift {
    /// Validates every term and drops those whose `R` or `S` is a leaf;
    /// see [`GeneralShift::dropped`].
    pub fn new(tree: &DyadicTree, shape: ShiftShape, terms: Vec<ShiftTerm>) -> Result<Self> {
        let mut kept = Vec::with_capacity(terms.len());
        let mut dropped = 0;
        for term in terms {
            for node in [term.q, term.r, term.s] {
                if !tree.contains(node) {
                    return Err(Error::MalformedTerm(format!(
                        "node {node} outside a tree of depth {}",
                        tree.depth()
                    )));
                }
            }
            if term.r.level != term.q.level + shape.r || !term.r.is_within(term.q) {
                return Err(Error::MalformedTerm(format!(
                    "R = {} is not in D_{}({})",
                    term.r, shape.r, term.q
                )));
            }
            if term.s.level != term.q.level + shape.s || !term.s.is_within(term.q) {
                return Err(Error::MalformedTerm(format!(
                    "S = {} is not in D_{}({})",
                    term.s, shape.s, term.q
                )));
            }
            check_coefficient(term.alpha)?;
            if tree.is_leaf(term.r) || tree.is_leaf(term.s) {
                dropped += 1;
            } else {
                kept.push(term);
            }
        }
        Ok(GeneralShift {
            depth: tree.depth(),
            shape,
            terms: kept,
            dropped,
        })
    }

    pub fn zero(tree: &DyadicTree, shape: ShiftShape) -> Self {
        GeneralShift {
            depth: tree.depth(),
            shape,
            terms: Vec::new(),
            dropped: 0,
        }
    }

    /// The dyadic Hilbert transform `h_I ↦ h_{I_-} − h_{I_+}`.
    pub fn petermichl(tree: &DyadicTree) -> Result<Self> {
        if tree.depth() < 2 {
            return Err(Error::DepthTooSmall {
                depth: tree.depth(),
                min: 2,
            });
        }
        let mut terms = Vec::new();
        for q in tree.internal_nodes().filter(|q| q.level + 2 <= tree.depth()) {
            let (left, right) = tree.children(q)?;
            terms.push(ShiftTerm {
                q,
                r: q,
                s: left,
                alpha: 1.0,
            });
            terms.push(ShiftTerm {
                q,
                r: q,
                s: right,
                alpha: -1.0,
            });
        }
        GeneralShift::new(tree, ShiftShape { r: 0, s: 1 }, terms)
    }

    pub fn shape(&self) -> ShiftShape {
        self.shape
    }

    pub fn terms(&self) -> &[ShiftTerm] {
        &self.terms
    }

    /// Terms removed at construction because `R` or `S` was a leaf.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn max_coefficient(&self) -> f64 {
        self.terms.iter().fold(0.0, |acc, t| acc.max(t.alpha.abs()))
    }
}

impl HaarShift for GeneralShift {
    fn depth(&self) -> usize {
        self.depth
    }

    fn for_each_term(&self, visit: &mut dyn FnMut(NodeId, NodeId, f64)) {
        for t in &self.terms {
            visit(t.s, t.r, t.alpha);
        }
    }

    fn to_general(&self) -> GeneralShift {
        self.clone()
    }

    fn adjoint(&self) -> GeneralShift {
        GeneralShift {
            depth: self.depth,
            shape: ShiftShape {
                r: self.shape.s,
                s: self.shape.r,
            },
            terms: self
                .terms
                .iter()
                .map(|t| ShiftTerm {
                    q: t.q,
                    r: t.s,
                    s: t.r,
                    alpha: t.alpha,
                })
                .collect(),
            dropped: self.dropped,
        }
    }
}

/// `T f = Σ_I α_I ⟨f, h_{I_m^s}⟩ h_{I_n^t}` with `sup |α_I| ≤ 1`; absent keys
/// mean `α_I = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct CanonicalShift {
    depth: usize,
    m: usize,
    s_sel: usize,
    n: usize,
    t_sel: usize,
    alphas: BTreeMap<NodeId, f64>,
    dropped: usize,
}

impl CanonicalShift {
    pub fn new(
        tree: &DyadicTree,
        (m, s_sel): (usize, usize),
        (n, t_sel): (usize, usize),
        alphas: BTreeMap<NodeId, f64>,
    ) -> Result<Self> {
        if m >= usize::BITS as usize || s_sel >= 1usize << m {
            return Err(Error::InvalidParameter(format!(
                "selector s = {s_sel} out of range [0, 2^{m})"
            )));
        }
        if n >= usize::BITS as usize || t_sel >= 1usize << n {
            return Err(Error::InvalidParameter(format!(
                "selector t = {t_sel} out of range [0, 2^{n})"
            )));
        }
        let reach = m.max(n);
        let mut kept = BTreeMap::new();
        let mut dropped = 0;
        for (node, alpha) in alphas {
            if !tree.contains(node) {
                return Err(Error::MalformedTerm(format!(
                    "node {node} outside a tree of depth {}",
                    tree.depth()
                )));
            }
            check_coefficient(alpha)?;
            if node.level + reach < tree.depth() {
                kept.insert(node, alpha);
            } else {
                dropped += 1;
            }
        }
        Ok(CanonicalShift {
            depth: tree.depth(),
            m,
            s_sel,
            n,
            t_sel,
            alphas: kept,
            dropped,
        })
    }

    /// Coefficients on every node where the shift is defined, given by `sign`.
    pub fn filled(
        tree: &DyadicTree,
        read: (usize, usize),
        write: (usize, usize),
        sign: impl Fn(NodeId) -> f64,
    ) -> Result<Self> {
        let reach = read.0.max(write.0);
        let alphas = tree
            .internal_nodes()
            .filter(|node| node.level + reach < tree.depth())
            .map(|node| (node, sign(node)))
            .collect();
        Self::new(tree, read, write, alphas)
    }

    pub fn read_selector(&self) -> (usize, usize) {
        (self.m, self.s_sel)
    }

    pub fn write_selector(&self) -> (usize, usize) {
        (self.n, self.t_sel)
    }

    pub fn alphas(&self) -> &BTreeMap<NodeId, f64> {
        &self.alphas
    }

    pub fn dropped(&self) -> usize {
        self.dropped
    }

    #[inline]
    fn select(node: NodeId, generations: usize, selector: usize) -> NodeId {
        NodeId {
            level: node.level + generations,
            index: (node.index << generations) + selector,
        }
    }
}

impl HaarShift for CanonicalShift {
    fn depth(&self) -> usize {
        self.depth
    }

    fn for_each_term(&self, visit: &mut dyn FnMut(NodeId, NodeId, f64)) {
        for (&node, &alpha) in &self.alphas {
            visit(
                Self::select(node, self.n, self.t_sel),
                Self::select(node, self.m, self.s_sel),
                alpha,
            );
        }
    }

    fn to_general(&self) -> GeneralShift {
        GeneralShift {
            depth: self.depth,
            shape: ShiftShape {
                r: self.m,
                s: self.n,
            },
            terms: self
                .alphas
                .iter()
                .map(|(&q, &alpha)| ShiftTerm {
                    q,
                    r: Self::select(q, self.m, self.s_sel),
                    s: Self::select(q, self.n, self.t_sel),
                    alpha,
                })
                .collect(),
            dropped: self.dropped,
        }
    }
}

/// Either representation, as read from a shift file.
#[derive(Clone, Debug, PartialEq)]
pub enum Shift {
    General(GeneralShift),
    Canonical(CanonicalShift),
}

impl HaarShift for Shift {
    fn depth(&self) -> usize {
        match self {
            Shift::General(t) => t.depth(),
            Shift::Canonical(t) => t.depth(),
        }
    }

    fn for_each_term(&self, visit: &mut dyn FnMut(NodeId, NodeId, f64)) {
        match self {
            Shift::General(t) => t.for_each_term(visit),
            Shift::Canonical(t) => t.for_each_term(visit),
        }
    }

    fn to_general(&self) -> GeneralShift {
        match self {
            Shift::General(t) => t.clone(),
            Shift::Canonical(t) => t.to_general(),
        }
    }
}

impl From<GeneralShift> for Shift {
    fn from(t: GeneralShift) -> Self {
        Shift::General(t)
    }
}

impl From<CanonicalShift> for Shift {
    fn from(t: CanonicalShift) -> Self {
        Shift::Canonical(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::martingale::haar_function;
    use crate::measure::Generator;
    use crate::seeded_rng;
    use rand::Rng;

    fn n(level: usize, index: usize) -> NodeId {
        NodeId::new(level, index).unwrap()
    }

    fn random_measure(depth: usize, seed: u64) -> MeasureTree {
        Generator::RandomDoubling {
            p_min: 0.05,
            p_max: 0.95,
        }
        .generate(depth, seed)
        .unwrap()
    }

    fn random_function(depth: usize, seed: u64) -> StepFunction {
        let mut rng = seeded_rng(seed, 7);
        StepFunction::new(depth, (0..1 << depth).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap()
    }

    fn random_shift(tree: &DyadicTree, r: usize, s: usize, seed: u64) -> GeneralShift {
        let mut rng = seeded_rng(seed, 3);
        let mut terms = Vec::new();
        for q in tree.internal_nodes() {
            if q.level + r.max(s) >= tree.depth() {
                continue;
            }
            for _ in 0..2 {
                terms.push(ShiftTerm {
                    q,
                    r: tree.selector(q, r, rng.random_range(0..1 << r)).unwrap(),
                    s: tree.selector(q, s, rng.random_range(0..1 << s)).unwrap(),
                    alpha: rng.random_range(-1.0..1.0),
                });
            }
        }
        GeneralShift::new(tree, ShiftShape { r, s }, terms).unwrap()
    }

    #[test]
    fn petermichl_on_haar_function() {
        let mu = random_measure(5, 1);
        let t = GeneralShift::petermichl(mu.tree()).unwrap();
        assert_eq!(t.shape(), ShiftShape { r: 0, s: 1 });
        for node in mu.tree().internal_nodes().filter(|q| q.level + 2 <= 5) {
            let (a, b) = mu.tree().children(node).unwrap();
            let out = t.apply(&haar_function(&mu, node).unwrap(), &mu);
            let expected = &haar_function(&mu, a).unwrap() - &haar_function(&mu, b).unwrap();
            assert!((&out - &expected).max_abs() <= 1e-12 * expected.max_abs());
        }
        let constant = t.apply(&StepFunction::constant(5, 4.0), &mu);
        assert!(constant.max_abs() < 1e-12);
        assert!(GeneralShift::petermichl(&DyadicTree::new(1).unwrap()).is_err());
    }

    #[test]
    fn petermichl_spectrum() {
        let tree = DyadicTree::new(4).unwrap();
        let t = GeneralShift::petermichl(&tree).unwrap();
        let mut spec = HaarSpectrum::zeros(4);
        spec.set(n(1, 1), 2.5);
        let out = t.apply_spectrum(&spec);
        let nonzero: Vec<_> = out.nonzero().collect();
        assert_eq!(nonzero, vec![(n(2, 2), 2.5), (n(2, 3), -2.5)]);
    }

    #[test]
    fn identity_like_and_zero_shifts() {
        let mu = random_measure(3, 2);
        let single = GeneralShift::new(
            mu.tree(),
            ShiftShape { r: 0, s: 0 },
            vec![ShiftTerm {
                q: NodeId::ROOT,
                r: NodeId::ROOT,
                s: NodeId::ROOT,
                alpha: 1.0,
            }],
        )
        .unwrap();
        let h = haar_function(&mu, NodeId::ROOT).unwrap();
        assert!((&single.apply(&h, &mu) - &h).max_abs() < 1e-13);

        let zero = CanonicalShift::filled(mu.tree(), (1, 0), (0, 0), |_| 0.0).unwrap();
        assert_eq!(zero.apply(&random_function(3, 2), &mu), StepFunction::zeros(3));
        assert!(zero.haar_matrix().is_empty());
        assert!(GeneralShift::zero(mu.tree(), ShiftShape { r: 1, s: 1 }).haar_matrix().is_empty());
    }

    #[test]
    fn malformed_terms_rejected() {
        let tree = DyadicTree::new(4).unwrap();
        let term = |q, r, s, alpha| ShiftTerm { q, r, s, alpha };
        let shape = ShiftShape { r: 1, s: 0 };
        // R not a child of Q
        assert!(GeneralShift::new(&tree, shape, vec![term(n(1, 0), n(2, 2), n(1, 0), 1.0)]).is_err());
        // wrong generation
        assert!(GeneralShift::new(&tree, shape, vec![term(n(1, 0), n(3, 0), n(1, 0), 1.0)]).is_err());
        // coefficient too large
        assert!(GeneralShift::new(&tree, shape, vec![term(n(1, 0), n(2, 1), n(1, 0), 1.5)]).is_err());
        // outside the tree
        assert!(GeneralShift::new(&tree, shape, vec![term(n(4, 0), n(5, 0), n(4, 0), 1.0)]).is_err());
        // leaf R is dropped, not rejected
        let t = GeneralShift::new(
            &tree,
            shape,
            vec![term(n(3, 0), n(4, 1), n(3, 0), 1.0), term(n(2, 0), n(3, 1), n(2, 0), 0.5)],
        )
        .unwrap();
        assert_eq!(t.dropped(), 1);
        assert_eq!(t.terms().len(), 1);
        assert!(CanonicalShift::new(&tree, (1, 2), (0, 0), BTreeMap::new()).is_err());
    }

    #[test]
    fn adjoint_examples() {
        let mu = random_measure(5, 4);
        let t = GeneralShift::petermichl(mu.tree()).unwrap();
        assert_eq!(t.adjoint().adjoint(), t);
        let node = n(1, 0);
        let (left, _) = mu.tree().children(node).unwrap();
        let out = t.adjoint().apply(&haar_function(&mu, left).unwrap(), &mu);
        let h = haar_function(&mu, node).unwrap();
        assert!((&out - &h).max_abs() <= 1e-12 * h.max_abs());
    }

    #[test]
    fn duality_pairing() {
        for seed in 0..20 {
            let depth = 3 + seed as usize % 6;
            let mu = random_measure(depth, seed);
            let t = random_shift(mu.tree(), seed as usize % 3, (seed as usize / 3) % 3, seed);
            let f = random_function(depth, seed);
            let g = random_function(depth, seed + 100);
            let lhs = t.apply(&f, &mu).inner(&g, &mu);
            let rhs = f.inner(&t.adjoint().apply(&g, &mu), &mu);
            assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn linearity() {
        let mu = random_measure(6, 9);
        let t = random_shift(mu.tree(), 1, 2, 9);
        let f = random_function(6, 1);
        let g = random_function(6, 2);
        let mut combo = f.scaled(0.3);
        combo.add_scaled(-1.7, &g);
        let mut expected = t.apply(&f, &mu).scaled(0.3);
        expected.add_scaled(-1.7, &t.apply(&g, &mu));
        assert!((&t.apply(&combo, &mu) - &expected).max_abs() <= 1e-9 * (1.0 + expected.max_abs()));
    }

    #[test]
    fn haar_matrix_examples() {
        let tree = DyadicTree::new(2).unwrap();
        let matrix = GeneralShift::petermichl(&tree).unwrap().haar_matrix();
        assert_eq!(matrix.len(), 2);
        assert_eq!(matrix[&(n(1, 0), NodeId::ROOT)], 1.0);
        assert_eq!(matrix[&(n(1, 1), NodeId::ROOT)], -1.0);

        let mu = random_measure(6, 12);
        let t = random_shift(mu.tree(), 2, 1, 12);
        let matrix = t.haar_matrix();
        let input = analyze(&random_function(6, 12), &mu);
        let mut out = HaarSpectrum::zeros(6);
        for (&(s, r), &v) in &matrix {
            let current = out.get(s);
            out.set(s, current + v * input.get(r));
        }
        let direct = t.apply_spectrum(&input);
        for (a, b) in out.coeffs().iter().zip(direct.coeffs()) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn canonical_embeds_losslessly() {
        let mu = random_measure(7, 5);
        for (read, write) in [((0, 0), (1, 0)), ((2, 3), (1, 1)), ((1, 0), (2, 2)), ((0, 0), (0, 0))] {
            let t = CanonicalShift::filled(mu.tree(), read, write, |q| {
                if (q.level + q.index) % 2 == 0 {
                    1.0
                } else {
                    -0.5
                }
            })
            .unwrap();
            let f = random_function(7, 5);
            let direct = t.apply(&f, &mu);
            let general = t.to_general();
            assert_eq!(general.shape(), ShiftShape { r: read.0, s: write.0 });
            let via = general.apply(&f, &mu);
            assert!((&direct - &via).max_abs() <= 1e-12 * (1.0 + direct.max_abs()));
        }
    }

    #[test]
    fn selector_matches_descendant_enumeration() {
        let tree = DyadicTree::new(6).unwrap();
        let t = CanonicalShift::filled(&tree, (2, 1), (1, 1), |_| 1.0).unwrap();
        for term in t.to_general().terms() {
            assert_eq!(tree.descendants(term.q, 2).unwrap()[1], term.r);
            assert_eq!(tree.descendants(term.q, 1).unwrap()[1], term.s);
        }
    }
}
