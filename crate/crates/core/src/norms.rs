//! Function-space norms on step functions and the atomic-block machinery.
//!
//! Every supremum over nodes is evaluated exhaustively. Oscillation-type norms
//! are accumulated level by level in `O(2^D (D + 1))`. Wherever a parent
//! average `⟨f⟩_{Q̂}` is needed at the root, the root average itself is used.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use serde_json::json;

use crate::dyadic::{DyadicTree, NodeId};
use crate::error::{Error, Result};
use crate::martingale::{
    analyze, average, check_depth, haar_function, haar_norms, haar_values, node_averages,
    square_function, synthesize, HaarSpectrum, StepFunction,
};
use crate::measure::MeasureTree;

/// A norm value together with the node attaining the supremum, when the norm
/// is a supremum over nodes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NormValue {
    pub value: f64,
    pub witness: Option<NodeId>,
}

impl NormValue {
    fn plain(value: f64) -> Self {
        NormValue {
            value,
            witness: None,
        }
    }
}

/// `‖f‖_{L^p(μ)}` for `1 ≤ p ≤ ∞`.
pub fn lp_norm(f: &StepFunction, mu: &MeasureTree, p: f64) -> Result<f64> {
    check_depth(f, mu);
    if p.is_nan() || p < 1.0 {
        return Err(Error::InvalidParameter(format!("L^p needs p >= 1, got {p}")));
    }
    if p.is_infinite() {
        return Ok(f.max_abs());
    }
    let values = f.values().iter().zip(mu.leaf_masses());
    Ok(if p == 1.0 {
        values.map(|(v, m)| v.abs() * m).sum()
    } else if p == 2.0 {
        values.map(|(v, m)| v * v * m).sum::<f64>().sqrt()
    } else {
        values
            .map(|(v, m)| v.abs().powf(p) * m)
            .sum::<f64>()
            .powf(1.0 / p)
    })
}

/// `sup_λ λ·μ{|f| ≥ λ}` over the attained values, i.e. the weak-L¹
/// quasi-norm of a step function.
pub fn weak_l1(f: &StepFunction, mu: &MeasureTree) -> f64 {
    check_depth(f, mu);
    let mut pairs: Vec<(f64, f64)> = f
        .values()
        .iter()
        .zip(mu.leaf_masses())
        .map(|(v, m)| (v.abs(), *m))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut best: f64 = 0.0;
    let mut mass = 0.0;
    let mut i = 0;
    while i < pairs.len() {
        let level = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == level {
            mass += pairs[i].1;
            i += 1;
        }
        best = best.max(level * mass);
    }
    best
}

#[derive(Clone, Copy)]
enum Center {
    /// `⟨f⟩_{Q̂}`, root average at the root.
    Parent,
    /// `⟨f⟩_Q`.
    Own,
}

/// `∫_Q |f − center(Q)|^power dμ` for every node, heap order.
fn deviation_integrals(
    f: &StepFunction,
    mu: &MeasureTree,
    averages: &[f64],
    center: Center,
    power: f64,
) -> Vec<f64> {
    let tree = mu.tree();
    let depth = tree.depth();
    let leaf_masses = mu.leaf_masses();
    let mut sums = vec![0.0; tree.node_count()];
    for k in 0..=depth {
        let shift = depth - k;
        let offset = (1usize << k) - 1;
        let (center_offset, center_shift) = match center {
            Center::Own => (offset, shift),
            Center::Parent if k == 0 => (0, depth),
            Center::Parent => ((1usize << (k - 1)) - 1, shift + 1),
        };
        for (leaf, (v, m)) in f.values().iter().zip(leaf_masses).enumerate() {
            let d = (v - averages[center_offset + (leaf >> center_shift)]).abs();
            let term = if power == 1.0 {
                d
            } else if power == 2.0 {
                d * d
            } else {
                d.powf(power)
            };
            sums[offset + (leaf >> shift)] += term * m;
        }
    }
    sums
}

fn argmax(values: impl Iterator<Item = f64>) -> NormValue {
    let mut best = NormValue {
        value: 0.0,
        witness: None,
    };
    for (heap, v) in values.enumerate() {
        if v > best.value || best.witness.is_none() {
            best = NormValue {
                value: v,
                witness: Some(NodeId::from_heap_index(heap)),
            };
        }
    }
    best
}

/// `sup_k ‖E_k |f − E_{k−1} f|‖_∞`, `k = 0..D`, with `E_{−1} f = ⟨f⟩_root`.
/// The witness is the node `Q ∈ D_k` attaining the supremum.
pub fn bmo_martingale(f: &StepFunction, mu: &MeasureTree) -> NormValue {
    let averages = node_averages(f, mu);
    let sums = deviation_integrals(f, mu, &averages, Center::Parent, 1.0);
    argmax(sums.iter().zip(mu.node_masses()).map(|(s, m)| s / m))
}

/// `sup_I ⟨|f − ⟨f⟩_I|⟩_I + sup_I |⟨f⟩_{Î} − ⟨f⟩_I|`; the witness attains
/// the first supremum.
pub fn bmo_oscillation(f: &StepFunction, mu: &MeasureTree) -> NormValue {
    let averages = node_averages(f, mu);
    let sums = deviation_integrals(f, mu, &averages, Center::Own, 1.0);
    let oscillation = argmax(sums.iter().zip(mu.node_masses()).map(|(s, m)| s / m));
    let jump = (1..averages.len())
        .map(|heap| (averages[(heap - 1) / 2] - averages[heap]).abs())
        .fold(0.0, f64::max);
    NormValue {
        value: oscillation.value + jump,
        witness: oscillation.witness,
    }
}

/// `sup_Q μ(Q)^{−1/q−α} (∫_Q |f − ⟨f⟩_{Q̂}|^q dμ)^{1/q}`.
pub fn lambda_norm(f: &StepFunction, mu: &MeasureTree, q: f64, alpha: f64) -> Result<NormValue> {
    check_lambda_params(q, alpha)?;
    let averages = node_averages(f, mu);
    let sums = deviation_integrals(f, mu, &averages, Center::Parent, q);
    let exponent = -1.0 / q - alpha;
    Ok(argmax(sums.iter().zip(mu.node_masses()).map(|(s, m)| {
        let root = if q == 2.0 { s.sqrt() } else { s.powf(1.0 / q) };
        root * m.powf(exponent)
    })))
}

fn check_lambda_params(q: f64, alpha: f64) -> Result<()> {
    if !(q.is_finite() && q >= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "Lambda_q(alpha) needs 1 <= q < inf, got q = {q}"
        )));
    }
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "Lambda_q(alpha) needs alpha >= 0, got alpha = {alpha}"
        )));
    }
    Ok(())
}

/// `‖S f‖_{L¹(μ)}`.
pub fn h1_norm(f: &StepFunction, mu: &MeasureTree) -> f64 {
    let s = square_function(f, mu);
    s.values().iter().zip(mu.leaf_masses()).map(|(v, m)| v * m).sum()
}

/// Exact `‖h_I‖_{Λ₂(α)}`: the maximum of `μ(J)^{−1/2−α}` over `J ⊇ I` and
/// `c_I / μ(I_±)^{1+α}` over the two children. Every other node sees either
/// a constant or nothing.
pub fn haar_lambda2(mu: &MeasureTree, node: NodeId, alpha: f64) -> Result<f64> {
    haar_lambda2_with_scale(mu, node, alpha, haar_norms_checked(mu, node)?.scale)
}

/// The comparable expression with `c_I` replaced by `m(I)^{1/2}`; it lies
/// within a factor `[1, √2]` above [`haar_lambda2`].
pub fn haar_lambda2_min_child_form(mu: &MeasureTree, node: NodeId, alpha: f64) -> Result<f64> {
    let m = mu.min_child_mass(node)?;
    haar_lambda2_with_scale(mu, node, alpha, m.sqrt())
}

fn haar_norms_checked(mu: &MeasureTree, node: NodeId) -> Result<crate::martingale::HaarNorms> {
    mu.tree().children(node)?;
    Ok(haar_norms(mu, node))
}

fn haar_lambda2_with_scale(mu: &MeasureTree, node: NodeId, alpha: f64, scale: f64) -> Result<f64> {
    check_lambda_params(2.0, alpha)?;
    let tree = mu.tree();
    let (left, right) = tree.children(node)?;
    let ancestors = (0..=node.level)
        .map(|t| mu.mass(tree.ancestor(node, t).expect("t <= level")).powf(-0.5 - alpha))
        .fold(0.0, f64::max);
    let children = [left, right]
        .iter()
        .map(|&c| scale / mu.mass(c).powf(1.0 + alpha))
        .fold(0.0, f64::max);
    Ok(ancestors.max(children))
}

/// Norm selector shared by the CLI and the experiments.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "norm", rename_all = "snake_case")]
pub enum Norm {
    /// `p = ∞` is the sup norm.
    Lp { p: f64 },
    WeakL1,
    Bmo,
    BmoOscillation,
    Lambda { q: f64, alpha: f64 },
    H1,
    /// Upper bound for the atomic-block H¹ norm; needs zero root mean.
    Atb,
}

impl Norm {
    pub const L1: Norm = Norm::Lp { p: 1.0 };
    pub const L2: Norm = Norm::Lp { p: 2.0 };
    pub const LINF: Norm = Norm::Lp { p: f64::INFINITY };

    pub fn evaluate(&self, f: &StepFunction, mu: &MeasureTree) -> Result<NormValue> {
        Ok(match *self {
            Norm::Lp { p } => NormValue::plain(lp_norm(f, mu, p)?),
            Norm::WeakL1 => NormValue::plain(weak_l1(f, mu)),
            Norm::Bmo => bmo_martingale(f, mu),
            Norm::BmoOscillation => bmo_oscillation(f, mu),
            Norm::Lambda { q, alpha } => lambda_norm(f, mu, q, alpha)?,
            Norm::H1 => NormValue::plain(h1_norm(f, mu)),
            Norm::Atb => NormValue::plain(atb_upper_bound(f, mu)?),
        })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Norm::Lp { p } if p.is_nan() || p < 1.0 => Err(Error::InvalidParameter(format!(
                "L^p needs p >= 1, got {p}"
            ))),
            Norm::Lambda { q, alpha } => check_lambda_params(q, alpha),
            _ => Ok(()),
        }
    }

    pub fn requires_zero_mean(&self) -> bool {
        matches!(self, Norm::Atb)
    }

    /// Short stable label, used in CSV columns.
    pub fn label(&self) -> String {
        match *self {
            Norm::Lp { p } if p.is_infinite() => "linf".into(),
            Norm::Lp { p } => format!("l{p}"),
            Norm::WeakL1 => "weak_l1".into(),
            Norm::Bmo => "bmo".into(),
            Norm::BmoOscillation => "bmo_osc".into(),
            Norm::Lambda { q, alpha } => format!("lambda(q={q},alpha={alpha})"),
            Norm::H1 => "h1".into(),
            Norm::Atb => "atb".into(),
        }
    }

    pub fn report(&self, value: NormValue) -> NormReport {
        let (name, params) = match *self {
            Norm::Lp { p } if p.is_infinite() => ("lp", json!({ "p": "inf" })),
            Norm::Lp { p } => ("lp", json!({ "p": p })),
            Norm::WeakL1 => ("weak_l1", json!({})),
            Norm::Bmo => ("bmo", json!({})),
            Norm::BmoOscillation => ("bmo_osc", json!({})),
            Norm::Lambda { q, alpha } => ("lambda", json!({ "q": q, "alpha": alpha })),
            Norm::H1 => ("h1", json!({})),
            Norm::Atb => ("atb", json!({})),
        };
        NormReport {
            norm: name.to_string(),
            params,
            value: value.value,
            witness_node: value.witness,
        }
    }
}

/// Norm report file: `{ "norm", "params", "value", "witness_node" }`.
#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct NormReport {
    pub norm: String,
    pub params: serde_json::Value,
    pub value: f64,
    pub witness_node: Option<NodeId>,
}

// ---------------------------------------------------------------------------
// Atomic blocks

#[derive(Clone, Debug, PartialEq)]
pub struct Subatom {
    pub lambda: f64,
    pub atom: StepFunction,
    /// `I_j`; the atom must vanish off it.
    pub support: NodeId,
    /// `k_j`, which must equal `support.level`.
    pub level: usize,
}

/// `b = Σ λ_j a_j` with `E_k b = 0` and level-penalised subatom sizes.
#[derive(Clone, Debug, PartialEq)]
pub struct AtomicBlock {
    pub base_level: usize,
    pub p: f64,
    pub subatoms: Vec<Subatom>,
}

impl AtomicBlock {
    pub fn function(&self) -> StepFunction {
        let depth = self
            .subatoms
            .first()
            .map(|s| s.atom.depth())
            .unwrap_or(0);
        let mut b = StepFunction::zeros(depth);
        for s in &self.subatoms {
            b.add_scaled(s.lambda, &s.atom);
        }
        b
    }

    /// `Σ |λ_j|`.
    pub fn cost(&self) -> f64 {
        self.subatoms.iter().map(|s| s.lambda.abs()).sum()
    }

    /// Size bound `μ(I_j)^{−1/p'} / (k_j − k + 1)` for a subatom at `support`.
    pub fn size_bound(mu: &MeasureTree, p: f64, base_level: usize, support: NodeId) -> f64 {
        let dual = 1.0 - 1.0 / p;
        mu.mass(support).powf(-dual) / (support.level + 1 - base_level) as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BlockViolation {
    Exponent { p: f64 },
    Level { subatom: usize },
    Support { subatom: usize },
    Size { subatom: usize, norm: f64, bound: f64 },
    Mean { residual: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlockReport {
    pub valid: bool,
    pub cost: f64,
    pub violations: Vec<BlockViolation>,
}

impl BlockReport {
    pub fn has_support_violation(&self) -> bool {
        self.violations
            .iter()
            .any(|v| matches!(v, BlockViolation::Support { .. }))
    }

    pub fn has_size_violation(&self) -> bool {
        self.violations
            .iter()
            .any(|v| matches!(v, BlockViolation::Size { .. }))
    }

    pub fn has_mean_violation(&self) -> bool {
        self.violations
            .iter()
            .any(|v| matches!(v, BlockViolation::Mean { .. }))
    }
}

const BLOCK_TOLERANCE: f64 = 1e-9;

/// Checks every defining condition of a martingale `p`-atomic block and
/// itemises what fails. Never errors.
pub fn validate_block(block: &AtomicBlock, mu: &MeasureTree) -> BlockReport {
    let tree = mu.tree();
    let mut violations = Vec::new();
    let p = block.p;
    if !(p.is_finite() && p > 1.0) {
        violations.push(BlockViolation::Exponent { p });
    }
    let base_ok = block.base_level <= tree.depth();
    let mut scale = 0.0;
    for (i, s) in block.subatoms.iter().enumerate() {
        if s.atom.depth() != tree.depth()
            || !tree.contains(s.support)
            || s.level != s.support.level
            || s.level < block.base_level
            || !base_ok
        {
            violations.push(BlockViolation::Level { subatom: i });
            continue;
        }
        let range = tree.leaf_range(s.support);
        let outside = s
            .atom
            .values()
            .iter()
            .enumerate()
            .any(|(leaf, v)| *v != 0.0 && !range.contains(&leaf));
        if outside {
            violations.push(BlockViolation::Support { subatom: i });
        }
        if p.is_finite() && p > 1.0 {
            let norm = lp_norm(&s.atom, mu, p).expect("p > 1");
            let bound = AtomicBlock::size_bound(mu, p, block.base_level, s.support);
            if norm > bound * (1.0 + BLOCK_TOLERANCE) {
                violations.push(BlockViolation::Size {
                    subatom: i,
                    norm,
                    bound,
                });
            }
        }
        scale += s.lambda.abs() * s.atom.max_abs();
    }
    if base_ok && !block.subatoms.iter().any(|s| s.atom.depth() != tree.depth()) {
        let b = block.function();
        if b.depth() == tree.depth() {
            let averages = node_averages(&b, mu);
            let offset = (1usize << block.base_level) - 1;
            let residual = averages[offset..offset + (1usize << block.base_level)]
                .iter()
                .fold(0.0, |acc: f64, v| acc.max(v.abs()));
            if residual > BLOCK_TOLERANCE * scale {
                violations.push(BlockViolation::Mean { residual });
            }
        }
    }
    BlockReport {
        valid: violations.is_empty(),
        cost: block.cost(),
        violations,
    }
}

/// The single-subatom block `h_I = λ a` with base level `level(I)`, scaled so
/// the size condition holds with equality; for `p = 2` this is
/// `λ = μ(I)^{1/2}`, `a = μ(I)^{−1/2} h_I`.
pub fn haar_block(mu: &MeasureTree, node: NodeId, p: f64) -> Result<AtomicBlock> {
    if !(p.is_finite() && p > 1.0) {
        return Err(Error::InvalidParameter(format!("blocks need 1 < p < inf, got {p}")));
    }
    let h = haar_function(mu, node)?;
    let bound = AtomicBlock::size_bound(mu, p, node.level, node);
    let lambda = lp_norm(&h, mu, p)? / bound;
    Ok(AtomicBlock {
        base_level: node.level,
        p,
        subatoms: vec![Subatom {
            lambda,
            atom: h.scaled(1.0 / lambda),
            support: node,
            level: node.level,
        }],
    })
}

/// `h_I` written as two subatoms on the children of `I` with base level
/// `level(I)`; cost `4 c_I`, which can be far below `μ(I)^{1/2}` when `I`
/// splits unevenly.
pub fn split_block(mu: &MeasureTree, node: NodeId, p: f64) -> Result<AtomicBlock> {
    if !(p.is_finite() && p > 1.0) {
        return Err(Error::InvalidParameter(format!("blocks need 1 < p < inf, got {p}")));
    }
    let tree = mu.tree();
    let (left, right) = tree.children(node)?;
    let c = haar_norms(mu, node).scale;
    let subatoms = [(left, 2.0 * c), (right, -2.0 * c)]
        .into_iter()
        .map(|(child, lambda)| Subatom {
            lambda,
            atom: StepFunction::indicator(tree, child, 0.5 / mu.mass(child)),
            support: child,
            level: child.level,
        })
        .collect();
    Ok(AtomicBlock {
        base_level: node.level,
        p,
        subatoms,
    })
}

/// `Σ_I |⟨f, h_I⟩| μ(I)^{1/2}`: the cost of the Haar-block decomposition of
/// `f`, hence an upper bound for the atomic-block norm. Requires
/// `⟨f⟩_root = 0`.
pub fn atb_upper_bound(f: &StepFunction, mu: &MeasureTree) -> Result<f64> {
    let spectrum = analyze(f, mu);
    if spectrum.mean.abs() > 1e-9 * f.max_abs() {
        return Err(Error::NonzeroMean(spectrum.mean));
    }
    Ok(spectrum
        .coeffs()
        .iter()
        .zip(mu.node_masses())
        .map(|(c, m)| c.abs() * m.sqrt())
        .sum())
}

/// Which child serves as the anchor in the sibling estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Orientation {
    /// Anchor `I_-`; needs `μ(I_+) ≥ μ(I)/2`.
    Left,
    /// Anchor `I_+`; needs `μ(I_-) ≥ μ(I)/2`.
    Right,
}

impl Orientation {
    /// An orientation whose hypothesis holds at `node` (the anchor is the
    /// lighter child).
    pub fn for_node(mu: &MeasureTree, node: NodeId) -> Result<Self> {
        let (left, right) = mu.tree().children(node)?;
        Ok(if mu.mass(right) >= mu.mass(left) {
            Orientation::Left
        } else {
            Orientation::Right
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SiblingCheck {
    /// `|⟨f⟩_{I_-} − ⟨f⟩_{I_+}|`.
    pub lhs: f64,
    /// `2 |⟨f⟩_anchor − ⟨f⟩_I|`.
    pub rhs: f64,
    pub holds: bool,
    /// `rhs − lhs`.
    pub slack: f64,
}

/// Evaluates `|⟨f⟩_{I_-} − ⟨f⟩_{I_+}| ≤ 2 |⟨f⟩_anchor − ⟨f⟩_I|` with an
/// additive tolerance of `1e−12`.
pub fn sibling_lemma_check(
    mu: &MeasureTree,
    node: NodeId,
    f: &StepFunction,
    orientation: Orientation,
) -> Result<SiblingCheck> {
    let (left, right) = mu.tree().children(node)?;
    let (anchor, other) = match orientation {
        Orientation::Left => (left, right),
        Orientation::Right => (right, left),
    };
    if 2.0 * mu.mass(other) < mu.mass(node) {
        return Err(Error::HypothesisNotMet { node });
    }
    let a_left = average(f, mu, left);
    let a_right = average(f, mu, right);
    let a_node = average(f, mu, node);
    let a_anchor = if anchor == left { a_left } else { a_right };
    let lhs = (a_left - a_right).abs();
    let rhs = 2.0 * (a_anchor - a_node).abs();
    Ok(SiblingCheck {
        lhs,
        rhs,
        holds: lhs <= rhs + 1e-12,
        slack: rhs - lhs,
    })
}

/// Mean-zero indicator probe: `1_Q − μ(Q)/μ(root)`.
pub fn centered_indicator(mu: &MeasureTree, node: NodeId) -> StepFunction {
    let tree: &DyadicTree = mu.tree();
    let shift = mu.mass(node) / mu.total_mass();
    StepFunction::indicator(tree, node, 1.0).map(|v| v - shift)
}

// ---------------------------------------------------------------------------
// Sparse evaluation

/// A function given by its root average and finitely many Haar coefficients
/// (repeated nodes add up).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseSpectrum {
    pub mean: f64,
    pub coeffs: Vec<(NodeId, f64)>,
}

impl SparseSpectrum {
    pub fn haar(node: NodeId) -> Self {
        SparseSpectrum {
            mean: 0.0,
            coeffs: vec![(node, 1.0)],
        }
    }

    /// `1_Q`: mean `μ(Q)/μ(root)` and `⟨1_Q, h_A⟩ = μ(Q) h_A|_Q` on every
    /// strict ancestor `A`.
    pub fn indicator(mu: &MeasureTree, node: NodeId) -> Self {
        let tree = mu.tree();
        let mass = mu.mass(node);
        let coeffs = (0..node.level)
            .map(|t| {
                let ancestor = tree.ancestor(node, node.level - t).expect("t < level");
                let (up, down) = haar_values(mu, ancestor);
                let on_left = (node.index >> (node.level - t - 1)) & 1 == 0;
                (ancestor, mass * if on_left { up } else { down })
            })
            .collect();
        SparseSpectrum {
            mean: mass / mu.total_mass(),
            coeffs,
        }
    }

    pub fn to_spectrum(&self, depth: usize) -> HaarSpectrum {
        let mut spectrum = HaarSpectrum::zeros(depth);
        spectrum.mean = self.mean;
        for &(node, c) in &self.coeffs {
            spectrum.coeffs_mut()[node.heap_index()] += c;
        }
        spectrum
    }

    pub fn synthesize(&self, mu: &MeasureTree) -> StepFunction {
        synthesize(&self.to_spectrum(mu.depth()), mu)
    }
}

/// Averages on the ancestor closure of the support and on the maximal nodes
/// where the function is constant ("pieces"). Closure nodes are kept in heap
/// order, so a parent always precedes its children.
struct SparseLayout {
    heaps: Vec<usize>,
    averages: Vec<f64>,
    /// `⟨f⟩_{Q̂}` (root average at the root)
    centers: Vec<f64>,
    parents: Vec<usize>,
    /// (heap index, constant value, parent position)
    pieces: Vec<(usize, f64, usize)>,
}

impl SparseLayout {
    fn new(f: &SparseSpectrum, mu: &MeasureTree) -> Result<Self> {
        let depth = mu.depth();
        let mut coeffs: BTreeMap<usize, f64> = BTreeMap::new();
        for &(node, c) in &f.coeffs {
            if !mu.tree().contains(node) || node.level >= depth {
                return Err(Error::NodeOutOfRange { node, depth });
            }
            *coeffs.entry(node.heap_index()).or_insert(0.0) += c;
        }
        let mut members: BTreeSet<usize> = BTreeSet::from([0]);
        for (&heap, _) in coeffs.iter().filter(|(_, c)| **c != 0.0) {
            let mut h = heap;
            while members.insert(h) {
                h = (h - 1) / 2;
            }
        }
        let heaps: Vec<usize> = members.into_iter().collect();
        let position = |heap: usize| heaps.binary_search(&heap).ok();
        let masses = mu.node_masses();
        let len = heaps.len();
        let mut layout = SparseLayout {
            averages: vec![f.mean; len],
            centers: vec![f.mean; len],
            parents: vec![0; len],
            pieces: Vec::with_capacity(len + 1),
            heaps: Vec::new(),
        };
        for (pos, &heap) in heaps.iter().enumerate() {
            let avg = layout.averages[pos];
            let coeff = coeffs.get(&heap).copied().unwrap_or(0.0);
            let (l, r) = (2 * heap + 1, 2 * heap + 2);
            let (up, down) = if coeff == 0.0 {
                (avg, avg)
            } else {
                let c = crate::martingale::haar_scale(masses[l], masses[r]);
                (avg + coeff * c / masses[l], avg - coeff * c / masses[r])
            };
            for (child, value) in [(l, up), (r, down)] {
                match position(child) {
                    Some(cp) => {
                        layout.averages[cp] = value;
                        layout.centers[cp] = avg;
                        layout.parents[cp] = pos;
                    }
                    None => layout.pieces.push((child, value, pos)),
                }
            }
        }
        layout.heaps = heaps;
        Ok(layout)
    }

    /// `∫_Q |f − ⟨f⟩_{Q̂}|^power dμ` on every closure node and piece, sorted
    /// by heap index.
    fn deviation_integrals(&self, mu: &MeasureTree, power: f64) -> Vec<(usize, f64)> {
        let masses = mu.node_masses();
        let mut sums = vec![0.0; self.heaps.len()];
        let mut out = Vec::with_capacity(self.heaps.len() + self.pieces.len());
        for &(heap, value, parent) in &self.pieces {
            let mass = masses[heap];
            let mut pos = parent;
            loop {
                sums[pos] += pow_abs(value - self.centers[pos], power) * mass;
                if pos == 0 {
                    break;
                }
                pos = self.parents[pos];
            }
            out.push((heap, pow_abs(value - self.averages[parent], power) * mass));
        }
        out.extend(self.heaps.iter().copied().zip(sums));
        out.sort_by_key(|&(h, _)| h);
        out
    }
}

#[inline]
fn pow_abs(d: f64, power: f64) -> f64 {
    let d = d.abs();
    if power == 1.0 {
        d
    } else if power == 2.0 {
        d * d
    } else {
        d.powf(power)
    }
}

fn argmax_sparse(values: impl Iterator<Item = (usize, f64)>) -> NormValue {
    let mut best = NormValue {
        value: 0.0,
        witness: Some(NodeId::ROOT),
    };
    for (heap, v) in values {
        if v > best.value {
            best = NormValue {
                value: v,
                witness: Some(NodeId::from_heap_index(heap)),
            };
        }
    }
    best
}

/// Evaluates `norm` directly from a sparse spectrum in time proportional to
/// (support size) × depth. L∞, martingale BMO and `Λ_q(α)` are computed
/// sparsely; every other norm falls back to a dense synthesis.
pub fn sparse_norm(norm: &Norm, f: &SparseSpectrum, mu: &MeasureTree) -> Result<NormValue> {
    let power = match *norm {
        Norm::Lp { p } if p.is_infinite() => {
            let layout = SparseLayout::new(f, mu)?;
            let value = layout
                .pieces
                .iter()
                .fold(0.0, |acc: f64, &(_, v, _)| acc.max(v.abs()));
            return Ok(NormValue::plain(value));
        }
        Norm::Bmo => 1.0,
        Norm::Lambda { q, alpha } => {
            check_lambda_params(q, alpha)?;
            q
        }
        _ => return norm.evaluate(&f.synthesize(mu), mu),
    };
    let layout = SparseLayout::new(f, mu)?;
    let sums = layout.deviation_integrals(mu, power);
    let masses = mu.node_masses();
    Ok(match *norm {
        Norm::Lambda { q, alpha } => {
            let exponent = -1.0 / q - alpha;
            argmax_sparse(sums.into_iter().map(|(h, s)| {
                let root = if q == 2.0 { s.sqrt() } else { s.powf(1.0 / q) };
                (h, root * masses[h].powf(exponent))
            }))
        }
        _ => argmax_sparse(sums.into_iter().map(|(h, s)| (h, s / masses[h]))),
    })
}
