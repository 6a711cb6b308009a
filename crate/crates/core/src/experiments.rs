//! Operator-norm estimation and the studies built on it.
//!
//! `L² → L²` norms are computed (power iteration in the Haar domain); every
//! other operator norm is a certified lower bound over a fixed probe family.
//! Bounded behaviour is evidenced by lower bounds that stop growing with
//! depth, blow-up by lower bounds that do not.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dyadic::{DyadicTree, NodeId};
use crate::error::{Error, Result};
use crate::martingale::{haar_function, haar_norms, square_function_of_spectrum, synthesize, HaarSpectrum, StepFunction};
use crate::measure::{Generator, MeasureTree};
use crate::norms::{
    haar_lambda2, lp_norm, sparse_norm, validate_block, AtomicBlock, Norm, SparseSpectrum, Subatom,
};
use crate::seeded_rng;
use crate::shift::{CanonicalShift, GeneralShift, HaarShift, Shift};

/// Seed of the power-iteration start vector.
const L2_START_SEED: u64 = 0x1f2e_3d4c;
/// Sweeps over the patch coordinates per greedy restart.
const GREEDY_SWEEPS: usize = 3;
/// Levels between the node attaining the norm and the root of its patch.
const PATCH_LIFT: usize = 2;
/// Levels between the patch root and its coordinates.
const PATCH_LEVELS: usize = 4;

// Stream offsets keep the random sources of different probe kinds disjoint.
const RANDOM_STREAM: u64 = 1 << 40;
const GREEDY_STREAM: u64 = 2 << 40;
const BLOCK_STREAM: u64 = 3 << 40;

#[derive(Clone, Debug, PartialEq)]
pub struct L2Estimate {
    pub value: f64,
    /// Unit-norm input (zero mean) with `‖T w‖₂ = value`.
    pub witness: StepFunction,
    pub iterations: usize,
    pub converged: bool,
}

/// Flattened `(S, R, α)` list in heap indices.
fn term_list(t: &dyn HaarShift) -> Vec<(usize, usize, f64)> {
    let mut terms = Vec::new();
    t.for_each_term(&mut |s, r, alpha| terms.push((s.heap_index(), r.heap_index(), alpha)));
    terms
}

/// Largest singular value of the Haar matrix of `t`, i.e. `‖T‖_{L²(μ)→L²(μ)}`,
/// by power iteration on `T*T`. The iteration cap is `10·2^D`; hitting it
/// clears `converged` rather than failing.
pub fn l2_opnorm(t: &dyn HaarShift, mu: &MeasureTree, tol: f64) -> Result<L2Estimate> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tol}")));
    }
    if t.depth() != mu.depth() {
        return Err(Error::DepthMismatch {
            left: t.depth(),
            right: mu.depth(),
        });
    }
    let n = mu.tree().internal_count();
    let terms = term_list(t);
    let forward = |v: &[f64], out: &mut [f64]| {
        out.fill(0.0);
        for &(s, r, a) in &terms {
            out[s] += a * v[r];
        }
    };
    let backward = |w: &[f64], out: &mut [f64]| {
        out.fill(0.0);
        for &(s, r, a) in &terms {
            out[r] += a * w[s];
        }
    };
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();

    let mut rng = seeded_rng(L2_START_SEED, 0);
    let mut v: Vec<f64> = (0..n).map(|_| 1.0 + 0.01 * rng.random_range(-1.0..1.0)).collect();
    let len = norm(&v);
    v.iter_mut().for_each(|x| *x /= len);
    let mut w = vec![0.0; n];
    let mut u = vec![0.0; n];
    let cap = 10usize << mu.depth();
    let mut previous = f64::NAN;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cap {
        iterations += 1;
        forward(&v, &mut w);
        let sigma2: f64 = w.iter().map(|x| x * x).sum();
        if sigma2 == 0.0 {
            converged = true;
            break;
        }
        if (sigma2 - previous).abs() <= tol * sigma2 {
            converged = true;
            break;
        }
        previous = sigma2;
        backward(&w, &mut u);
        let len = norm(&u);
        v.iter_mut().zip(&u).for_each(|(x, y)| *x = y / len);
    }
    forward(&v, &mut w);
    let mut spectrum = HaarSpectrum::zeros(mu.depth());
    spectrum.coeffs_mut().copy_from_slice(&v);
    Ok(L2Estimate {
        value: norm(&w),
        witness: synthesize(&spectrum, mu),
        iterations,
        converged,
    })
}

/// Where a probe came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Probe {
    Haar(NodeId),
    Indicator(NodeId),
    Random(usize),
    Greedy(usize),
}

impl fmt::Display for Probe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Probe::Haar(node) => write!(f, "haar {node}"),
            Probe::Indicator(node) => write!(f, "indicator {node}"),
            Probe::Random(i) => write!(f, "random {i}"),
            Probe::Greedy(i) => write!(f, "greedy {i}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OpNormEstimate {
    pub from_norm: Norm,
    pub to_norm: Norm,
    /// `to_norm(T witness) / from_norm(witness)`, recomputed densely.
    pub lower_bound: f64,
    pub witness: StepFunction,
    pub probe: Probe,
    /// Number of probes evaluated.
    pub iterations: usize,
    /// Whether the last greedy restart failed to beat the best probe so far.
    pub converged: bool,
}

/// `R ↦ [(S, α)]`, for applying a shift to sparse inputs.
pub struct ShiftColumns {
    columns: Vec<Vec<(NodeId, f64)>>,
}

impl ShiftColumns {
    pub fn new(t: &dyn HaarShift) -> Self {
        let mut columns = vec![Vec::new(); (1usize << t.depth()) - 1];
        t.for_each_term(&mut |s, r, alpha| columns[r.heap_index()].push((s, alpha)));
        ShiftColumns { columns }
    }

    pub fn apply(&self, input: &SparseSpectrum) -> SparseSpectrum {
        let mut out: BTreeMap<NodeId, f64> = BTreeMap::new();
        for &(r, c) in &input.coeffs {
            for &(s, alpha) in &self.columns[r.heap_index()] {
                *out.entry(s).or_insert(0.0) += alpha * c;
            }
        }
        SparseSpectrum {
            mean: 0.0,
            coeffs: out.into_iter().filter(|(_, c)| *c != 0.0).collect(),
        }
    }
}

/// Probes (a)–(c) with their from-norms, shared by every operator studied on
/// the same measure.
pub struct ProbeSet {
    from: Norm,
    fixed: Vec<(Probe, SparseSpectrum, f64)>,
    random: Vec<(StepFunction, f64)>,
}

fn recentre(f: &mut StepFunction, mu: &MeasureTree) {
    let mean = f.integral(mu) / mu.total_mass();
    f.values_mut().iter_mut().for_each(|v| *v -= mean);
}

fn usable(value: f64) -> bool {
    value.is_finite() && value > 0.0
}

impl ProbeSet {
    /// (a) every Haar function, (b) every node indicator (recentred when
    /// `from` needs zero mean), (c) `budget` seeded random step functions,
    /// each constant on the nodes of a random level. Probes with vanishing
    /// from-norm are dropped.
    pub fn new(mu: &MeasureTree, from: Norm, budget: usize, seed: u64) -> Result<Self> {
        from.validate()?;
        if budget == 0 {
            return Err(Error::InvalidParameter("probe budget must be at least 1".into()));
        }
        let tree = mu.tree();
        let mut fixed = Vec::with_capacity(3 * tree.leaf_count());
        for node in tree.internal_nodes() {
            let probe = SparseSpectrum::haar(node);
            let value = sparse_norm(&from, &probe, mu)?.value;
            if usable(value) {
                fixed.push((Probe::Haar(node), probe, value));
            }
        }
        for node in tree.nodes() {
            let mut probe = SparseSpectrum::indicator(mu, node);
            if from.requires_zero_mean() {
                probe.mean = 0.0;
            }
            let value = sparse_norm(&from, &probe, mu)?.value;
            if usable(value) {
                fixed.push((Probe::Indicator(node), probe, value));
            }
        }
        let mut random = Vec::with_capacity(budget);
        for i in 0..budget {
            let f = random_probe(mu, seed, i, from.requires_zero_mean());
            let value = from.evaluate(&f, mu)?.value;
            random.push((f, value));
        }
        Ok(ProbeSet { from, fixed, random })
    }

    pub fn from_norm(&self) -> Norm {
        self.from
    }

    pub fn budget(&self) -> usize {
        self.random.len()
    }
}

fn random_probe(mu: &MeasureTree, seed: u64, index: usize, zero_mean: bool) -> StepFunction {
    let depth = mu.depth();
    let mut rng = seeded_rng(seed, RANDOM_STREAM + index as u64);
    // a constant probe cannot be recentred into anything useful
    let level = rng.random_range(usize::from(zero_mean)..=depth);
    let blocks: Vec<f64> = (0..1usize << level).map(|_| rng.random_range(-1.0..1.0)).collect();
    let shift = depth - level;
    let values = (0..1usize << depth).map(|leaf| blocks[leaf >> shift]).collect();
    let mut f = StepFunction::new(depth, values).expect("length matches depth");
    if zero_mean {
        recentre(&mut f, mu);
    }
    f
}

fn dense_ratio(t: &dyn HaarShift, mu: &MeasureTree, from: Norm, to: Norm, f: &StepFunction) -> Result<Option<f64>> {
    let denominator = from.evaluate(f, mu)?.value;
    if !usable(denominator) {
        return Ok(None);
    }
    Ok(Some(to.evaluate(&t.apply(f, mu), mu)?.value / denominator))
}

/// Lower bound for `‖T‖_{from → to}` over the probe family of
/// [`ProbeSet::new`] plus (d) greedy coordinate ascent (see `greedy_ascent`).
/// Restart `i` (of `⌈budget/4⌉`) starts from the best of the fixed probes and
/// random probes `0..=i`, so a larger budget never lowers the bound.
pub fn opnorm_lower_bound(
    t: &dyn HaarShift,
    mu: &MeasureTree,
    from: Norm,
    to: Norm,
    budget: usize,
    seed: u64,
) -> Result<OpNormEstimate> {
    let probes = ProbeSet::new(mu, from, budget, seed)?;
    lower_bound_with(t, mu, &probes, to, seed)
}

/// [`opnorm_lower_bound`] with a precomputed probe set.
pub fn lower_bound_with(
    t: &dyn HaarShift,
    mu: &MeasureTree,
    probes: &ProbeSet,
    to: Norm,
    seed: u64,
) -> Result<OpNormEstimate> {
    to.validate()?;
    if t.depth() != mu.depth() {
        return Err(Error::DepthMismatch {
            left: t.depth(),
            right: mu.depth(),
        });
    }
    let from = probes.from;
    let columns = ShiftColumns::new(t);
    let mut iterations = 0;

    let mut best_fixed: Option<(f64, usize)> = None;
    for (i, (_, probe, denominator)) in probes.fixed.iter().enumerate() {
        iterations += 1;
        let ratio = sparse_norm(&to, &columns.apply(probe), mu)?.value / denominator;
        if best_fixed.is_none_or(|(b, _)| ratio > b) {
            best_fixed = Some((ratio, i));
        }
    }
    let mut random_ratios = Vec::with_capacity(probes.random.len());
    for (f, denominator) in &probes.random {
        iterations += 1;
        let ratio = if usable(*denominator) {
            to.evaluate(&t.apply(f, mu), mu)?.value / denominator
        } else {
            f64::NEG_INFINITY
        };
        random_ratios.push(ratio);
    }

    // Starting point of restart i: best of fixed and random[0..=i].
    enum Start {
        Fixed(usize),
        Random(usize),
    }
    let mut best: (f64, Probe, Option<StepFunction>) = match best_fixed {
        Some((r, i)) => (r, probes.fixed[i].0, None),
        None => (f64::NEG_INFINITY, Probe::Random(0), None),
    };
    let mut start_ratio = best_fixed.map_or(f64::NEG_INFINITY, |(r, _)| r);
    let mut start = best_fixed.map(|(_, i)| Start::Fixed(i));
    let restarts = probes.random.len().div_ceil(4);
    let mut converged = true;
    for (i, &ratio) in random_ratios.iter().enumerate() {
        if ratio > start_ratio {
            start_ratio = ratio;
            start = Some(Start::Random(i));
        }
        if ratio > best.0 {
            best = (ratio, Probe::Random(i), Some(probes.random[i].0.clone()));
        }
        if i >= restarts {
            continue;
        }
        let Some(origin) = &start else { continue };
        let initial = match origin {
            Start::Fixed(j) => probes.fixed[*j].1.synthesize(mu),
            Start::Random(j) => probes.random[*j].0.clone(),
        };
        let (value, f, evaluated) = greedy_ascent(t, mu, from, to, initial, start_ratio, seed, i)?;
        iterations += evaluated;
        converged = value <= best.0;
        if value > best.0 {
            best = (value, Probe::Greedy(i), Some(f));
        }
    }

    let (_, probe, dense) = best;
    let witness = match (dense, probe) {
        (Some(f), _) => f,
        (None, Probe::Haar(_) | Probe::Indicator(_)) => {
            let (_, spectrum, _) = probes
                .fixed
                .iter()
                .find(|(p, _, _)| *p == probe)
                .expect("best probe comes from the fixed set");
            spectrum.synthesize(mu)
        }
        (None, _) => StepFunction::zeros(mu.depth()),
    };
    let lower_bound = dense_ratio(t, mu, from, to, &witness)?.unwrap_or(0.0);
    Ok(OpNormEstimate {
        from_norm: from,
        to_norm: to,
        lower_bound,
        witness,
        probe,
        iterations,
        converged,
    })
}

/// Coordinate ascent on a patch: the subtree `PATCH_LIFT` levels above the
/// node where `T f` attains its norm, with one coordinate per descendant
/// `PATCH_LEVELS` generations below the patch root (leaves at small depth).
/// For an `L∞` from-norm each move sets a coordinate to `±‖f‖_∞`; otherwise
/// it adds `±δ`, halving `δ` after an unproductive sweep. Restarts after the
/// first scramble the patch before ascending.
#[allow(clippy::too_many_arguments)]
fn greedy_ascent(
    t: &dyn HaarShift,
    mu: &MeasureTree,
    from: Norm,
    to: Norm,
    mut f: StepFunction,
    mut ratio: f64,
    seed: u64,
    restart: usize,
) -> Result<(f64, StepFunction, usize)> {
    let tree = mu.tree();
    let mut rng = seeded_rng(seed, GREEDY_STREAM + restart as u64);
    let anchor = to.evaluate(&t.apply(&f, mu), mu)?.witness.unwrap_or(NodeId::ROOT);
    let patch = tree.ancestor(anchor, PATCH_LIFT.min(anchor.level))?;
    let block_level = (patch.level + PATCH_LEVELS).min(tree.depth());
    let blocks: Vec<std::ops::Range<usize>> = tree
        .descendants(patch, block_level - patch.level)?
        .into_iter()
        .map(|node| tree.leaf_range(node))
        .collect();
    let sup_moves = matches!(from, Norm::Lp { p } if p.is_infinite());
    let scale = f.max_abs();
    let mut delta = 0.5 * scale;
    let mut evaluated = 0;
    let fill = |f: &mut StepFunction, block: &std::ops::Range<usize>, value: f64| {
        f.values_mut()[block.clone()].fill(value);
    };
    let ratio_of = |g: &StepFunction, evaluated: &mut usize| -> Result<Option<f64>> {
        *evaluated += 1;
        dense_ratio(t, mu, from, to, g)
    };

    if restart > 0 {
        let mut g = f.clone();
        for block in &blocks {
            let current = g.values()[block.start];
            let value = if sup_moves {
                if rng.random_bool(0.5) { scale } else { -scale }
            } else {
                current + delta * rng.random_range(-1.0..1.0)
            };
            fill(&mut g, block, value);
        }
        if from.requires_zero_mean() {
            recentre(&mut g, mu);
        }
        if let Some(r) = ratio_of(&g, &mut evaluated)? {
            f = g;
            ratio = r;
        }
    }

    let mut order: Vec<usize> = (0..blocks.len()).collect();
    for _ in 0..GREEDY_SWEEPS {
        order.sort_by_key(|_| rng.random::<u32>());
        let mut improved_any = false;
        for &b in &order {
            let block = &blocks[b];
            let current = f.values()[block.start];
            let candidates = if sup_moves {
                [scale, -scale]
            } else {
                [current + delta, current - delta]
            };
            let mut improved: Option<(f64, StepFunction)> = None;
            for value in candidates {
                if value == current {
                    continue;
                }
                let mut g = f.clone();
                fill(&mut g, block, value);
                if from.requires_zero_mean() {
                    recentre(&mut g, mu);
                }
                if let Some(r) = ratio_of(&g, &mut evaluated)? {
                    if r > improved.as_ref().map_or(ratio, |(best, _)| *best) {
                        improved = Some((r, g));
                    }
                }
            }
            if let Some((r, g)) = improved {
                ratio = r;
                f = g;
                improved_any = true;
            }
        }
        if !improved_any {
            if sup_moves {
                break;
            }
            delta *= 0.5;
        }
    }
    Ok((ratio, f, evaluated))
}

// ---------------------------------------------------------------------------
// Studies

/// One line of study output. `norm_pair` names the ratio, including the
/// operator after `|` where several are studied.
#[derive(Clone, Debug, PartialEq)]
pub struct StudyRow {
    pub family: String,
    pub depth: usize,
    pub seed: u64,
    pub balanced_constant: f64,
    pub norm_pair: String,
    pub estimate: f64,
    pub witness: Option<StepFunction>,
}

impl StudyRow {
    /// Deterministic file name for the witness of this row.
    pub fn witness_name(&self) -> String {
        let raw = format!("{}_d{}_{}", self.family, self.depth, self.norm_pair);
        let clean: String = raw
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
            .collect();
        format!("{clean}.json")
    }
}

fn sort_rows(rows: &mut [StudyRow]) {
    rows.sort_by(|a, b| {
        (&a.family, a.depth, &a.norm_pair).cmp(&(&b.family, b.depth, &b.norm_pair))
    });
}

fn check_depths(depths: &[usize]) -> Result<()> {
    if depths.is_empty() {
        return Err(Error::InvalidParameter("depth list is empty".into()));
    }
    if depths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter("depths must be strictly increasing".into()));
    }
    Ok(())
}

/// Exact `‖h_{I_-} − h_{I_+}‖_{Λ₂(α)}` (the Petermichl image of `h_I`):
/// `√2 μ(J)^{−1/2−α}` over `J ⊇ I`, `μ(I_±)^{−1/2−α}`, and
/// `c_{I_±}/μ(G)^{1+α}` over the four grandchildren `G`.
pub fn petermichl_image_lambda2(mu: &MeasureTree, node: NodeId, alpha: f64) -> Result<f64> {
    if alpha.is_nan() || alpha < 0.0 {
        return Err(Error::InvalidParameter(format!("alpha must be >= 0, got {alpha}")));
    }
    let tree = mu.tree();
    if node.level + 2 > tree.depth() {
        return Err(Error::DepthExceeded {
            node,
            generations: 2,
            depth: tree.depth(),
        });
    }
    let (left, right) = tree.children(node)?;
    let mut value = (0..=node.level)
        .map(|t| 2f64.sqrt() * mu.mass(tree.ancestor(node, t).expect("t <= level")).powf(-0.5 - alpha))
        .fold(0.0, f64::max);
    for child in [left, right] {
        value = value.max(mu.mass(child).powf(-0.5 - alpha));
        let c = haar_norms(mu, child).scale;
        let (a, b) = tree.children(child)?;
        for g in [a, b] {
            value = value.max(c / mu.mass(g).powf(1.0 + alpha));
        }
    }
    Ok(value)
}

/// For each depth: the Petermichl shift `H` against `h_I` at the level-`D−2`
/// node of the family's distinguished branch. Rows: `Λ₂(α)` and `Λ₂(0)`
/// ratios from the closed forms, the martingale-BMO ratio by enumeration,
/// and the adjoint ratio `‖H* h_{I_-}‖/‖h_{I_-}‖ = ‖h_I‖/‖h_{I_-}‖`.
pub fn blowup_study(family: &Generator, alpha: f64, depths: &[usize], seed: u64) -> Result<Vec<StudyRow>> {
    check_depths(depths)?;
    if alpha.is_nan() || alpha < 0.0 {
        return Err(Error::InvalidParameter(format!("alpha must be >= 0, got {alpha}")));
    }
    let mut rows = Vec::new();
    for &depth in depths {
        let mu = family.generate(depth, seed)?;
        let balanced_constant = mu.balance_report()?.balanced_constant;
        let node = family.distinguished_branch().node_at(depth - 2);
        let (left, _) = mu.tree().children(node)?;
        let h = haar_function(&mu, node)?;
        let h_left = haar_function(&mu, left)?;
        let mut push = |pair: String, estimate: f64, witness: &StepFunction| {
            rows.push(StudyRow {
                family: family.label(),
                depth,
                seed,
                balanced_constant,
                norm_pair: pair,
                estimate,
                witness: Some(witness.clone()),
            });
        };
        let mut alphas = vec![alpha];
        if alpha != 0.0 {
            alphas.push(0.0);
        }
        for a in alphas {
            let ratio = petermichl_image_lambda2(&mu, node, a)? / haar_lambda2(&mu, node, a)?;
            push(format!("lambda2(alpha={a})|H"), ratio, &h);
        }
        let image = SparseSpectrum {
            mean: 0.0,
            coeffs: vec![(left, 1.0), (mu.tree().children(node)?.1, -1.0)],
        };
        let bmo = sparse_norm(&Norm::Bmo, &image, &mu)?.value
            / sparse_norm(&Norm::Bmo, &SparseSpectrum::haar(node), &mu)?.value;
        push("bmo|H".to_string(), bmo, &h);
        let adjoint = haar_lambda2(&mu, node, alpha)? / haar_lambda2(&mu, left, alpha)?;
        push(format!("lambda2(alpha={alpha})|H*"), adjoint, &h_left);
    }
    sort_rows(&mut rows);
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Theorem {
    LInfBMO,
    BMOtoBMO,
    H1L1,
    H1H1,
    TheoremB,
}

impl FromStr for Theorem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "LInfBMO" => Theorem::LInfBMO,
            "BMOtoBMO" => Theorem::BMOtoBMO,
            "H1L1" => Theorem::H1L1,
            "H1H1" => Theorem::H1H1,
            "TheoremB" => Theorem::TheoremB,
            _ => {
                return Err(Error::InvalidParameter(format!(
                    "unknown theorem {s:?}; expected LInfBMO, BMOtoBMO, H1L1, H1H1 or TheoremB"
                )))
            }
        })
    }
}

impl fmt::Display for Theorem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteConfig {
    pub theorem: Theorem,
    pub families: Vec<Generator>,
    pub depths: Vec<usize>,
    pub seed: u64,
    /// Random probes (and random blocks) per measure.
    pub budget: usize,
    /// Exponents of `Λ_q(α)` for `TheoremB`.
    pub q: f64,
    pub alpha: f64,
}

impl SuiteConfig {
    pub fn new(theorem: Theorem, families: Vec<Generator>, depths: Vec<usize>, seed: u64) -> Self {
        SuiteConfig {
            theorem,
            families,
            depths,
            seed,
            budget: 64,
            q: 2.0,
            alpha: 0.5,
        }
    }
}

/// The operators exercised by the theorem suites: Petermichl's shift, its
/// adjoint, and two canonical shifts of complexity at most 2 with constant
/// coefficients `+1` and `−1`.
pub fn standard_shifts(tree: &DyadicTree) -> Result<Vec<(String, Shift)>> {
    let petermichl = GeneralShift::petermichl(tree)?;
    let adjoint = petermichl.adjoint();
    Ok(vec![
        ("petermichl".to_string(), petermichl.into()),
        ("petermichl*".to_string(), adjoint.into()),
        (
            "canonical(0,0;1,0)+".to_string(),
            CanonicalShift::filled(tree, (0, 0), (1, 0), |_| 1.0)?.into(),
        ),
        (
            "canonical(1,1;2,2)-".to_string(),
            CanonicalShift::filled(tree, (1, 1), (2, 2), |_| -1.0)?.into(),
        ),
    ])
}

/// A block with its Haar-domain form and cost.
pub struct Battery {
    pub blocks: Vec<(SparseSpectrum, f64)>,
    /// Blocks generated but rejected by the validator.
    pub rejected: usize,
}

/// Valid atomic blocks (`p = 2`): `h_I` as a single subatom and as two child
/// subatoms for every `I`, plus `budget` random signed combinations of
/// normalised Haar functions inside a random node `Q`, all sharing base
/// level `level(Q)`. Every block is re-validated.
pub fn block_battery(mu: &MeasureTree, budget: usize, seed: u64) -> Result<Battery> {
    let tree = mu.tree();
    let depth = tree.depth();
    let mut blocks = Vec::new();
    let mut rejected = 0;
    for node in tree.internal_nodes() {
        // Both decompositions synthesise h_I; only the cost differs.
        let single = mu.mass(node).sqrt();
        let split = 4.0 * haar_norms(mu, node).scale;
        blocks.push((SparseSpectrum::haar(node), single));
        blocks.push((SparseSpectrum::haar(node), split));
    }
    for trial in 0..budget {
        let mut rng = seeded_rng(seed, BLOCK_STREAM + trial as u64);
        let base = rng.random_range(0..depth);
        let anchor = NodeId {
            level: base,
            index: rng.random_range(0..1usize << base),
        };
        let count = rng.random_range(2..=4);
        let mut subatoms = Vec::with_capacity(count);
        let mut coeffs = Vec::with_capacity(count);
        for _ in 0..count {
            let generations = rng.random_range(0..depth - base);
            let node = tree.selector(anchor, generations, rng.random_range(0..1usize << generations))?;
            let size = AtomicBlock::size_bound(mu, 2.0, base, node);
            let lambda = if rng.random_bool(0.5) { 1.0 } else { -1.0 } * rng.random_range(0.25..1.0);
            subatoms.push(Subatom {
                lambda,
                atom: haar_function(mu, node)?.scaled(size),
                support: node,
                level: node.level,
            });
            coeffs.push((node, lambda * size));
        }
        let block = AtomicBlock {
            base_level: base,
            p: 2.0,
            subatoms,
        };
        let report = validate_block(&block, mu);
        if report.valid {
            blocks.push((SparseSpectrum { mean: 0.0, coeffs }, report.cost));
        } else {
            rejected += 1;
        }
    }
    Ok(Battery { blocks, rejected })
}

fn block_ratio(
    t: &dyn HaarShift,
    columns: &ShiftColumns,
    mu: &MeasureTree,
    battery: &Battery,
    square: bool,
) -> Result<(f64, StepFunction)> {
    let _ = t;
    let mut best = (f64::NEG_INFINITY, 0);
    for (i, (block, cost)) in battery.blocks.iter().enumerate() {
        let image = columns.apply(block).to_spectrum(mu.depth());
        let value = if square {
            let s = square_function_of_spectrum(&image, mu);
            lp_norm(&s, mu, 1.0)?
        } else {
            lp_norm(&synthesize(&image, mu), mu, 1.0)?
        };
        if value / cost > best.0 {
            best = (value / cost, i);
        }
    }
    Ok((best.0, battery.blocks[best.1].0.synthesize(mu)))
}

/// Runs the ratio battery of `config.theorem` for every family, depth and
/// operator of [`standard_shifts`]; one row per (family, depth, ratio,
/// operator), holding the maximum over the probe family.
pub fn theorem_suite(config: &SuiteConfig) -> Result<Vec<StudyRow>> {
    check_depths(&config.depths)?;
    if config.budget == 0 {
        return Err(Error::InvalidParameter("probe budget must be at least 1".into()));
    }
    let (from, to) = match config.theorem {
        Theorem::LInfBMO => (Some(Norm::LINF), Norm::Bmo),
        Theorem::BMOtoBMO => (Some(Norm::Bmo), Norm::Bmo),
        Theorem::TheoremB => {
            let lambda = Norm::Lambda {
                q: config.q,
                alpha: config.alpha,
            };
            lambda.validate()?;
            (Some(lambda), lambda)
        }
        Theorem::H1L1 => (None, Norm::L1),
        Theorem::H1H1 => (None, Norm::H1),
    };
    let mut rows = Vec::new();
    for family in &config.families {
        for &depth in &config.depths {
            let mu = family.generate(depth, config.seed)?;
            let balanced_constant = mu.balance_report()?.balanced_constant;
            let shifts = standard_shifts(mu.tree())?;
            let pair_label = match from {
                Some(from) => format!("{}->{}", from.label(), to.label()),
                None => format!("{}(Tb)/cost", to.label()),
            };
            let mut push = |name: &str, estimate: f64, witness: StepFunction| {
                rows.push(StudyRow {
                    family: family.label(),
                    depth,
                    seed: config.seed,
                    balanced_constant,
                    norm_pair: format!("{pair_label}|{name}"),
                    estimate,
                    witness: Some(witness),
                });
            };
            match from {
                Some(from) => {
                    let probes = ProbeSet::new(&mu, from, config.budget, config.seed)?;
                    for (name, shift) in &shifts {
                        let estimate = lower_bound_with(shift, &mu, &probes, to, config.seed)?;
                        push(name, estimate.lower_bound, estimate.witness);
                    }
                }
                None => {
                    let battery = block_battery(&mu, config.budget, config.seed)?;
                    for (name, shift) in &shifts {
                        let columns = ShiftColumns::new(shift);
                        let (ratio, witness) =
                            block_ratio(shift, &columns, &mu, &battery, to == Norm::H1)?;
                        push(name, ratio, witness);
                    }
                }
            }
        }
    }
    sort_rows(&mut rows);
    Ok(rows)
}

/// Largest estimate over two depth ranges for one `(family, norm_pair)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Growth {
    pub family: String,
    pub norm_pair: String,
    pub low: f64,
    pub high: f64,
}

impl Growth {
    pub fn factor(&self) -> f64 {
        self.high / self.low
    }
}

/// Splits each `(family, norm_pair)` series at `split`: `low` is the maximum
/// over depths `≤ split`, `high` over depths `> split`. Series missing either
/// side are omitted.
pub fn growth(rows: &[StudyRow], split: usize) -> Vec<Growth> {
    let mut series: BTreeMap<(String, String), (f64, f64)> = BTreeMap::new();
    for row in rows {
        let entry = series
            .entry((row.family.clone(), row.norm_pair.clone()))
            .or_insert((f64::NAN, f64::NAN));
        let slot = if row.depth <= split { &mut entry.0 } else { &mut entry.1 };
        *slot = slot.max(row.estimate);
    }
    series
        .into_iter()
        .filter(|(_, (low, high))| !low.is_nan() && !high.is_nan())
        .map(|((family, norm_pair), (low, high))| Growth {
            family,
            norm_pair,
            low,
            high,
        })
        .collect()
}
