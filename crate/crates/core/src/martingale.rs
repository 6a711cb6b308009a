//! Step functions on the leaves, the dyadic martingale `E_k`/`D_k`, and the
//! μ-adapted Haar basis.
//!
//! Analysis and synthesis run in `O(2^D)` by aggregating integrals bottom-up
//! and averages top-down; nothing here forms an inner product against a full
//! Haar function.

use std::ops::{Add, Mul, Sub};

use crate::dyadic::{DyadicTree, NodeId};
use crate::error::{Error, Result};
use crate::measure::MeasureTree;

/// A real function constant on every leaf interval.
#[derive(Clone, Debug, PartialEq)]
pub struct StepFunction {
    depth: usize,
    values: Vec<f64>,
}

impl StepFunction {
    pub fn new(depth: usize, values: Vec<f64>) -> Result<Self> {
        let expected = 1usize << depth;
        if values.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                got: values.len(),
            });
        }
        Ok(StepFunction { depth, values })
    }

    pub fn zeros(depth: usize) -> Self {
        Self::constant(depth, 0.0)
    }

    pub fn constant(depth: usize, value: f64) -> Self {
        StepFunction {
            depth,
            values: vec![value; 1usize << depth],
        }
    }

    /// `value · 1_node`.
    pub fn indicator(tree: &DyadicTree, node: NodeId, value: f64) -> Self {
        let mut f = Self::zeros(tree.depth());
        f.values[tree.leaf_range(node)].fill(value);
        f
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        self.map(|v| v * factor)
    }

    pub fn map(&self, op: impl Fn(f64) -> f64) -> Self {
        StepFunction {
            depth: self.depth,
            values: self.values.iter().map(|&v| op(v)).collect(),
        }
    }

    /// `self += factor · other`.
    pub fn add_scaled(&mut self, factor: f64, other: &StepFunction) {
        assert_eq!(self.depth, other.depth, "step functions on different trees");
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += factor * b;
        }
    }

    /// `⟨f, g⟩_{L²(μ)}`.
    pub fn inner(&self, other: &StepFunction, mu: &MeasureTree) -> f64 {
        check_depth(self, mu);
        assert_eq!(self.depth, other.depth, "step functions on different trees");
        self.values
            .iter()
            .zip(&other.values)
            .zip(mu.leaf_masses())
            .map(|((a, b), m)| a * b * m)
            .sum()
    }

    pub fn integral(&self, mu: &MeasureTree) -> f64 {
        check_depth(self, mu);
        self.values.iter().zip(mu.leaf_masses()).map(|(v, m)| v * m).sum()
    }
}

impl Add for &StepFunction {
    type Output = StepFunction;

    fn add(self, rhs: &StepFunction) -> StepFunction {
        let mut out = self.clone();
        out.add_scaled(1.0, rhs);
        out
    }
}

impl Sub for &StepFunction {
    type Output = StepFunction;

    fn sub(self, rhs: &StepFunction) -> StepFunction {
        let mut out = self.clone();
        out.add_scaled(-1.0, rhs);
        out
    }
}

impl Mul<f64> for &StepFunction {
    type Output = StepFunction;

    fn mul(self, rhs: f64) -> StepFunction {
        self.scaled(rhs)
    }
}

#[inline]
pub(crate) fn check_depth(f: &StepFunction, mu: &MeasureTree) {
    assert_eq!(
        f.depth(),
        mu.depth(),
        "step function of depth {} used with a measure of depth {}",
        f.depth(),
        mu.depth()
    );
}

/// Haar coefficients of a step function: the root average plus `⟨f, h_I⟩`
/// for every internal node, stored in heap order.
#[derive(Clone, Debug, PartialEq)]
pub struct HaarSpectrum {
    depth: usize,
    pub mean: f64,
    coeffs: Vec<f64>,
}

impl HaarSpectrum {
    pub fn zeros(depth: usize) -> Self {
        HaarSpectrum {
            depth,
            mean: 0.0,
            coeffs: vec![0.0; (1usize << depth) - 1],
        }
    }

    pub fn unit(depth: usize, node: NodeId) -> Self {
        let mut s = Self::zeros(depth);
        s.set(node, 1.0);
        s
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    /// Coefficient at `node`; zero for leaves.
    pub fn get(&self, node: NodeId) -> f64 {
        self.coeffs.get(node.heap_index()).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, node: NodeId, value: f64) {
        assert!(node.level < self.depth, "no Haar function at leaf {node}");
        self.coeffs[node.heap_index()] = value;
    }

    pub fn nonzero(&self) -> impl Iterator<Item = (NodeId, f64)> + '_ {
        self.coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(h, &c)| (NodeId::from_heap_index(h), c))
    }

    /// `Σ_I ⟨f, h_I⟩²`.
    pub fn energy(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum()
    }
}

/// Closed-form data for `h_I`: `c_I = √(μ(I_-)μ(I_+)/μ(I))`,
/// `‖h_I‖₁ = 2c_I`, `‖h_I‖_∞ = c_I/m(I)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HaarNorms {
    pub scale: f64,
    pub l1: f64,
    pub linf: f64,
}

/// Panics if `node` is a leaf.
pub fn haar_norms(mu: &MeasureTree, node: NodeId) -> HaarNorms {
    assert!(node.level < mu.depth(), "no Haar function at leaf {node}");
    let (a, b) = child_masses(mu, node);
    let scale = haar_scale(a, b);
    HaarNorms {
        scale,
        l1: 2.0 * scale,
        linf: scale / a.min(b),
    }
}

#[inline]
fn child_masses(mu: &MeasureTree, node: NodeId) -> (f64, f64) {
    let masses = mu.node_masses();
    let heap = node.heap_index();
    (masses[2 * heap + 1], masses[2 * heap + 2])
}

#[inline]
pub(crate) fn haar_scale(left: f64, right: f64) -> f64 {
    (left * right / (left + right)).sqrt()
}

/// `(value on I_-, value on I_+)` of `h_I`.
#[inline]
pub fn haar_values(mu: &MeasureTree, node: NodeId) -> (f64, f64) {
    let (a, b) = child_masses(mu, node);
    let c = haar_scale(a, b);
    (c / a, -c / b)
}

/// `⟨f⟩_node` by summation over the leaves of `node`.
pub fn average(f: &StepFunction, mu: &MeasureTree, node: NodeId) -> f64 {
    check_depth(f, mu);
    let range = mu.tree().leaf_range(node);
    let integral: f64 = f.values()[range.clone()]
        .iter()
        .zip(&mu.leaf_masses()[range])
        .map(|(v, m)| v * m)
        .sum();
    integral / mu.mass(node)
}

/// `∫_Q f dμ` for every node, heap order.
pub fn node_integrals(f: &StepFunction, mu: &MeasureTree) -> Vec<f64> {
    check_depth(f, mu);
    let first_leaf = mu.tree().internal_count();
    let mut sums = vec![0.0; mu.tree().node_count()];
    for ((slot, v), m) in sums[first_leaf..]
        .iter_mut()
        .zip(f.values())
        .zip(mu.leaf_masses())
    {
        *slot = v * m;
    }
    for heap in (0..first_leaf).rev() {
        sums[heap] = sums[2 * heap + 1] + sums[2 * heap + 2];
    }
    sums
}

/// `⟨f⟩_Q` for every node, heap order.
pub fn node_averages(f: &StepFunction, mu: &MeasureTree) -> Vec<f64> {
    let mut sums = node_integrals(f, mu);
    for (s, m) in sums.iter_mut().zip(mu.node_masses()) {
        *s /= m;
    }
    // leaves are exact values; avoid the multiply/divide round trip
    let first_leaf = mu.tree().internal_count();
    sums[first_leaf..].copy_from_slice(f.values());
    sums
}

/// `E_k f` for `-1 ≤ k ≤ D`, with `E_{-1} f` the constant root average.
pub fn expectation(f: &StepFunction, mu: &MeasureTree, k: i64) -> Result<StepFunction> {
    let depth = mu.depth() as i64;
    if !(-1..=depth).contains(&k) {
        return Err(Error::LevelOutOfRange {
            level: k,
            min: -1,
            max: depth,
        });
    }
    let k = k.max(0) as usize;
    let averages = node_averages(f, mu);
    Ok(expand_level(&averages, mu.tree(), k))
}

/// Spread the level-`k` entries of a heap array over the leaves.
pub(crate) fn expand_level(heap_values: &[f64], tree: &DyadicTree, k: usize) -> StepFunction {
    let shift = tree.depth() - k;
    let offset = (1usize << k) - 1;
    let values = (0..tree.leaf_count())
        .map(|leaf| heap_values[offset + (leaf >> shift)])
        .collect();
    StepFunction {
        depth: tree.depth(),
        values,
    }
}

/// `D_k f = E_k f − E_{k−1} f` for `0 ≤ k ≤ D`.
pub fn difference(f: &StepFunction, mu: &MeasureTree, k: i64) -> Result<StepFunction> {
    let depth = mu.depth() as i64;
    if !(0..=depth).contains(&k) {
        return Err(Error::LevelOutOfRange {
            level: k,
            min: 0,
            max: depth,
        });
    }
    Ok(&expectation(f, mu, k)? - &expectation(f, mu, k - 1)?)
}

/// The μ-adapted Haar function `h_I` as a step function.
pub fn haar_function(mu: &MeasureTree, node: NodeId) -> Result<StepFunction> {
    let (left, right) = mu.tree().children(node)?;
    let (up, down) = haar_values(mu, node);
    let mut h = StepFunction::zeros(mu.depth());
    h.values[mu.tree().leaf_range(left)].fill(up);
    h.values[mu.tree().leaf_range(right)].fill(down);
    Ok(h)
}

pub fn analyze(f: &StepFunction, mu: &MeasureTree) -> HaarSpectrum {
    let sums = node_integrals(f, mu);
    let masses = mu.node_masses();
    let internal = mu.tree().internal_count();
    let coeffs = (0..internal)
        .map(|heap| {
            let (l, r) = (2 * heap + 1, 2 * heap + 2);
            let c = haar_scale(masses[l], masses[r]);
            c * (sums[l] / masses[l] - sums[r] / masses[r])
        })
        .collect();
    HaarSpectrum {
        depth: mu.depth(),
        mean: sums[0] / masses[0],
        coeffs,
    }
}

pub fn synthesize(spectrum: &HaarSpectrum, mu: &MeasureTree) -> StepFunction {
    assert_eq!(spectrum.depth, mu.depth(), "spectrum and measure depths differ");
    let masses = mu.node_masses();
    let internal = mu.tree().internal_count();
    let mut averages = vec![0.0; mu.tree().node_count()];
    averages[0] = spectrum.mean;
    for heap in 0..internal {
        let coeff = spectrum.coeffs[heap];
        let (l, r) = (2 * heap + 1, 2 * heap + 2);
        if coeff == 0.0 {
            averages[l] = averages[heap];
            averages[r] = averages[heap];
        } else {
            let c = haar_scale(masses[l], masses[r]);
            averages[l] = averages[heap] + coeff * c / masses[l];
            averages[r] = averages[heap] - coeff * c / masses[r];
        }
    }
    StepFunction {
        depth: mu.depth(),
        values: averages.split_off(internal),
    }
}

/// `S f(x) = (Σ_I ⟨f, h_I⟩² h_I(x)²)^{1/2}`, accumulated top-down.
pub fn square_function(f: &StepFunction, mu: &MeasureTree) -> StepFunction {
    square_function_of_spectrum(&analyze(f, mu), mu)
}

pub fn square_function_of_spectrum(spectrum: &HaarSpectrum, mu: &MeasureTree) -> StepFunction {
    let masses = mu.node_masses();
    let internal = mu.tree().internal_count();
    let mut acc = vec![0.0; mu.tree().node_count()];
    for heap in 0..internal {
        let coeff = spectrum.coeffs[heap];
        let (l, r) = (2 * heap + 1, 2 * heap + 2);
        let c2 = coeff * coeff * masses[l] * masses[r] / (masses[l] + masses[r]);
        acc[l] = acc[heap] + c2 / (masses[l] * masses[l]);
        acc[r] = acc[heap] + c2 / (masses[r] * masses[r]);
    }
    StepFunction {
        depth: mu.depth(),
        values: acc.split_off(internal).into_iter().map(f64::sqrt).collect(),
    }
}

/// `(Σ_{k=1}^{D} |D_k f|²)^{1/2}`, built from conditional expectations rather
/// than Haar coefficients.
pub fn square_function_martingale(f: &StepFunction, mu: &MeasureTree) -> StepFunction {
    let averages = node_averages(f, mu);
    let tree = mu.tree();
    let mut acc = vec![0.0; tree.leaf_count()];
    let mut previous = expand_level(&averages, tree, 0);
    for k in 1..=tree.depth() {
        let current = expand_level(&averages, tree, k);
        for ((a, c), p) in acc.iter_mut().zip(current.values()).zip(previous.values()) {
            let d = c - p;
            *a += d * d;
        }
        previous = current;
    }
    StepFunction {
        depth: tree.depth(),
        values: acc.into_iter().map(f64::sqrt).collect(),
    }
}
