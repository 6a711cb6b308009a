//! The invariant suite run by `haarshift verify`.
//!
//! Trial `t` uses a measure of depth `2 + t mod (D − 1)` drawn from a rotating
//! set of families with seed `seed + t`, and a random function drawn from
//! stream `t`; the suite is a pure function of its configuration.

use rand::Rng;
use serde::Serialize;

use crate::dyadic::NodeId;
use crate::error::{Error, Result};
use crate::experiments::{blowup_study, growth, l2_opnorm, standard_shifts, theorem_suite, SuiteConfig, Theorem};
use crate::martingale::{
    analyze, haar_function, square_function, square_function_martingale, synthesize, StepFunction,
};
use crate::measure::{Generator, MeasureTree};
use crate::norms::{
    atb_upper_bound, bmo_martingale, bmo_oscillation, h1_norm, haar_block, haar_lambda2, lambda_norm,
    sibling_lemma_check, split_block, validate_block, Orientation,
};
use crate::seeded_rng;
use crate::shift::{GeneralShift, HaarShift};

const LISTED_FAILURES: usize = 20;
/// Allowed growth of the probed maxima between the two halves of the depth
/// range for balanced families.
pub const NO_GROWTH_FACTOR: f64 = 1.1;
/// Required growth for the unbalanced negative control.
pub const CONTROL_GROWTH_FACTOR: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyConfig {
    pub depth: usize,
    pub trials: usize,
    pub seed: u64,
    /// Relative tolerance of exact identities.
    pub tol: f64,
}

impl VerifyConfig {
    pub fn new(depth: usize, trials: usize, seed: u64) -> Self {
        VerifyConfig {
            depth,
            trials,
            seed,
            tol: 1e-9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub cases: usize,
    pub failed_cases: usize,
    /// The first few failures, human-readable.
    pub failures: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn failed(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

struct Check {
    name: &'static str,
    cases: usize,
    failed: usize,
    failures: Vec<String>,
}

impl Check {
    fn new(name: &'static str) -> Self {
        Check {
            name,
            cases: 0,
            failed: 0,
            failures: Vec::new(),
        }
    }

    fn case(&mut self, ok: bool, detail: impl FnOnce() -> String) {
        self.cases += 1;
        if !ok {
            self.failed += 1;
            if self.failures.len() < LISTED_FAILURES {
                self.failures.push(detail());
            }
        }
    }

    fn finish(self) -> CheckResult {
        CheckResult {
            name: self.name.to_string(),
            passed: self.failed == 0,
            cases: self.cases,
            failed_cases: self.failed,
            failures: self.failures,
        }
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// The generator used for trial `t`.
pub fn trial_family(depth: usize, t: usize) -> Generator {
    match t % 5 {
        3 => Generator::Spine {
            total_mass: 2.0 * (depth + 2) as f64,
        },
        4 => Generator::GeometricUnbalanced { q: 0.5 },
        _ => Generator::RandomDoubling {
            p_min: 0.05,
            p_max: 0.95,
        },
    }
}

pub fn trial_measure(config: &VerifyConfig, t: usize) -> Result<MeasureTree> {
    let depth = 2 + t % (config.depth - 1);
    trial_family(depth, t).generate(depth, config.seed.wrapping_add(t as u64))
}

fn trial_function(mu: &MeasureTree, seed: u64, t: usize) -> StepFunction {
    let mut rng = seeded_rng(seed, t as u64);
    let values = (0..mu.leaf_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
    StepFunction::new(mu.depth(), values).expect("length matches")
}

pub fn run_verify(config: &VerifyConfig) -> Result<VerifyReport> {
    if config.depth < 2 {
        return Err(Error::DepthTooSmall {
            depth: config.depth,
            min: 2,
        });
    }
    if config.trials == 0 {
        return Err(Error::InvalidParameter("verify needs at least one trial".into()));
    }
    if !(config.tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {}", config.tol)));
    }
    let tol = config.tol;
    let mut ortho = Check::new("orthonormality");
    let mut parseval = Check::new("parseval_roundtrip");
    let mut sandwich = Check::new("balance_sandwich");
    let mut sibling = Check::new("sibling_lemma");
    let mut square = Check::new("square_function_identity");
    let mut bmo_forms = Check::new("bmo_two_forms");
    let mut lambda_bmo = Check::new("lambda0_bmo_comparability");
    let mut petermichl = Check::new("petermichl_l2_norm");
    let mut closed = Check::new("haar_lambda_closed_form");
    let mut blocks = Check::new("atomic_blocks");
    let mut pairing = Check::new("adjoint_pairing");

    for t in 0..config.trials {
        let mu = trial_measure(config, t)?;
        let tree = *mu.tree();
        let d = tree.depth();
        let f = trial_function(&mu, config.seed, t);
        let tag = |what: &str| format!("trial {t} (depth {d}): {what}");

        for node in tree.internal_nodes() {
            let h = haar_function(&mu, node)?;
            let spectrum = analyze(&h, &mu);
            let worst = spectrum
                .coeffs()
                .iter()
                .enumerate()
                .map(|(j, c)| (c - f64::from(j == node.heap_index())).abs())
                .fold(spectrum.mean.abs() * mu.total_mass().sqrt(), f64::max);
            ortho.case(worst <= tol, || tag(&format!("<h_{node}, h_J> off by {worst:e}")));
        }

        let spectrum = analyze(&f, &mu);
        let energy = f.inner(&f, &mu);
        let parseval_energy = spectrum.mean * spectrum.mean * mu.total_mass() + spectrum.energy();
        let back = synthesize(&spectrum, &mu);
        let drift = (&back - &f).max_abs();
        parseval.case(close(energy, parseval_energy, tol) && drift <= tol * f.max_abs(), || {
            tag(&format!("energy {energy} vs {parseval_energy}, roundtrip drift {drift:e}"))
        });

        let report = mu.balance_report()?;
        sandwich.case(report.sandwich_holds(), || {
            tag(&format!(
                "B = {}, bal-form = {}",
                report.balanced_constant, report.bal_form_constant
            ))
        });

        let mut rng = seeded_rng(config.seed, (1 << 32) + t as u64);
        for _ in 0..50 {
            let level = rng.random_range(0..d);
            let node = NodeId {
                level,
                index: rng.random_range(0..1usize << level),
            };
            let g = trial_function(&mu, config.seed ^ 0x5151, rng.random_range(0..1 << 20));
            let mut orientations = vec![Orientation::for_node(&mu, node)?];
            let (l, r) = tree.children(node)?;
            if mu.mass(l) == mu.mass(r) {
                orientations.push(Orientation::Right);
            }
            for orientation in orientations {
                let check = sibling_lemma_check(&mu, node, &g, orientation)?;
                sibling.case(check.holds, || tag(&format!("sibling at {node}: {} > 2·{}", check.lhs, check.rhs)));
            }
        }

        let a = square_function(&f, &mu);
        let b = square_function_martingale(&f, &mu);
        let gap = (&a - &b).max_abs();
        square.case(gap <= tol * a.max_abs().max(1.0), || tag(&format!("square functions differ by {gap:e}")));

        let osc = bmo_oscillation(&f, &mu).value;
        let mart = bmo_martingale(&f, &mu).value;
        let ratio = osc / mart;
        bmo_forms.case((1.0 - tol..=2.0 + tol).contains(&ratio), || tag(&format!("bmo_osc/bmo = {ratio}")));

        let lam = lambda_norm(&f, &mu, 2.0, 0.0)?.value;
        let ratio = lam / mart;
        lambda_bmo.case((1.0 - tol..=2.0).contains(&ratio), || tag(&format!("Lambda_2(0)/bmo = {ratio}")));

        let mean = f.integral(&mu) / mu.total_mass();
        let centred = f.map(|v| v - mean);
        let h1 = h1_norm(&centred, &mu);
        let atb = atb_upper_bound(&centred, &mu)?;
        blocks.case(h1 <= 2f64.sqrt() * atb * (1.0 + tol), || tag(&format!("h1 {h1} > sqrt2 * atb {atb}")));

        if t % 10 == 0 {
            let shift = GeneralShift::petermichl(&tree)?;
            let estimate = l2_opnorm(&shift, &mu, 1e-10)?;
            let err = (estimate.value - 2f64.sqrt()).abs();
            petermichl.case(err <= 1e-6 && estimate.converged, || {
                tag(&format!("petermichl norm {} (converged {})", estimate.value, estimate.converged))
            });
        }

        if t % 10 == 1 {
            for node in tree.internal_nodes() {
                let h = haar_function(&mu, node)?;
                let m = mu.min_child_mass(node)?;
                for alpha in [0.0, 0.5, 1.0] {
                    let exact = haar_lambda2(&mu, node, alpha)?;
                    let enumerated = lambda_norm(&h, &mu, 2.0, alpha)?.value;
                    let scaled = exact * m.powf(alpha + 0.5);
                    let ok = close(exact, enumerated, tol)
                        && (0.5f64.sqrt() * (1.0 - tol)..=1.0 + tol).contains(&scaled);
                    closed.case(ok, || {
                        tag(&format!(
                            "h_{node}, alpha {alpha}: closed {exact} vs enumerated {enumerated}, scaled {scaled}"
                        ))
                    });
                }
            }
        }

        if t % 10 == 2 {
            for node in tree.internal_nodes() {
                for block in [haar_block(&mu, node, 2.0)?, split_block(&mu, node, 2.0)?] {
                    let report = validate_block(&block, &mu);
                    blocks.case(report.valid, || tag(&format!("valid block at {node} rejected: {:?}", report.violations)));
                }
            }
            let node = NodeId::ROOT;
            let good = haar_block(&mu, node, 2.0)?;
            let mut size = good.clone();
            size.subatoms[0].atom = size.subatoms[0].atom.scaled(1.5);
            let mut support = split_block(&mu, node, 2.0)?;
            support.subatoms[0].atom.values_mut()[mu.leaf_count() - 1] = 1.0;
            let mut mean = good.clone();
            mean.subatoms[0].atom = StepFunction::constant(d, 0.5 / mu.total_mass());
            let flagged = validate_block(&size, &mu).has_size_violation()
                && validate_block(&support, &mu).has_support_violation()
                && validate_block(&mean, &mu).has_mean_violation();
            blocks.case(flagged, || tag("an injected block violation went unflagged"));
        }

        if d >= 3 {
            let g = trial_function(&mu, config.seed ^ 0xadad, t);
            for (name, shift) in standard_shifts(&tree)? {
                let adjoint = shift.adjoint();
                let lhs = shift.apply(&f, &mu).inner(&g, &mu);
                let rhs = f.inner(&adjoint.apply(&g, &mu), &mu);
                let scale = f.inner(&f, &mu).sqrt() * g.inner(&g, &mu).sqrt();
                pairing.case((lhs - rhs).abs() <= tol * scale.max(1.0), || {
                    tag(&format!("{name}: <Tf,g> = {lhs} vs <f,T*g> = {rhs}"))
                });
            }
        }
    }

    let mut checks: Vec<CheckResult> = [
        ortho, parseval, sandwich, sibling, square, bmo_forms, lambda_bmo, petermichl, closed, blocks, pairing,
    ]
    .into_iter()
    .map(Check::finish)
    .collect();
    checks.extend(theorem_checks(config)?);
    Ok(VerifyReport {
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}

/// Blow-up and boundedness studies over depths `4..=D` (skipped below 6).
fn theorem_checks(config: &VerifyConfig) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    if config.depth < 6 {
        return Ok(out);
    }
    let depths: Vec<usize> = (4..=config.depth).collect();
    let split = (4 + config.depth) / 2;
    let pair = "lambda2(alpha=0.5)|H";

    let mut blowup = Check::new("blowup_unbalanced");
    let q = 0.5;
    let rows = blowup_study(&Generator::GeometricUnbalanced { q }, 0.5, &depths, config.seed)?;
    let series: Vec<f64> = rows.iter().filter(|r| r.norm_pair == pair).map(|r| r.estimate).collect();
    for (i, w) in series.windows(2).enumerate() {
        blowup.case(w[1] > w[0], || format!("ratio not increasing at depth {}: {} -> {}", depths[i + 1], w[0], w[1]));
    }
    for (i, w) in series.windows(3).enumerate() {
        let factor = q.powf(-1.0) / 4.0;
        blowup.case(w[2] >= w[0] * factor, || {
            format!("ratio at depth {} below {factor} x depth {}", depths[i + 2], depths[i])
        });
    }
    out.push(blowup.finish());

    let mut balanced = Check::new("blowup_balanced");
    for family in [Generator::Lebesgue, Generator::Spine { total_mass: 1000.0 }] {
        let rows = blowup_study(&family, 0.5, &depths, config.seed)?;
        let series: Vec<f64> = rows.iter().filter(|r| r.norm_pair == pair).map(|r| r.estimate).collect();
        let (lo, hi) = series.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| (lo.min(x), hi.max(x)));
        balanced.case(hi <= NO_GROWTH_FACTOR * lo, || format!("{}: ratios range over [{lo}, {hi}]", family.label()));
    }
    out.push(balanced.finish());

    let mut suites = Check::new("theorem_suites");
    for theorem in [Theorem::BMOtoBMO, Theorem::TheoremB, Theorem::H1L1] {
        let suite = SuiteConfig::new(
            theorem,
            vec![Generator::Lebesgue, Generator::Spine { total_mass: 1000.0 }],
            depths.clone(),
            config.seed,
        );
        for g in growth(&theorem_suite(&suite)?, split) {
            suites.case(g.factor() <= NO_GROWTH_FACTOR, || {
                format!("{theorem} {} {}: {} -> {}", g.family, g.norm_pair, g.low, g.high)
            });
        }
    }
    if config.depth >= 7 {
        let mut control = SuiteConfig::new(
            Theorem::TheoremB,
            vec![Generator::GeometricUnbalanced { q }],
            depths.clone(),
            config.seed,
        );
        control.budget = 4;
        let grown = growth(&theorem_suite(&control)?, split)
            .iter()
            .map(|g| g.factor())
            .fold(0.0, f64::max);
        suites.case(grown >= CONTROL_GROWTH_FACTOR, || format!("negative control grew only {grown}x"));
    }
    out.push(suites.finish());
    Ok(out)
}
