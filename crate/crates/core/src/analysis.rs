//! Contraction constants, solution comparison and the measure of
//! noncompactness diagnostic.

use std::ops::RangeInclusive;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fixed_point_solver::{apply_t, SolutionWindow};
use crate::hypothesis_checker::Problem;

/// Inflation applied to sampled Lipschitz slopes.
pub const SLOPE_INFLATION: f64 = 1.01;
const GRID: usize = 100_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IndexValue {
    pub n: usize,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Lipschitz {
    #[serde(rename = "L_d")]
    pub l_d: f64,
    #[serde(rename = "L_alpha")]
    pub l_alpha: f64,
    /// Per-index constants of `t ↦ t^{1/γ_j}` on `[-c_j, c_j]`.
    #[serde(rename = "L_gamma")]
    pub l_gamma: Vec<IndexValue>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContractionReport {
    #[serde(flatten)]
    pub lipschitz: Lipschitz,
    pub c1: f64,
    pub c2: f64,
    pub theta: f64,
    pub n4: Option<usize>,
    pub valid: bool,
    /// Per-index `|p_n| + L_d Σ w λ A + L_α Σ w λ Q` from the operator start on.
    pub theta_profile: Vec<IndexValue>,
    pub certified: bool,
}

/// Largest secant slope of `f` on a uniform grid of `[-d, d]`, inflated.
pub fn max_slope(f: impl Fn(f64) -> Result<f64>, d: f64) -> Result<f64> {
    let h = 2.0 * d / GRID as f64;
    let mut prev = f(-d)?;
    let mut best = 0.0f64;
    for i in 1..=GRID {
        let x = if i == GRID { d } else { -d + i as f64 * h };
        let v = f(x)?;
        best = best.max((v - prev).abs() / h);
        prev = v;
    }
    if !best.is_finite() {
        return Err(Error::NonFinite("the slope of f"));
    }
    Ok(best * SLOPE_INFLATION)
}

pub fn lipschitz_constants(problem: &Problem) -> Result<Lipschitz> {
    let eq = &problem.eq;
    let d = problem.d;
    let l_d = max_slope(|x| eq.f_at(x), d)?;
    let alpha = eq.alpha.value();
    let l_alpha = alpha * d.powf(alpha - 1.0);
    let t = &problem.tables;
    let l_gamma = (problem.operator_start()..=problem.window_end()).map(|n| IndexValue { n, value: problem.rem.lambda[t.i(n)] }).collect();
    Ok(Lipschitz { l_d, l_alpha, l_gamma })
}

/// Suffix maxima of `values`.
fn tail_max(values: &[f64]) -> Vec<f64> {
    let mut out = values.to_vec();
    for i in (0..out.len().saturating_sub(1)).rev() {
        out[i] = out[i].max(out[i + 1]);
    }
    out
}

/// `c1`, `c2`, `ϑ` and `n4`. The p-term is grouped with the a-term in `c1`,
/// the q-term forms `c2`; `n4` is the first index from which both stay below
/// `(1 + P)/2` and `(1 - P)/2`.
pub fn contraction_theta(problem: &Problem, lips: Lipschitz) -> ContractionReport {
    let t = &problem.tables;
    let (n_op, hi) = (problem.operator_start(), problem.window_end());
    let p_bound = problem.p_bound();
    let idx: Vec<usize> = (n_op..=hi).collect();
    let c1_n: Vec<f64> = idx.iter().map(|&n| t.p[t.i(n)].abs() + lips.l_d * problem.rem.theta_a[t.i(n)]).collect();
    let c2_n: Vec<f64> = idx.iter().map(|&n| lips.l_alpha * problem.rem.theta_q[t.i(n)]).collect();
    let theta_n: Vec<f64> = c1_n.iter().zip(&c2_n).map(|(a, b)| a + b).collect();
    let (c1_tail, c2_tail, theta_tail) = (tail_max(&c1_n), tail_max(&c2_n), tail_max(&theta_n));
    let first = (0..idx.len()).find(|&i| c1_tail[i] < (1.0 + p_bound) / 2.0 && c2_tail[i] < (1.0 - p_bound) / 2.0);
    let at = first.unwrap_or(0);
    let theta = theta_tail[at];
    ContractionReport {
        lipschitz: lips,
        c1: c1_tail[at],
        c2: c2_tail[at],
        theta,
        n4: first.map(|i| idx[i]),
        valid: first.is_some() && theta < 1.0,
        theta_profile: idx.iter().zip(&theta_n).map(|(&n, &value)| IndexValue { n, value }).collect(),
        certified: problem.eq.monotone_tails,
    }
}

pub fn contraction_report(problem: &Problem) -> Result<ContractionReport> {
    Ok(contraction_theta(problem, lipschitz_constants(problem)?))
}

fn check_aligned(x: &SolutionWindow, y: &SolutionWindow) -> Result<()> {
    if x.start != y.start {
        return Err(Error::Misaligned { expected: x.start, found: y.start });
    }
    if x.values.len() != y.values.len() {
        return Err(Error::WindowTooShort { needed: x.end(), window_end: y.end() });
    }
    Ok(())
}

/// `(sup_{n >= n4} |x_n - y_n|, |x_n - y_n| for every n of the window)`.
pub fn compare_solutions(x: &SolutionWindow, y: &SolutionWindow, n4: usize) -> Result<(f64, Vec<f64>)> {
    check_aligned(x, y)?;
    let profile: Vec<f64> = x.values.iter().zip(&y.values).map(|(a, b)| (a - b).abs()).collect();
    let sup = profile.iter().enumerate().filter(|(i, _)| x.start + i >= n4).fold(0.0f64, |m, (_, v)| m.max(*v));
    Ok((sup, profile))
}

/// Largest per-index diameter of the ensemble over `range`.
pub fn mnc_estimate(members: &[SolutionWindow], range: RangeInclusive<usize>) -> Result<f64> {
    let first = members.first().ok_or(Error::EmptyEnsemble)?;
    for m in members {
        check_aligned(first, m)?;
    }
    let mut mu = 0.0f64;
    for n in range {
        let (lo, hi) = members.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), m| {
            let v = m.get(n);
            (lo.min(v), hi.max(v))
        });
        mu = mu.max(hi - lo);
    }
    Ok(mu)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DarboTrial {
    pub trial: usize,
    pub mu_before: f64,
    pub mu_after: f64,
    pub ratio: f64,
    pub ok: bool,
}

/// Absolute slack in the comparison `μ(TX) <= (c1 + c2) μ(X)`.
pub const DARBO_SLACK: f64 = 1e-9;

/// Maps the ensemble through the operator and compares diameters. The
/// measure before is taken from `n4 - k` on, since `(Tx)_n` looks back `k`.
pub fn darbo_ratio_check(members: &[SolutionWindow], problem: &Problem, contraction: &ContractionReport) -> Result<(f64, f64, f64, bool)> {
    let n4 = match contraction.n4 {
        Some(n4) if contraction.valid => n4,
        _ => return Err(Error::Hypothesis("the contraction report has no valid n4".into())),
    };
    let hi = problem.window_end();
    let before = mnc_estimate(members, n4 - problem.eq.k..=hi)?;
    let mut images = Vec::with_capacity(members.len());
    for m in members {
        let y = apply_t(m, problem)?;
        for n in problem.operator_start()..=hi {
            let v = y.get(n);
            if v.abs() > problem.d * (1.0 + 1e-12) {
                return Err(Error::OutsideBall { n, value: v, d: problem.d });
            }
        }
        images.push(y);
    }
    let after = mnc_estimate(&images, n4..=hi)?;
    let ratio = if after == 0.0 { 0.0 } else { after / before };
    let ok = after <= (contraction.c1 + contraction.c2) * before + DARBO_SLACK;
    Ok((before, after, ratio, ok))
}

/// Random members of the ball. Even trials draw independent uniform members;
/// odd trials perturb one uniform base by a random radius, clipped to the ball.
pub fn random_ensemble(problem: &Problem, members: usize, clustered: bool, rng: &mut ChaCha8Rng) -> Vec<SolutionWindow> {
    let d = problem.d;
    let template = SolutionWindow::filled(problem, 0.0);
    let base: Vec<f64> = template.values.iter().map(|_| rng.random_range(-d..=d)).collect();
    let spread = d * 10f64.powf(rng.random_range(-6.0..=-1.0));
    (0..members)
        .map(|_| {
            let mut w = template.clone();
            for (v, b) in w.values.iter_mut().zip(&base) {
                *v = if clustered { (b + rng.random_range(-spread..=spread)).clamp(-d, d) } else { rng.random_range(-d..=d) };
            }
            w
        })
        .collect()
}

pub fn darbo_trials(problem: &Problem, contraction: &ContractionReport, trials: usize, members: usize, seed: u64) -> Result<Vec<DarboTrial>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..trials)
        .map(|trial| {
            let x = random_ensemble(problem, members, trial % 2 == 1, &mut rng);
            let (mu_before, mu_after, ratio, ok) = darbo_ratio_check(&x, problem, contraction)?;
            Ok(DarboTrial { trial, mu_before, mu_after, ratio, ok })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equation::tests::{example1, example2, linear, seq};
    use crate::hypothesis_checker::TailOptions;
    use crate::sequence_model::GammaSpec;
    use proptest::prelude::*;

    fn opts() -> TailOptions {
        TailOptions::heuristic(1e-15, 200_000)
    }

    fn window(start: usize, values: Vec<f64>) -> SolutionWindow {
        SolutionWindow::new(start, values, start)
    }

    #[test]
    fn lipschitz_examples() {
        let pb = Problem::prepare(&example1(), 2.0, 200, &opts()).unwrap();
        let l = lipschitz_constants(&pb).unwrap();
        assert!((l.l_d - 12.0 * SLOPE_INFLATION).abs() < 1e-3);
        assert!(l.l_d >= 12.0);
        assert_eq!(l.l_alpha, 80.0);
        let pb = Problem::prepare(&linear("0.5", "2^(-n)", "2^(-n)", 1), 1.0, 60, &opts()).unwrap();
        let l = lipschitz_constants(&pb).unwrap();
        assert!(l.l_gamma.iter().all(|v| v.value == 1.0));
    }

    /// Independent evaluation of ϑ_n for the first example at d = 2:
    /// weight λ A_j = 3 (2j+1) (2^{7-j})^{2j} 2^{1-j} and Q_j = A_j.
    fn example1_theta_oracle(n: usize) -> f64 {
        let l_d = 12.0 * SLOPE_INFLATION;
        let mut s = 0.0;
        for j in (n..400).rev() {
            let j = j as f64;
            s += 3.0 * (2.0 * j + 1.0) * 2f64.powf((7.0 - j) * 2.0 * j) * 2f64.powf(1.0 - j);
        }
        0.5 + (l_d + 80.0) * s
    }

    #[test]
    fn example1_contraction() {
        let pb = Problem::prepare(&example1(), 2.0, 200, &opts()).unwrap();
        let c = contraction_report(&pb).unwrap();
        assert!(c.valid);
        assert_eq!(c.n4, Some(8));
        let oracle = example1_theta_oracle(8);
        assert!((c.theta - oracle).abs() < 1e-4 * (oracle - 0.5), "{} vs {oracle}", c.theta);
        assert!(c.theta < 0.5006 && c.theta > 0.5005);
        assert!(c.c1 < 0.75 && c.c2 < 0.25);
        assert!((c.c1 + c.c2 - c.theta).abs() < 1e-15);
    }

    #[test]
    fn constant_delay_coefficient() {
        let pb = Problem::prepare(&linear("0.5", "0", "0", 2), 1.0, 40, &opts()).unwrap();
        let c = contraction_report(&pb).unwrap();
        assert_eq!((c.theta, c.n4, c.valid), (0.5, Some(2), true));
    }

    #[test]
    fn steep_nonlinearity_is_invalid() {
        let pb = Problem::prepare(&linear("0.5", "2^(-n)", "0", 1), 1.0, 60, &opts()).unwrap();
        let mut lips = lipschitz_constants(&pb).unwrap();
        lips.l_d = 1e30;
        let c = contraction_theta(&pb, lips);
        assert_eq!((c.n4, c.valid), (None, false));
        assert!(c.theta > 1.0);
    }

    #[test]
    fn compare_examples() {
        let x = window(0, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(compare_solutions(&x, &x, 0).unwrap().0, 0.0);
        let y = window(0, vec![5.0, 2.5, 3.0, 4.0]);
        assert_eq!(compare_solutions(&x, &y, 2).unwrap().0, 0.0);
        assert_eq!(compare_solutions(&x, &y, 0).unwrap(), (4.0, vec![4.0, 0.5, 0.0, 0.0]));
        assert_eq!(compare_solutions(&y, &x, 0).unwrap(), compare_solutions(&x, &y, 0).unwrap());
        assert!(compare_solutions(&x, &window(1, vec![0.0; 4]), 0).is_err());
    }

    #[test]
    fn mnc_examples() {
        let c = |v: f64| window(0, vec![v; 5]);
        assert!((mnc_estimate(&[c(-0.5), c(0.0), c(0.7)], 0..=4).unwrap() - 1.2).abs() < 1e-15);
        assert_eq!(mnc_estimate(&[c(0.3), c(0.3)], 0..=4).unwrap(), 0.0);
        assert!(matches!(mnc_estimate(&[], 0..=4), Err(Error::EmptyEnsemble)));
        let members: Vec<SolutionWindow> =
            (1..=10).map(|m| window(0, (0..=80).map(|n| if n % 2 == 0 { 1.0 } else { -1.0 } + 1.0 / (m + n) as f64).collect())).collect();
        let mu = mnc_estimate(&members, 50..=80).unwrap();
        assert!((mu - (1.0 / 51.0 - 1.0 / 60.0)).abs() < 1e-15);
    }

    #[test]
    fn darbo_trivial_cases() {
        let pb = Problem::prepare(&example1(), 2.0, 120, &opts()).unwrap();
        let c = contraction_report(&pb).unwrap();
        let same = vec![SolutionWindow::filled(&pb, 0.4); 3];
        let (_, after, ratio, ok) = darbo_ratio_check(&same, &pb, &c).unwrap();
        assert_eq!((after, ratio, ok), (0.0, 0.0, true));

        let pb = Problem::prepare(&linear("0.5", "0", "0", 1), 1.0, 60, &opts()).unwrap();
        let c = contraction_report(&pb).unwrap();
        let trials = darbo_trials(&pb, &c, 20, 8, 3).unwrap();
        assert!(trials.iter().all(|t| t.ok && t.ratio <= 0.5 + 1e-15));
    }

    #[test]
    fn darbo_holds_on_random_ensembles() {
        let mut sl = linear("0", "2^(-n-2)", "0", 1);
        sl.gamma = GammaSpec::new(seq("1"), seq("2*n+1"));
        let cases = [(example1(), 2.0, 1e-15), (example2(), 1.0, 1e-9), (sl, 1.0, 1e-15)];
        for (eq, d, eps) in cases {
            let pb = Problem::prepare(&eq, d, 200, &TailOptions::heuristic(eps, 400_000)).unwrap();
            let c = contraction_report(&pb).unwrap();
            assert!(c.valid);
            let trials = darbo_trials(&pb, &c, 100, 8, 17).unwrap();
            assert!(trials.iter().all(|t| t.ok), "{:?}", trials.iter().find(|t| !t.ok));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig { cases: 200, rng_seed: proptest::test_runner::RngSeed::Fixed(5), ..ProptestConfig::default() })]

        #[test]
        fn mnc_monotone_under_inclusion(
            rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 12), 2..8),
            keep in 1usize..8,
        ) {
            let all: Vec<SolutionWindow> = rows.into_iter().map(|r| window(3, r)).collect();
            let sub = &all[..keep.min(all.len())];
            prop_assert!(mnc_estimate(sub, 5..=14).unwrap() <= mnc_estimate(&all, 5..=14).unwrap());
        }
    }
}
