//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits with
//! a failure status when any criterion fails.

mod common;

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;

use plrm::divergence::{dpd_objective, estimating_function, DpdConfig};
use plrm::estimator::{fit_mdpde, psi_matrix, FitOptions};
use plrm::inference::{
    approximate_power, contiguous_power, required_sample_size, LinearHypothesis, LocalAlternative, SigmaSource,
};
use plrm::robustness::{if_single_index, leverage_probe, ContaminationPoint};
use plrm::simulation::{generate_pure, power_study, replication_rng, SimDesign, StudyFile, StudyResult};
use plrm::{category_probabilities, model_robust_j_hat, omega_matrix, ModelDims, ParameterVector};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn designs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../designs")
}

fn run_design(name: &str) -> StudyResult {
    let text = std::fs::read_to_string(designs().join(name)).expect("design file");
    let study = StudyFile::from_toml(&text).expect("valid design").run().expect("study runs");
    let out = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name.replace(".toml", ".csv"));
    study.write_csv(std::fs::File::create(out).expect("output file")).expect("csv written");
    study
}

fn value(study: &StudyResult, lambda: f64, n: usize) -> f64 {
    study.value(lambda, n).unwrap_or_else(|| panic!("missing cell lambda={lambda} N={n}"))
}

fn mle_equivalence() -> Verdict {
    let mut worst: f64 = 0.0;
    for i in 0..20u64 {
        let n = if i % 2 == 0 { 100 } else { 300 };
        let design = SimDesign::reference(n, 0.0, 1001);
        let data = generate_pure(&design, &mut replication_rng(1001, n, i)).unwrap();
        let fit = fit_mdpde(&data, 0.0, &FitOptions::default()).unwrap();
        let oracle = common::newton_mle(&data);
        for (a, b) in fit.beta_hat.as_slice().iter().zip(&oracle) {
            worst = worst.max((a - b).abs());
        }
    }
    verdict(worst < 1e-6, format!("max |MDPDE_0 - Newton| = {worst:.2e} over 20 datasets"))
}

fn gradient_oracle() -> Verdict {
    let mut worst: f64 = 0.0;
    for case in 0..200u64 {
        let mut rng = common::rng(case);
        let k = 1 + (case % 3) as usize;
        let d = 1 + ((case / 3) % 3) as usize;
        let lambda = (case % 11) as f64 / 10.0;
        let dims = ModelDims::new(k, d).unwrap();
        let truth = common::random_beta(&mut rng, dims, 1.0);
        let data = common::random_dataset(&mut rng, k, d, 10 + (case % 30) as usize, truth.as_slice(), 1 + (case % 3) as u32);
        let beta = common::random_beta(&mut rng, dims, 1.0);
        let cfg = DpdConfig::new(lambda).unwrap().with_grouped_scaling(case % 2 == 0);
        let analytic = -(lambda + 1.0) * estimating_function(&data, &beta, &cfg).unwrap();
        let mut err: f64 = 0.0;
        for i in 0..dims.nu() {
            let h = 1e-5 * beta.as_slice()[i].abs().max(1.0);
            let mut up = beta.to_vec();
            let mut down = beta.to_vec();
            up[i] += h;
            down[i] -= h;
            let fu = dpd_objective(&data, &ParameterVector::new(dims, up).unwrap(), &cfg).unwrap();
            let fd = dpd_objective(&data, &ParameterVector::new(dims, down).unwrap(), &cfg).unwrap();
            err = err.max(((fu - fd) / (2.0 * h) - analytic[i]).abs());
        }
        worst = worst.max(err / analytic.amax().max(1e-8));
    }
    verdict(worst < 1e-5, format!("max relative error {worst:.2e} over 200 cases"))
}

fn matrix_identities() -> Verdict {
    let (mut psi_gap, mut omega_gap, mut zero_gap): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for case in 0..50u64 {
        let mut rng = common::rng(10_000 + case);
        let k = 1 + (case % 3) as usize;
        let d = 1 + ((case / 3) % 3) as usize;
        let dims = ModelDims::new(k, d).unwrap();
        let beta = common::random_beta(&mut rng, dims, 1.5);
        let data = common::random_dataset(&mut rng, k, d, 5 + case as usize, beta.as_slice(), 1 + (case % 2) as u32);
        let lambda = (case as f64 * 0.37) % 1.0;
        let psi = psi_matrix(&data, &beta, lambda).unwrap();
        let omega = omega_matrix(&data, &beta, lambda).unwrap();
        psi_gap = psi_gap.max(common::max_abs_diff(&psi, &common::psi_expanded(&data, beta.as_slice(), lambda)));
        omega_gap = omega_gap.max(common::max_abs_diff(&omega, &common::omega_expanded(&data, beta.as_slice(), lambda)));
        let psi0 = psi_matrix(&data, &beta, 0.0).unwrap();
        let omega0 = omega_matrix(&data, &beta, 0.0).unwrap();
        zero_gap = zero_gap.max(common::max_abs_diff(&psi0, &omega0));
    }
    verdict(
        psi_gap < 1e-12 && omega_gap < 1e-12 && zero_gap < 1e-12,
        format!("Psi gap {psi_gap:.1e}, Omega gap {omega_gap:.1e}, Psi-Omega at 0 {zero_gap:.1e}"),
    )
}

fn mse_reproduction(pure: &StudyResult, dirty: &StudyResult) -> Verdict {
    let lambdas = [0.0, 0.1, 0.3, 0.5, 0.7, 0.9];
    let mut pass = true;
    let mut notes = Vec::new();
    for n in [100, 200, 300] {
        let min_pure = lambdas.iter().map(|&l| value(pure, l, n)).fold(f64::INFINITY, f64::min);
        let mse0 = value(pure, 0.0, n);
        let se0 = pure.cell(0.0, n).unwrap().mc_se;
        let pure_ok = mse0 - min_pure <= se0;
        let (argmin, _) = lambdas
            .iter()
            .map(|&l| (l, value(dirty, l, n)))
            .fold((f64::NAN, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
        let dirty_ok = (0.2..=0.9).contains(&argmin) && value(dirty, 0.5, n) < value(dirty, 0.0, n);
        pass &= pure_ok && dirty_ok;
        notes.push(format!(
            "N={n}: MSE(0)-min={:.4} (se {se0:.4}), contaminated argmin {argmin}, MSE(0.5)={:.4} vs MSE(0)={:.4}",
            mse0 - min_pure,
            value(dirty, 0.5, n),
            value(dirty, 0.0, n)
        ));
    }
    verdict(pass, notes.join("; "))
}

fn level_check(pure: &StudyResult, dirty: &StudyResult) -> Verdict {
    let levels: Vec<f64> = [0.0, 0.3, 0.7].iter().map(|&l| value(pure, l, 300)).collect();
    let pure_ok = levels.iter().all(|v| (0.03..=0.07).contains(v));
    let gap = value(dirty, 0.0, 300) - value(dirty, 0.7, 300);
    verdict(
        pure_ok && gap > 0.05,
        format!(
            "pure levels {levels:?}; contaminated level(0)={:.3}, level(0.7)={:.3}, gap {gap:.3} (needs > 0.05)",
            value(dirty, 0.0, 300),
            value(dirty, 0.7, 300)
        ),
    )
}

fn power_check(pure: &StudyResult, dirty: &StudyResult) -> Verdict {
    let p0 = value(pure, 0.0, 300);
    let p9 = value(pure, 0.9, 300);
    let drop0 = (p0 - value(dirty, 0.0, 300)).abs();
    let drop7 = (value(pure, 0.7, 300) - value(dirty, 0.7, 300)).abs();
    verdict(
        p0 >= p9 - 0.02 && drop7 < drop0,
        format!("pure power(0)={p0:.3}, power(0.9)={p9:.3}; |pure-contaminated| at 0: {drop0:.3}, at 0.7: {drop7:.3}"),
    )
}

fn power_approximation() -> Verdict {
    let hyp = LinearHypothesis::single(6, 3, 0.6).unwrap();
    let design = SimDesign::reference(300, 0.0, 2509).with_coefficient(3, 1.35);
    let beta_star = design.beta().unwrap();
    let covariates = generate_pure(&design.with_n(20_000), &mut replication_rng(7, 20_000, 0)).unwrap();
    let sigma = SigmaSource::Covariates {
        data: &covariates,
        lambda: 0.0,
    };
    let approx = approximate_power(&hyp, &beta_star, &sigma, 300.0, 0.05).unwrap();
    let mc = power_study(&design, &[0.0], &[300], 1000, &hyp, 0.05).unwrap();
    let empirical = value(&mc, 0.0, 300);
    let mut worst_round_trip: f64 = 0.0;
    let mut sizes = Vec::new();
    for target in [0.5, 0.8, 0.9, 0.95] {
        let n = required_sample_size(&hyp, &beta_star, &sigma, 0.05, target).unwrap();
        let achieved = approximate_power(&hyp, &beta_star, &sigma, n as f64, 0.05).unwrap();
        let below = approximate_power(&hyp, &beta_star, &sigma, (n - 1) as f64, 0.05).unwrap();
        if below >= target {
            worst_round_trip = f64::INFINITY;
        }
        worst_round_trip = worst_round_trip.max((achieved - target).abs());
        sizes.push(n);
    }
    verdict(
        (approx - empirical).abs() <= 0.10 && worst_round_trip <= 0.02,
        format!(
            "approximate {approx:.3} vs empirical {empirical:.3} (1000 reps); sample sizes {sizes:?}, worst round trip {worst_round_trip:.4}"
        ),
    )
}

fn sci(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>().join(" ")
}

fn influence_boundedness() -> Verdict {
    let design = SimDesign::reference(300, 0.0, 5);
    let data = generate_pure(&design, &mut replication_rng(5, 300, 0)).unwrap();
    let beta0 = design.beta().unwrap();
    let row = &data.rows()[0].x;
    let scales = [10.0, 1e2, 1e3, 1e4];
    let far = leverage_probe(row, 1e4).unwrap();
    let far_pi = category_probabilities(&far, &beta0).unwrap();
    let t = far_pi
        .as_slice()
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    let norms = |lambda: f64| -> Vec<f64> {
        scales
            .iter()
            .map(|&s| {
                let cp = ContaminationPoint::at_category(0, t, 3)
                    .unwrap()
                    .with_covariates(leverage_probe(row, s).unwrap());
                if_single_index(&beta0, &data, lambda, &cp).unwrap().norm()
            })
            .collect()
    };
    let robust = norms(0.5);
    let mle = norms(0.0);
    let bounded = robust.iter().all(|v| v.is_finite()) && robust[3] < robust[2] && robust[3] < robust[0].max(robust[1]);
    let growing = mle.windows(2).all(|w| w[1] > 1.5 * w[0]);
    verdict(
        bounded && growing,
        format!("t={t}; lambda=0.5 norms {}; lambda=0 norms {}", sci(&robust), sci(&mle)),
    )
}

fn tuning_behaviour(pure: &StudyResult, dirty: &StudyResult) -> Verdict {
    let a = pure.cells[0].value;
    let b = dirty.cells[0].value;
    verdict(
        b - a >= 0.1,
        format!(
            "mean lambda_opt pure {a:.3} (se {:.3}), contaminated {b:.3} (se {:.3}), difference {:.3} (needs >= 0.1)",
            pure.cells[0].mc_se,
            dirty.cells[0].mc_se,
            b - a
        ),
    )
}

fn j_hat_cancellation() -> Verdict {
    let mut worst: f64 = 0.0;
    for rep in 0..5 {
        let design = SimDesign::reference(300, 0.05, 3);
        let data = plrm::simulation::generate(&design, &mut replication_rng(3, 300, rep)).unwrap();
        let fit = fit_mdpde(&data, 0.0, &FitOptions::default()).unwrap();
        let j = model_robust_j_hat(&data, &fit.beta_hat, 0.0).unwrap();
        worst = worst.max(common::max_abs_diff(&j, &fit.psi));
    }
    verdict(worst < 1e-10, format!("max |J - Psi_0| = {worst:.2e}"))
}

fn contiguous() -> Verdict {
    let design = SimDesign::reference(300, 0.0, 9);
    let data = generate_pure(&design, &mut replication_rng(9, 300, 0)).unwrap();
    let beta0 = design.beta().unwrap();
    let hyp = LinearHypothesis::single(6, 3, 0.6).unwrap();
    let sigma = SigmaSource::Covariates { data: &data, lambda: 0.3 };
    let mut worst: f64 = 0.0;
    for scale in [0.5, 1.0, 3.0] {
        let d = DVector::from_fn(6, |i, _| scale * (i as f64 - 2.5));
        let delta = hyp.l().transpose() * &d;
        let a = contiguous_power(&hyp, &beta0, LocalAlternative::Direction(&d), &sigma, 0.05).unwrap();
        let b = contiguous_power(&hyp, &beta0, LocalAlternative::Shift(&delta), &sigma, 0.05).unwrap();
        worst = worst.max((a - b).abs());
    }
    let zero = DVector::zeros(1);
    let at_zero = contiguous_power(&hyp, &beta0, LocalAlternative::Shift(&zero), &sigma, 0.05).unwrap();
    verdict(
        worst < 1e-12 && at_zero == 0.05,
        format!("max |d vs delta| = {worst:.1e}; power at delta=0 is {at_zero}"),
    )
}

fn determinism(reference: &StudyResult) -> Verdict {
    let text = std::fs::read_to_string(designs().join("level-contaminated.toml")).unwrap();
    let file = StudyFile::from_toml(&text).unwrap();
    let mut identical = true;
    for threads in [1, 3] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let again = pool.install(|| file.run().unwrap());
        let mut a = Vec::new();
        let mut b = Vec::new();
        reference.write_csv(&mut a).unwrap();
        again.write_csv(&mut b).unwrap();
        identical &= again == *reference && a == b;
    }
    verdict(
        identical,
        format!(
            "contaminated level study re-run with 1 and 3 threads vs default pool ({} threads)",
            rayon::current_num_threads()
        ),
    )
}

fn main() {
    let mut failures = 0;
    let mut report = |id: usize, name: &str, f: &mut dyn FnMut() -> Verdict| {
        let start = Instant::now();
        let v = f();
        let secs = start.elapsed().as_secs_f64();
        if !v.pass {
            failures += 1;
        }
        println!(
            "criterion {id:>2} {:<4} {name} [{secs:.1}s]: {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
    };

    report(1, "MLE equivalence", &mut mle_equivalence);
    report(2, "gradient oracle", &mut gradient_oracle);
    report(3, "matrix identities", &mut matrix_identities);
    report(4, "MSE reproduction", &mut || {
        mse_reproduction(&run_design("mse-pure.toml"), &run_design("mse-contaminated.toml"))
    });
    let mut dirty_level = None;
    report(5, "test level", &mut || {
        let dirty = run_design("level-contaminated.toml");
        let v = level_check(&run_design("level-pure.toml"), &dirty);
        dirty_level = Some(dirty);
        v
    });
    report(6, "test power", &mut || {
        power_check(&run_design("power-pure.toml"), &run_design("power-contaminated.toml"))
    });
    report(7, "power approximation", &mut power_approximation);
    report(8, "influence boundedness", &mut influence_boundedness);
    report(9, "lambda selection", &mut || {
        tuning_behaviour(&run_design("tuning-pure.toml"), &run_design("tuning-contaminated.toml"))
    });
    report(10, "J cancellation", &mut j_hat_cancellation);
    report(11, "contiguous power", &mut contiguous);
    let reference = dirty_level.take().expect("level study ran");
    report(12, "determinism", &mut || determinism(&reference));

    println!("acceptance: {} of 12 criteria passed", 12 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
