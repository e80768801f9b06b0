use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use plrm::inference::wald_statistic;
use plrm::simulation::StudyFile;
use plrm::{fit_mdpde, fit_path, load_dataset, FitOptions, LinearHypothesis, Report, SchemaSpec};

fn repo(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn plrm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_plrm"))
        .args(args)
        .env_remove("PLRM_THREADS")
        .output()
        .expect("binary runs")
}

fn demo_args<'a>(sub: &'a str, data: &'a str, schema: &'a str) -> Vec<&'a str> {
    vec![sub, "--data", data, "--schema", schema]
}

fn demo() -> (String, String) {
    (
        repo("data/demo.csv").display().to_string(),
        repo("data/demo.toml").display().to_string(),
    )
}

fn report(out: &Output) -> Report {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    Report::from_json(std::str::from_utf8(&out.stdout).unwrap()).unwrap()
}

#[test]
fn lambda_zero_fit_matches_the_library() {
    let (data, schema) = demo();
    let rep = report(&plrm(&demo_args("fit", &data, &schema)));
    let spec = SchemaSpec::from_path(Path::new(&schema)).unwrap();
    let ds = load_dataset(Path::new(&data), &spec, false).unwrap();
    let fit = fit_mdpde(&ds, 0.0, &FitOptions::default()).unwrap();
    assert_eq!(rep.fits.len(), 1);
    let cli: Vec<f64> = rep.fits[0].coefficients.iter().map(|c| c.estimate).collect();
    assert_eq!(cli, fit.beta_hat.to_vec());
    assert_eq!(rep.fits[0].coefficients[0].name, "within:(Intercept)");
    assert!(rep.provenance.input_hash.as_ref().unwrap().len() == 64);
}

#[test]
fn lambda_grid_gives_one_table_per_value() {
    let (data, schema) = demo();
    let mut args = demo_args("fit", &data, &schema);
    args.extend(["--lambda", "0:0.1:1"]);
    let rep = report(&plrm(&args));
    let lambdas: Vec<f64> = rep.fits.iter().map(|f| f.lambda).collect();
    assert_eq!(lambdas, (0..=10).map(|i| i as f64 / 10.0).collect::<Vec<_>>());
    assert!(rep.fits.iter().all(|f| f.converged && f.coefficients.len() == 10));
}

#[test]
fn usage_and_data_errors_exit_with_two() {
    let (_, schema) = demo();
    let out = plrm(&["fit", "--schema", &schema]);
    assert_eq!(out.status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "outcome,age,sympt\nnever,40,1\nsometimes,41,2\n").unwrap();
    let out = plrm(&demo_args("fit", bad.to_str().unwrap(), &schema));
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("row 2") && msg.contains("sometimes"), "{msg}");
}

#[test]
fn non_convergence_exits_with_three_and_still_writes() {
    let (data, schema) = demo();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.json");
    let mut args = demo_args("fit", &data, &schema);
    args.extend(["--max-iter", "1", "--out", path.to_str().unwrap()]);
    let out = plrm(&args);
    assert_eq!(out.status.code(), Some(3));
    let rep = Report::from_json(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert!(!rep.fits[0].converged);
}

#[test]
fn coefficient_sugar_matches_contrast_file_and_api() {
    let (data, schema) = demo();
    let mut args = demo_args("test", &data, &schema);
    args.extend(["--lambda", "0,0.5", "--coef", "within:sympt[3]=0.1"]);
    let sugar = report(&plrm(&args));

    let dir = tempfile::tempdir().unwrap();
    let contrast = dir.path().join("l.csv");
    let mut row = ["0"; 10];
    row[3] = "1";
    std::fs::write(&contrast, format!("{}\n", row.join(","))).unwrap();
    let mut args = demo_args("test", &data, &schema);
    args.extend(["--lambda", "0,0.5", "--contrast", contrast.to_str().unwrap(), "--h", "0.1"]);
    let file = report(&plrm(&args));

    let spec = SchemaSpec::from_path(Path::new(&schema)).unwrap();
    let ds = load_dataset(Path::new(&data), &spec, false).unwrap();
    let hyp = LinearHypothesis::single(10, 3, 0.1).unwrap();
    let fits = fit_path(&ds, &[0.0, 0.5], &FitOptions::default()).unwrap();
    for (i, fit) in fits.into_iter().enumerate() {
        let fit = fit.unwrap();
        let api = wald_statistic(&fit, &hyp).unwrap();
        assert_eq!(sugar.tests[i].df, 1);
        assert_eq!(sugar.tests[i].statistic.to_bits(), file.tests[i].statistic.to_bits());
        assert_eq!(sugar.tests[i].p_value.to_string(), api.p_value.to_string());
    }
}

#[test]
fn full_rank_contrast_at_the_estimate_gives_zero() {
    let (data, schema) = demo();
    let fit = report(&plrm(&demo_args("fit", &data, &schema)));
    let h: Vec<String> = fit.fits[0].coefficients.iter().map(|c| c.estimate.to_string()).collect();
    let dir = tempfile::tempdir().unwrap();
    let contrast = dir.path().join("identity.csv");
    let rows: Vec<String> = (0..10)
        .map(|i| (0..10).map(|j| if i == j { "1" } else { "0" }).collect::<Vec<_>>().join(","))
        .collect();
    std::fs::write(&contrast, rows.join("\n")).unwrap();
    let h = h.join(",");
    let mut args = demo_args("test", &data, &schema);
    args.extend(["--contrast", contrast.to_str().unwrap(), "--h", &h]);
    let rep = report(&plrm(&args));
    assert_eq!(rep.tests[0].statistic, 0.0);
    assert_eq!(rep.tests[0].p_value, 1.0);
    assert_eq!(rep.tests[0].df, 10);

    std::fs::write(&contrast, "1,0,0,0,0,0,0,0,0,0\n2,0,0,0,0,0,0,0,0,0\n").unwrap();
    let mut args = demo_args("test", &data, &schema);
    args.extend(["--contrast", contrast.to_str().unwrap()]);
    assert_eq!(plrm(&args).status.code(), Some(2));
}

#[test]
fn select_lambda_is_reproducible() {
    let (data, schema) = demo();
    let mut args = demo_args("select-lambda", &data, &schema);
    args.extend(["--grid", "0:0.05:1", "--format", "csv"]);
    let a = plrm(&args);
    let b = plrm(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("tuning,") && l.contains(",mse,")).count(), 21);
    assert_eq!(text.lines().filter(|l| l.contains(",lambda_opt,")).count(), 1);
}

#[test]
fn influence_table_shows_boundedness() {
    let (data, schema) = demo();
    let mut args = demo_args("influence", &data, &schema);
    args.extend(["--lambda", "0,0.5", "--row", "3", "--category", "over", "--x-scale", "10,100,1000,10000"]);
    let rep = report(&plrm(&args));
    let norms = |lambda: f64| -> Vec<f64> {
        rep.influence
            .iter()
            .filter(|r| r.lambda == lambda && r.x_scale.is_some())
            .map(|r| r.norm)
            .collect()
    };
    let mle = norms(0.0);
    let robust = norms(0.5);
    assert_eq!(mle.len(), 4);
    assert!(mle.windows(2).all(|w| w[1] > w[0]));
    assert!(robust[3] < robust[2] && robust[3] < mle[3]);
}

#[test]
fn simulate_reproduces_the_library_study() {
    let dir = tempfile::tempdir().unwrap();
    let design = dir.path().join("d.toml");
    let text = "[design]\nbeta_true = [0.0, -0.9, 0.1, 0.6, -1.2, 0.8]\nk = 2\ncategories = 3\nn = 100\n\
                contamination = 0.05\nseed = 1\n\n[study]\nkind = \"mse\"\nlambdas = [0.0, 0.5]\n\
                n_grid = [60]\nreps = 12\n";
    std::fs::write(&design, text).unwrap();
    let d = design.to_str().unwrap();
    let one = Command::new(env!("CARGO_BIN_EXE_plrm"))
        .args(["simulate", "--design", d, "--seed", "9", "--format", "csv"])
        .env("PLRM_THREADS", "1")
        .output()
        .unwrap();
    let two = plrm(&["--threads", "2", "simulate", "--design", d, "--seed", "9", "--format", "csv"]);
    assert!(one.status.success() && two.status.success());
    assert_eq!(one.stdout, two.stdout);

    let mut file = StudyFile::from_toml(text).unwrap();
    file.design.seed = 9;
    let mut expected = Vec::new();
    file.run().unwrap().write_csv(&mut expected).unwrap();
    assert_eq!(one.stdout, expected);

    let json = report(&plrm(&["simulate", "--design", d, "--seed", "9"]));
    assert_eq!(json.provenance.seed, Some(9));
    assert_eq!(json.study.unwrap().cells.len(), 2);
}
