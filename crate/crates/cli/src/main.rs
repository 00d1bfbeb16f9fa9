//! `linkfact` command-line runner.
//!
//! Every experiment configuration key is also a `--flag` (underscores become
//! dashes). Flags override values read from `--config`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::parser::ValueSource;
use clap::{Arg, ArgAction, ArgMatches, Command};
use serde_json::json;

use linkfact::datagen::{read_split, write_dataset};
use linkfact::experiment::{load_dataset, split_dataset, split_seed, Dataset};
use linkfact::matrix::read_csv;
use linkfact::metrics::{evaluate, EvalInput};
use linkfact::{
    bnmf, lmf, nmf_mu, rnmf, run_experiment, wnmf, BoolMatrix, EvalReport, ExperimentConfig,
    FactorModel, RandomSource, Thresholder,
};

/// Short spellings accepted next to the canonical key.
const ALIASES: [(&str, &str); 6] = [
    ("rows", "n"),
    ("cols", "m"),
    ("true_k", "k"),
    ("threshold", "boolean-threshold"),
    ("test_sizes", "test-size"),
    ("output", "out"),
];

fn config_args() -> Vec<Arg> {
    let mut args = vec![Arg::new("config")
        .long("config")
        .value_name("FILE")
        .help("Plain-text `key = value` configuration file")];
    for key in ExperimentConfig::KEYS.iter().copied().chain(["output"]) {
        let mut arg = Arg::new(key)
            .long(key.replace('_', "-"))
            .value_name("VALUE")
            .action(ArgAction::Set);
        for (canonical, alias) in ALIASES {
            if canonical == key {
                arg = arg.alias(alias);
            }
        }
        args.push(arg);
    }
    args
}

fn cli() -> Command {
    Command::new("linkfact")
        .about("Matrix factorization for missing-link prediction")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(
            Command::new("generate")
                .about("Write a synthetic dataset as X.csv plus ground truth")
                .args(config_args()),
        )
        .subcommand(
            Command::new("split")
                .about("Write the train/test splits a run would use")
                .args(config_args()),
        )
        .subcommand(
            Command::new("run")
                .about("Run a cross-validated experiment sweep")
                .args(config_args()),
        )
        .subcommand(
            Command::new("eval")
                .about("Recompute evaluation metrics from saved artifacts")
                .arg(Arg::new("x").long("x").value_name("CSV").required(true).help("Ground-truth matrix"))
                .arg(Arg::new("predictions").long("predictions").value_name("CSV").required(true))
                .arg(
                    Arg::new("uncertainty")
                        .long("uncertainty")
                        .value_name("CSV")
                        .help("Uncertainty matrix; defaults to all zeros"),
                )
                .arg(Arg::new("split").long("split").value_name("CSV").required(true))
                .arg(Arg::new("out").long("out").alias("output").value_name("DIR")),
        )
        .subcommand(
            Command::new("bench")
                .about("Time each solver over the configured rank range")
                .args(config_args())
                .arg(
                    Arg::new("repeats")
                        .long("repeats")
                        .value_name("N")
                        .default_value("1")
                        .value_parser(clap::value_parser!(usize)),
                ),
        )
}

fn resolve_config(m: &ArgMatches) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match m.get_one::<String>("config") {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    for key in ExperimentConfig::KEYS.iter().copied().chain(["output"]) {
        if m.value_source(key) == Some(ValueSource::CommandLine) {
            cfg.set(key, m.get_one::<String>(key).expect("flag has a value"))?;
        }
    }
    Ok(cfg)
}

fn given(m: &ArgMatches, key: &str) -> bool {
    m.value_source(key) == Some(ValueSource::CommandLine)
}

fn output_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output.clone().unwrap_or_else(|| PathBuf::from("."))
}

fn print_json(value: serde_json::Value) {
    println!("{value}");
}

fn cmd_generate(m: &ArgMatches) -> anyhow::Result<()> {
    let mut cfg = resolve_config(m)?;
    // `--seed` seeds the generator unless `--data-seed` says otherwise.
    if given(m, "seed") && !given(m, "data_seed") {
        cfg.data_seed = cfg.seed;
    }
    cfg.validate()?;
    let data = load_dataset(&cfg)?;
    let Some(truth) = &data.truth else {
        bail!(linkfact::Error::Parameter(format!(
            "generate needs a synthetic dataset, not {}",
            cfg.dataset
        )));
    };
    let dir = output_dir(&cfg);
    write_dataset(&dir, &data.x, truth)?;
    print_json(json!({
        "dataset": data.name,
        "rows": data.x.nrows(),
        "cols": data.x.ncols(),
        "true_k": truth.true_k,
        "dir": dir,
    }));
    Ok(())
}

fn cmd_split(m: &ArgMatches) -> anyhow::Result<()> {
    let cfg = resolve_config(m)?;
    cfg.validate()?;
    let data = load_dataset(&cfg)?;
    let dir = output_dir(&cfg);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut written = Vec::new();
    for (ts_idx, &ts) in cfg.test_sizes.iter().enumerate() {
        for fold in 0..cfg.folds {
            let split = split_dataset(&cfg, &data, ts, split_seed(cfg.seed, ts_idx, fold))?;
            let path = dir.join(format!("split_ts{ts}_fold{fold}.csv"));
            fs::write(&path, split.to_csv()).with_context(|| format!("writing {}", path.display()))?;
            written.push(json!({
                "test_size": ts,
                "fold": fold,
                "train": split.train.len(),
                "test": split.test.len(),
                "path": path,
            }));
        }
    }
    print_json(json!({ "dataset": data.name, "splits": written }));
    Ok(())
}

fn cmd_run(m: &ArgMatches) -> anyhow::Result<()> {
    let cfg = resolve_config(m)?;
    for warning in cfg.validate()? {
        eprintln!("warning: {warning}");
    }
    let result = run_experiment(&cfg)?;
    if cfg.output.is_none() {
        print!("{}", result.aggregate_csv());
        return Ok(());
    }
    let failed = result.runs.iter().filter(|r| r.error.is_some()).count();
    let k_opt: Vec<_> = cfg
        .test_sizes
        .iter()
        .map(|&ts| json!({ "test_size": ts, "k_opt_mode": result.k_opt_mode(ts) }))
        .collect();
    print_json(json!({
        "dataset": result.dataset,
        "method": cfg.method.name(),
        "runs": result.runs.len(),
        "failed": failed,
        "k_opt": k_opt,
        "output": cfg.output,
    }));
    Ok(())
}

fn cmd_eval(m: &ArgMatches) -> anyhow::Result<()> {
    let path = |id: &str| m.get_one::<String>(id).map(PathBuf::from);
    let x = read_csv(path("x").expect("required"))?;
    let prediction = read_csv(path("predictions").expect("required"))?;
    let uncertainty = match path("uncertainty") {
        Some(p) => read_csv(p)?,
        None => linkfact::DenseMatrix::zeros(x.dim()),
    };
    for (name, mat) in [("predictions", &prediction), ("uncertainty", &uncertainty)] {
        if mat.dim() != x.dim() {
            bail!(linkfact::Error::Shape(format!(
                "{name} is {:?} but X is {:?}",
                mat.dim(),
                x.dim()
            )));
        }
    }
    let (train, test) = read_split(path("split").expect("required"))?;
    if let Some(&(i, j)) = train.iter().chain(&test).find(|&&(i, j)| i >= x.nrows() || j >= x.ncols()) {
        bail!(linkfact::Error::Shape(format!("split entry ({i}, {j}) lies outside X")));
    }
    let report = evaluate(&EvalInput {
        x: &x,
        prediction: &prediction,
        uncertainty: &uncertainty,
        train: &train,
        test: &test,
    })?;
    let csv = format!("{}\n{}\n", EvalReport::csv_header(), report.csv_row());
    match path("out") {
        Some(dir) => {
            fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            write_file(&dir.join("report.csv"), &csv)?;
            write_file(&dir.join("report.json"), &(serde_json::to_string_pretty(&report)? + "\n"))?;
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn write_file(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn timed(f: impl FnOnce() -> linkfact::Result<FactorModel>) -> linkfact::Result<(f64, FactorModel)> {
    let t = Instant::now();
    let model = f()?;
    Ok((t.elapsed().as_secs_f64(), model))
}

fn bench_rows(cfg: &ExperimentConfig, data: &Dataset, repeats: usize) -> anyhow::Result<Vec<String>> {
    let boolean = data.is_binary().then(|| BoolMatrix::from_dense(&data.x)).transpose()?;
    let threshold = match cfg.threshold {
        Thresholder::Uniform => Thresholder::KMeans,
        t => t,
    };
    let k_max = cfg.k_max.min(data.x.nrows()).min(data.x.ncols());
    let mut rows = Vec::new();
    for k in cfg.k_min..=k_max {
        for rep in 0..repeats {
            let opts = cfg
                .solver_options()
                .with_seed(RandomSource::new(cfg.seed).derive(&[k as u64, rep as u64]));
            let lmf_opts = cfg.lmf_options().with_seed(opts.seed.clone());
            let mut fits = vec![
                ("nmf", timed(|| nmf_mu(&data.x, k, &opts))?),
                ("wnmf", timed(|| wnmf(&data.x, &data.known, k, &opts))?),
                ("rnmf", timed(|| rnmf(&data.x, &data.known, k, &opts))?),
            ];
            if let Some(b) = &boolean {
                fits.push(("bnmf", timed(|| bnmf(b, Some(&data.known), k, threshold, &opts))?));
                fits.push(("lmf", timed(|| lmf(b, &data.known, k, &lmf_opts))?));
            }
            for (name, (secs, model)) in fits {
                rows.push(format!(
                    "{name},{k},{rep},{secs:.6},{},{},{:.10}",
                    model.iterations,
                    model.converged,
                    model.final_objective()
                ));
            }
        }
    }
    Ok(rows)
}

fn cmd_bench(m: &ArgMatches) -> anyhow::Result<()> {
    let cfg = resolve_config(m)?;
    cfg.validate()?;
    let repeats = *m.get_one::<usize>("repeats").expect("has default");
    let data = load_dataset(&cfg)?;
    let mut csv = String::from("solver,k,repeat,seconds,iterations,converged,objective\n");
    for row in bench_rows(&cfg, &data, repeats.max(1))? {
        csv.push_str(&row);
        csv.push('\n');
    }
    match &cfg.output {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            write_file(&dir.join("bench.csv"), &csv)?;
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    if let Some(inner) = e.downcast_ref::<linkfact::Error>() {
        inner.kind()
    } else if e.chain().any(|c| c.is::<std::io::Error>()) {
        "io"
    } else {
        "cli"
    }
}

fn fail(kind: &str, message: String, code: u8) -> ExitCode {
    eprintln!("{}", json!({ "error": { "kind": kind, "message": message } }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            return fail("usage", e.render().to_string().trim().to_string(), 2);
        }
    };
    let outcome = match matches.subcommand() {
        Some(("generate", m)) => cmd_generate(m),
        Some(("split", m)) => cmd_split(m),
        Some(("run", m)) => cmd_run(m),
        Some(("eval", m)) => cmd_eval(m),
        Some(("bench", m)) => cmd_bench(m),
        _ => unreachable!("a subcommand is required"),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(error_kind(&e), format!("{e:#}"), 1),
    }
}
