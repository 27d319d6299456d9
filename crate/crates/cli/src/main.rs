use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Arg, ArgAction, ArgMatches, Command};

use mover::config::{TrainConfig, KEYS};
use mover::eval::{
    cross_modal_generalization, embed_all, evaluate_directions, run_ablation, GroundTruth, RetrievalResult,
};
use mover::gradcheck::{geometry_max_error, objective_max_error, small_problem};
use mover::io;
use mover::model::{generate_synthetic, LinearEncoder, SyntheticDataset};
use mover::objective::{train, TrainState};
use mover::transport::anchored_plans;

const GRADCHECK_LIMIT: f64 = 1e-4;
const RECALL_KS: [usize; 3] = [1, 5, 10];

fn cli() -> Command {
    let mut cmd = Command::new("mover")
        .about("Optimal-transport matching with volume alignment on synthetic multimodal data")
        .subcommand_required(true)
        .arg(
            Arg::new("config")
                .long("config")
                .global(true)
                .value_name("FILE")
                .help("key=value config file; flags override its values"),
        )
        .arg(
            Arg::new("out")
                .long("out")
                .global(true)
                .value_name("DIR")
                .env("MOVER_OUT")
                .default_value("out")
                .help("Directory for all artifacts"),
        );
    for key in KEYS {
        let flag = key.replace('_', "-");
        let mut arg = Arg::new(*key).long(flag.clone()).global(true).value_name("VALUE");
        if flag != *key {
            arg = arg.alias(*key);
        }
        cmd = cmd.arg(arg.help(format!("Override config `{key}`")));
    }
    let seeds = Arg::new("seeds")
        .long("seeds")
        .value_delimiter(',')
        .default_value("0,1,2")
        .value_parser(clap::value_parser!(u64))
        .action(ArgAction::Append)
        .help("Comma-separated seeds");
    cmd.subcommand(Command::new("train").about("Train encoders; writes metrics, weights, recall"))
        .subcommand(Command::new("eval").about("Score saved weights; writes recall"))
        .subcommand(
            Command::new("ablate")
                .about("Four-variant component ablation")
                .arg(seeds.clone()),
        )
        .subcommand(
            Command::new("crossmodal")
                .about("Held-out modality generalization")
                .arg(seeds),
        )
        .subcommand(Command::new("export-embeddings").about("Embeddings and transport plans of saved weights as CSV"))
        .subcommand(Command::new("gradcheck").about("Analytic gradients against finite differences"))
}

fn load_config(m: &ArgMatches) -> Result<TrainConfig> {
    let mut config = TrainConfig::default();
    if let Some(path) = m.get_one::<String>("config") {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {path}"))?;
        config.apply_text(&text)?;
    }
    for key in KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            config.set(key, v)?;
        }
    }
    config.validate()?;
    Ok(config)
}

/// Create `dir` and prove it accepts files.
fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("output directory {} is not writable", dir.display()))?;
    let probe = dir.join(".mover-write-probe");
    fs::write(&probe, b"").with_context(|| format!("output directory {} is not writable", dir.display()))?;
    fs::remove_file(&probe).ok();
    Ok(())
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn final_recall(
    encoders: &[LinearEncoder],
    dataset: &SyntheticDataset,
    config: &TrainConfig,
) -> Result<Vec<RetrievalResult>> {
    let modalities: Vec<usize> = (0..config.k).collect();
    let emb = embed_all(encoders, dataset, &modalities)?;
    let ks: Vec<usize> = RECALL_KS.into_iter().filter(|&k| k <= dataset.len()).collect();
    Ok(evaluate_directions(
        &emb,
        &GroundTruth::for_dataset(config.retrieval, dataset),
        &ks,
    )?)
}

fn print_recall(results: &[RetrievalResult]) {
    for r in results {
        let cols: Vec<String> = r.recall_at.iter().map(|(k, v)| format!("R@{k}={v:.4}")).collect();
        println!("{:<5} {}", r.direction(), cols.join(" "));
    }
}

fn load_encoders(out: &Path, config: &TrainConfig) -> Result<Vec<LinearEncoder>> {
    let path = out.join(io::WEIGHTS_FILE);
    let encoders = io::load_weights(&path).with_context(|| format!("loading {}", path.display()))?;
    let shape = encoders.first().map(|e| (e.output_dim(), e.input_dim()));
    if encoders.len() != config.k || shape != Some((config.d, config.d_in)) {
        bail!(
            "{} holds {} encoders of shape {:?}, config expects {} of ({}, {})",
            path.display(),
            encoders.len(),
            shape,
            config.k,
            config.d,
            config.d_in
        );
    }
    Ok(encoders)
}

fn cmd_train(config: &TrainConfig, out: &Path) -> Result<()> {
    let dataset = generate_synthetic(config.synthetic())?;
    let run = train(TrainState::new(config, &dataset)?, &dataset, config)?;
    write(out, io::CONFIG_FILE, &config.to_text())?;
    write(out, io::METRICS_FILE, &io::metrics_csv(&run.history))?;
    io::save_weights(&out.join(io::WEIGHTS_FILE), &run.state.encoders)?;
    let recall = final_recall(&run.state.encoders, &dataset, config)?;
    write(out, io::RECALL_FILE, &io::recall_csv(&recall))?;
    if let (Some(first), Some(last)) = (run.history.first(), run.history.last()) {
        println!(
            "steps={} mover_loss {:.6} -> {:.6}  total {:.6} -> {:.6}",
            run.history.len(),
            first.mover_loss,
            last.mover_loss,
            first.total,
            last.total
        );
    }
    print_recall(&recall);
    Ok(())
}

fn cmd_eval(config: &TrainConfig, out: &Path) -> Result<()> {
    let dataset = generate_synthetic(config.synthetic())?;
    let encoders = load_encoders(out, config)?;
    let recall = final_recall(&encoders, &dataset, config)?;
    write(out, io::RECALL_FILE, &io::recall_csv(&recall))?;
    print_recall(&recall);
    Ok(())
}

fn seeds(m: &ArgMatches) -> Vec<u64> {
    m.get_many::<u64>("seeds")
        .map(|s| s.copied().collect())
        .unwrap_or_default()
}

fn cmd_ablate(config: &TrainConfig, out: &Path, seeds: &[u64]) -> Result<()> {
    let report = run_ablation(config, seeds)?;
    write(out, io::ABLATION_FILE, &io::ablation_csv(&report))?;
    print!("{}", report.summary());
    Ok(())
}

fn cmd_crossmodal(config: &TrainConfig, out: &Path, seeds: &[u64]) -> Result<()> {
    let report = cross_modal_generalization(config, seeds)?;
    write(out, io::CROSSMODAL_FILE, &io::crossmodal_csv(&report))?;
    print!("{}", report.summary());
    Ok(())
}

fn cmd_export(config: &TrainConfig, out: &Path) -> Result<()> {
    let dataset = generate_synthetic(config.synthetic())?;
    let encoders = load_encoders(out, config)?;
    let modalities: Vec<usize> = (0..config.k).collect();
    let emb = embed_all(&encoders, &dataset, &modalities)?;
    write(out, io::EMBEDDINGS_FILE, &io::embeddings_csv(&emb, &dataset.labels))?;

    let state = TrainState::with_encoders(encoders, &modalities, config.anchor - 1)?;
    let ordered = state.embed(&dataset)?;
    for plan in anchored_plans(&ordered, &config.sinkhorn())? {
        let name = format!("plan_{}_{}.csv", plan.source_modality + 1, plan.target_modality + 1);
        write(out, &name, &io::plan_csv(&plan))?;
        println!(
            "{name}: {} iterations, marginal error {:e}",
            plan.iterations, plan.marginal_error
        );
    }
    println!(
        "{}: {} rows",
        io::EMBEDDINGS_FILE,
        emb.iter().map(|e| e.len()).sum::<usize>()
    );
    Ok(())
}

fn cmd_gradcheck(config: &TrainConfig) -> Result<bool> {
    let geometry = geometry_max_error(config.seed, 12)?;
    let objective = objective_max_error(&small_problem(config))?;
    println!("volume gradient max relative error: {geometry:.3e}");
    println!("total loss gradient max relative error: {objective:.3e}");
    Ok(geometry < GRADCHECK_LIMIT && objective < GRADCHECK_LIMIT)
}

fn run(m: &ArgMatches) -> Result<bool> {
    let (name, sub) = m.subcommand().expect("subcommand required");
    let config = load_config(sub)?;
    if name == "gradcheck" {
        return cmd_gradcheck(&config);
    }
    let out = PathBuf::from(sub.get_one::<String>("out").expect("has default"));
    prepare_out(&out)?;
    match name {
        "train" => cmd_train(&config, &out)?,
        "eval" => cmd_eval(&config, &out)?,
        "ablate" => cmd_ablate(&config, &out, &seeds(sub))?,
        "crossmodal" => cmd_crossmodal(&config, &out, &seeds(sub))?,
        "export-embeddings" => cmd_export(&config, &out)?,
        other => unreachable!("unhandled subcommand {other}"),
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(&cli().get_matches()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
