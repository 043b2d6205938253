//! Subcommand implementations. Every function returns a one-line error
//! string for `main` to print with the `error:` prefix (exit code 2).

use std::fs;
use std::path::{Path, PathBuf};

use wispike_core::csi::{
    compose_multi_action, composite_class_index, normalize_mean_subtract, read_csi_file,
    write_csi_file, BenchmarkSpec, DatasetManifest, Split, SynthShape,
};
use wispike_core::engine::encode_constant_rate;
use wispike_core::layers::{build_model, ActivityCounters, Layer, Model};
use wispike_core::objective::ProjectionHead;
use wispike_core::telemetry::{
    compare_energy, comparison_table_text, count_dynamic, energy_report_csv, energy_report_text,
    DenseBaseline,
};
use wispike_core::training::{
    evaluate, load_checkpoint, load_encoded_split, metrics_from_confusion, metrics_text,
    restore_into, Adam, EvalMetrics, TrainConfig, TrainOptions,
};

use crate::{
    ComposeArgs, EnergyArgs, EvalArgs, ExportFeaturesArgs, RatesArgs, SynthArgs, TrainArgs,
};

type CmdResult = Result<(), String>;

/// WISPIKE_SEED, when set, must parse as u64.
fn env_seed() -> Result<Option<u64>, String> {
    match std::env::var("WISPIKE_SEED") {
        Ok(text) => text
            .trim()
            .parse::<u64>()
            .map(Some)
            .map_err(|_| format!("WISPIKE_SEED must be an unsigned integer, got {text:?}")),
        Err(_) => Ok(None),
    }
}

/// Seed precedence for flag-driven subcommands: flag > WISPIKE_SEED > 7.
fn resolve_seed(flag: Option<u64>) -> Result<u64, String> {
    if let Some(s) = flag {
        return Ok(s);
    }
    Ok(env_seed()?.unwrap_or(7))
}

fn split_of(arg: &Option<String>) -> Split {
    match arg.as_deref() {
        Some("train") => Split::Train,
        _ => Split::Test,
    }
}

fn write_or_stdout(out: &Option<PathBuf>, content: &str) -> CmdResult {
    match out {
        Some(path) => {
            fs::write(path, content).map_err(|e| format!("cannot write {}: {e}", path.display()))
        }
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

/// Rebuilds the model and projection head a checkpoint was trained with,
/// restoring all parameters.
fn load_trained(path: &Path) -> Result<(TrainConfig, Model<f32>, ProjectionHead<f32>), String> {
    let ckpt = load_checkpoint(path).map_err(|e| e.to_string())?;
    let cfg: TrainConfig = toml::from_str(&ckpt.config_toml)
        .map_err(|e| format!("checkpoint {} carries an unreadable config: {e}", path.display()))?;
    let shape = [
        ckpt.input_shape[0] as usize,
        ckpt.input_shape[1] as usize,
        ckpt.input_shape[2] as usize,
    ];
    let mut model = build_model::<f32>(&cfg.model, shape, ckpt.n_class as usize, ckpt.seed)
        .map_err(|e| e.to_string())?;
    let tap = model
        .tap_layer
        .ok_or("checkpointed model has no projection tap")?;
    let tap_len = model.layers[tap].out_shape.len();
    let mut head = ProjectionHead::<f32>::new(tap_len, cfg.loss.projection_dim, ckpt.seed)
        .map_err(|e| e.to_string())?;
    let mut shapes: Vec<(String, usize)> = model
        .param_entries()
        .iter()
        .map(|e| (e.name.clone(), e.len))
        .collect();
    shapes.push(("head.weight".into(), head.weight.len()));
    shapes.push(("head.bias".into(), head.bias.len()));
    let mut adam = Adam::<f32>::new(&shapes, cfg.beta1, cfg.beta2, cfg.epsilon);
    restore_into(&ckpt, &mut model, &mut head, &mut adam).map_err(|e| e.to_string())?;
    Ok((cfg, model, head))
}

/// Loads the manifest named on the command line, falling back to the one the
/// checkpoint's config recorded.
fn manifest_for(
    flag: &Option<PathBuf>,
    cfg: &TrainConfig,
) -> Result<DatasetManifest, String> {
    let path = flag
        .clone()
        .or_else(|| cfg.dataset.manifest.clone())
        .ok_or("no dataset manifest: pass --manifest (the checkpoint config records none)")?;
    let manifest = DatasetManifest::load(&path).map_err(|e| e.to_string())?;
    manifest.validate().map_err(|e| e.to_string())?;
    Ok(manifest)
}

fn encoded_split_for(
    model: &Model<f32>,
    cfg: &TrainConfig,
    manifest: &DatasetManifest,
    split: Split,
) -> Result<Vec<wispike_core::training::EncodedSample<f32>>, String> {
    if manifest.class_count() != model.n_class {
        return Err(format!(
            "manifest enumerates {} classes but the checkpoint was trained on {}",
            manifest.class_count(),
            model.n_class
        ));
    }
    let (data, shape) = load_encoded_split::<f32>(manifest, split, cfg.model.time_steps)
        .map_err(|e| e.to_string())?;
    if shape != model.input_shape {
        return Err(format!(
            "dataset samples are {}x{}x{} but the checkpoint expects {}x{}x{}",
            shape[0],
            shape[1],
            shape[2],
            model.input_shape[0],
            model.input_shape[1],
            model.input_shape[2]
        ));
    }
    Ok(data)
}

fn confusion_csv(metrics: &EvalMetrics) -> String {
    let n = metrics.confusion.len();
    let mut out = String::from("true_class");
    for c in 0..n {
        out.push_str(&format!(",pred_{c}"));
    }
    out.push('\n');
    for (r, row) in metrics.confusion.iter().enumerate() {
        out.push_str(&r.to_string());
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

pub fn synth(args: SynthArgs) -> CmdResult {
    let seed = resolve_seed(args.seed)?;
    let spec = BenchmarkSpec {
        atom_count: args.atoms.unwrap_or(4),
        actions: args.actions.unwrap_or(1),
        per_class: args.per_class.unwrap_or(250),
        train_fraction: args.train_fraction.unwrap_or(0.8),
        seed,
        noise_sigma: args.noise_sigma.unwrap_or(0.05),
        shape: SynthShape {
            channels: args.channels.unwrap_or(3),
            height: args.height.unwrap_or(8),
            sample_rate: args.sample_rate.unwrap_or(32.0),
        },
        duration_s: args.duration.unwrap_or(1.0),
    };
    let manifest = wispike_core::csi::generate_benchmark(&spec, &args.out)
        .map_err(|e| e.to_string())?;
    println!(
        "wrote {} samples across {} classes to {}",
        manifest.entries.len(),
        manifest.class_count(),
        args.out.display()
    );
    Ok(())
}

pub fn compose(args: ComposeArgs) -> CmdResult {
    let samples = args
        .inputs
        .iter()
        .map(|p| read_csi_file(p).map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, _>>()?;
    let mut composed = compose_multi_action(&samples, args.width).map_err(|e| e.to_string())?;
    if let Some(n) = args.atom_count {
        if let Some(&bad) = composed.label.atoms.iter().find(|&&a| a >= n) {
            return Err(format!(
                "atom id {bad} does not fit a catalog of {n} actions"
            ));
        }
        composed.label.class_index = composite_class_index(&composed.label.atoms, n);
    }
    write_csi_file(&composed, &args.out).map_err(|e| e.to_string())?;
    println!(
        "wrote {} ({} packets wide, atoms {:?}, class {})",
        args.out.display(),
        composed.width,
        composed.label.atoms,
        composed.label.class_index
    );
    Ok(())
}

pub fn train(args: TrainArgs) -> CmdResult {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| format!("cannot read {}: {e}", args.config.display()))?;
    let mut cfg: TrainConfig = toml::from_str(&text)
        .map_err(|e| format!("bad config {}: {e}", args.config.display()))?;

    // Seed precedence: flag > config file > WISPIKE_SEED > default.
    let file_sets_seed = text
        .parse::<toml::Table>()
        .map(|doc| doc.contains_key("seed"))
        .unwrap_or(false);
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    } else if !file_sets_seed {
        if let Some(seed) = env_seed()? {
            cfg.seed = seed;
        }
    }
    if let Some(epochs) = args.epochs {
        cfg.epochs = epochs;
    }
    if let Some(batch) = args.batch_size {
        cfg.batch_size = batch;
    }
    if let Some(lr) = args.learning_rate {
        cfg.learning_rate = lr;
    }
    if let Some(manifest) = args.manifest {
        cfg.dataset.manifest = Some(manifest);
    }

    fs::create_dir_all(&args.out)
        .map_err(|e| format!("cannot create {}: {e}", args.out.display()))?;
    let ckpt_path = args.out.join("checkpoint.wspk");
    let opts = TrainOptions {
        checkpoint_path: Some(ckpt_path.clone()),
        history_path: Some(args.out.join("history.csv")),
        resume: args.resume.then(|| ckpt_path.clone()),
        verbose: !args.quiet,
    };
    let run = wispike_core::training::train(&cfg, &opts).map_err(|e| e.to_string())?;
    println!(
        "trained {} epochs | train acc {:.4} | test acc {:.4} | artifacts in {}",
        cfg.epochs,
        run.train_metrics.accuracy,
        run.test_metrics.accuracy,
        args.out.display()
    );
    Ok(())
}

pub fn eval(args: EvalArgs) -> CmdResult {
    let (cfg, model, _head) = load_trained(&args.ckpt)?;
    let manifest = manifest_for(&args.manifest, &cfg)?;
    let split = split_of(&args.split);
    let data = encoded_split_for(&model, &cfg, &manifest, split)?;
    let metrics = evaluate(&model, &data).map_err(|e| e.to_string())?;
    print!("{}", metrics_text(&metrics));
    let out = args.out.unwrap_or_else(|| PathBuf::from("confusion.csv"));
    fs::write(&out, confusion_csv(&metrics))
        .map_err(|e| format!("cannot write {}: {e}", out.display()))?;
    println!("confusion matrix written to {}", out.display());
    Ok(())
}

pub fn rates(args: RatesArgs) -> CmdResult {
    let history_path = args.rundir.join("history.csv");
    let history = fs::read_to_string(&history_path)
        .map_err(|e| format!("cannot read {}: {e}", history_path.display()))?;
    let (_, model, _) = load_trained(&args.rundir.join("checkpoint.wspk"))?;
    let names: Vec<&str> = model
        .layers
        .iter()
        .filter(|l| matches!(l.op, Layer::Neuron(_)))
        .map(|l| l.name.as_str())
        .collect();

    let mut lines = history.lines();
    let header = lines.next().ok_or("history.csv is empty")?;
    let rate_cols = header.split(',').skip(4).count();
    if rate_cols != names.len() {
        return Err(format!(
            "history.csv has {rate_cols} rate columns but the model has {} spiking layers",
            names.len()
        ));
    }
    let mut out = String::from("epoch,split,layer,rate\n");
    for (ln, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 + names.len() {
            return Err(format!(
                "history.csv line {}: expected {} fields, got {}",
                ln + 2,
                4 + names.len(),
                fields.len()
            ));
        }
        for (name, rate) in names.iter().zip(&fields[4..]) {
            out.push_str(&format!("{},{},{name},{rate}\n", fields[0], fields[1]));
        }
    }
    write_or_stdout(&args.out, &out)
}

pub fn energy(args: EnergyArgs) -> CmdResult {
    let (cfg, model, _head) = load_trained(&args.ckpt)?;
    let manifest = manifest_for(&args.manifest, &cfg)?;
    let split = split_of(&args.split);
    let data = encoded_split_for(&model, &cfg, &manifest, split)?;

    let mut counters = ActivityCounters::for_model(&model);
    let mut confusion = vec![vec![0u64; model.n_class]; model.n_class];
    for s in &data {
        let out = model
            .forward_counted(&s.x, &mut counters)
            .map_err(|e| e.to_string())?;
        confusion[s.label][out.prediction] += 1;
    }
    let accuracy = metrics_from_confusion(confusion).accuracy;
    let mut report = count_dynamic(&model, &counters).map_err(|e| e.to_string())?;
    report.accuracy = Some(accuracy);

    write_or_stdout(&args.out, &energy_report_csv(&report))?;
    if args.out.is_some() {
        println!(
            "energy CSV written to {}",
            args.out.as_ref().unwrap().display()
        );
    }
    if args.baseline {
        let baseline = DenseBaseline::from_model(&model).count(report.samples);
        let mut cmp = compare_energy(&report, &baseline);
        if args.paper_convention {
            cmp.rows[0].energy_pj = report.energy_pj_acs_only_per_sample();
        }
        println!();
        print!("{}", comparison_table_text(&cmp));
        if args.paper_convention {
            println!("accounting: spiking row charged for accumulate operations only");
        }
    } else if args.out.is_some() {
        print!("{}", energy_report_text(&report));
    }
    Ok(())
}

pub fn export_features(args: ExportFeaturesArgs) -> CmdResult {
    let (cfg, model, _head) = load_trained(&args.ckpt)?;
    let sample = read_csi_file(&args.sample).map_err(|e| e.to_string())?;
    if [sample.channels, sample.height, sample.width] != model.input_shape {
        return Err(format!(
            "sample {} is {}x{}x{} but the checkpoint expects {}x{}x{}",
            args.sample.display(),
            sample.channels,
            sample.height,
            sample.width,
            model.input_shape[0],
            model.input_shape[1],
            model.input_shape[2]
        ));
    }
    let layer = match args.layer.parse::<usize>() {
        Ok(idx) => idx,
        Err(_) => model
            .layers
            .iter()
            .position(|l| l.name == args.layer)
            .ok_or_else(|| {
                let known: Vec<&str> = model.layers.iter().map(|l| l.name.as_str()).collect();
                format!(
                    "no layer named {:?}; layers are {}",
                    args.layer,
                    known.join(", ")
                )
            })?,
    };
    let norm = normalize_mean_subtract(&sample).map_err(|e| e.to_string())?;
    let x = encode_constant_rate(
        &norm.values,
        &[sample.channels, sample.height, sample.width],
        cfg.model.time_steps,
    )
    .map_err(|e| e.to_string())?;
    let (_, captured) = model.forward_captured(&x, layer).map_err(|e| e.to_string())?;

    let n = captured.slice_len();
    let mut out = String::from("t");
    for i in 0..n {
        out.push_str(&format!(",f{i}"));
    }
    out.push('\n');
    for t in 0..captured.steps() {
        out.push_str(&t.to_string());
        for v in captured.slice(t) {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    write_or_stdout(&args.out, &out)
}
