use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use kinegest::evaluation::objective::{summarize, ObjectiveSummary};
use kinegest::evaluation::{
    fit, run_cross_subject, run_inverse, run_kfold, EvalConfig, EvalReport, InverseMode,
};
use kinegest::forest::{RandomForestModel, TrainConfig};
use kinegest::gesture::GestureClass;
use kinegest::synth::{synthesize_dataset, DatasetConfig};
use kinegest::telemetry::{read_dataset, write_dataset};
use kinegest::{FeatureTable, KinematicChain};
use kinegest_live::{replay, ClientMessage, Engine, ServerMessage, ServiceOptions};

use crate::{svg, Cli, Command, ForestArgs, Input, InverseArg, ProtocolArg};

pub fn run(cli: Cli) -> Result<()> {
    let chain = match &cli.chain {
        Some(path) => KinematicChain::from_file(path).with_context(|| format!("loading chain {}", path.display()))?,
        None => KinematicChain::panda(),
    };
    match cli.command {
        Command::Synth {
            participants,
            trials,
            seed,
            sample_rate,
            out,
        } => {
            if !(sample_rate > 0.0 && sample_rate.is_finite()) {
                bail!("sample rate {sample_rate} must be positive");
            }
            let config = DatasetConfig {
                chain,
                sample_rate,
                ..DatasetConfig::default()
            };
            let data = synthesize_dataset(participants, trials, seed, &config)?;
            write_dataset(&data, &out)?;
            println!(
                "wrote {} recordings ({participants} participants x 4 gestures x {trials} trials, seed {seed}) to {}",
                data.recordings().len(),
                out.display()
            );
        }
        Command::Features { data, out } => {
            let table = FeatureTable::from_recordings(read_dataset(&data)?.recordings());
            write_file(&out, |w| table.write_csv(w))?;
            println!("wrote {} feature rows to {}", table.len(), out.display());
        }
        Command::Train {
            input,
            seed,
            forest,
            out,
        } => {
            let table = load_table(&input)?;
            let config = forest_config(&forest, seed);
            let rows: Vec<_> = table.rows.iter().collect();
            let model = fit(&rows, &config)?;
            write_file(&out, |w| w.write_all(model.to_json().as_bytes()))?;
            println!(
                "trained {} trees on {} recordings (seed {seed}); model in {}",
                model.n_trees(),
                table.len(),
                out.display()
            );
        }
        Command::Eval {
            protocol,
            input,
            seed,
            folds,
            train_fraction,
            inverse_mode,
            forest,
            out,
        } => {
            let table = load_table(&input)?;
            let config = EvalConfig {
                forest: forest_config(&forest, 0),
            };
            let report = match protocol {
                ProtocolArg::Kfold => run_kfold(&table, folds.unwrap_or(5), seed, &config)?,
                ProtocolArg::Inverse => {
                    let mode = match inverse_mode {
                        InverseArg::Folds => InverseMode::Folds,
                        InverseArg::SingleDraw => InverseMode::SingleDraw,
                    };
                    run_inverse(&table, train_fraction, seed, mode, &config)?
                }
                ProtocolArg::CrossSubject => run_cross_subject(&table, folds.unwrap_or(2), seed, &config)?,
            };
            print_report(&report);
            if let Some(out) = out {
                write_file(&out, |w| w.write_all(report.to_json().as_bytes()))?;
            }
        }
        Command::Stats { measure, data, out } => {
            let dataset = read_dataset(&data)?;
            let summary = summarize(&dataset, &chain, measure)?;
            print_stats(&summary);
            if let Some(out) = out {
                let mut json = serde_json::to_string_pretty(&summary)?;
                json.push('\n');
                write_file(&out, |w| w.write_all(json.as_bytes()))?;
            }
        }
        Command::Report { eval, out } => {
            let text = fs::read_to_string(&eval).with_context(|| format!("reading {}", eval.display()))?;
            let report = EvalReport::from_json(&text).with_context(|| format!("parsing {}", eval.display()))?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let title = format!("{} ({}), macro-f1 {:.3}", report.protocol, report.parameters, report.mean_macro_f1);
            write_file(&out.join("confusion.csv"), |w| w.write_all(report.confusion.to_csv().as_bytes()))?;
            write_file(&out.join("confusion.svg"), |w| {
                w.write_all(svg::confusion(&report.confusion, &title).as_bytes())
            })?;
            println!("{title}");
            println!("wrote confusion.csv and confusion.svg to {}", out.display());
        }
        Command::Serve {
            model,
            addr,
            static_dir,
            stroke_log,
        } => {
            let engine = engine(&model, chain)?;
            if let Some(dir) = &stroke_log {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            let options = ServiceOptions { static_dir, stroke_log };
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(async {
                let listener = tokio::net::TcpListener::bind(addr)
                    .await
                    .with_context(|| format!("binding {addr}"))?;
                println!("listening on http://{}", listener.local_addr()?);
                kinegest_live::serve(listener, engine, options).await?;
                Ok::<_, anyhow::Error>(())
            })?;
        }
        Command::Replay { model, log, out } => {
            let engine = engine(&model, chain)?;
            let messages = read_log(&log)?;
            let replies = replay(engine, messages);
            let mut stroke = 0;
            for r in &replies {
                match r {
                    ServerMessage::Prediction {
                        label,
                        votes,
                        duration_s,
                        max_displacement_m,
                    } => {
                        stroke += 1;
                        println!(
                            "stroke {stroke}: {label} (votes LS/LW/HS/GL {}/{}/{}/{}, {duration_s:.2} s, {max_displacement_m:.3} m)",
                            votes[0], votes[1], votes[2], votes[3]
                        );
                    }
                    ServerMessage::Error { code, message } => println!("error {code:?}: {message}"),
                    ServerMessage::ArmState { .. } => {}
                }
            }
            if let Some(out) = out {
                write_file(&out, |w| {
                    for r in &replies {
                        writeln!(w, "{}", serde_json::to_string(r).expect("server messages serialize"))?;
                    }
                    Ok(())
                })?;
            }
        }
    }
    Ok(())
}

fn write_file(path: &Path, body: impl FnOnce(&mut fs::File) -> std::io::Result<()>) -> Result<()> {
    let mut file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    body(&mut file).with_context(|| format!("writing {}", path.display()))
}

fn load_table(input: &Input) -> Result<FeatureTable> {
    match (&input.data, &input.features) {
        (Some(dir), _) => Ok(FeatureTable::from_recordings(read_dataset(dir)?.recordings())),
        (None, Some(path)) => {
            let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
            FeatureTable::read_csv(file).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
        }
        (None, None) => unreachable!("clap requires one input"),
    }
}

fn forest_config(args: &ForestArgs, seed: u64) -> TrainConfig {
    TrainConfig {
        n_trees: args.trees,
        max_features: args.max_features,
        max_depth: args.max_depth,
        min_samples_leaf: args.min_samples_leaf,
        seed,
        ..TrainConfig::default()
    }
}

fn engine(model: &Path, chain: KinematicChain) -> Result<Arc<Engine>> {
    let text = fs::read_to_string(model).with_context(|| format!("reading {}", model.display()))?;
    let model = RandomForestModel::from_json(&text).with_context(|| format!("loading {}", model.display()))?;
    let mut engine = Engine::new(model);
    engine.chain = chain;
    Ok(Arc::new(engine))
}

fn read_log(path: &Path) -> Result<Vec<ClientMessage>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let msg = serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        out.push(msg);
    }
    Ok(out)
}

fn print_report(report: &EvalReport) {
    println!("{} ({}), seed {}", report.protocol, report.parameters, report.seed);
    for f in &report.folds {
        println!("  {:<40} macro-f1 {:.3}", f.description, f.macro_f1);
    }
    println!("mean macro-f1 {:.3}", report.mean_macro_f1);
}

fn print_stats(s: &ObjectiveSummary) {
    let unit = s.measure.unit();
    println!("{:?} ({unit}) over {} participants", s.measure, s.participants.len());
    println!("  gesture    median       IQR");
    for g in &s.gestures {
        println!("  {:<7} {:>9.3} {:>9.3}", g.gesture.to_string(), g.median, g.iqr);
    }
    let f = &s.friedman;
    println!(
        "Friedman chi2({}) = {:.3}, p = {:.3e} ({:?})",
        f.df.unwrap_or(0),
        f.statistic,
        f.p_raw,
        f.p_method
    );
    println!("pairwise Wilcoxon, Bonferroni over {} comparisons", s.pairwise.len());
    println!("  pair         W        Z        r     p raw    p corr");
    for p in &s.pairwise {
        let r = &p.result;
        println!(
            "  {:<7} {:>6.1} {:>8.3} {:>8.3} {:>9.3e} {:>9.3e}",
            pair(p.first, p.second),
            r.statistic,
            r.z.unwrap_or(f64::NAN),
            r.effect_size_r.unwrap_or(f64::NAN),
            r.p_raw,
            r.p_corrected
        );
    }
}

fn pair(a: GestureClass, b: GestureClass) -> String {
    format!("{a}-{b}")
}
