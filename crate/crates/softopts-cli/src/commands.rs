//! Subcommand implementations.

use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use softopts::config::{ResolvedConfig, RunConfig};
use softopts::envs::{taxi, Direction, GridLayout, TaxiState};
use softopts::nn::checkpoint::Checkpoint;
use softopts::nn::heads::{argmax, sigmoid, softmax};
use softopts::nn::store::ParamStore;
use softopts::policy::{
    ArchConfig, Encoder, Features, PolicyMode, PosteriorPolicy, SharedPrior, TermPrior,
};
use softopts::trainer::{read_jsonl, stream_rng, write_jsonl, Trainer};
use softopts::transfer::{
    curve_from_metrics, evaluate_policy, run_experiment, transfer_train, Variant, VariantCurves,
};
use softopts::{Error, Result};

use crate::svg;

fn load_resolved(config: &Path) -> Result<ResolvedConfig> {
    RunConfig::load(config)?.resolve()
}

fn dump_config(resolved: &ResolvedConfig) -> Result<()> {
    println!("{}", resolved.resolved.to_toml_string()?);
    Ok(())
}

pub fn print_config(config: Option<&Path>, protocol: Option<&str>) -> Result<()> {
    let cfg = match (config, protocol) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(name)) => RunConfig {
            protocol: Some(name.to_string()),
            ..Default::default()
        },
        (None, None) => {
            return Err(Error::config("print-config needs --config or --protocol"))
        }
    };
    dump_config(&cfg.resolve()?)
}

pub fn train(config: &Path, out_dir: Option<PathBuf>, print_only: bool) -> Result<()> {
    let resolved = load_resolved(config)?;
    if print_only {
        return dump_config(&resolved);
    }
    let out = out_dir.unwrap_or_else(|| resolved.out_dir.clone());
    std::fs::create_dir_all(&out)?;

    let plan = &resolved.plan;
    let mut cfg = plan.train_cfg.clone();
    cfg.checkpoint_dir = Some(out.clone());
    let arch = softopts::transfer::resolve_arch(&plan.arch_template, &plan.tasks, false)?;
    log::info!(
        "training {} on {} tasks for {} frames/task",
        plan.protocol.name(),
        plan.tasks.train_tasks.len(),
        cfg.total_frames_per_task
    );
    let mut trainer = Trainer::fresh(
        plan.tasks.train_tasks.clone(),
        plan.tasks.train_layout.clone(),
        arch,
        plan.alpha,
        false,
        PolicyMode::training(),
        plan.train_objective,
        cfg,
    )?;
    let outcome = trainer.train()?;
    let metrics_path = out.join("train_metrics.jsonl");
    write_jsonl(&outcome.metrics, &metrics_path)?;
    log::info!("metrics: {}", metrics_path.display());
    if let Some(ckpt) = outcome.final_checkpoint {
        log::info!("final checkpoint: {}", ckpt.display());
        println!("{}", ckpt.display());
    }
    Ok(())
}

pub fn transfer(
    config: &Path,
    prior: Option<&Path>,
    variant_override: &[String],
    out_dir: Option<PathBuf>,
    print_only: bool,
) -> Result<()> {
    let resolved = load_resolved(config)?;
    if print_only {
        return dump_config(&resolved);
    }
    let out = out_dir.unwrap_or_else(|| resolved.out_dir.clone());
    std::fs::create_dir_all(&out)?;
    let plan = &resolved.plan;

    let variants: Vec<Variant> = if variant_override.is_empty() {
        plan.variants.clone()
    } else {
        variant_override
            .iter()
            .map(|s| Variant::parse(s))
            .collect::<Result<_>>()?
    };
    let checkpoint = match prior {
        Some(path) => Some(Checkpoint::load(path)?),
        None => None,
    };

    for variant in variants {
        let mut cfg = plan.transfer_cfg.clone();
        let variant_dir = out.join(variant.name());
        cfg.checkpoint_dir = Some(variant_dir.clone());
        let arch = softopts::transfer::resolve_arch(&plan.arch_template, &plan.tasks, variant.plus_action())
            .map(|mut a| {
                if variant.distral_mode() {
                    a.option_count = 1;
                }
                a
            })?;
        log::info!(
            "transfer `{}` on {} tasks for {} frames/task",
            variant.name(),
            plan.tasks.transfer_tasks.len(),
            cfg.total_frames_per_task
        );
        let result = transfer_train(
            checkpoint.as_ref(),
            variant,
            plan.tasks.transfer_tasks.clone(),
            plan.tasks.transfer_layout.clone(),
            &arch,
            plan.alpha,
            plan.transfer_objective,
            cfg,
        )?;
        std::fs::create_dir_all(&variant_dir)?;
        write_jsonl(&result.outcome.metrics, &variant_dir.join("metrics.jsonl"))?;
        let curves = VariantCurves::from_curves(
            plan.protocol.name(),
            variant.name(),
            std::slice::from_ref(&result.curve),
        );
        curves.save(&variant_dir.join("curve.json"))?;
        log::info!(
            "`{}` final mean return {:.3}, success rate {:.2}",
            variant.name(),
            result.final_eval.mean_return,
            result.final_eval.success_rate
        );
    }
    Ok(())
}

pub fn experiment(config: &Path, out_dir: Option<PathBuf>, print_only: bool) -> Result<()> {
    let resolved = load_resolved(config)?;
    if print_only {
        return dump_config(&resolved);
    }
    let out = out_dir.unwrap_or_else(|| resolved.out_dir.clone());
    std::fs::create_dir_all(&out)?;
    let result = run_experiment(&resolved.plan)?;
    for curves in &result.curves {
        curves.save(&out.join(format!("curve_{}.json", curves.variant)))?;
    }
    for (i, prior) in result.priors.iter().enumerate() {
        prior.save(&out.join(format!("prior_seed{}.json", resolved.plan.seeds[i])))?;
    }
    if !result.diversity.is_empty() {
        let text = serde_json::to_string_pretty(&result.diversity)
            .map_err(|e| Error::format(e.to_string()))?;
        std::fs::write(out.join("diversity.json"), text)?;
    }
    // one-line summary per variant
    for (variant, runs) in &result.runs {
        let mut finals: Vec<f64> = runs.iter().map(|r| r.final_eval.mean_return).collect();
        let med = softopts::transfer::median(&mut finals);
        println!(
            "{}: median final return {:.3} over {} seeds",
            variant.name(),
            med,
            runs.len()
        );
    }
    log::info!("experiment artifacts in {}", out.display());
    Ok(())
}

struct LoadedPolicy {
    store: ParamStore,
    enc: Encoder,
    posteriors: Vec<PosteriorPolicy>,
    mode: PolicyMode,
    arch: ArchConfig,
}

fn load_policy(path: &Path) -> Result<LoadedPolicy> {
    let ckpt = Checkpoint::load(path)?;
    let arch: ArchConfig = serde_json::from_value(ckpt.meta["arch"].clone())
        .map_err(|e| Error::config(format!("checkpoint has no architecture metadata: {e}")))?;
    let task_count = ckpt.meta["task_count"].as_u64().unwrap_or(0) as usize;
    let distral = ckpt.meta["distral"].as_bool().unwrap_or(false);
    let mut store = ParamStore::new();
    ckpt.restore_all(&mut store)?;
    let enc = Encoder::bind(&store, &arch)?;
    let mut posteriors = Vec::new();
    for i in 0..task_count {
        posteriors.push(PosteriorPolicy::bind(&store, &arch, i)?);
    }
    Ok(LoadedPolicy {
        store,
        enc,
        posteriors,
        mode: PolicyMode {
            term_prior: TermPrior::Learned,
            distral,
        },
        arch,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn eval(
    config: &Path,
    checkpoint: &Path,
    task_index: usize,
    transfer_tasks: bool,
    episodes: usize,
    sampled: bool,
    seed: u64,
) -> Result<()> {
    let resolved = load_resolved(config)?;
    let policy = load_policy(checkpoint)?;
    let (tasks, layout) = if transfer_tasks {
        (
            &resolved.plan.tasks.transfer_tasks,
            resolved.plan.tasks.transfer_layout.clone(),
        )
    } else {
        (
            &resolved.plan.tasks.train_tasks,
            resolved.plan.tasks.train_layout.clone(),
        )
    };
    let task = tasks.get(task_index).ok_or_else(|| {
        Error::usage(format!(
            "task index {task_index} out of range ({} tasks)",
            tasks.len()
        ))
    })?;
    let posterior = policy.posteriors.get(task_index).ok_or_else(|| {
        Error::usage(format!(
            "checkpoint holds {} posteriors, task {task_index} requested",
            policy.posteriors.len()
        ))
    })?;
    let mut rng: ChaCha8Rng = stream_rng(seed, 3);
    let stats = evaluate_policy(
        &policy.store,
        &policy.enc,
        posterior,
        task,
        layout,
        false,
        policy.mode,
        episodes,
        !sampled,
        &mut rng,
    )?;
    println!(
        "{}",
        serde_json::json!({
            "task_index": task_index,
            "episodes": episodes,
            "greedy": !sampled,
            "mean_return": stats.mean_return,
            "success_rate": stats.success_rate,
        })
    );
    Ok(())
}

pub fn plot(inputs: &[PathBuf], out: &Path, title: &str) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::usage("plot needs at least one metrics or curve file"));
    }
    let mut series = Vec::new();
    for path in inputs {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| path.display().to_string());
        let text = std::fs::read_to_string(path)?;
        let looks_like_curve = text.trim_start().starts_with('{') && text.contains("\"median\"");
        if looks_like_curve {
            let curve = VariantCurves::load(path)?;
            let points: Vec<(f64, f64)> = curve
                .frames
                .iter()
                .zip(curve.median.iter())
                .map(|(&f, &m)| (f as f64, m))
                .collect();
            let band: Vec<(f64, f64, f64)> = curve
                .frames
                .iter()
                .zip(curve.median.iter().zip(curve.std.iter()))
                .map(|(&f, (&m, &s))| (f as f64, m - s, m + s))
                .collect();
            series.push(svg::Series {
                label: format!("{} ({})", curve.variant, stem),
                points,
                band,
            });
        } else {
            let records = read_jsonl(path)?;
            let eval_points: Vec<(f64, f64)> = records
                .iter()
                .filter_map(|r| r.eval_return.map(|v| (r.frames_per_task as f64, v)))
                .collect();
            let points = if eval_points.is_empty() {
                records
                    .iter()
                    .filter_map(|r| r.mean_return.map(|v| (r.frames_per_task as f64, v)))
                    .collect()
            } else {
                eval_points
            };
            series.push(svg::Series {
                label: stem,
                points,
                band: Vec::new(),
            });
        }
    }
    let doc = svg::line_plot(&series, title, "frames per task", "mean return");
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(out, doc)?;
    log::info!("wrote {}", out.display());
    Ok(())
}

pub fn inspect_taxi(checkpoint: &Path, out: &Path, layout_ref: &str, arrow_floor: f64) -> Result<()> {
    let policy = load_policy(checkpoint)?;
    let layout = GridLayout::resolve(layout_ref)?;
    if policy.arch.obs_dim != taxi::taxi_obs_dim(&layout, false) {
        return Err(Error::config(format!(
            "checkpoint expects {}-dim observations; layout `{}` produces {} \
             (directional checkpoints are not supported here)",
            policy.arch.obs_dim,
            layout.id,
            taxi::taxi_obs_dim(&layout, false)
        )));
    }
    let store = &policy.store;
    let prior = SharedPrior::bind(store, &policy.arch, 0.95)?;

    let mut panels = Vec::new();
    for option in 0..policy.arch.option_count {
        for has_passenger in [false, true] {
            let mut cells = Vec::new();
            for &loc in layout.locations() {
                let state = TaxiState {
                    loc,
                    facing: Direction::N,
                    has_passenger,
                    steps: 0,
                };
                let obs = taxi::taxi_observation(&layout, &state, false);
                let mut fc = Features::new(&policy.enc, store, &obs)?;
                let latent = fc.latent(option)?.to_vec();
                let probs = softmax(&prior.intra.forward(store, &latent)?);
                let best = argmax(&probs);
                let term_prob = sigmoid(prior.term.forward(store, &latent)?[0]);
                let special = layout.special_cells.iter().position(|&c| c == loc);
                cells.push(svg::CellGlyph {
                    x: loc.0,
                    y: loc.1,
                    action: best,
                    action_prob: probs[best],
                    term_prob,
                    special,
                });
            }
            panels.push(svg::TaxiPanel {
                title: format!(
                    "option {option}, passenger {}",
                    if has_passenger { "on board" } else { "waiting" }
                ),
                cells,
            });
        }
    }
    let walls: Vec<_> = layout.walls().copied().collect();
    let doc = svg::taxi_grid(&panels, layout.width, layout.height, &walls, arrow_floor, 2);
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(out, doc)?;
    log::info!("wrote {}", out.display());
    Ok(())
}

