use std::collections::BTreeSet;
use std::io::Write;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde_json::json;
use weightscape::checkpoint::{self, compute_stats, diff, synthesize};
use weightscape::manifest::parse_block_set;
use weightscape::metrics::{divergence_curve, stats_match_report};
use weightscape::perturb::{apply, sweep, MaskSpec};
use weightscape::render::{latent_at, render_grid, GridProvenance};
use weightscape::{
    BlockId, Checkpoint, GeneratorGraph, GraphConfig, InitScheme, ParamKind, PerturbationPlan, RenderRequest,
    StatsMode, Variant,
};
use weightscape_service::{AppState, Pick, ServiceConfig};

use crate::{BaseArgs, Command, Failure, GridArgs, KindArgs, Outcome, StatsArgs};

const DEFAULT_GRAPH: &str = "tiny64";

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn data(e: impl std::fmt::Display) -> Failure {
    Failure::Data(e.to_string())
}

fn graph_for(name: &str) -> Result<GeneratorGraph, Failure> {
    let cfg = GraphConfig::resolve(name).map_err(usage)?;
    GeneratorGraph::build(cfg).map_err(usage)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, Failure> {
    checkpoint::load(path).map_err(|e| data(format!("{}: {e}", path.display())))
}

/// Loads a checkpoint and the graph it runs on, in canonical entry order.
fn load_bound(path: &Path, graph: Option<&str>) -> Result<(GeneratorGraph, Checkpoint), Failure> {
    let ck = load_checkpoint(path)?;
    let name = graph
        .map(str::to_string)
        .or_else(|| ck.graph_name().map(str::to_string))
        .unwrap_or_else(|| DEFAULT_GRAPH.into());
    let graph = graph_for(&name)?;
    let ck = ck.canonicalize(&graph);
    graph
        .bind(&ck)
        .map_err(|e| data(format!("{}: {e}", path.display())))?;
    Ok((graph, ck))
}

fn load_base(args: &BaseArgs) -> Result<(GeneratorGraph, Checkpoint), Failure> {
    load_bound(&args.base, args.graph.as_deref())
}

fn kinds(args: &KindArgs, default: BTreeSet<ParamKind>) -> Result<BTreeSet<ParamKind>, Failure> {
    match &args.kinds {
        None => Ok(default),
        Some(list) => list.iter().map(|k| k.parse::<ParamKind>().map_err(usage)).collect(),
    }
}

fn stats_mode(args: &StatsArgs) -> StatsMode {
    if args.whole_entry_stats {
        StatsMode::WholeEntry
    } else {
        StatsMode::PerPixel
    }
}

fn blocks(text: &str) -> Result<BTreeSet<BlockId>, Failure> {
    parse_block_set(text).map_err(usage)
}

fn seed_range(text: &str) -> Result<RangeInclusive<u64>, Failure> {
    let bad = || usage(format!("seed range must look like `0..10`, got `{text}`"));
    let (a, b) = text.split_once("..").ok_or_else(bad)?;
    let (a, b) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
    Ok(a..=b)
}

fn save(ck: &Checkpoint, path: &Path) -> Outcome {
    checkpoint::save(ck, path).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Outcome {
    std::fs::write(path, bytes).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Outcome {
    std::fs::create_dir_all(path).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn emit(text: &str) {
    // a closed pipe downstream is not an error for us
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn apply_plan(base: &Checkpoint, plan: &PerturbationPlan) -> Result<Checkpoint, Failure> {
    let derived = apply(base, plan).map_err(usage)?;
    for w in &derived.warnings {
        eprintln!("warning: {w}");
    }
    Ok(derived.checkpoint)
}

fn sidecar(png: &Path) -> PathBuf {
    png.with_extension("provenance.json")
}

/// Renders `variants` with `grid` rows and writes the PNG plus its provenance.
fn write_grid(
    graph: &GeneratorGraph,
    variants: Vec<(Variant, Option<String>)>,
    grid: &GridArgs,
    out: &Path,
) -> Result<serde_json::Value, Failure> {
    if grid.count == 0 {
        return Err(usage("--count must be at least 1"));
    }
    let classes = graph.config().num_classes;
    if let Some(c) = grid.classes.iter().find(|&&c| c >= classes) {
        return Err(usage(format!("class {c} out of range for {classes} classes")));
    }
    let sources: Vec<Option<String>> = variants.iter().map(|(_, s)| s.clone()).collect();
    let request = RenderRequest::seeded(
        grid.latent_seed,
        grid.count,
        grid.classes.clone(),
        variants.into_iter().map(|(v, _)| v).collect(),
    );
    let image = render_grid(graph, &request).map_err(data)?;
    let mut provenance = GridProvenance::new(graph, &request);
    for (col, source) in provenance.columns.iter_mut().zip(sources) {
        col.source = source;
    }
    write_file(out, image.encode_png().map_err(data)?)?;
    write_file(&sidecar(out), provenance.to_json())?;
    Ok(json!({
        "grid": out,
        "provenance": sidecar(out),
        "rows": image.row_count(),
        "cols": image.col_count(),
        "width": image.width(),
        "height": image.height(),
    }))
}

pub(crate) fn run(command: Command) -> Outcome {
    match command {
        Command::SynthCheckpoint {
            config,
            seed,
            scheme,
            out,
        } => {
            let cfg = GraphConfig::resolve(&config).map_err(usage)?;
            let scheme: InitScheme = scheme.parse().map_err(usage)?;
            let ck = synthesize(&cfg, seed, scheme).map_err(data)?;
            save(&ck, &out)?;
            emit(&format!(
                "{}\n",
                json!({"out": out, "graph": cfg.name, "parameters": ck.parameter_count(), "checksum": format!("{:016x}", ck.checksum())})
            ));
            Ok(())
        }

        Command::Perturb {
            base,
            alpha,
            seed,
            seeds,
            kinds: k,
            out,
            outdir,
        } => {
            let (_, ck) = load_base(&base)?;
            let mut plan = PerturbationPlan::multiplicative(alpha, seed);
            plan.kinds = kinds(&k, ParamKind::trainable())?;
            plan.validate().map_err(usage)?;
            match (seeds, out, outdir) {
                (Some(range), _, Some(dir)) => {
                    let items = sweep(&ck, &plan, seed_range(&range)?).map_err(usage)?;
                    create_dir(&dir)?;
                    for item in items {
                        let path = dir.join(format!("seed{}.wsc", item.seed));
                        save(&item.checkpoint, &path)?;
                        emit(&format!("{}\n", json!({"out": path, "plan": item.plan_text})));
                    }
                    Ok(())
                }
                (None, Some(out), _) => {
                    save(&apply_plan(&ck, &plan)?, &out)?;
                    emit(&format!("{}\n", json!({"out": out, "plan": plan.to_string()})));
                    Ok(())
                }
                _ => Err(usage("give --out, or --seeds with --outdir")),
            }
        }

        Command::RandomizeBlock {
            base,
            blocks: b,
            seed,
            stats,
            kinds: k,
            out,
        } => {
            let (_, ck) = load_base(&base)?;
            let mut plan = PerturbationPlan::block_randomize(blocks(&b)?, seed);
            plan.stats_mode = stats_mode(&stats);
            plan.kinds = kinds(&k, ParamKind::ALL.into())?;
            save(&apply_plan(&ck, &plan)?, &out)?;
            emit(&format!("{}\n", json!({"out": out, "plan": plan.to_string()})));
            Ok(())
        }

        Command::BlockSweep {
            base,
            blocks: b,
            seed,
            stats,
            grid,
            outdir,
        } => {
            let (graph, ck) = load_base(&base)?;
            let targets = blocks(&b)?;
            let source = base.base.to_string_lossy().into_owned();
            let base_ck = Arc::new(ck);
            create_dir(&outdir)?;
            for block in targets {
                let mut plan = PerturbationPlan::block_randomize([block].into(), seed);
                plan.stats_mode = stats_mode(&stats);
                let derived = apply_plan(&base_ck, &plan)?;
                let stem = block.to_string();
                let ck_path = outdir.join(format!("{stem}.wsc"));
                save(&derived, &ck_path)?;
                let report = diff(&base_ck, &derived);
                let touched = report.touched().count();
                write_file(&outdir.join(format!("{stem}.diff.jsonl")), report.to_jsonl())?;
                let columns = vec![
                    (Variant::new(stem.clone(), Arc::new(derived)), Some(source.clone())),
                    (Variant::new("base", base_ck.clone()), Some(source.clone())),
                ];
                let summary = write_grid(&graph, columns, &grid, &outdir.join(format!("{stem}.png")))?;
                emit(&format!(
                    "{}\n",
                    json!({"block": stem, "checkpoint": ck_path, "touched": touched, "grid": summary["grid"], "provenance": summary["provenance"]})
                ));
            }
            Ok(())
        }

        Command::MaskSubstitute {
            base,
            pattern,
            mask_blocks,
            fraction,
            mask_seed,
            seed,
            stats,
            kinds: k,
            out,
        } => {
            let (_, ck) = load_base(&base)?;
            let mask = MaskSpec {
                pattern,
                blocks: match mask_blocks {
                    Some(b) => blocks(&b)?,
                    None => BTreeSet::new(),
                },
                fraction,
                seed: mask_seed,
            };
            let mut plan = PerturbationPlan::masked_substitute(mask, seed);
            plan.stats_mode = stats_mode(&stats);
            plan.kinds = kinds(&k, ParamKind::ALL.into())?;
            plan.validate().map_err(usage)?;
            save(&apply_plan(&ck, &plan)?, &out)?;
            emit(&format!("{}\n", json!({"out": out, "plan": plan.to_string()})));
            Ok(())
        }

        Command::Render {
            graph,
            checkpoints,
            grid,
            out,
        } => {
            let first = checkpoints.first().ok_or_else(|| usage("--checkpoints is empty"))?;
            let name = match graph {
                Some(g) => g,
                None => load_checkpoint(first)?
                    .graph_name()
                    .unwrap_or(DEFAULT_GRAPH)
                    .to_string(),
            };
            let mut columns = Vec::with_capacity(checkpoints.len());
            let mut graph = None;
            for path in &checkpoints {
                let (g, ck) = load_bound(path, Some(&name))?;
                let label = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| path.display().to_string());
                columns.push((Variant::new(label, Arc::new(ck)), Some(path.display().to_string())));
                graph.get_or_insert(g);
            }
            let graph = graph.expect("at least one checkpoint");
            let summary = write_grid(&graph, columns, &grid, &out)?;
            emit(&format!("{summary}\n"));
            Ok(())
        }

        Command::Stats { checkpoint, stats } => {
            let ck = load_checkpoint(&checkpoint)?;
            emit(&compute_stats(&ck, stats_mode(&stats)).to_jsonl());
            Ok(())
        }

        Command::Diff { a, b } => {
            let (a, b) = (load_checkpoint(&a)?, load_checkpoint(&b)?);
            emit(&diff(&a, &b).to_jsonl());
            Ok(())
        }

        Command::MatchStats {
            base,
            replaced,
            blocks: b,
            stats,
        } => {
            let (graph, ck) = load_base(&base)?;
            let replaced = load_checkpoint(&replaced)?.canonicalize(&graph);
            let report = stats_match_report(&replaced, &compute_stats(&ck, stats_mode(&stats)), &blocks(&b)?);
            emit(&report.to_jsonl());
            if report.passed() {
                Ok(())
            } else {
                Err(data("statistics check failed"))
            }
        }

        Command::Diverge {
            base,
            alphas,
            seed,
            latent_seed,
            index,
            class,
            kinds: k,
        } => {
            let (graph, ck) = load_base(&base)?;
            let z = latent_at(latent_seed, index, graph.config().latent_dim);
            let kinds = kinds(&k, ParamKind::trainable())?;
            if class >= graph.config().num_classes {
                return Err(usage(format!("class {class} out of range")));
            }
            let curve = divergence_curve(&ck, &graph, &alphas, seed, &z, class, &kinds).map_err(usage)?;
            for (alpha, l2) in curve {
                emit(&format!("{}\n", json!({"alpha": alpha, "l2": l2})));
            }
            Ok(())
        }

        Command::Serve {
            base,
            port,
            host,
            gallery,
            cache,
        } => {
            let graph = match base.graph {
                Some(g) => g,
                None => load_checkpoint(&base.base)?
                    .graph_name()
                    .unwrap_or(DEFAULT_GRAPH)
                    .to_string(),
            };
            let state = AppState::new(ServiceConfig {
                base: base.base,
                graph,
                gallery,
                cache_capacity: cache,
            })
            .map_err(data)?;
            let runtime = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .map_err(data)?;
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::bind((host.as_str(), port))
                    .await
                    .map_err(|e| data(format!("cannot bind {host}:{port}: {e}")))?;
                let addr = listener.local_addr().map_err(data)?;
                emit(&format!("listening on http://{addr}\n"));
                let _ = std::io::stdout().flush();
                weightscape_service::serve(listener, state).await.map_err(data)
            })
        }

        Command::Replay { pick, base, out } => {
            let text = std::fs::read_to_string(&pick).map_err(|e| data(format!("{}: {e}", pick.display())))?;
            let record: Pick = serde_json::from_str(&text).map_err(|e| data(format!("{}: {e}", pick.display())))?;
            let base = base.unwrap_or_else(|| PathBuf::from(&record.source));
            let (graph, ck) = load_bound(&base, Some(&record.graph))?;
            let png = record.render(&ck, &graph).map_err(data)?;
            write_file(&out, png)?;
            emit(&format!("{}\n", json!({"out": out, "pick": record.pick_id})));
            Ok(())
        }
    }
}
