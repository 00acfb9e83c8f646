//! Command-line interface: ingest, validate, explore, memorize, tasks,
//! eval, report, and the gen-cities fixture utility.

use crate::explore::{run_episode, write_trace, EpisodeConfig, Strategy};
use crate::harness::{aggregate, emit_reports, load_results, run_matrix, ExperimentConfig};
use crate::ingest::{
    builtin_catalog, check_catalog, city_slug, load_map, rasterize, save_catalog, save_map,
    normalize_and_link, VectorMapSource,
};
use crate::mapenv::validate_map;
use crate::memory::{build_bundle, BundleManifest, MemoryKind, SdmOptions};
use crate::tasks::{generate_tasks, save_tasks};
use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "mapmind",
    about = "Symbolic grid-map exploration, spatial memory, and reasoning evaluation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rasterize a vector source (roads + POIs) into a map file.
    Ingest {
        /// Vector source JSON.
        input: PathBuf,
        #[arg(long)]
        city: String,
        #[arg(long, default_value_t = 20)]
        width: i32,
        #[arg(long, default_value_t = 20)]
        height: i32,
        #[arg(long)]
        out: PathBuf,
        /// Check the result against the built-in catalog entry for `city`.
        #[arg(long)]
        check_catalog: bool,
    },
    /// Check every map invariant; exits nonzero on violations.
    Validate {
        map: PathBuf,
        /// Also compare counts against the built-in catalog.
        #[arg(long)]
        catalog: bool,
        /// Write the validation report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one exploration episode and write its trace (JSON lines).
    Explore {
        map: PathBuf,
        #[arg(long)]
        strategy: String,
        #[arg(long, default_value_t = 1)]
        n: u32,
        #[arg(long, default_value_t = 2)]
        radius: i32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a memory bundle from a trace.
    Memorize {
        trace: PathBuf,
        /// SDM, NSM, GM, MM, NSM+SDM, GM+SDM, or MM+SDM.
        #[arg(long)]
        memory: String,
        /// Bundle text output; a .manifest.json is written alongside.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate the 24 evaluation tasks for a map.
    Tasks {
        map: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full experiment matrix described by a config file.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Results root; a run directory is created (or resumed) inside.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the episodes-per-cell count for averaging.
        #[arg(long)]
        repeats: Option<u32>,
    },
    /// Rebuild reports from a finished (or partial) run directory.
    Report {
        /// The run directory holding cells/.
        results: PathBuf,
    },
    /// Write the 15 built-in city fixtures and the catalog CSV.
    GenCities {
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(err) => {
            let payload = serde_json::json!({ "error": format!("{:#}", err) });
            eprintln!("{}", payload);
            1
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Ingest {
            input,
            city,
            width,
            height,
            out,
            check_catalog: check,
        } => {
            let source = VectorMapSource::load(&input)
                .with_context(|| format!("loading vector source {}", input.display()))?;
            let raw = rasterize(&source, width, height, &city)?;
            let map = normalize_and_link(raw)?;
            let report = validate_map(&map);
            if !report.is_ok() {
                bail!("ingested map fails validation:\n{}", report);
            }
            if check {
                let entry = builtin_catalog()
                    .into_iter()
                    .find(|e| city_slug(&e.city) == city_slug(&city))
                    .ok_or_else(|| anyhow!("no catalog entry for '{}'", city))?;
                let report = check_catalog(&map, &entry);
                if !report.matches() {
                    bail!("catalog mismatch: {}", report.mismatches().join("; "));
                }
            }
            save_map(&map, &out)?;
            println!("wrote {}", out.display());
            Ok(0)
        }
        Command::Validate { map, catalog, out } => {
            let map = load_map(&map)?;
            let report = validate_map(&map);
            let mut catalog_lines = Vec::new();
            let mut catalog_ok = true;
            if catalog {
                if let Some(entry) = builtin_catalog()
                    .into_iter()
                    .find(|e| city_slug(&e.city) == city_slug(map.city_name()))
                {
                    let cat = check_catalog(&map, &entry);
                    catalog_ok = cat.matches();
                    catalog_lines = cat.mismatches();
                } else {
                    catalog_ok = false;
                    catalog_lines.push(format!("no catalog entry for '{}'", map.city_name()));
                }
            }
            if let Some(path) = out {
                let payload = serde_json::json!({
                    "city": map.city_name(),
                    "valid": report.is_ok(),
                    "violations": report.violations,
                    "catalog_ok": catalog_ok,
                    "catalog_mismatches": catalog_lines,
                });
                std::fs::write(&path, format!("{:#}\n", payload))?;
            }
            if report.is_ok() && catalog_ok {
                println!("ok");
                Ok(0)
            } else {
                print!("{}", report);
                for line in catalog_lines {
                    println!("catalog: {}", line);
                }
                Ok(1)
            }
        }
        Command::Explore {
            map,
            strategy,
            n,
            radius,
            seed,
            out,
        } => {
            let map = load_map(&map)?;
            let strategy = Strategy::from_name(&strategy)
                .ok_or_else(|| anyhow!("unknown strategy '{}'", strategy))?;
            let config = EpisodeConfig::new(strategy, n, radius, seed);
            let trace = run_episode(&map, &config)?;
            write_trace(&trace, &out)?;
            println!(
                "wrote {} ({} events, {} pois visited)",
                out.display(),
                trace.events.len(),
                trace.visit_counts.len()
            );
            Ok(0)
        }
        Command::Memorize { trace, memory, out } => {
            let kind = MemoryKind::from_name(&memory)
                .ok_or_else(|| anyhow!("unknown memory kind '{}'", memory))?;
            let parsed = crate::explore::load_trace(&trace)?;
            let bundle = build_bundle(&parsed, kind, &SdmOptions::default());
            std::fs::write(&out, &bundle.serialized)?;
            let manifest = BundleManifest::for_bundle(&bundle, &trace.display().to_string());
            let manifest_path = out.with_extension("manifest.json");
            manifest.save(&manifest_path)?;
            println!(
                "wrote {} ({} bits) and {}",
                out.display(),
                bundle.size_bits,
                manifest_path.display()
            );
            Ok(0)
        }
        Command::Tasks { map, seed, out } => {
            let map = load_map(&map)?;
            let items = generate_tasks(&map, seed)?;
            save_tasks(&items, &out)?;
            let degenerate = items.iter().filter(|i| i.degenerate).count();
            println!(
                "wrote {} ({} items, {} degenerate)",
                out.display(),
                items.len(),
                degenerate
            );
            Ok(0)
        }
        Command::Eval {
            config,
            out,
            seed,
            repeats,
        } => {
            let mut experiment = ExperimentConfig::load(&config)
                .with_context(|| format!("loading config {}", config.display()))?;
            if let Some(seed) = seed {
                experiment.seed = seed;
            }
            if let Some(repeats) = repeats {
                experiment.repeats = repeats;
            }
            let resolved = experiment.resolve()?;
            let run_dir = out.join(experiment.run_id());
            std::fs::create_dir_all(&run_dir)?;
            let results = run_matrix(&resolved, &run_dir)?;
            let pooled = aggregate(&results);
            emit_reports(&results, &pooled, &run_dir)?;
            println!("run {} complete: {} cells", experiment.run_id(), results.len());
            for cell in &pooled {
                println!(
                    "{}/{}/{}/{}: total {}",
                    cell.strategy,
                    cell.memory,
                    cell.scheme,
                    cell.endpoint,
                    cell.total_accuracy()
                        .map(|a| format!("{:.2}%", a * 100.0))
                        .unwrap_or_else(|| "n/a".to_string())
                );
            }
            println!("reports under {}", run_dir.display());
            Ok(0)
        }
        Command::Report { results } => {
            let loaded = load_results(&results)?;
            if loaded.is_empty() {
                bail!("no committed cells under {}", results.display());
            }
            let pooled = aggregate(&loaded);
            emit_reports(&loaded, &pooled, &results)?;
            println!("reports rebuilt under {}", results.display());
            Ok(0)
        }
        Command::GenCities { out } => {
            std::fs::create_dir_all(&out)?;
            let catalog = builtin_catalog();
            for entry in &catalog {
                let map = crate::synth::city_fixture(entry)?;
                let path = out.join(format!("{}.json", city_slug(&entry.city)));
                save_map(&map, &path)?;
                println!("wrote {}", path.display());
            }
            let catalog_path = out.join("catalog.csv");
            save_catalog(&catalog, &catalog_path)?;
            println!("wrote {}", catalog_path.display());
            Ok(0)
        }
    }
}
