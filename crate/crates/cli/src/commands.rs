//! The six commands. Each writes only inside its configured output path.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use macroplace_core::guidance::{pad_constraints, sample_placement, trace_jsonl, SampleResult};
use macroplace_core::metrics::{
    composite_energy, evaluate, update_bounds, EnergyRefs, EnergySpec, EnergyWeights, MetricsReport,
};
use macroplace_core::model::train::train_with;
use macroplace_core::model::ScoreModel;
use macroplace_core::netlist::bookshelf::{parse_placement, serialize_pl};
use macroplace_core::render::{render_svg, RenderOptions};
use macroplace_core::syngen::{build_dataset, Dataset, GenStats};
use macroplace_core::transfer::finetune;
use macroplace_core::{parse_bookshelf, serialize_bookshelf, BookshelfBundle, Netlist, Placement};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::error::CliError;

/// Identifies the tool, configuration and seed behind an output file.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config_hash: String,
    pub seed: Option<u64>,
}

impl Provenance {
    pub fn new(config: &RunConfig, command: &'static str, seed: Option<u64>) -> Result<Self, CliError> {
        Ok(Self {
            tool: "macroplace",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config_hash: config.hash(command)?,
            seed,
        })
    }

    /// Single-line form for comment headers.
    pub fn line(&self) -> String {
        let seed = self.seed.map_or_else(|| "none".to_owned(), |s| s.to_string());
        format!(
            "{} {} {} config={} seed={seed}",
            self.tool, self.version, self.command, self.config_hash
        )
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

/// Writes `value` as pretty JSON with a `provenance` key added at the top level.
fn write_json(path: &Path, provenance: &Provenance, value: impl Serialize) -> Result<(), CliError> {
    let mut value = serde_json::to_value(value)?;
    let header = serde_json::to_value(provenance)?;
    let value = match value.as_object_mut() {
        Some(map) => {
            map.insert("provenance".into(), header);
            value
        }
        None => json!({ "provenance": header, "data": value }),
    };
    let mut text = serde_json::to_string_pretty(&value)?;
    text.push('\n');
    write_text(path, &text)
}

fn require_path<'a>(path: &'a Path, key: &str) -> Result<&'a Path, CliError> {
    if path.as_os_str().is_empty() {
        Err(CliError::Usage(format!("`{key}` is not set")))
    } else {
        Ok(path)
    }
}

fn load_design(path: &Path, key: &str) -> Result<(Netlist, Option<Placement>), CliError> {
    let path = require_path(path, key)?;
    let bundle =
        BookshelfBundle::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    parse_bookshelf(&bundle).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_placement(netlist: &Netlist, path: &Path) -> Result<Placement, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    parse_placement(netlist, &text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// The explicit `.pl` when given, else the design's own.
fn resolve_placement(
    netlist: &Netlist,
    own: Option<Placement>,
    explicit: Option<&PathBuf>,
) -> Result<Placement, CliError> {
    match explicit {
        Some(p) => load_placement(netlist, p),
        None => own.ok_or_else(|| CliError::Data("the design has no .pl and no placement was given".into())),
    }
}

fn load_checkpoint(path: &Path) -> Result<ScoreModel, CliError> {
    let path = require_path(path, "checkpoint")?;
    Ok(ScoreModel::load(path)?)
}

fn energy_spec(netlist: &Netlist, resolution: (usize, usize)) -> Result<EnergySpec, CliError> {
    Ok(EnergySpec::new(EnergyWeights::default())?
        .with_refs(EnergyRefs::from_reference(netlist, resolution)?)?)
}

#[derive(Serialize)]
struct VariantSummary<'a> {
    label: &'a str,
    energy: f64,
    e_rel: f64,
}

#[derive(Serialize)]
struct DesignSummary<'a> {
    name: &'a str,
    modules: usize,
    nets: usize,
    e_analytical: f64,
    stats: &'a GenStats,
    variants: Vec<VariantSummary<'a>>,
}

pub fn generate(config: &RunConfig) -> Result<(), CliError> {
    let section = &config.generate;
    let prov = Provenance::new(config, "generate", Some(section.dataset.seed))?;
    let dataset = build_dataset(&section.dataset)?;
    create_dir(&section.out)?;
    let mut designs = Vec::with_capacity(dataset.instances.len());
    for inst in &dataset.instances {
        let name = &inst.netlist.name;
        let dir = section.out.join(name);
        create_dir(&dir)?;
        serialize_bookshelf(
            &inst.netlist,
            Some(&inst.variants[0].placement),
            Some(&prov.line()),
        )?
        .write(&dir)?;
        let summary = DesignSummary {
            name,
            modules: inst.netlist.num_modules(),
            nets: inst.netlist.num_nets(),
            e_analytical: inst.e_analytical,
            stats: &inst.stats,
            variants: inst
                .variants
                .iter()
                .map(|v| VariantSummary {
                    label: &v.label,
                    energy: v.energy,
                    e_rel: v.e_rel,
                })
                .collect(),
        };
        write_json(&dir.join("stats.json"), &prov, &summary)?;
        designs.push(summary);
    }
    write_json(
        &section.out.join("stats.json"),
        &prov,
        json!({ "designs": designs }),
    )?;
    write_json(&section.out.join("dataset.json"), &prov, &dataset)?;
    log::info!(
        "wrote {} designs to {}",
        dataset.instances.len(),
        section.out.display()
    );
    Ok(())
}

pub fn train(config: &RunConfig) -> Result<(), CliError> {
    let section = &config.train;
    let prov = Provenance::new(config, "train", Some(section.optimizer.seed))?;
    let dataset_path = require_path(&section.dataset, "train.dataset")?.join("dataset.json");
    let text = fs::read_to_string(&dataset_path)
        .map_err(|e| CliError::Data(format!("{}: {e}", dataset_path.display())))?;
    let dataset: Dataset = serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("{}: {e}", dataset_path.display())))?;
    if dataset.num_examples() == 0 {
        return Err(CliError::Data(format!(
            "{} holds no training examples",
            dataset_path.display()
        )));
    }
    let mut model = match &section.resume {
        Some(path) => load_checkpoint(path)?,
        None => ScoreModel::new(section.model, section.optimizer.seed)?,
    };
    let start = model.step;
    let log_every = section.optimizer.log_every as u64;
    let report = train_with(
        &mut model,
        &dataset.to_train_data(),
        &section.optimizer,
        |step, loss| {
            if step % log_every == 0 {
                log::info!("step {step} loss {loss:.5}");
            }
        },
    )?;
    create_dir(&section.out)?;
    write_json(&section.out.join("checkpoint.json"), &prov, &model)?;
    write_text(
        &section.out.join("loss.csv"),
        &format!("# {}\n{}", prov.line(), report.loss_csv()),
    )?;
    let (first, last) = report.smoothed_ends(50);
    write_json(
        &section.out.join("report.json"),
        &prov,
        json!({
            "start_step": start,
            "end_step": model.step,
            "loss_start": first,
            "loss_end": last,
            "report": report,
        }),
    )?;
    log::info!(
        "trained steps {start}..{} loss {first:.4} -> {last:.4}",
        model.step
    );
    Ok(())
}

pub fn finetune_cmd(config: &RunConfig) -> Result<(), CliError> {
    let section = &config.finetune;
    let prov = Provenance::new(config, "finetune", Some(section.config.seed))?;
    let model = load_checkpoint(&section.checkpoint)?;
    let out_checkpoint = section.out.join("checkpoint.json");
    if fs::canonicalize(&section.checkpoint).ok() == fs::canonicalize(&out_checkpoint).ok() {
        return Err(CliError::Usage(
            "finetune.out would overwrite the input checkpoint".into(),
        ));
    }
    let (netlist, pl) = load_design(&section.netlist, "finetune.netlist")?;
    let fixed = pad_constraints(&netlist, pl.as_ref());
    let outcome = finetune(&model, &netlist, &fixed, &section.config)?;
    create_dir(&section.out)?;
    write_json(&out_checkpoint, &prov, &outcome.model)?;
    let r = &outcome.report;
    write_json(
        &section.out.join("report.json"),
        &prov,
        json!({
            "mean_before": r.mean_before(),
            "mean_after": r.mean_after(),
            "energy_retention": r.energy_retention(),
            "report": r,
        }),
    )?;
    if let Some(message) = r.message.as_deref().filter(|_| r.diverged) {
        return Err(CliError::Numeric(format!("fine-tuning diverged: {message}")));
    }
    log::info!(
        "fine-tuned {} updates, mean energy {:?} -> {:?}",
        r.updates,
        r.mean_before(),
        r.mean_after()
    );
    Ok(())
}

#[derive(Serialize)]
struct SampleSummary {
    index: usize,
    seed: u64,
    file: String,
    clamped: usize,
    x0_clips: usize,
    #[serde(flatten)]
    metrics: MetricsReport,
}

/// `count` indices spread evenly over `0..available`, ending at the last.
fn frame_indices(count: usize, available: usize) -> Vec<usize> {
    match count {
        0 => vec![],
        1 => vec![available - 1],
        _ => (0..count)
            .map(|j| (j * (available - 1) + (count - 1) / 2) / (count - 1))
            .collect(),
    }
}

pub fn place(config: &RunConfig) -> Result<(), CliError> {
    let section = &config.place;
    let prov = Provenance::new(config, "place", Some(section.seed))?;
    if section.count == 0 {
        return Err(CliError::Usage("place.count must be at least 1".into()));
    }
    let model = load_checkpoint(&section.checkpoint)?;
    let (netlist, pl) = load_design(&section.netlist, "place.netlist")?;
    let fixed = pad_constraints(&netlist, pl.as_ref());
    let mut guidance = section.guidance.clone();
    if section.frames > 0 {
        guidance.snapshot_every = 1;
    }
    let start = Instant::now();
    let mut timings = Vec::with_capacity(section.count);
    let mut samples: Vec<(u64, SampleResult)> = Vec::with_capacity(section.count);
    for k in 0..section.count as u64 {
        let seed = section.seed.wrapping_add(k);
        let t = Instant::now();
        samples.push((seed, sample_placement(&model, &netlist, &guidance, &fixed, seed)?));
        timings.push(t.elapsed().as_secs_f64());
    }
    let total = start.elapsed().as_secs_f64();

    let mut spec = energy_spec(&netlist, guidance.resolution)?;
    for (_, s) in &samples {
        let e = composite_energy(&netlist, &s.placement, &spec, guidance.resolution)?;
        update_bounds(&mut spec, &netlist.name, e);
    }
    create_dir(&section.out)?;
    let mut summaries = Vec::with_capacity(samples.len());
    for (index, (seed, s)) in samples.iter().enumerate() {
        let file = format!("sample_{index:03}.pl");
        write_text(
            &section.out.join(&file),
            &serialize_pl(&netlist, &s.placement, Some(&prov.line()))?,
        )?;
        let header = serde_json::to_string(&json!({ "provenance": prov }))?;
        write_text(
            &section.out.join(format!("trace_{index:03}.jsonl")),
            &format!("{header}\n{}", trace_jsonl(&s.trace)?),
        )?;
        summaries.push(SampleSummary {
            index,
            seed: *seed,
            file,
            clamped: s.clamped,
            x0_clips: s.x0_clips,
            metrics: evaluate(&netlist, &s.placement, &spec, guidance.resolution)?,
        });
    }
    let best = summaries
        .iter()
        .min_by(|a, b| a.metrics.energy.total_cmp(&b.metrics.energy))
        .map(|s| s.index)
        .expect("count is positive");
    let best_placement = &samples[best].1.placement;
    write_text(
        &section.out.join("best.pl"),
        &serialize_pl(&netlist, best_placement, Some(&prov.line()))?,
    )?;

    if section.frames > 0 {
        let snapshots: Vec<(usize, &Vec<[f64; 2]>)> = samples[best]
            .1
            .trace
            .iter()
            .filter_map(|e| e.x0_hat.as_ref().map(|x| (e.t, x)))
            .collect();
        if section.frames > snapshots.len() {
            return Err(CliError::Usage(format!(
                "place.frames = {} exceeds the {} recorded denoising steps",
                section.frames,
                snapshots.len()
            )));
        }
        let frames_dir = section.out.join("frames");
        create_dir(&frames_dir)?;
        for (j, i) in frame_indices(section.frames, snapshots.len())
            .into_iter()
            .enumerate()
        {
            let (t, coords) = snapshots[i];
            let (placement, _) = Placement::clamped(coords)?;
            let options = RenderOptions {
                title: Some(format!("t = {t}")),
                ..section.render.clone()
            };
            let svg = with_svg_header(&render_svg(&netlist, &placement, &options)?, &prov);
            write_text(&frames_dir.join(format!("frame_{j:03}.svg")), &svg)?;
        }
    }

    write_json(
        &section.out.join("metrics.json"),
        &prov,
        json!({
            "netlist": netlist.name,
            "best": best,
            "best_seed": samples[best].0,
            "samples": summaries,
        }),
    )?;
    write_json(
        &section.out.join("timing.json"),
        &prov,
        json!({ "total_s": total, "per_sample_s": timings }),
    )?;
    log::info!(
        "best of {} samples: #{best} energy {:.4}",
        section.count,
        summaries[best].metrics.energy
    );
    Ok(())
}

/// Metrics of one evaluation; `runtime_s` is kept out of the
/// reproducible file and written to `timing.json`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EvalOutput {
    #[serde(flatten)]
    pub metrics: MetricsReport,
    pub runtime_s: f64,
}

pub fn eval(config: &RunConfig) -> Result<EvalOutput, CliError> {
    let section = &config.eval;
    let prov = Provenance::new(config, "eval", None)?;
    let (netlist, own) = load_design(&section.netlist, "eval.netlist")?;
    let placement = resolve_placement(&netlist, own, section.placement.as_ref())?;
    let start = Instant::now();
    let spec = energy_spec(&netlist, section.resolution)?;
    let metrics = evaluate(&netlist, &placement, &spec, section.resolution)
        .map_err(CliError::at("mismatched files"))?;
    let runtime_s = start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE);
    create_dir(&section.out)?;
    write_json(
        &section.out.join("metrics.json"),
        &prov,
        json!({ "netlist": netlist.name, "metrics": metrics }),
    )?;
    write_json(
        &section.out.join("timing.json"),
        &prov,
        json!({ "runtime_s": runtime_s }),
    )?;
    Ok(EvalOutput { metrics, runtime_s })
}

/// Inserts the provenance comment after the opening `<svg>` line.
fn with_svg_header(svg: &str, prov: &Provenance) -> String {
    match svg.split_once('\n') {
        Some((first, rest)) => format!("{first}\n<!-- {} -->\n{rest}", prov.line()),
        None => svg.to_owned(),
    }
}

pub fn render(config: &RunConfig) -> Result<(), CliError> {
    let section = &config.render;
    let prov = Provenance::new(config, "render", None)?;
    let (netlist, own) = load_design(&section.netlist, "render.netlist")?;
    let placement = resolve_placement(&netlist, own, section.placement.as_ref())?;
    let out = require_path(&section.out, "render.out")?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let svg = with_svg_header(&render_svg(&netlist, &placement, &section.options)?, &prov);
    write_text(out, &svg)
}
