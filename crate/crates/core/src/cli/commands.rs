use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::config::{layered, prepare_run_dir, read_table, required, write_config};
use super::*;
use crate::error::Result;
use crate::eval::{
    baseline_partition, gini_report, rows_to_jsonl, subspace_variances, summary_table, toy_patching, BaselineKind,
    GroupReadout, PatchingRecord, ReportRow,
};
use crate::io::{
    read_activations, read_partition, read_toy_model, write_activations, write_grid_csv, write_partition,
    write_toy_model, ActivationBuffer, ActivationSet, PartitionFile,
};
use crate::linalg::Matrix;
use crate::mi::partition_mi;
use crate::ndm::{train_ndm_with, InitialRotation, NdmConfig, TrainEvent};
use crate::preimage::{build_index, query, query_row, render_hits, Corpus, QueryOptions};
use crate::rng::{stream, streams};
use crate::toy::{
    block_purity, cross_group_ratio, mean_purity, toy_activations, toy_preset, train_toy, FeatureGroupSpec,
    ToyTrainConfig, TOY_PRESETS,
};

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| NdmError::Parse(e.to_string()))?;
    writeln!(w)?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    Ok(std::fs::write(path, text)?)
}

fn load_partition(path: &Path) -> CliResult<PartitionFile> {
    if !path.exists() {
        return Err(CliError::Usage(format!("partition file {} does not exist", path.display())));
    }
    Ok(read_partition(path)?)
}

fn load_activations(path: &Path) -> CliResult<ActivationSet> {
    if !path.exists() {
        return Err(CliError::Usage(format!("activation file {} does not exist", path.display())));
    }
    Ok(read_activations(path)?)
}

/// At most `n` distinct rows, drawn without replacement.
fn subsample(data: &Matrix, n: usize, seed: u64) -> Matrix {
    if data.rows() <= n {
        return data.clone();
    }
    let mut rows = sample(&mut stream(seed, streams::SUBSAMPLE), data.rows(), n).into_vec();
    rows.sort_unstable();
    data.select_rows(&rows)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ToyTrainRun {
    preset: Option<String>,
    groups: Option<Vec<usize>>,
    sparsity: Option<f64>,
    d: Option<usize>,
    dump_rows: usize,
    train: ToyTrainConfig,
}

impl Default for ToyTrainRun {
    fn default() -> Self {
        Self { preset: None, groups: None, sparsity: None, d: None, dump_rows: 1 << 17, train: ToyTrainConfig::default() }
    }
}

#[derive(Serialize)]
struct ToySummary {
    fvu: f64,
    cross_group_ratio: f64,
    final_loss: f64,
}

pub fn toy_train(a: ToyTrainArgs) -> CliResult {
    let mut cfg = layered(&ToyTrainRun::default(), read_table(a.config.as_deref())?, "toy-train config")?;
    if a.preset.is_some() {
        cfg.preset = a.preset;
    }
    if let Some(name) = &cfg.preset {
        let p = toy_preset(name).ok_or_else(|| {
            CliError::Usage(format!("unknown toy preset {name:?}; expected one of {}", TOY_PRESETS.join(", ")))
        })?;
        cfg.groups.get_or_insert(p.spec.group_sizes);
        cfg.sparsity.get_or_insert(p.spec.group_sparsity);
        cfg.d.get_or_insert(p.d);
    }
    cfg.groups = a.groups.or(cfg.groups);
    cfg.d = a.d.or(cfg.d);
    cfg.sparsity = a.sparsity.or(cfg.sparsity);
    if let Some(v) = a.steps {
        cfg.train.steps = v;
    }
    if let Some(v) = a.seed {
        cfg.train.seed = v;
    }
    if let Some(v) = a.dump_rows {
        cfg.dump_rows = v;
    }
    let groups = required(cfg.groups.clone(), "groups")?;
    let d = required(cfg.d, "d")?;
    let sparsity = *cfg.sparsity.get_or_insert(0.25);
    let spec = FeatureGroupSpec::new(groups, sparsity)?;

    prepare_run_dir(&a.run.out, a.run.force)?;
    write_config(&a.run.out, &cfg)?;
    let trained = train_toy(&spec, d, &cfg.train)?;
    let gram = trained.model.gram();
    let summary = ToySummary {
        fvu: trained.fvu,
        cross_group_ratio: cross_group_ratio(&gram, &spec),
        final_loss: trained.final_loss,
    };
    write_toy_model(&trained.model, &spec, &a.run.out.join("model.ndmt"))?;
    write_grid_csv(&gram, &a.run.out.join("gram.csv"))?;
    write_json(&a.run.out.join("summary.json"), &summary)?;
    if cfg.dump_rows > 0 {
        let acts = toy_activations(
            &trained.model,
            &spec,
            cfg.dump_rows,
            &mut stream(cfg.train.seed, streams::ACTIVATIONS),
        )?;
        write_activations(&ActivationSet::new(acts, None)?, &a.run.out.join("activations.ndma"))?;
    }
    println!(
        "fvu {:.4}  cross-group ratio {:.4}  final loss {:.6}",
        summary.fvu, summary.cross_group_ratio, summary.final_loss
    );
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NdmTrainRun {
    preset: String,
    activations: Option<PathBuf>,
    init: String,
    recycle: bool,
    toy_model: Option<PathBuf>,
    ndm: NdmConfig,
}

#[derive(Serialize)]
struct NdmEvents<'a> {
    termination: crate::ndm::Termination,
    c: &'a [usize],
    final_loss: Option<f64>,
    max_orthogonality_defect: f64,
    merges: &'a [crate::ndm::MergeEvent],
    reinits: &'a [crate::ndm::ReinitEvent],
    mi_snapshots: &'a [crate::ndm::MiSnapshot],
    #[serde(skip_serializing_if = "Option::is_none")]
    purity: Option<Vec<f64>>,
}

pub fn ndm_train(a: NdmTrainArgs) -> CliResult {
    let file = read_table(a.config.as_deref())?;
    let preset = match (&a.preset, file.get("preset")) {
        (Some(p), _) => p.clone(),
        (None, Some(toml::Value::String(p))) => p.clone(),
        (None, Some(_)) => return Err(CliError::Usage("config key `preset` must be a string".into())),
        (None, None) => "lm".to_string(),
    };
    let ndm = NdmConfig::preset(&preset)
        .ok_or_else(|| CliError::Usage(format!("unknown NDM preset {preset:?}; expected toy or lm")))?;
    let base = NdmTrainRun {
        recycle: preset == "toy",
        preset: preset.clone(),
        activations: None,
        init: "identity".into(),
        toy_model: None,
        ndm,
    };
    let mut cfg = layered(&base, file, "ndm-train config")?;
    cfg.preset = preset;
    cfg.activations = a.activations.or(cfg.activations);
    cfg.toy_model = a.toy_model.or(cfg.toy_model);
    if let Some(v) = a.init {
        cfg.init = v;
    }
    if let Some(v) = a.recycle {
        cfg.recycle = v;
    }
    let n = &mut cfg.ndm;
    for (flag, slot) in [
        (a.max_steps, &mut n.max_steps),
        (a.unit_size, &mut n.unit_size),
        (a.search_number, &mut n.search_number),
        (a.merge_interval, &mut n.merge_interval),
        (a.merge_start_delay, &mut n.merge_start_delay),
    ] {
        if let Some(v) = flag {
            *slot = v;
        }
    }
    if let Some(v) = a.seed {
        n.seed = v;
    }
    if let Some(v) = a.lr {
        n.lr = v;
    }
    if let Some(v) = a.merge_threshold {
        n.merge_threshold = v;
    }

    let acts_path = required(cfg.activations.clone(), "activations")?;
    let set = load_activations(&acts_path)?;
    cfg.ndm.validate(set.d())?;
    let init = match cfg.init.as_str() {
        "identity" => InitialRotation::Identity,
        "random" => InitialRotation::RandomOrthogonal,
        path => InitialRotation::Given(load_partition(Path::new(path))?.partition.r().clone()),
    };
    let toy = cfg.toy_model.as_deref().map(read_toy_model).transpose()?;

    let out = a.run.out.clone();
    prepare_run_dir(&out, a.run.force)?;
    write_config(&out, &cfg)?;
    let ckpt_dir = out.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir).map_err(NdmError::from)?;
    let provenance = vec![
        format!("ndm-train preset={} seed={}", cfg.preset, cfg.ndm.seed),
        format!("activations={}", acts_path.display()),
    ];

    let mut buffer = ActivationBuffer::new(set.data).with_recycle(cfg.recycle);
    let mut ckpt_error = None;
    let mut observer = |ev: &TrainEvent| match ev {
        TrainEvent::Step { step, loss } if step % 10_000 == 0 => eprintln!("step {step:>7}  loss {loss:.6}"),
        TrainEvent::Merge { step, partition, pairs } => {
            eprintln!("step {step:>7}  merged {pairs:?} -> c = {:?}", partition.dims());
            let mut prov = provenance.clone();
            prov.push(format!("checkpoint step={step}"));
            let file = PartitionFile { partition: (*partition).clone(), provenance: prov };
            if let Err(e) = write_partition(&file, &ckpt_dir.join(format!("merge-{step:07}.ndmp"))) {
                ckpt_error.get_or_insert(e);
            }
        }
        TrainEvent::Finished { step, partition, termination } => {
            eprintln!("step {step:>7}  finished ({termination:?}) with c = {:?}", partition.dims())
        }
        _ => {}
    };
    let run = train_ndm_with(&mut buffer, &cfg.ndm, init, &mut observer)?;
    if let Some(e) = ckpt_error {
        return Err(e.into());
    }

    let mut prov = provenance;
    prov.push(format!("termination={:?}", run.trace.termination));
    write_partition(&PartitionFile { partition: run.partition.clone(), provenance: prov }, &out.join("partition.ndmp"))?;
    let mut trace = BufWriter::new(File::create(out.join("trace.jsonl")).map_err(NdmError::from)?);
    run.trace.write_jsonl(&mut trace)?;
    trace.flush().map_err(NdmError::from)?;
    let purity = match &toy {
        Some((model, spec)) => {
            let rw = run.partition.r().matmul(&model.w)?;
            let p = block_purity(&rw, spec, run.partition.dims())?;
            println!("mean block purity {:.3}", mean_purity(&p));
            Some(p.iter().map(|p| p.value).collect())
        }
        None => None,
    };
    write_json(
        &out.join("events.json"),
        &NdmEvents {
            termination: run.trace.termination,
            c: run.partition.dims(),
            final_loss: run.trace.final_loss(),
            max_orthogonality_defect: run.trace.max_orthogonality_defect,
            merges: &run.trace.merges,
            reinits: &run.trace.reinits,
            mi_snapshots: &run.trace.mi_snapshots,
            purity,
        },
    )?;
    println!("c = {:?}  termination {:?}", run.partition.dims(), run.trace.termination);
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct MiRun {
    partition: Option<PathBuf>,
    activations: Option<PathBuf>,
    samples: usize,
    k: usize,
    seed: u64,
}

impl Default for MiRun {
    fn default() -> Self {
        Self { partition: None, activations: None, samples: crate::mi::DEFAULT_SAMPLES, k: crate::mi::DEFAULT_K, seed: 0 }
    }
}

#[derive(Serialize)]
struct MiSummary {
    dims: Vec<usize>,
    sample_n: usize,
    k: usize,
    max_normalized: f64,
    warnings: Vec<String>,
}

fn grid_text(m: &Matrix) -> String {
    let mut out = String::new();
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:6.3}")).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    out
}

pub fn mi(a: MiArgs) -> CliResult {
    let mut cfg = layered(&MiRun::default(), read_table(a.config.as_deref())?, "mi config")?;
    cfg.partition = a.partition.or(cfg.partition);
    cfg.activations = a.activations.or(cfg.activations);
    cfg.samples = a.samples.unwrap_or(cfg.samples);
    cfg.k = a.k.unwrap_or(cfg.k);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    let pf = load_partition(&required(cfg.partition.clone(), "partition")?)?;
    let set = load_activations(&required(cfg.activations.clone(), "activations")?)?;
    prepare_run_dir(&a.run.out, a.run.force)?;
    write_config(&a.run.out, &cfg)?;
    let data = subsample(&set.data, cfg.samples, cfg.seed);
    let m = partition_mi(&data, &pf.partition, cfg.k)?;
    write_grid_csv(&m.raw, &a.run.out.join("mi_raw.csv"))?;
    write_grid_csv(&m.normalized, &a.run.out.join("mi_normalized.csv"))?;
    let summary = MiSummary {
        dims: m.dims.clone(),
        sample_n: m.sample_n,
        k: m.k,
        max_normalized: m.max_normalized(),
        warnings: m.warnings(),
    };
    write_json(&a.run.out.join("summary.json"), &summary)?;
    print!("{}", grid_text(&m.normalized));
    println!("max normalized MI {:.4} over c = {:?}", summary.max_normalized, summary.dims);
    for w in &summary.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EffectsLine {
    #[serde(default)]
    test: Option<String>,
    effects: Vec<f64>,
    dims: Vec<usize>,
    variances: Vec<f64>,
}

#[derive(Serialize)]
struct EvalGiniRun<'a> {
    effects: &'a Path,
}

pub fn eval_gini(a: EvalGiniArgs) -> CliResult {
    let file = File::open(&a.effects)
        .map_err(|e| CliError::Usage(format!("cannot read effects file {}: {e}", a.effects.display())))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(NdmError::from)?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EffectsLine = serde_json::from_str(&line)
            .map_err(|e| CliError::Usage(format!("{} line {}: {e}", a.effects.display(), i + 1)))?;
        let name = rec.test.unwrap_or_else(|| format!("row{}", rows.len() + 1));
        let record = PatchingRecord::new(rec.effects, rec.dims, rec.variances)?;
        rows.push(ReportRow::new(name, &gini_report(&record)?));
    }
    if rows.is_empty() {
        return Err(CliError::Usage(format!("{} holds no records", a.effects.display())));
    }
    let table = summary_table(&rows);
    print!("{table}");
    if let Some(out) = &a.out {
        prepare_run_dir(out, a.force)?;
        write_config(out, &EvalGiniRun { effects: &a.effects })?;
        write_text(&out.join("report.jsonl"), &rows_to_jsonl(&rows)?)?;
        write_text(&out.join("summary.txt"), &table)?;
    }
    Ok(())
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct BaselinesRun {
    partition: Option<PathBuf>,
    activations: Option<PathBuf>,
    seed: u64,
}

#[derive(Serialize)]
struct BaselineVariances {
    kind: String,
    variances: Vec<f64>,
}

pub fn baselines(a: BaselinesArgs) -> CliResult {
    let mut cfg = layered(&BaselinesRun::default(), read_table(a.config.as_deref())?, "baselines config")?;
    cfg.partition = a.partition.or(cfg.partition);
    cfg.activations = a.activations.or(cfg.activations);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    let pf = load_partition(&required(cfg.partition.clone(), "partition")?)?;
    let set = load_activations(&required(cfg.activations.clone(), "activations")?)?;
    prepare_run_dir(&a.run.out, a.run.force)?;
    write_config(&a.run.out, &cfg)?;
    let dims = pf.partition.dims().to_vec();
    let mut rng = stream(cfg.seed, streams::BASELINE);
    let mut report = Vec::new();
    for kind in BaselineKind::ALL {
        let p = baseline_partition(kind, &set.data, &dims, &mut rng)?;
        report.push(BaselineVariances { kind: kind.to_string(), variances: subspace_variances(&set.data, &p)? });
        let prov = vec![format!("baseline kind={kind} seed={}", cfg.seed)];
        write_partition(&PartitionFile { partition: p, provenance: prov }, &a.run.out.join(format!("{kind}.ndmp")))?;
        println!("wrote {kind}.ndmp");
    }
    write_json(&a.run.out.join("variances.json"), &report)?;
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct PatchToyRun {
    model: Option<PathBuf>,
    partition: Option<PathBuf>,
    group: usize,
    samples: usize,
    seed: u64,
}

impl Default for PatchToyRun {
    fn default() -> Self {
        Self { model: None, partition: None, group: 0, samples: 4096, seed: 0 }
    }
}

#[derive(Serialize)]
struct PatchToyOutput<'a> {
    record: &'a PatchingRecord,
    clean_mean: f64,
    relative_shift: &'a [f64],
}

pub fn patch_toy(a: PatchToyArgs) -> CliResult {
    let mut cfg = layered(&PatchToyRun::default(), read_table(a.config.as_deref())?, "patch-toy config")?;
    cfg.model = a.model.or(cfg.model);
    cfg.partition = a.partition.or(cfg.partition);
    cfg.group = a.group.unwrap_or(cfg.group);
    cfg.samples = a.samples.unwrap_or(cfg.samples);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    let model_path = required(cfg.model.clone(), "model")?;
    if !model_path.exists() {
        return Err(CliError::Usage(format!("model file {} does not exist", model_path.display())));
    }
    let (model, spec) = read_toy_model(&model_path)?;
    let pf = load_partition(&required(cfg.partition.clone(), "partition")?)?;
    prepare_run_dir(&a.run.out, a.run.force)?;
    write_config(&a.run.out, &cfg)?;
    let readout = GroupReadout::uniform(&spec, cfg.group)?;
    let result = toy_patching(
        &model,
        &spec,
        &pf.partition,
        &readout,
        cfg.samples,
        &mut stream(cfg.seed, streams::PATCHING),
    )?;
    let report = gini_report(&result.record)?;
    let row = ReportRow::new(format!("toy-group{}", cfg.group), &report);
    let table = summary_table(std::slice::from_ref(&row));
    let mut text = format!("{:>3} {:>4} {:>10} {:>8} {:>8}\n", "s", "d_s", "effect", "shift", "Var_s");
    for s in 0..result.record.effects.len() {
        text.push_str(&format!(
            "{s:>3} {:>4} {:>10.5} {:>7.2}% {:>8.4}\n",
            result.record.dims[s],
            result.record.effects[s],
            100.0 * result.relative_shift[s],
            result.record.variances[s]
        ));
    }
    text.push_str(&table);
    print!("{text}");
    write_json(
        &a.run.out.join("record.json"),
        &PatchToyOutput { record: &result.record, clean_mean: result.clean_mean, relative_shift: &result.relative_shift },
    )?;
    write_text(&a.run.out.join("report.jsonl"), &rows_to_jsonl(&[row])?)?;
    write_text(&a.run.out.join("summary.txt"), &text)?;
    Ok(())
}

pub fn preimage(a: PreimageArgs) -> CliResult {
    let pf = load_partition(&a.partition)?;
    let set = load_activations(&a.activations)?;
    let indices = build_index(&set, &pf.partition)?;
    let index = indices
        .get(a.subspace)
        .ok_or(NdmError::OutOfRange { index: a.subspace, len: indices.len() })?;
    let hits = match (a.row, &a.query) {
        (Some(row), None) => query_row(index, row, a.threshold, a.top_k)?,
        (None, Some(q)) => query(index, q, &QueryOptions { threshold: a.threshold, top_k: a.top_k, origin: None })?,
        _ => return Err(CliError::Usage("give exactly one of --row or --query".into())),
    };
    if a.json {
        for h in &hits {
            println!("{}", serde_json::to_string(h).map_err(|e| NdmError::Parse(e.to_string()))?);
        }
    } else {
        print!("{}", render_hits(&hits, &Corpus::new(&index.meta)));
    }
    Ok(())
}
