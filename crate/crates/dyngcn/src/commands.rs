//! The operations behind each subcommand, usable without the command line.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dyngcn_core::data::{synth_generate, train_test_split, SkeletonSequence, SynthSpec};
use dyngcn_core::flops::{count_model_flops, overhead_report, CostReport};
use dyngcn_core::graph::SkeletonLayout;
use dyngcn_core::learners::LearnerKind;
use dyngcn_core::model::{ensemble_logits, DynamicGcn, Modality, ModelConfig};
use dyngcn_core::train::{predict_logits, prepare_set, score, train, EpochRecord, EvalResult, PreparedSet};
use dyngcn_core::{Ctx, ParamStore, Real, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{self, Checkpoint, CheckpointMeta};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, ManifestEntry};
use crate::metrics;
use crate::sequence::save_sequence;

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const METRICS_FILE: &str = "metrics.tsv";
pub const TIMING_FILE: &str = "timing.tsv";
pub const CONFIG_FILE: &str = "config.toml";
pub const DEFAULT_THRESHOLD: f64 = 0.4;

pub fn parse_learner(s: &str) -> Result<LearnerKind> {
    Ok(match s {
        "none" => LearnerKind::None,
        "cen" => LearnerKind::Cen,
        "cen-symmetric" => LearnerKind::CenSymmetric,
        "cen-feature" => LearnerKind::CenFeature,
        "cen-temporal" => LearnerKind::CenTemporal,
        "non-local" => LearnerKind::NonLocal,
        _ => {
            return Err(Error::Config(format!(
                "unknown learner '{s}' (none, cen, cen-symmetric, cen-feature, cen-temporal, non-local)"
            )))
        }
    })
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Paths written by [`synth`].
#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub train_manifest: PathBuf,
    pub test_manifest: PathBuf,
    pub n_train: usize,
    pub n_test: usize,
}

/// Generates a dataset under `out_dir`: one file per sample in `samples/`
/// plus `train.txt` and `test.txt` manifests.
pub fn synth(spec: &SynthSpec, out_dir: &Path, test_fraction: f64, text: bool) -> Result<SynthOutput> {
    let samples = synth_generate(spec)?;
    let (train, test) = train_test_split(samples, test_fraction, spec.seed)?;
    let dir = out_dir.join("samples");
    create_dir(&dir)?;
    let ext = if text { "skt" } else { "skb" };
    let class_names: Vec<String> = (0..spec.n_classes).map(|c| format!("class{c:02}")).collect();
    let write_split = |seqs: &[SkeletonSequence], tag: &str| -> Result<PathBuf> {
        let mut m = DatasetManifest {
            class_names: class_names.clone(),
            layout: Some(spec.layout.clone()),
            split: Some(tag.to_string()),
            ..Default::default()
        };
        for s in seqs {
            let rel = PathBuf::from("samples").join(format!("{}.{ext}", s.id));
            save_sequence(s, &out_dir.join(&rel))?;
            m.entries.push(ManifestEntry { path: rel, label: s.label });
        }
        let path = out_dir.join(format!("{tag}.txt"));
        m.save(&path)?;
        Ok(path)
    };
    let train_manifest = write_split(&train, "train")?;
    let test_manifest = write_split(&test, "test")?;
    Ok(SynthOutput { train_manifest, test_manifest, n_train: train.len(), n_test: test.len() })
}

/// A model together with its parameters.
#[derive(Clone, Debug)]
pub struct Trained {
    pub model: DynamicGcn<f32>,
    pub store: ParamStore<f32>,
    pub records: Vec<EpochRecord>,
    /// Seconds since the start of training at the end of each epoch.
    pub epoch_seconds: Vec<f64>,
}

/// Builds a freshly initialized model; initialization depends only on `seed`.
pub fn init_model(model: &ModelConfig, layout: &SkeletonLayout, seed: u64) -> Result<(DynamicGcn<f32>, ParamStore<f32>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut store = ParamStore::new();
    let net = DynamicGcn::new(model, layout.clone(), &mut store, &mut rng)?;
    Ok((net, store))
}

/// Trains on in-memory sequences. `on_epoch` sees every record as it lands.
pub fn fit(
    cfg: &RunConfig,
    layout: &SkeletonLayout,
    train_seqs: &[SkeletonSequence],
    eval_seqs: Option<&[SkeletonSequence]>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Trained> {
    cfg.validate()?;
    let modality = cfg.train.modality;
    let train_set = prepare_set::<f32>(train_seqs, layout, &cfg.model, modality)?;
    let eval_set = eval_seqs.map(|s| prepare_set::<f32>(s, layout, &cfg.model, modality)).transpose()?;
    let (model, mut store) = init_model(&cfg.model, layout, cfg.train.seed)?;
    let t0 = Instant::now();
    let mut epoch_seconds = Vec::new();
    let records = train(&model, &mut store, &train_set, eval_set.as_ref(), &cfg.train, |r| {
        epoch_seconds.push(t0.elapsed().as_secs_f64());
        on_epoch(r)
    })?;
    Ok(Trained { model, store, records, epoch_seconds })
}

fn load_manifest_checked(path: &Path, layout: &SkeletonLayout) -> Result<(DatasetManifest, Vec<SkeletonSequence>)> {
    let m = DatasetManifest::load(path)?;
    if let Some(l) = &m.layout {
        if l != layout.name() {
            return Err(Error::Config(format!(
                "{}: manifest layout '{l}' does not match model layout '{}'",
                path.display(),
                layout.name()
            )));
        }
    }
    if m.entries.is_empty() {
        return Err(Error::Data(format!("{}: manifest lists no samples", path.display())));
    }
    let seqs = m.load_sequences()?;
    Ok((m, seqs))
}

/// What a training run leaves in its output directory.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub records: Vec<EpochRecord>,
}

/// Full run from a configuration: reads the manifests, trains, and writes
/// checkpoint, metrics log, timing log and the resolved configuration.
pub fn train_run(cfg: &RunConfig, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<RunOutput> {
    cfg.validate()?;
    let layout = cfg.layout()?;
    let train_path = cfg
        .data
        .train_manifest
        .as_deref()
        .ok_or_else(|| Error::Config("data.train_manifest is not set".into()))?;
    let (_, train_seqs) = load_manifest_checked(train_path, &layout)?;
    let eval_seqs = cfg.data.test_manifest.as_deref().map(|p| load_manifest_checked(p, &layout)).transpose()?;
    let trained = fit(cfg, &layout, &train_seqs, eval_seqs.as_ref().map(|(_, s)| s.as_slice()), &mut on_epoch)?;

    let out = &cfg.output_dir;
    create_dir(out)?;
    let meta = CheckpointMeta { modality: cfg.train.modality, model: cfg.model.clone() };
    let ckpt = out.join(CHECKPOINT_FILE);
    checkpoint::save(&ckpt, &meta, &layout, &trained.store)?;
    let metrics_path = out.join(METRICS_FILE);
    write_file(&metrics_path, metrics::format_log(&trained.records))?;
    let mut timing = String::from("epoch\tseconds\n");
    for (r, s) in trained.records.iter().zip(&trained.epoch_seconds) {
        let _ = writeln!(timing, "{}\t{s:.3}", r.epoch);
    }
    write_file(&out.join(TIMING_FILE), timing)?;
    cfg.save(&out.join(CONFIG_FILE))?;
    Ok(RunOutput { checkpoint: ckpt, metrics: metrics_path, records: trained.records })
}

/// Eval-mode logits of `ckpt` on `seqs`, preprocessed with the checkpoint's modality.
pub fn checkpoint_logits(ckpt: &mut Checkpoint, seqs: &[SkeletonSequence], batch_size: usize) -> Result<(Tensor<f64>, Vec<usize>)> {
    let set: PreparedSet<f32> = prepare_set(seqs, &ckpt.layout, &ckpt.meta.model, ckpt.meta.modality)?;
    let logits = predict_logits(&ckpt.model, &mut ckpt.store, &set, batch_size)?;
    Ok((logits, set.labels))
}

pub fn evaluate_checkpoint(ckpt_path: &Path, manifest: &Path, batch_size: usize) -> Result<EvalResult> {
    ensemble(&[ckpt_path.to_path_buf()], manifest, batch_size)
}

/// Sums the logits of every checkpoint (each with its own modality) and scores them.
pub fn ensemble(ckpts: &[PathBuf], manifest: &Path, batch_size: usize) -> Result<EvalResult> {
    let first = ckpts.first().ok_or_else(|| Error::Config("no checkpoints given".into()))?;
    let mut loaded = Vec::with_capacity(ckpts.len());
    for p in ckpts {
        loaded.push(checkpoint::load(p)?);
    }
    let classes = loaded[0].meta.model.n_classes;
    for (c, p) in loaded.iter().zip(ckpts) {
        if c.meta.model.n_classes != classes {
            return Err(Error::Config(format!(
                "{} has {} classes but {} has {classes}",
                p.display(),
                c.meta.model.n_classes,
                first.display()
            )));
        }
    }
    let (m, seqs) = load_manifest_checked(manifest, &loaded[0].layout)?;
    if m.n_classes() > classes {
        return Err(Error::Config(format!(
            "{}: manifest has {} classes but the model predicts {classes}",
            manifest.display(),
            m.n_classes()
        )));
    }
    let layout_name = loaded[0].layout.name().to_string();
    let mut sets = Vec::with_capacity(loaded.len());
    let mut labels = Vec::new();
    for c in &mut loaded {
        if c.layout.name() != layout_name {
            return Err(Error::Config(format!("checkpoint layouts differ: '{}' vs '{layout_name}'", c.layout.name())));
        }
        let (l, y) = checkpoint_logits(c, &seqs, batch_size)?;
        sets.push(l);
        labels = y;
    }
    let summed = ensemble_logits(&sets)?;
    Ok(score(&summed, &labels)?)
}

/// Human-readable accuracy summary with the confusion matrix.
pub fn format_eval(r: &EvalResult) -> String {
    let mut s = format!("top1={}\ntop5={}\nconfusion (rows true, columns predicted)\n", r.top1, r.top5);
    for row in &r.confusion {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&cells.join("\t"));
        s.push('\n');
    }
    s
}

/// FLOPs of one or both modes.
#[derive(Clone, Debug)]
pub struct FlopsOutput {
    pub without_cen: Option<CostReport>,
    pub with_cen: Option<CostReport>,
}

impl FlopsOutput {
    pub fn overhead(&self) -> Option<f64> {
        match (&self.without_cen, &self.with_cen) {
            (Some(a), Some(b)) => overhead_report(a, b).ok().map(|o| o.total.ratio),
            _ => None,
        }
    }
}

/// Counts the modes asked for; neither flag means both.
pub fn flops(model: &ModelConfig, with_cen: bool, without_cen: bool) -> Result<FlopsOutput> {
    model.validate()?;
    let both = !with_cen && !without_cen;
    Ok(FlopsOutput {
        without_cen: (without_cen || both).then(|| count_model_flops(model, false)).transpose()?,
        with_cen: (with_cen || both).then(|| count_model_flops(model, true)).transpose()?,
    })
}

fn giga(v: u64) -> String {
    format!("{:.3}G", v as f64 / 1e9)
}

fn report_table(s: &mut String, r: &CostReport, label: &str) {
    let _ = writeln!(s, "[{label}] bodies={}", r.bodies);
    let _ = writeln!(s, "{:<12} {:>16} {:>16}  {:>14} {:>14}", "layer", "in (C,T,N)", "out (C,T,N)", "flops", "minor ops");
    for l in &r.layers {
        let shape = |x: [usize; 3]| format!("{}x{}x{}", x[0], x[1], x[2]);
        let _ = writeln!(
            s,
            "{:<12} {:>16} {:>16}  {:>14} {:>14}",
            l.name,
            shape(l.input_shape),
            shape(l.output_shape),
            l.flops,
            l.minor_ops
        );
    }
    let _ = writeln!(s, "{:<12} {:>16} {:>16}  {:>14} {:>14}  ({})", "total", "", "", r.total, r.minor_ops, giga(r.total));
}

/// Tables for each mode followed by `key=value` summary lines.
pub fn format_flops(out: &FlopsOutput) -> String {
    let mut s = String::new();
    if let Some(r) = &out.without_cen {
        report_table(&mut s, r, "without-cen");
    }
    if let Some(r) = &out.with_cen {
        report_table(&mut s, r, "with-cen");
    }
    if let (Some(a), Some(b)) = (&out.without_cen, &out.with_cen) {
        if let Ok(o) = overhead_report(a, b) {
            s.push_str("[overhead]\n");
            for r in &o.rows {
                let _ = writeln!(s, "{:<12} {:>14} {:>+8.2}%", r.name, r.delta, r.ratio * 100.0);
            }
        }
    }
    if let Some(r) = &out.without_cen {
        let _ = writeln!(s, "total_without_cen={}", r.total);
    }
    if let Some(r) = &out.with_cen {
        let _ = writeln!(s, "total_with_cen={}", r.total);
    }
    if let Some(x) = out.overhead() {
        let _ = writeln!(s, "overhead_ratio={x:.6}");
    }
    s
}

/// Class-averaged learned adjacency of one layer.
#[derive(Clone, Debug)]
pub struct TopologyExport {
    pub layer: usize,
    pub class_id: usize,
    pub samples: usize,
    /// `n × n`, row-major; entry `(i, j)` weighs joint `j` into joint `i`.
    pub matrix: Vec<f64>,
    pub n: usize,
}

/// Averages the learned per-sample graph of 1-based `layer` over every sample
/// of `class_id`, using the first person of each sample, in eval mode.
pub fn class_topology(ckpt: &mut Checkpoint, seqs: &[SkeletonSequence], layer: usize, class_id: usize) -> Result<TopologyExport> {
    let n_layers = ckpt.model.layers().len();
    if layer == 0 || layer > n_layers {
        return Err(Error::Config(format!("layer {layer} is out of range 1..={n_layers}")));
    }
    if ckpt.model.layers()[layer - 1].learner.is_none() {
        return Err(Error::Config(format!("layer {layer} has no topology learner")));
    }
    let picked: Vec<SkeletonSequence> = seqs.iter().filter(|s| s.label == class_id).cloned().collect();
    if picked.is_empty() {
        return Err(Error::Data(format!("class {class_id} has no samples")));
    }
    let set: PreparedSet<f32> = prepare_set(&picked, &ckpt.layout, &ckpt.meta.model, ckpt.meta.modality)?;
    let persons = ckpt.meta.model.persons;
    let n = ckpt.model.plan()[layer - 1].n_in;
    let mut sum = vec![0.0f64; n * n];
    let idx: Vec<usize> = (0..set.len()).collect();
    for chunk in idx.chunks(16) {
        let (x, _) = set.batch(chunk)?;
        let mut ctx = Ctx::new(&mut ckpt.store, false);
        let xv = ctx.tape.constant(x);
        let trace = ckpt.model.forward_traced(&mut ctx, xv)?;
        let g = trace.graphs[layer - 1].expect("layer has a learner");
        let g = ctx.tape.value(g);
        for b in 0..chunk.len() {
            let row = b * persons;
            for (acc, v) in sum.iter_mut().zip(&g.data()[row * n * n..(row + 1) * n * n]) {
                *acc += v.as_f64();
            }
        }
    }
    let k = picked.len() as f64;
    let matrix = sum.into_iter().map(|v| v / k).collect();
    Ok(TopologyExport { layer, class_id, samples: picked.len(), matrix, n })
}

pub fn format_matrix(t: &TopologyExport) -> String {
    let mut s = format!("# layer {} class {} samples {} joints {}\n", t.layer, t.class_id, t.samples, t.n);
    for row in t.matrix.chunks(t.n) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        s.push_str(&cells.join(" "));
        s.push('\n');
    }
    s
}

/// Physical bones in gray (only when the layer still sees every joint), plus
/// a directed edge `j -> i` for each off-diagonal entry above `threshold`.
pub fn format_dot(t: &TopologyExport, layout: &SkeletonLayout, threshold: f64) -> String {
    let mut s = format!("digraph layer{}_class{} {{\n  node [shape=circle];\n", t.layer, t.class_id);
    for i in 0..t.n {
        let _ = writeln!(s, "  {i};");
    }
    if t.n == layout.n_joints() {
        for &(a, b) in layout.edges() {
            let _ = writeln!(s, "  {a} -> {b} [dir=none, color=gray];");
        }
    }
    for i in 0..t.n {
        for j in 0..t.n {
            let v = t.matrix[i * t.n + j];
            if i != j && v > threshold {
                let _ = writeln!(s, "  {j} -> {i} [color=red, label=\"{v:.2}\"];");
            }
        }
    }
    s.push_str("}\n");
    s
}

/// Writes `<prefix>.txt` and `<prefix>.dot`; returns both paths.
pub fn export_topology(
    ckpt_path: &Path,
    manifest: &Path,
    layer: usize,
    class_id: usize,
    threshold: f64,
    prefix: &Path,
) -> Result<(PathBuf, PathBuf, TopologyExport)> {
    let mut ckpt = checkpoint::load(ckpt_path)?;
    let (_, seqs) = load_manifest_checked(manifest, &ckpt.layout)?;
    let t = class_topology(&mut ckpt, &seqs, layer, class_id)?;
    if let Some(dir) = prefix.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let txt = prefix.with_extension("txt");
    let dot = prefix.with_extension("dot");
    write_file(&txt, format_matrix(&t))?;
    write_file(&dot, format_dot(&t, &ckpt.layout, threshold))?;
    Ok((txt, dot, t))
}

/// Resolves a configuration from a file or a preset name.
pub fn load_config(config: Option<&Path>, preset: Option<&str>) -> Result<RunConfig> {
    match (config, preset) {
        (Some(p), None) => RunConfig::load(p),
        (None, Some(n)) => RunConfig::preset(n),
        (None, None) => Err(Error::Config("pass --config FILE or --preset NAME".into())),
        (Some(_), Some(_)) => Err(Error::Config("--config and --preset are mutually exclusive".into())),
    }
}

pub fn parse_modality(s: &str) -> Result<Modality> {
    Ok(Modality::parse(s)?)
}
