use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde_json::{json, Value};

use bcct_core::evalkit::{self, render, sweep_table_text, EvalSettings};
use bcct_core::nets::{Backbone, BcNet, CtNet, Parameters};
use bcct_core::rng::stream;
use bcct_core::saliency::{gradient_maps, mask_from_map};
use bcct_core::synthdata::{self, input_batch, pnm, DatasetMeta, GenDataParams, ImageSample, Split};
use bcct_core::tensor::{read_checkpoint, write_checkpoint};
use bcct_core::trainer::{self, log_to_jsonl, Precision, TrainConfig};
use bcct_core::{selftest, Real};

use crate::args::*;
use crate::manifest::{create_run_dir, input_hash, RunManifest};
use crate::Invalid;

/// Config file, then `--set` overrides, then the dedicated flags.
pub fn resolve_config(c: &Common) -> Result<TrainConfig> {
    let mut doc: Value = match &c.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).map_err(|e| Invalid(format!("{}: {e}", p.display())))?
        }
        None => json!({}),
    };
    if !doc.is_object() {
        bail!(Invalid("config must be a JSON object".into()));
    }
    for kv in &c.overrides {
        let (key, raw) = kv
            .split_once('=')
            .ok_or_else(|| Invalid(format!("--set expects KEY=JSON, got {kv:?}")))?;
        let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut slot = &mut doc;
        for part in key.split('.') {
            if !slot.is_object() {
                *slot = json!({});
            }
            slot = slot.as_object_mut().expect("object").entry(part).or_insert(Value::Null);
        }
        *slot = value;
    }
    let mut cfg = TrainConfig::from_json(&doc.to_string())?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(t) = c.threads {
        cfg.threads = t;
    }
    if let Some(p) = &c.precision {
        cfg.precision = p.parse()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Run {
    dir: PathBuf,
    command: &'static str,
    start: Instant,
    outputs: Vec<String>,
}

impl Run {
    fn start(command: &'static str, out: &Path) -> Result<Run> {
        Ok(Run {
            dir: create_run_dir(out)?,
            command,
            start: Instant::now(),
            outputs: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.dir.join(name)
    }

    fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        let p = self.path(name);
        fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))
    }

    fn finish(self, config: Value, seed: u64, inputs: &[&Path]) -> Result<PathBuf> {
        RunManifest {
            command: self.command.to_string(),
            config,
            seed,
            input_hash: input_hash(inputs)?,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_ms: self.start.elapsed().as_millis() as u64,
            outputs: self.outputs,
        }
        .write(&self.dir)?;
        println!("{}", self.dir.display());
        Ok(self.dir)
    }
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let bad = || Invalid(format!("--size expects HxW, got {s:?}"));
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((h.trim().parse().map_err(|_| bad())?, w.trim().parse().map_err(|_| bad())?))
}

fn parse_split(s: &str) -> Result<Split> {
    Split::ALL
        .into_iter()
        .find(|sp| sp.name() == s)
        .ok_or_else(|| Invalid(format!("unknown split {s:?}; expected train, test or background")).into())
}

fn require<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a PathBuf> {
    p.as_ref().ok_or_else(|| Invalid(format!("missing required flag {flag}")).into())
}

fn config_value(cfg: &TrainConfig, extra: Value) -> Value {
    let mut v = serde_json::to_value(cfg).expect("config serializes");
    if let (Some(obj), Value::Object(more)) = (v.as_object_mut(), extra) {
        obj.extend(more);
    }
    v
}

pub fn gen_data(a: &GenDataArgs) -> Result<()> {
    let (height, width) = parse_size(&a.size)?;
    let params = GenDataParams {
        seed: a.seed,
        classes: a.classes,
        train: a.train,
        test: a.test,
        background: a.background,
        height,
        width,
    };
    let mut run = Run::start("gen-data", &a.out)?;
    synthdata::gen_data(&params, &run.dir)?;
    for s in Split::ALL {
        run.outputs.push(format!("{}/", s.name()));
        run.outputs.push(format!("{}.jsonl", s.name()));
    }
    run.outputs.push("meta.json".into());
    run.finish(serde_json::to_value(params)?, a.seed, &[])?;
    Ok(())
}

fn load(data: &Path, split: Split) -> Result<Vec<ImageSample>> {
    Ok(synthdata::load_split(data, split)?.samples().collect::<bcct_core::Result<_>>()?)
}

fn load_backbone<T: Real>(path: &Path) -> Result<Backbone<T>> {
    let mut b = Backbone::new(&mut stream(0, "placeholder", 0));
    b.load_checkpoint(&read_checkpoint(path)?)?;
    Ok(b)
}

fn load_bc<T: Real>(path: &Path) -> Result<BcNet<T>> {
    let mut net = BcNet::new(Backbone::new(&mut stream(0, "placeholder", 0)), &mut stream(0, "placeholder", 1));
    net.load_checkpoint(&read_checkpoint(path)?)?;
    Ok(net)
}

fn load_ct<T: Real>(path: &Path, n_classes: usize) -> Result<CtNet<T>> {
    let mut net = CtNet::new(Backbone::new(&mut stream(0, "placeholder", 0)), n_classes, &mut stream(0, "placeholder", 1))?;
    net.load_checkpoint(&read_checkpoint(path)?)?;
    Ok(net)
}

macro_rules! by_precision {
    ($cfg:expr, $f:ident($($arg:expr),*)) => {
        match $cfg.precision {
            Precision::F32 => $f::<f32>($($arg),*),
            Precision::F64 => $f::<f64>($($arg),*),
        }
    };
}

pub fn pretrain(a: &PretrainArgs) -> Result<()> {
    let cfg = resolve_config(&a.common)?;
    by_precision!(cfg, pretrain_with(a, &cfg))
}

fn pretrain_stage<T: Real>(cfg: &TrainConfig, data: &Path, meta: &DatasetMeta, run: &mut Run) -> Result<Backbone<T>> {
    let train = load(data, Split::Train)?;
    let test = load(data, Split::Test)?;
    let out = trainer::pretrain_backbone::<T>(cfg, &train, &test, &meta.normalization, meta.n_classes())?;
    eprintln!("pretrain: train accuracy {:.4}, test accuracy {:.4}", out.train_acc, out.test_acc);
    write_checkpoint(&run.path("backbone.ckpt"), &out.backbone.to_checkpoint())?;
    run.write("pretrain_log.jsonl", log_to_jsonl(&out.log))?;
    let summary = json!({"initial_loss": out.initial_loss, "train_acc": out.train_acc, "test_acc": out.test_acc});
    run.write("pretrain.json", serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(out.backbone)
}

fn pretrain_with<T: Real>(a: &PretrainArgs, cfg: &TrainConfig) -> Result<()> {
    let meta = DatasetMeta::read(&a.data)?;
    let mut run = Run::start("pretrain", &a.out)?;
    pretrain_stage::<T>(cfg, &a.data, &meta, &mut run)?;
    run.finish(config_value(cfg, json!({})), cfg.seed, &[&a.data])?;
    Ok(())
}

fn bc_stage<T: Real>(
    cfg: &TrainConfig,
    data: &Path,
    meta: &DatasetMeta,
    backbone: Backbone<T>,
    run: &mut Run,
) -> Result<BcNet<T>> {
    let train = load(data, Split::Train)?;
    let test = load(data, Split::Test)?;
    let bg = load(data, Split::Background)?;
    let (h, w) = (meta.params.height, meta.params.width);
    let held_bg = trainer::heldout_backgrounds(meta.seed, test.len(), w, h);
    let out = trainer::train_bc(cfg, &train, &bg, &test, &held_bg, &meta.normalization, backbone)?;
    eprintln!("train-bc: held-out accuracy {:.4}", out.heldout_acc);
    write_checkpoint(&run.path("bc.ckpt"), &out.net.to_checkpoint())?;
    run.write("bc_log.jsonl", log_to_jsonl(&out.log))?;
    run.write("bc.json", serde_json::to_string_pretty(&json!({"heldout_acc": out.heldout_acc}))? + "\n")?;
    Ok(out.net)
}

pub fn train_bc(a: &TrainBcArgs) -> Result<()> {
    let cfg = resolve_config(&a.common)?;
    by_precision!(cfg, train_bc_with(a, &cfg))
}

fn train_bc_with<T: Real>(a: &TrainBcArgs, cfg: &TrainConfig) -> Result<()> {
    let meta = DatasetMeta::read(&a.data)?;
    let backbone = load_backbone::<T>(&a.backbone)?;
    let mut run = Run::start("train-bc", &a.out)?;
    bc_stage(cfg, &a.data, &meta, backbone, &mut run)?;
    run.finish(config_value(cfg, json!({"backbone": a.backbone})), cfg.seed, &[&a.data, &a.backbone])?;
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let cfg = resolve_config(&a.common)?;
    by_precision!(cfg, train_with(a, &cfg))
}

fn train_with<T: Real>(a: &TrainArgs, cfg: &TrainConfig) -> Result<()> {
    let meta = DatasetMeta::read(&a.data)?;
    let mut run = Run::start("train", &a.out)?;
    let backbone = match &a.backbone {
        Some(p) => load_backbone::<T>(p)?,
        None => pretrain_stage::<T>(cfg, &a.data, &meta, &mut run)?,
    };
    let bc = match &a.bc {
        Some(p) => load_bc::<T>(p)?,
        None => bc_stage(cfg, &a.data, &meta, backbone.clone(), &mut run)?,
    };
    let train = load(&a.data, Split::Train)?;
    let out = trainer::train_bcct(cfg, &train, &meta.normalization, backbone, &bc, meta.n_classes())?;
    if let Some(last) = out.log.last() {
        eprintln!("train: final cls loss {:.4}, mask loss {:.4}", last.cls_loss, last.mask_loss);
    }
    write_checkpoint(&run.path("ct.ckpt"), &out.net.to_checkpoint())?;
    run.write("train_log.jsonl", log_to_jsonl(&out.log))?;
    let mut inputs: Vec<&Path> = vec![&a.data];
    inputs.extend(a.backbone.as_deref());
    inputs.extend(a.bc.as_deref());
    let extra = json!({"backbone": a.backbone, "bc": a.bc});
    run.finish(config_value(cfg, extra), cfg.seed, &inputs)?;
    Ok(())
}

fn settings(cfg: &TrainConfig, tau: Option<f64>) -> Result<EvalSettings> {
    let tau = tau.unwrap_or(cfg.tau());
    if !(tau > 0.0 && tau <= 1.0) {
        bail!(Invalid(format!("--tau must lie in (0, 1], got {tau}")));
    }
    Ok(EvalSettings {
        tau,
        rule: cfg.iou_rule(),
        mask: cfg.mask_settings(),
        seed: cfg.seed,
        ..EvalSettings::default()
    })
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let ckpt = require(&a.checkpoint, "--checkpoint")?;
    let cfg = resolve_config(&a.common)?;
    let split = parse_split(&a.split)?;
    let st = settings(&cfg, a.tau)?;
    by_precision!(cfg, eval_with(a, &cfg, ckpt, split, &st))
}

fn eval_with<T: Real>(a: &EvalArgs, cfg: &TrainConfig, ckpt: &Path, split: Split, st: &EvalSettings) -> Result<()> {
    let meta = DatasetMeta::read(&a.data)?;
    let ct = load_ct::<T>(ckpt, meta.n_classes())?;
    let bc = a.bc.as_deref().map(load_bc::<T>).transpose()?;
    let samples = load(&a.data, split)?;
    let report = evalkit::evaluate(&ct, bc.as_ref(), &samples, &meta.normalization, st)?;
    let mut run = Run::start("eval", &a.out)?;
    run.write("metrics.json", serde_json::to_string_pretty(&report.metrics)? + "\n")?;
    let mut lines = String::new();
    for r in &report.records {
        lines.push_str(&serde_json::to_string(r)?);
        lines.push('\n');
    }
    run.write("records.jsonl", lines)?;
    let m = &report.metrics;
    eprintln!("eval: top-1 error {:.2}%, top-5 error {:.2}%", m.top1_err, m.top5_err);
    if let Some(b) = m.bcstar_err {
        eprintln!("eval: BC* error {b:.2}%");
    }
    let extra = json!({"checkpoint": ckpt, "bc": a.bc, "split": split.name(), "tau": st.tau});
    let mut inputs: Vec<&Path> = vec![&a.data, ckpt];
    inputs.extend(a.bc.as_deref());
    run.finish(config_value(cfg, extra), cfg.seed, &inputs)?;
    Ok(())
}

pub fn sweep(a: &SweepArgs) -> Result<()> {
    let ckpt = require(&a.checkpoint, "--checkpoint")?;
    let cfg = resolve_config(&a.common)?;
    let split = parse_split(&a.split)?;
    if a.deltas.is_empty() {
        bail!(Invalid("--deltas needs at least one value".into()));
    }
    if let Some(d) = a.deltas.iter().find(|d| !(**d > 0.0 && **d <= 1.0)) {
        bail!(Invalid(format!("every delta must lie in (0, 1], got {d}")));
    }
    by_precision!(cfg, sweep_with(a, &cfg, ckpt, split))
}

fn sweep_with<T: Real>(a: &SweepArgs, cfg: &TrainConfig, ckpt: &Path, split: Split) -> Result<()> {
    let meta = DatasetMeta::read(&a.data)?;
    let ct = load_ct::<T>(ckpt, meta.n_classes())?;
    let samples = load(&a.data, split)?;
    let preds = evalkit::predict(&ct, &samples, &meta.normalization, EvalSettings::default().batch_size)?;
    let rows = evalkit::sweep_threshold(&preds, &a.deltas, cfg.iou_rule())?;
    let mut run = Run::start("sweep", &a.out)?;
    run.write("sweep.json", serde_json::to_string_pretty(&rows)? + "\n")?;
    let table = sweep_table_text(&rows);
    run.write("sweep.txt", &table)?;
    eprint!("{table}");
    let extra = json!({"checkpoint": ckpt, "split": split.name(), "deltas": a.deltas});
    run.finish(config_value(cfg, extra), cfg.seed, &[&a.data, ckpt])?;
    Ok(())
}

pub fn render(a: &RenderArgs) -> Result<()> {
    let ckpt = require(&a.checkpoint, "--checkpoint")?;
    let cfg = resolve_config(&a.common)?;
    let split = parse_split(&a.split)?;
    let st = settings(&cfg, a.tau)?;
    by_precision!(cfg, render_with(a, &cfg, ckpt, split, &st))
}

fn render_with<T: Real>(a: &RenderArgs, cfg: &TrainConfig, ckpt: &Path, split: Split, st: &EvalSettings) -> Result<()> {
    let meta = DatasetMeta::read(&a.data)?;
    let ct = load_ct::<T>(ckpt, meta.n_classes())?;
    let bc = a.bc.as_deref().map(load_bc::<T>).transpose()?;
    let mut samples = load(&a.data, split)?;
    samples.truncate(a.count);
    if samples.is_empty() {
        bail!(Invalid("nothing to render".into()));
    }
    let norm = &meta.normalization;
    let preds = evalkit::predict(&ct, &samples, norm, st.batch_size)?;
    let records = evalkit::records_at(&preds, st.tau, st.rule)?;
    let mut run = Run::start("render", &a.out)?;
    for (i, (s, r)) in samples.iter().zip(&records).enumerate() {
        let (w, h) = (s.width, s.height);
        let img = render::interleave(&render::overlay(s, r.boxes.first()), synthdata::CHANNELS);
        pnm::write(&run.path(&format!("{i:04}_overlay.ppm")), w, h, 3, &img)?;
        if let Some(bc) = &bc {
            let x = input_batch::<T>(&[s], Some(norm), h, w)?;
            let map = gradient_maps(bc, &x, st.mask.reduction)?.remove(0);
            let mask = mask_from_map(&map, &st.mask)?;
            pnm::write(&run.path(&format!("{i:04}_gradient.pgm")), w, h, 1, &map.to_gray8())?;
            pnm::write(&run.path(&format!("{i:04}_mask.pgm")), w, h, 1, &mask.to_gray8())?;
        }
    }
    let extra = json!({"checkpoint": ckpt, "bc": a.bc, "split": split.name(), "count": a.count, "tau": st.tau});
    let mut inputs: Vec<&Path> = vec![&a.data, ckpt];
    inputs.extend(a.bc.as_deref());
    run.finish(config_value(cfg, extra), cfg.seed, &inputs)?;
    Ok(())
}

/// Returns whether every check passed.
pub fn selftest(a: &SelftestArgs) -> bool {
    let checks = selftest::run(a.seed);
    for c in &checks {
        println!("{} {:<48} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} checks, {failed} failed", checks.len());
    failed == 0
}
