//! `synth`, `detect` and `run`.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::Context as _;

use hemsmeta_core::context_detect::{
    contexts_csv, detect as detect_shifts, losses_csv, parse_contexts_csv, segments, windows_from_dataset,
    ContextSegment, Detection,
};
use hemsmeta_core::energy_env::{synth_year, Dataset, HomeEnv};
use hemsmeta_core::gpi_agent::save_qnet;
use hemsmeta_core::manifest::Manifest;
use hemsmeta_core::meta_reptile::{
    baseline_run, finetune_run_year, meta_train, rewards_csv, rule_run, table1_budget, MetaConfig, YearOutcome,
};

use crate::config::{parse_seeds, Method, RunConfig, SynthSpec};
use crate::plot::{chart, Chart, Mark, Series};
use crate::DataArgs;

pub const METRICS_HEADER: &str = "method,seed,eu,hv,sp,hv_over_sp,bill,comfort";
pub const SOLUTIONS_HEADER: &str = "method,seed,policy_id,w1,neg_cost,comfort,on_front";

pub fn write(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

pub fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn synth(spec: &str, seed: u64, out: &Path) -> anyhow::Result<()> {
    let spec: SynthSpec = spec.parse()?;
    let data = synth_year(seed, &spec.regimes)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write(out, data.to_csv())
}

/// Config file (or defaults) with the data flags applied on top.
fn resolve(config: Option<&Path>, data: &DataArgs) -> anyhow::Result<RunConfig> {
    let mut cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &data.dataset {
        cfg.dataset = Some(d.clone());
        cfg.synth_spec = None;
    }
    if let Some(s) = &data.synth_spec {
        cfg.synth_spec = Some(s.clone());
        cfg.dataset = None;
    }
    Ok(cfg)
}

fn detection(data: &Dataset, cfg: &RunConfig) -> anyhow::Result<(Vec<ContextSegment>, Detection)> {
    let windows = windows_from_dataset(data)?;
    let det = detect_shifts(&windows, &cfg.detect)?;
    let segs = segments(&det.shifts, data.first_day(), data.last_day())?;
    Ok((segs, det))
}

fn join_days(segs: &[ContextSegment]) -> String {
    segs.iter()
        .map(|s| s.start_day.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

pub fn losses_svg(det: &Detection) -> String {
    let trace = &det.trace;
    chart(&Chart {
        title: "Reconstruction loss".into(),
        x_label: "day".into(),
        y_label: "loss".into(),
        series: vec![
            Series {
                label: "loss".into(),
                mark: Mark::Line,
                points: trace.iter().map(|r| (r.day as f64, r.loss)).collect(),
            },
            Series {
                label: "threshold".into(),
                mark: Mark::Line,
                points: trace.iter().map(|r| (r.day as f64, r.threshold)).collect(),
            },
            Series {
                label: "shift".into(),
                mark: Mark::Rules,
                points: det.shifts.iter().map(|&d| (d as f64, 0.0)).collect(),
            },
        ],
    })
}

pub fn detect(config: Option<&Path>, data: &DataArgs, seed: Option<u64>, out: &Path) -> anyhow::Result<()> {
    let mut cfg = resolve(config, data)?;
    if let Some(s) = seed {
        cfg.detect.seed = s;
    }
    cfg.validate()?;
    let (data, label) = cfg.dataset()?;
    let (segs, det) = detection(&data, &cfg)?;
    create_dir(out)?;
    write(&out.join("contexts.csv"), contexts_csv(&segs))?;
    write(&out.join("losses.csv"), losses_csv(&det.trace))?;
    write(&out.join("losses.svg"), losses_svg(&det))?;
    let mut m = Manifest::new();
    m.set("command", "detect")
        .set("dataset", label)
        .set("detect_seed", cfg.detect.seed)
        .set("n_contexts", segs.len())
        .set("shift_days", join_days(&segs));
    write(&out.join("manifest.txt"), m.render())
}

fn run_method(
    method: Method,
    cfg: &RunConfig,
    env: &HomeEnv,
    contexts: &[ContextSegment],
    seed: u64,
) -> hemsmeta_core::Result<YearOutcome> {
    match method {
        Method::Rule(rule) => rule_run(rule, env, contexts, cfg.hv_ref),
        Method::Baseline(kind, variant) => baseline_run(
            kind,
            variant,
            env,
            contexts,
            &cfg.agent,
            &cfg.baseline,
            &cfg.dyna,
            cfg.hv_ref,
            seed,
        ),
        Method::Meta { finetune, variant } => {
            let meta = meta_train(env, contexts, &cfg.agent, &cfg.meta, variant, &cfg.dyna, seed)?;
            let year_cfg = if finetune {
                cfg.meta.clone()
            } else {
                MetaConfig {
                    finetune_steps: 0,
                    ..cfg.meta.clone()
                }
            };
            finetune_run_year(
                &meta, env, contexts, &cfg.agent, &year_cfg, variant, &cfg.dyna, cfg.hv_ref, seed,
            )
        }
    }
}

/// Mismatch between the executed budget and the reference ledger, if any.
fn budget_warning(method: Method, out: &YearOutcome, seed: u64) -> Option<String> {
    let expected = table1_budget(method.budget_kind()?)?;
    (expected != out.budget).then(|| {
        format!(
            "seed {seed}: data volume {} and budget {} differ from the reference {} and {} (twelve contexts, default step counts)",
            out.budget.data_volume, out.budget.training_budget, expected.data_volume, expected.training_budget
        )
    })
}

pub fn run(
    config: Option<&Path>,
    method: Option<&str>,
    seeds: Option<&str>,
    data: &DataArgs,
    out: &Path,
) -> anyhow::Result<()> {
    let mut cfg = resolve(config, data)?;
    if let Some(m) = method {
        cfg.method = Some(m.to_string());
    }
    if let Some(s) = seeds {
        cfg.seeds = parse_seeds(s)?;
    }
    let method = cfg.method()?;
    cfg.validate()?;
    let (data, label) = cfg.dataset()?;
    let contexts = match &cfg.contexts {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("cannot read contexts {}", p.display()))?;
            parse_contexts_csv(&text)?
        }
        None => detection(&data, &cfg)?.0,
    };
    let env = HomeEnv::new(data, cfg.env.clone())?;
    create_dir(out)?;

    let name = method.to_string();
    let mut metrics = format!("{METRICS_HEADER}\n");
    let mut solutions = format!("{SOLUTIONS_HEADER}\n");
    let mut warnings = Vec::new();
    let mut budgets = Vec::new();
    for &seed in &cfg.seeds {
        let res = run_method(method, &cfg, &env, &contexts, seed).with_context(|| format!("{name}, seed {seed}"))?;
        let r = &res.metrics;
        let _ = writeln!(
            metrics,
            "{name},{seed},{},{},{},{},{},{}",
            r.eu,
            r.hv,
            fmt_opt(r.sp),
            fmt_opt(r.hv_over_sp),
            r.bill_at_w91,
            r.comfort_at_w19
        );
        let front: BTreeSet<usize> = res.front.entries.iter().map(|e| e.policy_id).collect();
        for e in &res.solutions.entries {
            let v = e.value.as_slice();
            let w1 = res
                .support
                .get(e.policy_id)
                .map(|w| w.first().to_string())
                .unwrap_or_default();
            let _ = writeln!(
                solutions,
                "{name},{seed},{},{w1},{},{},{}",
                e.policy_id,
                v[0],
                v[1],
                front.contains(&e.policy_id) as u8
            );
        }
        budgets.push(res.budget);
        let dir = out.join(format!("seed-{seed}"));
        create_dir(&dir)?;
        let mut seed_manifest = res.manifest.clone();
        seed_manifest.set("method", &name);
        if let Some(w) = budget_warning(method, &res, seed) {
            eprintln!("warning: {w}");
            seed_manifest.set("budget_warning", &w);
            warnings.push(w);
        }
        write(&dir.join("manifest.txt"), seed_manifest.render())?;
        write(&dir.join("rewards.csv"), rewards_csv(&res.rewards))?;
        if let Some(net) = &res.network {
            let mut extra = Manifest::new();
            extra.set("seed", seed).set("method", &name);
            save_qnet(net, &res.support, extra, &dir.join("network"))?;
        }
    }

    write(&out.join("metrics.csv"), metrics)?;
    write(&out.join("solutions.csv"), solutions)?;
    write(&out.join("contexts.csv"), contexts_csv(&contexts))?;
    write(&out.join("config.toml"), cfg.to_toml())?;
    let mut m = Manifest::new();
    m.set("command", "run")
        .set("method", &name)
        .set("dataset", label)
        .set(
            "seeds",
            cfg.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(";"),
        )
        .set("n_contexts", contexts.len())
        .set("shift_days", join_days(&contexts))
        .set(
            "contexts_source",
            if cfg.contexts.is_some() { "file" } else { "detected" },
        )
        .set(
            "data_volume",
            budgets
                .iter()
                .map(|b| b.data_volume.to_string())
                .collect::<Vec<_>>()
                .join(";"),
        )
        .set(
            "training_budget",
            budgets
                .iter()
                .map(|b| b.training_budget.to_string())
                .collect::<Vec<_>>()
                .join(";"),
        );
    if let Some(b) = method.budget_kind().and_then(table1_budget) {
        m.set("reference_data_volume", b.data_volume)
            .set("reference_training_budget", b.training_budget);
    }
    m.set("budget_warnings", warnings.len());
    for (i, w) in warnings.iter().enumerate() {
        m.set(&format!("budget_warning_{i}"), w);
    }
    write(&out.join("manifest.txt"), m.render())
}
