use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use cen_core::checkpoint;
use cen_core::gradcheck::ToyInstance;
use cen_core::online::OnlineReport;
use cen_core::{
    add_inverse_relations, evaluate, load_quadruples, run_curriculum, run_online, save_dataset,
    synth_generate, Activation, Cen, EvalOptions, FilterMode, KeyValues, MetricsReport,
    OnlineConfig, Split, SynthConfig, TieRule, TkgDataset, TrainConfig,
};

use crate::manifest::RunManifest;
use crate::output::{csv_writer, fmt_metric, metric_fields, report_table, write_report_csv};
use crate::{
    AblateArgs, Cli, Command, EvalArgs, GradcheckArgs, OnlineArgs, PrepareArgs, SynthArgs,
    TrainArgs,
};

/// Public statistics of well-known releases: entities, relations, and
/// train/valid/test fact counts.
const KNOWN_DATASETS: [(&str, [usize; 5]); 4] = [
    ("icews14", [6869, 230, 74845, 8514, 7371]),
    ("icews18", [23033, 256, 373018, 45995, 49545]),
    ("wiki", [12554, 24, 539286, 67538, 63110]),
    ("yago", [10623, 10, 161540, 19523, 20026]),
];

struct Ctx {
    seed: Option<u64>,
    deterministic: bool,
    threads: usize,
}

impl Ctx {
    fn from_cli(cli: &Cli) -> Result<Self> {
        let threads =
            if cli.deterministic {
                1
            } else {
                match std::env::var("CEN_THREADS") {
                    Ok(v) => v.parse::<usize>().ok().filter(|&n| n > 0).ok_or_else(|| {
                        anyhow!("CEN_THREADS must be a positive integer, got `{v}`")
                    })?,
                    Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
                }
            };
        Ok(Self {
            seed: cli.seed,
            deterministic: cli.deterministic,
            threads,
        })
    }

    fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            mode: FilterMode::TimeAware,
            tie_rule: TieRule::Optimistic,
            threads: self.threads,
        }
    }

    fn manifest(&self, command: &str, config: Vec<String>, seed: u64) -> RunManifest {
        RunManifest::new(command, config, seed, self.deterministic, self.threads)
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let ctx = Ctx::from_cli(cli)?;
    match &cli.command {
        Command::Prepare(a) => prepare(a),
        Command::Synth(a) => synth(&ctx, a),
        Command::Train(a) => train(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::Online(a) => online(&ctx, a),
        Command::Gradcheck(a) => gradcheck(&ctx, a),
        Command::Ablate(a) => ablate(&ctx, a),
    }
}

fn read_kv(path: Option<&Path>) -> Result<KeyValues> {
    match path {
        Some(p) => {
            KeyValues::from_file(p).with_context(|| format!("reading config {}", p.display()))
        }
        None => Ok(KeyValues::default()),
    }
}

/// Training, online and dataset settings from one `key = value` source.
struct Settings {
    train: TrainConfig,
    online: OnlineConfig,
    data: Option<PathBuf>,
}

fn parse_settings(mut kv: KeyValues, seed: Option<u64>) -> Result<Settings> {
    let data = kv.take::<PathBuf>("data")?;
    let mut train = TrainConfig::default();
    train.apply(&mut kv)?;
    let mut online = OnlineConfig::default();
    online.apply(&mut kv)?;
    kv.finish()?;
    if let Some(s) = seed {
        train.seed = s;
    }
    online.seed = train.seed;
    Ok(Settings {
        train,
        online,
        data,
    })
}

fn dataset_paths(dir: &Path) -> Result<[PathBuf; 3]> {
    if !dir.is_dir() {
        bail!("dataset directory {} does not exist", dir.display());
    }
    let paths = [
        dir.join("train.txt"),
        dir.join("valid.txt"),
        dir.join("test.txt"),
    ];
    for p in &paths {
        if !p.is_file() {
            bail!(
                "dataset directory {} has no {}",
                dir.display(),
                p.file_name().unwrap().to_string_lossy()
            );
        }
    }
    Ok(paths)
}

fn load_dir(dir: &Path) -> Result<TkgDataset> {
    let [tr, va, te] = dataset_paths(dir)?;
    let stat = dir.join("stat.txt");
    let stat = stat.is_file().then_some(stat);
    load_quadruples(&tr, &va, &te, stat.as_deref())
        .with_context(|| format!("loading dataset {}", dir.display()))
}

fn load_for_model(dir: &Path, cfg: &TrainConfig) -> Result<TkgDataset> {
    let raw = load_dir(dir)?;
    Ok(if cfg.inverse_relations {
        add_inverse_relations(&raw)?
    } else {
        raw
    })
}

fn summary(d: &TkgDataset) -> String {
    format!(
        "entities={} relations={} train={} valid={} test={} timestamps={}",
        d.num_entities,
        d.num_relations,
        d.split_fact_count(Split::Train),
        d.split_fact_count(Split::Valid),
        d.split_fact_count(Split::Test),
        d.snapshots.len()
    )
}

fn prepare(a: &PrepareArgs) -> Result<()> {
    let d = load_dir(&a.data)?;
    println!("{}", summary(&d));
    let name = a
        .data
        .file_name()
        .map(|n| n.to_string_lossy().to_lowercase())
        .unwrap_or_default();
    if let Some((known, expect)) = KNOWN_DATASETS.iter().find(|(k, _)| *k == name) {
        let got = [
            d.num_entities,
            d.num_relations,
            d.split_fact_count(Split::Train),
            d.split_fact_count(Split::Valid),
            d.split_fact_count(Split::Test),
        ];
        if got != *expect {
            log::warn!("{known}: statistics {got:?} differ from the public release {expect:?}");
            eprintln!("warning: statistics differ from the public {known} release");
        }
    }
    Ok(())
}

fn synth(ctx: &Ctx, a: &SynthArgs) -> Result<()> {
    let mut kv = read_kv(a.config.as_deref())?;
    let mut cfg = SynthConfig::default();
    cfg.apply(&mut kv)?;
    kv.finish()?;
    if let Some(s) = ctx.seed {
        cfg.seed = s;
    }
    fs::create_dir_all(&a.out)?;
    let mut manifest = ctx.manifest("synth", cfg.to_lines(), cfg.seed);
    if let Some(p) = &a.config {
        manifest.add_input(p)?;
    }
    let (data, log) = synth_generate(&cfg)?;
    let files = save_dataset(&data, &a.out)?;
    let patterns = a.out.join("patterns.tsv");
    log.write_to(&patterns)?;
    manifest.outputs.extend(files);
    manifest.outputs.push(a.out.join("stat.txt"));
    manifest.outputs.push(patterns);
    manifest.write(&a.out.join("manifest.json"))?;
    println!("{}", summary(&data));
    println!("planted instances={}", log.instances.len());
    Ok(())
}

fn sidecar(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("cfg")
}

fn write_model_cfg(path: &Path, cfg: &TrainConfig, data: &Path) -> Result<()> {
    let mut lines = vec![format!("data = {}", data.display())];
    lines.extend(cfg.to_lines());
    fs::write(path, lines.join("\n") + "\n")?;
    Ok(())
}

fn train(ctx: &Ctx, a: &TrainArgs) -> Result<()> {
    let mut s = parse_settings(read_kv(a.config.as_deref())?, ctx.seed)?;
    let data_dir = a
        .data
        .clone()
        .or(s.data.take())
        .ok_or_else(|| anyhow!("no dataset: pass --data or set `data` in the config"))?;
    s.train.no_curriculum |= a.no_curriculum;
    s.train.single_channel |= a.single_channel;
    let data = load_for_model(&data_dir, &s.train)?;
    fs::create_dir_all(&a.out)?;

    let ckpt = a.out.join("model.ckpt");
    let log_path = a.out.join("train_log.csv");
    let mut manifest = ctx.manifest("train", s.train.to_lines(), s.train.seed);
    if let Some(p) = &a.config {
        manifest.add_input(p)?;
    }
    manifest.add_dir_inputs(&data_dir)?;
    manifest.outputs = vec![ckpt.clone(), sidecar(&ckpt), log_path.clone()];
    let hash = manifest.write(&a.out.join("manifest.json"))?;

    let out = run_curriculum(&data, &s.train, &ctx.eval_options())?;
    checkpoint::save(&ckpt, out.model.params())?;
    write_model_cfg(&sidecar(&ckpt), &s.train, &data_dir)?;
    let mut w = csv_writer(
        &log_path,
        &hash,
        &["stage", "k", "epoch", "train_loss", "valid_mrr"],
    )?;
    for r in &out.log {
        w.write_record([
            r.stage.to_string(),
            r.k.to_string(),
            r.epoch.to_string(),
            fmt_metric(r.train_loss),
            fmt_metric(r.valid_mrr),
        ])?;
    }
    w.flush()?;
    let chosen = out.state.chosen_len().expect("curriculum always chooses");
    println!(
        "chosen length {chosen}, validation MRR {:.4}, checkpoint {}",
        out.state.best_mrr.unwrap_or(0.0),
        ckpt.display()
    );
    Ok(())
}

/// Model, its settings and its dataset, restored from a checkpoint.
fn restore(
    ckpt: &Path,
    data_override: Option<&Path>,
    seed: Option<u64>,
) -> Result<(Cen, Settings, TkgDataset, PathBuf)> {
    let cfg_path = sidecar(ckpt);
    let mut s = parse_settings(read_kv(Some(&cfg_path))?, seed)?;
    let data_dir = data_override
        .map(Path::to_path_buf)
        .or(s.data.take())
        .ok_or_else(|| anyhow!("{} names no dataset; pass --data", cfg_path.display()))?;
    let data = load_for_model(&data_dir, &s.train)?;
    let params =
        checkpoint::load(ckpt).with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
    let model = Cen::from_params(s.train.model_config(&data), params)?;
    Ok((model, s, data, data_dir))
}

fn out_dir(ckpt: &Path) -> PathBuf {
    ckpt.parent()
        .map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

fn eval(ctx: &Ctx, a: &EvalArgs) -> Result<()> {
    let split: Split = a.split.parse()?;
    let mode: FilterMode = a.mode.parse()?;
    let (model, s, data, data_dir) = restore(&a.checkpoint, a.data.as_deref(), ctx.seed)?;
    let opts = EvalOptions {
        mode,
        tie_rule: if a.pessimistic_ties {
            TieRule::Pessimistic
        } else {
            TieRule::Optimistic
        },
        ..ctx.eval_options()
    };
    let csv = a
        .out
        .clone()
        .unwrap_or_else(|| out_dir(&a.checkpoint).join(format!("eval_{}.csv", a.split)));
    let mut manifest = ctx.manifest("eval", s.train.to_lines(), s.train.seed);
    manifest.add_input(&a.checkpoint)?;
    manifest.add_dir_inputs(&data_dir)?;
    manifest.outputs.push(csv.clone());
    let hash = manifest.write(&csv.with_extension("manifest.json"))?;

    let (report, _) = evaluate(&model, &data, split, &opts)?;
    print!("{}", report_table(&report));
    write_report_csv(&csv, &hash, &report)
}

fn write_online_csv(path: &Path, hash: &str, report: &OnlineReport) -> Result<()> {
    let mut w = csv_writer(path, hash, &["t", "mrr", "h1", "h3", "h10", "epochs_used"])?;
    for row in &report.rows {
        let mut rec = vec![row.time.to_string()];
        match &row.metrics {
            Some(m) => rec.extend(metric_fields(m)),
            None => rec.extend(std::iter::repeat_n(String::new(), 4)),
        }
        rec.push(row.step.epochs_used.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn online(ctx: &Ctx, a: &OnlineArgs) -> Result<()> {
    let (model, mut s, data, data_dir) = restore(&a.checkpoint, a.data.as_deref(), ctx.seed)?;
    let mut kv = read_kv(a.config.as_deref())?;
    // Training keys may share the file; only the online ones matter here.
    let _ = kv.take::<PathBuf>("data")?;
    TrainConfig::default().apply(&mut kv)?;
    s.online.apply(&mut kv)?;
    kv.finish()?;
    if let Some(l) = a.lambda {
        s.online.lambda = l;
    }
    s.online.no_tr |= a.no_tr;
    s.online.validate()?;

    let dir = a.out.clone().unwrap_or_else(|| out_dir(&a.checkpoint));
    fs::create_dir_all(&dir)?;
    let rows_path = dir.join("online.csv");
    let report_path = dir.join("online_report.csv");
    let final_ckpt = dir.join("online.ckpt");
    let mut manifest = ctx.manifest("online", s.online.to_lines(), s.online.seed);
    manifest.add_input(&a.checkpoint)?;
    if let Some(p) = &a.config {
        manifest.add_input(p)?;
    }
    manifest.add_dir_inputs(&data_dir)?;
    manifest.outputs = vec![rows_path.clone(), report_path.clone(), final_ckpt.clone()];
    let hash = manifest.write(&dir.join("online_manifest.json"))?;

    let (last, report) = run_online(&model, &data, &s.online, &ctx.eval_options())?;
    write_online_csv(&rows_path, &hash, &report)?;
    write_report_csv(&report_path, &hash, &report.report)?;
    checkpoint::save(&final_ckpt, last.params())?;
    write_model_cfg(&sidecar(&final_ckpt), &s.train, &data_dir)?;
    print!("{}", report_table(&report.report));
    Ok(())
}

fn gradcheck(ctx: &Ctx, a: &GradcheckArgs) -> Result<()> {
    let act: Activation = a.activation.parse()?;
    let seed = ctx.seed.unwrap_or(0);
    let mut worst: f64 = 0.0;
    for i in 0..a.instances as u64 {
        let inst = ToyInstance::random(seed.wrapping_add(i), act)?;
        let r = inst.check(a.eps)?;
        log::info!(
            "instance {i}: {} scalars, max relative error {:.3e} at {}[{}]",
            r.checked,
            r.max_rel_error,
            r.worst_param,
            r.worst_index
        );
        worst = worst.max(r.max_rel_error);
    }
    println!(
        "max relative error {worst:.3e} over {} instances",
        a.instances
    );
    if worst > a.tolerance {
        bail!(
            "gradient check failed: {worst:.3e} exceeds {:.1e}",
            a.tolerance
        );
    }
    Ok(())
}

fn ablate(ctx: &Ctx, a: &AblateArgs) -> Result<()> {
    let s = parse_settings(read_kv(a.config.as_deref())?, None)?;
    let data_dir = a
        .data
        .clone()
        .or(s.data.clone())
        .ok_or_else(|| anyhow!("no dataset: pass --data or set `data` in the config"))?;
    let data = load_for_model(&data_dir, &s.train)?;
    let first = ctx.seed.unwrap_or(s.train.seed);
    let mut manifest = ctx.manifest("ablate", s.train.to_lines(), first);
    manifest.config.extend(s.online.to_lines());
    if let Some(p) = &a.config {
        manifest.add_input(p)?;
    }
    manifest.add_dir_inputs(&data_dir)?;
    manifest.outputs.push(a.out.clone());
    let hash = manifest.write(&a.out.with_extension("manifest.json"))?;

    let opts = ctx.eval_options();
    let mut w = csv_writer(
        &a.out,
        &hash,
        &[
            "variant", "setting", "seed", "mrr", "hits1", "hits3", "hits10",
        ],
    )?;
    let mut emit = |variant: &str, setting: &str, seed: u64, r: &MetricsReport| -> Result<()> {
        let mut rec = vec![variant.to_string(), setting.to_string(), seed.to_string()];
        rec.extend(metric_fields(&r.overall));
        w.write_record(&rec)?;
        println!(
            "{variant:<12} {setting:<8} seed {seed:<3} MRR {:.4} H@1 {:.4}",
            r.overall.mrr, r.overall.hits1
        );
        Ok(())
    };
    for seed in first..first + a.seeds {
        let base = TrainConfig {
            seed,
            ..s.train.clone()
        };
        let full = run_curriculum(&data, &base, &opts)?;
        emit(
            "full",
            "offline",
            seed,
            &evaluate(&full.model, &data, Split::Test, &opts)?.0,
        )?;
        for (name, cfg) in [
            (
                "-CL",
                TrainConfig {
                    no_curriculum: true,
                    ..base.clone()
                },
            ),
            (
                "-LA",
                TrainConfig {
                    single_channel: true,
                    ..base.clone()
                },
            ),
        ] {
            let m = run_curriculum(&data, &cfg, &opts)?.model;
            emit(
                name,
                "offline",
                seed,
                &evaluate(&m, &data, Split::Test, &opts)?.0,
            )?;
        }
        let on = OnlineConfig {
            seed,
            ..s.online.clone()
        };
        emit(
            "full",
            "online",
            seed,
            &run_online(&full.model, &data, &on, &opts)?.1.report,
        )?;
        let no_tr = OnlineConfig { no_tr: true, ..on };
        emit(
            "-TR",
            "online",
            seed,
            &run_online(&full.model, &data, &no_tr, &opts)?.1.report,
        )?;
    }
    w.flush()?;
    Ok(())
}
