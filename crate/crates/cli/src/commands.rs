use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, OnceLock};

use griffiths_core::annealer::{
    calibrate_flux_bias, default_quench, field_sweep_susceptibility, magnetization_moments, sample_apq,
    symmetric_field_grid, DeviceModel, ProtocolParams, Schedule,
};
use griffiths_core::lattice::{build_diluted_chimera, sample_disorder, DisorderInstance};
use griffiths_core::qmc::{run_grid, GridSpec, MomentRecord};
use griffiths_core::rng::derive_seed;
use griffiths_core::verify::{self, CriterionReport, PeakScanOptions, TrendOptions, ACCEPTANCE_SEED};
use rayon::prelude::*;
use serde_json::json;

use crate::config::{ExperimentConfig, Mode};
use crate::output::{
    now, read_json, read_ndjson, sha256_file, write_atomic, write_json, write_ndjson, Entry, Failure, RunDir, Status,
    CODE_VERSION,
};
use crate::recipes::{self, Context, DeviceCell, Records, RECIPES};
use crate::{Cli, Command, Level};

const INSTANCE_KEY: u64 = 1;
const BIAS_KEY: u64 = 2;
const DEVICE_KEY: u64 = 3;
const CELL_KEY: u64 = 4;

#[derive(Debug)]
pub enum CliError {
    /// Bad input; exit code 2.
    Validation(String),
    /// Some cells failed or were left pending; exit code 3.
    Partial(String),
    /// Anything else; exit code 3.
    Failed(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Failed(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Partial(_) | CliError::Failed(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid input: {m}"),
            CliError::Partial(m) => write!(f, "partial failure: {m}"),
            CliError::Failed(m) => f.write_str(m),
        }
    }
}

impl From<griffiths_core::Error> for CliError {
    fn from(e: griffiths_core::Error) -> Self {
        match e {
            griffiths_core::Error::Validation(_) | griffiths_core::Error::Capability(_) => {
                CliError::Validation(e.to_string())
            }
            other => CliError::Failed(other.to_string()),
        }
    }
}

type Res<T> = Result<T, CliError>;

pub fn dispatch(cli: &Cli) -> Res<()> {
    match &cli.command {
        Command::Verify { level } => return verify(cli, *level),
        Command::Analyze { list: true, .. } => {
            for r in RECIPES {
                println!("{:<26} {:<10} {}", r.name, format!("{:?}", r.mode), r.about);
            }
            return Ok(());
        }
        Command::Report if cli.config.is_none() => {
            let out = cli.out.clone().ok_or_else(|| CliError::Validation("report needs --out or --config".into()))?;
            return report(&RunDir::new(out)?);
        }
        _ => {}
    }
    let (config, dir) = load(cli)?;
    match &cli.command {
        Command::Generate => generate(&config, &dir),
        Command::Run => match config.mode {
            Mode::Qmc => run_qmc(cli, &config, &dir),
            Mode::DeviceSim => run_device(cli, &config, &dir),
        },
        Command::Calibrate => calibrate(cli, &config, &dir),
        Command::Analyze { recipe, .. } => analyze(&config, &dir, recipe.as_deref()),
        Command::Report => report(&dir),
        Command::Verify { .. } => unreachable!(),
    }
}

fn load(cli: &Cli) -> Res<(ExperimentConfig, RunDir)> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Validation("--config is required".into()))?;
    let mut config = ExperimentConfig::load(path).map_err(CliError::Validation)?;
    if cli.seed.is_some() {
        config.seed = cli.seed;
    }
    if cli.out.is_some() {
        config.out = cli.out.clone();
    }
    let errs = config.validate();
    if !errs.is_empty() {
        let list: Vec<String> = errs.iter().map(|e| e.to_string()).collect();
        return Err(CliError::Validation(list.join("; ")));
    }
    // The output location is not part of the experiment's identity.
    let out = config.out.take().ok_or_else(|| CliError::Validation("out: set `out` or pass --out".into()))?;
    Ok((config, RunDir::new(out)?))
}

fn instance_id(l: usize, k: usize) -> String {
    format!("L{l}-{k:03}")
}

fn instances(config: &ExperimentConfig) -> Res<Vec<(usize, Vec<(String, DisorderInstance)>)>> {
    let seed = config.master_seed();
    config
        .lattice
        .sizes
        .iter()
        .map(|&l| {
            let g = build_diluted_chimera(l, config.lattice.dilution.pattern())?;
            let list = (0..config.disorder.instances)
                .map(|k| {
                    let s = derive_seed(seed, &[INSTANCE_KEY, l as u64, k as u64]);
                    (instance_id(l, k), sample_disorder(&g, config.distribution(), s))
                })
                .collect();
            Ok((l, list))
        })
        .collect()
}

fn finish(dir: &RunDir, config: &ExperimentConfig, mut entry: Entry) -> Res<()> {
    entry.finished_unix = now();
    if !entry.failures.is_empty() || !entry.pending.is_empty() {
        entry.status = Status::Partial;
    }
    let mut m = dir.manifest_for(config)?;
    let status = entry.status;
    let summary = format!(
        "{} of {} cells done, {} failed, {} pending",
        entry.cells_done,
        entry.cells_total,
        entry.failures.len(),
        entry.pending.len()
    );
    m.entries.push(entry);
    dir.save_manifest(&m)?;
    match status {
        Status::Complete => Ok(()),
        Status::Partial => Err(CliError::Partial(summary)),
    }
}

fn generate(config: &ExperimentConfig, dir: &RunDir) -> Res<()> {
    dir.manifest_for(config)?;
    let mut entry = Entry::start("generate");
    for (_, list) in instances(config)? {
        for (id, inst) in list {
            let rel = format!("instances/{id}.json");
            write_json(&dir.path(&rel), &inst.to_file())?;
            entry.outputs.push(rel);
            entry.cells_done += 1;
        }
    }
    entry.cells_total = entry.cells_done;
    println!("wrote {} instance files to {}", entry.cells_done, dir.path("instances").display());
    finish(dir, config, entry)
}

fn stop_flag() -> Arc<AtomicBool> {
    static FLAG: OnceLock<Arc<AtomicBool>> = OnceLock::new();
    FLAG.get_or_init(|| {
        let flag = Arc::new(AtomicBool::new(false));
        let f = flag.clone();
        if let Err(e) = ctrlc::set_handler(move || {
            eprintln!("interrupt: finishing in-flight cells");
            f.store(true, Ordering::SeqCst);
        }) {
            eprintln!("warning: no interrupt handler: {e}");
        }
        flag
    })
    .clone()
}

fn has_files(path: &Path) -> bool {
    std::fs::read_dir(path).map(|mut d| d.next().is_some()).unwrap_or(false)
}

fn check_fresh(cli: &Cli, dir: &RunDir, rel: &str) -> Res<PathBuf> {
    let p = dir.path(rel);
    if has_files(&p) && !cli.resume {
        return Err(CliError::Validation(format!("{} holds checkpoints; pass --resume to continue", p.display())));
    }
    Ok(p)
}

fn run_qmc(cli: &Cli, config: &ExperimentConfig, dir: &RunDir) -> Res<()> {
    dir.manifest_for(config)?;
    let stop = stop_flag();
    let mut entry = Entry::start("run");
    let mut records: Vec<MomentRecord> = Vec::new();
    for (l, list) in instances(config)? {
        let ckpt = check_fresh(cli, dir, &format!("checkpoints/L{l}"))?;
        let spec = GridSpec {
            instances: list,
            betas: config.grid.betas.clone(),
            gammas: config.grid.gammas.clone(),
            params: config.qmc.chain_params(),
            master_seed: config.master_seed(),
            workers: cli.workers,
            checkpoint_dir: Some(ckpt),
            stop: Some(stop.clone()),
        };
        let rep = run_grid(&spec)?;
        entry.cells_total += spec.instances.len() * spec.betas.len() * spec.gammas.len();
        entry.cells_done += rep.records.len();
        entry.resumed += rep.resumed;
        let name = |c: &griffiths_core::qmc::CellKey| {
            format!("{} beta={} gamma={}", spec.instances[c.instance].0, spec.betas[c.beta_index], spec.gammas[c.gamma_index])
        };
        entry.failures.extend(rep.failures.iter().map(|(c, e)| Failure { cell: name(c), error: e.clone() }));
        entry.pending.extend(rep.pending.iter().map(name));
        records.extend(rep.records);
    }
    records.sort_by(|a, b| {
        (a.l, &a.instance, a.beta.to_bits(), a.gamma.to_bits()).cmp(&(b.l, &b.instance, b.beta.to_bits(), b.gamma.to_bits()))
    });
    write_ndjson(&dir.path("records.ndjson"), &records)?;
    entry.outputs.push("records.ndjson".into());
    println!("{} records written to {}", records.len(), dir.path("records.ndjson").display());
    finish(dir, config, entry)
}

fn schedule(config: &ExperimentConfig) -> Res<Schedule> {
    match &config.device.schedule {
        Some(p) => Ok(Schedule::read_csv(p)?),
        None => Ok(Schedule::bundled()),
    }
}

fn fresh_device(config: &ExperimentConfig, l: usize, k: usize, inst: DisorderInstance) -> DeviceModel {
    let seed = config.master_seed();
    let d = &config.device;
    let bias_seed = derive_seed(d.bias_seed.unwrap_or(seed), &[BIAS_KEY, l as u64, k as u64]);
    let mut dev = DeviceModel::new(inst, bias_seed)
        .with_random_biases(d.bias_scale)
        .with_quench(d.quench.unwrap_or_else(|| default_quench(l)))
        .with_backend(d.backend);
    dev.t_phys = d.t_phys;
    dev.seed = derive_seed(seed, &[DEVICE_KEY, l as u64, k as u64]);
    dev
}

fn device_path(dir: &RunDir, id: &str) -> PathBuf {
    dir.path(&format!("devices/{id}.json"))
}

fn calibrate(cli: &Cli, config: &ExperimentConfig, dir: &RunDir) -> Res<()> {
    if config.mode != Mode::DeviceSim {
        return Err(CliError::Validation("calibrate needs mode = \"device-sim\"".into()));
    }
    dir.manifest_for(config)?;
    let schedule = schedule(config)?;
    let params = config.calibration.params();
    let stop = stop_flag();
    let mut jobs = Vec::new();
    for (l, list) in instances(config)? {
        for (k, (id, inst)) in list.into_iter().enumerate() {
            jobs.push((l, k, id, inst));
        }
    }
    let mut entry = Entry::start("calibrate");
    entry.cells_total = jobs.len();
    let pool = pool(cli.workers)?;
    let results: Vec<(String, Option<Result<(), String>>)> = pool.install(|| {
        jobs.into_par_iter()
            .map(|(l, k, id, inst)| {
                if stop.load(Ordering::SeqCst) {
                    return (id, None);
                }
                let mut dev = fresh_device(config, l, k, inst);
                let out = calibrate_flux_bias(&mut dev, &schedule, &params).map_err(|e| e.to_string()).and_then(|rep| {
                    write_json(&device_path(dir, &id), &dev.to_state()).map_err(|e| e.to_string())?;
                    write_json(&dir.path(&format!("calibration/{id}.json")), &rep).map_err(|e| e.to_string())
                });
                (id, Some(out))
            })
            .collect()
    });
    for (id, r) in results {
        match r {
            None => entry.pending.push(id),
            Some(Err(e)) => entry.failures.push(Failure { cell: id, error: e }),
            Some(Ok(())) => {
                entry.cells_done += 1;
                entry.outputs.push(format!("devices/{id}.json"));
            }
        }
    }
    println!("calibrated {} of {} devices", entry.cells_done, entry.cells_total);
    finish(dir, config, entry)
}

fn pool(workers: usize) -> Res<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new().num_threads(workers).build().map_err(|e| CliError::Failed(e.to_string()))
}

fn device_cell(
    base: &DeviceModel,
    schedule: &Schedule,
    config: &ExperimentConfig,
    id: &str,
    j: usize,
    s_star: f64,
) -> griffiths_core::Result<DeviceCell> {
    let d = &config.device;
    let mut dev = base.clone();
    dev.seed = derive_seed(base.seed, &[CELL_KEY, j as u64]);
    let protocol = ProtocolParams::new(s_star, d.n_rep)?;
    let zero = vec![0.0; dev.n_sites()];
    let samples = sample_apq(&mut dev, schedule, &protocol, &zero)?;
    let record = magnetization_moments(&samples)?.into_record(&dev, schedule, &protocol, id)?;
    let grid = symmetric_field_grid(d.field_max, d.field_points);
    let sweep = field_sweep_susceptibility(&mut dev, schedule, &protocol, &grid, d.fit_degree)?;
    Ok(DeviceCell {
        record,
        chi: sweep.chi,
        chi_nl: sweep.chi_nl,
        saturated: sweep.saturated,
        sweep_h: sweep.h,
        sweep_m: sweep.m,
    })
}

fn run_device(cli: &Cli, config: &ExperimentConfig, dir: &RunDir) -> Res<()> {
    dir.manifest_for(config)?;
    let schedule = schedule(config)?;
    let ckpt = check_fresh(cli, dir, "checkpoints/device")?;
    let stop = stop_flag();
    let mut jobs = Vec::new();
    for (l, list) in instances(config)? {
        for (k, (id, inst)) in list.into_iter().enumerate() {
            let calibrated = device_path(dir, &id);
            let base = if calibrated.exists() {
                DeviceModel::read_json(&calibrated)?
            } else {
                fresh_device(config, l, k, inst)
            };
            for (j, &s) in config.grid.s_stars.iter().enumerate() {
                jobs.push((base.clone(), id.clone(), j, s));
            }
        }
    }
    let mut entry = Entry::start("run");
    entry.cells_total = jobs.len();
    let cell_path = |id: &str, j: usize| ckpt.join(format!("{id}-s{j:03}.json"));
    let pool = pool(cli.workers)?;
    let outcomes: Vec<(String, Option<Result<(DeviceCell, bool), String>>)> = pool.install(|| {
        jobs.par_iter()
            .map(|(base, id, j, s)| {
                let name = format!("{id} s*={s}");
                let p = cell_path(id, *j);
                if p.exists() {
                    if let Ok(cell) = read_json::<DeviceCell>(&p) {
                        return (name, Some(Ok((cell, true))));
                    }
                }
                if stop.load(Ordering::SeqCst) {
                    return (name, None);
                }
                let r = device_cell(base, &schedule, config, id, *j, *s).map_err(|e| e.to_string()).and_then(|cell| {
                    write_json(&p, &cell).map_err(|e| e.to_string())?;
                    Ok((cell, false))
                });
                (name, Some(r))
            })
            .collect()
    });
    let mut cells = Vec::new();
    for (name, o) in outcomes {
        match o {
            None => entry.pending.push(name),
            Some(Err(e)) => entry.failures.push(Failure { cell: name, error: e }),
            Some(Ok((cell, resumed))) => {
                entry.resumed += usize::from(resumed);
                entry.cells_done += 1;
                cells.push(cell);
            }
        }
    }
    write_ndjson(&dir.path("records.ndjson"), &cells)?;
    entry.outputs.push("records.ndjson".into());
    println!("{} device cells written to {}", cells.len(), dir.path("records.ndjson").display());
    finish(dir, config, entry)
}

fn analyze(config: &ExperimentConfig, dir: &RunDir, recipe: Option<&str>) -> Res<()> {
    let names: Vec<String> = match recipe {
        Some(r) => vec![r.to_string()],
        None if config.recipes.is_empty() => {
            return Err(CliError::Validation("no recipe given and `recipes` is empty".into()))
        }
        None => config.recipes.clone(),
    };
    for n in &names {
        match recipes::find(n) {
            None => return Err(CliError::Validation(format!("unknown recipe `{n}` (see `analyze --list`)"))),
            Some(r) if r.mode != config.mode => {
                return Err(CliError::Validation(format!("recipe `{n}` needs mode {:?}", r.mode)))
            }
            _ => {}
        }
    }
    let manifest = dir.manifest_for(config)?;
    let records_path = dir.path("records.ndjson");
    let needs_records = names.iter().any(|n| n != "schedule-map");
    if needs_records && !records_path.exists() {
        return Err(CliError::Validation(format!("{} not found; run first", records_path.display())));
    }
    let (records, records_sha) = if records_path.exists() {
        let r = match config.mode {
            Mode::Qmc => Records::Qmc(read_ndjson(&records_path)?),
            Mode::DeviceSim => Records::Device(read_ndjson(&records_path)?),
        };
        (r, Some(sha256_file(&records_path)?))
    } else {
        (Records::Device(Vec::new()), None)
    };
    let schedule = schedule(config)?;
    let ctx = Context { analysis: &config.analysis, schedule: &schedule, t_phys: config.device.t_phys, s_stars: &config.grid.s_stars };
    let mut entry = Entry::start("analyze");
    for n in &names {
        let out = recipes::run(n, &records, &ctx)?;
        let csv_rel = format!("analysis/{n}.csv");
        let json_rel = format!("analysis/{n}.json");
        write_atomic(&dir.path(&csv_rel), out.csv.as_bytes())?;
        write_json(
            &dir.path(&json_rel),
            &json!({
                "recipe": n,
                "config_digest": manifest.config_digest,
                "code_version": CODE_VERSION,
                "records_sha256": records_sha,
                "results": out.json,
            }),
        )?;
        println!("{n}: wrote {csv_rel} and {json_rel}");
        entry.outputs.extend([csv_rel, json_rel]);
        entry.cells_done += 1;
    }
    entry.cells_total = names.len();
    finish(dir, config, entry)
}

fn report(dir: &RunDir) -> Res<()> {
    let m = dir
        .read_manifest()?
        .ok_or_else(|| CliError::Validation(format!("no manifest in {}", dir.root.display())))?;
    println!("run directory   {}", dir.root.display());
    println!("mode            {}", serde_json::to_value(m.mode).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default());
    println!("config digest   {}", m.config_digest);
    println!("code version    {}", m.code_version);
    println!("master seed     {}", m.seed);
    for e in &m.entries {
        println!(
            "{:<10} {:?}: {}/{} cells, {} resumed, {} failed, {} pending ({} s)",
            e.command,
            e.status,
            e.cells_done,
            e.cells_total,
            e.resumed,
            e.failures.len(),
            e.pending.len(),
            e.finished_unix.saturating_sub(e.started_unix)
        );
        for f in &e.failures {
            println!("    failed {}: {}", f.cell, f.error);
        }
    }
    let records = dir.path("records.ndjson");
    if records.exists() {
        let n = std::fs::read_to_string(&records).map_err(|e| CliError::io(&records, e))?.lines().count();
        println!("records         {n}");
    }
    let analysis = dir.path("analysis");
    if let Ok(rd) = std::fs::read_dir(&analysis) {
        let mut names: Vec<String> = rd
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n.ends_with(".json"))
            .collect();
        names.sort();
        for n in names {
            println!("analysis        {}", n.trim_end_matches(".json"));
        }
    }
    Ok(())
}

fn verify(cli: &Cli, level: Level) -> Res<()> {
    let seed = cli.seed.unwrap_or(ACCEPTANCE_SEED);
    let mut reports: Vec<(u8, griffiths_core::Result<CriterionReport>)> = Vec::new();
    let mut run = |id: u8, f: &dyn Fn() -> griffiths_core::Result<CriterionReport>| {
        let r = f();
        match &r {
            Ok(rep) => println!("{}", rep.line()),
            Err(e) => println!("criterion {id}: FAIL  error: {e}"),
        }
        reports.push((id, r));
    };
    run(1, &|| verify::oracle_equivalence(seed, 1 << 18));
    run(2, &|| verify::stationarity(seed, 10_000_000));
    run(3, &|| verify::exponent_recovery(seed));
    if level == Level::Full {
        let opts = TrendOptions {
            seed,
            workers: cli.workers,
            checkpoint_dir: cli.out.as_ref().map(|o| o.join("verify-checkpoints")),
            ..TrendOptions::default()
        };
        run(4, &|| verify::griffiths_trend(&opts));
    }
    run(5, &|| verify::collapse_recovery(seed));
    run(6, &verify::schedule_mapping);
    run(7, &|| verify::calibration_efficacy(seed));
    run(8, &|| verify::device_consistency(seed, &PeakScanOptions::default()));
    let failed = reports.iter().filter(|(_, r)| !matches!(r, Ok(rep) if rep.passed)).count();
    if let Some(out) = &cli.out {
        let rows: Vec<serde_json::Value> = reports
            .iter()
            .map(|(id, r)| match r {
                Ok(rep) => json!(rep),
                Err(e) => json!({ "id": id, "passed": false, "error": e.to_string() }),
            })
            .collect();
        write_json(&out.join(format!("verify-{level:?}.json").to_lowercase()), &rows)?;
    }
    println!("{} of {} criteria passed", reports.len() - failed, reports.len());
    if failed == 0 {
        Ok(())
    } else {
        Err(CliError::Partial(format!("{failed} criteria failed")))
    }
}
