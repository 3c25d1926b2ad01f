use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use latentcomm::autoencoder::{train as train_model, ModelFile};
use latentcomm::eval::{evaluate, EvalReport, TrainingSummary};
use latentcomm::experiment::{preset_mcc_sweep, ExperimentConfig, LARGE_DIMS};
use latentcomm::harness;
use latentcomm::synthgen::{generate, Dataset};
use latentcomm::Error;

pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn invalid(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            code: if e.is_numerical() { 3 } else { 2 },
            message: e.to_string(),
        }
    }
}

type Outcome = Result<(), Failure>;

pub struct Inputs {
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl Inputs {
    /// Config with overrides applied, resolved and validated.
    fn load(&self, tweak: impl FnOnce(&mut ExperimentConfig)) -> Result<(ExperimentConfig, PathBuf), Failure> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| Failure::invalid(format!("cannot read config {}: {e}", p.display())))?;
                ExperimentConfig::from_json(&text)
                    .map_err(|e| Failure::invalid(format!("bad config {}: {e}", p.display())))?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.to_string_lossy().into_owned();
        }
        tweak(&mut cfg);
        let cfg = cfg.resolved();
        cfg.validate()?;
        let out = PathBuf::from(&cfg.output_dir);
        Ok((cfg, out))
    }
}

fn write(path: &Path, contents: &str) -> Outcome {
    fs::write(path, contents).map_err(|e| Failure::invalid(format!("cannot write {}: {e}", path.display())))
}

/// Creates the run directory and writes `config.resolved.json` into it.
fn start_run(cfg: &ExperimentConfig, out: &Path) -> Outcome {
    fs::create_dir_all(out).map_err(|e| Failure::invalid(format!("cannot create {}: {e}", out.display())))?;
    write(&out.join("config.resolved.json"), &cfg.to_json()?)
}

fn load_dataset(dir: &Path) -> Result<Dataset, Failure> {
    Dataset::load(dir).map_err(|e| Failure::invalid(format!("cannot load dataset from {}: {e}", dir.display())))
}

pub fn config(inputs: &Inputs) -> Outcome {
    let (cfg, out) = inputs.load(|_| {})?;
    start_run(&cfg, &out)
}

pub fn gen(inputs: &Inputs) -> Outcome {
    let (cfg, out) = inputs.load(|_| {})?;
    start_run(&cfg, &out)?;
    let (data, _) = generate(&cfg.generator, cfg.seed)?;
    data.save(&out)?;
    Ok(())
}

pub fn train(inputs: &Inputs, data: &Path, lambda: Option<f64>) -> Outcome {
    let (cfg, out) = inputs.load(|c| {
        if let Some(l) = lambda {
            c.training.lambda_sparse = l;
        }
    })?;
    start_run(&cfg, &out)?;
    let data = load_dataset(data)?;
    match train_model(&data, &cfg.training) {
        Ok((model, log)) => {
            ModelFile::new(&model, &cfg.training, None).save(&out.join("model.json"))?;
            write(&out.join("trainlog.csv"), &log.to_csv())
        }
        Err(Error::TrainingFailed { epoch, reason, log }) => {
            let path = out.join("trainlog.csv");
            write(&path, &log.to_csv())?;
            Err(Failure {
                code: 3,
                message: format!("training diverged at epoch {epoch} ({reason}); log in {}", path.display()),
            })
        }
        Err(e) => Err(e.into()),
    }
}

fn eval_report(cfg: &ExperimentConfig, file: &ModelFile, data: &Dataset) -> Result<EvalReport, Failure> {
    let model = file.model()?;
    let echo = serde_json::to_value(cfg).map_err(|e| Failure::invalid(e.to_string()))?;
    Ok(evaluate(
        &model,
        data,
        file.training.holdout_fraction,
        &cfg.evaluation,
        echo,
        None,
    )?)
}

pub fn eval(inputs: &Inputs, model: &Path, data: &Path, svg: bool) -> Outcome {
    let (cfg, out) = inputs.load(|_| {})?;
    start_run(&cfg, &out)?;
    let file = ModelFile::load(model)
        .map_err(|e| Failure::invalid(format!("cannot load model {}: {e}", model.display())))?;
    let data = load_dataset(data)?;
    let report = eval_report(&cfg, &file, &data)?;
    write(&out.join("report.json"), &report.to_json()?)?;
    write(&out.join("heatmap.csv"), &report.r2_blocks.to_csv())?;
    if svg {
        write(&out.join("heatmap.svg"), &report.r2_blocks.to_svg())?;
    }
    Ok(())
}

pub fn simulate(inputs: &Inputs) -> Outcome {
    let (cfg, out) = inputs.load(|_| {})?;
    start_run(&cfg, &out)?;
    let sim = harness::simulate(&cfg)?;
    write(&out.join("traces.jsonl"), &sim.traces_jsonl()?)?;
    write(&out.join("episodes_summary.csv"), &sim.summary_csv())?;
    ModelFile::new(&sim.channel.model, &cfg.training, Some(sim.channel.adapter.clone()))
        .save(&out.join("model.json"))?;
    let summary = serde_json::json!({
        "episodes": cfg.harness.episodes,
        "rounds": cfg.harness.rounds,
        "routed_consensus_rate": sim.routed_rate,
        "zero_adapter_consensus_rate": sim.silent_rate,
        "adapter_loss_first": sim.adapter_losses.first(),
        "adapter_loss_last": sim.adapter_losses.last(),
        "thought_sets": sim.channel.sets.sets,
    });
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Failure::invalid(e.to_string()))? + "\n";
    write(&out.join("simulation.json"), &text)
}

struct SweepRow {
    dim: usize,
    seed: u64,
    result: Result<(f64, f64), Failure>,
}

fn sweep_setting(cfg: &ExperimentConfig, resume: bool) -> Result<(f64, f64), Failure> {
    let out = PathBuf::from(&cfg.output_dir);
    let report_path = out.join("report.json");
    if resume {
        if let Ok(text) = fs::read_to_string(&report_path) {
            if let Ok(r) = EvalReport::from_json(&text) {
                return Ok((r.mcc, r.support_f1));
            }
        }
    }
    start_run(cfg, &out)?;
    let (data, _) = generate(&cfg.generator, cfg.seed)?;
    let (model, log) = match train_model(&data, &cfg.training) {
        Ok(v) => v,
        Err(Error::TrainingFailed { epoch, reason, log }) => {
            write(&out.join("trainlog.csv"), &log.to_csv())?;
            return Err(Failure {
                code: 3,
                message: format!("training diverged at epoch {epoch} ({reason})"),
            });
        }
        Err(e) => return Err(e.into()),
    };
    let file = ModelFile::new(&model, &cfg.training, None);
    file.save(&out.join("model.json"))?;
    write(&out.join("trainlog.csv"), &log.to_csv())?;
    let echo = serde_json::to_value(cfg).map_err(|e| Failure::invalid(e.to_string()))?;
    let report = evaluate(
        &model,
        &data,
        cfg.training.holdout_fraction,
        &cfg.evaluation,
        echo,
        TrainingSummary::from_log(&log),
    )?;
    write(&report_path, &report.to_json()?)?;
    Ok((report.mcc, report.support_f1))
}

pub fn sweep(inputs: &Inputs, jobs: usize, resume: bool, large: bool) -> Outcome {
    let (cfg, out) = inputs.load(|c| {
        if large {
            c.sweep.dims = LARGE_DIMS.to_vec();
        }
    })?;
    start_run(&cfg, &out)?;
    let runs = preset_mcc_sweep(&cfg)?;
    let next = AtomicUsize::new(0);
    let rows: Mutex<Vec<SweepRow>> = Mutex::new(Vec::with_capacity(runs.len()));
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, runs.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(run) = runs.get(i) else { break };
                let result = sweep_setting(run, resume);
                if let Err(f) = &result {
                    let _ = fs::write(PathBuf::from(&run.output_dir).join("error.txt"), format!("{}\n", f.message));
                }
                rows.lock().expect("sweep worker panicked").push(SweepRow {
                    dim: run.generator.n_h(),
                    seed: run.seed,
                    result,
                });
            });
        }
    });
    let mut rows = rows.into_inner().expect("sweep worker panicked");
    rows.sort_by_key(|r| (r.dim, r.seed));
    let mut csv = String::from("dim,seed,mcc,support_f1,status\n");
    for r in &rows {
        match &r.result {
            Ok((mcc, f1)) => csv.push_str(&format!("{},{},{mcc},{f1},ok\n", r.dim, r.seed)),
            Err(f) => csv.push_str(&format!("{},{},,,failed(exit {})\n", r.dim, r.seed, f.code)),
        }
    }
    write(&out.join("mcc_curve.csv"), &csv)?;
    if rows.iter().any(|r| r.result.is_ok()) || rows.is_empty() {
        Ok(())
    } else {
        let numeric = rows.iter().any(|r| matches!(&r.result, Err(f) if f.code == 3));
        Err(Failure {
            code: if numeric { 3 } else { 2 },
            message: "every sweep setting failed; see error.txt in each run directory".into(),
        })
    }
}
