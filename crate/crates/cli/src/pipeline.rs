//! Pipeline steps: simulate → dataset → pricer → hedgers → evaluation → report.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use swaphedge::analysis::{
    compute_metrics, exposure_inputs, perturb_params, residual_exposures, sample_policy_inputs, shapley_attribution,
    MetricsRecord,
};
use swaphedge::dtafns::ModelParams;
use swaphedge::hedging::{
    rho_label, run_benchmark, run_strategy, train_hedger, FeatureNorm, HedgeEnv, HedgeTrainReport, HedgeRun, ObjectiveKind, PathSet,
    PolicyModel, RunOptions, ZeroPolicy,
};
use swaphedge::io;
use swaphedge::mc_pricer::generate_pricing_dataset;
use swaphedge::nn::{sha256_hex, Checkpoint};
use swaphedge::surrogate::{train_pricer, PricerReport, SurrogateModel, SwaptionTerms};

use crate::config::{ExperimentConfig, Resolved};
use crate::error::{CliError, Result};
use crate::manifest::RunManifest;

pub const CONFIG_FILE: &str = "config.json";
pub const DATASET_STEM: &str = "dataset";
pub const PRICER_FILE: &str = "pricer.ckpt";
pub const PRICER_REPORT: &str = "pricer-report.json";
pub const BASELINE_DIR: &str = "baseline";
pub const PERTURBED_DIR: &str = "perturbed";

/// One strategy of an evaluation, in table order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunEntry {
    pub name: String,
    pub slug: String,
}

pub fn policy_file(kind: ObjectiveKind) -> String {
    format!("policy-{}.ckpt", kind.label().to_lowercase())
}

pub fn rl_name(kind: ObjectiveKind) -> String {
    format!("RL {}", kind.label())
}

/// File-name form of a strategy name, e.g. `rho-(X(1),X(2))` → `rho-x1-x2`.
pub fn slug(name: &str) -> String {
    if name == "rho" {
        return "rho-all".into();
    }
    let mut out = String::new();
    for c in name.to_lowercase().chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c);
        } else if !out.ends_with('-') {
            out.push('-');
        }
    }
    out.trim_matches('-').to_string()
}

/// An artifact directory bound to one configuration.
#[derive(Debug)]
pub struct Workspace {
    pub root: PathBuf,
    pub cfg: ExperimentConfig,
    pub resolved: Resolved,
    pub manifest: RunManifest,
}

impl Workspace {
    /// Creates (or reopens) `root` for `cfg`; `"atm"` strikes are resolved
    /// before the configuration is hashed and stored.
    pub fn open(mut cfg: ExperimentConfig, root: &Path) -> Result<Self> {
        cfg.resolve_strike()?;
        let resolved = cfg.resolve()?;
        std::fs::create_dir_all(root)?;
        let hash = cfg.hash();
        let mut manifest = RunManifest::open(root, &hash)?;
        let mut doc = serde_json::to_vec_pretty(&cfg)?;
        doc.push(b'\n');
        std::fs::write(root.join(CONFIG_FILE), &doc)?;
        for (name, seed) in [
            ("master", cfg.seed),
            ("dataset", cfg.dataset_seed()),
            ("pricer", cfg.pricer_seed()),
            ("hedger_mse", cfg.hedger_seed(ObjectiveKind::Mse)),
            ("hedger_dr", cfg.hedger_seed(ObjectiveKind::Dr)),
            ("hedger_cvar", cfg.hedger_seed(ObjectiveKind::Cvar)),
            ("calibration", cfg.calibration_seed()),
            ("oos", cfg.oos_seed()),
            ("shapley", cfg.shapley_seed()),
        ] {
            manifest.seeds.insert(name.into(), seed);
        }
        manifest.save(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            cfg,
            resolved,
            manifest,
        })
    }

    fn rel(&self, path: &Path) -> String {
        path.strip_prefix(&self.root).unwrap_or(path).to_string_lossy().replace('\\', "/")
    }

    fn record(&mut self, path: &Path, hash: String) -> Result<()> {
        let key = self.rel(path);
        self.manifest.artifacts.insert(key, hash);
        self.manifest.save(&self.root)
    }

    fn write_bytes(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let hash = io::write_hashed(path, bytes)?;
        self.record(path, hash)
    }

    fn timed<T>(&mut self, step: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let t0 = Instant::now();
        let out = f(self)?;
        self.manifest.timings.insert(step.into(), t0.elapsed().as_secs_f64());
        self.manifest.save(&self.root)?;
        Ok(out)
    }

    /// Reads an artifact and checks it against the hash recorded in the manifest.
    fn read_verified(&self, path: &Path) -> Result<Vec<u8>> {
        let key = self.rel(path);
        let expected = self
            .manifest
            .artifacts
            .get(&key)
            .ok_or_else(|| CliError::Missing(format!("{key} is not recorded in the manifest")))?;
        let bytes = std::fs::read(path).map_err(|e| CliError::Missing(format!("{key}: {e}")))?;
        if &sha256_hex(&bytes) != expected {
            return Err(CliError::Integrity(format!("{key} does not match its recorded hash")));
        }
        Ok(bytes)
    }

    pub fn params(&self) -> &ModelParams {
        &self.resolved.params
    }

    /// Writes the first `n` evaluation paths as binary factor matrices.
    pub fn simulate(&mut self, n: usize) -> Result<()> {
        self.timed("simulate", |ws| {
            let set = PathSet::new(ws.params().clone(), n, ws.cfg.oos_seed());
            let env = ws.env(0.0)?;
            let dir = ws.root.join("paths");
            std::fs::create_dir_all(&dir)?;
            for i in 0..n {
                let path = env.path(&set, i as u64)?;
                let stem = dir.join(format!("oos-{i:06}"));
                let side = io::write_factor_path(&stem, &path)?;
                ws.record(&stem.with_extension("bin"), side.sha256.clone())?;
                let json = io::sha256_file(&stem.with_extension("json"))?;
                ws.record(&stem.with_extension("json"), json)?;
            }
            Ok(())
        })
    }

    pub fn price_dataset(&mut self) -> Result<()> {
        self.timed("price_dataset", |ws| {
            let r = &ws.resolved;
            let samples = generate_pricing_dataset(&r.params, &r.swaption, &r.dataset)?;
            let stem = ws.root.join(DATASET_STEM);
            let manifest = io::write_dataset(&stem, &samples, &r.params, &r.dataset)?;
            ws.record(&stem.with_extension("csv"), manifest.csv_sha256.clone())?;
            let json = io::sha256_file(&stem.with_extension("json"))?;
            ws.record(&stem.with_extension("json"), json)
        })
    }

    pub fn train_pricer(&mut self) -> Result<()> {
        self.timed("train_pricer", |ws| {
            let stem = ws.root.join(DATASET_STEM);
            ws.read_verified(&stem.with_extension("csv"))?;
            let (samples, manifest) = io::read_dataset(&stem)?;
            let r = &ws.resolved;
            let (model, report) = train_pricer(
                &r.params,
                SwaptionTerms::from_spec(&r.swaption),
                &samples,
                &manifest.csv_sha256,
                &r.pricer,
            )?;
            let bytes = model.to_checkpoint()?.to_bytes()?;
            ws.manifest.checkpoints.insert("pricer".into(), sha256_hex(&bytes));
            ws.write_bytes(&ws.root.join(PRICER_FILE), &bytes)?;
            let report = serde_json::to_vec_pretty(&report)?;
            ws.write_bytes(&ws.root.join(PRICER_REPORT), &report)
        })
    }

    pub fn pricer_report(&self) -> Result<PricerReport> {
        Ok(serde_json::from_slice(&self.read_verified(&self.root.join(PRICER_REPORT))?)?)
    }

    pub fn load_pricer(&self) -> Result<SurrogateModel> {
        let bytes = self.read_verified(&self.root.join(PRICER_FILE))?;
        Ok(SurrogateModel::from_checkpoint(&Checkpoint::from_bytes(&bytes)?)?)
    }

    /// The hedging environment with premium `v0`.
    pub fn env(&self, v0: f64) -> Result<HedgeEnv> {
        let r = &self.resolved;
        Ok(HedgeEnv::new(
            r.params.clone(),
            r.swaption,
            r.instruments.clone(),
            v0,
            self.cfg.hedge.caps,
        )?)
    }

    /// Premium received at month 0: the pricer's value at the initial state.
    pub fn premium(&self, pricer: &SurrogateModel) -> Result<f64> {
        Ok(pricer.price(self.params().x0(), self.resolved.swaption.t_alpha)?)
    }

    pub fn train_hedgers(&mut self) -> Result<()> {
        self.timed("train_hedger", |ws| {
            let pricer = ws.load_pricer()?;
            let env = ws.env(ws.premium(&pricer)?)?;
            let train = &ws.cfg.hedge.train;
            let calib = PathSet::new(ws.params().clone(), train.calib_paths, ws.cfg.calibration_seed());
            let norm = FeatureNorm::calibrate_with_surrogate(&env, &calib, &pricer)?;
            for kind in ws.cfg.hedge.objectives.clone() {
                let mut tc = ws.cfg.hedge.train.clone();
                tc.seed = ws.cfg.hedger_seed(kind);
                let (policy, report) = train_hedger(&env, ws.params(), norm, kind, ws.cfg.hedge.a, &tc)?;
                let bytes = policy.to_checkpoint()?.to_bytes()?;
                let file = policy_file(kind);
                ws.manifest.checkpoints.insert(file.trim_end_matches(".ckpt").into(), sha256_hex(&bytes));
                ws.write_bytes(&ws.root.join(&file), &bytes)?;
                let report = serde_json::to_vec_pretty(&report)?;
                ws.write_bytes(&ws.root.join(file.replace(".ckpt", "-report.json")), &report)?;
            }
            Ok(())
        })
    }

    pub fn hedger_report(&self, kind: ObjectiveKind) -> Result<HedgeTrainReport> {
        let file = policy_file(kind).replace(".ckpt", "-report.json");
        Ok(serde_json::from_slice(&self.read_verified(&self.root.join(file))?)?)
    }

    pub fn load_policy(&self, kind: ObjectiveKind) -> Result<PolicyModel> {
        let bytes = self.read_verified(&self.root.join(policy_file(kind)))?;
        Ok(PolicyModel::from_checkpoint(&Checkpoint::from_bytes(&bytes)?)?)
    }

    /// Parameters that generate the evaluation paths of `dir`.
    fn simulation_params(&self, dir: &str) -> Result<ModelParams> {
        if dir == PERTURBED_DIR {
            let p = self
                .cfg
                .perturbation
                .ok_or_else(|| CliError::Config("perturb-evaluate needs a `perturbation` block".into()))?;
            Ok(perturb_params(self.params(), p.c_kappa, p.c_theta)?)
        } else {
            Ok(self.params().clone())
        }
    }

    /// The evaluation paths of `dir`.
    pub fn evaluation_paths(&self, dir: &str) -> Result<PathSet> {
        Ok(PathSet::new(self.simulation_params(dir)?, self.cfg.evaluation.n_oos, self.cfg.oos_seed()))
    }

    /// Every strategy run on the evaluation paths of `dir`, in table order.
    pub fn compute_runs(&self, dir: &str) -> Result<Vec<(RunEntry, HedgeRun)>> {
        self.runs_on(&self.evaluation_paths(dir)?)
    }

    /// Every strategy run on `set`, in table order.
    pub fn runs_on(&self, set: &PathSet) -> Result<Vec<(RunEntry, HedgeRun)>> {
        let pricer = self.load_pricer()?;
        let env = self.env(self.premium(&pricer)?)?;
        let mut runs = Vec::new();
        let entry = |name: String| RunEntry {
            slug: slug(&name),
            name,
        };
        for kind in &self.cfg.hedge.objectives {
            let policy = self.load_policy(*kind)?;
            let opts = RunOptions {
                constrained: true,
                track: None,
            };
            runs.push((entry(rl_name(*kind)), run_strategy(&env, set, &policy, opts)?));
        }
        for factors in &self.resolved.rho {
            let run = run_benchmark(&env, set, factors, &pricer, self.cfg.hedge.reg, false)?;
            runs.push((entry(rho_label(factors)), run));
        }
        let zero = ZeroPolicy { m: env.n_instruments() };
        let opts = RunOptions {
            constrained: true,
            track: Some(&pricer),
        };
        runs.push((entry("Unhedged".into()), run_strategy(&env, set, &zero, opts)?));
        Ok(runs)
    }

    /// Runs every strategy on the (baseline or perturbed) evaluation paths,
    /// stores the runs and diagnostics, then writes the report.
    pub fn evaluate(&mut self, dir: &str) -> Result<()> {
        let step = if dir == PERTURBED_DIR { "perturb_evaluate" } else { "evaluate" };
        self.timed(step, |ws| {
            let runs = ws.compute_runs(dir)?;
            let base = ws.root.join(dir);
            let mut index = Vec::new();
            for (entry, run) in &runs {
                let stem = base.join("runs").join(&entry.slug);
                std::fs::create_dir_all(stem.parent().expect("runs dir"))?;
                let files = io::write_run(&stem, run)?;
                ws.record(&stem.with_extension("csv"), files.csv_sha256)?;
                ws.record(&stem.with_extension("bin"), files.bin_sha256)?;
                index.push(entry.clone());
            }
            let index_bytes = serde_json::to_vec_pretty(&index)?;
            ws.write_bytes(&base.join("runs").join("index.json"), &index_bytes)?;
            ws.diagnostics(dir, &runs)?;
            Ok(())
        })?;
        self.report(dir)
    }

    fn diagnostics(&mut self, dir: &str, runs: &[(RunEntry, HedgeRun)]) -> Result<()> {
        let ev = self.cfg.evaluation.clone();
        if !ev.residuals && ev.shapley_samples == 0 {
            return Ok(());
        }
        let pricer = self.load_pricer()?;
        let env = self.env(self.premium(&pricer)?)?;
        let set = self.evaluation_paths(dir)?;
        let base = self.root.join(dir);
        if ev.residuals {
            let inputs = exposure_inputs(&env, &set, &pricer)?;
            for (entry, run) in runs {
                let series = residual_exposures(run, &inputs, self.params())?;
                let bytes = io::residual_csv(&series)?;
                self.write_bytes(&base.join("residuals").join(format!("{}.csv", entry.slug)), &bytes)?;
            }
        }
        if ev.shapley_samples > 0 {
            for kind in self.cfg.hedge.objectives.clone() {
                let policy = self.load_policy(kind)?;
                let name = rl_name(kind);
                let run = &runs.iter().find(|(e, _)| e.name == name).expect("RL run present").1;
                let seed = self.cfg.shapley_seed();
                let samples = sample_policy_inputs(&env, &set, run, &policy, ev.shapley_samples, seed)?;
                let pool = sample_policy_inputs(&env, &set, run, &policy, ev.shapley_background.max(1) * 4, seed ^ 1)?;
                let rec = shapley_attribution(&policy, &samples, &pool, ev.shapley_background, seed)?;
                let bytes = io::attribution_csv(&rec)?;
                self.write_bytes(&base.join("shapley").join(format!("{}.csv", slug(&name))), &bytes)?;
            }
        }
        Ok(())
    }

    /// Loads the stored runs of `dir` (each checked against the manifest).
    pub fn load_runs(&self, dir: &str) -> Result<Vec<(RunEntry, HedgeRun)>> {
        let runs_dir = self.root.join(dir).join("runs");
        let index: Vec<RunEntry> = serde_json::from_slice(&self.read_verified(&runs_dir.join("index.json"))?)?;
        index
            .into_iter()
            .map(|entry| {
                let bytes = self.read_verified(&runs_dir.join(format!("{}.bin", entry.slug)))?;
                Ok((entry, io::decode_run(&bytes)?))
            })
            .collect()
    }

    /// Metrics of every stored run of `dir`; a pure function of the run files.
    pub fn metrics(&self, dir: &str) -> Result<Vec<(String, MetricsRecord)>> {
        metrics_table(&self.load_runs(dir)?)
    }

    pub fn report(&mut self, dir: &str) -> Result<()> {
        let rows = self.metrics(dir)?;
        let base = self.root.join(dir);
        let csv = io::metrics_csv(&rows)?;
        self.write_bytes(&base.join("metrics.csv"), &csv)?;
        let md = io::metrics_markdown(&rows);
        self.write_bytes(&base.join("metrics.md"), md.as_bytes())
    }

    /// Recomputes every stored run from the configuration and checkpoints and
    /// compares it byte for byte with the recorded hashes.
    pub fn verify(&self) -> Result<Vec<String>> {
        let mut checked = Vec::new();
        for (key, hash) in &self.manifest.artifacts {
            let bytes = std::fs::read(self.root.join(key)).map_err(|e| CliError::Missing(format!("{key}: {e}")))?;
            if &sha256_hex(&bytes) != hash {
                return Err(CliError::Integrity(format!("{key} does not match its recorded hash")));
            }
        }
        for dir in [BASELINE_DIR, PERTURBED_DIR] {
            if !self.root.join(dir).join("runs").join("index.json").exists() {
                continue;
            }
            for (entry, run) in self.compute_runs(dir)? {
                let key = format!("{dir}/runs/{}.bin", entry.slug);
                let recorded = self
                    .manifest
                    .artifacts
                    .get(&key)
                    .ok_or_else(|| CliError::Missing(format!("{key} is not recorded in the manifest")))?;
                if &sha256_hex(&io::encode_run(&run)?) != recorded {
                    return Err(CliError::Integrity(format!("{key} does not replay bit-identically")));
                }
                checked.push(key);
            }
            let key = format!("{dir}/metrics.csv");
            if let Some(recorded) = self.manifest.artifacts.get(&key) {
                if &sha256_hex(&io::metrics_csv(&self.metrics(dir)?)?) != recorded {
                    return Err(CliError::Integrity(format!("{key} does not replay bit-identically")));
                }
                checked.push(key);
            }
        }
        Ok(checked)
    }

    /// The whole pipeline.
    pub fn run_all(&mut self) -> Result<()> {
        self.price_dataset()?;
        self.train_pricer()?;
        self.train_hedgers()?;
        self.evaluate(BASELINE_DIR)?;
        if self.cfg.perturbation.is_some() {
            self.evaluate(PERTURBED_DIR)?;
        }
        Ok(())
    }
}

/// Metrics of each run against the `Unhedged` run of the same table, whose
/// price series also provides the tracking-error reference.
pub fn metrics_table(runs: &[(RunEntry, HedgeRun)]) -> Result<Vec<(String, MetricsRecord)>> {
    let unhedged = &runs
        .iter()
        .find(|(e, _)| e.name == "Unhedged")
        .ok_or_else(|| CliError::Missing("the unhedged run".into()))?
        .1;
    let ps = unhedged
        .ps
        .as_ref()
        .ok_or_else(|| CliError::Missing("swaption price series of the unhedged run".into()))?;
    runs.iter()
        .map(|(entry, run)| Ok((entry.name.clone(), compute_metrics(run, unhedged, ps)?)))
        .collect()
}
