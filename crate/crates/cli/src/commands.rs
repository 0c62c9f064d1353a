use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mlmc_core::batcher::plan_epoch;
use mlmc_core::datagen::{
    build_dataset, load_dataset, save_dataset, synthetic1d_dataset, DatasetKind, GrfSpec,
    SolverSettings,
};
use mlmc_core::diagnostics::{
    grad_compare_csv, gradient_comparison, telescoping_audit, variance_decay_profile,
};
use mlmc_core::mlmc::{mlmc_loss, AllocationStrategy, LevelSchedule};
use mlmc_core::model::{load_checkpoint, save_checkpoint, Checkpoint};
use mlmc_core::multires::build_hierarchy_nd;
use mlmc_core::optim::{fit_normalization, train, OptimizerState, Resume, TrainOptions};
use mlmc_core::sweep::{run_sweep, sweep_csv};
use mlmc_core::{Batch, Execution, ModelConfig, MultiResDataset};

use crate::config::Config;
use crate::CliError;

pub struct Context {
    pub config: Config,
    pub out: PathBuf,
    pub exec: Execution,
}

impl Context {
    fn write(&self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        fs::create_dir_all(&self.out)?;
        let path = self.out.join(name);
        fs::write(&path, contents)?;
        Ok(path)
    }

    fn dataset(&self) -> Result<MultiResDataset, CliError> {
        let path = &self.config.dataset.path;
        load_dataset(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    }

    fn model(&self, dataset: &MultiResDataset) -> Result<ModelConfig, CliError> {
        let section = &self.config.model;
        let mut model = section.config;
        if section.normalize {
            model.normalization = fit_normalization(dataset)?;
        }
        Ok(model)
    }

    fn options(&self) -> TrainOptions {
        let run = &self.config.run;
        TrainOptions { epochs: run.epochs, seed: run.seed, eval_every: run.eval_every, exec: self.exec }
    }

    fn schedule(&self, dataset: &MultiResDataset) -> Result<LevelSchedule, CliError> {
        let s = &self.config.schedule;
        let top = match s.resolution {
            None => dataset.n_levels(),
            Some(r) => {
                dataset
                    .hierarchy
                    .iter()
                    .position(|l| l.points_per_side == r)
                    .ok_or_else(|| CliError::Config(format!("dataset has no level with R = {r}")))?
                    + 1
            }
        };
        if s.m == 0 || s.m > top {
            return Err(CliError::Config(format!(
                "schedule.m = {} but only {top} levels are available",
                s.m
            )));
        }
        let levels = dataset.hierarchy[top - s.m..top].to_vec();
        let (n_train, _) = mlmc_core::optim::train_test_split(dataset.n_samples());
        let allocation = s
            .allocation
            .clone()
            .unwrap_or(AllocationStrategy::Geometric { delta: s.delta });
        Ok(LevelSchedule::new(levels, n_train, allocation, s.finest_batch, s.delta, s.sampling)?)
    }
}

pub fn generate(ctx: &Context) -> Result<(), CliError> {
    let d = &ctx.config.dataset;
    let dim = match d.kind {
        DatasetKind::Darcy => 2,
        DatasetKind::Synthetic1d => 1,
    };
    let hierarchy = build_hierarchy_nd(d.fine_resolution, d.levels, dim)?;
    let start = Instant::now();
    let dataset = match d.kind {
        DatasetKind::Darcy => {
            let grf = GrfSpec { shift: d.grf_shift, exponent: d.grf_exponent, ..GrfSpec::darcy(hierarchy[d.levels - 1], d.seed) };
            let solver = SolverSettings { tol: d.solver_tol, ..Default::default() };
            build_dataset(d.n_samples, &hierarchy, &grf, &solver, d.seed, ctx.exec)?
        }
        DatasetKind::Synthetic1d => synthetic1d_dataset(d.n_samples, &hierarchy, d.seed)?,
    };
    let elapsed = start.elapsed().as_secs_f64();
    if let Some(dir) = d.path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_dataset(&dataset, &d.path)?;
    for level in &dataset.hierarchy {
        let shape = vec![level.points_per_side.to_string(); level.dim].join("x");
        println!("level {}: {} samples of {shape}", level.index + 1, dataset.n_samples());
    }
    println!("generated in {elapsed:.2}s -> {}", d.path.display());
    Ok(())
}

fn checkpoint_of(params: mlmc_core::ModelParams, state: &OptimizerState) -> Checkpoint {
    let moments = (!state.first_moment.is_empty())
        .then(|| (state.first_moment.clone(), state.second_moment.clone()));
    Checkpoint { params, step_count: state.step_count, moments }
}

pub fn train_cmd(ctx: &Context, resume_flag: Option<&Path>) -> Result<(), CliError> {
    let dataset = ctx.dataset()?;
    let schedule = ctx.schedule(&dataset)?;
    let optimizer = ctx.config.optimizer;
    let resume_path = resume_flag.map(Path::to_path_buf).or(ctx.config.run.resume.clone());
    let (model, resume) = match resume_path {
        None => (ctx.model(&dataset)?, None),
        Some(path) => {
            let ckpt = load_checkpoint(&path)
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            let model = ckpt.params.config;
            let mut state = OptimizerState::new(optimizer, ckpt.params.len());
            state.step_count = ckpt.step_count;
            if let Some((m, v)) = ckpt.moments {
                state.first_moment = m;
                state.second_moment = v;
            }
            // Checkpoints are written at epoch boundaries.
            let per_epoch = (schedule.sample_counts[0] / schedule.batch_sizes[0]).max(1) as u64;
            let epochs_done = (ckpt.step_count / per_epoch) as usize;
            (model, Some(Resume { params: ckpt.params, state, epochs_done }))
        }
    };
    println!(
        "training m = {} on R = {:?}, N = {:?}, B = {:?}",
        schedule.m(),
        schedule.levels.iter().map(|l| l.points_per_side).collect::<Vec<_>>(),
        schedule.sample_counts,
        schedule.batch_sizes
    );
    let report = train(&dataset, &schedule, &model, &optimizer, &ctx.options(), resume)?;
    let csv = ctx.write("train.csv", &report.to_csv())?;
    let ckpt_path = ctx.out.join("checkpoint.bin");
    save_checkpoint(&checkpoint_of(report.final_params.clone(), &report.final_state), &ckpt_path)?;
    println!(
        "final test loss {:.6e}, median epoch {:.4}s, {} steps -> {}, {}",
        report.final_test_loss(),
        report.median_epoch_wall_s(),
        report.final_state.step_count,
        csv.display(),
        ckpt_path.display()
    );
    Ok(())
}

pub fn sweep_cmd(ctx: &Context) -> Result<(), CliError> {
    let dataset = ctx.dataset()?;
    let model = ctx.model(&dataset)?;
    let rows = run_sweep(
        &dataset,
        &ctx.config.sweep,
        &model,
        &ctx.config.optimizer,
        &ctx.options(),
        |row| {
            println!(
                "{}: {:.4}s/epoch, test loss {:.6e}",
                row.run_id, row.mean_epoch_wall_s, row.final_test_loss
            )
        },
    )?;
    let path = ctx.write("pareto.csv", &sweep_csv(&rows))?;
    println!("{} runs -> {}", rows.len(), path.display());
    Ok(())
}

pub fn diagnose(ctx: &Context) -> Result<(), CliError> {
    let ckpt_path = ctx
        .config
        .diagnose
        .checkpoint
        .clone()
        .unwrap_or_else(|| ctx.out.join("checkpoint.bin"));
    let ckpt = load_checkpoint(&ckpt_path)
        .map_err(|e| CliError::Input(format!("{}: {e}", ckpt_path.display())))?;
    let dataset = ctx.dataset()?;
    let schedule = ctx.schedule(&dataset)?;
    let params = &ckpt.params;
    let levels = &schedule.levels;
    let diag = &ctx.config.diagnose;
    let n_probe = diag.n_probe.min(dataset.n_samples());

    let profile = variance_decay_profile(params, &dataset, levels, n_probe, ctx.exec)?;
    ctx.write("variance_profile.csv", &profile.to_csv())?;

    let plan = plan_epoch(&schedule, ctx.config.run.seed)?;
    let rows = plan
        .batches
        .iter()
        .take(diag.batches.max(1))
        .map(|b| {
            // Fine and coarse references are taken over the level-1 set, so
            // deeper sets are nested inside it here.
            let mut sets = vec![b.sets[0].clone()];
            for (i, s) in b.sets.iter().enumerate().skip(1) {
                let keep: Vec<usize> = s.iter().copied().filter(|j| sets[i - 1].contains(j)).collect();
                sets.push(if keep.is_empty() { vec![sets[i - 1][0]] } else { keep });
            }
            gradient_comparison(params, &dataset, levels, &Batch { sets }, ctx.exec)
        })
        .collect::<Result<Vec<_>, _>>()?;
    ctx.write("grad_compare.csv", &grad_compare_csv(&rows))?;

    let mut audit = String::from("sample,relative_error\n");
    let mut worst: f64 = 0.0;
    let mut pair_sums = vec![0.0; levels.len().saturating_sub(1)];
    for j in 0..n_probe {
        let err = telescoping_audit(params, &dataset, levels, &[j], ctx.exec)?;
        worst = worst.max(err);
        audit.push_str(&format!("{j},{err}\n"));
        let report = mlmc_loss(params, &dataset, levels, &Batch { sets: vec![vec![j]; levels.len()] }, ctx.exec)?;
        for (acc, p) in pair_sums.iter_mut().zip(&report.pair_terms) {
            *acc += p.abs();
        }
    }
    ctx.write("telescoping.csv", &audit)?;
    let mut pairs = String::from("level,resolution,mean_abs_pair_term\n");
    for (i, s) in pair_sums.iter().enumerate() {
        pairs.push_str(&format!(
            "{},{},{}\n",
            i + 2,
            levels[i + 1].points_per_side,
            s / n_probe as f64
        ));
    }
    ctx.write("pair_terms.csv", &pairs)?;
    println!(
        "variance slope {:?}, max telescoping error {worst:.2e}, outputs in {}",
        profile.slope,
        ctx.out.display()
    );
    Ok(())
}
