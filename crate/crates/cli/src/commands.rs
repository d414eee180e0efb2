use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ppt_core::evalsuite::{
    default_presets, evaluate, evaluate_benchmark, judge_agreement_study, oracle_generator,
    run_ablation, speed_pitch_study, BenchReport, Benchmark, EvalTask, Generator,
};
use ppt_core::numerics::{grad_check, GradCheckOptions, Graph};
use ppt_core::policy::{save_checkpoint, Checkpoint, Policy, PolicyConfig};
use ppt_core::synthvoice::{
    make_dpo_pairs, make_pretrain_corpus, make_s2_prompts, make_s3_prompts, read_jsonl,
    JudgeConfig, PreferenceTriple, PromptRecord,
};
use ppt_core::training::{
    dpo_loss_graph, grpo_loss_graph, pretrain, reference_logprobs, run_curriculum, run_joint,
    run_s1_dpo, run_s2_grpo, run_s3_grpo, CurriculumPlan, GroupBatch, StageData, StageKind,
    StageOutcome,
};
use serde::Serialize;

use crate::config::seeds;
use crate::run::RunDir;
use crate::{CliError, CliResult, RunConfig};

#[derive(Parser, Debug)]
#[command(
    name = "ppt",
    about = "Progressive post-training on the synthetic voice domain"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// JSON config merged over the defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads for record-parallel phases; outputs do not depend on it.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub plan: Option<String>,
    /// Dotted override, e.g. `--set s2.group_size=8`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ModelArgs {
    #[command(flatten)]
    pub common: Common,
    /// Starting checkpoint; without it the model is pretrained first.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Input dataset (JSONL) replacing the generated one.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct StudyArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Use the exact renderer instead of a model.
    #[arg(long)]
    pub oracle: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write the pretraining corpus.
    SynthPretrain(Common),
    /// Write preference pairs and a held-out pair set.
    SynthPairs(Common),
    /// Write decoupling prompts.
    SynthS2(Common),
    /// Write instruction prompts.
    SynthS3(Common),
    /// Train the base model with cross-entropy.
    Pretrain(ModelArgs),
    /// Preference stage only.
    AlignS1(ModelArgs),
    /// Decoupling GRPO stage only.
    AlignS2(ModelArgs),
    /// Instruction GRPO stage only, with decoupling prompts mixed in.
    AlignS3 {
        #[command(flatten)]
        model: ModelArgs,
        /// Decoupling prompts mixed into the instruction stage.
        #[arg(long)]
        mix_data: Option<PathBuf>,
    },
    /// Run a stage plan (`--plan`), evaluating after every stage.
    Curriculum(ModelArgs),
    /// Decoupling and complex-instruction benchmark.
    Eval {
        #[command(flatten)]
        study: StudyArgs,
        /// Evaluate one task file instead of the full benchmark.
        #[arg(long)]
        task: Option<PathBuf>,
    },
    /// Spearman correlation of requested vs produced speed and pitch.
    StudySpeedpitch(StudyArgs),
    /// Macro-F1 agreement between the surrogate and gold judges.
    StudyJudge(StudyArgs),
    /// Run several plans from one base model and tabulate them.
    Ablate {
        #[command(flatten)]
        model: ModelArgs,
        /// `table4` or a comma list of preset names.
        #[arg(long, default_value = "table4")]
        presets: String,
    },
    /// Finite-difference check of both alignment losses.
    Gradcheck(Common),
    /// Summarise a checkpoint, dataset, report or run directory.
    Inspect { path: PathBuf },
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {}", e.class(), e.to_string().replace('\n', " "));
            e.exit_code()
        }
    }
}

fn setup(common: &Common) -> CliResult<(RunConfig, RunDir)> {
    let cfg = RunConfig::load(
        common.config.as_deref(),
        common.seed,
        common.plan.as_deref(),
        &common.set,
    )?;
    if let Some(n) = common.workers {
        if n == 0 {
            return Err(CliError::Config("--workers must be positive".into()));
        }
        // Fails harmlessly when a pool already exists (tests in one process).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    Ok((cfg, RunDir::create(&common.out)?))
}

pub fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::SynthPretrain(c) => {
            let (cfg, mut run) = setup(&c)?;
            run.write_jsonl("pretrain.jsonl", &pretrain_corpus(&cfg)?)?;
            run.finish("synth-pretrain", &cfg)?;
        }
        Command::SynthPairs(c) => {
            let (cfg, mut run) = setup(&c)?;
            let (pairs, held) = pairs(&cfg)?;
            run.write_jsonl("pairs.jsonl", &pairs)?;
            run.write_jsonl("pairs_held_out.jsonl", &held)?;
            run.finish("synth-pairs", &cfg)?;
        }
        Command::SynthS2(c) => {
            let (cfg, mut run) = setup(&c)?;
            run.write_jsonl("s2.jsonl", &s2_prompts(&cfg)?)?;
            run.finish("synth-s2", &cfg)?;
        }
        Command::SynthS3(c) => {
            let (cfg, mut run) = setup(&c)?;
            run.write_jsonl("s3.jsonl", &s3_prompts(&cfg)?)?;
            run.finish("synth-s3", &cfg)?;
        }
        Command::Pretrain(m) => {
            let (cfg, mut run) = setup(&m.common)?;
            let corpus = match &m.data {
                Some(p) => read_jsonl(p)?,
                None => pretrain_corpus(&cfg)?,
            };
            let mut model = match &m.init {
                Some(p) => load(p)?,
                None => Policy::new(cfg.policy.clone())?,
            };
            let out = pretrain(&mut model, &corpus, &cfg.pretrain)?;
            write_outcome(&mut run, &out)?;
            save_model(&mut run, "model.ckpt", &model)?;
            run.finish("pretrain", &cfg)?;
        }
        Command::AlignS1(m) => single_stage(m, None, StageKind::S1, "align-s1")?,
        Command::AlignS2(m) => single_stage(m, None, StageKind::S2, "align-s2")?,
        Command::AlignS3 { model, mix_data } => {
            single_stage(model, mix_data, StageKind::S3, "align-s3")?
        }
        Command::Curriculum(m) => curriculum(m)?,
        Command::Eval { study, task } => {
            let (cfg, mut run) = setup(&study.model.common)?;
            let model = if study.oracle {
                None
            } else {
                Some(base_model(&study.model, &cfg, &mut run)?)
            };
            with_generator(model.as_ref(), |g| match &task {
                Some(p) => {
                    let t = EvalTask::read(p)?;
                    run.write_json("report.json", &evaluate(g, &t)?)
                }
                None => run.write_json("report.json", &evaluate_benchmark(g, &benchmark(&cfg)?)?),
            })?;
            run.finish("eval", &cfg)?;
        }
        Command::StudySpeedpitch(s) => {
            let (cfg, mut run) = setup(&s.model.common)?;
            let model = if s.oracle {
                None
            } else {
                Some(base_model(&s.model, &cfg, &mut run)?)
            };
            let seed = cfg.seed_for(seeds::STUDY);
            let rep = with_generator(model.as_ref(), |g| {
                Ok(speed_pitch_study(g, cfg.eval.n_speedpitch_texts, seed)?)
            })?;
            for (name, a) in [("speed", &rep.speed), ("pitch", &rep.pitch)] {
                match a.spearman {
                    Some(r) => println!("{name} spearman={r:.4} pairs={}", a.n_pairs),
                    None => println!(
                        "{name} spearman=undefined ({})",
                        a.error.as_deref().unwrap_or("")
                    ),
                }
            }
            run.write_json("speedpitch.json", &rep)?;
            run.finish("study-speedpitch", &cfg)?;
        }
        Command::StudyJudge(s) => {
            let (cfg, mut run) = setup(&s.model.common)?;
            let model = if s.oracle {
                None
            } else {
                Some(base_model(&s.model, &cfg, &mut run)?)
            };
            let prompts = make_s3_prompts(0, cfg.eval.n_judge_prompts, cfg.seed_for(seeds::STUDY))?;
            let surrogate = JudgeConfig::surrogate(
                cfg.eval.judge_flip_noise.clone(),
                cfg.seed_for(seeds::JUDGE),
            );
            let rep = with_generator(model.as_ref(), |g| {
                Ok(judge_agreement_study(
                    g,
                    &prompts,
                    &JudgeConfig::gold(),
                    &surrogate,
                )?)
            })?;
            println!("macro_f1={:.4} n={}", rep.overall, rep.n);
            run.write_json("judge_agreement.json", &rep)?;
            run.finish("study-judge", &cfg)?;
        }
        Command::Ablate { model, presets } => ablate(model, &presets)?,
        Command::Gradcheck(c) => gradcheck(&c)?,
        Command::Inspect { path } => print!("{}", crate::inspect::inspect(&path)?),
    }
    Ok(())
}

fn with_generator<T>(
    model: Option<&Policy>,
    f: impl FnOnce(&dyn Generator) -> CliResult<T>,
) -> CliResult<T> {
    match model {
        Some(m) => f(m),
        None => f(&oracle_generator),
    }
}

pub fn pretrain_corpus(cfg: &RunConfig) -> CliResult<Vec<PromptRecord>> {
    Ok(make_pretrain_corpus(
        cfg.data.n_pretrain,
        &cfg.data.pretrain_knobs,
        cfg.seed_for(seeds::PRETRAIN_DATA),
    )?)
}

pub fn pairs(cfg: &RunConfig) -> CliResult<(Vec<PreferenceTriple>, Vec<PreferenceTriple>)> {
    Ok((
        make_dpo_pairs(cfg.data.n_pairs, cfg.seed_for(seeds::PAIRS))?,
        make_dpo_pairs(
            cfg.data.n_pairs_held_out.max(1),
            cfg.seed_for(seeds::PAIRS_HELD_OUT),
        )?,
    ))
}

pub fn s2_prompts(cfg: &RunConfig) -> CliResult<Vec<PromptRecord>> {
    Ok(make_s2_prompts(
        cfg.data.n_s2,
        &cfg.data.s2_knobs,
        cfg.seed_for(seeds::S2_DATA),
    )?)
}

pub fn s3_prompts(cfg: &RunConfig) -> CliResult<Vec<PromptRecord>> {
    Ok(make_s3_prompts(
        cfg.data.n_s3_existing,
        cfg.data.n_s3_generated,
        cfg.seed_for(seeds::S3_DATA),
    )?)
}

pub fn benchmark(cfg: &RunConfig) -> CliResult<Benchmark> {
    Ok(Benchmark::build(
        cfg.eval.n_per_task,
        cfg.eval.n_complex,
        cfg.seed_for(seeds::EVAL),
    )?)
}

fn load(path: &Path) -> CliResult<Policy> {
    Ok(Checkpoint::load(path)?.policy)
}

fn save_model(run: &mut RunDir, name: &str, model: &Policy) -> CliResult<()> {
    run.write_bytes(name, &Checkpoint::new(model.clone()).to_bytes())
}

fn write_outcome(run: &mut RunDir, out: &StageOutcome) -> CliResult<()> {
    run.write_jsonl(&format!("logs/{}_steps.jsonl", out.stage), &out.steps)?;
    run.write_json(&format!("logs/{}_epochs.json", out.stage), &out.epochs)
}

/// `--init` checkpoint, or a model pretrained from the config (saved as
/// `pretrained.ckpt` with its logs).
pub fn base_model(m: &ModelArgs, cfg: &RunConfig, run: &mut RunDir) -> CliResult<Policy> {
    if let Some(p) = &m.init {
        return load(p);
    }
    eprintln!("pretraining on {} records", cfg.data.n_pretrain);
    let mut model = Policy::new(cfg.policy.clone())?;
    let out = pretrain(&mut model, &pretrain_corpus(cfg)?, &cfg.pretrain)?;
    write_outcome(run, &out)?;
    save_model(run, "pretrained.ckpt", &model)?;
    Ok(model)
}

fn single_stage(m: ModelArgs, mix: Option<PathBuf>, stage: StageKind, name: &str) -> CliResult<()> {
    let (cfg, mut run) = setup(&m.common)?;
    let mut model = base_model(&m, &cfg, &mut run)?;
    let out = match stage {
        StageKind::S1 => {
            let (generated, held) = pairs(&cfg)?;
            let train = match &m.data {
                Some(p) => read_jsonl(p)?,
                None => generated,
            };
            run_s1_dpo(&mut model, &train, &held, &cfg.s1)?
        }
        StageKind::S2 => {
            let prompts = match &m.data {
                Some(p) => read_jsonl(p)?,
                None => s2_prompts(&cfg)?,
            };
            run_s2_grpo(&mut model, &prompts, &cfg.s2)?
        }
        StageKind::S3 => {
            let prompts = match &m.data {
                Some(p) => read_jsonl(p)?,
                None => s3_prompts(&cfg)?,
            };
            let mixed = match &mix {
                Some(p) => read_jsonl(p)?,
                None => s2_prompts(&cfg)?,
            };
            run_s3_grpo(&mut model, &prompts, &mixed, &cfg.s3, &cfg.s2)?
        }
        StageKind::Joint => run_joint(
            &mut model,
            &s2_prompts(&cfg)?,
            &s3_prompts(&cfg)?,
            &cfg.s2,
            &cfg.s3,
        )?,
    };
    write_outcome(&mut run, &out)?;
    save_model(&mut run, "model.ckpt", &model)?;
    run.write_json(
        "report.json",
        &evaluate_benchmark(&model, &benchmark(&cfg)?)?,
    )?;
    run.finish(name, &cfg)?;
    Ok(())
}

#[derive(Serialize)]
struct StageReport<'a> {
    after: String,
    report: &'a BenchReport,
}

#[derive(Serialize)]
struct CurriculumReport<'a> {
    plan: &'a CurriculumPlan,
    stages: Vec<StageReport<'a>>,
    final_decoupling_average: f64,
    final_complex_average: f64,
}

fn curriculum(m: ModelArgs) -> CliResult<()> {
    let (cfg, mut run) = setup(&m.common)?;
    let plan = CurriculumPlan::parse(&cfg.plan)?;
    let mut model = base_model(&m, &cfg, &mut run)?;
    let bench = benchmark(&cfg)?;
    let (pairs, held) = pairs(&cfg)?;
    let (s2, s3) = (s2_prompts(&cfg)?, s3_prompts(&cfg)?);
    let data = StageData {
        dpo_pairs: &pairs,
        dpo_held_out: &held,
        s2_prompts: &s2,
        s3_prompts: &s3,
    };
    let mut reports = vec![("00_base".to_string(), evaluate_benchmark(&model, &bench)?)];
    let mut snapshots = Vec::new();
    let outcomes = run_curriculum(
        &mut model,
        &plan,
        &data,
        &cfg.stage_configs(),
        |i, stage, m| {
            eprintln!("stage {} ({stage}) done", i + 1);
            let name = format!("{:02}_{stage}", i + 1);
            reports.push((name.clone(), evaluate_benchmark(m, &bench)?));
            snapshots.push((name, Checkpoint::new(m.clone()).to_bytes()));
            Ok(())
        },
    )?;
    for (name, bytes) in &snapshots {
        run.write_bytes(&format!("checkpoints/{name}.ckpt"), bytes)?;
    }
    let mut steps = Vec::new();
    for o in &outcomes {
        steps.extend(o.steps.iter().cloned());
    }
    run.write_jsonl("metrics.jsonl", &steps)?;
    for (i, o) in outcomes.iter().enumerate() {
        run.write_json(
            &format!("logs/{:02}_{}_epochs.json", i + 1, o.stage),
            &o.epochs,
        )?;
    }
    for (name, r) in &reports {
        run.write_json(&format!("reports/{name}.json"), r)?;
    }
    let last = &reports.last().expect("base report").1;
    let summary = CurriculumReport {
        plan: &plan,
        stages: reports
            .iter()
            .map(|(n, r)| StageReport {
                after: n.clone(),
                report: r,
            })
            .collect(),
        final_decoupling_average: last.decoupling_average,
        final_complex_average: last.complex_average,
    };
    run.write_json("report.json", &summary)?;
    save_model(&mut run, "model.ckpt", &model)?;
    println!(
        "plan {} final decoupling_average={:.4} complex_average={:.4}",
        plan.name, last.decoupling_average, last.complex_average
    );
    run.finish("curriculum", &cfg)?;
    Ok(())
}

fn ablate(m: ModelArgs, presets: &str) -> CliResult<()> {
    let (cfg, mut run) = setup(&m.common)?;
    let plans = if presets == "table4" {
        default_presets()
    } else {
        presets
            .split(',')
            .map(|p| CurriculumPlan::preset(p.trim()))
            .collect::<ppt_core::Result<_>>()?
    };
    let base = base_model(&m, &cfg, &mut run)?;
    let bench = benchmark(&cfg)?;
    let (pairs, held) = pairs(&cfg)?;
    let (s2, s3) = (s2_prompts(&cfg)?, s3_prompts(&cfg)?);
    let data = StageData {
        dpo_pairs: &pairs,
        dpo_held_out: &held,
        s2_prompts: &s2,
        s3_prompts: &s3,
    };
    let (table, reports) = run_ablation(&plans, &base, &data, &cfg.stage_configs(), &bench)?;
    for (plan, r) in plans.iter().zip(&reports) {
        run.write_json(&format!("reports/{}.json", plan.name), r)?;
    }
    run.write_json("ablation.json", &table)?;
    let text = table.to_text();
    run.write_text("ablation.txt", &text)?;
    print!("{text}");
    run.finish("ablate", &cfg)?;
    Ok(())
}

/// Finite-difference check of the full preference and group losses on a
/// small model. Fails when the error exceeds `1e-4`.
pub fn gradcheck_errors(seed: u64) -> CliResult<(f64, f64)> {
    let cfg = PolicyConfig {
        d_model: 16,
        n_layers: 2,
        n_heads: 2,
        max_context: 96,
        seed,
        ..Default::default()
    };
    let mut model = Policy::new(cfg.clone())?;
    let pairs = make_dpo_pairs(2, seed)?;
    let ref_lp: Vec<(f64, f64)> = reference_logprobs(&model, &pairs)?
        .iter()
        .map(|&(w, l)| (w + 0.25, l - 0.25))
        .collect();
    let names = model.names.clone();
    let opts = GradCheckOptions {
        per_param: Some(6),
        seed,
        ..Default::default()
    };
    let dpo = grad_check(&mut model.params, opts, |ps, want| {
        let m = Policy {
            config: cfg.clone(),
            params: ps.to_vec(),
            names: names.clone(),
        };
        let mut g = Graph::new();
        let pv = m.bind(&mut g);
        let (loss, _) = dpo_loss_graph(&mut g, &pv, &m, &pairs, &ref_lp, 0.1)?;
        Ok((
            g.scalar(loss),
            if want { Some(g.backward(loss)?) } else { None },
        ))
    })?;
    let rec = &make_s2_prompts(1, &Default::default(), seed)?[0];
    let prompt = rec.prompt();
    let completions = vec![
        pairs[0].chosen_tokens.clone(),
        pairs[0].rejected_tokens.clone(),
    ];
    let old: Vec<f64> = completions
        .iter()
        .map(|c| model.completion_logprob(&prompt, c).map(|l| l - 0.05))
        .collect::<Result<_, _>>()?;
    let refs: Vec<Vec<f64>> = completions
        .iter()
        .map(|c| {
            model
                .token_logprobs(&prompt, c)
                .map(|v| v.iter().map(|x| x - 0.01).collect())
        })
        .collect::<Result<_, _>>()?;
    let adv = [1.0, -1.0];
    let grpo = grad_check(&mut model.params, opts, |ps, want| {
        let m = Policy {
            config: cfg.clone(),
            params: ps.to_vec(),
            names: names.clone(),
        };
        let batch = GroupBatch {
            prompt: &prompt,
            completions: &completions,
            advantages: &adv,
            old_logprobs: &old,
            ref_token_logprobs: &refs,
        };
        let mut g = Graph::new();
        let pv = m.bind(&mut g);
        let (loss, _) = grpo_loss_graph(&mut g, &pv, &m, &batch, 0.2, 0.1)?;
        Ok((
            g.scalar(loss),
            if want { Some(g.backward(loss)?) } else { None },
        ))
    })?;
    Ok((dpo, grpo))
}

fn gradcheck(c: &Common) -> CliResult<()> {
    let (cfg, mut run) = setup(c)?;
    let (dpo, grpo) = gradcheck_errors(cfg.seed)?;
    let worst = dpo.max(grpo);
    println!("dpo max_rel_err={dpo:.3e}");
    println!("grpo max_rel_err={grpo:.3e}");
    println!("max_rel_err={worst:.3e}");
    run.write_json(
        "gradcheck.json",
        &serde_json::json!({ "dpo": dpo, "grpo": grpo, "max": worst, "tolerance": 1e-4 }),
    )?;
    run.finish("gradcheck", &cfg)?;
    if worst > 1e-4 {
        return Err(CliError::Runtime(anyhow::anyhow!(
            "gradient check failed: {worst:.3e} > 1e-4"
        )));
    }
    Ok(())
}

/// Saves a checkpoint outside a run directory (used by tests and tools).
pub fn save_policy(model: &Policy, path: &Path) -> CliResult<()> {
    Ok(save_checkpoint(model, None, path)?)
}
