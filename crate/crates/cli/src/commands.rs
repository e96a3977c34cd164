use std::fs;
use std::path::{Path, PathBuf};

use adaptlaw::dataset::{load_dataset, same_stage, ColumnMap, TokenScale};
use adaptlaw::law::BaselineMode;
use adaptlaw::metrics::{metrics_report, sci, DEFAULT_Y_CLIP};
use adaptlaw::planner::{verify_plan, PlanResult, RatioSolve, Violation};
use adaptlaw::protocol::{predict_grid, write_rows_csv, OracleReport, RunMode};
use adaptlaw::synth::{generate, paper_default_spec, source_default_spec, SynthSpec};
use adaptlaw::{
    fit, run_experiment, run_oracle, ComparisonTable, Dataset, Error, EvalPoint, ExperimentSpec, FitConfig,
    FitResult, GridSpec, LawForm, Measurement, PlanConstraints, PlanProblem, Result,
};
use serde::Serialize;

use crate::{svg, Cli, Command, CompareArgs, EvaluateArgs, FitArgs, FitOptions, PlanArgs, PredictGridArgs, SynthArgs};

pub fn run(cli: &Cli) -> Result<()> {
    let ctx = Ctx {
        out_dir: cli.out_dir.clone(),
        quiet: cli.quiet,
        seed: cli.seed,
    };
    match &cli.command {
        Command::Fit(a) => cmd_fit(&ctx, a),
        Command::Evaluate(a) => cmd_evaluate(&ctx, a),
        Command::Compare(a) => cmd_compare(&ctx, a),
        Command::Plan(a) => cmd_plan(&ctx, a),
        Command::Synth(a) => cmd_synth(&ctx, a),
        Command::PredictGrid(a) => cmd_predict_grid(&ctx, a),
    }
}

struct Ctx {
    out_dir: PathBuf,
    quiet: bool,
    seed: Option<u64>,
}

impl Ctx {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }

    fn output(&self, p: &Path) -> Result<PathBuf> {
        let path = if p.is_absolute() { p.to_path_buf() } else { self.out_dir.join(p) };
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
        }
        Ok(path)
    }

    /// Sibling of `main` with a different suffix, e.g. `plan.json` -> `plan_feasibility.csv`.
    fn sibling(&self, main: &Path, suffix: &str) -> Result<PathBuf> {
        let stem = main.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
        self.output(&main.with_file_name(format!("{stem}{suffix}")))
    }

    fn fit_config(&self, o: &FitOptions) -> Result<FitConfig> {
        let mut cfg: FitConfig = match &o.fit_config {
            Some(p) => read_json(p)?,
            None => FitConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(n) = o.starts {
            cfg.n_starts = n;
        }
        if let Some(d) = o.huber_delta {
            cfg.huber_delta = d;
        }
        if let Some(m) = o.max_iters {
            cfg.max_iters = m;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn require_input(p: &Path) -> Result<&Path> {
    if p.is_file() {
        Ok(p)
    } else {
        Err(Error::Config(format!("input file `{}` not found", p.display())))
    }
}

fn read_json<T: serde::de::DeserializeOwned>(p: &Path) -> Result<T> {
    let text = fs::read_to_string(require_input(p)?).map_err(|e| Error::io(p, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_json<T: Serialize>(p: &Path, v: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    fs::write(p, text).map_err(|e| Error::io(p, e))
}

fn write_text(p: &Path, text: &str) -> Result<()> {
    fs::write(p, text).map_err(|e| Error::io(p, e))
}

fn load(p: &Path) -> Result<Dataset> {
    load_dataset(require_input(p)?, &ColumnMap::default())
}

fn in_stages(m: &Measurement, stages: &[f64]) -> bool {
    stages.is_empty() || stages.iter().any(|&s| same_stage(m.ptpp, s))
}

fn fit_summary(f: &FitResult) -> String {
    let converged = f.starts.iter().filter(|s| s.converged).count();
    format!(
        "{}: objective {} converged={} iters {} best start {} ({}/{} starts converged) points {}",
        f.form,
        sci(f.objective),
        f.converged,
        f.n_iters,
        f.best_start_index,
        converged,
        f.starts.len(),
        f.n_points
    )
}

fn cmd_fit(ctx: &Ctx, a: &FitArgs) -> Result<()> {
    let cfg = ctx.fit_config(&a.fit)?;
    let ds = load(&a.data)?;
    let slice: Vec<Measurement> = ds
        .domain(a.domain)
        .into_iter()
        .filter(|m| in_stages(m, &a.train_ptpp))
        .collect();
    if slice.is_empty() {
        return Err(Error::Data(format!(
            "no {} measurements at ptpp {:?} in {}",
            a.domain,
            a.train_ptpp,
            a.data.display()
        )));
    }
    let result = fit(&slice, a.form, &cfg)?;
    let out = ctx.output(&a.out)?;
    write_json(&out, &result)?;
    ctx.say(fit_summary(&result));
    ctx.say(format!("wrote {}", out.display()));
    Ok(())
}

fn cmd_evaluate(ctx: &Ctx, a: &EvaluateArgs) -> Result<()> {
    let ds = load(&a.data)?;
    let out = ctx.output(&a.out)?;
    if a.oracle {
        let [stage] = a.eval_ptpp[..] else {
            return Err(Error::Config("--oracle takes exactly one --eval-ptpp stage".into()));
        };
        let form = a
            .form
            .ok_or_else(|| Error::Config("--oracle needs --form".into()))?;
        let cfg = ctx.fit_config(&a.fit_opts)?;
        let report = run_oracle(&ds, stage, form, a.domain, &cfg)?;
        write_json(&out, &report)?;
        let text = report.table().render_text();
        write_text(&ctx.sibling(&a.out, ".txt")?, &text)?;
        ctx.say(format!("mode oracle (upper bound, not a forecast)\n{text}"));
        return Ok(());
    }
    let fit_path = a
        .fit
        .as_ref()
        .ok_or_else(|| Error::Config("--fit is required without --oracle".into()))?;
    let fit: FitResult = read_json(fit_path)?;
    let slice: Vec<Measurement> = ds
        .domain(a.domain)
        .into_iter()
        .filter(|m| in_stages(m, &a.eval_ptpp))
        .collect();
    if slice.is_empty() {
        return Err(Error::Data(format!("no {} measurements at ptpp {:?}", a.domain, a.eval_ptpp)));
    }
    let preds = slice
        .iter()
        .map(|m| Ok(fit.predict(&EvalPoint::new(m.model_params, m.adapt_tokens, m.replay_ratio, m.ptpp)?)))
        .collect::<Result<Vec<f64>>>()?;
    let obs: Vec<f64> = slice.iter().map(|m| m.loss).collect();
    let metrics = metrics_report(&preds, &obs, adaptlaw::metrics::DEFAULT_HUBER_DELTA, DEFAULT_Y_CLIP)?;
    let table = ComparisonTable::new(
        format!("{} at ptpp {:?}", a.domain, a.eval_ptpp),
        vec![(fit.form, metrics)],
    );
    #[derive(Serialize)]
    struct Evaluation<'a> {
        mode: RunMode,
        fit: &'a Path,
        table: &'a ComparisonTable,
    }
    write_json(
        &out,
        &Evaluation {
            mode: RunMode::Transfer,
            fit: fit_path,
            table: &table,
        },
    )?;
    let text = table.render_text();
    write_text(&ctx.sibling(&a.out, ".txt")?, &text)?;
    ctx.say(text);
    Ok(())
}

#[derive(Serialize)]
struct OracleComparison {
    mode: RunMode,
    stage: f64,
    table: ComparisonTable,
    reports: Vec<OracleReport>,
}

fn cmd_compare(ctx: &Ctx, a: &CompareArgs) -> Result<()> {
    let cfg = ctx.fit_config(&a.fit)?;
    let ds = load(&a.data)?;
    let forms = if a.forms.is_empty() { LawForm::ALL.to_vec() } else { a.forms.clone() };
    let out = ctx.output(&a.out)?;
    let text_path = ctx.sibling(&a.out, ".txt")?;

    if a.oracle {
        let [stage] = a.eval_ptpp[..] else {
            return Err(Error::Config("--oracle takes exactly one --eval-ptpp stage".into()));
        };
        let reports = forms
            .iter()
            .map(|&f| run_oracle(&ds, stage, f, a.domain, &cfg))
            .collect::<Result<Vec<_>>>()?;
        let table = ComparisonTable::new(
            format!("{} oracle at ptpp {stage} (upper bound)", a.domain),
            reports.iter().map(|r| (r.form, r.metrics)).collect(),
        );
        let text = table.render_text();
        write_json(
            &out,
            &OracleComparison {
                mode: RunMode::Oracle,
                stage,
                table,
                reports,
            },
        )?;
        write_text(&text_path, &text)?;
        ctx.say(format!("mode oracle (upper bound, not a forecast)\n{text}"));
        return Ok(());
    }

    let spec = ExperimentSpec {
        train_stages: a.train_ptpp.clone(),
        eval_stages: a.eval_ptpp.clone(),
        forms,
        domain: a.domain,
        anchor_policy: a.anchors,
        fit_config: cfg,
    };
    let report = run_experiment(&ds, &spec)?;
    write_json(&out, &report)?;
    let text = report.render_text();
    write_text(&text_path, &text)?;
    write_rows_csv(&report.predictions, ctx.sibling(&a.out, "_predictions.csv")?)?;
    for o in &report.outcomes {
        ctx.say(fit_summary(&o.fit));
    }
    ctx.say(format!(
        "audit: {} train points, {} anchors, {} scored points, {} anchors among scored",
        report.audit.train_points,
        report.audit.anchors.len(),
        report.audit.eval_points,
        report.audit.anchors_in_eval
    ));
    ctx.say(text);
    Ok(())
}

fn parse_baseline(s: &str) -> Result<BaselineMode> {
    match s.trim() {
        "law-limit" => Ok(BaselineMode::LawLimit),
        v => v
            .parse::<f64>()
            .map(BaselineMode::Measured)
            .map_err(|_| Error::Config(format!("bad --baseline `{v}` (law-limit or a loss value)"))),
    }
}

fn describe_infeasible(per_r: &[RatioSolve]) -> String {
    let count = |v| per_r.iter().filter(|p| p.violated == Some(v)).count();
    format!(
        "infeasible at every ratio (at the largest budget: forgetting violated at {}, target at {}, both at {} of {} ratios)",
        count(Violation::Forgetting),
        count(Violation::Target),
        count(Violation::Both),
        per_r.len()
    )
}

fn cmd_plan(ctx: &Ctx, a: &PlanArgs) -> Result<()> {
    let src: FitResult = read_json(&a.src_fit)?;
    let tgt: FitResult = read_json(&a.tgt_fit)?;
    let mut problem = PlanProblem::new(
        src,
        tgt,
        a.n,
        a.ptpp,
        PlanConstraints {
            forgetting_tolerance: a.forget.value,
            target_threshold: a.tau,
            mode: a.forget.mode,
        },
    );
    problem.baseline = parse_baseline(&a.baseline)?;
    problem.allow_unconverged = a.allow_unconverged;
    let s = &mut problem.search;
    if let Some(v) = a.r_points {
        s.r_points = v;
    }
    if let Some(v) = a.atpp_min {
        s.atpp_min = v;
    }
    if let Some(v) = a.atpp_max {
        s.atpp_max = v;
    }
    if let Some(v) = a.scan_points {
        s.scan_points = v;
    }
    if let Some(l) = &a.landscape {
        let parsed = l
            .split_once('x')
            .and_then(|(r, d)| Some((r.trim().parse().ok()?, d.trim().parse().ok()?)));
        let Some((r, d)) = parsed else {
            return Err(Error::Config(format!("bad --landscape `{l}` (e.g. 64x96)")));
        };
        s.landscape_r_points = r;
        s.landscape_atpp_points = d;
    }

    let result = adaptlaw::plan(&problem)?;
    let out = ctx.output(&a.out)?;
    write_json(&out, &result)?;
    let grid = &result.feasibility_grid;
    let feas = ctx.sibling(&a.out, "_feasibility.csv")?;
    let forg = ctx.sibling(&a.out, "_forgetting_landscape.csv")?;
    let targ = ctx.sibling(&a.out, "_target_loss_landscape.csv")?;
    grid.write_feasibility_csv(&feas)?;
    grid.write_forgetting_csv(&forg, a.n)?;
    grid.write_target_loss_csv(&targ, a.n)?;
    if a.svg {
        let star = result.atpp_star.zip(result.r_star);
        let values: Vec<f64> = grid.cells.iter().map(|c| c.slacks.forgetting).collect();
        write_text(
            &ctx.sibling(&a.out, "_forgetting_landscape.svg")?,
            &svg::heatmap(grid, &values, "forgetting (nats)", star),
        )?;
        let values: Vec<f64> = grid.cells.iter().map(|c| c.slacks.target_loss).collect();
        write_text(
            &ctx.sibling(&a.out, "_target_loss_landscape.svg")?,
            &svg::heatmap(grid, &values, "target loss (nats)", star),
        )?;
    }

    // independent re-check of what was written
    let reloaded: PlanResult = read_json(&out)?;
    let check = verify_plan(&problem, &reloaded)?;
    if !check.ok {
        return Err(Error::Plan(format!("written plan failed its self-check: {check:?}")));
    }

    let mode = match a.forget.mode {
        adaptlaw::ToleranceMode::Relative => "relative",
        adaptlaw::ToleranceMode::Absolute => "absolute",
    };
    ctx.say(format!(
        "baseline source loss {:.4} ({}), forgetting budget {:.4} nats ({mode}), tau {}",
        result.baseline_source_loss,
        match problem.baseline {
            BaselineMode::LawLimit => "law limit",
            BaselineMode::Measured(_) => "measured",
        },
        result.forgetting_allowed,
        a.tau
    ));
    match (result.atpp_star, result.r_star) {
        (Some(atpp), Some(r)) => ctx.say(format!(
            "feasible: atpp* {atpp:.4}, r* {r:.4}, D* {:.4e}, flops {:.4e}, binding {:?}",
            result.d_star.unwrap_or(f64::NAN),
            result.flops.unwrap_or(f64::NAN),
            result.binding_constraint
        )),
        _ => ctx.say(describe_infeasible(&result.per_r)),
    }
    ctx.say(format!("self-check ok; wrote {}", out.display()));
    Ok(())
}

fn cmd_synth(ctx: &Ctx, a: &SynthArgs) -> Result<()> {
    let mut spec: SynthSpec = match &a.spec {
        Some(p) => read_json(p)?,
        None => match a.preset.as_str() {
            "target" => paper_default_spec(),
            "source" => source_default_spec(),
            other => return Err(Error::Config(format!("unknown preset `{other}` (target|source)"))),
        },
    };
    if let Some(s) = ctx.seed {
        spec.seed = s;
    }
    if let Some(n) = a.noise {
        spec.noise_sigma = n;
    }
    let ds = generate(&spec)?;
    let out = ctx.output(&a.out)?;
    ds.write_csv(&out)?;
    let truth = ctx.sibling(&a.out, ".truth.json")?;
    write_json(&truth, &spec.law)?;
    write_json(&ctx.sibling(&a.out, ".spec.json")?, &spec)?;
    ctx.say(format!(
        "{} measurements ({} truth, sigma {}, seed {}) -> {}",
        ds.len(),
        spec.law.form,
        spec.noise_sigma,
        spec.seed,
        out.display()
    ));
    Ok(())
}

fn cmd_predict_grid(ctx: &Ctx, a: &PredictGridArgs) -> Result<()> {
    let fit: FitResult = read_json(&a.fit)?;
    let grid: GridSpec = match &a.grid {
        Some(p) => read_json(p)?,
        None => {
            if a.points < 2 || !(a.atpp_min > 0.0 && a.atpp_min < a.atpp_max) {
                return Err(Error::Config("need --points >= 2 and 0 < --atpp-min < --atpp-max".into()));
            }
            let ratio = (a.atpp_max / a.atpp_min).ln();
            GridSpec {
                model_sizes: a.sizes.clone(),
                replay_ratios: a.ratios.clone(),
                ptpp_stages: vec![a.ptpp],
                token_points: (0..a.points)
                    .map(|k| a.atpp_min * (ratio * k as f64 / (a.points - 1) as f64).exp())
                    .collect(),
                token_scale: TokenScale::PerParameter,
            }
        }
    };
    let rows = predict_grid(&fit, &grid, a.ptpp)?;
    let out = ctx.output(&a.out)?;
    write_rows_csv(&rows, &out)?;
    ctx.say(format!("{} predictions ({} at ptpp {}) -> {}", rows.len(), fit.form, a.ptpp, out.display()));
    Ok(())
}
