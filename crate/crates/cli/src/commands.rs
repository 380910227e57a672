use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crt_core::design::{load_dataset, LoadOptions};
use crt_core::glm::{amce_test, ClusterUnit};
use crt_core::simulation::{
    count_grid, logistic_inflation_study, power_study, size_grid, GridPoint, InflationSettings, Method, PowerSettings,
};
use crt_core::{
    run_crt, run_screen, CoarseningConfig, ConjointDataset, CrtError, CrtResult, EngineOptions, ExperimentConfig,
    LambdaPolicy, RandomizationScheme, ResampleKind, ResamplePlan, Result, StatisticKind, StatisticSpec,
};

use crate::{AmceArgs, Cli, Cluster, Command, DataArgs, Panel, PlanArgs, Regularity, RegularityArgs, ScreenArgs, SimulateArgs, TestArgs};

const STUDIES: [&str; 5] = ["power", "power-hetero", "power-unconstrained", "power-dicrt", "inflation"];

pub fn run(cli: Cli) -> Result<()> {
    if let Some(w) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(w as usize)
            .build_global()
            .map_err(|e| CrtError::validation(format!("cannot start {w} workers: {e}")))?;
    }
    match cli.command {
        Command::Test(a) => test(a),
        Command::Regularity(a) => regularity(a),
        Command::Amce(a) => amce(a),
        Command::Screen(a) => screen(a),
        Command::Simulate(a) => simulate(a),
    }
}

struct Loaded {
    config: ExperimentConfig,
    data: ConjointDataset,
    scheme: RandomizationScheme,
}

fn load(a: &DataArgs) -> Result<Loaded> {
    let config = ExperimentConfig::load(&a.config)?;
    let schema = config.schema()?;
    let opts = LoadOptions {
        allow_ragged: a.allow_ragged,
    };
    let (data, report) = load_dataset(&a.data, &schema, &opts)?;
    if !report.dropped_ragged.is_empty() {
        log::warn!("dropped {} respondents with missing tasks", report.dropped_ragged.len());
    }
    if !report.dropped_missing_covariate.is_empty() {
        log::warn!("dropped {} respondents with missing covariates", report.dropped_missing_covariate.len());
    }
    let scheme = config.scheme()?;
    Ok(Loaded { config, data, scheme })
}

fn seed_or_new(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = rand::random::<u64>() >> 1;
        println!("seed={s} (generated)");
        s
    })
}

fn parse_lambda(s: &str) -> Result<LambdaPolicy> {
    match s {
        "cv" => Ok(LambdaPolicy::CvPerResample),
        "cv-null" => Ok(LambdaPolicy::CvOnNullDraw),
        v => v
            .parse::<f64>()
            .ok()
            .filter(|l| l.is_finite() && *l >= 0.0)
            .map(LambdaPolicy::Fixed)
            .ok_or_else(|| CrtError::validation(format!("--lambda must be cv, cv-null or a nonnegative number, got '{v}'"))),
    }
}

fn parse_kind(s: &str) -> Result<StatisticKind> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| CrtError::validation(format!("unknown statistic '{s}'")))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CrtError::validation(format!("cannot write '{}': {e}", path.display())))
}

fn write_json(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => {
            let mut w = create(p)?;
            w.write_all(text.as_bytes())?;
            w.flush()?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn finish(r: &CrtResult, plan: &PlanArgs) -> Result<()> {
    write_json(&r.to_json(true)?, plan.out.as_deref())?;
    println!("statistic={}", r.observed_statistic);
    println!("runtime={:.3}s", r.wall_time);
    println!("p_value={}", r.p_value);
    Ok(())
}

fn test(a: TestArgs) -> Result<()> {
    let l = load(&a.data)?;
    let mut spec = match &a.statistic {
        Some(s) => StatisticSpec::new(parse_kind(s)?, &[]),
        None => l.config.test.clone().unwrap_or_else(|| StatisticSpec::new(StatisticKind::HiernetMain, &[])),
    };
    if !a.target.is_empty() {
        spec.target = a.target.clone();
    }
    if let Some(i) = a.i {
        spec.options.i = i;
    }
    for pair in &a.extra_main {
        let (x, y) = pair
            .split_once(':')
            .ok_or_else(|| CrtError::validation(format!("--extra-main expects A:B, got '{pair}'")))?;
        spec.options.extra.push([x.to_string(), y.to_string()]);
    }
    if let Some(lam) = &a.plan.lambda {
        spec.options.lambda = parse_lambda(lam)?;
    }
    match (&a.coarsen, &a.group) {
        (Some(c), group) => {
            let path = Path::new(c);
            let coarsening = if path.exists() {
                CoarseningConfig::load(path)?.to_spec(&l.data.schema, group.as_deref())?
            } else {
                l.config.coarsening(c, group.as_deref())?
            };
            spec.coarsening = Some(coarsening);
            if spec.kind == StatisticKind::HiernetMain {
                spec.kind = StatisticKind::HiernetCoarsened;
            }
        }
        (None, Some(_)) => return Err(CrtError::validation("--group needs --coarsen")),
        (None, None) => {}
    }
    let kind = if spec.coarsening.is_some() {
        ResampleKind::Coarsened
    } else {
        spec.kind.resample_kind()
    };
    let plan = ResamplePlan::new(kind, a.plan.b, seed_or_new(a.plan.seed))?;
    let r = run_crt(&l.data, &l.scheme, &plan, &spec)?;
    finish(&r, &a.plan)
}

fn regularity(a: RegularityArgs) -> Result<()> {
    let l = load(&a.data)?;
    let kind = match a.which {
        Regularity::Order => StatisticKind::Order,
        Regularity::Carryover => StatisticKind::Carryover,
        Regularity::Fatigue => StatisticKind::Fatigue,
    };
    let mut spec = StatisticSpec::new(kind, &[]);
    spec.options.include_v = a.include_v;
    if let Some(lam) = &a.plan.lambda {
        spec.options.lambda = parse_lambda(lam)?;
    }
    let plan = ResamplePlan::new(kind.resample_kind(), a.plan.b, seed_or_new(a.plan.seed))?;
    let r = run_crt(&l.data, &l.scheme, &plan, &spec)?;
    finish(&r, &a.plan)
}

fn amce(a: AmceArgs) -> Result<()> {
    let l = load(&a.data)?;
    let target = l
        .data
        .schema
        .profile_index(&a.target)
        .ok_or_else(|| CrtError::validation(format!("unknown factor '{}'", a.target)))?;
    let cluster = match a.cluster {
        Cluster::Respondent => ClusterUnit::Respondent,
        Cluster::Task => ClusterUnit::Task,
    };
    let r = amce_test(&l.data, target, &[], cluster)?;
    let mut text = serde_json::to_string_pretty(&r).map_err(|e| CrtError::numerical(e.to_string()))?;
    text.push('\n');
    write_json(&text, a.out.as_deref())?;
    for e in &r.estimates {
        println!("amce[{}]={} (se {})", e.level, e.estimate, e.se);
    }
    println!("p_value={}", r.p_value);
    Ok(())
}

fn screen(a: ScreenArgs) -> Result<()> {
    let l = load(&a.data)?;
    let mut spec = StatisticSpec::new(StatisticKind::InteractionScreen, &[a.target.as_str()]);
    if let Some(lam) = &a.plan.lambda {
        spec.options.lambda = parse_lambda(lam)?;
    }
    let plan = ResamplePlan::new(ResampleKind::Main, a.plan.b, seed_or_new(a.plan.seed))?;
    let mut rows = run_screen(&l.data, &l.scheme, &plan, &spec, &a.variables, EngineOptions::default())?;
    rows.sort_by(|x, y| x.p_value_float.total_cmp(&y.p_value_float));
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    match &a.plan.out {
        Some(p) => {
            let mut f = create(p)?;
            f.write_all(&buf)?;
            f.flush()?;
        }
        None => std::io::stdout().write_all(&buf)?,
    }
    let best = rows.first().ok_or_else(|| CrtError::validation("nothing to screen"))?;
    println!("variable={}", best.variable);
    println!("p_value={}", best.p_value);
    Ok(())
}

fn grid(a: &SimulateArgs, n: usize, heterogeneous: bool) -> Vec<GridPoint> {
    let mut g = Vec::new();
    if a.panel != Panel::Count {
        g.extend(size_grid(&a.sizes, a.n_interactions, n, heterogeneous));
    }
    if a.panel != Panel::Size {
        g.extend(count_grid(&a.counts, a.count_size, n, heterogeneous));
    }
    g
}

fn simulate(a: SimulateArgs) -> Result<()> {
    if !STUDIES.contains(&a.study.as_str()) {
        return Err(CrtError::validation(format!(
            "unknown study '{}'; expected one of {}",
            a.study,
            STUDIES.join(", ")
        )));
    }
    let seed = seed_or_new(a.seed);
    std::fs::create_dir_all(&a.out_dir)?;
    let path = |suffix: &str| a.out_dir.join(format!("{}_{suffix}.csv", a.study.replace('-', "_")));

    if a.study == "inflation" {
        let settings = InflationSettings {
            num_z: a.num_z.clone(),
            n: a.n.unwrap_or(5000),
            reps: a.reps,
            master_seed: seed,
            ..Default::default()
        };
        let t = logistic_inflation_study(&settings)?;
        t.write_records(create(&path("records"))?)?;
        t.write_summary(create(&path("summary"))?)?;
        t.write_histogram(create(&path("histogram"))?)?;
        for s in &t.summary {
            println!("num_z={} rejection={:.3} (se {:.3}, {} failed fits)", s.num_z, s.rejection, s.se, s.failed_fits);
        }
    } else {
        let n = a.n.unwrap_or(1000);
        let mut settings = PowerSettings {
            reps: a.reps,
            b: a.b,
            master_seed: seed,
            ..Default::default()
        };
        if let Some(lam) = &a.lambda {
            settings.lambda = parse_lambda(lam)?;
        }
        let (points, methods) = match a.study.as_str() {
            "power" => (grid(&a, n, false), vec![Method::CrtHiernet, Method::Amce]),
            "power-hetero" => {
                let mut g = grid(&a, n, false);
                g.extend(grid(&a, n, true));
                (g, vec![Method::CrtHiernet, Method::Amce])
            }
            "power-unconstrained" => (
                grid(&a, n, false),
                vec![Method::CrtHiernet, Method::CrtHiernetUnconstrained, Method::Amce],
            ),
            _ => (grid(&a, n, false), vec![Method::CrtHiernet, Method::CrtDicrt, Method::Amce]),
        };
        let t = power_study(&points, &methods, &settings)?;
        t.write_records(create(&path("records"))?)?;
        t.write_summary(create(&path("summary"))?)?;
        for s in &t.summary {
            println!("{} {} power={:.3} (se {:.3})", s.grid_id, s.method.name(), s.power, s.se);
        }
    }
    println!("wrote {} and {}", path("records").display(), path("summary").display());
    Ok(())
}
