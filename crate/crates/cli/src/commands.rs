use std::collections::BTreeMap;
use std::path::Path;

use log::{info, warn};
use serde::Serialize;
use walkfield::ident::verify_unique;
use walkfield::infer::{
    compute_dic, fit_gaussian_chains, fit_probit_genetics_chains, split_half_diagnostic, DICResult,
    GaussianModel, GeneticsModel, PosteriorSamples, SamplerMeta,
};
use walkfield::io::{write_field_csv, write_genotypes};
use walkfield::popsim::ode_on_grid;
use walkfield::{
    check_identifiable, check_irreducible, convergence_gap, simulate_population, Classification,
    ConvergenceConfig, Error, IntrinsicField, PopulationSimConfig, Result, RunConfig,
};

use crate::manifest::Run;
use crate::setup::{self, FitProblem, DEMOGRAPHY_KEYS, FIT_KEYS, GRAPH_KEYS};
use crate::{Cli, Command};

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Build => build(cli),
        Command::CheckIdent => check_ident(cli),
        Command::SimulateField => simulate_field(cli),
        Command::SimulatePopulation => simulate_pop(cli),
        Command::Convergence => convergence(cli),
        Command::Fit => fit(cli),
        Command::Dic { fits } => dic(cli, fits),
        Command::Diagnose { fits } => diagnose(cli, fits),
    }
}

fn start(cli: &Cli, name: &'static str, groups: &[&[&'static str]]) -> Result<(Run, RunConfig)> {
    let mut run = Run::new(name, &cli.out)?;
    let mut cfg = setup::load_config(cli.config.as_deref(), &setup::keys(groups), &mut run)?;
    if let Some(s) = cli.seed {
        cfg.set("seed", s.to_string());
    }
    Ok((run, cfg))
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out.into_bytes()
}

fn write_node_index(run: &mut Run, loaded: &walkfield::LoadedGraph) -> Result<()> {
    let rows = loaded
        .graph
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, n)| vec![i.to_string(), n.label.clone()]);
    run.write("node_index.csv", &csv_bytes(&["index", "node_id"], rows))
}

fn build(cli: &Cli) -> Result<()> {
    let (mut run, cfg) = start(cli, "build", &[GRAPH_KEYS])?;
    let loaded = setup::load_graph(&cfg, &mut run)?;
    let q = setup::generator(&cfg, &loaded)?;
    let labels = loaded.graph.nodes();
    let rows = q
        .rates()
        .iter()
        .map(|&(i, j, a)| vec![labels[i].label.clone(), labels[j].label.clone(), format!("{a}")]);
    run.write("generator.csv", &csv_bytes(&["from", "to", "rate"], rows))?;
    write_node_index(&mut run, &loaded)?;
    #[derive(Serialize)]
    struct Summary {
        nodes: usize,
        edges: usize,
        nonzero_rates: usize,
        irreducible: bool,
        symmetric: bool,
    }
    let irreducible = check_irreducible(&q);
    if !irreducible {
        warn!("generator is reducible; field and inference commands will fail");
    }
    run.write_json(
        "graph.json",
        &Summary {
            nodes: loaded.graph.node_count(),
            edges: loaded.graph.edges().len(),
            nonzero_rates: q.rates().len(),
            irreducible,
            symmetric: loaded.graph.is_symmetric(),
        },
    )?;
    info!("built generator: {} nodes, {} rates", q.dim(), q.rates().len());
    run.finish(&cfg)
}

fn check_ident(cli: &Cli) -> Result<()> {
    let (mut run, cfg) = start(cli, "check-ident", &[GRAPH_KEYS, &["trials"]])?;
    let loaded = setup::load_graph(&cfg, &mut run)?;
    let q = setup::generator(&cfg, &loaded)?;
    let report = check_identifiable(&q);
    let trials: usize = cfg.parsed_or("trials", 0)?;
    let verified = if trials > 0 && report.classification == Classification::IdentifiableByTheorem {
        Some(verify_unique(&q, trials, setup::seed(&cfg, &mut run)?)?)
    } else {
        None
    };
    #[derive(Serialize)]
    struct Out<'a> {
        #[serde(flatten)]
        report: &'a walkfield::IdentifiabilityReport,
        search_trials: usize,
        no_confounder_found: Option<bool>,
    }
    info!("classification: {:?}", report.classification);
    run.write_json(
        "ident.json",
        &Out {
            report: &report,
            search_trials: trials,
            no_confounder_found: verified,
        },
    )?;
    write_node_index(&mut run, &loaded)?;
    run.finish(&cfg)
}

fn simulate_field(cli: &Cli) -> Result<()> {
    let (mut run, cfg) = start(cli, "simulate-field", &[GRAPH_KEYS, &["sigma", "realizations"]])?;
    let loaded = setup::load_graph(&cfg, &mut run)?;
    let seed = setup::seed(&cfg, &mut run)?;
    let field = IntrinsicField::new(setup::generator(&cfg, &loaded)?, cfg.parsed_or("sigma", 1.0)?)?;
    let count: usize = cfg.parsed_or("realizations", 1)?;
    let mut rng = walkfield::rng::from_seed(seed);
    for k in 0..count {
        let pi = field.sample_with(&mut rng)?;
        let mut buf = Vec::new();
        write_field_csv(&loaded.graph, &pi, &mut buf)?;
        let name = if count == 1 { "field.csv".to_string() } else { format!("field_{k}.csv") };
        run.write(&name, &buf)?;
    }
    write_node_index(&mut run, &loaded)?;
    run.finish(&cfg)
}

fn initial_state(cfg: &RunConfig, m: usize) -> Result<Vec<f64>> {
    setup::per_node(cfg, "z0", m, 1.0)
}

fn simulate_pop(cli: &Cli) -> Result<()> {
    let (mut run, cfg) = start(cli, "simulate-population", &[GRAPH_KEYS, DEMOGRAPHY_KEYS, &["scale", "max_events"]])?;
    let loaded = setup::load_graph(&cfg, &mut run)?;
    let seed = setup::seed(&cfg, &mut run)?;
    let q = setup::generator(&cfg, &loaded)?;
    let m = q.dim();
    let demo = setup::demography(&cfg, m)?;
    let z0 = initial_state(&cfg, m)?;
    let scale: u64 = cfg.require_parsed("scale")?;
    let t_end: f64 = cfg.require_parsed("t_end")?;
    let mut sim = PopulationSimConfig::new(scale, t_end, seed, cfg.parsed_or("snapshot_every", t_end / 100.0)?);
    if let Some(cap) = cfg.parsed("max_events")? {
        sim.max_events = cap;
    }
    let n0: Vec<u64> = z0.iter().map(|z| (scale as f64 * z).round().max(0.0) as u64).collect();
    let path = match simulate_population(&q, &demo, &n0, &sim) {
        Ok(p) => p,
        Err(Error::EventCapExceeded { cap, partial }) => {
            let mut buf = Vec::new();
            partial.write_csv(&mut buf)?;
            run.write("trajectory_partial.csv", &buf)?;
            return Err(Error::EventCapExceeded { cap, partial });
        }
        Err(e) => return Err(e),
    };
    let mut buf = Vec::new();
    path.write_csv(&mut buf)?;
    run.write("trajectory.csv", &buf)?;
    let dt = match cfg.parsed("dt")? {
        Some(dt) => dt,
        None => walkfield::popsim::default_ode_step(&q),
    };
    let ode = ode_on_grid(&q, &demo, &z0, &path.times, dt)?;
    let mut buf = Vec::new();
    ode.write_csv(&mut buf)?;
    run.write("ode.csv", &buf)?;
    info!("{} events over {} snapshots", path.event_count, path.len());
    write_node_index(&mut run, &loaded)?;
    run.finish(&cfg)
}

fn convergence(cli: &Cli) -> Result<()> {
    let (mut run, cfg) = start(cli, "convergence", &[GRAPH_KEYS, DEMOGRAPHY_KEYS, &["scales", "replicates"]])?;
    let loaded = setup::load_graph(&cfg, &mut run)?;
    let seed = setup::seed(&cfg, &mut run)?;
    let q = setup::generator(&cfg, &loaded)?;
    let m = q.dim();
    let demo = setup::demography(&cfg, m)?;
    let z0 = initial_state(&cfg, m)?;
    let t_end: f64 = cfg.require_parsed("t_end")?;
    let scales: Vec<u64> = cfg
        .list_f64("scales")?
        .unwrap_or_else(|| vec![100.0, 1000.0, 10000.0])
        .iter()
        .map(|&s| s as u64)
        .collect();
    let conv = ConvergenceConfig {
        t_end,
        scales,
        replicates: cfg.parsed_or("replicates", 20)?,
        seed,
        snapshot_every: cfg.parsed_or("snapshot_every", t_end / 100.0)?,
        dt: cfg.parsed("dt")?,
    };
    let rows = convergence_gap(&q, &demo, &z0, &conv)?;
    let table = rows.iter().flat_map(|r| {
        r.gaps
            .iter()
            .enumerate()
            .map(move |(k, g)| vec![r.scale.to_string(), k.to_string(), format!("{g}")])
    });
    run.write("convergence_gaps.csv", &csv_bytes(&["scale", "replicate", "sup_gap"], table))?;
    let medians = rows.iter().map(|r| vec![r.scale.to_string(), format!("{}", r.median_gap)]);
    run.write("convergence.csv", &csv_bytes(&["scale", "median_gap"], medians))?;
    for r in &rows {
        info!("N = {}: median gap {:.5}", r.scale, r.median_gap);
    }
    run.finish(&cfg)
}

#[derive(Serialize)]
struct FitSummary<'a> {
    model: &'a str,
    chains: usize,
    retained_draws: usize,
    meta: Vec<&'a SamplerMeta>,
    parameters: Vec<walkfield::infer::ParamSummary>,
}

fn fit(cli: &Cli) -> Result<()> {
    let (mut run, mut cfg) = start(cli, "fit", &[GRAPH_KEYS, FIT_KEYS])?;
    let seed = setup::seed(&cfg, &mut run)?;
    let sampler = setup::sampler_config(&cfg, seed)?;
    let chains: usize = cfg.parsed_or("chains", 1)?;
    if chains == 0 {
        return Err(Error::Config("chains must be at least 1".into()));
    }
    let problem = setup::fit_problem(&cfg, &mut run)?;
    let runs = match &problem {
        FitProblem::Gaussian(spec) => {
            if chains == 1 {
                vec![walkfield::fit_gaussian(spec, &sampler)?]
            } else {
                fit_gaussian_chains(spec, &sampler, chains)?
            }
        }
        FitProblem::Genetics { spec, truth } => {
            if let Some(t) = truth {
                let mut buf = Vec::new();
                write_genotypes(&spec.graph, &spec.observations, &mut buf)?;
                run.write("genotypes.csv", &buf)?;
                run.write_json("truth.json", t)?;
            }
            if chains == 1 {
                vec![walkfield::fit_probit_genetics(spec, &sampler)?]
            } else {
                fit_probit_genetics_chains(spec, &sampler, chains)?
            }
        }
    };
    let metas: Vec<SamplerMeta> = runs.iter().map(|r| r.meta.clone()).collect();
    let pooled = PosteriorSamples::concat(runs)?;
    let mut buf = Vec::new();
    pooled.write_csv(&mut buf)?;
    run.write("samples.csv", &buf)?;
    run.write_json(
        "summary.json",
        &FitSummary {
            model: &pooled.meta.model,
            chains,
            retained_draws: pooled.len(),
            meta: metas.iter().collect(),
            parameters: pooled.summaries(),
        },
    )?;
    for key in ["nodes", "edges", "genotypes"] {
        if let Some(p) = cfg.get(key).filter(|p| *p != "simulate").map(setup::resolve_path) {
            cfg.set(key, p.display().to_string());
        }
    }
    let text: String = cfg.entries().iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    run.write("fit.cfg", text.as_bytes())?;
    info!("{} retained draws written", pooled.len());
    run.finish(&cfg)
}

/// Samples and the rebuilt model of a previous fit.
fn reload_fit(dir: &Path, run: &mut Run) -> Result<(RunConfig, PosteriorSamples, FitProblem)> {
    let cfg_bytes = run.read_input(&dir.join("fit.cfg"))?;
    let text = String::from_utf8(cfg_bytes).map_err(|_| Error::Config("fit.cfg is not UTF-8".into()))?;
    let cfg = RunConfig::parse(&text, &setup::keys(&[GRAPH_KEYS, FIT_KEYS]))?;
    let samples_bytes = run.read_input(&dir.join("samples.csv"))?;
    let meta = SamplerMeta {
        model: cfg.require("model")?.to_string(),
        seed: cfg.seed()?,
        iterations: cfg.require_parsed("iterations")?,
        burn_in: cfg.parsed_or("burn_in", 0)?,
        thin: cfg.parsed_or("thin", 1)?,
        acceptance: BTreeMap::new(),
        proposal_scale: BTreeMap::new(),
    };
    let samples = PosteriorSamples::read_csv(&samples_bytes[..], meta)?;
    let problem = setup::fit_problem(&cfg, run)?;
    Ok((cfg, samples, problem))
}

fn dic(cli: &Cli, fits: &[std::path::PathBuf]) -> Result<()> {
    let mut run = Run::new("dic", &cli.out)?;
    #[derive(Serialize)]
    struct Row {
        fit: String,
        model: String,
        #[serde(flatten)]
        dic: DICResult,
    }
    let mut rows = Vec::new();
    for dir in fits {
        let (cfg, samples, problem) = reload_fit(dir, &mut run)?;
        let dic = match &problem {
            FitProblem::Gaussian(spec) => compute_dic(&samples, &GaussianModel::new(spec)?)?,
            FitProblem::Genetics { spec, .. } => compute_dic(&samples, &GeneticsModel::new(spec)?)?,
        };
        info!("{}: DIC {:.2} (pD {:.2})", dir.display(), dic.dic, dic.p_d);
        rows.push(Row {
            fit: dir.display().to_string(),
            model: cfg.require("model")?.to_string(),
            dic,
        });
    }
    let table = rows.iter().map(|r| {
        vec![
            r.model.clone(),
            format!("{}", r.dic.dbar),
            format!("{}", r.dic.d_at_mean),
            format!("{}", r.dic.p_d),
            format!("{}", r.dic.dic),
        ]
    });
    run.write("dic.csv", &csv_bytes(&["model", "dbar", "d_at_mean", "p_d", "dic"], table))?;
    run.write_json("dic.json", &rows)?;
    run.finish(&RunConfig::default())
}

fn diagnose(cli: &Cli, fits: &[std::path::PathBuf]) -> Result<()> {
    let mut run = Run::new("diagnose", &cli.out)?;
    let mut reports = Vec::new();
    let mut table = Vec::new();
    for dir in fits {
        let (cfg, samples, _) = reload_fit(dir, &mut run)?;
        let report = split_half_diagnostic(&samples)?;
        let flagged = report.flagged().len();
        if flagged > 0 {
            warn!("{}: {flagged} parameters differ between chain halves", dir.display());
        }
        let model = cfg.require("model")?.to_string();
        for r in &report.rows {
            table.push(vec![
                model.clone(),
                r.name.clone(),
                format!("{}", r.mean_first),
                format!("{}", r.mean_second),
                format!("{}", r.q025_first),
                format!("{}", r.q025_second),
                format!("{}", r.q975_first),
                format!("{}", r.q975_second),
                format!("{}", r.standardized_gap),
                r.flagged.to_string(),
            ]);
        }
        reports.push(serde_json::json!({
            "fit": dir.display().to_string(),
            "model": model,
            "flagged": report.flagged(),
            "rows": report.rows,
        }));
    }
    let header = [
        "model", "parameter", "mean_first", "mean_second", "q025_first", "q025_second", "q975_first",
        "q975_second", "standardized_gap", "flagged",
    ];
    run.write("split_half.csv", &csv_bytes(&header, table))?;
    run.write_json("split_half.json", &reports)?;
    run.finish(&RunConfig::default())
}
