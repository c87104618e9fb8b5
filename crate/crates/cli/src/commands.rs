//! Each command builds a machine-readable CSV and a human-readable rendering
//! of the same data. Neither depends on anything but the config and seed.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use splitcvl::nnprofile::ModelProfile;
use splitcvl::privmetrics::{build_conf_table, fixture, load_corpus, CutCorpus};
use splitcvl::retrieval::{average_grids, evaluate_grid, grid_to_csv, synth_gallery, SynthConfig};
use splitcvl::rlopt::{train, Env};
use splitcvl::trico::Scenario;

use crate::config::LoadedConfig;
use crate::error::CliError;

pub struct Report {
    pub csv: String,
    pub human: String,
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub jobs: usize,
}

/// Fixed-precision rendering for terminal tables only; CSV output keeps the
/// shortest round-trip form.
fn short(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-3..1e6).contains(&a) {
        format!("{x:.6}")
    } else {
        format!("{x:.4e}")
    }
}

fn render(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:>w$}"))
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(headers.to_vec(), &mut out);
    line(widths.iter().map(|w| &"----------------------------------------"[..*w.min(&40)]).collect(), &mut out);
    for r in rows {
        line(r.iter().map(String::as_str).collect(), &mut out);
    }
    out
}

pub fn profile(cfg: &LoadedConfig) -> Result<Report, CliError> {
    let p = cfg.profile()?;
    Ok(Report {
        csv: profile_csv(&p),
        human: render(
            &["cut", "device_flops", "intermediate_bytes"],
            &p.cuts()
                .map(|c| {
                    vec![
                        p.cut_name(c).to_string(),
                        p.device_flops(c).to_string(),
                        p.intermediate_bytes(c).to_string(),
                    ]
                })
                .collect::<Vec<_>>(),
        ),
    })
}

pub const PROFILE_REPORT_HEADER: &str = "cut_name,device_flops,intermediate_bytes";

fn profile_csv(p: &ModelProfile) -> String {
    let mut out = format!("{PROFILE_REPORT_HEADER}\n");
    for c in p.cuts() {
        let _ = writeln!(out, "{},{},{}", p.cut_name(c), p.device_flops(c), p.intermediate_bytes(c));
    }
    out
}

pub fn cost(cfg: &LoadedConfig) -> Result<Report, CliError> {
    let sc = cfg.scenario()?;
    let channels = sc.expected_channels();
    let csv = sc.cost_table_csv(&channels)?;
    let tables = sc.tables(&channels)?;
    let mut rows = Vec::new();
    for (dev, table) in sc.devices().iter().zip(&tables) {
        for b in table {
            rows.push(vec![
                dev.id().to_string(),
                sc.profile().cut_name(b.cut).to_string(),
                short(b.raw.comm_latency_s),
                short(b.raw.comm_energy_j),
                short(b.raw.comp_energy_j),
                short(b.raw.conf_cost),
                short(b.effect),
            ]);
        }
    }
    let human = render(
        &["device", "cut", "latency_s", "comm_j", "comp_j", "conf", "effect"],
        &rows,
    );
    Ok(Report { csv, human })
}

pub const ORACLE_HEADER: &str = "device,cut_index,cut_name,effect,evaluated";

pub fn oracle(cfg: &LoadedConfig) -> Result<Report, CliError> {
    let sc = cfg.scenario()?;
    let res = sc.brute_force_optimal(&sc.expected_channels())?;
    let mut csv = format!("{ORACLE_HEADER}\n");
    let mut rows = Vec::new();
    for (dev, cut) in sc.devices().iter().zip(&res.decision.0) {
        let name = sc.profile().cut_name(*cut);
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            dev.id(),
            cut.candidate_index(),
            name,
            res.effect,
            res.evaluated
        );
        rows.push(vec![dev.id().to_string(), name.to_string()]);
    }
    let mut human = render(&["device", "cut"], &rows);
    let _ = writeln!(human, "effect: {}", res.effect);
    let _ = writeln!(human, "decisions evaluated: {}", res.evaluated);
    Ok(Report { csv, human })
}

fn decision_names(sc: &Scenario, env: &Env, action: usize) -> String {
    sc.devices()
        .iter()
        .zip(&env.decode_action(action).0)
        .map(|(d, c)| format!("{}={}", d.id(), sc.profile().cut_name(*c)))
        .collect::<Vec<_>>()
        .join(" ")
}

fn relative_gap(value: f64, oracle: f64) -> f64 {
    let diff = value - oracle;
    if diff == 0.0 {
        0.0
    } else {
        diff / oracle.abs()
    }
}

pub fn optimize(cfg: &LoadedConfig, opts: RunOptions) -> Result<Report, CliError> {
    let o = &cfg.config.optimizer;
    let agent = o.agent()?;
    let hyper = o.hyper();
    let seed = opts.seed.unwrap_or(o.seed);
    let sc = cfg.scenario()?;
    let env = Env::new(sc.clone(), o.env)?;
    let out = train(agent, &env, o.steps, &hyper, seed)?;
    let oracle = sc.brute_force_optimal(&sc.expected_channels())?;
    let greedy = env.greedy_effect(&out.policy)?;
    let action = out.policy.action(env.state_id(&env.mean_state()));
    let mut human = String::new();
    let _ = writeln!(human, "agent: {}", agent.as_str());
    let _ = writeln!(human, "seed: {seed}");
    let _ = writeln!(human, "steps: {}", o.steps);
    if o.steps == 0 {
        let _ = writeln!(human, "policy: untrained");
    }
    let _ = writeln!(human, "decision: {}", decision_names(&sc, &env, action));
    let _ = writeln!(human, "greedy_effect: {greedy}");
    let _ = writeln!(human, "oracle_effect: {}", oracle.effect);
    let _ = writeln!(human, "gap: {}", relative_gap(greedy, oracle.effect));
    match out.trace.final_moving_avg() {
        Some(m) => {
            let _ = writeln!(human, "final_moving_avg: {m}");
            let _ = writeln!(human, "moving_avg_gap: {}", relative_gap(m, oracle.effect));
        }
        None => {
            let _ = writeln!(human, "final_moving_avg: none");
        }
    }
    Ok(Report {
        csv: out.trace.to_csv(),
        human,
    })
}

pub fn retrieval_sim(cfg: &LoadedConfig, opts: RunOptions) -> Result<Report, CliError> {
    let r = &cfg.config.retrieval;
    let fusion = r.fusion()?;
    if r.seeds == 0 {
        return Err(CliError::Config("retrieval.seeds must be >= 1".into()));
    }
    if r.max_uav == 0 || r.max_ground == 0 || r.max_uav > r.images_per_view || r.max_ground > r.images_per_view {
        return Err(CliError::Config(
            "retrieval: need 1 <= max_uav, max_ground <= images_per_view".into(),
        ));
    }
    let base = opts.seed.unwrap_or(r.seed);
    let run = |s: u64| {
        let data = synth_gallery(&SynthConfig {
            locations: r.locations,
            dim: r.dim,
            noise: r.view_noise(),
            images_per_view: r.images_per_view,
            seed: s,
        })?;
        evaluate_grid(&data.gallery, &data.queries, r.max_uav, r.max_ground, fusion)
    };
    let seeds: Vec<u64> = (0..r.seeds as u64).map(|i| base.wrapping_add(i)).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    // collect keeps seed order, so the average is the same for any job count
    let grids = pool.install(|| seeds.par_iter().map(|&s| run(s)).collect::<Result<Vec<_>, _>>())?;
    let cells = average_grids(&grids);
    let rows: Vec<Vec<String>> = cells
        .iter()
        .map(|c| {
            vec![
                c.ground.to_string(),
                c.uav.to_string(),
                format!("{:.2}", 100.0 * c.recall_1),
                format!("{:.2}", 100.0 * c.recall_5),
                format!("{:.2}", 100.0 * c.recall_10),
                format!("{:.2}", 100.0 * c.recall_top1pct),
                format!("{:.2}", 100.0 * c.ap),
            ]
        })
        .collect();
    Ok(Report {
        csv: grid_to_csv(&cells),
        human: render(&["ground", "uav", "R@1%", "R@5%", "R@10%", "R@top1%", "AP%"], &rows),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixtureKind {
    Attack,
    Identity,
}

pub fn privacy(
    cfg: &LoadedConfig,
    corpus_dir: Option<&Path>,
    fixture_kind: Option<FixtureKind>,
    opts: RunOptions,
) -> Result<Report, CliError> {
    let p = &cfg.config.privacy;
    let ssim_opts = p.ssim_options()?;
    let corpus: Vec<CutCorpus> = match (corpus_dir, fixture_kind) {
        (Some(_), Some(_)) => {
            return Err(CliError::Config("give either a corpus directory or --fixture, not both".into()))
        }
        (Some(dir), None) => load_corpus(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?,
        (None, Some(kind)) => {
            let seed = opts.seed.unwrap_or(0);
            match kind {
                FixtureKind::Attack => fixture::attack_corpus(seed, p.fixture_size, p.fixture_triples),
                FixtureKind::Identity => fixture::identity_corpus(seed, p.fixture_size, p.fixture_triples),
            }
        }
        (None, None) => match &cfg.config.confidentiality.corpus {
            Some(dir) => {
                let dir = if dir.is_absolute() { dir.clone() } else { cfg.base_dir.join(dir) };
                load_corpus(&dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?
            }
            None => {
                return Err(CliError::Config(
                    "privacy: no corpus given (pass a directory, --fixture, or set confidentiality.corpus)".into(),
                ))
            }
        },
    };
    let table = build_conf_table(&corpus, p.histogram_epsilon, &ssim_opts)?;
    let opt = |x: Option<f64>| x.map(short).unwrap_or_else(|| "-".into());
    let rows: Vec<Vec<String>> = table
        .entries()
        .iter()
        .map(|e| {
            vec![
                e.name.clone(),
                short(e.kl_open),
                short(e.kl_closed),
                opt(e.ssim_open),
                opt(e.ssim_closed),
            ]
        })
        .collect();
    Ok(Report {
        csv: table.to_csv(),
        human: render(&["cut", "kl_open", "kl_closed", "ssim_open", "ssim_closed"], &rows),
    })
}
