use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use storymoral_cli::config::stub_config;
use storymoral_cli::pipeline::{self, Pipeline, Stage};
use storymoral_cli::{server, write_demo_corpus, RunConfig};
use storymoral_core::survey::{exclusion_report, preference_rates, SurveyPlan, SurveyService};
use storymoral_core::{Clock, PromptVariant};

#[derive(Parser)]
#[command(name = "storymoral", version, about = "Cross-lingual story-moral pipeline and survey service")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, short, global = true, default_value = "storymoral.toml")]
    config: PathBuf,
    /// Print the provider calls the command would make and exit.
    #[arg(long, global = true)]
    dry_run: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a seeded demo corpus and an all-stub configuration.
    Init {
        #[arg(long, default_value = ".")]
        dir: PathBuf,
        #[arg(long, default_value_t = 14)]
        stories: usize,
        #[arg(long, default_value_t = 14)]
        languages: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Run a set of stages (comma separated, or `all`).
    Pipeline {
        #[arg(long, default_value = "all")]
        stages: String,
    },
    /// Translate every original passage into every language.
    Grid,
    /// Generate one moral per passage and model.
    Generate,
    /// Grammar and story-reference cleaning.
    Clean,
    /// Contamination scores and the review queue.
    Screen,
    /// Apply a filled-in review queue.
    ReviewApply {
        #[arg(long)]
        decisions: PathBuf,
        /// Replacement morals, JSONL.
        #[arg(long)]
        replacements: Option<PathBuf>,
    },
    /// Embed every moral.
    Embed {
        /// Restrict to these embedders (repeatable).
        #[arg(long)]
        embedder: Vec<String>,
    },
    /// Run one analysis.
    Run {
        analysis: Analysis,
        #[arg(long)]
        variant: Option<VariantArg>,
        #[arg(long)]
        include_discarded: bool,
        /// Comma-separated embedder ids.
        #[arg(long, value_delimiter = ',')]
        embedders: Option<Vec<String>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Value annotation and agreement statistics.
    Values {
        #[command(subcommand)]
        cmd: ValuesCmd,
    },
    /// Preference survey.
    Survey {
        #[command(subcommand)]
        cmd: SurveyCmd,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Analysis {
    H1,
    H2,
    H3,
    H4,
    Robustness,
    Keywords,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    English,
    InLanguage,
}

#[derive(Subcommand)]
enum ValuesCmd {
    /// Label every active moral with both annotators (runs the whole stage).
    Annotate,
    /// Print the frequency tables.
    Tables,
    /// Print agreement and rank correlations.
    Agreement,
    /// Print the per-value example morals.
    Examples,
}

#[derive(Subcommand)]
enum SurveyCmd {
    /// Build the session plan.
    Plan,
    /// Serve the plan over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Append-only response log; replayed on start.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Required in the x-admin-token header of admin routes when set.
        #[arg(long, env = "STORYMORAL_ADMIN_TOKEN")]
        admin_token: Option<String>,
    },
    /// Write the response export (CSV).
    Export {
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Preference rates and the exclusion report.
    Rates {
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Cmd::Init {
        dir,
        stories,
        languages,
        seed,
    } = &cli.cmd
    {
        return init(dir, *stories, *languages, *seed);
    }
    let mut cfg = RunConfig::load(&cli.config)?;
    let stages: BTreeSet<Stage> = match &cli.cmd {
        Cmd::Init { .. } => unreachable!(),
        Cmd::Pipeline { stages } => pipeline::parse_stages(stages)?,
        Cmd::Grid => [Stage::Grid].into(),
        Cmd::Generate => [Stage::Generate].into(),
        Cmd::Clean => [Stage::Clean].into(),
        Cmd::Screen => [Stage::Screen].into(),
        Cmd::Embed { embedder } => {
            if !embedder.is_empty() {
                cfg.embedders = embedder.clone();
            }
            [Stage::Embed].into()
        }
        Cmd::Run {
            analysis,
            variant,
            include_discarded,
            embedders,
            out,
        } => {
            if let Some(v) = variant {
                cfg.prompt_variant = match v {
                    VariantArg::English => PromptVariant::SocioDemographicEnglish,
                    VariantArg::InLanguage => PromptVariant::InLanguage,
                };
            }
            cfg.hypotheses.include_discarded |= include_discarded;
            if let Some(e) = embedders {
                cfg.embedders = e.clone();
            }
            if let Some(o) = out {
                cfg.out = o.clone();
            }
            cfg.validate()?;
            [match analysis {
                Analysis::H1 => Stage::H1,
                Analysis::H2 => Stage::H2,
                Analysis::H3 => Stage::H3,
                Analysis::H4 => Stage::H4,
                Analysis::Robustness => Stage::Robustness,
                Analysis::Keywords => Stage::Keywords,
            }]
            .into()
        }
        Cmd::Values { cmd: ValuesCmd::Annotate } => [Stage::Values].into(),
        Cmd::Survey { cmd: SurveyCmd::Plan } => [Stage::Survey].into(),
        Cmd::ReviewApply { .. } | Cmd::Values { .. } | Cmd::Survey { .. } => BTreeSet::new(),
    };
    let p = Pipeline::new(cfg)?;
    if cli.dry_run {
        let mut out = std::io::stdout().lock();
        writeln!(out, "stage\tprovider\tcalls\texact")?;
        for c in p.plan_calls(&stages)? {
            writeln!(out, "{}\t{}\t{}\t{}", c.stage, c.provider, c.calls, c.exact)?;
        }
        return Ok(());
    }
    if !stages.is_empty() {
        let m = p.run(&stages)?;
        for s in &m.stages {
            println!("{}: {} output file(s)", s.stage, s.outputs.len());
        }
        println!("manifest: {}", p.out().join(storymoral_cli::manifest::MANIFEST_FILE).display());
        return Ok(());
    }
    match cli.cmd {
        Cmd::ReviewApply {
            decisions,
            replacements,
        } => {
            let r = p.review_apply(&decisions, replacements.as_deref())?;
            println!(
                "discarded {} moral(s), added {} replacement(s); log at {}",
                r.discarded,
                r.replacements,
                r.log.display()
            );
        }
        Cmd::Values { cmd } => {
            let dir = p.out().join(pipeline::VALUES_DIR);
            let (a, b) = p.cfg.annotator_ids()?;
            let files: Vec<PathBuf> = match cmd {
                ValuesCmd::Tables => vec![dir.join(format!("table_{a}.csv")), dir.join(format!("table_{b}.csv"))],
                ValuesCmd::Agreement => vec![dir.join("agreement.json")],
                ValuesCmd::Examples => vec![dir.join("examples.json")],
                ValuesCmd::Annotate => unreachable!(),
            };
            for f in files {
                let s = fs::read_to_string(&f)
                    .with_context(|| format!("{} missing; run `values annotate` first", f.display()))?;
                println!("# {}\n{s}", f.display());
            }
        }
        Cmd::Survey { cmd } => survey(&p, cmd)?,
        _ => unreachable!(),
    }
    Ok(())
}

fn init(dir: &Path, stories: usize, languages: usize, seed: u64) -> Result<()> {
    let corpus = dir.join("corpus");
    write_demo_corpus(&corpus, stories, languages, seed)?;
    let cfg = stub_config(PathBuf::from("corpus"), PathBuf::from("out"), seed);
    let path = dir.join("storymoral.toml");
    if path.exists() {
        bail!("{} exists; not overwriting", path.display());
    }
    fs::write(&path, cfg.to_toml()?)?;
    println!("wrote {} and {}", corpus.display(), path.display());
    Ok(())
}

fn service(p: &Pipeline, log: Option<PathBuf>) -> Result<SurveyService> {
    let plan_path = p.out().join(pipeline::PLAN_FILE);
    let plan: SurveyPlan = serde_json::from_slice(
        &fs::read(&plan_path).with_context(|| format!("{} missing; run `survey plan` first", plan_path.display()))?,
    )?;
    let corpus = p.corpus()?;
    let log = log.unwrap_or_else(|| p.out().join(pipeline::SURVEY_DIR).join("responses.jsonl"));
    let clock = match &p.cfg.timestamp {
        Some(t) => Clock::Fixed(t.clone()),
        None => Clock::System,
    };
    Ok(SurveyService::new(plan, &corpus).with_clock(clock).with_log(log)?)
}

fn survey(p: &Pipeline, cmd: SurveyCmd) -> Result<()> {
    match cmd {
        SurveyCmd::Plan => unreachable!(),
        SurveyCmd::Serve {
            addr,
            log,
            admin_token,
        } => {
            let svc = Arc::new(service(p, log)?);
            tokio::runtime::Runtime::new()?.block_on(server::serve(addr, svc, admin_token))?;
        }
        SurveyCmd::Export { log, out } => {
            let svc = service(p, log)?;
            match out {
                Some(path) => {
                    let f = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                    svc.write_export(f)?;
                }
                None => svc.write_export(std::io::stdout().lock())?,
            }
        }
        SurveyCmd::Rates { log, out } => {
            let svc = service(p, log)?;
            let rates = preference_rates(&svc.export_rows())?;
            let report = serde_json::json!({
                "preference": rates,
                "exclusions": exclusion_report(&svc.sessions()),
            });
            let text = serde_json::to_string_pretty(&report)?;
            match out {
                Some(path) => fs::write(&path, text + "\n")?,
                None => println!("{text}"),
            }
        }
    }
    Ok(())
}
