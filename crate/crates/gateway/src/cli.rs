//! `prefalign` command line: one-shot `generate`, `replay` of saved
//! sessions, and `serve` for the HTTP API.
//!
//! Settings resolve as defaults < config file < environment < flags.
//! Failures print `error[<code>]: <message>` and exit 2 for bad input or
//! configuration, 1 for everything else.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use prefalign_core::pipeline::{content_digest, deserialize_session, serialize_session, SessionState};
use prefalign_core::{AppConfig, Engine, PipelineError, Strategies};
use serde::Serialize;
use serde_json::json;

use crate::server::{router, AppState};

#[derive(Debug, Parser)]
#[command(name = "prefalign", version, about = "Preference-aligned text-to-image generation")]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one round from a reference image and a prompt, writing the image,
    /// the session and a provenance record to `--out`.
    Generate(GenerateArgs),
    /// Re-render every round of a saved session and compare image digests.
    Replay(ReplayArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct EngineArgs {
    /// TOML config file with mllm/backend/sampler/service sections.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Diffusion backend strategy (the stock binary registers `toy`).
    #[arg(long)]
    pub backend: Option<String>,
    /// Chat provider strategy (`mock`, `http`, `replay`).
    #[arg(long)]
    pub mllm: Option<String>,
    #[arg(long, value_name = "URL")]
    pub mllm_endpoint: Option<String>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TuningArgs {
    /// Preference injection strength.
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: Option<f64>,
    /// Weight of the regional composite in the blend, in [0, 1].
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
    /// Classifier-free guidance scale.
    #[arg(long, allow_negative_numbers = true)]
    pub guidance: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub prompt: String,
    /// Reference image (PNG or JPEG).
    #[arg(long, value_name = "PATH")]
    pub reference: PathBuf,
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    #[command(flatten)]
    pub tuning: TuningArgs,
    #[command(flatten)]
    pub engine: EngineArgs,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// A session.json written by `generate` or the service.
    #[arg(long, value_name = "PATH")]
    pub session: PathBuf,
    #[command(flatten)]
    pub engine: EngineArgs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, value_name = "ADDR")]
    pub bind: Option<String>,
    #[arg(long, value_name = "DIR")]
    pub data_dir: Option<PathBuf>,
    /// Keep sessions and images in memory only.
    #[arg(long)]
    pub in_memory: bool,
    #[command(flatten)]
    pub tuning: TuningArgs,
    #[command(flatten)]
    pub engine: EngineArgs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: &'static str,
    pub message: String,
    pub exit: u8,
}

impl CliError {
    fn usage(code: &'static str, message: impl Into<String>) -> Self {
        Self { code, message: message.into(), exit: 2 }
    }

    fn failure(code: &'static str, message: impl Into<String>) -> Self {
        Self { code, message: message.into(), exit: 1 }
    }
}

impl From<PipelineError> for CliError {
    fn from(err: PipelineError) -> Self {
        use PipelineError as P;
        let (_, code) = crate::error::classify(&err);
        let exit = match &err {
            P::LambdaOutOfRange(_)
            | P::InvalidParameter(_)
            | P::InvalidInput(_)
            | P::InvalidRegion(_)
            | P::Configuration(_)
            | P::Backend(prefalign_core::backend::BackendError::InvalidConfig(_))
            | P::Mllm(prefalign_core::mllm::MllmError::InvalidImage(_))
            | P::Mllm(prefalign_core::mllm::MllmError::OversizeImage { .. }) => 2,
            _ => 1,
        };
        Self { code, message: err.to_string(), exit }
    }
}

/// Builds the effective configuration. `env` stands in for the process
/// environment so precedence can be tested.
pub fn resolve_config(
    engine: &EngineArgs,
    tuning: &TuningArgs,
    env: impl Fn(&str) -> Option<String>,
) -> Result<AppConfig, CliError> {
    let mut cfg = match &engine.config {
        Some(path) => AppConfig::from_file(path)?,
        None => AppConfig::default(),
    };
    cfg.apply_env(env);
    if let Some(b) = &engine.backend {
        cfg.backend.name = b.clone();
    }
    if let Some(m) = &engine.mllm {
        cfg.mllm.provider = m.clone();
    }
    if let Some(e) = &engine.mllm_endpoint {
        cfg.mllm.endpoint = Some(e.clone());
    }
    if let Some(a) = tuning.alpha {
        cfg.sampler.alpha = a;
    }
    if let Some(l) = tuning.lambda {
        cfg.sampler.lambda = l;
    }
    if let Some(g) = tuning.guidance {
        cfg.sampler.sampler.guidance_omega = g;
    }
    if let Some(s) = tuning.steps {
        cfg.sampler.sampler.steps = s;
    }
    if let Some(s) = tuning.seed {
        cfg.sampler.sampler.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn build_engine(cfg: &AppConfig) -> Result<Engine, CliError> {
    Ok(Strategies::with_builtins().build_engine(cfg)?)
}

/// Same reference, prompt and settings give the same id, so `generate`
/// output is byte-for-byte reproducible.
pub fn derived_session_id(reference: &[u8], prompt: &str, cfg: &AppConfig) -> String {
    let key = json!({
        "reference": content_digest(reference),
        "prompt": prompt,
        "config": cfg.generation(),
        "backend": cfg.backend.name,
        "mllm": cfg.mllm.provider,
    });
    format!("cli-{}", &content_digest(key.to_string().as_bytes())[..16])
}

#[derive(Debug, Serialize)]
struct EntityProvenance<'a> {
    name: &'a str,
    sub_prompt: &'a str,
    region: Option<[f64; 4]>,
    located_prompt: Option<&'a str>,
}

/// Human-oriented summary of what produced the image.
pub fn provenance(state: &SessionState, cfg: &AppConfig) -> serde_json::Value {
    let entities: Vec<EntityProvenance> = state
        .group
        .entities
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let entry = state.plan.entry_for(i);
            EntityProvenance {
                name: &e.name,
                sub_prompt: &e.sub_prompt,
                region: entry.map(|x| x.region.to_array()),
                located_prompt: entry.map(|x| x.prompt.as_str()),
            }
        })
        .collect();
    let last = state.rounds.last();
    json!({
        "session_id": state.id,
        "reference_image": state.reference_image,
        "image": last.map(|r| &r.image_ref),
        "input_digest": last.map(|r| &r.input_digest),
        "keywords": state.keywords,
        "prompts": {
            "base": state.base_prompt,
            "complex": state.group.complex_prompt,
            "background": state.group.background_prompt,
            "entities": entities,
        },
        "plan": state.plan,
        "config": state.config,
        "backend": cfg.backend.name,
        "mllm_provider": cfg.mllm.provider,
        "version": env!("CARGO_PKG_VERSION"),
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::failure("io", format!("{}: {e}", path.display())))
}

pub fn generate(args: &GenerateArgs, env: impl Fn(&str) -> Option<String>) -> Result<SessionState, CliError> {
    let cfg = resolve_config(&args.engine, &args.tuning, env)?;
    let reference = fs::read(&args.reference)
        .map_err(|e| CliError::usage("unreadable_input", format!("{}: {e}", args.reference.display())))?;
    let engine = build_engine(&cfg)?;
    let id = derived_session_id(&reference, &args.prompt, &cfg);
    let session = engine.create_session(&id, &reference, &args.prompt, cfg.generation())?;
    let (session, png) = engine.run_round(&session)?;

    fs::create_dir_all(&args.out).map_err(|e| CliError::failure("io", format!("{}: {e}", args.out.display())))?;
    write(&args.out.join("image.png"), &png)?;
    write(&args.out.join("session.json"), &serialize_session(&session))?;
    let prov = serde_json::to_vec_pretty(&provenance(&session, &cfg)).expect("provenance serializes");
    write(&args.out.join("provenance.json"), &prov)?;
    Ok(session)
}

/// Returns `(round index, recorded digest, replayed digest)` per round.
pub fn replay(args: &ReplayArgs, env: impl Fn(&str) -> Option<String>) -> Result<Vec<(usize, String, String)>, CliError> {
    let cfg = resolve_config(&args.engine, &TuningArgs::default(), env)?;
    let bytes = fs::read(&args.session)
        .map_err(|e| CliError::usage("unreadable_input", format!("{}: {e}", args.session.display())))?;
    let session = deserialize_session(&bytes)?;
    let engine = build_engine(&cfg)?;
    let mut out = Vec::new();
    for record in &session.rounds {
        let (png, _) = engine.replay_round(record)?;
        out.push((record.index, record.image_ref.clone(), content_digest(&png)));
    }
    Ok(out)
}

pub fn serve(args: &ServeArgs, env: impl Fn(&str) -> Option<String>) -> Result<(), CliError> {
    let mut cfg = resolve_config(&args.engine, &args.tuning, env)?;
    if let Some(b) = &args.bind {
        cfg.service.bind = b.clone();
    }
    if let Some(d) = &args.data_dir {
        cfg.service.data_dir = d.clone();
    }
    // engine construction may block (HTTP client setup), so do it before
    // the async runtime exists
    let engine = build_engine(&cfg)?;
    let state = if args.in_memory {
        AppState::in_memory(engine, &cfg)
    } else {
        AppState::on_disk(engine, &cfg).map_err(|e| CliError::failure("io", e.to_string()))?
    };
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::failure("runtime", e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&cfg.service.bind)
            .await
            .map_err(|e| CliError::usage("bind", format!("{}: {e}", cfg.service.bind)))?;
        log::info!("listening on {}", cfg.service.bind);
        eprintln!("prefalign listening on http://{}", cfg.service.bind);
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| CliError::failure("serve", e.to_string()))
    })
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let env = |k: &str| std::env::var(k).ok();
    match cli.command {
        Command::Generate(args) => {
            let s = generate(&args, env)?;
            let round = s.rounds.last().expect("generate runs one round");
            println!("session   {}", s.id);
            println!("image     {} (sha256 {})", args.out.join("image.png").display(), round.image_ref);
            println!("session   {}", args.out.join("session.json").display());
            println!("provenance {}", args.out.join("provenance.json").display());
            Ok(())
        }
        Command::Replay(args) => {
            let rounds = replay(&args, env)?;
            let mut mismatches = 0;
            for (index, recorded, replayed) in &rounds {
                let ok = recorded == replayed;
                mismatches += usize::from(!ok);
                println!("round {index}: {} {replayed}", if ok { "match" } else { "MISMATCH" });
            }
            if mismatches > 0 {
                return Err(CliError::failure("replay_mismatch", format!("{mismatches} round(s) differ")));
            }
            Ok(())
        }
        Command::Serve(args) => serve(&args, env),
    }
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.code, e.message);
            ExitCode::from(e.exit)
        }
    }
}
