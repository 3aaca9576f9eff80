use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::Serialize;

use semret_core::anim::io::{
    animation_to_json, from_json_str, load_animation, load_character, load_key_vertices, read_text,
    save_character, save_key_vertices, write_json, AnimationFile, CharacterFile, MappingFile,
};
use semret_core::anim::{skinned_normals, skinning_transforms, Character};
use semret_core::correspondence::{transfer_key_vertices, TransferConfig};
use semret_core::descriptors::{compute_descriptors, DescriptorFrame, Ground, HeightField};
use semret_core::fixtures::{scenario, SCENARIOS};
use semret_core::humanoid::template;
use semret_core::job::{Job, JobRequest, Method};
use semret_core::keyverts::KeyVertexSet;
use semret_core::metrics::{evaluate, DEFAULT_DIVISIONS};
use semret_core::optimizer::{DirLoss, NoObserver, Report, RetargetConfig};
use semret_core::{Error, Result};

#[derive(Parser)]
#[command(name = "semret", version, about = "Retarget skinned character animation while preserving contacts and interactions")]
struct Cli {
    #[arg(long, global = true, value_enum, default_value_t = LogLevel::Warn)]
    log_level: LogLevel,
    /// Worker threads for the optimizer.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for every randomized step.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum LogLevel {
    Error,
    Warn,
    Info,
    Debug,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Transfer template key-vertices onto another character.
    Transfer(TransferArgs),
    /// Retarget a source animation onto a target character.
    Retarget(RetargetArgs),
    /// Dump per-frame pose descriptors.
    Descriptors(DescriptorArgs),
    /// Score a retargeted animation.
    Metrics(MetricsArgs),
    /// List the conflict records of a retarget report.
    Conflicts(ConflictArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Write the bundled test scenes as input files.
    Fixtures(FixtureArgs),
}

#[derive(Args)]
struct TransferArgs {
    #[arg(long)]
    template: PathBuf,
    #[arg(long)]
    character: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Key-vertex file for the template; its embedded set is used otherwise.
    #[arg(long)]
    template_keys: Option<PathBuf>,
    /// Expected number of template key-vertices.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    max_points: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Optimize,
    CopyRotations,
}

#[derive(Clone, Copy, ValueEnum)]
enum DirLossArg {
    Alignment,
    Verbatim,
}

#[derive(Args)]
struct RetargetArgs {
    /// Complete job file; the individual input flags below override its parts.
    #[arg(long)]
    job: Option<PathBuf>,
    #[arg(long)]
    source_char: Option<PathBuf>,
    #[arg(long)]
    source_anim: Option<PathBuf>,
    #[arg(long)]
    target_char: Option<PathBuf>,
    #[arg(long)]
    mapping: Option<PathBuf>,
    #[arg(long)]
    keyverts_src: Option<PathBuf>,
    #[arg(long)]
    keyverts_targ: Option<PathBuf>,
    #[arg(long)]
    terrain: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_frames: Option<usize>,
    #[arg(long)]
    d_min_frac: Option<f64>,
    #[arg(long)]
    d_max_frac: Option<f64>,
    #[arg(long)]
    h_min_frac: Option<f64>,
    #[arg(long)]
    h_max_frac: Option<f64>,
    #[arg(long, value_enum)]
    dir_loss: Option<DirLossArg>,
    #[arg(long)]
    w_dist: Option<f64>,
    #[arg(long)]
    w_dir: Option<f64>,
    #[arg(long)]
    w_pen: Option<f64>,
    #[arg(long)]
    w_height: Option<f64>,
    #[arg(long)]
    w_sliding: Option<f64>,
    #[arg(long)]
    w_reg: Option<f64>,
    #[arg(long)]
    w_smooth: Option<f64>,
}

#[derive(Args)]
struct DescriptorArgs {
    #[arg(long)]
    character: PathBuf,
    #[arg(long)]
    animation: PathBuf,
    /// Key-vertex file; the character's embedded set is used otherwise.
    #[arg(long)]
    keyverts: Option<PathBuf>,
    #[arg(long)]
    terrain: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MetricsArgs {
    /// Character of the retargeted animation.
    #[arg(long)]
    character: PathBuf,
    /// Character of the source animation, if different.
    #[arg(long)]
    source_character: Option<PathBuf>,
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    terrain: Option<PathBuf>,
    /// Voxels across the character height.
    #[arg(long, default_value_t = DEFAULT_DIVISIONS)]
    divisions: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ConflictArgs {
    #[arg(long)]
    report: PathBuf,
    /// Print the records as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 7878)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    bind: String,
    /// Directory with the browser UI, served at `/`.
    #[arg(long)]
    ui: Option<PathBuf>,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 30)]
    frames: usize,
}

fn heightfield(path: &Path) -> Result<HeightField> {
    let h: HeightField = from_json_str(&read_text(path)?)?;
    h.validate()?;
    Ok(h)
}

fn parse_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    from_json_str(&read_text(path)?).map_err(|e| match e {
        Error::Parse { path: p, message } => Error::Parse {
            path: format!("{}: {p}", path.display()),
            message,
        },
        other => other,
    })
}

fn keys_of(character: &Character, file: Option<&Path>) -> Result<KeyVertexSet> {
    match file {
        Some(p) => load_key_vertices(p, character.mesh.len()),
        None => Ok(character.key_vertices()?.clone()),
    }
}

fn transfer(args: TransferArgs, seed: u64) -> Result<()> {
    let template = load_character(&args.template)?;
    let character = load_character(&args.character)?;
    let keys = keys_of(&template, args.template_keys.as_deref())?;
    if let Some(n) = args.n {
        if n != keys.len() {
            return Err(Error::Config(format!(
                "--n {n} requested but the template has {} key-vertices",
                keys.len()
            )));
        }
    }
    let mut cfg = TransferConfig {
        seed,
        ..Default::default()
    };
    if let Some(e) = args.epsilon {
        cfg.sinkhorn.epsilon = e;
    }
    if let Some(m) = args.max_points {
        cfg.max_points = m;
    }
    let out = transfer_key_vertices(&template, &keys, &character, &cfg)?;
    save_key_vertices(&args.out, &out)?;
    info!("wrote {} key-vertices to {}", out.len(), args.out.display());
    Ok(())
}

/// Builds the job request: job file, then input files, then config file, then flags.
fn retarget_request(args: &RetargetArgs, seed: Option<u64>, threads: Option<usize>) -> Result<JobRequest> {
    let mut req = match &args.job {
        Some(p) => parse_file::<JobRequest>(p)?,
        None => {
            let missing = |name: &str| Error::Config(format!("missing required flag --{name} (or --job)"));
            JobRequest {
                source_character: parse_file(args.source_char.as_deref().ok_or_else(|| missing("source-char"))?)?,
                source_animation: parse_file(args.source_anim.as_deref().ok_or_else(|| missing("source-anim"))?)?,
                target_character: parse_file(args.target_char.as_deref().ok_or_else(|| missing("target-char"))?)?,
                mapping: None,
                source_keys: None,
                target_keys: None,
                terrain: None,
                gaze: None,
                config: RetargetConfig::default(),
                method: Method::Optimize,
                seed: 0,
                threads: 1,
            }
        }
    };
    if args.job.is_some() {
        if let Some(p) = &args.source_char {
            req.source_character = parse_file::<CharacterFile>(p)?;
        }
        if let Some(p) = &args.source_anim {
            req.source_animation = parse_file::<AnimationFile>(p)?;
        }
        if let Some(p) = &args.target_char {
            req.target_character = parse_file::<CharacterFile>(p)?;
        }
    }
    if let Some(p) = &args.mapping {
        req.mapping = Some(parse_file::<MappingFile>(p)?);
    }
    if let Some(p) = &args.keyverts_src {
        req.source_keys = Some(parse_file(p)?);
    }
    if let Some(p) = &args.keyverts_targ {
        req.target_keys = Some(parse_file(p)?);
    }
    if let Some(p) = &args.terrain {
        req.terrain = Some(heightfield(p)?);
    }
    if let Some(p) = &args.config {
        req.config = parse_file(p)?;
    }
    let c = &mut req.config;
    let set = |slot: &mut f64, v: Option<f64>| {
        if let Some(v) = v {
            *slot = v;
        }
    };
    set(&mut c.learning_rate, args.learning_rate);
    set(&mut c.d_min_frac, args.d_min_frac);
    set(&mut c.d_max_frac, args.d_max_frac);
    set(&mut c.h_min_frac, args.h_min_frac);
    set(&mut c.h_max_frac, args.h_max_frac);
    set(&mut c.w_dist, args.w_dist);
    set(&mut c.w_dir, args.w_dir);
    set(&mut c.w_pen, args.w_pen);
    set(&mut c.w_height, args.w_height);
    set(&mut c.w_sliding, args.w_sliding);
    set(&mut c.w_reg, args.w_reg);
    set(&mut c.w_smooth, args.w_smooth);
    if let Some(n) = args.iterations {
        c.iterations = n;
    }
    if let Some(n) = args.batch_frames {
        c.batch_frames = n;
    }
    if let Some(d) = args.dir_loss {
        c.dir_loss = match d {
            DirLossArg::Alignment => DirLoss::Alignment,
            DirLossArg::Verbatim => DirLoss::Verbatim,
        };
    }
    if let Some(m) = args.method {
        req.method = match m {
            MethodArg::Optimize => Method::Optimize,
            MethodArg::CopyRotations => Method::CopyRotations,
        };
    }
    if let Some(s) = seed {
        req.seed = s;
    }
    if let Some(t) = threads {
        req.threads = t;
    }
    Ok(req)
}

fn retarget(args: &RetargetArgs, seed: Option<u64>, threads: Option<usize>) -> Result<()> {
    let job = Job::try_from(retarget_request(args, seed, threads)?)?;
    let out = job.run(&mut NoObserver)?;
    write_text(&args.out, &animation_to_json(&out.animation))?;
    match (&args.report, &out.report) {
        (Some(path), Some(report)) => {
            write_json(path, report)?;
            info!(
                "loss {:.6e} -> {:.6e}, {:.1} frames/s",
                report.initial.total, report.final_losses.total, report.timing.frames_per_second
            );
        }
        (Some(_), None) => warn!("copy-rotations produces no report"),
        _ => {}
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Serialize)]
struct DescriptorDump {
    fps: f64,
    labels: Vec<String>,
    frames: Vec<DescriptorFrame>,
}

fn descriptors(args: DescriptorArgs) -> Result<()> {
    let character = load_character(&args.character)?;
    let animation = load_animation(&args.animation)?;
    animation.validate(Some(character.skeleton.len()))?;
    let keys = keys_of(&character, args.keyverts.as_deref())?;
    let terrain = args.terrain.as_deref().map(heightfield).transpose()?;
    let vertices = keys.vertices();
    let mut positions = Vec::new();
    let mut normals = Vec::new();
    for pose in &animation.frames {
        let world = character.skeleton.forward_kinematics(pose);
        let skin = skinning_transforms(&character.skeleton, &world);
        positions.push(
            vertices
                .iter()
                .map(|&v| semret_core::anim::skin_vertex(&character.mesh, &skin, v))
                .collect(),
        );
        normals.push(skinned_normals(&character.mesh, &skin, &vertices));
    }
    let ground = Ground::new(character.skeleton.up(), terrain);
    let frames = compute_descriptors(&positions, &normals, animation.fps, &ground)?;
    let dump = DescriptorDump {
        fps: animation.fps,
        labels: keys.labels().map(String::from).collect(),
        frames,
    };
    write_json(&args.out, &dump)
}

fn metrics(args: MetricsArgs) -> Result<()> {
    let target = load_character(&args.character)?;
    let source = match &args.source_character {
        Some(p) => load_character(p)?,
        None => target.clone(),
    };
    let source_anim = load_animation(&args.source)?;
    let target_anim = load_animation(&args.target)?;
    source_anim.validate(Some(source.skeleton.len()))?;
    target_anim.validate(Some(target.skeleton.len()))?;
    let terrain = args.terrain.as_deref().map(heightfield).transpose()?;
    let report = evaluate(&source, &source_anim, &target, &target_anim, terrain.as_ref(), args.divisions)?;
    match &args.out {
        Some(p) => write_json(p, &report),
        None => {
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            Ok(())
        }
    }
}

fn conflicts(args: ConflictArgs) -> Result<()> {
    let report: Report = parse_file(&args.report)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report.conflicts).expect("records serialize"));
        return Ok(());
    }
    if report.conflicts.is_empty() {
        println!("no conflicts");
    }
    for c in &report.conflicts {
        println!(
            "character {} {:<7} {}/{} frames {}..{} cosine {:.3}",
            c.character, c.limb, c.terms[0], c.terms[1], c.frames[0], c.frames[1], c.cosine
        );
    }
    Ok(())
}

fn serve(args: ServeArgs) -> Result<()> {
    let addr: SocketAddr = format!("{}:{}", args.bind, args.port)
        .parse()
        .map_err(|e| Error::Config(format!("bad bind address {}:{}: {e}", args.bind, args.port)))?;
    semret_service::serve_blocking(addr, args.ui).map_err(|source| Error::Io {
        path: addr.to_string(),
        source,
    })
}

fn fixtures(args: FixtureArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out).map_err(|source| Error::Io {
        path: args.out.display().to_string(),
        source,
    })?;
    let t = template();
    save_character(&args.out.join("template.json"), &t.character)?;
    save_key_vertices(&args.out.join("template_keys_96.json"), &t.extended)?;
    for name in SCENARIOS {
        let s = scenario(name, args.frames).expect("listed scenario");
        let dir = args.out.join(name);
        std::fs::create_dir_all(&dir).map_err(|source| Error::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let req = s.request();
        write_json(&dir.join("source.json"), &req.source_character)?;
        write_json(&dir.join("target.json"), &req.target_character)?;
        write_json(&dir.join("animation.json"), &req.source_animation)?;
        if let Some(m) = &req.mapping {
            write_json(&dir.join("mapping.json"), m)?;
        }
        if let Some(t) = &req.terrain {
            write_json(&dir.join("terrain.json"), t)?;
        }
        write_json(&dir.join("job.json"), &req)?;
        info!("wrote {}", dir.display());
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.log_level {
        LogLevel::Error => "error",
        LogLevel::Warn => "warn",
        LogLevel::Info => "info",
        LogLevel::Debug => "debug",
    };
    env_logger::Builder::new().parse_filters(level).format_timestamp(None).init();
    let Cli {
        threads, seed, command, ..
    } = cli;
    let outcome = match command {
        Command::Transfer(a) => transfer(a, seed.unwrap_or(0)),
        Command::Retarget(a) => retarget(&a, seed, threads),
        Command::Descriptors(a) => descriptors(a),
        Command::Metrics(a) => metrics(a),
        Command::Conflicts(a) => conflicts(a),
        Command::Serve(a) => serve(a),
        Command::Fixtures(a) => fixtures(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
