//! Command-line front end. Every subcommand reads and writes the on-disk formats of
//! `svs_core`: score JSON, `SVSMEL1` mel files, f0 JSON, style-score JSON, WAV and
//! checkpoints.

use std::ffi::OsString;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use svs_core::dpe::{F0Contour, PitchPath};
use svs_core::dsp::mel::MEL_MAGIC;
use svs_core::dsp::vocoder::vocode_seeded;
use svs_core::dsp::{apply_f0_edits, extract_f0, f0_rmse_vuv, mcd, mel_analyze, F0EditScript, MelSpectrogram, Waveform};
use svs_core::lst::{analyze_tokens, apply_style_edits, parse_style_edits, Side, StyleScores};
use svs_core::model::{generate_synthetic_corpus, AcousticModel, Conditioning, Example, ModelConfig, Trainer};
use svs_core::nn::{AdamConfig, Checkpoint};
use svs_core::score::{MusicScore, PhonemeInventory};

use crate::config::Settings;
use crate::diag::Failure;
use crate::server;

#[derive(Debug, Parser)]
#[command(name = "svs", version, about = "Controllable singing voice synthesis")]
pub struct Cli {
    /// TOML file overriding the built-in defaults.
    #[arg(long, env = "SVS_CONFIG", global = true)]
    pub config: Option<PathBuf>,
    /// Log filter such as `warn` or `info`.
    #[arg(long, env = "SVS_LOG_LEVEL", global = true)]
    pub log_level: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a mel spectrogram from a score.
    Synth(SynthArgs),
    /// Estimate f0 from a WAV file or from a vocoded mel file.
    ExtractF0(ExtractArgs),
    /// Apply an f0 edit script to a contour.
    EditF0(EditArgs),
    /// Apply a style edit script to style scores.
    EditStyle(EditArgs),
    /// Regenerate with an edited f0 contour and/or edited style scores.
    Resynth(SynthArgs),
    /// Compare two mel (or WAV) files, optionally with their f0 contours.
    Metrics(MetricsArgs),
    /// Train on the synthetic corpus and write a checkpoint.
    Train(TrainArgs),
    /// Correlate each style token with frame energy and silence.
    AnalyzeTokens(AnalyzeArgs),
    /// Run the HTTP session service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub score: PathBuf,
    #[arg(long, env = "SVS_CKPT")]
    pub ckpt: Option<PathBuf>,
    /// `midi` or `f0`; defaults to `f0` when `--f0` is given.
    #[arg(long, env = "SVS_PITCH_PATH")]
    pub pitch_path: Option<String>,
    /// f0 contour JSON driving the f0 path.
    #[arg(long)]
    pub f0: Option<PathBuf>,
    /// Style-score JSON replacing the model's own scores.
    #[arg(long)]
    pub style: Option<PathBuf>,
    #[arg(long, env = "SVS_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_mel: PathBuf,
    /// Writes the style scores actually used.
    #[arg(long)]
    pub out_style: Option<PathBuf>,
    /// Also vocodes the result.
    #[arg(long)]
    pub out_wav: Option<PathBuf>,
    #[arg(long, env = "SVS_VOCODER_ITERATIONS")]
    pub vocoder_iterations: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Mel file; vocoded with `--seed` before analysis.
    #[arg(long, required_unless_present = "wav", conflicts_with = "wav")]
    pub mel: Option<PathBuf>,
    #[arg(long)]
    pub wav: Option<PathBuf>,
    #[arg(long, env = "SVS_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "SVS_VOCODER_ITERATIONS")]
    pub vocoder_iterations: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EditArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub script: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub est: PathBuf,
    #[arg(long, requires = "est_f0")]
    pub ref_f0: Option<PathBuf>,
    #[arg(long, requires = "ref_f0")]
    pub est_f0: Option<PathBuf>,
    /// Full-precision JSON instead of rounded text.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, env = "SVS_TRAIN_SONGS")]
    pub songs: Option<usize>,
    #[arg(long, env = "SVS_CORPUS_SEED")]
    pub corpus_seed: Option<u64>,
    /// Total step count, including steps already taken by `--resume`.
    #[arg(long, env = "SVS_TRAIN_STEPS")]
    pub steps: Option<u64>,
    #[arg(long, env = "SVS_TRAIN_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "SVS_LEARNING_RATE")]
    pub lr: Option<f64>,
    #[arg(long, env = "SVS_LOG_EVERY")]
    pub log_every: Option<u64>,
    /// Train the model without style tokens.
    #[arg(long, conflicts_with = "model_config")]
    pub dual: bool,
    /// Model configuration JSON.
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    #[arg(long, conflicts_with_all = ["dual", "model_config"])]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub score: PathBuf,
    #[arg(long, env = "SVS_CKPT")]
    pub ckpt: Option<PathBuf>,
    #[arg(long, env = "SVS_SEED")]
    pub seed: Option<u64>,
    /// `text` or `pitch`.
    #[arg(long, default_value = "text")]
    pub side: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "SVS_HOST")]
    pub host: Option<String>,
    #[arg(long, env = "SVS_PORT")]
    pub port: Option<u16>,
    #[arg(long, env = "SVS_CKPT")]
    pub ckpt: Option<PathBuf>,
    #[arg(long, env = "SVS_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
}

/// Parses `args`, runs the command and returns the process exit status.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => match e.kind() {
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                let _ = e.print();
                return 0;
            }
            _ => {
                let text = e.render().to_string();
                let first = text.lines().next().unwrap_or("invalid arguments");
                let f = Failure::validation(first.trim_start_matches("error: "));
                eprintln!("{}", f.to_line());
                return f.exit_code();
            }
        },
    };
    match run(cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("{}", f.to_line());
            f.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    let settings = Settings::load(cli.config.as_deref())?;
    let level = cli.log_level.clone().unwrap_or_else(|| settings.log_level.clone());
    let _ = env_logger::Builder::new().parse_filters(&level).try_init();
    match cli.command {
        Command::Synth(a) => synth(&settings, a, false),
        Command::Resynth(a) => synth(&settings, a, true),
        Command::ExtractF0(a) => extract(&settings, a),
        Command::EditF0(a) => edit_f0(a),
        Command::EditStyle(a) => edit_style(a),
        Command::Metrics(a) => metrics(a),
        Command::Train(a) => train(&settings, a),
        Command::AnalyzeTokens(a) => analyze(&settings, a),
        Command::Serve(a) => serve(&settings, a),
    }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::validation(format!("{}: {e}", path.display())))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    std::fs::write(path, bytes).map_err(|e| {
        let msg = format!("{}: {e}", path.display());
        if e.kind() == std::io::ErrorKind::NotFound {
            Failure::validation(msg)
        } else {
            Failure::internal(msg)
        }
    })
}

fn in_file(path: &Path) -> impl Fn(svs_core::Error) -> Failure + '_ {
    move |e| {
        let mut f = Failure::from(e);
        f.message = format!("{}: {}", path.display(), f.message);
        f
    }
}

pub fn load_model(path: &Path) -> Result<AcousticModel, Failure> {
    let ck = Checkpoint::load(path)?;
    AcousticModel::from_checkpoint(&ck).map_err(in_file(path))
}

fn load_score(path: &Path) -> Result<MusicScore, Failure> {
    MusicScore::parse(&read_text(path)?, &PhonemeInventory::default()).map_err(in_file(path))
}

pub fn parse_pitch_path(s: &str) -> Result<PitchPath, Failure> {
    s.parse::<PitchPath>().map_err(Failure::from)
}

fn synth(settings: &Settings, a: SynthArgs, edited: bool) -> Result<(), Failure> {
    if edited && a.f0.is_none() && a.style.is_none() {
        return Err(Failure::validation("resynth needs an edited curve: pass --f0 and/or --style"));
    }
    let path = match (&a.pitch_path, &a.f0) {
        (Some(p), _) => parse_pitch_path(p)?,
        (None, Some(_)) => PitchPath::F0,
        (None, None) => settings.pitch_path,
    };
    let f0 = a.f0.as_deref().map(|p| F0Contour::load(p).map_err(in_file(p))).transpose()?;
    if path == PitchPath::F0 && f0.is_none() {
        return Err(Failure::validation("--pitch-path f0 requires --f0"));
    }
    let style = match a.style.as_deref() {
        Some(p) => Some(StyleScores::from_json(&read_text(p)?).map_err(in_file(p))?),
        None => None,
    };
    let model = load_model(a.ckpt.as_deref().unwrap_or(&settings.ckpt))?;
    let score = load_score(&a.score)?;
    let inputs = score.expand(&PhonemeInventory::default())?;
    let l = inputs.len();
    if let Some(c) = &f0 {
        if c.len() != l {
            return Err(Failure::validation(format!("f0 contour has {} frames, score has {l}", c.len())));
        }
    }
    if let Some(s) = &style {
        if s.text.frames() != l {
            return Err(Failure::validation(format!("style scores have {} frames, score has {l}", s.text.frames())));
        }
    }
    let seed = a.seed.unwrap_or(settings.seed);
    let cond = Conditioning { style: style.as_ref(), tokens: None };
    let used_f0 = if path == PitchPath::F0 { f0.as_ref() } else { None };
    let r = model.synthesize(&inputs, path, used_f0, &cond, seed)?;
    write_bytes(&a.out_mel, &r.mel.to_bytes())?;
    if let Some(p) = &a.out_style {
        let s = r
            .style_scores
            .as_ref()
            .ok_or_else(|| Failure::validation("--out-style: the model has no style tokens"))?;
        write_bytes(p, s.to_json().as_bytes())?;
    }
    if let Some(p) = &a.out_wav {
        let iters = a.vocoder_iterations.unwrap_or(settings.vocoder_iterations);
        let w = vocode_seeded(&r.mel, iters, seed)?;
        write_bytes(p, &w.to_wav_bytes()?)?;
    }
    log::info!("synthesised {l} frames via the {path} path");
    Ok(())
}

fn extract(settings: &Settings, a: ExtractArgs) -> Result<(), Failure> {
    let wave = match (&a.mel, &a.wav) {
        (Some(m), _) => {
            let mel = MelSpectrogram::load(m).map_err(in_file(m))?;
            let iters = a.vocoder_iterations.unwrap_or(settings.vocoder_iterations);
            vocode_seeded(&mel, iters, a.seed.unwrap_or(settings.seed))?
        }
        (None, Some(w)) => Waveform::load(w).map_err(in_file(w))?,
        (None, None) => return Err(Failure::validation("pass --mel or --wav")),
    };
    write_bytes(&a.out, extract_f0(&wave).to_json().as_bytes())
}

fn edit_f0(a: EditArgs) -> Result<(), Failure> {
    let c = F0Contour::load(&a.input).map_err(in_file(&a.input))?;
    let script = F0EditScript::from_json(&read_text(&a.script)?).map_err(in_file(&a.script))?;
    let out = apply_f0_edits(&c, &script).map_err(in_file(&a.script))?;
    write_bytes(&a.out, out.to_json().as_bytes())
}

fn edit_style(a: EditArgs) -> Result<(), Failure> {
    let s = StyleScores::from_json(&read_text(&a.input)?).map_err(in_file(&a.input))?;
    let edits = parse_style_edits(&read_text(&a.script)?).map_err(in_file(&a.script))?;
    let out = apply_style_edits(&s, &edits).map_err(in_file(&a.script))?;
    write_bytes(&a.out, out.to_json().as_bytes())
}

/// Loads a mel file, or analyses a WAV file, by content.
fn load_spectrogram(path: &Path) -> Result<MelSpectrogram, Failure> {
    let bytes = std::fs::read(path).map_err(|e| Failure::validation(format!("{}: {e}", path.display())))?;
    if bytes.starts_with(MEL_MAGIC) {
        MelSpectrogram::from_bytes(&bytes).map_err(in_file(path))
    } else if bytes.starts_with(b"RIFF") {
        let w = Waveform::from_wav_reader(bytes.as_slice()).map_err(in_file(path))?;
        mel_analyze(&w).map_err(in_file(path))
    } else {
        Err(Failure::validation(format!("{}: neither a mel file nor a WAV file", path.display())))
    }
}

#[derive(Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub mcd_db: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f0_rmse_hz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vuv_percent: Option<f64>,
}

fn metrics(a: MetricsArgs) -> Result<(), Failure> {
    let r = load_spectrogram(&a.reference)?;
    let e = load_spectrogram(&a.est)?;
    let mut report = MetricsReport { mcd_db: mcd(&r, &e)?, f0_rmse_hz: None, vuv_percent: None };
    if let (Some(rp), Some(ep)) = (&a.ref_f0, &a.est_f0) {
        let rc = F0Contour::load(rp).map_err(in_file(rp))?;
        let ec = F0Contour::load(ep).map_err(in_file(ep))?;
        let (rmse, vuv) = f0_rmse_vuv(&rc, &ec)?;
        report.f0_rmse_hz = Some(rmse);
        report.vuv_percent = Some(vuv);
    }
    if a.json {
        println!("{}", serde_json::to_string(&report).expect("report serialises"));
    } else {
        println!("MCD {:.3} dB", report.mcd_db);
        if let (Some(rmse), Some(vuv)) = (report.f0_rmse_hz, report.vuv_percent) {
            println!("F0 RMSE {rmse:.3} Hz");
            println!("VUV {vuv:.3} %");
        }
    }
    Ok(())
}

fn train(settings: &Settings, a: TrainArgs) -> Result<(), Failure> {
    let adam = AdamConfig { lr: a.lr.unwrap_or(settings.learning_rate), ..AdamConfig::default() };
    if !(adam.lr.is_finite() && adam.lr > 0.0) {
        return Err(Failure::validation(format!("learning rate must be positive, got {}", adam.lr)));
    }
    let mut trainer = match &a.resume {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            Trainer::from_checkpoint(&ck, adam).map_err(in_file(p))?
        }
        None => {
            let config = match &a.model_config {
                Some(p) => ModelConfig::from_json(&read_text(p)?).map_err(in_file(p))?,
                None if a.dual => ModelConfig::dual(),
                None => ModelConfig::default(),
            };
            let seed = a.seed.unwrap_or(settings.train_seed);
            Trainer::new(AcousticModel::new(config, seed)?, adam, seed)
        }
    };
    let songs = a.songs.unwrap_or(settings.train_songs);
    if songs == 0 {
        return Err(Failure::validation("--songs must be at least 1"));
    }
    let inv = PhonemeInventory::default();
    let corpus = generate_synthetic_corpus(songs, a.corpus_seed.unwrap_or(settings.corpus_seed))?;
    let batch = corpus
        .iter()
        .map(|s| Example::from_song(s, &inv))
        .collect::<svs_core::Result<Vec<_>>>()?;
    let steps = a.steps.unwrap_or(settings.train_steps);
    let every = a.log_every.unwrap_or(settings.log_every).max(1);
    #[derive(Serialize)]
    struct Line {
        step: u64,
        loss: f32,
    }
    while trainer.step < steps {
        let step = trainer.step;
        let r = trainer.train_step(&batch)?;
        if step % every == 0 || step + 1 == steps {
            println!("{}", serde_json::to_string(&Line { step, loss: r.loss }).expect("line serialises"));
        }
    }
    let ck = trainer.checkpoint();
    write_bytes(&a.out, &ck.to_bytes())
}

fn analyze(settings: &Settings, a: AnalyzeArgs) -> Result<(), Failure> {
    let side = match a.side.as_str() {
        "text" => Side::Text,
        "pitch" => Side::Pitch,
        s => return Err(Failure::validation(format!("--side must be `text` or `pitch`, got `{s}`"))),
    };
    let model = load_model(a.ckpt.as_deref().unwrap_or(&settings.ckpt))?;
    let score = load_score(&a.score)?;
    let inv = PhonemeInventory::default();
    let inputs = score.expand(&inv)?;
    let seed = a.seed.unwrap_or(settings.seed);
    let r = model.synthesize(&inputs, PitchPath::Midi, None, &Conditioning::default(), seed)?;
    let scores = r
        .style_scores
        .as_ref()
        .and_then(|s| s.get(side))
        .ok_or_else(|| Failure::validation(format!("the model has no {side:?} style tokens")))?;
    let silent: Vec<bool> = inputs.phoneme_ids.iter().map(|&p| p == inv.silence()).collect();
    let stats = analyze_tokens(scores, &r.mel, &silent)?;
    let text = serde_json::to_string_pretty(&stats).expect("stats serialise");
    match &a.out {
        Some(p) => write_bytes(p, text.as_bytes()),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn serve(settings: &Settings, a: ServeArgs) -> Result<(), Failure> {
    let host = a.host.unwrap_or_else(|| settings.host.clone());
    let port = a.port.unwrap_or(settings.port);
    let addr: SocketAddr = format!("{host}:{port}")
        .parse()
        .map_err(|e| Failure::validation(format!("address {host}:{port}: {e}")))?;
    let model = load_model(a.ckpt.as_deref().unwrap_or(&settings.ckpt))?;
    let data_dir = a.data_dir.unwrap_or_else(|| settings.data_dir.clone());
    let state = server::AppState::open(model, Some(data_dir), settings.vocoder_iterations)?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::internal(format!("runtime: {e}")))?;
    rt.block_on(server::serve(addr, state))
}
