//! Command-line front end. Exit codes: 0 success or watermarked, 2 usage,
//! format or other errors, 3 verification negative.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::ablation::{ablate, format_table, Suite};
use crate::attacks::{Attackable, Chain};
use crate::config::{EmbedMode, RunConfig};
use crate::corpus::corpus_item;
use crate::error::{Error, Result};
use crate::pipeline::{embed_direct, extract, generate, vocode, ItemSeeds, PipelineConfig};
use crate::seed;
use crate::spectral::{decode_spg, encode_spg, melspec, read_spg, read_wav, write_spg, write_wav, Spectrogram};
use crate::verify::{bit_accuracy, binom_tail, fnr, ll_mse, solve_threshold, spectral_snr, verify, Decision};
use crate::watermark::tiny::{train_tiny, TinyNets, TrainExample};
use crate::watermark::WatermarkPayload;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 2;
pub const EXIT_NOT_WATERMARKED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "specmark", version, about = "Watermark mel spectrograms in the DWT LL band and verify them")]
pub struct Cli {
    /// key = value configuration file; flags override its values
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<String>,
    /// Secret carrier key (decimal or 0x-hex)
    #[arg(long, global = true)]
    pub key: Option<String>,
    /// Payload length N
    #[arg(long, global = true)]
    pub bits: Option<usize>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// LL, LH, HL or HH
    #[arg(long, global = true)]
    pub subband: Option<String>,
    #[arg(long = "embed-step", global = true)]
    pub embed_step: Option<usize>,
    /// Attack chain, e.g. clip:0.5+noise:0.2+lowpass:5000
    #[arg(long, global = true)]
    pub chain: Option<String>,
    /// False-positive bound for the verification threshold
    #[arg(long, global = true)]
    pub fpr: Option<f64>,
    /// Any other config key, as KEY=VALUE (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Embed a payload into a .wav or .spg file
    Embed {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Hex payload file; a seeded random payload is used when absent
        #[arg(long)]
        payload: Option<PathBuf>,
        /// direct or diffusion
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Decode the payload from a .wav or .spg file
    Extract {
        #[arg(long = "in")]
        input: PathBuf,
        /// Reference payload to score against
        #[arg(long)]
        payload: Option<PathBuf>,
        /// Where to write the decoded hex payload
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Apply an attack chain to a .wav or .spg file
    Attack {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Binomial test of the decoded payload against the original
    Verify {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        payload: Option<PathBuf>,
    },
    /// Train the small embedder/extractor on the synthetic corpus
    Train {
        #[arg(long)]
        out: PathBuf,
        /// Per-step loss log
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Run an ablation suite: subband, timestep or dwt
    Ablate {
        #[arg(long)]
        suite: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a directory of reproducible artifacts
    Demo {
        #[arg(long)]
        out: PathBuf,
    },
}

/// Builds the effective configuration: defaults, then file, then flags.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    let flags: [(&str, Option<String>); 8] = [
        ("seed", cli.seed.clone()),
        ("key", cli.key.clone()),
        ("bits", cli.bits.map(|v| v.to_string())),
        ("alpha", cli.alpha.map(|v| v.to_string())),
        ("subband", cli.subband.clone()),
        ("embed_step", cli.embed_step.map(|v| v.to_string())),
        ("chain", cli.chain.clone()),
        ("fpr", cli.fpr.map(|v| v.to_string())),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            cfg.set(k, &v)?;
        }
    }
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FileKind {
    Wav,
    Spg,
}

fn kind_of(path: &Path) -> Result<FileKind> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("wav") => Ok(FileKind::Wav),
        Some("spg") => Ok(FileKind::Spg),
        _ => Err(Error::Format(format!("{}: expected a .wav or .spg file", path.display()))),
    }
}

fn load_mel(path: &Path, cfg: &PipelineConfig) -> Result<Spectrogram<f64>> {
    match kind_of(path)? {
        FileKind::Wav => {
            let w = read_wav::<f64>(path)?;
            let mut mel_cfg = cfg.corpus.mel;
            mel_cfg.validate(w.sample_rate)?;
            mel_cfg.fmax = mel_cfg.fmax.min(w.sample_rate as f64 / 2.0);
            melspec(&w, &mel_cfg)
        }
        FileKind::Spg => read_spg(path),
    }
}

fn load_payload(path: &Path, n: usize) -> Result<WatermarkPayload> {
    WatermarkPayload::from_hex(fs::read_to_string(path)?.trim(), n)
}

fn reference_payload(flag: &Option<PathBuf>, cfg: &RunConfig) -> Result<Option<WatermarkPayload>> {
    flag.as_ref()
        .or(cfg.payload.as_ref())
        .map(|p| load_payload(p, cfg.pipeline.n_bits))
        .transpose()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}

fn mode_name(m: EmbedMode) -> &'static str {
    match m {
        EmbedMode::Direct => "direct",
        EmbedMode::Diffusion => "diffusion",
    }
}

fn cmd_embed(
    cfg: &mut RunConfig,
    input: &Path,
    out: &Path,
    payload: &Option<PathBuf>,
    mode: &Option<String>,
    report: &Option<PathBuf>,
) -> Result<i32> {
    if let Some(m) = mode {
        cfg.set("mode", m)?;
    }
    let p = &cfg.pipeline;
    let out_kind = kind_of(out)?;
    let mel = load_mel(input, p)?;
    let carriers = p.carriers(mel.shape())?;
    let seeds = ItemSeeds::new(p.seed, "embed", 0);
    let m = match reference_payload(payload, cfg)? {
        Some(m) => m,
        None => seeds.payload(p.n_bits)?,
    };
    let marked = match cfg.mode {
        EmbedMode::Direct => embed_direct(&mel, &m, p, &carriers)?,
        EmbedMode::Diffusion => generate(&mel, Some(&m), p, &carriers, seeds.diffusion)?,
    };
    let measured = match out_kind {
        FileKind::Spg => {
            let bytes = encode_spg(&marked);
            fs::write(out, &bytes)?;
            decode_spg::<f64>(&bytes)?
        }
        FileKind::Wav => {
            write_wav(out, &vocode(&marked, p, seeds.vocoder)?)?;
            marked
        }
    };
    let line = format!(
        "mode={} n={} alpha={} subband={} payload={} ll_mse={:.9} snr={:.4}",
        mode_name(cfg.mode),
        p.n_bits,
        p.embed.alpha,
        p.embed.subband,
        m.to_hex(),
        ll_mse(&mel, &measured)?,
        spectral_snr(&mel, &measured)?
    );
    println!("{line}");
    if let Some(r) = report {
        write_text(r, &(line + "\n"))?;
    }
    Ok(EXIT_OK)
}

fn cmd_extract(cfg: &RunConfig, input: &Path, payload: &Option<PathBuf>, out: &Option<PathBuf>) -> Result<i32> {
    let p = &cfg.pipeline;
    let mel = load_mel(input, p)?;
    let carriers = p.carriers(mel.shape())?;
    let got = extract(&mel, p, &carriers)?.payload;
    let mut line = format!("payload={} n={}", got.to_hex(), got.len());
    if let Some(path) = payload.as_ref().or(cfg.payload.as_ref()) {
        let text = fs::read_to_string(path)?;
        let digits = text.trim().len();
        if digits != p.n_bits.div_ceil(4) {
            return Err(Error::Capacity(format!(
                "reference payload has {digits} hex digits but N={} needs {}",
                p.n_bits,
                p.n_bits.div_ceil(4)
            )));
        }
        let reference = WatermarkPayload::from_hex(text.trim(), p.n_bits)?;
        let k = reference.matches(&got)?;
        line.push_str(&format!(" k={k} acc={}", bit_accuracy(&reference, &got)?));
    }
    println!("{line}");
    if let Some(o) = out {
        write_text(o, &format!("{}\n", got.to_hex()))?;
    }
    Ok(EXIT_OK)
}

fn cmd_attack(cfg: &RunConfig, input: &Path, out: &Path) -> Result<i32> {
    let kind = kind_of(input)?;
    if cfg.chain.0.is_empty() {
        fs::copy(input, out)?;
    } else {
        let mut rng = seed::rng(seed::subseed(cfg.pipeline.seed, "attack"));
        match kind {
            FileKind::Wav => write_wav(out, &read_wav::<f64>(input)?.apply_chain(&cfg.chain, &mut rng)?)?,
            FileKind::Spg => write_spg(out, &read_spg::<f64>(input)?.apply_chain(&cfg.chain, &mut rng)?)?,
        }
    }
    println!("chain={} seed={}", cfg.chain, cfg.pipeline.seed);
    Ok(EXIT_OK)
}

fn cmd_verify(cfg: &RunConfig, input: &Path, payload: &Option<PathBuf>) -> Result<i32> {
    let p = &cfg.pipeline;
    let reference = reference_payload(payload, cfg)?
        .ok_or_else(|| Error::InvalidConfig("verify needs --payload (or payload = in the config)".into()))?;
    let mel = load_mel(input, p)?;
    let carriers = p.carriers(mel.shape())?;
    let got = extract(&mel, p, &carriers)?.payload;
    let th = solve_threshold(p.n_bits, cfg.fpr)?;
    if !th.satisfiable {
        eprintln!("warning: fpr {} is below 2^-{}; using k = N", cfg.fpr, p.n_bits);
    }
    let report = verify(&reference, &got, th.tau)?;
    println!("{report}");
    Ok(match report.decision {
        Decision::Watermarked => EXIT_OK,
        Decision::NotWatermarked => EXIT_NOT_WATERMARKED,
    })
}

fn training_set(cfg: &RunConfig) -> Result<Vec<TrainExample>> {
    let p = &cfg.pipeline;
    (0..p.corpus.items)
        .map(|i| {
            let mel = corpus_item::<f64>(&p.corpus, i)?.mel;
            TrainExample::from_spectrogram(&mel, ItemSeeds::new(p.seed, "train", i).payload(p.n_bits)?)
        })
        .collect()
}

fn train(cfg: &RunConfig) -> Result<(TinyNets, String)> {
    let p = &cfg.pipeline;
    let data = training_set(cfg)?;
    let shape = data[0].ll.dim();
    let mut rng = seed::rng(seed::subseed(p.seed, "tiny"));
    let init = TinyNets::init(p.n_bits, shape, cfg.tiny_alpha.0, cfg.tiny_alpha.1, &mut rng)?;
    let (nets, hist) = train_tiny(&init, &data, &cfg.train, &mut rng)?;
    let log: String = hist
        .iter()
        .map(|h| format!("step={} emb={:.6e} ext={:.6e} total={:.6e}\n", h.step, h.emb, h.ext, h.total))
        .collect();
    Ok((nets, log))
}

fn cmd_train(cfg: &RunConfig, out: &Path, history: &Option<PathBuf>) -> Result<i32> {
    let (nets, log) = train(cfg)?;
    nets.save(out)?;
    match history {
        Some(h) => write_text(h, &log)?,
        None => print!("{log}"),
    }
    println!("saved={} params={}", out.display(), nets.params().len());
    Ok(EXIT_OK)
}

fn cmd_ablate(cfg: &RunConfig, suite: &str, out: &Option<PathBuf>) -> Result<i32> {
    let suite: Suite = suite.parse()?;
    let table = format_table(&ablate(suite, cfg)?);
    match out {
        Some(o) => write_text(o, &table)?,
        None => print!("{table}"),
    }
    Ok(EXIT_OK)
}

/// Small deterministic run over every command path; see the README for the
/// file list.
fn cmd_demo(cfg: &RunConfig, out: &Path) -> Result<i32> {
    fs::create_dir_all(out)?;
    let p = &cfg.pipeline;
    let mut files: Vec<String> = Vec::new();
    let mut put = |name: &str, bytes: &[u8]| -> Result<()> {
        fs::write(out.join(name), bytes)?;
        files.push(name.to_string());
        Ok(())
    };
    put("config.txt", cfg.to_text().as_bytes())?;

    let item = corpus_item::<f64>(&p.corpus, 0)?;
    let seeds = ItemSeeds::new(p.seed, "demo", 0);
    let m = seeds.payload(p.n_bits)?;
    let carriers = p.carriers(item.mel.shape())?;
    let marked = generate(&item.mel, Some(&m), p, &carriers, seeds.diffusion)?;
    let clean = generate(&item.mel, None, p, &carriers, seeds.diffusion)?;
    let wave = vocode(&marked, p, seeds.vocoder)?;
    let chain: Chain = if cfg.chain.0.is_empty() {
        "amp_scale:0.9+echo:0.3".parse()?
    } else {
        cfg.chain.clone()
    };
    let attacked = wave.apply_chain(&chain, &mut seed::rng(seeds.attack))?;
    let tmp = tempdir_in(out)?;
    let wav_bytes = |w: &crate::spectral::Waveform<f64>| -> Result<Vec<u8>> {
        let path = tmp.join("w.wav");
        write_wav(&path, w)?;
        Ok(fs::read(&path)?)
    };
    put("item0.wav", &wav_bytes(&item.waveform)?)?;
    put("item0.spg", &encode_spg(&item.mel))?;
    put("payload.hex", format!("{}\n", m.to_hex()).as_bytes())?;
    put("item0_marked.spg", &encode_spg(&marked))?;
    put("item0_clean.spg", &encode_spg(&clean))?;
    put("item0_marked.wav", &wav_bytes(&wave)?)?;
    put("item0_attacked.wav", &wav_bytes(&attacked)?)?;
    fs::remove_dir_all(&tmp)?;

    let th = solve_threshold(p.n_bits, cfg.fpr)?;
    let mut report = String::new();
    for (label, spec) in [
        ("marked", marked.clone()),
        ("clean", clean.clone()),
        ("attacked", melspec(&attacked, &p.corpus.mel)?),
    ] {
        let got = extract(&spec, p, &carriers)?.payload;
        report.push_str(&format!("input={label} chain={} {}\n", if label == "attacked" { chain.to_string() } else { "none".into() }, verify(&m, &got, th.tau)?));
    }
    report.push_str(&format!(
        "ll_mse={:.9} snr={:.4}\n",
        ll_mse(&clean, &marked)?,
        spectral_snr(&clean, &marked)?
    ));
    put("verify.txt", report.as_bytes())?;

    let threshold = format!(
        "binom_tail_100_62={:.6e}\nk_for_fpr_0.0017={}\nk_for_fpr_{}={} tau={}\nfnr_100_97_0.9983={:.6e}\n",
        binom_tail(100, 62, 0.5)?,
        solve_threshold(100, 0.0017)?.k,
        cfg.fpr,
        th.k,
        th.tau,
        fnr(100, 97, 0.9983)?
    );
    put("threshold.txt", threshold.as_bytes())?;

    let mut small = cfg.clone();
    small.pipeline.corpus.items = cfg.pipeline.corpus.items.min(4);
    small.timestep_stride = 10;
    for suite in [Suite::Subband, Suite::Timestep, Suite::Dwt] {
        put(&format!("ablate_{suite}.txt"), format_table(&ablate(suite, &small)?).as_bytes())?;
    }

    small.train.steps = cfg.train.steps.min(20);
    let (nets, log) = train(&small)?;
    put("tiny.tnw", &nets.to_bytes())?;
    put("train_history.txt", log.as_bytes())?;

    files.sort();
    let manifest: String = files
        .iter()
        .map(|f| {
            let bytes = fs::read(out.join(f))?;
            Ok(format!("{f} bytes={} fnv1a64={:016x}\n", bytes.len(), seed::fnv1a64(&bytes)))
        })
        .collect::<Result<String>>()?;
    fs::write(out.join("manifest.txt"), &manifest)?;
    print!("{manifest}");
    Ok(EXIT_OK)
}

fn tempdir_in(dir: &Path) -> Result<PathBuf> {
    let p = dir.join(".scratch");
    fs::create_dir_all(&p)?;
    Ok(p)
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let mut cfg = resolve_config(cli)?;
    match &cli.command {
        Command::Embed {
            input,
            out,
            payload,
            mode,
            report,
        } => cmd_embed(&mut cfg, input, out, payload, mode, report),
        Command::Extract { input, payload, out } => cmd_extract(&cfg, input, payload, out),
        Command::Attack { input, out } => cmd_attack(&cfg, input, out),
        Command::Verify { input, payload } => cmd_verify(&cfg, input, payload),
        Command::Train { out, history } => cmd_train(&cfg, out, history),
        Command::Ablate { suite, out } => cmd_ablate(&cfg, suite, out),
        Command::Demo { out } => cmd_demo(&cfg, out),
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}
