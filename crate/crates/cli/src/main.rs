//! `speechssl` command-line front end.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use speechssl::analysis::{cluster_languages, emit_report, extract_codebook_usage};
use speechssl::asr::{emissions, finetune, Vocabulary};
use speechssl::audio::{make_toy_corpus, prepare_data, toy_languages, Manifest, ToyCorpusConfig, WadaTable};
use speechssl::config::{Preset, RunConfig};
use speechssl::decode::{beam_search_decode, char_errors, greedy_decode, normalize_text, word_errors, ErrorCounts, NGramModel};
use speechssl::model::{load_checkpoint, save_checkpoint};
use speechssl::speaker::{embed_voice, estimate_speaker_count, train_gender_svm, write_embeddings};
use speechssl::ssl::{per_language_valid_loss, pretrain, read_valid_csv, write_valid_csv, TrainLog};
use speechssl::{AdamState, Checkpoint, Error, Result, SpeechModel, Utterance};

#[derive(Parser)]
#[command(name = "speechssl", version, about = "Cross-lingual self-supervised speech toolkit")]
struct Cli {
    /// JSON file overriding preset values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base configuration: paper or desk.
    #[arg(long, global = true, default_value = "paper")]
    preset: String,
    /// Worker threads for file and utterance level parallelism.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the bundled synthetic three-language corpus.
    MakeToyCorpus(ToyArgs),
    /// Chunk, filter and index raw recordings.
    PrepareData(PrepareArgs),
    /// Self-supervised pretraining.
    Pretrain(PretrainArgs),
    /// Per-language validation loss of a checkpoint.
    ValidLoss(ValidArgs),
    /// CTC finetuning of a pretrained checkpoint.
    Finetune(FinetuneArgs),
    /// Train an n-gram language model.
    LmTrain(LmArgs),
    /// Transcribe a manifest.
    Decode(DecodeArgs),
    /// Word and character error rates.
    Evaluate(EvaluateArgs),
    /// Codebook usage clustering and PCA.
    Analyze(AnalyzeArgs),
    /// Voice embeddings, speaker counts and an optional gender classifier.
    SpeakerStats(SpeakerArgs),
    /// Regenerate the SNR lookup table.
    GenWadaTable(WadaArgs),
}

#[derive(Args)]
struct ToyArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 40)]
    utterances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct PrepareArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    snr_min: Option<f64>,
    #[arg(long)]
    min_dur: Option<f64>,
    #[arg(long)]
    max_dur: Option<f64>,
    #[arg(long)]
    train_ratio: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PretrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Validation manifest; a per-language loss table is written when given.
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Restrict training to these languages (comma separated).
    #[arg(long, value_delimiter = ',')]
    languages: Vec<String>,
    /// Resume from a checkpoint.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ValidArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FinetuneArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Existing vocabulary file; built from the transcripts otherwise.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    languages: Vec<String>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct LmArgs {
    /// One sentence per line.
    #[arg(long)]
    text: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Language tag used for normalization.
    #[arg(long, default_value = "")]
    language: String,
    #[arg(long)]
    order: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Decoder {
    Viterbi,
    Beam,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "viterbi")]
    decoder: Decoder,
    /// ARPA language model for shallow fusion.
    #[arg(long)]
    lm: Option<PathBuf>,
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    lm_weight: Option<f64>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Reference transcripts: a manifest, or `id<TAB>text` lines.
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Hypotheses as `id<TAB>text` lines.
    #[arg(long)]
    hyp: PathBuf,
    /// Per-utterance error table.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "-")]
    pretraining: String,
    #[arg(long, default_value = "-")]
    finetuning: String,
    #[arg(long, default_value = "-")]
    decoding: String,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n_utts: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Validation loss tables of a monolingual and a multilingual model.
    #[arg(long, num_args = 2, value_names = ["MONO", "MULTI"])]
    compare: Vec<PathBuf>,
}

#[derive(Args)]
struct SpeakerArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// `id<TAB>label` lines for gender classifier training.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    cut: Option<f64>,
}

#[derive(Args)]
struct WadaArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = speechssl::audio::TABLE_SAMPLES)]
    samples: usize,
    #[arg(long, default_value_t = speechssl::audio::TABLE_SEED)]
    seed: u64,
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(format!("creating {}", p.display()), e))
}

fn write_text(p: &Path, text: &str) -> Result<()> {
    std::fs::write(p, text).map_err(|e| Error::io(format!("writing {}", p.display()), e))
}

fn read_text(p: &Path) -> Result<String> {
    std::fs::read_to_string(p).map_err(|e| Error::io(format!("reading {}", p.display()), e))
}

fn load_manifest(path: &Path, languages: &[String]) -> Result<Vec<Utterance>> {
    let mut m = Manifest::read(path)?;
    if !languages.is_empty() {
        m.records.retain(|r| languages.contains(&r.language));
    }
    if m.records.is_empty() {
        return Err(Error::Data(format!("{}: no utterances selected", path.display())));
    }
    m.load_utterances()
}

/// `id<TAB>text` lines, or a manifest whose transcripts become the texts.
fn read_transcripts(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = read_text(path)?;
    let first = text.lines().next().unwrap_or_default();
    if !first.contains('\t') {
        let m = Manifest::parse(&text)?;
        return Ok(m.records.into_iter().filter_map(|r| r.transcript.map(|t| (r.path, t))).collect());
    }
    Ok(text
        .lines()
        .filter(|l| !l.is_empty())
        .map(|l| {
            let (id, t) = l.split_once('\t').unwrap_or((l, ""));
            (id.to_string(), t.to_string())
        })
        .collect())
}

fn run(cli: Cli) -> Result<()> {
    let preset: Preset = cli.preset.parse()?;
    let mut cfg = RunConfig::load(preset, cli.config.as_deref())?;
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Error::Config(vec!["--workers must be >= 1".into()]));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(vec![format!("thread pool: {e}")]))?;
    }
    match cli.command {
        Command::MakeToyCorpus(a) => {
            let c = ToyCorpusConfig { utterances: a.utterances, seed: a.seed, ..ToyCorpusConfig::default() };
            let n = make_toy_corpus(&a.out, &toy_languages(), &c)?;
            log::info!("make-toy-corpus files={n} out={}", a.out.display());
        }
        Command::PrepareData(a) => {
            let p = &mut cfg.prepare;
            p.snr_min_db = a.snr_min.unwrap_or(p.snr_min_db);
            p.min_dur_s = a.min_dur.unwrap_or(p.min_dur_s);
            p.max_dur_s = a.max_dur.unwrap_or(p.max_dur_s);
            p.train_ratio = a.train_ratio.unwrap_or(p.train_ratio);
            p.seed = a.seed.unwrap_or(p.seed);
            check(&cfg)?;
            create_dir(&a.out)?;
            cfg.write(&a.out.join("config.json"))?;
            let out = prepare_data(&a.input, &a.out, &cfg.prepare)?;
            println!("{}", out.summary);
        }
        Command::Pretrain(a) => {
            cfg.pretrain.steps = a.steps.unwrap_or(cfg.pretrain.steps);
            cfg.pretrain.seed = a.seed.unwrap_or(cfg.pretrain.seed);
            check(&cfg)?;
            create_dir(&a.out)?;
            cfg.write(&a.out.join("config.json"))?;
            let corpus = load_manifest(&a.manifest, &a.languages)?;
            let (mut model, mut opt) = match &a.init {
                Some(p) => {
                    let c = load_checkpoint::<f32>(p)?;
                    let opt = c.optimizer.unwrap_or_else(|| AdamState::new(cfg.pretrain_optim));
                    (c.model, opt)
                }
                None => (SpeechModel::init(cfg.model.clone(), cfg.pretrain.seed)?, AdamState::new(cfg.pretrain_optim)),
            };
            let log_path = a.out.join("train_log.csv");
            let mut log = if a.init.is_some() { TrainLog::open(&log_path)? } else { TrainLog::create(&log_path)? };
            let hist = pretrain(&mut model, &mut opt, &corpus, &cfg.pretrain, Some(&mut log))?;
            if let Some(last) = hist.last() {
                log::info!("pretrain steps={} loss={:.6} l_m={:.6} l_d={:.6} ppl={:.3}", opt.step, last.l, last.l_m, last.l_d, last.code_ppl);
            }
            if let Some(v) = &a.valid {
                let valid = load_manifest(v, &a.languages)?;
                let tau = model.config.gumbel.at(opt.step);
                let report = per_language_valid_loss(&model, &valid, &cfg.pretrain.ssl, tau)?;
                write_valid_csv(&a.out.join("valid_loss.csv"), &report)?;
            }
            let step = opt.step;
            let ckpt = Checkpoint { model, vocab: None, step, optimizer: Some(opt) };
            save_checkpoint(&a.out.join("checkpoint.bin"), &ckpt)?;
        }
        Command::ValidLoss(a) => {
            let c = load_checkpoint::<f32>(&a.checkpoint)?;
            let valid = load_manifest(&a.manifest, &[])?;
            let tau = c.model.config.gumbel.at(c.step);
            let report = per_language_valid_loss(&c.model, &valid, &cfg.pretrain.ssl, tau)?;
            write_valid_csv(&a.out, &report)?;
            for r in report.rows.iter().chain([&report.pooled]) {
                log::info!("valid-loss language={} frames={} loss={:.6} l_m={:.6} l_d={:.6}", r.language, r.frames, r.l, r.l_m, r.l_d);
            }
        }
        Command::Finetune(a) => {
            cfg.finetune.steps = a.steps.unwrap_or(cfg.finetune.steps);
            cfg.finetune.seed = a.seed.unwrap_or(cfg.finetune.seed);
            check(&cfg)?;
            create_dir(&a.out)?;
            cfg.write(&a.out.join("config.json"))?;
            let corpus = load_manifest(&a.manifest, &a.languages)?;
            let vocab = match &a.vocab {
                Some(p) => Vocabulary::load(p)?,
                None => Vocabulary::from_texts(corpus.iter().filter_map(|u| u.transcript.as_deref())),
            };
            let mut model = load_checkpoint::<f32>(&a.checkpoint)?.model;
            let mut opt = AdamState::new(cfg.finetune_optim);
            let losses = finetune(&mut model, &mut opt, &corpus, &vocab, &cfg.finetune)?;
            let mut f = std::fs::File::create(a.out.join("finetune_log.csv")).map_err(|e| Error::io("finetune log", e))?;
            writeln!(f, "step,ctc_loss").map_err(|e| Error::io("finetune log", e))?;
            for (i, l) in losses.iter().enumerate() {
                writeln!(f, "{},{l}", i + 1).map_err(|e| Error::io("finetune log", e))?;
            }
            log::info!("finetune steps={} final_ctc={:.6}", opt.step, losses.last().copied().unwrap_or(f64::NAN));
            vocab.save(&a.out.join("vocab.txt"))?;
            let step = opt.step;
            let ckpt = Checkpoint { model, vocab: Some(vocab.symbols().to_vec()), step, optimizer: Some(opt) };
            save_checkpoint(&a.out.join("checkpoint.bin"), &ckpt)?;
        }
        Command::LmTrain(a) => {
            cfg.lm.order = a.order.unwrap_or(cfg.lm.order);
            check(&cfg)?;
            let text = read_text(&a.text)?;
            let lines: Vec<String> = text.lines().map(|l| normalize_text(l, &a.language)).filter(|l| !l.is_empty()).collect();
            let lm = NGramModel::train(lines.iter().map(String::as_str), &cfg.lm)?;
            lm.save(&a.out)?;
            log::info!("lm-train lines={} vocabulary={} order={}", lines.len(), lm.vocabulary().len(), lm.order());
        }
        Command::Decode(a) => {
            cfg.beam.beam = a.beam.unwrap_or(cfg.beam.beam);
            cfg.beam.lm_weight = a.lm_weight.unwrap_or(cfg.beam.lm_weight);
            check(&cfg)?;
            let c = load_checkpoint::<f32>(&a.checkpoint)?;
            let vocab = Vocabulary::from_symbols(
                c.vocab.clone().ok_or_else(|| Error::Checkpoint("checkpoint has no vocabulary; finetune it first".into()))?,
            )?;
            let lm = a.lm.as_deref().map(NGramModel::load).transpose()?;
            let manifest = Manifest::read(&a.manifest)?;
            let utts = manifest.load_utterances()?;
            let hyps: Vec<String> = utts
                .par_iter()
                .map(|u| {
                    let lp = emissions(&c.model, &u.samples)?;
                    Ok(match a.decoder {
                        Decoder::Viterbi => greedy_decode(&lp, &vocab),
                        Decoder::Beam => beam_search_decode(&lp, &vocab, lm.as_ref(), &cfg.beam)?.best.text,
                    })
                })
                .collect::<Result<_>>()?;
            let mut out = String::new();
            for (u, h) in utts.iter().zip(&hyps) {
                out.push_str(&format!("{}\t{h}\n", u.id));
            }
            write_text(&a.out, &out)?;
            log::info!("decode utterances={} decoder={}", utts.len(), if a.decoder == Decoder::Beam { "beam" } else { "viterbi" });
        }
        Command::Evaluate(a) => {
            let refs = read_transcripts(&a.reference)?;
            let hyps = read_transcripts(&a.hyp)?;
            let (mut w, mut c) = (ErrorCounts::default(), ErrorCounts::default());
            let mut table = String::from("id\twer\tcer\treference\thypothesis\n");
            for (id, r) in &refs {
                let h = hyps.get(id).map(String::as_str).unwrap_or_else(|| {
                    log::warn!("no hypothesis for `{id}`; scored as empty");
                    ""
                });
                let (uw, uc) = (word_errors(r, h), char_errors(r, h));
                table.push_str(&format!("{id}\t{:.4}\t{:.4}\t{r}\t{h}\n", uw.rate()?, uc.rate()?));
                w.add(uw);
                c.add(uc);
            }
            if let Some(p) = &a.out {
                write_text(p, &table)?;
            }
            println!("pretraining\tfinetuning\tdecoding\tWER\tCER");
            println!("{}\t{}\t{}\t{:.2}\t{:.2}", a.pretraining, a.finetuning, a.decoding, 100.0 * w.rate()?, 100.0 * c.rate()?);
        }
        Command::Analyze(a) => {
            cfg.analysis.n_utts = a.n_utts.unwrap_or(cfg.analysis.n_utts);
            cfg.analysis.k = a.k.unwrap_or(cfg.analysis.k);
            cfg.analysis.seed = a.seed.unwrap_or(cfg.analysis.seed);
            check(&cfg)?;
            create_dir(&a.out)?;
            cfg.write(&a.out.join("config.json"))?;
            let c = load_checkpoint::<f32>(&a.checkpoint)?;
            let utts = load_manifest(&a.manifest, &[])?;
            let mut langs: Vec<String> = utts.iter().map(|u| u.language.clone()).collect();
            langs.sort();
            langs.dedup();
            let usage = extract_codebook_usage(&c.model, &utts, &langs, cfg.analysis.n_utts, cfg.analysis.norm, cfg.analysis.seed)?;
            let report = cluster_languages(&usage, cfg.analysis.k, cfg.analysis.seed)?;
            let losses = match a.compare.as_slice() {
                [mono, multi] => Some((read_valid_csv(mono)?, read_valid_csv(multi)?)),
                _ => None,
            };
            emit_report(&report, losses.as_ref().map(|(m, x)| (m, x)), &a.out)?;
            log::info!("analyze languages={} k={} inertia={:.6}", langs.len(), report.k, report.inertia);
        }
        Command::SpeakerStats(a) => {
            if let Some(cut) = a.cut {
                cfg.speaker.cut = cut;
            }
            check(&cfg)?;
            create_dir(&a.out)?;
            let utts = load_manifest(&a.manifest, &[])?;
            let embs = utts.par_iter().map(|u| embed_voice(&u.id, &u.samples)).collect::<Result<Vec<_>>>()?;
            write_embeddings(&a.out.join("embeddings.tsv"), &embs)?;
            let mut by_source: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, u) in utts.iter().enumerate() {
                by_source.entry(&u.language).or_default().push(i);
            }
            let mut reports = Vec::new();
            for (source, idx) in by_source {
                let ids: Vec<String> = idx.iter().map(|&i| embs[i].id.clone()).collect();
                let vecs: Vec<&[f32]> = idx.iter().map(|&i| embs[i].vector.as_slice()).collect();
                let r = estimate_speaker_count(source, &ids, &vecs, cfg.speaker.cut);
                log::info!("speaker-stats source={source} utterances={} clusters={}", ids.len(), r.n_clusters);
                reports.push(r);
            }
            write_text(&a.out.join("clusters.json"), &(serde_json::to_string_pretty(&reports)? + "\n"))?;
            if let Some(lp) = &a.labels {
                let labels = read_transcripts(lp)?;
                let (mut x, mut y) = (Vec::new(), Vec::new());
                for e in &embs {
                    if let Some(l) = labels.get(&e.id) {
                        x.push(e.vector.as_slice());
                        y.push(l.as_str());
                    }
                }
                let model = train_gender_svm(&x, &y, &cfg.speaker.svm)?;
                log::info!("speaker-stats gender_train_accuracy={:.4}", model.train_accuracy);
                write_text(&a.out.join("gender_model.json"), &(serde_json::to_string_pretty(&model)? + "\n"))?;
            }
        }
        Command::GenWadaTable(a) => {
            let t = WadaTable::generate(a.samples, a.seed);
            write_text(&a.out, &t.to_tsv())?;
            log::info!("gen-wada-table rows={} samples={} seed={}", t.snr_db.len(), a.samples, a.seed);
        }
    }
    Ok(())
}

fn check(cfg: &RunConfig) -> Result<()> {
    let errs = cfg.validate();
    if errs.is_empty() { Ok(()) } else { Err(Error::Config(errs)) }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, rec| writeln!(buf, "{} {} {}", rec.level(), rec.target(), rec.args()))
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                Error::Config(list) => {
                    for m in list {
                        log::error!("config: {m}");
                    }
                }
                other => log::error!("{other}"),
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
