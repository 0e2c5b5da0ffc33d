//! Batch command line for the note-alignment toolkit.
//!
//! Four subcommands: `align` matches two MIDI files, `augment` builds
//! synthetic pairs from a corpus, `train` fits a model, `eval` scores a
//! predicted alignment against ground truth. Reports go to stdout,
//! diagnostics to stderr, and every command is deterministic given its
//! full flag set (including `--seed`).
//!
//! Exit codes: 0 success, 2 usage (clap), 3 input parse error, 4 checkpoint
//! error, 5 validation error, 6 i/o error, 1 anything else.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::s;
use serde_json::json;

use gluenote::alignment::{alignment_to_string, load_alignment};
use gluenote::augment::{make_eval_mismatch_pair, make_training_pair, AugmentationConfig};
use gluenote::eval::{match_prf, pitch_onset_similarity};
use gluenote::extract::{dtw_extract, greedy_extract, head_extract};
use gluenote::model::{
    forward_pair, infer_global_similarity, load_checkpoint, train, Checkpoint, ModelConfig,
    Parameters, Preset, TrainData, TrainOptions, TrainState,
};
use gluenote::tokenizer::{tokenize, TokenBlockSequence, TokenVocabulary, MAX_WINDOW_NOTES};
use gluenote::{AlignmentPair, Error, MatchPrediction, NoteSequence, Result};

/// Environment variable holding the directory searched for `<model>.gnck`
/// when `--checkpoint` is not given.
const CHECKPOINT_DIR_VAR: &str = "GLUENOTE_CHECKPOINT_DIR";

#[derive(Parser)]
#[command(
    name = "gluenote",
    version,
    about = "Symbolic note alignment: transformer similarity matrices plus DTW decoding"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Align two MIDI files and write the matched notes.
    Align(AlignArgs),
    /// Generate augmented training or evaluation pairs from a MIDI corpus.
    Augment(AugmentArgs),
    /// Train a model on a MIDI corpus.
    Train(TrainArgs),
    /// Score a predicted alignment against a ground-truth alignment.
    Eval(EvalArgs),
}

#[derive(Args)]
struct AlignArgs {
    /// First MIDI file ("s1", the match-from side).
    midi_a: PathBuf,
    /// Second MIDI file ("s2", the match-to side).
    midi_b: PathBuf,
    /// How matches are read off the similarity matrix.
    #[arg(long, value_enum, default_value_t = ExtractorChoice::Dtw)]
    extractor: ExtractorChoice,
    /// Model size; selects `<model>.gnck` under $GLUENOTE_CHECKPOINT_DIR
    /// when --checkpoint is not given.
    #[arg(long, value_enum, default_value_t = ModelChoice::Tiny)]
    model: ModelChoice,
    /// Checkpoint file (overrides the --model based lookup).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Where to write the alignment.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum ExtractorChoice {
    /// Mutual-nearest assignment on the learned similarity matrix.
    Greedy,
    /// Decoder-head logits, windowed for long files.
    Head,
    /// Weighted DTW plus pitch-wise onset refinement.
    Dtw,
    /// DTW on the pitch/onset heuristic similarity; needs no checkpoint.
    BaselineDtw,
}

impl ExtractorChoice {
    fn name(self) -> &'static str {
        match self {
            ExtractorChoice::Greedy => "greedy",
            ExtractorChoice::Head => "head",
            ExtractorChoice::Dtw => "dtw",
            ExtractorChoice::BaselineDtw => "baseline-dtw",
        }
    }
}

#[derive(Copy, Clone, ValueEnum)]
enum ModelChoice {
    Tiny,
    Small,
    Mid,
    Large,
}

impl ModelChoice {
    fn name(self) -> &'static str {
        match self {
            ModelChoice::Tiny => "tiny",
            ModelChoice::Small => "small",
            ModelChoice::Mid => "mid",
            ModelChoice::Large => "large",
        }
    }
}

#[derive(Copy, Clone, ValueEnum)]
enum PresetChoice {
    Tiny,
    Small,
    Mid,
    Large,
}

impl PresetChoice {
    fn name(self) -> &'static str {
        match self {
            PresetChoice::Tiny => "tiny",
            PresetChoice::Small => "small",
            PresetChoice::Mid => "mid",
            PresetChoice::Large => "large",
        }
    }
}

impl From<PresetChoice> for Preset {
    fn from(choice: PresetChoice) -> Preset {
        match choice {
            PresetChoice::Tiny => Preset::Tiny,
            PresetChoice::Small => Preset::Small,
            PresetChoice::Mid => Preset::Mid,
            PresetChoice::Large => Preset::Large,
        }
    }
}

#[derive(Args)]
struct AugmentArgs {
    /// Directory of source MIDI files (only files with >= 512 notes are used).
    corpus: PathBuf,
    /// Augmentation config (TOML); defaults to the published probabilities.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also insert one random mismatching segment per 512-note window on each
    /// side, marking the copies unmatched (evaluation pairs).
    #[arg(long, value_name = "FRACTION")]
    eval_mismatch: Option<f64>,
    /// Pairs to generate from each corpus file.
    #[arg(long, default_value_t = 1)]
    per_file: usize,
    /// Run directory for the generated pairs and manifest.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory of training MIDI files (only files with >= 512 notes are used).
    corpus: PathBuf,
    /// Total step target; resuming continues until this count is reached.
    #[arg(long, default_value_t = 200_000)]
    steps: u64,
    #[arg(long, value_enum, default_value_t = PresetChoice::Tiny)]
    preset: PresetChoice,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Augmentation config (TOML); defaults to the published probabilities.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Continue from this checkpoint instead of initializing fresh weights.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Held-out pairs generated from the corpus for validation (0 disables).
    #[arg(long, default_value_t = 4)]
    val_pairs: usize,
    /// Steps between validation passes (0 = only at the end).
    #[arg(long, default_value_t = 50)]
    validation_interval: u64,
    /// Steps between checkpoint saves (0 = only at the end).
    #[arg(long, default_value_t = 1000)]
    checkpoint_interval: u64,
    /// Stop early once validation accuracy reaches this value.
    #[arg(long)]
    target_accuracy: Option<f64>,
    /// Steps between stderr progress lines (0 = never).
    #[arg(long, default_value_t = 100)]
    log_every: u64,
    /// Run directory for checkpoints, metrics, and the manifest.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted alignment file.
    pred: PathBuf,
    /// Ground-truth alignment file.
    truth: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Align(args) => cmd_align(args),
        Command::Augment(args) => cmd_augment(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::MidiParse { .. }
        | Error::AlignmentParse { .. }
        | Error::Config(_)
        | Error::TokenDecode(_) => 3,
        Error::Checkpoint(_) => 4,
        Error::Validation(_)
        | Error::EmptySequence { .. }
        | Error::Shape(_)
        | Error::Divergence { .. } => 5,
        Error::Io { .. } => 6,
    }
}

fn load_sequence(path: &Path) -> Result<NoteSequence> {
    let loaded = gluenote::load_midi(path)?;
    if loaded.dangling_note_ons > 0 {
        eprintln!(
            "note: {} dangling note-on(s) in {} closed at end of track",
            loaded.dangling_note_ons,
            path.display()
        );
    }
    Ok(loaded.sequence)
}

/// Sorted `.mid`/`.midi` paths directly inside `dir`.
fn midi_files_in(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        let is_midi = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("mid") || e.eq_ignore_ascii_case("midi"));
        if path.is_file() && is_midi {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::validation(format!(
            "no MIDI files in {}",
            dir.display()
        )));
    }
    Ok(files)
}

fn write_manifest(dir: &Path, manifest: &serde_json::Value) -> Result<PathBuf> {
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::validation(format!("manifest serialization: {e}")))?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

// ---------------------------------------------------------------------------
// align

fn resolve_checkpoint(args: &AlignArgs) -> Result<PathBuf> {
    let path = match &args.checkpoint {
        Some(p) => p.clone(),
        None => match std::env::var_os(CHECKPOINT_DIR_VAR) {
            Some(dir) => PathBuf::from(dir).join(format!("{}.gnck", args.model.name())),
            None => {
                return Err(Error::Checkpoint(format!(
                    "--extractor {} needs a model: pass --checkpoint or set ${CHECKPOINT_DIR_VAR}",
                    args.extractor.name()
                )))
            }
        },
    };
    if !path.is_file() {
        return Err(Error::Checkpoint(format!(
            "checkpoint not found: {}",
            path.display()
        )));
    }
    Ok(path)
}

fn cmd_align(args: AlignArgs) -> Result<()> {
    let started = Instant::now();
    let s1 = load_sequence(&args.midi_a)?;
    let s2 = load_sequence(&args.midi_b)?;

    let pred = match args.extractor {
        ExtractorChoice::BaselineDtw => {
            let sim = pitch_onset_similarity(&s1, &s2)?;
            dtw_extract(&sim, &s1, &s2)?
        }
        _ => {
            let ckpt = load_checkpoint(resolve_checkpoint(&args)?)?;
            match args.extractor {
                ExtractorChoice::Greedy => greedy_extract(&infer_global_similarity(&s1, &s2, &ckpt)?),
                ExtractorChoice::Dtw => {
                    dtw_extract(&infer_global_similarity(&s1, &s2, &ckpt)?, &s1, &s2)?
                }
                ExtractorChoice::Head => head_align(&s1, &s2, &ckpt)?,
                ExtractorChoice::BaselineDtw => unreachable!(),
            }
        }
    };
    pred.validate(s1.len(), s2.len())?;

    fs::write(&args.out, alignment_to_string(&pred.pairs)).map_err(|e| Error::io(&args.out, e))?;
    let matched = pred
        .pairs
        .iter()
        .filter(|p| p.real_pair().is_some())
        .count();
    println!("s1-notes\t{}", s1.len());
    println!("s2-notes\t{}", s2.len());
    println!("extractor\t{}", args.extractor.name());
    println!("matched\t{matched}");
    println!("alignment\t{}", args.out.display());
    println!("runtime-seconds\t{:.3}", started.elapsed().as_secs_f64());
    Ok(())
}

/// Decoder-head alignment. Long files are split into aligned consecutive
/// 512-note windows; the head predicts within each window, which keeps its
/// class space identical to training. Matches never cross a window boundary.
fn head_align(s1: &NoteSequence, s2: &NoteSequence, ckpt: &Checkpoint) -> Result<MatchPrediction> {
    let config = &ckpt.config;
    let vocab = &ckpt.vocab;
    config.validate()?;
    let window = config.max_side - 1;

    let mut to_s2: Vec<Option<usize>> = vec![None; s1.len()];
    let mut claimed: Vec<Option<usize>> = vec![None; s2.len()];
    let mut start = 0;
    while start < s1.len().max(s2.len()) {
        let take1 = s1.len().saturating_sub(start).min(window);
        let take2 = s2.len().saturating_sub(start).min(window);
        if take2 > 0 {
            let pad = |seq: &NoteSequence, take: usize| -> Result<TokenBlockSequence> {
                tokenize(&seq.window(start.min(seq.len()), take)?, vocab)?
                    .prepend_default(vocab)?
                    .padded_to(config.max_side, vocab)
            };
            let pass = forward_pair(&pad(s1, take1)?, &pad(s2, take2)?, &ckpt.params, config, true)?;
            let logits = pass.head_logits.expect("head requested");
            // Restrict classes to this window's real notes plus the default
            // so padding slots can never be assigned.
            let local = logits.slice(s![..take2, ..take1 + 1]).to_owned();
            for pair in head_extract(&local).pairs {
                if let Some((i, j)) = pair.real_pair() {
                    to_s2[start + i] = Some(start + j);
                    claimed[start + j] = Some(start + i);
                }
            }
        }
        start += window;
    }

    let mut pairs = Vec::with_capacity(s1.len() + s2.len());
    for (i, slot) in to_s2.iter().enumerate() {
        match slot {
            Some(j) => pairs.push(AlignmentPair::matched(i, *j)),
            None => pairs.push(AlignmentPair::unmatched_s1(i)),
        }
    }
    for (j, slot) in claimed.iter().enumerate() {
        if slot.is_none() {
            pairs.push(AlignmentPair::unmatched_s2(j));
        }
    }
    Ok(MatchPrediction {
        pairs,
        provenance: "head".into(),
    })
}

// ---------------------------------------------------------------------------
// augment

fn load_aug_config(path: &Option<PathBuf>) -> Result<AugmentationConfig> {
    let config = match path {
        Some(p) => AugmentationConfig::load(p)?,
        None => AugmentationConfig::default(),
    };
    config.validate()?;
    Ok(config)
}

fn usable_corpus(dir: &Path) -> Result<Vec<NoteSequence>> {
    let mut sequences = Vec::new();
    for path in midi_files_in(dir)? {
        let seq = load_sequence(&path)?;
        if seq.len() < MAX_WINDOW_NOTES {
            eprintln!(
                "note: skipping {} ({} notes, need {MAX_WINDOW_NOTES})",
                path.display(),
                seq.len()
            );
        } else {
            sequences.push(seq);
        }
    }
    if sequences.is_empty() {
        return Err(Error::validation(format!(
            "no MIDI file in {} has at least {MAX_WINDOW_NOTES} notes",
            dir.display()
        )));
    }
    Ok(sequences)
}

fn pair_seed(master: u64, index: u64) -> u64 {
    master.wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

fn cmd_augment(args: AugmentArgs) -> Result<()> {
    let config = load_aug_config(&args.config)?;
    if args.per_file == 0 {
        return Err(Error::validation("--per-file must be at least 1"));
    }
    let sequences = usable_corpus(&args.corpus)?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;

    let mut entries = Vec::new();
    let mut index = 0u64;
    for seq in &sequences {
        for _ in 0..args.per_file {
            let seed = pair_seed(args.seed, index);
            let (mut pair, stats) = make_training_pair(seq, &config, seed)?;
            if let Some(fraction) = args.eval_mismatch {
                pair = make_eval_mismatch_pair(&pair.s1, &pair.s2, &pair.truth, fraction, !seed)?;
            }
            pair.validate()?;

            let base = format!("pair_{index:04}");
            let s1_path = args.out.join(format!("{base}_s1.mid"));
            let s2_path = args.out.join(format!("{base}_s2.mid"));
            let truth_path = args.out.join(format!("{base}.align"));
            gluenote::save_midi(&pair.s1, &s1_path)?;
            gluenote::save_midi(&pair.s2, &s2_path)?;
            fs::write(&truth_path, alignment_to_string(&pair.truth))
                .map_err(|e| Error::io(&truth_path, e))?;

            entries.push(json!({
                "pair": base,
                "source": seq.source_path,
                "seed": seed,
                "s1": s1_path.file_name().unwrap().to_string_lossy(),
                "s2": s2_path.file_name().unwrap().to_string_lossy(),
                "truth": truth_path.file_name().unwrap().to_string_lossy(),
                "s1_notes": pair.s1.len(),
                "s2_notes": pair.s2.len(),
                "stats": stats,
            }));
            index += 1;
        }
    }

    let manifest = json!({
        "command": "augment",
        "seed": args.seed,
        "eval_mismatch": args.eval_mismatch,
        "per_file": args.per_file,
        "config": config,
        "pairs": entries,
    });
    let manifest_path = write_manifest(&args.out, &manifest)?;
    println!("pairs\t{index}");
    println!("manifest\t{}", manifest_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// train

fn cmd_train(args: TrainArgs) -> Result<()> {
    let aug = load_aug_config(&args.config)?;
    let sequences = usable_corpus(&args.corpus)?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;

    let vocab = TokenVocabulary::default();
    let mut ckpt = match &args.resume {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            eprintln!(
                "resuming from {} at step {}",
                path.display(),
                ckpt.state.step
            );
            ckpt
        }
        None => {
            let config = ModelConfig::preset(args.preset.into(), &vocab);
            Checkpoint {
                params: Parameters::init(&config, args.seed),
                config,
                vocab: vocab.clone(),
                state: TrainState::fresh(args.seed),
                adam: None,
            }
        }
    };

    // Held-out pairs for validation; seeded outside the training stream.
    let mut validation = Vec::new();
    for i in 0..args.val_pairs {
        let seed = pair_seed(args.seed ^ 0x5641_4c49_4441_5445, i as u64);
        let (pair, _) = make_training_pair(&sequences[i % sequences.len()], &aug, seed)?;
        validation.push(pair);
    }

    let checkpoint_path = args.out.join("checkpoint.gnck");
    let metrics_path = args.out.join("metrics.jsonl");
    let options = TrainOptions {
        steps: args.steps,
        with_head: true,
        validation_interval: args.validation_interval,
        target_accuracy: args.target_accuracy,
        checkpoint_path: Some(checkpoint_path.clone()),
        checkpoint_interval: args.checkpoint_interval,
        metrics_path: Some(metrics_path.clone()),
        log_every: args.log_every,
    };
    let data = TrainData::Corpus {
        sequences: &sequences,
        augment: &aug,
    };
    let report = train(&data, &validation, &mut ckpt, &options)?;

    let manifest = json!({
        "command": "train",
        "preset": args.preset.name(),
        "config": ckpt.config,
        "steps": args.steps,
        "seed": args.seed,
        "resumed_from": args.resume.as_ref().map(|p| p.display().to_string()),
        "corpus_files": sequences.iter().map(|s| s.source_path.clone()).collect::<Vec<_>>(),
        "val_pairs": args.val_pairs,
        "checkpoint": checkpoint_path.file_name().unwrap().to_string_lossy(),
        "metrics": metrics_path.file_name().unwrap().to_string_lossy(),
        "steps_run": report.steps_run,
        "final_tl": report.final_loss,
        "final_vl": report.final_vl,
        "final_va": report.final_va,
        "early_stopped": report.early_stopped,
    });
    write_manifest(&args.out, &manifest)?;

    println!("steps-run\t{}", report.steps_run);
    if let Some(tl) = report.final_loss {
        println!("final-tl\t{tl:.6}");
    }
    if let Some(vl) = report.final_vl {
        println!("final-vl\t{vl:.6}");
    }
    if let Some(va) = report.final_va {
        println!("final-va\t{va:.6}");
    }
    println!("early-stopped\t{}", report.early_stopped);
    println!("checkpoint\t{}", checkpoint_path.display());
    println!("metrics\t{}", metrics_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// eval

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let pred_pairs = load_alignment(&args.pred)?;
    let truth = load_alignment(&args.truth)?;
    let pred = MatchPrediction {
        pairs: pred_pairs,
        provenance: args.pred.display().to_string(),
    };
    let score = match_prf(&pred, &truth)?;
    println!("true-positives\t{}", score.true_positives);
    println!("false-positives\t{}", score.false_positives);
    println!("false-negatives\t{}", score.false_negatives);
    println!("precision\t{:.6}", score.precision);
    println!("recall\t{:.6}", score.recall);
    println!("f-score\t{:.6}", score.f_score);
    Ok(())
}
