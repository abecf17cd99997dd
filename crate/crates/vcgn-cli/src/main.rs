//! Command-line surface: corpus synthesis, training, conversion,
//! evaluation and gradient checking, with stable exit codes.
//!
//! Exit codes: 0 success, 1 check failure, 2 usage/config error,
//! 3 data collision, 4 numeric abort, 5 corrupt artifact,
//! 6 missing data.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use vcgn_core::checkpoint::{CheckpointError, CheckpointFile};
use vcgn_core::corpus::{self, CorpusError, EmotionPair};
use vcgn_core::eval::{self, ConvertDirection, EvalError};
use vcgn_core::gradcheck::suite;
use vcgn_core::trainer::{self, TrainConfig, TrainError, Trainer};

const EXIT_OK: u8 = 0;
const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_DATA_COLLISION: u8 = 3;
const EXIT_NUMERIC_ABORT: u8 = 4;
const EXIT_CORRUPT_ARTIFACT: u8 = 5;
const EXIT_MISSING_DATA: u8 = 6;

const USAGE: &str = "\
vcgn - adversarially trained diffeomorphic F0 contour conversion

USAGE:
  vcgn synth-data --out DIR --pair PAIR --n-train N --n-val V --n-test M --seed S [--overwrite]
  vcgn train --data DIR --out DIR [--config FILE] [--resume CKPT]
  vcgn convert --ckpt FILE --input UTT.csv --direction forward|backward --seed S --out OUT.csv
  vcgn eval --ckpt FILE --data DIR --report FILE --plots DIR --seed S
  vcgn gradcheck [--seed S] [--t N] [--eps E] [--tol T]

PAIR is one of: neutral-angry, neutral-happy, neutral-sad.
All flags are long-form; config file values override defaults, flags
override the config file.
";

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    ExitCode::from(run(&args))
}

fn run(args: &[String]) -> u8 {
    let Some(command) = args.first() else {
        eprintln!("{USAGE}");
        return EXIT_USAGE;
    };
    match command.as_str() {
        "synth-data" => cmd_synth_data(&args[1..]),
        "train" => cmd_train(&args[1..]),
        "convert" => cmd_convert(&args[1..]),
        "eval" => cmd_eval(&args[1..]),
        "gradcheck" => cmd_gradcheck(&args[1..]),
        "help" | "--help" | "-h" => {
            println!("{USAGE}");
            EXIT_OK
        }
        other => {
            eprintln!("unknown command {other:?}\n\n{USAGE}");
            EXIT_USAGE
        }
    }
}

/// Long-form flag parser: `--name value` pairs plus boolean switches.
struct Flags {
    values: BTreeMap<String, String>,
    switches: Vec<String>,
}

impl Flags {
    fn parse(args: &[String], switch_names: &[&str]) -> Result<Self, String> {
        let mut values = BTreeMap::new();
        let mut switches = Vec::new();
        let mut i = 0;
        while i < args.len() {
            let arg = &args[i];
            let Some(name) = arg.strip_prefix("--") else {
                return Err(format!("unexpected argument {arg:?}"));
            };
            if switch_names.contains(&name) {
                switches.push(name.to_string());
                i += 1;
                continue;
            }
            let Some(value) = args.get(i + 1) else {
                return Err(format!("flag --{name} needs a value"));
            };
            if values.insert(name.to_string(), value.clone()).is_some() {
                return Err(format!("flag --{name} given twice"));
            }
            i += 2;
        }
        Ok(Flags { values, switches })
    }

    fn required(&self, name: &str) -> Result<&str, String> {
        self.values
            .get(name)
            .map(|s| s.as_str())
            .ok_or_else(|| format!("missing required flag --{name}"))
    }

    fn optional(&self, name: &str) -> Option<&str> {
        self.values.get(name).map(|s| s.as_str())
    }

    fn required_parsed<T: std::str::FromStr>(&self, name: &str) -> Result<T, String> {
        let raw = self.required(name)?;
        raw.parse()
            .map_err(|_| format!("flag --{name}: cannot parse {raw:?}"))
    }

    fn optional_parsed<T: std::str::FromStr>(&self, name: &str, default: T) -> Result<T, String> {
        match self.optional(name) {
            None => Ok(default),
            Some(raw) => raw
                .parse()
                .map_err(|_| format!("flag --{name}: cannot parse {raw:?}")),
        }
    }

    fn has_switch(&self, name: &str) -> bool {
        self.switches.iter().any(|s| s == name)
    }

    fn reject_unknown(&self, known: &[&str]) -> Result<(), String> {
        for name in self.values.keys().chain(self.switches.iter()) {
            if !known.contains(&name.as_str()) {
                return Err(format!("unknown flag --{name}"));
            }
        }
        Ok(())
    }
}

fn usage_error(msg: &str) -> u8 {
    eprintln!("error: {msg}\n\n{USAGE}");
    EXIT_USAGE
}

fn corpus_error_code(e: &CorpusError) -> u8 {
    match e {
        CorpusError::DataExists(_) => EXIT_DATA_COLLISION,
        CorpusError::BadPair(_) | CorpusError::BadCounts(_) => EXIT_USAGE,
        CorpusError::MissingFile(_) => EXIT_MISSING_DATA,
        CorpusError::Parse { .. } | CorpusError::InvalidContour { .. } => EXIT_USAGE,
        CorpusError::Manifest(_) => EXIT_USAGE,
        CorpusError::Io(_) => EXIT_USAGE,
    }
}

fn train_error_code(e: &TrainError) -> u8 {
    match e {
        TrainError::Config(_) => EXIT_USAGE,
        TrainError::NonFinite { .. } | TrainError::Optim { .. } => EXIT_NUMERIC_ABORT,
        TrainError::Checkpoint(ce) => checkpoint_error_code(ce),
        TrainError::Corpus(ce) => corpus_error_code(ce),
        TrainError::EmptySide { .. } => EXIT_MISSING_DATA,
        TrainError::Tape(_) | TrainError::Warp(_) | TrainError::Net(_) => EXIT_NUMERIC_ABORT,
        TrainError::Io(_) => EXIT_USAGE,
    }
}

fn checkpoint_error_code(e: &CheckpointError) -> u8 {
    match e {
        CheckpointError::Io(io) if io.kind() == std::io::ErrorKind::NotFound => EXIT_MISSING_DATA,
        _ => EXIT_CORRUPT_ARTIFACT,
    }
}

fn eval_error_code(e: &EvalError) -> u8 {
    match e {
        EvalError::MissingTargets { .. } | EvalError::EmptyTestSplit => EXIT_MISSING_DATA,
        EvalError::Corpus(ce) => corpus_error_code(ce),
        _ => EXIT_USAGE,
    }
}

fn cmd_synth_data(args: &[String]) -> u8 {
    let flags = match Flags::parse(args, &["overwrite"]) {
        Ok(f) => f,
        Err(msg) => return usage_error(&msg),
    };
    if let Err(msg) = flags.reject_unknown(&[
        "out",
        "pair",
        "n-train",
        "n-val",
        "n-test",
        "seed",
        "overwrite",
    ]) {
        return usage_error(&msg);
    }
    let parsed = (|| -> Result<(PathBuf, String, usize, usize, usize, u64), String> {
        Ok((
            PathBuf::from(flags.required("out")?),
            flags.required("pair")?.to_string(),
            flags.required_parsed("n-train")?,
            flags.required_parsed("n-val")?,
            flags.required_parsed("n-test")?,
            flags.required_parsed("seed")?,
        ))
    })();
    let (out, pair_str, n_train, n_val, n_test, seed) = match parsed {
        Ok(p) => p,
        Err(msg) => return usage_error(&msg),
    };
    let pair = match EmotionPair::parse(&pair_str) {
        Ok(p) => p,
        Err(e) => return usage_error(&e.to_string()),
    };
    match corpus::synth_corpus(
        pair,
        n_train,
        n_val,
        n_test,
        seed,
        &out,
        flags.has_switch("overwrite"),
    ) {
        Ok(manifest) => {
            println!("{}", manifest.display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            corpus_error_code(&e)
        }
    }
}

fn load_config(path: Option<&str>) -> Result<TrainConfig, String> {
    let Some(path) = path else {
        return Ok(TrainConfig::default());
    };
    let text =
        std::fs::read_to_string(path).map_err(|e| format!("cannot read config {path}: {e}"))?;
    let cfg: TrainConfig =
        serde_json::from_str(&text).map_err(|e| format!("malformed config {path}: {e}"))?;
    let bad = cfg.validate();
    if !bad.is_empty() {
        return Err(format!("invalid config values: {}", bad.join(", ")));
    }
    Ok(cfg)
}

fn cmd_train(args: &[String]) -> u8 {
    let flags = match Flags::parse(args, &[]) {
        Ok(f) => f,
        Err(msg) => return usage_error(&msg),
    };
    if let Err(msg) = flags.reject_unknown(&["data", "config", "out", "resume"]) {
        return usage_error(&msg);
    }
    let data = match flags.required("data") {
        Ok(d) => PathBuf::from(d),
        Err(msg) => return usage_error(&msg),
    };
    let out = match flags.required("out") {
        Ok(d) => PathBuf::from(d),
        Err(msg) => return usage_error(&msg),
    };
    let cfg = match load_config(flags.optional("config")) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_USAGE;
        }
    };
    let resume = flags.optional("resume").map(PathBuf::from);
    match trainer::train(&cfg, &data, &out, resume.as_deref()) {
        Ok(outcome) => {
            println!("{}", outcome.final_checkpoint.display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            train_error_code(&e)
        }
    }
}

fn load_trainer(ckpt: &Path) -> Result<Trainer, (String, u8)> {
    let file =
        CheckpointFile::read(ckpt).map_err(|e| (e.to_string(), checkpoint_error_code(&e)))?;
    Trainer::from_checkpoint(&file).map_err(|e| (e.to_string(), train_error_code(&e)))
}

fn cmd_convert(args: &[String]) -> u8 {
    let flags = match Flags::parse(args, &[]) {
        Ok(f) => f,
        Err(msg) => return usage_error(&msg),
    };
    if let Err(msg) = flags.reject_unknown(&["ckpt", "input", "direction", "seed", "out"]) {
        return usage_error(&msg);
    }
    let parsed = (|| -> Result<(PathBuf, PathBuf, String, u64, PathBuf), String> {
        Ok((
            PathBuf::from(flags.required("ckpt")?),
            PathBuf::from(flags.required("input")?),
            flags.required("direction")?.to_string(),
            flags.required_parsed("seed")?,
            PathBuf::from(flags.required("out")?),
        ))
    })();
    let (ckpt, input, direction_str, seed, out) = match parsed {
        Ok(p) => p,
        Err(msg) => return usage_error(&msg),
    };
    let direction = match direction_str.as_str() {
        "forward" => ConvertDirection::Forward,
        "backward" => ConvertDirection::Backward,
        other => return usage_error(&format!("unknown direction {other:?}")),
    };
    let trainer = match load_trainer(&ckpt) {
        Ok(t) => t,
        Err((msg, code)) => {
            eprintln!("error: {msg}");
            return code;
        }
    };
    let utt = match corpus::load_utterance(&input) {
        Ok(u) => u,
        Err(e) => {
            eprintln!("error: {e}");
            return corpus_error_code(&e);
        }
    };
    match eval::convert_utterance(&trainer, &utt, direction, seed) {
        Ok(converted) => match corpus::save_utterance(&converted, &out) {
            Ok(()) => {
                println!("{}", out.display());
                EXIT_OK
            }
            Err(e) => {
                eprintln!("error: {e}");
                corpus_error_code(&e)
            }
        },
        Err(e) => {
            eprintln!("error: {e}");
            eval_error_code(&e)
        }
    }
}

fn cmd_eval(args: &[String]) -> u8 {
    let flags = match Flags::parse(args, &[]) {
        Ok(f) => f,
        Err(msg) => return usage_error(&msg),
    };
    if let Err(msg) = flags.reject_unknown(&["ckpt", "data", "report", "plots", "seed"]) {
        return usage_error(&msg);
    }
    let parsed = (|| -> Result<(PathBuf, PathBuf, PathBuf, PathBuf, u64), String> {
        Ok((
            PathBuf::from(flags.required("ckpt")?),
            PathBuf::from(flags.required("data")?),
            PathBuf::from(flags.required("report")?),
            PathBuf::from(flags.required("plots")?),
            flags.required_parsed("seed")?,
        ))
    })();
    let (ckpt, data, report_path, plots, seed) = match parsed {
        Ok(p) => p,
        Err(msg) => return usage_error(&msg),
    };
    let trainer = match load_trainer(&ckpt) {
        Ok(t) => t,
        Err((msg, code)) => {
            eprintln!("error: {msg}");
            return code;
        }
    };
    match eval::evaluate(&trainer, &data, seed, Some(&plots)) {
        Ok(report) => {
            if let Err(e) = eval::write_report(&report, &report_path) {
                eprintln!("error: {e}");
                return EXIT_USAGE;
            }
            println!(
                "mean MAE {:.3} Hz vs identity baseline {:.3} Hz over {} utterances",
                report.mean_mae,
                report.mean_identity_mae,
                report.utterances.len()
            );
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            eval_error_code(&e)
        }
    }
}

fn cmd_gradcheck(args: &[String]) -> u8 {
    let flags = match Flags::parse(args, &[]) {
        Ok(f) => f,
        Err(msg) => return usage_error(&msg),
    };
    if let Err(msg) = flags.reject_unknown(&["seed", "t", "eps", "tol"]) {
        return usage_error(&msg);
    }
    let parsed = (|| -> Result<(u64, usize, f64, f64), String> {
        Ok((
            flags.optional_parsed("seed", 0u64)?,
            flags.optional_parsed("t", 8usize)?,
            flags.optional_parsed("eps", 1e-5f64)?,
            flags.optional_parsed("tol", 1e-4f64)?,
        ))
    })();
    let (seed, t, eps, tol) = match parsed {
        Ok(p) => p,
        Err(msg) => return usage_error(&msg),
    };
    if t == 0 || !(eps > 0.0) || !(tol > 0.0) {
        return usage_error("gradcheck needs --t >= 1, --eps > 0, --tol > 0");
    }

    type CheckFn =
        fn(
            usize,
            u64,
            f64,
            f64,
        )
            -> Result<vcgn_core::gradcheck::GradCheckReport, vcgn_core::gradcheck::GradCheckError>;
    let groups: [(&str, CheckFn); 3] = [
        ("warp", suite::check_warp),
        ("generator-objective", suite::check_generator_loss),
        ("discriminator-objective", suite::check_discriminator_loss),
    ];
    let mut all_passed = true;
    for (name, check) in groups {
        match check(t, seed, eps, tol) {
            Ok(report) => {
                let status = if report.passed { "PASS" } else { "FAIL" };
                println!(
                    "{name}: max rel err {:.3e} (tol {:.1e}) {status}",
                    report.max_rel_err, tol
                );
                if !report.passed {
                    all_passed = false;
                    if let Some(worst) = report.first_failure() {
                        eprintln!(
                            "  failing tensor {}: analytic {:.6e} vs numeric {:.6e}",
                            worst.name, worst.analytic, worst.numeric
                        );
                    }
                }
            }
            Err(e) => {
                eprintln!("{name}: error: {e}");
                all_passed = false;
            }
        }
    }
    if all_passed {
        EXIT_OK
    } else {
        EXIT_CHECK_FAILED
    }
}
