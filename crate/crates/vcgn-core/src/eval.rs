//! Objective evaluation against parallel targets, single-utterance
//! conversion, and plot emission.
//!
//! Every neutral test utterance is converted with the forward generator
//! (sampling on, one draw per utterance keyed by the eval seed and the
//! utterance's position), then compared against its parallel emotional
//! target by mean absolute error, alongside the identity baseline.
//! Per-utterance work is independent and runs in parallel when the
//! `parallel` feature is on; per-utterance RNG streams keep the result
//! identical either way.

use crate::corpus::{self, CorpusManifest, Split, Utterance, FRAMES};
use crate::nets;
use crate::rng::Rng;
use crate::trainer::{prepare_utterances, Trainer};
use crate::warp::{generate_f0, Contour, Momenta, WarpError};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::{Path, PathBuf};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug)]
pub enum EvalError {
    LengthMismatch { a: usize, b: usize },
    MissingTargets { orphaned: Vec<String> },
    EmptyTestSplit,
    Corpus(corpus::CorpusError),
    Net(nets::NetError),
    Warp(WarpError),
    Io(std::io::Error),
    Report(String),
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::LengthMismatch { a, b } => write!(f, "contour lengths differ: {a} vs {b}"),
            EvalError::MissingTargets { orphaned } => {
                write!(
                    f,
                    "test utterances without parallel targets: {}",
                    orphaned.join(", ")
                )
            }
            EvalError::EmptyTestSplit => write!(f, "test split has no source-side utterances"),
            EvalError::Corpus(e) => write!(f, "{e}"),
            EvalError::Net(e) => write!(f, "{e}"),
            EvalError::Warp(e) => write!(f, "{e}"),
            EvalError::Io(e) => write!(f, "io error: {e}"),
            EvalError::Report(msg) => write!(f, "report error: {msg}"),
        }
    }
}

impl std::error::Error for EvalError {}

impl From<corpus::CorpusError> for EvalError {
    fn from(e: corpus::CorpusError) -> Self {
        EvalError::Corpus(e)
    }
}
impl From<nets::NetError> for EvalError {
    fn from(e: nets::NetError) -> Self {
        EvalError::Net(e)
    }
}
impl From<WarpError> for EvalError {
    fn from(e: WarpError) -> Self {
        EvalError::Warp(e)
    }
}
impl From<std::io::Error> for EvalError {
    fn from(e: std::io::Error) -> Self {
        EvalError::Io(e)
    }
}

/// Mean absolute error between two contours, Hz.
pub fn mae(a: &Contour, b: &Contour) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch {
            a: a.len(),
            b: b.len(),
        });
    }
    let mut acc = 0.0;
    for (x, y) in a.values().iter().zip(b.values().iter()) {
        acc += (x - y).abs();
    }
    Ok(acc / a.len() as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UtteranceEval {
    pub id: String,
    pub mae_converted: f64,
    pub mae_identity: f64,
    pub disc_score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerFrameStats {
    pub source_mean: Vec<f64>,
    pub source_std: Vec<f64>,
    pub converted_mean: Vec<f64>,
    pub converted_std: Vec<f64>,
    pub target_mean: Vec<f64>,
    pub target_std: Vec<f64>,
}

/// Evaluation artifact. Serialized with keys in this declaration order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub pair: String,
    pub eval_seed: u64,
    pub utterances: Vec<UtteranceEval>,
    pub mean_mae: f64,
    pub median_mae: f64,
    pub mean_identity_mae: f64,
    pub median_identity_mae: f64,
    pub disc_score_mean: f64,
    pub per_frame: PerFrameStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvertDirection {
    /// Source emotion to target emotion (gen_ab).
    Forward,
    /// Target emotion back to source emotion (gen_ba).
    Backward,
}

/// Convert one utterance with a trained model: window to the fixed frame
/// count, emit momenta (sampling on, seeded), warp. The spectrum of the
/// windowed utterance passes through unchanged.
pub fn convert_utterance(
    trainer: &Trainer,
    utt: &Utterance,
    direction: ConvertDirection,
    seed: u64,
) -> Result<Utterance, EvalError> {
    let windowed = corpus::window_128(utt, trainer.cfg.seed ^ fnv1a(&utt.id));
    let spectrum_std = trainer.stats.standardize(&windowed.spectrum);
    let params = match direction {
        ConvertDirection::Forward => &trainer.gen_ab,
        ConvertDirection::Backward => &trainer.gen_ba,
    };
    let mut rng = Rng::from_seed(seed);
    let masks = nets::draw_generator_masks(&mut rng, &trainer.cfg.net, windowed.contour.len());
    let momenta_values = nets::generator_momenta_plain(
        params,
        &trainer.cfg.net,
        &spectrum_std,
        windowed.contour.values(),
        Some(&masks),
    )?;
    let momenta = Momenta::new(momenta_values).map_err(EvalError::Warp)?;
    let converted = generate_f0(&momenta, &windowed.contour, &trainer.cfg.warp)?;
    Ok(Utterance {
        id: windowed.id.clone(),
        emotion: match direction {
            ConvertDirection::Forward => trainer.pair_target.clone(),
            ConvertDirection::Backward => trainer.pair_source.clone(),
        },
        contour: converted,
        spectrum: windowed.spectrum.clone(),
        parallel_group: windowed.parallel_group.clone(),
        voicing: vec![true; FRAMES],
    })
}

fn fnv1a(s: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

struct EvalCase {
    id: String,
    source: Contour,
    spectrum_std: crate::tensor::Tensor,
    target: Contour,
}

fn collect_cases(
    data_dir: &Path,
    manifest: &CorpusManifest,
    trainer: &Trainer,
) -> Result<Vec<EvalCase>, EvalError> {
    let test = corpus::load_split(data_dir, manifest, Split::Test)?;
    let sources: Vec<&Utterance> = test
        .iter()
        .filter(|u| u.emotion == trainer.pair_source)
        .collect();
    if sources.is_empty() {
        return Err(EvalError::EmptyTestSplit);
    }
    let mut orphaned = Vec::new();
    let mut cases = Vec::new();
    for s in &sources {
        let target = s.parallel_group.as_ref().and_then(|g| {
            test.iter().find(|u| {
                u.emotion == trainer.pair_target && u.parallel_group.as_deref() == Some(g)
            })
        });
        match target {
            Some(t) => {
                let sp =
                    prepare_utterances(std::slice::from_ref(*s), &trainer.stats, trainer.cfg.seed)
                        .remove(0);
                let tp =
                    prepare_utterances(std::slice::from_ref(t), &trainer.stats, trainer.cfg.seed)
                        .remove(0);
                cases.push(EvalCase {
                    id: s.id.clone(),
                    source: sp.contour,
                    spectrum_std: sp.spectrum_std,
                    target: tp.contour,
                });
            }
            None => orphaned.push(s.id.clone()),
        }
    }
    if !orphaned.is_empty() {
        return Err(EvalError::MissingTargets { orphaned });
    }
    Ok(cases)
}

struct CaseResult {
    eval: UtteranceEval,
    source: Vec<f64>,
    converted: Vec<f64>,
    target: Vec<f64>,
}

fn run_case(
    trainer: &Trainer,
    case: &EvalCase,
    eval_seed: u64,
    index: usize,
) -> Result<CaseResult, EvalError> {
    let mut rng = Rng::from_seed(eval_seed).derive(index as u64);
    let masks = nets::draw_generator_masks(&mut rng, &trainer.cfg.net, case.source.len());
    let momenta_values = nets::generator_momenta_plain(
        &trainer.gen_ab,
        &trainer.cfg.net,
        &case.spectrum_std,
        case.source.values(),
        Some(&masks),
    )?;
    let momenta = Momenta::new(momenta_values).map_err(EvalError::Warp)?;
    let converted = generate_f0(&momenta, &case.source, &trainer.cfg.warp)?;
    let mae_converted = mae(&converted, &case.target)?;
    let mae_identity = mae(&case.source, &case.target)?;
    let logit = nets::discriminator_logit_plain(
        &trainer.disc,
        &trainer.cfg.net,
        case.source.values(),
        converted.values(),
    )?;
    Ok(CaseResult {
        eval: UtteranceEval {
            id: case.id.clone(),
            mae_converted,
            mae_identity,
            disc_score: nets::sigmoid_scalar(logit),
        },
        source: case.source.values().to_vec(),
        converted: converted.values().to_vec(),
        target: case.target.values().to_vec(),
    })
}

fn median(sorted: &mut [f64]) -> f64 {
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn frame_stats(contours: &[&[f64]]) -> (Vec<f64>, Vec<f64>) {
    let n = contours.len() as f64;
    let mut mean = vec![0.0; FRAMES];
    let mut std = vec![0.0; FRAMES];
    for t in 0..FRAMES {
        let mut s = 0.0;
        let mut sq = 0.0;
        for c in contours {
            s += c[t];
            sq += c[t] * c[t];
        }
        mean[t] = s / n;
        std[t] = (sq / n - mean[t] * mean[t]).max(0.0).sqrt();
    }
    (mean, std)
}

/// Evaluate a trained model on the test split; optionally write per
/// utterance plot files into `plot_dir`.
pub fn evaluate(
    trainer: &Trainer,
    data_dir: &Path,
    eval_seed: u64,
    plot_dir: Option<&Path>,
) -> Result<EvalReport, EvalError> {
    let manifest = corpus::load_manifest(data_dir)?;
    let cases = collect_cases(data_dir, &manifest, trainer)?;

    let indexed: Vec<(usize, &EvalCase)> = cases.iter().enumerate().collect();
    #[cfg(feature = "parallel")]
    let results: Result<Vec<CaseResult>, EvalError> = indexed
        .par_iter()
        .map(|(i, c)| run_case(trainer, c, eval_seed, *i))
        .collect();
    #[cfg(not(feature = "parallel"))]
    let results: Result<Vec<CaseResult>, EvalError> = indexed
        .iter()
        .map(|(i, c)| run_case(trainer, c, eval_seed, *i))
        .collect();
    let results = results?;

    if let Some(dir) = plot_dir {
        std::fs::create_dir_all(dir)?;
        for r in &results {
            let prefix = dir.join(&r.eval.id);
            emit_plot(&r.source, &r.converted, &r.target, &prefix)?;
        }
    }

    let utterances: Vec<UtteranceEval> = results.iter().map(|r| r.eval.clone()).collect();
    let n = utterances.len() as f64;
    let mean_mae = utterances.iter().map(|u| u.mae_converted).sum::<f64>() / n;
    let mean_identity_mae = utterances.iter().map(|u| u.mae_identity).sum::<f64>() / n;
    let disc_score_mean = utterances.iter().map(|u| u.disc_score).sum::<f64>() / n;
    let mut conv: Vec<f64> = utterances.iter().map(|u| u.mae_converted).collect();
    let mut ident: Vec<f64> = utterances.iter().map(|u| u.mae_identity).collect();
    let median_mae = median(&mut conv);
    let median_identity_mae = median(&mut ident);

    let src_refs: Vec<&[f64]> = results.iter().map(|r| r.source.as_slice()).collect();
    let conv_refs: Vec<&[f64]> = results.iter().map(|r| r.converted.as_slice()).collect();
    let tgt_refs: Vec<&[f64]> = results.iter().map(|r| r.target.as_slice()).collect();
    let (source_mean, source_std) = frame_stats(&src_refs);
    let (converted_mean, converted_std) = frame_stats(&conv_refs);
    let (target_mean, target_std) = frame_stats(&tgt_refs);

    Ok(EvalReport {
        pair: manifest.pair.clone(),
        eval_seed,
        utterances,
        mean_mae,
        median_mae,
        mean_identity_mae,
        median_identity_mae,
        disc_score_mean,
        per_frame: PerFrameStats {
            source_mean,
            source_std,
            converted_mean,
            converted_std,
            target_mean,
            target_std,
        },
    })
}

pub fn write_report(report: &EvalReport, path: &Path) -> Result<(), EvalError> {
    let json =
        serde_json::to_string_pretty(report).map_err(|e| EvalError::Report(e.to_string()))?;
    corpus::write_atomic(path, json.as_bytes())?;
    Ok(())
}

/// Write `<prefix>.csv` (t,source,converted,target) and `<prefix>.svg`
/// (three polylines over an 800x400 viewbox with Hz-annotated axes).
pub fn emit_plot(
    source: &[f64],
    converted: &[f64],
    target: &[f64],
    path_prefix: &Path,
) -> Result<(), EvalError> {
    if source.len() != converted.len() || source.len() != target.len() {
        return Err(EvalError::LengthMismatch {
            a: source.len(),
            b: converted.len().min(target.len()),
        });
    }
    let mut csv = String::from("t,source,converted,target\n");
    for t in 0..source.len() {
        csv.push_str(&format!(
            "{t},{},{},{}\n",
            source[t], converted[t], target[t]
        ));
    }
    let csv_path = PathBuf::from(format!("{}.csv", path_prefix.display()));
    corpus::write_atomic(&csv_path, csv.as_bytes())?;

    let svg = render_svg(source, converted, target);
    let svg_path = PathBuf::from(format!("{}.svg", path_prefix.display()));
    corpus::write_atomic(&svg_path, svg.as_bytes())?;
    Ok(())
}

fn render_svg(source: &[f64], converted: &[f64], target: &[f64]) -> String {
    const W: f64 = 800.0;
    const H: f64 = 400.0;
    const ML: f64 = 60.0;
    const MR: f64 = 15.0;
    const MT: f64 = 15.0;
    const MB: f64 = 40.0;

    let all = source.iter().chain(converted).chain(target);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in all {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let lo = (lo / 20.0).floor() * 20.0;
    let hi = (hi / 20.0).ceil() * 20.0;
    let span = (hi - lo).max(1.0);
    let n = source.len().max(2) as f64;

    let x_of = |t: usize| ML + (W - ML - MR) * t as f64 / (n - 1.0);
    let y_of = |v: f64| MT + (H - MT - MB) * (1.0 - (v - lo) / span);

    let polyline = |vals: &[f64], color: &str, label: &str| {
        let points: Vec<String> = vals
            .iter()
            .enumerate()
            .map(|(t, &v)| format!("{:.2},{:.2}", x_of(t), y_of(v)))
            .collect();
        format!(
            "  <polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" data-series=\"{label}\" points=\"{}\"/>\n",
            points.join(" ")
        )
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {W} {H}\">\n"
    ));
    svg.push_str(&format!(
        "  <rect x=\"0\" y=\"0\" width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"
    ));
    // Axes.
    svg.push_str(&format!(
        "  <line x1=\"{ML}\" y1=\"{MT}\" x2=\"{ML}\" y2=\"{}\" stroke=\"black\"/>\n",
        H - MB
    ));
    svg.push_str(&format!(
        "  <line x1=\"{ML}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        H - MB,
        W - MR,
        H - MB
    ));
    // Y ticks in Hz.
    let ticks = 5;
    for k in 0..=ticks {
        let v = lo + span * k as f64 / ticks as f64;
        let y = y_of(v);
        svg.push_str(&format!(
            "  <line x1=\"{}\" y1=\"{y:.2}\" x2=\"{ML}\" y2=\"{y:.2}\" stroke=\"black\"/>\n",
            ML - 5.0
        ));
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"end\">{v:.0} Hz</text>\n",
            ML - 8.0,
            y + 4.0
        ));
    }
    // X label (frames).
    svg.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"middle\">frame</text>\n",
        (ML + W - MR) / 2.0,
        H - 10.0
    ));
    svg.push_str(&polyline(source, "#6b6b6b", "source"));
    svg.push_str(&polyline(converted, "#d62728", "converted"));
    svg.push_str(&polyline(target, "#2ca02c", "target"));
    // Legend.
    let legend = [
        ("#6b6b6b", "source"),
        ("#d62728", "converted"),
        ("#2ca02c", "target"),
    ];
    for (i, (color, label)) in legend.iter().enumerate() {
        let y = MT + 14.0 + 16.0 * i as f64;
        svg.push_str(&format!(
            "  <rect x=\"{}\" y=\"{:.2}\" width=\"12\" height=\"4\" fill=\"{color}\"/>\n",
            W - MR - 110.0,
            y
        ));
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{:.2}\" font-size=\"11\">{label}</text>\n",
            W - MR - 92.0,
            y + 5.0
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::EmotionPair;
    use crate::trainer::TrainConfig;
    use std::fs;

    fn c(values: &[f64]) -> Contour {
        Contour::new(values.to_vec()).unwrap()
    }

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&c(&[100.0, 200.0]), &c(&[100.0, 200.0])).unwrap(), 0.0);
        assert_eq!(mae(&c(&[100.0, 200.0]), &c(&[110.0, 190.0])).unwrap(), 10.0);
        assert_eq!(mae(&c(&[100.0]), &c(&[250.0])).unwrap(), 150.0);
        assert!(mae(&c(&[100.0]), &c(&[100.0, 100.0])).is_err());
    }

    #[test]
    fn mae_symmetry_and_triangle() {
        let mut rng = Rng::from_seed(3);
        for _ in 0..50 {
            let a = c(&(0..16)
                .map(|_| rng.uniform(80.0, 300.0))
                .collect::<Vec<_>>());
            let b = c(&(0..16)
                .map(|_| rng.uniform(80.0, 300.0))
                .collect::<Vec<_>>());
            let d = c(&(0..16)
                .map(|_| rng.uniform(80.0, 300.0))
                .collect::<Vec<_>>());
            assert_eq!(mae(&a, &b).unwrap(), mae(&b, &a).unwrap());
            assert!(mae(&a, &d).unwrap() <= mae(&a, &b).unwrap() + mae(&b, &d).unwrap() + 1e-9);
        }
    }

    fn eval_fixture(tag: &str, gain: f64) -> (PathBuf, Trainer) {
        let dir = std::env::temp_dir().join(format!("vcgn-eval-{tag}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        corpus::synth_corpus(EmotionPair::NeutralAngry, 2, 1, 3, 17, &dir, false).unwrap();
        let manifest = corpus::load_manifest(&dir).unwrap();
        let cfg = TrainConfig {
            seed: 4,
            net: nets::NetConfig {
                momenta_output_gain_init: gain,
                ..nets::NetConfig::default()
            },
            ..TrainConfig::default()
        };
        let trainer = Trainer::new(cfg, "neutral", "angry", manifest.stats()).unwrap();
        (dir, trainer)
    }

    #[test]
    fn zero_gain_model_reports_identity_mae() {
        let (dir, trainer) = eval_fixture("zero", 0.0);
        let report = evaluate(&trainer, &dir, 123, None).unwrap();
        assert_eq!(report.utterances.len(), 3);
        for u in &report.utterances {
            assert_eq!(u.mae_converted, u.mae_identity, "{}", u.id);
        }
        assert_eq!(report.mean_mae, report.mean_identity_mae);
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn report_means_recompute_from_per_utterance_values() {
        let (dir, trainer) = eval_fixture("means", 0.1);
        let report = evaluate(&trainer, &dir, 55, None).unwrap();
        let n = report.utterances.len() as f64;
        let mean: f64 = report
            .utterances
            .iter()
            .map(|u| u.mae_converted)
            .sum::<f64>()
            / n;
        assert!((mean - report.mean_mae).abs() < 1e-9);
        let mean_id: f64 = report
            .utterances
            .iter()
            .map(|u| u.mae_identity)
            .sum::<f64>()
            / n;
        assert!((mean_id - report.mean_identity_mae).abs() < 1e-9);
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn evaluation_is_deterministic_in_seed() {
        let (dir, trainer) = eval_fixture("det", 0.1);
        let r1 = evaluate(&trainer, &dir, 777, None).unwrap();
        let r2 = evaluate(&trainer, &dir, 777, None).unwrap();
        assert_eq!(
            serde_json::to_string(&r1).unwrap(),
            serde_json::to_string(&r2).unwrap()
        );
        let r3 = evaluate(&trainer, &dir, 778, None).unwrap();
        assert_ne!(
            serde_json::to_string(&r1).unwrap(),
            serde_json::to_string(&r3).unwrap()
        );
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn missing_target_lists_orphans() {
        let (dir, trainer) = eval_fixture("orphan", 0.1);
        // Remove one angry test file and its manifest entry is still there,
        // so the source becomes orphaned.
        let manifest = corpus::load_manifest(&dir).unwrap();
        let victim = manifest
            .test
            .iter()
            .find(|id| id.ends_with("_angry"))
            .unwrap()
            .clone();
        // Drop it from the manifest too (otherwise load_split fails on io).
        let mut edited = manifest.clone();
        edited.test.retain(|id| id != &victim);
        let json = serde_json::to_string_pretty(&edited).unwrap();
        fs::write(dir.join("manifest.json"), json).unwrap();
        match evaluate(&trainer, &dir, 1, None) {
            Err(EvalError::MissingTargets { orphaned }) => {
                assert_eq!(orphaned.len(), 1);
                assert!(orphaned[0].ends_with("_neutral"));
            }
            other => panic!("expected missing targets, got {other:?}"),
        }
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn plot_files_have_documented_shape() {
        let dir = std::env::temp_dir().join(format!("vcgn-plot-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        let src: Vec<f64> = (0..128)
            .map(|t| 120.0 + (t as f64 * 0.1).sin() * 10.0)
            .collect();
        let conv: Vec<f64> = src.iter().map(|v| v + 5.0).collect();
        let tgt: Vec<f64> = src.iter().map(|v| v + 9.0).collect();
        let prefix = dir.join("u1");
        emit_plot(&src, &conv, &tgt, &prefix).unwrap();

        let csv = fs::read_to_string(dir.join("u1.csv")).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 129);
        assert_eq!(lines[0], "t,source,converted,target");
        // Column 2 round-trips the source exactly.
        for (t, line) in lines[1..].iter().enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            assert_eq!(cells[1].parse::<f64>().unwrap(), src[t]);
        }

        let svg = fs::read_to_string(dir.join("u1.svg")).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 3);
        for line in svg.lines().filter(|l| l.contains("<polyline")) {
            let points = line.split("points=\"").nth(1).unwrap();
            let pairs = points.split('"').next().unwrap().split(' ').count();
            assert_eq!(pairs, 128);
        }
        assert!(svg.contains("viewBox=\"0 0 800 400\""));
        assert!(svg.contains("Hz"));
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn convert_with_zero_gain_is_identity() {
        let (dir, trainer) = eval_fixture("conv", 0.0);
        let manifest = corpus::load_manifest(&dir).unwrap();
        let utts = corpus::load_split(&dir, &manifest, Split::Test).unwrap();
        let source = utts.iter().find(|u| u.emotion == "neutral").unwrap();
        let out = convert_utterance(&trainer, source, ConvertDirection::Forward, 5).unwrap();
        assert_eq!(out.contour.values(), source.contour.values());
        assert_eq!(out.spectrum.data(), source.spectrum.data());
        assert_eq!(out.emotion, "angry");
        fs::remove_dir_all(&dir).unwrap();
    }
}
