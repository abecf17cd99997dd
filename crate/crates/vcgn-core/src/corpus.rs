//! Synthetic pseudo-emotion corpus, utterance file I/O, windowing and
//! normalization statistics.
//!
//! Each parallel group draws a shared smooth "phrase latent"; emotion
//! transforms reshape it (mean shift, range scaling, tremor rate, final
//! rise, declination) so the two emotion versions stay highly
//! correlated. The CSV format below is also the ingestion contract for
//! externally extracted features.

use crate::nets::{MfccStats, SpectralMatrix, MFCC_DIM};
use crate::rng::Rng;
use crate::warp::Contour;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

/// Fixed training context length, frames.
pub const FRAMES: usize = 128;

#[derive(Debug)]
pub enum CorpusError {
    Io(std::io::Error),
    Parse { line: usize, msg: String },
    DataExists(PathBuf),
    BadPair(String),
    BadCounts(String),
    MissingFile(PathBuf),
    InvalidContour { line: usize, msg: String },
    Manifest(String),
}

impl fmt::Display for CorpusError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CorpusError::Io(e) => write!(f, "io error: {e}"),
            CorpusError::Parse { line, msg } => write!(f, "parse error at line {line}: {msg}"),
            CorpusError::DataExists(p) => {
                write!(f, "output directory {} is not empty", p.display())
            }
            CorpusError::BadPair(p) => write!(f, "unknown emotion pair {p:?}"),
            CorpusError::BadCounts(msg) => write!(f, "invalid corpus counts: {msg}"),
            CorpusError::MissingFile(p) => write!(f, "missing corpus file {}", p.display()),
            CorpusError::InvalidContour { line, msg } => {
                write!(f, "invalid contour at line {line}: {msg}")
            }
            CorpusError::Manifest(msg) => write!(f, "manifest error: {msg}"),
        }
    }
}

impl std::error::Error for CorpusError {}

impl From<std::io::Error> for CorpusError {
    fn from(e: std::io::Error) -> Self {
        CorpusError::Io(e)
    }
}

/// The three supported conversion pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmotionPair {
    NeutralAngry,
    NeutralHappy,
    NeutralSad,
}

impl EmotionPair {
    pub fn parse(s: &str) -> Result<Self, CorpusError> {
        match s {
            "neutral-angry" => Ok(EmotionPair::NeutralAngry),
            "neutral-happy" => Ok(EmotionPair::NeutralHappy),
            "neutral-sad" => Ok(EmotionPair::NeutralSad),
            other => Err(CorpusError::BadPair(other.to_string())),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            EmotionPair::NeutralAngry => "neutral-angry",
            EmotionPair::NeutralHappy => "neutral-happy",
            EmotionPair::NeutralSad => "neutral-sad",
        }
    }

    pub fn source(&self) -> &'static str {
        "neutral"
    }

    pub fn target(&self) -> &'static str {
        match self {
            EmotionPair::NeutralAngry => "angry",
            EmotionPair::NeutralHappy => "happy",
            EmotionPair::NeutralSad => "sad",
        }
    }
}

/// One corpus item.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub id: String,
    pub emotion: String,
    pub contour: Contour,
    pub spectrum: SpectralMatrix,
    pub parallel_group: Option<String>,
    /// true where the original frame was voiced (f0 > 0).
    pub voicing: Vec<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub pair: String,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub mfcc_mean: Vec<f64>,
    pub mfcc_std: Vec<f64>,
}

impl CorpusManifest {
    pub fn stats(&self) -> MfccStats {
        MfccStats {
            mean: self.mfcc_mean.clone(),
            std: self.mfcc_std.clone(),
        }
    }

    pub fn emotion_pair(&self) -> Result<EmotionPair, CorpusError> {
        EmotionPair::parse(&self.pair)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Write bytes to a temp file in the target directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp-write");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

// ---------------------------------------------------------------------
// Synthesis

struct Sinusoid {
    amp: f64,
    freq: f64,
    phase: f64,
}

fn eval_sinusoids(comps: &[Sinusoid], frames: usize, rate: f64) -> Vec<f64> {
    let t_max = frames as f64;
    (0..frames)
        .map(|t| {
            comps
                .iter()
                .map(|c| {
                    c.amp
                        * (2.0 * std::f64::consts::PI * c.freq * rate * t as f64 / t_max + c.phase)
                            .sin()
                })
                .sum()
        })
        .collect()
}

fn normalize_peak(mut v: Vec<f64>) -> Vec<f64> {
    let peak = v.iter().fold(0.0f64, |a, &b| a.max(b.abs())).max(1e-9);
    for x in v.iter_mut() {
        *x /= peak;
    }
    v
}

struct GroupLatent {
    phrase: Vec<Sinusoid>,
    tremor: Vec<Sinusoid>,
    /// Per-coefficient mixing of the low-frequency latent into the spectrum.
    spec_mix: Vec<f64>,
    /// Per-coefficient mixing of per-utterance noise.
    noise_mix: Vec<f64>,
    /// Per-coefficient base offset.
    spec_base: Vec<f64>,
}

fn draw_group_latent(rng: &mut Rng) -> GroupLatent {
    let n_sin = 3 + rng.below(4); // 3..=6
    let phrase = (0..n_sin)
        .map(|_| Sinusoid {
            amp: rng.uniform(0.5, 1.0),
            freq: rng.uniform(0.5, 4.0),
            phase: rng.uniform(0.0, 2.0 * std::f64::consts::PI),
        })
        .collect();
    let tremor = (0..2)
        .map(|_| Sinusoid {
            amp: rng.uniform(0.3, 0.6),
            freq: rng.uniform(5.0, 8.0),
            phase: rng.uniform(0.0, 2.0 * std::f64::consts::PI),
        })
        .collect();
    let spec_mix = (0..MFCC_DIM).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let noise_mix = (0..MFCC_DIM).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let spec_base = (0..MFCC_DIM).map(|_| rng.uniform(-0.5, 0.5)).collect();
    GroupLatent {
        phrase,
        tremor,
        spec_mix,
        noise_mix,
        spec_base,
    }
}

struct EmotionShape {
    mean: f64,
    amplitude: f64,
    tremor_rate: f64,
    declination: f64,
    final_rise: f64,
    spec_shift: f64,
}

fn emotion_shape(emotion: &str) -> EmotionShape {
    // Neutral: 120 Hz mean, +/-15 Hz range, 10 Hz declination.
    match emotion {
        "angry" => EmotionShape {
            mean: 160.0,
            amplitude: 22.5,
            tremor_rate: 1.3,
            declination: 10.0,
            final_rise: 0.0,
            spec_shift: 0.15,
        },
        "happy" => EmotionShape {
            mean: 145.0,
            amplitude: 19.5,
            tremor_rate: 1.0,
            declination: 10.0,
            final_rise: 20.0,
            spec_shift: 0.1,
        },
        "sad" => EmotionShape {
            mean: 100.0,
            amplitude: 9.0,
            tremor_rate: 1.0,
            declination: 20.0,
            final_rise: 0.0,
            spec_shift: -0.1,
        },
        _ => EmotionShape {
            mean: 120.0,
            amplitude: 15.0,
            tremor_rate: 1.0,
            declination: 10.0,
            final_rise: 0.0,
            spec_shift: 0.0,
        },
    }
}

fn synth_utterance(
    latent: &GroupLatent,
    emotion: &str,
    group_id: &str,
    utt_rng: &mut Rng,
) -> Utterance {
    let shape = emotion_shape(emotion);
    let phrase = normalize_peak(eval_sinusoids(&latent.phrase, FRAMES, 1.0));
    let tremor = normalize_peak(eval_sinusoids(&latent.tremor, FRAMES, shape.tremor_rate));

    let mut f0 = Vec::with_capacity(FRAMES);
    for t in 0..FRAMES {
        let s = phrase[t] + 0.12 * tremor[t];
        let decl = shape.declination * (0.5 - t as f64 / (FRAMES - 1) as f64);
        let rise = if t >= 3 * FRAMES / 4 {
            shape.final_rise * (t - 3 * FRAMES / 4) as f64 / (FRAMES / 4) as f64
        } else {
            0.0
        };
        f0.push(shape.mean + shape.amplitude * s + decl + rise);
    }

    // Low-frequency phrase components shared with the spectrum.
    let low_traj = {
        let lows: Vec<Sinusoid> = latent
            .phrase
            .iter()
            .filter(|c| c.freq <= 2.0)
            .map(|c| Sinusoid {
                amp: c.amp,
                freq: c.freq,
                phase: c.phase,
            })
            .collect();
        let chosen = if lows.is_empty() {
            let slowest = latent
                .phrase
                .iter()
                .min_by(|a, b| a.freq.partial_cmp(&b.freq).unwrap())
                .unwrap();
            vec![Sinusoid {
                amp: slowest.amp,
                freq: slowest.freq,
                phase: slowest.phase,
            }]
        } else {
            lows
        };
        normalize_peak(eval_sinusoids(&chosen, FRAMES, 1.0))
    };
    let noise_comps: Vec<Sinusoid> = (0..2)
        .map(|_| Sinusoid {
            amp: utt_rng.uniform(0.5, 1.0),
            freq: utt_rng.uniform(0.5, 3.0),
            phase: utt_rng.uniform(0.0, 2.0 * std::f64::consts::PI),
        })
        .collect();
    let noise = normalize_peak(eval_sinusoids(&noise_comps, FRAMES, 1.0));

    let mut spec = Vec::with_capacity(FRAMES * MFCC_DIM);
    for t in 0..FRAMES {
        for c in 0..MFCC_DIM {
            spec.push(
                0.8 * latent.spec_mix[c] * low_traj[t]
                    + 0.4 * latent.noise_mix[c] * noise[t]
                    + latent.spec_base[c]
                    + shape.spec_shift,
            );
        }
    }

    Utterance {
        id: format!("{group_id}_{emotion}"),
        emotion: emotion.to_string(),
        contour: Contour::new(f0).expect("synthetic contour within range"),
        spectrum: SpectralMatrix::new(FRAMES, spec).expect("synthetic spectrum well-formed"),
        parallel_group: Some(group_id.to_string()),
        voicing: vec![true; FRAMES],
    }
}

/// Generate a synthetic corpus into `out_dir` and return the manifest path.
pub fn synth_corpus(
    pair: EmotionPair,
    n_train: usize,
    n_val: usize,
    n_test: usize,
    seed: u64,
    out_dir: &Path,
    overwrite: bool,
) -> Result<PathBuf, CorpusError> {
    if n_train < 1 || n_val < 1 || n_test < 1 {
        return Err(CorpusError::BadCounts(format!(
            "n_train = {n_train}, n_val = {n_val}, n_test = {n_test} (all must be >= 1)"
        )));
    }
    if out_dir.exists() {
        let non_empty = fs::read_dir(out_dir)?.next().is_some();
        if non_empty && !overwrite {
            return Err(CorpusError::DataExists(out_dir.to_path_buf()));
        }
    }
    fs::create_dir_all(out_dir)?;

    let base = Rng::from_seed(seed);
    let total = n_train + n_val + n_test;
    let emotions = ["neutral", pair.target()];

    let mut split_ids: [Vec<String>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let mut train_utts: Vec<Utterance> = Vec::new();
    let mut pending: Vec<(PathBuf, String)> = Vec::new();

    for g in 0..total {
        let group_id = format!("g{g:04}");
        let group_rng = base.derive(g as u64);
        let mut latent_rng = group_rng.clone();
        let latent = draw_group_latent(&mut latent_rng);
        for emotion in emotions {
            let mut utt_rng = group_rng.derive(if emotion == "neutral" { 1 } else { 2 });
            let utt = synth_utterance(&latent, emotion, &group_id, &mut utt_rng);
            let split = if g < n_train {
                0
            } else if g < n_train + n_val {
                1
            } else {
                2
            };
            split_ids[split].push(utt.id.clone());
            let path = out_dir.join(format!("{}.csv", utt.id));
            pending.push((path, utterance_to_csv(&utt)));
            if split == 0 {
                train_utts.push(utt);
            }
        }
    }

    let stats = MfccStats::from_matrices(train_utts.iter().map(|u| &u.spectrum));
    let manifest = CorpusManifest {
        pair: pair.as_str().to_string(),
        train: split_ids[0].clone(),
        val: split_ids[1].clone(),
        test: split_ids[2].clone(),
        mfcc_mean: stats.mean,
        mfcc_std: stats.std,
    };

    for (path, contents) in pending {
        write_atomic(&path, contents.as_bytes())?;
    }
    let manifest_path = out_dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CorpusError::Manifest(e.to_string()))?;
    write_atomic(&manifest_path, json.as_bytes())?;
    Ok(manifest_path)
}

// ---------------------------------------------------------------------
// Utterance file format

fn fmt_float(v: f64) -> String {
    format!("{v}")
}

pub fn utterance_to_csv(utt: &Utterance) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "id,{},emotion,{},group,{}\n",
        utt.id,
        utt.emotion,
        utt.parallel_group.as_deref().unwrap_or("")
    ));
    out.push_str("f0");
    for c in 1..=MFCC_DIM {
        out.push_str(&format!(",mfcc{c}"));
    }
    out.push('\n');
    for t in 0..utt.contour.len() {
        let f0 = if utt.voicing[t] {
            utt.contour.values()[t]
        } else {
            0.0
        };
        out.push_str(&fmt_float(f0));
        for &v in utt.spectrum.row(t) {
            out.push(',');
            out.push_str(&fmt_float(v));
        }
        out.push('\n');
    }
    out
}

pub fn save_utterance(utt: &Utterance, path: &Path) -> Result<(), CorpusError> {
    write_atomic(path, utterance_to_csv(utt).as_bytes())?;
    Ok(())
}

/// Parse an utterance file: unvoiced frames (f0 == 0) are replaced by
/// linear interpolation between voiced neighbors, with edge gaps held at
/// the nearest voiced value; the voicing mask is retained.
pub fn load_utterance(path: &Path) -> Result<Utterance, CorpusError> {
    let text = fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            CorpusError::MissingFile(path.to_path_buf())
        } else {
            CorpusError::Io(e)
        }
    })?;
    parse_utterance(&text)
}

pub fn parse_utterance(text: &str) -> Result<Utterance, CorpusError> {
    let mut lines = text.lines().enumerate();

    let (_, meta) = lines.next().ok_or(CorpusError::Parse {
        line: 1,
        msg: "empty file".into(),
    })?;
    let fields: Vec<&str> = meta.split(',').collect();
    if fields.len() != 6 || fields[0] != "id" || fields[2] != "emotion" || fields[4] != "group" {
        return Err(CorpusError::Parse {
            line: 1,
            msg: format!("expected `id,<id>,emotion,<label>,group,<group>`, got {meta:?}"),
        });
    }
    let id = fields[1].to_string();
    let emotion = fields[3].to_string();
    if id.is_empty() || emotion.is_empty() {
        return Err(CorpusError::Parse {
            line: 1,
            msg: "id and emotion must be nonempty".into(),
        });
    }
    let parallel_group = if fields[5].is_empty() {
        None
    } else {
        Some(fields[5].to_string())
    };

    let (_, header) = lines.next().ok_or(CorpusError::Parse {
        line: 2,
        msg: "missing column header".into(),
    })?;
    let mut expected = String::from("f0");
    for c in 1..=MFCC_DIM {
        expected.push_str(&format!(",mfcc{c}"));
    }
    if header != expected {
        return Err(CorpusError::Parse {
            line: 2,
            msg: format!("unexpected column header {header:?}"),
        });
    }

    let mut raw_f0 = Vec::new();
    let mut spec = Vec::new();
    for (idx, row) in lines {
        let line_no = idx + 1;
        if row.is_empty() {
            continue;
        }
        let cells: Vec<&str> = row.split(',').collect();
        if cells.len() != 1 + MFCC_DIM {
            return Err(CorpusError::Parse {
                line: line_no,
                msg: format!("expected {} columns, found {}", 1 + MFCC_DIM, cells.len()),
            });
        }
        let mut parsed = Vec::with_capacity(cells.len());
        for cell in &cells {
            let v: f64 = cell.trim().parse().map_err(|_| CorpusError::Parse {
                line: line_no,
                msg: format!("non-numeric field {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(CorpusError::Parse {
                    line: line_no,
                    msg: format!("non-finite field {cell:?}"),
                });
            }
            parsed.push(v);
        }
        let f0 = parsed[0];
        if !(0.0..crate::warp::F0_MAX_HZ).contains(&f0) {
            return Err(CorpusError::InvalidContour {
                line: line_no,
                msg: format!("f0 = {f0} outside [0, 800)"),
            });
        }
        raw_f0.push(f0);
        spec.extend_from_slice(&parsed[1..]);
    }

    if raw_f0.is_empty() {
        return Err(CorpusError::Parse {
            line: 3,
            msg: "no frames".into(),
        });
    }

    let voicing: Vec<bool> = raw_f0.iter().map(|&v| v > 0.0).collect();
    if voicing.iter().all(|&v| !v) {
        return Err(CorpusError::InvalidContour {
            line: 3,
            msg: "all frames unvoiced".into(),
        });
    }
    let interpolated = interpolate_unvoiced(&raw_f0, &voicing);
    let frames = interpolated.len();
    let contour = Contour::new(interpolated).map_err(|e| CorpusError::InvalidContour {
        line: 3,
        msg: e.to_string(),
    })?;
    let spectrum = SpectralMatrix::new(frames, spec).map_err(|e| CorpusError::Parse {
        line: 3,
        msg: e.to_string(),
    })?;

    Ok(Utterance {
        id,
        emotion,
        contour,
        spectrum,
        parallel_group,
        voicing,
    })
}

fn interpolate_unvoiced(f0: &[f64], voicing: &[bool]) -> Vec<f64> {
    let n = f0.len();
    let voiced: Vec<usize> = (0..n).filter(|&i| voicing[i]).collect();
    let mut out = vec![0.0; n];
    for i in 0..n {
        if voicing[i] {
            out[i] = f0[i];
            continue;
        }
        let prev = voiced.iter().rev().find(|&&v| v < i);
        let next = voiced.iter().find(|&&v| v > i);
        out[i] = match (prev, next) {
            (Some(&a), Some(&b)) => {
                let w = (i - a) as f64 / (b - a) as f64;
                f0[a] + (f0[b] - f0[a]) * w
            }
            (Some(&a), None) => f0[a],
            (None, Some(&b)) => f0[b],
            (None, None) => unreachable!("all-unvoiced rejected earlier"),
        };
    }
    out
}

// ---------------------------------------------------------------------
// Windowing

fn reflect_index(pos: i64, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as i64 - 1);
    let mut p = pos % period;
    if p < 0 {
        p += period;
    }
    if p >= len as i64 {
        p = period - p;
    }
    p as usize
}

/// Window or pad an utterance to exactly [`FRAMES`] frames: a uniformly
/// random contiguous window when longer (deterministic in `seed`),
/// reflect padding on both sides when shorter.
pub fn window_128(utt: &Utterance, seed: u64) -> Utterance {
    let len = utt.contour.len();
    if len == FRAMES {
        return utt.clone();
    }
    let pick = |src_index: &dyn Fn(usize) -> usize| -> Utterance {
        let f0: Vec<f64> = (0..FRAMES)
            .map(|k| utt.contour.values()[src_index(k)])
            .collect();
        let mut spec = Vec::with_capacity(FRAMES * MFCC_DIM);
        for k in 0..FRAMES {
            spec.extend_from_slice(utt.spectrum.row(src_index(k)));
        }
        let voicing: Vec<bool> = (0..FRAMES).map(|k| utt.voicing[src_index(k)]).collect();
        Utterance {
            id: utt.id.clone(),
            emotion: utt.emotion.clone(),
            contour: Contour::new(f0).expect("windowed contour inherits validity"),
            spectrum: SpectralMatrix::new(FRAMES, spec).expect("windowed spectrum well-formed"),
            parallel_group: utt.parallel_group.clone(),
            voicing,
        }
    };

    if len > FRAMES {
        let mut rng = Rng::from_seed(seed);
        let offset = rng.below(len - FRAMES + 1);
        pick(&|k| offset + k)
    } else {
        let pad = FRAMES - len;
        let left = pad / 2;
        pick(&|k| reflect_index(k as i64 - left as i64, len))
    }
}

// ---------------------------------------------------------------------
// Manifest / split loading

pub fn load_manifest(dir: &Path) -> Result<CorpusManifest, CorpusError> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            CorpusError::MissingFile(path.clone())
        } else {
            CorpusError::Io(e)
        }
    })?;
    let manifest: CorpusManifest =
        serde_json::from_str(&text).map_err(|e| CorpusError::Manifest(e.to_string()))?;
    if manifest.mfcc_mean.len() != MFCC_DIM || manifest.mfcc_std.len() != MFCC_DIM {
        return Err(CorpusError::Manifest(format!(
            "normalization stats must have {MFCC_DIM} coefficients"
        )));
    }
    Ok(manifest)
}

pub fn load_split(
    dir: &Path,
    manifest: &CorpusManifest,
    split: Split,
) -> Result<Vec<Utterance>, CorpusError> {
    let ids = match split {
        Split::Train => &manifest.train,
        Split::Val => &manifest.val,
        Split::Test => &manifest.test,
    };
    ids.iter()
        .map(|id| load_utterance(&dir.join(format!("{id}.csv"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp_dir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("vcgn-corpus-{tag}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn read_sorted_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
        let mut entries: Vec<_> = fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        entries.sort();
        entries
            .into_iter()
            .map(|p| {
                (
                    p.file_name().unwrap().to_string_lossy().into_owned(),
                    fs::read(&p).unwrap(),
                )
            })
            .collect()
    }

    #[test]
    fn synth_is_deterministic() {
        let d1 = tmp_dir("det1");
        let d2 = tmp_dir("det2");
        synth_corpus(EmotionPair::NeutralAngry, 2, 1, 1, 7, &d1, false).unwrap();
        synth_corpus(EmotionPair::NeutralAngry, 2, 1, 1, 7, &d2, false).unwrap();
        assert_eq!(read_sorted_files(&d1), read_sorted_files(&d2));
        fs::remove_dir_all(&d1).unwrap();
        fs::remove_dir_all(&d2).unwrap();
    }

    #[test]
    fn synth_counts_and_split_disjointness() {
        let dir = tmp_dir("counts");
        synth_corpus(EmotionPair::NeutralAngry, 8, 2, 2, 7, &dir, false).unwrap();
        let files = fs::read_dir(&dir).unwrap().count();
        // 12 groups x 2 emotions + manifest
        assert_eq!(files, 25);
        let manifest = load_manifest(&dir).unwrap();
        assert_eq!(manifest.train.len(), 16);
        assert_eq!(manifest.val.len(), 4);
        assert_eq!(manifest.test.len(), 4);
        let mut all: Vec<&String> = manifest
            .train
            .iter()
            .chain(manifest.val.iter())
            .chain(manifest.test.iter())
            .collect();
        let total = all.len();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), total, "splits share ids");
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn existing_nonempty_dir_is_rejected_without_overwrite() {
        let dir = tmp_dir("collide");
        fs::write(dir.join("already.txt"), "x").unwrap();
        assert!(matches!(
            synth_corpus(EmotionPair::NeutralSad, 1, 1, 1, 1, &dir, false),
            Err(CorpusError::DataExists(_))
        ));
        // overwrite flag allows it
        synth_corpus(EmotionPair::NeutralSad, 1, 1, 1, 1, &dir, true).unwrap();
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn neutral_mean_in_expected_band() {
        let dir = tmp_dir("mean");
        synth_corpus(EmotionPair::NeutralAngry, 20, 1, 1, 3, &dir, false).unwrap();
        let manifest = load_manifest(&dir).unwrap();
        let utts = load_split(&dir, &manifest, Split::Train).unwrap();
        let neutrals: Vec<&Utterance> = utts.iter().filter(|u| u.emotion == "neutral").collect();
        let mean: f64 = neutrals
            .iter()
            .flat_map(|u| u.contour.values().iter())
            .sum::<f64>()
            / (neutrals.len() * FRAMES) as f64;
        assert!((110.0..=130.0).contains(&mean), "corpus mean F0 {mean}");
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn parallel_groups_stay_correlated() {
        let dir = tmp_dir("corr");
        synth_corpus(EmotionPair::NeutralAngry, 12, 1, 1, 5, &dir, false).unwrap();
        let manifest = load_manifest(&dir).unwrap();
        let utts = load_split(&dir, &manifest, Split::Train).unwrap();
        for g in 0..12 {
            let gid = format!("g{g:04}");
            let neutral = utts
                .iter()
                .find(|u| {
                    u.parallel_group.as_deref() == Some(gid.as_str()) && u.emotion == "neutral"
                })
                .unwrap();
            let angry = utts
                .iter()
                .find(|u| u.parallel_group.as_deref() == Some(gid.as_str()) && u.emotion == "angry")
                .unwrap();
            let corr = pearson(neutral.contour.values(), angry.contour.values());
            assert!(corr > 0.8, "group {gid} correlation {corr}");
        }
        fs::remove_dir_all(&dir).unwrap();
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let mut cov = 0.0;
        let mut va = 0.0;
        let mut vb = 0.0;
        for i in 0..a.len() {
            cov += (a[i] - ma) * (b[i] - mb);
            va += (a[i] - ma) * (a[i] - ma);
            vb += (b[i] - mb) * (b[i] - mb);
        }
        cov / (va.sqrt() * vb.sqrt()).max(1e-12)
    }

    #[test]
    fn save_load_roundtrip_preserves_voiced_values() {
        let dir = tmp_dir("roundtrip");
        synth_corpus(EmotionPair::NeutralHappy, 1, 1, 1, 11, &dir, false).unwrap();
        let manifest = load_manifest(&dir).unwrap();
        let utts = load_split(&dir, &manifest, Split::Train).unwrap();
        for u in &utts {
            let path = dir.join("rt.csv");
            save_utterance(u, &path).unwrap();
            let loaded = load_utterance(&path).unwrap();
            assert_eq!(loaded.id, u.id);
            assert_eq!(loaded.contour.values(), u.contour.values());
            assert_eq!(loaded.spectrum.data(), u.spectrum.data());
        }
        fs::remove_dir_all(&dir).unwrap();
    }

    fn utterance_text(f0_rows: &[f64]) -> String {
        let mut s = String::from("id,u1,emotion,neutral,group,\n");
        s.push_str("f0");
        for c in 1..=MFCC_DIM {
            s.push_str(&format!(",mfcc{c}"));
        }
        s.push('\n');
        for &v in f0_rows {
            s.push_str(&format!("{v}"));
            for c in 0..MFCC_DIM {
                s.push_str(&format!(",{}", 0.1 * c as f64));
            }
            s.push('\n');
        }
        s
    }

    #[test]
    fn unvoiced_interpolation_example() {
        let text = utterance_text(&[0.0, 100.0, 0.0, 200.0]);
        let utt = parse_utterance(&text).unwrap();
        assert_eq!(utt.contour.values(), &[100.0, 100.0, 150.0, 200.0]);
        assert_eq!(utt.voicing, vec![false, true, false, true]);
    }

    #[test]
    fn wrong_column_count_names_row() {
        let mut text = utterance_text(&[100.0, 110.0]);
        // Drop one field from the second data row (line 4).
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let shortened = lines[3].rsplit_once(',').unwrap().0.to_string();
        lines[3] = shortened;
        text = lines.join("\n");
        match parse_utterance(&text) {
            Err(CorpusError::Parse { line, msg }) => {
                assert_eq!(line, 4);
                assert!(msg.contains("columns"), "{msg}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn all_unvoiced_is_rejected() {
        let text = utterance_text(&[0.0, 0.0, 0.0]);
        assert!(matches!(
            parse_utterance(&text),
            Err(CorpusError::InvalidContour { .. })
        ));
    }

    #[test]
    fn non_numeric_field_is_rejected() {
        let text = utterance_text(&[100.0]).replace("0.1", "abc");
        assert!(matches!(
            parse_utterance(&text),
            Err(CorpusError::Parse { .. })
        ));
    }

    fn utterance_with_frames(n: usize) -> Utterance {
        let f0: Vec<f64> = (0..n).map(|i| 120.0 + i as f64).collect();
        let spec: Vec<f64> = (0..n * MFCC_DIM).map(|i| i as f64 * 0.01).collect();
        Utterance {
            id: "w".into(),
            emotion: "neutral".into(),
            contour: Contour::new(f0).unwrap(),
            spectrum: SpectralMatrix::new(n, spec).unwrap(),
            parallel_group: None,
            voicing: vec![true; n],
        }
    }

    #[test]
    fn window_identity_at_128() {
        let u = utterance_with_frames(128);
        let w = window_128(&u, 9);
        assert_eq!(w.contour.values(), u.contour.values());
    }

    #[test]
    fn window_slices_contiguously_when_longer() {
        let u = utterance_with_frames(200);
        let w = window_128(&u, 9);
        assert_eq!(w.contour.len(), 128);
        let start = w.contour.values()[0] - 120.0;
        for (k, v) in w.contour.values().iter().enumerate() {
            assert_eq!(*v, 120.0 + start + k as f64);
        }
        // Same seed, same window.
        let w2 = window_128(&u, 9);
        assert_eq!(w.contour.values(), w2.contour.values());
    }

    #[test]
    fn window_reflects_when_shorter() {
        // 100 frames -> pad 28, 14 each side; the first 14 output frames
        // mirror input frames 2..=15 (1-based), i.e. indices 14,13,...,1.
        let u = utterance_with_frames(100);
        let w = window_128(&u, 9);
        assert_eq!(w.contour.len(), 128);
        for k in 0..14 {
            assert_eq!(
                w.contour.values()[k],
                u.contour.values()[14 - k],
                "left pad position {k}"
            );
        }
        // Center is the original.
        for k in 0..100 {
            assert_eq!(w.contour.values()[14 + k], u.contour.values()[k]);
        }
        // Right pad mirrors the tail without repeating the edge.
        for j in 0..14 {
            assert_eq!(w.contour.values()[114 + j], u.contour.values()[98 - j]);
        }
    }

    #[test]
    fn train_stats_standardize_to_zero_one() {
        let dir = tmp_dir("stats");
        synth_corpus(EmotionPair::NeutralAngry, 6, 1, 1, 13, &dir, false).unwrap();
        let manifest = load_manifest(&dir).unwrap();
        let stats = manifest.stats();
        let utts = load_split(&dir, &manifest, Split::Train).unwrap();
        let mut sum = vec![0.0; MFCC_DIM];
        let mut sum_sq = vec![0.0; MFCC_DIM];
        let mut count = 0usize;
        for u in &utts {
            let std = stats.standardize(&u.spectrum);
            for t in 0..FRAMES {
                for c in 0..MFCC_DIM {
                    let v = std.data()[t * MFCC_DIM + c];
                    sum[c] += v;
                    sum_sq[c] += v * v;
                }
            }
            count += FRAMES;
        }
        for c in 0..MFCC_DIM {
            let mean = sum[c] / count as f64;
            let var = sum_sq[c] / count as f64 - mean * mean;
            assert!(mean.abs() < 1e-9, "coef {c} mean {mean}");
            assert!(
                (var.sqrt() - 1.0).abs() < 1e-9,
                "coef {c} std {}",
                var.sqrt()
            );
        }
        fs::remove_dir_all(&dir).unwrap();
    }
}
