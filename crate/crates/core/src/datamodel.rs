//! Dataset schema and ingestion.
//!
//! A dataset is a directory tree `<root>/<food>/<slice>/<trial>/` holding
//! per-trial sensor files: playing audio, cutting audio, an overhead image
//! and proprioceptive push/grasp traces. Material-property labels live in a
//! separate human-edited table keyed by food category.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unique identity of one trial within a dataset.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SampleId {
    pub food_category: String,
    pub slice_type: u32,
    pub trial: u32,
}

impl SampleId {
    pub fn new(food_category: impl Into<String>, slice_type: u32, trial: u32) -> Self {
        Self {
            food_category: food_category.into(),
            slice_type,
            trial,
        }
    }
}

impl fmt::Display for SampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.food_category, self.slice_type, self.trial)
    }
}

/// Mono audio clip with amplitudes in [-1, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("waveform has no samples".into()));
        }
        if sample_rate <= 0.0 {
            return Err(Error::Config(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// 8-bit RGB image rescaled to the unit interval, row-major interleaved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl Image {
    pub const CHANNELS: usize = 3;

    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != width * height * Self::CHANNELS {
            return Err(Error::DimensionMismatch {
                expected: width * height * Self::CHANNELS,
                got: pixels.len(),
            });
        }
        if pixels.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::Config("pixel values must lie in [0,1]".into()));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }
}

/// Proprioceptive traces from the push-down and grasp actions.
///
/// Push rows are (t, z, fz); grasp rows are (t, width, force). SI units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProprioRecord {
    pub push: Vec<[f64; 3]>,
    pub grasp: Vec<[f64; 3]>,
    pub push_force_threshold: f64,
    pub grasp_force_threshold: f64,
}

impl ProprioRecord {
    pub fn new(push: Vec<[f64; 3]>, grasp: Vec<[f64; 3]>) -> Result<Self> {
        for series in [&push, &grasp] {
            for pair in series.windows(2) {
                if pair[1][0] <= pair[0][0] {
                    return Err(Error::Config(
                        "proprio timestamps must be strictly increasing".into(),
                    ));
                }
            }
        }
        Ok(Self {
            push,
            grasp,
            push_force_threshold: 10.0,
            grasp_force_threshold: 60.0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hardness {
    Hard,
    Medium,
    Soft,
}

impl FromStr for Hardness {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(Hardness::Hard),
            "medium" => Ok(Hardness::Medium),
            "soft" => Ok(Hardness::Soft),
            _ => Err(Error::IllegalLabelToken {
                field: "hardness".into(),
                token: s.into(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Juiciness {
    Juicy,
    Medium,
    Dry,
}

impl FromStr for Juiciness {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "juicy" => Ok(Juiciness::Juicy),
            "medium" => Ok(Juiciness::Medium),
            "dry" => Ok(Juiciness::Dry),
            _ => Err(Error::IllegalLabelToken {
                field: "juiciness".into(),
                token: s.into(),
            }),
        }
    }
}

/// Human-provided material-property labels for a food category.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelSet {
    pub hardness: Hardness,
    pub juiciness: Juiciness,
    pub cooked: Option<bool>,
}

/// One trial with whatever modalities were recorded for it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoodSample {
    pub id: SampleId,
    pub audio_play: Option<Waveform>,
    pub audio_cut: Option<Waveform>,
    pub image: Option<Image>,
    pub proprio: Option<ProprioRecord>,
    /// Final gripper width in millimeters.
    pub gripper_width: Option<f64>,
    pub labels: Option<LabelSet>,
}

impl FoodSample {
    pub fn has_any_modality(&self) -> bool {
        self.audio_play.is_some()
            || self.audio_cut.is_some()
            || self.image.is_some()
            || self.proprio.is_some()
    }
}

/// Filename globs used to resolve modality files inside a trial directory.
///
/// Only `*` wildcards are supported.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatternConfig {
    pub audio_play: String,
    pub audio_cut: String,
    pub image: String,
    pub proprio: String,
}

impl Default for PatternConfig {
    fn default() -> Self {
        Self {
            audio_play: "*play*.wav".into(),
            audio_cut: "*cut*.wav".into(),
            image: "*overhead*.png".into(),
            proprio: "*proprio*.csv".into(),
        }
    }
}

/// Matches a filename against a `*`-wildcard glob, case sensitively.
fn glob_match(pattern: &str, name: &str) -> bool {
    let parts: Vec<&str> = pattern.split('*').collect();
    let mut rest = name;
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            continue;
        }
        if i == 0 {
            match rest.strip_prefix(part) {
                Some(r) => rest = r,
                None => return false,
            }
        } else if i == parts.len() - 1 {
            return rest.ends_with(part) && rest.len() >= part.len();
        } else {
            match rest.find(part) {
                Some(pos) => rest = &rest[pos + part.len()..],
                None => return false,
            }
        }
    }
    // Pattern without a trailing `*` must consume the whole name.
    parts.last().map(|p| p.is_empty()).unwrap_or(true) || rest.is_empty()
}

/// Resolved file paths for one trial directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: SampleId,
    pub audio_play: Option<PathBuf>,
    pub audio_cut: Option<PathBuf>,
    pub image: Option<PathBuf>,
    /// Push then grasp traces; either may be absent.
    pub proprio_push: Option<PathBuf>,
    pub proprio_grasp: Option<PathBuf>,
}

impl IndexEntry {
    /// Number of distinct modalities with at least one resolved file.
    pub fn modality_count(&self) -> usize {
        [
            self.audio_play.is_some(),
            self.audio_cut.is_some(),
            self.image.is_some(),
            self.proprio_push.is_some() || self.proprio_grasp.is_some(),
        ]
        .iter()
        .filter(|&&b| b)
        .count()
    }
}

/// Index of all trials found under a dataset root.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub entries: Vec<IndexEntry>,
    pub skipped: Vec<(PathBuf, String)>,
}

fn list_dir(path: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    out.sort();
    Ok(out)
}

/// Parses the trailing decimal run of a directory name, e.g. "slice_3" -> 3.
fn trailing_number(name: &str) -> Option<u32> {
    let digits: String = name
        .chars()
        .rev()
        .take_while(|c| c.is_ascii_digit())
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    if digits.is_empty() {
        None
    } else {
        digits.parse().ok()
    }
}

fn find_file(files: &[PathBuf], pattern: &str) -> Option<PathBuf> {
    files
        .iter()
        .find(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| glob_match(pattern, n))
                .unwrap_or(false)
        })
        .cloned()
}

/// Walks `<root>/<food>/<slice>/<trial>/` and resolves modality files.
///
/// Directories whose slice or trial component has no trailing number are
/// recorded in `skipped` with a reason. Ordering is lexicographic by
/// (category, slice, trial).
pub fn load_manifest(root: &Path, patterns: &PatternConfig) -> Result<DatasetIndex> {
    if !root.is_dir() {
        return Err(Error::MissingRoot(root.to_path_buf()));
    }
    let mut index = DatasetIndex::default();
    for food_dir in list_dir(root)? {
        if !food_dir.is_dir() {
            continue;
        }
        let category = match food_dir.file_name().and_then(|n| n.to_str()) {
            Some(name) => name.to_string(),
            None => {
                index
                    .skipped
                    .push((food_dir.clone(), "non-utf8 food category".into()));
                continue;
            }
        };
        for slice_dir in list_dir(&food_dir)? {
            if !slice_dir.is_dir() {
                continue;
            }
            let slice_name = slice_dir.file_name().and_then(|n| n.to_str()).unwrap_or("");
            let slice_type = match trailing_number(slice_name) {
                Some(s) if (1..=14).contains(&s) => s,
                Some(_) => {
                    index
                        .skipped
                        .push((slice_dir.clone(), "slice id out of range [1,14]".into()));
                    continue;
                }
                None => {
                    index
                        .skipped
                        .push((slice_dir.clone(), "unparseable slice id".into()));
                    continue;
                }
            };
            for trial_dir in list_dir(&slice_dir)? {
                if !trial_dir.is_dir() {
                    continue;
                }
                let trial_name = trial_dir.file_name().and_then(|n| n.to_str()).unwrap_or("");
                let trial = match trailing_number(trial_name) {
                    Some(t) if (1..=5).contains(&t) => t,
                    Some(_) => {
                        index
                            .skipped
                            .push((trial_dir.clone(), "trial id out of range [1,5]".into()));
                        continue;
                    }
                    None => {
                        index
                            .skipped
                            .push((trial_dir.clone(), "unparseable trial id".into()));
                        continue;
                    }
                };
                let files = list_dir(&trial_dir)?;
                let proprio_files: Vec<PathBuf> = files
                    .iter()
                    .filter(|p| {
                        p.file_name()
                            .and_then(|n| n.to_str())
                            .map(|n| glob_match(&patterns.proprio, n))
                            .unwrap_or(false)
                    })
                    .cloned()
                    .collect();
                let name_contains = |p: &PathBuf, needle: &str| {
                    p.file_name()
                        .and_then(|n| n.to_str())
                        .map(|n| n.contains(needle))
                        .unwrap_or(false)
                };
                index.entries.push(IndexEntry {
                    id: SampleId::new(category.clone(), slice_type, trial),
                    audio_play: find_file(&files, &patterns.audio_play),
                    audio_cut: find_file(&files, &patterns.audio_cut),
                    image: find_file(&files, &patterns.image),
                    proprio_push: proprio_files
                        .iter()
                        .find(|p| name_contains(p, "push"))
                        .cloned(),
                    proprio_grasp: proprio_files
                        .iter()
                        .find(|p| name_contains(p, "grasp"))
                        .cloned(),
                });
            }
        }
    }
    index.entries.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(index)
}

fn rel_str(path: &Path, root: &Path) -> String {
    path.strip_prefix(root)
        .unwrap_or(path)
        .to_string_lossy()
        .into_owned()
}

/// Writes the index to the line-oriented manifest format:
/// `food_category,slice_type,trial,modality,relative_path`.
pub fn write_manifest(index: &DatasetIndex, root: &Path, out: &Path) -> Result<()> {
    let mut wtr = csv::Writer::from_path(out).map_err(|e| Error::parse(out, e.to_string()))?;
    wtr.write_record(["food_category", "slice_type", "trial", "modality", "relative_path"])
        .map_err(|e| Error::parse(out, e.to_string()))?;
    for entry in &index.entries {
        let rows: [(&str, &Option<PathBuf>); 5] = [
            ("audio_play", &entry.audio_play),
            ("audio_cut", &entry.audio_cut),
            ("image", &entry.image),
            ("proprio_push", &entry.proprio_push),
            ("proprio_grasp", &entry.proprio_grasp),
        ];
        for (modality, path) in rows {
            if let Some(path) = path {
                wtr.write_record([
                    entry.id.food_category.as_str(),
                    &entry.id.slice_type.to_string(),
                    &entry.id.trial.to_string(),
                    modality,
                    &rel_str(path, root),
                ])
                .map_err(|e| Error::parse(out, e.to_string()))?;
            }
        }
    }
    wtr.flush().map_err(|e| Error::io(out, e))?;
    Ok(())
}

/// Reads a manifest file back into a DatasetIndex (skipped records are not
/// round-tripped; they are diagnostics of the original scan).
pub fn read_manifest(path: &Path, root: &Path) -> Result<DatasetIndex> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e.to_string()))?;
    let mut entries: BTreeMap<SampleId, IndexEntry> = BTreeMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::parse(path, e.to_string()))?;
        if record.len() != 5 {
            return Err(Error::parse(path, format!("expected 5 columns, got {}", record.len())));
        }
        let id = SampleId::new(
            record[0].to_string(),
            record[1]
                .parse()
                .map_err(|_| Error::parse(path, format!("bad slice_type {:?}", &record[1])))?,
            record[2]
                .parse()
                .map_err(|_| Error::parse(path, format!("bad trial {:?}", &record[2])))?,
        );
        let entry = entries.entry(id.clone()).or_insert_with(|| IndexEntry {
            id,
            audio_play: None,
            audio_cut: None,
            image: None,
            proprio_push: None,
            proprio_grasp: None,
        });
        let full = root.join(&record[4]);
        match &record[3] {
            "audio_play" => entry.audio_play = Some(full),
            "audio_cut" => entry.audio_cut = Some(full),
            "image" => entry.image = Some(full),
            "proprio_push" => entry.proprio_push = Some(full),
            "proprio_grasp" => entry.proprio_grasp = Some(full),
            other => return Err(Error::parse(path, format!("unknown modality {other:?}"))),
        }
    }
    Ok(DatasetIndex {
        entries: entries.into_values().collect(),
        skipped: Vec::new(),
    })
}

/// Reads a PCM WAV file as a mono waveform; multi-channel input is averaged.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut reader = hound::WavReader::open(path).map_err(|e| Error::parse(path, e.to_string()))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let raw: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(path, e.to_string()))?,
        hound::SampleFormat::Int => {
            let scale = f64::from(1u32 << (spec.bits_per_sample - 1));
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| f64::from(v) / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(path, e.to_string()))?
        }
    };
    let mono: Vec<f64> = raw
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .map(|v| v.clamp(-1.0, 1.0))
        .collect();
    Waveform::new(mono, f64::from(spec.sample_rate))
}

/// Writes a mono waveform as 16-bit PCM WAV.
pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate as u32,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer =
        hound::WavWriter::create(path, spec).map_err(|e| Error::parse(path, e.to_string()))?;
    for &s in &w.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer
            .write_sample(v)
            .map_err(|e| Error::parse(path, e.to_string()))?;
    }
    writer
        .finalize()
        .map_err(|e| Error::parse(path, e.to_string()))?;
    Ok(())
}

/// Reads an 8-bit RGB PNG, rescaling pixel values to [0,1].
pub fn read_png(path: &Path) -> Result<Image> {
    let img = image::open(path)
        .map_err(|e| Error::parse(path, e.to_string()))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels = img.into_raw().iter().map(|&b| f64::from(b) / 255.0).collect();
    Image::new(w, h, pixels)
}

/// Writes an image as 8-bit RGB PNG.
pub fn write_png(path: &Path, img: &Image) -> Result<()> {
    let bytes: Vec<u8> = img
        .pixels
        .iter()
        .map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf = image::RgbImage::from_raw(img.width as u32, img.height as u32, bytes)
        .ok_or_else(|| Error::Config("image buffer size mismatch".into()))?;
    buf.save(path).map_err(|e| Error::parse(path, e.to_string()))
}

fn read_series(path: &Path) -> Result<Vec<[f64; 3]>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e.to_string()))?;
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::parse(path, e.to_string()))?;
        if record.len() != 3 {
            return Err(Error::parse(path, format!("expected 3 columns, got {}", record.len())));
        }
        let mut row = [0.0; 3];
        for (i, field) in record.iter().enumerate() {
            row[i] = field
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, format!("bad number {field:?}")))?;
        }
        rows.push(row);
    }
    Ok(rows)
}

fn write_series(path: &Path, header: [&str; 3], rows: &[[f64; 3]]) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e.to_string()))?;
    wtr.write_record(header)
        .map_err(|e| Error::parse(path, e.to_string()))?;
    for row in rows {
        wtr.write_record(row.iter().map(|v| format!("{v}")))
            .map_err(|e| Error::parse(path, e.to_string()))?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn write_proprio(push_path: &Path, grasp_path: &Path, rec: &ProprioRecord) -> Result<()> {
    write_series(push_path, ["t", "z", "fz"], &rec.push)?;
    write_series(grasp_path, ["t", "width", "force"], &rec.grasp)
}

/// Loads the sensor files referenced by an index entry.
pub fn load_sample(entry: &IndexEntry) -> Result<FoodSample> {
    let proprio = match (&entry.proprio_push, &entry.proprio_grasp) {
        (None, None) => None,
        (push, grasp) => {
            let push_rows = push.as_deref().map(read_series).transpose()?.unwrap_or_default();
            let grasp_rows = grasp.as_deref().map(read_series).transpose()?.unwrap_or_default();
            Some(ProprioRecord::new(push_rows, grasp_rows)?)
        }
    };
    // The gripper opening after the grasp is the last width in the trace,
    // recorded in meters and reported in millimeters.
    let gripper_width = proprio
        .as_ref()
        .and_then(|p| p.grasp.last())
        .map(|row| row[1] * 1000.0);
    Ok(FoodSample {
        id: entry.id.clone(),
        audio_play: entry.audio_play.as_deref().map(read_wav).transpose()?,
        audio_cut: entry.audio_cut.as_deref().map(read_wav).transpose()?,
        image: entry.image.as_deref().map(read_png).transpose()?,
        proprio,
        gripper_width,
        labels: None,
    })
}

/// Per-category label assignments loaded from the label table.
pub type LabelTable = BTreeMap<String, LabelSet>;

/// Reads the label table: `food_category,hardness,juiciness,cooked`.
/// The cooked column may be empty.
pub fn read_label_table(path: &Path) -> Result<LabelTable> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e.to_string()))?;
    let mut table = LabelTable::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::parse(path, e.to_string()))?;
        if record.len() < 3 {
            return Err(Error::parse(path, "expected at least 3 columns".to_string()));
        }
        let cooked = match record.get(3).map(str::trim) {
            None | Some("") => None,
            Some("true") | Some("1") => Some(true),
            Some("false") | Some("0") => Some(false),
            Some(other) => {
                return Err(Error::IllegalLabelToken {
                    field: "cooked".into(),
                    token: other.into(),
                })
            }
        };
        table.insert(
            record[0].trim().to_string(),
            LabelSet {
                hardness: record[1].trim().parse()?,
                juiciness: record[2].trim().parse()?,
                cooked,
            },
        );
    }
    Ok(table)
}

pub fn write_label_table(path: &Path, table: &LabelTable) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e.to_string()))?;
    wtr.write_record(["food_category", "hardness", "juiciness", "cooked"])
        .map_err(|e| Error::parse(path, e.to_string()))?;
    for (category, labels) in table {
        let hardness = match labels.hardness {
            Hardness::Hard => "hard",
            Hardness::Medium => "medium",
            Hardness::Soft => "soft",
        };
        let juiciness = match labels.juiciness {
            Juiciness::Juicy => "juicy",
            Juiciness::Medium => "medium",
            Juiciness::Dry => "dry",
        };
        let cooked = match labels.cooked {
            Some(true) => "true",
            Some(false) => "false",
            None => "",
        };
        wtr.write_record([category.as_str(), hardness, juiciness, cooked])
            .map_err(|e| Error::parse(path, e.to_string()))?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Attaches labels from the table to every sample. All sample categories
/// must appear in the table.
pub fn attach_labels(samples: &mut [FoodSample], table: &LabelTable) -> Result<()> {
    let mut missing: Vec<String> = samples
        .iter()
        .filter(|s| !table.contains_key(&s.id.food_category))
        .map(|s| s.id.food_category.clone())
        .collect();
    missing.sort();
    missing.dedup();
    if !missing.is_empty() {
        return Err(Error::MissingCategories(missing));
    }
    for sample in samples.iter_mut() {
        sample.labels = Some(table[&sample.id.food_category]);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn glob_matching() {
        assert!(glob_match("*play*.wav", "audio_play_1.wav"));
        assert!(glob_match("*play*.wav", "play.wav"));
        assert!(!glob_match("*play*.wav", "audio_cut.wav"));
        assert!(!glob_match("*.wav", "play.wave"));
        assert!(glob_match("overhead.png", "overhead.png"));
        assert!(!glob_match("overhead.png", "overhead.png.bak"));
    }

    #[test]
    fn empty_root_yields_empty_index() {
        let dir = tempdir().unwrap();
        let index = load_manifest(dir.path(), &PatternConfig::default()).unwrap();
        assert!(index.entries.is_empty());
        assert!(index.skipped.is_empty());
    }

    #[test]
    fn missing_root_is_fatal() {
        let err = load_manifest(Path::new("/nonexistent/food"), &PatternConfig::default());
        assert!(matches!(err, Err(Error::MissingRoot(_))));
    }

    fn touch(path: &Path) {
        std::fs::write(path, b"").unwrap();
    }

    #[test]
    fn two_categories_fully_populated() {
        let dir = tempdir().unwrap();
        for food in ["apple", "tomato"] {
            let trial = dir.path().join(food).join("slice_1").join("trial_1");
            std::fs::create_dir_all(&trial).unwrap();
            touch(&trial.join("audio_play.wav"));
            touch(&trial.join("audio_cut.wav"));
            touch(&trial.join("overhead.png"));
            touch(&trial.join("proprio_push.csv"));
            touch(&trial.join("proprio_grasp.csv"));
        }
        let index = load_manifest(dir.path(), &PatternConfig::default()).unwrap();
        assert_eq!(index.entries.len(), 2);
        for entry in &index.entries {
            assert_eq!(entry.modality_count(), 4);
        }
    }

    #[test]
    fn unparseable_trial_is_skipped() {
        let dir = tempdir().unwrap();
        let trial = dir.path().join("apple").join("slice_1").join("trial_x");
        std::fs::create_dir_all(&trial).unwrap();
        let index = load_manifest(dir.path(), &PatternConfig::default()).unwrap();
        assert!(index.entries.is_empty());
        assert_eq!(index.skipped.len(), 1);
        assert_eq!(index.skipped[0].1, "unparseable trial id");
    }

    #[test]
    fn missing_modality_is_tolerated() {
        let dir = tempdir().unwrap();
        let trial = dir.path().join("apple").join("slice_2").join("trial_3");
        std::fs::create_dir_all(&trial).unwrap();
        touch(&trial.join("audio_play.wav"));
        let index = load_manifest(dir.path(), &PatternConfig::default()).unwrap();
        assert_eq!(index.entries.len(), 1);
        let entry = &index.entries[0];
        assert!(entry.audio_play.is_some());
        assert!(entry.image.is_none());
        assert_eq!(entry.id, SampleId::new("apple", 2, 3));
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempdir().unwrap();
        for (food, slice, trial) in [("apple", 1, 1), ("apple", 1, 2), ("kiwi", 3, 1)] {
            let t = dir
                .path()
                .join(food)
                .join(format!("slice_{slice}"))
                .join(format!("trial_{trial}"));
            std::fs::create_dir_all(&t).unwrap();
            touch(&t.join("audio_play.wav"));
            touch(&t.join("overhead.png"));
        }
        let index = load_manifest(dir.path(), &PatternConfig::default()).unwrap();
        let manifest = dir.path().join("manifest.csv");
        write_manifest(&index, dir.path(), &manifest).unwrap();
        let reloaded = read_manifest(&manifest, dir.path()).unwrap();
        assert_eq!(index.entries, reloaded.entries);
    }

    #[test]
    fn load_manifest_is_pure() {
        let dir = tempdir().unwrap();
        let t = dir.path().join("pear").join("slice_1").join("trial_1");
        std::fs::create_dir_all(&t).unwrap();
        touch(&t.join("audio_play.wav"));
        let a = load_manifest(dir.path(), &PatternConfig::default()).unwrap();
        let b = load_manifest(dir.path(), &PatternConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn wav_round_trip_mono() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("tone.wav");
        let samples: Vec<f64> = (0..256)
            .map(|i| (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 16000.0).sin())
            .collect();
        let w = Waveform::new(samples.clone(), 16000.0).unwrap();
        write_wav(&path, &w).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 16000.0);
        assert_eq!(back.len(), 256);
        for (a, b) in samples.iter().zip(&back.samples) {
            // 16-bit quantization plus the 32767/32768 scale mismatch.
            assert!((a - b).abs() < 2.0 / 32768.0);
        }
    }

    #[test]
    fn attach_labels_total_mapping() {
        let mut table = LabelTable::new();
        table.insert(
            "apple".into(),
            LabelSet {
                hardness: Hardness::Hard,
                juiciness: Juiciness::Juicy,
                cooked: Some(false),
            },
        );
        let mut samples = vec![FoodSample {
            id: SampleId::new("apple", 1, 1),
            audio_play: None,
            audio_cut: None,
            image: None,
            proprio: None,
            gripper_width: None,
            labels: None,
        }];
        attach_labels(&mut samples, &table).unwrap();
        assert_eq!(samples[0].labels.unwrap().hardness, Hardness::Hard);
    }

    #[test]
    fn attach_labels_missing_category() {
        let table = LabelTable::new();
        let mut samples = vec![FoodSample {
            id: SampleId::new("tomato", 1, 1),
            audio_play: None,
            audio_cut: None,
            image: None,
            proprio: None,
            gripper_width: None,
            labels: None,
        }];
        let err = attach_labels(&mut samples, &table).unwrap_err();
        match err {
            Error::MissingCategories(cats) => assert_eq!(cats, vec!["tomato".to_string()]),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn illegal_label_token_is_named() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("labels.csv");
        std::fs::write(&path, "food_category,hardness,juiciness,cooked\napple,crunchy,juicy,\n")
            .unwrap();
        let err = read_label_table(&path).unwrap_err();
        match err {
            Error::IllegalLabelToken { token, .. } => assert_eq!(token, "crunchy"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn label_table_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("labels.csv");
        let mut table = LabelTable::new();
        table.insert(
            "carrot".into(),
            LabelSet {
                hardness: Hardness::Hard,
                juiciness: Juiciness::Dry,
                cooked: Some(false),
            },
        );
        table.insert(
            "tomato".into(),
            LabelSet {
                hardness: Hardness::Soft,
                juiciness: Juiciness::Juicy,
                cooked: None,
            },
        );
        write_label_table(&path, &table).unwrap();
        assert_eq!(read_label_table(&path).unwrap(), table);
    }
}
