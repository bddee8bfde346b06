//! Deterministic synthetic datasets whose sensor outputs are causally tied
//! to latent material properties.
//!
//! Each category carries latent hardness and juiciness levels, a cooked
//! flag, a hue and a nominal thickness. The latent-to-signal maps are fixed
//! affine formulas so tests can verify the outputs in closed form:
//!
//! - audio fundamental:  f0 = 200 + 400 * h  Hz, decay 5 + 10 * h  1/s
//! - push travel:        delta_z = (3 - h) * 2 mm + noise
//! - gripper width:      w_g = thickness * (1 - 0.1 * h) + noise
//!
//! The image encodes hue (category identity) and thickness (shape) only;
//! hardness reaches the image through the category-latent correlation.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    self, FoodSample, Hardness, Image, Juiciness, LabelSet, LabelTable, ProprioRecord, SampleId,
    Waveform,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AudioSpec {
    pub sample_rate: f64,
    pub duration: f64,
}

impl Default for AudioSpec {
    fn default() -> Self {
        Self {
            sample_rate: 16000.0,
            duration: 0.5,
        }
    }
}

/// Latent material properties of one synthetic category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryLatent {
    pub name: String,
    /// Hardness level, 0 (soft) to 2 (hard).
    pub hardness: u8,
    /// Juiciness level, 0 (dry) to 2 (juicy).
    pub juiciness: u8,
    pub cooked: bool,
    /// Hue angle in degrees.
    pub hue: f64,
    /// Nominal slice thickness in millimeters.
    pub thickness_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_categories: usize,
    pub samples_per_category: usize,
    pub seed: u64,
    pub audio: AudioSpec,
    pub image_size: usize,
    /// Explicit latents; generated from the seed when empty.
    pub latents: Vec<CategoryLatent>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_categories: 21,
            samples_per_category: 10,
            seed: 0,
            audio: AudioSpec::default(),
            image_size: 64,
            latents: Vec::new(),
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Per-sample generator, decorrelated from other samples so generation is
/// an order-independent map.
fn sample_rng(seed: u64, category: usize, sample: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(
        seed ^ splitmix64((category as u64) << 20 | sample as u64),
    ))
}

/// Deterministic default latent assignment: hardness cycles with period 3
/// so every level is shared by several categories.
pub fn default_latents(n_categories: usize) -> Vec<CategoryLatent> {
    (0..n_categories)
        .map(|i| CategoryLatent {
            name: format!("food{i:02}"),
            hardness: (i % 3) as u8,
            juiciness: ((i / 3) % 3) as u8,
            cooked: i % 2 == 1,
            hue: 360.0 * i as f64 / n_categories as f64,
            thickness_mm: 6.0 + 3.0 * (i % 8) as f64,
        })
        .collect()
}

impl SynthSpec {
    pub fn resolved_latents(&self) -> Vec<CategoryLatent> {
        if self.latents.is_empty() {
            default_latents(self.n_categories)
        } else {
            self.latents.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_categories == 0 && self.samples_per_category > 0 {
            return Err(Error::Config(
                "zero categories with nonzero samples per category".into(),
            ));
        }
        if !self.latents.is_empty() && self.latents.len() != self.n_categories {
            return Err(Error::Config(format!(
                "{} latents supplied for {} categories",
                self.latents.len(),
                self.n_categories
            )));
        }
        for l in &self.latents {
            if l.hardness > 2 || l.juiciness > 2 {
                return Err(Error::Config(format!(
                    "latent levels must be in 0..=2 for {}",
                    l.name
                )));
            }
        }
        Ok(())
    }
}

/// Audio fundamental frequency for a hardness level.
pub fn audio_fundamental_hz(hardness: u8) -> f64 {
    200.0 + 400.0 * f64::from(hardness)
}

/// Damped-sinusoid mixture plus broadband noise of amplitude 0.1 * j,
/// clipped to [-1, 1].
pub fn synth_audio(hardness: u8, juiciness: u8, audio: &AudioSpec, rng: &mut ChaCha8Rng) -> Waveform {
    let f0 = audio_fundamental_hz(hardness);
    let decay = 5.0 + 10.0 * f64::from(hardness);
    let n = (audio.sample_rate * audio.duration) as usize;
    let noise_amp = 0.1 * f64::from(juiciness);
    let harmonics = [(1.0, 0.55), (2.0, 0.18), (3.0, 0.07)];
    let samples: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / audio.sample_rate;
            let tone: f64 = harmonics
                .iter()
                .map(|(k, a)| a * (-decay * t).exp() * (2.0 * PI * f0 * k * t).sin())
                .sum();
            let noise = noise_amp * rng.gen_range(-1.0..1.0);
            (tone + noise).clamp(-1.0, 1.0)
        })
        .collect();
    Waveform::new(samples, audio.sample_rate).expect("nonzero length")
}

fn hsv_to_rgb(h_deg: f64, s: f64, v: f64) -> [f64; 3] {
    let h = (h_deg.rem_euclid(360.0)) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Hue-tinted ellipse on a dark background. The minor axis tracks slice
/// thickness; speckle noise scales with juiciness.
pub fn synth_image(
    hue: f64,
    thickness_mm: f64,
    juiciness: u8,
    size: usize,
    rng: &mut ChaCha8Rng,
) -> Image {
    let color = hsv_to_rgb(hue, 0.75, 0.85);
    let background = 0.08;
    let cx = size as f64 / 2.0;
    let cy = cx;
    let major = 0.42 * size as f64;
    let minor = size as f64 * (0.08 + 0.30 * (thickness_mm / 50.0).clamp(0.0, 1.0));
    let speckle = 0.08 * f64::from(juiciness);
    let mut pixels = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let dx = (x as f64 - cx) / major;
            let dy = (y as f64 - cy) / minor;
            let inside = dx * dx + dy * dy <= 1.0;
            for c in 0..3 {
                let base = if inside { color[c] } else { background };
                let v = base + speckle * rng.gen_range(-1.0..1.0);
                pixels.push(v.clamp(0.0, 1.0));
            }
        }
    }
    Image::new(size, size, pixels).expect("pixel count matches")
}

/// Push trace ending exactly at the 10 N threshold with total travel
/// (3 - h) * 2 mm + noise, and grasp trace ending at 60 N with final width
/// thickness * (1 - 0.1 * h) + noise. Returns the record and the final
/// gripper width in meters.
pub fn synth_proprio(
    hardness: u8,
    thickness_mm: f64,
    rng: &mut ChaCha8Rng,
) -> (ProprioRecord, f64) {
    let thickness = thickness_mm / 1000.0;
    let delta_z = (3.0 - f64::from(hardness)) * 2e-3 + rng.gen_range(-1e-4..1e-4);
    let contact_z = thickness;
    let z_f = contact_z - delta_z;
    let steps = 40;
    // Approach from 2 mm above the surface; force ramps linearly from the
    // contact point down to exactly 10 N at z_f.
    let start_z = contact_z + 2e-3;
    let mut push: Vec<[f64; 3]> = (0..=steps)
        .map(|i| {
            let frac = i as f64 / steps as f64;
            let z = start_z + (z_f - start_z) * frac;
            let force = if z >= contact_z {
                0.0
            } else {
                10.0 * (contact_z - z) / delta_z
            };
            [0.05 * i as f64, z, force]
        })
        .collect();
    // Pin the endpoint so the threshold is reached exactly.
    push[steps] = [0.05 * steps as f64, z_f, 10.0];

    let w_g = thickness * (1.0 - 0.1 * f64::from(hardness)) + rng.gen_range(-2e-4..2e-4);
    let w_start = thickness + 8e-3;
    let mut grasp: Vec<[f64; 3]> = (0..=steps)
        .map(|i| {
            let frac = i as f64 / steps as f64;
            let w = w_start + (w_g - w_start) * frac;
            let force = if w >= thickness {
                0.0
            } else {
                60.0 * (thickness - w) / (thickness - w_g)
            };
            [0.05 * i as f64, w, force]
        })
        .collect();
    grasp[steps] = [0.05 * steps as f64, w_g, 60.0];
    (
        ProprioRecord::new(push, grasp).expect("strictly increasing timestamps"),
        w_g,
    )
}

pub fn labels_from_latent(latent: &CategoryLatent) -> LabelSet {
    LabelSet {
        hardness: match latent.hardness {
            0 => Hardness::Soft,
            1 => Hardness::Medium,
            _ => Hardness::Hard,
        },
        juiciness: match latent.juiciness {
            0 => Juiciness::Dry,
            1 => Juiciness::Medium,
            _ => Juiciness::Juicy,
        },
        cooked: Some(latent.cooked),
    }
}

/// Generates the full dataset, sorted by (category, slice, trial). Sample
/// index i within a category maps to slice i/5 + 1, trial i%5 + 1.
pub fn generate_dataset(spec: &SynthSpec) -> Result<Vec<FoodSample>> {
    spec.validate()?;
    let latents = spec.resolved_latents();
    let mut samples = Vec::with_capacity(spec.n_categories * spec.samples_per_category);
    for (ci, latent) in latents.iter().enumerate() {
        for si in 0..spec.samples_per_category {
            let mut rng = sample_rng(spec.seed, ci, si);
            // Slice-to-slice thickness variation on top of the nominal.
            let slice = (si / 5 + 1) as u32;
            let trial = (si % 5 + 1) as u32;
            let thickness =
                latent.thickness_mm * (1.0 + 0.06 * (slice as f64 - 1.0)) + rng.gen_range(-0.2..0.2);
            let audio_play = synth_audio(latent.hardness, latent.juiciness, &spec.audio, &mut rng);
            let audio_cut = synth_audio(latent.hardness, latent.juiciness, &spec.audio, &mut rng);
            let image = synth_image(latent.hue, thickness, latent.juiciness, spec.image_size, &mut rng);
            let (proprio, w_g) = synth_proprio(latent.hardness, thickness, &mut rng);
            samples.push(FoodSample {
                id: SampleId::new(latent.name.clone(), slice, trial),
                audio_play: Some(audio_play),
                audio_cut: Some(audio_cut),
                image: Some(image),
                proprio: Some(proprio),
                gripper_width: Some(w_g * 1000.0),
                labels: Some(labels_from_latent(latent)),
            });
        }
    }
    samples.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(samples)
}

/// Label table implied by the spec's latents.
pub fn label_table(spec: &SynthSpec) -> LabelTable {
    spec.resolved_latents()
        .iter()
        .map(|l| (l.name.clone(), labels_from_latent(l)))
        .collect()
}

/// Writes the dataset tree in the ingestion layout plus the label table.
pub fn write_dataset(spec: &SynthSpec, root: &Path) -> Result<()> {
    let samples = generate_dataset(spec)?;
    for sample in &samples {
        let dir = root
            .join(&sample.id.food_category)
            .join(format!("slice_{}", sample.id.slice_type))
            .join(format!("trial_{}", sample.id.trial));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        if let Some(w) = &sample.audio_play {
            datamodel::write_wav(&dir.join("audio_play.wav"), w)?;
        }
        if let Some(w) = &sample.audio_cut {
            datamodel::write_wav(&dir.join("audio_cut.wav"), w)?;
        }
        if let Some(img) = &sample.image {
            datamodel::write_png(&dir.join("overhead.png"), img)?;
        }
        if let Some(p) = &sample.proprio {
            datamodel::write_proprio(
                &dir.join("proprio_push.csv"),
                &dir.join("proprio_grasp.csv"),
                p,
            )?;
        }
    }
    datamodel::write_label_table(&root.join("labels.csv"), &label_table(spec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audiofeat::oracle::dft_peak_hz;
    use crate::features::proprio_features;

    fn small_audio() -> AudioSpec {
        AudioSpec {
            sample_rate: 16000.0,
            duration: 0.128,
        }
    }

    #[test]
    fn zero_samples_per_category_is_empty() {
        let spec = SynthSpec {
            n_categories: 3,
            samples_per_category: 0,
            ..Default::default()
        };
        assert!(generate_dataset(&spec).unwrap().is_empty());
    }

    #[test]
    fn zero_categories_with_samples_errors() {
        let spec = SynthSpec {
            n_categories: 0,
            samples_per_category: 2,
            ..Default::default()
        };
        assert!(generate_dataset(&spec).is_err());
    }

    #[test]
    fn same_seed_same_dataset() {
        let spec = SynthSpec {
            n_categories: 2,
            samples_per_category: 3,
            seed: 42,
            audio: small_audio(),
            image_size: 16,
            ..Default::default()
        };
        let a = generate_dataset(&spec).unwrap();
        let b = generate_dataset(&spec).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.id, y.id);
            assert_eq!(x.audio_play, y.audio_play);
            assert_eq!(x.image, y.image);
            assert_eq!(x.proprio, y.proprio);
            assert_eq!(x.gripper_width, y.gripper_width);
        }
    }

    #[test]
    fn synth_audio_is_deterministic_and_clipped() {
        let audio = small_audio();
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let a = synth_audio(1, 2, &audio, &mut r1);
        let b = synth_audio(1, 2, &audio, &mut r2);
        assert_eq!(a, b);
        assert_eq!(a.len(), 2048);
        assert!(a.samples.iter().all(|s| s.abs() <= 1.0));
    }

    #[test]
    fn hard_audio_peaks_near_1khz() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = synth_audio(2, 0, &small_audio(), &mut rng);
        let peak = dft_peak_hz(&w);
        assert!((peak - 1000.0).abs() <= 20.0, "peak {peak}");
    }

    #[test]
    fn dataset_peaks_track_hardness() {
        // Full-size category sweep against the brute-force DFT oracle.
        let spec = SynthSpec {
            n_categories: 21,
            samples_per_category: 2,
            seed: 7,
            audio: small_audio(),
            image_size: 16,
            ..Default::default()
        };
        let latents = spec.resolved_latents();
        let samples = generate_dataset(&spec).unwrap();
        for sample in &samples {
            let latent = latents
                .iter()
                .find(|l| l.name == sample.id.food_category)
                .unwrap();
            let expected = audio_fundamental_hz(latent.hardness);
            let peak = dft_peak_hz(sample.audio_play.as_ref().unwrap());
            assert!(
                (peak - expected).abs() <= 20.0,
                "{}: peak {peak}, expected {expected}",
                sample.id
            );
        }
    }

    #[test]
    fn peak_frequency_monotone_in_hardness() {
        let audio = small_audio();
        let mut means = Vec::new();
        for h in 0..3u8 {
            let mut acc = 0.0;
            for s in 0..4 {
                let mut rng = ChaCha8Rng::seed_from_u64(100 + s);
                acc += dft_peak_hz(&synth_audio(h, 1, &audio, &mut rng));
            }
            means.push(acc / 4.0);
        }
        assert!(means[0] < means[1] && means[1] < means[2], "{means:?}");
    }

    #[test]
    fn harder_categories_have_smaller_travel() {
        let mut means = Vec::new();
        for h in 0..3u8 {
            let mut acc = 0.0;
            for s in 0..6 {
                let mut rng = ChaCha8Rng::seed_from_u64(200 + s);
                let (rec, _) = synth_proprio(h, 12.0, &mut rng);
                acc += proprio_features(&rec).unwrap().delta_z;
            }
            means.push(acc / 6.0);
        }
        assert!(means[0] > means[1] && means[1] > means[2], "{means:?}");
    }

    #[test]
    fn proprio_reaches_thresholds_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (rec, w_g) = synth_proprio(1, 10.0, &mut rng);
        assert!((rec.push.last().unwrap()[2] - 10.0).abs() < 1e-9);
        assert!((rec.grasp.last().unwrap()[2] - 60.0).abs() < 1e-9);
        let f = proprio_features(&rec).unwrap();
        assert!((f.w_g - w_g).abs() < 1e-9);
    }

    #[test]
    fn labels_match_latents() {
        let spec = SynthSpec {
            n_categories: 9,
            samples_per_category: 1,
            audio: small_audio(),
            image_size: 8,
            ..Default::default()
        };
        let latents = spec.resolved_latents();
        for sample in generate_dataset(&spec).unwrap() {
            let latent = latents
                .iter()
                .find(|l| l.name == sample.id.food_category)
                .unwrap();
            assert_eq!(sample.labels.unwrap(), labels_from_latent(latent));
        }
    }

    #[test]
    fn thicker_slices_have_wider_ellipses() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let thin = synth_image(120.0, 4.0, 0, 32, &mut rng);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let thick = synth_image(120.0, 40.0, 0, 32, &mut rng);
        let bright = |img: &Image| img.pixels.iter().filter(|&&p| p > 0.3).count();
        assert!(bright(&thick) > bright(&thin));
    }

    #[test]
    fn written_tree_loads_back() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            n_categories: 2,
            samples_per_category: 6,
            seed: 3,
            audio: small_audio(),
            image_size: 16,
            ..Default::default()
        };
        write_dataset(&spec, dir.path()).unwrap();
        let index =
            datamodel::load_manifest(dir.path(), &datamodel::PatternConfig::default()).unwrap();
        assert_eq!(index.entries.len(), 12);
        // 6 samples -> slices 1 (trials 1-5) and 2 (trial 1).
        let slices: Vec<u32> = index
            .entries
            .iter()
            .filter(|e| e.id.food_category == "food00")
            .map(|e| e.id.slice_type)
            .collect();
        assert_eq!(slices, vec![1, 1, 1, 1, 1, 2]);
        let entry = &index.entries[0];
        assert_eq!(entry.modality_count(), 4);
        let sample = datamodel::load_sample(entry).unwrap();
        assert!(sample.audio_play.is_some());
        assert!(sample.image.is_some());
        let table = datamodel::read_label_table(&dir.path().join("labels.csv")).unwrap();
        assert_eq!(table.len(), 2);
    }
}
