use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use spatial::{ElectrodeLayout, RegionScheme};

use crate::error::{EegError, Result};
use crate::filter::SosFilter;
use crate::recording::EegRecording;

/// Parameters of the synthetic corpus.
///
/// Every trial is white Gaussian noise band-limited to 1–50 Hz with standard
/// deviation `noise`. Channels in a region listed in the trial's class
/// offsets get their amplitude scaled by `10^(dB/20)`, and each channel gets
/// an extra per-trial gain drawn from `N(0, trial_jitter_db)` dB.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub n_classes: usize,
    pub trials_per_class: usize,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    pub noise: f64,
    /// Region tag → variance shift in dB, one map per class.
    pub class_offsets_db: Vec<BTreeMap<String, f64>>,
    pub trial_jitter_db: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// No class signal at all.
    pub fn null(n_classes: usize, trials_per_class: usize, seed: u64) -> Self {
        SynthSpec {
            n_classes,
            trials_per_class,
            duration_s: 10.0,
            sample_rate_hz: 200.0,
            noise: 1.0,
            class_offsets_db: vec![BTreeMap::new(); n_classes],
            trial_jitter_db: 0.5,
            seed,
        }
    }

    /// Class `c` raises region `regions[c % R]` of `scheme` by `shift_db`.
    pub fn strong(
        scheme: &RegionScheme,
        n_classes: usize,
        trials_per_class: usize,
        shift_db: f64,
        seed: u64,
    ) -> Self {
        let regions = scheme.regions();
        let offsets = (0..n_classes)
            .map(|c| BTreeMap::from([(regions[c % regions.len()].clone(), shift_db)]))
            .collect();
        SynthSpec {
            class_offsets_db: offsets,
            ..SynthSpec::null(n_classes, trials_per_class, seed)
        }
    }

    fn validate(&self, scheme: &RegionScheme) -> Result<()> {
        if self.n_classes < 2 {
            return Err(EegError::Parameter(format!("{} classes; need at least 2", self.n_classes)));
        }
        if self.trials_per_class == 0 {
            return Err(EegError::Parameter("zero trials per class".into()));
        }
        if self.class_offsets_db.len() != self.n_classes {
            return Err(EegError::Parameter(format!(
                "{} offset maps for {} classes",
                self.class_offsets_db.len(),
                self.n_classes
            )));
        }
        if !(self.noise > 0.0 && self.noise.is_finite()) {
            return Err(EegError::Parameter(format!("noise level {}", self.noise)));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(EegError::Parameter(format!("duration {} s", self.duration_s)));
        }
        if !(self.trial_jitter_db >= 0.0 && self.trial_jitter_db.is_finite()) {
            return Err(EegError::Parameter(format!("jitter {} dB", self.trial_jitter_db)));
        }
        for (c, offsets) in self.class_offsets_db.iter().enumerate() {
            for (tag, db) in offsets {
                if scheme.region_index(tag).is_none() {
                    return Err(EegError::Parameter(format!(
                        "class {c} offsets unknown region '{tag}' of scheme {}",
                        scheme.kind()
                    )));
                }
                if !db.is_finite() {
                    return Err(EegError::Parameter(format!("class {c} offset {db} dB")));
                }
            }
        }
        Ok(())
    }
}

/// One generated recording with a stable identifier.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthTrial {
    pub id: String,
    pub class: usize,
    pub trial: usize,
    pub recording: EegRecording,
}

/// Generates `n_classes × trials_per_class` labelled recordings over the
/// channels of `layout`, class-major. Each trial draws from its own ChaCha
/// stream, so a trial's samples do not depend on how many others exist.
pub fn synth_dataset(
    spec: &SynthSpec,
    layout: &ElectrodeLayout,
    scheme: &RegionScheme,
) -> Result<Vec<SynthTrial>> {
    spec.validate(scheme)?;
    let tags = scheme.tag_indices(layout)?;
    let n_samples = (spec.duration_s * spec.sample_rate_hz).round() as usize;
    let band = SosFilter::butter_bandpass(1.0, 50.0, spec.sample_rate_hz)?;
    // Rescale so that the band-limited noise keeps standard deviation `noise`.
    let passband = band_fraction(&band, spec.sample_rate_hz);
    let base = spec.noise / passband.sqrt();

    let mut out = Vec::with_capacity(spec.n_classes * spec.trials_per_class);
    for class in 0..spec.n_classes {
        let region_db: Vec<f64> = (0..scheme.n_regions())
            .map(|r| {
                spec.class_offsets_db[class]
                    .get(&scheme.regions()[r])
                    .copied()
                    .unwrap_or(0.0)
            })
            .collect();
        for trial in 0..spec.trials_per_class {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(((class as u64) << 32) | trial as u64);
            let mut samples = Vec::with_capacity(layout.len() * n_samples);
            for &region in &tags {
                let jitter: f64 = rng.sample::<f64, _>(StandardNormal) * spec.trial_jitter_db;
                let gain = base * 10f64.powf((region_db[region] + jitter) / 20.0);
                let white: Vec<f64> = (0..n_samples).map(|_| rng.sample(StandardNormal)).collect();
                samples.extend(band.filtfilt(&white).into_iter().map(|v| v * gain));
            }
            let recording = EegRecording::new(
                layout.names().to_vec(),
                spec.sample_rate_hz,
                samples,
                Some(class),
            )?;
            out.push(SynthTrial {
                id: format!("c{class}_t{trial:03}"),
                class,
                trial,
                recording,
            });
        }
    }
    Ok(out)
}

/// Power gain of the zero-phase filter on white noise: the mean of `|H|⁴`
/// over the unit circle.
fn band_fraction(filter: &SosFilter, fs: f64) -> f64 {
    let n = 4096;
    (0..n)
        .map(|i| {
            let f = (i as f64 + 0.5) / n as f64 * fs / 2.0;
            filter.response(f, fs).norm_sqr().powi(2)
        })
        .sum::<f64>()
        / n as f64
}
