//! Clustered-multipath MIMO-OFDM channel synthesis.
//!
//! A single-antenna UE is served by a BS with an `n_tx`-element uniform
//! linear array running OFDM over `n_sub` subcarriers. Propagation is a
//! sum of `n_clusters` clusters of `paths_per_cluster` rays each; rays in
//! a cluster share one delay and scatter in angle around the cluster
//! center. Cluster 1 is the geometric line-of-sight cluster (true bearing,
//! true propagation delay); later clusters get exponential excess delays,
//! uniform random center angles, and geometrically decaying power.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cmat::CMat;
use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Axis-aligned rectangle for UE placement, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn contains(&self, p: (f64, f64)) -> bool {
        p.0 >= self.x_min && p.0 <= self.x_max && p.1 >= self.y_min && p.1 <= self.y_max
    }
}

/// Parameters of one synthetic scenario.
///
/// Defaults follow the outdoor setup: 3.5 GHz carrier, 64 antennas and
/// subcarriers, half-wavelength spacing, 25 rays per cluster. The BS sits
/// below the placement area so every bearing lies in (0, pi) and the
/// array's cos(angle) response stays unambiguous.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub scenario_id: String,
    /// BS antenna count N_t.
    pub n_tx: usize,
    /// Subcarrier count N_c.
    pub n_sub: usize,
    pub carrier_freq_hz: f64,
    /// Antenna spacing as a fraction of the carrier wavelength (d/lambda).
    pub antenna_spacing_wavelengths: f64,
    /// Cluster count C.
    pub n_clusters: usize,
    /// Rays per cluster R_c.
    pub paths_per_cluster: usize,
    pub area: Rect,
    pub bs_position: (f64, f64),
    /// Laplacian angle-of-arrival spread inside a cluster, degrees.
    pub angle_spread_deg: f64,
    /// Exponential excess-delay scale for non-LoS clusters, in
    /// subcarrier-sample units.
    pub delay_spread_samples: f64,
    /// System bandwidth; one delay sample spans 1/bandwidth seconds.
    pub bandwidth_hz: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            scenario_id: String::new(),
            n_tx: 64,
            n_sub: 64,
            carrier_freq_hz: 3.5e9,
            antenna_spacing_wavelengths: 0.5,
            n_clusters: 3,
            paths_per_cluster: 25,
            area: Rect {
                x_min: 0.0,
                x_max: 200.0,
                y_min: 0.0,
                y_max: 200.0,
            },
            bs_position: (100.0, -20.0),
            angle_spread_deg: 5.0,
            delay_spread_samples: 2.0,
            bandwidth_hz: 20e6,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_tx < 2 {
            return Err(Error::Config(format!("n_tx must be >= 2, got {}", self.n_tx)));
        }
        if self.n_sub < 2 {
            return Err(Error::Config(format!("n_sub must be >= 2, got {}", self.n_sub)));
        }
        if self.n_clusters < 1 {
            return Err(Error::Config("n_clusters must be >= 1".into()));
        }
        if self.paths_per_cluster < 1 {
            return Err(Error::Config("paths_per_cluster must be >= 1".into()));
        }
        if !(self.area.width() > 0.0 && self.area.height() > 0.0) {
            return Err(Error::Config(format!(
                "area must have positive width and height, got {:?}",
                self.area
            )));
        }
        if self.bandwidth_hz <= 0.0 {
            return Err(Error::Config("bandwidth_hz must be positive".into()));
        }
        if self.carrier_freq_hz <= 0.0 {
            return Err(Error::Config("carrier_freq_hz must be positive".into()));
        }
        if self.antenna_spacing_wavelengths <= 0.0 {
            return Err(Error::Config("antenna_spacing_wavelengths must be positive".into()));
        }
        if self.angle_spread_deg < 0.0 || self.delay_spread_samples < 0.0 {
            return Err(Error::Config("spreads must be nonnegative".into()));
        }
        Ok(())
    }

    /// Parses a scenario from a JSON config file.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("scenario config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One propagation ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathParams {
    /// Complex gain alpha.
    pub gain: Complex64,
    /// Angle of arrival, radians.
    pub aoa_rad: f64,
    /// Delay in subcarrier-sample units; always < n_sub.
    pub delay_samples: f64,
}

/// A CSI matrix with its ground-truth UE position.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSample {
    /// Complex channel matrix, n_tx rows by n_sub columns.
    pub h: CMat,
    /// UE position (x, y) in meters.
    pub position: (f64, f64),
    pub scenario_id: String,
}

// ---------------------------------------------------------------------------
// Sampling helpers. All randomness is drawn from the caller's RNG via
// inverse-CDF / Box-Muller transforms so a fixed seed reproduces bitwise.
// ---------------------------------------------------------------------------

fn sample_standard_normal(rng: &mut impl Rng) -> (f64, f64) {
    // Box-Muller; u1 is kept away from zero so ln() stays finite.
    let u1: f64 = loop {
        let u: f64 = rng.random();
        if u > 1e-300 {
            break u;
        }
    };
    let u2: f64 = rng.random();
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = 2.0 * PI * u2;
    (r * theta.cos(), r * theta.sin())
}

fn sample_exponential(rng: &mut impl Rng, scale: f64) -> f64 {
    if scale == 0.0 {
        return 0.0;
    }
    let u: f64 = rng.random();
    -scale * (1.0 - u).ln()
}

fn sample_laplacian(rng: &mut impl Rng, scale: f64) -> f64 {
    if scale == 0.0 {
        return 0.0;
    }
    let u: f64 = rng.random::<f64>() - 0.5;
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

// ---------------------------------------------------------------------------
// Channel model
// ---------------------------------------------------------------------------

/// ULA response vector: entry t is exp(-j*2*pi*t*spacing_ratio*cos(aoa)).
/// Entry 0 is exactly 1.
pub fn steering_vector(aoa_rad: f64, n_tx: usize, spacing_ratio: f64) -> Vec<Complex64> {
    let phase_step = -2.0 * PI * spacing_ratio * aoa_rad.cos();
    (0..n_tx)
        .map(|t| {
            if t == 0 {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::from_polar(1.0, phase_step * t as f64)
            }
        })
        .collect()
}

/// Draws the full set of `n_clusters * paths_per_cluster` rays for a UE.
///
/// Cluster 0 is line of sight: center angle is the true BS-to-UE bearing
/// and the base delay is the true propagation delay in sample units.
/// Later clusters add an exponential excess delay and pick a uniform
/// center angle. Every ray in a cluster shares the cluster delay; ray
/// angles scatter around the center with a Laplacian of the configured
/// spread. Gains are complex Gaussian with cluster power halving per
/// cluster index, normalized so total expected power is 1.
pub fn sample_paths(
    config: &ScenarioConfig,
    ue_pos: (f64, f64),
    rng: &mut impl Rng,
) -> Result<Vec<PathParams>> {
    if !config.area.contains(ue_pos) {
        return Err(Error::Domain(format!(
            "UE position {ue_pos:?} outside area {:?}",
            config.area
        )));
    }
    let (bx, by) = config.bs_position;
    let dx = ue_pos.0 - bx;
    let dy = ue_pos.1 - by;
    let distance = (dx * dx + dy * dy).sqrt();
    let bearing = dy.atan2(dx);
    let los_delay = distance / SPEED_OF_LIGHT * config.bandwidth_hz;
    let max_delay = config.n_sub as f64;
    if los_delay >= max_delay {
        return Err(Error::Domain(format!(
            "LoS delay {los_delay:.2} samples exceeds the {max_delay} sample span; \
             shrink the area or raise n_sub/bandwidth"
        )));
    }

    let spread_rad = config.angle_spread_deg.to_radians();
    let c = config.n_clusters;
    let r_c = config.paths_per_cluster;

    // Geometric cluster powers 1, 1/2, 1/4, ... normalized to unit total,
    // split evenly over the rays of each cluster.
    let weights: Vec<f64> = (0..c).map(|k| 0.5f64.powi(k as i32)).collect();
    let weight_sum: f64 = weights.iter().sum();

    let mut paths = Vec::with_capacity(c * r_c);
    for (k, w) in weights.iter().enumerate() {
        let (center_aoa, base_delay) = if k == 0 {
            (bearing, los_delay)
        } else {
            let aoa = rng.random::<f64>() * 2.0 * PI - PI;
            let headroom = max_delay - los_delay;
            let mut excess = sample_exponential(rng, config.delay_spread_samples);
            let mut attempts = 0;
            while excess >= headroom {
                attempts += 1;
                if attempts > 64 {
                    excess = rng.random::<f64>() * headroom;
                    break;
                }
                excess = sample_exponential(rng, config.delay_spread_samples);
            }
            (aoa, los_delay + excess)
        };
        let per_path_var = w / (weight_sum * r_c as f64);
        let sigma = (per_path_var / 2.0).sqrt();
        for _ in 0..r_c {
            let aoa = center_aoa + sample_laplacian(rng, spread_rad);
            let (g_re, g_im) = sample_standard_normal(rng);
            paths.push(PathParams {
                gain: Complex64::new(g_re * sigma, g_im * sigma),
                aoa_rad: aoa,
                delay_samples: base_delay,
            });
        }
    }
    Ok(paths)
}

/// Channel coefficient vector h[l] for subcarrier `l` (1-based):
/// sum over rays of gain * steering(aoa) * exp(-j*2*pi*l*delay/n_sub).
pub fn subcarrier_response(
    paths: &[PathParams],
    l: usize,
    n_sub: usize,
    n_tx: usize,
    spacing_ratio: f64,
) -> Result<Vec<Complex64>> {
    if l < 1 || l > n_sub {
        return Err(Error::Domain(format!(
            "subcarrier index {l} out of range 1..={n_sub}"
        )));
    }
    let mut h = vec![Complex64::ZERO; n_tx];
    for p in paths {
        let delay_phase =
            Complex64::from_polar(1.0, -2.0 * PI * l as f64 * p.delay_samples / n_sub as f64);
        let coeff = p.gain * delay_phase;
        let e = steering_vector(p.aoa_rad, n_tx, spacing_ratio);
        for (hv, ev) in h.iter_mut().zip(e) {
            *hv += coeff * ev;
        }
    }
    Ok(h)
}

/// Draws rays for one UE and stacks the per-subcarrier responses into
/// the n_tx-by-n_sub CSI matrix.
pub fn generate_channel(
    config: &ScenarioConfig,
    ue_pos: (f64, f64),
    rng: &mut impl Rng,
) -> Result<ChannelSample> {
    let paths = sample_paths(config, ue_pos, rng)?;
    let mut h = CMat::zeros(config.n_tx, config.n_sub);
    for l in 1..=config.n_sub {
        let col = subcarrier_response(
            &paths,
            l,
            config.n_sub,
            config.n_tx,
            config.antenna_spacing_wavelengths,
        )?;
        h.set_col(l - 1, &col);
    }
    Ok(ChannelSample {
        h,
        position: ue_pos,
        scenario_id: config.scenario_id.clone(),
    })
}

/// Generates `n_samples` independent channel samples with UE positions
/// uniform over the configured area. Sample `i` uses seed `seed + i`, so
/// datasets are reproducible and can be generated in any order.
pub fn generate_dataset(
    config: &ScenarioConfig,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<ChannelSample>> {
    if n_samples < 1 {
        return Err(Error::Domain("n_samples must be >= 1".into()));
    }
    config.validate()?;
    let mut out = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let x = config.area.x_min + rng.random::<f64>() * config.area.width();
        let y = config.area.y_min + rng.random::<f64>() * config.area.height();
        out.push(generate_channel(config, (x, y), &mut rng)?);
    }
    Ok(out)
}
