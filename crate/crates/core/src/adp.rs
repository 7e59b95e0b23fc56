//! Angle Delay Profile: the beamspace image |Vᴴ·H·F| of a CSI matrix.
//!
//! V is the half-shifted angle DFT over antennas and F the delay DFT over
//! subcarriers. Both are unitary, so the transform preserves Frobenius
//! energy; the modulus turns the result into a real nonnegative image
//! whose axes approximate angle of arrival and delay. F carries the
//! exponent sign that undoes the channel's `exp(-j*2*pi*l*n/N_c)` delay
//! phase, which places a ray of delay n in column n of the profile.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::cmat::CMat;
use crate::error::Result;
use crate::tensor::Tensor;

/// Whether an ADP has been rescaled for model input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormMode {
    /// Raw |Vᴴ H F| magnitudes.
    Raw,
    /// Divided by the max entry, so the peak is 1.
    MaxUnit,
}

/// Real nonnegative angle-delay image, n_tx rows by n_sub columns.
#[derive(Debug, Clone, PartialEq)]
pub struct AdpMatrix {
    values: Tensor,
    norm_mode: NormMode,
}

impl AdpMatrix {
    /// Wraps externally produced magnitudes (for imported datasets and
    /// tests). Entries must be finite and nonnegative.
    pub fn from_values(values: Tensor) -> Result<Self> {
        if values.shape().len() != 2 {
            return Err(crate::error::Error::Contract(format!(
                "ADP must be a matrix, got shape {:?}",
                values.shape()
            )));
        }
        if values.data().iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(crate::error::Error::Contract(
                "ADP entries must be finite and nonnegative".into(),
            ));
        }
        Ok(Self {
            values,
            norm_mode: NormMode::Raw,
        })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn norm_mode(&self) -> NormMode {
        self.norm_mode
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn cols(&self) -> usize {
        self.values.cols()
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.values.at(r, c)
    }

    /// Location (row, col) of the largest entry.
    pub fn argmax(&self) -> (usize, usize) {
        let cols = self.cols();
        let mut best = (0, 0);
        let mut best_v = f64::NEG_INFINITY;
        for (i, &v) in self.values.data().iter().enumerate() {
            if v > best_v {
                best_v = v;
                best = (i / cols, i % cols);
            }
        }
        best
    }

    pub fn max_value(&self) -> f64 {
        self.values.data().iter().cloned().fold(0.0, f64::max)
    }
}

/// Angle DFT matrix V with the half-array shift: entry (z, q) is
/// `exp(-j*2*pi*z*(q - N_t/2)/N_t) / sqrt(N_t)`, so broadside energy
/// lands near row N_t/2.
pub fn dft_v(n_tx: usize) -> CMat {
    let n = n_tx as f64;
    let scale = 1.0 / n.sqrt();
    let mut m = CMat::zeros(n_tx, n_tx);
    for z in 0..n_tx {
        for q in 0..n_tx {
            let phase = -2.0 * PI * (z as f64) * (q as f64 - n / 2.0) / n;
            m.set(z, q, Complex64::from_polar(scale, phase));
        }
    }
    m
}

/// Delay DFT matrix F: entry (z, q) is `exp(j*2*pi*z*q/N_c) / sqrt(N_c)`.
///
/// The positive exponent is the inverse-DFT convention that matches the
/// negative delay phase of the channel model, so delay bin n maps to
/// profile column n.
pub fn dft_f(n_sub: usize) -> CMat {
    let n = n_sub as f64;
    let scale = 1.0 / n.sqrt();
    let mut m = CMat::zeros(n_sub, n_sub);
    for z in 0..n_sub {
        for q in 0..n_sub {
            let phase = 2.0 * PI * (z as f64) * (q as f64) / n;
            m.set(z, q, Complex64::from_polar(scale, phase));
        }
    }
    m
}

struct DftPair {
    v_h: CMat,
    f: CMat,
}

type DftCache = Mutex<HashMap<(usize, usize), Arc<DftPair>>>;

fn dft_cache(n_tx: usize, n_sub: usize) -> Arc<DftPair> {
    static CACHE: OnceLock<DftCache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("dft cache poisoned");
    guard
        .entry((n_tx, n_sub))
        .or_insert_with(|| {
            Arc::new(DftPair {
                v_h: dft_v(n_tx).hermitian(),
                f: dft_f(n_sub),
            })
        })
        .clone()
}

/// Beamspace transform Vᴴ·H·F without the modulus, kept complex.
pub fn beamspace(h: &CMat) -> Result<CMat> {
    let pair = dft_cache(h.rows(), h.cols());
    pair.v_h.matmul(h)?.matmul(&pair.f)
}

/// ADP of a CSI matrix: elementwise modulus of Vᴴ·H·F.
pub fn compute_adp(h: &CMat) -> Result<AdpMatrix> {
    let b = beamspace(h)?;
    let data: Vec<f64> = b.data().iter().map(|z| z.norm()).collect();
    Ok(AdpMatrix {
        values: Tensor::matrix(h.rows(), h.cols(), data)?,
        norm_mode: NormMode::Raw,
    })
}

/// Divides by the max entry so the peak is 1. An all-zero profile is
/// returned unchanged (no NaN), only the mode tag changes.
pub fn normalize_adp(a: &AdpMatrix) -> AdpMatrix {
    let max = a.max_value();
    let data = if max > 0.0 {
        a.values.data().iter().map(|&v| v / max).collect()
    } else {
        a.values.data().to_vec()
    };
    AdpMatrix {
        values: Tensor::new(a.values.shape().to_vec(), data).expect("normalize shape"),
        norm_mode: NormMode::MaxUnit,
    }
}
