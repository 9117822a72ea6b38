//! Re-ID-like synthetic data on the unit sphere.
//!
//! Every identity has a prototype direction; every (identity, camera) pair
//! has an offset vector made of a component shared by all identities seen
//! by that camera and an identity-specific component. An instance is
//! `normalize(prototype + offset + noise)`.
//!
//! Spreads are expressed as expected vector norms: a Gaussian with spread
//! `σ` in `D` dimensions has per-coordinate standard deviation `σ/√D`.
//!
//! Training and test identities are disjoint. For each test identity the
//! first instance seen by every camera becomes a query and the rest form
//! the gallery.

use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Sample, NORM_EPS};

const MAX_REJECTIONS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub num_identities: usize,
    /// Identities in the query/gallery split.
    pub num_test_identities: usize,
    pub instances_per_identity: usize,
    pub dims: usize,
    pub num_cameras: usize,
    /// Per-instance noise spread.
    pub intra_spread: f64,
    /// Per-(identity, camera) offset spread.
    pub camera_shift: f64,
    /// Fraction of camera-offset variance shared across identities.
    pub camera_shared: f64,
    /// Minimum angle (radians) between any two prototypes.
    pub min_separation: f64,
    /// Pull of every prototype towards one common anchor direction;
    /// 0 gives uniform prototypes, values near 1 make them overlap.
    pub prototype_overlap: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_identities: 50,
            num_test_identities: 50,
            instances_per_identity: 20,
            dims: 32,
            num_cameras: 3,
            intra_spread: 0.1,
            camera_shift: 0.3,
            camera_shared: 0.5,
            min_separation: 0.5,
            prototype_overlap: 0.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    /// Overlapping prototypes and strong camera shifts.
    pub fn hard() -> Self {
        Self {
            intra_spread: 0.25,
            camera_shift: 0.6,
            camera_shared: 0.5,
            min_separation: 0.1,
            prototype_overlap: 0.5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_identities", self.num_identities),
            ("num_test_identities", self.num_test_identities),
            ("instances_per_identity", self.instances_per_identity),
            ("dims", self.dims),
            ("num_cameras", self.num_cameras),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Validation(format!("{name} must be >= 1")));
            }
        }
        let spreads = [
            ("intra_spread", self.intra_spread),
            ("camera_shift", self.camera_shift),
            ("min_separation", self.min_separation),
        ];
        for (name, v) in spreads {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.camera_shared) {
            return Err(Error::Validation("camera_shared must lie in [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.prototype_overlap) {
            return Err(Error::Validation("prototype_overlap must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Train, query and gallery splits.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub train: Vec<Sample>,
    pub query: Vec<Sample>,
    pub gallery: Vec<Sample>,
}

fn gaussian(rng: &mut ChaCha8Rng, dims: usize, spread: f64) -> Array1<f64> {
    let scale = spread / (dims as f64).sqrt();
    Array1::from_shape_fn(dims, |_| {
        let z: f64 = StandardNormal.sample(rng);
        z * scale
    })
}

fn normalized(v: Array1<f64>) -> Array1<f64> {
    let n = (v.dot(&v) + NORM_EPS).sqrt();
    v / n
}

fn unit_direction(rng: &mut ChaCha8Rng, dims: usize) -> Array1<f64> {
    normalized(gaussian(rng, dims, 1.0))
}

fn to_f32(v: &Array1<f64>) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    if spec.num_cameras < 2 {
        return Err(Error::SpecInfeasible(
            "at least two cameras are needed for cross-camera queries".into(),
        ));
    }
    if spec.instances_per_identity < 2 * spec.num_cameras {
        return Err(Error::SpecInfeasible(format!(
            "{} instances cannot give every one of {} cameras a query and a gallery entry",
            spec.instances_per_identity, spec.num_cameras
        )));
    }
    let d = spec.dims;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let anchor = unit_direction(&mut rng, d);
    let total = spec.num_identities + spec.num_test_identities;
    let min_cos = spec.min_separation.cos();
    let mut prototypes: Vec<Array1<f64>> = Vec::with_capacity(total);
    while prototypes.len() < total {
        let mut accepted = None;
        for _ in 0..MAX_REJECTIONS {
            let free = unit_direction(&mut rng, d);
            let cand = normalized(&anchor * spec.prototype_overlap + &free * (1.0 - spec.prototype_overlap));
            if prototypes.iter().all(|p| p.dot(&cand) <= min_cos) {
                accepted = Some(cand);
                break;
            }
        }
        match accepted {
            Some(p) => prototypes.push(p),
            None => {
                return Err(Error::SpecInfeasible(format!(
                    "could not place prototype {} with minimum separation {} rad after {MAX_REJECTIONS} tries",
                    prototypes.len(),
                    spec.min_separation
                )))
            }
        }
    }

    let shared: Vec<Array1<f64>> = (0..spec.num_cameras)
        .map(|_| gaussian(&mut rng, d, spec.camera_shift * spec.camera_shared.sqrt()))
        .collect();

    let mut data = SynthData {
        train: Vec::new(),
        query: Vec::new(),
        gallery: Vec::new(),
    };
    for (id, proto) in prototypes.iter().enumerate() {
        let offsets: Vec<Array1<f64>> = shared
            .iter()
            .map(|s| s + &gaussian(&mut rng, d, spec.camera_shift * (1.0 - spec.camera_shared).sqrt()))
            .collect();
        let is_test = id >= spec.num_identities;
        for j in 0..spec.instances_per_identity {
            let cam = j % spec.num_cameras;
            let x = normalized(proto + &offsets[cam] + &gaussian(&mut rng, d, spec.intra_spread));
            let sample = Sample::new(to_f32(&x), id as i64, cam as u32);
            match (is_test, j < spec.num_cameras) {
                (false, _) => data.train.push(sample),
                (true, true) => data.query.push(sample),
                (true, false) => data.gallery.push(sample),
            }
        }
    }
    Ok(data)
}
