//! Synthetic lead fields from sphere-cap dipole geometry.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::leadfield::LeadField;

/// Polar half-angle of the vertex cap.
const CAP_ANGLE: f64 = PI / 3.0;
/// Radius of the channel shell relative to the unit vertex sphere.
const CHANNEL_RADIUS: f64 = 1.2;
/// Rough component keeping gain columns from exact collinearity.
const GAIN_NOISE_SD: f64 = 0.01;

/// Vertices sample a polar cap of the unit sphere, one azimuth sector per
/// region so region ids come out contiguous and non-empty. Channels sit on a
/// golden-angle spiral over a concentric outer shell. Gains follow the
/// free-space falloff `(q_c - p_s) / |q_c - p_s|^3` per orientation axis.
pub fn generate_leadfield(
    n_channels: usize,
    n_vertices: usize,
    n_regions: usize,
    seed: u64,
) -> Result<LeadField> {
    if n_regions == 0 || n_vertices < n_regions {
        return Err(Error::DomainError(format!(
            "need at least one vertex per region, got {n_vertices} vertices for {n_regions} regions"
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);

    let sector = 2.0 * PI / n_regions as f64;
    let mut positions = DMatrix::zeros(n_vertices, 3);
    let mut regions = Vec::with_capacity(n_vertices);
    for s in 0..n_vertices {
        let region = s * n_regions / n_vertices;
        // Area-uniform polar angle on the cap, azimuth inside the sector.
        let u: f64 = rng.random();
        let theta = (1.0 - u * (1.0 - CAP_ANGLE.cos())).acos();
        let phi = (region as f64 + rng.random::<f64>()) * sector;
        positions[(s, 0)] = theta.sin() * phi.cos();
        positions[(s, 1)] = theta.sin() * phi.sin();
        positions[(s, 2)] = theta.cos();
        regions.push(region);
    }

    let golden = PI * (3.0 - 5.0f64.sqrt());
    let mut gains = DMatrix::zeros(n_channels, 3 * n_vertices);
    for c in 0..n_channels {
        let frac = (c as f64 + 0.5) / n_channels as f64;
        let theta = CAP_ANGLE * frac.sqrt();
        let phi = c as f64 * golden;
        let q = [
            CHANNEL_RADIUS * theta.sin() * phi.cos(),
            CHANNEL_RADIUS * theta.sin() * phi.sin(),
            CHANNEL_RADIUS * theta.cos(),
        ];
        for s in 0..n_vertices {
            let r = [
                q[0] - positions[(s, 0)],
                q[1] - positions[(s, 1)],
                q[2] - positions[(s, 2)],
            ];
            let norm = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
            for d in 0..3 {
                let e: f64 = StandardNormal.sample(&mut rng);
                gains[(c, 3 * s + d)] = r[d] / norm.powi(3) + GAIN_NOISE_SD * e;
            }
        }
    }

    LeadField::new(gains, positions, regions)
}
