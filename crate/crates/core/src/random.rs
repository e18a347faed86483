//! Seeded random streams.
//!
//! Every generator draws from a ChaCha8 stream keyed by the user seed and a
//! fixed per-purpose stream id, so that e.g. pose sampling and noise
//! injection never share state.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::transforms::{Rotation3, UnitQuaternion, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Object = 1,
    Pose = 2,
    Views = 3,
    Noise = 4,
    Outliers = 5,
    Sampler = 6,
    Test = 7,
    Gradcheck = 8,
}

pub fn rng_for(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Uniform rotation via a normalized 4D Gaussian quaternion.
pub fn uniform_rotation<R: Rng + ?Sized>(rng: &mut R) -> Rotation3 {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
        if let Ok(q) = UnitQuaternion::new(q[0], q[1], q[2], q[3]) {
            return q.to_rotation();
        }
    }
}

pub fn gaussian_vec3<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> Vec3 {
    Vec3::from_fn(|_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z * sigma
    })
}

/// Uniform point in the ball of the given radius.
pub fn uniform_in_ball<R: Rng + ?Sized>(rng: &mut R, radius: f64) -> Vec3 {
    loop {
        let v = Vec3::from_fn(|_, _| rng.random_range(-1.0..=1.0));
        if v.norm_squared() <= 1.0 {
            return v * radius;
        }
    }
}

pub fn unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    loop {
        let v = gaussian_vec3(rng, 1.0);
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}
