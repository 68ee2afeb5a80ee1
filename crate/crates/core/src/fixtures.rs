//! Deterministic synthetic images for the desk-scale fixture, so tests and
//! demos run without external assets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::imaging::RgbImage;
use crate::network::LossNetwork;

/// Seed of the loss network used by the desk-scale fixture.
pub const FIXTURE_NETWORK_SEED: u64 = 7;
/// Working size of the desk-scale fixture.
pub const FIXTURE_SIZE: usize = 64;

pub fn fixture_network() -> LossNetwork {
    LossNetwork::tiny(FIXTURE_NETWORK_SEED)
}

/// A portrait-like motif: a shaded head-and-shoulders silhouette with two
/// eyes on a plain background.
pub fn portrait(size: usize) -> RgbImage {
    let mut img = RgbImage::filled(size, size, [0; 3]);
    let s = size as f64;
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = ((x as f64 + 0.5) / s, (y as f64 + 0.5) / s);
            let bg = 200.0 - 60.0 * fy;
            let mut rgb = [bg * 0.8, bg * 0.9, bg];
            let head = ((fx - 0.5) / 0.22).powi(2) + ((fy - 0.4) / 0.28).powi(2);
            let shoulders = ((fx - 0.5) / 0.45).powi(2) + ((fy - 1.05) / 0.3).powi(2);
            if head < 1.0 {
                let shade = 1.0 - 0.35 * head;
                rgb = [225.0 * shade, 170.0 * shade, 140.0 * shade];
                for ex in [0.42, 0.58] {
                    if ((fx - ex) / 0.04).powi(2) + ((fy - 0.36) / 0.025).powi(2) < 1.0 {
                        rgb = [30.0, 25.0, 20.0];
                    }
                }
                if ((fx - 0.5) / 0.08).powi(2) + ((fy - 0.52) / 0.015).powi(2) < 1.0 {
                    rgb = [150.0, 60.0, 60.0];
                }
            } else if shoulders < 1.0 {
                rgb = [40.0, 60.0 + 40.0 * fx, 120.0];
            }
            img.set_pixel(x, y, rgb.map(|v| v.round().clamp(0.0, 255.0) as u8));
        }
    }
    img
}

/// Style image family: colored diagonal stripes with seeded speckle. The
/// variant picks the palette and stripe period.
pub fn texture(size: usize, variant: u64) -> RgbImage {
    let palettes: [[[u8; 3]; 2]; 4] = [
        [[230, 60, 30], [20, 40, 160]],
        [[250, 220, 40], [20, 120, 60]],
        [[240, 240, 240], [10, 10, 10]],
        [[180, 40, 200], [40, 200, 190]],
    ];
    let palette = palettes[(variant % 4) as usize];
    let period = 4 + 2 * (variant % 3) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed ^ variant);
    let mut img = RgbImage::filled(size, size, [0; 3]);
    for y in 0..size {
        for x in 0..size {
            let band = ((x + y) / period) % 2;
            let base = palette[band];
            let jitter: i16 = rng.random_range(-25..=25);
            img.set_pixel(x, y, base.map(|c| (c as i16 + jitter).clamp(0, 255) as u8));
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_deterministic() {
        assert_eq!(portrait(32), portrait(32));
        assert_eq!(texture(32, 1), texture(32, 1));
        assert_ne!(texture(32, 1), texture(32, 2));
    }
}
