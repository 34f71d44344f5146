//! Wiener increments on equidistant grids.
//!
//! Every path is driven by its own ChaCha8 stream: the key is the master seed
//! and the stream number is the path index, so a path can be regenerated in
//! isolation and parallel runs do not depend on scheduling. Within a path the
//! draws are consumed step by step, channel by channel, followed by the extra
//! normal for `dZ` when requested.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NoiseError {
    #[error("need at least one step, got {0}")]
    NoSteps(usize),
    #[error("step size must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("dZ is only defined for a single noise channel, got {0}")]
    DzChannels(usize),
    #[error("coarsening factor {factor} does not divide {steps} steps")]
    Factor { factor: usize, steps: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseGrid {
    channels: usize,
    steps: usize,
    h: f64,
    dw: Vec<f64>,
    dz: Option<Vec<f64>>,
    seed: u64,
    path_index: u64,
}

/// Draw the increments of one path.
pub fn sample_grid(
    seed: u64,
    path_index: u64,
    channels: usize,
    steps: usize,
    h: f64,
    need_dz: bool,
) -> Result<NoiseGrid, NoiseError> {
    if steps == 0 {
        return Err(NoiseError::NoSteps(steps));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(NoiseError::BadStep(h));
    }
    if need_dz && channels != 1 {
        return Err(NoiseError::DzChannels(channels));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_index);
    let sqrt_h = h.sqrt();
    let mut dw = Vec::with_capacity(steps * channels);
    let mut dz = need_dz.then(|| Vec::with_capacity(steps));
    for _ in 0..steps {
        for _ in 0..channels {
            let xi: f64 = StandardNormal.sample(&mut rng);
            dw.push(sqrt_h * xi);
        }
        if let Some(dz) = dz.as_mut() {
            let zeta: f64 = StandardNormal.sample(&mut rng);
            let w = dw[dw.len() - 1];
            dz.push(0.5 * h * (w + sqrt_h * zeta / 3f64.sqrt()));
        }
    }
    Ok(NoiseGrid {
        channels,
        steps,
        h,
        dw,
        dz,
        seed,
        path_index,
    })
}

/// Pairwise sum; fixed order so nested coarsening is reproducible.
fn pairwise(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n => pairwise(&xs[..n / 2]) + pairwise(&xs[n / 2..]),
    }
}

/// `(dW, dZ)` of consecutive single-channel steps, merged along the same
/// balanced tree as [`pairwise`]: `Z = Z_1 + Z_2 + h_2 W_1`.
fn merge_dz(dw: &[f64], dz: &[f64], h: f64) -> (f64, f64) {
    let n = dw.len();
    if n == 1 {
        return (dw[0], dz[0]);
    }
    let mid = n / 2;
    let (w1, z1) = merge_dz(&dw[..mid], &dz[..mid], h);
    let (w2, z2) = merge_dz(&dw[mid..], &dz[mid..], h);
    (w1 + w2, z1 + z2 + h * (n - mid) as f64 * w1)
}

impl NoiseGrid {
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path_index(&self) -> u64 {
        self.path_index
    }

    pub fn has_dz(&self) -> bool {
        self.dz.is_some()
    }

    /// Increments `dW_1..dW_M` of step `n`.
    pub fn dw(&self, n: usize) -> &[f64] {
        &self.dw[n * self.channels..(n + 1) * self.channels]
    }

    pub fn dz(&self, n: usize) -> Option<f64> {
        self.dz.as_ref().map(|z| z[n])
    }

    /// `W_m(T) - W_m(t_0)`, summed pairwise.
    pub fn total(&self, channel: usize) -> f64 {
        let col: Vec<f64> = (0..self.steps).map(|n| self.dw(n)[channel]).collect();
        pairwise(&col)
    }

    /// Build a grid from explicit increments (row-major, `steps x channels`).
    pub fn from_increments(
        h: f64,
        channels: usize,
        dw: Vec<f64>,
        dz: Option<Vec<f64>>,
    ) -> Result<NoiseGrid, NoiseError> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(NoiseError::BadStep(h));
        }
        let steps = if channels == 0 { 0 } else { dw.len() / channels };
        if steps == 0 || steps * channels != dw.len() {
            return Err(NoiseError::NoSteps(steps));
        }
        if let Some(z) = &dz {
            if channels != 1 {
                return Err(NoiseError::DzChannels(channels));
            }
            if z.len() != steps {
                return Err(NoiseError::NoSteps(z.len()));
            }
        }
        Ok(NoiseGrid {
            channels,
            steps,
            h,
            dw,
            dz,
            seed: 0,
            path_index: 0,
        })
    }

    /// Merge blocks of `factor` steps. `dW` is summed pairwise; `dZ` is
    /// recombined exactly as `sum_k [dZ_k + h_f (W(t_k) - W(t_start))]`,
    /// grouped like `dW` so that coarsening composes bit-for-bit.
    pub fn coarsen(&self, factor: usize) -> Result<NoiseGrid, NoiseError> {
        if factor == 0 || self.steps % factor != 0 {
            return Err(NoiseError::Factor {
                factor,
                steps: self.steps,
            });
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let steps = self.steps / factor;
        let m = self.channels;
        let mut dw = Vec::with_capacity(steps * m);
        let mut block = vec![0.0; factor];
        for b in 0..steps {
            for c in 0..m {
                for (k, slot) in block.iter_mut().enumerate() {
                    *slot = self.dw[(b * factor + k) * m + c];
                }
                dw.push(pairwise(&block));
            }
        }
        let dz = self.dz.as_ref().map(|z| {
            (0..steps)
                .map(|b| {
                    let r = b * factor..(b + 1) * factor;
                    merge_dz(&self.dw[r.clone()], &z[r], self.h).1
                })
                .collect()
        });
        Ok(NoiseGrid {
            channels: m,
            steps,
            h: self.h * factor as f64,
            dw,
            dz,
            seed: self.seed,
            path_index: self.path_index,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_by_key() {
        let a = sample_grid(7, 3, 2, 16, 0.01, false).unwrap();
        let b = sample_grid(7, 3, 2, 16, 0.01, false).unwrap();
        assert_eq!(a, b);
        let c = sample_grid(7, 4, 2, 16, 0.01, false).unwrap();
        assert_ne!(a.dw(0), c.dw(0));
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(sample_grid(1, 0, 1, 0, 0.1, false), Err(NoiseError::NoSteps(0)));
        assert_eq!(sample_grid(1, 0, 1, 4, 0.0, false), Err(NoiseError::BadStep(0.0)));
        assert_eq!(sample_grid(1, 0, 2, 4, 0.1, true), Err(NoiseError::DzChannels(2)));
        let g = sample_grid(1, 0, 1, 6, 0.1, false).unwrap();
        assert!(g.coarsen(4).is_err());
        assert!(g.coarsen(0).is_err());
    }

    #[test]
    fn coarsen_definition() {
        let g = sample_grid(11, 0, 1, 4, 0.25, false).unwrap();
        let c = g.coarsen(2).unwrap();
        assert_eq!(c.dw(0)[0], g.dw(0)[0] + g.dw(1)[0]);
        assert_eq!(c.dw(1)[0], g.dw(2)[0] + g.dw(3)[0]);
        assert_eq!(c.h(), 0.5);
        assert_eq!(g.coarsen(1).unwrap(), g);
    }

    #[test]
    fn coarsen_associative_and_sum_invariant() {
        let g = sample_grid(5, 9, 2, 64, 1.0 / 64.0, false).unwrap();
        let twice = g.coarsen(2).unwrap().coarsen(2).unwrap();
        let once = g.coarsen(4).unwrap();
        assert_eq!(twice.dw, once.dw);
        let z = sample_grid(5, 9, 1, 64, 1.0 / 64.0, true).unwrap();
        assert_eq!(z.coarsen(2).unwrap().coarsen(2).unwrap().dz, z.coarsen(4).unwrap().dz);
        for c in 0..2 {
            assert_eq!(g.total(c), once.total(c));
            assert_eq!(g.total(c), g.coarsen(64).unwrap().dw(0)[c]);
        }
    }

    #[test]
    fn coarsened_dz_matches_brownian_integral() {
        // With W piecewise linear inside each fine step, dZ_k = h dW_k / 2 and
        // the coarse integral of a piecewise-linear path is exact.
        let dw = vec![0.3, -0.1, 0.2, 0.05];
        let h = 0.25;
        let dz: Vec<f64> = dw.iter().map(|w| 0.5 * h * w).collect();
        let g = NoiseGrid::from_increments(h, 1, dw, Some(dz)).unwrap();
        let c = g.coarsen(4).unwrap();
        // trapezoid of W at 0, .3, .2, .4, .45
        let expect = h * (0.0 / 2.0 + 0.3 + 0.2 + 0.4 + 0.45 / 2.0);
        assert!((c.dz(0).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn sample_moments() {
        let h = 0.01;
        let n = 1_000_000;
        let g = sample_grid(2024, 0, 1, n, h, true).unwrap();
        let (mut sw, mut sww, mut szz, mut swz) = (0.0, 0.0, 0.0, 0.0);
        for k in 0..n {
            let w = g.dw(k)[0];
            let z = g.dz(k).unwrap();
            sw += w;
            sww += w * w;
            szz += z * z;
            swz += w * z;
        }
        let nf = n as f64;
        let se = (h / nf).sqrt();
        assert!((sw / nf).abs() < 4.0 * se);
        assert!(((sww / nf) / h - 1.0).abs() < 0.01);
        assert!(((szz / nf) / (h * h * h / 3.0) - 1.0).abs() < 0.01);
        assert!(((swz / nf) / (h * h / 2.0) - 1.0).abs() < 0.01);
    }

    #[test]
    fn streams_uncorrelated() {
        let n = 100_000;
        let a = sample_grid(99, 0, 1, n, 1.0, false).unwrap();
        let b = sample_grid(99, 1, 1, n, 1.0, false).unwrap();
        let corr: f64 = (0..n).map(|k| a.dw(k)[0] * b.dw(k)[0]).sum::<f64>() / n as f64;
        assert!(corr.abs() < 4.0 / (n as f64).sqrt());
    }
}
