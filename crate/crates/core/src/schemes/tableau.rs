//! Random-coefficient Runge-Kutta tableaus.
//!
//! A tableau turns the step size and the Wiener increments of one step into
//! concrete arrays `Z[m][i][j]` and `z[m][i]`, `m = 0` being the time channel.

use super::SchemeError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TableauKind {
    EulerMaruyama,
    Platen,
    Midpoint,
    PlatenStrong15,
    PlatenWeak2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SrkTableau {
    kind: TableauKind,
}

/// Concrete coefficients of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    stages: usize,
    channels: usize,
    big: Vec<f64>,
    small: Vec<f64>,
}

impl Coefficients {
    pub fn zeros(stages: usize, channels: usize) -> Self {
        Coefficients {
            stages,
            channels,
            big: vec![0.0; (channels + 1) * stages * stages],
            small: vec![0.0; (channels + 1) * stages],
        }
    }

    pub fn stages(&self) -> usize {
        self.stages
    }

    /// Number of Wiener channels `M` (the time channel is extra).
    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `Z[m][i][j]`, zero-based stage indices.
    pub fn big(&self, m: usize, i: usize, j: usize) -> f64 {
        self.big[(m * self.stages + i) * self.stages + j]
    }

    pub fn set_big(&mut self, m: usize, i: usize, j: usize, v: f64) {
        self.big[(m * self.stages + i) * self.stages + j] = v;
    }

    /// `z[m][i]`.
    pub fn small(&self, m: usize, i: usize) -> f64 {
        self.small[m * self.stages + i]
    }

    pub fn set_small(&mut self, m: usize, i: usize, v: f64) {
        self.small[m * self.stages + i] = v;
    }

    /// Stage offset `c_m^{i} = sum_j Z[m][i][j]`.
    pub fn stage_offset(&self, m: usize, i: usize) -> f64 {
        (0..self.stages).map(|j| self.big(m, i, j)).sum()
    }

    /// Offsets of stage `i` for channels `1..=M`.
    pub fn stage_offsets(&self, i: usize) -> Vec<f64> {
        (1..=self.channels).map(|m| self.stage_offset(m, i)).collect()
    }

    /// `c_m = sum_i z[m][i]`.
    pub fn total(&self, m: usize) -> f64 {
        (0..self.stages).map(|i| self.small(m, i)).sum()
    }

    /// Nonzero entry on or above the diagonal of any `Z[m]`.
    pub fn is_implicit_at(&self, i: usize) -> bool {
        (0..=self.channels).any(|m| self.big(m, i, i) != 0.0)
    }

    /// Whether stage `j` feeds any later stage or the final combination.
    pub fn stage_used(&self, j: usize) -> bool {
        (0..=self.channels).any(|m| {
            self.small(m, j) != 0.0 || (j..self.stages).any(|i| self.big(m, i, j) != 0.0)
        })
    }

    /// Reject coefficients above the diagonal; only diagonally implicit
    /// tableaus are supported.
    pub fn check_structure(&self) -> Result<(), SchemeError> {
        for m in 0..=self.channels {
            for i in 0..self.stages {
                for j in i + 1..self.stages {
                    if self.big(m, i, j) != 0.0 {
                        return Err(SchemeError::Tableau(format!(
                            "Z[{m}][{i}][{j}] above the diagonal"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

impl SrkTableau {
    pub const fn new(kind: TableauKind) -> Self {
        SrkTableau { kind }
    }

    pub fn kind(&self) -> TableauKind {
        self.kind
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            TableauKind::EulerMaruyama => "em",
            TableauKind::Platen => "platen",
            TableauKind::Midpoint => "midpoint",
            TableauKind::PlatenStrong15 => "platen15",
            TableauKind::PlatenWeak2 => "platen-weak2",
        }
    }

    pub fn stages(&self) -> usize {
        match self.kind {
            TableauKind::EulerMaruyama | TableauKind::Midpoint => 1,
            TableauKind::Platen => 2,
            TableauKind::PlatenStrong15 => 5,
            TableauKind::PlatenWeak2 => 4,
        }
    }

    pub fn implicit(&self) -> bool {
        self.kind == TableauKind::Midpoint
    }

    pub fn needs_dz(&self) -> bool {
        self.kind == TableauKind::PlatenStrong15
    }

    /// Schemes stated for a single Wiener channel only.
    pub fn single_channel(&self) -> bool {
        matches!(
            self.kind,
            TableauKind::Platen | TableauKind::PlatenStrong15 | TableauKind::PlatenWeak2
        )
    }

    /// Nominal mean-square order (midpoint: commutative noise).
    pub fn strong_order(&self) -> f64 {
        match self.kind {
            TableauKind::EulerMaruyama => 0.5,
            TableauKind::Platen | TableauKind::Midpoint | TableauKind::PlatenWeak2 => 1.0,
            TableauKind::PlatenStrong15 => 1.5,
        }
    }

    pub fn weak_order(&self) -> f64 {
        match self.kind {
            TableauKind::EulerMaruyama | TableauKind::Platen | TableauKind::Midpoint => 1.0,
            TableauKind::PlatenStrong15 => 1.5,
            TableauKind::PlatenWeak2 => 2.0,
        }
    }

    pub fn check_channels(&self, channels: usize) -> Result<(), SchemeError> {
        if self.single_channel() && channels != 1 {
            return Err(SchemeError::Channels {
                scheme: self.name(),
                channels,
            });
        }
        Ok(())
    }

    /// Coefficients for one step of size `h` with increments `dw`.
    pub fn coefficients(&self, h: f64, dw: &[f64], dz: Option<f64>) -> Result<Coefficients, SchemeError> {
        let m = dw.len();
        self.check_channels(m)?;
        let s = self.stages();
        let mut c = Coefficients::zeros(s, m);
        let sh = h.sqrt();
        match self.kind {
            TableauKind::EulerMaruyama => {
                c.set_small(0, 0, h);
                for (k, &w) in dw.iter().enumerate() {
                    c.set_small(k + 1, 0, w);
                }
            }
            TableauKind::Midpoint => {
                c.set_big(0, 0, 0, 0.5 * h);
                c.set_small(0, 0, h);
                for (k, &w) in dw.iter().enumerate() {
                    c.set_big(k + 1, 0, 0, 0.5 * w);
                    c.set_small(k + 1, 0, w);
                }
            }
            TableauKind::Platen => {
                let w = dw[0];
                let q = (w * w - h) / (2.0 * sh);
                c.set_big(0, 1, 0, h);
                c.set_big(1, 1, 0, sh);
                c.set_small(0, 0, h);
                c.set_small(1, 0, w - q);
                c.set_small(1, 1, q);
            }
            TableauKind::PlatenStrong15 => {
                let w = dw[0];
                let z = dz.ok_or(SchemeError::MissingDz)?;
                let a = (w * w - h) / (4.0 * sh);
                let b = (w * h - z) / (2.0 * h);
                let e = (w * w / 3.0 - h) * w / (4.0 * h);
                for i in 1..5 {
                    c.set_big(0, i, 0, h);
                }
                c.set_big(1, 1, 0, sh);
                c.set_big(1, 2, 0, -sh);
                c.set_big(1, 3, 0, sh);
                c.set_big(1, 3, 1, sh);
                c.set_big(1, 4, 0, sh);
                c.set_big(1, 4, 1, -sh);
                c.set_small(0, 0, 0.5 * h);
                c.set_small(0, 1, z / (2.0 * sh) + 0.25 * h);
                c.set_small(0, 2, -z / (2.0 * sh) + 0.25 * h);
                c.set_small(1, 0, w - 2.0 * b);
                c.set_small(1, 1, a + b - e);
                c.set_small(1, 2, -a + b + e);
                c.set_small(1, 3, e);
                c.set_small(1, 4, -e);
            }
            TableauKind::PlatenWeak2 => {
                let w = dw[0];
                let q = (w * w - h) / (4.0 * sh);
                for i in 1..4 {
                    c.set_big(0, i, 0, h);
                }
                c.set_big(1, 1, 0, w);
                c.set_big(1, 2, 0, sh);
                c.set_big(1, 3, 0, -sh);
                c.set_small(0, 0, 0.5 * h);
                c.set_small(0, 1, 0.5 * h);
                c.set_small(1, 0, 0.5 * w);
                c.set_small(1, 2, 0.25 * w + q);
                c.set_small(1, 3, 0.25 * w - q);
            }
        }
        Ok(c)
    }
}

pub fn tableau_euler_maruyama() -> SrkTableau {
    SrkTableau::new(TableauKind::EulerMaruyama)
}

pub fn tableau_platen() -> SrkTableau {
    SrkTableau::new(TableauKind::Platen)
}

pub fn tableau_midpoint() -> SrkTableau {
    SrkTableau::new(TableauKind::Midpoint)
}

pub fn tableau_platen_strong_15() -> SrkTableau {
    SrkTableau::new(TableauKind::PlatenStrong15)
}

pub fn tableau_platen_weak_2() -> SrkTableau {
    SrkTableau::new(TableauKind::PlatenWeak2)
}

pub const ALL_TABLEAUS: [TableauKind; 5] = [
    TableauKind::EulerMaruyama,
    TableauKind::Platen,
    TableauKind::Midpoint,
    TableauKind::PlatenStrong15,
    TableauKind::PlatenWeak2,
];

#[cfg(test)]
mod tests {
    use super::*;

    const H: f64 = 0.04;
    const DW: f64 = -0.13;
    const DZ: f64 = -0.0021;

    fn coeffs(kind: TableauKind) -> Coefficients {
        SrkTableau::new(kind).coefficients(H, &[DW], Some(DZ)).unwrap()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-15 * (1.0 + b.abs())
    }

    #[test]
    fn totals_are_h_and_dw() {
        for kind in ALL_TABLEAUS {
            let c = coeffs(kind);
            assert!(close(c.total(0), H), "{kind:?} c0");
            assert!(close(c.total(1), DW), "{kind:?} c1 = {}", c.total(1));
            c.check_structure().unwrap();
        }
    }

    #[test]
    fn platen15_stage_offsets() {
        let c = coeffs(TableauKind::PlatenStrong15);
        let s = H.sqrt();
        let want = [(0.0, 0.0), (H, s), (H, -s), (H, 2.0 * s), (H, 0.0)];
        for (i, (c0, c1)) in want.iter().enumerate() {
            assert!(close(c.stage_offset(0, i), *c0));
            assert!(close(c.stage_offset(1, i), *c1));
        }
    }

    #[test]
    fn platen_weak2_stage_offsets() {
        let c = coeffs(TableauKind::PlatenWeak2);
        let s = H.sqrt();
        let want = [(0.0, 0.0), (H, DW), (H, s), (H, -s)];
        for (i, (c0, c1)) in want.iter().enumerate() {
            assert!(close(c.stage_offset(0, i), *c0));
            assert!(close(c.stage_offset(1, i), *c1));
        }
    }

    #[test]
    fn platen_bracket_vanishes_at_sqrt_h() {
        let (h, s) = (0.25, 0.5);
        let c = tableau_platen().coefficients(h, &[s], None).unwrap();
        assert_eq!(c.small(1, 1), 0.0);
        assert_eq!(c.small(1, 0), s);
        let c = tableau_platen_weak_2().coefficients(h, &[s], None).unwrap();
        assert_eq!(c.small(1, 2), c.small(1, 3));
    }

    #[test]
    fn midpoint_is_diagonal() {
        let c = tableau_midpoint().coefficients(H, &[DW, 0.2], None).unwrap();
        assert!(c.is_implicit_at(0));
        assert_eq!(c.big(2, 0, 0), 0.1);
        assert!(tableau_midpoint().implicit());
    }

    #[test]
    fn channel_and_dz_checks() {
        assert!(matches!(
            tableau_platen().coefficients(H, &[0.1, 0.2], None),
            Err(SchemeError::Channels { .. })
        ));
        assert!(matches!(
            tableau_platen_strong_15().coefficients(H, &[0.1], None),
            Err(SchemeError::MissingDz)
        ));
        let em = tableau_euler_maruyama().coefficients(H, &[0.1, 0.2, 0.3], None).unwrap();
        assert_eq!(em.total(3), 0.3);
    }

    #[test]
    fn rejects_upper_entries() {
        let mut c = Coefficients::zeros(2, 1);
        c.set_big(1, 0, 1, 1.0);
        assert!(c.check_structure().is_err());
    }
}
