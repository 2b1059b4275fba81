//! The recentered pressure on `D_r ∖ E^ε` and weak pairings against bump
//! test functions.

use crate::error::{Error, Result};

use super::{Grid, StaggeredField};

/// Pressure minus its mean over the support cells, zero elsewhere.
#[derive(Clone, Debug)]
pub struct ModifiedPressure {
    pub values: Vec<f64>,
    pub support: Vec<bool>,
    pub shell: f64,
    /// The mean that was removed.
    pub mean: f64,
}

/// Support: cells not in `e_mask` whose centers are farther than `shell`
/// from ∂D.
pub fn modified_pressure(p: &StaggeredField, e_mask: &[bool], shell: f64) -> Result<ModifiedPressure> {
    let g = &p.grid;
    if e_mask.len() != g.cells() {
        return Err(Error::Config(format!("mask has {} cells, grid has {}", e_mask.len(), g.cells())));
    }
    let hw = g.half_width();
    let support: Vec<bool> = (0..g.cells())
        .map(|c| {
            let x = g.cell_center(c);
            let dist = hw - x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            !e_mask[c] && dist > shell
        })
        .collect();
    let count = support.iter().filter(|&&s| s).count();
    if count == 0 {
        return Err(Error::Numeric("modified pressure has empty support".into()));
    }
    let mean = (0..g.cells()).filter(|&c| support[c]).map(|c| p.p[c]).sum::<f64>() / count as f64;
    let values = (0..g.cells()).map(|c| if support[c] { p.p[c] - mean } else { 0.0 }).collect();
    Ok(ModifiedPressure { values, support, shell, mean })
}

/// `Σ_cells a φ h³` with φ at cell centers.
pub fn weak_pairing(g: &Grid, a: &[f64], phi: impl Fn(&[f64; 3]) -> f64) -> f64 {
    let h3 = g.h.powi(3);
    a.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(c, v)| v * phi(&g.cell_center(c))).sum::<f64>() * h3
}

/// Cell-centered velocity paired with a scalar test function, per component.
pub fn velocity_pairing(u: &StaggeredField, phi: impl Fn(&[f64; 3]) -> f64) -> [f64; 3] {
    let g = &u.grid;
    let h3 = g.h.powi(3);
    let mut out = [0.0; 3];
    for c in 0..g.cells() {
        let w = phi(&g.cell_center(c));
        if w != 0.0 {
            let v = u.cell_velocity(c);
            for a in 0..3 {
                out[a] += w * v[a] * h3;
            }
        }
    }
    out
}

/// `amplitude · exp(1 − 1/(1 − s²))`, `s = |x − center| / radius`, zero
/// outside the ball.
#[derive(Clone, Debug, PartialEq)]
pub struct Bump {
    pub center: [f64; 3],
    pub radius: f64,
    pub amplitude: f64,
}

impl Bump {
    pub fn eval(&self, x: &[f64; 3]) -> f64 {
        let s2 = (0..3).map(|i| (x[i] - self.center[i]).powi(2)).sum::<f64>() / (self.radius * self.radius);
        if s2 >= 1.0 {
            0.0
        } else {
            self.amplitude * (1.0 - 1.0 / (1.0 - s2)).exp()
        }
    }

    /// Three bumps with disjoint supports inside the unit cube.
    pub fn battery() -> [Bump; 3] {
        [
            Bump { center: [-0.2, -0.2, -0.2], radius: 0.2, amplitude: 1.0 },
            Bump { center: [0.2, 0.2, -0.1], radius: 0.2, amplitude: 1.0 },
            Bump { center: [0.0, 0.0, 0.25], radius: 0.18, amplitude: 1.0 },
        ]
    }

    /// `∫ bump` in closed radial form, by Gauss–Legendre in the radius.
    pub fn integral(&self) -> f64 {
        let (x, w) = super::drag::gauss_legendre(40);
        let r = self.radius;
        let s: f64 = x
            .iter()
            .zip(&w)
            .map(|(t, w)| {
                let s = 0.5 * (t + 1.0);
                let v = if s < 1.0 { (1.0 - 1.0 / (1.0 - s * s)).exp() } else { 0.0 };
                0.5 * w * v * s * s
            })
            .sum();
        4.0 * std::f64::consts::PI * r * r * r * s * self.amplitude
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recentering_and_support() {
        let g = Grid::unit(8);
        let mut f = StaggeredField::zeros(&g);
        for (c, v) in f.p.iter_mut().enumerate() {
            *v = 3.0 + (c as f64).sin();
        }
        let mut mask = vec![false; g.cells()];
        mask[g.cell_index(4, 4, 4)] = true;
        let m = modified_pressure(&f, &mask, 0.15).unwrap();
        let n = m.support.iter().filter(|&&s| s).count();
        // Centers at distance 0.0625 from the wall are cut, the other six layers kept.
        assert_eq!(n, 6 * 6 * 6 - 1);
        let s: f64 = m.values.iter().sum();
        assert!(s.abs() < 1e-12 * n as f64);
        assert_eq!(m.values[g.cell_index(4, 4, 4)], 0.0);
        assert_eq!(m.values[g.cell_index(0, 4, 4)], 0.0);
        assert!(modified_pressure(&f, &vec![true; g.cells()], 0.0).is_err());
    }

    #[test]
    fn constant_pressure_vanishes() {
        let g = Grid::unit(6);
        let mut f = StaggeredField::zeros(&g);
        f.p.iter_mut().for_each(|v| *v = 2.5);
        let m = modified_pressure(&f, &vec![false; g.cells()], 0.0).unwrap();
        assert!(m.values.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn pairing_with_one_approximates_integral() {
        let b = Bump::battery()[2].clone();
        let exact = b.integral();
        let mut prev = f64::INFINITY;
        for n in [16, 32, 64] {
            let g = Grid::unit(n);
            let ones = vec![1.0; g.cells()];
            let err = (weak_pairing(&g, &ones, |x| b.eval(x)) - exact).abs();
            assert!(err < prev);
            prev = err;
        }
        assert!(prev < 1e-3 * exact);
        let g = Grid::unit(8);
        assert_eq!(weak_pairing(&g, &vec![0.0; g.cells()], |x| b.eval(x)), 0.0);
    }

    #[test]
    fn battery_supports_are_disjoint_and_inside() {
        let bs = Bump::battery();
        for (i, a) in bs.iter().enumerate() {
            for k in 0..3 {
                assert!(a.center[k].abs() + a.radius <= 0.5);
            }
            for b in &bs[i + 1..] {
                let d = (0..3).map(|k| (a.center[k] - b.center[k]).powi(2)).sum::<f64>().sqrt();
                assert!(d > a.radius + b.radius);
            }
        }
    }
}
