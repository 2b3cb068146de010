//! Unit-cell geometry: volume, direct and reciprocal metric tensors.

use super::CrystalError;

/// Cell lengths in Angstrom, angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lattice {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Lattice {
    pub fn cubic(a: f64) -> Self {
        Lattice {
            a,
            b: a,
            c: a,
            alpha: 90.0,
            beta: 90.0,
            gamma: 90.0,
        }
    }

    pub fn validate(&self) -> Result<(), CrystalError> {
        if !(self.a > 0.0 && self.b > 0.0 && self.c > 0.0) {
            return Err(CrystalError::InvalidLattice("non-positive length".into()));
        }
        for ang in [self.alpha, self.beta, self.gamma] {
            if !(ang > 0.0 && ang < 180.0) {
                return Err(CrystalError::InvalidLattice(format!("angle {ang} out of (0,180)")));
            }
        }
        if self.volume() <= 0.0 {
            return Err(CrystalError::InvalidLattice("non-positive volume".into()));
        }
        Ok(())
    }

    /// Cell volume in cubic Angstrom.
    pub fn volume(&self) -> f64 {
        let (ca, cb, cg) = (
            self.alpha.to_radians().cos(),
            self.beta.to_radians().cos(),
            self.gamma.to_radians().cos(),
        );
        let arg = 1.0 - ca * ca - cb * cb - cg * cg + 2.0 * ca * cb * cg;
        self.a * self.b * self.c * arg.max(0.0).sqrt()
    }

    /// Direct metric tensor G, G_ij = a_i . a_j (A^2).
    pub fn direct_metric(&self) -> [[f64; 3]; 3] {
        let (ca, cb, cg) = (
            self.alpha.to_radians().cos(),
            self.beta.to_radians().cos(),
            self.gamma.to_radians().cos(),
        );
        [
            [self.a * self.a, self.a * self.b * cg, self.a * self.c * cb],
            [self.a * self.b * cg, self.b * self.b, self.b * self.c * ca],
            [self.a * self.c * cb, self.b * self.c * ca, self.c * self.c],
        ]
    }

    /// Reciprocal metric tensor G* (A^-2): the inverse of the direct metric,
    /// so that 1/d^2(hkl) = (h,k,l) G* (h,k,l)^T.
    pub fn reciprocal_metric(&self) -> Result<[[f64; 3]; 3], CrystalError> {
        let vol = self.volume();
        if vol < 1e-6 {
            return Err(CrystalError::DegenerateCell(vol));
        }
        let g = self.direct_metric();
        Ok(invert3(&g))
    }

    /// Interplanar spacing d(hkl) in Angstrom.
    pub fn d_spacing(&self, hkl: [i32; 3]) -> Result<f64, CrystalError> {
        let gstar = self.reciprocal_metric()?;
        let h = [hkl[0] as f64, hkl[1] as f64, hkl[2] as f64];
        let mut inv_d2 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                inv_d2 += h[i] * gstar[i][j] * h[j];
            }
        }
        if inv_d2 <= 0.0 {
            return Err(CrystalError::DegenerateCell(self.volume()));
        }
        Ok(1.0 / inv_d2.sqrt())
    }
}

/// Inverse of a symmetric positive-definite 3x3 matrix via cofactors.
fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let inv_det = 1.0 / det;
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (r0, r1) = ((i + 1) % 3, (i + 2) % 3);
            let (c0, c1) = ((j + 1) % 3, (j + 2) % 3);
            // cofactor transpose gives the inverse directly
            out[j][i] = inv_det * (m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]);
        }
    }
    out
}
