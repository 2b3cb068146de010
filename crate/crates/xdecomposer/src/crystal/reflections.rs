//! Reflection enumeration: symmetry-distinct hkl families satisfying the
//! Bragg condition inside a 2-theta window, with point-group multiplicities.

use std::collections::BTreeMap;

use super::{CrystalError, CrystalStructure};

#[derive(Debug, Clone, PartialEq)]
pub struct Reflection {
    pub hkl: [i32; 3],
    pub d_spacing: f64,
    pub two_theta: f64,
    pub multiplicity: u32,
}

/// Apply the rotation part of an op to Miller indices (row-vector convention).
fn transform_hkl(rotation: &[[i32; 3]; 3], hkl: [i32; 3]) -> [i32; 3] {
    let mut out = [0i32; 3];
    for j in 0..3 {
        out[j] = hkl[0] * rotation[0][j] + hkl[1] * rotation[1][j] + hkl[2] * rotation[2][j];
    }
    out
}

/// Orbit of hkl under the point group (distinct integer triples).
pub fn hkl_orbit(structure: &CrystalStructure, hkl: [i32; 3]) -> Vec<[i32; 3]> {
    let mut orbit: Vec<[i32; 3]> = Vec::new();
    for op in &structure.symmetry_ops {
        let img = transform_hkl(&op.rotation, hkl);
        if !orbit.contains(&img) {
            orbit.push(img);
        }
    }
    orbit.sort();
    orbit
}

/// Enumerate one reflection per symmetry-distinct hkl family with
/// `sin(theta) = lambda / 2d <= 1` and 2-theta inside the window, sorted
/// ascending by angle. Multiplicity is the orbit size of hkl under the
/// rotation parts of the structure's symmetry ops.
pub fn enumerate_reflections(
    structure: &CrystalStructure,
    wavelength: f64,
    two_theta_range: (f64, f64),
) -> Result<Vec<Reflection>, CrystalError> {
    let (tt_min, tt_max) = two_theta_range;
    if !(tt_min > 0.0 && tt_min < tt_max && tt_max < 180.0) {
        return Err(CrystalError::EmptyRange);
    }
    if wavelength <= 0.0 {
        return Err(CrystalError::EmptyRange);
    }
    let lattice = &structure.lattice;
    let gstar = lattice.reciprocal_metric()?;
    let max_len = lattice.a.max(lattice.b).max(lattice.c);
    let bound = (2.0 * max_len / wavelength).ceil() as i32;

    // canonical representative -> (d, multiplicity)
    let mut families: BTreeMap<[i32; 3], (f64, u32)> = BTreeMap::new();
    for h in -bound..=bound {
        for k in -bound..=bound {
            for l in -bound..=bound {
                if h == 0 && k == 0 && l == 0 {
                    continue;
                }
                let hf = [h as f64, k as f64, l as f64];
                let mut inv_d2 = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        inv_d2 += hf[i] * gstar[i][j] * hf[j];
                    }
                }
                let d = 1.0 / inv_d2.sqrt();
                let sin_theta = wavelength / (2.0 * d);
                if sin_theta > 1.0 {
                    continue;
                }
                let two_theta = 2.0 * sin_theta.asin().to_degrees();
                if two_theta < tt_min || two_theta > tt_max {
                    continue;
                }
                let orbit = hkl_orbit(structure, [h, k, l]);
                let canonical = *orbit.last().unwrap();
                families
                    .entry(canonical)
                    .or_insert((d, orbit.len() as u32));
            }
        }
    }

    let mut out: Vec<Reflection> = families
        .into_iter()
        .map(|(hkl, (d, multiplicity))| {
            let two_theta = 2.0 * (wavelength / (2.0 * d)).asin().to_degrees();
            Reflection {
                hkl,
                d_spacing: d,
                two_theta,
                multiplicity,
            }
        })
        .collect();
    out.sort_by(|a, b| {
        a.two_theta
            .partial_cmp(&b.two_theta)
            .unwrap()
            .then(a.hkl.cmp(&b.hkl))
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crystal::{AtomSite, Lattice, SymmetryOp};

    pub(crate) fn cubic_p1(a: f64) -> CrystalStructure {
        CrystalStructure::new(
            "cubic".into(),
            Lattice::cubic(a),
            vec![AtomSite {
                element: "Na".into(),
                frac_coords: [0.0, 0.0, 0.0],
                occupancy: 1.0,
            }],
            vec![SymmetryOp::identity()],
            Some(1),
        )
        .unwrap()
    }

    /// All 48 rotations of the full cubic point group Oh, generated from
    /// 4-fold axes plus inversion.
    fn cubic_full_symmetry(a: f64) -> CrystalStructure {
        let gens = [
            SymmetryOp::parse_xyz("x,y,z").unwrap(),
            SymmetryOp::parse_xyz("-y,x,z").unwrap(),
            SymmetryOp::parse_xyz("z,x,y").unwrap(),
            SymmetryOp::parse_xyz("-x,-y,-z").unwrap(),
        ];
        let mut ops = vec![SymmetryOp::identity()];
        loop {
            let mut added = false;
            let current = ops.clone();
            for g in &gens {
                for op in &current {
                    let mut rot = [[0i32; 3]; 3];
                    for i in 0..3 {
                        for j in 0..3 {
                            rot[i][j] = (0..3)
                                .map(|m| g.rotation[i][m] * op.rotation[m][j])
                                .sum();
                        }
                    }
                    let candidate = SymmetryOp {
                        rotation: rot,
                        translation: [0.0; 3],
                    };
                    if !ops.contains(&candidate) {
                        ops.push(candidate);
                        added = true;
                    }
                }
            }
            if !added {
                break;
            }
        }
        assert_eq!(ops.len(), 48);
        CrystalStructure::new(
            "cubic_oh".into(),
            Lattice::cubic(a),
            vec![AtomSite {
                element: "Na".into(),
                frac_coords: [0.0, 0.0, 0.0],
                occupancy: 1.0,
            }],
            ops,
            Some(221),
        )
        .unwrap()
    }

    #[test]
    fn bragg_angle_of_111() {
        // cubic a = 4, lambda = 1.5406: 2theta(111) ~ 38.97 deg
        let s = cubic_p1(4.0);
        let refls = enumerate_reflections(&s, 1.5406, (10.0, 80.0)).unwrap();
        let r = refls
            .iter()
            .find(|r| {
                let m: Vec<i32> = r.hkl.iter().map(|v| v.abs()).collect();
                m == [1, 1, 1]
            })
            .unwrap();
        assert!((r.two_theta - 38.97).abs() < 0.01, "{}", r.two_theta);
    }

    #[test]
    fn bragg_relation_holds_for_all() {
        let s = cubic_p1(4.0);
        let lambda = 1.5406;
        for r in enumerate_reflections(&s, lambda, (10.0, 80.0)).unwrap() {
            let lhs = 2.0 * r.d_spacing * (r.two_theta / 2.0).to_radians().sin();
            assert!(((lhs - lambda) / lambda).abs() < 1e-9);
        }
    }

    #[test]
    fn multiplicity_100_under_full_cubic_symmetry() {
        let s = cubic_full_symmetry(4.0);
        let orbit = hkl_orbit(&s, [1, 0, 0]);
        assert_eq!(orbit.len(), 6);
        let refls = enumerate_reflections(&s, 1.5406, (10.0, 80.0)).unwrap();
        let r100 = refls
            .iter()
            .find(|r| r.hkl.iter().map(|v| v * v).sum::<i32>() == 1)
            .unwrap();
        assert_eq!(r100.multiplicity, 6);
        let r111 = refls
            .iter()
            .find(|r| r.hkl.iter().all(|v| v.abs() == 1))
            .unwrap();
        assert_eq!(r111.multiplicity, 8);
    }

    #[test]
    fn orbit_property_multiplicity_invariant() {
        let s = cubic_full_symmetry(4.0);
        let orbit = hkl_orbit(&s, [2, 1, 0]);
        for img in &orbit {
            assert_eq!(hkl_orbit(&s, *img).len(), orbit.len());
        }
    }

    #[test]
    fn huge_wavelength_gives_empty_list() {
        let s = cubic_p1(4.0);
        let refls = enumerate_reflections(&s, 50.0, (10.0, 80.0)).unwrap();
        assert!(refls.is_empty());
    }

    #[test]
    fn sorted_by_angle() {
        let s = cubic_p1(4.0);
        let refls = enumerate_reflections(&s, 1.5406, (10.0, 80.0)).unwrap();
        assert!(refls.windows(2).all(|w| w[0].two_theta <= w[1].two_theta));
    }

    #[test]
    fn empty_range_rejected() {
        let s = cubic_p1(4.0);
        assert!(matches!(
            enumerate_reflections(&s, 1.5406, (80.0, 10.0)),
            Err(CrystalError::EmptyRange)
        ));
    }
}
