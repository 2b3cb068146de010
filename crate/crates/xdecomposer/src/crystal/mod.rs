//! Crystal structure representation, CIF-subset parsing, reciprocal-lattice
//! math, and reflection enumeration with multiplicities.

mod cif;
mod lattice;
mod reflections;
mod symmetry;

pub use cif::parse_structure;
pub use lattice::Lattice;
pub use reflections::{enumerate_reflections, Reflection};
pub use symmetry::SymmetryOp;

use thiserror::Error;

/// Fractional tolerance for merging symmetry-equivalent sites.
pub const SITE_DEDUP_TOL: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum CrystalError {
    #[error("missing cell parameters")]
    MissingCell,
    #[error("no atom sites found")]
    MissingSites,
    #[error("disordered structure: site occupancy < 1 on coinciding positions ({0})")]
    DisorderedStructure(String),
    #[error("unsupported element '{0}'")]
    UnsupportedElement(String),
    #[error("malformed loop: {0}")]
    MalformedLoop(String),
    #[error("unsupported CIF feature: {0}")]
    UnsupportedCif(String),
    #[error("degenerate cell: volume {0} below 1e-6 A^3")]
    DegenerateCell(f64),
    #[error("bad symmetry operation '{0}'")]
    BadSymmetryOp(String),
    #[error("empty 2theta range")]
    EmptyRange,
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),
    #[error("malformed structure dump: {0}")]
    MalformedDump(String),
}

/// One atom position in the unit cell, in fractional coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomSite {
    pub element: String,
    pub frac_coords: [f64; 3],
    pub occupancy: f64,
}

impl AtomSite {
    /// Wrap fractional coordinates into [0, 1).
    pub fn wrapped(mut self) -> Self {
        for c in &mut self.frac_coords {
            *c = wrap_frac(*c);
        }
        self
    }
}

pub(crate) fn wrap_frac(x: f64) -> f64 {
    let mut y = x - x.floor();
    if y >= 1.0 - 1e-12 {
        y = 0.0;
    }
    y
}

/// Minimum image distance between two fractional coordinates, per axis.
pub(crate) fn frac_close(a: &[f64; 3], b: &[f64; 3], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| {
        let d = (x - y).abs();
        d.min(1.0 - d) < tol
    })
}

/// A fully expanded, ordered crystal structure.
#[derive(Debug, Clone, PartialEq)]
pub struct CrystalStructure {
    pub id: String,
    pub lattice: Lattice,
    /// All sites after symmetry expansion, deduplicated and ordered.
    pub sites: Vec<AtomSite>,
    pub symmetry_ops: Vec<SymmetryOp>,
    /// 1..=230 when stated in the source file.
    pub space_group_number: Option<u16>,
}

impl CrystalStructure {
    /// Apply all symmetry ops to the given sites, wrap, and deduplicate.
    ///
    /// Coinciding images of the same input site merge, as do coinciding
    /// images of different input sites with identical element and occupancy
    /// (a redundant listing, e.g. re-expanding an already expanded set).
    /// Any other coincidence is overlapping chemistry and is rejected as
    /// disorder.
    pub fn expand_sites(
        lattice: &Lattice,
        ops: &[SymmetryOp],
        sites: &[AtomSite],
    ) -> Result<Vec<AtomSite>, CrystalError> {
        let _ = lattice;
        let mut expanded: Vec<(usize, AtomSite)> = Vec::new();
        for (orig, site) in sites.iter().enumerate() {
            for op in ops {
                let image = AtomSite {
                    element: site.element.clone(),
                    frac_coords: op.apply(&site.frac_coords),
                    occupancy: site.occupancy,
                }
                .wrapped();
                let mut duplicate = false;
                for (prev_orig, prev) in &expanded {
                    if frac_close(&prev.frac_coords, &image.frac_coords, SITE_DEDUP_TOL) {
                        if *prev_orig == orig
                            || (prev.element == image.element
                                && (prev.occupancy - image.occupancy).abs() < 1e-9)
                        {
                            duplicate = true;
                            break;
                        }
                        return Err(CrystalError::DisorderedStructure(format!(
                            "{} and {} share {:?}",
                            prev.element, image.element, image.frac_coords
                        )));
                    }
                }
                if !duplicate {
                    expanded.push((orig, image));
                }
            }
        }
        if expanded.is_empty() {
            return Err(CrystalError::MissingSites);
        }
        Ok(expanded.into_iter().map(|(_, s)| s).collect())
    }

    pub fn new(
        id: String,
        lattice: Lattice,
        asymmetric_sites: Vec<AtomSite>,
        symmetry_ops: Vec<SymmetryOp>,
        space_group_number: Option<u16>,
    ) -> Result<Self, CrystalError> {
        lattice.validate()?;
        if asymmetric_sites.is_empty() {
            return Err(CrystalError::MissingSites);
        }
        let ops = if symmetry_ops.is_empty() {
            vec![SymmetryOp::identity()]
        } else {
            symmetry_ops
        };
        let sites = Self::expand_sites(&lattice, &ops, &asymmetric_sites)?;
        Ok(CrystalStructure {
            id,
            lattice,
            sites,
            symmetry_ops: ops,
            space_group_number,
        })
    }

    /// Line-oriented structure dump: key=value header plus a site table.
    pub fn to_dump(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("id={}\n", self.id));
        let l = &self.lattice;
        out.push_str(&format!(
            "cell={:.12} {:.12} {:.12} {:.12} {:.12} {:.12}\n",
            l.a, l.b, l.c, l.alpha, l.beta, l.gamma
        ));
        match self.space_group_number {
            Some(n) => out.push_str(&format!("space_group={n}\n")),
            None => out.push_str("space_group=unknown\n"),
        }
        out.push_str(&format!("ops={}\n", self.symmetry_ops.len()));
        for op in &self.symmetry_ops {
            out.push_str(&format!("op={}\n", op.to_xyz()));
        }
        out.push_str(&format!("sites={}\n", self.sites.len()));
        for s in &self.sites {
            out.push_str(&format!(
                "site={} {:.12} {:.12} {:.12} {:.12}\n",
                s.element, s.frac_coords[0], s.frac_coords[1], s.frac_coords[2], s.occupancy
            ));
        }
        out
    }

    /// Parse a dump produced by [`CrystalStructure::to_dump`].
    pub fn from_dump(text: &str) -> Result<Self, CrystalError> {
        let mut id = None;
        let mut cell = None;
        let mut space_group = None;
        let mut ops = Vec::new();
        let mut sites = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, val) = line
                .split_once('=')
                .ok_or_else(|| CrystalError::MalformedDump(line.to_string()))?;
            match key {
                "id" => id = Some(val.to_string()),
                "cell" => {
                    let nums: Vec<f64> = val
                        .split_whitespace()
                        .map(|s| s.parse::<f64>())
                        .collect::<Result<_, _>>()
                        .map_err(|_| CrystalError::MalformedDump(line.to_string()))?;
                    if nums.len() != 6 {
                        return Err(CrystalError::MalformedDump(line.to_string()));
                    }
                    cell = Some(Lattice {
                        a: nums[0],
                        b: nums[1],
                        c: nums[2],
                        alpha: nums[3],
                        beta: nums[4],
                        gamma: nums[5],
                    });
                }
                "space_group" => {
                    if val != "unknown" {
                        space_group = Some(
                            val.parse::<u16>()
                                .map_err(|_| CrystalError::MalformedDump(line.to_string()))?,
                        );
                    }
                }
                "op" => ops.push(SymmetryOp::parse_xyz(val)?),
                "ops" | "sites" => {}
                "site" => {
                    let parts: Vec<&str> = val.split_whitespace().collect();
                    if parts.len() != 5 {
                        return Err(CrystalError::MalformedDump(line.to_string()));
                    }
                    let parse =
                        |s: &str| s.parse::<f64>().map_err(|_| CrystalError::MalformedDump(s.into()));
                    sites.push(AtomSite {
                        element: parts[0].to_string(),
                        frac_coords: [parse(parts[1])?, parse(parts[2])?, parse(parts[3])?],
                        occupancy: parse(parts[4])?,
                    });
                }
                _ => return Err(CrystalError::MalformedDump(key.to_string())),
            }
        }
        let lattice = cell.ok_or(CrystalError::MissingCell)?;
        lattice.validate()?;
        if sites.is_empty() {
            return Err(CrystalError::MissingSites);
        }
        Ok(CrystalStructure {
            id: id.ok_or_else(|| CrystalError::MalformedDump("missing id".into()))?,
            lattice,
            sites,
            symmetry_ops: ops,
            space_group_number: space_group,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cubic(a: f64) -> Lattice {
        Lattice {
            a,
            b: a,
            c: a,
            alpha: 90.0,
            beta: 90.0,
            gamma: 90.0,
        }
    }

    #[test]
    fn expansion_is_idempotent() {
        let ops = vec![
            SymmetryOp::identity(),
            SymmetryOp::parse_xyz("x+1/2,y+1/2,z+1/2").unwrap(),
        ];
        let site = AtomSite {
            element: "Fe".into(),
            frac_coords: [0.0, 0.0, 0.0],
            occupancy: 1.0,
        };
        let once = CrystalStructure::expand_sites(&cubic(4.0), &ops, &[site]).unwrap();
        assert_eq!(once.len(), 2);
        let twice = CrystalStructure::expand_sites(&cubic(4.0), &ops, &once).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn colliding_partial_occupancy_is_disorder() {
        let a = AtomSite {
            element: "Na".into(),
            frac_coords: [0.0, 0.0, 0.0],
            occupancy: 0.5,
        };
        let b = AtomSite {
            element: "K".into(),
            frac_coords: [0.0, 0.0, 0.0],
            occupancy: 0.5,
        };
        let err = CrystalStructure::expand_sites(&cubic(4.0), &[SymmetryOp::identity()], &[a, b])
            .unwrap_err();
        assert!(matches!(err, CrystalError::DisorderedStructure(_)));
    }

    #[test]
    fn dump_round_trip() {
        let s = CrystalStructure::new(
            "test".into(),
            cubic(4.0),
            vec![AtomSite {
                element: "Na".into(),
                frac_coords: [0.25, 0.5, 0.125],
                occupancy: 1.0,
            }],
            vec![
                SymmetryOp::identity(),
                SymmetryOp::parse_xyz("-x,-y,z+1/2").unwrap(),
            ],
            Some(1),
        )
        .unwrap();
        let dump = s.to_dump();
        let t = CrystalStructure::from_dump(&dump).unwrap();
        assert_eq!(s.id, t.id);
        assert_eq!(s.symmetry_ops, t.symmetry_ops);
        assert_eq!(s.sites.len(), t.sites.len());
        for (a, b) in s.sites.iter().zip(&t.sites) {
            assert_eq!(a.element, b.element);
            for i in 0..3 {
                assert!((a.frac_coords[i] - b.frac_coords[i]).abs() < 1e-9);
            }
            assert!((a.occupancy - b.occupancy).abs() < 1e-9);
        }
    }
}
