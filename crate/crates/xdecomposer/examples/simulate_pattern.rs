//! Parse a small CIF, render its powder pattern, and print the strongest
//! reflections.
//!
//! Run with: cargo run --example simulate_pattern

use xdecomposer::crystal::parse_structure;
use xdecomposer::sim::{render_pattern, SimConfig};

const ROCK_SALT: &str = "\
data_nacl
_cell_length_a 5.6402
_cell_length_b 5.6402
_cell_length_c 5.6402
_cell_angle_alpha 90
_cell_angle_beta 90
_cell_angle_gamma 90
loop_
_symmetry_equiv_pos_as_xyz
'x, y, z'
'x+1/2, y+1/2, z'
'x+1/2, y, z+1/2'
'x, y+1/2, z+1/2'
loop_
_atom_site_type_symbol
_atom_site_fract_x
_atom_site_fract_y
_atom_site_fract_z
Na 0.0 0.0 0.0
Cl 0.5 0.5 0.5
";

fn main() {
    let structure = parse_structure(ROCK_SALT).expect("parse CIF");
    println!("structure: {} ({} sites)", structure.id, structure.sites.len());

    let cfg = SimConfig {
        crystallite_size: 80.0,
        seed: 42,
        ..SimConfig::default()
    };
    let (pattern, peaks) = render_pattern(&structure, &cfg).expect("render");

    let mut by_height = peaks.clone();
    by_height.sort_by(|a, b| b.integrated_intensity.partial_cmp(&a.integrated_intensity).unwrap());
    by_height.dedup_by(|a, b| (a.two_theta - b.two_theta).abs() < 1e-9);
    println!("\nstrongest reflections:");
    println!("{:>10} {:>12} {:>8}", "2theta", "intensity", "fwhm");
    for p in by_height.iter().take(8) {
        println!(
            "{:>10.3} {:>12.4} {:>8.4}",
            p.two_theta, p.integrated_intensity, p.fwhm
        );
    }

    let path = std::env::temp_dir().join("nacl.xy");
    pattern.write_text(&path).expect("write pattern");
    println!(
        "\nwrote {} points to {} (max intensity {:.4})",
        pattern.intensities.len(),
        path.display(),
        pattern.max_intensity()
    );
}
