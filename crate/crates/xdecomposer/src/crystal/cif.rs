//! Parser for the CIF subset consumed by the simulator: one data block with
//! cell parameters, an optional explicit symmetry-op loop (xyz strings), and
//! an atom-site loop. Anything wider (aniso ADPs, dictionaries, multiple
//! blocks) is rejected with a clear error.

use super::{AtomSite, CrystalError, CrystalStructure, Lattice, SymmetryOp};
use crate::sim::form_factor;

/// Parse a CIF-subset document into a fully expanded structure.
///
/// The structure id is taken from the `data_` block name. Site disorder
/// (occupancy below 1 on coinciding positions) is rejected.
pub fn parse_structure(text: &str) -> Result<CrystalStructure, CrystalError> {
    let tokens = tokenize(text)?;
    let mut idx = 0;

    let mut block_name: Option<String> = None;
    let mut cell: CellBuilder = CellBuilder::default();
    let mut space_group: Option<u16> = None;
    let mut ops: Vec<SymmetryOp> = Vec::new();
    let mut sites: Vec<AtomSite> = Vec::new();

    while idx < tokens.len() {
        match &tokens[idx] {
            Token::DataBlock(name) => {
                if block_name.is_some() {
                    return Err(CrystalError::UnsupportedCif(
                        "multiple data blocks".into(),
                    ));
                }
                block_name = Some(name.clone());
                idx += 1;
            }
            Token::Tag(tag) => {
                let value = match tokens.get(idx + 1) {
                    Some(Token::Value(v)) => v.clone(),
                    _ => {
                        return Err(CrystalError::MalformedLoop(format!(
                            "tag {tag} without value"
                        )))
                    }
                };
                apply_scalar(tag, &value, &mut cell, &mut space_group)?;
                idx += 2;
            }
            Token::Loop => {
                idx += 1;
                let mut tags = Vec::new();
                while let Some(Token::Tag(t)) = tokens.get(idx) {
                    tags.push(t.clone());
                    idx += 1;
                }
                if tags.is_empty() {
                    return Err(CrystalError::MalformedLoop("loop_ without tags".into()));
                }
                let mut values = Vec::new();
                while let Some(Token::Value(v)) = tokens.get(idx) {
                    values.push(v.clone());
                    idx += 1;
                }
                if values.is_empty() || values.len() % tags.len() != 0 {
                    return Err(CrystalError::MalformedLoop(format!(
                        "{} values for {} columns",
                        values.len(),
                        tags.len()
                    )));
                }
                consume_loop(&tags, &values, &mut ops, &mut sites)?;
            }
            Token::Value(v) => {
                return Err(CrystalError::MalformedLoop(format!("stray value '{v}'")))
            }
        }
    }

    let lattice = cell.build()?;
    if sites.is_empty() {
        return Err(CrystalError::MissingSites);
    }
    let id = block_name.unwrap_or_else(|| "unnamed".to_string());
    CrystalStructure::new(id, lattice, sites, ops, space_group)
}

#[derive(Debug, Clone)]
enum Token {
    DataBlock(String),
    Tag(String),
    Loop,
    Value(String),
}

fn tokenize(text: &str) -> Result<Vec<Token>, CrystalError> {
    let mut tokens = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut rest = line;
        while !rest.is_empty() {
            rest = rest.trim_start();
            if rest.is_empty() || rest.starts_with('#') {
                break;
            }
            if let Some(stripped) = rest.strip_prefix('\'') {
                let end = stripped.find('\'').ok_or_else(|| {
                    CrystalError::MalformedLoop(format!("unterminated quote in '{line}'"))
                })?;
                tokens.push(Token::Value(stripped[..end].to_string()));
                rest = &stripped[end + 1..];
            } else if let Some(stripped) = rest.strip_prefix('"') {
                let end = stripped.find('"').ok_or_else(|| {
                    CrystalError::MalformedLoop(format!("unterminated quote in '{line}'"))
                })?;
                tokens.push(Token::Value(stripped[..end].to_string()));
                rest = &stripped[end + 1..];
            } else {
                let end = rest
                    .find(char::is_whitespace)
                    .unwrap_or(rest.len());
                let word = &rest[..end];
                rest = &rest[end..];
                let lower = word.to_ascii_lowercase();
                if let Some(name) = lower.strip_prefix("data_") {
                    // keep the original case for the id
                    tokens.push(Token::DataBlock(word[5..].to_string()));
                    let _ = name;
                } else if lower == "loop_" {
                    tokens.push(Token::Loop);
                } else if word.starts_with('_') {
                    tokens.push(Token::Tag(lower));
                } else {
                    tokens.push(Token::Value(word.to_string()));
                }
            }
        }
    }
    Ok(tokens)
}

#[derive(Default)]
struct CellBuilder {
    a: Option<f64>,
    b: Option<f64>,
    c: Option<f64>,
    alpha: Option<f64>,
    beta: Option<f64>,
    gamma: Option<f64>,
}

impl CellBuilder {
    fn build(self) -> Result<Lattice, CrystalError> {
        let lattice = Lattice {
            a: self.a.ok_or(CrystalError::MissingCell)?,
            b: self.b.ok_or(CrystalError::MissingCell)?,
            c: self.c.ok_or(CrystalError::MissingCell)?,
            alpha: self.alpha.ok_or(CrystalError::MissingCell)?,
            beta: self.beta.ok_or(CrystalError::MissingCell)?,
            gamma: self.gamma.ok_or(CrystalError::MissingCell)?,
        };
        lattice.validate()?;
        Ok(lattice)
    }
}

fn apply_scalar(
    tag: &str,
    value: &str,
    cell: &mut CellBuilder,
    space_group: &mut Option<u16>,
) -> Result<(), CrystalError> {
    match tag {
        "_cell_length_a" => cell.a = Some(parse_number(value)?),
        "_cell_length_b" => cell.b = Some(parse_number(value)?),
        "_cell_length_c" => cell.c = Some(parse_number(value)?),
        "_cell_angle_alpha" => cell.alpha = Some(parse_number(value)?),
        "_cell_angle_beta" => cell.beta = Some(parse_number(value)?),
        "_cell_angle_gamma" => cell.gamma = Some(parse_number(value)?),
        "_symmetry_int_tables_number" | "_space_group_it_number" => {
            *space_group = value.parse::<u16>().ok().filter(|n| (1..=230).contains(n));
        }
        _ if tag.starts_with("_atom_site_aniso") => {
            return Err(CrystalError::UnsupportedCif(
                "anisotropic displacement parameters".into(),
            ))
        }
        // other scalar tags (chemical formula, symmetry symbol, ...) are ignored
        _ => {}
    }
    Ok(())
}

/// Parse a CIF number, stripping a trailing esd like `4.000(2)`.
fn parse_number(value: &str) -> Result<f64, CrystalError> {
    let core = match value.find('(') {
        Some(i) => &value[..i],
        None => value,
    };
    core.parse::<f64>()
        .map_err(|_| CrystalError::MalformedLoop(format!("bad number '{value}'")))
}

fn consume_loop(
    tags: &[String],
    values: &[String],
    ops: &mut Vec<SymmetryOp>,
    sites: &mut Vec<AtomSite>,
) -> Result<(), CrystalError> {
    if tags.iter().any(|t| t.starts_with("_atom_site_aniso")) {
        return Err(CrystalError::UnsupportedCif(
            "anisotropic displacement parameters".into(),
        ));
    }
    let sym_col = tags.iter().position(|t| {
        t == "_symmetry_equiv_pos_as_xyz" || t == "_space_group_symop_operation_xyz"
    });
    if let Some(col) = sym_col {
        for row in values.chunks(tags.len()) {
            ops.push(SymmetryOp::parse_xyz(&row[col])?);
        }
        return Ok(());
    }
    if tags.iter().any(|t| t.starts_with("_atom_site_")) {
        let find = |name: &str| tags.iter().position(|t| t == name);
        let symbol_col = find("_atom_site_type_symbol");
        let label_col = find("_atom_site_label");
        let fx = find("_atom_site_fract_x")
            .ok_or_else(|| CrystalError::MalformedLoop("missing _atom_site_fract_x".into()))?;
        let fy = find("_atom_site_fract_y")
            .ok_or_else(|| CrystalError::MalformedLoop("missing _atom_site_fract_y".into()))?;
        let fz = find("_atom_site_fract_z")
            .ok_or_else(|| CrystalError::MalformedLoop("missing _atom_site_fract_z".into()))?;
        let occ_col = find("_atom_site_occupancy");
        for row in values.chunks(tags.len()) {
            let raw = symbol_col
                .or(label_col)
                .map(|c| row[c].as_str())
                .ok_or_else(|| {
                    CrystalError::MalformedLoop("atom site loop without element column".into())
                })?;
            let element = element_from_symbol(raw)?;
            let occupancy = match occ_col {
                Some(c) => parse_number(&row[c])?,
                None => 1.0,
            };
            if !(occupancy > 0.0 && occupancy <= 1.0 + 1e-9) {
                return Err(CrystalError::MalformedLoop(format!(
                    "occupancy {occupancy} out of (0,1]"
                )));
            }
            sites.push(
                AtomSite {
                    element,
                    frac_coords: [
                        parse_number(&row[fx])?,
                        parse_number(&row[fy])?,
                        parse_number(&row[fz])?,
                    ],
                    occupancy: occupancy.min(1.0),
                }
                .wrapped(),
            );
        }
        return Ok(());
    }
    // unrelated loop (e.g. publication metadata): ignore
    Ok(())
}

/// Extract a bare element symbol from a type symbol or label, e.g.
/// `Fe2+` -> `Fe`, `Na1` -> `Na`, `o` -> `O`.
fn element_from_symbol(raw: &str) -> Result<String, CrystalError> {
    let letters: String = raw.chars().take_while(|c| c.is_ascii_alphabetic()).collect();
    if letters.is_empty() {
        return Err(CrystalError::UnsupportedElement(raw.to_string()));
    }
    let mut chars = letters.chars();
    let first = chars.next().unwrap().to_ascii_uppercase();
    let mut symbol = String::new();
    symbol.push(first);
    symbol.extend(chars.map(|c| c.to_ascii_lowercase()));
    // labels like "Na1" already handled; two-letter check against the table,
    // falling back to the one-letter prefix for labels like "Nb" vs "N1"
    if form_factor::is_supported(&symbol) {
        return Ok(symbol);
    }
    if symbol.len() > 1 && form_factor::is_supported(&symbol[..1]) {
        return Ok(symbol[..1].to_string());
    }
    Err(CrystalError::UnsupportedElement(raw.to_string()))
}
