//! Symmetry operations as integer rotation + fractional translation,
//! parsed from CIF `x,y,z`-style strings.

use super::{wrap_frac, CrystalError};

#[derive(Debug, Clone, PartialEq)]
pub struct SymmetryOp {
    pub rotation: [[i32; 3]; 3],
    pub translation: [f64; 3],
}

impl SymmetryOp {
    pub fn identity() -> Self {
        SymmetryOp {
            rotation: [[1, 0, 0], [0, 1, 0], [0, 0, 1]],
            translation: [0.0; 3],
        }
    }

    /// Apply to fractional coordinates and wrap into [0, 1).
    pub fn apply(&self, frac: &[f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for i in 0..3 {
            let mut v = self.translation[i];
            for j in 0..3 {
                v += self.rotation[i][j] as f64 * frac[j];
            }
            out[i] = wrap_frac(v);
        }
        out
    }

    pub fn determinant(&self) -> i32 {
        let r = &self.rotation;
        r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
    }

    /// Parse one op like `-x, y+1/2, -z` (case-insensitive, spaces ignored).
    pub fn parse_xyz(text: &str) -> Result<Self, CrystalError> {
        let parts: Vec<&str> = text.split(',').collect();
        if parts.len() != 3 {
            return Err(CrystalError::BadSymmetryOp(text.to_string()));
        }
        let mut rotation = [[0i32; 3]; 3];
        let mut translation = [0.0; 3];
        for (row, part) in parts.iter().enumerate() {
            let (coeffs, trans) = parse_component(part)
                .ok_or_else(|| CrystalError::BadSymmetryOp(text.to_string()))?;
            rotation[row] = coeffs;
            translation[row] = trans;
        }
        let op = SymmetryOp {
            rotation,
            translation,
        };
        if op.determinant().abs() != 1 {
            return Err(CrystalError::BadSymmetryOp(format!(
                "{text}: rotation determinant {}",
                op.determinant()
            )));
        }
        Ok(op)
    }

    /// Render back to the `x,y,z` string form.
    pub fn to_xyz(&self) -> String {
        let axes = ["x", "y", "z"];
        let mut rows = Vec::with_capacity(3);
        for i in 0..3 {
            let mut s = String::new();
            for j in 0..3 {
                match self.rotation[i][j] {
                    0 => {}
                    1 => {
                        if !s.is_empty() {
                            s.push('+');
                        }
                        s.push_str(axes[j]);
                    }
                    -1 => {
                        s.push('-');
                        s.push_str(axes[j]);
                    }
                    n => {
                        if n > 0 && !s.is_empty() {
                            s.push('+');
                        }
                        s.push_str(&format!("{}{}", n, axes[j]));
                    }
                }
            }
            let t = self.translation[i];
            if t.abs() > 1e-9 {
                // render as a simple fraction over 12 (covers 1/2, 1/3, 1/4, 1/6)
                let num = (t * 12.0).round() as i64;
                if ((num as f64) / 12.0 - t).abs() < 1e-9 {
                    let g = gcd(num.unsigned_abs(), 12);
                    let (n, d) = (num / g as i64, 12 / g as i64);
                    if n > 0 && !s.is_empty() {
                        s.push('+');
                    }
                    if d == 1 {
                        s.push_str(&format!("{n}"));
                    } else {
                        s.push_str(&format!("{n}/{d}"));
                    }
                } else {
                    if t > 0.0 && !s.is_empty() {
                        s.push('+');
                    }
                    s.push_str(&format!("{t}"));
                }
            }
            if s.is_empty() {
                s.push('0');
            }
            rows.push(s);
        }
        rows.join(",")
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

/// Parse one component like `-x+1/2` into (axis coefficients, translation).
fn parse_component(text: &str) -> Option<([i32; 3], f64)> {
    let cleaned: String = text
        .chars()
        .filter(|c| !c.is_whitespace())
        .collect::<String>()
        .to_ascii_lowercase();
    if cleaned.is_empty() {
        return None;
    }
    // split into signed terms
    let mut terms: Vec<String> = Vec::new();
    let mut cur = String::new();
    for (i, ch) in cleaned.chars().enumerate() {
        if (ch == '+' || ch == '-') && i > 0 {
            terms.push(std::mem::take(&mut cur));
            cur.push(ch);
        } else {
            cur.push(ch);
        }
    }
    terms.push(cur);

    let mut coeffs = [0i32; 3];
    let mut trans = 0.0;
    for term in terms {
        if term.is_empty() {
            return None;
        }
        let (sign, body) = match term.strip_prefix('-') {
            Some(rest) => (-1i32, rest),
            None => (1, term.strip_prefix('+').unwrap_or(&term)),
        };
        if body.is_empty() {
            return None;
        }
        let axis = match body.chars().last() {
            Some('x') => Some(0),
            Some('y') => Some(1),
            Some('z') => Some(2),
            _ => None,
        };
        if let Some(axis) = axis {
            let mag = &body[..body.len() - 1];
            let coeff: i32 = if mag.is_empty() {
                1
            } else {
                mag.parse().ok()?
            };
            coeffs[axis] += sign * coeff;
        } else if let Some((num, den)) = body.split_once('/') {
            let n: f64 = num.parse().ok()?;
            let d: f64 = den.parse().ok()?;
            if d == 0.0 {
                return None;
            }
            trans += sign as f64 * n / d;
        } else {
            let v: f64 = body.parse().ok()?;
            trans += sign as f64 * v;
        }
    }
    Some((coeffs, trans))
}
