//! Plain-text file formats: dense matrices, angle programs and model
//! checkpoints. Floats are written in shortest round-trip form, so every
//! reader recovers the exact bits that were written.
//!
//! Matrix file: first line `n`, then `n` rows of `n` space-separated `re,im`
//! pairs.
//!
//! Angle program: `n <n>`, one `<i> <j> <theta> <phi>` line per rotation, and a
//! final `D <w_0> … <w_{n−1}>` line. `#` starts a comment.
//!
//! Checkpoint: `eunn-checkpoint 1`, `key value` header lines, then one
//! `param <name> <len>` line per array followed by a line of values.

use std::fmt::Write as _;

use num_complex::Complex64;

use crate::cell::{EurnnCell, Model, SequenceModel, VanillaCell};
use crate::dense::CMatrix;
use crate::error::{EunnError, Result};
use crate::unitary::{AngleProgram, DiagonalPhase, MeshStyle, ProgramRotation, UnitaryComposition};
use crate::Rng;

pub const CHECKPOINT_MAGIC: &str = "eunn-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

fn parse_err(source: &str, line: usize, msg: impl Into<String>) -> EunnError {
    EunnError::Parse {
        path: source.to_string(),
        line,
        msg: msg.into(),
    }
}

fn parse_num<T: std::str::FromStr>(tok: &str, source: &str, line: usize, what: &str) -> Result<T> {
    tok.parse()
        .map_err(|_| parse_err(source, line, format!("cannot parse {what} from {tok:?}")))
}

/// Non-empty, non-comment lines with 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then_some((i + 1, l))
    })
}

pub fn write_matrix(m: &CMatrix) -> String {
    let n = m.nrows();
    let mut s = format!("{n}\n");
    for i in 0..n {
        for j in 0..m.ncols() {
            if j > 0 {
                s.push(' ');
            }
            let z = m[(i, j)];
            let _ = write!(s, "{:e},{:e}", z.re, z.im);
        }
        s.push('\n');
    }
    s
}

/// Parses a matrix file; `source` names it in error messages.
pub fn parse_matrix(text: &str, source: &str) -> Result<CMatrix> {
    let mut lines = content_lines(text);
    let (ln, first) = lines.next().ok_or_else(|| parse_err(source, 1, "empty matrix file"))?;
    let n: usize = parse_num(first, source, ln, "dimension")?;
    if n == 0 {
        return Err(parse_err(source, ln, "dimension must be positive"));
    }
    let mut m = CMatrix::zeros(n, n);
    for i in 0..n {
        let (ln, row) = lines
            .next()
            .ok_or_else(|| parse_err(source, text.lines().count() + 1, format!("expected {n} rows, found {i}")))?;
        let entries: Vec<&str> = row.split_whitespace().collect();
        if entries.len() != n {
            return Err(parse_err(source, ln, format!("expected {n} entries, found {}", entries.len())));
        }
        for (j, e) in entries.iter().enumerate() {
            let (re, im) = e
                .split_once(',')
                .ok_or_else(|| parse_err(source, ln, format!("entry {e:?} is not re,im")))?;
            let z = Complex64::new(parse_num(re, source, ln, "real part")?, parse_num(im, source, ln, "imaginary part")?);
            if !z.is_finite() {
                return Err(parse_err(source, ln, format!("non-finite entry {e:?}")));
            }
            m[(i, j)] = z;
        }
    }
    if let Some((ln, _)) = lines.next() {
        return Err(parse_err(source, ln, "unexpected content after the last row"));
    }
    Ok(m)
}

pub fn write_program(p: &AngleProgram) -> String {
    let mut s = format!("n {}\n", p.n());
    for r in &p.rotations {
        let _ = writeln!(s, "{} {} {:e} {:e}", r.i, r.j, r.theta, r.phi);
    }
    s.push('D');
    for w in p.diag.phases() {
        let _ = write!(s, " {w:e}");
    }
    s.push('\n');
    s
}

pub fn parse_program(text: &str, source: &str) -> Result<AngleProgram> {
    let mut lines = content_lines(text);
    let (ln, first) = lines.next().ok_or_else(|| parse_err(source, 1, "empty program file"))?;
    let n: usize = match first.split_whitespace().collect::<Vec<_>>()[..] {
        ["n", v] => parse_num(v, source, ln, "dimension")?,
        _ => return Err(parse_err(source, ln, "expected header `n <dimension>`")),
    };
    if n == 0 {
        return Err(parse_err(source, ln, "dimension must be positive"));
    }
    let mut rotations = Vec::new();
    for (ln, line) in lines.by_ref() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks[0] == "D" {
            if toks.len() != n + 1 {
                return Err(parse_err(source, ln, format!("expected {n} phases, found {}", toks.len() - 1)));
            }
            let phases = toks[1..]
                .iter()
                .map(|t| parse_num::<f64>(t, source, ln, "phase"))
                .collect::<Result<Vec<_>>>()?;
            if let Some((extra, _)) = lines.next() {
                return Err(parse_err(source, extra, "unexpected content after the D line"));
            }
            return Ok(AngleProgram {
                rotations,
                diag: DiagonalPhase::new(phases),
            });
        }
        if toks.len() != 4 {
            return Err(parse_err(source, ln, "expected `i j theta phi`"));
        }
        let rot = ProgramRotation {
            i: parse_num(toks[0], source, ln, "index i")?,
            j: parse_num(toks[1], source, ln, "index j")?,
            theta: parse_num(toks[2], source, ln, "theta")?,
            phi: parse_num(toks[3], source, ln, "phi")?,
        };
        if rot.i >= n || rot.j >= n || rot.i == rot.j {
            return Err(parse_err(source, ln, format!("pair ({}, {}) invalid for n = {n}", rot.i, rot.j)));
        }
        if !(rot.theta.is_finite() && rot.phi.is_finite()) {
            return Err(parse_err(source, ln, "non-finite angle"));
        }
        rotations.push(rot);
    }
    Err(parse_err(source, text.lines().count() + 1, "missing final `D` line"))
}

fn header(s: &mut String, key: &str, value: impl std::fmt::Display) {
    let _ = writeln!(s, "{key} {value}");
}

pub fn write_checkpoint(model: &Model) -> String {
    let mut s = format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n");
    match model {
        Model::Eurnn(c) => {
            header(&mut s, "model", "eurnn");
            header(&mut s, "style", c.w().style());
            header(&mut s, "capacity", c.w().capacity());
            header(&mut s, "n_in", c.n_in());
            header(&mut s, "n_hidden", c.n_hidden());
            header(&mut s, "n_out", c.n_out());
        }
        Model::Vanilla(c) => {
            header(&mut s, "model", "vanilla");
            header(&mut s, "n_in", c.n_in());
            header(&mut s, "n_hidden", c.n_hidden());
            header(&mut s, "n_out", c.n_out());
        }
    }
    for (name, values) in model.param_names().iter().zip(model.params()) {
        let _ = writeln!(s, "param {name} {}", values.len());
        let mut first = true;
        for v in values {
            if !first {
                s.push(' ');
            }
            first = false;
            let _ = write!(s, "{v:e}");
        }
        s.push('\n');
    }
    s
}

pub fn parse_checkpoint(text: &str, source: &str) -> Result<Model> {
    let mut lines = content_lines(text);
    let (ln, first) = lines.next().ok_or_else(|| parse_err(source, 1, "empty checkpoint"))?;
    match first.split_whitespace().collect::<Vec<_>>()[..] {
        [CHECKPOINT_MAGIC, v] if v == CHECKPOINT_VERSION.to_string() => {}
        [CHECKPOINT_MAGIC, v] => return Err(parse_err(source, ln, format!("unsupported checkpoint version {v}"))),
        _ => return Err(parse_err(source, ln, "not a checkpoint file")),
    }
    let mut fields = std::collections::BTreeMap::new();
    let mut arrays: Vec<(usize, String, Vec<f64>)> = Vec::new();
    while let Some((ln, line)) = lines.next() {
        let (key, value) = line.split_once(' ').unwrap_or((line, ""));
        if key == "param" {
            let toks: Vec<&str> = value.split_whitespace().collect();
            if toks.len() != 2 {
                return Err(parse_err(source, ln, "expected `param <name> <len>`"));
            }
            let len: usize = parse_num(toks[1], source, ln, "array length")?;
            let values = if len == 0 {
                Vec::new()
            } else {
                let (vln, vline) = lines
                    .next()
                    .ok_or_else(|| parse_err(source, ln + 1, format!("missing values for {}", toks[0])))?;
                let vals = vline
                    .split_whitespace()
                    .map(|t| parse_num::<f64>(t, source, vln, "value"))
                    .collect::<Result<Vec<_>>>()?;
                if vals.len() != len {
                    return Err(parse_err(source, vln, format!("expected {len} values, found {}", vals.len())));
                }
                vals
            };
            arrays.push((ln, toks[0].to_string(), values));
        } else {
            fields.insert(key.to_string(), (ln, value.trim().to_string()));
        }
    }
    let get = |key: &str| -> Result<&(usize, String)> {
        fields
            .get(key)
            .ok_or_else(|| parse_err(source, 1, format!("missing header field `{key}`")))
    };
    let num = |key: &str| -> Result<usize> {
        let (ln, v) = get(key)?;
        parse_num(v, source, *ln, key)
    };
    let (n_in, n_hidden, n_out) = (num("n_in")?, num("n_hidden")?, num("n_out")?);
    let (mln, kind) = get("model")?;
    // The random draw is overwritten below; it only provides the shapes.
    let mut rng = Rng::new(0);
    let mut model = match kind.as_str() {
        "eurnn" => {
            let (sln, style) = get("style")?;
            let style: MeshStyle = style.parse().map_err(|_| parse_err(source, *sln, "unknown mesh style"))?;
            let w = UnitaryComposition::with_style(style, n_hidden, num("capacity")?)?;
            Model::Eurnn(EurnnCell::from_parts(
                n_in,
                n_out,
                vec![0.0; n_hidden * n_in],
                vec![0.0; n_hidden * n_in],
                w,
                vec![0.0; n_hidden],
                vec![0.0; n_out * 2 * n_hidden],
                vec![0.0; n_out],
            )?)
        }
        "vanilla" => Model::Vanilla(VanillaCell::new(n_in, n_hidden, n_out, 1.0, &mut rng)?),
        other => return Err(parse_err(source, *mln, format!("unknown model kind `{other}`"))),
    };
    let names = model.param_names();
    if names.len() != arrays.len() {
        return Err(parse_err(
            source,
            arrays.last().map_or(1, |a| a.0),
            format!("expected {} parameter arrays, found {}", names.len(), arrays.len()),
        ));
    }
    for ((name, dst), (ln, got_name, values)) in names.iter().zip(model.params_mut()).zip(arrays) {
        if *name != got_name {
            return Err(parse_err(source, ln, format!("expected parameter `{name}`, found `{got_name}`")));
        }
        if dst.len() != values.len() {
            return Err(parse_err(
                source,
                ln,
                format!("parameter `{name}` has length {}, expected {}", values.len(), dst.len()),
            ));
        }
        dst.copy_from_slice(&values);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::{haar_unitary, identity};
    use crate::unitary::{decompose_unitary, reconstruct};

    #[test]
    fn matrix_round_trip_is_exact() {
        let m = haar_unitary(5, &mut Rng::new(1)).unwrap();
        let text = write_matrix(&m);
        assert_eq!(parse_matrix(&text, "m").unwrap(), m);
        assert!(text.starts_with("5\n"));
    }

    #[test]
    fn matrix_parse_errors_carry_line() {
        let bad = "2\n1,0 0,0\n0,0 oops\n";
        match parse_matrix(bad, "f.txt") {
            Err(EunnError::Parse { line, path, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(path, "f.txt");
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_matrix("2\n1,0 0,0\n", "f"), Err(EunnError::Parse { line: 3, .. })));
        assert!(matches!(parse_matrix("2\n1,0\n0,0 1,0\n", "f"), Err(EunnError::Parse { line: 2, .. })));
        assert!(matches!(parse_matrix("", "f"), Err(EunnError::Parse { line: 1, .. })));
    }

    #[test]
    fn identity_program_has_zero_angles() {
        let p = decompose_unitary(&identity(4)).unwrap();
        let text = write_program(&p);
        let q = parse_program(&text, "p").unwrap();
        assert_eq!(p, q);
        assert!(q.rotations.iter().all(|r| r.theta == 0.0 && r.phi == 0.0));
    }

    #[test]
    fn program_round_trip_is_exact() {
        let m = haar_unitary(6, &mut Rng::new(2)).unwrap();
        let p = decompose_unitary(&m).unwrap();
        let q = parse_program(&write_program(&p), "p").unwrap();
        assert_eq!(p, q);
        assert_eq!(reconstruct(&p).unwrap(), reconstruct(&q).unwrap());
    }

    #[test]
    fn program_parse_errors() {
        assert!(matches!(parse_program("n 2\n1 0 0.1\nD 0 0\n", "p"), Err(EunnError::Parse { line: 2, .. })));
        assert!(matches!(parse_program("n 2\n1 5 0.1 0\nD 0 0\n", "p"), Err(EunnError::Parse { line: 2, .. })));
        assert!(matches!(parse_program("n 2\n1 0 0.1 0\n", "p"), Err(EunnError::Parse { line: 3, .. })));
        assert!(matches!(parse_program("n 2\nD 0\n", "p"), Err(EunnError::Parse { line: 2, .. })));
        assert!(matches!(parse_program("x 2\n", "p"), Err(EunnError::Parse { line: 1, .. })));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut rng = Rng::new(3);
        for model in [
            Model::Eurnn(EurnnCell::new(3, 8, 4, MeshStyle::Tunable, 3, &mut rng).unwrap()),
            Model::Eurnn(EurnnCell::new(3, 8, 4, MeshStyle::Fft, 3, &mut rng).unwrap()),
            Model::Vanilla(VanillaCell::new(3, 6, 4, 0.9, &mut rng).unwrap()),
        ] {
            let text = write_checkpoint(&model);
            let back = parse_checkpoint(&text, "ck").unwrap();
            assert_eq!(back, model);
            assert_eq!(write_checkpoint(&back), text);
        }
    }

    #[test]
    fn checkpoint_errors() {
        let model = Model::Vanilla(VanillaCell::new(2, 4, 2, 1.0, &mut Rng::new(4)).unwrap());
        let text = write_checkpoint(&model);
        assert!(matches!(
            parse_checkpoint(&text.replace("eunn-checkpoint 1", "eunn-checkpoint 9"), "ck"),
            Err(EunnError::Parse { line: 1, .. })
        ));
        let truncated: String = text.lines().take(7).map(|l| format!("{l}\n")).collect();
        assert!(parse_checkpoint(&truncated, "ck").is_err());
        let renamed = text.replace("param w ", "param q ");
        assert!(matches!(parse_checkpoint(&renamed, "ck"), Err(EunnError::Parse { .. })));
    }
}
