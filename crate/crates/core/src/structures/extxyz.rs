use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::elements;
use super::AtomicStructure;
use crate::linalg::Mat3;
use crate::{Error, Result};

/// Read a single-frame extended-XYZ file.
pub fn load_structure(path: impl AsRef<Path>) -> Result<AtomicStructure> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_extxyz(&text, path)
}

/// Parse extended-XYZ text. `origin` is only used in error messages.
pub fn parse_extxyz(text: &str, origin: &Path) -> Result<AtomicStructure> {
    let err = |line: usize, msg: String| Error::Parse {
        path: PathBuf::from(origin),
        line,
        msg,
    };
    let lines: Vec<&str> = text.lines().collect();

    let count_line = lines.first().ok_or_else(|| err(1, "empty file".into()))?;
    let n_atoms: usize = count_line
        .trim()
        .parse()
        .map_err(|_| err(1, format!("expected atom count, found {:?}", count_line.trim())))?;
    if n_atoms == 0 {
        return Err(err(1, "atom count must be positive".into()));
    }

    let header = lines.get(1).copied().unwrap_or("");
    let fields = header_fields(header).map_err(|m| err(2, m))?;
    let mut cell: Mat3 = [[0.0; 3]; 3];
    let mut has_lattice = false;
    let mut pbc = None;
    for (key, value) in &fields {
        match key.to_ascii_lowercase().as_str() {
            "lattice" => {
                let v: Vec<f64> = value
                    .split_whitespace()
                    .map(str::parse)
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| err(2, format!("malformed Lattice {value:?}")))?;
                if v.len() != 9 {
                    return Err(err(2, format!("Lattice needs 9 numbers, found {}", v.len())));
                }
                for r in 0..3 {
                    for c in 0..3 {
                        cell[r][c] = v[3 * r + c];
                    }
                }
                has_lattice = true;
            }
            "pbc" => {
                let flags: Vec<bool> = value
                    .split_whitespace()
                    .map(parse_bool)
                    .collect::<Option<_>>()
                    .ok_or_else(|| err(2, format!("malformed pbc {value:?}")))?;
                if flags.len() != 3 {
                    return Err(err(2, format!("pbc needs 3 flags, found {}", flags.len())));
                }
                pbc = Some([flags[0], flags[1], flags[2]]);
            }
            _ => {}
        }
    }
    let pbc = pbc.unwrap_or([has_lattice; 3]);

    let mut positions = Vec::with_capacity(n_atoms);
    let mut species = Vec::with_capacity(n_atoms);
    for k in 0..n_atoms {
        let lineno = k + 3;
        let line = lines.get(k + 2).ok_or_else(|| {
            err(lineno, format!("expected {n_atoms} atom lines, file ends after {k}"))
        })?;
        let mut toks = line.split_whitespace();
        let sym = toks
            .next()
            .ok_or_else(|| err(lineno, format!("expected {n_atoms} atom lines, found blank line")))?;
        let z = elements::atomic_number(sym)
            .ok_or_else(|| err(lineno, format!("unknown element symbol {sym:?}")))?;
        let mut p = [0.0; 3];
        for x in &mut p {
            let tok = toks
                .next()
                .ok_or_else(|| err(lineno, "expected 3 coordinates".into()))?;
            *x = tok
                .parse()
                .map_err(|_| err(lineno, format!("malformed coordinate {tok:?}")))?;
        }
        positions.push(p);
        species.push(z);
    }
    if let Some(extra) = lines[(n_atoms + 2).min(lines.len())..]
        .iter()
        .position(|l| !l.trim().is_empty())
    {
        return Err(err(
            n_atoms + 3 + extra,
            format!("atom count line says {n_atoms} but more atom lines follow"),
        ));
    }

    AtomicStructure::new(positions, species, cell, pbc).map_err(|e| match e {
        Error::Structure(m) => err(2, m),
        other => other,
    })
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "T" | "t" | "True" | "true" | "1" => Some(true),
        "F" | "f" | "False" | "false" | "0" => Some(false),
        _ => None,
    }
}

/// Split `key=value key2="quoted value"` pairs. Bare keys map to `"T"`.
fn header_fields(header: &str) -> std::result::Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    let mut chars = header.chars().peekable();
    loop {
        while chars.peek().is_some_and(|c| c.is_whitespace()) {
            chars.next();
        }
        if chars.peek().is_none() {
            break;
        }
        let mut key = String::new();
        while let Some(&c) = chars.peek() {
            if c == '=' || c.is_whitespace() {
                break;
            }
            key.push(c);
            chars.next();
        }
        if chars.peek() != Some(&'=') {
            out.push((key, "T".to_string()));
            continue;
        }
        chars.next();
        let mut value = String::new();
        if chars.peek() == Some(&'"') {
            chars.next();
            loop {
                match chars.next() {
                    Some('"') => break,
                    Some(c) => value.push(c),
                    None => return Err(format!("unterminated quote in value of {key}")),
                }
            }
        } else {
            while let Some(&c) = chars.peek() {
                if c.is_whitespace() {
                    break;
                }
                value.push(c);
                chars.next();
            }
        }
        out.push((key, value));
    }
    Ok(out)
}

pub fn write_extxyz_string(s: &AtomicStructure) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", s.n_atoms());
    let c = s.cell();
    let flag = |b: bool| if b { "T" } else { "F" };
    let pbc = s.pbc();
    let _ = writeln!(
        out,
        "Lattice=\"{} {} {} {} {} {} {} {} {}\" Properties=species:S:1:pos:R:3 pbc=\"{} {} {}\"",
        c[0][0],
        c[0][1],
        c[0][2],
        c[1][0],
        c[1][1],
        c[1][2],
        c[2][0],
        c[2][1],
        c[2][2],
        flag(pbc[0]),
        flag(pbc[1]),
        flag(pbc[2])
    );
    for (p, &z) in s.positions().iter().zip(s.species()) {
        let sym = elements::symbol(z).unwrap_or("X");
        let _ = writeln!(out, "{sym} {} {} {}", p[0], p[1], p[2]);
    }
    out
}

pub fn write_extxyz(path: impl AsRef<Path>, s: &AtomicStructure) -> Result<()> {
    std::fs::write(path, write_extxyz_string(s))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<AtomicStructure> {
        parse_extxyz(text, Path::new("test.xyz"))
    }

    #[test]
    fn single_hydrogen() {
        let s = parse("1\nLattice=\"10 0 0 0 10 0 0 0 10\" pbc=\"T T T\"\nH 0 0 0\n").unwrap();
        assert_eq!(s.n_atoms(), 1);
        assert_eq!(s.species(), &[1]);
        assert_eq!(s.pbc(), [true; 3]);
        assert_eq!(s.cell()[2][2], 10.0);
    }

    #[test]
    fn no_lattice_means_molecule() {
        let s = parse("2\ncomment here\nO 0 0 0\nH 0.96 0 0\n").unwrap();
        assert_eq!(s.pbc(), [false; 3]);
        assert_eq!(s.species(), &[8, 1]);
    }

    #[test]
    fn lattice_without_pbc_defaults_periodic() {
        let s = parse("1\nLattice=\"4 0 0 0 4 0 0 0 4\"\nSi 1 1 1\n").unwrap();
        assert_eq!(s.pbc(), [true; 3]);
    }

    #[test]
    fn count_mismatch_reports_offending_line() {
        match parse("3\nLattice=\"5 0 0 0 5 0 0 0 5\"\nH 0 0 0\nH 1 0 0\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("unexpected {other:?}"),
        }
        match parse("1\n\nH 0 0 0\nH 1 0 0\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_lines() {
        assert!(matches!(parse("x\n\nH 0 0 0\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse("1\n\nQq 0 0 0\n"), Err(Error::Parse { line: 3, .. })));
        assert!(matches!(parse("1\n\nH 0 zero 0\n"), Err(Error::Parse { line: 3, .. })));
        assert!(matches!(
            parse("1\nLattice=\"1 2 3\"\nH 0 0 0\n"),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn singular_periodic_cell_rejected() {
        let r = parse("1\nLattice=\"1 0 0 2 0 0 0 0 1\" pbc=\"T T T\"\nH 0 0 0\n");
        assert!(matches!(r, Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn write_then_read_is_stable() {
        let s = parse("2\nLattice=\"5 0 0 0.5 6 0 0 0 7\" pbc=\"T T F\"\nHf 0.1 0.2 0.3\nO 1.5 2.25 -3\n")
            .unwrap();
        let text = write_extxyz_string(&s);
        let back = parse(&text).unwrap();
        assert_eq!(back, s);
        assert_eq!(write_extxyz_string(&back), text);
    }
}
