//! Line-oriented text export of a decomposition. Every float is a hexadecimal float
//! (`0x1.8p+1`), so the text reproduces the multipliers bit for bit.
//!
//! ```text
//! frd-decomposition 1
//! kind final n=1 n_tilde=3 K=0x1.2p-3
//! geometry L=3 N=2 d=2 m=1
//! scale 1
//! tail 0x...            (m*m entries, row-major; `none` for the remainder)
//! mode 0 re im re im    (m*m complex entries, row-major, one line per dual point)
//! ```

use crate::frd_base::{Decomposition, DecompositionKind};
use crate::{CMat, FrdError, RMat, Result, C64};

/// `x` as a C99-style hexadecimal float.
pub fn format_hex(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let bits = x.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let mant = bits & ((1u64 << 52) - 1);
    if exp == 0 && mant == 0 {
        return format!("{sign}0x0p+0");
    }
    let (lead, e) = if exp == 0 { (0, -1022) } else { (1, exp - 1023) };
    let mut digits = format!("{mant:013x}");
    while digits.ends_with('0') {
        digits.pop();
    }
    let frac = if digits.is_empty() { String::new() } else { format!(".{digits}") };
    format!("{sign}0x{lead}{frac}p{e:+}")
}

/// Inverse of [`format_hex`]; also accepts any hex float with up to 13 fraction digits.
pub fn parse_hex(s: &str) -> Result<f64> {
    let bad = || FrdError::Parse(format!("not a hex float: {s:?}"));
    match s {
        "nan" => return Ok(f64::NAN),
        "inf" => return Ok(f64::INFINITY),
        "-inf" => return Ok(f64::NEG_INFINITY),
        _ => {}
    }
    let (neg, rest) = match s.strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let rest = rest.strip_prefix("0x").ok_or_else(bad)?;
    let (mantissa, exp) = rest.split_once('p').ok_or_else(bad)?;
    let exp: i64 = exp.parse().map_err(|_| bad())?;
    let (lead, frac) = mantissa.split_once('.').unwrap_or((mantissa, ""));
    if frac.len() > 13 || lead.len() != 1 {
        return Err(bad());
    }
    let lead = u64::from_str_radix(lead, 16).map_err(|_| bad())?;
    let frac_bits = if frac.is_empty() {
        0
    } else {
        u64::from_str_radix(frac, 16).map_err(|_| bad())? << (4 * (13 - frac.len()))
    };
    let bits = match lead {
        0 if frac_bits == 0 => 0,
        0 if exp == -1022 => frac_bits,
        1 if (-1022..=1023).contains(&exp) => (((exp + 1023) as u64) << 52) | frac_bits,
        _ => return Err(bad()),
    };
    let v = f64::from_bits(bits);
    Ok(if neg { -v } else { v })
}

/// The parsed content of an export: enough to compare against a rebuilt decomposition.
#[derive(Clone, Debug, PartialEq)]
pub struct ExportedDecomposition {
    pub kind: DecompositionKind,
    pub l: usize,
    pub n: u32,
    pub d: usize,
    pub m: usize,
    pub tails: Vec<Option<RMat>>,
    pub modes: Vec<Vec<CMat>>,
}

impl ExportedDecomposition {
    pub fn from_decomposition(dec: &Decomposition) -> Self {
        let g = &dec.geometry;
        Self {
            kind: dec.kind.clone(),
            l: g.l(),
            n: g.n(),
            d: g.d(),
            m: g.m(),
            tails: dec.scales.iter().map(|s| s.tail.clone()).collect(),
            modes: dec.scales.iter().map(|s| s.spectral.values.clone()).collect(),
        }
    }
}

fn kind_line(kind: &DecompositionKind) -> String {
    match kind {
        DecompositionKind::Base => "kind base".into(),
        DecompositionKind::Improved { n } => format!("kind improved n={n}"),
        DecompositionKind::Final { n, n_tilde, k_const } => {
            format!("kind final n={n} n_tilde={n_tilde} K={}", format_hex(*k_const))
        }
    }
}

pub fn decomposition_to_text(dec: &Decomposition) -> String {
    let e = ExportedDecomposition::from_decomposition(dec);
    let mut out = String::new();
    out.push_str("frd-decomposition 1\n");
    out.push_str(&kind_line(&e.kind));
    out.push('\n');
    out.push_str(&format!("geometry L={} N={} d={} m={}\n", e.l, e.n, e.d, e.m));
    for (k, (tail, modes)) in e.tails.iter().zip(&e.modes).enumerate() {
        out.push_str(&format!("scale {}\n", k + 1));
        match tail {
            Some(t) => {
                out.push_str("tail");
                for r in 0..e.m {
                    for c in 0..e.m {
                        out.push(' ');
                        out.push_str(&format_hex(t[(r, c)]));
                    }
                }
                out.push('\n');
            }
            None => out.push_str("tail none\n"),
        }
        for (i, mat) in modes.iter().enumerate() {
            out.push_str(&format!("mode {i}"));
            for r in 0..e.m {
                for c in 0..e.m {
                    let v = mat[(r, c)];
                    out.push(' ');
                    out.push_str(&format_hex(v.re));
                    out.push(' ');
                    out.push_str(&format_hex(v.im));
                }
            }
            out.push('\n');
        }
    }
    out
}

fn kv<'a>(tok: &'a str, key: &str) -> Result<&'a str> {
    tok.strip_prefix(key)
        .and_then(|r| r.strip_prefix('='))
        .ok_or_else(|| FrdError::Parse(format!("expected {key}=..., found {tok:?}")))
}

fn num<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse().map_err(|_| FrdError::Parse(format!("bad integer {s:?}")))
}

pub fn decomposition_from_text(text: &str) -> Result<ExportedDecomposition> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let mut next = || lines.next().ok_or_else(|| FrdError::Parse("unexpected end of input".into()));
    if next()?.trim() != "frd-decomposition 1" {
        return Err(FrdError::Parse("missing header".into()));
    }
    let kind_toks: Vec<&str> = next()?.split_whitespace().collect();
    let kind = match kind_toks.as_slice() {
        ["kind", "base"] => DecompositionKind::Base,
        ["kind", "improved", n] => DecompositionKind::Improved { n: num(kv(n, "n")?)? },
        ["kind", "final", n, nt, k] => DecompositionKind::Final {
            n: num(kv(n, "n")?)?,
            n_tilde: num(kv(nt, "n_tilde")?)?,
            k_const: parse_hex(kv(k, "K")?)?,
        },
        _ => return Err(FrdError::Parse("bad kind line".into())),
    };
    let geo: Vec<&str> = next()?.split_whitespace().collect();
    if geo.len() != 5 || geo[0] != "geometry" {
        return Err(FrdError::Parse("bad geometry line".into()));
    }
    let (l, n, d, m): (usize, u32, usize, usize) =
        (num(kv(geo[1], "L")?)?, num(kv(geo[2], "N")?)?, num(kv(geo[3], "d")?)?, num(kv(geo[4], "m")?)?);
    let volume = (l as u64).pow(n * d as u32) as usize;
    let mut tails = Vec::new();
    let mut modes = Vec::new();
    for k in 1..=(n as usize + 1) {
        if next()?.trim() != format!("scale {k}") {
            return Err(FrdError::Parse(format!("expected scale {k}")));
        }
        let toks: Vec<&str> = next()?.split_whitespace().collect();
        if toks.first() != Some(&"tail") {
            return Err(FrdError::Parse("expected tail line".into()));
        }
        if toks.get(1) == Some(&"none") {
            tails.push(None);
        } else {
            if toks.len() != 1 + m * m {
                return Err(FrdError::Parse("tail has the wrong entry count".into()));
            }
            let vals = toks[1..].iter().map(|t| parse_hex(t)).collect::<Result<Vec<_>>>()?;
            tails.push(Some(RMat::from_row_slice(m, m, &vals)));
        }
        let mut scale_modes = Vec::with_capacity(volume);
        for i in 0..volume {
            let toks: Vec<&str> = next()?.split_whitespace().collect();
            if toks.len() != 2 + 2 * m * m || toks[0] != "mode" || num::<usize>(toks[1])? != i {
                return Err(FrdError::Parse(format!("bad mode line {i} of scale {k}")));
            }
            let vals = toks[2..].iter().map(|t| parse_hex(t)).collect::<Result<Vec<_>>>()?;
            let entries: Vec<C64> = vals.chunks(2).map(|c| C64::new(c[0], c[1])).collect();
            scale_modes.push(CMat::from_row_slice(m, m, &entries));
        }
        modes.push(scale_modes);
    }
    Ok(ExportedDecomposition { kind, l, n, d, m, tails, modes })
}
