//! Text form of a kernel pipeline: `base("->"transform)*`, no whitespace.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaseKernel {
    Linear,
    LastLayer,
    Grad,
    Nngp,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Transform {
    Scale,
    Post { sigma2: f64 },
    Rp { p: usize },
    Ens { n: usize },
    AcsRf { p: usize, sigma2: f64 },
    AcsGrad { sigma2: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub base: BaseKernel,
    pub transforms: Vec<Transform>,
}

impl fmt::Display for BaseKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaseKernel::Linear => "lin",
            BaseKernel::LastLayer => "ll",
            BaseKernel::Grad => "grad",
            BaseKernel::Nngp => "nngp",
        })
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transform::Scale => write!(f, "scale"),
            Transform::Post { sigma2 } => write!(f, "post({sigma2:e})"),
            Transform::Rp { p } => write!(f, "rp({p})"),
            Transform::Ens { n } => write!(f, "ens({n})"),
            Transform::AcsRf { p, sigma2 } => write!(f, "acs-rf({p},{sigma2:e})"),
            Transform::AcsGrad { sigma2 } => write!(f, "acs-grad({sigma2:e})"),
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.base)?;
        for t in &self.transforms {
            write!(f, "->{t}")?;
        }
        Ok(())
    }
}

impl std::str::FromStr for KernelSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        parse_kernel_spec(s)
    }
}

struct Cursor<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err<T>(&self, pos: usize, msg: impl Into<String>) -> Result<T> {
        Err(Error::Parse { pos, msg: msg.into() })
    }

    fn rest(&self) -> &'a str {
        &self.text[self.pos..]
    }

    fn eat(&mut self, lit: &str) -> bool {
        if self.rest().starts_with(lit) {
            self.pos += lit.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, lit: &str) -> Result<()> {
        if self.eat(lit) {
            Ok(())
        } else {
            self.err(self.pos, format!("expected '{lit}'"))
        }
    }

    fn ident(&mut self) -> &'a str {
        let bytes = self.rest().as_bytes();
        let mut len = 0;
        while len < bytes.len() {
            let b = bytes[len];
            let arrow = b == b'-' && bytes.get(len + 1) == Some(&b'>');
            if arrow || !(b.is_ascii_lowercase() || b == b'-') {
                break;
            }
            len += 1;
        }
        let out = &self.rest()[..len];
        self.pos += len;
        out
    }

    fn token(&mut self) -> (usize, &'a str) {
        let start = self.pos;
        let len = self.rest().find([',', ')']).unwrap_or(self.rest().len());
        self.pos += len;
        (start, &self.text[start..start + len])
    }

    fn int(&mut self) -> Result<usize> {
        let (start, tok) = self.token();
        if tok.is_empty() || !tok.bytes().all(|b| b.is_ascii_digit()) {
            return self.err(start, format!("expected an integer, found '{tok}'"));
        }
        let v: usize = tok.parse().or_else(|_| self.err(start, "integer out of range"))?;
        if v == 0 {
            return self.err(start, "integer parameter must be at least 1");
        }
        Ok(v)
    }

    fn positive_float(&mut self) -> Result<f64> {
        let (start, tok) = self.token();
        let well_formed = !tok.is_empty()
            && tok.bytes().all(|b| b.is_ascii_digit() || matches!(b, b'.' | b'e' | b'E' | b'+' | b'-'))
            && tok.bytes().any(|b| b.is_ascii_digit());
        let v: f64 = match tok.parse() {
            Ok(v) if well_formed => v,
            _ => return self.err(start, format!("expected a number, found '{tok}'")),
        };
        if !(v > 0.0 && v.is_finite()) {
            return self.err(start, "sigma2 must be positive and finite");
        }
        Ok(v)
    }
}

/// Parses a kernel pipeline. `train(s)` expands to `scale` followed by `post(s)`.
pub fn parse_kernel_spec(text: &str) -> Result<KernelSpec> {
    let mut c = Cursor { text, pos: 0 };
    if text.is_empty() {
        return c.err(0, "empty kernel spec");
    }
    let start = c.pos;
    let base = match c.ident() {
        "lin" => BaseKernel::Linear,
        "ll" => BaseKernel::LastLayer,
        "grad" => BaseKernel::Grad,
        "nngp" => BaseKernel::Nngp,
        other => return c.err(start, format!("unknown base kernel '{other}'")),
    };
    let mut transforms = Vec::new();
    while !c.rest().is_empty() {
        c.expect("->")?;
        let start = c.pos;
        let name = c.ident();
        match name {
            "scale" => transforms.push(Transform::Scale),
            "post" | "train" | "acs-grad" => {
                c.expect("(")?;
                let sigma2 = c.positive_float()?;
                c.expect(")")?;
                match name {
                    "post" => transforms.push(Transform::Post { sigma2 }),
                    "train" => transforms.extend([Transform::Scale, Transform::Post { sigma2 }]),
                    _ => transforms.push(Transform::AcsGrad { sigma2 }),
                }
            }
            "rp" | "ens" => {
                c.expect("(")?;
                let v = c.int()?;
                c.expect(")")?;
                transforms.push(if name == "rp" { Transform::Rp { p: v } } else { Transform::Ens { n: v } });
            }
            "acs-rf" => {
                c.expect("(")?;
                let p = c.int()?;
                c.expect(",")?;
                let sigma2 = c.positive_float()?;
                c.expect(")")?;
                transforms.push(Transform::AcsRf { p, sigma2 });
            }
            other => return c.err(start, format!("unknown transform '{other}'")),
        }
    }
    Ok(KernelSpec { base, transforms })
}
