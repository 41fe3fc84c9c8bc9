use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Mesh;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FiberMode {
    Extend,
    Contract,
}

impl FiberMode {
    pub fn name(self) -> &'static str {
        match self {
            FiberMode::Extend => "extend",
            FiberMode::Contract => "contract",
        }
    }
}

impl FromStr for FiberMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "extend" => Ok(FiberMode::Extend),
            "contract" => Ok(FiberMode::Contract),
            other => Err(Error::invalid(format!("unknown fiber mode `{other}`"))),
        }
    }
}

/// A group of elements sharing one actuation direction and stiffness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuscleFiber {
    pub elements: Vec<usize>,
    pub direction: [f64; 3],
    pub stiffness: f64,
    pub mode: FiberMode,
}

impl MuscleFiber {
    /// `direction` is normalized here; it must be nonzero.
    pub fn new(elements: Vec<usize>, direction: Vector3<f64>, stiffness: f64, mode: FiberMode) -> Result<Self> {
        let norm = direction.norm();
        if !(norm > 1e-12 && norm.is_finite()) {
            return Err(Error::invalid("fiber direction must be a nonzero vector"));
        }
        let d = direction / norm;
        let fiber = MuscleFiber {
            elements,
            direction: [d.x, d.y, d.z],
            stiffness,
            mode,
        };
        fiber.validate(None)?;
        Ok(fiber)
    }

    pub fn direction(&self) -> Vector3<f64> {
        Vector3::from(self.direction)
    }

    pub fn validate(&self, mesh: Option<&Mesh>) -> Result<()> {
        if ((self.direction().norm()) - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("fiber direction must have unit length"));
        }
        if !(self.stiffness > 0.0 && self.stiffness.is_finite()) {
            return Err(Error::invalid(format!(
                "fiber stiffness must be positive, got {}",
                self.stiffness
            )));
        }
        if self.elements.is_empty() {
            return Err(Error::invalid("fiber has no elements"));
        }
        if let Some(mesh) = mesh {
            if let Some(&e) = self.elements.iter().find(|&&e| e >= mesh.element_count()) {
                return Err(Error::invalid(format!(
                    "fiber element {e} out of range ({} elements)",
                    mesh.element_count()
                )));
            }
        }
        Ok(())
    }
}

/// Piecewise-constant actuation held for `1/frequency` seconds per value.
/// A zero frequency denotes a constant signal (only the first value is used).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActuationSignal {
    pub frequency: f64,
    pub values: Vec<f64>,
}

impl ActuationSignal {
    pub fn constant(a: f64) -> Self {
        ActuationSignal {
            frequency: 0.0,
            values: vec![a],
        }
    }

    pub fn piecewise(frequency: f64, values: Vec<f64>) -> Result<Self> {
        let s = ActuationSignal { frequency, values };
        s.validate()?;
        Ok(s)
    }

    /// Number of hold intervals covering `duration` at `frequency`.
    pub fn interval_count(duration: f64, frequency: f64) -> usize {
        (duration * frequency + 1e-9).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::invalid("actuation signal has no values"));
        }
        if !(self.frequency >= 0.0 && self.frequency.is_finite()) {
            return Err(Error::invalid("actuation frequency must be non-negative"));
        }
        if let Some(a) = self.values.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
            return Err(Error::invalid(format!("actuation values must be positive, got {a}")));
        }
        Ok(())
    }

    /// Index of the value active at time `t`, clamped to the last interval.
    pub fn interval_at(&self, t: f64) -> usize {
        if self.frequency == 0.0 {
            return 0;
        }
        let k = (t * self.frequency + 1e-9).floor().max(0.0) as usize;
        k.min(self.values.len() - 1)
    }

    pub fn value_at(&self, t: f64) -> f64 {
        self.values[self.interval_at(t)]
    }
}

/// Two lines per fiber: element indices, then `mx my mz w mode`.
/// Blank lines and `#` comments are ignored.
pub fn read_fibers(text: &str) -> Result<Vec<MuscleFiber>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let mut fibers = Vec::new();
    while let Some((ln, elem_line)) = lines.next() {
        let elements = elem_line
            .split_whitespace()
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|e| Error::parse(ln, format!("element index `{t}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let (ln, spec) = lines
            .next()
            .ok_or_else(|| Error::parse(ln, "fiber is missing its direction line"))?;
        let tokens: Vec<&str> = spec.split_whitespace().collect();
        if tokens.len() != 5 {
            return Err(Error::parse(ln, "expected `mx my mz w mode`"));
        }
        let num = |t: &str| {
            t.parse::<f64>()
                .map_err(|e| Error::parse(ln, format!("number `{t}`: {e}")))
        };
        let direction = Vector3::new(num(tokens[0])?, num(tokens[1])?, num(tokens[2])?);
        let stiffness = num(tokens[3])?;
        let mode = tokens[4].parse().map_err(|e: Error| Error::parse(ln, e.to_string()))?;
        let fiber =
            MuscleFiber::new(elements, direction, stiffness, mode).map_err(|e| Error::parse(ln, e.to_string()))?;
        fibers.push(fiber);
    }
    Ok(fibers)
}

pub fn write_fibers(fibers: &[MuscleFiber]) -> String {
    let mut out = String::new();
    for f in fibers {
        let elems: Vec<String> = f.elements.iter().map(|e| e.to_string()).collect();
        let _ = writeln!(out, "{}", elems.join(" "));
        let [x, y, z] = f.direction;
        let _ = writeln!(out, "{x:e} {y:e} {z:e} {:e} {}", f.stiffness, f.mode.name());
    }
    out
}
