//! Membership functions as explicit breakpoint tables.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PASSABILITY: &str = "passability";
pub const HUMAN_DETECTION_REWARD: &str = "human_detection_reward";
pub const EXPLORATION_REWARD: &str = "exploration_reward";
pub const MEASUREMENT_CONSISTENCY: &str = "measurement_consistency";

/// Piecewise-linear function through `(xs[i], ys[i])`, constant beyond the
/// first and last breakpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinear {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl PiecewiseLinear {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        check_axis(&xs)?;
        if ys.len() != xs.len() {
            return Err(Error::Config("breakpoint and value counts differ".into()));
        }
        check_degrees(&ys)?;
        Ok(PiecewiseLinear { xs, ys })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let (i, t) = locate(&self.xs, x);
        lerp(self.ys[i], self.ys[(i + 1).min(self.ys.len() - 1)], t)
    }
}

/// Bilinear interpolation on a rectangular breakpoint lattice; `values` is
/// indexed `[ix * ys.len() + iy]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BilinearSurface {
    xs: Vec<f64>,
    ys: Vec<f64>,
    values: Vec<f64>,
}

impl BilinearSurface {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        check_axis(&xs)?;
        check_axis(&ys)?;
        if values.len() != xs.len() * ys.len() {
            return Err(Error::Config("surface value count does not match its lattice".into()));
        }
        check_degrees(&values)?;
        Ok(BilinearSurface { xs, ys, values })
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let (ix, tx) = locate(&self.xs, x);
        let (iy, ty) = locate(&self.ys, y);
        let nx = (ix + 1).min(self.xs.len() - 1);
        let ny = (iy + 1).min(self.ys.len() - 1);
        let at = |i: usize, j: usize| self.values[i * self.ys.len() + j];
        let lo = lerp(at(ix, iy), at(ix, ny), ty);
        let hi = lerp(at(nx, iy), at(nx, ny), ty);
        lerp(lo, hi, tx)
    }
}

fn check_axis(axis: &[f64]) -> Result<()> {
    if axis.is_empty() {
        return Err(Error::Config(
            "membership function needs at least one breakpoint".into(),
        ));
    }
    if axis.windows(2).any(|w| !(w[0] < w[1])) || axis.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config(
            "breakpoints must be finite and strictly increasing".into(),
        ));
    }
    Ok(())
}

fn check_degrees(values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Config("membership degrees must lie in [0, 1]".into()));
    }
    Ok(())
}

/// Segment index and fraction for `x`, clamped to the axis range.
fn locate(axis: &[f64], x: f64) -> (usize, f64) {
    let last = axis.len() - 1;
    if last == 0 || x <= axis[0] || x.is_nan() {
        return (0, 0.0);
    }
    if x >= axis[last] {
        return (last, 0.0);
    }
    let i = axis.partition_point(|&b| b <= x) - 1;
    (i, (x - axis[i]) / (axis[i + 1] - axis[i]))
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t == 0.0 {
        a
    } else {
        a + (b - a) * t
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MembershipFunction {
    Linear(PiecewiseLinear),
    Surface(BilinearSurface),
}

impl MembershipFunction {
    pub fn arity(&self) -> usize {
        match self {
            MembershipFunction::Linear(_) => 1,
            MembershipFunction::Surface(_) => 2,
        }
    }
}

/// Named membership functions. The shipped defaults are versioned so that
/// tests pinning exact degrees stay meaningful if the tables change.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MembershipFunctionBank {
    pub version: u32,
    functions: BTreeMap<String, MembershipFunction>,
}

impl Default for MembershipFunctionBank {
    fn default() -> Self {
        let mut bank = MembershipFunctionBank {
            version: 1,
            functions: BTreeMap::new(),
        };
        // input: P(obstacle); the uninformed prior stays fully passable
        bank.insert(
            PASSABILITY,
            MembershipFunction::Linear(PiecewiseLinear::new(vec![0.4, 0.8], vec![1.0, 0.0]).unwrap()),
        );
        // input: P(human); the cap stays below 1 so tuning weights keep an effect
        bank.insert(
            HUMAN_DETECTION_REWARD,
            MembershipFunction::Linear(PiecewiseLinear::new(vec![0.5, 0.98], vec![0.0, 0.95]).unwrap()),
        );
        // input: uncertainty degree; saturates well below the human reward so
        // that a confident detection outweighs plain coverage
        bank.insert(
            EXPLORATION_REWARD,
            MembershipFunction::Linear(PiecewiseLinear::new(vec![0.0, 1.0], vec![0.0, 0.5]).unwrap()),
        );
        // inputs: (detectability, likelihood of the observation given the MAP state)
        bank.insert(
            MEASUREMENT_CONSISTENCY,
            MembershipFunction::Surface(
                BilinearSurface::new(vec![0.0, 1.0], vec![0.02, 0.96], vec![0.5, 0.5, 0.0, 1.0]).unwrap(),
            ),
        );
        bank
    }
}

impl MembershipFunctionBank {
    pub fn insert(&mut self, name: &str, f: MembershipFunction) {
        self.functions.insert(name.to_string(), f);
    }

    pub fn get(&self, name: &str) -> Result<&MembershipFunction> {
        self.functions
            .get(name)
            .ok_or_else(|| Error::UnknownMembership(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.functions.keys().map(String::as_str)
    }

    pub fn eval(&self, name: &str, inputs: &[f64]) -> Result<f64> {
        let f = self.get(name)?;
        if inputs.len() != f.arity() {
            return Err(Error::Contract(format!(
                "`{name}` takes {} inputs, got {}",
                f.arity(),
                inputs.len()
            )));
        }
        Ok(match f {
            MembershipFunction::Linear(pl) => pl.eval(inputs[0]),
            MembershipFunction::Surface(s) => s.eval(inputs[0], inputs[1]),
        })
    }

    /// Looks up a one-input function for repeated evaluation.
    pub fn linear(&self, name: &str) -> Result<&PiecewiseLinear> {
        match self.get(name)? {
            MembershipFunction::Linear(pl) => Ok(pl),
            MembershipFunction::Surface(_) => Err(Error::Contract(format!("`{name}` is not one-dimensional"))),
        }
    }

    pub fn surface(&self, name: &str) -> Result<&BilinearSurface> {
        match self.get(name)? {
            MembershipFunction::Surface(s) => Ok(s),
            MembershipFunction::Linear(_) => Err(Error::Contract(format!("`{name}` is not two-dimensional"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_tables() {
        let b = MembershipFunctionBank::default();
        assert_eq!(b.eval(PASSABILITY, &[0.0]).unwrap(), 1.0);
        assert_eq!(b.eval(PASSABILITY, &[0.4]).unwrap(), 1.0);
        assert!((b.eval(PASSABILITY, &[0.6]).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(b.eval(PASSABILITY, &[0.8]).unwrap(), 0.0);
        assert_eq!(b.eval(PASSABILITY, &[1.0]).unwrap(), 0.0);
        assert_eq!(b.eval(HUMAN_DETECTION_REWARD, &[0.5]).unwrap(), 0.0);
        assert_eq!(b.eval(HUMAN_DETECTION_REWARD, &[1.0]).unwrap(), 0.95);
        assert_eq!(b.eval(HUMAN_DETECTION_REWARD, &[0.98]).unwrap(), 0.95);
        assert_eq!(b.eval(EXPLORATION_REWARD, &[0.5]).unwrap(), 0.25);
        assert_eq!(b.eval(EXPLORATION_REWARD, &[1.0]).unwrap(), 0.5);
        assert_eq!(b.eval(MEASUREMENT_CONSISTENCY, &[0.0, 0.5]).unwrap(), 0.5);
        assert_eq!(b.eval(MEASUREMENT_CONSISTENCY, &[1.0, 0.96]).unwrap(), 1.0);
        assert_eq!(b.eval(MEASUREMENT_CONSISTENCY, &[1.0, 0.02]).unwrap(), 0.0);
        // out of domain inputs clamp
        assert_eq!(b.eval(MEASUREMENT_CONSISTENCY, &[2.0, 5.0]).unwrap(), 1.0);
    }

    #[test]
    fn lookup_errors() {
        let b = MembershipFunctionBank::default();
        assert!(matches!(b.eval("nope", &[0.0]), Err(Error::UnknownMembership(_))));
        assert!(matches!(b.eval(PASSABILITY, &[0.0, 1.0]), Err(Error::Contract(_))));
        assert!(PiecewiseLinear::new(vec![0.0, 0.0], vec![0.0, 1.0]).is_err());
        assert!(PiecewiseLinear::new(vec![0.0, 1.0], vec![0.0, 1.5]).is_err());
    }

    proptest! {
        #[test]
        fn exact_at_breakpoints_and_bounded(xs in prop::collection::btree_set(0u32..1000, 2..8), seed in any::<u64>()) {
            let xs: Vec<f64> = xs.into_iter().map(|v| f64::from(v) / 1000.0).collect();
            let ys: Vec<f64> = xs.iter().enumerate().map(|(i, _)| ((seed >> (i * 7)) % 101) as f64 / 100.0).collect();
            let f = PiecewiseLinear::new(xs.clone(), ys.clone()).unwrap();
            for (x, y) in xs.iter().zip(&ys) {
                prop_assert_eq!(f.eval(*x), *y);
            }
            for k in 0..=200 {
                let v = f.eval(-0.5 + f64::from(k) / 100.0);
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn continuous_between_breakpoints(x in 0.0f64..1.0, y in 0.0f64..1.0) {
            let b = MembershipFunctionBank::default();
            let s = b.surface(MEASUREMENT_CONSISTENCY).unwrap();
            let h = 1e-7;
            prop_assert!((s.eval(x, y) - s.eval(x + h, y + h)).abs() < 1e-5);
        }
    }
}
