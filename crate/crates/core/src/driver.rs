//! Lipschitz drivers `g(t, y, z, l)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::scalar::Real;

/// Where a driver is evaluated: node coordinates plus calendar time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Site<T> {
    pub level: usize,
    pub node: usize,
    pub t: T,
}

impl<T: Real> Site<T> {
    pub fn new(level: usize, node: usize, t: T) -> Self {
        Self { level, node, t }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Dependence {
    pub y: bool,
    pub z: bool,
    pub l: bool,
}

/// Generator of a backward equation.
///
/// Implementations must satisfy
/// `|g(y1,z1,l1) - g(y2,z2,l2)| <= K (|y1-y2| + |z1-z2| + ||l1-l2||_mu)`
/// with `K = self.lipschitz()` and `||l||_mu^2 = sum_i mu_i l_i^2`.
pub trait Driver<T: Real>: Send + Sync {
    fn eval(&self, site: Site<T>, y: T, z: T, l: &[T]) -> T;

    fn lipschitz(&self) -> T;

    fn dependence(&self) -> Dependence;

    /// `Some((slope, intercept))` when `g` is affine in `y` for fixed
    /// `(site, z, l)`. Lets the implicit step use a closed form.
    fn affine_in_y(&self, _site: Site<T>, _z: T, _l: &[T]) -> Option<(T, T)> {
        None
    }
}

impl<T: Real, D: Driver<T> + ?Sized> Driver<T> for &D {
    fn eval(&self, site: Site<T>, y: T, z: T, l: &[T]) -> T {
        (**self).eval(site, y, z, l)
    }
    fn lipschitz(&self) -> T {
        (**self).lipschitz()
    }
    fn dependence(&self) -> Dependence {
        (**self).dependence()
    }
    fn affine_in_y(&self, site: Site<T>, z: T, l: &[T]) -> Option<(T, T)> {
        (**self).affine_in_y(site, z, l)
    }
}

impl<T: Real, D: Driver<T> + ?Sized> Driver<T> for Box<D> {
    fn eval(&self, site: Site<T>, y: T, z: T, l: &[T]) -> T {
        (**self).eval(site, y, z, l)
    }
    fn lipschitz(&self) -> T {
        (**self).lipschitz()
    }
    fn dependence(&self) -> Dependence {
        (**self).dependence()
    }
    fn affine_in_y(&self, site: Site<T>, z: T, l: &[T]) -> Option<(T, T)> {
        (**self).affine_in_y(site, z, l)
    }
}

/// The built-in drivers available from scenario files.
#[derive(Debug, Clone, PartialEq)]
pub enum BuiltinDriver<T> {
    Zero,
    Constant(T),
    /// `a y + b z + sum_i c_i l_i`; `mu` holds the intensities for the
    /// Lipschitz constant.
    Linear {
        a: T,
        b: T,
        c: Vec<T>,
        mu: Vec<T>,
    },
    /// `-r y`.
    Discount(T),
    /// Piecewise constant in time: `values[floor(t / dt)]`.
    Table { dt: T, values: Vec<T> },
}

impl<T: Real> BuiltinDriver<T> {
    pub fn linear(a: T, b: T, c: Vec<T>, mu: &[T]) -> Self {
        BuiltinDriver::Linear {
            a,
            b,
            c,
            mu: mu.to_vec(),
        }
    }

    fn l_part(c: &[T], l: &[T]) -> T {
        c.iter().zip(l).map(|(&ci, &li)| ci * li).sum()
    }

    fn table_value(dt: T, values: &[T], t: T) -> T {
        if values.is_empty() {
            return T::zero();
        }
        // small nudge so that t = k*dt lands in bucket k despite rounding
        let idx = ((t / dt) + T::lit(1e-9)).floor().to_usize().unwrap_or(0);
        values[idx.min(values.len() - 1)]
    }
}

impl<T: Real> Driver<T> for BuiltinDriver<T> {
    fn eval(&self, site: Site<T>, y: T, z: T, l: &[T]) -> T {
        match self {
            BuiltinDriver::Zero => T::zero(),
            BuiltinDriver::Constant(c) => *c,
            BuiltinDriver::Linear { a, b, c, .. } => *a * y + *b * z + Self::l_part(c, l),
            BuiltinDriver::Discount(r) => -*r * y,
            BuiltinDriver::Table { dt, values } => Self::table_value(*dt, values, site.t),
        }
    }

    fn lipschitz(&self) -> T {
        match self {
            BuiltinDriver::Zero | BuiltinDriver::Constant(_) | BuiltinDriver::Table { .. } => {
                T::zero()
            }
            BuiltinDriver::Discount(r) => r.abs(),
            BuiltinDriver::Linear { a, b, c, mu } => {
                // |sum c_i dl_i| <= sqrt(sum c_i^2 / mu_i) ||dl||_mu
                let lk: T = c
                    .iter()
                    .zip(mu.iter().copied().chain(std::iter::repeat(T::zero())))
                    .map(|(&ci, mi)| {
                        if ci == T::zero() {
                            T::zero()
                        } else if mi > T::zero() {
                            ci * ci / mi
                        } else {
                            T::infinity()
                        }
                    })
                    .sum::<T>()
                    .sqrt();
                a.abs().max(b.abs()).max(lk)
            }
        }
    }

    fn dependence(&self) -> Dependence {
        match self {
            BuiltinDriver::Zero | BuiltinDriver::Constant(_) | BuiltinDriver::Table { .. } => {
                Dependence::default()
            }
            BuiltinDriver::Discount(_) => Dependence {
                y: true,
                ..Default::default()
            },
            BuiltinDriver::Linear { a, b, c, .. } => Dependence {
                y: *a != T::zero(),
                z: *b != T::zero(),
                l: c.iter().any(|&v| v != T::zero()),
            },
        }
    }

    fn affine_in_y(&self, site: Site<T>, z: T, l: &[T]) -> Option<(T, T)> {
        Some(match self {
            BuiltinDriver::Zero => (T::zero(), T::zero()),
            BuiltinDriver::Constant(c) => (T::zero(), *c),
            BuiltinDriver::Linear { a, b, c, .. } => (*a, *b * z + Self::l_part(c, l)),
            BuiltinDriver::Discount(r) => (-*r, T::zero()),
            BuiltinDriver::Table { dt, values } => {
                (T::zero(), Self::table_value(*dt, values, site.t))
            }
        })
    }
}

/// Driver given by a closure, with a declared constant and dependence.
pub struct FnDriver<F> {
    f: F,
    k: f64,
    dependence: Dependence,
}

impl<F> FnDriver<F> {
    pub fn new(k: f64, dependence: Dependence, f: F) -> Self {
        Self { f, k, dependence }
    }
}

impl<T: Real, F> Driver<T> for FnDriver<F>
where
    F: Fn(Site<T>, T, T, &[T]) -> T + Send + Sync,
{
    fn eval(&self, site: Site<T>, y: T, z: T, l: &[T]) -> T {
        (self.f)(site, y, z, l)
    }
    fn lipschitz(&self) -> T {
        T::lit(self.k)
    }
    fn dependence(&self) -> Dependence {
        self.dependence
    }
}

/// Driver specification of scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase", deny_unknown_fields)]
pub enum DriverSpec {
    Zero,
    Constant {
        c: f64,
    },
    Linear {
        a: f64,
        b: f64,
        #[serde(default)]
        c: Vec<f64>,
    },
    AmericanDiscount {
        r: f64,
    },
    /// One value per macro step.
    CustomTable {
        values: Vec<f64>,
    },
}

impl DriverSpec {
    /// Instantiates the driver for a model with macro step `dt` and the
    /// given jump intensities.
    pub fn build<T: Real>(&self, dt: T, intensities: &[T]) -> Result<BuiltinDriver<T>> {
        let finite = |x: f64, what: &str| {
            if x.is_finite() {
                Ok(T::lit(x))
            } else {
                Err(LabError::Config(format!("driver parameter {what} is not finite")))
            }
        };
        Ok(match self {
            DriverSpec::Zero => BuiltinDriver::Zero,
            DriverSpec::Constant { c } => BuiltinDriver::Constant(finite(*c, "c")?),
            DriverSpec::Linear { a, b, c } => {
                if c.len() > intensities.len() {
                    return Err(LabError::Config(format!(
                        "linear driver has {} jump coefficients but the model has {} marks",
                        c.len(),
                        intensities.len()
                    )));
                }
                let cs = c
                    .iter()
                    .map(|&v| finite(v, "c_i"))
                    .collect::<Result<Vec<T>>>()?;
                BuiltinDriver::linear(finite(*a, "a")?, finite(*b, "b")?, cs, intensities)
            }
            DriverSpec::AmericanDiscount { r } => BuiltinDriver::Discount(finite(*r, "r")?),
            DriverSpec::CustomTable { values } => BuiltinDriver::Table {
                dt,
                values: values
                    .iter()
                    .map(|&v| finite(v, "table value"))
                    .collect::<Result<Vec<T>>>()?,
            },
        })
    }
}

/// `||l||_mu = sqrt(sum_i mu_i l_i^2)`.
pub fn mu_norm<T: Real>(l: &[T], mu: &[T]) -> T {
    l.iter()
        .zip(mu)
        .map(|(&li, &mi)| mi * li * li)
        .sum::<T>()
        .sqrt()
}

/// Largest difference quotient of `driver` over random probe pairs, checked
/// against the declared constant.
pub fn lipschitz_probe<T: Real, D: Driver<T> + ?Sized>(
    driver: &D,
    intensities: &[T],
    horizon: T,
    probes: usize,
    seed: u64,
) -> Result<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let marks = intensities.len();
    let draw = |rng: &mut ChaCha8Rng| T::lit(rng.random_range(-10.0..10.0));
    let mut worst = T::zero();
    for _ in 0..probes {
        let t = horizon * T::lit(rng.random_range(0.0..1.0));
        let site = Site::new(0, 0, t);
        let (y1, z1) = (draw(&mut rng), draw(&mut rng));
        let (mut y2, mut z2) = (draw(&mut rng), draw(&mut rng));
        let l1: Vec<T> = (0..marks).map(|_| draw(&mut rng)).collect();
        let mut l2: Vec<T> = (0..marks).map(|_| draw(&mut rng)).collect();
        // half of the probes are local, which is where curvature shows
        if rng.random_bool(0.5) {
            let h = T::lit(10f64.powi(-rng.random_range(1..6)));
            y2 = y1 + h * draw(&mut rng);
            z2 = z1 + h * draw(&mut rng);
            for (a, b) in l2.iter_mut().zip(&l1) {
                *a = *b + h * draw(&mut rng);
            }
        }
        let dist = (y1 - y2).abs()
            + (z1 - z2).abs()
            + mu_norm(
                &l1.iter().zip(&l2).map(|(a, b)| *a - *b).collect::<Vec<_>>(),
                intensities,
            );
        if dist <= T::zero() {
            continue;
        }
        let dg = (driver.eval(site, y1, z1, &l1) - driver.eval(site, y2, z2, &l2)).abs();
        worst = worst.max(dg / dist);
    }
    let declared = driver.lipschitz();
    if worst > declared * (T::one() + T::lit(1e-9)) {
        return Err(LabError::LipschitzViolation {
            observed: worst.to_f64_lossy(),
            declared: declared.to_f64_lossy(),
        });
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn site() -> Site<f64> {
        Site::new(0, 0, 0.0)
    }

    #[test]
    fn builtin_values() {
        let g = BuiltinDriver::linear(2.0, 3.0, vec![4.0], &[0.5]);
        assert_eq!(g.eval(site(), 1.0, 1.0, &[1.0]), 9.0);
        assert_eq!(g.affine_in_y(site(), 1.0, &[1.0]), Some((2.0, 7.0)));
        assert_eq!(BuiltinDriver::Discount(0.05).eval(site(), 10.0, 0.0, &[]), -0.5);
        let table = BuiltinDriver::Table {
            dt: 0.5,
            values: vec![1.0, 2.0],
        };
        assert_eq!(table.eval(Site::new(1, 0, 0.5), 0.0, 0.0, &[]), 2.0);
        assert_eq!(table.eval(Site::new(0, 0, 0.0), 0.0, 0.0, &[]), 1.0);
        assert_eq!(table.eval(Site::new(0, 0, 0.49), 0.0, 0.0, &[]), 1.0);
    }

    #[test]
    fn linear_lipschitz_uses_mu_norm() {
        let g = BuiltinDriver::linear(0.1, 0.2, vec![0.3], &[0.25]);
        // sqrt(0.09 / 0.25) = 0.6
        assert!((g.lipschitz() - 0.6f64).abs() < 1e-15);
        let g = BuiltinDriver::<f64>::linear(0.1, 0.0, vec![0.3], &[0.0]);
        assert!(g.lipschitz().is_infinite());
    }

    #[test]
    fn probe_examples() {
        let g = FnDriver::new(2.0, Dependence { y: true, ..Default::default() }, |_s: Site<f64>, y: f64, _z: f64, _l: &[f64]| 2.0 * y);
        let k = lipschitz_probe(&g, &[], 1.0, 500, 1).unwrap();
        assert!(k <= 2.0 * (1.0 + 1e-9));

        let c = BuiltinDriver::Constant(5.0);
        assert_eq!(lipschitz_probe(&c, &[], 1.0, 100, 2).unwrap(), 0.0);

        let s = FnDriver::new(1.0, Dependence { z: true, ..Default::default() }, |_s: Site<f64>, _y: f64, z: f64, _l: &[f64]| z.sin());
        let k = lipschitz_probe(&s, &[], 1.0, 2000, 3).unwrap();
        assert!(k <= 1.0 && k > 0.5);

        let lying = FnDriver::new(1.0, Dependence::default(), |_s: Site<f64>, y: f64, _z: f64, _l: &[f64]| 3.0 * y);
        assert!(matches!(
            lipschitz_probe(&lying, &[], 1.0, 100, 4),
            Err(LabError::LipschitzViolation { .. })
        ));
    }

    #[test]
    fn linear_probe_with_marks() {
        let mu = [0.4, 0.2];
        let g = BuiltinDriver::linear(0.3, -0.2, vec![0.1, -0.05], &mu);
        lipschitz_probe(&g, &mu, 1.0, 3000, 9).unwrap();
    }

    #[test]
    fn spec_parsing() {
        let spec: DriverSpec =
            serde_json::from_str(r#"{"type":"linear","a":0.1,"b":0.2,"c":[0.3]}"#).unwrap();
        let g = spec.build::<f64>(0.5, &[0.2]).unwrap();
        assert_eq!(g.dependence(), Dependence { y: true, z: true, l: true });
        let spec: DriverSpec = serde_json::from_str(r#"{"type":"americanDiscount","r":0.05}"#).unwrap();
        assert_eq!(spec.build::<f64>(0.5, &[]).unwrap(), BuiltinDriver::Discount(0.05));
        assert!(serde_json::from_str::<DriverSpec>(r#"{"type":"code","src":"rm -rf"}"#).is_err());
        let bad: DriverSpec = serde_json::from_str(r#"{"type":"linear","a":0,"b":0,"c":[1,2]}"#).unwrap();
        assert!(bad.build::<f64>(0.5, &[0.1]).is_err());
    }
}
