//! Bound formulas in exact rational arithmetic.
//!
//! Every input float is converted to the rational it represents exactly, so the
//! only rounding happens in the final conversion back to `f64` and, for the
//! high-probability gap bound, in a logarithm and square root carried to about
//! forty decimal digits.

use num_bigint::BigInt;
pub use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// Assumption constants as plain floats, mirrored field by field.
#[derive(Debug, Clone, Copy)]
pub struct Inputs {
    pub alpha_sigma: f64,
    pub nu_sigma: f64,
    pub alpha_ell: f64,
    pub nu_ell: f64,
    pub loss_ceiling: f64,
    pub b: f64,
    pub c_g: f64,
    pub c_x: f64,
    pub k: u32,
    pub eta: f64,
    pub t: u32,
    pub m: u64,
}

/// The same constants as exact rationals.
#[derive(Debug, Clone)]
pub struct Exact {
    pub alpha_sigma: BigRational,
    pub nu_sigma: BigRational,
    pub alpha_ell: BigRational,
    pub nu_ell: BigRational,
    pub loss_ceiling: BigRational,
    pub b: BigRational,
    pub c_g: BigRational,
    pub c_x: BigRational,
    pub k: u32,
    pub eta: BigRational,
    pub t: u32,
    pub m: BigRational,
}

pub fn rat(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite input")
}

pub fn to_f64(x: &BigRational) -> f64 {
    x.to_f64().expect("representable")
}

fn int(n: u64) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

fn pow(x: &BigRational, e: u32) -> BigRational {
    let mut acc = BigRational::one();
    for _ in 0..e {
        acc *= x;
    }
    acc
}

impl Exact {
    pub fn new(i: &Inputs) -> Self {
        Exact {
            alpha_sigma: rat(i.alpha_sigma),
            nu_sigma: rat(i.nu_sigma),
            alpha_ell: rat(i.alpha_ell),
            nu_ell: rat(i.nu_ell),
            loss_ceiling: rat(i.loss_ceiling),
            b: rat(i.b),
            c_g: rat(i.c_g),
            c_x: rat(i.c_x),
            k: i.k,
            eta: rat(i.eta),
            t: i.t,
            m: int(i.m),
        }
    }

    fn a(&self) -> BigRational {
        &self.b * &self.alpha_sigma * &self.c_g
    }

    fn cg2cx2(&self) -> BigRational {
        &self.c_g * &self.c_g * &self.c_x * &self.c_x
    }

    /// First term plus the hidden-layer term; requires K >= 1.
    pub fn kappa1(&self) -> BigRational {
        assert!(self.k >= 1);
        let a = self.a();
        let lead = &self.nu_ell * &self.alpha_sigma * &self.alpha_sigma + &self.alpha_ell * &self.nu_sigma;
        lead * pow(&a, 2 * self.k) * self.cg2cx2()
            + &self.alpha_ell
                * pow(&a, self.k - 1)
                * &self.alpha_sigma
                * &self.alpha_sigma
                * &self.c_g
                * &self.c_g
                * &self.c_x
    }

    /// Single-layer value used when K = 0.
    pub fn kappa1_single_layer(&self) -> BigRational {
        let lead = &self.nu_ell * &self.alpha_sigma * &self.alpha_sigma + &self.alpha_ell * &self.nu_sigma;
        lead * self.cg2cx2()
    }

    pub fn kappa1_effective(&self) -> BigRational {
        if self.k == 0 {
            self.kappa1_single_layer()
        } else {
            self.kappa1()
        }
    }

    pub fn kappa2(&self) -> BigRational {
        let a = self.a();
        let mut sum = BigRational::zero();
        for j in 0..self.k {
            sum += int(j as u64 + 1) * pow(&a, j);
        }
        &self.nu_sigma * pow(&a, self.k) * self.cg2cx2() * sum
    }

    pub fn rho(&self, k: u32) -> BigRational {
        assert!(k >= 1 && k <= self.k);
        let a = self.a();
        let mut sum = BigRational::zero();
        for j in 0..=(self.k - k) {
            sum += pow(&a, j);
        }
        &self.nu_sigma * pow(&a, self.k + k - 1) * self.cg2cx2() * sum
    }

    /// Per-step growth ratio minus one.
    pub fn step_excess(&self) -> BigRational {
        int(self.k as u64 + 1) * &self.eta * self.kappa1_effective() + &self.eta * self.kappa2()
    }

    /// Sum over t = 1..T of ratio^(t-1), term by term.
    pub fn geometric(&self) -> BigRational {
        let r = BigRational::one() + self.step_excess();
        let mut term = BigRational::one();
        let mut sum = BigRational::zero();
        // Terms are at least 1, so a 1e-40 absolute grid keeps ~40 significant digits.
        for _ in 0..self.t {
            sum += &term;
            term = trim(&(term * &r));
        }
        sum
    }

    pub fn stability_c(&self) -> BigRational {
        int(self.k as u64 + 1)
            * &self.eta
            * &self.alpha_ell
            * &self.alpha_ell
            * pow(&self.a(), 2 * self.k)
            * &self.alpha_sigma
            * &self.alpha_sigma
            * self.cg2cx2()
    }

    pub fn mu(&self) -> BigRational {
        self.stability_c() / &self.m * self.geometric()
    }

    pub fn lemma3(&self) -> BigRational {
        &self.alpha_ell
            * pow(&self.b, self.k)
            * pow(&self.alpha_sigma, self.k + 1)
            * pow(&self.c_g, self.k + 1)
            * &self.c_x
    }

    pub fn drift(&self) -> BigRational {
        int(2) * int(self.k as u64 + 1) * &self.eta * self.lemma3() / &self.m * self.geometric()
    }

    /// Derandomized drift recursion for a realized hit schedule.
    pub fn drift_recursion(&self, hits: &[bool]) -> Vec<BigRational> {
        let r = BigRational::one() + self.step_excess();
        let jump = int(2) * int(self.k as u64 + 1) * &self.eta * self.lemma3();
        let mut out = vec![BigRational::zero()];
        for &h in hits {
            let prev = out.last().unwrap().clone();
            out.push(if h { prev + &jump } else { prev * &r });
        }
        out
    }
}

const DIGITS: u32 = 40;

fn scale() -> BigInt {
    num_traits::pow(BigInt::from(10), DIGITS as usize)
}

/// Round to a fixed decimal grid to keep numerators from growing.
fn trim(x: &BigRational) -> BigRational {
    let s = scale();
    let n = (x * BigRational::from_integer(s.clone())).round().to_integer();
    BigRational::new(n, s)
}

/// Natural logarithm of a positive rational, accurate to roughly 1e-38.
pub fn ln(x: &BigRational) -> BigRational {
    assert!(x.is_positive());
    let two = int(2);
    // Exponent estimate from bit lengths, then an exact power-of-two shift.
    let mut e: i64 = x.numer().bits() as i64 - x.denom().bits() as i64;
    let shift = |e: i64| {
        let p = BigRational::from_integer(num_traits::pow(BigInt::from(2), e.unsigned_abs() as usize));
        if e >= 0 {
            x / &p
        } else {
            x * &p
        }
    };
    let mut y = shift(e);
    while y >= two {
        e += 1;
        y = shift(e);
    }
    while y < BigRational::one() {
        e -= 1;
        y = shift(e);
    }
    let y = trim(&y);
    let ln2 = atanh_series(&BigRational::new(BigInt::from(1), BigInt::from(3))) * &two;
    let z = (&y - BigRational::one()) / (&y + BigRational::one());
    let lny = atanh_series(&z) * &two;
    trim(&(lny + ln2 * BigRational::from_integer(BigInt::from(e))))
}

fn atanh_series(z: &BigRational) -> BigRational {
    // |z| <= 1/3, so 45 odd terms reach below 1e-42.
    let z2 = trim(&(z * z));
    let mut pw = z.clone();
    let mut sum = BigRational::zero();
    for n in 0..45u64 {
        sum += &pw / int(2 * n + 1);
        pw = trim(&(&pw * &z2));
    }
    trim(&sum)
}

/// Square root of a non-negative rational by Newton iteration.
pub fn sqrt(x: &BigRational) -> BigRational {
    if x.is_zero() {
        return BigRational::zero();
    }
    let mut g = rat(to_f64(x).sqrt());
    for _ in 0..8 {
        g = trim(&((&g + x / &g) / int(2)));
    }
    g
}

/// Stability-to-generalization bound with a natural logarithm.
pub fn gap_bound(mu: &BigRational, loss_ceiling: &BigRational, m: u64, delta: f64) -> BigRational {
    let mr = int(m);
    let d = rat(delta);
    let l = ln(&(BigRational::one() / d));
    let root = sqrt(&(l / (int(2) * &mr)));
    int(2) * mu + (int(4) * &mr * mu + loss_ceiling) * root
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(k: u32) -> Inputs {
        Inputs {
            alpha_sigma: 1.0,
            nu_sigma: 1.0,
            alpha_ell: 1.0,
            nu_ell: 1.0,
            loss_ceiling: 1.0,
            b: 1.0,
            c_g: 1.0,
            c_x: 1.0,
            k,
            eta: 0.1,
            t: 3,
            m: 100,
        }
    }

    #[test]
    fn hand_values() {
        let e = Exact::new(&unit(1));
        assert_eq!(e.kappa1(), int(3));
        assert_eq!(e.kappa2(), int(1));
        let mut i = unit(1);
        i.c_g = 2.0;
        assert_eq!(Exact::new(&i).kappa1(), int(36));
        let mut i = unit(2);
        i.b = 2.0;
        let e = Exact::new(&i);
        assert_eq!(e.kappa2(), int(20));
        assert_eq!(e.rho(1), int(12));
    }

    #[test]
    fn ln_and_sqrt() {
        let l = to_f64(&ln(&int(10)));
        assert!((l - std::f64::consts::LN_10).abs() < 1e-15);
        let s = to_f64(&sqrt(&int(2)));
        assert!((s - std::f64::consts::SQRT_2).abs() < 1e-15);
        let x = 1.0 + 1e-12;
        let small = to_f64(&ln(&rat(x)));
        assert!((small - (x - 1.0f64).ln_1p()).abs() < 1e-26);
    }
}
