//! Scalar nonlinearity `g(s)` with `s = |u|^2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NonlinearityKind {
    Polynomial,
    Rational,
}

/// `g(s) = (c_1 s + c_2 s^2 + ...) / (1 + d_1 s + d_2 s^2 + ...)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearitySpec {
    pub kind: NonlinearityKind,
    /// `numerator[p-1]` multiplies `s^p`.
    pub numerator: Vec<f64>,
    /// Starts with `d_0 = 1`; empty for polynomials.
    #[serde(default)]
    pub denominator: Vec<f64>,
}

// 8-point Gauss-Legendre on [0, 1].
const GL_NODES: [f64; 8] = [
    0.019_855_071_751_231_856,
    0.101_666_761_293_186_63,
    0.237_233_795_041_835_5,
    0.408_282_678_752_175_1,
    0.591_717_321_247_825,
    0.762_766_204_958_164_5,
    0.898_333_238_706_813_4,
    0.980_144_928_248_768_1,
];
const GL_WEIGHTS: [f64; 8] = [
    0.050_614_268_145_188_13,
    0.111_190_517_226_687_24,
    0.156_853_322_938_943_64,
    0.181_341_891_689_181,
    0.181_341_891_689_181,
    0.156_853_322_938_943_64,
    0.111_190_517_226_687_24,
    0.050_614_268_145_188_13,
];

// 3-point Gauss-Legendre on [0, 1], used on short segments.
const GL3_NODES: [f64; 3] = [0.112_701_665_379_258_3, 0.5, 0.887_298_334_620_741_7];
const GL3_WEIGHTS: [f64; 3] = [5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0];

impl NonlinearitySpec {
    pub fn polynomial(numerator: Vec<f64>) -> Self {
        Self {
            kind: NonlinearityKind::Polynomial,
            numerator,
            denominator: Vec::new(),
        }
    }

    pub fn rational(numerator: Vec<f64>, denominator: Vec<f64>) -> Self {
        Self {
            kind: NonlinearityKind::Rational,
            numerator,
            denominator,
        }
    }

    /// Saturated quintic `-s^2 / (1 + sigma s)`.
    pub fn saturated_quintic(sigma: f64) -> Self {
        Self::rational(vec![0.0, -1.0], vec![1.0, sigma])
    }

    /// Focusing cubic `g(s) = -s`.
    pub fn cubic() -> Self {
        Self::polynomial(vec![-1.0])
    }

    pub fn zero() -> Self {
        Self::polynomial(Vec::new())
    }

    pub fn validate(&self) -> Result<()> {
        if self.numerator.iter().chain(&self.denominator).any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("non-finite coefficient in g".into()));
        }
        match self.kind {
            NonlinearityKind::Polynomial if self.denominator.len() > 1 => Err(
                Error::InvalidInput("polynomial nonlinearity with a denominator".into()),
            ),
            NonlinearityKind::Rational if self.denominator.first() != Some(&1.0) => Err(
                Error::InvalidInput("denominator must start with d_0 = 1".into()),
            ),
            _ => Ok(()),
        }
    }

    /// Checks `D > 0` on `[0, s_max]` by dense sampling.
    pub fn check_denominator(&self, s_max: f64) -> Result<()> {
        if self.denominator.len() <= 1 {
            return Ok(());
        }
        for k in 0..=4096 {
            let s = s_max * k as f64 / 4096.0;
            if horner(&self.denominator, s) <= 0.0 {
                return Err(Error::Pole(s));
            }
        }
        Ok(())
    }

    fn numerator_full(&self) -> Vec<f64> {
        let mut c = Vec::with_capacity(self.numerator.len() + 1);
        c.push(0.0);
        c.extend_from_slice(&self.numerator);
        c
    }

    /// `[g(s), g'(s), ..., g^(max_order)(s)]`.
    pub fn evaluate(&self, s: f64, max_order: usize) -> Result<Vec<f64>> {
        if max_order > MAX_ORDER {
            return Err(Error::UnsupportedOrder(max_order));
        }
        if !(s >= 0.0) {
            return Err(Error::InvalidInput(format!("s = {s} must be nonnegative")));
        }
        let taylor = self.taylor(s, max_order)?;
        let mut fact = 1.0;
        Ok(taylor
            .iter()
            .enumerate()
            .map(|(k, c)| {
                if k > 0 {
                    fact *= k as f64;
                }
                c * fact
            })
            .collect())
    }

    /// Taylor coefficients of `t -> g(s + t)` up to `t^order`.
    fn taylor(&self, s: f64, order: usize) -> Result<Vec<f64>> {
        let num = shifted_taylor(&self.numerator_full(), s, order);
        if self.denominator.len() <= 1 {
            return Ok(num);
        }
        let den = shifted_taylor(&self.denominator, s, order);
        if den[0] == 0.0 {
            return Err(Error::Pole(s));
        }
        let mut q = vec![0.0; order + 1];
        for k in 0..=order {
            let mut acc = num[k];
            for j in 0..k {
                acc -= q[j] * den[k - j];
            }
            q[k] = acc / den[0];
        }
        Ok(q)
    }

    /// Infallible fast path for `g(s)` on already validated inputs.
    pub fn value(&self, s: f64) -> f64 {
        let n = s * horner(&self.numerator, s);
        if self.denominator.len() <= 1 {
            n
        } else {
            n / horner(&self.denominator, s)
        }
    }

    /// `g(s)` and `g'(s)`.
    pub fn value_and_slope(&self, s: f64) -> (f64, f64) {
        let (p, dp) = horner_slope(&self.numerator, s);
        let (n, dn) = (s * p, p + s * dp);
        if self.denominator.len() <= 1 {
            return (n, dn);
        }
        let (d, dd) = horner_slope(&self.denominator, s);
        (n / d, (dn * d - n * dd) / (d * d))
    }

    /// `[g, g', g'', g''', g'''']/k!` at `s`, i.e. Taylor coefficients.
    pub fn taylor4(&self, s: f64) -> [f64; 5] {
        let t = self.taylor(s, 4).expect("validated nonlinearity");
        [t[0], t[1], t[2], t[3], t[4]]
    }

    /// Mean of `g` over the segment `[a, b]` (exact for polynomials up to degree 15).
    pub fn mean_between(&self, a: f64, b: f64) -> f64 {
        if (b - a).abs() <= 1e-3 * (1.0 + a.abs()) {
            // error ~ |b - a|^6 g^(6) / 2e6, below rounding here
            return GL3_NODES
                .iter()
                .zip(GL3_WEIGHTS)
                .map(|(&x, w)| w * self.value(a + x * (b - a)))
                .sum();
        }
        GL_NODES
            .iter()
            .zip(GL_WEIGHTS)
            .map(|(&x, w)| w * self.value(a + x * (b - a)))
            .sum()
    }

    /// Antiderivative `G(s) = int_0^s g`.
    pub fn antiderivative(&self, s: f64) -> f64 {
        s * self.mean_between(0.0, s)
    }

    /// Sampled check of `|g^(n)(s)| <~ s^(2-n)` for `n = 0..=4`.
    pub fn growth_report(&self, samples: &[f64]) -> Result<GrowthReport> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("empty sample set".into()));
        }
        let mut s: Vec<f64> = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let mut orders = Vec::new();
        for n in 0..=MAX_ORDER {
            let ratios = s
                .iter()
                .map(|&x| Ok(self.evaluate(x, n)?[n].abs() / x.powi(2 - n as i32)))
                .collect::<Result<Vec<f64>>>()?;
            let sup = ratios.iter().cloned().fold(0.0, f64::max);
            let flagged = diverges_at_end(&ratios) || diverges_at_end(&rev(&ratios));
            orders.push(GrowthOrder {
                order: n,
                supremum: sup,
                flagged,
            });
        }
        let pass = orders.iter().all(|o| !o.flagged);
        Ok(GrowthReport { orders, pass })
    }
}

fn rev(v: &[f64]) -> Vec<f64> {
    v.iter().rev().cloned().collect()
}

/// Ratio keeps growing toward the last samples and dwarfs the median.
fn diverges_at_end(r: &[f64]) -> bool {
    let n = r.len();
    if n < 4 {
        return false;
    }
    let mut sorted = r.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[n / 2];
    let tail_up = r[n - 3] < r[n - 2] && r[n - 2] < r[n - 1];
    tail_up && r[n - 1] > 100.0 * median.max(f64::MIN_POSITIVE)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrowthOrder {
    pub order: usize,
    pub supremum: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrowthReport {
    pub orders: Vec<GrowthOrder>,
    pub pass: bool,
}

fn horner(c: &[f64], s: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &a| acc * s + a)
}

/// `(p(s), p'(s))` for `p = sum c_k s^k`.
fn horner_slope(c: &[f64], s: f64) -> (f64, f64) {
    c.iter()
        .rev()
        .fold((0.0, 0.0), |(v, d), &a| (v * s + a, d * s + v))
}

/// Coefficients of `t -> p(s + t)` truncated at `t^order`.
fn shifted_taylor(c: &[f64], s: f64, order: usize) -> Vec<f64> {
    let mut out = vec![0.0; order + 1];
    // repeated synthetic division gives successive derivatives / k!
    let mut work = c.to_vec();
    for slot in out.iter_mut() {
        if work.is_empty() {
            break;
        }
        let mut acc = 0.0;
        let mut quotient = vec![0.0; work.len().saturating_sub(1)];
        for i in (0..work.len()).rev() {
            acc = acc * s + work[i];
            if i > 0 {
                quotient[i - 1] = acc;
            }
        }
        *slot = acc;
        work = quotient;
    }
    out
}
