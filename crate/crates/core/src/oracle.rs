//! Exact enumeration oracle for the cost of pointwise decoding.
//!
//! Works over finite joint distributions p(x, y) where x is a per-position
//! discretized evidence sequence and y a token sequence. Every headline
//! quantity is computed along two independent routes that must agree:
//! risks via explicitly constructed Bayes decoders vs. closed-form
//! entropies, and total correlation via its expected-KL and
//! entropy-difference forms.

use thiserror::Error;

use crate::rng::rng_from_seed;
use rand::Rng;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("joint table: {reason}")]
    BadTable { reason: String },
    #[error("position {i} out of range for {l} positions")]
    IndexOutOfRange { i: usize, l: usize },
    #[error("decoder table: {reason}")]
    BadDecoder { reason: String },
    #[error("{what}: routes disagree, {route_a} vs {route_b}")]
    RouteDisagreement {
        what: String,
        route_a: f64,
        route_b: f64,
    },
    #[error(
        "identity check failed (residual {max_residual:.3e}): gap {gap}, tc {tc}, \
         locality {locality_gap}, sum local H {sum_h_local}, joint H {h_joint}"
    )]
    VerificationFailed {
        gap: f64,
        tc: f64,
        locality_gap: f64,
        sum_h_local: f64,
        h_joint: f64,
        max_residual: f64,
    },
}

pub type Result<T> = std::result::Result<T, OracleError>;

const MASS_TOL: f64 = 1e-12;
const ROUTE_TOL: f64 = 1e-10;
const MAX_TABLE: u64 = 10_000_000;

fn xlogx(p: f64) -> f64 {
    if p <= 0.0 {
        0.0
    } else {
        p * p.ln()
    }
}

/// Joint distribution over (X, Y) with X in {0..A}^L and Y in {0..K}^L,
/// stored densely with x-major indexing.
#[derive(Debug, Clone)]
pub struct JointDistribution {
    l: usize,
    a: usize,
    k: usize,
    p: Vec<f64>,
    n_x: usize,
    n_y: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvidenceScope {
    /// Condition on the single coordinate X_i.
    Local,
    /// Condition on the whole evidence sequence X.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoderClass {
    Pointwise,
    Sequence,
}

impl JointDistribution {
    pub fn new(l: usize, a: usize, k: usize, p: Vec<f64>) -> Result<JointDistribution> {
        if l == 0 || a == 0 || k == 0 {
            return Err(OracleError::BadTable {
                reason: format!("degenerate dimensions L={l}, A={a}, K={k}"),
            });
        }
        let n_x = (a as u64).checked_pow(l as u32);
        let n_y = (k as u64).checked_pow(l as u32);
        let size = n_x.and_then(|x| n_y.and_then(|y| x.checked_mul(y)));
        let size = match size {
            Some(s) if s <= MAX_TABLE => s as usize,
            _ => {
                return Err(OracleError::BadTable {
                    reason: format!("table {a}^{l} x {k}^{l} exceeds {MAX_TABLE} entries"),
                })
            }
        };
        if p.len() != size {
            return Err(OracleError::BadTable {
                reason: format!("expected {size} entries, got {}", p.len()),
            });
        }
        if let Some(bad) = p.iter().find(|&&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(OracleError::BadTable {
                reason: format!("entry {bad} is negative or non-finite"),
            });
        }
        let mass: f64 = p.iter().sum();
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(OracleError::BadTable {
                reason: format!("total mass {mass} is not 1"),
            });
        }
        let n_x = a.pow(l as u32);
        let n_y = k.pow(l as u32);
        Ok(JointDistribution { l, a, k, p, n_x, n_y })
    }

    /// Full-support random joint: iid Exp(1) weights normalized, which
    /// is a flat Dirichlet over the table.
    pub fn random(l: usize, a: usize, k: usize, seed: u64) -> Result<JointDistribution> {
        let n = (a as u64).pow(l as u32) * (k as u64).pow(l as u32);
        if n > MAX_TABLE {
            return Err(OracleError::BadTable {
                reason: format!("table {a}^{l} x {k}^{l} exceeds {MAX_TABLE} entries"),
            });
        }
        let mut rng = rng_from_seed(seed);
        let mut p: Vec<f64> = (0..n)
            .map(|_| -(1.0 - rng.random::<f64>()).ln())
            .collect();
        let total: f64 = p.iter().sum();
        for v in &mut p {
            *v /= total;
        }
        JointDistribution::new(l, a, k, p)
    }

    pub fn positions(&self) -> usize {
        self.l
    }

    pub fn evidence_alphabet(&self) -> usize {
        self.a
    }

    pub fn token_alphabet(&self) -> usize {
        self.k
    }

    fn prob(&self, ix: usize, iy: usize) -> f64 {
        self.p[ix * self.n_y + iy]
    }

    /// i-th base-K digit of a y index, position-major.
    fn y_digit(&self, iy: usize, i: usize) -> usize {
        let stride = self.k.pow((self.l - 1 - i) as u32);
        (iy / stride) % self.k
    }

    fn x_digit(&self, ix: usize, i: usize) -> usize {
        let stride = self.a.pow((self.l - 1 - i) as u32);
        (ix / stride) % self.a
    }

    fn x_marginal(&self) -> Vec<f64> {
        (0..self.n_x)
            .map(|ix| (0..self.n_y).map(|iy| self.prob(ix, iy)).sum())
            .collect()
    }

    /// r[ix][k] = p(x, Y_i = k), marginalized over the other positions.
    fn position_given_x(&self, i: usize) -> Vec<f64> {
        let mut r = vec![0.0f64; self.n_x * self.k];
        for ix in 0..self.n_x {
            for iy in 0..self.n_y {
                r[ix * self.k + self.y_digit(iy, i)] += self.prob(ix, iy);
            }
        }
        r
    }

    /// m[a][k] = p(X_i = a, Y_i = k).
    fn local_pair(&self, i: usize) -> Vec<f64> {
        let r = self.position_given_x(i);
        let mut m = vec![0.0f64; self.a * self.k];
        for ix in 0..self.n_x {
            let xa = self.x_digit(ix, i);
            for yk in 0..self.k {
                m[xa * self.k + yk] += r[ix * self.k + yk];
            }
        }
        m
    }

    /// H(Y|X) in nats, with 0 log 0 taken as 0.
    pub fn cond_entropy_joint(&self) -> f64 {
        let px = self.x_marginal();
        let mut h = 0.0;
        for ix in 0..self.n_x {
            h += xlogx(px[ix]);
            for iy in 0..self.n_y {
                h -= xlogx(self.prob(ix, iy));
            }
        }
        h
    }

    /// H(Y_i|X_i) for Local scope, H(Y_i|X) for Full scope.
    pub fn cond_entropy_marginal(&self, i: usize, scope: EvidenceScope) -> Result<f64> {
        if i >= self.l {
            return Err(OracleError::IndexOutOfRange { i, l: self.l });
        }
        Ok(match scope {
            EvidenceScope::Full => {
                let px = self.x_marginal();
                let r = self.position_given_x(i);
                let mut h = 0.0;
                for ix in 0..self.n_x {
                    h += xlogx(px[ix]);
                    for yk in 0..self.k {
                        h -= xlogx(r[ix * self.k + yk]);
                    }
                }
                h
            }
            EvidenceScope::Local => {
                let m = self.local_pair(i);
                let mut h = 0.0;
                for xa in 0..self.a {
                    let row = &m[xa * self.k..(xa + 1) * self.k];
                    h += xlogx(row.iter().sum());
                    for &v in row {
                        h -= xlogx(v);
                    }
                }
                h
            }
        })
    }

    /// TC(Y|X): residual dependence among the Y_i once X is known.
    /// Computed both as E_x KL(p(y|x) || prod_i p(y_i|x)) and as
    /// sum_i H(Y_i|X) - H(Y|X); the routes must agree.
    pub fn conditional_total_correlation(&self) -> Result<f64> {
        let px = self.x_marginal();
        let per_pos: Vec<Vec<f64>> = (0..self.l).map(|i| self.position_given_x(i)).collect();

        let mut kl_form = 0.0;
        for ix in 0..self.n_x {
            if px[ix] <= 0.0 {
                continue;
            }
            for iy in 0..self.n_y {
                let pxy = self.prob(ix, iy);
                if pxy <= 0.0 {
                    continue;
                }
                // log[ p(y|x) / prod_i p(y_i|x) ], all conditionals on x
                let mut log_ratio = (pxy / px[ix]).ln();
                for i in 0..self.l {
                    let r = per_pos[i][ix * self.k + self.y_digit(iy, i)];
                    log_ratio -= (r / px[ix]).ln();
                }
                kl_form += pxy * log_ratio;
            }
        }

        let mut entropy_form = -self.cond_entropy_joint();
        for i in 0..self.l {
            entropy_form += self.cond_entropy_marginal(i, EvidenceScope::Full)?;
        }

        if (kl_form - entropy_form).abs() > ROUTE_TOL {
            return Err(OracleError::RouteDisagreement {
                what: "conditional total correlation".into(),
                route_a: kl_form,
                route_b: entropy_form,
            });
        }
        Ok(kl_form)
    }

    /// The Bayes decoder of a class: the true conditional p(y|x) for the
    /// sequence class, the per-position p(y_i|x_i) for the pointwise one.
    pub fn bayes_decoder(&self, class: DecoderClass) -> DecoderSpec {
        match class {
            DecoderClass::Sequence => {
                let px = self.x_marginal();
                let mut table = vec![0.0f64; self.n_x * self.n_y];
                for ix in 0..self.n_x {
                    for iy in 0..self.n_y {
                        table[ix * self.n_y + iy] = if px[ix] > 0.0 {
                            self.prob(ix, iy) / px[ix]
                        } else {
                            1.0 / self.n_y as f64
                        };
                    }
                }
                DecoderSpec::Sequence { table }
            }
            DecoderClass::Pointwise => {
                let tables = (0..self.l)
                    .map(|i| {
                        let m = self.local_pair(i);
                        let mut q = vec![0.0f64; self.a * self.k];
                        for xa in 0..self.a {
                            let row = &m[xa * self.k..(xa + 1) * self.k];
                            let mass: f64 = row.iter().sum();
                            for yk in 0..self.k {
                                q[xa * self.k + yk] = if mass > 0.0 {
                                    row[yk] / mass
                                } else {
                                    1.0 / self.k as f64
                                };
                            }
                        }
                        q
                    })
                    .collect();
                DecoderSpec::Pointwise { tables }
            }
        }
    }

    /// Expected negative log-likelihood of a decoder, by direct
    /// expectation over the joint. Infinite when the decoder puts zero
    /// mass where the joint does not.
    pub fn decoder_risk(&self, decoder: &DecoderSpec) -> Result<f64> {
        decoder.validate(self.l, self.a, self.k, self.n_x, self.n_y)?;
        let mut risk = 0.0f64;
        for ix in 0..self.n_x {
            for iy in 0..self.n_y {
                let pxy = self.prob(ix, iy);
                if pxy <= 0.0 {
                    continue;
                }
                let q = match decoder {
                    DecoderSpec::Sequence { table } => table[ix * self.n_y + iy],
                    DecoderSpec::Pointwise { tables } => (0..self.l)
                        .map(|i| tables[i][self.x_digit(ix, i) * self.k + self.y_digit(iy, i)])
                        .product(),
                };
                if q <= 0.0 {
                    return Ok(f64::INFINITY);
                }
                risk -= pxy * q.ln();
            }
        }
        Ok(risk)
    }

    /// Minimal expected NLL over a decoder class. Evaluates the explicit
    /// Bayes decoder and crosschecks against the closed-form entropy
    /// (H(Y|X) for sequence, sum_i H(Y_i|X_i) for pointwise).
    pub fn bayes_risk(&self, class: DecoderClass) -> Result<f64> {
        let direct = self.decoder_risk(&self.bayes_decoder(class))?;
        let closed_form = match class {
            DecoderClass::Sequence => self.cond_entropy_joint(),
            DecoderClass::Pointwise => (0..self.l)
                .map(|i| self.cond_entropy_marginal(i, EvidenceScope::Local))
                .sum::<Result<f64>>()?,
        };
        if (direct - closed_form).abs() > ROUTE_TOL {
            return Err(OracleError::RouteDisagreement {
                what: format!("{class:?} bayes risk"),
                route_a: direct,
                route_b: closed_form,
            });
        }
        Ok(direct)
    }

    /// The full report: pointwise-minus-sequence risk gap, its exact
    /// decomposition into total correlation plus locality gap, and the
    /// largest identity residual observed while checking them.
    pub fn optimality_gap(&self) -> Result<GapReport> {
        let risk_pw = self.bayes_risk(DecoderClass::Pointwise)?;
        let risk_seq = self.bayes_risk(DecoderClass::Sequence)?;
        let gap = risk_pw - risk_seq;

        let h_joint = self.cond_entropy_joint();
        let mut sum_h_local = 0.0;
        let mut locality_gap = 0.0;
        for i in 0..self.l {
            let local = self.cond_entropy_marginal(i, EvidenceScope::Local)?;
            let full = self.cond_entropy_marginal(i, EvidenceScope::Full)?;
            sum_h_local += local;
            locality_gap += local - full;
        }
        let tc = self.conditional_total_correlation()?;

        let residual_entropy_form = (gap - (sum_h_local - h_joint)).abs();
        let residual_decomposition = (gap - (tc + locality_gap)).abs();
        let max_residual = residual_entropy_form.max(residual_decomposition);

        let ordered = gap >= tc - ROUTE_TOL && tc >= -ROUTE_TOL && locality_gap >= -ROUTE_TOL;
        if max_residual > ROUTE_TOL || !ordered {
            return Err(OracleError::VerificationFailed {
                gap,
                tc,
                locality_gap,
                sum_h_local,
                h_joint,
                max_residual,
            });
        }
        Ok(GapReport {
            h_joint,
            sum_h_local,
            tc,
            locality_gap,
            gap,
            max_residual,
        })
    }
}

/// Everything the decomposition certifies, in nats.
#[derive(Debug, Clone, Copy)]
pub struct GapReport {
    /// H(Y|X).
    pub h_joint: f64,
    /// sum_i H(Y_i|X_i).
    pub sum_h_local: f64,
    pub tc: f64,
    pub locality_gap: f64,
    /// Pointwise-minus-sequence Bayes risk.
    pub gap: f64,
    pub max_residual: f64,
}

/// An explicit decoder: per-position conditionals q_i(y_i|x_i) for the
/// pointwise class, a full conditional q(y|x) for the sequence class.
#[derive(Debug, Clone)]
pub enum DecoderSpec {
    Pointwise { tables: Vec<Vec<f64>> },
    Sequence { table: Vec<f64> },
}

impl DecoderSpec {
    /// Random full-support decoder of a class (Dirichlet rows).
    pub fn random(class: DecoderClass, l: usize, a: usize, k: usize, seed: u64) -> DecoderSpec {
        let mut rng = rng_from_seed(seed);
        let mut dirichlet_row = |n: usize| -> Vec<f64> {
            let mut row: Vec<f64> = (0..n)
                .map(|_| -(1.0 - rng.random::<f64>()).ln())
                .collect();
            let total: f64 = row.iter().sum();
            for v in &mut row {
                *v /= total;
            }
            row
        };
        match class {
            DecoderClass::Pointwise => DecoderSpec::Pointwise {
                tables: (0..l)
                    .map(|_| (0..a).flat_map(|_| dirichlet_row(k)).collect())
                    .collect(),
            },
            DecoderClass::Sequence => {
                let n_x = a.pow(l as u32);
                let n_y = k.pow(l as u32);
                DecoderSpec::Sequence {
                    table: (0..n_x).flat_map(|_| dirichlet_row(n_y)).collect(),
                }
            }
        }
    }

    fn validate(&self, l: usize, a: usize, k: usize, n_x: usize, n_y: usize) -> Result<()> {
        let check_rows = |flat: &[f64], rows: usize, cols: usize, what: &str| -> Result<()> {
            if flat.len() != rows * cols {
                return Err(OracleError::BadDecoder {
                    reason: format!("{what}: expected {}x{} entries", rows, cols),
                });
            }
            for (r, row) in flat.chunks(cols).enumerate() {
                let mass: f64 = row.iter().sum();
                if (mass - 1.0).abs() > MASS_TOL || row.iter().any(|&v| v < 0.0) {
                    return Err(OracleError::BadDecoder {
                        reason: format!("{what}: row {r} sums to {mass}"),
                    });
                }
            }
            Ok(())
        };
        match self {
            DecoderSpec::Pointwise { tables } => {
                if tables.len() != l {
                    return Err(OracleError::BadDecoder {
                        reason: format!("expected {l} per-position tables, got {}", tables.len()),
                    });
                }
                for (i, t) in tables.iter().enumerate() {
                    check_rows(t, a, k, &format!("position {i}"))?;
                }
                Ok(())
            }
            DecoderSpec::Sequence { table } => check_rows(table, n_x, n_y, "sequence table"),
        }
    }
}
