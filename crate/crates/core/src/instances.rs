//! Concrete problems: the random pseudomonotone SLCP generator, the two-stage
//! orange market and small textbook elicitation examples.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SviError};
use crate::model::{InstanceFile, TwoStageSlcp};

/// Largest accepted `|cos ∠(a, b)|` for the rank-two scenario.
pub const MAX_ABS_COSINE: f64 = 0.99;
const MAX_DRAW_ATTEMPTS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub n1: usize,
    pub n2: usize,
    pub scenarios: usize,
    pub seed: u64,
    /// Draw the first scenario like the others (positive semidefinite) instead
    /// of the indefinite rank-two construction.
    #[serde(default)]
    pub monotone_only: bool,
}

impl GeneratorParams {
    pub fn new(n1: usize, n2: usize, scenarios: usize, seed: u64) -> Self {
        Self {
            n1,
            n2,
            scenarios,
            seed,
            monotone_only: false,
        }
    }
}

/// Draws of the rank-two first scenario `M = abᵀ + baᵀ`,
/// `q = b₀a + a₀b + αa + βb`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankTwoDraw {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub a0: f64,
    pub b0: f64,
    pub alpha: f64,
    pub beta: f64,
    pub attempts: usize,
}

#[derive(Clone, Debug)]
pub struct GeneratedSlcp {
    pub slcp: TwoStageSlcp,
    /// `None` when generated with `monotone_only`.
    pub rank_two: Option<RankTwoDraw>,
}

pub fn gen_pseudo_slcp(params: &GeneratorParams) -> Result<TwoStageSlcp> {
    Ok(gen_pseudo_slcp_detailed(params)?.slcp)
}

/// Random two-stage SLCP. Draw order: the first scenario, scenarios `2..J`,
/// then the probabilities, all from one ChaCha8 stream seeded with `seed`.
pub fn gen_pseudo_slcp_detailed(params: &GeneratorParams) -> Result<GeneratedSlcp> {
    let (n1, n2, j) = (params.n1, params.n2, params.scenarios);
    if n1 == 0 || n2 == 0 || j == 0 {
        return Err(SviError::InvalidParameter(format!(
            "generator needs n1, n2, J ≥ 1, got ({n1}, {n2}, {j})"
        )));
    }
    let n = n1 + n2;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut ms = Vec::with_capacity(j);
    let mut qs = Vec::with_capacity(j);
    let mut rank_two = None;
    for k in 0..j {
        if k == 0 && !params.monotone_only {
            let draw = draw_rank_two(&mut rng, n)?;
            let a = DVector::from_column_slice(&draw.a);
            let b = DVector::from_column_slice(&draw.b);
            ms.push(&a * b.transpose() + &b * a.transpose());
            qs.push(&a * (draw.b0 + draw.alpha) + &b * (draw.a0 + draw.beta));
            rank_two = Some(draw);
        } else {
            let (m, q) = draw_psd(&mut rng, n);
            ms.push(m);
            qs.push(q);
        }
    }
    let raw: Vec<f64> = (0..j).map(|_| 1.0 - rng.random::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    let probs = raw.iter().map(|p| p / total).collect();
    Ok(GeneratedSlcp {
        slcp: TwoStageSlcp::new(n1, n2, probs, ms, qs)?,
        rank_two,
    })
}

fn draw_rank_two(rng: &mut ChaCha8Rng, n: usize) -> Result<RankTwoDraw> {
    for attempt in 1..=MAX_DRAW_ATTEMPTS {
        let a: Vec<f64> = (0..n).map(|_| 1.0 - rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 1.0).collect();
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (dot / (na * nb)).abs() > MAX_ABS_COSINE {
            continue;
        }
        let a0: f64 = rng.random();
        let b0: f64 = rng.random();
        let u = rng.random_range(0.1..1.0);
        let u2 = rng.random_range(0.1..1.0);
        return Ok(RankTwoDraw {
            a,
            b,
            a0,
            b0,
            alpha: -b0 - u,
            beta: -a0 + u2,
            attempts: attempt,
        });
    }
    Err(SviError::Generation(format!(
        "no pair with |cos| ≤ {MAX_ABS_COSINE} in {MAX_DRAW_ATTEMPTS} draws (n = {n})"
    )))
}

/// `M = Σ aᵢvᵢvᵢᵀ` over `⌈3n/4⌉` random unit directions, `q ~ U(−1, 1)ⁿ`.
fn draw_psd(rng: &mut ChaCha8Rng, n: usize) -> (DMatrix<f64>, DVector<f64>) {
    let terms = (3 * n).div_ceil(4);
    let mut m = DMatrix::zeros(n, n);
    for _ in 0..terms {
        let weight = rng.random_range(0.1..1.0);
        let mut v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = v.norm();
        v /= norm;
        m.ger(weight, &v, &v, 1.0);
    }
    let q = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    (m, q)
}

/// Scenario probabilities of the orange market.
pub const ORANGE_PROBABILITIES: [f64; 3] = [0.5, 0.3, 0.2];
/// Inverse-demand slopes `M(ξ)` (rows: juice, fresh).
pub const ORANGE_SLOPES: [[[f64; 2]; 2]; 3] = [
    [[-0.005, -0.0002], [-0.0002, -0.001]],
    [[-0.004, -0.0001], [-0.0001, -0.0005]],
    [[-0.006, -0.0003], [-0.0003, -0.0015]],
];
/// Inverse-demand intercepts `q(ξ)`.
pub const ORANGE_INTERCEPTS: [[f64; 2]; 3] = [[7.5, 4.0], [7.0, 3.5], [8.0, 4.5]];

/// Published rounded solution of the orange market.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OrangeReference {
    pub supply: f64,
    /// `(Q_J, Q_F)` per scenario.
    pub quantities: [[f64; 2]; 3],
    /// `(P_J, P_F)` per scenario.
    pub prices: [[f64; 2]; 3],
    /// Multipliers of the processing constraint at the rounded quantities.
    pub eta: [f64; 3],
}

pub const ORANGE_REFERENCE: OrangeReference = OrangeReference {
    supply: 393.0,
    quantities: [[56.0, 281.0], [64.0, 265.0], [52.0, 288.0]],
    prices: [[7.16, 3.71], [6.72, 3.36], [7.60, 4.05]],
    eta: [3.414, 3.218, 3.602],
};

/// Checked-in JSON form of [`orange_market`].
pub const ORANGE_MARKET_JSON: &str = include_str!("../fixtures/orange_market.json");

/// KKT system of the two-stage orange market as an SLCP in
/// `x = (Q_S, Q_J, Q_F, η)` with `Q_S` shared across scenarios.
pub fn orange_market() -> TwoStageSlcp {
    let mut ms = Vec::new();
    let mut qs = Vec::new();
    for (m, q) in ORANGE_SLOPES.iter().zip(&ORANGE_INTERCEPTS) {
        #[rustfmt::skip]
        let kkt = DMatrix::from_row_slice(4, 4, &[
            0.001, 0.0, 0.0, -1.0,
            0.0, -2.0 * m[0][0], -2.0 * m[0][1], 2.0,
            0.0, -2.0 * m[1][0], -2.0 * m[1][1], 1.0,
            1.0, -2.0, -1.0, 0.0,
        ]);
        ms.push(kkt);
        qs.push(DVector::from_vec(vec![3.0, -q[0], -q[1], 0.0]));
    }
    TwoStageSlcp::new(1, 3, ORANGE_PROBABILITIES.to_vec(), ms, qs).expect("orange market data is consistent")
}

/// Prices `(P_J, P_F) = M(ξ)(Q_J, Q_F) + q(ξ)` in scenario `k`.
pub fn orange_prices(scenario: usize, juice: f64, fresh: f64) -> [f64; 2] {
    let m = ORANGE_SLOPES[scenario];
    let q = ORANGE_INTERCEPTS[scenario];
    [
        m[0][0] * juice + m[0][1] * fresh + q[0],
        m[1][0] * juice + m[1][1] * fresh + q[1],
    ]
}

/// A single-scenario elicitation example given by a constant Jacobian and an
/// explicit multiplier-space projector.
#[derive(Clone, Debug)]
pub struct TextbookExample {
    pub name: &'static str,
    pub jacobian: DMatrix<f64>,
    pub projector: DMatrix<f64>,
    /// Label of the criterion expected to certify the example.
    pub criterion: &'static str,
    pub expected_bound: Option<f64>,
    /// Level passed to criteria that take one.
    pub level: Option<f64>,
}

impl TextbookExample {
    /// As an instance file with `F(x) = DF·x` on the orthant and the custom projector.
    pub fn to_instance(&self) -> InstanceFile {
        let n = self.jacobian.nrows();
        let rows = |m: &DMatrix<f64>| (0..n).map(|r| m.row(r).iter().copied().collect()).collect();
        InstanceFile {
            n1: n,
            n2: 0,
            scenarios: vec![crate::model::ScenarioData {
                p: 1.0,
                m: rows(&self.jacobian),
                q: vec![0.0; n],
            }],
            p_m: Some(rows(&self.projector)),
        }
    }
}

pub fn textbook_examples() -> Vec<TextbookExample> {
    let diag = |v: &[f64]| DMatrix::from_diagonal(&DVector::from_column_slice(v));
    #[rustfmt::skip]
    let commuting = DMatrix::from_row_slice(4, 4, &[
        10.0, 0.0, 0.0, 1.0,
        0.0, 4.0, 1.0, 0.0,
        0.0, 1.0, 4.0, 0.0,
        1.0, 0.0, 0.0, 5.0,
    ]);
    #[rustfmt::skip]
    let commuting_projector = DMatrix::from_row_slice(4, 4, &[
        1.0, 0.0, 0.0, 0.0,
        0.0, 0.5, 0.5, 0.0,
        0.0, 0.5, 0.5, 0.0,
        0.0, 0.0, 0.0, 1.0,
    ]);
    vec![
        TextbookExample {
            name: "saddle_split",
            jacobian: diag(&[1.0, -1.0]),
            projector: diag(&[0.0, 1.0]),
            criterion: "T5",
            expected_bound: Some(1.0),
            level: None,
        },
        TextbookExample {
            name: "negative_curvature",
            jacobian: diag(&[0.0, -1.0]),
            projector: diag(&[0.0, 1.0]),
            criterion: "T6",
            expected_bound: Some(1.0),
            level: None,
        },
        TextbookExample {
            name: "degenerate_min_eigen",
            jacobian: diag(&[-1.0, 0.0, 0.0]),
            projector: diag(&[1.0, 0.0, 0.0]),
            criterion: "T7",
            expected_bound: Some(1.0),
            level: Some(1.0),
        },
        TextbookExample {
            name: "commuting_pair",
            jacobian: commuting,
            projector: commuting_projector,
            criterion: "T6",
            expected_bound: Some(0.0),
            level: None,
        },
    ]
}
