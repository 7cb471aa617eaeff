//! Synthetic verification lab for the front-door estimator.
//!
//! Models a four-variable discrete structural causal model
//!
//! ```text
//! U -> X -> M -> Y      (U also -> Y; U is latent in samples)
//! ```
//!
//! exactly matching the assumptions the pipeline's decision stage leans
//! on: the mediator M is shielded from the confounder U, and Y depends on
//! M and U only. Ground-truth interventional distributions come from
//! exact enumeration; estimators run on finite observational samples in
//! which U is hidden, so the naive conditional estimate is confounded
//! while the front-door formula
//!
//! ```text
//! P(y | do(X=x)) = Σ_m P̂(m|x) Σ_x' P̂(x') P̂(y|m,x')
//! ```
//!
//! is not.
//!
//! SCM files are plain text: one distribution row per line, e.g.
//!
//! ```text
//! u: 0.5 0.5
//! x|u: u=0: 0.8 0.2
//! m|x: x=0: 0.9 0.1
//! y|m,u: m=0 u=0: 0.9 0.1
//! ```
//!
//! Every conditioning combination must appear exactly once; `#` starts a
//! comment.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScmError {
    #[error("io error reading {path}: {detail}")]
    Io { path: String, detail: String },
    #[error("scm file line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("scm file: missing row for {0}")]
    MissingRow(String),
    #[error("scm file line {line}: duplicate row for {key}")]
    DuplicateRow { line: usize, key: String },
    #[error("distribution {which} sums to {sum}, expected 1")]
    BadSum { which: String, sum: f64 },
    #[error("distribution {which} has a negative or non-finite entry")]
    BadEntry { which: String },
    #[error("distribution {which} has {got} entries, expected {expected}")]
    BadCardinality {
        which: String,
        expected: usize,
        got: usize,
    },
    #[error("sample set is empty")]
    NoSamples,
    #[error("no observed samples with X={0}; cannot estimate P(m|X={0})")]
    EmptyExposureStratum(usize),
    #[error("no observed samples with M={m}, X={x}; cannot estimate P(y|m,x)")]
    EmptyMediatorStratum { m: usize, x: usize },
    #[error("intervention value {value} out of range for X (cardinality {card})")]
    BadIntervention { value: usize, card: usize },
}

const SUM_TOL: f64 = 1e-9;

fn check_dist(which: &str, dist: &[f64]) -> Result<(), ScmError> {
    if dist.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(ScmError::BadEntry {
            which: which.to_string(),
        });
    }
    let sum: f64 = dist.iter().sum();
    if (sum - 1.0).abs() > SUM_TOL {
        return Err(ScmError::BadSum {
            which: which.to_string(),
            sum,
        });
    }
    Ok(())
}

/// Discrete SCM over latent confounder U, exposure X, mediator M, and
/// outcome Y. Tables are row-stochastic conditional distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteScm {
    /// P(U = u).
    pub p_u: Vec<f64>,
    /// `p_x_given_u[u][x]` = P(X = x | U = u).
    pub p_x_given_u: Vec<Vec<f64>>,
    /// `p_m_given_x[x][m]` = P(M = m | X = x). M sees only X.
    pub p_m_given_x: Vec<Vec<f64>>,
    /// `p_y_given_m_u[m][u][y]` = P(Y = y | M = m, U = u).
    pub p_y_given_m_u: Vec<Vec<Vec<f64>>>,
}

impl DiscreteScm {
    pub fn new(
        p_u: Vec<f64>,
        p_x_given_u: Vec<Vec<f64>>,
        p_m_given_x: Vec<Vec<f64>>,
        p_y_given_m_u: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self, ScmError> {
        let scm = Self {
            p_u,
            p_x_given_u,
            p_m_given_x,
            p_y_given_m_u,
        };
        scm.validate()?;
        Ok(scm)
    }

    fn validate(&self) -> Result<(), ScmError> {
        let (cu, cx, cm, cy) = (self.card_u(), self.card_x(), self.card_m(), self.card_y());
        if cu == 0 || cx == 0 || cm == 0 || cy == 0 {
            return Err(ScmError::BadCardinality {
                which: "u/x/m/y".into(),
                expected: 1,
                got: 0,
            });
        }
        check_dist("u", &self.p_u)?;
        if self.p_x_given_u.len() != cu {
            return Err(ScmError::BadCardinality {
                which: "x|u".into(),
                expected: cu,
                got: self.p_x_given_u.len(),
            });
        }
        for (u, row) in self.p_x_given_u.iter().enumerate() {
            if row.len() != cx {
                return Err(ScmError::BadCardinality {
                    which: format!("x|u u={u}"),
                    expected: cx,
                    got: row.len(),
                });
            }
            check_dist(&format!("x|u u={u}"), row)?;
        }
        if self.p_m_given_x.len() != cx {
            return Err(ScmError::BadCardinality {
                which: "m|x".into(),
                expected: cx,
                got: self.p_m_given_x.len(),
            });
        }
        for (x, row) in self.p_m_given_x.iter().enumerate() {
            if row.len() != cm {
                return Err(ScmError::BadCardinality {
                    which: format!("m|x x={x}"),
                    expected: cm,
                    got: row.len(),
                });
            }
            check_dist(&format!("m|x x={x}"), row)?;
        }
        if self.p_y_given_m_u.len() != cm {
            return Err(ScmError::BadCardinality {
                which: "y|m,u".into(),
                expected: cm,
                got: self.p_y_given_m_u.len(),
            });
        }
        for (m, per_u) in self.p_y_given_m_u.iter().enumerate() {
            if per_u.len() != cu {
                return Err(ScmError::BadCardinality {
                    which: format!("y|m,u m={m}"),
                    expected: cu,
                    got: per_u.len(),
                });
            }
            for (u, row) in per_u.iter().enumerate() {
                if row.len() != cy {
                    return Err(ScmError::BadCardinality {
                        which: format!("y|m,u m={m} u={u}"),
                        expected: cy,
                        got: row.len(),
                    });
                }
                check_dist(&format!("y|m,u m={m} u={u}"), row)?;
            }
        }
        Ok(())
    }

    pub fn card_u(&self) -> usize {
        self.p_u.len()
    }
    pub fn card_x(&self) -> usize {
        self.p_x_given_u.first().map_or(0, |r| r.len())
    }
    pub fn card_m(&self) -> usize {
        self.p_m_given_x.first().map_or(0, |r| r.len())
    }
    pub fn card_y(&self) -> usize {
        self.p_y_given_m_u
            .first()
            .and_then(|m| m.first())
            .map_or(0, |r| r.len())
    }

    /// Binary benchmark model with a strong latent confounder:
    /// P(X=1|u) = 0.2 + 0.6u, P(M=1|x) = 0.1 + 0.8x,
    /// P(Y=1|m,u) = 0.1 + 0.3m + 0.5u - 0.2mu.
    pub fn confounded_binary() -> Self {
        Self::new(
            vec![0.5, 0.5],
            vec![vec![0.8, 0.2], vec![0.2, 0.8]],
            vec![vec![0.9, 0.1], vec![0.1, 0.9]],
            vec![
                // m = 0: u = 0 then u = 1
                vec![vec![0.9, 0.1], vec![0.4, 0.6]],
                // m = 1
                vec![vec![0.6, 0.4], vec![0.3, 0.7]],
            ],
        )
        .expect("benchmark tables are valid")
    }

    /// The benchmark model with the U -> X edge severed
    /// (P(X=1|u) = 0.5): observational and interventional distributions
    /// coincide, so the naive estimator becomes unbiased.
    pub fn unconfounded_binary() -> Self {
        let mut scm = Self::confounded_binary();
        scm.p_x_given_u = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        scm.validate().expect("still valid");
        scm
    }

    /// The benchmark model with the U -> Y edge severed instead: the
    /// outcome tables are identical across u (P(Y=1|m) = 0.2 + 0.4m), so
    /// even though U still drives X, no backdoor path reaches Y and the
    /// naive conditional matches the interventional distribution.
    pub fn outcome_unconfounded_binary() -> Self {
        let mut scm = Self::confounded_binary();
        scm.p_y_given_m_u = vec![
            // m = 0: same row for u = 0 and u = 1
            vec![vec![0.8, 0.2], vec![0.8, 0.2]],
            // m = 1
            vec![vec![0.4, 0.6], vec![0.4, 0.6]],
        ];
        scm.validate().expect("still valid");
        scm
    }

    /// Exact P(y | do(X = x)) by enumeration over U and M: the ground
    /// truth every estimator is judged against.
    pub fn enumerate_interventional(&self, x: usize) -> Result<Vec<f64>, ScmError> {
        if x >= self.card_x() {
            return Err(ScmError::BadIntervention {
                value: x,
                card: self.card_x(),
            });
        }
        let mut out = vec![0.0; self.card_y()];
        for (u, pu) in self.p_u.iter().enumerate() {
            for (m, pm) in self.p_m_given_x[x].iter().enumerate() {
                for (y, py) in self.p_y_given_m_u[m][u].iter().enumerate() {
                    out[y] += pu * pm * py;
                }
            }
        }
        Ok(out)
    }

    /// Exact observational P(y | X = x), marginalizing the confounder the
    /// way a conditional estimate implicitly does.
    pub fn observational_conditional(&self, x: usize) -> Result<Vec<f64>, ScmError> {
        if x >= self.card_x() {
            return Err(ScmError::BadIntervention {
                value: x,
                card: self.card_x(),
            });
        }
        let mut p_x = 0.0;
        let mut out = vec![0.0; self.card_y()];
        for (u, pu) in self.p_u.iter().enumerate() {
            let px_u = self.p_x_given_u[u][x];
            p_x += pu * px_u;
            for (m, pm) in self.p_m_given_x[x].iter().enumerate() {
                for (y, py) in self.p_y_given_m_u[m][u].iter().enumerate() {
                    out[y] += pu * px_u * pm * py;
                }
            }
        }
        for v in &mut out {
            *v /= p_x;
        }
        Ok(out)
    }

    /// Ancestral sampling of (x, m, y) triples; U stays latent, exactly
    /// like the real-world setting the estimators face.
    pub fn sample(&self, n: usize, seed: u64) -> SampleSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut records = Vec::with_capacity(n);
        for _ in 0..n {
            let u = draw(&self.p_u, &mut rng);
            let x = draw(&self.p_x_given_u[u], &mut rng);
            let m = draw(&self.p_m_given_x[x], &mut rng);
            let y = draw(&self.p_y_given_m_u[m][u], &mut rng);
            records.push((x, m, y));
        }
        SampleSet {
            card_x: self.card_x(),
            card_m: self.card_m(),
            card_y: self.card_y(),
            records,
        }
    }
}

fn draw(dist: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let mut t: f64 = rng.gen();
    for (i, p) in dist.iter().enumerate() {
        if t < *p {
            return i;
        }
        t -= p;
    }
    dist.len() - 1
}

/// Observational samples with the confounder hidden.
#[derive(Debug, Clone)]
pub struct SampleSet {
    pub card_x: usize,
    pub card_m: usize,
    pub card_y: usize,
    /// (x, m, y) per draw.
    pub records: Vec<(usize, usize, usize)>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Empirical P(y | X = x): the biased-under-confounding baseline.
pub fn naive_estimate(samples: &SampleSet, x: usize) -> Result<Vec<f64>, ScmError> {
    if samples.is_empty() {
        return Err(ScmError::NoSamples);
    }
    if x >= samples.card_x {
        return Err(ScmError::BadIntervention {
            value: x,
            card: samples.card_x,
        });
    }
    let mut counts = vec![0u64; samples.card_y];
    let mut total = 0u64;
    for &(sx, _, sy) in &samples.records {
        if sx == x {
            counts[sy] += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(ScmError::EmptyExposureStratum(x));
    }
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}

/// Front-door adjusted estimate of P(y | do(X = x)) from observational
/// samples: Σ_m P̂(m|x) Σ_x' P̂(x') P̂(y|m,x').
///
/// Fails loudly when a needed stratum is empty rather than imputing.
pub fn frontdoor_estimate(samples: &SampleSet, x: usize) -> Result<Vec<f64>, ScmError> {
    if samples.is_empty() {
        return Err(ScmError::NoSamples);
    }
    if x >= samples.card_x {
        return Err(ScmError::BadIntervention {
            value: x,
            card: samples.card_x,
        });
    }
    let n = samples.records.len() as f64;
    let mut n_x = vec![0u64; samples.card_x];
    let mut n_xm = vec![vec![0u64; samples.card_m]; samples.card_x];
    let mut n_mx = vec![vec![0u64; samples.card_x]; samples.card_m];
    let mut n_mxy = vec![vec![vec![0u64; samples.card_y]; samples.card_x]; samples.card_m];
    for &(sx, sm, sy) in &samples.records {
        n_x[sx] += 1;
        n_xm[sx][sm] += 1;
        n_mx[sm][sx] += 1;
        n_mxy[sm][sx][sy] += 1;
    }
    if n_x[x] == 0 {
        return Err(ScmError::EmptyExposureStratum(x));
    }
    let mut out = vec![0.0; samples.card_y];
    for m in 0..samples.card_m {
        let p_m_given_x = n_xm[x][m] as f64 / n_x[x] as f64;
        if p_m_given_x == 0.0 {
            continue;
        }
        for xp in 0..samples.card_x {
            if n_x[xp] == 0 {
                continue; // P̂(x') = 0 contributes nothing
            }
            let p_xp = n_x[xp] as f64 / n;
            if n_mx[m][xp] == 0 {
                return Err(ScmError::EmptyMediatorStratum { m, x: xp });
            }
            for (y, slot) in out.iter_mut().enumerate() {
                let p_y = n_mxy[m][xp][y] as f64 / n_mx[m][xp] as f64;
                *slot += p_m_given_x * p_xp * p_y;
            }
        }
    }
    Ok(out)
}

/// Exact front-door functional computed from the model's observational
/// distribution (no sampling noise). Coincides with
/// [`DiscreteScm::enumerate_interventional`] whenever the model satisfies
/// the front-door assumptions, which this lab's models do by construction.
pub fn frontdoor_exact(scm: &DiscreteScm, x: usize) -> Result<Vec<f64>, ScmError> {
    if x >= scm.card_x() {
        return Err(ScmError::BadIntervention {
            value: x,
            card: scm.card_x(),
        });
    }
    // Exact marginals from the joint over (u, x, m, y).
    let mut p_x = vec![0.0; scm.card_x()];
    for (u, pu) in scm.p_u.iter().enumerate() {
        for (xv, px) in scm.p_x_given_u[u].iter().enumerate() {
            p_x[xv] += pu * px;
        }
    }
    // P(y | m, x') ∝ Σ_u P(u) P(x'|u) P(y|m,u)  (M depends on X only).
    let mut out = vec![0.0; scm.card_y()];
    for m in 0..scm.card_m() {
        let p_m_given_x = scm.p_m_given_x[x][m];
        if p_m_given_x == 0.0 {
            continue;
        }
        for xp in 0..scm.card_x() {
            if p_x[xp] == 0.0 {
                continue;
            }
            let mut joint_y = vec![0.0; scm.card_y()];
            let mut norm = 0.0;
            for (u, pu) in scm.p_u.iter().enumerate() {
                let w = pu * scm.p_x_given_u[u][xp];
                norm += w;
                for (y, py) in scm.p_y_given_m_u[m][u].iter().enumerate() {
                    joint_y[y] += w * py;
                }
            }
            for (y, slot) in out.iter_mut().enumerate() {
                *slot += p_m_given_x * p_x[xp] * joint_y[y] / norm;
            }
        }
    }
    Ok(out)
}

/// Total variation distance: ½ Σ |p_i − q_i|.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "distributions must share support");
    0.5 * p
        .iter()
        .zip(q.iter())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
}

// ---------------------------------------------------------------------------
// Plain-text SCM files

/// Parse the plain-text SCM format described in the module docs.
pub fn parse_scm_file(path: &std::path::Path) -> Result<DiscreteScm, ScmError> {
    let content = std::fs::read_to_string(path).map_err(|e| ScmError::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    parse_scm_str(&content)
}

pub fn parse_scm_str(content: &str) -> Result<DiscreteScm, ScmError> {
    let mut p_u: Option<Vec<f64>> = None;
    let mut x_rows: Vec<(usize, Vec<f64>, usize)> = Vec::new(); // (u, dist, line)
    let mut m_rows: Vec<(usize, Vec<f64>, usize)> = Vec::new(); // (x, dist, line)
    let mut y_rows: Vec<((usize, usize), Vec<f64>, usize)> = Vec::new(); // ((m, u), dist, line)

    for (idx, raw) in content.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |detail: String| ScmError::Parse {
            line: line_no,
            detail,
        };
        let (key, rest) = line
            .split_once(':')
            .ok_or_else(|| parse_err("expected `key: ...`".into()))?;
        match key.trim() {
            "u" => {
                if p_u.is_some() {
                    return Err(ScmError::DuplicateRow {
                        line: line_no,
                        key: "u".into(),
                    });
                }
                p_u = Some(parse_values(rest, line_no)?);
            }
            "x|u" => {
                let (cond, values) = rest
                    .split_once(':')
                    .ok_or_else(|| parse_err("expected `x|u: u=<v>: ...`".into()))?;
                let u = parse_assignment(cond, "u", line_no)?;
                if x_rows.iter().any(|(uu, _, _)| *uu == u) {
                    return Err(ScmError::DuplicateRow {
                        line: line_no,
                        key: format!("x|u u={u}"),
                    });
                }
                x_rows.push((u, parse_values(values, line_no)?, line_no));
            }
            "m|x" => {
                let (cond, values) = rest
                    .split_once(':')
                    .ok_or_else(|| parse_err("expected `m|x: x=<v>: ...`".into()))?;
                let x = parse_assignment(cond, "x", line_no)?;
                if m_rows.iter().any(|(xx, _, _)| *xx == x) {
                    return Err(ScmError::DuplicateRow {
                        line: line_no,
                        key: format!("m|x x={x}"),
                    });
                }
                m_rows.push((x, parse_values(values, line_no)?, line_no));
            }
            "y|m,u" => {
                let (cond, values) = rest
                    .split_once(':')
                    .ok_or_else(|| parse_err("expected `y|m,u: m=<v> u=<v>: ...`".into()))?;
                let mut m_val = None;
                let mut u_val = None;
                for token in cond.split_whitespace() {
                    if let Some(v) = token.strip_prefix("m=") {
                        m_val = Some(v.parse::<usize>().map_err(|_| {
                            parse_err(format!("bad assignment {token:?}"))
                        })?);
                    } else if let Some(v) = token.strip_prefix("u=") {
                        u_val = Some(v.parse::<usize>().map_err(|_| {
                            parse_err(format!("bad assignment {token:?}"))
                        })?);
                    } else {
                        return Err(parse_err(format!("unexpected token {token:?}")));
                    }
                }
                let key = (
                    m_val.ok_or_else(|| parse_err("missing m=<v>".into()))?,
                    u_val.ok_or_else(|| parse_err("missing u=<v>".into()))?,
                );
                if y_rows.iter().any(|(k, _, _)| *k == key) {
                    return Err(ScmError::DuplicateRow {
                        line: line_no,
                        key: format!("y|m,u m={} u={}", key.0, key.1),
                    });
                }
                y_rows.push((key, parse_values(values, line_no)?, line_no));
            }
            other => return Err(parse_err(format!("unknown table {other:?}"))),
        }
    }

    let p_u = p_u.ok_or_else(|| ScmError::MissingRow("u".into()))?;
    let card_u = p_u.len();
    let card_x = x_rows
        .first()
        .map(|(_, d, _)| d.len())
        .ok_or_else(|| ScmError::MissingRow("x|u".into()))?;
    let card_m = m_rows
        .first()
        .map(|(_, d, _)| d.len())
        .ok_or_else(|| ScmError::MissingRow("m|x".into()))?;

    let mut p_x_given_u = vec![Vec::new(); card_u];
    for u in 0..card_u {
        let row = x_rows
            .iter()
            .find(|(uu, _, _)| *uu == u)
            .ok_or_else(|| ScmError::MissingRow(format!("x|u u={u}")))?;
        p_x_given_u[u] = row.1.clone();
    }
    let mut p_m_given_x = vec![Vec::new(); card_x];
    for x in 0..card_x {
        let row = m_rows
            .iter()
            .find(|(xx, _, _)| *xx == x)
            .ok_or_else(|| ScmError::MissingRow(format!("m|x x={x}")))?;
        p_m_given_x[x] = row.1.clone();
    }
    let mut p_y_given_m_u = vec![vec![Vec::new(); card_u]; card_m];
    for m in 0..card_m {
        for u in 0..card_u {
            let row = y_rows
                .iter()
                .find(|(k, _, _)| *k == (m, u))
                .ok_or_else(|| ScmError::MissingRow(format!("y|m,u m={m} u={u}")))?;
            p_y_given_m_u[m][u] = row.1.clone();
        }
    }
    if y_rows.len() != card_m * card_u {
        // A row referenced an out-of-range index; report the first such.
        for ((m, u), _, line) in &y_rows {
            if *m >= card_m || *u >= card_u {
                return Err(ScmError::Parse {
                    line: *line,
                    detail: format!("y|m,u row m={m} u={u} outside inferred cardinalities"),
                });
            }
        }
    }
    DiscreteScm::new(p_u, p_x_given_u, p_m_given_x, p_y_given_m_u)
}

fn parse_values(s: &str, line: usize) -> Result<Vec<f64>, ScmError> {
    let values: Result<Vec<f64>, _> = s.split_whitespace().map(|t| t.parse::<f64>()).collect();
    let values = values.map_err(|e| ScmError::Parse {
        line,
        detail: format!("bad probability: {e}"),
    })?;
    if values.len() < 2 {
        return Err(ScmError::Parse {
            line,
            detail: "each distribution needs at least two entries".into(),
        });
    }
    Ok(values)
}

fn parse_assignment(s: &str, var: &str, line: usize) -> Result<usize, ScmError> {
    let s = s.trim();
    s.strip_prefix(&format!("{var}="))
        .and_then(|v| v.parse::<usize>().ok())
        .ok_or_else(|| ScmError::Parse {
            line,
            detail: format!("expected `{var}=<index>`, got {s:?}"),
        })
}

/// Render an SCM in the plain-text format (inverse of [`parse_scm_str`]).
pub fn format_scm(scm: &DiscreteScm) -> String {
    let mut out = String::new();
    let fmt_row = |dist: &[f64]| {
        dist.iter()
            .map(|p| format!("{p}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    out.push_str(&format!("u: {}\n", fmt_row(&scm.p_u)));
    for (u, row) in scm.p_x_given_u.iter().enumerate() {
        out.push_str(&format!("x|u: u={u}: {}\n", fmt_row(row)));
    }
    for (x, row) in scm.p_m_given_x.iter().enumerate() {
        out.push_str(&format!("m|x: x={x}: {}\n", fmt_row(row)));
    }
    for (m, per_u) in scm.p_y_given_m_u.iter().enumerate() {
        for (u, row) in per_u.iter().enumerate() {
            out.push_str(&format!("y|m,u: m={m} u={u}: {}\n", fmt_row(row)));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn benchmark_interventional_truth() {
        let scm = DiscreteScm::confounded_binary();
        let do0 = scm.enumerate_interventional(0).unwrap();
        let do1 = scm.enumerate_interventional(1).unwrap();
        assert_abs_diff_eq!(do0[1], 0.37, epsilon = 1e-12);
        assert_abs_diff_eq!(do0[0], 0.63, epsilon = 1e-12);
        assert_abs_diff_eq!(do1[1], 0.53, epsilon = 1e-12);
    }

    #[test]
    fn benchmark_observational_is_confounded() {
        let scm = DiscreteScm::confounded_binary();
        let obs0 = scm.observational_conditional(0).unwrap();
        let obs1 = scm.observational_conditional(1).unwrap();
        assert_abs_diff_eq!(obs0[1], 0.226, epsilon = 1e-12);
        assert_abs_diff_eq!(obs1[1], 0.626, epsilon = 1e-12);
        // The confounding bias the front-door adjustment must remove.
        let do0 = scm.enumerate_interventional(0).unwrap();
        let do1 = scm.enumerate_interventional(1).unwrap();
        assert!(total_variation(&obs0, &do0) > 0.14);
        assert!(total_variation(&obs1, &do1) > 0.09);
    }

    #[test]
    fn exact_frontdoor_recovers_interventional_truth() {
        let scm = DiscreteScm::confounded_binary();
        for x in 0..2 {
            let fd = frontdoor_exact(&scm, x).unwrap();
            let truth = scm.enumerate_interventional(x).unwrap();
            assert_abs_diff_eq!(
                total_variation(&fd, &truth),
                0.0,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn unconfounded_model_makes_naive_exact() {
        let scm = DiscreteScm::unconfounded_binary();
        for x in 0..2 {
            let obs = scm.observational_conditional(x).unwrap();
            let truth = scm.enumerate_interventional(x).unwrap();
            assert_abs_diff_eq!(total_variation(&obs, &truth), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn outcome_unconfounded_model_makes_naive_exact() {
        // Hand arithmetic: P(Y=1|m) = 0.2 + 0.4m, so
        // P(Y=1|do(x)) = P(Y=1|x) = 0.9(x=0)*0.2 + 0.1*0.6 = 0.24 at x=0
        // and 0.1*0.2 + 0.9*0.6 = 0.56 at x=1.
        let scm = DiscreteScm::outcome_unconfounded_binary();
        let expected = [[0.76, 0.24], [0.44, 0.56]];
        for x in 0..2 {
            let obs = scm.observational_conditional(x).unwrap();
            let truth = scm.enumerate_interventional(x).unwrap();
            assert_abs_diff_eq!(total_variation(&obs, &truth), 0.0, epsilon = 1e-12);
            for y in 0..2 {
                assert_abs_diff_eq!(truth[y], expected[x][y], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn sampled_frontdoor_beats_naive_under_confounding() {
        let scm = DiscreteScm::confounded_binary();
        let samples = scm.sample(20_000, 1);
        for x in 0..2 {
            let truth = scm.enumerate_interventional(x).unwrap();
            let fd = frontdoor_estimate(&samples, x).unwrap();
            let naive = naive_estimate(&samples, x).unwrap();
            assert!(
                total_variation(&fd, &truth) < 0.02,
                "front-door off by {}",
                total_variation(&fd, &truth)
            );
            assert!(
                total_variation(&naive, &truth) > 0.05,
                "naive suspiciously close: {}",
                total_variation(&naive, &truth)
            );
        }
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let scm = DiscreteScm::confounded_binary();
        let a = scm.sample(100, 7);
        let b = scm.sample(100, 7);
        assert_eq!(a.records, b.records);
        let c = scm.sample(100, 8);
        assert_ne!(a.records, c.records);
    }

    #[test]
    fn estimators_fail_loudly_on_empty_strata() {
        let samples = SampleSet {
            card_x: 2,
            card_m: 2,
            card_y: 2,
            records: vec![(0, 0, 0), (0, 1, 1)],
        };
        assert!(matches!(
            naive_estimate(&samples, 1),
            Err(ScmError::EmptyExposureStratum(1))
        ));
        assert!(matches!(
            frontdoor_estimate(&samples, 1),
            Err(ScmError::EmptyExposureStratum(1))
        ));
        let empty = SampleSet {
            card_x: 2,
            card_m: 2,
            card_y: 2,
            records: vec![],
        };
        assert!(matches!(naive_estimate(&empty, 0), Err(ScmError::NoSamples)));
    }

    #[test]
    fn frontdoor_reports_missing_mediator_stratum() {
        // M=1 observed under X=1 but never under X=0, so P̂(y|m=1,x=0)
        // is unavailable while the formula needs it.
        let samples = SampleSet {
            card_x: 2,
            card_m: 2,
            card_y: 2,
            records: vec![(0, 0, 0), (0, 0, 1), (1, 1, 1), (1, 1, 0)],
        };
        assert!(matches!(
            frontdoor_estimate(&samples, 1),
            Err(ScmError::EmptyMediatorStratum { m: 1, x: 0 })
        ));
    }

    #[test]
    fn validation_rejects_bad_tables() {
        let bad_sum = DiscreteScm::new(
            vec![0.6, 0.6],
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            vec![
                vec![vec![0.5, 0.5], vec![0.5, 0.5]],
                vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            ],
        );
        assert!(matches!(bad_sum, Err(ScmError::BadSum { .. })));
        let negative = DiscreteScm::new(
            vec![1.2, -0.2],
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            vec![
                vec![vec![0.5, 0.5], vec![0.5, 0.5]],
                vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            ],
        );
        assert!(matches!(negative, Err(ScmError::BadEntry { .. })));
        let ragged = DiscreteScm::new(
            vec![0.5, 0.5],
            vec![vec![0.5, 0.5]],
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            vec![
                vec![vec![0.5, 0.5], vec![0.5, 0.5]],
                vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            ],
        );
        assert!(matches!(ragged, Err(ScmError::BadCardinality { .. })));
    }

    #[test]
    fn text_format_round_trips_the_benchmark() {
        let scm = DiscreteScm::confounded_binary();
        let text = format_scm(&scm);
        let parsed = parse_scm_str(&text).unwrap();
        assert_eq!(parsed, scm);
    }

    #[test]
    fn parser_accepts_comments_and_any_row_order() {
        let text = "\
# benchmark, rows shuffled
y|m,u: m=1 u=1: 0.3 0.7
u: 0.5 0.5
m|x: x=1: 0.1 0.9
x|u: u=1: 0.2 0.8
y|m,u: m=0 u=0: 0.9 0.1   # inline comment
y|m,u: m=1 u=0: 0.6 0.4
x|u: u=0: 0.8 0.2
m|x: x=0: 0.9 0.1
y|m,u: m=0 u=1: 0.4 0.6
";
        assert_eq!(parse_scm_str(text).unwrap(), DiscreteScm::confounded_binary());
    }

    #[test]
    fn parser_rejects_missing_and_duplicate_rows() {
        let missing = "u: 0.5 0.5\nx|u: u=0: 0.8 0.2\nx|u: u=1: 0.2 0.8\nm|x: x=0: 0.9 0.1\nm|x: x=1: 0.1 0.9\ny|m,u: m=0 u=0: 0.9 0.1\n";
        assert!(matches!(
            parse_scm_str(missing),
            Err(ScmError::MissingRow(_))
        ));
        let dup = "u: 0.5 0.5\nu: 0.5 0.5\n";
        assert!(matches!(
            parse_scm_str(dup),
            Err(ScmError::DuplicateRow { line: 2, .. })
        ));
        let junk = "u: 0.5 half\n";
        assert!(matches!(parse_scm_str(junk), Err(ScmError::Parse { line: 1, .. })));
    }
}
