//! Data-generating processes, a Wald-type comparator and a deterministic
//! Monte Carlo engine for size and power studies.
//!
//! Scenario files are plain `key = value` lines; `#` starts a comment.
//!
//! ```text
//! name = null_calibration
//! dgp = null_normal          # null_normal | scaled_t5 | skew_normal | hetero_normal
//! beta = 0
//! gamma = 0.5
//! n = 100
//! rho = 0.3
//! taus = 0.1, 0.25, 0.5, 0.75, 0.9
//! replications = 1000
//! seed = 1
//! alpha = 0.05               # optional, default 0.05
//! methods = closed:identity, bonferroni, holm, wald, raw
//! ```

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, StudentT};
use rayon::prelude::*;
use serde::Serialize;

use crate::datamodel::{validate, Dataset, HypothesisSubset, Problem, QuantileSpec};
use crate::distributions::chisq_upper;
use crate::error::{Error, Result};
use crate::multiplicity::{bonferroni, closed_test, holm, ClosureReport, MAX_HYPOTHESES};
use crate::qrsolver;
use crate::rankscore::{
    delta_matrix, estimate_sparsity, score_state, statistic_generalized, statistic_standard, RankScoreState,
    WeightingKind, WeightingMatrix,
};

/// Location offset of the skew-normal design.
const SKEW_OFFSET: f64 = 1.453;
const SKEW_SHAPE: f64 = 2.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Dgp {
    /// `y = 0.5 + beta x + gamma z + e`, `e ~ N(0, 1)`.
    NullNormal,
    /// `y = 0.5 + beta x + gamma z + (1 + |x|) sqrt(3/5) w`, `w ~ t_5`.
    ScaledT5,
    /// `y ~ SN(0.5 + beta x + gamma z - 1.453, omega^2 = 3 + |x|, 2.2)`.
    SkewNormal,
    /// `y ~ N(0.5 + beta x + gamma z, variance 1 + |x|)`.
    HeteroNormal,
}

impl Dgp {
    pub fn name(&self) -> &'static str {
        match self {
            Dgp::NullNormal => "null_normal",
            Dgp::ScaledT5 => "scaled_t5",
            Dgp::SkewNormal => "skew_normal",
            Dgp::HeteroNormal => "hetero_normal",
        }
    }
}

impl FromStr for Dgp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "null_normal" => Ok(Dgp::NullNormal),
            "scaled_t5" => Ok(Dgp::ScaledT5),
            "skew_normal" => Ok(Dgp::SkewNormal),
            "hetero_normal" => Ok(Dgp::HeteroNormal),
            other => Err(Error::InvalidArgument(format!("unknown dgp '{other}'"))),
        }
    }
}

/// An analysis compared in a Monte Carlo run.
#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    /// Closed testing with the weighted rank-score local test.
    ClosedTesting(WeightingKind),
    /// Unweighted single-level rank-score tests with Bonferroni adjustment.
    Bonferroni,
    Holm,
    /// Wald-type local tests, closed for the individual decisions.
    Wald,
    /// Unadjusted single-level rank-score tests.
    Raw,
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Method::ClosedTesting(kind) => format!("closed:{}", kind.name()),
            Method::Bonferroni => "bonferroni".into(),
            Method::Holm => "holm".into(),
            Method::Wald => "wald".into(),
            Method::Raw => "raw".into(),
        }
    }

    fn has_subset_tests(&self) -> bool {
        matches!(self, Method::ClosedTesting(_) | Method::Wald)
    }

    pub fn default_set() -> Vec<Method> {
        vec![
            Method::ClosedTesting(WeightingKind::Identity),
            Method::Bonferroni,
            Method::Holm,
            Method::Wald,
            Method::Raw,
        ]
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "bonferroni" => Ok(Method::Bonferroni),
            "holm" => Ok(Method::Holm),
            "wald" => Ok(Method::Wald),
            "raw" => Ok(Method::Raw),
            _ => match s.strip_prefix("closed:") {
                Some(w) => Ok(Method::ClosedTesting(w.parse()?)),
                None => Err(Error::InvalidArgument(format!("unknown method '{s}'"))),
            },
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub dgp: Dgp,
    pub beta: f64,
    pub gamma: f64,
    pub n: usize,
    pub rho: f64,
    pub taus: Vec<f64>,
    pub replications: usize,
    pub seed: u64,
    pub alpha: f64,
    pub methods: Vec<Method>,
}

const BUNDLED: [(&str, &str); 8] = [
    ("null_calibration", include_str!("../scenarios/null_calibration.scn")),
    ("weighting_hetero", include_str!("../scenarios/weighting_hetero.scn")),
    ("extreme_t5", include_str!("../scenarios/extreme_t5.scn")),
    ("extreme_skew", include_str!("../scenarios/extreme_skew.scn")),
    ("extreme_hetero", include_str!("../scenarios/extreme_hetero.scn")),
    ("deciles_t5", include_str!("../scenarios/deciles_t5.scn")),
    ("deciles_skew", include_str!("../scenarios/deciles_skew.scn")),
    ("deciles_hetero", include_str!("../scenarios/deciles_hetero.scn")),
];

impl Scenario {
    pub fn bundled_names() -> Vec<&'static str> {
        BUNDLED.iter().map(|(n, _)| *n).collect()
    }

    pub fn bundled(name: &str) -> Option<Scenario> {
        BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, text)| Scenario::parse(text).expect("bundled scenario"))
    }

    /// Parses the `key = value` scenario format.
    pub fn parse(text: &str) -> Result<Scenario> {
        let mut name = None;
        let mut dgp = None;
        let mut beta = None;
        let mut gamma = None;
        let mut n = None;
        let mut rho = None;
        let mut taus = None;
        let mut replications = None;
        let mut seed = None;
        let mut alpha = 0.05;
        let mut methods = None;
        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let at = |msg: String| Error::InvalidArgument(format!("scenario line {}: {msg}", line_no + 1));
            let (key, value) = line.split_once('=').ok_or_else(|| at(format!("expected key = value, got '{line}'")))?;
            let (key, value) = (key.trim(), value.trim());
            let num = |v: &str| v.parse::<f64>().map_err(|_| at(format!("'{v}' is not a number")));
            let int = |v: &str| v.parse::<u64>().map_err(|_| at(format!("'{v}' is not a nonnegative integer")));
            match key {
                "name" => name = Some(value.to_string()),
                "dgp" => dgp = Some(value.parse::<Dgp>().map_err(|e| at(e.to_string()))?),
                "beta" => beta = Some(num(value)?),
                "gamma" => gamma = Some(num(value)?),
                "n" => n = Some(int(value)? as usize),
                "rho" => rho = Some(num(value)?),
                "taus" => taus = Some(value.split(',').map(|t| num(t.trim())).collect::<Result<Vec<_>>>()?),
                "replications" => replications = Some(int(value)? as usize),
                "seed" => seed = Some(int(value)?),
                "alpha" => alpha = num(value)?,
                "methods" => {
                    methods = Some(
                        value
                            .split(',')
                            .map(|m| m.parse::<Method>().map_err(|e| at(e.to_string())))
                            .collect::<Result<Vec<_>>>()?,
                    )
                }
                other => return Err(at(format!("unknown key '{other}'"))),
            }
        }
        let missing = |k: &str| Error::InvalidArgument(format!("scenario is missing '{k}'"));
        let scenario = Scenario {
            name: name.unwrap_or_else(|| "unnamed".into()),
            dgp: dgp.ok_or_else(|| missing("dgp"))?,
            beta: beta.ok_or_else(|| missing("beta"))?,
            gamma: gamma.ok_or_else(|| missing("gamma"))?,
            n: n.ok_or_else(|| missing("n"))?,
            rho: rho.ok_or_else(|| missing("rho"))?,
            taus: taus.ok_or_else(|| missing("taus"))?,
            replications: replications.ok_or_else(|| missing("replications"))?,
            seed: seed.ok_or_else(|| missing("seed"))?,
            alpha,
            methods: methods.unwrap_or_else(Method::default_set),
        };
        scenario.check()?;
        Ok(scenario)
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n < 10 {
            return bad(format!("n = {} is below 10", self.n));
        }
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return bad(format!("rho = {} is not in (-1, 1)", self.rho));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha = {} is not in (0, 1)", self.alpha));
        }
        if !self.beta.is_finite() || !self.gamma.is_finite() {
            return bad("beta and gamma must be finite".into());
        }
        if self.taus.is_empty() || self.taus.len() > MAX_HYPOTHESES {
            return bad(format!("between 1 and {MAX_HYPOTHESES} levels required"));
        }
        if self.taus.iter().any(|t| !(*t > 0.0 && *t < 1.0)) || self.taus.windows(2).any(|w| w[0] >= w[1]) {
            return bad("levels must be strictly increasing inside (0, 1)".into());
        }
        if self.methods.is_empty() {
            return bad("at least one method required".into());
        }
        Ok(())
    }

    /// Echo in the scenario file format.
    pub fn to_text(&self) -> String {
        let taus: Vec<String> = self.taus.iter().map(|t| t.to_string()).collect();
        let methods: Vec<String> = self.methods.iter().map(|m| m.name()).collect();
        format!(
            "name = {}\ndgp = {}\nbeta = {}\ngamma = {}\nn = {}\nrho = {}\ntaus = {}\nreplications = {}\nseed = {}\nalpha = {}\nmethods = {}\n",
            self.name,
            self.dgp.name(),
            self.beta,
            self.gamma,
            self.n,
            self.rho,
            taus.join(", "),
            self.replications,
            self.seed,
            self.alpha,
            methods.join(", ")
        )
    }
}

impl Serialize for Scenario {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("Scenario", 11)?;
        st.serialize_field("name", &self.name)?;
        st.serialize_field("dgp", &self.dgp)?;
        st.serialize_field("beta", &self.beta)?;
        st.serialize_field("gamma", &self.gamma)?;
        st.serialize_field("n", &self.n)?;
        st.serialize_field("rho", &self.rho)?;
        st.serialize_field("taus", &self.taus)?;
        st.serialize_field("replications", &self.replications)?;
        st.serialize_field("seed", &self.seed)?;
        st.serialize_field("alpha", &self.alpha)?;
        st.serialize_field("methods", &self.methods.iter().map(|m| m.name()).collect::<Vec<_>>())?;
        st.end()
    }
}

const COVARIATE_STREAM: u64 = 0;
const ERROR_STREAM: u64 = 1;

fn stream_rng(seed: u64, replication: usize, stream: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(replication as u64).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}

/// Dataset of replication `replication`; a pure function of the scenario
/// seed and the index.
pub fn generate(scenario: &Scenario, replication: usize) -> Dataset {
    let n = scenario.n;
    let mut cov = stream_rng(scenario.seed, replication, COVARIATE_STREAM);
    let mut err = stream_rng(scenario.seed, replication, ERROR_STREAM);
    let rho = scenario.rho;
    let tail = (1.0 - rho * rho).sqrt();
    let t5 = StudentT::new(5.0).unwrap();
    let delta = SKEW_SHAPE / (1.0 + SKEW_SHAPE * SKEW_SHAPE).sqrt();
    let mut x = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let u1: f64 = cov.sample(StandardNormal);
        let u2: f64 = cov.sample(StandardNormal);
        let xi = u1;
        let zi = rho * u1 + tail * u2;
        let mean = 0.5 + scenario.beta * xi + scenario.gamma * zi;
        let yi = match scenario.dgp {
            Dgp::NullNormal => mean + err.sample::<f64, _>(StandardNormal),
            Dgp::ScaledT5 => mean + (1.0 + xi.abs()) * (0.6f64).sqrt() * err.sample(t5),
            Dgp::SkewNormal => {
                let e0: f64 = err.sample(StandardNormal);
                let e1: f64 = err.sample(StandardNormal);
                let s = delta * e0.abs() + (1.0 - delta * delta).sqrt() * e1;
                mean - SKEW_OFFSET + (3.0 + xi.abs()).sqrt() * s
            }
            Dgp::HeteroNormal => mean + (1.0 + xi.abs()).sqrt() * err.sample::<f64, _>(StandardNormal),
        };
        x.push(xi);
        z.push(zi);
        y.push(yi);
    }
    Dataset::with_intercept(y, x, &[z])
}

/// Wald-type joint tests of the target coefficient across levels.
#[derive(Debug, Clone, PartialEq)]
pub struct WaldOutcome {
    pub beta_hat: Vec<f64>,
    pub covariance: DMatrix<f64>,
    null_values: Vec<f64>,
    max_dual_residual: f64,
}

impl WaldOutcome {
    /// Joint statistic and chi-square p-value for the subset.
    pub fn test(&self, subset: &HypothesisSubset) -> Result<(f64, f64)> {
        let idx = subset.indices();
        let diff = DVector::from_iterator(idx.len(), idx.iter().map(|&j| self.beta_hat[j] - self.null_values[j]));
        let cov = DMatrix::from_fn(idx.len(), idx.len(), |r, c| self.covariance[(idx[r], idx[c])]);
        let chol = cov.cholesky().ok_or(Error::SingularCovariance)?;
        let w = diff.dot(&chol.solve(&diff)).max(0.0);
        Ok((w, chisq_upper(w, idx.len())))
    }

    pub fn max_dual_residual(&self) -> f64 {
        self.max_dual_residual
    }
}

/// Fits the full model at every level and builds the sandwich covariance
/// `Cov(b_l, b_r) = delta_lr [H_l^{-1} J H_r^{-1}]_xx / n` with
/// `H_l = M' F_l M / n` from local density estimates and `J = M'M / n`.
pub fn wald_test(problem: &Problem) -> Result<WaldOutcome> {
    let data = problem.dataset();
    let spec = problem.spec();
    let m = data.full_design();
    let n = data.n();
    let q = m.ncols();
    let per_level: Vec<(f64, DVector<f64>, f64)> = spec
        .taus
        .par_iter()
        .map(|&tau| {
            let fit = qrsolver::fit(&m, &data.y, tau)?;
            let sparsity = estimate_sparsity(&m, &data.y, tau)?;
            let mut h = DMatrix::zeros(q, q);
            for i in 0..n {
                let row = m.row(i);
                h += sparsity.f_hat[i] / n as f64 * row.transpose() * row;
            }
            let e = DVector::from_fn(q, |r, _| if r == q - 1 { 1.0 } else { 0.0 });
            let u = h.lu().solve(&e).ok_or(Error::SingularCovariance)?;
            Ok((fit.gamma_hat[q - 1], u, fit.dual_residual(&m)))
        })
        .collect::<Result<_>>()?;
    let j = m.transpose() * &m / n as f64;
    let delta = delta_matrix(&spec.taus);
    let k = spec.k();
    let covariance = DMatrix::from_fn(k, k, |l, r| {
        delta[(l, r)] * per_level[l].1.dot(&(&j * &per_level[r].1)) / n as f64
    });
    if covariance.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularCovariance);
    }
    Ok(WaldOutcome {
        beta_hat: per_level.iter().map(|p| p.0).collect(),
        covariance,
        null_values: spec.null_values.clone(),
        max_dual_residual: per_level.iter().map(|p| p.2).fold(0.0, f64::max),
    })
}

/// Rejection frequency with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rate {
    pub count: usize,
    pub rate: f64,
    pub std_error: f64,
}

impl Rate {
    fn new(count: usize, total: usize) -> Rate {
        let rate = if total == 0 { 0.0 } else { count as f64 / total as f64 };
        let std_error = if total == 0 { 0.0 } else { (rate * (1.0 - rate) / total as f64).sqrt() };
        Rate { count, rate, std_error }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetRate {
    pub subset: HypothesisSubset,
    pub label: String,
    #[serde(flatten)]
    pub rate: Rate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: String,
    /// Per-hypothesis rejection frequencies, in level order.
    pub hypotheses: Vec<Rate>,
    /// Frequency of at least one rejection.
    pub familywise: Rate,
    /// Local-test rejection frequencies for every subset, when the method
    /// has subset tests.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subsets: Option<Vec<SubsetRate>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub max_dual_residual: f64,
    /// Largest relative gap between the standard statistic and the weighted
    /// statistic with `B = A^{-1}` over all subsets and replications.
    pub max_inverse_statistic_gap: f64,
    pub max_inverse_p_gap: f64,
    pub failed_replications: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloReport {
    pub scenario: Scenario,
    pub seed: u64,
    pub completed_replications: usize,
    pub methods: Vec<MethodSummary>,
    pub diagnostics: Diagnostics,
}

impl MonteCarloReport {
    pub fn method(&self, name: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == name)
    }

    /// One row per method and hypothesis, familywise rate and subset.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,kind,label,rate,std_error\n");
        for m in &self.methods {
            for (j, r) in m.hypotheses.iter().enumerate() {
                out.push_str(&format!("{},hypothesis,tau={},{},{}\n", m.method, self.scenario.taus[j], r.rate, r.std_error));
            }
            out.push_str(&format!("{},familywise,any,{},{}\n", m.method, m.familywise.rate, m.familywise.std_error));
            if let Some(subsets) = &m.subsets {
                for s in subsets {
                    out.push_str(&format!("{},subset,\"{}\",{},{}\n", m.method, s.label, s.rate.rate, s.rate.std_error));
                }
            }
        }
        out
    }
}

struct MethodOutcome {
    hypotheses: Vec<bool>,
    subsets: Option<Vec<bool>>,
}

struct ReplicationOutcome {
    methods: Vec<MethodOutcome>,
    max_dual_residual: f64,
    statistic_gap: f64,
    p_gap: f64,
}

fn all_subsets(k: usize) -> impl Iterator<Item = HypothesisSubset> {
    (1u32..(1u32 << k)).map(|m| HypothesisSubset::from_mask(m).unwrap())
}

fn consistency_gaps(state: &RankScoreState) -> Result<(f64, f64)> {
    let inverse = WeightingMatrix::for_state(WeightingKind::InverseA, state)?;
    let mut stat_gap = 0.0f64;
    let mut p_gap = 0.0f64;
    for subset in all_subsets(state.k()) {
        let a = statistic_standard(state, &subset)?;
        let b = statistic_generalized(state, &subset, &inverse)?;
        stat_gap = stat_gap.max((a.statistic - b.statistic).abs() / (1.0 + a.statistic.abs()));
        p_gap = p_gap.max((a.p_value - b.p_value).abs());
    }
    Ok((stat_gap, p_gap))
}

fn subset_rejections(report: &ClosureReport) -> Vec<bool> {
    report.subset_records().iter().map(|r| r.local_p <= report.alpha).collect()
}

fn analyze(scenario: &Scenario, methods_run: &[Method], replication: usize) -> Result<ReplicationOutcome> {
    let data = generate(scenario, replication);
    let problem = validate(data, QuantileSpec::new(scenario.taus.clone()))?;
    let state = score_state(&problem)?;
    let k = state.k();
    let alpha = scenario.alpha;
    let mut max_dual_residual = state.max_dual_residual(&problem.dataset().z);
    let raw: Vec<f64> = (0..k)
        .map(|j| statistic_standard(&state, &HypothesisSubset::singleton(j)).map(|o| o.p_value))
        .collect::<Result<_>>()?;
    let mut methods = Vec::with_capacity(methods_run.len());
    for method in methods_run {
        let outcome = match method {
            Method::ClosedTesting(kind) => {
                let weighting = WeightingMatrix::for_state(kind.clone(), &state)?;
                let report = closed_test(&state, &weighting, alpha)?;
                MethodOutcome { hypotheses: report.rejected.clone(), subsets: Some(subset_rejections(&report)) }
            }
            Method::Wald => {
                let wald = wald_test(&problem)?;
                max_dual_residual = max_dual_residual.max(wald.max_dual_residual());
                let local: Vec<f64> =
                    all_subsets(k).map(|c| wald.test(&c).map(|(_, p)| p)).collect::<Result<_>>()?;
                let report = ClosureReport::from_local_p(k, local, alpha)?;
                MethodOutcome { hypotheses: report.rejected.clone(), subsets: Some(subset_rejections(&report)) }
            }
            Method::Bonferroni => {
                MethodOutcome { hypotheses: bonferroni(&raw).iter().map(|&p| p <= alpha).collect(), subsets: None }
            }
            Method::Holm => MethodOutcome { hypotheses: holm(&raw).iter().map(|&p| p <= alpha).collect(), subsets: None },
            Method::Raw => MethodOutcome { hypotheses: raw.iter().map(|&p| p <= alpha).collect(), subsets: None },
        };
        methods.push(outcome);
    }
    let (statistic_gap, p_gap) = consistency_gaps(&state)?;
    Ok(ReplicationOutcome { methods, max_dual_residual, statistic_gap, p_gap })
}

/// Runs every replication of the scenario and tabulates rejection rates of
/// `methods`. Replications run in parallel; the result does not depend on
/// scheduling.
pub fn run_monte_carlo(scenario: &Scenario, methods: &[Method]) -> Result<MonteCarloReport> {
    let mut scenario = scenario.clone();
    scenario.methods = methods.to_vec();
    scenario.check()?;
    let outcomes: Vec<Result<ReplicationOutcome>> =
        (0..scenario.replications).into_par_iter().map(|r| analyze(&scenario, methods, r)).collect();

    let k = scenario.taus.len();
    let mut failed = 0;
    let mut first_failure = None;
    let mut ok = Vec::with_capacity(outcomes.len());
    for (r, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(o) => ok.push(o),
            Err(e) => {
                failed += 1;
                first_failure.get_or_insert_with(|| format!("replication {r}: {e}"));
            }
        }
    }
    let total = ok.len();
    let summaries = methods
        .iter()
        .enumerate()
        .map(|(mi, method)| {
            let hypotheses =
                (0..k).map(|j| Rate::new(ok.iter().filter(|o| o.methods[mi].hypotheses[j]).count(), total)).collect();
            let familywise = Rate::new(ok.iter().filter(|o| o.methods[mi].hypotheses.iter().any(|&b| b)).count(), total);
            let subsets = method.has_subset_tests().then(|| {
                all_subsets(k)
                    .enumerate()
                    .map(|(si, subset)| {
                        let count = ok
                            .iter()
                            .filter(|o| o.methods[mi].subsets.as_ref().map(|s| s[si]).unwrap_or(false))
                            .count();
                        SubsetRate { label: subset.label(), subset, rate: Rate::new(count, total) }
                    })
                    .collect()
            });
            MethodSummary { method: method.name(), hypotheses, familywise, subsets }
        })
        .collect();
    let diagnostics = Diagnostics {
        max_dual_residual: ok.iter().map(|o| o.max_dual_residual).fold(0.0, f64::max),
        max_inverse_statistic_gap: ok.iter().map(|o| o.statistic_gap).fold(0.0, f64::max),
        max_inverse_p_gap: ok.iter().map(|o| o.p_gap).fold(0.0, f64::max),
        failed_replications: failed,
        first_failure,
    };
    Ok(MonteCarloReport {
        seed: scenario.seed,
        scenario,
        completed_replications: total,
        methods: summaries,
        diagnostics,
    })
}
