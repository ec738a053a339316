//! Information-theoretic leakage analysis over discrete joint distributions.
//!
//! The central object is [`DiscreteJoint`]: a finite joint distribution over
//! named variables. Entropies, mutual information, and conditional mutual
//! information are computed in bits with the 0·log 0 = 0 convention. Every
//! information quantity is available along two independent computation paths
//! (entropy sums and the Kullback-Leibler form); agreement between the paths
//! is part of the verification surface, not just an internal detail.
//!
//! [`verify_identity`] checks the additivity identity this toolkit exists to
//! certify: when an agent's transaction view is T = (C, X) with C a one-time
//! code drawn independently of identity and side information,
//! I(U; T,V_S) − I(U; V_S) = I(U; T | V_S) = I(U; X | V_S),
//! i.e. the code channel contributes nothing to identity leakage and all
//! residual leakage flows through the visible amount.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

/// Canonical variable names used by the identity check and report builders.
pub const VAR_USER: &str = "u";
pub const VAR_SIDE_INFO: &str = "v_s";
pub const VAR_CODE: &str = "c";
pub const VAR_AMOUNT: &str = "x";

/// Probabilities must sum to one within this tolerance.
pub const NORMALIZATION_EPS: f64 = 1e-12;
/// Exact-enumeration identities must hold within this tolerance.
pub const EXACT_EPS: f64 = 1e-9;
/// Plug-in empirical estimates are accepted within this tolerance at 1e5 samples.
pub const EMPIRICAL_EPS: f64 = 0.01;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("unknown variable: {0:?}")]
    UnknownVariable(String),
    #[error("variable {0:?} appears in more than one argument set")]
    VariableOverlap(String),
    #[error("row {row} has arity {found}, expected {expected}")]
    ArityMismatch {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row} has negative probability {p}")]
    NegativeMass { row: usize, p: f64 },
    #[error("probabilities sum to {total}, not 1 within {NORMALIZATION_EPS}")]
    Unnormalized { total: f64 },
    #[error("duplicate support tuple at row {row}")]
    DuplicateRow { row: usize },
    #[error("empty sample")]
    EmptySample,
    #[error("code is not independent of (identity, side info): I((U,V_S);C) = {i_uvs_c}")]
    IndependenceViolated { i_uvs_c: f64 },
}

/// Finite joint distribution over named categorical variables.
#[derive(Debug, Clone)]
pub struct DiscreteJoint {
    variables: Vec<String>,
    rows: Vec<(Vec<String>, f64)>,
}

impl DiscreteJoint {
    /// Build a joint from (tuple, probability) rows, validating arity,
    /// non-negativity, normalization, and support uniqueness.
    pub fn new(
        variables: Vec<String>,
        rows: Vec<(Vec<String>, f64)>,
    ) -> Result<DiscreteJoint, AnalysisError> {
        let arity = variables.len();
        let mut total = 0.0;
        let mut seen = BTreeMap::new();
        for (i, (tuple, p)) in rows.iter().enumerate() {
            if tuple.len() != arity {
                return Err(AnalysisError::ArityMismatch {
                    row: i,
                    expected: arity,
                    found: tuple.len(),
                });
            }
            if *p < 0.0 {
                return Err(AnalysisError::NegativeMass { row: i, p: *p });
            }
            if seen.insert(tuple.clone(), ()).is_some() {
                return Err(AnalysisError::DuplicateRow { row: i });
            }
            total += p;
        }
        if (total - 1.0).abs() > NORMALIZATION_EPS {
            return Err(AnalysisError::Unnormalized { total });
        }
        Ok(DiscreteJoint { variables, rows })
    }

    /// Frequency estimate from observed tuples.
    pub fn from_samples(
        variables: Vec<String>,
        samples: impl IntoIterator<Item = Vec<String>>,
    ) -> Result<DiscreteJoint, AnalysisError> {
        let mut counts: BTreeMap<Vec<String>, u64> = BTreeMap::new();
        let mut n = 0u64;
        for s in samples {
            if s.len() != variables.len() {
                return Err(AnalysisError::ArityMismatch {
                    row: n as usize,
                    expected: variables.len(),
                    found: s.len(),
                });
            }
            *counts.entry(s).or_insert(0) += 1;
            n += 1;
        }
        if n == 0 {
            return Err(AnalysisError::EmptySample);
        }
        let rows = counts
            .into_iter()
            .map(|(tuple, c)| (tuple, c as f64 / n as f64))
            .collect();
        DiscreteJoint::new(variables, rows)
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn support_len(&self) -> usize {
        self.rows.len()
    }

    fn indices(&self, vars: &[&str]) -> Result<Vec<usize>, AnalysisError> {
        vars.iter()
            .map(|v| {
                self.variables
                    .iter()
                    .position(|name| name == v)
                    .ok_or_else(|| AnalysisError::UnknownVariable(v.to_string()))
            })
            .collect()
    }

    fn check_disjoint(sets: &[&[&str]]) -> Result<(), AnalysisError> {
        let mut seen = BTreeMap::new();
        for set in sets {
            for v in *set {
                if seen.insert(*v, ()).is_some() {
                    return Err(AnalysisError::VariableOverlap(v.to_string()));
                }
            }
        }
        Ok(())
    }

    /// Marginal distribution over `vars`, keyed by projected tuple.
    fn marginal(&self, idx: &[usize]) -> BTreeMap<Vec<&str>, f64> {
        let mut out: BTreeMap<Vec<&str>, f64> = BTreeMap::new();
        for (tuple, p) in &self.rows {
            let key: Vec<&str> = idx.iter().map(|&i| tuple[i].as_str()).collect();
            *out.entry(key).or_insert(0.0) += p;
        }
        out
    }

    /// Shannon entropy H(vars) in bits.
    pub fn entropy(&self, vars: &[&str]) -> Result<f64, AnalysisError> {
        let idx = self.indices(vars)?;
        let h = self
            .marginal(&idx)
            .values()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.log2())
            .sum();
        Ok(h)
    }

    /// I(A;B) via the entropy decomposition H(A) + H(B) − H(A,B).
    pub fn mutual_information(&self, a: &[&str], b: &[&str]) -> Result<f64, AnalysisError> {
        Self::check_disjoint(&[a, b])?;
        let ab: Vec<&str> = a.iter().chain(b.iter()).copied().collect();
        Ok(self.entropy(a)? + self.entropy(b)? - self.entropy(&ab)?)
    }

    /// I(A;B) via the Kullback-Leibler form
    /// Σ p(a,b) log2 [ p(a,b) / (p(a) p(b)) ].
    pub fn mutual_information_kl(&self, a: &[&str], b: &[&str]) -> Result<f64, AnalysisError> {
        Self::check_disjoint(&[a, b])?;
        let ia = self.indices(a)?;
        let ib = self.indices(b)?;
        let pa = self.marginal(&ia);
        let pb = self.marginal(&ib);
        let iab: Vec<usize> = ia.iter().chain(ib.iter()).copied().collect();
        let mut total = 0.0;
        for (tuple, pab) in self.marginal(&iab) {
            if pab <= 0.0 {
                continue;
            }
            let ka = tuple[..a.len()].to_vec();
            let kb = tuple[a.len()..].to_vec();
            total += pab * (pab / (pa[&ka] * pb[&kb])).log2();
        }
        Ok(total)
    }

    /// I(A;B|C) via entropies: H(A,C) + H(B,C) − H(A,B,C) − H(C).
    pub fn conditional_mi(
        &self,
        a: &[&str],
        b: &[&str],
        c: &[&str],
    ) -> Result<f64, AnalysisError> {
        Self::check_disjoint(&[a, b, c])?;
        let ac: Vec<&str> = a.iter().chain(c.iter()).copied().collect();
        let bc: Vec<&str> = b.iter().chain(c.iter()).copied().collect();
        let abc: Vec<&str> = a.iter().chain(b.iter()).chain(c.iter()).copied().collect();
        Ok(self.entropy(&ac)? + self.entropy(&bc)? - self.entropy(&abc)? - self.entropy(c)?)
    }

    /// I(A;B|C) via the conditional Kullback-Leibler form
    /// Σ p(a,b,c) log2 [ p(c) p(a,b,c) / (p(a,c) p(b,c)) ].
    pub fn conditional_mi_kl(
        &self,
        a: &[&str],
        b: &[&str],
        c: &[&str],
    ) -> Result<f64, AnalysisError> {
        Self::check_disjoint(&[a, b, c])?;
        let ia = self.indices(a)?;
        let ib = self.indices(b)?;
        let ic = self.indices(c)?;
        let iac: Vec<usize> = ia.iter().chain(ic.iter()).copied().collect();
        let ibc: Vec<usize> = ib.iter().chain(ic.iter()).copied().collect();
        let iabc: Vec<usize> = ia
            .iter()
            .chain(ib.iter())
            .chain(ic.iter())
            .copied()
            .collect();
        let pc = self.marginal(&ic);
        let pac = self.marginal(&iac);
        let pbc = self.marginal(&ibc);
        let mut total = 0.0;
        for (tuple, pabc) in self.marginal(&iabc) {
            if pabc <= 0.0 {
                continue;
            }
            let (na, nb, nc) = (a.len(), b.len(), c.len());
            let ka: Vec<&str> = tuple[..na]
                .iter()
                .chain(tuple[na + nb..na + nb + nc].iter())
                .copied()
                .collect();
            let kb: Vec<&str> = tuple[na..].to_vec();
            let kc = tuple[na + nb..].to_vec();
            total += pabc * (pc[&kc] * pabc / (pac[&ka] * pbc[&kb])).log2();
        }
        Ok(total)
    }

    /// Draw one support tuple according to the joint, for convergence tests
    /// and empirical-mode demonstrations.
    pub fn sampler(&self) -> JointSampler<'_> {
        let mut cumulative = Vec::with_capacity(self.rows.len());
        let mut acc = 0.0;
        for (_, p) in &self.rows {
            acc += p;
            cumulative.push(acc);
        }
        JointSampler {
            joint: self,
            cumulative,
        }
    }
}

/// Cumulative-distribution sampler over a joint's support.
pub struct JointSampler<'a> {
    joint: &'a DiscreteJoint,
    cumulative: Vec<f64>,
}

impl JointSampler<'_> {
    pub fn draw<R: rand::Rng>(&self, rng: &mut R) -> Vec<String> {
        let u: f64 = rng.gen_range(0.0..1.0);
        let idx = self
            .cumulative
            .partition_point(|&c| c <= u)
            .min(self.cumulative.len() - 1);
        self.joint.rows[idx].0.clone()
    }
}

/// All quantities of the additivity identity, with residuals from both
/// computation paths.
#[derive(Debug, Clone, Serialize)]
pub struct IdentityCheck {
    /// I(U; C): code alone against identity.
    pub i_u_c: f64,
    /// I((U,V_S); C): the independence precondition, must be ~0.
    pub i_uvs_c: f64,
    /// I(U; V_S): what side information alone reveals.
    pub i_u_vs: f64,
    /// I(U; T,V_S) with T = (C,X).
    pub i_u_t_vs: f64,
    /// I(U; T | V_S).
    pub i_u_t_given_vs: f64,
    /// I(U; X | V_S): leakage through the visible amount alone.
    pub i_u_x_given_vs: f64,
    /// |(I(U;T,V_S) − I(U;V_S)) − I(U;T|V_S)|.
    pub chain_residual: f64,
    /// |I(U;T|V_S) − I(U;X|V_S)|.
    pub code_collapse_residual: f64,
    /// Largest disagreement between the entropy and KL computation paths.
    pub two_path_residual: f64,
}

/// Verify the identity I(U;T,V_S) − I(U;V_S) = I(U;T|V_S) = I(U;X|V_S) on a
/// joint over variables `u`, `v_s`, `c`, `x` with T = (C,X).
///
/// Fails with `IndependenceViolated` when the code is measurably dependent on
/// identity or side information, since the collapse step is only sound under
/// that premise.
pub fn verify_identity(joint: &DiscreteJoint) -> Result<IdentityCheck, AnalysisError> {
    let u = [VAR_USER];
    let vs = [VAR_SIDE_INFO];
    let c = [VAR_CODE];
    let x = [VAR_AMOUNT];
    let t = [VAR_CODE, VAR_AMOUNT];
    let t_vs = [VAR_CODE, VAR_AMOUNT, VAR_SIDE_INFO];
    let uvs = [VAR_USER, VAR_SIDE_INFO];

    let i_uvs_c = joint.mutual_information(&uvs, &c)?;
    if i_uvs_c > EXACT_EPS {
        return Err(AnalysisError::IndependenceViolated { i_uvs_c });
    }

    let i_u_c = joint.mutual_information(&u, &c)?;
    let i_u_vs = joint.mutual_information(&u, &vs)?;
    let i_u_t_vs = joint.mutual_information(&u, &t_vs)?;
    let i_u_t_given_vs = joint.conditional_mi(&u, &t, &vs)?;
    let i_u_x_given_vs = joint.conditional_mi(&u, &x, &vs)?;

    let two_path_residual = [
        (i_u_c - joint.mutual_information_kl(&u, &c)?).abs(),
        (i_u_vs - joint.mutual_information_kl(&u, &vs)?).abs(),
        (i_u_t_vs - joint.mutual_information_kl(&u, &t_vs)?).abs(),
        (i_u_t_given_vs - joint.conditional_mi_kl(&u, &t, &vs)?).abs(),
        (i_u_x_given_vs - joint.conditional_mi_kl(&u, &x, &vs)?).abs(),
    ]
    .into_iter()
    .fold(0.0f64, f64::max);

    Ok(IdentityCheck {
        i_u_c,
        i_uvs_c,
        i_u_vs,
        i_u_t_vs,
        i_u_t_given_vs,
        i_u_x_given_vs,
        chain_residual: ((i_u_t_vs - i_u_vs) - i_u_t_given_vs).abs(),
        code_collapse_residual: (i_u_t_given_vs - i_u_x_given_vs).abs(),
        two_path_residual,
    })
}

/// Worked example: a merchant of a locally rare ethnicity who moves large
/// amounts, among customers of the majority ethnicity who rarely do.
///
/// U uniform over {mohamed, ali, v1, v2}; observable ethnicity E2 for the
/// first two, E1 for the rest; amount is large with probability 0.9 for
/// mohamed and 0.1 for everyone else; the code is uniform over `code_bits`
/// bits, independent of everything. Seeing (E2, large) makes the customer
/// mohamed with probability 0.9 even though no identifier was transmitted.
pub fn merchant_example_joint(code_bits: u8) -> DiscreteJoint {
    let users: [(&str, &str, f64); 4] = [
        ("mohamed", "E2", 0.9),
        ("ali", "E2", 0.1),
        ("v1", "E1", 0.1),
        ("v2", "E1", 0.1),
    ];
    let n_codes = 1u64 << code_bits;
    let mut rows = Vec::new();
    for (user, ethnicity, p_large) in users {
        for (amount, p_amount) in [("large", p_large), ("small", 1.0 - p_large)] {
            for code in 0..n_codes {
                rows.push((
                    vec![
                        user.to_string(),
                        ethnicity.to_string(),
                        format!("{code:0width$b}", width = code_bits as usize),
                        amount.to_string(),
                    ],
                    0.25 * p_amount / n_codes as f64,
                ));
            }
        }
    }
    DiscreteJoint::new(
        vec![
            VAR_USER.into(),
            VAR_SIDE_INFO.into(),
            VAR_CODE.into(),
            VAR_AMOUNT.into(),
        ],
        rows,
    )
    .expect("example joint is well-formed")
}

/// Half-width-4σ binomial interval around success probability `p` at `n`
/// trials, clamped to [0, 1].
pub fn four_sigma_interval(p: f64, n: u64) -> (f64, f64) {
    let sigma = (p * (1.0 - p) / n as f64).sqrt();
    ((p - 4.0 * sigma).max(0.0), (p + 4.0 * sigma).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn coin() -> DiscreteJoint {
        DiscreteJoint::new(
            vec!["a".into()],
            vec![
                (vec!["h".into()], 0.5),
                (vec!["t".into()], 0.5),
            ],
        )
        .unwrap()
    }

    #[test]
    fn entropy_of_uniform_and_deterministic() {
        assert!((coin().entropy(&["a"]).unwrap() - 1.0).abs() < 1e-15);
        let det = DiscreteJoint::new(vec!["a".into()], vec![(vec!["x".into()], 1.0)]).unwrap();
        assert_eq!(det.entropy(&["a"]).unwrap(), 0.0);
    }

    #[test]
    fn zero_probability_rows_contribute_nothing() {
        let j = DiscreteJoint::new(
            vec!["a".into()],
            vec![
                (vec!["x".into()], 1.0),
                (vec!["y".into()], 0.0),
            ],
        )
        .unwrap();
        assert_eq!(j.entropy(&["a"]).unwrap(), 0.0);
    }

    #[test]
    fn validation_rejects_bad_joints() {
        let e = DiscreteJoint::new(vec!["a".into()], vec![(vec!["x".into()], 0.9)]).unwrap_err();
        assert!(matches!(e, AnalysisError::Unnormalized { .. }));
        let e = DiscreteJoint::new(
            vec!["a".into()],
            vec![(vec!["x".into()], 1.5), (vec!["y".into()], -0.5)],
        )
        .unwrap_err();
        assert!(matches!(e, AnalysisError::NegativeMass { .. }));
        let e = DiscreteJoint::new(
            vec!["a".into()],
            vec![(vec!["x".into()], 0.5), (vec!["x".into()], 0.5)],
        )
        .unwrap_err();
        assert!(matches!(e, AnalysisError::DuplicateRow { .. }));
    }

    #[test]
    fn unknown_variables_are_reported() {
        let e = coin().entropy(&["zz"]).unwrap_err();
        assert_eq!(e, AnalysisError::UnknownVariable("zz".into()));
    }

    #[test]
    fn mi_of_independent_variables_is_zero() {
        let mut rows = Vec::new();
        for a in ["0", "1"] {
            for b in ["x", "y", "z"] {
                rows.push((vec![a.to_string(), b.to_string()], 0.5 / 3.0));
            }
        }
        let j = DiscreteJoint::new(vec!["a".into(), "b".into()], rows).unwrap();
        assert!(j.mutual_information(&["a"], &["b"]).unwrap().abs() < 1e-12);
        assert!(j.mutual_information_kl(&["a"], &["b"]).unwrap().abs() < 1e-12);
    }

    #[test]
    fn mi_of_copied_variable_equals_entropy() {
        let j = DiscreteJoint::new(
            vec!["a".into(), "b".into()],
            vec![
                (vec!["0".into(), "0".into()], 0.25),
                (vec!["1".into(), "1".into()], 0.75),
            ],
        )
        .unwrap();
        let h = j.entropy(&["a"]).unwrap();
        assert!((j.mutual_information(&["a"], &["b"]).unwrap() - h).abs() < 1e-12);
    }

    #[test]
    fn the_two_computation_paths_agree_on_a_skewed_joint() {
        // Arbitrary dependent three-variable joint.
        let rows = vec![
            (vec!["0", "0", "0"], 0.20),
            (vec!["0", "0", "1"], 0.05),
            (vec!["0", "1", "0"], 0.10),
            (vec!["0", "1", "1"], 0.15),
            (vec!["1", "0", "0"], 0.02),
            (vec!["1", "0", "1"], 0.18),
            (vec!["1", "1", "0"], 0.22),
            (vec!["1", "1", "1"], 0.08),
        ];
        let j = DiscreteJoint::new(
            vec!["a".into(), "b".into(), "c".into()],
            rows.into_iter()
                .map(|(t, p)| (t.into_iter().map(String::from).collect(), p))
                .collect(),
        )
        .unwrap();
        let d1 = (j.mutual_information(&["a"], &["b"]).unwrap()
            - j.mutual_information_kl(&["a"], &["b"]).unwrap())
        .abs();
        let d2 = (j.conditional_mi(&["a"], &["b"], &["c"]).unwrap()
            - j.conditional_mi_kl(&["a"], &["b"], &["c"]).unwrap())
        .abs();
        assert!(d1 < 1e-12, "MI paths disagree by {d1}");
        assert!(d2 < 1e-12, "CMI paths disagree by {d2}");
    }

    #[test]
    fn overlapping_argument_sets_are_rejected() {
        let j = coin();
        let e = j.mutual_information(&["a"], &["a"]).unwrap_err();
        assert_eq!(e, AnalysisError::VariableOverlap("a".into()));
    }

    // Frozen from an independent 30-digit computation of the worked example:
    // I(U;V_S) = 1, I(U;X|V_S) = 0.5 (1 − h(0.9)) = 0.2655022032053594.
    const EXPECTED_I_U_X_GIVEN_VS: f64 = 0.2655022032053594;

    #[test]
    fn worked_example_matches_frozen_oracle_values() {
        let j = merchant_example_joint(2);
        let check = verify_identity(&j).unwrap();
        assert!((check.i_u_vs - 1.0).abs() < 1e-9);
        assert!((check.i_u_x_given_vs - EXPECTED_I_U_X_GIVEN_VS).abs() < 1e-9);
        assert!((check.i_u_t_given_vs - EXPECTED_I_U_X_GIVEN_VS).abs() < 1e-9);
        assert!((check.i_u_t_vs - (1.0 + EXPECTED_I_U_X_GIVEN_VS)).abs() < 1e-9);
        assert!(check.i_u_c.abs() < 1e-9);
        assert!(check.chain_residual < 1e-9);
        assert!(check.code_collapse_residual < 1e-9);
        assert!(check.two_path_residual < 1e-9);
    }

    #[test]
    fn identity_verification_rejects_dependent_codes() {
        // Code copies the user: maximal dependence.
        let rows = vec![
            (
                vec!["u0".into(), "s".into(), "0".into(), "x".into()],
                0.5,
            ),
            (
                vec!["u1".into(), "s".into(), "1".into(), "x".into()],
                0.5,
            ),
        ];
        let j = DiscreteJoint::new(
            vec![
                VAR_USER.into(),
                VAR_SIDE_INFO.into(),
                VAR_CODE.into(),
                VAR_AMOUNT.into(),
            ],
            rows,
        )
        .unwrap();
        let e = verify_identity(&j).unwrap_err();
        assert!(matches!(e, AnalysisError::IndependenceViolated { .. }));
    }

    #[test]
    fn empirical_estimate_converges_toward_exact_value() {
        let j = merchant_example_joint(2);
        let exact = j.conditional_mi(&[VAR_USER], &[VAR_AMOUNT], &[VAR_SIDE_INFO]).unwrap();
        let sampler = j.sampler();
        let err_at = |n: usize, seed: u64| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let samples: Vec<_> = (0..n).map(|_| sampler.draw(&mut rng)).collect();
            let emp = DiscreteJoint::from_samples(j.variables().to_vec(), samples).unwrap();
            (emp.conditional_mi(&[VAR_USER], &[VAR_AMOUNT], &[VAR_SIDE_INFO])
                .unwrap()
                - exact)
                .abs()
        };
        let coarse = err_at(1_000, 11);
        let fine = err_at(100_000, 11);
        assert!(fine < coarse, "error did not shrink: {coarse} -> {fine}");
        assert!(fine < EMPIRICAL_EPS);
    }

    #[test]
    fn sampler_distributes_mass_roughly_correctly() {
        let j = coin();
        let sampler = j.sampler();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let heads = (0..10_000)
            .filter(|_| sampler.draw(&mut rng)[0] == "h")
            .count();
        assert!((4_500..=5_500).contains(&heads), "heads = {heads}");
    }

    #[test]
    fn four_sigma_interval_clamps_and_centers() {
        let (lo, hi) = four_sigma_interval(0.00390625, 1 << 18);
        assert!(lo > 0.0033 && lo < 0.00390625);
        assert!(hi < 0.0045 && hi > 0.00390625);
        let (lo, _) = four_sigma_interval(0.0000001, 100);
        assert_eq!(lo, 0.0);
    }
}
