//! Disorder, imbalance and validity checks for laws and sampled environments.

use super::{Direction, EnvLaw, Environment, SignVector, SiteKernel};
use crate::Real;

/// What a disorder or imbalance measurement is taken over.
#[derive(Debug, Clone, Copy)]
pub enum AuditTarget<'a, T> {
    Law(&'a EnvLaw<T>),
    /// A sampled environment. Without a mean kernel the mean is estimated
    /// from the window and the result is flagged.
    Env { env: &'a Environment<T>, mean: Option<&'a SiteKernel<T>> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measured<T> {
    pub value: T,
    pub mean_estimated: bool,
}

fn window_mean<T: Real>(env: &Environment<T>) -> Vec<T> {
    let d2 = 2 * env.window().dim();
    let n = T::of_usize(env.window().len());
    let mut acc = vec![T::zero(); d2];
    for (_, k) in env.sites() {
        acc.iter_mut().zip(k).for_each(|(a, &p)| *a = *a + p);
    }
    acc.into_iter().map(|a| a / n).collect()
}

fn resolve_mean<T: Real>(env: &Environment<T>, mean: Option<&SiteKernel<T>>) -> (Vec<T>, bool) {
    match mean {
        Some(m) => (m.as_slice().to_vec(), false),
        None => (window_mean(env), true),
    }
}

/// `max |omega(x, e) / E omega(x, e) - 1|` over the target.
pub fn disorder_of<T: Real>(target: AuditTarget<'_, T>) -> Measured<T> {
    match target {
        AuditTarget::Law(law) => Measured { value: law.disorder(), mean_estimated: false },
        AuditTarget::Env { env, mean } => {
            let (m, estimated) = resolve_mean(env, mean);
            let value = env
                .sites()
                .flat_map(|(_, k)| k.iter().zip(&m).map(|(&p, &mu)| (p / mu - T::one()).abs()).collect::<Vec<_>>())
                .fold(T::zero(), T::max);
            Measured { value, mean_estimated: estimated }
        }
    }
}

/// `max |sum_j omega(x, s_j e_j) / sum_j E omega(x, s_j e_j) - 1|` over the target.
pub fn imbalance_of<T: Real>(target: AuditTarget<'_, T>, s: &SignVector) -> Measured<T> {
    match target {
        AuditTarget::Law(law) => Measured { value: law.imbalance(s), mean_estimated: false },
        AuditTarget::Env { env, mean } => {
            let (m, estimated) = resolve_mean(env, mean);
            let dirs = s.allowed();
            let denom: T = dirs.iter().map(|e| m[e.index()]).sum();
            let value = env
                .sites()
                .map(|(_, k)| (dirs.iter().map(|e| k[e.index()]).sum::<T>() / denom - T::one()).abs())
                .fold(T::zero(), T::max);
            Measured { value, mean_estimated: estimated }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    Normalization { sum: f64 },
    Ellipticity { direction: Direction, prob: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub site: Vec<i64>,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Lists normalization (`|sum - 1| > tol`) and ellipticity (`p < kappa`)
/// violations over the window.
pub fn validate_environment<T: Real>(env: &Environment<T>, kappa: T) -> ValidationReport {
    let tol = SiteKernel::<T>::tolerance();
    let mut violations = Vec::new();
    for (x, k) in env.sites() {
        let sum: T = k.iter().copied().sum();
        if (sum - T::one()).abs() > tol {
            violations.push(Violation { site: x.clone(), kind: ViolationKind::Normalization { sum: sum.to_f64_lossy() } });
        }
        for (i, &p) in k.iter().enumerate() {
            if p < kappa {
                violations.push(Violation {
                    site: x.clone(),
                    kind: ViolationKind::Ellipticity { direction: Direction::from_index(i), prob: p.to_f64_lossy() },
                });
            }
        }
    }
    ValidationReport { violations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{make_iid_law, sample_environment, Atom, BoundaryPolicy, MarginalFamily, Window};

    fn env_from(d: usize, probs: Vec<f64>) -> Environment<f64> {
        let n = probs.len() / (2 * d);
        Environment::from_table(Window::new(vec![0; d], {
            let mut s = vec![1; d];
            s[0] = n;
            s
        }).unwrap(), probs, BoundaryPolicy::Strict, None)
        .unwrap()
    }

    #[test]
    fn deterministic_environment_has_zero_disorder_and_imbalance() {
        let k = SiteKernel::new(vec![0.4, 0.1, 0.3, 0.2]).unwrap();
        let env = Environment::homogeneous(Window::centered(2, 3), &k, BoundaryPolicy::MeanFill);
        let t = AuditTarget::Env { env: &env, mean: Some(&k) };
        assert_eq!(disorder_of(t).value, 0.0);
        assert_eq!(imbalance_of(t, &SignVector::all_positive(2)).value, 0.0);
        let est = disorder_of(AuditTarget::Env { env: &env, mean: None });
        assert!(est.mean_estimated && est.value < 1e-15);
    }

    #[test]
    fn two_point_disorder_scan() {
        let law = make_iid_law::<f64>(1, 0.2, SiteKernel::uniform(1), MarginalFamily::two_point(), 0.2).unwrap();
        let env = sample_environment(&law, &Window::centered(1, 50), 3).unwrap();
        let m = law.mean_kernel();
        let dis = disorder_of(AuditTarget::Env { env: &env, mean: Some(m) }).value;
        assert!((dis - 0.2).abs() < 1e-12);
        assert!((disorder_of(AuditTarget::Law(&law)).value - 0.2).abs() < 1e-15);
    }

    #[test]
    fn uniform_interval_disorder_order_statistics() {
        let law = make_iid_law::<f64>(1, 0.2, SiteKernel::uniform(1), MarginalFamily::uniform_interval(), 0.1).unwrap();
        let env = sample_environment(&law, &Window::new(vec![0], vec![100]).unwrap(), 2024).unwrap();
        let dis = disorder_of(AuditTarget::Env { env: &env, mean: Some(law.mean_kernel()) }).value;
        assert!(dis > 0.09 && dis <= 0.1 + 1e-15, "{dis}");
    }

    #[test]
    fn mass_permutation_within_orthant_has_zero_imbalance() {
        // Mass moves between +e1 and +e2 (and between -e1 and -e2): axial sums fixed.
        let fam = MarginalFamily::FiniteSupport {
            atoms: vec![
                Atom { weight: 0.5, shape: vec![1.0, 1.0, -1.0, -1.0] },
                Atom { weight: 0.5, shape: vec![-1.0, -1.0, 1.0, 1.0] },
            ],
        };
        let law = make_iid_law::<f64>(2, 0.1, SiteKernel::uniform(2), fam, 0.4).unwrap();
        let s = SignVector::all_positive(2);
        assert_eq!(law.imbalance(&s), 0.0);
        let env = sample_environment(&law, &Window::centered(2, 6), 5).unwrap();
        let t = AuditTarget::Env { env: &env, mean: Some(law.mean_kernel()) };
        assert!(imbalance_of(t, &s).value < 1e-15);
        assert!((disorder_of(t).value - 0.4).abs() < 1e-12);
    }

    #[test]
    fn same_factor_on_orthant_gives_full_imbalance() {
        // Default pattern in d=2 perturbs +e1 and +e2 by the same factor.
        let law = make_iid_law::<f64>(2, 0.1, SiteKernel::uniform(2), MarginalFamily::two_point(), 0.2).unwrap();
        let s = SignVector::all_positive(2);
        assert!((law.imbalance(&s) - 0.2).abs() < 1e-15);
        let env = sample_environment(&law, &Window::centered(2, 6), 5).unwrap();
        assert!((imbalance_of(AuditTarget::Env { env: &env, mean: Some(law.mean_kernel()) }, &s).value - 0.2).abs() < 1e-12);
    }

    #[test]
    fn validation_report() {
        let env = env_from(1, vec![0.5, 0.5, 0.6, 0.4]);
        assert!(validate_environment(&env, 0.2).is_valid());
        let env = env_from(1, vec![0.5, 0.5, 0.1, 0.9]);
        let r = validate_environment(&env, 0.2);
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].site, vec![1]);
        assert!(matches!(r.violations[0].kind, ViolationKind::Ellipticity { .. }));
        let env = env_from(1, vec![0.505, 0.505, 0.5, 0.5]);
        let r = validate_environment(&env, 0.2);
        assert_eq!(r.violations.len(), 1);
        assert!(matches!(r.violations[0].kind, ViolationKind::Normalization { .. }));
    }
}
