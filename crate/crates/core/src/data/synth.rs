//! Synthetic stand-in for backbone features from heterogeneous clients.
//!
//! Each class has a random unit-norm prototype in `R^D`; a sample is its
//! prototype plus isotropic Gaussian noise. Classes are grouped into `G`
//! contiguous parent categories. A fraction `ρ` of the clients (the
//! heterogeneous group) holds `k` classes from a single parent category; the
//! remaining clients draw every sample uniformly from all classes, so at
//! `ρ = 0` no client differs from the global distribution.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

use super::{ClientSet, FeatureRecord, Role, SplitMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub num_groups: usize,
    pub feature_dim: usize,
    pub clients_train: usize,
    pub clients_val: usize,
    pub clients_test: usize,
    pub samples_per_client: usize,
    /// Inclusive range for the number of classes a restricted client holds.
    pub classes_per_client: (usize, usize),
    pub noise_sigma: f64,
    /// Fraction of clients restricted to one parent category.
    pub heterogeneity: f64,
    pub split_mode: SplitMode,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 100,
            num_groups: 10,
            feature_dim: 64,
            clients_train: 200,
            clients_val: 50,
            clients_test: 50,
            samples_per_client: 40,
            classes_per_client: (5, 15),
            noise_sigma: 0.3,
            heterogeneity: 1.0,
            split_mode: SplitMode::ByClient,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn group_size(&self) -> usize {
        self.num_classes / self.num_groups
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_classes", self.num_classes),
            ("num_groups", self.num_groups),
            ("feature_dim", self.feature_dim),
            ("clients_train", self.clients_train),
            ("samples_per_client", self.samples_per_client),
            ("classes_per_client min", self.classes_per_client.0),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Spec(format!("{name} must be positive")));
        }
        if self.split_mode == SplitMode::ByClient && (self.clients_val == 0 || self.clients_test == 0) {
            return Err(Error::Spec("by-client split needs validation and test clients".into()));
        }
        if self.split_mode == SplitMode::WithinClient && self.samples_per_client < 3 {
            return Err(Error::Spec(
                "within-client split needs at least 3 samples per client".into(),
            ));
        }
        if !self.num_classes.is_multiple_of(self.num_groups) {
            return Err(Error::Spec(format!(
                "{} classes cannot be split into {} equal parent categories",
                self.num_classes, self.num_groups
            )));
        }
        let (kmin, kmax) = self.classes_per_client;
        if kmin > kmax || kmax > self.num_classes {
            return Err(Error::Spec(format!(
                "classes per client range [{kmin}, {kmax}] is invalid for {} classes",
                self.num_classes
            )));
        }
        if !(0.0..=1.0).contains(&self.heterogeneity) {
            return Err(Error::Spec("heterogeneity ratio must lie in [0, 1]".into()));
        }
        if self.heterogeneity > 0.0 && kmin > self.group_size() {
            return Err(Error::Spec(format!(
                "restricted clients need at least {kmin} classes but a parent category has {}",
                self.group_size()
            )));
        }
        if self.noise_sigma.is_nan() || self.noise_sigma < 0.0 {
            return Err(Error::Spec("noise sigma must be non-negative".into()));
        }
        Ok(())
    }
}

/// Output of [`generate`].
#[derive(Clone, Debug)]
pub struct Generated {
    pub train: ClientSet,
    pub val: ClientSet,
    pub test: ClientSet,
    /// `C×D` unit-norm class prototypes.
    pub prototypes: Matrix<f32>,
    /// Parent category of each restricted client; absent for unrestricted ones.
    pub client_groups: std::collections::BTreeMap<String, usize>,
}

enum ClassSource {
    Restricted { group: usize, classes: Vec<usize> },
    Global,
}

pub fn generate(spec: &SyntheticSpec) -> Result<Generated> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (c, d) = (spec.num_classes, spec.feature_dim);

    let mut prototypes = Matrix::<f32>::zeros(c, d);
    for k in 0..c {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        for (dst, x) in prototypes.row_mut(k).iter_mut().zip(&v) {
            *dst = (x / norm) as f32;
        }
    }
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Spec(e.to_string()))?;

    let roles: Vec<(Role, usize)> = match spec.split_mode {
        SplitMode::ByClient => vec![
            (Role::Train, spec.clients_train),
            (Role::Val, spec.clients_val),
            (Role::Test, spec.clients_test),
        ],
        SplitMode::WithinClient => vec![(Role::Train, spec.clients_train)],
    };

    let mut sets = [
        ClientSet::new(Role::Train, spec.split_mode),
        ClientSet::new(Role::Val, spec.split_mode),
        ClientSet::new(Role::Test, spec.split_mode),
    ];
    let mut client_groups = std::collections::BTreeMap::new();
    let mut next_id = 0usize;
    let group_size = spec.group_size();

    for (role, n_clients) in roles {
        let n_restricted = (spec.heterogeneity * n_clients as f64).round() as usize;
        let mut restricted = vec![false; n_clients];
        restricted[..n_restricted].iter_mut().for_each(|r| *r = true);
        restricted.shuffle(&mut rng);

        for is_restricted in restricted {
            let id = format!("c{next_id:05}");
            next_id += 1;
            let source = if is_restricted {
                let group = rng.gen_range(0..spec.num_groups);
                let kmax = spec.classes_per_client.1.min(group_size);
                let k = rng.gen_range(spec.classes_per_client.0..=kmax);
                let mut pool: Vec<usize> = (group * group_size..(group + 1) * group_size).collect();
                pool.shuffle(&mut rng);
                pool.truncate(k);
                pool.sort_unstable();
                client_groups.insert(id.clone(), group);
                ClassSource::Restricted { group, classes: pool }
            } else {
                ClassSource::Global
            };

            let mut records = Vec::with_capacity(spec.samples_per_client);
            for _ in 0..spec.samples_per_client {
                let label = match &source {
                    ClassSource::Restricted { classes, .. } => classes[rng.gen_range(0..classes.len())],
                    ClassSource::Global => rng.gen_range(0..c),
                };
                let features = prototypes
                    .row(label)
                    .iter()
                    .map(|&p| {
                        if spec.noise_sigma == 0.0 {
                            p
                        } else {
                            (p as f64 + noise.sample(&mut rng)) as f32
                        }
                    })
                    .collect();
                records.push(FeatureRecord {
                    client_id: id.clone(),
                    label,
                    features,
                });
            }
            if let ClassSource::Restricted { group, .. } = source {
                debug_assert!(records.iter().all(|r| r.label / group_size == group));
            }

            match spec.split_mode {
                SplitMode::ByClient => {
                    let idx = match role {
                        Role::Train => 0,
                        Role::Val => 1,
                        Role::Test => 2,
                    };
                    records.into_iter().for_each(|r| sets[idx].push(r));
                }
                SplitMode::WithinClient => {
                    let (n_train, n_val) = within_client_sizes(records.len());
                    for (i, r) in records.into_iter().enumerate() {
                        let idx = if i < n_train {
                            0
                        } else if i < n_train + n_val {
                            1
                        } else {
                            2
                        };
                        sets[idx].push(r);
                    }
                }
            }
        }
    }

    let [train, val, test] = sets;
    Ok(Generated {
        train,
        val,
        test,
        prototypes,
        client_groups,
    })
}

/// 60/20/20 split of one client's records, each part non-empty.
fn within_client_sizes(n: usize) -> (usize, usize) {
    let n_val = (n / 5).max(1);
    let n_test = (n / 5).max(1);
    (n - n_val - n_test, n_val)
}
