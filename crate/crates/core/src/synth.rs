//! Synthetic multi-site data with controllable divergence.
//!
//! Sites come in clusters. All sites of a cluster share a mean shift, a
//! covariance scale and a labeling concept, so they are distribution-matched
//! and each is a planted beneficial partner for the others. Clusters differ in
//! where their mean sits and in how the shared teacher is tilted.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{FeatureBounds, Matrix, SiteDataset, DEMOGRAPHICS};
use crate::error::{CoreError, Result};
use crate::par::Execution;
use crate::plain_ml::sigmoid;

/// Site ids are `site00`, `site01`, ...
pub fn site_id(i: usize) -> String {
    format!("site{i:02}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n_sites: usize,
    /// Rows per site; identical for every site.
    pub samples_per_site: usize,
    pub d: usize,
    /// Cluster of each site.
    pub clusters: Vec<usize>,
    /// Mean-shift magnitude per site.
    pub shift_scale: Vec<f64>,
    /// Covariance multiplier per site.
    pub cov_scale: Vec<f64>,
    /// Label flip probability per site, in `[0, 0.5)`.
    pub label_noise: Vec<f64>,
    /// Distribution-matched partners per source. Empty means "derive from
    /// clusters".
    pub beneficial_map: BTreeMap<String, Vec<String>>,
    /// Tilt of each cluster's teacher towards its mean shift.
    pub concept_shift: f64,
    /// Correlation between the demographic latents and the covariates.
    pub demographic_correlation: f64,
    /// Norm of the shared teacher weights.
    pub teacher_norm: f64,
    /// Correlation between neighbouring features in the base covariance.
    pub feature_correlation: f64,
    pub master_seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> GeneratorConfig {
        let pairs = |v: [f64; 6]| v.iter().flat_map(|&x| [x, x]).collect::<Vec<_>>();
        GeneratorConfig {
            n_sites: 12,
            samples_per_site: 3000,
            d: 20,
            clusters: (0..12).map(|i| i / 2).collect(),
            shift_scale: pairs([0.0, 0.4, 0.8, 1.2, 1.6, 2.0]),
            cov_scale: pairs([1.0, 1.15, 0.9, 1.25, 0.85, 1.1]),
            label_noise: vec![0.05; 12],
            beneficial_map: BTreeMap::new(),
            concept_shift: 0.5,
            demographic_correlation: 0.3,
            teacher_norm: 2.0,
            feature_correlation: 0.2,
            master_seed: 0,
        }
    }
}

impl GeneratorConfig {
    /// Same grid with `k` rows per site.
    pub fn with_samples(mut self, k: usize) -> GeneratorConfig {
        self.samples_per_site = k;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> GeneratorConfig {
        self.master_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::ConfigInvalid(m));
        if self.n_sites < 2 {
            return bad(format!("need at least 2 sites, got {}", self.n_sites));
        }
        if self.samples_per_site < 2 || self.d == 0 {
            return bad("samples_per_site >= 2 and d >= 1 required".into());
        }
        for (name, len) in [
            ("clusters", self.clusters.len()),
            ("shift_scale", self.shift_scale.len()),
            ("cov_scale", self.cov_scale.len()),
            ("label_noise", self.label_noise.len()),
        ] {
            if len != self.n_sites {
                return bad(format!("{name} has {len} entries for {} sites", self.n_sites));
            }
        }
        if self.shift_scale.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return bad("shift_scale entries must be finite and >= 0".into());
        }
        if self.cov_scale.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return bad("cov_scale entries must be > 0".into());
        }
        if self.label_noise.iter().any(|p| !(0.0..0.5).contains(p)) {
            return bad("label_noise entries must lie in [0, 0.5)".into());
        }
        if !(0.0..=1.0).contains(&self.demographic_correlation) {
            return bad("demographic_correlation must lie in [0, 1]".into());
        }
        if !(-0.9..=0.9).contains(&self.feature_correlation) {
            return bad("feature_correlation must lie in [-0.9, 0.9]".into());
        }
        if !self.concept_shift.is_finite() || !self.teacher_norm.is_finite() {
            return bad("concept_shift and teacher_norm must be finite".into());
        }
        for (src, partners) in &self.beneficial_map {
            let i = self.site_index(src)?;
            for p in partners {
                let j = self.site_index(p)?;
                if i == j || !self.matched(i, j) {
                    return bad(format!("{p} is not distribution-matched to {src}"));
                }
            }
        }
        Ok(())
    }

    fn site_index(&self, id: &str) -> Result<usize> {
        (0..self.n_sites)
            .find(|&i| site_id(i) == id)
            .ok_or_else(|| CoreError::ConfigInvalid(format!("unknown site `{id}`")))
    }

    fn matched(&self, i: usize, j: usize) -> bool {
        self.clusters[i] == self.clusters[j]
            && self.shift_scale[i] == self.shift_scale[j]
            && self.cov_scale[i] == self.cov_scale[j]
            && self.label_noise[i] == self.label_noise[j]
    }

    /// The configured map, or every matched site of the same cluster.
    pub fn resolved_beneficial_map(&self) -> BTreeMap<String, Vec<String>> {
        if !self.beneficial_map.is_empty() {
            return self.beneficial_map.clone();
        }
        (0..self.n_sites)
            .map(|i| {
                let partners = (0..self.n_sites)
                    .filter(|&j| j != i && self.matched(i, j))
                    .map(site_id)
                    .collect();
                (site_id(i), partners)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteTruth {
    pub site_id: String,
    pub cluster: usize,
    pub mean: Vec<f64>,
    pub cov_scale: f64,
    pub label_noise: f64,
    pub teacher: Vec<f64>,
    pub intercept: f64,
    pub seed: u64,
}

/// Ground truth written next to the site files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub generator: GeneratorConfig,
    pub beneficial_map: BTreeMap<String, Vec<String>>,
    /// Public clipping bounds for secure scoring, fixed by the config alone.
    pub bounds: FeatureBounds,
    pub sites: Vec<SiteTruth>,
}

impl Manifest {
    pub fn partners(&self, source: &str) -> &[String] {
        self.beneficial_map.get(source).map(Vec::as_slice).unwrap_or(&[])
    }
}

fn unit_vector(rng: &mut ChaCha12Rng, d: usize) -> DVector<f64> {
    loop {
        let v: DVector<f64> = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

/// Standard-normal quantile cut points splitting mass into `k` equal parts.
fn normal_cuts(k: usize) -> Vec<f64> {
    use statrs::distribution::{ContinuousCDF, Normal};
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    (1..k).map(|i| n.inverse_cdf(i as f64 / k as f64)).collect()
}

pub fn generate_sites(cfg: &GeneratorConfig) -> Result<(Vec<SiteDataset>, Manifest)> {
    generate_sites_with(cfg, Execution::default())
}

pub fn generate_sites_with(
    cfg: &GeneratorConfig,
    exec: Execution,
) -> Result<(Vec<SiteDataset>, Manifest)> {
    cfg.validate()?;
    let d = cfg.d;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.master_seed);
    let teacher = unit_vector(&mut rng, d) * cfg.teacher_norm;
    let n_clusters = cfg.clusters.iter().max().map_or(0, |m| m + 1);
    let directions: Vec<DVector<f64>> = (0..n_clusters).map(|_| unit_vector(&mut rng, d)).collect();
    let demo_dirs: Vec<DVector<f64>> = DEMOGRAPHICS.iter().map(|_| unit_vector(&mut rng, d)).collect();
    let chol = DMatrix::from_fn(d, d, |i, j| cfg.feature_correlation.powi((i as i32 - j as i32).abs()))
        .cholesky()
        .ok_or_else(|| CoreError::ConfigInvalid("base covariance is not positive definite".into()))?
        .l();

    let truths: Vec<SiteTruth> = (0..cfg.n_sites)
        .map(|i| {
            let c = cfg.clusters[i];
            let mean = &directions[c] * cfg.shift_scale[i];
            let w = &teacher + &mean * cfg.concept_shift;
            let id = site_id(i);
            let seed = privdiv_mpc::share::derive_id(
                cfg.master_seed,
                &id.bytes().map(u64::from).collect::<Vec<_>>(),
            );
            SiteTruth {
                intercept: -w.dot(&mean),
                site_id: id,
                cluster: c,
                mean: mean.iter().copied().collect(),
                cov_scale: cfg.cov_scale[i],
                label_noise: cfg.label_noise[i],
                teacher: w.iter().copied().collect(),
                seed,
            }
        })
        .collect();

    let rho = cfg.demographic_correlation;
    let sites = exec.try_map(&truths, |t| {
        let mut rng = ChaCha12Rng::seed_from_u64(t.seed);
        let k = cfg.samples_per_site;
        let sd = t.cov_scale.sqrt();
        let mean = DVector::from_column_slice(&t.mean);
        let w = DVector::from_column_slice(&t.teacher);
        // Site-level demographic offsets, independent of the covariate shift.
        let offsets: Vec<f64> = DEMOGRAPHICS.iter().map(|_| rng.random_range(-0.8..0.8)).collect();
        let cuts: Vec<Vec<f64>> = DEMOGRAPHICS.iter().map(|(_, k)| normal_cuts(*k)).collect();
        let mut data = Vec::with_capacity(k * d);
        let mut y = Vec::with_capacity(k);
        let mut demo: Vec<Vec<u32>> = vec![Vec::with_capacity(k); DEMOGRAPHICS.len()];
        for _ in 0..k {
            let z: DVector<f64> = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
            let x = &mean + &chol * z * sd;
            let p = sigmoid(w.dot(&x) + t.intercept);
            let mut label = rng.random_bool(p);
            if rng.random_bool(t.label_noise) {
                label = !label;
            }
            y.push(label as u8);
            for (a, dir) in demo_dirs.iter().enumerate() {
                let e: f64 = StandardNormal.sample(&mut rng);
                let latent = rho * dir.dot(&x) + (1.0 - rho * rho).sqrt() * e + offsets[a];
                demo[a].push(cuts[a].iter().filter(|&&c| latent > c).count() as u32);
            }
            data.extend(x.iter());
        }
        let demographics = DEMOGRAPHICS
            .iter()
            .zip(demo)
            .map(|((name, _), codes)| (name.to_string(), codes))
            .collect();
        SiteDataset::new(t.site_id.clone(), Matrix::new(k, d, data)?, y, demographics)
    })?;

    let max_sd = cfg.cov_scale.iter().cloned().fold(0.0, f64::max).sqrt();
    let reach = 3.0 * max_sd;
    let lo = (0..d)
        .map(|j| truths.iter().map(|t| t.mean[j]).fold(f64::INFINITY, f64::min) - reach)
        .collect();
    let hi = (0..d)
        .map(|j| truths.iter().map(|t| t.mean[j]).fold(f64::NEG_INFINITY, f64::max) + reach)
        .collect();
    let manifest = Manifest {
        generator: cfg.clone(),
        beneficial_map: cfg.resolved_beneficial_map(),
        bounds: FeatureBounds::new(lo, hi)?,
        sites: truths,
    };
    Ok((sites, manifest))
}
