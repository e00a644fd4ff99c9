use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use privdiv_core::divergence::{kde_kl, kl_xy_plain, KdeConfig};
use privdiv_core::eval::{delta_eval, DeltaConfig};
use privdiv_core::par::Execution;
use privdiv_core::plain_ml::SgdHyperparams;
use privdiv_core::synth::{generate_sites, GeneratorConfig};

const MODES: [(Execution, &str); 2] = [(Execution::Sequential, "sequential"), (Execution::Parallel, "parallel")];

fn plaintext_grid(c: &mut Criterion) {
    let (sites, manifest) = generate_sites(&GeneratorConfig::default().with_samples(300)).unwrap();
    let pairs: Vec<(usize, usize)> = (0..sites.len())
        .flat_map(|i| (0..sites.len()).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    let hp = SgdHyperparams::plaintext();
    let mut g = c.benchmark_group("kl_xy_plain_grid_132");
    g.sample_size(10);
    for (mode, name) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &mode| {
            b.iter(|| mode.map(&pairs, |&(i, j)| kl_xy_plain(&sites[i], &sites[j], &manifest.bounds, &hp, 0).unwrap().value))
        });
    }
    g.finish();
}

fn kde(c: &mut Criterion) {
    let (sites, _) = generate_sites(&GeneratorConfig::default().with_samples(600)).unwrap();
    let mut g = c.benchmark_group("kde_kl_600");
    g.sample_size(10);
    for (mode, name) in MODES {
        let cfg = KdeConfig {
            execution: mode,
            ..KdeConfig::default()
        };
        g.bench_with_input(BenchmarkId::from_parameter(name), &cfg, |b, cfg| {
            b.iter(|| kde_kl(&sites[0], &sites[4], cfg).unwrap().value)
        });
    }
    g.finish();
}

fn delta(c: &mut Criterion) {
    let (sites, _) = generate_sites(&GeneratorConfig::default().with_samples(600)).unwrap();
    let mut g = c.benchmark_group("delta_eval_5x5");
    g.sample_size(10);
    for (mode, name) in MODES {
        let cfg = DeltaConfig {
            execution: mode,
            ..DeltaConfig::default()
        };
        g.bench_with_input(BenchmarkId::from_parameter(name), &cfg, |b, cfg| {
            b.iter(|| delta_eval(&sites[0], &[&sites[1], &sites[2]], cfg, 0).unwrap().delta)
        });
    }
    g.finish();
}

criterion_group!(benches, plaintext_grid, kde, delta);
criterion_main!(benches);
