use std::hint::black_box;

use contrastive_bench::{ArFixture, RingFixture};
use contrastive_core::estimators::{cnce_gradient, mh_cnce_gradient, mlis_gradient, rnce_gradient};
use contrastive_core::kernels::{
    cd1_rnce_gradient, cnce_kernel_step, persistent_pairwise_gradient, AcceptanceRule, ChainStore,
};
use contrastive_core::proposals::ConditionalProposal;
use contrastive_core::rng::seeded;
use contrastive_core::smc::{smc_rnce_gradient, smc_sweep, ResamplePolicy};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const J: usize = 20;

fn marginal_estimators(c: &mut Criterion) {
    let mut g = c.benchmark_group("marginal");
    for dim in [4, 8] {
        let f = ArFixture::new(dim, 3);
        let noise = f.noise(J, &mut seeded(5));
        g.bench_with_input(BenchmarkId::new("ml-is", dim), &dim, |b, _| {
            b.iter(|| {
                mlis_gradient(&f.model, &f.theta, &f.proposal, black_box(&f.x0), &noise).unwrap()
            })
        });
        g.bench_with_input(BenchmarkId::new("rnce", dim), &dim, |b, _| {
            b.iter(|| {
                rnce_gradient(&f.model, &f.theta, &f.proposal, black_box(&f.x0), &noise).unwrap()
            })
        });
        let mut rng = seeded(7);
        g.bench_with_input(BenchmarkId::new("cd1-cis", dim), &dim, |b, _| {
            b.iter(|| {
                cd1_rnce_gradient(
                    &f.model,
                    &f.theta,
                    &f.proposal,
                    black_box(&f.x0),
                    J,
                    &mut rng,
                )
                .unwrap()
            })
        });
    }
    g.finish();
}

fn conditional_estimators(c: &mut Criterion) {
    let f = RingFixture::new(3);
    let mut rng = seeded(5);
    let noise: Vec<_> = (0..5)
        .map(|_| f.proposal.sample_cond(&f.x0, &mut rng))
        .collect();
    let mut g = c.benchmark_group("conditional");
    g.bench_function("cnce", |b| {
        b.iter(|| cnce_gradient(&f.model, &f.theta, &f.proposal, black_box(&f.x0), &noise).unwrap())
    });
    g.bench_function("mh-cnce", |b| {
        b.iter(|| {
            mh_cnce_gradient(&f.model, &f.theta, &f.proposal, black_box(&f.x0), &noise).unwrap()
        })
    });
    g.bench_function("barker-step", |b| {
        b.iter(|| {
            cnce_kernel_step(&f.model, &f.theta, &f.proposal, black_box(&f.x0), &mut rng).unwrap()
        })
    });
    let mut store = ChainStore::new();
    g.bench_function("p-cnce", |b| {
        b.iter(|| {
            persistent_pairwise_gradient(
                &f.model,
                &f.theta,
                &f.proposal,
                &mut store,
                0,
                black_box(&f.x0),
                5,
                AcceptanceRule::Barker,
                &mut rng,
            )
            .unwrap()
        })
    });
    g.finish();
}

fn smc(c: &mut Criterion) {
    let mut g = c.benchmark_group("smc");
    for dim in [4, 8] {
        let f = ArFixture::new(dim, 3);
        let mut rng = seeded(9);
        for (name, policy) in [
            ("adaptive", ResamplePolicy::Adaptive),
            ("always", ResamplePolicy::Always),
        ] {
            g.bench_with_input(
                BenchmarkId::new(format!("sweep-{name}"), dim),
                &dim,
                |b, _| {
                    b.iter(|| {
                        smc_sweep(&f.model, &f.theta, &f.proposal, J, &policy, &mut rng).unwrap()
                    })
                },
            );
        }
        g.bench_with_input(BenchmarkId::new("smc-rnce", dim), &dim, |b, _| {
            b.iter(|| {
                smc_rnce_gradient(
                    &f.model,
                    &f.theta,
                    &f.proposal,
                    black_box(&f.x0),
                    J,
                    &ResamplePolicy::Adaptive,
                    &mut rng,
                )
                .unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, marginal_estimators, conditional_estimators, smc);
criterion_main!(benches);
