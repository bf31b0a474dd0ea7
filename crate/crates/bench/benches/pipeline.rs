use criterion::{criterion_group, criterion_main, Criterion};
use fdtl::aggregate::{fit_atlflr, AggregationMethod, DEFAULT_TRUNCATION};
use fdtl::risk::{excess_risk_mc, PredictorLaw};
use fdtl::simgen::{stream_rng, MeanFunction};
use fdtl::transfer::{fit_tlflr_with_rule, TransferMode};
use fdtl::{FitOptions, KernelSpec, LambdaRule};
use fdtl_bench::scenario;

fn transfer(c: &mut Criterion) {
    let scen = scenario(150, 20, 2);
    let k = KernelSpec::eigen_expansion_default();
    let opts = FitOptions::with_eval_grid(scen.config.grid());
    let rule = LambdaRule::default();
    let mut group = c.benchmark_group("pipeline");
    group.sample_size(10);
    group.bench_function("tlflr_cv_20_sources", |b| {
        b.iter(|| fit_tlflr_with_rule(&scen.target, &scen.source_refs(), &k, &rule, TransferMode::Full, &opts, 0).unwrap())
    });
    group.bench_function("atlflr_star_20_sources", |b| {
        b.iter(|| {
            fit_atlflr(&scen.target, &scen.source_refs(), &k, DEFAULT_TRUNCATION, &rule, AggregationMethod::SparseStar, &opts, 0)
                .unwrap()
        })
    });
    let law = PredictorLaw { mean: MeanFunction::SinPiT, cov: scen.config.target_cov };
    let est = scen.true_source_betas[0].clone();
    group.bench_function("excess_risk_mc_1000", |b| {
        b.iter(|| excess_risk_mc(&est, 0.1, &scen.true_target_beta, 0.0, &law, 1000, &mut stream_rng(0, 0, 9)).unwrap())
    });
    group.finish();
}

criterion_group!(benches, transfer);
criterion_main!(benches);
