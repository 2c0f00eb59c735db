use criterion::{criterion_group, criterion_main, Criterion};
use ctxsql_bench::{adapter, build, clock, QUESTIONS};
use ctxsql_core::adjudicator::DeterministicAdjudicator;
use ctxsql_core::planner::{PlanContext, Planner};

fn plan_query(c: &mut Criterion) {
    let planner = Planner::new(build(&adapter()));
    let ctx = PlanContext::new(clock(), "bench");
    let mut group = c.benchmark_group("plan_query");
    for (i, q) in QUESTIONS.iter().enumerate() {
        group.bench_function(format!("q{i}"), |b| b.iter(|| planner.plan(q, &DeterministicAdjudicator, &ctx)));
    }
    group.finish();
}

criterion_group!(benches, plan_query);
criterion_main!(benches);
