use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use shelab_core::*;
use std::f64::consts::PI;
use std::hint::black_box;

fn kernel(n_mu: usize, n_phi: usize) -> BoundaryKernel {
    BoundaryKernel::isotropic(&SphereGrid::new(n_mu, n_phi).unwrap())
}

fn bench_kernel(c: &mut Criterion) {
    let k = kernel(8, 16);
    c.bench_function("check_kernel 8x16", |b| b.iter(|| check_kernel(black_box(&k), 100, 1)));
}

fn bench_tensor(c: &mut Criterion) {
    let mut g = c.benchmark_group("assemble_d");
    for n_mu in [4, 8, 16] {
        let k = kernel(n_mu, 16);
        g.bench_function(format!("n_mu {n_mu}"), |b| b.iter(|| assemble_d(black_box(1.0), 0.5, &k).unwrap()));
    }
    g.finish();
}

fn bench_she(c: &mut Criterion) {
    let xi = XiGrid::new(32, 1, 1.0, 1.0).unwrap();
    let eg = EnergyGrid::uniform(32, 8.0).unwrap();
    let t = DiffTensorTable::uniform(DiffTensor::from_matrix([[1.0, 0.2], [-0.2, 1.0]]), xi.len(), eg.len());
    let s = SheState::new(
        |y, _, e| (-e).exp() * (1.0 + 0.5 * (2.0 * PI * y).cos()),
        xi,
        eg,
        t,
        FieldMode::Frozen(ScalarProfile::cosine_y(0.0, 0.1)),
        DosChoice::CellAverage,
    )
    .unwrap();
    let dt = s.max_dt();
    c.bench_function("she step 32x32", |b| {
        b.iter_batched(|| s.clone(), |mut s| s.step(dt).unwrap(), BatchSize::SmallInput)
    });
}

fn bench_kinetic(c: &mut Criterion) {
    let xi = XiGrid::new(8, 1, 1.0, 1.0).unwrap();
    let eg = EnergyGrid::uniform(8, 8.0).unwrap();
    let k = kernel(4, 16);
    let ens = sample_initial(|y, _, e| (-e).exp() * (1.0 + 0.5 * (2.0 * PI * y).cos()), 20_000, &xi, &eg, 0.2, 1).unwrap();
    let setup = KineticSetup { xi: &xi, kernel: &k, b_field: ScalarProfile::constant(0.5), max_kick: 0.5 };
    let field = ElectricField::Frozen(ScalarProfile::cosine_y(0.0, 0.1));
    c.bench_function("step_kinetic 20k", |b| {
        b.iter_batched(
            || ens.clone(),
            |mut e| step_kinetic(&mut e, 0.01, &field, &setup).unwrap(),
            BatchSize::LargeInput,
        )
    });
}

criterion_group!(benches, bench_kernel, bench_tensor, bench_she, bench_kinetic);
criterion_main!(benches);
