use cpmse::cylinder_exact::{cp_energy_cylinder_exact, cyl_t_block};
use cpmse::specfun::{cyl_table, riccati_table};
use cpmse::sphere_exact::{cp_energy_sphere_exact, mie_block};
use cpmse::sso_mse::{mse_energy, spectral_radius, sso_block_cylinder, sso_block_sphere, GuardPolicy};
use cpmse::{Gauge, Geometry, Permittivity};
use cpmse_bench::{gold, silicon};
use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

fn bessel(c: &mut Criterion) {
    let mut g = c.benchmark_group("bessel");
    for (n, x) in [(40, 2.0), (400, 25.0), (2000, 600.0)] {
        g.bench_function(format!("riccati_table/{n}/{x}"), |b| b.iter(|| riccati_table(black_box(n), black_box(x))));
        g.bench_function(format!("cyl_table/{n}/{x}"), |b| b.iter(|| cyl_table(black_box(n), black_box(x))));
    }
    g.finish();
}

fn blocks(c: &mut Criterion) {
    let eps = Permittivity::Finite(11.87);
    let mut g = c.benchmark_group("blocks");
    g.bench_function("mie_block", |b| b.iter(|| mie_block(black_box(12), 0.8, eps, 1.0, 30.0)));
    g.bench_function("cyl_t_block", |b| b.iter(|| cyl_t_block(black_box(3), 0.4, 0.8, eps, 1.0, 30.0)));
    g.bench_function("sso_block_sphere_c2", |b| b.iter(|| sso_block_sphere(black_box(12), 0.8, eps, 1.0, 30.0, Gauge::C2)));
    g.bench_function("sso_block_cylinder_c1", |b| {
        b.iter(|| sso_block_cylinder(black_box(3), 0.4, 0.8, eps, 1.0, 30.0, Gauge::C1))
    });
    let blk = sso_block_cylinder(3, 0.4, 0.8, eps, 1.0, 30.0, Gauge::C1).unwrap();
    g.bench_function("spectral_radius_4x4", |b| b.iter(|| spectral_radius(black_box(&blk))));
    g.bench_function("resum_4x4", |b| b.iter(|| black_box(&blk).resum()));
    g.finish();
}

fn energies(c: &mut Criterion) {
    let mut g = c.benchmark_group("energies");
    g.sample_size(10);
    let s = gold(Geometry::Sphere, 0.1);
    g.bench_function("sphere_exact_au_0.1", |b| b.iter(|| cp_energy_sphere_exact(black_box(&s))));
    let s = silicon(Geometry::Sphere, 0.1);
    g.bench_function("sphere_mse4_si_0.1", |b| b.iter(|| mse_energy(black_box(&s), 4, GuardPolicy::Refuse)));
    let cy = silicon(Geometry::Cylinder, 1.0);
    g.bench_function("cylinder_exact_si_1", |b| b.iter(|| cp_energy_cylinder_exact(black_box(&cy))));
    g.finish();
}

criterion_group!(benches, bessel, blocks, energies);
criterion_main!(benches);
