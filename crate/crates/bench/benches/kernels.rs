use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use llpl_core::baselines::{condensed_gain, linearize_error_dynamics, MpcConfig};
use llpl_core::llpl::{agem_project, lifelong_update, screen_incremental, update_memory};
use llpl_core::mlp::{Activation, GradientVector, MlpModel, Normalizer};
use llpl_core::policy::{Dataset, Policy, Provenance, Sample};
use llpl_core::sim::{advance, VehicleParams, VehicleState};
use llpl_core::{EpisodicMemory, EvalConfig};

fn random_samples(rng: &mut ChaCha8Rng, n: usize) -> Vec<Sample> {
    (0..n)
        .map(|_| {
            Sample::new(
                [rng.random_range(5.0..20.0), rng.random_range(-0.5..0.5), rng.random_range(-0.3..0.3)],
                [rng.random_range(-1.0..1.0), rng.random_range(-0.2..0.2)],
                rng.random_range(-0.3..0.3),
            )
        })
        .collect()
}

fn mlp(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = MlpModel::new(&[5, 64, 64, 1], Activation::Tanh, &mut rng);
    let xs: Vec<Vec<f64>> = (0..64).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let ys: Vec<[f64; 1]> = (0..64).map(|_| [rng.random_range(-0.3..0.3)]).collect();
    c.bench_function("policy_forward", |b| b.iter(|| net.forward(&xs[0]).unwrap()));
    c.bench_function("policy_mse_grad_batch64", |b| b.iter(|| net.backward_mse(&xs, &ys).unwrap()));
    let critic = MlpModel::new(&[6, 128, 128, 128, 128, 1], Activation::Tanh, &mut rng);
    let x6 = vec![0.1; 6];
    c.bench_function("critic_forward_backward", |b| {
        b.iter(|| {
            let t = critic.forward_trace(&x6).unwrap();
            let mut g = GradientVector::zeros(critic.param_count());
            critic.backward(&t, &[1.0], &mut g)
        })
    });
}

fn agem(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 4_353;
    let g = GradientVector((0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
    let r = GradientVector((0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
    c.bench_function("agem_project_4353", |b| b.iter(|| agem_project(&g, &r)));
}

fn memory(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let entries = random_samples(&mut rng, 1000);
    let norm = Normalizer::fit(&entries.iter().map(Sample::features).collect::<Vec<_>>()).unwrap();
    let mem = EpisodicMemory::from_entries(entries, 0.02, norm.clone());
    let batch = Dataset::new(random_samples(&mut rng, 160), Provenance::Execution(0));
    c.bench_function("screen_160_vs_1000", |b| b.iter(|| screen_incremental(&batch, &mem, 0.02)));
    c.bench_function("update_memory_160", |b| {
        b.iter_batched(|| mem.clone(), |mut m| update_memory(&mut m, &batch), BatchSize::SmallInput)
    });
    let policy = Policy::new(&[64, 64], norm, &mut rng);
    let cfg = EvalConfig { update_epochs: 1, ..EvalConfig::default() };
    c.bench_function("lifelong_update_160_one_epoch", |b| {
        b.iter_batched(
            || (policy.clone(), ChaCha8Rng::seed_from_u64(3)),
            |(mut p, mut r)| lifelong_update(&mut p, &batch, &mem, &cfg, &mut r).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn vehicle_and_mpc(c: &mut Criterion) {
    let params = VehicleParams::default();
    let s = VehicleState::new(0.0, 0.0, 0.0, 12.0);
    c.bench_function("advance_one_control_period", |b| b.iter(|| advance(&s, 0.05, &params, 0.1, 0.01).unwrap()));
    let cfg = MpcConfig::default();
    let (a, bm) = linearize_error_dynamics(&params, 12.0, 0.1).unwrap();
    c.bench_function("mpc_condensed_gain_n50", |b| b.iter(|| condensed_gain(&cfg, &a, &bm).unwrap()));
}

criterion_group!(benches, mlp, agem, memory, vehicle_and_mpc);
criterion_main!(benches);
