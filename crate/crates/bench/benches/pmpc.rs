use criterion::{black_box, criterion_group, criterion_main, Criterion};
use nalgebra::Vector1;
use nid_pmpc::*;

fn kinematics(c: &mut Criterion) {
    let g = RobotGeometry::ROBOTARIUM;
    let l = NidParam::new(0.078).unwrap();
    let pose = Pose::new(0.3, -0.2, 0.7);
    c.bench_function("nid_to_wheels", |b| {
        b.iter(|| {
            let x_si = nid_forward(black_box(&pose), l);
            let u = SiVelocity::new(0.4 - x_si.p1, 0.02 - x_si.p2).clamp_norm(g.v_bar());
            unicycle_to_wheels(&si_to_unicycle(&u, pose.theta, l), &g)
        })
    });
}

fn gradients(c: &mut Criterion) {
    let config = ExperimentConfig::default();
    let problem = build_pmpc_problem(&config.initial_pose, 0.0, &config);
    let mut group = c.benchmark_group("ellipse");
    group.sample_size(20);
    for dt in [1.0, 5.0] {
        group.bench_function(format!("cost_and_gradients_dt{dt}"), |b| {
            b.iter(|| cost_and_gradients(&problem, &Vector1::new(0.078), black_box(dt), &config.solver).unwrap())
        });
    }
    group.finish();
}

fn control_period(c: &mut Criterion) {
    let config = ExperimentConfig {
        duration: 0.33,
        initial_solve_iters: 3,
        ..ExperimentConfig::default()
    };
    let mut group = c.benchmark_group("experiment");
    group.sample_size(10);
    group.bench_function("pmpc_ten_periods", |b| b.iter(|| run_pmpc_experiment(black_box(&config)).unwrap()));
    group.finish();
}

criterion_group!(benches, kinematics, gradients, control_period);
criterion_main!(benches);
