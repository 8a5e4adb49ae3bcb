//! Scratch probe for protocol tuning. Not part of the library surface.

use edgefit_core::eval::{run_protocol, Method, MethodOptions, Sweep};
use edgefit_core::model::{ShapeCoefficients, ShapeModel};
use edgefit_core::synth::{
    landmark_vertices, make_synthetic_model, protocol_pose, sample_subject, ProtocolConfig,
};
use edgefit_core::camera;
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scaled_model(base: &ShapeModel, lambda_scale: f64) -> ShapeModel {
    ShapeModel::new(
        base.mean_shape().clone(),
        base.components().clone(),
        base.variances() * lambda_scale,
        base.triangles().to_vec(),
    )
    .unwrap()
}

fn signal_stats(model: &ShapeModel, image_size: usize) {
    let mesh = model.instantiate(&ShapeCoefficients::zeros(model.component_count())).unwrap();
    let pose = protocol_pose(&mesh, 0.0, image_size).unwrap();
    let n = model.vertex_count();
    let std_devs = model.std_devs();
    println!("scale s = {:.1} px/unit", pose.scale);
    for j in [0usize, 4, 9, 19, 39] {
        if j >= model.component_count() {
            continue;
        }
        let col = model.components().column(j);
        let mut max_disp = 0.0f64;
        let mut sum_sq = 0.0;
        for i in 0..n {
            let d = nalgebra::Vector3::new(col[3 * i], col[3 * i + 1], col[3 * i + 2]).norm();
            max_disp = max_disp.max(d);
            sum_sq += d * d;
        }
        let rms = (sum_sq / n as f64).sqrt();
        println!(
            "  comp {:2}: sigma {:.4}, max vertex disp {:.2} px, rms {:.3} px (per 1 sigma)",
            j,
            std_devs[j],
            std_devs[j] * max_disp * pose.scale,
            std_devs[j] * rms * pose.scale
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(999);
    let mut dev = 0.0;
    let mut floor = 0.0;
    for _ in 0..5 {
        let subject = sample_subject(model, &mut rng);
        let truth = subject.mesh(model).unwrap();
        let in_span = model.instantiate(&subject.alpha).unwrap();
        dev += edgefit_core::eval::aligned_surface_error(&mesh, &truth).unwrap() / 5.0;
        floor += edgefit_core::eval::aligned_surface_error(&in_span, &truth).unwrap() / 5.0;
    }
    println!(
        "  baseline {:.4} units = {:.2} px, floor {:.4} = {:.2} px, ratio {:.3}",
        dev,
        dev * pose.scale,
        floor,
        floor * pose.scale,
        floor / dev
    );
    println!("  landmarks: {}", landmark_vertices(model).len());
    let _ = camera::sop;
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lambda_scale: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let image_size: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(384);
    let subjects: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(3);
    let seed: u64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(101);
    let full_yaws: bool = args.get(5).map(|s| s == "9").unwrap_or(false);
    let noise: bool = args.get(6).map(|s| s == "noise").unwrap_or(false);

    let base = make_synthetic_model(2000, 40, 17).unwrap();
    let model = scaled_model(&base, lambda_scale);
    println!(
        "== lambda_scale {lambda_scale}, image {image_size}, subjects {subjects}, seed {seed} =="
    );
    signal_stats(&model, image_size);

    let mut options = MethodOptions::default();
    if let Some(rounds) = args.get(7).and_then(|s| s.parse().ok()) {
        options.hard.outer_rounds = rounds;
        options.soft.outer_rounds = rounds;
        println!("outer rounds: {rounds}");
    }
    if let Some(iters) = args.get(8).and_then(|s| s.parse().ok()) {
        options.hard.inner_iterations = iters;
        options.soft.inner_iterations = iters;
        println!("inner iterations: {iters}");
    }
    if let Some(threshold) = args.get(9).and_then(|s| s.parse::<f64>().ok()) {
        options.edge_threshold = threshold;
        println!("edge threshold: {threshold}");
    }
    if let Some(scale) = args.get(10).and_then(|s| s.parse::<f64>().ok()) {
        for t in &mut options.soft.thresholds {
            *t *= scale;
        }
        println!("soft thresholds: {:?}", options.soft.thresholds);
    }
    let config = ProtocolConfig {
        yaw_angles: if full_yaws {
            vec![-70.0, -50.0, -30.0, -15.0, 0.0, 15.0, 30.0, 50.0, 70.0]
        } else {
            vec![-70.0, -30.0, 0.0, 30.0, 70.0]
        },
        noise_sigmas: vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
        subjects,
        seed,
    };
    let sweep = if noise { Sweep::Noise } else { Sweep::Yaw };
    let start = std::time::Instant::now();
    let table = run_protocol(&model, &config, sweep, &Method::ALL, image_size, &options).unwrap();
    println!("suite took {:.1} s", start.elapsed().as_secs_f64());
    print!("{}", table.summary_csv());
    for r in &table.records {
        if let Some(f) = &r.failure {
            println!("FAIL {} {} {}: {}", r.scene_id, r.method, r.column, f);
        }
    }
    let _ = DVector::<f64>::zeros(1);
}
