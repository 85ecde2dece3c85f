use pd3net::codec::{decode_detections, encode_labels, Annotation, CodecConfig};
use pd3net::rng::Rng;

#[test]
fn worst_case_pair_sweep() {
    let cfg = CodecConfig::for_resolution(240, 320);
    let sigma = cfg.sigma();
    let mut max_err: f64 = 0.0;
    let mut count_fail = 0usize;
    let mut worst_desc = String::new();
    let mut rng = Rng::new(42);
    for step in 0..=20 {
        let dist = sigma * (1.0 + step as f64 * 0.1); // 1.0σ .. 3.0σ
        for angle_i in 0..16 {
            let angle = angle_i as f64 * std::f64::consts::PI / 16.0;
            for _ in 0..6 {
                let cx = 160.0 + rng.uniform(-0.5, 0.5);
                let cy = 120.0 + rng.uniform(-0.5, 0.5);
                let (dx, dy) = (dist / 2.0 * angle.cos(), dist / 2.0 * angle.sin());
                let a = Annotation { u: cx - dx, v: cy - dy, occlusion: 0.0 };
                let b = Annotation { u: cx + dx, v: cy + dy, occlusion: 0.0 };
                let map = encode_labels(&[a, b], 240, 320, &cfg).unwrap();
                let dets = decode_detections(&map, 0.5, cfg.min_area).unwrap();
                if dets.len() != 2 {
                    count_fail += 1;
                    continue;
                }
                for t in [&a, &b] {
                    let best = dets.iter()
                        .map(|d| ((d.u - t.u).powi(2) + (d.v - t.v).powi(2)).sqrt())
                        .fold(f64::INFINITY, f64::min);
                    if best > max_err {
                        max_err = best;
                        worst_desc = format!("dist {:.2}sigma angle {:.2}", dist / sigma, angle);
                    }
                }
            }
        }
    }
    eprintln!("count failures: {count_fail}, max centroid err: {max_err:.3}px ({worst_desc})");
    assert_eq!(count_fail, 0);
    assert!(max_err <= 1.0);
}

#[test]
fn random_frames_1000() {
    let cfg = CodecConfig::for_resolution(240, 320);
    let sigma = cfg.sigma();
    let mut rng = Rng::new(7);
    let mut max_err: f64 = 0.0;
    let mut bad = 0;
    for _frame in 0..1000 {
        let n = rng.uniform_usize(0, 10);
        let mut anns: Vec<Annotation> = Vec::new();
        let mut guard = 0;
        while anns.len() < n && guard < 1000 {
            guard += 1;
            // Bumps clipped by the frame border lose mass on one side and
            // shift their centroid; keep full bumps inside the frame.
            let margin = sigma * 1.5;
            let u = rng.uniform(margin, 320.0 - margin);
            let v = rng.uniform(margin, 240.0 - margin);
            if anns.iter().all(|a| ((a.u - u).powi(2) + (a.v - v).powi(2)).sqrt() >= sigma) {
                anns.push(Annotation { u, v, occlusion: 0.0 });
            }
        }
        let map = encode_labels(&anns, 240, 320, &cfg).unwrap();
        let dets = decode_detections(&map, 0.5, cfg.min_area).unwrap();
        if dets.len() != anns.len() {
            bad += 1;
            eprintln!("frame {_frame}: {} anns -> {} dets", anns.len(), dets.len());
            continue;
        }
        for a in &anns {
            let best = dets.iter()
                .map(|d| ((d.u - a.u).powi(2) + (d.v - a.v).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            if best > 1.0 {
                let mut near: Vec<String> = anns.iter()
                    .filter(|b| { let d = ((b.u - a.u).powi(2) + (b.v - a.v).powi(2)).sqrt(); d > 0.0 && d < 30.0 })
                    .map(|b| format!("({:.1},{:.1} d={:.2}s)", b.u, b.v, ((b.u - a.u).powi(2) + (b.v - a.v).powi(2)).sqrt() / sigma))
                    .collect();
                near.sort();
                eprintln!("frame {_frame}: err {best:.3} at ({:.1},{:.1}) neighbors {}", a.u, a.v, near.join(" "));
            }
            max_err = max_err.max(best);
        }
    }
    eprintln!("bad frames: {bad}, max centroid err {max_err:.3}");
    assert_eq!(bad, 0);
    assert!(max_err <= 1.0);
}
