//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod support;

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use ctlite_core::fdk::{reconstruct, FdkOptions};
use ctlite_core::metrics::{
    binary_gb, cr_svd, cr_total, cr_total_table_style, mse_curve, storage_bytes, svz_bytes,
};
use ctlite_core::pipeline::{run, PipelineConfig};
use ctlite_core::simulate::{add_noise, forward_project};
use ctlite_core::svd::{encode_view, read_svz, svd_decode, svd_encode, write_svz};
use ctlite_core::transport::{upload_bytes, Client, ReconParams, Server, UploadOptions};
use ctlite_core::{make_circular_geometry, Phantom, Primitive, Volume, VolumeDims};
use ndarray::{Array2, Array3};
use support::{Cut, FlakyProxy};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn relative_rmse(reference: &Array3<f32>, test: &Array3<f32>) -> f64 {
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for (&r, &t) in reference.iter().zip(test) {
        num += (r as f64 - t as f64).powi(2);
        den += (r as f64).powi(2);
    }
    (num / den).sqrt()
}

fn compression_arithmetic() -> Outcome {
    let svd = cr_svd(2048, 1716, 30).map_err(|e| e.to_string())?;
    let total = cr_total(2048, 1716, 30, 60, 720).map_err(|e| e.to_string())?;
    let table = cr_total_table_style(2048, 1716, 30, 60, 720).map_err(|e| e.to_string())?;
    check(
        (svd - 31.11).abs() <= 0.005 && (total - 373.37).abs() <= 0.01 && (table - 373.32).abs() < 1e-9,
        format!("cr_svd={svd:.4} cr_total={total:.4} (table-style {table:.2})"),
    )
}

fn storage_accounting() -> Outcome {
    let raw = binary_gb(storage_bytes(720, 2048, 1716, 4));
    let sparse = binary_gb(storage_bytes(60, 2048, 1716, 4));
    let compressed = binary_gb(svz_bytes(60, 2048, 1716, 30));
    check(
        (raw - 9.4263).abs() <= 1e-4 && (sparse - 0.7855).abs() <= 1e-4 && (compressed - 0.0252).abs() <= 1e-4,
        format!("raw={raw:.4} GB sparse={sparse:.4} GB compressed={compressed:.4} GB"),
    )
}

fn eckart_young() -> Outcome {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
    let mut cases = vec![(256usize, 200usize, 50usize)];
    while cases.len() < 60 {
        let m = rng.random_range(2..=256);
        let n = rng.random_range(2..=200);
        // A relative check needs a non-empty tail, so k < min(m, n).
        let k = rng.random_range(1..=(m.min(n) - 1).min(50));
        cases.push((m, n, k));
    }
    let mut worst = 0.0f64;
    for (i, &(m, n, k)) in cases.iter().enumerate() {
        let a64 = support::random_matrix(m, n, 1000 + i as u64);
        let a = Array2::from_shape_vec((m, n), a64.iter().map(|&x| x as f32).collect()).unwrap();
        let oracle = nalgebra::DMatrix::from_row_slice(m, n, &a.iter().map(|&x| x as f64).collect::<Vec<_>>())
            .singular_values();
        let mut sigma: Vec<f64> = oracle.iter().copied().collect();
        sigma.sort_by(|x, y| y.total_cmp(x));
        let expected = sigma[k..].iter().map(|s| s * s).sum::<f64>().sqrt();
        let view = encode_view(a.view(), k).map_err(|e| e.to_string())?;
        let decoded = view.reconstruct_f64();
        let err = a
            .iter()
            .zip(decoded.iter())
            .map(|(&x, &y)| (x as f64 - y).powi(2))
            .sum::<f64>()
            .sqrt();
        let rel = (err - expected).abs() / expected;
        worst = worst.max(rel);
    }
    check(
        worst <= 1e-6,
        format!("{} matrices, worst relative deviation {worst:.2e}", cases.len()),
    )
}

fn sphere_box_phantom() -> Phantom {
    Phantom::new(vec![
        Primitive::sphere([-10.0, 5.0, 0.0], 30.0, 1.0).unwrap(),
        Primitive::cuboid([25.0, -10.0, 5.0], [15.0, 20.0, 40.0], 0.6).unwrap(),
    ])
}

/// Index of the first k after which every step changes the MSE by less than
/// `tol` of the curve's starting value.
fn plateau(curve: &[(usize, f64)], tol: f64) -> Option<usize> {
    let scale = curve[0].1;
    let steps: Vec<f64> = curve.windows(2).map(|w| (w[0].1 - w[1].1) / scale).collect();
    let last_big = steps.iter().rposition(|&d| d >= tol);
    match last_big {
        None => Some(curve[0].0),
        Some(i) if i + 1 < curve.len() => Some(curve[i + 1].0),
        Some(_) => None,
    }
}

fn mse_curve_shape() -> Outcome {
    let g = make_circular_geometry(1, 256, 215, 0.5, 400.0).map_err(|e| e.to_string())?;
    let clean = forward_project(&sphere_box_phantom(), &g);
    let stack = add_noise(&clean, 0.05, 11).map_err(|e| e.to_string())?;
    let ks: Vec<usize> = (1..=215).collect();
    let curve = mse_curve(&stack, &ks).map_err(|e| e.to_string())?;
    let monotone = curve.windows(2).all(|w| w[1].1 <= w[0].1);
    let k_star = plateau(&curve, 0.01);
    let limit = 215 / 4;
    check(
        monotone && k_star.is_some_and(|k| k <= limit),
        format!("256x215 view, monotone={monotone}, plateau k*={k_star:?} (limit {limit})"),
    )
}

fn write_config(dir: &Path, phantom: &str, body: &str) -> PipelineConfig {
    fs::write(dir.join("phantom.txt"), phantom).unwrap();
    let text = format!("phantom=phantom.txt\n{body}");
    fs::write(dir.join("run.cfg"), &text).unwrap();
    PipelineConfig::load(&dir.join("run.cfg")).unwrap()
}

fn interior_stats(volume: &Volume, radius: f64) -> (f64, f64) {
    let (mut sum, mut sq, mut n) = (0.0, 0.0, 0usize);
    for ((z, y, x), &v) in volume.data().indexed_iter() {
        let c = volume.voxel_center(x, y, z);
        if c[0] * c[0] + c[1] * c[1] + c[2] * c[2] < radius * radius {
            sum += v as f64;
            sq += (v as f64 - 1.0).powi(2);
            n += 1;
        }
    }
    (sum / n as f64, (sq / n as f64).sqrt())
}

fn fdk_fidelity() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = write_config(
        dir.path(),
        "sphere 0 0 0 20 1\n",
        "seed=1\nviews=720\ndetector_rows=160\ndetector_cols=160\npixel_pitch=1\n\
         source_to_axis=500\nsparse_factor=12\nrank=30\nrecon_dims=128,128,128\nvoxel_pitch=1\n",
    );
    let start = Instant::now();
    let out = run(&cfg, &dir.path().join("out")).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let reference = out.reference.as_ref().ok_or("no reference volume")?;
    let (mean, interior_rmse) = interior_stats(reference, 15.0);
    let full_rmse = out.reference_vs_truth.as_ref().unwrap().rmse();
    let sparse_rmse = out.recon_vs_truth.rmse();
    check(
        (mean - 1.0).abs() <= 0.1 && interior_rmse <= 0.15 && sparse_rmse > full_rmse,
        format!(
            "interior mean {mean:.4}, interior rmse {interior_rmse:.4}, volume rmse {full_rmse:.4} \
             vs sparse+svd {sparse_rmse:.4}, {secs:.1} s"
        ),
    )
}

fn lossless_identity() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = write_config(
        dir.path(),
        "sphere 0 0 0 12 1\nbox 6 -4 2 5 8 6 0.5\n",
        "seed=2\nviews=90\ndetector_rows=64\ndetector_cols=64\npixel_pitch=1\n\
         source_to_axis=300\nsparse_factor=1\nrank=full\nrecon_dims=48,48,48\nvoxel_pitch=1\n",
    );
    let out = run(&cfg, &dir.path().join("out")).map_err(|e| e.to_string())?;
    let rel = relative_rmse(out.reference.as_ref().unwrap().data(), out.recon.data());
    check(rel <= 1e-4, format!("relative rmse vs direct reconstruction {rel:.2e}"))
}

fn transport() -> Outcome {
    let g = make_circular_geometry(60, 32, 40, 1.0, 200.0).map_err(|e| e.to_string())?;
    let phantom = Phantom::new(vec![Primitive::sphere([0.0, 2.0, -1.0], 9.0, 1.0).unwrap()]);
    let stack = forward_project(&phantom, &g);
    let svz = write_svz(&svd_encode(&stack, 8).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let store = tempfile::tempdir().map_err(|e| e.to_string())?;
    let server = Server::bind("127.0.0.1:0", store.path()).map_err(|e| e.to_string())?;
    let handle = server.spawn().map_err(|e| e.to_string())?;
    let opts = UploadOptions {
        backoff: Duration::from_millis(5),
        ..UploadOptions::default()
    };

    let clean = upload_bytes(handle.addr(), &svz, &opts).map_err(|e| e.to_string())?;
    let stored = fs::read(handle.store_path(clean.scan_id)).map_err(|e| e.to_string())?;
    let identical = stored == svz;

    let params = ReconParams {
        dims: VolumeDims::cube(24),
        voxel_pitch: 1.0,
        options: FdkOptions::default(),
    };
    let mut client = Client::connect(handle.addr(), opts.timeout).map_err(|e| e.to_string())?;
    client.hello_query().map_err(|e| e.to_string())?;
    let remote = client.fetch_volume(clean.scan_id, params).map_err(|e| e.to_string())?;
    let local = read_svz(&svz)
        .and_then(|s| svd_decode(&s))
        .and_then(|p| reconstruct(&p, params.dims, params.voxel_pitch, &params.options))
        .map_err(|e| e.to_string())?;
    let fetch_rel = relative_rmse(local.data(), remote.data());

    // First connection dies mid-upload, second loses the server's replies.
    let proxy = FlakyProxy::start(
        handle.addr(),
        vec![
            Cut { upstream: Some(svz.len() / 3), downstream: None },
            Cut { upstream: None, downstream: Some(200) },
        ],
    );
    let resumed = upload_bytes(proxy.addr, &svz, &opts).map_err(|e| e.to_string())?;
    let stored_resumed = fs::read(handle.store_path(resumed.scan_id)).map_err(|e| e.to_string())?;
    let mut acked: Vec<u32> = resumed.acks.iter().filter_map(|a| a.view_index()).collect();
    acked.sort_unstable();
    let unique = acked.windows(2).all(|w| w[0] != w[1]);
    let session = handle.session(resumed.scan_id).ok_or("session missing")?;
    handle.shutdown();
    check(
        identical
            && fetch_rel <= 1e-6
            && resumed.attempts >= 3
            && stored_resumed == svz
            && unique
            && session.received_views == 60,
        format!(
            "store identical={identical}, fetch relative rmse {fetch_rel:.1e}, resumed upload: \
             {} attempts, {} views acked once each, stored identical={}",
            resumed.attempts,
            acked.len(),
            stored_resumed == svz
        ),
    )
}

fn list_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = write_config(
        dir.path(),
        "sphere 0 0 0 8 1\ncylinder 3 -2 0 3 6 0.4\n",
        "seed=99\nviews=48\ndetector_rows=24\ndetector_cols=32\npixel_pitch=1\n\
         source_to_axis=150\nsparse_factor=4\nrank=6\nrecon_dims=24,24,20\nvoxel_pitch=1\n\
         noise_sigma=0.02\ntransport=loopback\n",
    );
    let mut runs = Vec::new();
    for (i, threads) in [1usize, 4, 4].into_iter().enumerate() {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| e.to_string())?;
        let out = dir.path().join(format!("run{i}"));
        pool.install(|| run(&cfg, &out)).map_err(|e| e.to_string())?;
        runs.push(list_files(&out));
    }
    let same = runs.windows(2).all(|w| w[0] == w[1]);
    check(
        same && !runs[0].is_empty(),
        format!("{} files compared across 1, 4 and 4 worker threads, identical={same}", runs[0].len()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("compression arithmetic", compression_arithmetic),
        ("storage accounting", storage_accounting),
        ("eckart-young", eckart_young),
        ("mse curve shape", mse_curve_shape),
        ("fdk fidelity", fdk_fidelity),
        ("lossless identity", lossless_identity),
        ("transport", transport),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.iter().any(|a| a == &n.to_string() || name.contains(a.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n} ({name}): PASS [{secs:.1}s] {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL [{secs:.1}s] {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
