#![allow(dead_code)]

use elastreg::optimizer::{energy_gradient, total_energy};
use elastreg::synth::{self, SynthPair, SynthSpec};
use elastreg::{normalize_intensity, DisplacementField, Dims, RegistrationConfig, Volume};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
pub const FD_SAMPLES: usize = 50;

/// Smooth random texture in [0, 1].
pub fn random_volume(dims: Dims, rng: &mut ChaCha8Rng) -> Volume {
    let waves: Vec<([f64; 3], f64, f64)> = (0..6)
        .map(|_| {
            (
                [0, 1, 2].map(|_| rng.gen_range(-1.2..1.2)),
                rng.gen_range(0.0..6.3),
                rng.gen_range(0.3..1.0),
            )
        })
        .collect();
    let raw = Volume::from_fn(dims, [1.0; 3], |x, y, z| {
        waves
            .iter()
            .map(|(k, ph, a)| a * (k[0] * x as f64 + k[1] * y as f64 + k[2] * z as f64 + ph).sin())
            .sum()
    })
    .unwrap();
    normalize_intensity(&raw).unwrap()
}

pub fn random_field(dims: Dims, amp: f64, rng: &mut ChaCha8Rng) -> DisplacementField {
    let v = (0..dims.len()).map(|_| [0, 1, 2].map(|_| rng.gen_range(-amp..amp))).collect();
    DisplacementField::new(dims, v).unwrap()
}

/// Worst relative error between the analytic gradient and central finite
/// differences of the total energy over `samples` random components.
pub fn max_gradient_error(
    f: &Volume,
    m: &Volume,
    u: &DisplacementField,
    cfg: &RegistrationConfig,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let grad = energy_gradient(f, m, u, cfg).unwrap();
    let n = u.dims().len();
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let i = rng.gen_range(0..n);
        let c = rng.gen_range(0..3);
        let mut up = u.clone();
        up.vectors_mut()[i][c] += FD_STEP;
        let mut dn = u.clone();
        dn.vectors_mut()[i][c] -= FD_STEP;
        let fd = (total_energy(f, m, &up, cfg).unwrap().total - total_energy(f, m, &dn, cfg).unwrap().total)
            / (2.0 * FD_STEP);
        let a = grad[i][c];
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    worst
}

pub fn seed7_pair() -> SynthPair {
    synth::make_pair(&SynthSpec::bumps(32, 7, 3.0, 6.0)).unwrap()
}

pub fn pct_folded(u: &DisplacementField) -> f64 {
    elastreg::metrics::jacobian_stats(u).pct_le0
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// CSV tables pinned by the files in `tests/fixtures`. Regenerate with
/// `ELASTREG_BLESS=1 cargo test --test io golden`.
pub fn golden_tables() -> Vec<(&'static str, String)> {
    use elastreg::io::report;
    use elastreg::metrics;
    use elastreg::optimizer::register;
    use elastreg::{AdaptiveParams, SimilarityConfig};

    let p = AdaptiveParams::default();
    let curves = metrics::response_curves(&p, 1.0, metrics::CURVE_POINTS);

    let pair = synth::make_pair(&SynthSpec::bumps(12, 3, 1.5, 3.0)).unwrap();
    let structures = [1, 2, 3, 7];
    let zero = elastreg::identity_displacement(pair.u_gt.dims()).unwrap();
    let rep = metrics::evaluate(&pair.labels_fixed, &pair.labels_moving, &zero, &structures).unwrap();

    let shear = DisplacementField::from_fn(Dims([4; 3]), |x, y, z| {
        [0.3 * y as f64, 0.05 * (x * z) as f64, -0.6 * (x as f64 - 1.5).powi(2)]
    })
    .unwrap();
    let table = metrics::parameter_energy_table(&shear, &p).unwrap();
    let js = metrics::jacobian_stats(&shear);

    let cfg = RegistrationConfig {
        similarity: SimilarityConfig::ssd(),
        pyramid_levels: 2,
        iters_per_level: 4,
        ..RegistrationConfig::default()
    };
    let f = normalize_intensity(&pair.fixed).unwrap();
    let m = normalize_intensity(&pair.moving).unwrap();
    let (_, trace) = register(&f, &m, &cfg).unwrap();

    vec![
        ("curves_default.csv", report::curves_csv(&curves)),
        ("summary.csv", report::summary_csv(&rep)),
        ("dice.csv", report::dice_csv(&rep)),
        ("volume_change.csv", report::volume_change_csv(&rep)),
        ("scatter_shear.csv", report::scatter_csv(&table.records)),
        ("neg_jacobian_hist.csv", report::histogram_csv(&js.neg_histogram)),
        ("trace_small.csv", report::trace_csv(&trace)),
    ]
}

pub fn fixture_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures")
}

/// Names of tables whose output differs from the committed fixture.
pub fn golden_mismatches() -> Vec<String> {
    let bless = std::env::var_os("ELASTREG_BLESS").is_some();
    let mut bad = Vec::new();
    for (name, text) in golden_tables() {
        let path = fixture_dir().join(name);
        if bless {
            std::fs::write(&path, &text).unwrap();
            continue;
        }
        match std::fs::read_to_string(&path) {
            Ok(want) if want == text => {}
            _ => bad.push(name.to_string()),
        }
    }
    bad
}
