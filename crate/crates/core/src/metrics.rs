//! Joint-position error metrics. Inputs are per-frame joint positions in
//! meters; errors are reported in millimeters.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;

/// PCK threshold in meters.
pub const PCK_THRESHOLD: f64 = 0.15;

pub type Track = [Vec<Vector3<f64>>];

fn check_shapes(pred: &Track, gt: &Track) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch(format!("{} predicted frames vs {} ground-truth frames", pred.len(), gt.len())));
    }
    for (t, (p, g)) in pred.iter().zip(gt).enumerate() {
        if p.len() != g.len() || p.is_empty() {
            return Err(Error::ShapeMismatch(format!("frame {t}: {} vs {} joints", p.len(), g.len())));
        }
    }
    Ok(())
}

/// Subtracts joint 0 from every joint.
pub fn root_center(frame: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    let root = frame[0];
    frame.iter().map(|p| p - root).collect()
}

pub fn root_center_track(track: &Track) -> Vec<Vec<Vector3<f64>>> {
    track.iter().map(|f| root_center(f)).collect()
}

fn mean_distance(pairs: impl Iterator<Item = (Vector3<f64>, Vector3<f64>)>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for (a, b) in pairs {
        sum += (a - b).norm();
        n += 1;
    }
    sum / n as f64
}

/// Mean per-joint position error after root-centering both tracks.
pub fn mpjpe(pred: &Track, gt: &Track) -> Result<f64> {
    check_shapes(pred, gt)?;
    let pairs = pred.iter().zip(gt).flat_map(|(p, g)| {
        let (pr, gr) = (p[0], g[0]);
        p.iter().zip(g).map(move |(a, b)| (a - pr, b - gr))
    });
    Ok(1000.0 * mean_distance(pairs))
}

/// Similarity transform `x ↦ s·R·x + t` minimizing the squared distance
/// between transformed `pred` and `gt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * p) + self.translation
    }
}

fn centroid(points: &[Vector3<f64>]) -> Vector3<f64> {
    points.iter().sum::<Vector3<f64>>() / points.len() as f64
}

/// Least-squares similarity from the SVD of the centered cross-covariance,
/// with the smallest singular direction flipped when needed to exclude
/// reflections.
pub fn procrustes_transform(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<Similarity> {
    if pred.len() != gt.len() || pred.len() < 3 {
        return Err(Error::ShapeMismatch(format!(
            "procrustes needs two clouds of at least 3 points, got {} and {}",
            pred.len(),
            gt.len()
        )));
    }
    let (mp, mg) = (centroid(pred), centroid(gt));
    let var_p: f64 = pred.iter().map(|p| (p - mp).norm_squared()).sum::<f64>();
    let var_g: f64 = gt.iter().map(|p| (p - mg).norm_squared()).sum::<f64>();
    let tiny = 1e-24 * pred.len() as f64;
    if var_p <= tiny || var_g <= tiny {
        return Err(Error::DegenerateCloud);
    }
    let mut cov = Matrix3::zeros();
    for (p, g) in pred.iter().zip(gt) {
        cov += (g - mg) * (p - mp).transpose();
    }
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let mut d = Vector3::new(1.0, 1.0, 1.0);
    if (u * vt).determinant() < 0.0 {
        d[2] = -1.0;
    }
    let rotation = u * Matrix3::from_diagonal(&d) * vt;
    let scale = svd.singular_values.dot(&d) / var_p;
    let translation = mg - scale * (rotation * mp);
    Ok(Similarity {
        scale,
        rotation,
        translation,
    })
}

pub fn procrustes_align(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<Vec<Vector3<f64>>> {
    let s = procrustes_transform(pred, gt)?;
    Ok(pred.iter().map(|p| s.apply(p)).collect())
}

fn align_track(pred: &Track, gt: &Track) -> Result<Vec<Vec<Vector3<f64>>>> {
    pred.iter().zip(gt).map(|(p, g)| procrustes_align(p, g)).collect()
}

/// MPJPE after per-frame Procrustes alignment.
pub fn pa_mpjpe(pred: &Track, gt: &Track) -> Result<f64> {
    check_shapes(pred, gt)?;
    let aligned = align_track(pred, gt)?;
    let pairs = aligned.iter().zip(gt).flat_map(|(p, g)| p.iter().zip(g).map(|(a, b)| (*a, *b)));
    Ok(1000.0 * mean_distance(pairs))
}

/// Mean norm of the difference of second finite differences, in mm/s².
pub fn accel_error(pred: &Track, gt: &Track, fps: f64) -> Result<f64> {
    check_shapes(pred, gt)?;
    if pred.len() < 3 {
        return Err(Error::SequenceTooShort {
            needed: 3,
            got: pred.len(),
        });
    }
    let f2 = fps * fps;
    let (mut sum, mut n) = (0.0, 0usize);
    for t in 1..pred.len() - 1 {
        for j in 0..pred[t].len() {
            let ap = (pred[t + 1][j] - 2.0 * pred[t][j] + pred[t - 1][j]) * f2;
            let ag = (gt[t + 1][j] - 2.0 * gt[t][j] + gt[t - 1][j]) * f2;
            sum += (ap - ag).norm();
            n += 1;
        }
    }
    Ok(1000.0 * sum / n as f64)
}

fn pck_of(pairs: impl Iterator<Item = (Vector3<f64>, Vector3<f64>)>, threshold: f64) -> f64 {
    let (mut hit, mut n) = (0usize, 0usize);
    for (a, b) in pairs {
        hit += usize::from((a - b).norm() < threshold);
        n += 1;
    }
    100.0 * hit as f64 / n as f64
}

/// Percentage of root-centered joints closer than `threshold` meters.
pub fn pck3d(pred: &Track, gt: &Track, threshold: f64) -> Result<f64> {
    check_shapes(pred, gt)?;
    let pairs = pred.iter().zip(gt).flat_map(|(p, g)| {
        let (pr, gr) = (p[0], g[0]);
        p.iter().zip(g).map(move |(a, b)| (a - pr, b - gr))
    });
    Ok(pck_of(pairs, threshold))
}

/// PCK after per-frame Procrustes alignment.
pub fn pa_pck3d(pred: &Track, gt: &Track, threshold: f64) -> Result<f64> {
    check_shapes(pred, gt)?;
    let aligned = align_track(pred, gt)?;
    let pairs = aligned.iter().zip(gt).flat_map(|(p, g)| p.iter().zip(g).map(|(a, b)| (*a, *b)));
    Ok(pck_of(pairs, threshold))
}

/// One row of a metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: String,
    pub sequence: String,
    pub mpjpe_mm: f64,
    pub pa_mpjpe_mm: f64,
    /// NaN for sequences shorter than three frames.
    pub accel_err: f64,
    pub pck3d_pct: f64,
    pub pa_pck3d_pct: f64,
}

pub const CSV_HEADER: &str = "method,sequence,mpjpe_mm,pa_mpjpe_mm,accel_err,pck3d_pct,pa_pck3d_pct";

/// Sequence name used for aggregate rows.
pub const AGGREGATE: &str = "ALL";

impl MetricReport {
    /// All metrics for one sequence. Acceleration is computed on
    /// root-centered joints.
    pub fn compute(method: &str, sequence: &str, pred: &Track, gt: &Track, fps: f64) -> Result<Self> {
        let accel = if pred.len() >= 3 {
            accel_error(&root_center_track(pred), &root_center_track(gt), fps)?
        } else {
            check_shapes(pred, gt)?;
            f64::NAN
        };
        Ok(MetricReport {
            method: method.into(),
            sequence: sequence.into(),
            mpjpe_mm: mpjpe(pred, gt)?,
            pa_mpjpe_mm: pa_mpjpe(pred, gt)?,
            accel_err: accel,
            pck3d_pct: pck3d(pred, gt, PCK_THRESHOLD)?,
            pa_pck3d_pct: pa_pck3d(pred, gt, PCK_THRESHOLD)?,
        })
    }

    /// Mean of each column over `rows` (NaN accelerations skipped).
    pub fn aggregate(method: &str, rows: &[MetricReport]) -> Self {
        let mean = |f: &dyn Fn(&MetricReport) -> f64| {
            let v: Vec<f64> = rows.iter().map(f).filter(|x| !x.is_nan()).collect();
            if v.is_empty() {
                f64::NAN
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        };
        MetricReport {
            method: method.into(),
            sequence: AGGREGATE.into(),
            mpjpe_mm: mean(&|r| r.mpjpe_mm),
            pa_mpjpe_mm: mean(&|r| r.pa_mpjpe_mm),
            accel_err: mean(&|r| r.accel_err),
            pck3d_pct: mean(&|r| r.pck3d_pct),
            pa_pck3d_pct: mean(&|r| r.pa_pck3d_pct),
        }
    }
}

fn num(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else {
        format!("{x:.4}")
    }
}

pub fn to_csv(rows: &[MetricReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.method,
            r.sequence,
            num(r.mpjpe_mm),
            num(r.pa_mpjpe_mm),
            num(r.accel_err),
            num(r.pck3d_pct),
            num(r.pa_pck3d_pct)
        );
    }
    out
}

pub fn write_csv(path: &Path, rows: &[MetricReport]) -> Result<()> {
    write_atomic(path, to_csv(rows).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::random_rotation;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    fn random_similarity(rng: &mut ChaCha8Rng) -> Similarity {
        Similarity {
            scale: rng.random_range(0.2..3.0),
            rotation: *random_rotation(rng).matrix(),
            translation: Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)),
        }
    }

    #[test]
    fn mpjpe_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let gt = vec![cloud(&mut rng, 24)];
        assert_eq!(mpjpe(&gt, &gt).unwrap(), 0.0);
        let shifted: Vec<Vec<Vector3<f64>>> = gt.iter().map(|f| f.iter().map(|p| p + Vector3::new(1.0, 0.0, 0.0)).collect()).collect();
        assert!(mpjpe(&shifted, &gt).unwrap() < 1e-9);
        let mut one = gt.clone();
        one[0][5].x += 0.010;
        assert!((mpjpe(&one, &gt).unwrap() - 10.0 / 24.0).abs() < 1e-9);
        let short = vec![gt[0][..23].to_vec()];
        assert!(matches!(mpjpe(&short, &gt), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn procrustes_recovers_similarities() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let pred = cloud(&mut rng, 24);
            let s = random_similarity(&mut rng);
            let gt: Vec<Vector3<f64>> = pred.iter().map(|p| s.apply(p)).collect();
            let aligned = procrustes_align(&pred, &gt).unwrap();
            for (a, g) in aligned.iter().zip(&gt) {
                assert!((a - g).norm() < 1e-9);
            }
            assert!(pa_mpjpe(&[pred.clone()], &[gt.clone()]).unwrap() < 1e-6);
        }
        let p = cloud(&mut rng, 10);
        let t = procrustes_transform(&p, &p).unwrap();
        assert!((t.scale - 1.0).abs() < 1e-12);
        assert!((t.rotation - Matrix3::identity()).abs().max() < 1e-12);
        assert!(t.translation.norm() < 1e-12);
    }

    #[test]
    fn procrustes_beats_random_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pred = cloud(&mut rng, 12);
        let gt = cloud(&mut rng, 12);
        let sse = |pts: &[Vector3<f64>]| pts.iter().zip(&gt).map(|(a, b)| (a - b).norm_squared()).sum::<f64>();
        let best = sse(&procrustes_align(&pred, &gt).unwrap());
        for _ in 0..1000 {
            let s = random_similarity(&mut rng);
            let other: Vec<Vector3<f64>> = pred.iter().map(|p| s.apply(p)).collect();
            assert!(best <= sse(&other) + 1e-12);
        }
    }

    #[test]
    fn procrustes_rejects_degenerate_clouds() {
        let p = vec![Vector3::new(1.0, 2.0, 3.0); 5];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = cloud(&mut rng, 5);
        assert!(matches!(procrustes_align(&p, &g), Err(Error::DegenerateCloud)));
        assert!(procrustes_align(&p[..2], &g[..2]).is_err());
    }

    #[test]
    fn procrustes_excludes_reflections() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pred = cloud(&mut rng, 8);
        let gt: Vec<Vector3<f64>> = pred.iter().map(|p| Vector3::new(-p.x, p.y, p.z)).collect();
        let t = procrustes_transform(&pred, &gt).unwrap();
        assert!((t.rotation.determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn accel_examples() {
        let fps = 30.0;
        let gt: Vec<Vec<Vector3<f64>>> = (0..10).map(|_| vec![Vector3::new(0.1, 0.2, 3.0); 4]).collect();
        assert_eq!(accel_error(&gt, &gt, fps).unwrap(), 0.0);
        let lin = |v: f64| -> Vec<Vec<Vector3<f64>>> { (0..10).map(|t| vec![Vector3::new(v * t as f64, 0.0, 3.0); 4]).collect() };
        assert!(accel_error(&lin(0.1), &lin(-0.3), fps).unwrap() < 1e-9);
        let d = 0.004;
        let jitter: Vec<Vec<Vector3<f64>>> = gt
            .iter()
            .enumerate()
            .map(|(t, f)| f.iter().map(|p| p + Vector3::new(if t % 2 == 0 { d } else { -d }, 0.0, 0.0)).collect())
            .collect();
        let want = 4.0 * d * fps * fps * 1000.0;
        assert!((accel_error(&jitter, &gt, fps).unwrap() - want).abs() < 1e-6);
        assert!(matches!(accel_error(&gt[..2], &gt[..2], fps), Err(Error::SequenceTooShort { .. })));
    }

    #[test]
    fn pck_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gt = vec![cloud(&mut rng, 24)];
        assert_eq!(pck3d(&gt, &gt, PCK_THRESHOLD).unwrap(), 100.0);
        let mut off = gt.clone();
        off[0][7].y += 0.151;
        assert!((pck3d(&off, &gt, PCK_THRESHOLD).unwrap() - 100.0 * 23.0 / 24.0).abs() < 1e-9);
        let mut near = gt.clone();
        near[0][7].y += 0.149;
        assert_eq!(pck3d(&near, &gt, PCK_THRESHOLD).unwrap(), 100.0);
        assert_eq!(pa_pck3d(&gt, &gt, PCK_THRESHOLD).unwrap(), 100.0);
    }

    #[test]
    fn csv_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let gt: Vec<Vec<Vector3<f64>>> = (0..4).map(|_| cloud(&mut rng, 6)).collect();
        let r = MetricReport::compute("model", "s0", &gt, &gt, 30.0).unwrap();
        assert_eq!(r.mpjpe_mm, 0.0);
        assert_eq!(r.accel_err, 0.0);
        assert_eq!(r.pck3d_pct, 100.0);
        let agg = MetricReport::aggregate("model", &[r.clone(), r.clone()]);
        let csv = to_csv(&[r, agg]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert!(lines[2].starts_with("model,ALL,0.0000"));
        let short = MetricReport::compute("m", "s", &gt[..2], &gt[..2], 30.0).unwrap();
        assert!(short.accel_err.is_nan());
        assert!(to_csv(&[short]).contains(",nan,"));
    }

    fn arb_cloud(n: usize) -> impl Strategy<Value = Vec<[f64; 3]>> {
        prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), n)
    }

    fn to_vecs(c: &[[f64; 3]]) -> Vec<Vector3<f64>> {
        c.iter().map(|p| Vector3::from(*p)).collect()
    }

    proptest! {
        #[test]
        fn alignment_never_increases_error(a in arb_cloud(10), b in arb_cloud(10)) {
            let (p, g) = (vec![to_vecs(&a)], vec![to_vecs(&b)]);
            prop_assert!(pa_mpjpe(&p, &g).unwrap() <= mpjpe(&p, &g).unwrap() + 1e-9);
        }

        #[test]
        fn pa_mpjpe_is_similarity_invariant(a in arb_cloud(10), b in arb_cloud(10), seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_similarity(&mut rng);
            let p = to_vecs(&a);
            let moved: Vec<Vector3<f64>> = p.iter().map(|x| s.apply(x)).collect();
            let g = vec![to_vecs(&b)];
            let e1 = pa_mpjpe(&[p], &g).unwrap();
            let e2 = pa_mpjpe(&[moved], &g).unwrap();
            prop_assert!((e1 - e2).abs() < 1e-6, "{} vs {}", e1, e2);
        }

        #[test]
        fn accel_ignores_shared_affine_motion(a in arb_cloud(5 * 6), b in arb_cloud(5 * 6), v in prop::array::uniform3(-1.0f64..1.0), c in prop::array::uniform3(-1.0f64..1.0)) {
            let track = |x: &[[f64; 3]]| -> Vec<Vec<Vector3<f64>>> { x.chunks(5).map(to_vecs).collect() };
            let (p, g) = (track(&a), track(&b));
            let shift = |tr: &[Vec<Vector3<f64>>]| -> Vec<Vec<Vector3<f64>>> {
                tr.iter().enumerate().map(|(t, f)| f.iter().map(|x| x + Vector3::from(c) + Vector3::from(v) * t as f64).collect()).collect()
            };
            let e1 = accel_error(&p, &g, 30.0).unwrap();
            let e2 = accel_error(&shift(&p), &shift(&g), 30.0).unwrap();
            prop_assert!((e1 - e2).abs() < 1e-6 * (1.0 + e1));
        }
    }
}
