mod common;

use common::*;
use lesiondet::geometry::Box3;
use lesiondet::losses::*;

#[test]
fn focal_examples() {
    let cfg = FocalConfig::default();
    assert!(focal_loss(&[0.999999], &[true], &cfg).unwrap().value < 1e-12);
    let v = focal_loss(&[0.5], &[true], &cfg).unwrap().value;
    assert!(close(v, 0.25 * 0.25 * std::f64::consts::LN_2, 1e-15));
    assert!(close(v, 0.043321698784996576, 1e-15));

    let half = FocalConfig { gamma: 0.0, alpha: 0.5 };
    let mut r = rng(21);
    for _ in 0..50 {
        let n = 1 + r.below(10) as usize;
        let p: Vec<f64> = (0..n).map(|_| r.range(0.01, 0.99)).collect();
        let t: Vec<bool> = (0..n).map(|_| r.below(2) == 1).collect();
        let bce = p
            .iter()
            .zip(&t)
            .map(|(&p, &t)| if t { -p.ln() } else { -(1.0 - p).ln() })
            .sum::<f64>()
            / n as f64;
        assert!(close(focal_loss(&p, &t, &half).unwrap().value, 0.5 * bce, 1e-12));
    }
}

#[test]
fn focal_errors() {
    let cfg = FocalConfig::default();
    assert_eq!(
        focal_loss(&[0.0], &[true], &cfg).unwrap_err(),
        LossError::ProbabilityOutOfRange(0.0, 0)
    );
    assert!(focal_loss(&[0.5, 1.0], &[true, false], &cfg).is_err());
    assert!(focal_loss(&[0.5], &[true, false], &cfg).is_err());
    assert!(focal_loss(&[0.5], &[true], &FocalConfig { gamma: -1.0, alpha: 0.2 }).is_err());
}

#[test]
fn dice_examples() {
    let t = [1.0, 0.0, 1.0, 1.0, 0.0];
    assert!(dice_loss(&t, &t, 1e-5).unwrap().value < 1e-5);
    for n in [1usize, 4, 17] {
        let v = dice_loss(&vec![0.0; n], &vec![1.0; n], 1.0).unwrap().value;
        assert!(close(v, 1.0 - 1.0 / (n as f64 + 1.0), 1e-15));
    }
    assert!(dice_loss(&[0.5], &[1.0], 0.0).is_err());
}

#[test]
fn cross_entropy_examples() {
    for k in [2usize, 3, 7] {
        let v = cross_entropy(&vec![0.3; 2 * k], k, &[0, k - 1]).unwrap().value;
        assert!(close(v, (k as f64).ln(), 1e-14));
    }
    let mut z = vec![0.0; 4];
    z[2] = 1e6;
    assert!(cross_entropy(&z, 4, &[2]).unwrap().value < 1e-12);
    assert!(cross_entropy(&[0.0; 4], 4, &[4]).is_err());
    assert!(cross_entropy(&[0.0; 4], 1, &[0, 0, 0, 0]).is_err());
}

#[test]
fn giou_loss_examples() {
    let t = Box3::new([1.0, 2.0, 3.0], [4.0, 5.5, 9.0]).unwrap();
    let same = giou_loss(&BoxParams::from_box(&t), &t).unwrap();
    assert!(same.value.abs() < 1e-14);
    let far = BoxParams {
        center: [1e4; 3],
        log_extent: [0.0; 3],
    };
    assert!(giou_loss(&far, &t).unwrap().value > 1.99);
    let bad = BoxParams {
        center: [f64::NAN, 0.0, 0.0],
        log_extent: [0.0; 3],
    };
    assert!(giou_loss(&bad, &t).is_err());
}

#[test]
fn ntxent_examples() {
    let cfg = NtXentConfig::default();
    assert_eq!(cfg.temperature, 0.05);
    assert_eq!(DEFAULT_TEMPERATURE, 0.05);
    let a = [1.0, 0.0, 0.0, 1.0];
    let v = ntxent_loss(&a, &a, 2, &cfg).unwrap().value;
    let want = (2.0 * (-20.0f64).exp()).ln_1p();
    assert!(close(v, want, 1e-13), "{v:e} vs {want:e}");
    // High-precision value of ln(1 + 2 e^-20).
    assert!(close(v, 4.122307236380407e-9, 1e-13));

    let mut r = rng(22);
    let x: Vec<f64> = (0..16).map(|_| r.normal()).collect();
    let y: Vec<f64> = (0..16).map(|_| r.normal()).collect();
    let base = ntxent_loss(&x, &y, 4, &cfg).unwrap().value;
    let mut xs = x.clone();
    for (i, row) in xs.chunks_mut(4).enumerate() {
        row.iter_mut().for_each(|v| *v *= 0.3 + i as f64);
    }
    assert!(close(ntxent_loss(&xs, &y, 4, &cfg).unwrap().value, base, 1e-12));

    assert_eq!(ntxent_loss(&[0.0, 0.0, 1.0, 0.0], &a, 2, &cfg).unwrap_err(), LossError::ZeroNormRow(0));
    assert!(ntxent_loss(&[1.0, 0.0], &[1.0, 0.0], 2, &cfg).is_err());
}

#[test]
fn ssl_total_examples() {
    for mode in [SslLossMode::AsWritten, SslLossMode::Additive] {
        assert_eq!(ssl_total(0.7, 0.0, mode), 0.7);
    }
    assert_eq!(ssl_total(0.0, 5.0, SslLossMode::AsWritten), 0.0);
    assert!(close(ssl_total(0.3, 0.2, SslLossMode::AsWritten), 0.36, 1e-15));
    assert!(close(ssl_total(0.3, 0.2, SslLossMode::Additive), 0.5, 1e-15));
    let mut r = rng(23);
    for _ in 0..100 {
        let (a, b) = (r.range(0.0, 10.0), r.range(0.0, 10.0));
        assert_eq!(ssl_total(a, b, SslLossMode::AsWritten), a * (1.0 + b));
        assert!(close(ssl_total(a, b, SslLossMode::AsWritten), a + b * a, 1e-12));
    }
    assert_eq!(SslLossMode::default(), SslLossMode::AsWritten);
}

#[test]
fn reconstruction_examples() {
    let t = [0.5, -1.0, 2.0];
    assert_eq!(reconstruction_loss(&t, &t).unwrap().value, 0.0);
    assert_eq!(reconstruction_loss(&t, &t).unwrap().gradient, vec![0.0; 3]);
    let shifted: Vec<f64> = t.iter().map(|v| v - 0.25).collect();
    assert!(close(reconstruction_loss(&shifted, &t).unwrap().value, 0.25, 1e-15));
    assert!(reconstruction_loss(&t, &t[..2]).is_err());
}

#[test]
fn detection_total_examples() {
    assert_eq!(detection_total(0.0, 0.0, 0.0, 0.0), 0.0);
    assert_eq!(detection_total(1.0, 1.0, 1.0, 1.0), 4.0);
    let v = [0.1, 0.7, 0.25, 1.5];
    let base = detection_total(v[0], v[1], v[2], v[3]);
    for p in [[3, 2, 1, 0], [1, 0, 3, 2], [2, 3, 0, 1]] {
        assert!(close(detection_total(v[p[0]], v[p[1]], v[p[2]], v[p[3]]), base, 1e-15));
    }
}

#[test]
fn lr_schedule_examples() {
    let s = WarmPolySchedule::default();
    assert_eq!(s.warm_iters, 4000);
    assert_eq!(s.lr(0), 1e-6);
    assert_eq!(s.lr(4000), 0.01);
    assert_eq!(s.lr(s.total_iters), 0.0);
    assert!(close(s.lr(3999), s.lr(4000), 1e-5));
    assert!(close(s.lr(4001), s.lr(4000), 1e-6));
    let mut prev = f64::INFINITY;
    for it in (4000..=s.total_iters).step_by(997) {
        let v = s.lr(it);
        assert!(v <= prev);
        prev = v;
    }
}
