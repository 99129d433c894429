use pushlearn::geometry::{rotate, Angle, Planar2};
use pushlearn::physics::{physical_push, ContactState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const N: usize = 1000;

fn contact(c: Planar2, u: Planar2) -> ContactState {
    ContactState { c, u_c: u }
}

fn random_planar(rng: &mut ChaCha8Rng, r: f64) -> Planar2 {
    Planar2::new(rng.random_range(-r..r), rng.random_range(-r..r))
}

#[test]
fn large_h_reduces_to_pure_translation() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..N {
        let mut c = random_planar(&mut rng, 1.0);
        if c.norm() > 1.0 {
            c = c * (1.0 / c.norm());
        }
        let u = random_planar(&mut rng, 1.0);
        let out = physical_push(&contact(c, u), 1e6).unwrap();
        assert!((out.d_com - u).norm() < 1e-9, "{:?} vs {:?}", out.d_com, u);
        assert!(out.d_omega.abs() < 1e-9);
    }
}

#[test]
fn push_through_com_does_not_rotate() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..N {
        let c = random_planar(&mut rng, 1.0);
        let h = rng.random_range(0.01..2.0);
        // A power-of-two k keeps k*c exact, so the cross product cancels
        // exactly; any other k is zero up to one rounding.
        let k = 2f64.powi(rng.random_range(-6..6));
        let out = physical_push(&contact(c, c * -k), h).unwrap();
        assert_eq!(out.d_omega, 0.0, "c {c:?} k {k}");

        let k = rng.random_range(0.01..5.0);
        let out = physical_push(&contact(c, c * -k), h).unwrap();
        assert!(out.d_omega.abs() < 1e-15, "c {c:?} k {k}: {}", out.d_omega);
    }
}

#[test]
fn rotating_the_contact_rotates_the_response() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..N {
        let c = random_planar(&mut rng, 1.0);
        let u = random_planar(&mut rng, 1.0);
        let h = rng.random_range(0.01..2.0);
        let th = Angle(rng.random_range(-std::f64::consts::PI..std::f64::consts::PI));
        let base = physical_push(&contact(c, u), h).unwrap();
        let turned = physical_push(&contact(rotate(th, c), rotate(th, u)), h).unwrap();
        assert!((turned.d_com - rotate(th, base.d_com)).norm() < 1e-10);
        assert!((turned.d_omega - base.d_omega).abs() < 1e-10);
    }
}

#[test]
fn response_is_homogeneous_in_length() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..N {
        let c = random_planar(&mut rng, 1.0);
        let u = random_planar(&mut rng, 1.0);
        let h = rng.random_range(0.01..2.0);
        let k = rng.random_range(0.01..100.0);
        let base = physical_push(&contact(c, u), h).unwrap();
        let scaled = physical_push(&contact(c * k, u * k), h * k).unwrap();
        let tol = 1e-12 * (1.0 + base.d_com.norm()) * k;
        assert!((scaled.d_com - base.d_com * k).norm() < tol, "k {k}");
        assert!((scaled.d_omega - base.d_omega).abs() < 1e-12 * (1.0 + base.d_omega.abs()));
    }
}

#[test]
fn com_never_moves_against_the_push() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..N {
        let c = random_planar(&mut rng, 1.0);
        let u = random_planar(&mut rng, 1.0);
        let h = rng.random_range(1e-3..2.0);
        let out = physical_push(&contact(c, u), h).unwrap();
        assert!(out.d_com.dot(u) >= 0.0, "c {c:?} u {u:?} h {h}");
    }
    // Contact motion perpendicular to c is the hardest case for round-off.
    for _ in 0..N {
        let c = random_planar(&mut rng, 1.0);
        let u = Planar2::new(-c.y, c.x) * rng.random_range(0.1..2.0);
        let out = physical_push(&contact(c, u), 1e-3).unwrap();
        assert!(out.d_com.dot(u) >= 0.0, "c {c:?} u {u:?}");
    }
}
