use gridswitch_core::equilibrium::solve_equilibrium;
use gridswitch_core::linearization::{analyze, linearize, spectrum};
use gridswitch_core::model::{power_outputs, GflState, GfmState, SubsystemState};
use gridswitch_core::{Mode, Plant};
use nalgebra::Complex;

type C = Complex<f64>;
use proptest::prelude::*;

const J: C = C::new(0.0, 1.0);

fn line(plant: &Plant) -> (f64, f64) {
    let p = &plant.params;
    let z = p.v_g * p.v_g / p.scr;
    let r = (z * z / (1.0 + p.x_over_r * p.x_over_r)).sqrt();
    (r, r * p.x_over_r)
}

/// Complex-phasor form of the filter and line: each RL or C element in the
/// rotating frame picks up a `j w` coupling term.
fn network(plant: &Plant, omega: f64, e: C, delta: f64, i: C, il: C, v: C) -> (C, C, C) {
    let p = &plant.params;
    let (rg, lg) = line(plant);
    let vg = p.v_g * C::from_polar(1.0, -delta);
    let wb = p.omega_base;
    let di = (v - vg - rg * i - J * omega * lg * i) * (wb / lg);
    let dil = (e - v - p.r_f * il - J * omega * p.l_f * il) * (wb / p.l_f);
    let dv = (il - i - J * omega * p.c_f * v) * (wb / p.c_f);
    (di, dil, dv)
}

fn gfl_oracle(plant: &Plant, x: &[f64]) -> Vec<f64> {
    let g = &plant.gfl;
    let sp = &plant.setpoint;
    let (zeta, delta) = (x[0], x[1]);
    let gamma = C::new(x[2], x[3]);
    let xi = C::new(x[4], x[5]);
    let i = C::new(x[6], x[7]);
    let il = C::new(x[8], x[9]);
    let v = C::new(x[10], x[11]);
    let omega = g.kp_pll * v.im + g.ki_pll * zeta;
    let s = v * i.conj();
    let (p, q) = (s.re, s.im);
    let err_o = C::new(sp.p_ref - p, q - sp.q_ref);
    let il_ref = g.kp_o1 * err_o + g.ki_o1 * gamma;
    let e = v + J * omega * plant.params.l_f * il + g.kp_i1 * (il_ref - il) + g.ki_i1 * xi;
    let (di, dil, dv) = network(plant, omega, e, delta, i, il, v);
    let dxi = il_ref - il;
    vec![
        v.im,
        plant.params.omega_base * (omega - plant.params.omega0),
        err_o.re,
        err_o.im,
        dxi.re,
        dxi.im,
        di.re,
        di.im,
        dil.re,
        dil.im,
        dv.re,
        dv.im,
    ]
}

fn gfm_oracle(plant: &Plant, x: &[f64]) -> Vec<f64> {
    let g = &plant.gfm;
    let sp = &plant.setpoint;
    let w0 = plant.params.omega0;
    let (delta, omega, e_int) = (x[0], x[1], x[2]);
    let gamma = C::new(x[3], x[4]);
    let xi = C::new(x[5], x[6]);
    let i = C::new(x[7], x[8]);
    let il = C::new(x[9], x[10]);
    let v = C::new(x[11], x[12]);
    let s = v * i.conj();
    let (p, q) = (s.re, s.im);
    let rvl = g.k_u * (sp.vd_ref - v.re) + g.k_q * (sp.q_ref - q);
    let e_ref = sp.vd_ref + g.kp_q * rvl + g.ki_q * e_int;
    let v_err = C::new(e_ref, sp.vq_ref) - v;
    let il_ref = i + J * omega * plant.params.c_f * v + g.kp_o2 * v_err + g.ki_o2 * gamma;
    let e = v + J * omega * plant.params.l_f * il + g.kp_i2 * (il_ref - il) + g.ki_i2 * xi;
    let (di, dil, dv) = network(plant, omega, e, delta, i, il, v);
    let dxi = il_ref - il;
    let swing = ((sp.p_ref - p) / w0 - (g.k_d + g.k_omega / w0) * (omega - w0)) / g.j_virt;
    vec![
        plant.params.omega_base * (omega - w0),
        swing,
        rvl,
        v_err.re,
        v_err.im,
        dxi.re,
        dxi.im,
        di.re,
        di.im,
        dil.re,
        dil.im,
        dv.re,
        dv.im,
    ]
}

fn assert_close(a: &[f64], b: &[f64], rel: f64) {
    for (k, (x, y)) in a.iter().zip(b).enumerate() {
        let scale = x.abs().max(y.abs()).max(1.0);
        assert!((x - y).abs() <= rel * scale, "component {k}: {x} vs {y}");
    }
}

fn state_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.5f64..1.5, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn gfl_derivatives_match_phasor_form(x in state_strategy(12), scr in 1.5f64..20.0, xr in 0.2f64..20.0) {
        let plant = Plant::default().with("scr", scr).unwrap().with("x_over_r", xr).unwrap();
        assert_close(&plant.derivatives(Mode::Gfl, &x), &gfl_oracle(&plant, &x), 1e-11);
    }

    #[test]
    fn gfm_derivatives_match_phasor_form(mut x in state_strategy(13), scr in 1.5f64..20.0, xr in 0.2f64..20.0) {
        x[1] = 1.0 + 0.05 * x[1];
        let plant = Plant::default().with("scr", scr).unwrap().with("x_over_r", xr).unwrap();
        assert_close(&plant.derivatives(Mode::Gfm, &x), &gfm_oracle(&plant, &x), 1e-11);
    }

    #[test]
    fn power_is_rotation_invariant(vd in -2.0f64..2.0, vq in -2.0f64..2.0, id in -2.0f64..2.0, iq in -2.0f64..2.0, th in 0.0f64..6.3) {
        let (c, s) = (th.cos(), th.sin());
        let (p0, q0) = power_outputs(vd, vq, id, iq);
        let (p1, q1) = power_outputs(c * vd - s * vq, s * vd + c * vq, c * id - s * iq, s * id + c * iq);
        prop_assert!((p0 - p1).abs() < 1e-12 && (q0 - q1).abs() < 1e-12);
    }
}

/// High-voltage root: scan down from `hi` for the first sign change.
fn bisect(f: impl Fn(f64) -> f64, floor: f64, mut hi: f64) -> f64 {
    let mut lo = hi - 0.01;
    while f(lo) * f(hi) > 0.0 {
        hi = lo;
        lo -= 0.01;
        assert!(lo > floor, "no root above {floor}");
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(lo) * f(mid) <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Voltage at the capacitor that delivers `s = p + jq` through the line to
/// a unit infinite bus, with the capacitor voltage on the d axis.
fn load_flow(plant: &Plant, p: f64, q_of: impl Fn(f64) -> f64) -> f64 {
    let (r, x) = line(plant);
    bisect(
        |vd| {
            let i = C::new(p, -q_of(vd)) / vd;
            (C::new(vd, 0.0) - C::new(r, x) * i).norm() - plant.params.v_g
        },
        0.5,
        1.5,
    )
}

#[test]
fn gfl_equilibrium_matches_load_flow() {
    for (scr, xr) in [(5.0, 5.0), (2.0, 10.0), (10.0, 2.0), (3.1, 8.0)] {
        let plant = Plant::default().with("scr", scr).unwrap().with("x_over_r", xr).unwrap();
        let eq = solve_equilibrium(Mode::Gfl, &plant, None).unwrap();
        let ph = eq.state.physical();
        let vd = load_flow(&plant, plant.setpoint.p_ref, |_| plant.setpoint.q_ref);
        assert!((ph.v_d - vd).abs() < 1e-9, "scr {scr}: {} vs {vd}", ph.v_d);
        assert!(ph.v_q.abs() < 1e-10);
        let (rg, xg) = line(&plant);
        let i = C::new(ph.i_d, ph.i_q);
        let vg = C::new(ph.v_d, ph.v_q) - C::new(rg, xg) * i;
        assert!((vg - C::from_polar(1.0, -ph.delta)).norm() < 1e-9);
        let il = i + J * plant.params.c_f * C::new(ph.v_d, ph.v_q);
        assert!((il - C::new(ph.i_ld, ph.i_lq)).norm() < 1e-9);
    }
}

#[test]
fn gfm_equilibrium_matches_load_flow() {
    for (scr, xr) in [(5.0, 5.0), (2.0, 2.0), (3.0, 10.0)] {
        let plant = Plant::default().with("scr", scr).unwrap().with("x_over_r", xr).unwrap();
        let eq = solve_equilibrium(Mode::Gfm, &plant, None).unwrap();
        let x = GfmState::from_array(eq.state.to_vec().try_into().unwrap());
        let g = &plant.gfm;
        let sp = plant.setpoint;
        // the voltage integrator forces k_u (vd_ref - v_d) + k_q (q_ref - q) = 0
        let q_of = |vd: f64| sp.q_ref + g.k_u / g.k_q * (sp.vd_ref - vd);
        let vd = load_flow(&plant, sp.p_ref, q_of);
        assert!((x.v_d - vd).abs() < 1e-9, "scr {scr}: {} vs {vd}", x.v_d);
        assert!((x.omega - 1.0).abs() < 1e-12);
        assert!((x.v_q - sp.vq_ref).abs() < 1e-10);
    }
}

#[test]
fn equilibrium_independent_of_guess() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let plant = Plant::default();
    for mode in [Mode::Gfl, Mode::Gfm] {
        let base = solve_equilibrium(mode, &plant, None).unwrap().state.to_vec();
        let flat = gridswitch_core::equilibrium::flat_start(mode, &plant).unwrap();
        for _ in 0..10 {
            let guess: Vec<f64> = flat.iter().map(|v| v * (1.0 + rng.random_range(-0.1..0.1))).collect();
            let eq = solve_equilibrium(mode, &plant, Some(&guess)).unwrap();
            let mut d = eq.state.to_vec();
            // the angle-like states are only defined up to the frame
            for (a, b) in d.iter_mut().zip(&base) {
                *a -= b;
            }
            assert!(d.iter().all(|v| v.abs() < 1e-8), "{mode:?}: {d:?}");
        }
    }
}

#[test]
fn spectrum_is_closed_under_conjugation() {
    for (scr, mode) in [(5.0, Mode::Gfl), (2.0, Mode::Gfl), (5.0, Mode::Gfm), (2.0, Mode::Gfm)] {
        let plant = Plant::default().with("scr", scr).unwrap();
        let (_, lin, _) = analyze(&plant, mode).unwrap();
        let ev = spectrum(&lin.a).unwrap();
        for e in &ev {
            let best = ev.iter().map(|f| (f - e.conj()).norm()).fold(f64::INFINITY, f64::min);
            assert!(best < 1e-9 * e.norm().max(1.0), "{e} has no conjugate");
        }
    }
}

#[test]
fn integrator_rows_of_the_jacobian() {
    let plant = Plant::default().with("scr", 3.0).unwrap();
    let g = plant.gfl;
    let eq = solve_equilibrium(Mode::Gfl, &plant, None).unwrap();
    let lin = linearize(&plant, &eq).unwrap();
    let x = GflState::from_array(eq.state.to_vec().try_into().unwrap());
    let a = &lin.a;
    let n = 12;
    let mut want = vec![vec![0.0; n]; 6];
    // zeta' = v_q
    want[0][11] = 1.0;
    // delta' = wb (kp v_q + ki zeta - 1)
    want[1][0] = plant.params.omega_base * g.ki_pll;
    want[1][11] = plant.params.omega_base * g.kp_pll;
    // gamma_d' = p_ref - (v_d i_d + v_q i_q)
    want[2][6] = -x.v_d;
    want[2][7] = -x.v_q;
    want[2][10] = -x.i_d;
    want[2][11] = -x.i_q;
    // gamma_q' = v_q i_d - v_d i_q - q_ref
    want[3][6] = x.v_q;
    want[3][7] = -x.v_d;
    want[3][10] = -x.i_q;
    want[3][11] = x.i_d;
    // xi_d' = kp_o1 (p_ref - p) + ki_o1 gamma_d - i_ld
    for c in [6, 7, 10, 11] {
        want[4][c] = g.kp_o1 * want[2][c];
        want[5][c] = g.kp_o1 * want[3][c];
    }
    want[4][2] = g.ki_o1;
    want[4][8] = -1.0;
    want[5][3] = g.ki_o1;
    want[5][9] = -1.0;
    for r in 0..6 {
        for c in 0..n {
            let scale = want[r][c].abs().max(1.0);
            assert!((a[(r, c)] - want[r][c]).abs() < 1e-9 * scale, "A[{r},{c}] = {} vs {}", a[(r, c)], want[r][c]);
        }
    }
}

#[test]
fn residual_at_equilibrium() {
    for mode in [Mode::Gfl, Mode::Gfm] {
        let plant = Plant::default();
        let eq = solve_equilibrium(mode, &plant, None).unwrap();
        let r = plant.derivatives(mode, &eq.state.to_vec());
        assert!(r.iter().all(|v| v.abs() < 1e-10));
        let s = SubsystemState::from_slice(mode, &eq.state.to_vec()).unwrap();
        assert_eq!(s, eq.state);
    }
}
