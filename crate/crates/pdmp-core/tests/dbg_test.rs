use pdmp_core::config::RunConfig;
use pdmp_core::verify::Ensemble;
use pdmp_core::kernels::Kernels;
use pdmp_core::linalg::{dot, scale, Vector};

#[test]
#[ignore]
fn dbg_m0_oracle() {
    let mut cfg = RunConfig::default_desk();
    cfg.run.n_paths = 40_000;
    cfg.model.particles.n = 1;
    let kernels = Kernels::<2>::new(&cfg.model);
    let t = cfg.model.simulation.t_max;
    let radius = cfg.model.domain.radius;
    let sx = cfg.model.initial.s_x;
    let ens = Ensemble::<2>::generate(&cfg, 40_000, cfg.run.seed);
    let n_m0 = ens.paths.iter().filter(|p| p.traj.events.is_empty()).count();
    let frac = n_m0 as f64 / ens.n_total as f64;
    let frac_se = (frac * (1.0 - frac) / ens.n_total as f64).sqrt();
    println!("MC class fraction = {frac:.5} +- {frac_se:.5}");

    let radial_mass = |rmax: f64| -> f64 {
        pdmp_core::quadrature::gauss_legendre(32, 0.0, rmax)
            .iter()
            .map(|&(r, w)| w * (-r * r / (2.0 * sx * sx)).exp() * r)
            .sum()
    };
    let n_dir = 2048;
    let z_pos: f64 = n_dir as f64 * radial_mass(radius);
    let survival = |v: &Vector<2>| -> f64 {
        let shift = scale(v, t);
        (0..n_dir)
            .map(|k| {
                let phi = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / n_dir as f64;
                let w = [phi.cos(), phi.sin()];
                let b = 2.0 * dot(&w, &shift);
                let c = dot(&shift, &shift) - radius * radius;
                let disc = b * b - 4.0 * c;
                let rmax: f64 = if disc <= 0.0 {
                    0.0
                } else {
                    ((-b + disc.sqrt()) / 2.0).clamp(0.0, radius)
                };
                if rmax <= 0.0 { 0.0 } else { radial_mass(rmax) }
            })
            .sum::<f64>()
            / z_pos
    };
    // integral of p0v * survival over V
    let rule = pdmp_core::quadrature::annulus_rule::<2>(
        kernels.init_speed.a, kernels.init_speed.b, 48, 96,
    );
    let total: f64 = rule
        .iter()
        .map(|&(v, w)| w * kernels.p0_velocity_density(&v) * survival(&v))
        .sum();
    println!("quadrature sub-mass = {total:.5}");
    // also check survival at a specific v by brute-force MC over x0
    let mut rng = pdmp_core::rng::path_rng(99, 0);
    use rand::Rng;
    let v_test = [1.1, 0.0];
    let mut inside = 0usize;
    let mut tot = 0usize;
    while tot < 2_000_000 {
        let x = [sx * pdmp_core::kernels::sample_standard_normal(&mut rng),
                 sx * pdmp_core::kernels::sample_standard_normal(&mut rng)];
        if dot(&x, &x) >= radius * radius { continue; }
        tot += 1;
        let y = [x[0] + t * v_test[0], x[1] + t * v_test[1]];
        if dot(&y, &y) < radius * radius { inside += 1; }
        let _ = rng.gen_range(0.0..1.0f64);
    }
    println!("survival([1.1,0]) MC = {:.5}, quad = {:.5}", inside as f64 / tot as f64, survival(&v_test));
}
