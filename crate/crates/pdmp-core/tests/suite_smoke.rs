use pdmp_core::config::RunConfig;
use pdmp_core::verify;

fn show(report: &pdmp_core::stats::SuiteReport) {
    println!("== suite {} pass={} ==", report.suite, report.pass);
    for c in &report.checks {
        println!(
            "  [{}] {} lhs={:+.4e} rhs={:+.4e} resid={:+.4e} se={:.3e} {}",
            if c.pass { "PASS" } else { "fail" },
            c.identity,
            c.lhs,
            c.rhs,
            c.residual,
            c.std_err,
            c.detail.clone().unwrap_or_default()
        );
    }
}

#[test]
#[ignore]
fn smoke_ibp2() {
    let cfg = RunConfig::default_desk();
    show(&verify::suite_ibp2::<2>(&cfg));
}

#[test]
#[ignore]
fn smoke_flow() {
    let cfg = RunConfig::default_desk();
    show(&verify::suite_flow::<2>(&cfg));
}

#[test]
#[ignore]
fn smoke_duality() {
    let mut cfg = RunConfig::default_desk();
    cfg.run.n_paths = 20_000;
    show(&verify::suite_duality::<2>(&cfg));
}

#[test]
#[ignore]
fn smoke_density() {
    let mut cfg = RunConfig::default_desk();
    cfg.run.n_paths = 10_000;
    show(&verify::suite_density_ibp::<2>(&cfg));
}

#[test]
#[ignore]
fn smoke_classes() {
    let mut cfg = RunConfig::default_desk();
    cfg.run.n_paths = 20_000;
    show(&verify::suite_classes::<2>(&cfg));
}

#[test]
#[ignore]
fn smoke_m0() {
    let mut cfg = RunConfig::default_desk();
    cfg.run.n_paths = 40_000;
    show(&verify::suite_m0_oracle::<2>(&cfg));
}
