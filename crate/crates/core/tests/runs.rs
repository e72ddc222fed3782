use vns_core::config::{Mode, SimConfig};
use vns_core::density::DensityProfile;
use vns_core::output::{read_column, read_field_snapshot, run_to_dir, EXTRA_COLUMNS};
use vns_core::{scenario, sim, Error};

fn short(name: &str, t_end: f64) -> SimConfig {
    let mut cfg = scenario::preset(name).unwrap();
    cfg.time.t_end = t_end;
    cfg
}

fn small_particles() -> SimConfig {
    let mut cfg = short("homog-small-f0", 0.05);
    cfg.domain.n = 16;
    cfg.particles.count = 3000;
    cfg
}

#[test]
fn csv_round_trips_every_record() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_particles();
    cfg.output.fields_every = 25;
    let summary = run_to_dir(cfg.clone(), tmp.path()).unwrap();
    let out = sim::run(cfg).unwrap();
    assert_eq!(summary.steps, out.summary.steps);

    let h = read_column(&tmp.path().join("timeseries.csv"), "H").unwrap();
    assert_eq!(h.len(), out.rows.len());
    for ((t, v), row) in h.iter().zip(&out.rows) {
        assert_eq!(*t, row.t);
        assert_eq!(*v, row.modulated);
    }
    for col in &EXTRA_COLUMNS[1..] {
        assert_eq!(read_column(&tmp.path().join("extras.csv"), col).unwrap().len(), out.rows.len());
    }

    let (header, fields) = read_field_snapshot(&tmp.path().join("fields/step_00000050.bin")).unwrap();
    assert_eq!(header.grid_n, 16);
    assert_eq!(header.field_names, ["ux", "uy", "n_f", "jx_f", "jy_f", "e_f"]);
    assert!((header.time - 0.05).abs() < 1e-12);
    assert_eq!(fields.len(), 6);
    let mass: f64 = fields[2].integral();
    assert!((mass - out.summary.mass0).abs() < 1e-12 * mass);

    let (_, profile) = read_field_snapshot(&tmp.path().join("profile_nf.bin")).unwrap();
    assert_eq!(profile[0].values(), out.profile.as_ref().unwrap().values());

    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(json["status"], "ok");
    assert_eq!(json["profile_deposit"], "spectral");
    let saved = SimConfig::from_toml(&std::fs::read_to_string(tmp.path().join("config.toml")).unwrap()).unwrap();
    assert_eq!(saved, small_particles_with_fields());
}

fn small_particles_with_fields() -> SimConfig {
    let mut cfg = small_particles();
    cfg.output.fields_every = 25;
    cfg
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let run_with = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| sim::run(small_particles()).unwrap())
    };
    let (one, four) = (run_with(1), run_with(4));
    for (a, b) in one.rows.iter().zip(&four.rows) {
        assert_eq!(a.energy.to_bits(), b.energy.to_bits());
        assert_eq!(a.modulated.to_bits(), b.modulated.to_bits());
        assert_eq!(a.momentum, b.momentum);
    }
}

#[test]
fn inhomogeneous_rows_carry_density_columns() {
    let mut cfg = short("inhomog-jump", 0.01);
    cfg.domain.n = 32;
    cfg.particles.count = 2000;
    let out = sim::run(cfg).unwrap();
    let d = out.summary.density.as_ref().unwrap();
    for row in &out.rows {
        let cols = row.density.as_ref().unwrap();
        assert!(cols.rho_min >= d.lower - 1e-10 && cols.rho_max <= d.upper + 1e-10);
    }
    assert!(out.rho_profile.is_some());
}

#[test]
fn fluid_only_has_no_particle_fits() {
    let out = sim::run(short("fluid-only", 0.01)).unwrap();
    assert_eq!(out.summary.particles, 0);
    assert!(!out.summary.fits.contains_key("w1_bound"));
    assert!(out.profile.is_none());
    assert!(out.rows.iter().all(|r| r.mass == 0.0));
}

#[test]
fn invalid_configurations_are_rejected() {
    let mut cfg = short("fluid-only", 0.01);
    cfg.time.dt = Some(-1.0);
    assert!(matches!(sim::run(cfg), Err(Error::Config(_) | Error::InvalidTimeStep(_))));

    let mut cfg = short("inhomog-jump", 0.01);
    cfg.density.rho0 = DensityProfile::Piecewise {
        levels: vec![0.1, 1.0],
        smoothing_cells: 0.0,
    };
    assert!(sim::run(cfg).is_err());

    let mut cfg = short("equilibrium", 0.01);
    cfg.mode = Mode::Inhomogeneous;
    cfg.density.rho0 = DensityProfile::Constant { value: -1.0 };
    assert!(sim::run(cfg).is_err());

    let mut oracle = scenario::oracle_comparison_config();
    oracle.mode = Mode::Inhomogeneous;
    assert!(matches!(sim::compare_with_oracle(&oracle, 8), Err(Error::Config(_))));
}
