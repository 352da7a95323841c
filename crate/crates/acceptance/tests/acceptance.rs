//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any criterion fails.
//!
//! Full-order data generation dominates (about half an hour on one core).
//! Set `CTWIN_ACCEPTANCE_CACHE` to a directory to reuse pan-fry runs.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use ctwin::constitutive::{choi_okos, mix_conductivity, MaterialModel};
use ctwin::control::*;
use ctwin::fvm::*;
use ctwin::gci::{gci_three_grid, GridSample, DEFAULT_SAFETY_FACTOR};
use ctwin::mesh::{build_quarter_cuboid, MeshSpec};
use ctwin::rom::*;
use ctwin::shell::{dump_config, load_config, read_timeseries_csv, write_timeseries_csv, ScenarioConfig};
use ctwin::signals::{evaluation_signals, learning_signals, ExcitationSignal, SignalShape, DEFAULT_BASELINE_K};
use ctwin::Error;
use ctwin_acceptance::*;

const SETPOINT_K: f64 = 330.0;
const LOOP_DURATION_S: f64 = 5000.0;
const ACTUATOR_MAX_K: f64 = 500.0;

fn rel(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        a.abs()
    } else {
        ((a - b) / b).abs()
    }
}

fn criterion_1() -> Verdict {
    let mut v = Verdict::new(1, "constitutive exactness");
    let m = MaterialModel::default();
    let ceq = |t: f64| 0.77 - 0.31 / (1.0 + 30.0 * (-0.17 * (t - 315.0)).exp());
    let gp = |t: f64| 92_000.0 + (13_500.0 - 92_000.0) / (1.0 + ((t - 342.15) / 4.0).exp());
    let p0 = choi_okos(273.15);
    let p50 = choi_okos(323.15);
    let half = mix_conductivity(0.5, &p0);
    let pure = m.effective_conductivity(1.0, 300.0);
    let lw300 = choi_okos(300.0).lambda_water;
    let darcy = m.darcy_velocity([1.0, 0.0, 0.0], 279.15);
    let cases: Vec<(&str, f64, f64)> = vec![
        ("lambda_w(273.15)", p0.lambda_water, 0.57109),
        ("c_pp(273.15)", p0.cp_protein, 2008.2),
        ("lambda_w(323.15)", p50.lambda_water, 0.57109 + 1.7625e-3 * 50.0 - 6.7036e-6 * 2500.0),
        ("C_eq(315)", m.equilibrium_concentration(315.0), 0.76),
        ("C_eq(-inf)", m.equilibrium_concentration(-1e4), 0.77),
        ("C_eq(+inf)", m.equilibrium_concentration(1e4), 0.46),
        ("G'(342.15)", m.storage_modulus(342.15), 52_750.0),
        ("G'(-inf)", m.storage_modulus(-1e4), 13_500.0),
        ("G'(279.15)", m.storage_modulus(279.15), 92_000.0 - 78_500.0 / (1.0 + (-15.75f64).exp())),
        ("p(C_eq(330), 330)", m.swelling_pressure(ceq(330.0), 330.0), 0.0),
        ("p(0.76, 279.15)", m.swelling_pressure(0.76, 279.15), gp(279.15) * (0.76 - ceq(279.15))),
        ("p(0.80, 342.15)", m.swelling_pressure(0.80, 342.15), 52_750.0 * (0.80 - ceq(342.15))),
        ("lambda_par(0.5)", half.parallel, 0.37495),
        ("lambda_orth(0.5)", half.orthogonal, 1.0 / (0.5 / 0.57109 + 0.5 / 0.17881)),
        ("lambda_par(C=1)", pure.parallel, lw300),
        ("lambda_orth(C=1)", pure.orthogonal, lw300),
        ("c_p(1, 273.15)", m.effective_heat_capacity(1.0, 273.15), 4128.9),
        ("c_p(0, 273.15)", m.effective_heat_capacity(0.0, 273.15), 2008.2),
        ("c_p(0.5, 273.15)", m.effective_heat_capacity(0.5, 273.15), 3068.55),
        ("u_darcy(0)", m.darcy_velocity([0.0; 3], 300.0)[0], 0.0),
        ("u_darcy(grad x)", darcy[0], -3e-17 * gp(279.15) / 1e-3),
    ];
    let worst = cases
        .iter()
        .map(|&(name, got, want)| (name, rel(got, want)))
        .fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let failing: Vec<&str> = cases.iter().filter(|c| rel(c.1, c.2) > 1e-9).map(|c| c.0).collect();
    v.check(
        failing.is_empty(),
        format!("{} spot values, worst relative error {:.2e} ({})", cases.len(), worst.1, worst.0),
    );
    if !failing.is_empty() {
        v.check(false, format!("above 1e-9: {}", failing.join(", ")));
    }
    v.check(
        darcy[1] == 0.0 && m.darcy_velocity([0.0, 2.0, 0.0], 350.0)[1] < 0.0,
        "Darcy flow runs down the excess gradient",
    );
    v
}

fn criterion_2() -> Verdict {
    let mut v = Verdict::new(2, "GCI reproduction");
    let volume = 0.070 * 0.040 * 0.030;
    let samples: Vec<GridSample> = [(176_640, 327.3359), (44_800, 328.1233), (11_200, 329.2309)]
        .iter()
        .map(|&(n, phi)| GridSample::from_cell_count(n, volume, phi))
        .collect();
    match gci_three_grid(&samples, DEFAULT_SAFETY_FACTOR) {
        Ok(r) => {
            v.check(
                (0.65..=0.95).contains(&r.apparent_order),
                format!("p = {:.4} in [0.65, 0.95]", r.apparent_order),
            );
            v.check(
                (0.35..=0.75).contains(&r.gci_fine_percent),
                format!("GCI_fine = {:.4} % in [0.35, 0.75]", r.gci_fine_percent),
            );
            v.check(
                (1.3..=2.3).contains(&r.error_window),
                format!("E = {:.4} K in [1.3, 2.3]", r.error_window),
            );
        }
        Err(e) => {
            v.error(e);
        }
    }
    v
}

fn case_one_coarse() -> Scenario {
    Scenario {
        mesh: MeshSpec {
            spacing_m: 1e-3,
            ..MeshSpec::default()
        },
        ..Scenario::case_one()
    }
}

fn criterion_3(coupled: &Result<(TimeSeries, f64), Error>) -> Verdict {
    let mut v = Verdict::new(3, "Case I full-order run");
    let (series, secs) = match coupled {
        Ok(r) => r,
        Err(e) => {
            v.error(e);
            return v;
        }
    };
    let last = series.samples.last().unwrap();
    v.check(
        last.t_s == 1200.0 && (last.t_core_k - 368.2).abs() <= 10.0,
        format!("T_core({} s) = {:.2} K within 368.2 +- 10", last.t_s, last.t_core_k),
    );
    let drops = series.samples.windows(2).filter(|w| w[1].t_core_k < w[0].t_core_k).count();
    v.check(drops == 0, format!("T_core non-decreasing ({drops} drops)"));
    v.check(
        (last.c_mean - 0.62).abs() <= 0.05,
        format!("mean C(1200 s) = {:.4} within 0.62 +- 0.05", last.c_mean),
    );
    v.check(*secs < 600.0, format!("runtime {secs:.0} s < 600 s"));
    v
}

fn criterion_4(coupled: &Result<(TimeSeries, f64), Error>) -> Verdict {
    let mut v = Verdict::new(4, "coupling effect");
    let (series, _) = match coupled {
        Ok(r) => r,
        Err(e) => {
            v.error(e);
            return v;
        }
    };
    let mut sc = case_one_coarse();
    sc.duration_s = 600.0;
    sc.solver.energy_convection = false;
    let t0 = Instant::now();
    let plain = match run_simulation(&sc, None) {
        Ok((s, _)) => s,
        Err(e) => {
            v.error(e);
            return v;
        }
    };
    let secs = t0.elapsed().as_secs_f64();
    let (Some(a), Some(b)) = (plain.at(600.0), series.at(600.0)) else {
        v.error("no sample at 600 s");
        return v;
    };
    let dt = a.t_surface_k - b.t_surface_k;
    v.check(
        dt > 0.0 && dt <= 15.0,
        format!(
            "T_surface(600 s) without Darcy heat convection {:.3} K vs coupled {:.3} K, rise {dt:.3} K in (0, 15]",
            a.t_surface_k, b.t_surface_k
        ),
    );
    v.check(secs < 600.0, format!("runtime {secs:.0} s < 600 s"));
    v
}

fn criterion_5() -> Verdict {
    let mut v = Verdict::new(5, "conservation and fixed point");
    let t0 = Instant::now();
    let spec = MeshSpec {
        dims_m: [0.02, 0.02, 0.012],
        spacing_m: 1e-3,
        inflation_layers: 4,
        first_layer_height_m: 2e-4,
    };
    let settings = SolverSettings::default();
    let fresh = || -> Result<SimulationState, Error> {
        let mesh = Arc::new(build_quarter_cuboid(&spec)?);
        Ok(initialize(mesh, MaterialModel::default(), 279.15, 0.76)?)
    };
    let run = || -> Result<(f64, f64, (f64, f64)), Error> {
        let mut st = fresh()?;
        let mut bc = BoundarySpec::case_one();
        bc.bottom.beta_m_s = 0.0;
        bc.surface.beta_m_s = 0.0;
        let w0 = st.total_water();
        for _ in 0..100 {
            st.step(&bc, &settings)?;
        }
        let drift = rel(st.total_water(), w0);

        let mut st = fresh()?;
        let sealed = BoundarySpec::sealed();
        let mut invariance = 0.0f64;
        for _ in 0..10 {
            let (t, c) = (st.t.clone(), st.c.clone());
            st.step(&sealed, &settings)?;
            for i in 0..t.len() {
                invariance = invariance.max(rel(st.t[i], t[i])).max(rel(st.c[i], c[i]));
            }
        }

        let mut st = fresh()?;
        let bc = BoundarySpec::case_one();
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for _ in 0..300 {
            st.step(&bc, &settings)?;
            lo = lo.min(st.t.min());
            hi = hi.max(st.t.max());
        }
        Ok((drift, invariance, (lo, hi)))
    };
    match run() {
        Ok((drift, inv, (lo, hi))) => {
            v.check(drift < 1e-6, format!("zero-flux water drift {drift:.2e} < 1e-6 over 100 steps"));
            v.check(inv < 1e-10, format!("uniform-state change {inv:.2e} < 1e-10 per step"));
            v.check(
                lo >= 279.15 - 0.1 && hi <= 443.15 + 0.1,
                format!("T in [{lo:.3}, {hi:.3}] K within [279.05, 443.25]"),
            );
        }
        Err(e) => {
            v.error(e);
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    v.check(secs < 60.0, format!("runtime {secs:.1} s < 60 s"));
    v
}

fn criterion_6() -> Verdict {
    let mut v = Verdict::new(6, "manufactured-order GCI");
    let phi_star = 330.0;
    let mut worst: (f64, f64) = (0.0, 0.0);
    let mut failures = Vec::new();
    for p in [0.82, 1.0, 2.0] {
        for h in [[1e-3, 2e-3, 4e-3], [1e-3, 1.5e-3, 2.7e-3]] {
            let samples: Vec<GridSample> = h.iter().map(|&h| GridSample::new(h, phi_star - 40.0 * (h / 1e-3).powf(p))).collect();
            match gci_three_grid(&samples, DEFAULT_SAFETY_FACTOR) {
                Ok(r) => {
                    let dp = (r.apparent_order - p).abs();
                    let dphi = rel(r.extrapolated, phi_star);
                    worst = (worst.0.max(dp), worst.1.max(dphi));
                    if dp > 1e-9 || dphi > 1e-9 {
                        failures.push(format!("p = {p}, h = {h:?}"));
                    }
                }
                Err(e) => failures.push(format!("p = {p}, h = {h:?}: {e}")),
            }
        }
    }
    v.check(
        failures.is_empty(),
        format!("p in {{0.82, 1, 2}} on uniform and non-uniform ratios: |dp| <= {:.1e}, rel dphi* <= {:.1e}", worst.0, worst.1),
    );
    if !failures.is_empty() {
        v.check(false, format!("off by more than 1e-9: {}", failures.join(", ")));
    }
    v
}

/// Full-order pan-fry data shared by the ROM and control criteria.
struct PanFryData {
    learning: Vec<(String, ExcitationSignal, TimeSeries)>,
    evaluation: Vec<(String, ExcitationSignal, TimeSeries)>,
    /// Extra runs for the convection-aware model.
    convection: Vec<(String, TimeSeries)>,
    seconds: f64,
}

fn actuator_step() -> ExcitationSignal {
    ExcitationSignal::new(DEFAULT_BASELINE_K, ACTUATOR_MAX_K, SignalShape::ConstantWithRamp { t_up_s: 10.0 })
}

fn generate(lib: &FomLibrary) -> Result<PanFryData, Error> {
    let t0 = Instant::now();
    let run_catalog = |signals: Vec<ctwin::signals::CatalogSignal>| -> Result<Vec<_>, Error> {
        signals
            .into_iter()
            .map(|c| {
                let s = lib.run(c.name, &pan_fry_scenario(c.signal, None))?;
                eprintln!("  generated {} ({:.0} s elapsed)", c.name, t0.elapsed().as_secs_f64());
                Ok((c.name.to_string(), c.signal, s))
            })
            .collect()
    };
    let learning = run_catalog(learning_signals(DEFAULT_BASELINE_K))?;
    let evaluation = run_catalog(evaluation_signals(DEFAULT_BASELINE_K))?;
    let l = learning_signals(DEFAULT_BASELINE_K);
    let window = |onset_s, duration_s, multiplier| Disturbance {
        onset_s,
        duration_s,
        multiplier,
    };
    let extra = [
        ("dist_step443", l[0].signal, Some(Disturbance::default())),
        ("dist_saw443", l[3].signal, Some(window(250.0, 500.0, 2.0))),
        ("dist_trap403", l[2].signal, Some(window(100.0, 300.0, 3.0))),
        ("step_500_ramp10", actuator_step(), None),
        ("dist_step500", actuator_step(), Some(Disturbance::default())),
    ];
    let mut convection = Vec::new();
    for (name, sig, d) in extra {
        convection.push((name.to_string(), lib.run(name, &pan_fry_scenario(sig, d))?));
        eprintln!("  generated {name} ({:.0} s elapsed)", t0.elapsed().as_secs_f64());
    }
    Ok(PanFryData {
        learning,
        evaluation,
        convection,
        seconds: t0.elapsed().as_secs_f64(),
    })
}

struct Models {
    quad: Rom,
    lti: Rom,
    aware: Rom,
}

fn criterion_7(data: &PanFryData) -> Result<(Verdict, Rom, Rom), Error> {
    let mut v = Verdict::new(7, "ROM regime reproduction");
    let orders = Orders::new(DEFAULT_ORDER, DEFAULT_ORDER);
    let mut set = TrainingSet::new(DT_ROM_S, INPUT_SUBSTEPS);
    for (name, _, s) in &data.learning {
        set.push(trajectory(name, s, false)?)?;
    }
    let (quad, fit) = train_quadratic(&set, orders, None)?;
    let trained_max = fit.rollout.e_max;
    let per: Vec<String> = fit.rollout.per_trajectory.iter().map(|t| format!("{} {:.3}", t.name, t.e_max)).collect();
    v.check(
        trained_max <= 1.0,
        format!("(a) QuadRom({},{}) ridge {:.0e} trained E_max {:.3} K <= 1.0 [{}]", orders.na, orders.nb, fit.ridge, trained_max, per.join(", ")),
    );
    let quad = Rom::Quad(quad);
    let mut eval_max = 0.0f64;
    let mut per = Vec::new();
    for (name, sig, s) in &data.evaluation {
        let r = rom_error(&evaluate_rom(&quad, sig, 1500.0)?.trace(), &Trace::core(s))?;
        eval_max = eval_max.max(r.e_max);
        per.push(format!("{name} {:.3}", r.e_max));
    }
    v.check(eval_max <= 2.0, format!("(a) evaluation E_max {eval_max:.3} K <= 2.0 [{}]", per.join(", ")));

    let (step_name, _, step) = &data.learning[0];
    let mut single = TrainingSet::new(DT_ROM_S, INPUT_SUBSTEPS);
    single.push(trajectory(step_name, step, false)?)?;
    let (lti, lfit) = train_lti(&single, orders)?;
    let lti = Rom::Lti(lti);
    let (_, sig473, fom473) = &data.learning[1];
    let roll = evaluate_rom(&lti, sig473, 1500.0)?;
    let over = roll.y.last().unwrap() - fom473.samples.last().unwrap().t_core_k;
    v.check(over >= 2.0, format!("(b) LtiRom 473.15 K terminal over-prediction {over:+.3} K >= 2.0"));
    let (_, rect_sig, rect) = &data.evaluation[0];
    let rect_err = rom_error(&evaluate_rom(&lti, rect_sig, 1500.0)?.trace(), &Trace::core(rect))?.e_max;
    let step_err = lfit.rollout.e_max;
    v.check(
        rect_err >= 5.0 * step_err,
        format!(
            "(b) rectangular-pulse E_max {rect_err:.3} K vs trained-step {step_err:.3} K, ratio {:.2} >= 5",
            rect_err / step_err
        ),
    );
    v.check(data.seconds <= 3600.0, format!("data generation {:.0} s <= 3600 s", data.seconds));
    Ok((v, quad, lti))
}

fn aware_rom(data: &PanFryData) -> Result<Rom, Error> {
    let mut set = TrainingSet::new(DT_ROM_S, INPUT_SUBSTEPS);
    for (name, s) in &data.convection {
        set.push(trajectory(name, s, true)?)?;
    }
    // Learning signals last, so the ridge is selected on the same held-out run as the plain model.
    for (name, _, s) in &data.learning {
        set.push(trajectory(name, s, true)?)?;
    }
    let (rom, _) = train_quadratic(&set, Orders::new(DEFAULT_ORDER, DEFAULT_ORDER), None)?;
    Ok(Rom::Quad(rom))
}

fn criterion_8(aware: &Rom) -> Result<Verdict, Error> {
    let mut v = Verdict::new(8, "closed loop");
    let cfg = PiConfig::default();
    let rom = Arc::new(aware.clone());
    let calm = run_closed_loop(&mut RomPlant::new(rom.clone()), SETPOINT_K, &cfg, None, LOOP_DURATION_S)?;
    let last = calm.samples.last().unwrap();
    match calm.settling_time(0.5) {
        Some(t) => v.check(true, format!("ROM loop inside 330 +- 0.5 K from {t:.0} s, y_end {:.3} K", last.y_k)),
        None => v.check(false, format!("ROM loop not settled, y_end {:.3} K", last.y_k)),
    };

    let t0 = Instant::now();
    let mut fom = FomPlant::new(Scenario::pan_fry(ExcitationSignal::constant(cfg.bias_k)))?;
    let fom_loop = run_closed_loop(&mut fom, SETPOINT_K, &cfg, None, LOOP_DURATION_S)?;
    let fom_secs = t0.elapsed().as_secs_f64();
    let (t_worst, diff) = calm
        .samples
        .iter()
        .zip(&fom_loop.samples)
        .map(|(a, b)| (a.t_s, (a.y_k - b.y_k).abs()))
        .fold((0.0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let late = calm
        .samples
        .iter()
        .zip(&fom_loop.samples)
        .filter(|(a, _)| a.t_s >= 1000.0)
        .map(|(a, b)| (a.y_k - b.y_k).abs())
        .fold(0.0, f64::max);
    v.check(
        diff <= 1.0,
        format!("FOM vs ROM loop max |dy| {diff:.3} K at {t_worst:.0} s <= 1.0 (after 1000 s: {late:.3} K)"),
    );
    v.check(fom_secs <= 900.0, format!("FOM loop runtime {fom_secs:.0} s <= 900 s"));

    let d = Disturbance::default();
    let hit = run_closed_loop(&mut RomPlant::new(rom.clone()), SETPOINT_K, &cfg, Some(&d), LOOP_DURATION_S)?;
    let blind = replay_commands(&mut RomPlant::new(rom), &calm, Some(&d))?;
    v.check(
        [&calm, &hit, &fom_loop].iter().all(|r| r.within_limits(&cfg)),
        format!("commands within [{}, {}] K in every loop", cfg.u_min_k, cfg.u_max_k),
    );
    let window: Vec<f64> = hit
        .samples
        .iter()
        .zip(&calm.samples)
        .filter(|(s, _)| d.is_active(s.t_s))
        .map(|(a, b)| a.u_k - b.u_k)
        .collect();
    let mean_rise = window.iter().sum::<f64>() / window.len().max(1) as f64;
    let max_rise = window.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    v.check(
        mean_rise > 0.0,
        format!("command rise during disturbance mean {mean_rise:+.2} K, peak {max_rise:+.2} K"),
    );
    let aware_t = hit.re_entry_time(1.0, d.onset_s);
    let blind_t = blind.re_entry_time(1.0, d.onset_s);
    let gap = match (aware_t, blind_t) {
        (Some(a), Some(b)) => b - a,
        (Some(_), None) => f64::INFINITY,
        _ => f64::NEG_INFINITY,
    };
    v.check(
        gap >= 60.0,
        format!("+-1 K re-entry after onset: aware {aware_t:?} s, non-aware {blind_t:?} s, lag {gap:.0} s >= 60"),
    );
    Ok(v)
}

fn criterion_9(quad: &Rom) -> Verdict {
    let mut v = Verdict::new(9, "rom_step throughput");
    let mut h = quad.history();
    let t0 = Instant::now();
    let mut acc = 0.0;
    let mut ok = true;
    for k in 0..1_000_000u32 {
        let u = 380.0 + 70.0 * (k as f64 * 1e-3).sin();
        match rom_step(quad, &mut h, u) {
            Ok(y) => acc += y,
            Err(_) => {
                ok = false;
                break;
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    v.check(ok && acc.is_finite(), "outputs finite");
    v.check(secs < 10.0, format!("1e6 QuadRom steps in {secs:.3} s < 10 s"));
    v
}

fn criterion_10(models: &Models, sample: &TimeSeries) -> Result<Verdict, Error> {
    let mut v = Verdict::new(10, "persistence");
    let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
    let sig = evaluation_signals(DEFAULT_BASELINE_K)[3].signal;
    for (tag, rom) in [("quad", &models.quad), ("lti", &models.lti), ("aware", &models.aware)] {
        let path = dir.path().join(format!("{tag}.rom"));
        rom.save(&path).map_err(|e| Error::io(&path, e))?;
        let back = Rom::load(&path)?;
        let a = evaluate_rom_with(rom, |t| sig.evaluate(t), |t| 1.0 + (t / 700.0).sin().abs(), 3000.0)?;
        let b = evaluate_rom_with(&back, |t| sig.evaluate(t), |t| 1.0 + (t / 700.0).sin().abs(), 3000.0)?;
        let same = a.y.iter().zip(&b.y).all(|(x, y)| x.to_bits() == y.to_bits()) && a.y.len() == b.y.len();
        v.check(same && back == *rom, format!("{tag} ROM reload bit-identical"));
    }

    let path = dir.path().join("series.csv");
    write_timeseries_csv(sample, &path)?;
    let back = read_timeseries_csv(&path)?;
    let mut worst = 0.0f64;
    for (a, b) in sample.samples.iter().zip(&back.samples) {
        let pairs = [
            (a.t_s, b.t_s),
            (a.t_in_k, b.t_in_k),
            (a.t_core_k, b.t_core_k),
            (a.t_surface_k, b.t_surface_k),
            (a.t_probe_k, b.t_probe_k),
            (a.c_mean, b.c_mean),
            (a.mass_balance, b.mass_balance),
            (a.alpha_mult.unwrap_or(1.0), b.alpha_mult.unwrap_or(1.0)),
        ];
        for (x, y) in pairs {
            worst = worst.max(if x == 0.0 { y.abs() } else { rel(y, x) });
        }
    }
    v.check(
        back.len() == sample.len() && worst <= 1e-9,
        format!("CSV round trip of {} rows, worst relative change {worst:.1e} <= 1e-9", back.len()),
    );

    let mut cfg = ScenarioConfig::from_toml(
        "case = \"pan_fry\"\n[input]\nkind = \"sawtooth\"\npeak_k = 443.15\nt_period_s = 500.0\n[disturbance]\nonset_s = 400.0\n",
        "inline",
    )?;
    cfg.rom.ridge = Some(1e-8);
    let path = dir.path().join("config.toml");
    dump_config(&cfg, &path)?;
    let back = load_config(&path)?;
    let again = ScenarioConfig::from_toml(&back.to_toml(), "dumped")?;
    v.check(back == cfg && again == cfg, "config load -> dump -> load equal");
    Ok(v)
}

fn main() -> ExitCode {
    let started = Instant::now();
    let mut verdicts = Vec::new();
    let mut emit = |v: Verdict| {
        println!("{v}");
        verdicts.push(v.passed());
    };
    emit(criterion_1());
    emit(criterion_2());

    let t0 = Instant::now();
    let coupled = run_simulation(&case_one_coarse(), None).map(|(s, _)| (s, t0.elapsed().as_secs_f64())).map_err(Error::from);
    emit(criterion_3(&coupled));
    emit(criterion_4(&coupled));
    emit(criterion_5());
    emit(criterion_6());

    let lib = FomLibrary::from_env();
    let models = generate(&lib).and_then(|data| {
        let (v7, quad, lti) = criterion_7(&data)?;
        let aware = aware_rom(&data)?;
        Ok((data, v7, Models { quad, lti, aware }))
    });
    match models {
        Ok((data, v7, models)) => {
            emit(v7);
            emit(criterion_8(&models.aware).unwrap_or_else(|e| {
                let mut v = Verdict::new(8, "closed loop");
                v.error(e);
                v
            }));
            emit(criterion_9(&models.quad));
            let sample = &data.convection.last().unwrap().1;
            emit(criterion_10(&models, sample).unwrap_or_else(|e| {
                let mut v = Verdict::new(10, "persistence");
                v.error(e);
                v
            }));
        }
        Err(e) => {
            for (id, title) in [(7, "ROM regime reproduction"), (8, "closed loop"), (9, "rom_step throughput"), (10, "persistence")] {
                let mut v = Verdict::new(id, title);
                v.error(&e);
                emit(v);
            }
        }
    }
    let failed = verdicts.iter().filter(|&&p| !p).count();
    println!(
        "acceptance: {} passed, {failed} failed in {:.0} s",
        verdicts.len() - failed,
        started.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
