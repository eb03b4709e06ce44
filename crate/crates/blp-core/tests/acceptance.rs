//! Acceptance gate: one test per criterion, each printing a single
//! PASS/FAIL line (visible with `--nocapture`; cargo shows the test verdict
//! either way). Expected values are closed forms or hand-solved certificates
//! for the built-in instances.

use std::time::Instant;

use blp_core::calmness::{
    estimate_peb_modulus, estimate_uwsm_modulus, upper_lipschitz_bound, verify_fj_equals_min,
    verify_partial_calmness, Condition, ModulusVerdict,
};
use blp_core::classify::{classify_point, classify_simplicity, PointType, SimplicityCase};
use blp_core::continuation::{solve_lower_global, trace_branch, Termination, TraceOptions};
use blp_core::corpus::{builtin, builtin_names, corpus_check};
use blp_core::multipliers::{fj_multipliers, kkt_multipliers, stationarity_status, MultiplierKind};
use blp_core::problem::{load_problem, BilevelProblem};
use blp_core::stationarity::{check_optimality_direct, cross_validate, mpcc_licq, MpccMultiplier, Verdict};
use blp_core::expr::{Expr, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(criterion: u8, result: Result<String, String>) {
    match result {
        Ok(detail) => println!("ACCEPTANCE {criterion}: PASS  {detail}"),
        Err(detail) => {
            println!("ACCEPTANCE {criterion}: FAIL  {detail}");
            panic!("criterion {criterion} failed: {detail}");
        }
    }
}

fn problem(name: &str) -> BilevelProblem {
    load_problem(builtin(name).expect("known builtin")).expect("builtin loads")
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

#[test]
fn criterion_1_worked_example() {
    let t0 = Instant::now();
    let run = || -> Result<String, String> {
        let p = problem("example-js");
        let (x, y) = (0.0, [0.0, 0.0]);

        let cls = classify_point(&p, x, &y).map_err(|e| e.to_string())?;
        ensure(cls.point_type == PointType::Type4, format!("type {:?}", cls.point_type))?;
        let simple = classify_simplicity(&p, x, Some(&y)).map_err(|e| e.to_string())?;
        ensure(simple.case == SimplicityCase::CaseI, format!("case {:?}", simple.case))?;

        let fj = fj_multipliers(&p, x, &y).map_err(|e| e.to_string())?;
        ensure(fj.kind == MultiplierKind::Singleton, format!("FJ kind {:?}", fj.kind))?;
        let v = &fj.vertices[0];
        ensure(
            v[0].abs() <= 1e-8 && (v[1] - 1.0).abs() <= 1e-8,
            format!("FJ vertex {v:?}"),
        )?;
        let kkt = kkt_multipliers(&p, x, &y).map_err(|e| e.to_string())?;
        ensure(kkt.kind == MultiplierKind::Empty, format!("KKT kind {:?}", kkt.kind))?;

        let licq = mpcc_licq(&p, x, &y, &MpccMultiplier::Fj { u0: 0.0, u: vec![1.0] })
            .map_err(|e| e.to_string())?;
        ensure(licq.full_column_rank, "MPCC-LICQ rank deficient".to_string())?;

        let direct = check_optimality_direct(&p, x, &y, &cls).map_err(|e| e.to_string())?;
        ensure(direct.verdict == Verdict::Satisfied, format!("verdict {:?}", direct.verdict))?;
        let sys = direct.system.as_ref().ok_or("missing system evidence")?;
        // Known certificate in the system's unknown order (w1, w2, xi).
        let cert = [0.5, 0.5, 1.0];
        ensure(sys.unknowns.len() == 3, format!("unknowns {:?}", sys.unknowns))?;
        let mut worst = 0.0f64;
        for (row, rhs) in sys.rows.iter().zip(&sys.rhs) {
            let lhs: f64 = row.iter().zip(&cert).map(|(a, b)| a * b).sum();
            worst = worst.max((lhs - rhs).abs());
        }
        ensure(worst <= 1e-10, format!("certificate residual {worst:.3e}"))?;

        let sol = solve_lower_global(&p, 0.25).map_err(|e| e.to_string())?;
        ensure(sol.minimizers.len() == 1, format!("{} minimizers", sol.minimizers.len()))?;
        let yy = &sol.minimizers[0];
        ensure(
            (yy[0] - 0.5).abs() <= 1e-6 && yy[1].abs() <= 1e-6,
            format!("S(0.25) = {yy:?}"),
        )?;

        let dt = t0.elapsed();
        ensure(dt.as_secs_f64() < 1.0, format!("took {dt:?}, budget 1 s"))?;
        Ok(format!("worked example reproduced, residual {worst:.1e}, {dt:?}"))
    };
    report(1, run());
}

#[test]
fn criterion_2_two_branch_pipeline() {
    let t0 = Instant::now();
    let run = || -> Result<String, String> {
        let p = problem("double-well");
        let rep = classify_simplicity(&p, 0.0, Some(&[-1.0])).map_err(|e| e.to_string())?;
        let (alpha, alpha_fd) = match rep.case {
            SimplicityCase::CaseII { alpha, alpha_fd } => (alpha, alpha_fd),
            other => return Err(format!("case {other:?}")),
        };
        ensure(rep.minimizers.len() == 2, format!("{} minimizers", rep.minimizers.len()))?;
        ensure(
            (rep.minimizers[0][0] + 1.0).abs() <= 1e-6 && (rep.minimizers[1][0] - 1.0).abs() <= 1e-6,
            format!("S(0) = {:?}", rep.minimizers),
        )?;
        ensure((alpha - 2.0).abs() <= 1e-6, format!("alpha {alpha}"))?;
        ensure(
            ((alpha - alpha_fd) / alpha).abs() <= 1e-6,
            format!("alpha {alpha} vs finite differences {alpha_fd}"),
        )?;

        let peb200 = estimate_peb_modulus(&p, 0.0, &[-1.0], 0.5, f64::INFINITY, 200, 0)
            .map_err(|e| e.to_string())?;
        let peb400 = estimate_peb_modulus(&p, 0.0, &[-1.0], 0.5, f64::INFINITY, 400, 0)
            .map_err(|e| e.to_string())?;
        let (l200, l400) = (peb200.modulus, peb400.modulus);
        ensure(l200.is_finite() && l200 > 0.0, format!("modulus {l200}"))?;
        ensure(
            matches!(peb200.verdict, ModulusVerdict::HoldsWithModulus { .. }),
            format!("verdict {:?}", peb200.verdict),
        )?;
        ensure(
            ((l400 - l200) / l200).abs() <= 0.2,
            format!("unstable modulus: {l200} at 200 samples, {l400} at 400"),
        )?;

        let lip = upper_lipschitz_bound(&p, 0.0, &[-1.0], 0.5, 200, 0).map_err(|e| e.to_string())?;
        let mu = l200 * lip;
        let at_zero = verify_partial_calmness(&p, 0.0, &[-1.0], 0.0, 0.5, 200, Condition::Kkt, 0)
            .map_err(|e| e.to_string())?;
        ensure(!at_zero.holds, "calmness unexpectedly holds at mu = 0".to_string())?;
        let w = at_zero.witness.as_ref().ok_or("missing witness at mu = 0")?;
        ensure(
            w.objective_excess + 0.0 * w.penalty < 0.0,
            format!("witness does not certify failure: {w:?}"),
        )?;
        let at_mu = verify_partial_calmness(&p, 0.0, &[-1.0], mu, 0.5, 200, Condition::Kkt, 0)
            .map_err(|e| e.to_string())?;
        ensure(at_mu.holds, format!("calmness fails at mu = {mu}"))?;

        let dt = t0.elapsed();
        ensure(dt.as_secs_f64() < 10.0, format!("took {dt:?}, budget 10 s"))?;
        Ok(format!("alpha {alpha:.6}, modulus {l200:.3}, mu {mu:.3}, {dt:?}"))
    };
    report(2, run());
}

#[test]
fn criterion_3_case_i_identity() {
    let t0 = Instant::now();
    let run = || -> Result<String, String> {
        let refs: [(&str, f64, &[f64]); 4] = [
            ("example-js", 0.0, &[0.0, 0.0]),
            ("type2-kink", 0.0, &[0.0]),
            ("type51-corner", 0.0, &[0.0]),
            ("quadratic", 0.5, &[0.5]),
        ];
        let mut total = 0usize;
        let mut worst = 0.0f64;
        for (name, x, y) in refs {
            let p = problem(name);
            let chk = verify_fj_equals_min(&p, x, y, 0.2, 1600)
                .map_err(|e| format!("{name}: {e}"))?;
            ensure(
                chk.samples >= 100,
                format!("{name}: only {} Fritz-John samples", chk.samples),
            )?;
            ensure(
                chk.max_distance <= 1e-6,
                format!("{name}: max distance {:.3e}", chk.max_distance),
            )?;
            total += chk.samples;
            worst = worst.max(chk.max_distance);
        }
        let dt = t0.elapsed();
        ensure(dt.as_secs_f64() < 10.0, format!("took {dt:?}, budget 10 s"))?;
        Ok(format!("{total} samples across 4 instances, max distance {worst:.1e}, {dt:?}"))
    };
    report(3, run());
}

#[test]
fn criterion_4_inclusion_chain() {
    let run = || -> Result<String, String> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut checked = 0usize;
        for name in builtin_names() {
            let p = problem(name);
            let b = p.bounds.as_ref().ok_or("missing box")?.clone();
            let mut found = 0usize;
            let mut attempts = 0usize;
            while found < 1000 && attempts < 200_000 {
                attempts += 1;
                let x = rng.gen_range(b.x.0..=b.x.1);
                let y: Vec<f64> =
                    (0..p.m).map(|i| rng.gen_range(b.y[i].0..=b.y[i].1)).collect();
                if !p.lower_feasible(x, &y).map_err(|e| e.to_string())? {
                    continue;
                }
                found += 1;
                let flags = stationarity_status(&p, x, &y).map_err(|e| e.to_string())?;
                if flags.is_kkt && !flags.is_fj {
                    return Err(format!("{name}: KKT without FJ at ({x}, {y:?})"));
                }
                if flags.is_fj && !flags.is_gc {
                    return Err(format!("{name}: FJ without g.c. at ({x}, {y:?})"));
                }
            }
            ensure(found == 1000, format!("{name}: only {found} feasible samples"))?;
            checked += found;
        }
        Ok(format!("{checked} samples, zero inclusion violations"))
    };
    report(4, run());
}

#[test]
fn criterion_5_derivative_oracle() {
    let run = || -> Result<String, String> {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut exprs = 0usize;
        for name in builtin_names() {
            let p = problem(name);
            let b = p.bounds.as_ref().ok_or("missing box")?.clone();
            let mut all: Vec<(&str, &Expr)> = vec![("F", &p.upper), ("f", &p.lower)];
            for (j, g) in p.constraints.iter().enumerate() {
                all.push(if j == 0 { ("g1", g) } else { ("g", g) });
            }
            for (label, e) in all {
                exprs += 1;
                let mut vars = vec![Var::X];
                vars.extend((0..p.m).map(Var::Y));
                for _ in 0..100 {
                    let x = rng.gen_range(b.x.0..=b.x.1);
                    let y: Vec<f64> =
                        (0..p.m).map(|i| rng.gen_range(b.y[i].0..=b.y[i].1)).collect();
                    for &v1 in &vars {
                        let d1 = e.differentiate(v1);
                        let sym = d1.eval(x, &y).map_err(|er| er.to_string())?;
                        let fd = central_diff(e, v1, x, &y)?;
                        let scale = 1.0 + sym.abs().max(fd.abs());
                        if (sym - fd).abs() > 1e-6 * scale {
                            return Err(format!(
                                "{name} {label} d/d{v1}: symbolic {sym} vs central {fd}"
                            ));
                        }
                        for &v2 in &vars {
                            let sym2 =
                                d1.differentiate(v2).eval(x, &y).map_err(|er| er.to_string())?;
                            let fd2 = central_diff(&d1, v2, x, &y)?;
                            let scale2 = 1.0 + sym2.abs().max(fd2.abs());
                            if (sym2 - fd2).abs() > 1e-4 * scale2 {
                                return Err(format!(
                                    "{name} {label} d2/d{v1}d{v2}: symbolic {sym2} vs central {fd2}"
                                ));
                            }
                        }
                    }
                }
            }
        }
        Ok(format!("{exprs} expressions, first order within 1e-6, second within 1e-4"))
    };
    report(5, run());
}

fn central_diff(e: &Expr, v: Var, x: f64, y: &[f64]) -> Result<f64, String> {
    let h = 1e-6;
    let eval_at = |t: f64| -> Result<f64, String> {
        match v {
            Var::X => e.eval(x + t, y).map_err(|er| er.to_string()),
            Var::Y(i) => {
                let mut yy = y.to_vec();
                yy[i] += t;
                e.eval(x, &yy).map_err(|er| er.to_string())
            }
        }
    };
    Ok((eval_at(h)? - eval_at(-h)?) / (2.0 * h))
}

#[test]
fn criterion_6_form_agreement() {
    let run = || -> Result<String, String> {
        let points: [(&str, f64, &[f64]); 12] = [
            ("example-js", 0.0, &[0.0, 0.0]),
            ("example-js-m1", 0.0, &[0.0]),
            ("quadratic", 0.5, &[0.5]),
            ("quadratic", 0.0, &[0.0]),
            ("type2-kink", 1.0, &[1.0]),
            ("type2-kink", 0.0, &[0.0]),
            ("type51-corner", 0.0, &[0.0]),
            ("type52-corner", 0.0, &[0.0, 0.0]),
            ("double-well", 0.0, &[-1.0]),
            ("double-well", 0.0, &[1.0]),
            ("principal-agent-binary", 1.0, &[1.0]),
            ("duplicate-constraint", 1.0, &[0.0]),
        ];
        let mut satisfied = 0usize;
        let mut violated = 0usize;
        for (name, x, y) in points {
            let p = problem(name);
            let cv = cross_validate(&p, x, y).map_err(|e| format!("{name} at ({x}, {y:?}): {e}"))?;
            ensure(
                cv.agreement,
                format!(
                    "{name} at ({x}, {y:?}): direct {:?} vs implicit {:?}",
                    cv.direct.verdict, cv.implicit.verdict
                ),
            )?;
            match cv.direct.verdict {
                Verdict::Satisfied => satisfied += 1,
                Verdict::NotSatisfied => violated += 1,
                Verdict::Inconclusive => {
                    return Err(format!("{name} at ({x}, {y:?}): inconclusive"))
                }
            }
        }
        ensure(satisfied >= 3, format!("only {satisfied} satisfied cases"))?;
        ensure(violated >= 3, format!("only {violated} violated cases"))?;
        Ok(format!("12 points agree in both forms ({satisfied} satisfied, {violated} violated)"))
    };
    report(6, run());
}

#[test]
fn criterion_7_event_detection() {
    let run = || -> Result<String, String> {
        let kink = problem("type2-kink");
        let tr = trace_branch(
            &kink,
            1.0,
            &[1.0],
            None,
            &TraceOptions { x_end: -1.0, step: 0.05, active: None },
        )
        .map_err(|e| e.to_string())?;
        ensure(
            tr.termination == (Termination::MultiplierZero { index: 0 }),
            format!("kink termination {:?}", tr.termination),
        )?;
        let xe = tr.event_x.ok_or("kink event location missing")?;
        ensure(xe.abs() <= 1e-6, format!("kink event at {xe}"))?;

        let circle = problem("example-js");
        let tr2 = trace_branch(
            &circle,
            0.25,
            &[0.5, 0.0],
            Some(&[1.0]),
            &TraceOptions { x_end: 0.0, step: 0.01, active: None },
        )
        .map_err(|e| e.to_string())?;
        ensure(
            tr2.termination == Termination::LicqLoss,
            format!("circle termination {:?}", tr2.termination),
        )?;
        let xl = tr2.points.last().map_or(f64::NAN, |pt| pt.x);
        ensure(xl.abs() <= 1e-2, format!("circle stopped at {xl}"))?;
        Ok(format!("multiplier zero at {xe:.1e}, LICQ loss at {xl:.1e}"))
    };
    report(7, run());
}

#[test]
fn criterion_8_negative_controls() {
    let run = || -> Result<String, String> {
        let dup = problem("duplicate-constraint");
        let licq = mpcc_licq(&dup, 0.0, &[0.0], &MpccMultiplier::Kkt(vec![0.0, 0.0]))
            .map_err(|e| e.to_string())?;
        ensure(!licq.full_column_rank, "duplicate constraints passed MPCC-LICQ".to_string())?;

        let circle = problem("example-js");
        let over_feasible =
            estimate_uwsm_modulus(&circle, 0.0, &[0.0, 0.0], 0.5, 2048, Condition::Feasible, 0)
                .map_err(|e| e.to_string())?;
        ensure(
            matches!(over_feasible.verdict, ModulusVerdict::UnboundedSuspect { .. }),
            format!("verdict over the feasible set: {:?}", over_feasible.verdict),
        )?;
        let over_fj = estimate_uwsm_modulus(&circle, 0.0, &[0.0, 0.0], 0.5, 2048, Condition::Fj, 0)
            .map_err(|e| e.to_string())?;
        ensure(
            over_fj.verdict == ModulusVerdict::NumeratorZero && over_fj.modulus == 0.0,
            format!("verdict over Fritz-John points: {:?}", over_fj.verdict),
        )?;
        Ok(format!(
            "rank deficiency flagged; sharpness splits: feasible {:?} vs stationary {:?}",
            over_feasible.verdict, over_fj.verdict
        ))
    };
    report(8, run());
}

#[test]
fn criterion_9_corpus_deterministic() {
    let t0 = Instant::now();
    let run = || -> Result<String, String> {
        let first = corpus_check();
        let second = corpus_check();
        let ser = |outcomes: &[blp_core::corpus::CorpusOutcome]| -> String {
            outcomes
                .iter()
                .map(|o| format!("{}|{}|{}|{}", o.entry, o.expectation, o.passed, o.detail))
                .collect::<Vec<_>>()
                .join("\n")
        };
        ensure(ser(&first) == ser(&second), "corpus outcomes differ between runs".to_string())?;
        let failed: Vec<String> = first
            .iter()
            .filter(|o| !o.passed)
            .map(|o| format!("[{}] {}: {}", o.entry, o.expectation, o.detail))
            .collect();
        ensure(failed.is_empty(), failed.join("; "))?;
        let dt = t0.elapsed();
        ensure(dt.as_secs_f64() < 60.0, format!("took {dt:?}, budget 60 s"))?;
        Ok(format!("{} expectations replayed twice identically, {dt:?}", first.len()))
    };
    report(9, run());
}
